//! Weak-drive transmission of a resonantly probed cavity containing one or two
//! two-level atoms, and the mode geometry that sets their coupling.
//!
//! The probe is always resonant with the empty cavity. Everything the atom's
//! Zeeman structure, motion and light shifts do is folded into a scalar
//! effective coupling `g_eff`, so the single-atom level reads
//!
//! ```text
//! T1(Δ, g) = κ²(Δ² + γ²) / ((γκ + g²)² + (Δκ)²)
//! ```
//!
//! In the dispersive regime (`Δ ≫ γ`) two equally coupled atoms act like one
//! atom with `g√2`, giving `T1 = 1/(1 + x²)` and `T2 = 1/(1 + 4x²)` with
//! `x = g²/(κΔ)`. Their contrast `T1 − T2` peaks at `1/3` for `x = 1/√2`.

use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::units::{mhz, um};

/// Cavity QED parameters. All rates are angular frequencies in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityParams {
    /// Peak atom-cavity coupling.
    pub g0: f64,
    /// Cavity field decay rate.
    pub kappa: f64,
    /// Atomic dipole decay rate.
    pub gamma: f64,
    /// Mode waist `w0` in metres.
    pub waist: f64,
}

impl CavityParams {
    pub fn new(g0: f64, kappa: f64, gamma: f64, waist: f64) -> Result<Self> {
        let p = Self { g0, kappa, gamma, waist };
        p.validate()?;
        Ok(p)
    }

    /// Caesium in a high-finesse Fabry-Perot resonator:
    /// `(g, κ, γ) = 2π × (13.1, 0.4, 2.6) MHz`, `w0 = 23 µm`.
    pub fn cs_high_finesse() -> Self {
        Self {
            g0: mhz(13.1),
            kappa: mhz(0.4),
            gamma: mhz(2.6),
            waist: um(23.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("g0", self.g0),
            ("kappa", self.kappa),
            ("gamma", self.gamma),
            ("waist", self.waist),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Single-atom cooperativity `C1 = g0² / (2κγ)`.
    pub fn cooperativity(&self) -> f64 {
        self.g0 * self.g0 / (2.0 * self.kappa * self.gamma)
    }
}

/// Operating point: cavity-atom detuning `Δ_ca` and effective coupling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetuningPoint {
    pub delta_ca: f64,
    pub g_eff: f64,
}

impl DetuningPoint {
    pub fn new(delta_ca: f64, g_eff: f64) -> Result<Self> {
        if !(g_eff >= 0.0 && g_eff.is_finite()) || !delta_ca.is_finite() {
            return Err(Error::domain(format!(
                "need finite detuning and g_eff >= 0, got delta_ca={delta_ca}, g_eff={g_eff}"
            )));
        }
        Ok(Self { delta_ca, g_eff })
    }
}

/// Normalised transmission for 0, 1 and 2 atoms in the coupled state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmissionLevels {
    pub t0: f64,
    pub t1: f64,
    pub t2: f64,
}

impl TransmissionLevels {
    /// Dispersive-limit levels for two equally coupled atoms.
    pub fn dispersive(p: &CavityParams, d: &DetuningPoint) -> Result<Self> {
        Ok(Self {
            t0: 1.0,
            t1: transmission_dispersive(p, d, 1)?,
            t2: transmission_dispersive(p, d, 2)?,
        })
    }

    /// Levels from the full single-atom formula with independently chosen
    /// effective couplings for the one- and two-atom cases. Measured two-atom
    /// couplings need not equal `√2 · g1`.
    pub fn from_couplings(p: &CavityParams, delta_ca: f64, g1_eff: f64, g2_eff: f64) -> Result<Self> {
        Ok(Self {
            t0: 1.0,
            t1: transmission_one_atom(p, &DetuningPoint::new(delta_ca, g1_eff)?)?,
            t2: transmission_one_atom(p, &DetuningPoint::new(delta_ca, g2_eff)?)?,
        })
    }

    /// `[t0, t1, t2]`
    pub fn as_array(&self) -> [f64; 3] {
        [self.t0, self.t1, self.t2]
    }
}

/// Single-atom transmission, normalised to the empty cavity.
pub fn transmission_one_atom(p: &CavityParams, d: &DetuningPoint) -> Result<f64> {
    if !(p.kappa > 0.0) || !(p.gamma > 0.0) {
        return Err(Error::domain("kappa and gamma must be positive"));
    }
    let (k, g, delta) = (p.kappa, p.gamma, d.delta_ca);
    let g2 = d.g_eff * d.g_eff;
    let num = k * k * (delta * delta + g * g);
    // (γκ + g²)² + (Δκ)² expanded so that g = 0 gives exactly 1
    Ok(num / (num + g2 * (2.0 * g * k + g2)))
}

/// Dispersive-limit transmission for `n_atoms` ∈ {1, 2} equally coupled atoms.
pub fn transmission_dispersive(p: &CavityParams, d: &DetuningPoint, n_atoms: u32) -> Result<f64> {
    if !(p.kappa > 0.0) {
        return Err(Error::domain("kappa must be positive"));
    }
    if d.delta_ca == 0.0 {
        return Err(Error::domain("dispersive formula is singular at zero detuning"));
    }
    let x = d.g_eff * d.g_eff / (p.kappa * d.delta_ca);
    let scale = match n_atoms {
        1 => 1.0,
        2 => 2.0,
        n => return Err(Error::domain(format!("n_atoms must be 1 or 2, got {n}"))),
    };
    Ok(1.0 / (1.0 + (scale * x).powi(2)))
}

/// `T1 − T2` in the dispersive limit.
pub fn level_difference(p: &CavityParams, d: &DetuningPoint) -> Result<f64> {
    Ok(transmission_dispersive(p, d, 1)? - transmission_dispersive(p, d, 2)?)
}

/// Coupling of an atom displaced by `dy` from the mode centre:
/// `g_center · exp(−dy²/w0²)`.
pub fn coupling_at_offset(p: &CavityParams, g_center: f64, dy: f64) -> Result<f64> {
    if !(p.waist > 0.0) {
        return Err(Error::domain("waist must be positive"));
    }
    Ok(g_center * (-(dy * dy) / (p.waist * p.waist)).exp())
}

/// Displacement from the mode centre at which `T1 − T2` reaches its maximum
/// of 1/3, i.e. where `g_eff² = κΔ/√2`.
///
/// If even the centre coupling is too weak (`√2 g² ≤ Δκ`) the contrast is
/// largest at the centre and 0 is returned.
pub fn optimal_offset(p: &CavityParams, g_center: f64, delta_ca: f64) -> Result<f64> {
    if !(delta_ca > 0.0) {
        return Err(Error::domain(format!("delta_ca must be positive, got {delta_ca}")));
    }
    p.validate()?;
    let arg = SQRT_2 * g_center * g_center / (delta_ca * p.kappa);
    if arg <= 1.0 {
        return Ok(0.0);
    }
    Ok(p.waist * (0.5 * arg.ln()).sqrt())
}

/// The detuning above which [`optimal_offset`] returns 0 for a given centre
/// coupling.
pub fn center_optimal_detuning(p: &CavityParams, g_center: f64) -> f64 {
    SQRT_2 * g_center * g_center / p.kappa
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::to_mhz;
    use approx::assert_abs_diff_eq;

    fn cav() -> CavityParams {
        CavityParams::cs_high_finesse()
    }

    /// `g_eff` giving `g²/(κΔ) = x`.
    fn g_for_ratio(p: &CavityParams, delta: f64, x: f64) -> f64 {
        (x * p.kappa * delta).sqrt()
    }

    #[test]
    fn cooperativity_of_reference_cavity() {
        // 13.1² / (2 · 0.4 · 2.6)
        assert_abs_diff_eq!(cav().cooperativity(), 171.61 / 2.08, epsilon = 1e-9);
    }

    #[test]
    fn rejects_nonpositive_params() {
        assert!(CavityParams::new(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(CavityParams::new(1.0, 1.0, -1.0, 1.0).is_err());
        assert!(DetuningPoint::new(1.0, -1.0).is_err());
    }

    #[test]
    fn empty_cavity_transmits_fully() {
        for delta in [0.0, mhz(38.0), mhz(-100.0)] {
            let d = DetuningPoint::new(delta, 0.0).unwrap();
            assert_eq!(transmission_one_atom(&cav(), &d).unwrap(), 1.0);
        }
    }

    #[test]
    fn one_atom_at_38_mhz() {
        // 0.16 · (38² + 2.6²) / ((1.04 + 81)² + 15.2²) evaluated by hand
        let expected = 0.16 * (1444.0 + 6.76) / ((1.04f64 + 81.0).powi(2) + 15.2f64.powi(2));
        let d = DetuningPoint::new(mhz(38.0), mhz(9.0)).unwrap();
        let t = transmission_one_atom(&cav(), &d).unwrap();
        assert_abs_diff_eq!(t, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(t, 0.0333, epsilon = 1e-4);
    }

    #[test]
    fn resonant_reduction() {
        let p = cav();
        let g = mhz(9.0);
        let two_c1 = g * g / (p.kappa * p.gamma);
        let d = DetuningPoint::new(0.0, g).unwrap();
        let t = transmission_one_atom(&p, &d).unwrap();
        assert_abs_diff_eq!(t, 1.0 / (1.0 + two_c1).powi(2), epsilon = 1e-12);
    }

    #[test]
    fn dispersive_values() {
        let p = cav();
        let delta = mhz(100.0);
        let d = DetuningPoint::new(delta, g_for_ratio(&p, delta, 1.0)).unwrap();
        assert_abs_diff_eq!(transmission_dispersive(&p, &d, 1).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(transmission_dispersive(&p, &d, 2).unwrap(), 0.2, epsilon = 1e-12);
        let d = DetuningPoint::new(delta, g_for_ratio(&p, delta, 1.0 / SQRT_2)).unwrap();
        let lv = TransmissionLevels::dispersive(&p, &d).unwrap();
        assert_abs_diff_eq!(lv.t1, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lv.t2, 1.0 / 3.0, epsilon = 1e-12);
        let d0 = DetuningPoint::new(delta, 0.0).unwrap();
        assert_eq!(transmission_dispersive(&p, &d0, 2).unwrap(), 1.0);
        assert_eq!(level_difference(&p, &d0).unwrap(), 0.0);
    }

    #[test]
    fn dispersive_domain_errors() {
        let d = DetuningPoint::new(0.0, mhz(9.0)).unwrap();
        assert!(transmission_dispersive(&cav(), &d, 1).is_err());
        let d = DetuningPoint::new(mhz(50.0), mhz(9.0)).unwrap();
        assert!(transmission_dispersive(&cav(), &d, 3).is_err());
    }

    #[test]
    fn level_difference_grid_argmax() {
        let p = cav();
        let delta = mhz(38.0);
        let n = 20_000;
        let g_max = mhz(9.0);
        let step = g_max / n as f64;
        let (best_g, best) = (0..=n)
            .map(|k| {
                let g = k as f64 * step;
                (g, level_difference(&p, &DetuningPoint::new(delta, g).unwrap()).unwrap())
            })
            .fold((0.0, f64::MIN), |acc, x| if x.1 > acc.1 { x } else { acc });
        let g_opt = (p.kappa * delta / SQRT_2).sqrt();
        assert!((best_g - g_opt).abs() <= step);
        assert!((best - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn coupling_profile() {
        let p = cav();
        let g = mhz(9.0);
        assert_eq!(coupling_at_offset(&p, g, 0.0).unwrap(), g);
        assert_abs_diff_eq!(coupling_at_offset(&p, g, p.waist).unwrap(), g / std::f64::consts::E, epsilon = 1e-6);
        let g231 = coupling_at_offset(&p, g, um(23.1)).unwrap();
        assert_abs_diff_eq!(to_mhz(g231), 3.28, epsilon = 0.01);
        let bad = CavityParams { waist: 0.0, ..p };
        assert!(coupling_at_offset(&bad, g, 1e-6).is_err());
    }

    #[test]
    fn optimal_offset_at_38_mhz() {
        let p = cav();
        let g = mhz(9.0);
        let delta = mhz(38.0);
        let dy = optimal_offset(&p, g, delta).unwrap();
        assert_abs_diff_eq!(dy / 1e-6, 23.1, epsilon = 0.05);
        let g_dy = coupling_at_offset(&p, g, dy).unwrap();
        assert_abs_diff_eq!(g_dy * g_dy, p.kappa * delta / SQRT_2, epsilon = 1e-6 * g_dy * g_dy);
        let d = DetuningPoint::new(delta, g_dy).unwrap();
        assert_abs_diff_eq!(level_difference(&p, &d).unwrap(), 1.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn optimal_offset_boundary_and_far_detuning() {
        let p = cav();
        let g = mhz(9.0);
        let boundary = center_optimal_detuning(&p, g);
        assert_eq!(optimal_offset(&p, g, boundary).unwrap(), 0.0);
        // √2·81/0.4 ≈ 286 MHz: beyond it the centre is optimal
        assert!(to_mhz(boundary) > 280.0 && to_mhz(boundary) < 290.0);
        assert_eq!(optimal_offset(&p, g, mhz(290.0)).unwrap(), 0.0);
        assert!(optimal_offset(&p, g, 0.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn transmission_bounded_and_monotone(
                delta_mhz in -400.0f64..400.0,
                g1 in 0.01f64..20.0,
                dg in 0.01f64..5.0,
            ) {
                let p = cav();
                let a = transmission_one_atom(&p, &DetuningPoint::new(mhz(delta_mhz), mhz(g1)).unwrap()).unwrap();
                let b = transmission_one_atom(&p, &DetuningPoint::new(mhz(delta_mhz), mhz(g1 + dg)).unwrap()).unwrap();
                prop_assert!(a > 0.0 && a < 1.0);
                prop_assert!(b < a);
            }

            #[test]
            fn dispersive_limit_consistency(ratio in 50.0f64..400.0, g in 0.0f64..13.1) {
                let p = cav();
                let d = DetuningPoint::new(ratio * p.gamma, mhz(g)).unwrap();
                let exact = transmission_one_atom(&p, &d).unwrap();
                let disp = transmission_dispersive(&p, &d, 1).unwrap();
                prop_assert!((exact - disp).abs() <= 0.02);
            }

            #[test]
            fn optimal_offset_hits_one_third(delta_mhz in 30.0f64..280.0, g in 5.0f64..13.0) {
                let p = cav();
                let (g, delta) = (mhz(g), mhz(delta_mhz));
                prop_assume!(SQRT_2 * g * g > delta * p.kappa * 1.000001);
                let dy = optimal_offset(&p, g, delta).unwrap();
                let d = DetuningPoint::new(delta, coupling_at_offset(&p, g, dy).unwrap()).unwrap();
                prop_assert!((level_difference(&p, &d).unwrap() - 1.0 / 3.0).abs() < 1e-6);
            }
        }
    }
}
