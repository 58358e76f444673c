//! Synthetic experiments: exact jump trajectories of the hidden atomic state
//! and the photon clicks they modulate.
//!
//! Trajectories are sampled with exponential holding times and a categorical
//! choice of the next state, so no time discretisation enters. Given a
//! trajectory, clicks form a Poisson process whose rate is the detected flux
//! of the current state.
//!
//! Every sampler takes a `u64` seed and is deterministic in it. The generator
//! is [`RNG_ALGORITHM`]; [`derive_seed`] splits one master seed into
//! independent per-repetition seeds.
//!
//! ```
//! use telegraph::simulate::{make_one_atom_spec, simulate};
//!
//! let spec = make_one_atom_spec(40.0, 18.0, 27_000.0, 3_000.0, 1.0).unwrap();
//! let (traj, clicks) = simulate(&spec, 7).unwrap();
//! assert_eq!(traj.duration(), 1.0);
//! assert!(clicks.len() > 5_000);
//! ```

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1};

use crate::error::{Error, Result};
use crate::markov::{check_distribution, RateMatrix};

/// Name of the random number generator, recorded in run manifests.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9, seed_from_u64)";

/// Creates the generator used by every sampler for `seed`.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 mix of a master seed and a stream index.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A hidden state: the number of atoms in the coupled hyperfine state plus an
/// optional position label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateLabel {
    pub alpha: u32,
    pub site: u32,
}

impl StateLabel {
    pub const fn new(alpha: u32, site: u32) -> Self {
        Self { alpha, site }
    }

    pub const fn alpha(alpha: u32) -> Self {
        Self { alpha, site: 0 }
    }
}

impl fmt::Display for StateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.alpha, self.site)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Initial {
    State(StateLabel),
    /// Probabilities in the order of [`JumpProcessSpec::states`].
    Distribution(Vec<f64>),
}

/// A continuous-time jump process with per-state detected photon flux.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpProcessSpec {
    pub states: Vec<StateLabel>,
    pub rates: RateMatrix,
    /// Detected photon rate per state (counts/s).
    pub flux: Vec<f64>,
    /// Length of one realisation (s).
    pub duration: f64,
    pub initial: Initial,
}

/// Non-fatal observations about a spec.
#[derive(Debug, Clone, PartialEq)]
pub enum SpecWarning {
    /// The uncoupled state (α = 0) is not brighter than the coupled one, so no
    /// telegraph contrast is visible.
    NoContrast { alpha: u32, flux_alpha0: f64, flux: f64 },
}

impl JumpProcessSpec {
    pub fn new(
        states: Vec<StateLabel>,
        rates: RateMatrix,
        flux: Vec<f64>,
        duration: f64,
        initial: Initial,
    ) -> Result<Self> {
        let spec = Self { states, rates, flux, duration, initial };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.states.len();
        if n == 0 {
            return Err(Error::Empty("jump process has no states"));
        }
        if self.rates.n_states() != n || self.flux.len() != n {
            return Err(Error::invalid(format!(
                "{n} states but {} rate rows and {} fluxes",
                self.rates.n_states(),
                self.flux.len()
            )));
        }
        for (i, a) in self.states.iter().enumerate() {
            if self.states[i + 1..].contains(a) {
                return Err(Error::invalid(format!("duplicate state {a}")));
            }
        }
        if let Some(f) = self.flux.iter().find(|f| !(**f >= 0.0 && f.is_finite())) {
            return Err(Error::invalid(format!("flux must be finite and >= 0, got {f}")));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::invalid(format!("duration must be positive, got {}", self.duration)));
        }
        match &self.initial {
            Initial::State(s) => {
                self.index_of(*s)?;
            }
            Initial::Distribution(p) => {
                if p.len() != n {
                    return Err(Error::invalid("initial distribution has wrong length"));
                }
                check_distribution(p, 1e-12)?;
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn index_of(&self, label: StateLabel) -> Result<usize> {
        self.states
            .iter()
            .position(|&s| s == label)
            .ok_or_else(|| Error::invalid(format!("state {label} not in spec")))
    }

    /// Initial condition as a probability vector.
    pub fn initial_distribution(&self) -> Vec<f64> {
        match &self.initial {
            Initial::Distribution(p) => p.clone(),
            Initial::State(s) => {
                let mut p = vec![0.0; self.n_states()];
                if let Ok(i) = self.index_of(*s) {
                    p[i] = 1.0;
                }
                p
            }
        }
    }

    /// Largest α present.
    pub fn max_alpha(&self) -> u32 {
        self.states.iter().map(|s| s.alpha).max().unwrap_or(0)
    }

    pub fn warnings(&self) -> Vec<SpecWarning> {
        let mut out = Vec::new();
        let zero: Vec<usize> = (0..self.n_states()).filter(|&i| self.states[i].alpha == 0).collect();
        if let Some(&z) = zero.first() {
            let f0 = self.flux[z];
            for (i, s) in self.states.iter().enumerate() {
                if s.alpha > 0 && self.flux[i] >= f0 {
                    out.push(SpecWarning::NoContrast {
                        alpha: s.alpha,
                        flux_alpha0: f0,
                        flux: self.flux[i],
                    });
                }
            }
        }
        out
    }
}

/// One atom hopping between the uncoupled (α = 0) and coupled (α = 1) state,
/// prepared in α = 1.
///
/// `r10` is the rate 1 → 0, `r01` the rate 0 → 1. A non-bright α = 0 level is
/// reported by [`JumpProcessSpec::warnings`], not rejected.
pub fn make_one_atom_spec(r10: f64, r01: f64, flux0: f64, flux1: f64, duration: f64) -> Result<JumpProcessSpec> {
    let rates = RateMatrix::from_rows(&[vec![0.0, r01], vec![r10, 0.0]])?;
    JumpProcessSpec::new(
        vec![StateLabel::alpha(0), StateLabel::alpha(1)],
        rates,
        vec![flux0, flux1],
        duration,
        Initial::State(StateLabel::alpha(1)),
    )
}

/// Two atoms: the chain 0 ↔ 1 ↔ 2 with repumping rates `0→1 = 2·r_rep`,
/// `1→2 = r_rep`, probe-induced decays `1→0 = r10`, `2→1 = r21`, prepared
/// in α = 2.
pub fn make_two_atom_spec(
    r10: f64,
    r21: f64,
    r_rep: f64,
    flux: [f64; 3],
    duration: f64,
) -> Result<JumpProcessSpec> {
    let rates = RateMatrix::from_rows(&[
        vec![0.0, 2.0 * r_rep, 0.0],
        vec![r10, 0.0, r_rep],
        vec![0.0, r21, 0.0],
    ])?;
    JumpProcessSpec::new(
        vec![StateLabel::alpha(0), StateLabel::alpha(1), StateLabel::alpha(2)],
        rates,
        flux.to_vec(),
        duration,
        Initial::State(StateLabel::alpha(2)),
    )
}

/// Replaces state `(target_alpha, 0)` by `K = site_fluxes.len()` position
/// sub-states `(target_alpha, 0..K)`, coupled by nearest-neighbour hops at
/// `hop_rate`.
///
/// Rates out of the original state are copied to every site and rates into it
/// are shared equally between the sites, so the process seen through α alone
/// is unchanged. With one site the spec is returned with that site's flux.
pub fn split_state(spec: &JumpProcessSpec, target_alpha: u32, site_fluxes: &[f64], hop_rate: f64) -> Result<JumpProcessSpec> {
    let target = spec.index_of(StateLabel::alpha(target_alpha)).map_err(|_| {
        Error::invalid(format!("no state with alpha = {target_alpha} at site 0"))
    })?;
    let k = site_fluxes.len();
    if k == 0 {
        return Err(Error::invalid("need at least one site flux"));
    }
    if !(hop_rate >= 0.0 && hop_rate.is_finite()) {
        return Err(Error::invalid(format!("hop rate must be >= 0, got {hop_rate}")));
    }
    if k == 1 {
        let mut out = spec.clone();
        out.flux[target] = site_fluxes[0];
        out.validate()?;
        return Ok(out);
    }
    if spec.states.iter().any(|s| s.alpha == target_alpha && s.site != 0) {
        return Err(Error::invalid(format!("alpha = {target_alpha} is already split")));
    }

    // old index -> list of new indices
    let n_old = spec.n_states();
    let mut map: Vec<Vec<usize>> = Vec::with_capacity(n_old);
    let mut states = Vec::with_capacity(n_old + k - 1);
    let mut flux = Vec::with_capacity(n_old + k - 1);
    for (i, s) in spec.states.iter().enumerate() {
        if i == target {
            let idx = (0..k).map(|site| states.len() + site).collect();
            for (site, &f) in site_fluxes.iter().enumerate() {
                states.push(StateLabel::new(target_alpha, site as u32));
                flux.push(f);
            }
            map.push(idx);
        } else {
            map.push(vec![states.len()]);
            states.push(*s);
            flux.push(spec.flux[i]);
        }
    }

    let n = states.len();
    let mut rates = RateMatrix::zeros(n);
    for i in 0..n_old {
        for j in 0..n_old {
            let r = spec.rates.rate(i, j);
            if i == j || r == 0.0 {
                continue;
            }
            let share = r / map[j].len() as f64;
            for &a in &map[i] {
                for &b in &map[j] {
                    rates.set_rate(a, b, share)?;
                }
            }
        }
    }
    let sites = &map[target];
    for w in sites.windows(2) {
        rates.set_rate(w[0], w[1], hop_rate)?;
        rates.set_rate(w[1], w[0], hop_rate)?;
    }

    let old_init = spec.initial_distribution();
    let mut init = vec![0.0; n];
    for (i, &p) in old_init.iter().enumerate() {
        for &a in &map[i] {
            init[a] += p / map[i].len() as f64;
        }
    }
    let initial = match spec.initial {
        Initial::State(s) if s != StateLabel::alpha(target_alpha) => Initial::State(s),
        _ => Initial::Distribution(init),
    };

    JumpProcessSpec::new(states, rates, flux, spec.duration, initial)
}

/// A jump at `time` into the state with index `state`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub state: usize,
}

/// One realisation of the hidden process.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    labels: Vec<StateLabel>,
    initial_state: usize,
    jumps: Vec<Jump>,
    duration: f64,
}

impl Trajectory {
    pub fn new(labels: Vec<StateLabel>, initial_state: usize, jumps: Vec<Jump>, duration: f64) -> Result<Self> {
        let n = labels.len();
        if initial_state >= n || jumps.iter().any(|j| j.state >= n) {
            return Err(Error::invalid("trajectory state index out of range"));
        }
        let mut prev_t = 0.0;
        let mut prev_s = initial_state;
        for j in &jumps {
            if !(j.time > prev_t && j.time <= duration) {
                return Err(Error::invalid(format!("jump times must increase within [0, {duration}]")));
            }
            if j.state == prev_s {
                return Err(Error::invalid("consecutive trajectory states must differ"));
            }
            prev_t = j.time;
            prev_s = j.state;
        }
        Ok(Self { labels, initial_state, jumps, duration })
    }

    pub fn labels(&self) -> &[StateLabel] {
        &self.labels
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// `(start, end, state)` for each constant-state stretch.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        let starts = std::iter::once((0.0, self.initial_state)).chain(self.jumps.iter().map(|j| (j.time, j.state)));
        let ends = self.jumps.iter().map(|j| j.time).chain(std::iter::once(self.duration));
        starts.zip(ends).map(|((s, st), e)| (s, e, st))
    }

    /// State index occupied at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jumps.partition_point(|j| j.time <= t);
        if k == 0 {
            self.initial_state
        } else {
            self.jumps[k - 1].state
        }
    }

    pub fn alpha_at(&self, t: f64) -> u32 {
        self.labels[self.state_at(t)].alpha
    }

    /// Time spent in each state.
    pub fn occupation(&self) -> Vec<f64> {
        let mut occ = vec![0.0; self.labels.len()];
        for (s, e, st) in self.segments() {
            occ[st] += e - s;
        }
        occ
    }

    /// True α at the midpoint of each of `n_bins` bins of width `bin_width`.
    pub fn alpha_at_midpoints(&self, bin_width: f64, n_bins: usize) -> Vec<u32> {
        (0..n_bins).map(|i| self.alpha_at((i as f64 + 0.5) * bin_width)).collect()
    }

    /// For each bin, `Some(alpha)` if α stays constant over the whole bin.
    pub fn alpha_if_constant(&self, bin_width: f64, n_bins: usize) -> Vec<Option<u32>> {
        let mut out = Vec::with_capacity(n_bins);
        for i in 0..n_bins {
            let (a, b) = (i as f64 * bin_width, (i + 1) as f64 * bin_width);
            let first = self.jumps.partition_point(|j| j.time <= a);
            let last = self.jumps.partition_point(|j| j.time < b);
            let alpha = self.alpha_at(a);
            let constant = self.jumps[first..last].iter().all(|j| self.labels[j.state].alpha == alpha);
            out.push(constant.then_some(alpha));
        }
        out
    }

    /// Writes `<time_s> <alpha> <site>` lines, starting with the state at t = 0.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "#trajectory v1 duration_s={}", self.duration)?;
        let l = self.labels[self.initial_state];
        writeln!(w, "0 {} {}", l.alpha, l.site)?;
        for j in &self.jumps {
            let l = self.labels[j.state];
            writeln!(w, "{} {} {}", j.time, l.alpha, l.site)?;
        }
        Ok(())
    }
}

/// Samples one trajectory of `spec` (exact Gillespie sampling).
///
/// States with no outgoing rate are absorbing: the trajectory simply holds.
pub fn sample_trajectory(spec: &JumpProcessSpec, seed: u64) -> Result<Trajectory> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    sample_trajectory_with(spec, &mut rng)
}

pub fn sample_trajectory_with<R: Rng + ?Sized>(spec: &JumpProcessSpec, rng: &mut R) -> Result<Trajectory> {
    let n = spec.n_states();
    let mut state = match &spec.initial {
        Initial::State(s) => spec.index_of(*s)?,
        Initial::Distribution(p) => sample_categorical(p, rng),
    };
    let initial_state = state;
    let exits: Vec<f64> = (0..n).map(|i| spec.rates.exit_rate(i)).collect();
    let mut t = 0.0;
    let mut jumps = Vec::new();
    loop {
        let exit = exits[state];
        if exit == 0.0 {
            break;
        }
        let hold: f64 = Exp1.sample(rng);
        t += hold / exit;
        if t >= spec.duration {
            break;
        }
        let mut u = rng.random::<f64>() * exit;
        let mut next = state;
        for j in 0..n {
            let r = spec.rates.rate(state, j);
            if r == 0.0 {
                continue;
            }
            next = j;
            if u < r {
                break;
            }
            u -= r;
        }
        if next == state || !(t > jumps.last().map_or(0.0, |j: &Jump| j.time)) {
            continue;
        }
        jumps.push(Jump { time: t, state: next });
        state = next;
    }
    Trajectory::new(spec.states.clone(), initial_state, jumps, spec.duration)
}

fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let mut u = rng.random::<f64>();
    for (i, &pi) in p.iter().enumerate() {
        if u < pi {
            return i;
        }
        u -= pi;
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

/// Photon detector output: the waiting times between clicks.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickRecord {
    intervals: Vec<f64>,
    duration: f64,
}

/// Format tag of the click file.
pub const CLICK_FORMAT: &str = "#clicks v1";

impl ClickRecord {
    pub fn new(intervals: Vec<f64>, duration: f64) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::invalid(format!("click record duration must be positive, got {duration}")));
        }
        let mut t = 0.0;
        for &d in &intervals {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::invalid(format!("click intervals must be positive, got {d}")));
            }
            t += d;
        }
        if t > duration {
            return Err(Error::invalid(format!("clicks extend to {t} s, beyond duration {duration} s")));
        }
        Ok(Self { intervals, duration })
    }

    /// Builds a record from absolute, strictly increasing click times.
    pub fn from_times(times: &[f64], duration: f64) -> Result<Self> {
        let mut prev = 0.0;
        let intervals = times
            .iter()
            .map(|&t| {
                let d = t - prev;
                prev = t;
                d
            })
            .collect();
        Self::new(intervals, duration)
    }

    pub fn intervals(&self) -> &[f64] {
        &self.intervals
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Absolute click times (running sum of the intervals).
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.intervals.iter().scan(0.0, |t, &d| {
            *t += d;
            Some(*t)
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CLICK_FORMAT} duration_s={}", self.duration)?;
        for d in &self.intervals {
            writeln!(w, "{d:.16e}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or(Error::Empty("click file"))??;
        let rest = header.strip_prefix(CLICK_FORMAT).ok_or_else(|| Error::Format {
            line: 1,
            msg: format!("expected header starting with '{CLICK_FORMAT}', got '{header}'"),
        })?;
        let duration = rest
            .trim()
            .strip_prefix("duration_s=")
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| Error::Format { line: 1, msg: "missing duration_s=<float>".into() })?;
        let mut intervals = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line?;
            let s = line.trim();
            if s.is_empty() {
                continue;
            }
            let d = s.parse::<f64>().map_err(|e| Error::Format { line: k + 2, msg: e.to_string() })?;
            intervals.push(d);
        }
        Self::new(intervals, duration)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(f)
    }
}

/// Samples detector clicks along `traj`, with `flux[state]` counts/s while in
/// `state`.
pub fn emit_clicks(traj: &Trajectory, flux: &[f64], seed: u64) -> Result<ClickRecord> {
    let mut rng = rng_from_seed(seed);
    emit_clicks_with(traj, flux, &mut rng)
}

pub fn emit_clicks_with<R: Rng + ?Sized>(traj: &Trajectory, flux: &[f64], rng: &mut R) -> Result<ClickRecord> {
    if flux.len() < traj.labels().len() {
        return Err(Error::invalid(format!(
            "{} fluxes for {} states",
            flux.len(),
            traj.labels().len()
        )));
    }
    if let Some(f) = flux.iter().find(|f| !(**f >= 0.0 && f.is_finite())) {
        return Err(Error::invalid(format!("flux must be finite and >= 0, got {f}")));
    }
    let mut intervals = Vec::new();
    let mut last = 0.0;
    for (start, end, state) in traj.segments() {
        let f = flux[state];
        if f == 0.0 {
            continue;
        }
        let exp = Exp::new(f).map_err(|e| Error::invalid(e.to_string()))?;
        let mut t = start;
        loop {
            t += exp.sample(rng);
            if t >= end {
                break;
            }
            let d = t - last;
            if d > 0.0 {
                let next = last + d;
                if next < traj.duration() {
                    intervals.push(d);
                    last = next;
                }
            }
        }
    }
    ClickRecord::new(intervals, traj.duration())
}

/// Samples a trajectory and its clicks. The two use independent streams
/// derived from `seed`.
pub fn simulate(spec: &JumpProcessSpec, seed: u64) -> Result<(Trajectory, ClickRecord)> {
    let traj = sample_trajectory(spec, derive_seed(seed, 0))?;
    let clicks = emit_clicks(&traj, &spec.flux, derive_seed(seed, 1))?;
    Ok((traj, clicks))
}

/// `repetitions` independent realisations; repetition `i` uses
/// `derive_seed(seed, i)`.
pub fn simulate_ensemble(spec: &JumpProcessSpec, seed: u64, repetitions: usize) -> Result<Vec<(Trajectory, ClickRecord)>> {
    use rayon::prelude::*;
    (0..repetitions)
        .into_par_iter()
        .map(|i| simulate(spec, derive_seed(seed, i as u64)))
        .collect()
}
