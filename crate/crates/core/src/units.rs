//! Unit conversions at the boundary between the customary lab units and the
//! SI/angular units used internally.

use std::f64::consts::TAU;

/// `2π × value × 10⁶` rad/s.
pub fn mhz(value: f64) -> f64 {
    value * TAU * 1e6
}

/// Inverse of [`mhz`].
pub fn to_mhz(omega: f64) -> f64 {
    omega / (TAU * 1e6)
}

pub fn ms(value: f64) -> f64 {
    value * 1e-3
}

pub fn us(value: f64) -> f64 {
    value * 1e-6
}

/// Micrometres to metres.
pub fn um(value: f64) -> f64 {
    value * 1e-6
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mhz_round_trip() {
        assert!((to_mhz(mhz(13.1)) - 13.1).abs() < 1e-12);
        assert!((mhz(1.0) - 6.283185307179586e6).abs() < 1e-6);
    }
}
