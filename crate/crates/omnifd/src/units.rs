//! Unit conversions and angle canonicalization.
//!
//! Powers cross the public boundary in dBm and are converted to watts once;
//! all internal math runs in watts. Phases are canonicalized to `[0, 2π)`
//! so equality tests on coefficient sets are well defined.

use std::f64::consts::TAU;

/// dBm to watts: `10^(p/10) / 1000`.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

/// Watts to dBm: `10 log10(1000 w)`. Zero maps to `-inf`.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * (watts * 1e3).log10()
}

/// dB to linear power ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_phase(phase: f64) -> f64 {
    let mut p = phase % TAU;
    if p < 0.0 {
        p += TAU;
    }
    // `-1e-20 % TAU + TAU` rounds back to TAU itself; fold that to 0.
    if p >= TAU {
        p = 0.0;
    }
    p
}
