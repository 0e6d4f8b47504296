//! Decibel conversions. Everything past configuration loading is linear.

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

pub fn dbw_to_watts(dbw: f64) -> f64 {
    db_to_linear(dbw)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    linear_to_db(w) + 30.0
}

/// Thermal noise power in watts for a spectral density given in dBm/Hz.
pub fn noise_power(psd_dbm_per_hz: f64, bandwidth_hz: f64) -> f64 {
    dbm_to_watts(psd_dbm_per_hz) * bandwidth_hz
}
