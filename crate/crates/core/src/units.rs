//! Frequencies are Hz internally; cycles per minute only at the edges.

pub const SECONDS_PER_MINUTE: f64 = 60.0;

pub fn cpm_to_hz(cpm: f64) -> f64 {
    cpm / SECONDS_PER_MINUTE
}

pub fn hz_to_cpm(hz: f64) -> f64 {
    hz * SECONDS_PER_MINUTE
}

pub fn nyquist_cpm(sample_rate_hz: f64) -> f64 {
    hz_to_cpm(sample_rate_hz / 2.0)
}
