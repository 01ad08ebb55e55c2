//! Decibel helpers. Core routines work in linear units; these are used at
//! configuration and reporting boundaries.

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}
