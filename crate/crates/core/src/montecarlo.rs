//! Ordered parallel trial execution.

use rayon::prelude::*;

use crate::seed::{trial_rng, TrialRng};

/// Runs `trials` independent trials, each with its own derived stream, and
/// returns the results in trial order. Output is independent of the rayon
/// thread count.
pub fn par_trials<T, F>(trials: usize, master_seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut TrialRng) -> T + Sync + Send,
{
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(master_seed, t as u64);
            f(t, &mut rng)
        })
        .collect()
}
