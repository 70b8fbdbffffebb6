//! Seed filtering: keep only seeds whose unguided output shows an artifact.

use diamond_core::{run_trajectory, Pipeline};
use serde::{Deserialize, Serialize};

use crate::config::Scenario;
use crate::error::HarnessError;

pub const MAX_ATTEMPTS: usize = 1000;

/// Acceptance threshold of the filter. Strict, unlike the metrics' `>=`.
pub const FILTER_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub scenario: String,
    pub seed: u64,
    pub attempts: usize,
}

/// Whether the baseline run of `seed` ends with a cell above the threshold.
pub fn baseline_has_artifact(scenario: &Scenario, seed: u64) -> Result<bool, HarnessError> {
    let predictor = scenario.predictor();
    let pipeline = Pipeline {
        predictor: predictor.as_ref(),
        decoder: &scenario.decoder,
        detector: &scenario.detector,
    };
    let traj = run_trajectory(&scenario.initial_noise(seed), &scenario.sampler, pipeline, None, None)?;
    Ok(traj.mask.values().iter().any(|p| *p > FILTER_THRESHOLD))
}

/// Tries `start_seed`, `start_seed + 1`, ... and returns the first seed whose
/// baseline shows an artifact.
pub fn filter_seeds(scenario: &Scenario, start_seed: u64, max_attempts: usize) -> Result<SeedRecord, HarnessError> {
    if max_attempts == 0 || max_attempts > MAX_ATTEMPTS {
        return Err(HarnessError::Config(format!("max_attempts must be in 1..={MAX_ATTEMPTS}")));
    }
    for attempt in 0..max_attempts {
        let seed = start_seed + attempt as u64;
        if baseline_has_artifact(scenario, seed)? {
            return Ok(SeedRecord {
                scenario: scenario.id.clone(),
                seed,
                attempts: attempt + 1,
            });
        }
    }
    Err(HarnessError::SeedSearch {
        scenario: scenario.id.clone(),
        start: start_seed,
        attempts: max_attempts,
    })
}

/// `count` accepted seeds, each search resuming after the previous hit.
pub fn filter_seed_set(
    scenario: &Scenario,
    start_seed: u64,
    count: usize,
    max_attempts: usize,
) -> Result<Vec<SeedRecord>, HarnessError> {
    let mut out = Vec::with_capacity(count);
    let mut next = start_seed;
    for _ in 0..count {
        let rec = filter_seeds(scenario, next, max_attempts)?;
        next = rec.seed + 1;
        out.push(rec);
    }
    Ok(out)
}
