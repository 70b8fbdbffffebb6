//! Rectified-flow primitives.
//!
//! A rectified flow transports noise `x1` at `t = 1` to data `x0` at `t = 0`
//! along the straight line `x_t = (1 - t) x0 + t x1`, so the velocity is
//! `x1 - x0` and an Euler step walks against it.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_len, input, Result};
use crate::vector::{all_finite, sub_scaled};

/// A point on the generative trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub x: Vec<f64>,
    pub t: f64,
}

impl LatentState {
    pub fn new(x: Vec<f64>, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(input(format!("time {t} outside [0, 1]")));
        }
        if !all_finite(&x) {
            return Err(input("latent contains non-finite entries"));
        }
        Ok(Self { x, t })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Descending integration times `1 = t_N > ... > t_1 > t_0 = 0`.
///
/// Holds `N + 1` knots delimiting `N` solver iterations. Iteration `j`
/// (counted from 0 at the noise end) moves from `times[j]` to `times[j + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// Builds a grid from explicit knots; they must descend strictly, start at
    /// or below 1 and end at exactly 0.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(input("a time grid needs at least two knots"));
        }
        if times[0] > 1.0 || !all_finite(&times) {
            return Err(input("time grid must start at or below 1 and be finite"));
        }
        if *times.last().unwrap() != 0.0 {
            return Err(input("time grid must end at exactly 0"));
        }
        if times.windows(2).any(|w| w[0] <= w[1]) {
            return Err(input("time grid must be strictly descending"));
        }
        Ok(Self { times })
    }

    /// Number of solver iterations `N`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Start time of iteration `j`.
    pub fn time(&self, j: usize) -> f64 {
        self.times[j]
    }

    /// Duration of iteration `j`, derived from the knots.
    pub fn dt(&self, j: usize) -> f64 {
        self.times[j] - self.times[j + 1]
    }
}

/// Uniform grid `t = i / N` for `i = N ... 0`.
pub fn make_time_grid(steps: usize) -> Result<TimeGrid> {
    if steps == 0 {
        return Err(input("time grid needs at least one step"));
    }
    let n = steps as f64;
    let times = (0..=steps).rev().map(|i| i as f64 / n).collect();
    TimeGrid::from_times(times)
}

/// `(1 - t) x0 + t x1`.
pub fn interpolate(x0: &[f64], x1: &[f64], t: f64) -> Result<Vec<f64>> {
    ensure_same_len(x0, x1, "interpolate")?;
    check_time(t)?;
    Ok(x0
        .iter()
        .zip(x1)
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect())
}

/// One-shot extrapolation of the clean sample: `x_t - t v`.
pub fn clean_estimate_flow(x_t: &[f64], velocity: &[f64], t: f64) -> Result<Vec<f64>> {
    ensure_same_len(x_t, velocity, "clean_estimate_flow")?;
    check_time(t)?;
    if t == 0.0 {
        return Ok(x_t.to_vec());
    }
    Ok(sub_scaled(x_t, t, velocity))
}

/// Unguided Euler transition `x_t - dt v`.
pub fn euler_step_flow(x_t: &[f64], velocity: &[f64], dt: f64) -> Result<Vec<f64>> {
    ensure_same_len(x_t, velocity, "euler_step_flow")?;
    if !(dt > 0.0) {
        return Err(input(format!("step duration must be positive, got {dt}")));
    }
    Ok(sub_scaled(x_t, dt, velocity))
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(input(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}
