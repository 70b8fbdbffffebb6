//! Sigma-parameterized diffusion primitives (noise prediction form).

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_len, input, Result};
use crate::vector::{all_finite, sub_scaled};

/// Interpolation exponent of the Karras schedule.
pub const KARRAS_RHO: f64 = 7.0;

/// Ratio `sigma_max / sigma_min` used by [`make_sigma_schedule`] for the Karras kind.
pub const KARRAS_SIGMA_RATIO: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Karras,
}

impl FromStr for ScheduleKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "karras" => Ok(Self::Karras),
            other => Err(input(format!("unknown sigma schedule kind `{other}`"))),
        }
    }
}

/// Descending noise levels `sigma_max = s_0 > ... > s_N = 0`, one more entry
/// than solver iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSchedule {
    sigmas: Vec<f64>,
}

impl SigmaSchedule {
    pub fn from_sigmas(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.len() < 2 {
            return Err(input("a sigma schedule needs at least two entries"));
        }
        if !all_finite(&sigmas) || sigmas.iter().any(|s| *s < 0.0) {
            return Err(input("sigmas must be finite and non-negative"));
        }
        if *sigmas.last().unwrap() != 0.0 {
            return Err(input("sigma schedule must end at exactly 0"));
        }
        if sigmas.windows(2).any(|w| w[0] <= w[1]) {
            return Err(input("sigma schedule must be strictly descending"));
        }
        Ok(Self { sigmas })
    }

    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn sigma(&self, j: usize) -> f64 {
        self.sigmas[j]
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[0]
    }
}

/// Builds an `N`-step schedule from `sigma_max` down to 0.
///
/// `Linear` spaces the `N + 1` levels uniformly. `Karras` interpolates the
/// first `N` levels uniformly in `sigma^(1/rho)` between `sigma_max` and
/// `sigma_max / 100`, then appends the terminal 0.
pub fn make_sigma_schedule(steps: usize, sigma_max: f64, kind: ScheduleKind) -> Result<SigmaSchedule> {
    if steps == 0 {
        return Err(input("sigma schedule needs at least one step"));
    }
    if !(sigma_max > 0.0) || !sigma_max.is_finite() {
        return Err(input(format!("sigma_max must be positive, got {sigma_max}")));
    }
    let sigmas = match kind {
        ScheduleKind::Linear => {
            let n = steps as f64;
            (0..=steps).map(|i| sigma_max * (1.0 - i as f64 / n)).collect()
        }
        ScheduleKind::Karras => {
            let sigma_min = sigma_max / KARRAS_SIGMA_RATIO;
            let hi = sigma_max.powf(1.0 / KARRAS_RHO);
            let lo = sigma_min.powf(1.0 / KARRAS_RHO);
            let mut s: Vec<f64> = if steps == 1 {
                vec![sigma_max]
            } else {
                (0..steps)
                    .map(|i| {
                        let ramp = i as f64 / (steps - 1) as f64;
                        (hi + ramp * (lo - hi)).powf(KARRAS_RHO)
                    })
                    .collect()
            };
            s[0] = sigma_max;
            s.push(0.0);
            s
        }
    };
    SigmaSchedule::from_sigmas(sigmas)
}

/// `x_t - sigma eps`.
pub fn clean_estimate_diffusion(x_t: &[f64], eps: &[f64], sigma: f64) -> Result<Vec<f64>> {
    ensure_same_len(x_t, eps, "clean_estimate_diffusion")?;
    if !(sigma >= 0.0) {
        return Err(input(format!("sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x_t.to_vec());
    }
    Ok(sub_scaled(x_t, sigma, eps))
}

/// Unguided Euler denoising step `x_t - (sigma - sigma_next) eps`.
pub fn euler_step_diffusion(x_t: &[f64], eps: &[f64], sigma: f64, sigma_next: f64) -> Result<Vec<f64>> {
    ensure_same_len(x_t, eps, "euler_step_diffusion")?;
    if !(sigma_next >= 0.0) || !(sigma > sigma_next) {
        return Err(input(format!(
            "need sigma > sigma_next >= 0, got {sigma} and {sigma_next}"
        )));
    }
    Ok(sub_scaled(x_t, sigma - sigma_next, eps))
}
