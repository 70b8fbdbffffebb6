//! Gradient of the artifact objective with respect to the noisy latent.
//!
//! The chain is `x_t -> x0_hat = x_t - level * f(x_t) -> decode -> detect ->
//! loss`, reversed link by link: `dL/dM = 2M / (HW)`, then the detector's
//! Jacobian-transpose, then the decoder transpose, then the clean-estimate
//! adjoint, which is the identity when the prediction is held fixed and
//! `I - level * J_f^T` otherwise.

use serde::{Deserialize, Serialize};

use crate::detector::{eval_mask, mask_jacobian_action, ArtifactMask, DetectorSpec};
use crate::error::{input, Result};
use crate::grid::Grid;
use crate::models::{DecoderSpec, Predictor};
use crate::vector::{add_assign, sub_scaled};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Whether differentiation passes through the field's own dependence on `x_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    /// `d x0_hat / d x_t = I`: the prediction is treated as a constant.
    #[default]
    DetachedVelocity,
    /// Full Jacobian `I - level * df/dx`.
    Exact,
}

/// Mean of squared mask probabilities.
pub fn artifact_loss(mask: &ArtifactMask) -> f64 {
    mask.values().iter().map(|m| m * m).sum::<f64>() / mask.len() as f64
}

/// Identity-preservation term: `weight * mean |decoded - base|` over the
/// non-artifact cells. `weight` already includes `alpha * lambda_t`.
#[derive(Debug, Clone, Copy)]
pub struct RecTerm<'a> {
    pub base_image: &'a Grid,
    pub non_artifact: &'a [bool],
    pub weight: f64,
}

impl RecTerm<'_> {
    fn cells(&self) -> usize {
        self.non_artifact.iter().filter(|b| **b).count()
    }

    pub fn loss(&self, decoded: &Grid) -> Result<f64> {
        crate::guidance::rec_loss_weighted(decoded, self.base_image, self.non_artifact, self.weight)
    }

    /// Subgradient with respect to the decoded grid (sign(0) = 0).
    fn grad(&self, decoded: &Grid) -> Vec<f64> {
        let n = self.cells();
        if n == 0 || self.weight == 0.0 {
            return vec![0.0; decoded.len()];
        }
        let scale = self.weight / n as f64;
        decoded
            .values
            .iter()
            .zip(&self.base_image.values)
            .zip(self.non_artifact)
            .map(|((u, b), keep)| {
                let d = u - b;
                if *keep && d != 0.0 {
                    scale * d.signum()
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Everything computed along the chain at one latent.
#[derive(Debug, Clone)]
pub struct Objective {
    pub prediction: Vec<f64>,
    pub x0_hat: Vec<f64>,
    pub decoded: Grid,
    pub mask: ArtifactMask,
    pub loss_a: f64,
    pub loss_rec: f64,
    pub grad: Vec<f64>,
}

/// Evaluates `L_a (+ L_rec)` at `x` and its gradient with respect to `x`.
pub fn evaluate_objective(
    x: &[f64],
    level: f64,
    predictor: &dyn Predictor,
    decoder: &DecoderSpec,
    detector: &DetectorSpec,
    rec: Option<&RecTerm<'_>>,
    mode: GradMode,
) -> Result<Objective> {
    let prediction = predictor.predict(x, level)?;
    let x0_hat = sub_scaled(x, level, &prediction);
    let decoded = decoder.decode(&x0_hat)?;
    let mask = eval_mask(&decoded, detector)?;
    let loss_a = artifact_loss(&mask);

    let n = mask.len() as f64;
    let dmask = Grid::new(
        decoded.height,
        decoded.width,
        mask.values().iter().map(|m| 2.0 * m / n).collect(),
    )?;
    let mut ddecoded = mask_jacobian_action(&decoded, detector, &dmask)?;
    let mut loss_rec = 0.0;
    if let Some(rec) = rec {
        loss_rec = rec.loss(&decoded)?;
        add_assign(&mut ddecoded.values, &rec.grad(&decoded));
    }
    let dx0 = decoder.transpose_apply(&ddecoded)?;
    let grad = match mode {
        GradMode::DetachedVelocity => dx0,
        GradMode::Exact => {
            let back = predictor.predict_vjp(x, level, &dx0)?;
            sub_scaled(&dx0, level, &back)
        }
    };
    Ok(Objective {
        prediction,
        x0_hat,
        decoded,
        mask,
        loss_a,
        loss_rec,
        grad,
    })
}

/// `grad_{x_t} L_a` under the selected mode.
pub fn grad_artifact(
    x: &[f64],
    level: f64,
    predictor: &dyn Predictor,
    decoder: &DecoderSpec,
    detector: &DetectorSpec,
    mode: GradMode,
) -> Result<Vec<f64>> {
    Ok(evaluate_objective(x, level, predictor, decoder, detector, None, mode)?.grad)
}

/// Objective value at `x`; in detached mode the prediction is taken from
/// `frozen` instead of re-evaluating the field.
fn objective_value(
    x: &[f64],
    level: f64,
    prediction: &[f64],
    decoder: &DecoderSpec,
    detector: &DetectorSpec,
    rec: Option<&RecTerm<'_>>,
) -> Result<f64> {
    let x0_hat = sub_scaled(x, level, prediction);
    let decoded = decoder.decode(&x0_hat)?;
    let mask = eval_mask(&decoded, detector)?;
    let mut value = artifact_loss(&mask);
    if let Some(rec) = rec {
        value += rec.loss(&decoded)?;
    }
    Ok(value)
}

/// Central-difference gradient of `L_a (+ L_rec)`, the oracle for
/// [`evaluate_objective`].
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_objective_grad(
    x: &[f64],
    level: f64,
    predictor: &dyn Predictor,
    decoder: &DecoderSpec,
    detector: &DetectorSpec,
    rec: Option<&RecTerm<'_>>,
    mode: GradMode,
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(input(format!("finite-difference step must be positive, got {h}")));
    }
    let frozen = predictor.predict(x, level)?;
    let value_at = |p: &[f64]| -> Result<f64> {
        match mode {
            GradMode::DetachedVelocity => objective_value(p, level, &frozen, decoder, detector, rec),
            GradMode::Exact => {
                let pred = predictor.predict(p, level)?;
                objective_value(p, level, &pred, decoder, detector, rec)
            }
        }
    };
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = value_at(&probe)?;
        probe[i] = x[i] - h;
        let down = value_at(&probe)?;
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Central-difference gradient of `L_a` alone.
pub fn finite_difference_grad(
    x: &[f64],
    level: f64,
    predictor: &dyn Predictor,
    decoder: &DecoderSpec,
    detector: &DetectorSpec,
    mode: GradMode,
    h: f64,
) -> Result<Vec<f64>> {
    finite_difference_objective_grad(x, level, predictor, decoder, detector, None, mode, h)
}
