//! Generative fields and decoders.
//!
//! Both sampler families share the clean estimate `x - level * f(x, level)`,
//! where `level` is the time `t` (flow, `f` = velocity) or the noise level
//! `sigma` (diffusion, `f` = noise prediction). [`Predictor`] is that `f`
//! together with its Jacobian-transpose action.

mod decoder;
mod mixture;
mod mlp;

pub use decoder::{DecoderKind, DecoderSpec};
pub use mixture::MixtureSpec;
pub use mlp::{train_mlp_velocity, DenseLayer, MlpField, TrainedField, TRAIN_BATCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// A field queried by the samplers: velocity for flows, noise prediction for
/// diffusion.
pub trait Predictor: Sync {
    fn dim(&self) -> usize;

    fn predict(&self, x: &[f64], level: f64) -> Result<Vec<f64>>;

    /// `(df/dx)^T cotangent` at `(x, level)`.
    fn predict_vjp(&self, x: &[f64], level: f64, cotangent: &[f64]) -> Result<Vec<f64>>;
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn predict(&self, x: &[f64], level: f64) -> Result<Vec<f64>> {
        (**self).predict(x, level)
    }

    fn predict_vjp(&self, x: &[f64], level: f64, cotangent: &[f64]) -> Result<Vec<f64>> {
        (**self).predict_vjp(x, level, cotangent)
    }
}

/// Mixture velocity field, `level` is the flow time.
#[derive(Debug, Clone, Copy)]
pub struct MixtureVelocity<'a>(pub &'a MixtureSpec);

/// Exact mixture denoiser, `level` is sigma.
#[derive(Debug, Clone, Copy)]
pub struct MixtureDenoiser<'a>(pub &'a MixtureSpec);

impl Predictor for MixtureVelocity<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn predict(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.0.velocity(x, t)
    }

    fn predict_vjp(&self, x: &[f64], t: f64, cotangent: &[f64]) -> Result<Vec<f64>> {
        self.0.velocity_vjp(x, t, cotangent)
    }
}

impl Predictor for MixtureDenoiser<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn predict(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.0.denoise(x, sigma)
    }

    fn predict_vjp(&self, x: &[f64], sigma: f64, cotangent: &[f64]) -> Result<Vec<f64>> {
        self.0.denoise_vjp(x, sigma, cotangent)
    }
}

impl Predictor for MlpField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.velocity(x, t)
    }

    fn predict_vjp(&self, x: &[f64], t: f64, cotangent: &[f64]) -> Result<Vec<f64>> {
        self.velocity_vjp(x, t, cotangent)
    }
}

/// `mixture_velocity` as a free function.
pub fn mixture_velocity(x: &[f64], t: f64, spec: &MixtureSpec) -> Result<Vec<f64>> {
    spec.velocity(x, t)
}

/// `mixture_denoiser` as a free function.
pub fn mixture_denoiser(x: &[f64], sigma: f64, spec: &MixtureSpec) -> Result<Vec<f64>> {
    spec.denoise(x, sigma)
}

/// Serialized generative model: an analytic mixture (`weights`, `means`,
/// `stds`) or a learned velocity field (`dim`, `layers`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Mixture(MixtureSpec),
    Mlp(MlpField),
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Mixture(m) => m.validate(),
            Self::Mlp(f) => f.validate(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Mixture(m) => m.dim(),
            Self::Mlp(f) => f.dim,
        }
    }

    /// Velocity field view for flow sampling.
    pub fn velocity_field(&self) -> Box<dyn Predictor + '_> {
        match self {
            Self::Mixture(m) => Box::new(MixtureVelocity(m)),
            Self::Mlp(f) => Box::new(f),
        }
    }

    /// Noise-prediction view for diffusion sampling; only analytic mixtures
    /// provide one.
    pub fn denoiser(&self) -> Option<MixtureDenoiser<'_>> {
        match self {
            Self::Mixture(m) => Some(MixtureDenoiser(m)),
            Self::Mlp(_) => None,
        }
    }
}
