//! Analytic generative fields of an isotropic Gaussian mixture.
//!
//! Both the rectified-flow velocity and the diffusion noise prediction of a
//! mixture are responsibility-weighted sums of per-component affine maps
//! `c_k (x - m_k) + o_k`, where the responsibilities come from the marginal
//! `N(m_k, a_k^2 I)` of the noisy variable under component `k`. The shared
//! evaluator below handles the value and its vector-Jacobian product.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::vector::{dot, sub};

/// An isotropic Gaussian mixture over `D`-dimensional data.
///
/// A component with `std == 0` is a point mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, stds: Vec<f64>) -> Result<Self> {
        let spec = Self {
            weights,
            means,
            stds,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Single point mass at `mean`.
    pub fn point_mass(mean: Vec<f64>) -> Self {
        Self {
            weights: vec![1.0],
            means: vec![mean],
            stds: vec![0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 {
            return Err(input("mixture needs at least one component"));
        }
        if self.means.len() != k || self.stds.len() != k {
            return Err(input("mixture weights, means and stds must have equal length"));
        }
        let d = self.means[0].len();
        if d == 0 || self.means.iter().any(|m| m.len() != d) {
            return Err(input("mixture means must share one positive dimension"));
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(input("mixture means must be finite"));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(input("mixture weights must be non-negative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(input(format!("mixture weights sum to {total}, expected 1")));
        }
        if self.stds.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(input("mixture stds must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn has_point_mass(&self) -> bool {
        self.stds.iter().any(|s| *s == 0.0)
    }

    /// Rectified-flow velocity `E[x1 - x0 | x_t = x]` for `x1 ~ N(0, I)`.
    pub fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.flow_components(x, t)?.value(x)
    }

    /// Vector-Jacobian product `(dv/dx)^T cotangent`.
    pub fn velocity_vjp(&self, x: &[f64], t: f64, cotangent: &[f64]) -> Result<Vec<f64>> {
        self.flow_components(x, t)?.vjp(x, cotangent)
    }

    /// Noise prediction `(x - E[x0 | x0 + sigma n = x]) / sigma`.
    pub fn denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.noise_components(x, sigma)?.value(x)
    }

    pub fn denoise_vjp(&self, x: &[f64], sigma: f64, cotangent: &[f64]) -> Result<Vec<f64>> {
        self.noise_components(x, sigma)?.vjp(x, cotangent)
    }

    /// Draws one sample from the mixture.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let s = self.stds[k];
        self.means[k]
            .iter()
            .map(|m| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn flow_components(&self, x: &[f64], t: f64) -> Result<AffineMixture<'_>> {
        self.check_dim(x)?;
        if !(0.0..=1.0).contains(&t) {
            return Err(input(format!("time {t} outside [0, 1]")));
        }
        if t == 0.0 && self.has_point_mass() {
            return Err(Error::Singularity(
                "point-mass velocity is undefined at t = 0".into(),
            ));
        }
        let comps = self
            .iter()
            .map(|(w, mu, s)| {
                let var = (1.0 - t).powi(2) * s * s + t * t;
                let slope = (t - (1.0 - t) * s * s) / var;
                Component {
                    log_weight: w.ln(),
                    center: mu.iter().map(|m| (1.0 - t) * m).collect(),
                    var,
                    slope,
                    mean: mu,
                    form: if s == 0.0 {
                        Form::Divided(t)
                    } else {
                        Form::Affine { offset_sign: -1.0 }
                    },
                }
            })
            .collect();
        Ok(AffineMixture { comps })
    }

    fn noise_components(&self, x: &[f64], sigma: f64) -> Result<AffineMixture<'_>> {
        self.check_dim(x)?;
        if sigma == 0.0 {
            return Err(Error::Singularity("noise prediction is undefined at sigma = 0".into()));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(input(format!("sigma must be positive, got {sigma}")));
        }
        let comps = self
            .iter()
            .map(|(w, mu, s)| {
                let var = s * s + sigma * sigma;
                Component {
                    log_weight: w.ln(),
                    center: mu.clone(),
                    var,
                    slope: sigma / var,
                    mean: mu,
                    form: if s == 0.0 {
                        Form::Divided(sigma)
                    } else {
                        Form::Affine { offset_sign: 0.0 }
                    },
                }
            })
            .collect();
        Ok(AffineMixture { comps })
    }

    fn iter(&self) -> impl Iterator<Item = (f64, &Vec<f64>, f64)> {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.stds)
            .filter(|((w, _), _)| **w > 0.0)
            .map(|((w, m), s)| (*w, m, *s))
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(input(format!(
                "mixture of dimension {} queried at a {}-vector",
                self.dim(),
                x.len()
            )));
        }
        Ok(())
    }
}

/// How a component's affine map is evaluated. Point masses use the divided
/// form `(x - mu) / level` so the single-component case is exact.
#[derive(Debug, Clone, Copy)]
enum Form {
    Affine { offset_sign: f64 },
    Divided(f64),
}

#[derive(Debug)]
struct Component<'a> {
    log_weight: f64,
    center: Vec<f64>,
    var: f64,
    slope: f64,
    mean: &'a [f64],
    form: Form,
}

impl Component<'_> {
    fn value(&self, x: &[f64]) -> Vec<f64> {
        match self.form {
            Form::Divided(level) => x.iter().zip(self.mean).map(|(a, m)| (a - m) / level).collect(),
            Form::Affine { offset_sign } => x
                .iter()
                .zip(&self.center)
                .zip(self.mean)
                .map(|((a, c), m)| self.slope * (a - c) + offset_sign * m)
                .collect(),
        }
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let diff = sub(x, &self.center);
        self.log_weight - 0.5 * x.len() as f64 * self.var.ln() - dot(&diff, &diff) / (2.0 * self.var)
    }
}

struct AffineMixture<'a> {
    comps: Vec<Component<'a>>,
}

impl AffineMixture<'_> {
    fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        if self.comps.len() == 1 {
            return vec![1.0];
        }
        let logs: Vec<f64> = self.comps.iter().map(|c| c.log_density(x)).collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    fn value(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.comps.len() == 1 {
            return Ok(self.comps[0].value(x));
        }
        let resp = self.responsibilities(x);
        let mut out = vec![0.0; x.len()];
        for (r, c) in resp.iter().zip(&self.comps) {
            for (o, v) in out.iter_mut().zip(c.value(x)) {
                *o += r * v;
            }
        }
        Ok(out)
    }

    fn vjp(&self, x: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        if cotangent.len() != x.len() {
            return Err(input("cotangent dimension mismatch"));
        }
        let resp = self.responsibilities(x);
        let mut out = vec![0.0; x.len()];
        // Linear part: sum_k r_k c_k u.
        let linear: f64 = resp.iter().zip(&self.comps).map(|(r, c)| r * c.slope).sum();
        for (o, u) in out.iter_mut().zip(cotangent) {
            *o = linear * u;
        }
        if self.comps.len() == 1 {
            return Ok(out);
        }
        // Responsibility part: sum_k r_k (b_k - b_bar) grad log p_k, b_k = v_k . u.
        let b: Vec<f64> = self.comps.iter().map(|c| dot(&c.value(x), cotangent)).collect();
        let b_bar: f64 = resp.iter().zip(&b).map(|(r, bk)| r * bk).sum();
        for ((r, bk), c) in resp.iter().zip(&b).zip(&self.comps) {
            let coef = r * (bk - b_bar) / c.var;
            if coef == 0.0 {
                continue;
            }
            for ((o, a), m) in out.iter_mut().zip(x).zip(&c.center) {
                *o -= coef * (a - m);
            }
        }
        Ok(out)
    }
}
