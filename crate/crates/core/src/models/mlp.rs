//! A small tanh MLP velocity field trained with the conditional flow-matching
//! objective. The field takes `[x, t]` and returns a `D`-vector; tanh keeps it
//! smooth so the exact gradient mode can differentiate through it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::models::MixtureSpec;

/// Minibatch size used by [`train_mlp_velocity`].
pub const TRAIN_BATCH: usize = 128;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out x in`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    fn outputs(&self) -> usize {
        self.biases.len()
    }

    fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    /// `W^T g`.
    fn backward_input(&self, grad_out: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.inputs()];
        for (row, g) in self.weights.iter().zip(grad_out) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * g;
            }
        }
        out
    }
}

/// Learned velocity field `v(x, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpField {
    pub dim: usize,
    pub layers: Vec<DenseLayer>,
}

/// Activations of one forward pass, kept for backpropagation.
struct Trace {
    /// Input to each layer (the first is `[x, t]`).
    inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl MlpField {
    /// Random initialization with Glorot-scaled normal weights.
    pub fn init(dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(input("field dimension must be positive"));
        }
        if hidden.iter().any(|w| *w == 0) {
            return Err(input("hidden widths must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![dim + 1];
        sizes.extend_from_slice(hidden);
        sizes.push(dim);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = (2.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = (0..fan_out)
                    .map(|_| {
                        (0..fan_in)
                            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    })
                    .collect();
                DenseLayer {
                    weights,
                    biases: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self { dim, layers })
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.layers.first() else {
            return Err(input("MLP field needs at least one layer"));
        };
        if first.inputs() != self.dim + 1 {
            return Err(input("first MLP layer must take [x, t]"));
        }
        if self.layers.last().map(DenseLayer::outputs) != Some(self.dim) {
            return Err(input("last MLP layer must output the field dimension"));
        }
        for pair in self.layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(input("MLP layer widths do not chain"));
            }
        }
        for layer in &self.layers {
            if layer.weights.iter().any(|r| r.len() != layer.inputs()) {
                return Err(input("ragged MLP weight matrix"));
            }
            if layer.weights.iter().flatten().chain(&layer.biases).any(|v| !v.is_finite()) {
                return Err(input("MLP parameters must be finite"));
            }
        }
        Ok(())
    }

    fn trace(&self, x: &[f64], t: f64) -> Trace {
        let mut a: Vec<f64> = x.to_vec();
        a.push(t);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&a);
            inputs.push(a);
            a = if l == last { z } else { z.into_iter().map(f64::tanh).collect() };
        }
        Trace { inputs, output: a }
    }

    fn check(&self, x: &[f64], t: f64) -> Result<()> {
        if x.len() != self.dim {
            return Err(input(format!("MLP field of dimension {} queried at a {}-vector", self.dim, x.len())));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(input(format!("time {t} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check(x, t)?;
        Ok(self.trace(x, t).output)
    }

    /// Backpropagates `grad_out` through the network; returns the gradient
    /// with respect to the full input `[x, t]`, accumulating parameter
    /// gradients into `param_grads` when given.
    fn backward(&self, trace: &Trace, grad_out: &[f64], mut param_grads: Option<&mut [DenseLayer]>) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.inputs[l];
            if let Some(grads) = param_grads.as_deref_mut() {
                let acc = &mut grads[l];
                for ((row, b), gi) in acc.weights.iter_mut().zip(acc.biases.iter_mut()).zip(&g) {
                    *b += gi;
                    for (w, a) in row.iter_mut().zip(input) {
                        *w += gi * a;
                    }
                }
            }
            let mut back = layer.backward_input(&g);
            if l > 0 {
                // input to layer l is tanh of the previous pre-activation
                for (b, a) in back.iter_mut().zip(input) {
                    *b *= 1.0 - a * a;
                }
            }
            g = back;
        }
        g
    }

    pub fn velocity_vjp(&self, x: &[f64], t: f64, cotangent: &[f64]) -> Result<Vec<f64>> {
        self.check(x, t)?;
        if cotangent.len() != self.dim {
            return Err(input("cotangent dimension mismatch"));
        }
        let trace = self.trace(x, t);
        let mut g = self.backward(&trace, cotangent, None);
        g.truncate(self.dim);
        Ok(g)
    }

    fn zeros_like(&self) -> Vec<DenseLayer> {
        self.layers
            .iter()
            .map(|l| DenseLayer {
                weights: vec![vec![0.0; l.inputs()]; l.outputs()],
                biases: vec![0.0; l.outputs()],
            })
            .collect()
    }
}

/// Result of [`train_mlp_velocity`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedField {
    pub field: MlpField,
    /// Minibatch loss before each update.
    pub losses: Vec<f64>,
}

impl TrainedField {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least one training step")
    }
}

/// Fits an [`MlpField`] to the mixture by regressing `v(x_t, t)` onto
/// `x1 - x0`, with `x0` from the mixture, `x1 ~ N(0, I)` and `t ~ U(0, 1)`.
pub fn train_mlp_velocity(
    spec: &MixtureSpec,
    hidden: &[usize],
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<TrainedField> {
    spec.validate()?;
    if steps == 0 {
        return Err(Error::Training("training needs at least one step".into()));
    }
    if !(lr > 0.0) {
        return Err(Error::Training(format!("learning rate must be positive, got {lr}")));
    }
    let dim = spec.dim();
    let mut field = MlpField::init(dim, hidden, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut m = field.zeros_like();
    let mut v = field.zeros_like();
    let mut losses = Vec::with_capacity(steps);

    for step in 1..=steps {
        let mut grads = field.zeros_like();
        let mut loss = 0.0;
        for _ in 0..TRAIN_BATCH {
            let x0 = spec.sample(&mut rng);
            let x1: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let t: f64 = rng.random();
            let xt: Vec<f64> = x0.iter().zip(&x1).map(|(a, b)| (1.0 - t) * a + t * b).collect();
            let trace = field.trace(&xt, t);
            let scale = 2.0 / (TRAIN_BATCH * dim) as f64;
            let residual: Vec<f64> = trace
                .output
                .iter()
                .zip(x1.iter().zip(&x0))
                .map(|(o, (b, a))| o - (b - a))
                .collect();
            loss += residual.iter().map(|r| r * r).sum::<f64>() / (TRAIN_BATCH * dim) as f64;
            let grad_out: Vec<f64> = residual.iter().map(|r| r * scale).collect();
            field.backward(&trace, &grad_out, Some(&mut grads));
        }
        if !loss.is_finite() {
            return Err(Error::Training(format!("loss became non-finite at step {step}")));
        }
        losses.push(loss);
        adam_update(&mut field.layers, &grads, &mut m, &mut v, lr, step);
    }
    if field.layers.iter().flat_map(|l| l.weights.iter().flatten().chain(&l.biases)).any(|p| !p.is_finite()) {
        return Err(Error::Training("parameters became non-finite".into()));
    }
    Ok(TrainedField { field, losses })
}

fn adam_update(
    params: &mut [DenseLayer],
    grads: &[DenseLayer],
    m: &mut [DenseLayer],
    v: &mut [DenseLayer],
    lr: f64,
    step: usize,
) {
    let c1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(step as i32);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
    };
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        for (((pr, gr), mr), vr) in p.weights.iter_mut().zip(&g.weights).zip(m.weights.iter_mut()).zip(v.weights.iter_mut()) {
            for (((pw, gw), mw), vw) in pr.iter_mut().zip(gr).zip(mr.iter_mut()).zip(vr.iter_mut()) {
                update(pw, *gw, mw, vw);
            }
        }
        for (((pb, gb), mb), vb) in p.biases.iter_mut().zip(&g.biases).zip(m.biases.iter_mut()).zip(v.biases.iter_mut()) {
            update(pb, *gb, mb, vb);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Distribution as _;

    #[test]
    fn vjp_matches_finite_differences() {
        let field = MlpField::init(3, &[8, 8], 7).unwrap();
        let x = [0.3, -0.2, 0.9];
        let u = [1.0, -0.5, 0.25];
        let got = field.velocity_vjp(&x, 0.4, &u).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fp = field.velocity(&xp, 0.4).unwrap();
            let fm = field.velocity(&xm, 0.4).unwrap();
            let fd: f64 = fp.iter().zip(&fm).zip(&u).map(|((a, b), w)| (a - b) / (2.0 * h) * w).sum();
            assert!((got[i] - fd).abs() < 1e-7, "{} vs {fd}", got[i]);
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let field = MlpField::init(2, &[5], 3).unwrap();
        let (x, t) = ([0.4, -1.1], 0.6);
        let target = [0.3, 0.2];
        let loss = |f: &MlpField| -> f64 {
            f.velocity(&x, t).unwrap().iter().zip(&target).map(|(o, y)| (o - y).powi(2)).sum()
        };
        let trace = field.trace(&x, t);
        let grad_out: Vec<f64> = trace.output.iter().zip(&target).map(|(o, y)| 2.0 * (o - y)).collect();
        let mut grads = field.zeros_like();
        field.backward(&trace, &grad_out, Some(&mut grads));
        let h = 1e-6;
        for (l, r, c) in [(0, 2, 1), (0, 4, 2), (1, 1, 3)] {
            let mut p = field.clone();
            p.layers[l].weights[r][c] += h;
            let mut q = field.clone();
            q.layers[l].weights[r][c] -= h;
            let fd = (loss(&p) - loss(&q)) / (2.0 * h);
            assert!((grads[l].weights[r][c] - fd).abs() < 1e-7);
        }
    }

    #[test]
    fn training_rejects_zero_steps_and_accepts_one() {
        let spec = MixtureSpec::point_mass(vec![1.0, -1.0]);
        assert!(matches!(train_mlp_velocity(&spec, &[8], 0, 1e-3, 1), Err(Error::Training(_))));
        let one = train_mlp_velocity(&spec, &[8], 1, 1e-3, 1).unwrap();
        assert_eq!(one.losses.len(), 1);
        one.field.validate().unwrap();
        assert!(one.field.velocity(&[0.0, 0.0], 0.5).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn training_is_deterministic() {
        let spec = MixtureSpec::new(vec![0.5, 0.5], vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![0.2, 0.2]).unwrap();
        let a = train_mlp_velocity(&spec, &[8], 20, 1e-2, 42).unwrap();
        let b = train_mlp_velocity(&spec, &[8], 20, 1e-2, 42).unwrap();
        assert_eq!(a, b);
        let c = train_mlp_velocity(&spec, &[8], 20, 1e-2, 43).unwrap();
        assert_ne!(a.field, c.field);
    }

    #[test]
    fn learned_point_mass_field_tracks_the_analytic_one() {
        let mu = vec![1.0, -1.0];
        let spec = MixtureSpec::point_mass(mu.clone());
        let trained = train_mlp_velocity(&spec, &[32, 32], 3000, 3e-3, 11).unwrap();
        assert!(trained.final_loss() < trained.losses[0]);
        // Held-out probes drawn on the x_t marginal, t >= 0.1.
        let mut rng = ChaCha8Rng::seed_from_u64(999);
        let (mut err, mut norm) = (0.0, 0.0);
        for k in 0..10 {
            let t = 0.1 + 0.1 * k as f64;
            for _ in 0..20 {
                let z: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
                let x: Vec<f64> = mu.iter().zip(&z).map(|(m, zz)| (1.0 - t) * m + t * zz).collect();
                let want: Vec<f64> = x.iter().zip(&mu).map(|(a, m)| (a - m) / t).collect();
                let got = trained.field.velocity(&x, t).unwrap();
                err += got.iter().zip(&want).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                norm += want.iter().map(|b| b * b).sum::<f64>();
            }
        }
        let rel = (err / norm).sqrt();
        assert!(rel < 0.10, "relative error {rel}");
    }
}
