//! Browser demo over the two-mode toy. Each operation returns a JSON string
//! so the page needs no bindings beyond `JSON.parse`.

use diamond_core::models::{MixtureDenoiser, MixtureVelocity};
use diamond_core::rng::initial_noise;
use diamond_core::{
    correction_window, lambda_schedule, make_sigma_schedule, make_time_grid, mean_artifact_freq, run_trajectory,
    DecoderSpec, DetectorSpec, GuidanceConfig, MixtureSpec, MASK_THRESHOLD, Pipeline, Predictor, Sampler, ScheduleKind, Trajectory,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const SIGMA_MAX: f64 = 20.0;

/// Guidance knobs exposed on the page.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Knobs {
    pub diffusion: bool,
    pub steps: usize,
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub power: f64,
    pub tau_start: usize,
    pub tau_end: usize,
    pub normalize: bool,
}

impl Knobs {
    fn guidance(&self) -> GuidanceConfig {
        GuidanceConfig {
            lambda_start: self.lambda_start,
            lambda_end: self.lambda_end,
            power: self.power,
            tau_start: self.tau_start,
            tau_end: self.tau_end,
            normalize: self.normalize,
            // The toy's gradients fall far below 1e-8 in the sigmoid tail.
            eps: 1e-30,
            ..GuidanceConfig::default()
        }
    }
}

struct Toy {
    mixture: MixtureSpec,
    decoder: DecoderSpec,
    detector: DetectorSpec,
}

impl Toy {
    fn new() -> Self {
        Self {
            mixture: MixtureSpec::new(vec![0.5, 0.5], vec![vec![2.0, 0.0], vec![-2.0, 0.0]], vec![0.5, 0.5])
                .expect("valid mixture"),
            decoder: DecoderSpec::identity(1, 2),
            detector: DetectorSpec::radial(vec![vec![2.0, 0.0]], vec![1.0], None).expect("valid detector"),
        }
    }

    fn run(&self, k: &Knobs, seeds: impl Iterator<Item = u64>) -> Result<Vec<(Trajectory, Trajectory)>, String> {
        let velocity = MixtureVelocity(&self.mixture);
        let denoiser = MixtureDenoiser(&self.mixture);
        let (sampler, predictor, scale, id): (Sampler, &dyn Predictor, f64, &str) = if k.diffusion {
            let s = make_sigma_schedule(k.steps, SIGMA_MAX, ScheduleKind::Karras).map_err(|e| e.to_string())?;
            (Sampler::Diffusion(s), &denoiser, SIGMA_MAX, "two-mode-2d-diff")
        } else {
            let s = make_time_grid(k.steps).map_err(|e| e.to_string())?;
            (Sampler::Flow(s), &velocity, 1.0, "two-mode-2d")
        };
        let pipeline = Pipeline {
            predictor,
            decoder: &self.decoder,
            detector: &self.detector,
        };
        let cfg = k.guidance();
        seeds
            .map(|seed| {
                let x1 = initial_noise(id, seed, 2, scale);
                let base = run_trajectory(&x1, &sampler, pipeline, None, None).map_err(|e| e.to_string())?;
                let guided = run_trajectory(&x1, &sampler, pipeline, Some(&cfg), None).map_err(|e| e.to_string())?;
                Ok((base, guided))
            })
            .collect()
    }
}

#[derive(Serialize)]
struct ScheduleOut {
    lambda: Vec<f64>,
    corrected: Vec<bool>,
}

/// Per-iteration lambda and whether the iteration is inside the window.
pub fn schedule_json(k: &Knobs) -> Result<String, String> {
    k.guidance().validate(k.steps).map_err(|e| e.to_string())?;
    let mut out = ScheduleOut {
        lambda: Vec::with_capacity(k.steps),
        corrected: Vec::with_capacity(k.steps),
    };
    let cfg = k.guidance();
    for i in 0..k.steps {
        out.lambda.push(lambda_schedule(i, k.steps, &cfg).map_err(|e| e.to_string())?);
        out.corrected.push(correction_window(i, k.steps, k.tau_start, k.tau_end).map_err(|e| e.to_string())?);
    }
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct PathOut {
    points: Vec<[f64; 2]>,
    clean_estimates: Vec<[f64; 2]>,
    delta_norm: Vec<f64>,
    artifact: bool,
}

impl PathOut {
    fn from(traj: &Trajectory) -> Self {
        let pt = |v: &[f64]| [v[0], v[1]];
        let mut points: Vec<_> = traj.records.iter().map(|r| pt(&r.x_t)).collect();
        points.push(pt(&traj.final_x));
        Self {
            points,
            clean_estimates: traj.records.iter().map(|r| pt(&r.x0_hat)).collect(),
            delta_norm: traj.records.iter().map(|r| r.delta_norm).collect(),
            artifact: traj.mask.max() >= MASK_THRESHOLD,
        }
    }
}

#[derive(Serialize)]
struct PairOut {
    seed: u64,
    baseline: PathOut,
    guided: PathOut,
}

/// Baseline and guided paths from the same initial noise.
pub fn trajectory_pair_json(k: &Knobs, seed: u64) -> Result<String, String> {
    k.guidance().validate(k.steps).map_err(|e| e.to_string())?;
    let (base, guided) = Toy::new().run(k, std::iter::once(seed))?.remove(0);
    let out = PairOut {
        seed,
        baseline: PathOut::from(&base),
        guided: PathOut::from(&guided),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct ScatterOut {
    baseline: Vec<[f64; 2]>,
    guided: Vec<[f64; 2]>,
    maf_baseline: f64,
    maf_guided: f64,
}

/// Endpoints of `count` seeds from `start`, with MAF of each variant.
pub fn scatter_json(k: &Knobs, start: u64, count: usize) -> Result<String, String> {
    if count == 0 {
        return Err("count must be at least 1".into());
    }
    k.guidance().validate(k.steps).map_err(|e| e.to_string())?;
    let pairs = Toy::new().run(k, start..start + count as u64)?;
    let maf = |pick: fn(&(Trajectory, Trajectory)) -> &Trajectory| {
        let masks: Vec<_> = pairs.iter().map(|p| pick(p).mask.clone()).collect();
        mean_artifact_freq(&masks, MASK_THRESHOLD).map_err(|e| e.to_string())
    };
    let out = ScatterOut {
        baseline: pairs.iter().map(|(b, _)| [b.final_x[0], b.final_x[1]]).collect(),
        guided: pairs.iter().map(|(_, g)| [g.final_x[0], g.final_x[1]]).collect(),
        maf_baseline: maf(|p| &p.0)?,
        maf_guided: maf(|p| &p.1)?,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[allow(clippy::too_many_arguments)]
fn knobs(
    diffusion: bool,
    steps: usize,
    lambda_start: f64,
    lambda_end: f64,
    power: f64,
    tau_start: usize,
    tau_end: usize,
    normalize: bool,
) -> Knobs {
    Knobs {
        diffusion,
        steps,
        lambda_start,
        lambda_end,
        power,
        tau_start,
        tau_end,
        normalize,
    }
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn schedule(
    steps: usize,
    lambda_start: f64,
    lambda_end: f64,
    power: f64,
    tau_start: usize,
    tau_end: usize,
) -> Result<String, JsValue> {
    schedule_json(&knobs(false, steps, lambda_start, lambda_end, power, tau_start, tau_end, true)).map_err(JsValue::from)
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn trajectory_pair(
    diffusion: bool,
    steps: usize,
    lambda_start: f64,
    lambda_end: f64,
    power: f64,
    tau_start: usize,
    tau_end: usize,
    normalize: bool,
    seed: u64,
) -> Result<String, JsValue> {
    let k = knobs(diffusion, steps, lambda_start, lambda_end, power, tau_start, tau_end, normalize);
    trajectory_pair_json(&k, seed).map_err(JsValue::from)
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn scatter(
    diffusion: bool,
    steps: usize,
    lambda_start: f64,
    lambda_end: f64,
    power: f64,
    tau_start: usize,
    tau_end: usize,
    normalize: bool,
    start: u64,
    count: usize,
) -> Result<String, JsValue> {
    let k = knobs(diffusion, steps, lambda_start, lambda_end, power, tau_start, tau_end, normalize);
    scatter_json(&k, start, count).map_err(JsValue::from)
}
