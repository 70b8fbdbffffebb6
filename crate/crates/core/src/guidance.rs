//! Artifact-aware trajectory correction.
//!
//! Each solver iteration estimates the clean sample, scores it with the
//! detector, and subtracts a displacement `delta = lambda_t g / (|g| + eps)`
//! from the ordinary Euler transition, where `g` is the gradient of the
//! artifact loss (plus the optional identity term) with respect to `x_t`.
//! `lambda_t` decays with a power schedule and corrections are confined to a
//! window of iterations.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::detector::{binarize, eval_mask, ArtifactMask, DetectorSpec};
use crate::diffusion::{clean_estimate_diffusion, euler_step_diffusion, SigmaSchedule};
use crate::error::{input, Error, Result};
use crate::flow::{clean_estimate_flow, euler_step_flow, LatentState, TimeGrid};
use crate::gradients::{artifact_loss, evaluate_objective, GradMode, RecTerm};
use crate::grid::Grid;
use crate::models::{DecoderSpec, Predictor};
use crate::vector::{all_finite, norm, scale, sub};

/// Threshold separating artifact from non-artifact cells.
pub const MASK_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub lambda_start: f64,
    pub lambda_end: f64,
    /// Power factor `p` of the schedule.
    pub power: f64,
    /// Iterations skipped at the start of the run.
    pub tau_start: usize,
    /// Iterations skipped at the end of the run.
    pub tau_end: usize,
    pub eps: f64,
    /// Strength of the identity-preservation term; 0 disables it.
    pub alpha: f64,
    pub mode: GradMode,
    /// Use the raw gradient `lambda_t g` when false (ablation only).
    pub normalize: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            lambda_start: 25.0,
            lambda_end: 1.0,
            power: 2.0,
            tau_start: 0,
            tau_end: 0,
            eps: 1e-8,
            alpha: 0.0,
            mode: GradMode::DetachedVelocity,
            normalize: true,
        }
    }
}

impl GuidanceConfig {
    /// A configuration that never moves the trajectory.
    pub fn disabled() -> Self {
        Self {
            lambda_start: 0.0,
            lambda_end: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        if !(self.lambda_end >= 0.0) || !(self.lambda_start >= self.lambda_end) || !self.lambda_start.is_finite() {
            return Err(Error::Config(format!(
                "need lambda_start >= lambda_end >= 0, got {} and {}",
                self.lambda_start, self.lambda_end
            )));
        }
        if !(self.power >= 1.0) || !self.power.is_finite() {
            return Err(Error::Config(format!("power must be >= 1, got {}", self.power)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if steps == 0 {
            return Err(Error::Config("need at least one step".into()));
        }
        if self.tau_start > steps - 1 || self.tau_end > steps - 1 {
            return Err(Error::Config(format!(
                "window offsets ({}, {}) exceed the last iteration {}",
                self.tau_start,
                self.tau_end,
                steps - 1
            )));
        }
        Ok(())
    }

    /// True when `tau_start + tau_end >= steps`: guidance can never fire.
    pub fn window_is_empty(&self, steps: usize) -> bool {
        self.tau_start + self.tau_end >= steps
    }
}

/// `lambda_end + (lambda_start - lambda_end) (1 - i / (N - 1))^p`, with `i`
/// the global iteration index. A single-step run uses `lambda_start`.
pub fn lambda_schedule(i: usize, steps: usize, cfg: &GuidanceConfig) -> Result<f64> {
    if steps == 0 || i >= steps {
        return Err(input(format!("step index {i} outside 0..{steps}")));
    }
    if i == 0 {
        return Ok(cfg.lambda_start);
    }
    let progress = 1.0 - i as f64 / (steps - 1) as f64;
    Ok(cfg.lambda_end + (cfg.lambda_start - cfg.lambda_end) * progress.powf(cfg.power))
}

/// Normalized displacement `lambda g / (|g|_2 + eps)`.
pub fn displacement(g: &[f64], lambda: f64, eps: f64) -> Result<Vec<f64>> {
    if !all_finite(g) {
        return Err(input("gradient contains non-finite entries"));
    }
    if !(eps > 0.0) {
        return Err(input(format!("eps must be positive, got {eps}")));
    }
    let n = norm(g);
    if n == 0.0 {
        return Ok(vec![0.0; g.len()]);
    }
    Ok(scale(g, lambda / (n + eps)))
}

/// Whether iteration `j` (0 at the noise end) lies in the correction window:
/// the first `tau_start` and the last `tau_end` iterations are skipped.
pub fn correction_window(j: usize, steps: usize, tau_start: usize, tau_end: usize) -> Result<bool> {
    if j >= steps {
        return Err(input(format!("iteration {j} outside 0..{steps}")));
    }
    Ok(j >= tau_start && j + tau_end < steps)
}

/// `alpha * lambda * mean |decoded - base|` over the non-artifact cells.
pub fn rec_loss(decoded: &Grid, base_image: &Grid, non_artifact: &[bool], alpha: f64, lambda: f64) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(input(format!("alpha must be non-negative, got {alpha}")));
    }
    rec_loss_weighted(decoded, base_image, non_artifact, alpha * lambda)
}

pub(crate) fn rec_loss_weighted(decoded: &Grid, base_image: &Grid, non_artifact: &[bool], weight: f64) -> Result<f64> {
    decoded.check_shape(base_image, "rec_loss")?;
    if non_artifact.len() != decoded.len() {
        return Err(input("non-artifact mask does not match the image"));
    }
    let n = non_artifact.iter().filter(|b| **b).count();
    if n == 0 || weight == 0.0 {
        return Ok(0.0);
    }
    let total: f64 = decoded
        .values
        .iter()
        .zip(&base_image.values)
        .zip(non_artifact)
        .filter(|(_, keep)| **keep)
        .map(|((u, b), _)| (u - b).abs())
        .sum();
    Ok(weight * total / n as f64)
}

/// Baseline output and its non-artifact region, the anchor of `L_rec`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecReference {
    pub image: Grid,
    pub non_artifact: Vec<bool>,
}

impl RecReference {
    /// Marks as non-artifact every cell the detector scores below 0.5 on the
    /// baseline image.
    pub fn from_baseline(image: Grid, detector: &DetectorSpec) -> Result<Self> {
        let mask = eval_mask(&image, detector)?;
        let non_artifact = binarize(&mask, MASK_THRESHOLD).into_iter().map(|a| !a).collect();
        Ok(Self { image, non_artifact })
    }
}

/// Per-iteration log entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub i: usize,
    /// Time (flow) or sigma (diffusion) at the start of the iteration.
    pub t: f64,
    pub x_t: Vec<f64>,
    pub x0_hat: Vec<f64>,
    pub mask_max: f64,
    pub mask_mean: f64,
    pub loss_a: f64,
    pub delta_norm: f64,
    pub lambda_t: f64,
    pub corrected: bool,
}

#[derive(Serialize)]
struct StepRow {
    i: usize,
    t: f64,
    #[serde(rename = "L_a")]
    loss_a: f64,
    delta_norm: f64,
    lambda_t: f64,
    corrected: bool,
    mask_max: f64,
    mask_mean: f64,
}

/// Writes records as CSV with columns
/// `i,t,L_a,delta_norm,lambda_t,corrected,mask_max,mask_mean`.
pub fn write_step_csv<W: Write>(records: &[StepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(["i", "t", "L_a", "delta_norm", "lambda_t", "corrected", "mask_max", "mask_mean"])
            .map_err(|e| input(e.to_string()))?;
    }
    for r in records {
        w.serialize(StepRow {
            i: r.i,
            t: r.t,
            loss_a: r.loss_a,
            delta_norm: r.delta_norm,
            lambda_t: r.lambda_t,
            corrected: r.corrected,
            mask_max: r.mask_max,
            mask_mean: r.mask_mean,
        })
        .map_err(|e| input(e.to_string()))?;
    }
    w.flush().map_err(|e| input(e.to_string()))?;
    Ok(())
}

/// Sampler family together with its discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "family", content = "levels")]
pub enum Sampler {
    Flow(TimeGrid),
    Diffusion(SigmaSchedule),
}

impl Sampler {
    pub fn steps(&self) -> usize {
        match self {
            Self::Flow(g) => g.steps(),
            Self::Diffusion(s) => s.steps(),
        }
    }

    /// Descending levels, `steps + 1` entries ending at 0.
    pub fn levels(&self) -> &[f64] {
        match self {
            Self::Flow(g) => g.times(),
            Self::Diffusion(s) => s.sigmas(),
        }
    }

    /// Time coordinate carried by [`LatentState`] at iteration `j`: the flow
    /// time, or sigma relative to its maximum for diffusion.
    pub fn state_time(&self, j: usize) -> f64 {
        match self {
            Self::Flow(g) => g.time(j),
            Self::Diffusion(s) => s.sigma(j) / s.sigma_max(),
        }
    }

    fn clean_estimate(&self, x: &[f64], pred: &[f64], level: f64) -> Result<Vec<f64>> {
        match self {
            Self::Flow(_) => clean_estimate_flow(x, pred, level),
            Self::Diffusion(_) => clean_estimate_diffusion(x, pred, level),
        }
    }

    fn euler(&self, x: &[f64], pred: &[f64], j: usize) -> Result<Vec<f64>> {
        match self {
            Self::Flow(g) => euler_step_flow(x, pred, g.dt(j)),
            Self::Diffusion(s) => euler_step_diffusion(x, pred, s.sigma(j), s.sigma(j + 1)),
        }
    }
}

/// Everything a guided step needs besides the state.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub predictor: &'a dyn Predictor,
    pub decoder: &'a DecoderSpec,
    pub detector: &'a DetectorSpec,
}

fn step(
    state: &LatentState,
    pipeline: Pipeline<'_>,
    cfg: Option<&GuidanceConfig>,
    sampler: &Sampler,
    j: usize,
    rec_ref: Option<&RecReference>,
) -> Result<(LatentState, StepRecord)> {
    let steps = sampler.steps();
    if j >= steps {
        return Err(input(format!("iteration {j} outside 0..{steps}")));
    }
    if state.t != sampler.state_time(j) {
        return Err(input(format!(
            "state time {} does not match iteration {j} ({})",
            state.t,
            sampler.state_time(j)
        )));
    }
    let level = sampler.levels()[j];
    let x = &state.x;

    let (active, lambda) = match cfg {
        Some(c) => (correction_window(j, steps, c.tau_start, c.tau_end)?, lambda_schedule(j, steps, c)?),
        None => (false, 0.0),
    };

    let (prediction, x0_hat, mask, delta) = if active {
        let c = cfg.expect("active implies a config");
        let rec = if c.alpha > 0.0 && j >= 1 {
            let r = rec_ref.ok_or_else(|| Error::Config("alpha > 0 requires a baseline reference".into()))?;
            Some(RecTerm {
                base_image: &r.image,
                non_artifact: &r.non_artifact,
                weight: c.alpha * lambda,
            })
        } else {
            None
        };
        let obj = evaluate_objective(x, level, pipeline.predictor, pipeline.decoder, pipeline.detector, rec.as_ref(), c.mode)?;
        let delta = if c.normalize {
            displacement(&obj.grad, lambda, c.eps)?
        } else {
            if !all_finite(&obj.grad) {
                return Err(input("gradient contains non-finite entries"));
            }
            scale(&obj.grad, lambda)
        };
        (obj.prediction, obj.x0_hat, obj.mask, Some(delta))
    } else {
        let prediction = pipeline.predictor.predict(x, level)?;
        let x0_hat = sampler.clean_estimate(x, &prediction, level)?;
        let mask = eval_mask(&pipeline.decoder.decode(&x0_hat)?, pipeline.detector)?;
        (prediction, x0_hat, mask, None)
    };

    let mut next = sampler.euler(x, &prediction, j)?;
    let mut delta_norm = 0.0;
    if let Some(delta) = delta {
        delta_norm = norm(&delta);
        if delta_norm > 0.0 {
            next = sub(&next, &delta);
        }
    }
    if !all_finite(&next) {
        return Err(input(format!("trajectory diverged at iteration {j}")));
    }
    let record = StepRecord {
        i: j,
        t: level,
        x_t: x.clone(),
        x0_hat,
        mask_max: mask.max(),
        mask_mean: mask.mean(),
        loss_a: artifact_loss(&mask),
        delta_norm,
        lambda_t: lambda,
        corrected: active,
    };
    let t_next = if j + 1 == steps { 0.0 } else { sampler.state_time(j + 1) };
    Ok((LatentState { x: next, t: t_next }, record))
}

/// One guided rectified-flow iteration `x - dt v - delta`.
#[allow(clippy::too_many_arguments)]
pub fn guided_step_flow(
    state: &LatentState,
    field: &dyn Predictor,
    decoder: &DecoderSpec,
    detector: &DetectorSpec,
    cfg: &GuidanceConfig,
    grid: &TimeGrid,
    i: usize,
    base: Option<&RecReference>,
) -> Result<(LatentState, StepRecord)> {
    let pipeline = Pipeline { predictor: field, decoder, detector };
    step(state, pipeline, Some(cfg), &Sampler::Flow(grid.clone()), i, base)
}

/// One guided diffusion iteration `x - (sigma - sigma_next) eps - delta`.
/// The state time is `sigma_i / sigma_max`.
#[allow(clippy::too_many_arguments)]
pub fn guided_step_diffusion(
    state: &LatentState,
    denoiser: &dyn Predictor,
    decoder: &DecoderSpec,
    detector: &DetectorSpec,
    cfg: &GuidanceConfig,
    schedule: &SigmaSchedule,
    i: usize,
    base: Option<&RecReference>,
) -> Result<(LatentState, StepRecord)> {
    let pipeline = Pipeline { predictor: denoiser, decoder, detector };
    step(state, pipeline, Some(cfg), &Sampler::Diffusion(schedule.clone()), i, base)
}

/// A finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub x1: Vec<f64>,
    pub final_x: Vec<f64>,
    pub image: Grid,
    pub mask: ArtifactMask,
    pub records: Vec<StepRecord>,
}

/// Integrates from the noise end to level 0. `cfg = None` runs the plain
/// Euler sampler (still logging the detector's view at every iteration).
pub fn run_trajectory(
    x1: &[f64],
    sampler: &Sampler,
    pipeline: Pipeline<'_>,
    cfg: Option<&GuidanceConfig>,
    base: Option<&RecReference>,
) -> Result<Trajectory> {
    if x1.len() != pipeline.predictor.dim() {
        return Err(input(format!(
            "initial latent has dimension {}, field expects {}",
            x1.len(),
            pipeline.predictor.dim()
        )));
    }
    if let Some(c) = cfg {
        c.validate(sampler.steps())?;
        if c.alpha > 0.0 && base.is_none() {
            return Err(Error::Config("alpha > 0 requires a baseline reference".into()));
        }
    }
    let mut state = LatentState {
        x: x1.to_vec(),
        t: sampler.state_time(0),
    };
    let mut records = Vec::with_capacity(sampler.steps());
    for j in 0..sampler.steps() {
        let (next, record) = step(&state, pipeline, cfg, sampler, j, base)?;
        records.push(record);
        state = next;
    }
    let image = pipeline.decoder.decode(&state.x)?;
    let mask = eval_mask(&image, pipeline.detector)?;
    Ok(Trajectory {
        x1: x1.to_vec(),
        final_x: state.x,
        image,
        mask,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_sigma_schedule, ScheduleKind};
    use crate::flow::make_time_grid;
    use crate::models::{MixtureDenoiser, MixtureSpec, MixtureVelocity};
    use crate::vector::cosine;
    use proptest::prelude::*;

    fn cfg(ls: f64, le: f64, p: f64) -> GuidanceConfig {
        GuidanceConfig {
            lambda_start: ls,
            lambda_end: le,
            power: p,
            ..GuidanceConfig::default()
        }
    }

    #[test]
    fn schedule_examples() {
        let c = cfg(25.0, 1.0, 2.0);
        assert_eq!(lambda_schedule(0, 10, &c).unwrap(), 25.0);
        assert_eq!(lambda_schedule(9, 10, &c).unwrap(), 1.0);
        let mid = lambda_schedule(5, 10, &c).unwrap();
        assert!((mid - (1.0 + 24.0 * 16.0 / 81.0)).abs() < 1e-12);
        assert!((mid - 5.7407).abs() < 1e-4);
        assert_eq!(lambda_schedule(0, 1, &c).unwrap(), 25.0);
        assert!(lambda_schedule(10, 10, &c).is_err());
    }

    #[test]
    fn displacement_examples() {
        assert_eq!(displacement(&[0.0, 0.0], 3.0, 1e-8).unwrap(), vec![0.0, 0.0]);
        let d = displacement(&[1.0, 0.0], 2.0, 1e-8).unwrap();
        assert!((norm(&d) - 2.0).abs() < 1e-7);
        let g = [0.3, -0.4, 1.2];
        let big: Vec<f64> = g.iter().map(|v| v * 1000.0).collect();
        let a = displacement(&g, 1.5, 1e-8).unwrap();
        let b = displacement(&big, 1.5, 1e-8).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() / q.abs() < 1e-5);
        }
        assert!(displacement(&[f64::NAN], 1.0, 1e-8).is_err());
    }

    #[test]
    fn window_examples() {
        assert!((0..10).all(|j| correction_window(j, 10, 0, 0).unwrap()));
        let active: Vec<usize> = (0..30).filter(|j| correction_window(*j, 30, 5, 5).unwrap()).collect();
        assert_eq!(active, (5..=24).collect::<Vec<_>>());
        assert!((0..8).all(|j| !correction_window(j, 8, 8, 0).unwrap()));
        assert!(correction_window(8, 8, 0, 0).is_err());
    }

    #[test]
    fn rec_loss_examples() {
        let a = Grid::new(1, 4, vec![0.0, 0.5, 2.0, 1.5]).unwrap();
        let b = Grid::new(1, 4, vec![9.0, 0.0, 7.0, 0.0]).unwrap();
        let keep = [false, true, false, true];
        assert_eq!(rec_loss(&a, &b, &keep, 0.0, 2.0).unwrap(), 0.0);
        assert_eq!(rec_loss(&a, &a, &keep, 0.4, 2.0).unwrap(), 0.0);
        assert!((rec_loss(&a, &b, &keep, 0.1, 2.0).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(rec_loss(&a, &b, &[false; 4], 0.1, 2.0).unwrap(), 0.0);
        assert!(rec_loss(&a, &Grid::zeros(2, 2), &keep, 0.1, 2.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(cfg(1.0, 2.0, 2.0).validate(10).is_err());
        assert!(cfg(2.0, 1.0, 0.5).validate(10).is_err());
        let mut c = cfg(2.0, 1.0, 2.0);
        c.tau_start = 10;
        assert!(c.validate(10).is_err());
        c.tau_start = 6;
        c.tau_end = 4;
        c.validate(10).unwrap();
        assert!(c.window_is_empty(10));
        let json = serde_json::to_string(&GuidanceConfig::default()).unwrap();
        assert!(json.contains("\"detached_velocity\""));
        let partial: GuidanceConfig = serde_json::from_str(r#"{"lambda_start": 3.0, "mode": "exact"}"#).unwrap();
        assert_eq!(partial.mode, GradMode::Exact);
        assert_eq!(partial.lambda_end, 1.0);
    }

    fn two_mode() -> MixtureSpec {
        MixtureSpec::new(vec![0.5, 0.5], vec![vec![2.0, 0.0], vec![-2.0, 0.0]], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn one_step_flow_lands_on_point_mass() {
        let mu = vec![0.5, -1.5];
        let spec = MixtureSpec::point_mass(mu.clone());
        let det = DetectorSpec::radial(vec![vec![5.0, 5.0]], vec![0.5], None).unwrap();
        let dec = DecoderSpec::identity(1, 2);
        let sampler = Sampler::Flow(make_time_grid(1).unwrap());
        let pipe = Pipeline { predictor: &MixtureVelocity(&spec), decoder: &dec, detector: &det };
        let traj = run_trajectory(&[0.3, 0.8], &sampler, pipe, None, None).unwrap();
        for (a, m) in traj.final_x.iter().zip(&mu) {
            assert!((a - m).abs() < 1e-15);
        }
        assert_eq!(traj.records.len(), 1);
    }

    #[test]
    fn zero_guidance_is_the_euler_composition() {
        let spec = two_mode();
        let det = DetectorSpec::radial(vec![vec![2.0, 0.0]], vec![1.0], None).unwrap();
        let dec = DecoderSpec::identity(1, 2);
        let grid = make_time_grid(10).unwrap();
        let sampler = Sampler::Flow(grid.clone());
        let field = MixtureVelocity(&spec);
        let pipe = Pipeline { predictor: &field, decoder: &dec, detector: &det };
        let x1 = [0.7, -0.4];
        let guided = run_trajectory(&x1, &sampler, pipe, Some(&GuidanceConfig::disabled()), None).unwrap();
        let mut x = x1.to_vec();
        for j in 0..grid.steps() {
            let v = spec.velocity(&x, grid.time(j)).unwrap();
            x = euler_step_flow(&x, &v, grid.dt(j)).unwrap();
        }
        let bits = |v: &[f64]| v.iter().map(|a| a.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&guided.final_x), bits(&x));
        assert!(guided.records.iter().all(|r| r.corrected && r.delta_norm == 0.0));
    }

    #[test]
    fn records_follow_the_window() {
        let spec = two_mode();
        let det = DetectorSpec::radial(vec![vec![2.0, 0.0]], vec![1.0], None).unwrap();
        let dec = DecoderSpec::identity(1, 2);
        let sampler = Sampler::Flow(make_time_grid(12).unwrap());
        let field = MixtureVelocity(&spec);
        let pipe = Pipeline { predictor: &field, decoder: &dec, detector: &det };
        let mut c = cfg(1.0, 0.1, 2.0);
        c.tau_start = 2;
        c.tau_end = 3;
        let traj = run_trajectory(&[0.5, 0.5], &sampler, pipe, Some(&c), None).unwrap();
        assert_eq!(traj.records.len(), 12);
        for r in &traj.records {
            assert_eq!(r.corrected, correction_window(r.i, 12, 2, 3).unwrap());
            if !r.corrected {
                assert_eq!(r.delta_norm, 0.0);
            } else {
                assert!(r.delta_norm <= r.lambda_t);
            }
        }
    }

    #[test]
    fn diffusion_point_mass_never_moves_under_guidance() {
        let spec = MixtureSpec::point_mass(vec![1.0, 1.0]);
        let det = DetectorSpec::radial(vec![vec![-3.0, 0.0]], vec![0.5], None).unwrap();
        let dec = DecoderSpec::identity(1, 2);
        let sampler = Sampler::Diffusion(make_sigma_schedule(15, 10.0, ScheduleKind::Karras).unwrap());
        let den = MixtureDenoiser(&spec);
        let pipe = Pipeline { predictor: &den, decoder: &dec, detector: &det };
        let traj = run_trajectory(&[4.0, -6.0], &sampler, pipe, Some(&cfg(2.0, 0.5, 2.0)), None).unwrap();
        assert!(traj.records.iter().all(|r| r.delta_norm < 1e-6));
        for a in &traj.final_x {
            assert!((a - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn alpha_without_reference_is_a_config_error() {
        let spec = two_mode();
        let det = DetectorSpec::radial(vec![vec![2.0, 0.0]], vec![1.0], None).unwrap();
        let dec = DecoderSpec::identity(1, 2);
        let sampler = Sampler::Flow(make_time_grid(4).unwrap());
        let field = MixtureVelocity(&spec);
        let pipe = Pipeline { predictor: &field, decoder: &dec, detector: &det };
        let mut c = cfg(1.0, 0.1, 2.0);
        c.alpha = 0.1;
        assert!(matches!(run_trajectory(&[0.0, 0.0], &sampler, pipe, Some(&c), None), Err(Error::Config(_))));
    }

    #[test]
    fn single_steps_match_the_runner() {
        let spec = two_mode();
        let det = DetectorSpec::radial(vec![vec![2.0, 0.0]], vec![1.0], None).unwrap();
        let dec = DecoderSpec::identity(1, 2);
        let grid = make_time_grid(5).unwrap();
        let field = MixtureVelocity(&spec);
        let c = cfg(0.8, 0.1, 2.0);
        let mut state = LatentState::new(vec![0.9, 0.1], 1.0).unwrap();
        for j in 0..5 {
            state = guided_step_flow(&state, &field, &dec, &det, &c, &grid, j, None).unwrap().0;
        }
        let pipe = Pipeline { predictor: &field, decoder: &dec, detector: &det };
        let traj = run_trajectory(&[0.9, 0.1], &Sampler::Flow(grid.clone()), pipe, Some(&c), None).unwrap();
        assert_eq!(state.x, traj.final_x);
        assert_eq!(state.t, 0.0);
        let wrong = LatentState::new(vec![0.9, 0.1], 0.5).unwrap();
        assert!(guided_step_flow(&wrong, &field, &dec, &det, &c, &grid, 0, None).is_err());
    }

    #[test]
    fn step_csv_has_the_documented_header() {
        let mut buf = Vec::new();
        write_step_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), "i,t,L_a,delta_norm,lambda_t,corrected,mask_max,mask_mean");
    }

    proptest! {
        #[test]
        fn displacement_is_bounded_and_scale_free(
            g in prop::collection::vec(-1e3..1e3f64, 1..6),
            lambda in 0.0..50.0f64,
            c in 1e-3..1e3f64,
        ) {
            prop_assume!(norm(&g) > 1e-6);
            let d = displacement(&g, lambda, 1e-8).unwrap();
            let n = norm(&g);
            prop_assert!(norm(&d) <= lambda * (1.0 + 1e-12));
            prop_assert!(norm(&d) >= lambda * n / (n + 1e-8) - 1e-12);
            if lambda > 0.0 {
                let scaled: Vec<f64> = g.iter().map(|v| v * c).collect();
                let e = displacement(&scaled, lambda, 1e-8).unwrap();
                prop_assert!(cosine(&d, &e) >= 1.0 - 1e-9);
            }
        }

        #[test]
        fn schedule_is_monotone(ls in 0.0..100.0f64, frac in 0.0..=1.0f64, p in 1.0..6.0f64, n in 2usize..60) {
            let c = cfg(ls, ls * frac, p);
            let values: Vec<f64> = (0..n).map(|i| lambda_schedule(i, n, &c).unwrap()).collect();
            prop_assert!(values.windows(2).all(|w| w[1] <= w[0]));
            prop_assert_eq!(values[0], c.lambda_start);
            prop_assert_eq!(values[n - 1], c.lambda_end);
        }
    }
}
