//! Paired baseline/guided runs over a seed set, with metric aggregation.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use diamond_core::guidance::write_step_csv;
use diamond_core::metrics::{artifact_pixel_ratio, has_artifact, BatchMetrics};
use diamond_core::{
    mae_split, run_trajectory, ArtifactMask, EvalBatch, Grid, GuidanceConfig, Pipeline, RecReference, Trajectory,
    MASK_THRESHOLD,
};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Ablation, ExperimentConfig, Family, Scenario};
use crate::error::HarnessError;
use crate::presets::LAMBDA_SWEEP;
use crate::seeds::{filter_seed_set, SeedRecord};

pub const BASELINE: &str = "baseline";
pub const THREADS_ENV: &str = "DIAMOND_THREADS";

/// A named guidance setting; `guidance = None` is the unguided baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub guidance: Option<GuidanceConfig>,
}

/// Baseline first, then the guided settings the ablation asks for.
pub fn variants(cfg: &ExperimentConfig) -> Vec<Variant> {
    let g = cfg.guidance;
    let guided = |name: String, guidance: GuidanceConfig| Variant {
        name,
        guidance: Some(guidance),
    };
    let mut out = vec![Variant {
        name: BASELINE.into(),
        guidance: None,
    }];
    match cfg.ablation {
        None => out.push(guided("guided".into(), g)),
        Some(Ablation::NormOnoff) => {
            out.push(guided("norm_on".into(), GuidanceConfig { normalize: true, ..g }));
            out.push(guided("norm_off".into(), GuidanceConfig { normalize: false, ..g }));
        }
        Some(Ablation::AlphaSweep) => {
            for a in &cfg.alphas {
                out.push(guided(format!("alpha_{a}"), GuidanceConfig { alpha: *a, ..g }));
            }
        }
        Some(Ablation::LambdaSweep) => {
            let unit = g.lambda_start / 25.0;
            for row in LAMBDA_SWEEP {
                out.push(guided(
                    format!("lambda_{}", row.name),
                    GuidanceConfig {
                        lambda_start: row.lambda_start * unit,
                        lambda_end: row.lambda_end * unit,
                        power: row.power,
                        ..g
                    },
                ));
            }
        }
    }
    out
}

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub variant: String,
    pub seed: u64,
    pub group: usize,
    /// 1 when any cell is `>= 0.5`.
    pub artifact: u8,
    pub apr: f64,
    pub mask_max: f64,
    pub loss_a: f64,
    pub mae: f64,
    pub mae_a: Option<f64>,
    pub mae_na: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub seed: u64,
    pub variant: String,
    pub x1: Vec<f64>,
    pub final_x: Vec<f64>,
    pub artifact: bool,
    pub trajectory: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedSeed {
    pub seed: u64,
    pub variant: String,
    pub error: String,
}

/// Per-metric values; MAE entries are absent when no run had that region.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricValues {
    pub maf: Option<f64>,
    pub apr_mean: Option<f64>,
    pub mae: Option<f64>,
    pub mae_a: Option<f64>,
    pub mae_na: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: usize,
    pub metrics: BatchMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub name: String,
    pub guidance: Option<GuidanceConfig>,
    /// All completed seeds as one batch.
    pub pooled: Option<BatchMetrics>,
    pub groups: Vec<GroupMetrics>,
    /// Mean and sample standard deviation over the seed groups.
    pub mean: MetricValues,
    pub std: MetricValues,
}

impl VariantSummary {
    pub fn maf(&self) -> Option<f64> {
        self.pooled.map(|p| p.maf)
    }

    pub fn apr_mean(&self) -> Option<f64> {
        self.pooled.map(|p| p.apr_mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub family: Family,
    pub steps: usize,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub seed_records: Option<Vec<SeedRecord>>,
    pub seed_list_hash: String,
    pub completed: Vec<u64>,
    pub failed: Vec<FailedSeed>,
    pub variants: Vec<VariantSummary>,
    pub runs: Vec<RunEntry>,
}

impl ExperimentReport {
    pub fn variant(&self, name: &str) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.name == name)
    }

    pub fn all_completed(&self) -> bool {
        self.failed.is_empty()
    }
}

/// FNV-1a over the decimal seeds joined by commas, as hex.
pub fn seed_list_hash(seeds: &[u64]) -> String {
    let joined = seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
    format!("{:016x}", diamond_core::rng::fnv1a64(joined.as_bytes()))
}

/// Seeds run by the experiment, filtered when the config asks for it.
pub fn select_seeds(
    cfg: &ExperimentConfig,
    scenario: &Scenario,
) -> Result<(Vec<u64>, Option<Vec<SeedRecord>>), HarnessError> {
    if cfg.filter {
        let records = filter_seed_set(scenario, cfg.seeds.start(), cfg.seeds.len(), cfg.max_attempts)?;
        Ok((records.iter().map(|r| r.seed).collect(), Some(records)))
    } else {
        Ok((cfg.seeds.seeds(), None))
    }
}

struct RunOutput {
    variant: String,
    traj: Trajectory,
}

struct SeedOutcome {
    seed: u64,
    group: usize,
    result: Result<Vec<RunOutput>, FailedSeed>,
}

fn run_seed(scenario: &Scenario, variants: &[Variant], seed: u64) -> Result<Vec<RunOutput>, FailedSeed> {
    let predictor = scenario.predictor();
    let pipeline = Pipeline {
        predictor: predictor.as_ref(),
        decoder: &scenario.decoder,
        detector: &scenario.detector,
    };
    let x1 = scenario.initial_noise(seed);
    let fail = |variant: &str, e: diamond_core::Error| FailedSeed {
        seed,
        variant: variant.to_string(),
        error: e.to_string(),
    };
    let mut out = Vec::with_capacity(variants.len());
    let mut reference: Option<RecReference> = None;
    for v in variants {
        let traj = run_trajectory(&x1, &scenario.sampler, pipeline, v.guidance.as_ref(), reference.as_ref())
            .map_err(|e| fail(&v.name, e))?;
        if v.guidance.is_none() && reference.is_none() {
            reference = Some(RecReference::from_baseline(traj.image.clone(), &scenario.detector).map_err(|e| fail(&v.name, e))?);
        }
        out.push(RunOutput {
            variant: v.name.clone(),
            traj,
        });
    }
    Ok(out)
}

fn worker_pool() -> Result<rayon::ThreadPool, HarnessError> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .map_err(|_| HarnessError::Config(format!("{THREADS_ENV} must be a positive integer, got `{s}`")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))
}

/// Runs every seed and variant and writes `report.json`, `metrics.csv` and
/// one `traj_<seed>_<variant>.csv` per run into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport, HarnessError> {
    let scenario = cfg.resolve()?;
    let (seeds, seed_records) = select_seeds(cfg, &scenario)?;
    let variants = variants(cfg);
    let groups = cfg.seed_groups.min(seeds.len());
    info!("{}: {} seeds, {} variants", scenario.id, seeds.len(), variants.len());

    let pool = worker_pool()?;
    let outcomes: Vec<SeedOutcome> = pool.install(|| {
        seeds
            .par_iter()
            .enumerate()
            .map(|(k, &seed)| SeedOutcome {
                seed,
                group: k * groups / seeds.len(),
                result: run_seed(&scenario, &variants, seed),
            })
            .collect()
    });

    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    let mut failed = Vec::new();
    let mut completed = Vec::new();
    // per variant: (group, image, mask, base image, base mask)
    let mut batches: Vec<Vec<(usize, Grid, ArtifactMask, Grid, ArtifactMask)>> = vec![Vec::new(); variants.len()];
    for outcome in outcomes {
        let outputs = match outcome.result {
            Ok(o) => o,
            Err(f) => {
                warn!("seed {} aborted in variant {}: {}", f.seed, f.variant, f.error);
                failed.push(f);
                continue;
            }
        };
        completed.push(outcome.seed);
        let base = &outputs[0].traj;
        for (k, run) in outputs.iter().enumerate() {
            let t = &run.traj;
            let split = mae_split(&t.image, &base.image, &base.mask, MASK_THRESHOLD)?;
            rows.push(MetricRow {
                variant: run.variant.clone(),
                seed: outcome.seed,
                group: outcome.group,
                artifact: u8::from(has_artifact(&t.mask, MASK_THRESHOLD)),
                apr: artifact_pixel_ratio(&t.mask, MASK_THRESHOLD),
                mask_max: t.mask.max(),
                loss_a: diamond_core::artifact_loss(&t.mask),
                mae: split.mae,
                mae_a: split.mae_a,
                mae_na: split.mae_na,
            });
            let file = if cfg.write_trajectories {
                let name = format!("traj_{}_{}.csv", outcome.seed, run.variant);
                let path = out_dir.join(&name);
                let f = File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
                write_step_csv(&t.records, BufWriter::new(f))?;
                Some(name)
            } else {
                None
            };
            runs.push(RunEntry {
                seed: outcome.seed,
                variant: run.variant.clone(),
                x1: t.x1.clone(),
                final_x: t.final_x.clone(),
                artifact: has_artifact(&t.mask, MASK_THRESHOLD),
                trajectory: file,
            });
            batches[k].push((outcome.group, t.image.clone(), t.mask.clone(), base.image.clone(), base.mask.clone()));
        }
    }

    let summaries = variants
        .iter()
        .zip(&batches)
        .map(|(v, batch)| summarize(v, batch, groups))
        .collect::<Result<Vec<_>, _>>()?;

    let report = ExperimentReport {
        scenario: scenario.id.clone(),
        family: cfg.family,
        steps: cfg.steps,
        config: cfg.clone(),
        seed_list_hash: seed_list_hash(&seeds),
        seeds,
        seed_records,
        completed,
        failed,
        variants: summaries,
        runs,
    };
    write_metrics_csv(&rows, &out_dir.join("metrics.csv"))?;
    let path = out_dir.join("report.json");
    let json = serde_json::to_string_pretty(&report).map_err(|e| HarnessError::Report(e.to_string()))?;
    fs::write(&path, json).map_err(|e| HarnessError::io(&path, e))?;
    Ok(report)
}

fn eval(items: &[&(usize, Grid, ArtifactMask, Grid, ArtifactMask)]) -> Result<Option<BatchMetrics>, HarnessError> {
    if items.is_empty() {
        return Ok(None);
    }
    let batch = EvalBatch {
        images: items.iter().map(|i| i.1.clone()).collect(),
        masks: items.iter().map(|i| i.2.clone()).collect(),
        base_images: Some(items.iter().map(|i| i.3.clone()).collect()),
        base_masks: Some(items.iter().map(|i| i.4.clone()).collect()),
    };
    Ok(Some(batch.evaluate(MASK_THRESHOLD)?))
}

fn summarize(
    variant: &Variant,
    batch: &[(usize, Grid, ArtifactMask, Grid, ArtifactMask)],
    groups: usize,
) -> Result<VariantSummary, HarnessError> {
    let pooled = eval(&batch.iter().collect::<Vec<_>>())?;
    let mut per_group = Vec::new();
    for g in 0..groups {
        let members: Vec<_> = batch.iter().filter(|b| b.0 == g).collect();
        if let Some(metrics) = eval(&members)? {
            per_group.push(GroupMetrics { group: g, metrics });
        }
    }
    let column = |f: fn(&BatchMetrics) -> Option<f64>| -> Vec<f64> { per_group.iter().filter_map(|g| f(&g.metrics)).collect() };
    let cols = [
        column(|m| Some(m.maf)),
        column(|m| Some(m.apr_mean)),
        column(|m| m.mae),
        column(|m| m.mae_a),
        column(|m| m.mae_na),
    ];
    let [maf, apr, mae, mae_a, mae_na] = cols.map(|c| mean_std(&c));
    Ok(VariantSummary {
        name: variant.name.clone(),
        guidance: variant.guidance,
        pooled,
        groups: per_group,
        mean: MetricValues {
            maf: maf.0,
            apr_mean: apr.0,
            mae: mae.0,
            mae_a: mae_a.0,
            mae_na: mae_na.0,
        },
        std: MetricValues {
            maf: maf.1,
            apr_mean: apr.1,
            mae: mae.1,
            mae_a: mae_a.1,
            mae_na: mae_na.1,
        },
    })
}

/// Mean and sample (n - 1) standard deviation; the std needs two values.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

fn write_metrics_csv(rows: &[MetricRow], path: &Path) -> Result<(), HarnessError> {
    let f = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    if rows.is_empty() {
        w.write_record(["variant", "seed", "group", "artifact", "apr", "mask_max", "loss_a", "mae", "mae_a", "mae_na"])
            .map_err(|e| HarnessError::Report(e.to_string()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::Report(e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Reads `metrics.csv` back.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::Report(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<MetricRow>, _>>()
        .map_err(|e| HarnessError::Report(format!("{}: {e}", path.display())))
}
