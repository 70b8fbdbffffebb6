//! Experiment configuration: one JSON file plus `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use diamond_core::{
    make_sigma_schedule, make_time_grid, DecoderSpec, DetectorSpec, GuidanceConfig, ModelSpec, Predictor, Sampler,
    ScheduleKind,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::HarnessError;
use crate::presets::{preset_config, scenario_specs, ALPHA_SWEEP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[default]
    Flow,
    Diffusion,
}

/// Either an explicit list or `count` consecutive seeds from `start`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSelection {
    List { list: Vec<u64> },
    Range { start: u64, count: usize },
}

impl Default for SeedSelection {
    fn default() -> Self {
        Self::Range { start: 0, count: 1 }
    }
}

impl SeedSelection {
    pub fn len(&self) -> usize {
        match self {
            Self::List { list } => list.len(),
            Self::Range { count, .. } => *count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn start(&self) -> u64 {
        match self {
            Self::List { list } => list.first().copied().unwrap_or(0),
            Self::Range { start, .. } => *start,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        match self {
            Self::List { list } => list.clone(),
            Self::Range { start, count } => (0..*count as u64).map(|k| start + k).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    LambdaSweep,
    AlphaSweep,
    NormOnoff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scenario id. Keys the noise stream and, for a preset id, supplies any
    /// spec file left unset.
    pub scenario: String,
    pub family: Family,
    pub model: Option<PathBuf>,
    pub decoder: Option<PathBuf>,
    pub detector: Option<PathBuf>,
    pub steps: usize,
    /// Diffusion only.
    pub schedule: ScheduleKind,
    /// Diffusion only; also the scale of the initial noise.
    pub sigma_max: f64,
    pub guidance: GuidanceConfig,
    pub seeds: SeedSelection,
    /// Replace the seed list by the first seeds whose baseline shows an
    /// artifact, searching from the selection's start.
    pub filter: bool,
    pub max_attempts: usize,
    /// Number of contiguous seed groups for mean and std.
    pub seed_groups: usize,
    pub ablation: Option<Ablation>,
    /// Strengths for `alpha_sweep`.
    pub alphas: Vec<f64>,
    pub write_trajectories: bool,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: String::new(),
            family: Family::Flow,
            model: None,
            decoder: None,
            detector: None,
            steps: 10,
            schedule: ScheduleKind::Karras,
            sigma_max: 20.0,
            guidance: GuidanceConfig::default(),
            seeds: SeedSelection::default(),
            filter: false,
            max_attempts: crate::seeds::MAX_ATTEMPTS,
            seed_groups: 4,
            ablation: None,
            alphas: ALPHA_SWEEP.to_vec(),
            write_trajectories: true,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.scenario.is_empty() {
            return bad("scenario id is empty".into());
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.seed_groups == 0 {
            return bad("seed_groups must be at least 1".into());
        }
        if self.max_attempts == 0 || self.max_attempts > crate::seeds::MAX_ATTEMPTS {
            return bad(format!("max_attempts must be in 1..={}", crate::seeds::MAX_ATTEMPTS));
        }
        if self.family == Family::Diffusion && !(self.sigma_max > 0.0 && self.sigma_max.is_finite()) {
            return bad(format!("sigma_max must be positive, got {}", self.sigma_max));
        }
        if self.ablation == Some(Ablation::AlphaSweep) && self.alphas.is_empty() {
            return bad("alpha_sweep needs at least one alpha".into());
        }
        self.guidance.validate(self.steps).map_err(HarnessError::Core)
    }

    /// Reads a config file; spec paths inside it are taken relative to the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let value = read_json_value(path)?;
        let mut cfg = Self::from_value(value)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.model, &mut cfg.decoder, &mut cfg.detector].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Builds a config from JSON, starting from the preset named by
    /// `scenario` when there is one.
    pub fn from_value(value: Value) -> Result<Self, HarnessError> {
        let scenario = value.get("scenario").and_then(Value::as_str).unwrap_or_default();
        let mut merged = match preset_config(scenario) {
            Some(p) => serde_json::to_value(p).expect("config serializes"),
            None => Value::Object(Default::default()),
        };
        merge(&mut merged, value);
        serde_json::from_value(merged).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Applies `key=value` overrides (dotted keys reach nested fields; the
    /// value is parsed as JSON and falls back to a plain string).
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, HarnessError> {
        let mut value = serde_json::to_value(self).expect("config serializes");
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("override `{item}` is not key=value")))?;
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut value, key, parsed)?;
        }
        serde_json::from_value(value).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Loads specs and the discretization.
    pub fn resolve(&self) -> Result<Scenario, HarnessError> {
        self.validate()?;
        let preset = scenario_specs(&self.scenario);
        let pick = |path: &Option<PathBuf>, what: &str| -> Result<Option<PathBuf>, HarnessError> {
            match (path, &preset) {
                (Some(p), _) => Ok(Some(p.clone())),
                (None, Some(_)) => Ok(None),
                (None, None) => Err(HarnessError::Config(format!(
                    "scenario `{}` is not a preset, so `{what}` must name a file",
                    self.scenario
                ))),
            }
        };
        let model = match pick(&self.model, "model")? {
            Some(p) => read_json(&p)?,
            None => preset.as_ref().expect("checked").model.clone(),
        };
        let decoder = match pick(&self.decoder, "decoder")? {
            Some(p) => read_json(&p)?,
            None => preset.as_ref().expect("checked").decoder.clone(),
        };
        let detector = match pick(&self.detector, "detector")? {
            Some(p) => read_json(&p)?,
            None => preset.as_ref().expect("checked").detector.clone(),
        };
        let sampler = match self.family {
            Family::Flow => Sampler::Flow(make_time_grid(self.steps)?),
            Family::Diffusion => Sampler::Diffusion(make_sigma_schedule(self.steps, self.sigma_max, self.schedule)?),
        };
        let noise_scale = match self.family {
            Family::Flow => 1.0,
            Family::Diffusion => self.sigma_max,
        };
        Scenario::new(self.scenario.clone(), sampler, model, decoder, detector, noise_scale)
    }
}

/// Everything needed to run one trajectory of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub sampler: Sampler,
    pub model: ModelSpec,
    pub decoder: DecoderSpec,
    pub detector: DetectorSpec,
    pub noise_scale: f64,
}

impl Scenario {
    pub fn new(
        id: String,
        sampler: Sampler,
        model: ModelSpec,
        decoder: DecoderSpec,
        detector: DetectorSpec,
        noise_scale: f64,
    ) -> Result<Self, HarnessError> {
        model.validate()?;
        decoder.validate()?;
        detector.validate()?;
        if decoder.latent_dim() != model.dim() {
            return Err(HarnessError::Config(format!(
                "decoder expects latent dimension {}, model has {}",
                decoder.latent_dim(),
                model.dim()
            )));
        }
        if matches!(sampler, Sampler::Diffusion(_)) && model.denoiser().is_none() {
            return Err(HarnessError::Config("diffusion sampling needs an analytic mixture model".into()));
        }
        Ok(Self {
            id,
            sampler,
            model,
            decoder,
            detector,
            noise_scale,
        })
    }

    pub fn predictor(&self) -> Box<dyn Predictor + '_> {
        match &self.sampler {
            Sampler::Flow(_) => self.model.velocity_field(),
            Sampler::Diffusion(_) => Box::new(self.model.denoiser().expect("checked in Scenario::new")),
        }
    }

    pub fn initial_noise(&self, seed: u64) -> Vec<f64> {
        diamond_core::rng::initial_noise(&self.id, seed, self.model.dim(), self.noise_scale)
    }
}

pub fn read_json_value(path: &Path) -> Result<Value, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    serde_json::from_value(read_json_value(path)?).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn set_path(value: &mut Value, key: &str, new: Value) -> Result<(), HarnessError> {
    let mut cur = value;
    let parts: Vec<&str> = key.split('.').collect();
    for (n, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| HarnessError::Config(format!("`{key}`: `{part}` is not inside an object")))?;
        if n + 1 == parts.len() {
            obj.insert(part.to_string(), new);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(HarnessError::Config("empty override key".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = preset_config("two-mode-2d").unwrap();
        let cfg = cfg
            .with_overrides(&["guidance.lambda_start=3.5".into(), "steps=4".into(), "scenario=two-mode-2d".into()])
            .unwrap();
        assert_eq!(cfg.guidance.lambda_start, 3.5);
        assert_eq!(cfg.steps, 4);
        assert!(cfg.with_overrides(&["steps".into()]).is_err());
        assert!(cfg.with_overrides(&["steps=\"x\"".into()]).is_err());
    }

    #[test]
    fn json_starts_from_the_named_preset() {
        let cfg = ExperimentConfig::from_value(serde_json::json!({
            "scenario": "two-mode-2d-diff",
            "guidance": {"alpha": 0.1},
            "seeds": {"list": [3, 5]}
        }))
        .unwrap();
        assert_eq!(cfg.family, Family::Diffusion);
        assert_eq!(cfg.guidance.alpha, 0.1);
        assert_eq!(cfg.guidance.lambda_start, preset_config("two-mode-2d-diff").unwrap().guidance.lambda_start);
        assert_eq!(cfg.seeds.seeds(), vec![3, 5]);
        assert!(ExperimentConfig::from_value(serde_json::json!({"scenario": "x", "bogus": 1})).is_err());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let good = preset_config("grid-16").unwrap();
        good.validate().unwrap();
        for bad in [
            ExperimentConfig { steps: 0, ..good.clone() },
            ExperimentConfig { seeds: SeedSelection::List { list: vec![] }, ..good.clone() },
            ExperimentConfig { max_attempts: 1001, ..good.clone() },
            ExperimentConfig { scenario: String::new(), ..good.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
        let custom = ExperimentConfig {
            scenario: "custom".into(),
            ..good
        };
        assert!(matches!(custom.resolve(), Err(HarnessError::Config(_))));
    }

    #[test]
    fn spec_files_are_loaded_relative_to_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let specs = scenario_specs("two-mode-2d").unwrap();
        fs::write(dir.path().join("m.json"), serde_json::to_string(&specs.model).unwrap()).unwrap();
        fs::write(dir.path().join("d.json"), serde_json::to_string(&specs.decoder).unwrap()).unwrap();
        fs::write(dir.path().join("a.json"), serde_json::to_string(&specs.detector).unwrap()).unwrap();
        let cfg_path = dir.path().join("exp.json");
        fs::write(
            &cfg_path,
            r#"{"scenario": "mine", "model": "m.json", "decoder": "d.json", "detector": "a.json", "steps": 3}"#,
        )
        .unwrap();
        let cfg = ExperimentConfig::from_file(&cfg_path).unwrap();
        let scenario = cfg.resolve().unwrap();
        assert_eq!(scenario.model, specs.model);
        assert_eq!(scenario.sampler.steps(), 3);

        let missing = ExperimentConfig {
            model: Some(dir.path().join("absent.json")),
            ..cfg
        };
        assert!(matches!(missing.resolve(), Err(HarnessError::Io { .. })));
    }
}
