//! TOML configuration for `train` and `warmstart`.
//!
//! Every key is optional; missing keys take the default protocol values.
//!
//! ```toml
//! objective = "uoi"        # ce | iou | uoi | combined
//! alpha = 0.7              # UOI weight of the combined loss
//! model = "linear"         # linear | free
//! learning_rate = 0.1
//! iterations = 100
//! seed = 0
//! log_every = 10
//! images = 50
//! height = 32
//! width = 32
//! classes = 5
//! feature_dim = 8
//! bg_fraction = 0.9
//! warm_start = "ce.params" # relative to the config file
//! warmup_iterations = 300  # warmstart: cross-entropy iterations
//! branch_iterations = 300  # warmstart: iterations per branch
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use corpusseg::report::RunReport;
use corpusseg::trainer::{ModelKind, Protocol, TrainConfig};
use corpusseg::Objective;
use serde::Deserialize;

use crate::Usage;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub objective: Option<String>,
    pub alpha: Option<f64>,
    pub model: Option<String>,
    pub learning_rate: Option<f64>,
    pub iterations: Option<usize>,
    pub seed: Option<u64>,
    pub log_every: Option<usize>,
    pub images: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub classes: Option<usize>,
    pub feature_dim: Option<usize>,
    pub bg_fraction: Option<f64>,
    pub warm_start: Option<PathBuf>,
    pub warmup_iterations: Option<usize>,
    pub branch_iterations: Option<usize>,
}

impl ConfigFile {
    /// Reads `path`, or returns the empty configuration when absent.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ConfigFile =
            toml::from_str(&text).map_err(|e| Usage(format!("parsing {}: {e}", path.display())))?;
        if let (Some(ws), Some(dir)) = (&cfg.warm_start, path.parent()) {
            if ws.is_relative() {
                cfg.warm_start = Some(dir.join(ws));
            }
        }
        Ok(cfg)
    }
}

/// A configuration with every default filled in.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub protocol: Protocol,
    pub objective: Objective,
    pub iterations: usize,
    pub log_every: usize,
    pub warm_start: Option<PathBuf>,
}

fn parse_objective(name: &str, alpha: f64) -> anyhow::Result<Objective> {
    Ok(match name {
        "ce" => Objective::CrossEntropy,
        "iou" => Objective::Iou,
        "uoi" => Objective::Uoi,
        "combined" => Objective::Combined { alpha },
        other => bail!("unknown objective {other:?}; expected ce, iou, uoi or combined"),
    })
}

fn parse_model(name: &str) -> anyhow::Result<ModelKind> {
    Ok(match name {
        "linear" => ModelKind::Linear,
        "free" => ModelKind::FreeScores,
        other => bail!("unknown model {other:?}; expected linear or free"),
    })
}

impl Resolved {
    /// `seed` from the command line overrides the file.
    pub fn new(file: &ConfigFile, seed: Option<u64>) -> anyhow::Result<Self> {
        let defaults = Protocol::default();
        let model = parse_model(file.model.as_deref().unwrap_or("linear"))?;
        let alpha = file.alpha.unwrap_or(defaults.alpha);
        let protocol = Protocol {
            seed: seed.or(file.seed).unwrap_or(defaults.seed),
            images: file.images.unwrap_or(defaults.images),
            height: file.height.unwrap_or(defaults.height),
            width: file.width.unwrap_or(defaults.width),
            classes: file.classes.unwrap_or(defaults.classes),
            feature_dim: file.feature_dim.unwrap_or(defaults.feature_dim),
            bg_fraction: file.bg_fraction.unwrap_or(defaults.bg_fraction),
            model,
            learning_rate: file.learning_rate.unwrap_or(model.default_learning_rate()),
            scratch_iterations: file.iterations.unwrap_or(defaults.scratch_iterations),
            warmup_iterations: file.warmup_iterations.unwrap_or(defaults.warmup_iterations),
            branch_iterations: file.branch_iterations.unwrap_or(defaults.branch_iterations),
            alpha,
        };
        Ok(Self {
            objective: parse_objective(file.objective.as_deref().unwrap_or("uoi"), alpha)?,
            iterations: protocol.scratch_iterations,
            log_every: file.log_every.unwrap_or(corpusseg::trainer::DEFAULT_LOG_EVERY),
            warm_start: file.warm_start.clone(),
            protocol,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            log_every: self.log_every,
            ..self.protocol.config(self.objective, self.iterations)
        }
    }

    /// Echoes every effective setting into `report`.
    pub fn echo(&self, report: &mut RunReport) {
        let p = &self.protocol;
        report
            .config("objective", self.objective.name())
            .config("alpha", p.alpha)
            .config("model", p.model.name())
            .config("learning_rate", p.learning_rate)
            .config("iterations", self.iterations)
            .config("log_every", self.log_every)
            .config("images", p.images)
            .config("height", p.height)
            .config("width", p.width)
            .config("classes", p.classes)
            .config("feature_dim", p.feature_dim)
            .config("bg_fraction", p.bg_fraction)
            .config("warmup_iterations", p.warmup_iterations)
            .config("branch_iterations", p.branch_iterations)
            .config(
                "warm_start",
                self.warm_start
                    .as_ref()
                    .map_or("none".to_string(), |w| w.display().to_string()),
            );
    }
}
