//! Full-batch gradient descent over the soft objectives.
//!
//! Two models map pixels to scores: free per-pixel scores, or an affine map
//! `z = x W + b` of the pixel features. Every step evaluates the objective
//! on the whole corpus at once, so corpus-level objectives are exact.
//! Gains (the IOU objective) are maximized by descending their negation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::format::{parse_err, parse_fields, Lines};
use crate::losses::{evaluate, Objective, DEFAULT_UOI_WEIGHT};
use crate::metrics::{confusion_counts, mean_iou};
use crate::report::fmt_sig;
use crate::seg::{softmax_slice, HardSegmentation, SoftSegmentation};
use crate::synth::SyntheticDataset;

/// Scale of the seeded standard-normal initialization.
pub const INIT_SCALE: f64 = 0.01;
pub const DEFAULT_LOG_EVERY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    FreeScores,
    /// Affine map from pixel features to class scores.
    Linear,
}

impl ModelKind {
    pub fn default_learning_rate(&self) -> f64 {
        match self {
            ModelKind::FreeScores => 1.0,
            ModelKind::Linear => 0.1,
        }
    }

    pub fn param_count(&self, data: &SyntheticDataset) -> usize {
        match self {
            ModelKind::FreeScores => data.pixels() * data.classes,
            ModelKind::Linear => (data.feature_dim + 1) * data.classes,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::FreeScores => "free",
            ModelKind::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    pub model: ModelKind,
    pub learning_rate: f64,
    pub iterations: usize,
    /// Seeds the random initialization; ignored when warm-starting.
    pub seed: u64,
    pub log_every: usize,
}

impl TrainConfig {
    pub fn new(objective: Objective, model: ModelKind, iterations: usize, seed: u64) -> Self {
        Self {
            objective,
            model,
            learning_rate: model.default_learning_rate(),
            iterations,
            seed,
            log_every: DEFAULT_LOG_EVERY,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return invalid("iterations must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.log_every == 0 {
            return invalid("log interval must be at least 1");
        }
        if let Objective::Combined { alpha } = self.objective {
            if !(0.0..=1.0).contains(&alpha) {
                return invalid(format!("combined-loss weight {alpha} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Flat parameter vector. Linear models store `W` (`D x K`, row-major)
/// followed by the bias `b` (`K`); free scores store `pixels x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub values: Vec<f64>,
}

impl Params {
    /// `PARAMS n` followed by one value per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("PARAMS {}\n", self.values.len());
        for v in &self.values {
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Params> {
        let mut lines = Lines::new(text);
        let (no, header) = lines.next_line()?;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        if tokens.len() != 2 || tokens[0] != "PARAMS" {
            return Err(parse_err(no, "expected header PARAMS n"));
        }
        let n: usize = tokens[1].parse().map_err(|_| parse_err(no, "bad parameter count"))?;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let (no, line) = lines.next_line()?;
            let v = parse_fields::<f64>(no, line, 1)?[0];
            if !v.is_finite() {
                return Err(parse_err(no, "parameter is not finite"));
            }
            values.push(v);
        }
        lines.expect_end()?;
        Ok(Params { values })
    }
}

/// Seeded standard normal scaled by [`INIT_SCALE`].
pub fn init_params(data: &SyntheticDataset, model: ModelKind, seed: u64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..model.param_count(data))
        .map(|_| INIT_SCALE * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    Params { values }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub iteration: usize,
    /// The minimized quantity: the loss, or the negated gain.
    pub loss: f64,
    /// Corpus-level mean IOU of the argmax prediction.
    pub mean_iou: f64,
    /// Fraction of pixels predicted as background.
    pub bg_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub entries: Vec<HistoryEntry>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&HistoryEntry> {
        self.entries.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,meanIOU,bgFraction\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.iteration,
                fmt_sig(e.loss),
                fmt_sig(e.mean_iou),
                fmt_sig(e.bg_fraction)
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: Params,
    pub history: TrainHistory,
}

/// Corpus tensors shared by every iteration.
struct Corpus {
    features: Vec<f64>,
    gt: Vec<f64>,
    gts: Vec<HardSegmentation>,
    classes: usize,
    dim: usize,
}

impl Corpus {
    fn new(data: &SyntheticDataset) -> Self {
        let gts = data.ground_truths();
        let mut gt = Vec::with_capacity(data.pixels() * data.classes);
        for g in &gts {
            gt.extend_from_slice(SoftSegmentation::one_hot(g).as_slice());
        }
        Self {
            features: data.images.iter().flat_map(|im| im.features.iter().copied()).collect(),
            gt,
            gts,
            classes: data.classes,
            dim: data.feature_dim,
        }
    }

    fn scores(&self, model: ModelKind, params: &[f64]) -> Vec<f64> {
        match model {
            ModelKind::FreeScores => params.to_vec(),
            ModelKind::Linear => {
                let (k, d) = (self.classes, self.dim);
                let (w, b) = params.split_at(d * k);
                let mut z = Vec::with_capacity(self.gt.len());
                for x in self.features.chunks_exact(d) {
                    for c in 0..k {
                        let mut s = b[c];
                        for (j, xj) in x.iter().enumerate() {
                            s += xj * w[j * k + c];
                        }
                        z.push(s);
                    }
                }
                z
            }
        }
    }

    /// Chain `dL/dz` back to the parameters.
    fn param_grad(&self, model: ModelKind, grad_z: Vec<f64>) -> Vec<f64> {
        match model {
            ModelKind::FreeScores => grad_z,
            ModelKind::Linear => {
                let (k, d) = (self.classes, self.dim);
                let mut g = vec![0.0; (d + 1) * k];
                for (x, gz) in self.features.chunks_exact(d).zip(grad_z.chunks_exact(k)) {
                    for (j, xj) in x.iter().enumerate() {
                        for c in 0..k {
                            g[j * k + c] += xj * gz[c];
                        }
                    }
                    for c in 0..k {
                        g[d * k + c] += gz[c];
                    }
                }
                g
            }
        }
    }

    fn predictions(&self, probs: &[f64]) -> Vec<HardSegmentation> {
        let mut offset = 0;
        self.gts
            .iter()
            .map(|g| {
                let len = g.pixels() * self.classes;
                let soft = SoftSegmentation::from_raw(g.shape(), probs[offset..offset + len].to_vec());
                offset += len;
                soft.argmax()
            })
            .collect()
    }

    fn log_entry(&self, iteration: usize, loss: f64, probs: &[f64]) -> Result<HistoryEntry> {
        let preds = self.predictions(probs);
        let counts = confusion_counts(&preds, &self.gts)?;
        let total: usize = preds.iter().map(|p| p.pixels()).sum();
        let bg: usize = preds.iter().map(|p| p.count(0)).sum();
        Ok(HistoryEntry {
            iteration,
            loss,
            mean_iou: mean_iou(&counts).unwrap_or(0.0),
            bg_fraction: bg as f64 / total as f64,
        })
    }
}

/// Argmax predictions of a trained model, one per image.
pub fn predict(data: &SyntheticDataset, model: ModelKind, params: &Params) -> Result<Vec<HardSegmentation>> {
    if params.values.len() != model.param_count(data) {
        return invalid("parameter count does not match model and data");
    }
    let corpus = Corpus::new(data);
    let probs = softmax_slice(&corpus.scores(model, &params.values), corpus.classes);
    Ok(corpus.predictions(&probs))
}

/// Runs `cfg.iterations` full-batch steps from `warm_start` or a seeded
/// random init, logging every `cfg.log_every` iterations and after the
/// final step.
pub fn train(data: &SyntheticDataset, cfg: &TrainConfig, warm_start: Option<&Params>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n_params = cfg.model.param_count(data);
    let mut params = match warm_start {
        Some(p) if p.values.len() != n_params => {
            return invalid(format!(
                "checkpoint has {} parameters, model needs {n_params}",
                p.values.len()
            ))
        }
        Some(p) => p.clone(),
        None => init_params(data, cfg.model, cfg.seed),
    };
    let corpus = Corpus::new(data);
    let sign = if cfg.objective.is_gain() { -1.0 } else { 1.0 };
    let mut history = TrainHistory::default();

    for iteration in 0..=cfg.iterations {
        let scores = corpus.scores(cfg.model, &params.values);
        let probs = softmax_slice(&scores, corpus.classes);
        let last = iteration == cfg.iterations;
        let (value, grad_z) = evaluate(cfg.objective, &probs, &corpus.gt, corpus.classes, !last)?;
        let loss = sign * value;
        if iteration % cfg.log_every == 0 || last || !loss.is_finite() {
            history.entries.push(corpus.log_entry(iteration, loss, &probs)?);
        }
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iteration,
                loss,
                history: history.entries,
            });
        }
        if last {
            break;
        }
        let grad = corpus.param_grad(cfg.model, grad_z);
        for (p, g) in params.values.iter_mut().zip(grad) {
            *p -= cfg.learning_rate * sign * g;
        }
    }
    Ok(TrainOutcome { params, history })
}

/// Defaults of the desk-scale experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Protocol {
    pub seed: u64,
    pub images: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub feature_dim: usize,
    pub bg_fraction: f64,
    pub model: ModelKind,
    pub learning_rate: f64,
    /// Iterations of the from-scratch IOU-vs-UOI comparison.
    pub scratch_iterations: usize,
    /// Cross-entropy iterations producing the shared checkpoint.
    pub warmup_iterations: usize,
    /// Iterations of each branch continued from the checkpoint.
    pub branch_iterations: usize,
    pub alpha: f64,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            seed: 0,
            images: 50,
            height: 32,
            width: 32,
            classes: 5,
            feature_dim: 8,
            bg_fraction: 0.9,
            model: ModelKind::Linear,
            learning_rate: 0.1,
            scratch_iterations: 100,
            warmup_iterations: 300,
            branch_iterations: 300,
            alpha: DEFAULT_UOI_WEIGHT,
        }
    }
}

impl Protocol {
    pub fn dataset(&self) -> Result<SyntheticDataset> {
        crate::synth::gen_synthetic(
            self.seed,
            self.images,
            self.height,
            self.width,
            self.classes,
            self.feature_dim,
            self.bg_fraction,
        )
    }

    pub fn config(&self, objective: Objective, iterations: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            ..TrainConfig::new(objective, self.model, iterations, self.seed)
        }
    }
}

/// IOU-gain ascent and UOI descent from the same random initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct ScratchComparison {
    pub iou: TrainOutcome,
    pub uoi: TrainOutcome,
}

pub fn scratch_comparison(data: &SyntheticDataset, protocol: &Protocol) -> Result<ScratchComparison> {
    let iou = train(
        data,
        &protocol.config(Objective::Iou, protocol.scratch_iterations),
        None,
    )?;
    let uoi = train(
        data,
        &protocol.config(Objective::Uoi, protocol.scratch_iterations),
        None,
    )?;
    Ok(ScratchComparison { iou, uoi })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub objective: Objective,
    pub start: Params,
    pub outcome: TrainOutcome,
}

impl Branch {
    pub fn final_mean_iou(&self) -> f64 {
        self.outcome.history.last().map_or(0.0, |e| e.mean_iou)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStartReport {
    pub checkpoint: Params,
    /// Cross-entropy, UOI and the combined loss, in that order.
    pub branches: Vec<Branch>,
}

impl WarmStartReport {
    pub fn branch(&self, objective: Objective) -> Option<&Branch> {
        self.branches.iter().find(|b| b.objective == objective)
    }
}

/// Continues training from `checkpoint` under cross-entropy, UOI and
/// `alpha * UOI + (1 - alpha) * CE` for `protocol.branch_iterations` each.
pub fn warm_start_protocol(
    data: &SyntheticDataset,
    checkpoint: &Params,
    protocol: &Protocol,
) -> Result<WarmStartReport> {
    let objectives = [
        Objective::CrossEntropy,
        Objective::Uoi,
        Objective::Combined { alpha: protocol.alpha },
    ];
    let branches = objectives
        .into_iter()
        .map(|objective| {
            let cfg = protocol.config(objective, protocol.branch_iterations);
            let start = checkpoint.clone();
            let outcome = train(data, &cfg, Some(&start))?;
            Ok(Branch {
                objective,
                start,
                outcome,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WarmStartReport {
        checkpoint: checkpoint.clone(),
        branches,
    })
}

/// Cross-entropy run producing the warm-start checkpoint.
pub fn ce_checkpoint(data: &SyntheticDataset, protocol: &Protocol) -> Result<TrainOutcome> {
    train(
        data,
        &protocol.config(Objective::CrossEntropy, protocol.warmup_iterations),
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gen_synthetic;

    fn tiny() -> SyntheticDataset {
        gen_synthetic(5, 1, 8, 8, 3, 3, 0.6).unwrap()
    }

    #[test]
    fn free_score_ce_fits_tiny_corpus() {
        let data = tiny();
        let cfg = TrainConfig::new(Objective::CrossEntropy, ModelKind::FreeScores, 500, 0);
        let out = train(&data, &cfg, None).unwrap();
        assert!(out.history.last().unwrap().mean_iou >= 0.99);
    }

    #[test]
    fn history_is_logged_every_interval_and_at_end() {
        let data = tiny();
        let cfg = TrainConfig::new(Objective::Uoi, ModelKind::Linear, 25, 0);
        let out = train(&data, &cfg, None).unwrap();
        let its: Vec<usize> = out.history.entries.iter().map(|e| e.iteration).collect();
        assert_eq!(its, vec![0, 10, 20, 25]);
        assert!(out
            .history
            .to_csv()
            .starts_with("iteration,loss,meanIOU,bgFraction\n0,"));
    }

    #[test]
    fn gain_is_logged_negated() {
        let data = tiny();
        let cfg = TrainConfig::new(Objective::Iou, ModelKind::Linear, 1, 0);
        let out = train(&data, &cfg, None).unwrap();
        assert!(out.history.entries[0].loss < 0.0);
    }

    #[test]
    fn divergence_reports_history() {
        let data = tiny();
        let mut cfg = TrainConfig::new(Objective::CrossEntropy, ModelKind::Linear, 50, 0);
        cfg.learning_rate = f64::MAX;
        match train(&data, &cfg, None) {
            Err(Error::Divergence { history, .. }) => assert!(!history.is_empty()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_configs() {
        let data = tiny();
        let mut cfg = TrainConfig::new(Objective::CrossEntropy, ModelKind::Linear, 0, 0);
        assert!(train(&data, &cfg, None).is_err());
        cfg.iterations = 1;
        cfg.objective = Objective::Combined { alpha: 2.0 };
        assert!(train(&data, &cfg, None).is_err());
        cfg.objective = Objective::Uoi;
        assert!(train(&data, &cfg, Some(&Params { values: vec![0.0; 3] })).is_err());
    }

    #[test]
    fn params_text_round_trip() {
        let p = Params {
            values: vec![0.5, -1.25e-7, 3.0],
        };
        assert_eq!(Params::parse(&p.to_text()).unwrap(), p);
        assert!(Params::parse("PARAMS 2\n1.0\n").is_err());
        assert!(Params::parse("PARAMS 1\nNaN\n").is_err());
    }
}
