//! Corpus-level hard-count metrics.
//!
//! Counts are pooled over the whole corpus before any ratio is taken. For
//! class `k`, with `GT = TP + FN`:
//!
//! ```text
//! IOU_k = TP / (TP + FP + FN) = (GT - FN) / (GT + FP)
//! UOI_k = 1 / IOU_k          = (GT + FP) / (GT - FN)
//! ```
//!
//! Counts are stored as `f64` so the same code serves integer corpus counts
//! and the continuous relaxation used by the gradient analysis.

use std::collections::BTreeMap;

use crate::error::{invalid, Error, Result};
use crate::report::fmt_sig;
use crate::seg::HardSegmentation;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionCounts {
    tp: Vec<f64>,
    fp: Vec<f64>,
    fn_: Vec<f64>,
}

impl ConfusionCounts {
    pub fn zero(classes: usize) -> Self {
        Self {
            tp: vec![0.0; classes],
            fp: vec![0.0; classes],
            fn_: vec![0.0; classes],
        }
    }

    pub fn new(tp: Vec<f64>, fp: Vec<f64>, fn_: Vec<f64>) -> Result<Self> {
        if tp.len() != fp.len() || tp.len() != fn_.len() {
            return invalid("TP, FP and FN must have one entry per class");
        }
        if tp.iter().chain(&fp).chain(&fn_).any(|c| !c.is_finite() || *c < 0.0) {
            return invalid("counts must be finite and nonnegative");
        }
        Ok(Self { tp, fp, fn_ })
    }

    /// Builds counts from ground-truth totals and the two mistake kinds.
    pub fn from_mistakes(gt: &[f64], fn_: &[f64], fp: &[f64]) -> Result<Self> {
        if gt.len() != fn_.len() {
            return invalid("GT and FN must have one entry per class");
        }
        if gt.iter().zip(fn_).any(|(g, f)| f > g) {
            return invalid("FN cannot exceed GT");
        }
        let tp = gt.iter().zip(fn_).map(|(g, f)| g - f).collect();
        Self::new(tp, fp.to_vec(), fn_.to_vec())
    }

    pub fn classes(&self) -> usize {
        self.tp.len()
    }

    pub fn tp(&self, k: usize) -> f64 {
        self.tp[k]
    }

    pub fn fp(&self, k: usize) -> f64 {
        self.fp[k]
    }

    pub fn fn_(&self, k: usize) -> f64 {
        self.fn_[k]
    }

    /// Ground-truth pixel count, `TP + FN`.
    pub fn gt(&self, k: usize) -> f64 {
        self.tp[k] + self.fn_[k]
    }

    /// Total predicted pixels, `sum_k TP + FP`.
    pub fn total_predicted(&self) -> f64 {
        self.tp.iter().zip(&self.fp).map(|(t, f)| t + f).sum()
    }

    /// Adds the counts of one prediction/ground-truth pair.
    pub fn add_image(&mut self, pred: &HardSegmentation, gt: &HardSegmentation) -> Result<()> {
        if pred.shape() != gt.shape() {
            return invalid(format!(
                "prediction {}x{}x{} does not match ground truth {}x{}x{}",
                pred.height(),
                pred.width(),
                pred.classes(),
                gt.height(),
                gt.width(),
                gt.classes()
            ));
        }
        if pred.classes() != self.classes() {
            return invalid("class count differs from the accumulator");
        }
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if p == g {
                self.tp[p as usize] += 1.0;
            } else {
                self.fp[p as usize] += 1.0;
                self.fn_[g as usize] += 1.0;
            }
        }
        Ok(())
    }

    pub fn merge(&self, other: &ConfusionCounts) -> Result<ConfusionCounts> {
        if self.classes() != other.classes() {
            return invalid("cannot merge counts over different class counts");
        }
        let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        Ok(ConfusionCounts {
            tp: add(&self.tp, &other.tp),
            fp: add(&self.fp, &other.fp),
            fn_: add(&self.fn_, &other.fn_),
        })
    }
}

/// Per-class counts summed over every image of a corpus.
pub fn confusion_counts(preds: &[HardSegmentation], gts: &[HardSegmentation]) -> Result<ConfusionCounts> {
    if preds.len() != gts.len() {
        return invalid(format!("{} predictions for {} ground truths", preds.len(), gts.len()));
    }
    let Some(first) = gts.first() else {
        return invalid("empty corpus");
    };
    let mut counts = ConfusionCounts::zero(first.classes());
    for (i, (p, g)) in preds.iter().zip(gts).enumerate() {
        counts
            .add_image(p, g)
            .map_err(|e| Error::InvalidInput(format!("image {i}: {e}")))?;
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exclusion {
    /// Neither predicted nor present in the ground truth.
    Absent,
    /// Present but never correctly predicted, so UOI is unbounded.
    Degenerate,
}

/// Per-class metric values with the classes that were left out.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassScores {
    pub values: BTreeMap<usize, f64>,
    pub excluded: BTreeMap<usize, Exclusion>,
}

impl ClassScores {
    /// Mean over included classes.
    pub fn mean(&self) -> Option<f64> {
        if self.values.is_empty() {
            None
        } else {
            Some(self.values.values().sum::<f64>() / self.values.len() as f64)
        }
    }
}

/// `TP / (TP + FP + FN)`.
pub fn iou_from_counts(tp: f64, fp: f64, fn_: f64) -> f64 {
    tp / (tp + fp + fn_)
}

/// `(GT - FN) / (GT + FP)`.
pub fn iou_from_mistakes(gt: f64, fn_: f64, fp: f64) -> f64 {
    (gt - fn_) / (gt + fp)
}

/// `(GT + FP) / (GT - FN)`.
pub fn uoi_from_mistakes(gt: f64, fn_: f64, fp: f64) -> f64 {
    (gt + fp) / (gt - fn_)
}

pub fn class_iou(c: &ConfusionCounts) -> ClassScores {
    let mut scores = ClassScores::default();
    for k in 0..c.classes() {
        if c.gt(k) == 0.0 && c.fp(k) == 0.0 {
            scores.excluded.insert(k, Exclusion::Absent);
        } else {
            scores.values.insert(k, iou_from_counts(c.tp(k), c.fp(k), c.fn_(k)));
        }
    }
    scores
}

pub fn class_uoi(c: &ConfusionCounts) -> ClassScores {
    let mut scores = ClassScores::default();
    for k in 0..c.classes() {
        if c.gt(k) == 0.0 && c.fp(k) == 0.0 {
            scores.excluded.insert(k, Exclusion::Absent);
        } else if c.gt(k) - c.fn_(k) <= 0.0 {
            scores.excluded.insert(k, Exclusion::Degenerate);
        } else {
            scores.values.insert(k, uoi_from_mistakes(c.gt(k), c.fn_(k), c.fp(k)));
        }
    }
    scores
}

pub fn mean_iou(c: &ConfusionCounts) -> Option<f64> {
    class_iou(c).mean()
}

pub fn mean_uoi(c: &ConfusionCounts) -> Option<f64> {
    class_uoi(c).mean()
}

/// Partial derivatives of a per-class metric with respect to the two
/// mistake counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MistakeGradient {
    pub d_fp: f64,
    pub d_fn: f64,
}

/// `dIOU/dFP = -(GT - FN) / (GT + FP)^2`, `dIOU/dFN = -1 / (GT + FP)`.
pub fn iou_grad_fpfn(gt: f64, fn_: f64, fp: f64) -> Result<MistakeGradient> {
    let denom = gt + fp;
    if denom <= 0.0 {
        return Err(Error::DegenerateInput("IOU gradient needs GT + FP > 0".into()));
    }
    Ok(MistakeGradient {
        d_fp: -(gt - fn_) / (denom * denom),
        d_fn: -1.0 / denom,
    })
}

/// `dUOI/dFP = 1 / (GT - FN)`, `dUOI/dFN = (GT + FP) / (GT - FN)^2`.
pub fn uoi_grad_fpfn(gt: f64, fn_: f64, fp: f64) -> Result<MistakeGradient> {
    let tp = gt - fn_;
    if tp <= 0.0 {
        return Err(Error::DegenerateInput("UOI gradient needs GT - FN > 0".into()));
    }
    Ok(MistakeGradient {
        d_fp: 1.0 / tp,
        d_fn: (gt + fp) / (tp * tp),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricGradients {
    pub d_iou_d_fp: f64,
    pub d_iou_d_fn: f64,
    pub d_uoi_d_fp: f64,
    pub d_uoi_d_fn: f64,
}

/// Gradients for every class; `None` where `GT - FN = 0`.
pub fn metric_gradients(c: &ConfusionCounts) -> Vec<Option<MetricGradients>> {
    (0..c.classes())
        .map(|k| {
            let iou = iou_grad_fpfn(c.gt(k), c.fn_(k), c.fp(k)).ok()?;
            let uoi = uoi_grad_fpfn(c.gt(k), c.fn_(k), c.fp(k)).ok()?;
            Some(MetricGradients {
                d_iou_d_fp: iou.d_fp,
                d_iou_d_fn: iou.d_fn,
                d_uoi_d_fp: uoi.d_fp,
                d_uoi_d_fn: uoi.d_fn,
            })
        })
        .collect()
}

/// `sum_k IOU_k - 1 / sum_k (1 / IOU_k)`, nonnegative for any vector of
/// per-class IOUs in `(0, 1]` and zero only for a single class.
pub fn lower_bound_gap(per_class_iou: &[f64]) -> Result<f64> {
    if per_class_iou.is_empty() {
        return invalid("need at least one class");
    }
    if let Some(bad) = per_class_iou.iter().find(|x| !(**x > 0.0 && **x <= 1.0)) {
        return invalid(format!("per-class IOU {bad} outside (0, 1]"));
    }
    let sum: f64 = per_class_iou.iter().sum();
    let uoi_sum: f64 = per_class_iou.iter().map(|x| 1.0 / x).sum();
    Ok(sum - 1.0 / uoi_sum)
}

/// One grid point of [`gradient_sweep`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub fp: f64,
    pub fn_: f64,
    pub iou: f64,
    pub uoi: f64,
    pub grads: MetricGradients,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub gt: f64,
    pub fp_values: Vec<f64>,
    pub fn_values: Vec<f64>,
    /// FN-major: all FP values for the first FN, then the next FN.
    pub rows: Vec<SweepRow>,
    pub warnings: Vec<String>,
}

pub const SWEEP_HEADER: &str = "FP,FN,IOU,UOI,dIOU_dFP,dIOU_dFN,dUOI_dFP,dUOI_dFN";

fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|j| lo + (hi - lo) * j as f64 / (steps - 1) as f64)
        .collect()
}

/// Evaluates both metrics and their four mistake gradients on a
/// `steps x steps` grid of FP and FN values for a class with `gt` pixels.
/// FN values with `GT - FN <= 0` are dropped with a warning.
pub fn gradient_sweep(gt: f64, fp_range: (f64, f64), fn_range: (f64, f64), steps: usize) -> Result<SweepTable> {
    if !(gt > 0.0 && gt.is_finite()) {
        return invalid(format!("GT must be positive, got {gt}"));
    }
    if steps < 2 {
        return invalid("sweep needs at least 2 steps per axis");
    }
    for (name, (lo, hi)) in [("FP", fp_range), ("FN", fn_range)] {
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return invalid(format!("{name} range [{lo}, {hi}] must satisfy 0 <= lo <= hi"));
        }
    }
    let fp_values = linspace(fp_range.0, fp_range.1, steps);
    let all_fn = linspace(fn_range.0, fn_range.1, steps);
    let fn_values: Vec<f64> = all_fn.iter().copied().filter(|&f| gt - f > 0.0).collect();
    let mut warnings = Vec::new();
    if fn_values.len() < all_fn.len() {
        warnings.push(format!(
            "dropped {} FN values with GT - FN <= 0",
            all_fn.len() - fn_values.len()
        ));
    }
    let mut rows = Vec::with_capacity(fn_values.len() * fp_values.len());
    for &fn_ in &fn_values {
        for &fp in &fp_values {
            let iou_g = iou_grad_fpfn(gt, fn_, fp)?;
            let uoi_g = uoi_grad_fpfn(gt, fn_, fp)?;
            rows.push(SweepRow {
                fp,
                fn_,
                iou: iou_from_mistakes(gt, fn_, fp),
                uoi: uoi_from_mistakes(gt, fn_, fp),
                grads: MetricGradients {
                    d_iou_d_fp: iou_g.d_fp,
                    d_iou_d_fn: iou_g.d_fn,
                    d_uoi_d_fp: uoi_g.d_fp,
                    d_uoi_d_fn: uoi_g.d_fn,
                },
            });
        }
    }
    Ok(SweepTable {
        gt,
        fp_values,
        fn_values,
        rows,
        warnings,
    })
}

/// Outcome of the monotonicity battery over a sweep grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepChecks {
    pub iou_fp_decreasing: bool,
    pub uoi_fp_constant: bool,
    pub uoi_fn_increasing: bool,
    pub violations: Vec<String>,
}

impl SweepChecks {
    pub fn all_pass(&self) -> bool {
        self.iou_fp_decreasing && self.uoi_fp_constant && self.uoi_fn_increasing
    }
}

impl SweepTable {
    pub fn at(&self, fn_idx: usize, fp_idx: usize) -> &SweepRow {
        &self.rows[fn_idx * self.fp_values.len() + fp_idx]
    }

    /// Checks, along every grid line, that `|dIOU/dFP|` strictly decreases
    /// in FP, `dUOI/dFP` is constant in FP and `|dUOI/dFN|` strictly
    /// increases in FN.
    pub fn check_monotonicity(&self) -> SweepChecks {
        let (n_fn, n_fp) = (self.fn_values.len(), self.fp_values.len());
        let mut checks = SweepChecks {
            iou_fp_decreasing: true,
            uoi_fp_constant: true,
            uoi_fn_increasing: true,
            violations: Vec::new(),
        };
        for a in 0..n_fn {
            for b in 1..n_fp {
                let (prev, cur) = (self.at(a, b - 1), self.at(a, b));
                if cur.grads.d_iou_d_fp.abs() >= prev.grads.d_iou_d_fp.abs() {
                    checks.iou_fp_decreasing = false;
                    checks
                        .violations
                        .push(format!("|dIOU/dFP| not decreasing at FN={} FP={}", cur.fn_, cur.fp));
                }
                if cur.grads.d_uoi_d_fp != prev.grads.d_uoi_d_fp {
                    checks.uoi_fp_constant = false;
                    checks
                        .violations
                        .push(format!("dUOI/dFP not constant at FN={} FP={}", cur.fn_, cur.fp));
                }
            }
        }
        for b in 0..n_fp {
            for a in 1..n_fn {
                let (prev, cur) = (self.at(a - 1, b), self.at(a, b));
                if cur.grads.d_uoi_d_fn.abs() <= prev.grads.d_uoi_d_fn.abs() {
                    checks.uoi_fn_increasing = false;
                    checks
                        .violations
                        .push(format!("|dUOI/dFN| not increasing at FN={} FP={}", cur.fn_, cur.fp));
                }
            }
        }
        checks
    }

    /// CSV with [`SWEEP_HEADER`] and 9 significant digits per value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_HEADER);
        out.push('\n');
        for r in &self.rows {
            let fields = [
                r.fp,
                r.fn_,
                r.iou,
                r.uoi,
                r.grads.d_iou_d_fp,
                r.grads.d_iou_d_fn,
                r.grads.d_uoi_d_fp,
                r.grads.d_uoi_d_fn,
            ];
            let line: Vec<String> = fields.iter().map(|&v| fmt_sig(v)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}
