//! Differentiable corpus-level objectives over soft segmentations.
//!
//! With prediction `q = softmax(z)` and ground truth `p`, per class `k`
//!
//! ```text
//! EI[k] = sum_i q[i,k] p[i,k]
//! EU[k] = sum_i q[i,k] + p[i,k] - q[i,k] p[i,k]
//! ```
//!
//! The IOU objective `sum_k EI[k] / EU[k]` is a gain (higher is better); the
//! UOI loss `sum_k EU[k] / EI[k]` and the cross-entropy are losses. Sums run
//! over the active classes, i.e. those with non-zero ground-truth mass;
//! classes absent from the ground truth are excluded and reported.
//!
//! Both overlap sums are additive over pixels, so accumulating them over a
//! batch that spans the whole corpus gives the corpus-level objective
//! exactly. Gradients with respect to the scores are computed analytically
//! by chaining `dL/dq` through the softmax Jacobian
//! `dq[i,a]/dz[i,b] = q[i,a] (1[a = b] - q[i,b])`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::seg::{
    clamp_row, ensure_same_shape, softmax_slice, GradientField, GridShape, HardSegmentation, ScoreMap,
    SoftSegmentation, PROB_EPS,
};

/// Batch-additive accumulators for the expected intersection and union.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedOverlap {
    intersection: Vec<f64>,
    union: Vec<f64>,
    gt_mass: Vec<f64>,
    pixels: usize,
}

impl ExpectedOverlap {
    pub fn zero(classes: usize) -> Self {
        Self {
            intersection: vec![0.0; classes],
            union: vec![0.0; classes],
            gt_mass: vec![0.0; classes],
            pixels: 0,
        }
    }

    pub fn classes(&self) -> usize {
        self.intersection.len()
    }

    pub fn intersection(&self) -> &[f64] {
        &self.intersection
    }

    pub fn union(&self) -> &[f64] {
        &self.union
    }

    /// Ground-truth probability mass per class, `sum_i p[i,k]`.
    pub fn gt_mass(&self) -> &[f64] {
        &self.gt_mass
    }

    pub fn pixels(&self) -> usize {
        self.pixels
    }

    /// Classes with ground-truth mass; the only ones the objectives sum over.
    pub fn active_classes(&self) -> Vec<usize> {
        (0..self.classes()).filter(|&k| self.is_active(k)).collect()
    }

    pub fn excluded_classes(&self) -> Vec<usize> {
        (0..self.classes()).filter(|&k| !self.is_active(k)).collect()
    }

    fn is_active(&self, k: usize) -> bool {
        self.gt_mass[k] > 0.0 && self.union[k] > 0.0
    }

    /// Component-wise sum of two accumulators.
    pub fn merge(&self, other: &ExpectedOverlap) -> Result<ExpectedOverlap> {
        if self.classes() != other.classes() {
            return invalid(format!(
                "cannot merge overlaps over {} and {} classes",
                self.classes(),
                other.classes()
            ));
        }
        let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        Ok(ExpectedOverlap {
            intersection: add(&self.intersection, &other.intersection),
            union: add(&self.union, &other.union),
            gt_mass: add(&self.gt_mass, &other.gt_mass),
            pixels: self.pixels + other.pixels,
        })
    }

    /// Adds one pixel's contribution.
    fn accumulate(&mut self, pred: &[f64], gt: &[f64]) {
        for k in 0..pred.len() {
            let (q, p) = (pred[k], gt[k]);
            let both = q * p;
            self.intersection[k] += both;
            self.union[k] += q + p - both;
            self.gt_mass[k] += p;
        }
        self.pixels += 1;
    }
}

pub fn merge(a: &ExpectedOverlap, b: &ExpectedOverlap) -> Result<ExpectedOverlap> {
    a.merge(b)
}

pub(crate) fn overlap_of_slices(pred: &[f64], gt: &[f64], classes: usize) -> ExpectedOverlap {
    let mut acc = ExpectedOverlap::zero(classes);
    for (q, p) in pred.chunks_exact(classes).zip(gt.chunks_exact(classes)) {
        acc.accumulate(q, p);
    }
    acc
}

/// Expected intersection and union of `pred` against `gt`, summed in
/// row-major pixel order.
pub fn expected_overlap(pred: &SoftSegmentation, gt: &SoftSegmentation) -> Result<ExpectedOverlap> {
    ensure_same_shape(pred.shape(), gt.shape(), "expected_overlap")?;
    Ok(overlap_of_slices(pred.as_slice(), gt.as_slice(), pred.classes()))
}

/// Value of an objective together with its per-class terms.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub name: String,
    pub value: f64,
    /// Per-class terms keyed by class id; excluded classes have no entry.
    pub per_class: Option<BTreeMap<usize, f64>>,
    /// Classes with zero ground-truth mass.
    pub excluded: Vec<usize>,
}

impl LossReport {
    /// `value / |active classes|` for objectives with per-class terms.
    pub fn mean(&self) -> Option<f64> {
        match &self.per_class {
            Some(terms) if !terms.is_empty() => Some(self.value / terms.len() as f64),
            _ => None,
        }
    }
}

/// `sum_{k active} EI[k] / EU[k]`. A gain.
pub fn iou_objective(overlap: &ExpectedOverlap) -> LossReport {
    let per_class: BTreeMap<usize, f64> = overlap
        .active_classes()
        .into_iter()
        .map(|k| (k, overlap.intersection[k] / overlap.union[k]))
        .collect();
    LossReport {
        name: "iou".into(),
        value: per_class.values().sum(),
        per_class: Some(per_class),
        excluded: overlap.excluded_classes(),
    }
}

/// `sum_{k active} EU[k] / EI[k]`. A loss, bounded below by the number of
/// active classes.
pub fn uoi_loss(overlap: &ExpectedOverlap) -> Result<LossReport> {
    let mut per_class = BTreeMap::new();
    for k in overlap.active_classes() {
        if overlap.intersection[k] <= 0.0 {
            return Err(Error::DegenerateInput(format!(
                "class {k} has ground-truth mass but zero expected intersection"
            )));
        }
        per_class.insert(k, overlap.union[k] / overlap.intersection[k]);
    }
    Ok(LossReport {
        name: "uoi".into(),
        value: per_class.values().sum(),
        per_class: Some(per_class),
        excluded: overlap.excluded_classes(),
    })
}

fn cross_entropy_of_slices(pred: &[f64], gt: &[f64], classes: usize) -> f64 {
    let mut clamped = vec![0.0; classes];
    let mut total = 0.0;
    for (q, p) in pred.chunks_exact(classes).zip(gt.chunks_exact(classes)) {
        clamped.copy_from_slice(q);
        clamp_row(&mut clamped);
        for (&pk, &qk) in p.iter().zip(&clamped) {
            if pk > 0.0 {
                total -= pk * qk.ln();
            }
        }
    }
    total / (pred.len() / classes) as f64
}

/// Mean per-pixel cross-entropy `-(1/N) sum_i sum_k p[i,k] ln q[i,k]`, with
/// the prediction clamped before the logarithm.
pub fn cross_entropy(pred: &SoftSegmentation, gt: &SoftSegmentation) -> Result<LossReport> {
    ensure_same_shape(pred.shape(), gt.shape(), "cross_entropy")?;
    Ok(LossReport {
        name: "ce".into(),
        value: cross_entropy_of_slices(pred.as_slice(), gt.as_slice(), pred.classes()),
        per_class: None,
        excluded: Vec::new(),
    })
}

/// Differentiable objectives selectable by the trainer and the gradient checker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    CrossEntropy,
    /// IOU gain; its gradient is an ascent direction.
    Iou,
    Uoi,
    /// `alpha * UOI + (1 - alpha) * CE`.
    Combined {
        alpha: f64,
    },
}

/// Weight of the UOI term used by the combined loss unless overridden.
pub const DEFAULT_UOI_WEIGHT: f64 = 0.7;

impl Objective {
    pub fn name(&self) -> String {
        match self {
            Objective::CrossEntropy => "ce".into(),
            Objective::Iou => "iou".into(),
            Objective::Uoi => "uoi".into(),
            Objective::Combined { alpha } => format!("combined({alpha})"),
        }
    }

    /// True when larger values are better.
    pub fn is_gain(&self) -> bool {
        matches!(self, Objective::Iou)
    }

    fn validate(&self) -> Result<()> {
        if let Objective::Combined { alpha } = self {
            if !(0.0..=1.0).contains(alpha) {
                return invalid(format!("combined-loss weight {alpha} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn value(&self, scores: &ScoreMap, gt: &SoftSegmentation) -> Result<f64> {
        ensure_same_shape(scores.shape(), gt.shape(), self.name().as_str())?;
        let probs = softmax_slice(scores.as_slice(), gt.classes());
        Ok(evaluate(*self, &probs, gt.as_slice(), gt.classes(), false)?.0)
    }

    pub fn gradient(&self, scores: &ScoreMap, gt: &SoftSegmentation) -> Result<GradientField> {
        ensure_same_shape(scores.shape(), gt.shape(), self.name().as_str())?;
        let probs = softmax_slice(scores.as_slice(), gt.classes());
        let (_, grad) = evaluate(*self, &probs, gt.as_slice(), gt.classes(), true)?;
        GradientField::new(scores.shape(), grad)
    }
}

/// Objective value and, if requested, `dL/dz` given softmax outputs
/// `probs`. Shared by the public API and the trainer.
pub(crate) fn evaluate(
    objective: Objective,
    probs: &[f64],
    gt: &[f64],
    classes: usize,
    with_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    objective.validate()?;
    match objective {
        Objective::CrossEntropy => {
            let value = cross_entropy_of_slices(probs, gt, classes);
            let grad = if with_grad {
                let n = (probs.len() / classes) as f64;
                probs.iter().zip(gt).map(|(q, p)| (q - p) / n).collect()
            } else {
                Vec::new()
            };
            Ok((value, grad))
        }
        Objective::Iou | Objective::Uoi => {
            let overlap = overlap_of_slices(probs, gt, classes);
            let value = if objective == Objective::Iou {
                iou_objective(&overlap).value
            } else {
                uoi_loss(&overlap)?.value
            };
            let grad = if with_grad {
                ratio_gradient(objective, &overlap, probs, gt, classes)
            } else {
                Vec::new()
            };
            Ok((value, grad))
        }
        Objective::Combined { alpha } => {
            let (uoi, g_uoi) = evaluate(Objective::Uoi, probs, gt, classes, with_grad)?;
            let (ce, g_ce) = evaluate(Objective::CrossEntropy, probs, gt, classes, with_grad)?;
            let grad = g_uoi
                .iter()
                .zip(&g_ce)
                .map(|(u, c)| alpha * u + (1.0 - alpha) * c)
                .collect();
            Ok((alpha * uoi + (1.0 - alpha) * ce, grad))
        }
    }
}

/// Gradient of the IOU gain or UOI loss with respect to the scores.
///
/// With `S[k] = sum_j q[j,k] + p[j,k] = EU[k] + EI[k]`:
///
/// ```text
/// dIOU/dq[i,k] = (p[i,k] S[k] - EI[k]) / EU[k]^2
/// dUOI/dq[i,k] = (EI[k] - p[i,k] S[k]) / EI[k]^2
/// ```
///
/// then `dL/dz[i,b] = sum_a dL/dq[i,a] q[i,a] (1[a = b] - q[i,b])`.
fn ratio_gradient(
    objective: Objective,
    overlap: &ExpectedOverlap,
    probs: &[f64],
    gt: &[f64],
    classes: usize,
) -> Vec<f64> {
    let active: Vec<bool> = (0..classes).map(|k| overlap.is_active(k)).collect();
    let both: Vec<f64> = (0..classes)
        .map(|k| overlap.union[k] + overlap.intersection[k])
        .collect();
    let mut grad = vec![0.0; probs.len()];
    let mut dq = vec![0.0; classes];
    for ((q, p), g) in probs
        .chunks_exact(classes)
        .zip(gt.chunks_exact(classes))
        .zip(grad.chunks_exact_mut(classes))
    {
        for k in 0..classes {
            dq[k] = if !active[k] {
                0.0
            } else {
                let (ei, eu) = (overlap.intersection[k], overlap.union[k]);
                match objective {
                    Objective::Iou => (p[k] * both[k] - ei) / (eu * eu),
                    _ => (ei - p[k] * both[k]) / (ei * ei),
                }
            };
        }
        backprop_softmax_row(q, &dq, g);
    }
    grad
}

/// `g[b] = q[b] (dq[b] - sum_a dq[a] q[a])`, the softmax Jacobian applied to
/// `dq`.
fn backprop_softmax_row(q: &[f64], dq: &[f64], g: &mut [f64]) {
    let dot: f64 = q.iter().zip(dq).map(|(a, b)| a * b).sum();
    for ((gb, &qb), &db) in g.iter_mut().zip(q).zip(dq) {
        *gb = qb * (db - dot);
    }
}

pub fn grad_iou(scores: &ScoreMap, gt: &SoftSegmentation) -> Result<GradientField> {
    Objective::Iou.gradient(scores, gt)
}

pub fn grad_uoi(scores: &ScoreMap, gt: &SoftSegmentation) -> Result<GradientField> {
    Objective::Uoi.gradient(scores, gt)
}

/// `(q[i,k] - p[i,k]) / N`.
pub fn grad_cross_entropy(scores: &ScoreMap, gt: &SoftSegmentation) -> Result<GradientField> {
    Objective::CrossEntropy.gradient(scores, gt)
}

/// `alpha * UOI + (1 - alpha) * CE` and its gradient.
pub fn combined_loss(scores: &ScoreMap, gt: &SoftSegmentation, alpha: f64) -> Result<(LossReport, GradientField)> {
    let objective = Objective::Combined { alpha };
    objective.validate()?;
    ensure_same_shape(scores.shape(), gt.shape(), "combined_loss")?;
    let probs = softmax_slice(scores.as_slice(), gt.classes());
    let (value, grad) = evaluate(objective, &probs, gt.as_slice(), gt.classes(), true)?;
    let overlap = overlap_of_slices(&probs, gt.as_slice(), gt.classes());
    let report = LossReport {
        name: objective.name(),
        value,
        per_class: None,
        excluded: overlap.excluded_classes(),
    };
    Ok((report, GradientField::new(scores.shape(), grad)?))
}

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Largest relative discrepancy between the analytic gradient and central
/// differences `(L(z + h e) - L(z - h e)) / 2h` over every score coordinate,
/// where relative error is `|analytic - numeric| / max(1e-8, |numeric|)`.
///
/// Perturbing one score only changes one softmax row, so the numerator is
/// formed from that row's exact change rather than by subtracting two
/// corpus-level values, which would lose most of its digits to cancellation.
pub fn finite_diff_check(objective: Objective, scores: &ScoreMap, gt: &SoftSegmentation, step: f64) -> Result<f64> {
    if !(step > 0.0 && step.is_finite()) {
        return invalid(format!("finite-difference step must be positive, got {step}"));
    }
    let analytic = objective.gradient(scores, gt)?;
    let classes = gt.classes();
    let probs = softmax_slice(scores.as_slice(), classes);
    let overlap = overlap_of_slices(&probs, gt.as_slice(), classes);
    let ctx = DiffContext {
        overlap: &overlap,
        pixels: gt.pixels() as f64,
        step,
    };
    let mut worst: f64 = 0.0;
    for (idx, &a) in analytic.as_slice().iter().enumerate() {
        let (pixel, class) = (idx / classes, idx % classes);
        let range = pixel * classes..(pixel + 1) * classes;
        let diff = ctx.difference(objective, &probs[range.clone()], &gt.as_slice()[range], class);
        let numeric = diff / (2.0 * step);
        worst = worst.max((a - numeric).abs() / numeric.abs().max(1e-8));
    }
    Ok(worst)
}

/// The objectives exercised by [`gradcheck`]: IOU, UOI, cross-entropy and
/// the combined loss at its default weight.
pub const GRADCHECK_OBJECTIVES: [Objective; 4] = [
    Objective::Iou,
    Objective::Uoi,
    Objective::CrossEntropy,
    Objective::Combined {
        alpha: DEFAULT_UOI_WEIGHT,
    },
];

/// Worst [`finite_diff_check`] error of each of [`GRADCHECK_OBJECTIVES`]
/// over `trials` random instances with standard-normal scores and
/// uniformly random one-hot labels.
pub fn gradcheck(seed: u64, trials: usize, shape: GridShape, step: f64) -> Result<Vec<(Objective, f64)>> {
    if trials == 0 {
        return invalid("need at least one trial");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = GRADCHECK_OBJECTIVES.map(|o| (o, 0.0f64));
    for _ in 0..trials {
        let scores: Vec<f64> = (0..shape.len()).map(|_| rng.sample(StandardNormal)).collect();
        let labels: Vec<u32> = (0..shape.pixels())
            .map(|_| rng.random_range(0..shape.classes as u32))
            .collect();
        let gt = SoftSegmentation::one_hot(&HardSegmentation::new(
            shape.height,
            shape.width,
            shape.classes,
            labels,
        )?);
        let scores = ScoreMap::new(shape, scores)?;
        for (objective, err) in &mut worst {
            *err = err.max(finite_diff_check(*objective, &scores, &gt, step)?);
        }
    }
    Ok(worst.to_vec())
}

struct DiffContext<'a> {
    overlap: &'a ExpectedOverlap,
    pixels: f64,
    step: f64,
}

impl DiffContext<'_> {
    /// `L(z + h e) - L(z - h e)` where `e` is the unit vector of score
    /// `class` of the pixel whose softmax row is `q` and label row is `p`.
    fn difference(&self, objective: Objective, q: &[f64], p: &[f64], class: usize) -> f64 {
        match objective {
            Objective::CrossEntropy => self.ce_difference(q, p, class),
            Objective::Iou | Objective::Uoi => self.ratio_difference(objective, q, p, class),
            Objective::Combined { alpha } => {
                alpha * self.ratio_difference(Objective::Uoi, q, p, class)
                    + (1.0 - alpha) * self.ce_difference(q, p, class)
            }
        }
    }

    /// Change of row `q` when score `class` moves by `shift`:
    /// `q'[a] - q[a] = q[a] (1[a = b] - q[b]) (e^s - 1) / (1 + q[b] (e^s - 1))`.
    fn row_change(q: &[f64], class: usize, shift: f64) -> Vec<f64> {
        let e = shift.exp_m1();
        let scale = e / (1.0 + q[class] * e);
        q.iter()
            .enumerate()
            .map(|(a, &qa)| {
                let own = if a == class { 1.0 - q[class] } else { -q[class] };
                qa * own * scale
            })
            .collect()
    }

    fn ratio_difference(&self, objective: Objective, q: &[f64], p: &[f64], class: usize) -> f64 {
        let up = Self::row_change(q, class, self.step);
        let down = Self::row_change(q, class, -self.step);
        let mut total = 0.0;
        for k in 0..q.len() {
            if !self.overlap.is_active(k) {
                continue;
            }
            let (ei, eu) = (self.overlap.intersection[k], self.overlap.union[k]);
            let (i_up, i_down) = (up[k] * p[k], down[k] * p[k]);
            let (u_up, u_down) = (up[k] * (1.0 - p[k]), down[k] * (1.0 - p[k]));
            // (n + a) / (d + b) - (n + c) / (d + e), expanded over a common
            // denominator so only the small terms are subtracted.
            let (n, d, a, b, c, e) = match objective {
                Objective::Iou => (ei, eu, i_up, u_up, i_down, u_down),
                _ => (eu, ei, u_up, i_up, u_down, i_down),
            };
            total += ((a - c) * d + n * (e - b) + a * e - c * b) / ((d + b) * (d + e));
        }
        total
    }

    fn ce_difference(&self, q: &[f64], p: &[f64], class: usize) -> f64 {
        let shifted = |shift: f64| {
            let change = Self::row_change(q, class, shift);
            q.iter().zip(change).map(|(a, b)| a + b).collect::<Vec<f64>>()
        };
        let (up, down) = (shifted(self.step), shifted(-self.step));
        let unclamped = q.iter().chain(&up).chain(&down).all(|&v| v >= PROB_EPS);
        let mut total = 0.0;
        if unclamped {
            // ln q'[a] = ln q[a] + s 1[a = b] - ln(1 + q[b] (e^s - 1))
            let log_norm = |s: f64| (q[class] * s.exp_m1()).ln_1p();
            let shared = log_norm(self.step) - log_norm(-self.step);
            for (k, &pk) in p.iter().enumerate() {
                let own = if k == class { 2.0 * self.step } else { 0.0 };
                total -= pk * (own - shared);
            }
        } else {
            let (mut up, mut down) = (up, down);
            clamp_row(&mut up);
            clamp_row(&mut down);
            for (k, &pk) in p.iter().enumerate() {
                if pk > 0.0 {
                    total -= pk * (up[k].ln() - down[k].ln());
                }
            }
        }
        total / self.pixels
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seg::{GridShape, HardSegmentation};

    fn soft(h: usize, w: usize, k: usize, probs: &[f64]) -> SoftSegmentation {
        SoftSegmentation::new(GridShape::new(h, w, k).unwrap(), probs.to_vec()).unwrap()
    }

    /// 2 pixels, K = 2: pred [[0.6,0.4],[0.2,0.8]], gt one-hot [[1,0],[0,1]].
    fn two_pixel() -> (SoftSegmentation, SoftSegmentation) {
        (
            soft(1, 2, 2, &[0.6, 0.4, 0.2, 0.8]),
            soft(1, 2, 2, &[1.0, 0.0, 0.0, 1.0]),
        )
    }

    fn log_scores(pred: &SoftSegmentation) -> ScoreMap {
        ScoreMap::new(pred.shape(), pred.as_slice().iter().map(|p| p.ln()).collect()).unwrap()
    }

    #[test]
    fn overlap_examples() {
        let (pred, gt) = two_pixel();
        let o = expected_overlap(&pred, &gt).unwrap();
        assert_close(o.intersection(), &[0.6, 0.8], 1e-15);
        assert_close(o.union(), &[1.2, 1.4], 1e-15);
        assert_eq!(o.pixels(), 2);

        let gt = HardSegmentation::new(2, 2, 3, vec![0, 1, 2, 2]).unwrap();
        let one_hot = SoftSegmentation::one_hot(&gt);
        let o = expected_overlap(&one_hot, &one_hot).unwrap();
        assert_eq!(o.intersection(), &[1.0, 1.0, 2.0]);
        assert_eq!(o.union(), o.intersection());

        let zeros = soft(1, 2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let ones = soft(1, 2, 2, &[0.0, 1.0, 0.0, 1.0]);
        let o = expected_overlap(&zeros, &ones).unwrap();
        assert_eq!(o.intersection(), &[0.0, 0.0]);
        assert_eq!(o.union(), &[2.0, 2.0]);

        let other = soft(1, 1, 2, &[0.5, 0.5]);
        assert!(expected_overlap(&zeros, &other).is_err());
    }

    #[test]
    fn merge_identity_and_mismatch() {
        let (pred, gt) = two_pixel();
        let o = expected_overlap(&pred, &gt).unwrap();
        assert_eq!(merge(&o, &ExpectedOverlap::zero(2)).unwrap(), o);
        assert!(merge(&o, &ExpectedOverlap::zero(3)).is_err());
    }

    #[test]
    fn objective_values_on_two_pixel_example() {
        let (pred, gt) = two_pixel();
        let o = expected_overlap(&pred, &gt).unwrap();
        let iou = iou_objective(&o);
        assert!((iou.value - (0.5 + 0.8 / 1.4)).abs() < 1e-12);
        assert!((iou.value - 1.071429).abs() < 1e-6);
        let uoi = uoi_loss(&o).unwrap();
        assert!((uoi.value - 3.75).abs() < 1e-12);
        assert!(iou.value >= 1.0 / uoi.value);
        assert!((1.0 / uoi.value - 0.266667).abs() < 1e-6);

        let ce = cross_entropy(&pred, &gt).unwrap();
        let expect = -(0.6f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((ce.value - expect).abs() < 1e-9);
        assert!((ce.value - 0.367).abs() < 1e-3);
    }

    #[test]
    fn perfect_prediction_values() {
        let gt = HardSegmentation::new(1, 3, 3, vec![0, 1, 2]).unwrap();
        let p = SoftSegmentation::one_hot(&gt);
        let o = expected_overlap(&p, &p).unwrap();
        let iou = iou_objective(&o);
        assert_eq!(iou.value, 3.0);
        assert_eq!(iou.mean(), Some(1.0));
        assert_eq!(uoi_loss(&o).unwrap().value, 3.0);

        let ce = cross_entropy(&p, &p).unwrap();
        assert!(ce.value.abs() < 1e-5);
        assert!((ce.value + (1.0 - 2.0 * crate::seg::PROB_EPS).ln()).abs() < 1e-12);

        let uniform = soft(1, 1, 2, &[0.5, 0.5]);
        let target = soft(1, 1, 2, &[1.0, 0.0]);
        assert!((cross_entropy(&uniform, &target).unwrap().value - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn disjoint_iou_is_zero_and_uoi_degenerate() {
        let pred = soft(1, 2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let gt = soft(1, 2, 2, &[0.0, 1.0, 0.0, 1.0]);
        let o = expected_overlap(&pred, &gt).unwrap();
        let iou = iou_objective(&o);
        assert_eq!(iou.value, 0.0);
        assert_eq!(iou.excluded, vec![0]);
        assert!(matches!(uoi_loss(&o), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn absent_classes_are_excluded() {
        let pred = soft(1, 2, 3, &[0.5, 0.3, 0.2, 0.1, 0.6, 0.3]);
        let gt = soft(1, 2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let o = expected_overlap(&pred, &gt).unwrap();
        let uoi = uoi_loss(&o).unwrap();
        assert_eq!(uoi.excluded, vec![2]);
        assert_eq!(uoi.per_class.as_ref().unwrap().len(), 2);
        assert!(!uoi.per_class.unwrap().contains_key(&2));
    }

    #[test]
    fn cross_entropy_gradient_example() {
        let z = ScoreMap::new(GridShape::new(1, 1, 2).unwrap(), vec![0.0, 0.0]).unwrap();
        let gt = soft(1, 1, 2, &[1.0, 0.0]);
        let g = grad_cross_entropy(&z, &gt).unwrap();
        assert_eq!(g.as_slice(), &[-0.5, 0.5]);
    }

    #[test]
    fn cross_entropy_gradient_vanishes_at_target() {
        let target = soft(1, 2, 3, &[0.2, 0.3, 0.5, 0.6, 0.1, 0.3]);
        let z = log_scores(&target);
        let g = grad_cross_entropy(&z, &target).unwrap();
        assert!(g.max_abs() < 1e-15);
    }

    #[test]
    fn combined_loss_edges() {
        let (pred, gt) = two_pixel();
        let z = log_scores(&pred);
        let (r0, g0) = combined_loss(&z, &gt, 0.0).unwrap();
        assert_eq!(r0.value, Objective::CrossEntropy.value(&z, &gt).unwrap());
        assert_eq!(g0, grad_cross_entropy(&z, &gt).unwrap());
        let (r1, g1) = combined_loss(&z, &gt, 1.0).unwrap();
        assert_eq!(r1.value, Objective::Uoi.value(&z, &gt).unwrap());
        assert_eq!(g1, grad_uoi(&z, &gt).unwrap());

        let (r, _) = combined_loss(&z, &gt, DEFAULT_UOI_WEIGHT).unwrap();
        let ce = -(0.6f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((r.value - (0.7 * 3.75 + 0.3 * ce)).abs() < 1e-9);
        assert!((r.value - 2.735).abs() < 1e-3);

        assert!(combined_loss(&z, &gt, 1.5).is_err());
        assert!(combined_loss(&z, &gt, -0.1).is_err());
    }

    #[test]
    fn ratio_gradients_stationary_at_one_hot_optimum() {
        let gt = HardSegmentation::new(2, 2, 3, vec![0, 0, 1, 2]).unwrap();
        let target = SoftSegmentation::one_hot(&gt);
        let z: Vec<f64> = target.as_slice().iter().map(|p| 40.0 * p).collect();
        let z = ScoreMap::new(target.shape(), z).unwrap();
        for g in [grad_iou(&z, &target).unwrap(), grad_uoi(&z, &target).unwrap()] {
            assert!(g.max_abs() < 1e-6);
            assert!(g.max_abs_row_sum() < 1e-9);
        }
    }

    #[test]
    fn bad_step_rejected() {
        let (pred, gt) = two_pixel();
        let z = log_scores(&pred);
        assert!(finite_diff_check(Objective::Iou, &z, &gt, 0.0).is_err());
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }
}
