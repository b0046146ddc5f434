//! Segmentation data model.
//!
//! Hard and soft label grids at coarse and full resolution, pre-softmax
//! score maps and their gradients, superpixel maps, plus the softmax and
//! coarse/fine resampling operations that connect them.
//!
//! Pixels are stored row-major: pixel `i = row * width + col`, and a
//! per-class grid stores class `k` of pixel `i` at `i * classes + k`.
//! Class 0 is background.

use std::collections::BTreeMap;

use crate::error::{invalid, Result};

/// Floor applied to probabilities before they are fed to a logarithm or a
/// reciprocal.
pub const PROB_EPS: f64 = 1e-7;

/// Tolerance on `sum_k p[i,k] = 1` accepted by [`SoftSegmentation::new`].
pub const ROW_SUM_TOL: f64 = 1e-6;

/// Height, width and class count of a per-class grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
}

impl GridShape {
    pub fn new(height: usize, width: usize, classes: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return invalid(format!("grid dimensions must be positive, got {height}x{width}"));
        }
        if classes < 2 {
            return invalid(format!("need at least 2 classes, got {classes}"));
        }
        Ok(Self { height, width, classes })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.pixels() * self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) fn ensure_same_shape(a: GridShape, b: GridShape, what: &str) -> Result<()> {
    if a != b {
        return invalid(format!(
            "{what}: shape mismatch {}x{}x{} vs {}x{}x{}",
            a.height, a.width, a.classes, b.height, b.width, b.classes
        ));
    }
    Ok(())
}

/// Per-pixel probability distribution over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSegmentation {
    shape: GridShape,
    probs: Vec<f64>,
}

impl SoftSegmentation {
    /// Validates that every row is a distribution (entries in `[0, 1]`,
    /// sum within [`ROW_SUM_TOL`] of one).
    pub fn new(shape: GridShape, probs: Vec<f64>) -> Result<Self> {
        let shape = GridShape::new(shape.height, shape.width, shape.classes)?;
        if probs.len() != shape.len() {
            return invalid(format!("expected {} probabilities, got {}", shape.len(), probs.len()));
        }
        for (i, row) in probs.chunks_exact(shape.classes).enumerate() {
            if let Some(bad) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return invalid(format!("pixel {i}: probability {bad} outside [0, 1]"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return invalid(format!("pixel {i}: probabilities sum to {sum}"));
            }
        }
        Ok(Self { shape, probs })
    }

    /// One-hot encoding of a hard label map.
    pub fn one_hot(hard: &HardSegmentation) -> Self {
        let shape = hard.shape();
        let mut probs = vec![0.0; shape.len()];
        for (i, &label) in hard.labels().iter().enumerate() {
            probs[i * shape.classes + label as usize] = 1.0;
        }
        Self { shape, probs }
    }

    pub fn uniform(shape: GridShape) -> Self {
        let value = 1.0 / shape.classes as f64;
        Self {
            shape,
            probs: vec![value; shape.len()],
        }
    }

    /// Stacks segmentations of equal width and class count vertically.
    /// The result holds the union of all pixels in input order.
    pub fn concat(parts: &[SoftSegmentation]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return invalid("cannot concatenate an empty list");
        };
        let mut probs = Vec::new();
        let mut height = 0;
        for part in parts {
            if part.shape.width != first.shape.width || part.shape.classes != first.shape.classes {
                return invalid("concat: width and class count must agree");
            }
            height += part.shape.height;
            probs.extend_from_slice(&part.probs);
        }
        Ok(Self {
            shape: GridShape { height, ..first.shape },
            probs,
        })
    }

    pub(crate) fn from_raw(shape: GridShape, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), shape.len());
        Self { shape, probs }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn classes(&self) -> usize {
        self.shape.classes
    }

    pub fn pixels(&self) -> usize {
        self.shape.pixels()
    }

    pub fn prob(&self, pixel: usize, class: usize) -> f64 {
        self.probs[pixel * self.shape.classes + class]
    }

    pub fn row(&self, pixel: usize) -> &[f64] {
        let k = self.shape.classes;
        &self.probs[pixel * k..(pixel + 1) * k]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.probs.chunks_exact(self.shape.classes)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Total probability mass assigned to each class.
    pub fn class_mass(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.shape.classes];
        for row in self.rows() {
            for (m, p) in mass.iter_mut().zip(row) {
                *m += p;
            }
        }
        mass
    }

    /// Copy with every entry clamped to `[PROB_EPS, 1]` and rows renormalized.
    pub fn clamped(&self) -> Self {
        let mut probs = self.probs.clone();
        for row in probs.chunks_exact_mut(self.shape.classes) {
            clamp_row(row);
        }
        Self {
            shape: self.shape,
            probs,
        }
    }

    /// Per-pixel argmax, lowest class index on ties.
    pub fn argmax(&self) -> HardSegmentation {
        let labels = self.rows().map(|row| argmax(row) as u32).collect();
        HardSegmentation {
            shape: self.shape,
            labels,
        }
    }
}

pub(crate) fn clamp_row(row: &mut [f64]) {
    let mut sum = 0.0;
    for p in row.iter_mut() {
        *p = p.clamp(PROB_EPS, 1.0);
        sum += *p;
    }
    for p in row.iter_mut() {
        *p /= sum;
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Integer label per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardSegmentation {
    shape: GridShape,
    labels: Vec<u32>,
}

impl HardSegmentation {
    pub fn new(height: usize, width: usize, classes: usize, labels: Vec<u32>) -> Result<Self> {
        let shape = GridShape::new(height, width, classes)?;
        if labels.len() != shape.pixels() {
            return invalid(format!("expected {} labels, got {}", shape.pixels(), labels.len()));
        }
        if let Some((i, bad)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= classes) {
            return invalid(format!("pixel {i}: label {bad} >= class count {classes}"));
        }
        Ok(Self { shape, labels })
    }

    pub fn filled(height: usize, width: usize, classes: usize, label: u32) -> Result<Self> {
        Self::new(height, width, classes, vec![label; height * width])
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn classes(&self) -> usize {
        self.shape.classes
    }

    pub fn pixels(&self) -> usize {
        self.shape.pixels()
    }

    pub fn label(&self, pixel: usize) -> u32 {
        self.labels[pixel]
    }

    pub fn at(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.shape.width + col]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Number of pixels carrying `class`.
    pub fn count(&self, class: u32) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }
}

/// Unconstrained pre-softmax scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    shape: GridShape,
    scores: Vec<f64>,
}

impl ScoreMap {
    pub fn new(shape: GridShape, scores: Vec<f64>) -> Result<Self> {
        let shape = GridShape::new(shape.height, shape.width, shape.classes)?;
        if scores.len() != shape.len() {
            return invalid(format!("expected {} scores, got {}", shape.len(), scores.len()));
        }
        if let Some(i) = scores.iter().position(|z| !z.is_finite()) {
            return invalid(format!("score {i} is not finite"));
        }
        Ok(Self { shape, scores })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.scores
    }

    /// Copy with `scores[index] += delta`.
    pub fn perturbed(&self, index: usize, delta: f64) -> Self {
        let mut scores = self.scores.clone();
        scores[index] += delta;
        Self {
            shape: self.shape,
            scores,
        }
    }
}

/// Derivative of a scalar objective with respect to every score in a
/// [`ScoreMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    shape: GridShape,
    values: Vec<f64>,
}

impl GradientField {
    pub fn new(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return invalid(format!(
                "expected {} gradient entries, got {}",
                shape.len(),
                values.len()
            ));
        }
        if let Some(i) = values.iter().position(|g| !g.is_finite()) {
            return invalid(format!("gradient entry {i} is not finite"));
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, pixel: usize) -> &[f64] {
        let k = self.shape.classes;
        &self.values[pixel * k..(pixel + 1) * k]
    }

    /// Largest `|sum_k g[i,k]|` over pixels.
    pub fn max_abs_row_sum(&self) -> f64 {
        self.values
            .chunks_exact(self.shape.classes)
            .map(|row| row.iter().sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

/// Superpixel id per full-resolution pixel. Ids are contiguous from zero
/// and every superpixel owns at least one pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelMap {
    height: usize,
    width: usize,
    count: usize,
    ids: Vec<u32>,
}

impl SuperpixelMap {
    pub fn new(height: usize, width: usize, ids: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return invalid("superpixel map dimensions must be positive");
        }
        if ids.len() != height * width {
            return invalid(format!("expected {} superpixel ids, got {}", height * width, ids.len()));
        }
        let count = ids.iter().map(|&s| s as usize + 1).max().unwrap_or(0);
        let mut sizes = vec![0usize; count];
        for &s in &ids {
            sizes[s as usize] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&n| n == 0) {
            return invalid(format!("superpixel {empty} is empty; ids must be contiguous"));
        }
        Ok(Self {
            height,
            width,
            count,
            ids,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }
}

/// Numerically stable softmax of one pixel's scores into `out`.
pub(crate) fn softmax_row(scores: &[f64], out: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(scores) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub(crate) fn softmax_slice(scores: &[f64], classes: usize) -> Vec<f64> {
    let mut probs = vec![0.0; scores.len()];
    for (z, p) in scores.chunks_exact(classes).zip(probs.chunks_exact_mut(classes)) {
        softmax_row(z, p);
    }
    probs
}

/// Per-pixel softmax. The result is not clamped.
pub fn softmax(scores: &ScoreMap) -> SoftSegmentation {
    SoftSegmentation::from_raw(scores.shape, softmax_slice(&scores.scores, scores.shape.classes))
}

/// Jacobian of one pixel's softmax output with respect to its scores:
/// `J[a][b] = d p[a] / d z[b] = p[a] * (1[a == b] - p[b])`.
pub fn softmax_jacobian(probs: &[f64]) -> Result<Vec<Vec<f64>>> {
    if probs.len() < 2 {
        return invalid("softmax row needs at least two classes");
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return invalid("softmax row entries must lie in [0, 1]");
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return invalid(format!("softmax row sums to {sum}"));
    }
    Ok(probs
        .iter()
        .enumerate()
        .map(|(a, &pa)| {
            probs
                .iter()
                .enumerate()
                .map(|(b, &pb)| pa * (if a == b { 1.0 } else { 0.0 } - pb))
                .collect()
        })
        .collect())
}

/// Boundaries `round(r * full / coarse)` for `r = 0..=coarse` (halves round
/// up). Consecutive boundaries differ by at least one when `coarse <= full`.
pub fn patch_bounds(full: usize, coarse: usize) -> Vec<usize> {
    (0..=coarse).map(|r| (2 * r * full + coarse) / (2 * coarse)).collect()
}

/// Coarse index of each full-resolution coordinate along one axis.
fn patch_index(full: usize, coarse: usize) -> Vec<usize> {
    let bounds = patch_bounds(full, coarse);
    let mut index = Vec::with_capacity(full);
    for (c, w) in bounds.windows(2).enumerate() {
        index.extend(std::iter::repeat_n(c, w[1] - w[0]));
    }
    index
}

/// Coarse pixel owning each full-resolution pixel under the rectangular
/// patch partition.
pub fn patch_map(full_h: usize, full_w: usize, coarse_h: usize, coarse_w: usize) -> Result<Vec<usize>> {
    if coarse_h == 0 || coarse_w == 0 {
        return invalid("coarse dimensions must be positive");
    }
    if coarse_h > full_h || coarse_w > full_w {
        return invalid(format!(
            "coarse grid {coarse_h}x{coarse_w} larger than full grid {full_h}x{full_w}"
        ));
    }
    let rows = patch_index(full_h, coarse_h);
    let cols = patch_index(full_w, coarse_w);
    Ok(rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| r * coarse_w + c))
        .collect())
}

/// Coarse soft segmentation holding the empirical class frequencies of each
/// patch of `gt`.
pub fn downsample_to_soft(gt: &HardSegmentation, coarse_h: usize, coarse_w: usize) -> Result<SoftSegmentation> {
    let owner = patch_map(gt.height(), gt.width(), coarse_h, coarse_w)?;
    let k = gt.classes();
    let shape = GridShape::new(coarse_h, coarse_w, k)?;
    let mut counts = vec![0usize; shape.len()];
    let mut sizes = vec![0usize; shape.pixels()];
    for (&patch, &label) in owner.iter().zip(gt.labels()) {
        counts[patch * k + label as usize] += 1;
        sizes[patch] += 1;
    }
    let probs = counts
        .iter()
        .enumerate()
        .map(|(idx, &n)| n as f64 / sizes[idx / k] as f64)
        .collect();
    Ok(SoftSegmentation::from_raw(shape, probs))
}

/// Copies each coarse pixel's argmax into every full-resolution pixel of
/// its patch.
pub fn upsample_naive(coarse: &SoftSegmentation, full_h: usize, full_w: usize) -> Result<HardSegmentation> {
    let owner = patch_map(full_h, full_w, coarse.height(), coarse.width())?;
    let coarse_labels = coarse.argmax();
    let labels = owner.iter().map(|&p| coarse_labels.label(p)).collect();
    HardSegmentation::new(full_h, full_w, coarse.classes(), labels)
}

/// Labels each superpixel with the argmax of the patch distributions it
/// overlaps, weighted by the fraction of the superpixel inside each patch.
pub fn upsample_superpixel(coarse: &SoftSegmentation, superpixels: &SuperpixelMap) -> Result<HardSegmentation> {
    let (full_h, full_w) = (superpixels.height(), superpixels.width());
    let owner = patch_map(full_h, full_w, coarse.height(), coarse.width())?;
    let k = coarse.classes();

    let mut overlap: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); superpixels.count()];
    for (&patch, &s) in owner.iter().zip(superpixels.ids()) {
        *overlap[s as usize].entry(patch).or_insert(0) += 1;
    }

    let mut sp_label = Vec::with_capacity(superpixels.count());
    let mut dist = vec![0.0; k];
    for patches in &overlap {
        let size: usize = patches.values().sum();
        if size == 0 {
            return invalid("empty superpixel");
        }
        dist.iter_mut().for_each(|d| *d = 0.0);
        for (&patch, &n) in patches {
            let weight = n as f64 / size as f64;
            for (d, p) in dist.iter_mut().zip(coarse.row(patch)) {
                *d += weight * p;
            }
        }
        sp_label.push(argmax(&dist) as u32);
    }
    let labels = superpixels.ids().iter().map(|&s| sp_label[s as usize]).collect();
    HardSegmentation::new(full_h, full_w, k, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn soft(h: usize, w: usize, k: usize, probs: &[f64]) -> SoftSegmentation {
        SoftSegmentation::new(GridShape::new(h, w, k).unwrap(), probs.to_vec()).unwrap()
    }

    fn scores(h: usize, w: usize, k: usize, z: &[f64]) -> ScoreMap {
        ScoreMap::new(GridShape::new(h, w, k).unwrap(), z.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&scores(1, 1, 2, &[0.0, 0.0]));
        assert_eq!(p.as_slice(), &[0.5, 0.5]);

        let p = softmax(&scores(1, 1, 2, &[2f64.ln(), 0.0]));
        assert!((p.prob(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.prob(0, 1) - 1.0 / 3.0).abs() < 1e-15);

        let p = softmax(&scores(1, 1, 2, &[1000.0, 0.0]));
        assert!((p.prob(0, 0) - 1.0).abs() < 1e-12);
        assert!(p.prob(0, 1).abs() < 1e-12);
    }

    #[test]
    fn non_finite_scores_rejected() {
        let shape = GridShape::new(1, 1, 2).unwrap();
        assert!(ScoreMap::new(shape, vec![f64::NAN, 0.0]).is_err());
        assert!(ScoreMap::new(shape, vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn jacobian_examples() {
        let j = softmax_jacobian(&[0.5, 0.5]).unwrap();
        assert_eq!(j, vec![vec![0.25, -0.25], vec![-0.25, 0.25]]);

        let j = softmax_jacobian(&[1.0, 0.0]).unwrap();
        assert!(j.iter().flatten().all(|&v| v == 0.0));

        let j = softmax_jacobian(&[0.6, 0.4]).unwrap();
        let expect = [[0.24, -0.24], [-0.24, 0.24]];
        for a in 0..2 {
            for b in 0..2 {
                assert!((j[a][b] - expect[a][b]).abs() < 1e-15);
            }
        }
        assert!(softmax_jacobian(&[0.6, 0.6]).is_err());
    }

    #[test]
    fn downsample_examples() {
        let gt = HardSegmentation::new(2, 2, 3, vec![1, 1, 2, 2]).unwrap();
        assert_eq!(downsample_to_soft(&gt, 1, 1).unwrap().as_slice(), &[0.0, 0.5, 0.5]);

        let uniform = HardSegmentation::filled(7, 5, 4, 3).unwrap();
        let d = downsample_to_soft(&uniform, 3, 2).unwrap();
        for row in d.rows() {
            assert_eq!(row, &[0.0, 0.0, 0.0, 1.0]);
        }

        // 4x4 checkerboard, every 2x2 patch holds two of each class.
        let labels = (0..16).map(|i| ((i / 4 + i % 4) % 2) as u32).collect();
        let board = HardSegmentation::new(4, 4, 2, labels).unwrap();
        let d = downsample_to_soft(&board, 2, 2).unwrap();
        for row in d.rows() {
            assert_eq!(row, &[0.5, 0.5]);
        }

        assert!(downsample_to_soft(&board, 0, 2).is_err());
        assert!(downsample_to_soft(&board, 5, 2).is_err());
    }

    #[test]
    fn upsample_naive_examples() {
        let c = soft(1, 1, 3, &[0.2, 0.7, 0.1]);
        let up = upsample_naive(&c, 3, 3).unwrap();
        assert!(up.labels().iter().all(|&l| l == 1));

        let c = soft(1, 1, 2, &[0.5, 0.5]);
        let up = upsample_naive(&c, 2, 2).unwrap();
        assert!(up.labels().iter().all(|&l| l == 0));

        let c = soft(2, 1, 2, &[0.9, 0.1, 0.1, 0.9]);
        let up = upsample_naive(&c, 4, 2).unwrap();
        assert_eq!(up.labels(), &[0, 0, 0, 0, 1, 1, 1, 1]);

        assert!(upsample_naive(&c, 1, 2).is_err());
    }

    #[test]
    fn upsample_superpixel_examples() {
        // superpixels equal to the 2x1 patch partition of a 4x2 image
        let c = soft(2, 1, 2, &[0.9, 0.1, 0.1, 0.9]);
        let aligned = SuperpixelMap::new(4, 2, vec![0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
        assert_eq!(
            upsample_superpixel(&c, &aligned).unwrap(),
            upsample_naive(&c, 4, 2).unwrap()
        );

        // one superpixel over both equally sized patches: [0.5, 0.5] -> 0
        let whole = SuperpixelMap::new(4, 2, vec![0; 8]).unwrap();
        assert!(upsample_superpixel(&c, &whole)
            .unwrap()
            .labels()
            .iter()
            .all(|&l| l == 0));

        // superpixel 0 covers 3 pixels of patch [1,0] and 1 of patch [0,1]
        let c = soft(2, 1, 2, &[1.0, 0.0, 0.0, 1.0]);
        let sp = SuperpixelMap::new(4, 2, vec![0, 0, 0, 1, 0, 1, 1, 1]).unwrap();
        let up = upsample_superpixel(&c, &sp).unwrap();
        assert_eq!(up.labels(), &[0, 0, 0, 1, 0, 1, 1, 1]);
    }

    #[test]
    fn superpixel_ids_must_be_contiguous() {
        assert!(SuperpixelMap::new(1, 3, vec![0, 2, 2]).is_err());
        assert!(SuperpixelMap::new(1, 3, vec![0, 1, 1]).is_ok());
    }

    #[test]
    fn soft_segmentation_validation() {
        let shape = GridShape::new(1, 1, 2).unwrap();
        assert!(SoftSegmentation::new(shape, vec![0.6, 0.6]).is_err());
        assert!(SoftSegmentation::new(shape, vec![1.1, -0.1]).is_err());
        assert!(SoftSegmentation::new(shape, vec![0.5]).is_err());
        assert!(GridShape::new(1, 1, 1).is_err());
    }

    #[test]
    fn clamped_rows_stay_distributions() {
        let c = soft(1, 2, 3, &[1.0, 0.0, 0.0, 0.2, 0.3, 0.5]).clamped();
        for row in c.rows() {
            assert!(row.iter().all(|&p| p >= PROB_EPS * 0.999));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((c.prob(0, 0) - 1.0 / (1.0 + 2.0 * PROB_EPS)).abs() < 1e-15);
    }

    #[test]
    fn patch_bounds_non_divisible() {
        assert_eq!(patch_bounds(5, 2), vec![0, 3, 5]);
        assert_eq!(patch_bounds(32, 13), {
            let b: Vec<usize> = (0..=13).map(|r| ((r * 32) as f64 / 13.0).round() as usize).collect();
            b
        });
    }
}
