//! Scoring and selection among segmentation proposals.
//!
//! Given a coarse soft prediction `q` and a set of candidate segmentations
//! (each downsampled to the same coarse grid), a proposal can be chosen by
//!
//! * the symmetric-KL score with a background penalty (lowest wins),
//! * a linear ranker over KL and expected-overlap features (highest wins),
//! * the oracle, which peeks at the ground truth and upper-bounds both.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::format::{parse_err, parse_fields, Lines};
use crate::losses::expected_overlap;
use crate::metrics::{class_iou, confusion_counts, mean_iou};
use crate::seg::{
    argmax, clamp_row, downsample_to_soft, ensure_same_shape, HardSegmentation, SoftSegmentation, PROB_EPS,
};

/// Weight of the background-mass penalty in [`kl_score`].
pub const DEFAULT_BACKGROUND_PENALTY: f64 = 0.02;

/// Candidate segmentations for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    image_id: String,
    coarse: Vec<SoftSegmentation>,
    full_res: Option<Vec<HardSegmentation>>,
}

impl ProposalSet {
    /// When `full_res` is given, `coarse[m]` must be its downsampling
    /// (within 1e-9 per entry).
    pub fn new(
        image_id: impl Into<String>,
        coarse: Vec<SoftSegmentation>,
        full_res: Option<Vec<HardSegmentation>>,
    ) -> Result<Self> {
        let Some(first) = coarse.first() else {
            return invalid("a proposal set needs at least one member");
        };
        for c in &coarse {
            ensure_same_shape(first.shape(), c.shape(), "proposal set")?;
        }
        if let Some(full) = &full_res {
            if full.len() != coarse.len() {
                return invalid(format!(
                    "{} coarse members but {} full-resolution",
                    coarse.len(),
                    full.len()
                ));
            }
            for (m, (f, c)) in full.iter().zip(&coarse).enumerate() {
                if f.shape() != full[0].shape() {
                    return invalid("full-resolution proposals differ in shape");
                }
                let expect = downsample_to_soft(f, c.height(), c.width())?;
                ensure_same_shape(expect.shape(), c.shape(), "proposal set")?;
                let off = expect
                    .as_slice()
                    .iter()
                    .zip(c.as_slice())
                    .any(|(a, b)| (a - b).abs() > 1e-9);
                if off {
                    return invalid(format!(
                        "coarse member {m} is not the downsampling of its full-resolution proposal"
                    ));
                }
            }
        }
        Ok(Self {
            image_id: image_id.into(),
            coarse,
            full_res,
        })
    }

    /// Builds the coarse members by downsampling `full_res`.
    pub fn from_full_res(
        image_id: impl Into<String>,
        full_res: Vec<HardSegmentation>,
        coarse_h: usize,
        coarse_w: usize,
    ) -> Result<Self> {
        let coarse = full_res
            .iter()
            .map(|f| downsample_to_soft(f, coarse_h, coarse_w))
            .collect::<Result<Vec<_>>>()?;
        Self::new(image_id, coarse, Some(full_res))
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn len(&self) -> usize {
        self.coarse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coarse.is_empty()
    }

    pub fn coarse(&self) -> &[SoftSegmentation] {
        &self.coarse
    }

    pub fn full_res(&self) -> Option<&[HardSegmentation]> {
        self.full_res.as_deref()
    }

    /// The first `m` members.
    pub fn prefix(&self, m: usize) -> Result<ProposalSet> {
        if m == 0 || m > self.len() {
            return invalid(format!("prefix length {m} outside 1..={}", self.len()));
        }
        Ok(ProposalSet {
            image_id: self.image_id.clone(),
            coarse: self.coarse[..m].to_vec(),
            full_res: self.full_res.as_ref().map(|f| f[..m].to_vec()),
        })
    }
}

fn kl_rows(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum()
}

/// Both KL directions summed over pixels, on clamped rows.
fn kl_pair(pred: &SoftSegmentation, proposal: &SoftSegmentation) -> Result<(f64, f64)> {
    ensure_same_shape(pred.shape(), proposal.shape(), "kl")?;
    let k = pred.classes();
    let (mut p, mut q) = (vec![0.0; k], vec![0.0; k]);
    let (mut forward, mut backward) = (0.0, 0.0);
    for (pr, qr) in pred.rows().zip(proposal.rows()) {
        p.copy_from_slice(pr);
        q.copy_from_slice(qr);
        clamp_row(&mut p);
        clamp_row(&mut q);
        forward += kl_rows(&p, &q);
        backward += kl_rows(&q, &p);
    }
    Ok((forward, backward))
}

/// `sum_i KL(pred_i || proposal_i) + KL(proposal_i || pred_i) + penalty * proposal[i,0]`.
/// Natural log; lower is better.
pub fn kl_score(pred: &SoftSegmentation, proposal: &SoftSegmentation, background_penalty: f64) -> Result<f64> {
    let (forward, backward) = kl_pair(pred, proposal)?;
    let background: f64 = proposal.rows().map(|r| r[0]).sum();
    Ok(forward + backward + background_penalty * background)
}

/// Index of the lowest [`kl_score`]; the lowest index wins ties.
pub fn select_by_score(pred: &SoftSegmentation, set: &ProposalSet, background_penalty: f64) -> Result<usize> {
    let scores = set
        .coarse()
        .iter()
        .map(|q| kl_score(pred, q, background_penalty).map(|s| -s))
        .collect::<Result<Vec<_>>>()?;
    Ok(argmax(&scores))
}

/// Features describing a proposal relative to the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub kl_forward: f64,
    pub kl_backward: f64,
    pub intersection: Vec<f64>,
    pub union: Vec<f64>,
    pub ratio_iu: Vec<f64>,
    pub ratio_ui: Vec<f64>,
    /// Externally computed features appended after the built-in block.
    pub extra: Vec<f64>,
}

/// Length of the built-in feature block for `classes` classes.
pub fn feature_len(classes: usize) -> usize {
    2 + 4 * classes
}

impl FeatureVector {
    pub fn with_extra(mut self, extra: Vec<f64>) -> Self {
        self.extra = extra;
        self
    }

    pub fn len(&self) -> usize {
        2 + self.intersection.len() * 4 + self.extra.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Layout: `[kl_fwd, kl_bwd, EI.., EU.., EI/EU.., EU/EI.., extra..]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.push(self.kl_forward);
        v.push(self.kl_backward);
        v.extend(&self.intersection);
        v.extend(&self.union);
        v.extend(&self.ratio_iu);
        v.extend(&self.ratio_ui);
        v.extend(&self.extra);
        v
    }
}

/// KL and expected-overlap features of `proposal` against `pred`. Both
/// ratio denominators are floored at `PROB_EPS * N`.
pub fn proposal_features(pred: &SoftSegmentation, proposal: &SoftSegmentation) -> Result<FeatureVector> {
    let (kl_forward, kl_backward) = kl_pair(pred, proposal)?;
    let overlap = expected_overlap(pred, proposal)?;
    let floor = PROB_EPS * pred.pixels() as f64;
    let ei = overlap.intersection().to_vec();
    let eu = overlap.union().to_vec();
    let ratio_iu = ei.iter().zip(&eu).map(|(i, u)| i / u.max(floor)).collect();
    let ratio_ui = ei.iter().zip(&eu).map(|(i, u)| u / i.max(floor)).collect();
    Ok(FeatureVector {
        kl_forward,
        kl_backward,
        intersection: ei,
        union: eu,
        ratio_iu,
        ratio_ui,
        extra: Vec::new(),
    })
}

/// Feature rows of every proposal in a set, in index order.
pub fn set_features(pred: &SoftSegmentation, set: &ProposalSet) -> Result<Vec<Vec<f64>>> {
    set.coarse()
        .iter()
        .map(|q| proposal_features(pred, q).map(|f| f.to_vec()))
        .collect()
}

/// Linear scorer `w . standardize(phi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankModel {
    pub weights: Vec<f64>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub lambda: f64,
    pub epochs: usize,
}

impl RankModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn score(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.dim() {
            return invalid(format!("model expects {} features, got {}", self.dim(), features.len()));
        }
        Ok(features
            .iter()
            .zip(&self.weights)
            .zip(self.mean.iter().zip(&self.scale))
            .map(|((x, w), (m, s))| w * (x - m) / s)
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// `RANKMODEL dim lambda epochs`, then `dim` weights, `dim` means and
    /// `dim` scales, one per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("RANKMODEL {} {} {}\n", self.dim(), self.lambda, self.epochs);
        for v in self.weights.iter().chain(&self.mean).chain(&self.scale) {
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<RankModel> {
        let mut lines = Lines::new(text);
        let (no, header) = lines.next_line()?;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        if tokens.first() != Some(&"RANKMODEL") || !(3..=4).contains(&tokens.len()) {
            return Err(parse_err(no, "expected header RANKMODEL dim lambda [epochs]"));
        }
        let dim: usize = tokens[1].parse().map_err(|_| parse_err(no, "bad dimension"))?;
        let lambda: f64 = tokens[2].parse().map_err(|_| parse_err(no, "bad lambda"))?;
        let epochs: usize = match tokens.get(3) {
            Some(t) => t.parse().map_err(|_| parse_err(no, "bad epoch count"))?,
            None => 0,
        };
        let mut values = Vec::with_capacity(3 * dim);
        for _ in 0..3 * dim {
            let (no, line) = lines.next_line()?;
            values.push(parse_fields::<f64>(no, line, 1)?[0]);
        }
        lines.expect_end()?;
        let scale = values.split_off(2 * dim);
        let mean = values.split_off(dim);
        if scale.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return Err(parse_err(no, "standardization scales must be positive"));
        }
        Ok(RankModel {
            weights: values,
            mean,
            scale,
            lambda,
            epochs,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankerConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for RankerConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            epochs: 50,
            learning_rate: 1e-2,
            seed: 0,
        }
    }
}

/// Feature rows and quality scores of one image's proposals.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingGroup {
    pub features: Vec<Vec<f64>>,
    pub quality: Vec<f64>,
}

impl RankingGroup {
    pub fn from_set(pred: &SoftSegmentation, set: &ProposalSet, quality: Vec<f64>) -> Result<Self> {
        if quality.len() != set.len() {
            return invalid(format!("{} quality scores for {} proposals", quality.len(), set.len()));
        }
        Ok(Self {
            features: set_features(pred, set)?,
            quality,
        })
    }
}

/// Trains a linear ranker with the pairwise hinge loss
/// `max(0, 1 - w . (phi(best) - phi(other)))` plus `lambda/2 |w|^2`.
///
/// Pairs are (best, other) for every proposal of lower quality than the
/// best of its image. Features are standardized with statistics of the
/// training proposals. Optimization is per-pair subgradient descent with
/// step `learning_rate / sqrt(epoch)`, visiting pairs in an order shuffled
/// from `seed` each epoch.
pub fn train_ranker(groups: &[RankingGroup], cfg: &RankerConfig) -> Result<RankModel> {
    if cfg.lambda.is_nan()
        || cfg.lambda < 0.0
        || cfg.learning_rate.is_nan()
        || cfg.learning_rate <= 0.0
        || cfg.epochs == 0
    {
        return invalid("ranker needs lambda >= 0, learning_rate > 0 and epochs >= 1");
    }
    let dim = groups
        .iter()
        .flat_map(|g| g.features.first())
        .map(Vec::len)
        .next()
        .ok_or_else(|| Error::TrainingDegenerate("no training proposals".into()))?;
    for g in groups {
        if g.features.len() != g.quality.len() {
            return invalid("each proposal needs exactly one quality score");
        }
        if g.features.iter().any(|f| f.len() != dim) {
            return invalid("feature vectors differ in length");
        }
    }

    let rows: Vec<&Vec<f64>> = groups.iter().flat_map(|g| &g.features).collect();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in &rows {
        for (m, x) in mean.iter_mut().zip(r.iter()) {
            *m += x / n;
        }
    }
    let mut scale = vec![0.0; dim];
    for r in &rows {
        for ((s, x), m) in scale.iter_mut().zip(r.iter()).zip(&mean) {
            *s += (x - m) * (x - m) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }

    let mut diffs: Vec<Vec<f64>> = Vec::new();
    for g in groups {
        let best = argmax(&g.quality);
        for (m, &q) in g.quality.iter().enumerate() {
            if q < g.quality[best] {
                diffs.push(
                    (0..dim)
                        .map(|d| (g.features[best][d] - g.features[m][d]) / scale[d])
                        .collect(),
                );
            }
        }
    }
    if diffs.is_empty() {
        return Err(Error::TrainingDegenerate(
            "all proposals of every image have equal quality".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    let mut w = vec![0.0; dim];
    for epoch in 1..=cfg.epochs {
        let step = cfg.learning_rate / (epoch as f64).sqrt();
        order.shuffle(&mut rng);
        for &p in &order {
            let d = &diffs[p];
            let margin: f64 = w.iter().zip(d).map(|(a, b)| a * b).sum();
            let shrink = 1.0 - step * cfg.lambda;
            for wi in &mut w {
                *wi *= shrink;
            }
            if margin < 1.0 {
                for (wi, di) in w.iter_mut().zip(d) {
                    *wi += step * di;
                }
            }
        }
    }
    Ok(RankModel {
        weights: w,
        mean,
        scale,
        lambda: cfg.lambda,
        epochs: cfg.epochs,
    })
}

/// Index with the highest model score; the lowest index wins ties.
pub fn rank_select(model: &RankModel, pred: &SoftSegmentation, set: &ProposalSet) -> Result<usize> {
    let scores = set_features(pred, set)?
        .iter()
        .map(|f| model.score(f))
        .collect::<Result<Vec<_>>>()?;
    Ok(argmax(&scores))
}

/// Mean IOU of one proposal against the ground truth of the same image,
/// over classes present in either.
pub fn image_quality(proposal: &HardSegmentation, gt: &HardSegmentation) -> Result<f64> {
    let counts = confusion_counts(std::slice::from_ref(proposal), std::slice::from_ref(gt))?;
    class_iou(&counts)
        .mean()
        .ok_or_else(|| Error::DegenerateInput("no classes present".into()))
}

/// Quality of every full-resolution proposal.
pub fn set_quality(set: &ProposalSet, gt: &HardSegmentation) -> Result<Vec<f64>> {
    let full = set
        .full_res()
        .ok_or_else(|| Error::InvalidInput(format!("set {} has no full-resolution proposals", set.image_id())))?;
    full.iter().map(|f| image_quality(f, gt)).collect()
}

/// The most accurate proposal and its quality.
pub fn oracle_select(set: &ProposalSet, gt: &HardSegmentation) -> Result<(usize, f64)> {
    let quality = set_quality(set, gt)?;
    let best = argmax(&quality);
    Ok((best, quality[best]))
}

/// One image prepared for re-ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankImage {
    /// Coarse soft prediction of the segmenter.
    pub pred: SoftSegmentation,
    pub set: ProposalSet,
    pub gt: Option<HardSegmentation>,
}

impl RerankImage {
    pub fn id(&self) -> &str {
        self.set.image_id()
    }

    fn gt(&self) -> Result<&HardSegmentation> {
        self.gt
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("image {} has no ground truth", self.id())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Kl {
        background_penalty: f64,
    },
    Ranker,
    Oracle,
    /// Uniformly random member.
    Random,
    /// Member 0, the segmenter's own best guess.
    First,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Kl { .. } => "kl",
            Strategy::Ranker => "ranker",
            Strategy::Oracle => "oracle",
            Strategy::Random => "random",
            Strategy::First => "first",
        }
    }
}

/// Picks one member of `image.set` with `strategy`. `model` is required by
/// the ranker, `rng` is used by random selection only.
pub fn select(strategy: Strategy, image: &RerankImage, model: Option<&RankModel>, rng: &mut impl Rng) -> Result<usize> {
    match strategy {
        Strategy::Kl { background_penalty } => select_by_score(&image.pred, &image.set, background_penalty),
        Strategy::Ranker => {
            let model = model.ok_or_else(|| Error::InvalidInput("ranker selection needs a model".into()))?;
            rank_select(model, &image.pred, &image.set)
        }
        Strategy::Oracle => Ok(oracle_select(&image.set, image.gt()?)?.0),
        Strategy::Random => Ok(rng.random_range(0..image.set.len())),
        Strategy::First => Ok(0),
    }
}

/// Corpus-level mean IOU of the selected full-resolution proposals.
pub fn selection_mean_iou(images: &[RerankImage], selections: &[usize]) -> Result<f64> {
    if images.len() != selections.len() {
        return invalid(format!("{} selections for {} images", selections.len(), images.len()));
    }
    let mut preds = Vec::with_capacity(images.len());
    let mut gts = Vec::with_capacity(images.len());
    for (image, &m) in images.iter().zip(selections) {
        let full = image
            .set
            .full_res()
            .ok_or_else(|| Error::InvalidInput(format!("set {} has no full-resolution proposals", image.id())))?;
        let chosen = full
            .get(m)
            .ok_or_else(|| Error::InvalidInput(format!("selection {m} out of range for {}", image.id())))?;
        preds.push(chosen.clone());
        gts.push(image.gt()?.clone());
    }
    mean_iou(&confusion_counts(&preds, &gts)?).ok_or_else(|| Error::DegenerateInput("no classes present".into()))
}

/// One selection per image. Random draws come from a generator seeded
/// with `seed`.
pub fn select_all(
    strategy: Strategy,
    images: &[RerankImage],
    model: Option<&RankModel>,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    images.iter().map(|im| select(strategy, im, model, &mut rng)).collect()
}

/// Mean over `draws` independent random selections of their corpus mean
/// IOU.
pub fn random_selection_mean(images: &[RerankImage], draws: usize, seed: u64) -> Result<f64> {
    if draws == 0 {
        return invalid("need at least one random draw");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..draws {
        let picks = images
            .iter()
            .map(|im| select(Strategy::Random, im, None, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        total += selection_mean_iou(images, &picks)?;
    }
    Ok(total / draws as f64)
}

/// Average over images of the per-image quality of each selection.
pub fn selection_image_quality(images: &[RerankImage], selections: &[usize]) -> Result<f64> {
    if images.is_empty() || images.len() != selections.len() {
        return invalid("need one selection per image and at least one image");
    }
    let mut total = 0.0;
    for (im, &m) in images.iter().zip(selections) {
        let quality = set_quality(&im.set, im.gt()?)?;
        total += *quality
            .get(m)
            .ok_or_else(|| Error::InvalidInput(format!("selection {m} out of range for {}", im.id())))?;
    }
    Ok(total / images.len() as f64)
}

/// Training groups with per-image proposal quality as the target.
pub fn ranking_groups(images: &[RerankImage]) -> Result<Vec<RankingGroup>> {
    images
        .iter()
        .map(|im| RankingGroup::from_set(&im.pred, &im.set, set_quality(&im.set, im.gt()?)?))
        .collect()
}
