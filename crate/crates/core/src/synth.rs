//! Seeded synthetic corpora and proposal sets.
//!
//! Ground truths are background canvases with axis-aligned foreground
//! rectangles. Each pixel carries a `D`-dimensional feature: the one-hot
//! code of its class (in the first `K` dims) plus Gaussian noise, so a
//! linear model can separate classes but not perfectly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::rerank::{ProposalSet, RerankImage};
use crate::seg::{downsample_to_soft, HardSegmentation};

/// Standard deviation of the feature noise.
pub const FEATURE_NOISE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage {
    /// `pixels x feature_dim`, row-major.
    pub features: Vec<f64>,
    pub gt: HardSegmentation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub seed: u64,
    pub classes: usize,
    pub feature_dim: usize,
    pub bg_fraction: f64,
    pub images: Vec<SyntheticImage>,
}

impl SyntheticDataset {
    pub fn pixels(&self) -> usize {
        self.images.iter().map(|im| im.gt.pixels()).sum()
    }

    /// Fraction of ground-truth pixels labelled background.
    pub fn background_fraction(&self) -> f64 {
        let bg: usize = self.images.iter().map(|im| im.gt.count(0)).sum();
        bg as f64 / self.pixels() as f64
    }

    pub fn ground_truths(&self) -> Vec<HardSegmentation> {
        self.images.iter().map(|im| im.gt.clone()).collect()
    }
}

/// Generates `count` images of `height x width` pixels.
///
/// Each image receives foreground rectangles until `1 - bg_fraction` of
/// its pixels are foreground; rectangles only paint background pixels and
/// are sized so the last one barely overshoots. Foreground classes are
/// assigned round-robin across the corpus so every class appears.
pub fn gen_synthetic(
    seed: u64,
    count: usize,
    height: usize,
    width: usize,
    classes: usize,
    feature_dim: usize,
    bg_fraction: f64,
) -> Result<SyntheticDataset> {
    if classes < 2 {
        return invalid("need at least 2 classes");
    }
    if feature_dim < classes {
        return invalid(format!(
            "feature dimension {feature_dim} smaller than class count {classes}"
        ));
    }
    if !(0.0..1.0).contains(&bg_fraction) {
        return invalid(format!("background fraction {bg_fraction} must lie in [0, 1)"));
    }
    if count == 0 || height == 0 || width == 0 {
        return invalid("need at least one non-empty image");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = height * width;
    let target_fg = ((1.0 - bg_fraction) * pixels as f64).round() as usize;
    let max_h = (height / 4).max(1);
    let max_w = (width / 4).max(1);
    let mut next_class = 0usize;
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        let mut labels = vec![0u32; pixels];
        let mut painted = 0usize;
        while painted < target_fg {
            let remaining = target_fg - painted;
            let rh = rng.random_range(1..=max_h);
            let rw_cap = max_w.min(remaining.div_ceil(rh)).max(1);
            let rw = rng.random_range(1..=rw_cap);
            let r0 = rng.random_range(0..=height - rh);
            let c0 = rng.random_range(0..=width - rw);
            let class = 1 + (next_class % (classes - 1)) as u32;
            next_class += 1;
            for r in r0..r0 + rh {
                for c in c0..c0 + rw {
                    let px = &mut labels[r * width + c];
                    if *px == 0 {
                        *px = class;
                        painted += 1;
                    }
                }
            }
        }
        let gt = HardSegmentation::new(height, width, classes, labels)?;
        let mut features = vec![0.0; pixels * feature_dim];
        for (i, row) in features.chunks_exact_mut(feature_dim).enumerate() {
            for (d, x) in row.iter_mut().enumerate() {
                let noise: f64 = rng.sample(StandardNormal);
                let signal = if d == gt.label(i) as usize { 1.0 } else { 0.0 };
                *x = signal + FEATURE_NOISE * noise;
            }
        }
        images.push(SyntheticImage { features, gt });
    }
    Ok(SyntheticDataset {
        seed,
        classes,
        feature_dim,
        bg_fraction,
        images,
    })
}

/// Parameters of [`gen_proposals`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalConfig {
    /// Number of perturbed copies of the ground truth.
    pub count: usize,
    pub seed: u64,
    /// Probability that a block is relabelled to a random class.
    pub flip_rate: f64,
    /// Maximum translation, in pixels, along each axis.
    pub shift_max: usize,
    /// Side of the square blocks that get relabelled.
    pub block: usize,
    /// Also insert the unperturbed ground truth at a seeded position.
    pub include_gt: bool,
    pub coarse_h: usize,
    pub coarse_w: usize,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            count: 10,
            seed: 0,
            flip_rate: 0.1,
            shift_max: 2,
            block: 4,
            include_gt: false,
            coarse_h: 13,
            coarse_w: 13,
        }
    }
}

/// Translates `gt` by `(dy, dx)`, replicating edge pixels.
fn shifted(gt: &HardSegmentation, dy: i64, dx: i64) -> Vec<u32> {
    let (h, w) = (gt.height() as i64, gt.width() as i64);
    let mut out = Vec::with_capacity(gt.pixels());
    for r in 0..h {
        for c in 0..w {
            let sr = (r - dy).clamp(0, h - 1);
            let sc = (c - dx).clamp(0, w - 1);
            out.push(gt.at(sr as usize, sc as usize));
        }
    }
    out
}

/// One perturbed copy: a random translation followed by block relabels.
pub fn perturb(
    gt: &HardSegmentation,
    rng: &mut impl Rng,
    flip_rate: f64,
    shift_max: usize,
    block: usize,
) -> Result<HardSegmentation> {
    let s = shift_max as i64;
    let dy = rng.random_range(-s..=s);
    let dx = rng.random_range(-s..=s);
    let mut labels = shifted(gt, dy, dx);
    let (h, w) = (gt.height(), gt.width());
    let block = block.max(1);
    for br in (0..h).step_by(block) {
        for bc in (0..w).step_by(block) {
            if rng.random::<f64>() < flip_rate {
                let class = rng.random_range(0..gt.classes()) as u32;
                for r in br..(br + block).min(h) {
                    for c in bc..(bc + block).min(w) {
                        labels[r * w + c] = class;
                    }
                }
            }
        }
    }
    HardSegmentation::new(h, w, gt.classes(), labels)
}

/// `count` perturbations of `gt`, plus `gt` itself at a seeded index when
/// `include_gt` is set, each downsampled to the coarse grid.
pub fn gen_proposals(image_id: &str, gt: &HardSegmentation, cfg: &ProposalConfig) -> Result<ProposalSet> {
    if cfg.count == 0 {
        return invalid("need at least one proposal");
    }
    if !(0.0..=1.0).contains(&cfg.flip_rate) {
        return invalid(format!("flip rate {} outside [0, 1]", cfg.flip_rate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut members = (0..cfg.count)
        .map(|_| perturb(gt, &mut rng, cfg.flip_rate, cfg.shift_max, cfg.block))
        .collect::<Result<Vec<_>>>()?;
    if cfg.include_gt {
        let at = rng.random_range(0..=members.len());
        members.insert(at, gt.clone());
    }
    ProposalSet::from_full_res(image_id, members, cfg.coarse_h, cfg.coarse_w)
}

/// Parameters of [`gen_rerank_corpus`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RerankCorpusConfig {
    pub seed: u64,
    pub images: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub bg_fraction: f64,
    /// Block relabel rate of the simulated segmenter output.
    pub pred_flip_rate: f64,
    /// Insert the segmenter's full-resolution output into its own set.
    pub embed_pred: bool,
    /// Proposal generation; `seed` is replaced per image.
    pub proposals: ProposalConfig,
}

impl Default for RerankCorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            images: 50,
            height: 32,
            width: 32,
            classes: 5,
            bg_fraction: 0.7,
            pred_flip_rate: 0.15,
            embed_pred: false,
            proposals: ProposalConfig::default(),
        }
    }
}

/// Images with a simulated coarse prediction, a proposal set and the
/// ground truth. The prediction is the downsampling of a perturbed copy
/// of the ground truth; proposals are independent perturbations.
pub fn gen_rerank_corpus(cfg: &RerankCorpusConfig) -> Result<Vec<RerankImage>> {
    let data = gen_synthetic(
        cfg.seed,
        cfg.images,
        cfg.height,
        cfg.width,
        cfg.classes,
        cfg.classes,
        cfg.bg_fraction,
    )?;
    let (ch, cw) = (cfg.proposals.coarse_h, cfg.proposals.coarse_w);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f5e75);
    data.images
        .into_iter()
        .enumerate()
        .map(|(i, im)| {
            let id = format!("img_{i:03}");
            let pred_full = perturb(&im.gt, &mut rng, cfg.pred_flip_rate, 1, cfg.proposals.block)?;
            let pred = downsample_to_soft(&pred_full, ch, cw)?;
            let proposal_cfg = ProposalConfig {
                seed: rng.random(),
                ..cfg.proposals
            };
            let mut set = gen_proposals(&id, &im.gt, &proposal_cfg)?;
            if cfg.embed_pred {
                let mut members = set.full_res().expect("generated sets are full resolution").to_vec();
                members.insert(rng.random_range(0..=members.len()), pred_full);
                set = ProposalSet::from_full_res(id, members, ch, cw)?;
            }
            Ok(RerankImage {
                pred,
                set,
                gt: Some(im.gt),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let a = gen_synthetic(3, 4, 16, 16, 4, 6, 0.8).unwrap();
        let b = gen_synthetic(3, 4, 16, 16, 4, 6, 0.8).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(4, 4, 16, 16, 4, 6, 0.8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn background_fraction_near_target() {
        let d = gen_synthetic(0, 50, 32, 32, 5, 8, 0.9).unwrap();
        let bg = d.background_fraction();
        assert!((0.85..=0.95).contains(&bg), "background fraction {bg}");
    }

    #[test]
    fn every_class_appears() {
        let d = gen_synthetic(11, 3, 32, 32, 7, 7, 0.7).unwrap();
        for k in 0..7 {
            assert!(d.images.iter().any(|im| im.gt.count(k) > 0), "class {k} missing");
        }
    }

    #[test]
    fn invalid_parameters() {
        assert!(gen_synthetic(0, 1, 8, 8, 5, 8, 1.0).is_err());
        assert!(gen_synthetic(0, 1, 8, 8, 5, 4, 0.5).is_err());
        assert!(gen_synthetic(0, 1, 8, 8, 1, 4, 0.5).is_err());
    }

    #[test]
    fn clean_proposals_equal_gt() {
        let d = gen_synthetic(1, 1, 16, 16, 3, 3, 0.7).unwrap();
        let gt = &d.images[0].gt;
        let cfg = ProposalConfig {
            count: 4,
            flip_rate: 0.0,
            shift_max: 0,
            coarse_h: 4,
            coarse_w: 4,
            ..Default::default()
        };
        let set = gen_proposals("img", gt, &cfg).unwrap();
        assert!(set.full_res().unwrap().iter().all(|p| p == gt));
    }

    #[test]
    fn include_gt_adds_one_member() {
        let d = gen_synthetic(1, 1, 16, 16, 3, 3, 0.7).unwrap();
        let gt = &d.images[0].gt;
        let cfg = ProposalConfig {
            count: 5,
            flip_rate: 0.5,
            include_gt: true,
            coarse_h: 4,
            coarse_w: 4,
            ..Default::default()
        };
        let set = gen_proposals("img", gt, &cfg).unwrap();
        assert_eq!(set.len(), 6);
        assert!(set.full_res().unwrap().iter().any(|p| p == gt));
    }
}
