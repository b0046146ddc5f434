//! Helpers shared by the integration tests: seeded random instances and
//! naive reference implementations written directly from the definitions.

#![allow(dead_code)]

use corpusseg::{GridShape, HardSegmentation, ScoreMap, SoftSegmentation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_hard(rng: &mut impl Rng, h: usize, w: usize, k: usize) -> HardSegmentation {
    let labels = (0..h * w).map(|_| rng.random_range(0..k as u32)).collect();
    HardSegmentation::new(h, w, k, labels).unwrap()
}

pub fn random_scores(rng: &mut impl Rng, h: usize, w: usize, k: usize) -> ScoreMap {
    let shape = GridShape::new(h, w, k).unwrap();
    ScoreMap::new(shape, (0..h * w * k).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Random strictly positive distribution per pixel.
pub fn random_soft(rng: &mut impl Rng, h: usize, w: usize, k: usize) -> SoftSegmentation {
    let mut probs = Vec::with_capacity(h * w * k);
    for _ in 0..h * w {
        let row: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = row.iter().sum();
        probs.extend(row.iter().map(|x| x / total));
    }
    SoftSegmentation::new(GridShape::new(h, w, k).unwrap(), probs).unwrap()
}

pub fn rows(seg: &SoftSegmentation) -> Vec<Vec<f64>> {
    seg.rows().map(|r| r.to_vec()).collect()
}

pub fn naive_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn naive_softmax_rows(z: &ScoreMap) -> Vec<Vec<f64>> {
    z.as_slice().chunks(z.shape().classes).map(naive_softmax).collect()
}

/// `(EI, EU, gt mass)` by explicit double loop.
pub fn naive_overlap(pred: &[Vec<f64>], gt: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let k = pred[0].len();
    let (mut ei, mut eu, mut mass) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    for c in 0..k {
        for i in 0..pred.len() {
            ei[c] += pred[i][c] * gt[i][c];
            eu[c] += pred[i][c] + gt[i][c] - pred[i][c] * gt[i][c];
            mass[c] += gt[i][c];
        }
    }
    (ei, eu, mass)
}

pub fn naive_iou(pred: &[Vec<f64>], gt: &[Vec<f64>]) -> f64 {
    let (ei, eu, mass) = naive_overlap(pred, gt);
    (0..ei.len()).filter(|&c| mass[c] > 0.0).map(|c| ei[c] / eu[c]).sum()
}

pub fn naive_uoi(pred: &[Vec<f64>], gt: &[Vec<f64>]) -> f64 {
    let (ei, eu, mass) = naive_overlap(pred, gt);
    (0..ei.len()).filter(|&c| mass[c] > 0.0).map(|c| eu[c] / ei[c]).sum()
}

pub fn naive_ce(pred: &[Vec<f64>], gt: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (q, p) in pred.iter().zip(gt) {
        for (qk, pk) in q.iter().zip(p) {
            if *pk > 0.0 {
                total -= pk * qk.max(1e-7).ln();
            }
        }
    }
    total / pred.len() as f64
}

/// Symmetric KL of two distributions, natural log, no clamping.
pub fn naive_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum()
}
