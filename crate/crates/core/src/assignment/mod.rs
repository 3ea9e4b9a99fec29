//! Position scoring, assignment decoding, and the training losses.

mod hungarian;

pub use hungarian::{assignment_cost, hungarian};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mat, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::FeedForward;
use crate::puzzle::{Axis, GridGeometry, Permutation};

/// Decodes piece→position logits into a bijection by minimizing `−O`.
pub fn decode(scores: &Mat) -> Result<Permutation> {
    hungarian(&scores.mapv(|x| -x))
}

/// Two-layer per-piece MLP from fused features to N position logits.
#[derive(Clone, Debug)]
pub struct PredictionHead {
    pub mlp: FeedForward,
}

impl PredictionHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, d_v: usize, n: usize, rng: &mut R) -> Self {
        Self {
            mlp: FeedForward::new(store, "head", d_v, d_v, n, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, fused: Var) -> Var {
        self.mlp.forward(g, fused)
    }

    /// Scores on plain values.
    pub fn predict_scores(&self, store: &ParamStore, fused: &Mat) -> Mat {
        let mut g = Graph::new(store);
        let x = g.constant(fused.clone());
        let y = self.forward(&mut g, x);
        g.value(y).clone()
    }
}

/// Smoothed targets: `1 − s` at the true position, `s/(N−1)` elsewhere.
pub fn smoothed_targets(truth: &Permutation, smoothing: f64) -> Result<Mat> {
    let n = truth.len();
    if !(0.0..0.5).contains(&smoothing) {
        return Err(Error::arg(format!("label smoothing {smoothing} outside [0, 0.5)")));
    }
    let off = if n > 1 { smoothing / (n - 1) as f64 } else { 0.0 };
    let mut t = Mat::from_elem((n, n), off);
    for (i, &j) in truth.as_slice().iter().enumerate() {
        t[[i, j]] = 1.0 - smoothing;
    }
    Ok(t)
}

/// Mean over pieces of the smoothed cross-entropy between `softmax(O_i)`
/// and the target row of piece `i`.
pub fn assign_loss_var(g: &mut Graph, scores: Var, truth: &Permutation, smoothing: f64) -> Result<Var> {
    let (n, m) = g.shape(scores);
    if n != m || truth.len() != n {
        return Err(Error::arg(format!(
            "scores are {n}x{m} but the truth has {} pieces",
            truth.len()
        )));
    }
    let t = g.constant(smoothed_targets(truth, smoothing)?);
    let logp = g.log_softmax_rows(scores);
    let prod = g.mul(t, logp);
    let s = g.sum(prod);
    Ok(g.scale(s, -1.0 / n as f64))
}

pub fn assign_loss(scores: &Mat, truth: &Permutation, smoothing: f64) -> Result<f64> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let s = g.constant(scores.clone());
    let l = assign_loss_var(&mut g, s, truth, smoothing)?;
    Ok(g.scalar(l))
}

/// Ordered piece pairs `(a, b)` whose true cells are adjacent along `axis`
/// (`b` right of / below `a`).
pub fn adjacent_piece_pairs(truth: &Permutation, geometry: &GridGeometry, axis: Axis) -> Vec<(usize, usize)> {
    let piece_at = truth.inverse();
    geometry
        .adjacent_cells(axis)
        .into_iter()
        .map(|(ca, cb)| (piece_at.get(ca), piece_at.get(cb)))
        .collect()
}

/// Positive and sampled negative pairs for one axis as two 0/1 masks.
pub fn pair_masks<R: Rng + ?Sized>(
    truth: &Permutation,
    geometry: &GridGeometry,
    axis: Axis,
    rng: &mut R,
) -> (Mat, Mat) {
    let n = truth.len();
    let mut pos = Mat::zeros((n, n));
    let positives = adjacent_piece_pairs(truth, geometry, axis);
    for &(a, b) in &positives {
        pos[[a, b]] = 1.0;
    }
    let candidates: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (0..n).map(move |b| (a, b)))
        .filter(|&(a, b)| a != b && pos[[a, b]] == 0.0)
        .collect();
    let k = positives.len().min(candidates.len());
    let mut neg = Mat::zeros((n, n));
    for idx in sample(rng, candidates.len(), k).into_iter() {
        let (a, b) = candidates[idx];
        neg[[a, b]] = 1.0;
    }
    (pos, neg)
}

/// Bilinear adjacency scorer: `logit(a, b) = f_a·W·f_bᵀ + b` per axis.
#[derive(Clone, Debug)]
pub struct PairwiseHead {
    pub w_h: ParamId,
    pub w_v: ParamId,
    pub bias: ParamId,
}

impl PairwiseHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, d_v: usize, rng: &mut R) -> Self {
        Self {
            w_h: store.add_uniform("pairwise.w_h", d_v, d_v, d_v, rng),
            w_v: store.add_uniform("pairwise.w_v", d_v, d_v, d_v, rng),
            bias: store.add_zeros("pairwise.bias", 1, 2),
        }
    }

    /// N×N adjacency logits for one axis.
    pub fn logits(&self, g: &mut Graph, fused: Var, axis: Axis) -> Var {
        let (w, col) = match axis {
            Axis::Horizontal => (self.w_h, 0),
            Axis::Vertical => (self.w_v, 1),
        };
        let w = g.param(w);
        let fw = g.matmul(fused, w);
        let s = g.matmul_t(fw, fused);
        let bias = g.param(self.bias);
        let b = g.slice_cols(bias, col, col + 1);
        g.add_scalar_var(s, b)
    }

    /// Binary cross-entropy over all true adjacencies of both axes plus an
    /// equal number of sampled non-adjacent ordered pairs.
    pub fn loss<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        fused: Var,
        truth: &Permutation,
        geometry: &GridGeometry,
        rng: &mut R,
    ) -> Var {
        let mut terms = Vec::new();
        let mut count = 0.0;
        for axis in [Axis::Horizontal, Axis::Vertical] {
            let (pos, neg) = pair_masks(truth, geometry, axis, rng);
            count += pos.sum() + neg.sum();
            let z = self.logits(g, fused, axis);
            let nz = g.scale(z, -1.0);
            let lp = g.softplus(nz);
            let ln = g.softplus(z);
            let pm = g.constant(pos);
            let nm = g.constant(neg);
            let a = g.mul(pm, lp);
            let b = g.mul(nm, ln);
            let sa = g.sum(a);
            let sb = g.sum(b);
            terms.push(g.add(sa, sb));
        }
        let total = g.add(terms[0], terms[1]);
        g.scale(total, 1.0 / count.max(1.0))
    }
}

/// Weighted loss terms of one instance or batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub assign: f64,
    pub token: f64,
    pub region: f64,
    pub global: f64,
    pub pairwise: f64,
    pub lambda: f64,
    pub lambda_p: f64,
}

/// Raw loss terms before weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub assign: f64,
    pub token: f64,
    pub region: f64,
    pub global: f64,
    pub pairwise: f64,
}

/// `assign + λ·(token + region + global) + λ_p·pairwise`.
pub fn total_loss(parts: LossParts, lambda: f64, lambda_p: f64) -> LossBreakdown {
    LossBreakdown {
        total: parts.assign + lambda * (parts.token + parts.region + parts.global) + lambda_p * parts.pairwise,
        assign: parts.assign,
        token: parts.token,
        region: parts.region,
        global: parts.global,
        pairwise: parts.pairwise,
        lambda,
        lambda_p,
    }
}

impl LossBreakdown {
    /// Element-wise mean of several breakdowns (weights taken from the first).
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let Some(first) = items.first() else {
            return LossBreakdown::default();
        };
        let k = items.len() as f64;
        let avg = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / k;
        LossBreakdown {
            total: avg(|b| b.total),
            assign: avg(|b| b.assign),
            token: avg(|b| b.token),
            region: avg(|b| b.region),
            global: avg(|b| b.global),
            pairwise: avg(|b| b.pairwise),
            lambda: first.lambda,
            lambda_p: first.lambda_p,
        }
    }
}
