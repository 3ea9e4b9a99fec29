//! Checks shared by the integration tests and the acceptance gate. Each
//! returns a one-line summary on success and a description of the first
//! violation otherwise.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vlhsa::align::AlignConfig;
use vlhsa::assignment::{assign_loss, assignment_cost, hungarian};
use vlhsa::autodiff::{Graph, Mat, ParamStore};
use vlhsa::datagen::{generate_record, DatasetConfig, Split, SplitSizes};
use vlhsa::encoders::EncoderConfig;
use vlhsa::gradcheck::check_gradients;
use vlhsa::model::{LossWeights, Model, ModelConfig, Sample};
use vlhsa::puzzle::{
    neighbor_accuracy, off_by_category, piece_accuracy, Axis, GridGeometry, OffBy, Permutation, PuzzleInstance,
};

pub type Check = Result<String, String>;

/// All permutations of `0..n` in lexicographic order.
pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

pub fn exhaustive_min_cost(cost: &Array2<f64>) -> f64 {
    all_permutations(cost.nrows())
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Hungarian cost against exhaustive search on `per_n` matrices per size.
pub fn hungarian_oracle(per_n: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n in 3..=7 {
        for trial in 0..per_n {
            // mix continuous and heavily tied integer costs
            let cost = if trial % 4 == 3 {
                Array2::from_shape_fn((n, n), |_| rng.gen_range(0..4) as f64)
            } else {
                Array2::from_shape_fn((n, n), |_| rng.gen_range(-10.0..10.0))
            };
            let perm = hungarian(&cost).map_err(|e| e.to_string())?;
            let got = assignment_cost(&cost, &perm);
            let want = exhaustive_min_cost(&cost);
            if (got - want).abs() > 1e-9 {
                return Err(format!("N={n} trial {trial}: cost {got} vs optimum {want}"));
            }
        }
    }
    Ok(format!("{} matrices, N=3..7, all optimal within 1e-9", 5 * per_n))
}

/// Reference metrics computed from cell coordinates only.
struct Oracle {
    rows: usize,
    cols: usize,
}

impl Oracle {
    fn piece(&self, pred: &[usize], truth: &[usize]) -> f64 {
        let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
        hits as f64 / pred.len() as f64
    }

    /// Pairs of pieces whose true cells are neighbours along `axis`
    /// (first piece left of / above the second); the fraction whose
    /// predicted cells keep that exact relation.
    fn neighbor(&self, pred: &[usize], truth: &[usize], horizontal: bool) -> f64 {
        let rc = |cell: usize| (cell / self.cols, cell % self.cols);
        let next = |a: usize, b: usize| {
            let ((ra, ca), (rb, cb)) = (rc(a), rc(b));
            if horizontal {
                ra == rb && ca + 1 == cb
            } else {
                ca == cb && ra + 1 == rb
            }
        };
        let mut total = 0;
        let mut kept = 0;
        for a in 0..pred.len() {
            for b in 0..pred.len() {
                if next(truth[a], truth[b]) {
                    total += 1;
                    if next(pred[a], pred[b]) {
                        kept += 1;
                    }
                }
            }
        }
        assert_eq!(total, if horizontal { self.rows * (self.cols - 1) } else { (self.rows - 1) * self.cols });
        kept as f64 / total as f64
    }

    fn misplaced(&self, pred: &[usize], truth: &[usize]) -> usize {
        pred.iter().zip(truth).filter(|(a, b)| a != b).count()
    }
}

/// Every (pred, truth) pair of S_4 on a 2×2 grid against the oracle.
pub fn metric_oracle() -> Check {
    let geo = GridGeometry::new(2, 2, 4, 0, 0).map_err(|e| e.to_string())?;
    let oracle = Oracle { rows: 2, cols: 2 };
    let perms = all_permutations(4);
    let mut pairs = 0;
    for p in &perms {
        for t in &perms {
            let (pp, tp) = (Permutation::new(p.clone()).unwrap(), Permutation::new(t.clone()).unwrap());
            let piece = piece_accuracy(&pp, &tp).map_err(|e| e.to_string())?;
            let h = neighbor_accuracy(&pp, &tp, &geo, Axis::Horizontal).map_err(|e| e.to_string())?;
            let v = neighbor_accuracy(&pp, &tp, &geo, Axis::Vertical).map_err(|e| e.to_string())?;
            let cat = off_by_category(&pp, &tp).map_err(|e| e.to_string())?;
            let m = oracle.misplaced(p, t);
            let want_cat = match m {
                0 => OffBy::Perfect,
                2 => OffBy::Two,
                3 => OffBy::Three,
                4 => OffBy::Four,
                _ => return Err(format!("{p:?} vs {t:?}: {m} misplaced pieces is impossible")),
            };
            if piece != oracle.piece(p, t)
                || h != oracle.neighbor(p, t, true)
                || v != oracle.neighbor(p, t, false)
                || cat != want_cat
            {
                return Err(format!("pred {p:?} truth {t:?}: piece {piece}, h {h}, v {v}, category {cat}"));
            }
            pairs += 1;
        }
    }
    // zero misplaced pieces is the Perfect category; a single misplaced
    // piece cannot occur between permutations
    let id = Permutation::identity(4);
    if off_by_category(&id, &id).map_err(|e| e.to_string())? != OffBy::Perfect {
        return Err("identical permutations are not Perfect".into());
    }
    if OffBy::ALL.iter().any(|c| c.label() == "1-off") {
        return Err("a 1-off category exists".into());
    }
    Ok(format!("{pairs} pairs match exactly; no 1-off category"))
}

pub fn tiny_encoder(d: usize, piece_px: usize, max_tokens: usize) -> EncoderConfig {
    EncoderConfig {
        d_v: d,
        d_b: d,
        d_t: d,
        depth: 1,
        patch_px: piece_px,
        pool_px: 4,
        adapter_hidden: d,
        max_tokens,
    }
}

pub fn instance(geo: GridGeometry, seed: u64, index: usize) -> PuzzleInstance {
    let cfg = DatasetConfig::new(geo, SplitSizes { train: index + 1, val: 0, test: 0 }, seed);
    generate_record(&cfg, Split::Train, index).unwrap().instance
}

/// Which scalar of a forward pass to differentiate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Token,
    Region,
    Global,
    Assign,
    Pairwise,
    Total,
}

impl Target {
    pub const ALL: [Target; 6] = [
        Target::Token,
        Target::Region,
        Target::Global,
        Target::Assign,
        Target::Pairwise,
        Target::Total,
    ];
}

fn forward_loss(model: &Model, store: &ParamStore, sample: &Sample, target: Target, grads: bool) -> (f64, Vec<Option<Mat>>) {
    let mut g = Graph::new(store);
    let fwd = model.forward(&mut g, sample).unwrap();
    // fixed negatives so every evaluation sees the same pairwise terms
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let lv = model.loss(&mut g, sample, &fwd, &LossWeights::default(), &mut rng).unwrap();
    let var = match target {
        Target::Token => lv.token.unwrap(),
        Target::Region => lv.region.unwrap(),
        Target::Global => lv.global.unwrap(),
        Target::Assign => lv.assign,
        Target::Pairwise => lv.pairwise,
        Target::Total => lv.total,
    };
    let value = g.scalar(var);
    (value, if grads { g.backward(var).into_params() } else { Vec::new() })
}

/// Central differences for each loss on an N=4 (2×2), L=3, d_v=16 instance.
pub fn gradient_suite(tol: f64) -> Check {
    let geo = GridGeometry::new(2, 2, 8, 2, 1).unwrap();
    let config = ModelConfig {
        encoder: tiny_encoder(16, 8, 3),
        align: AlignConfig {
            n_heads: 2,
            encoder_layers: 1,
            ..AlignConfig::default()
        },
        ..ModelConfig::default()
    };
    let model = Model::new(&config, &geo, 5).map_err(|e| e.to_string())?;
    let sample = model.prepare(&instance(geo, 3, 0), None).map_err(|e| e.to_string())?;
    match &sample.source {
        vlhsa::encoders::TextSource::Tokens(t) if t.len() == 3 => {}
        other => return Err(format!("expected a 3-token caption, got {other:?}")),
    }
    let mut worst = 0.0f64;
    let mut groups = std::collections::BTreeSet::new();
    for target in Target::ALL {
        let (_, analytic) = forward_loss(&model, &model.store, &sample, target, true);
        let checks = check_gradients(
            &model.store,
            &analytic,
            |s| forward_loss(&model, s, &sample, target, false).0,
            1e-6,
            24,
        );
        for c in &checks {
            if !c.passes(tol) {
                return Err(format!(
                    "{target:?} / {}: relative error {:.2e} (analytic {:.3e}, numeric {:.3e})",
                    c.group, c.rel_error, c.analytic_norm, c.numeric_norm
                ));
            }
            worst = worst.max(c.rel_error);
            groups.insert(c.group.clone());
        }
    }
    Ok(format!(
        "6 losses x {} groups, worst relative error {worst:.2e}",
        groups.len()
    ))
}

/// Fusion, attention, loss-range and gate invariants over random passes.
pub fn alignment_invariants(passes: usize) -> Check {
    let geo = GridGeometry::new(3, 3, 8, 2, 1).unwrap();
    let config = ModelConfig {
        encoder: tiny_encoder(16, 8, 12),
        align: AlignConfig {
            n_heads: 2,
            encoder_layers: 1,
            ..AlignConfig::default()
        },
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut model = Model::new(&config, &geo, 0).map_err(|e| e.to_string())?;
    for pass in 0..passes {
        if pass % 50 == 0 {
            model = Model::new(&config, &geo, pass as u64).map_err(|e| e.to_string())?;
        }
        let theta = model.align.theta;
        model.store.get_mut(theta).mapv_inplace(|_| rng.gen_range(-4.0..4.0));
        let sample = model.prepare(&instance(geo, pass as u64, 0), None).map_err(|e| e.to_string())?;
        let out = model.alignment(&sample).map_err(|e| e.to_string())?;
        let sum: f64 = out.fusion_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || out.fusion_weights.iter().any(|&w| w < 0.0) {
            return Err(format!("pass {pass}: fusion weights {:?}", out.fusion_weights));
        }
        let attn = out.attention.as_ref().ok_or("no token attention")?;
        for row in attn.rows() {
            if (row.sum() - 1.0).abs() > 1e-6 {
                return Err(format!("pass {pass}: attention row sums to {}", row.sum()));
            }
        }
        if out.l_token < 0.0 {
            return Err(format!("pass {pass}: token loss {}", out.l_token));
        }
        if !(-1.0..=1.0).contains(&out.l_region) {
            return Err(format!("pass {pass}: region loss {}", out.l_region));
        }
        let (vg, ce, gated) = (
            out.v_global.as_ref().unwrap(),
            out.c_expand.as_ref().unwrap(),
            out.v_global_aligned.as_ref().unwrap(),
        );
        for ((&a, &b), &o) in vg.iter().zip(ce.iter()).zip(gated.iter()) {
            let slack = 1e-12 * (1.0 + a.abs().max(b.abs()));
            if o < a.min(b) - slack || o > a.max(b) + slack {
                return Err(format!("pass {pass}: gated value {o} outside [{a}, {b}]"));
            }
        }
    }
    Ok(format!("{passes} forward passes"))
}

/// Closed-form loss values.
pub fn analytic_values() -> Check {
    for n in [4usize, 9, 25] {
        let truth = Permutation::random(n, n as u64).unwrap();
        let l = assign_loss(&Array2::zeros((n, n)), &truth, 0.0).map_err(|e| e.to_string())?;
        if (l - (n as f64).ln()).abs() > 1e-12 {
            return Err(format!("uniform-logit assign loss {l} for N={n}"));
        }
    }

    let geo = GridGeometry::new(3, 3, 8, 2, 1).unwrap();
    let mut token_values = Vec::new();
    for alpha in [1.0, 2.5] {
        let config = ModelConfig {
            encoder: tiny_encoder(16, 8, 4),
            align: AlignConfig {
                n_heads: 2,
                encoder_layers: 1,
                alpha_token: alpha,
                ..AlignConfig::default()
            },
            ..ModelConfig::default()
        };
        let mut model = Model::new(&config, &geo, 1).map_err(|e| e.to_string())?;
        // zero queries make every attention row uniform
        let q = model.align.token_attn.q.clone();
        q.zero(&mut model.store);
        let theta = model.align.theta;
        model.store.get_mut(theta).fill(0.0);
        let sample = model.prepare(&instance(geo, 8, 0), None).map_err(|e| e.to_string())?;
        let out = model.alignment(&sample).map_err(|e| e.to_string())?;
        if (out.l_token - 0.3466 * alpha).abs() > 1e-3 {
            return Err(format!("uniform attention over 4 tokens: L_token {} for alpha {alpha}", out.l_token));
        }
        for w in out.fusion_weights {
            if (w - 1.0 / 3.0).abs() > 1e-9 {
                return Err(format!("theta = 0 gives fusion weights {:?}", out.fusion_weights));
            }
        }
        token_values.push(out.l_token);
    }
    Ok(format!(
        "assign = ln N; L_token = {:.4} / {:.4} (alpha 1 / 2.5); equal fusion weights",
        token_values[0], token_values[1]
    ))
}
