//! Hierarchical vision–language alignment.
//!
//! Three levels refine the combined piece features against the caption:
//!
//! - **token**: pieces attend to caption tokens; an entropy-style loss
//!   rewards confident (peaked) attention;
//! - **region**: mean-pooled spatial windows of pieces attend to mean-pooled
//!   sliding token windows (phrases); a cosine loss pulls regions toward
//!   phrases; region outputs are scattered back to pieces by membership
//!   mean;
//! - **global**: a transformer encodes the pieces, and a per-channel sigmoid
//!   gate interpolates between them and the projected caption embedding.
//!
//! The enabled levels are mixed with `softmax(θ)` weights.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, Graph, Mat, ParamId, ParamStore, Var};
use crate::encoders::{BundleVars, FeatureBundle};
use crate::error::{Error, Result};
use crate::nn::{Linear, MultiHeadAttention, TransformerBlock};

/// Which alignment levels take part in the forward pass and fusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Levels {
    pub token: bool,
    pub region: bool,
    pub global: bool,
}

impl Default for Levels {
    fn default() -> Self {
        Self::ALL
    }
}

impl Levels {
    pub const ALL: Levels = Levels {
        token: true,
        region: true,
        global: true,
    };
    pub const NONE: Levels = Levels {
        token: false,
        region: false,
        global: false,
    };

    pub fn as_array(self) -> [bool; 3] {
        [self.token, self.region, self.global]
    }

    pub fn count(self) -> usize {
        self.as_array().iter().filter(|&&b| b).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    pub n_heads: usize,
    /// Side of the square piece neighbourhoods pooled into regions.
    pub region_window: usize,
    /// Width of the sliding token window pooled into phrases; clamped to
    /// the caption length.
    pub phrase_window: usize,
    /// Weight of the token-level confidence loss.
    pub alpha_token: f64,
    /// Stability constant in logarithms and normalization floors.
    pub eps: f64,
    /// Transformer depth of the global path.
    pub encoder_layers: usize,
    pub levels: Levels,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            n_heads: 4,
            region_window: 2,
            phrase_window: 3,
            alpha_token: 1.0,
            eps: 1e-8,
            encoder_layers: 2,
            levels: Levels::ALL,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self, d_v: usize, rows: usize, cols: usize) -> Result<()> {
        if self.n_heads == 0 || !d_v.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_v = {d_v} is not divisible by n_heads = {}",
                self.n_heads
            )));
        }
        if self.region_window == 0 || self.region_window > rows.min(cols) {
            return Err(Error::Config(format!(
                "region_window {} must lie in 1..={}",
                self.region_window,
                rows.min(cols)
            )));
        }
        if self.phrase_window == 0 {
            return Err(Error::Config("phrase_window must be positive".into()));
        }
        if !(self.eps > 0.0 && self.eps < 1.0 - (-1.0f64).exp()) {
            return Err(Error::Config(format!("eps {} outside (0, 1 - 1/e)", self.eps)));
        }
        if !self.alpha_token.is_finite() || self.alpha_token < 0.0 {
            return Err(Error::Config("alpha_token must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Row-major `window × window` neighbourhoods at stride 1, as index lists.
pub fn region_members(rows: usize, cols: usize, window: usize) -> Result<Vec<Vec<usize>>> {
    if window == 0 || window > rows.min(cols) {
        return Err(Error::arg(format!(
            "window {window} does not fit a {rows}x{cols} grid"
        )));
    }
    let mut regions = Vec::new();
    for r0 in 0..=rows - window {
        for c0 in 0..=cols - window {
            let mut m = Vec::with_capacity(window * window);
            for r in r0..r0 + window {
                for c in c0..c0 + window {
                    m.push(r * cols + c);
                }
            }
            regions.push(m);
        }
    }
    Ok(regions)
}

/// K×N averaging matrix: row k is the uniform mean over region k's members.
pub fn region_matrix(rows: usize, cols: usize, window: usize) -> Result<Mat> {
    let regions = region_members(rows, cols, window)?;
    let mut m = Mat::zeros((regions.len(), rows * cols));
    for (k, members) in regions.iter().enumerate() {
        for &i in members {
            m[[k, i]] = 1.0 / members.len() as f64;
        }
    }
    Ok(m)
}

/// N×K membership-mean matrix: piece i averages every region containing it.
pub fn scatter_matrix(rows: usize, cols: usize, window: usize) -> Result<Mat> {
    let regions = region_members(rows, cols, window)?;
    let mut m = Mat::zeros((rows * cols, regions.len()));
    for (k, members) in regions.iter().enumerate() {
        for &i in members {
            m[[i, k]] = 1.0;
        }
    }
    for mut row in m.rows_mut() {
        let count = row.sum();
        row.mapv_inplace(|v| v / count);
    }
    Ok(m)
}

/// M×L averaging matrix over sliding token windows of width `window`.
pub fn phrase_matrix(n_tokens: usize, window: usize) -> Result<Mat> {
    if window == 0 || window > n_tokens {
        return Err(Error::arg(format!(
            "phrase window {window} does not fit {n_tokens} tokens"
        )));
    }
    let m_count = n_tokens - window + 1;
    let mut m = Mat::zeros((m_count, n_tokens));
    for j in 0..m_count {
        for t in j..j + window {
            m[[j, t]] = 1.0 / window as f64;
        }
    }
    Ok(m)
}

/// Region features (K×d): means of every `window × window` neighbourhood.
pub fn build_regions(v: &Mat, rows: usize, cols: usize, window: usize) -> Result<Mat> {
    if v.nrows() != rows * cols {
        return Err(Error::arg(format!(
            "{} piece features for a {rows}x{cols} grid",
            v.nrows()
        )));
    }
    Ok(region_matrix(rows, cols, window)?.dot(v))
}

/// Phrase features (M×d): means of every sliding token window.
pub fn build_phrases(tokens: &Mat, window: usize) -> Result<Mat> {
    Ok(phrase_matrix(tokens.nrows(), window)?.dot(tokens))
}

/// Returns each piece's mean over the region outputs containing it.
pub fn scatter_regions(regions: &Mat, rows: usize, cols: usize, window: usize) -> Result<Mat> {
    let s = scatter_matrix(rows, cols, window)?;
    if s.ncols() != regions.nrows() {
        return Err(Error::arg(format!(
            "{} region features, the grid has {} windows",
            regions.nrows(),
            s.ncols()
        )));
    }
    Ok(s.dot(regions))
}

/// Softmax fusion weights and the weighted sum of the level features.
pub fn fuse(levels: &[&Mat; 3], theta: [f64; 3]) -> (Mat, [f64; 3]) {
    let t = Array2::from_shape_vec((1, 3), theta.to_vec()).expect("1x3");
    let a = softmax_rows(&t);
    let alpha = [a[[0, 0]], a[[0, 1]], a[[0, 2]]];
    let fused = levels[0] * alpha[0] + levels[1] * alpha[1] + levels[2] * alpha[2];
    (fused, alpha)
}

/// All alignment parameters.
#[derive(Clone, Debug)]
pub struct AlignModule {
    pub config: AlignConfig,
    pub rows: usize,
    pub cols: usize,
    pub token_attn: MultiHeadAttention,
    pub region_attn: MultiHeadAttention,
    pub global_blocks: Vec<TransformerBlock>,
    pub caption_proj: Linear,
    pub gate: Linear,
    pub theta: ParamId,
}

/// Tape handles produced by [`AlignModule::forward`]. Fields of disabled
/// levels are `None`.
#[derive(Clone, Debug)]
pub struct AlignVars {
    pub v_token: Option<Var>,
    pub attention: Option<Var>,
    pub l_token: Option<Var>,
    pub v_region: Option<Var>,
    pub l_region: Option<Var>,
    pub v_global: Option<Var>,
    pub v_global_aligned: Option<Var>,
    pub c_expand: Option<Var>,
    pub l_global: Option<Var>,
    /// 1×k softmax weights over the enabled levels.
    pub weights: Option<Var>,
    pub fused: Var,
}

/// Plain-value view of one alignment pass.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentOutput {
    pub v_token: Option<Mat>,
    pub v_region: Option<Mat>,
    pub v_global: Option<Mat>,
    pub v_global_aligned: Option<Mat>,
    pub c_expand: Option<Mat>,
    /// Token/region/global weights; disabled levels get 0.
    pub fusion_weights: [f64; 3],
    pub v_fused: Mat,
    pub l_token: f64,
    pub l_region: f64,
    pub l_global: f64,
    /// Head-averaged piece→token attention (N×L).
    pub attention: Option<Mat>,
}

impl AlignVars {
    pub fn values(&self, g: &Graph, levels: Levels) -> AlignmentOutput {
        let val = |v: Option<Var>| v.map(|v| g.value(v).clone());
        let scalar = |v: Option<Var>| v.map_or(0.0, |v| g.scalar(v));
        let mut fusion_weights = [0.0; 3];
        if let Some(w) = self.weights {
            let w = g.value(w);
            let mut k = 0;
            for (slot, on) in levels.as_array().iter().enumerate() {
                if *on {
                    fusion_weights[slot] = w[[0, k]];
                    k += 1;
                }
            }
        }
        AlignmentOutput {
            v_token: val(self.v_token),
            v_region: val(self.v_region),
            v_global: val(self.v_global),
            v_global_aligned: val(self.v_global_aligned),
            c_expand: val(self.c_expand),
            fusion_weights,
            v_fused: g.value(self.fused).clone(),
            l_token: scalar(self.l_token),
            l_region: scalar(self.l_region),
            l_global: scalar(self.l_global),
            attention: val(self.attention),
        }
    }
}

impl AlignModule {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: &AlignConfig,
        d_v: usize,
        d_t: usize,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate(d_v, rows, cols)?;
        let h = config.n_heads;
        Ok(Self {
            config: config.clone(),
            rows,
            cols,
            token_attn: MultiHeadAttention::new(store, "token_align.attn", d_v, d_t, d_v, h, rng),
            region_attn: MultiHeadAttention::new(store, "region_align.attn", d_v, d_t, d_v, h, rng),
            global_blocks: (0..config.encoder_layers)
                .map(|i| TransformerBlock::new(store, &format!("global_align.block{i}"), d_v, h, rng))
                .collect(),
            caption_proj: Linear::new(store, "global_align.caption_proj", d_t, d_v, true, rng),
            gate: Linear::new(store, "global_align.gate", 2 * d_v, d_v, true, rng),
            theta: store.add_zeros("fusion.theta", 1, 3),
        })
    }

    /// Piece→token cross-attention and the confidence loss
    /// `−α/N · Σ_i m_i·ln(m_i + ε)`, `m_i = max_j A_ij`.
    pub fn token_align(&self, g: &mut Graph, v: Var, c_tokens: Var) -> Result<(Var, Var, Var)> {
        if g.shape(c_tokens).0 == 0 {
            return Err(Error::arg("token alignment needs at least one token"));
        }
        let (out, attn) = self.token_attn.forward(g, v, c_tokens);
        let m = g.row_max(attn);
        let lm = g.log_eps(m, self.config.eps);
        let t = g.mul(m, lm);
        let s = g.sum(t);
        let n = g.shape(v).0 as f64;
        let loss = g.scale(s, -self.config.alpha_token / n);
        Ok((out, attn, loss))
    }

    /// Region→phrase cross-attention, scattered back to pieces, and the
    /// negative mean cosine between every region and every key-projected
    /// phrase.
    pub fn region_align(&self, g: &mut Graph, v: Var, c_tokens: Var) -> Result<(Var, Var)> {
        let w = self.config.region_window;
        let l = g.shape(c_tokens).0;
        let regions = g.constant(region_matrix(self.rows, self.cols, w)?);
        let r = g.matmul(regions, v);
        let phrases = g.constant(phrase_matrix(l, self.config.phrase_window.min(l))?);
        let p = g.matmul(phrases, c_tokens);
        let (raw, _) = self.region_attn.forward(g, r, p);
        let scatter = g.constant(scatter_matrix(self.rows, self.cols, w)?);
        let v_region = g.matmul(scatter, raw);

        let eps = self.config.eps;
        let r_hat = g.row_normalize(r, eps);
        let pk = self.region_attn.k.forward(g, p);
        let p_hat = g.row_normalize(pk, eps);
        let cos = g.matmul_t(r_hat, p_hat);
        let mean = g.mean(cos);
        let loss = g.scale(mean, -1.0);
        Ok((v_region, loss))
    }

    /// Transformer over the pieces, then the per-channel gate
    /// `g·V_global + (1 − g)·c_expand`. Returns `(V_global, c_expand,
    /// output, loss)` with loss `−cos(mean_rows(V_global), c_proj)`.
    pub fn global_align(&self, g: &mut Graph, v: Var, c_global: Var) -> (Var, Var, Var, Var) {
        let n = g.shape(v).0;
        let mut vg = v;
        for block in &self.global_blocks {
            vg = block.forward(g, vg);
        }
        let c = self.caption_proj.forward(g, c_global);
        let c_exp = g.broadcast_rows(c, n);
        let cat = g.concat_cols(&[vg, c_exp]);
        let gate = self.gate.forward(g, cat);
        let gate = g.sigmoid(gate);
        let diff = g.sub(vg, c_exp);
        let gd = g.mul(gate, diff);
        let out = g.add(c_exp, gd);

        let eps = self.config.eps;
        let pooled = g.mean_rows(vg);
        let a = g.row_normalize(pooled, eps);
        let b = g.row_normalize(c, eps);
        let cos = g.matmul_t(a, b);
        let loss = g.scale(cos, -1.0);
        (vg, c_exp, out, loss)
    }

    pub fn forward(&self, g: &mut Graph, bundle: &BundleVars) -> Result<AlignVars> {
        let (n, _) = g.shape(bundle.v_combined);
        if n != self.rows * self.cols {
            return Err(Error::arg(format!(
                "{n} pieces for a {}x{} alignment module",
                self.rows, self.cols
            )));
        }
        if !g.value(bundle.v_combined).iter().all(|x| x.is_finite()) {
            return Err(Error::Numeric("non-finite visual features".into()));
        }
        let levels = self.config.levels;
        let v = bundle.v_combined;
        let mut out = AlignVars {
            v_token: None,
            attention: None,
            l_token: None,
            v_region: None,
            l_region: None,
            v_global: None,
            v_global_aligned: None,
            c_expand: None,
            l_global: None,
            weights: None,
            fused: v,
        };
        let mut parts = Vec::with_capacity(3);
        let mut thetas = Vec::with_capacity(3);
        let theta = g.param(self.theta);
        if levels.token {
            let (vt, attn, loss) = self.token_align(g, v, bundle.c_tokens)?;
            out.v_token = Some(vt);
            out.attention = Some(attn);
            out.l_token = Some(loss);
            parts.push(vt);
            thetas.push(g.slice_cols(theta, 0, 1));
        }
        if levels.region {
            let (vr, loss) = self.region_align(g, v, bundle.c_tokens)?;
            out.v_region = Some(vr);
            out.l_region = Some(loss);
            parts.push(vr);
            thetas.push(g.slice_cols(theta, 1, 2));
        }
        if levels.global {
            let (vg, c_exp, vga, loss) = self.global_align(g, v, bundle.c_global);
            out.v_global = Some(vg);
            out.c_expand = Some(c_exp);
            out.v_global_aligned = Some(vga);
            out.l_global = Some(loss);
            parts.push(vga);
            thetas.push(g.slice_cols(theta, 2, 3));
        }
        if !parts.is_empty() {
            let t = if thetas.len() == 1 {
                thetas[0]
            } else {
                g.concat_cols(&thetas)
            };
            let w = g.softmax_rows(t);
            let mut fused = g.scale_by(parts[0], w, 0);
            for (k, &p) in parts.iter().enumerate().skip(1) {
                let term = g.scale_by(p, w, k);
                fused = g.add(fused, term);
            }
            out.weights = Some(w);
            out.fused = fused;
        }
        Ok(out)
    }
}

/// Runs alignment on plain feature values.
pub fn vlhsa_forward(
    module: &AlignModule,
    store: &ParamStore,
    bundle: &FeatureBundle,
) -> Result<AlignmentOutput> {
    let mut g = Graph::new(store);
    let vars = BundleVars {
        v_combined: g.constant(bundle.v_combined.clone()),
        c_tokens: g.constant(bundle.c_tokens.clone()),
        c_global: g.constant(bundle.c_global.clone()),
    };
    let out = module.forward(&mut g, &vars)?;
    let values = out.values(&g, module.config.levels);
    let finite = [values.l_token, values.l_region, values.l_global]
        .iter()
        .all(|l| l.is_finite())
        && values.v_fused.iter().all(|x| x.is_finite());
    if !finite {
        return Err(Error::Numeric("alignment produced non-finite values".into()));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
        Mat::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
    }

    fn module(seed: u64, config: AlignConfig) -> (ParamStore, AlignModule, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let m = AlignModule::new(&mut store, &config, 8, 6, 3, 3, &mut rng).unwrap();
        (store, m, rng)
    }

    fn bundle(n_tokens: usize, rng: &mut ChaCha8Rng) -> FeatureBundle {
        let c_tokens = random(n_tokens, 6, rng);
        FeatureBundle {
            v_combined: random(9, 8, rng),
            c_global: crate::encoders::mean_pool(&c_tokens),
            c_tokens,
        }
    }

    #[test]
    fn region_counts() {
        assert_eq!(region_members(3, 3, 2).unwrap().len(), 4);
        assert_eq!(region_members(5, 5, 2).unwrap().len(), 16);
        assert_eq!(region_members(3, 3, 3).unwrap().len(), 1);
        assert!(region_members(3, 3, 4).is_err());
    }

    #[test]
    fn constant_pieces_give_constant_regions() {
        let v = Mat::from_shape_fn((9, 4), |(_, j)| j as f64);
        let r = build_regions(&v, 3, 3, 2).unwrap();
        for row in r.rows() {
            assert_abs_diff_eq!(row.to_owned(), v.row(0).to_owned(), epsilon = 1e-12);
        }
    }

    #[test]
    fn phrase_windows() {
        let t = Mat::from_shape_fn((5, 2), |(i, j)| (i * 10 + j) as f64);
        let p = build_phrases(&t, 3).unwrap();
        assert_eq!(p.nrows(), 3);
        assert_abs_diff_eq!(p[[1, 0]], (10.0 + 20.0 + 30.0) / 3.0, epsilon = 1e-12);
        assert_eq!(build_phrases(&t, 1).unwrap(), t);
        let full = build_phrases(&t, 5).unwrap();
        assert_abs_diff_eq!(full, crate::encoders::mean_pool(&t), epsilon = 1e-12);
        assert!(build_phrases(&t, 6).is_err());
    }

    #[test]
    fn scatter_memberships() {
        let counts: Vec<usize> = region_members(3, 3, 2)
            .map(|regions| {
                (0..9)
                    .map(|i| regions.iter().filter(|m| m.contains(&i)).count())
                    .collect()
            })
            .unwrap();
        assert_eq!(counts, vec![1, 2, 1, 2, 4, 2, 1, 2, 1]);
        let v = Mat::from_shape_fn((9, 3), |(i, j)| (i * 3 + j) as f64);
        assert_eq!(scatter_regions(&v, 3, 3, 1).unwrap(), v);
        let same = Mat::from_elem((4, 3), 2.5);
        assert!(scatter_regions(&same, 3, 3, 2).unwrap().iter().all(|&x| (x - 2.5).abs() < 1e-12));
    }

    #[test]
    fn fusion_weights() {
        let a = Mat::from_elem((2, 2), 1.0);
        let b = Mat::from_elem((2, 2), 2.0);
        let c = Mat::from_elem((2, 2), 3.0);
        let (f, alpha) = fuse(&[&a, &b, &c], [0.0; 3]);
        for w in alpha {
            assert_abs_diff_eq!(w, 1.0 / 3.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(f[[0, 0]], 2.0, epsilon = 1e-12);
        let (f, _) = fuse(&[&a, &b, &c], [20.0, -20.0, -20.0]);
        assert_abs_diff_eq!(f, a, epsilon = 1e-6);
        let (_, shifted) = fuse(&[&a, &b, &c], [5.3, 4.0, 7.1]);
        let (_, base) = fuse(&[&a, &b, &c], [0.3, -1.0, 2.1]);
        for k in 0..3 {
            assert_abs_diff_eq!(shifted[k], base[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn single_token_forces_one_hot_attention() {
        let (store, m, mut rng) = module(0, AlignConfig::default());
        let out = vlhsa_forward(&m, &store, &bundle(1, &mut rng)).unwrap();
        assert!(out.attention.unwrap().iter().all(|&a| (a - 1.0).abs() < 1e-12));
        assert_abs_diff_eq!(out.l_token, -(1.0f64 + 1e-8).ln(), epsilon = 1e-15);
    }

    #[test]
    fn uniform_attention_over_four_tokens() {
        let (mut store, m, mut rng) = module(1, AlignConfig::default());
        m.token_attn.q.zero(&mut store);
        let out = vlhsa_forward(&m, &store, &bundle(4, &mut rng)).unwrap();
        assert_abs_diff_eq!(out.l_token, -0.25 * 0.25f64.ln(), epsilon = 1e-6);
        assert_abs_diff_eq!(out.l_token, 0.3466, epsilon = 1e-3);
    }

    #[test]
    fn region_loss_bounds() {
        let (mut store, m, mut rng) = module(2, AlignConfig::default());
        // identical regions and phrases after projection: key projection
        // maps every phrase onto the (constant) region direction
        let mut b = bundle(4, &mut rng);
        b.v_combined = Mat::from_elem((9, 8), 1.0);
        b.c_tokens = Mat::from_elem((4, 6), 1.0);
        *store.get_mut(m.region_attn.k.w) = Mat::from_elem((6, 8), 0.5);
        let out = vlhsa_forward(&m, &store, &b).unwrap();
        assert_abs_diff_eq!(out.l_region, -1.0, epsilon = 1e-12);
        // orthogonal: regions along e0, projected phrases along e1
        b.v_combined = Mat::zeros((9, 8));
        b.v_combined.column_mut(0).fill(1.0);
        let mut wk = Mat::zeros((6, 8));
        wk.column_mut(1).fill(1.0);
        *store.get_mut(m.region_attn.k.w) = wk;
        let out = vlhsa_forward(&m, &store, &b).unwrap();
        assert_abs_diff_eq!(out.l_region, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gate_limits() {
        let (mut store, m, mut rng) = module(3, AlignConfig::default());
        let b = bundle(3, &mut rng);
        m.gate.zero(&mut store);
        let out = vlhsa_forward(&m, &store, &b).unwrap();
        let (vg, ce) = (out.v_global.unwrap(), out.c_expand.unwrap());
        assert_abs_diff_eq!(out.v_global_aligned.unwrap(), (&vg + &ce) / 2.0, epsilon = 1e-12);

        store.get_mut(m.gate.b.unwrap()).fill(60.0);
        let out = vlhsa_forward(&m, &store, &b).unwrap();
        assert_abs_diff_eq!(out.v_global_aligned.unwrap(), vg, epsilon = 1e-9);

        store.get_mut(m.gate.b.unwrap()).fill(-60.0);
        let out = vlhsa_forward(&m, &store, &b).unwrap();
        let aligned = out.v_global_aligned.unwrap();
        for row in aligned.rows() {
            assert_abs_diff_eq!(row.to_owned(), ce.row(0).to_owned(), epsilon = 1e-9);
        }
    }

    #[test]
    fn forward_matches_manual_composition() {
        let (store, m, mut rng) = module(4, AlignConfig::default());
        let b = bundle(5, &mut rng);
        let out = vlhsa_forward(&m, &store, &b).unwrap();
        assert_eq!(out.v_fused.dim(), (9, 8));
        let (fused, alpha) = fuse(
            &[
                out.v_token.as_ref().unwrap(),
                out.v_region.as_ref().unwrap(),
                out.v_global_aligned.as_ref().unwrap(),
            ],
            [0.0; 3],
        );
        assert_abs_diff_eq!(out.v_fused, fused, epsilon = 1e-12);
        assert_eq!(out.fusion_weights, alpha);

        // region path by hand
        let r = build_regions(&b.v_combined, 3, 3, 2).unwrap();
        let p = build_phrases(&b.c_tokens, 3).unwrap();
        let mut g = Graph::new(&store);
        let (rv, pv) = (g.constant(r), g.constant(p));
        let (raw, _) = m.region_attn.forward(&mut g, rv, pv);
        let manual = scatter_regions(g.value(raw), 3, 3, 2).unwrap();
        assert_abs_diff_eq!(out.v_region.clone().unwrap(), manual, epsilon = 1e-12);

        assert_eq!(vlhsa_forward(&m, &store, &b).unwrap(), out);
    }

    #[test]
    fn disabled_levels_drop_out_of_fusion() {
        let config = AlignConfig {
            levels: Levels {
                token: false,
                region: true,
                global: true,
            },
            ..AlignConfig::default()
        };
        let (store, m, mut rng) = module(5, config);
        let out = vlhsa_forward(&m, &store, &bundle(4, &mut rng)).unwrap();
        assert!(out.v_token.is_none() && out.attention.is_none());
        assert_eq!(out.l_token, 0.0);
        assert_eq!(out.fusion_weights[0], 0.0);
        assert_abs_diff_eq!(out.fusion_weights[1], 0.5, epsilon = 1e-12);

        let none = AlignConfig {
            levels: Levels::NONE,
            ..AlignConfig::default()
        };
        let (store, m, mut rng) = module(6, none);
        let b = bundle(4, &mut rng);
        assert_eq!(vlhsa_forward(&m, &store, &b).unwrap().v_fused, b.v_combined);
    }

    #[test]
    fn config_validation() {
        let c = AlignConfig::default();
        assert!(c.validate(8, 3, 3).is_ok());
        assert!(c.validate(6, 3, 3).is_err());
        let big = AlignConfig {
            region_window: 4,
            ..AlignConfig::default()
        };
        assert!(big.validate(8, 3, 3).is_err());
    }
}
