//! Small layers over the autodiff tape: linear maps, affine layer norm,
//! feed-forward blocks, multi-head (cross-)attention, and pre-norm
//! transformer blocks.

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.add_uniform(format!("{name}.w"), d_in, d_out, d_in, rng);
        let b = bias.then(|| store.add_uniform(format!("{name}.b"), 1, d_out, d_in, rng));
        Self { w, b, d_in, d_out }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }

    /// Sets weights (and bias) to zero.
    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.w).fill(0.0);
        if let Some(b) = self.b {
            store.get_mut(b).fill(0.0);
        }
    }
}

/// Layer normalization with a learned per-channel gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), crate::autodiff::Mat::ones((1, d)));
        let bias = store.add_zeros(format!("{name}.bias"), 1, d);
        Self { gain, bias }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let n = g.layer_norm(x, LN_EPS);
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        let y = g.mul_row(n, gain);
        g.add_row(y, bias)
    }
}

/// `linear → GELU → linear`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), d_in, hidden, true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, d_out, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.fc1.forward(g, x);
        let h = g.gelu(h);
        self.fc2.forward(g, h)
    }
}

/// Scaled dot-product attention with `n_heads` heads. Queries, keys and
/// values are projected without bias; the output projection has one.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub n_heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    /// `d_q` is the query width, `d_kv` the key/value source width; both
    /// are projected to `d_model`, which must be divisible by `n_heads`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_q: usize,
        d_kv: usize,
        d_model: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Self {
        assert!(n_heads > 0 && d_model.is_multiple_of(n_heads), "d_model must split into heads");
        Self {
            q: Linear::new(store, &format!("{name}.q"), d_q, d_model, false, rng),
            k: Linear::new(store, &format!("{name}.k"), d_kv, d_model, false, rng),
            v: Linear::new(store, &format!("{name}.v"), d_kv, d_model, false, rng),
            o: Linear::new(store, &format!("{name}.o"), d_model, d_model, true, rng),
            n_heads,
            d_model,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Returns the attended output (n×d_model) and the head-averaged
    /// attention matrix (n×m).
    pub fn forward(&self, g: &mut Graph, queries: Var, source: Var) -> (Var, Var) {
        let q = self.q.forward(g, queries);
        let k = self.k.forward(g, source);
        let v = self.v.forward(g, source);
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut attn_sum: Option<Var> = None;
        for h in 0..self.n_heads {
            let (a, b) = (h * hd, (h + 1) * hd);
            let qh = g.slice_cols(q, a, b);
            let kh = g.slice_cols(k, a, b);
            let vh = g.slice_cols(v, a, b);
            let logits = g.matmul_t(qh, kh);
            let logits = g.scale(logits, scale);
            let attn = g.softmax_rows(logits);
            heads.push(g.matmul(attn, vh));
            attn_sum = Some(match attn_sum {
                Some(s) => g.add(s, attn),
                None => attn,
            });
        }
        let attn = g.scale(attn_sum.expect("at least one head"), 1.0 / self.n_heads as f64);
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)
        };
        (self.o.forward(g, cat), attn)
    }
}

/// Pre-norm transformer encoder block: `x + MHA(LN(x))`, then `x + FF(LN(x))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
}

impl TransformerBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, d, d, n_heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            ff: FeedForward::new(store, &format!("{name}.ff"), d, 2 * d, d, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.ln1.forward(g, x);
        let (a, _) = self.attn.forward(g, h, h);
        let x = g.add(x, a);
        let h = self.ln2.forward(g, x);
        let f = self.ff.forward(g, h);
        g.add(x, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Mat;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
        Mat::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn linear_matches_manual_affine_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "lin", 3, 2, true, &mut rng);
        let x = random(4, 3, &mut rng);
        let mut g = Graph::new(&store);
        let xv = g.constant(x.clone());
        let y = lin.forward(&mut g, xv);
        let want = x.dot(store.get(lin.w)) + store.get(lin.b.unwrap());
        assert_abs_diff_eq!(g.value(y), &want, epsilon = 1e-12);
    }

    #[test]
    fn attention_rows_are_distributions_and_heads_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "mha", 8, 5, 8, 4, &mut rng);
        let (q, s) = (random(6, 8, &mut rng), random(3, 5, &mut rng));
        let mut g = Graph::new(&store);
        let (qv, sv) = (g.constant(q), g.constant(s));
        let (out, attn) = mha.forward(&mut g, qv, sv);
        assert_eq!(g.shape(out), (6, 8));
        assert_eq!(g.shape(attn), (6, 3));
        for row in g.value(attn).rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zeroed_query_projection_gives_uniform_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "mha", 4, 4, 4, 2, &mut rng);
        mha.q.zero(&mut store);
        let mut g = Graph::new(&store);
        let q = g.constant(random(3, 4, &mut rng));
        let s = g.constant(random(5, 4, &mut rng));
        let (_, attn) = mha.forward(&mut g, q, s);
        assert!(g.value(attn).iter().all(|&a| (a - 0.2).abs() < 1e-12));
    }

    #[test]
    fn transformer_block_with_zero_outputs_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let block = TransformerBlock::new(&mut store, "blk", 8, 2, &mut rng);
        block.attn.o.zero(&mut store);
        block.ff.fc2.zero(&mut store);
        let x = random(5, 8, &mut rng);
        let mut g = Graph::new(&store);
        let xv = g.constant(x.clone());
        let y = block.forward(&mut g, xv);
        assert_abs_diff_eq!(g.value(y), &x, epsilon = 1e-12);
    }
}
