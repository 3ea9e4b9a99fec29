//! Visual and text encoders.
//!
//! The visual path runs a sequential patch backbone followed by a residual
//! adapter, adds an affine projection of secondary per-piece features, and
//! yields `V_combined` (N×d_v). The text path yields token embeddings
//! (L×d_t) and their mean as the global caption embedding.
//!
//! In [`EncoderMode::Toy`] the secondary features come from a second,
//! independently parameterized patch embedder and the text encoder is a
//! learned embedding table over the closed caption vocabulary. In
//! [`EncoderMode::Precomputed`] both are read from feature files and held
//! constant; the backbone, adapter and projection still train.

use std::collections::HashMap;
use std::fmt;

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mat, ParamId, ParamStore, Var};
use crate::datagen::{caption_vocabulary, PrecomputedFeatures};
use crate::error::{Error, Result};
use crate::nn::{FeedForward, LayerNorm, Linear};
use crate::puzzle::Pieces;

pub const OOV_TOKEN: &str = "<oov>";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderMode {
    #[default]
    Toy,
    Precomputed,
}

impl fmt::Display for EncoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderMode::Toy => "toy",
            EncoderMode::Precomputed => "precomputed",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Visual embedding width.
    pub d_v: usize,
    /// Secondary visual feature width.
    pub d_b: usize,
    /// Text embedding width.
    pub d_t: usize,
    /// Number of backbone mixing blocks.
    pub depth: usize,
    /// Side of an input piece in pixels.
    pub patch_px: usize,
    /// Pieces are area-averaged down to `pool_px × pool_px` before the
    /// patch projection.
    pub pool_px: usize,
    /// Hidden width of the adapter MLP.
    pub adapter_hidden: usize,
    /// Captions longer than this are truncated.
    pub max_tokens: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl EncoderConfig {
    /// Small CPU profile used by the examples and tests.
    pub fn toy() -> Self {
        Self {
            d_v: 32,
            d_b: 32,
            d_t: 128,
            depth: 4,
            patch_px: 16,
            pool_px: 8,
            adapter_hidden: 32,
            max_tokens: 24,
        }
    }

    /// Widths matching a 96-pixel, 256-wide, 24-deep backbone.
    pub fn full() -> Self {
        Self {
            d_v: 256,
            d_b: 256,
            d_t: 512,
            depth: 24,
            patch_px: 96,
            pool_px: 16,
            adapter_hidden: 256,
            max_tokens: 77,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("d_v", self.d_v),
            ("d_b", self.d_b),
            ("d_t", self.d_t),
            ("depth", self.depth),
            ("patch_px", self.patch_px),
            ("pool_px", self.pool_px),
            ("adapter_hidden", self.adapter_hidden),
            ("max_tokens", self.max_tokens),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder.{name} must be positive")));
        }
        if self.pool_px > self.patch_px {
            return Err(Error::Config(format!(
                "encoder.pool_px ({}) exceeds patch_px ({})",
                self.pool_px, self.patch_px
            )));
        }
        Ok(())
    }

    /// Width of a flattened pooled piece.
    pub fn patch_dim(&self) -> usize {
        self.pool_px * self.pool_px * 3
    }
}

/// Area-averages each piece to `pool × pool` and flattens it (row-major,
/// RGB interleaved), mapping intensities from [0, 1] to [-1, 1].
pub fn pool_pieces(pieces: &Pieces, pool: usize) -> Result<Mat> {
    let (n, p, p2, ch) = pieces.dim();
    if p != p2 || ch != 3 || pool == 0 || pool > p {
        return Err(Error::arg(format!(
            "cannot pool pieces of shape {:?} to {pool}x{pool}",
            pieces.dim()
        )));
    }
    let bounds: Vec<(usize, usize)> = (0..pool).map(|i| (i * p / pool, (i + 1) * p / pool)).collect();
    let mut out = Mat::zeros((n, pool * pool * 3));
    for k in 0..n {
        for (by, &(y0, y1)) in bounds.iter().enumerate() {
            for (bx, &(x0, x1)) in bounds.iter().enumerate() {
                let cell = pieces.slice(s![k, y0..y1, x0..x1, ..]);
                let area = ((y1 - y0) * (x1 - x0)) as f64;
                for c in 0..3 {
                    let sum: f64 = cell.slice(s![.., .., c]).iter().map(|&v| v as f64).sum();
                    out[[k, (by * pool + bx) * 3 + c]] = 2.0 * sum / area - 1.0;
                }
            }
        }
    }
    Ok(out)
}

/// One gated sequential mixing block:
/// `x + (scan(LN(x)·W_in) ⊙ σ(LN(x)·W_gate))·W_out`, where the scan runs the
/// decaying recurrence in both directions over the piece sequence.
#[derive(Clone, Debug)]
pub struct MixerBlock {
    pub ln: LayerNorm,
    pub w_in: Linear,
    pub w_gate: Linear,
    pub decay_fwd: ParamId,
    pub decay_bwd: ParamId,
    pub w_out: Linear,
}

impl MixerBlock {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Self {
        let mut decay = |suffix: &str, rng: &mut R| {
            let v = Mat::from_shape_simple_fn((1, d), || crate::autodiff::round_f32(rng.gen_range(0.0..2.0)));
            store.add(format!("{name}.{suffix}"), v)
        };
        let decay_fwd = decay("decay_fwd", rng);
        let decay_bwd = decay("decay_bwd", rng);
        Self {
            ln: LayerNorm::new(store, &format!("{name}.ln"), d),
            w_in: Linear::new(store, &format!("{name}.w_in"), d, d, false, rng),
            w_gate: Linear::new(store, &format!("{name}.w_gate"), d, d, true, rng),
            decay_fwd,
            decay_bwd,
            w_out: Linear::new(store, &format!("{name}.w_out"), d, d, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let n = g.shape(x).0;
        let h = self.ln.forward(g, x);
        let u = self.w_in.forward(g, h);
        let df = g.param(self.decay_fwd);
        let fwd = g.scan(u, df);
        let rev: Vec<usize> = (0..n).rev().collect();
        let u_rev = g.gather_rows(u, &rev);
        let db = g.param(self.decay_bwd);
        let bwd = g.scan(u_rev, db);
        let bwd = g.gather_rows(bwd, &rev);
        let mixed = g.add(fwd, bwd);
        let gate = self.w_gate.forward(g, h);
        let gate = g.sigmoid(gate);
        let y = g.mul(mixed, gate);
        let y = self.w_out.forward(g, y);
        g.add(x, y)
    }

    /// Zeroes every parameter of the block, making it the identity.
    pub fn zero(&self, store: &mut ParamStore) {
        for id in [self.ln.gain, self.ln.bias, self.decay_fwd, self.decay_bwd] {
            store.get_mut(id).fill(0.0);
        }
        self.w_in.zero(store);
        self.w_gate.zero(store);
        self.w_out.zero(store);
    }
}

/// Per-patch linear projection followed by `depth` mixing blocks.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub proj: Linear,
    pub blocks: Vec<MixerBlock>,
}

impl Backbone {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: &EncoderConfig, rng: &mut R) -> Self {
        let proj = Linear::new(store, "backbone.proj", config.patch_dim(), config.d_v, true, rng);
        let blocks = (0..config.depth)
            .map(|i| MixerBlock::new(store, &format!("backbone.block{i}"), config.d_v, rng))
            .collect();
        Self { proj, blocks }
    }

    pub fn forward(&self, g: &mut Graph, patches: Var) -> Var {
        let mut x = self.proj.forward(g, patches);
        for block in &self.blocks {
            x = block.forward(g, x);
        }
        x
    }
}

/// `V + MLP(V)`.
#[derive(Clone, Debug)]
pub struct Adapter {
    pub mlp: FeedForward,
}

impl Adapter {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: &EncoderConfig, rng: &mut R) -> Self {
        Self {
            mlp: FeedForward::new(store, "adapter", config.d_v, config.adapter_hidden, config.d_v, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, v: Var) -> Var {
        let m = self.mlp.forward(g, v);
        g.add(v, m)
    }
}

/// Independent per-patch embedder producing the toy-mode secondary
/// features (N×d_b).
#[derive(Clone, Debug)]
pub struct SecondaryEmbedder {
    pub proj: Linear,
}

impl SecondaryEmbedder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: &EncoderConfig, rng: &mut R) -> Self {
        Self {
            proj: Linear::new(store, "secondary.proj", config.patch_dim(), config.d_b, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, patches: Var) -> Var {
        let b = self.proj.forward(g, patches);
        g.gelu(b)
    }
}

/// Closed caption vocabulary with a trailing out-of-vocabulary token.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new(caption_vocabulary())
    }
}

impl Vocabulary {
    pub fn new<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Self {
        let mut list: Vec<String> = Vec::new();
        for w in words {
            let w = w.as_ref().to_lowercase();
            if !list.contains(&w) && w != OOV_TOKEN {
                list.push(w);
            }
        }
        list.push(OOV_TOKEN.to_string());
        let index = list.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words: list, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn oov(&self) -> usize {
        self.words.len() - 1
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    /// Lowercases, splits on whitespace, strips surrounding punctuation, and
    /// maps unknown words to the OOV id. At most `max_tokens` ids are kept.
    pub fn tokenize(&self, caption: &str, max_tokens: usize) -> Result<Vec<usize>> {
        let ids: Vec<usize> = caption
            .split_whitespace()
            .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
            .filter(|w| !w.is_empty())
            .map(|w| self.index.get(&w).copied().unwrap_or(self.oov()))
            .take(max_tokens)
            .collect();
        if ids.is_empty() {
            return Err(Error::arg("caption has no tokens"));
        }
        Ok(ids)
    }
}

/// Token embedding table plus learned positional embeddings.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub tokens: ParamId,
    pub positions: ParamId,
}

impl TextEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: &EncoderConfig,
        vocab_size: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            tokens: store.add_uniform("text.tokens", vocab_size, config.d_t, 1, rng),
            positions: store.add_uniform("text.positions", config.max_tokens, config.d_t, 1, rng),
        }
    }

    /// Returns `(C_tokens, C_global)`: L×d_t and 1×d_t.
    pub fn forward(&self, g: &mut Graph, ids: &[usize]) -> (Var, Var) {
        let table = g.param(self.tokens);
        let tok = g.gather_rows(table, ids);
        let pos = g.param(self.positions);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = g.gather_rows(pos, &positions);
        let c_tokens = g.add(tok, pos);
        let c_global = g.mean_rows(c_tokens);
        (c_tokens, c_global)
    }
}

/// Encoder-side inputs for one puzzle.
#[derive(Clone, Debug, PartialEq)]
pub enum TextSource {
    /// Token ids for the built-in text encoder.
    Tokens(Vec<usize>),
    /// Loaded secondary-visual and text features.
    Precomputed(PrecomputedFeatures),
}

/// Per-piece combined visual features and caption embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    pub v_combined: Mat,
    pub c_global: Mat,
    pub c_tokens: Mat,
}

impl FeatureBundle {
    pub fn n_pieces(&self) -> usize {
        self.v_combined.nrows()
    }

    pub fn n_tokens(&self) -> usize {
        self.c_tokens.nrows()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let finite = |m: &Mat| m.iter().all(|v| v.is_finite());
        if !(finite(&self.v_combined) && finite(&self.c_global) && finite(&self.c_tokens)) {
            return Err(Error::Numeric("feature bundle has non-finite entries".into()));
        }
        if self.n_pieces() != n || self.n_tokens() == 0 {
            return Err(Error::arg(format!(
                "bundle has {} pieces and {} tokens, expected {n} pieces and at least one token",
                self.n_pieces(),
                self.n_tokens()
            )));
        }
        Ok(())
    }
}

/// Tape handles for an encoded puzzle.
#[derive(Clone, Copy, Debug)]
pub struct BundleVars {
    pub v_combined: Var,
    pub c_tokens: Var,
    pub c_global: Var,
}

impl BundleVars {
    pub fn values(&self, g: &Graph) -> FeatureBundle {
        FeatureBundle {
            v_combined: g.value(self.v_combined).clone(),
            c_global: g.value(self.c_global).clone(),
            c_tokens: g.value(self.c_tokens).clone(),
        }
    }
}

/// All encoder parameters.
#[derive(Clone, Debug)]
pub struct Encoders {
    pub config: EncoderConfig,
    pub mode: EncoderMode,
    pub vocab: Vocabulary,
    pub backbone: Backbone,
    pub adapter: Adapter,
    pub secondary: Option<SecondaryEmbedder>,
    pub projection: Linear,
    pub text: Option<TextEncoder>,
}

impl Encoders {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: &EncoderConfig,
        mode: EncoderMode,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let vocab = Vocabulary::default();
        let backbone = Backbone::new(store, config, rng);
        let adapter = Adapter::new(store, config, rng);
        let secondary = (mode == EncoderMode::Toy).then(|| SecondaryEmbedder::new(store, config, rng));
        let projection = Linear::new(store, "projection", config.d_b, config.d_v, true, rng);
        let text = (mode == EncoderMode::Toy).then(|| TextEncoder::new(store, config, vocab.len(), rng));
        Ok(Self {
            config: config.clone(),
            mode,
            vocab,
            backbone,
            adapter,
            secondary,
            projection,
            text,
        })
    }

    /// Converts a caption or loaded features into the encoder's text input,
    /// checking widths against the configuration.
    pub fn text_source(&self, caption: &str, features: Option<&PrecomputedFeatures>) -> Result<TextSource> {
        match self.mode {
            EncoderMode::Toy => Ok(TextSource::Tokens(
                self.vocab.tokenize(caption, self.config.max_tokens)?,
            )),
            EncoderMode::Precomputed => {
                let f = features.ok_or_else(|| {
                    Error::Config("precomputed encoders need vfeat/tfeat/tglobal features".into())
                })?;
                if f.visual.ncols() != self.config.d_b || f.tokens.ncols() != self.config.d_t {
                    return Err(Error::Config(format!(
                        "precomputed widths (d_b={}, d_t={}) differ from the encoder's ({}, {})",
                        f.visual.ncols(),
                        f.tokens.ncols(),
                        self.config.d_b,
                        self.config.d_t
                    )));
                }
                Ok(TextSource::Precomputed(f.clone()))
            }
        }
    }

    /// Backbone followed by the adapter.
    pub fn adapted(&self, g: &mut Graph, patches: Var) -> Var {
        let v = self.backbone.forward(g, patches);
        self.adapter.forward(g, v)
    }

    /// Encodes pooled patches (N×patch_dim) and the text source. With
    /// `text_enabled == false` the caption embeddings are replaced by zeros.
    pub fn forward(
        &self,
        g: &mut Graph,
        patches: &Mat,
        source: &TextSource,
        text_enabled: bool,
    ) -> Result<BundleVars> {
        if patches.ncols() != self.config.patch_dim() {
            return Err(Error::arg(format!(
                "patches have width {}, the backbone expects {}",
                patches.ncols(),
                self.config.patch_dim()
            )));
        }
        let n = patches.nrows();
        let x = g.constant(patches.clone());
        let v_adapted = self.adapted(g, x);
        let (b, c_tokens, c_global) = match (source, &self.secondary, &self.text) {
            (TextSource::Tokens(ids), Some(sec), Some(text)) => {
                let b = sec.forward(g, x);
                let (ct, cg) = text.forward(g, ids);
                (b, ct, cg)
            }
            (TextSource::Precomputed(f), _, _) if self.mode == EncoderMode::Precomputed => {
                if f.visual.nrows() != n {
                    return Err(Error::arg(format!(
                        "{} secondary feature rows for {n} pieces",
                        f.visual.nrows()
                    )));
                }
                let b = g.constant(f.visual.clone());
                let ct = g.constant(f.tokens.clone());
                let cg = g.constant(f.global.clone());
                (b, ct, cg)
            }
            _ => {
                return Err(Error::Config(format!(
                    "input does not match {} encoders",
                    self.mode
                )))
            }
        };
        let b_proj = self.projection.forward(g, b);
        let v_combined = g.add(v_adapted, b_proj);
        let (c_tokens, c_global) = if text_enabled {
            (c_tokens, c_global)
        } else {
            let zt = Mat::zeros(g.shape(c_tokens));
            let zg = Mat::zeros(g.shape(c_global));
            (g.constant(zt), g.constant(zg))
        };
        Ok(BundleVars {
            v_combined,
            c_tokens,
            c_global,
        })
    }

    /// Convenience wrapper: pools the pieces and returns feature values.
    pub fn bundle(
        &self,
        store: &ParamStore,
        pieces: &Pieces,
        caption: &str,
        features: Option<&PrecomputedFeatures>,
    ) -> Result<FeatureBundle> {
        let (_, p, _, _) = pieces.dim();
        if p != self.config.patch_px {
            return Err(Error::arg(format!(
                "pieces are {p}px, encoders expect {}px",
                self.config.patch_px
            )));
        }
        let patches = pool_pieces(pieces, self.config.pool_px)?;
        let source = self.text_source(caption, features)?;
        let mut g = Graph::new(store);
        let vars = self.forward(&mut g, &patches, &source, true)?;
        let bundle = vars.values(&g);
        bundle.validate(pieces.dim().0)?;
        Ok(bundle)
    }
}

/// `B·W_b + b` on plain matrices.
pub fn project_secondary(b: &Mat, w_b: &Mat, bias: &Mat) -> Result<Mat> {
    if b.ncols() != w_b.nrows() || bias.dim() != (1, w_b.ncols()) {
        return Err(Error::arg(format!(
            "secondary features of width {} do not fit W_b {:?} / bias {:?}",
            b.ncols(),
            w_b.dim(),
            bias.dim()
        )));
    }
    Ok(b.dot(w_b) + bias)
}

/// `V_adapted + B_proj`.
pub fn combine(v_adapted: &Mat, b_proj: &Mat) -> Result<Mat> {
    if v_adapted.dim() != b_proj.dim() {
        return Err(Error::arg(format!(
            "cannot combine {:?} with {:?}",
            v_adapted.dim(),
            b_proj.dim()
        )));
    }
    Ok(v_adapted + b_proj)
}

/// Column means of the token embeddings as a 1×d_t row.
pub fn mean_pool(tokens: &Array2<f64>) -> Mat {
    tokens
        .mean_axis(ndarray::Axis(0))
        .expect("at least one token")
        .insert_axis(ndarray::Axis(0))
}
