//! The full puzzle model: encoders → alignment → prediction head, with
//! the auxiliary pairwise head and loss assembly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{AlignConfig, AlignModule, AlignVars, AlignmentOutput};
use crate::assignment::{
    assign_loss_var, decode, total_loss, LossBreakdown, LossParts, PairwiseHead, PredictionHead,
};
use crate::autodiff::{Graph, Mat, ParamStore, Var};
use crate::datagen::PrecomputedFeatures;
use crate::encoders::{pool_pieces, BundleVars, EncoderConfig, EncoderMode, Encoders, TextSource};
use crate::error::{Error, Result};
use crate::puzzle::{GridGeometry, Permutation, PuzzleInstance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub align: AlignConfig,
    pub mode: EncoderMode,
    /// When false, caption embeddings are replaced by zeros.
    pub text_enabled: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::toy(),
            align: AlignConfig::default(),
            mode: EncoderMode::Toy,
            text_enabled: true,
        }
    }
}

/// Loss weights and label smoothing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub lambda_p: f64,
    pub label_smoothing: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            lambda_p: 0.05,
            label_smoothing: 0.08,
        }
    }
}

/// A puzzle prepared for the model: pooled patches, text input, truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub patches: Mat,
    pub source: TextSource,
    pub truth: Permutation,
}

/// Tape handles of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub bundle: BundleVars,
    pub align: AlignVars,
    pub scores: Var,
}

/// Loss handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub assign: Var,
    pub token: Option<Var>,
    pub region: Option<Var>,
    pub global: Option<Var>,
    pub pairwise: Var,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub geometry: GridGeometry,
    pub store: ParamStore,
    pub encoders: Encoders,
    pub align: AlignModule,
    pub head: PredictionHead,
    pub pairwise: PairwiseHead,
}

impl Model {
    /// Builds a freshly initialized model. Parameter values depend only on
    /// `(config, geometry, seed)`.
    pub fn new(config: &ModelConfig, geometry: &GridGeometry, seed: u64) -> Result<Self> {
        geometry.validate()?;
        let enc = &config.encoder;
        if enc.patch_px != geometry.piece_px {
            return Err(Error::Config(format!(
                "encoder.patch_px = {} but pieces are {}px",
                enc.patch_px, geometry.piece_px
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoders = Encoders::new(&mut store, enc, config.mode, &mut rng)?;
        let align = AlignModule::new(
            &mut store,
            &config.align,
            enc.d_v,
            enc.d_t,
            geometry.rows,
            geometry.cols,
            &mut rng,
        )?;
        let head = PredictionHead::new(&mut store, enc.d_v, geometry.n(), &mut rng);
        let pairwise = PairwiseHead::new(&mut store, enc.d_v, &mut rng);
        Ok(Self {
            config: config.clone(),
            geometry: *geometry,
            store,
            encoders,
            align,
            head,
            pairwise,
        })
    }

    /// Pools the pieces and prepares the text input for one instance.
    pub fn prepare(&self, instance: &PuzzleInstance, features: Option<&PrecomputedFeatures>) -> Result<Sample> {
        if instance.geometry.n() != self.geometry.n() || instance.geometry.piece_px != self.geometry.piece_px {
            return Err(Error::Config(format!(
                "instance {} has geometry {}, the model was built for {}",
                instance.id, instance.geometry, self.geometry
            )));
        }
        let source = self.encoders.text_source(&instance.caption, features).map_err(|e| match e {
            Error::Argument(m) => Error::Load {
                id: instance.id.clone(),
                reason: m,
            },
            other => other,
        })?;
        Ok(Sample {
            id: instance.id.clone(),
            patches: pool_pieces(&instance.pieces, self.config.encoder.pool_px)?,
            source,
            truth: instance.shuffle.clone(),
        })
    }

    pub fn forward(&self, g: &mut Graph, sample: &Sample) -> Result<ForwardVars> {
        let bundle = self
            .encoders
            .forward(g, &sample.patches, &sample.source, self.config.text_enabled)?;
        let align = self.align.forward(g, &bundle)?;
        let scores = self.head.forward(g, align.fused);
        Ok(ForwardVars {
            bundle,
            align,
            scores,
        })
    }

    /// Adds the weighted training loss of a forward pass to the tape.
    /// Negative pairs for the pairwise term are drawn from `rng`.
    pub fn loss<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        sample: &Sample,
        fwd: &ForwardVars,
        weights: &LossWeights,
        rng: &mut R,
    ) -> Result<LossVars> {
        let assign = assign_loss_var(g, fwd.scores, &sample.truth, weights.label_smoothing)?;
        let pairwise = self
            .pairwise
            .loss(g, fwd.align.fused, &sample.truth, &self.geometry, rng);
        let mut total = assign;
        if weights.lambda != 0.0 {
            for l in [fwd.align.l_token, fwd.align.l_region, fwd.align.l_global].into_iter().flatten() {
                let w = g.scale(l, weights.lambda);
                total = g.add(total, w);
            }
        }
        if weights.lambda_p != 0.0 {
            let w = g.scale(pairwise, weights.lambda_p);
            total = g.add(total, w);
        }
        Ok(LossVars {
            total,
            assign,
            token: fwd.align.l_token,
            region: fwd.align.l_region,
            global: fwd.align.l_global,
            pairwise,
        })
    }

    /// Scores and decoded assignment for one sample.
    pub fn predict(&self, sample: &Sample) -> Result<(Mat, Permutation)> {
        let mut g = Graph::new(&self.store);
        let fwd = self.forward(&mut g, sample)?;
        let scores = g.value(fwd.scores).clone();
        if !scores.iter().all(|x| x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite scores for {}", sample.id)));
        }
        let sigma = decode(&scores)?;
        Ok((scores, sigma))
    }

    /// Plain-value alignment intermediates for one sample.
    pub fn alignment(&self, sample: &Sample) -> Result<AlignmentOutput> {
        let mut g = Graph::new(&self.store);
        let fwd = self.forward(&mut g, sample)?;
        Ok(fwd.align.values(&g, self.config.align.levels))
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }
}

impl LossVars {
    pub fn breakdown(&self, g: &Graph, weights: &LossWeights) -> LossBreakdown {
        let v = |x: Option<Var>| x.map_or(0.0, |x| g.scalar(x));
        let parts = LossParts {
            assign: g.scalar(self.assign),
            token: v(self.token),
            region: v(self.region),
            global: v(self.global),
            pairwise: g.scalar(self.pairwise),
        };
        let mut b = total_loss(parts, weights.lambda, weights.lambda_p);
        // the tape total is authoritative; it equals the formula up to rounding
        b.total = g.scalar(self.total);
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_record, DatasetConfig, Split, SplitSizes};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                d_v: 8,
                d_b: 8,
                d_t: 8,
                depth: 1,
                patch_px: 8,
                pool_px: 4,
                adapter_hidden: 8,
                max_tokens: 16,
            },
            align: AlignConfig {
                n_heads: 2,
                encoder_layers: 1,
                ..AlignConfig::default()
            },
            ..ModelConfig::default()
        }
    }

    fn instance() -> PuzzleInstance {
        let geo = GridGeometry::new(3, 3, 8, 2, 1).unwrap();
        let cfg = DatasetConfig::new(geo, SplitSizes { train: 1, val: 1, test: 1 }, 5);
        generate_record(&cfg, Split::Train, 0).unwrap().instance
    }

    #[test]
    fn construction_is_seed_deterministic() {
        let inst = instance();
        let a = Model::new(&tiny_config(), &inst.geometry, 3).unwrap();
        let b = Model::new(&tiny_config(), &inst.geometry, 3).unwrap();
        let c = Model::new(&tiny_config(), &inst.geometry, 4).unwrap();
        assert_eq!(a.store, b.store);
        assert_ne!(a.store, c.store);
    }

    #[test]
    fn predict_returns_a_bijection() {
        let inst = instance();
        let model = Model::new(&tiny_config(), &inst.geometry, 0).unwrap();
        let sample = model.prepare(&inst, None).unwrap();
        let (scores, sigma) = model.predict(&sample).unwrap();
        assert_eq!(scores.dim(), (9, 9));
        assert_eq!(sigma.len(), 9);
    }

    #[test]
    fn breakdown_total_matches_formula() {
        let inst = instance();
        let model = Model::new(&tiny_config(), &inst.geometry, 1).unwrap();
        let sample = model.prepare(&inst, None).unwrap();
        let weights = LossWeights::default();
        let mut g = Graph::new(&model.store);
        let fwd = model.forward(&mut g, &sample).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lv = model.loss(&mut g, &sample, &fwd, &weights, &mut rng).unwrap();
        let b = lv.breakdown(&g, &weights);
        let want = b.assign + 0.1 * (b.token + b.region + b.global) + 0.05 * b.pairwise;
        assert!((b.total - want).abs() < 1e-9);
    }

    #[test]
    fn patch_size_mismatch_is_a_config_error() {
        let inst = instance();
        let mut cfg = tiny_config();
        cfg.encoder.patch_px = 16;
        assert!(matches!(Model::new(&cfg, &inst.geometry, 0), Err(Error::Config(_))));
    }
}
