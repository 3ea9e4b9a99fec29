//! Compares tape gradients of the training loss with central finite
//! differences, per parameter group.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vlhsa::autodiff::{Graph, ParamStore};
use vlhsa::datagen::{generate_record, DatasetConfig, Split, SplitSizes};
use vlhsa::encoders::EncoderConfig;
use vlhsa::gradcheck::check_gradients;
use vlhsa::model::{LossWeights, Model, ModelConfig, Sample};
use vlhsa::puzzle::GridGeometry;

fn total(model: &Model, store: &ParamStore, sample: &Sample) -> (f64, Vec<Option<vlhsa::autodiff::Mat>>) {
    let mut g = Graph::new(store);
    let fwd = model.forward(&mut g, sample).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let loss = model.loss(&mut g, sample, &fwd, &LossWeights::default(), &mut rng).unwrap();
    (g.scalar(loss.total), g.backward(loss.total).into_params())
}

fn main() -> vlhsa::Result<()> {
    let geometry = GridGeometry::new(2, 2, 8, 2, 1)?;
    let mut config = ModelConfig {
        encoder: EncoderConfig { d_v: 16, d_b: 16, d_t: 16, depth: 1, patch_px: 8, pool_px: 4, adapter_hidden: 16, max_tokens: 3 },
        ..ModelConfig::default()
    };
    config.align.n_heads = 2;
    let model = Model::new(&config, &geometry, 1)?;
    let data = DatasetConfig::new(geometry, SplitSizes { train: 1, val: 0, test: 0 }, 0);
    let sample = model.prepare(&generate_record(&data, Split::Train, 0)?.instance, None)?;

    let (_, analytic) = total(&model, &model.store, &sample);
    for c in check_gradients(&model.store, &analytic, |s| total(&model, s, &sample).0, 1e-6, 32) {
        println!("{:<12} rel. error {:.2e}  |grad| {:.3e}  ({} entries)", c.group, c.rel_error, c.analytic_norm, c.entries);
    }
    Ok(())
}
