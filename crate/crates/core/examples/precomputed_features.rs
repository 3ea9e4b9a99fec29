//! Attaches externally computed embeddings to a dataset and trains with
//! the pass-through encoders instead of the toy ones.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vlhsa::datagen::{load_external, make_dataset, read_manifest, write_features, write_manifest, DatasetConfig, FeatureWidths, PrecomputedFeatures, SplitSizes, MANIFEST_FILE};
use vlhsa::encoders::{EncoderConfig, EncoderMode};
use vlhsa::puzzle::GridGeometry;
use vlhsa::training::{train, TrainConfig};

fn main() -> vlhsa::Result<()> {
    let dir = std::env::temp_dir().join("vlhsa-precomputed");
    let geometry = GridGeometry::new(3, 3, 16, 4, 2)?;
    make_dataset(&DatasetConfig::new(geometry, SplitSizes { train: 16, val: 4, test: 4 }, 2), &dir)?;

    // stand-ins for a real image and text encoder
    let (d_b, d_t, tokens) = (24, 20, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut random = |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0));
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut manifest = read_manifest(&manifest_path)?;
    for rec in &mut manifest.records {
        let features = PrecomputedFeatures {
            visual: random(geometry.n(), d_b),
            tokens: random(tokens, d_t),
            global: random(1, d_t),
        };
        let (v, t, g) = write_features(&dir, &rec.id, &features)?;
        (rec.vfeat, rec.tfeat, rec.tglobal) = (Some(v), Some(t), Some(g));
    }
    write_manifest(&manifest, &manifest_path)?;

    let mut config = TrainConfig {
        max_epochs: 3,
        batch_size: 8,
        ..TrainConfig::default()
    };
    config.model.mode = EncoderMode::Precomputed;
    config.model.encoder = EncoderConfig { d_b, d_t, ..EncoderConfig::toy() };
    let data = load_external(&manifest_path, Some(FeatureWidths { visual: d_b, text: d_t }))?;
    let out = train(&config, &data, |_| Ok(()))?;
    println!("trained {} parameters; val piece {:.3}", out.best.model.num_parameters(), out.best_report.piece);
    Ok(())
}
