//! Compares the full model with a copy that sees no caption and has no
//! alignment losses, on the same puzzles.

use vlhsa::datagen::{load_external, make_dataset, DatasetConfig, Split, SplitSizes, MANIFEST_FILE};
use vlhsa::puzzle::GridGeometry;
use vlhsa::training::{evaluate, train, TrainConfig};

fn main() -> vlhsa::Result<()> {
    let dir = std::env::temp_dir().join("vlhsa-ablation");
    let geometry = GridGeometry::new(3, 3, 16, 4, 2)?;
    let config = DatasetConfig::new(geometry, SplitSizes { train: 512, val: 64, test: 128 }, 70);
    make_dataset(&config, &dir)?;
    let data = load_external(&dir.join(MANIFEST_FILE), None)?;

    let full = TrainConfig {
        max_epochs: 50,
        ..TrainConfig::default()
    };
    let mut blind = full.clone();
    blind.lambda = 0.0;
    blind.model.text_enabled = false;

    for (name, cfg) in [("with captions", &full), ("without captions", &blind)] {
        let out = train(cfg, &data, |_| Ok(()))?;
        let report = evaluate(&out.best, &data, Split::Test)?;
        println!("{name:>17}: piece {:.1}%  horizontal {:.1}%  vertical {:.1}%", 100.0 * report.piece, 100.0 * report.horizontal, 100.0 * report.vertical);
    }
    Ok(())
}
