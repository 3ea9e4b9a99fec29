//! Trains the toy model on puzzles whose cells carry position-coded tints,
//! a set that is learnable by construction.

use vlhsa::datagen::{load_external, make_dataset, DatasetConfig, SceneStyle, SplitSizes, MANIFEST_FILE};
use vlhsa::puzzle::GridGeometry;
use vlhsa::training::{train, LogRecord, TrainConfig};

fn main() -> vlhsa::Result<()> {
    let dir = std::env::temp_dir().join("vlhsa-overfit");
    let geometry = GridGeometry::new(3, 3, 16, 4, 2)?;
    let config = DatasetConfig::new(geometry, SplitSizes { train: 64, val: 16, test: 16 }, 6).with_style(SceneStyle::DistinctCells);
    make_dataset(&config, &dir)?;
    let data = load_external(&dir.join(MANIFEST_FILE), None)?;

    let train_config = TrainConfig {
        max_epochs: 30,
        ..TrainConfig::default()
    };
    let outcome = train(&train_config, &data, |r| {
        if let LogRecord::Epoch(e) = r {
            println!("epoch {:>3}  loss {:.4}  val piece {:.3}  perfect {:.3}", e.epoch, e.train_loss, e.val.piece, e.val.perfect);
        }
        Ok(())
    })?;
    println!("best epoch {}: {:?}", outcome.best.epoch, outcome.best_report);
    Ok(())
}
