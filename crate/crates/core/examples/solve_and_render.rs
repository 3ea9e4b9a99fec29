//! Trains briefly, saves and reloads the checkpoint, solves one test puzzle,
//! and writes the framed reconstruction plus the report artifacts.

use vlhsa::datagen::{load_external, make_dataset, DatasetConfig, SceneStyle, Split, SplitSizes, MANIFEST_FILE};
use vlhsa::puzzle::GridGeometry;
use vlhsa::training::{load_checkpoint, save_checkpoint, train, TrainConfig};
use vlhsa::viz;

fn main() -> vlhsa::Result<()> {
    let dir = std::env::temp_dir().join("vlhsa-solve");
    let geometry = GridGeometry::new(3, 3, 16, 4, 2)?;
    let config = DatasetConfig::new(geometry, SplitSizes { train: 64, val: 16, test: 16 }, 4).with_style(SceneStyle::DistinctCells);
    make_dataset(&config, &dir)?;
    let data = load_external(&dir.join(MANIFEST_FILE), None)?;

    let mut log = Vec::new();
    let cfg = TrainConfig {
        max_epochs: 15,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &data, |r| {
        log.push(r.clone());
        Ok(())
    })?;
    let ckpt_path = dir.join("best.ckpt");
    save_checkpoint(&out.best, &ckpt_path)?;
    let ckpt = load_checkpoint(&ckpt_path)?;

    let rec = data.split(Split::Test).next().expect("test split is non-empty");
    let sample = ckpt.model.prepare(&rec.instance, None)?;
    let (_, pred) = ckpt.model.predict(&sample)?;
    let misplaced = pred.misplaced_against(&rec.instance.shuffle)?;
    let png = dir.join("solve.png");
    viz::save_png(&viz::render_solution(&rec.instance, &pred, 2)?, &png)?;
    println!("{}: {misplaced} misplaced pieces, rendered to {}", rec.instance.id, png.display());

    viz::save_png(&viz::loss_curve(&log), &dir.join("loss.png"))?;
    viz::save_png(&viz::accuracy_curve(&log), &dir.join("accuracy.png"))?;
    if let Some(report) = viz::final_report(&log) {
        print!("{}", viz::off_by_csv(&report.off_by_k));
    }
    Ok(())
}
