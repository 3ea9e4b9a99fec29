//! Generates a small synthetic puzzle dataset and prints what was written.
//!
//!     cargo run --example generate_dataset -- /tmp/puzzles

use std::path::PathBuf;

use vlhsa::datagen::{load_external, make_dataset, DatasetConfig, SplitSizes, MANIFEST_FILE};
use vlhsa::puzzle::GridGeometry;

fn main() -> vlhsa::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("vlhsa-puzzles"));
    let geometry = GridGeometry::new(3, 3, 16, 4, 2)?;
    let config = DatasetConfig::new(geometry, SplitSizes { train: 8, val: 2, test: 2 }, 1);
    let manifest = make_dataset(&config, &out)?;
    println!("wrote {} records to {}", manifest.records.len(), out.display());

    let data = load_external(&out.join(MANIFEST_FILE), None)?;
    for rec in data.records.iter().take(3) {
        let inst = &rec.instance;
        println!("{}: \"{}\" shuffle {:?}", inst.id, inst.caption, inst.shuffle.as_slice());
    }
    Ok(())
}
