//! One forward pass through the encoders and the three alignment levels,
//! printing the intermediate quantities.

use vlhsa::datagen::{generate_record, DatasetConfig, Split, SplitSizes};
use vlhsa::model::{Model, ModelConfig};
use vlhsa::puzzle::GridGeometry;

fn main() -> vlhsa::Result<()> {
    let geometry = GridGeometry::new(3, 3, 16, 4, 2)?;
    let config = DatasetConfig::new(geometry, SplitSizes { train: 1, val: 0, test: 0 }, 3);
    let instance = generate_record(&config, Split::Train, 0)?.instance;

    let model = Model::new(&ModelConfig::default(), &geometry, 0)?;
    println!("{} parameters", model.num_parameters());
    let sample = model.prepare(&instance, None)?;
    let out = model.alignment(&sample)?;

    println!("caption: {}", instance.caption);
    println!("fusion weights (token, region, global): {:?}", out.fusion_weights);
    println!("L_token {:.4}  L_region {:.4}  L_global {:.4}", out.l_token, out.l_region, out.l_global);
    if let Some(attn) = &out.attention {
        println!("piece 0 attention over tokens: {:.3}", attn.row(0));
    }
    let (scores, sigma) = model.predict(&sample)?;
    println!("scores {:?}, untrained placement {:?}", scores.dim(), sigma.as_slice());
    Ok(())
}
