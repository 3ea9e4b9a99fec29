//! Synthetic gap-puzzle generation, the on-disk dataset format, and the
//! external loader.

mod container;
mod dataset;
mod fragment;
mod scene;

pub use container::{read_array, sidecar_path, write_array, Sidecar};
pub use dataset::{
    color_jitter, generate_record, load_external, make_dataset, read_manifest, write_features,
    write_manifest, DatasetConfig, DatasetManifest, FeatureWidths, GeneratedRecord,
    LoadedDataset, LoadedRecord, ManifestHeader, ManifestRecord, PrecomputedFeatures, Split,
    SplitSizes, MANIFEST_FILE,
};
pub use fragment::{fragment_image, place_pieces, stitch, Jitter};
pub use scene::{
    caption_scene, caption_vocabulary, position_tint, render_scene, Image, PaletteColor,
    Placement, SceneObject, SceneSpec, SceneStyle, Shape, MAX_OBJECTS,
};
