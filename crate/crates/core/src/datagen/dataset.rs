//! Synthetic dataset generation and the JSON Lines manifest format.
//!
//! A manifest is a header line followed by one line per record:
//!
//! ```text
//! {"name":"toy","geometry":{...},"splits":{"train":64,"val":16,"test":16}}
//! {"id":"train-00000","split":"train","pieces":"train-00000.bin","caption":"...","shuffle":[3,0,...]}
//! ```
//!
//! Paths inside records are relative to the manifest's directory. A record
//! may also name precomputed `vfeat` (N×d_b), `tfeat` (L×d_t), and
//! `tglobal` (d_t) arrays.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::container::{read_array, write_array};
use super::fragment::{fragment_image, place_pieces};
use super::scene::{caption_scene, render_scene, SceneSpec, SceneStyle, MAX_OBJECTS};
use crate::error::{Error, Result};
use crate::puzzle::{GridGeometry, Permutation, Pieces, PuzzleInstance};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::arg(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub name: String,
    pub geometry: GridGeometry,
    pub splits: SplitSizes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub pieces: PathBuf,
    pub caption: String,
    pub shuffle: Permutation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vfeat: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tfeat: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tglobal: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::Config(format!("{} is empty", source.display())))?;
        let header: ManifestHeader = serde_json::from_str(first)
            .map_err(|e| Error::json(format!("{} header", source.display()), e))?;
        header.geometry.validate()?;
        let records = lines
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::json(format!("{} line {}", source.display(), i + 1), e))
            })
            .collect::<Result<Vec<ManifestRecord>>>()?;
        let manifest = Self { header, records };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Unique ids, per-split counts agreeing with the header, shuffles sized
    /// to the geometry.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        let mut counts = SplitSizes::default();
        let n = self.header.geometry.n();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Config(format!("duplicate record id `{}`", r.id)));
            }
            if r.shuffle.len() != n {
                return Err(Error::Load {
                    id: r.id.clone(),
                    reason: format!("shuffle has {} entries, geometry needs {n}", r.shuffle.len()),
                });
            }
            match r.split {
                Split::Train => counts.train += 1,
                Split::Val => counts.val += 1,
                Split::Test => counts.test += 1,
            }
        }
        if counts != self.header.splits {
            return Err(Error::Config(format!(
                "header announces splits {:?} but records give {:?}",
                self.header.splits, counts
            )));
        }
        Ok(())
    }
}

/// Parameters of a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub geometry: GridGeometry,
    pub splits: SplitSizes,
    pub seed: u64,
    pub style: SceneStyle,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl DatasetConfig {
    pub fn new(geometry: GridGeometry, splits: SplitSizes, seed: u64) -> Self {
        Self {
            name: "synthetic".into(),
            geometry,
            splits,
            seed,
            style: SceneStyle::Objects,
            min_objects: 1,
            max_objects: 3,
        }
    }

    pub fn with_style(mut self, style: SceneStyle) -> Self {
        self.style = style;
        self
    }

    fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.splits.train == 0 || self.splits.val == 0 || self.splits.test == 0 {
            return Err(Error::arg("every split needs a positive count"));
        }
        if self.min_objects > self.max_objects || self.max_objects > MAX_OBJECTS {
            return Err(Error::arg(format!(
                "object count range {}..={} must lie within 0..={MAX_OBJECTS}",
                self.min_objects, self.max_objects
            )));
        }
        Ok(())
    }
}

/// One freshly generated record, before it is written out.
#[derive(Clone, Debug)]
pub struct GeneratedRecord {
    pub scene: SceneSpec,
    pub instance: PuzzleInstance,
    pub split: Split,
}

/// Randomness of record `index` depends only on `(seed, index)`.
fn record_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Builds one record in memory: scene, render, fragments, uniform shuffle.
pub fn generate_record(config: &DatasetConfig, split: Split, index: usize) -> Result<GeneratedRecord> {
    let geometry = config.geometry;
    let id = format!("{}-{:05}", split.as_str(), index);
    let global_index = match split {
        Split::Train => index,
        Split::Val => config.splits.train + index,
        Split::Test => config.splits.train + config.splits.val + index,
    };
    let mut rng = record_rng(config.seed, global_index);
    let n_objects = rng.gen_range(config.min_objects..=config.max_objects);
    let tint = match config.style {
        SceneStyle::Objects => None,
        SceneStyle::DistinctCells => Some((geometry.rows, geometry.cols)),
    };
    let scene = SceneSpec::random(&mut rng, n_objects, rng_seed(config.seed, global_index), tint)?;
    let (h, w) = geometry.image_px();
    if h != w {
        return Err(Error::arg("synthetic scenes are square; use rows == cols"));
    }
    let image = render_scene(&scene, h)?;
    let (cells, _) = fragment_image(&image, &geometry, &mut rng)?;
    let shuffle = Permutation::random_with(geometry.n(), &mut rng);
    // pieces[i] comes from cell shuffle[i]
    let pieces = place_pieces(&cells, shuffle.inverse().as_slice());
    let caption = caption_scene(&scene)?;
    Ok(GeneratedRecord {
        scene,
        instance: PuzzleInstance {
            id,
            pieces,
            shuffle,
            caption,
            geometry,
        },
        split,
    })
}

fn rng_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index as u64
}

/// Generates a dataset into `out_dir`: one piece array per record plus
/// `manifest.jsonl`, written last through a temporary file and a rename.
pub fn make_dataset(config: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::with_capacity(config.splits.total());
    for split in Split::ALL {
        for index in 0..config.splits.get(split) {
            let rec = generate_record(config, split, index)?;
            let inst = &rec.instance;
            let file = PathBuf::from(format!("{}.bin", inst.id));
            let shape = inst.pieces.shape().to_vec();
            let data: Vec<f32> = inst.pieces.iter().copied().collect();
            write_array(&out_dir.join(&file), &shape, &data)?;
            records.push(ManifestRecord {
                id: inst.id.clone(),
                split,
                pieces: file,
                caption: inst.caption.clone(),
                shuffle: inst.shuffle.clone(),
                vfeat: None,
                tfeat: None,
                tglobal: None,
            });
        }
    }
    let manifest = DatasetManifest {
        header: ManifestHeader {
            name: config.name.clone(),
            geometry: config.geometry,
            splits: config.splits,
        },
        records,
    };
    write_manifest(&manifest, &out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Atomically writes a manifest (temporary file, then rename).
pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(manifest.to_jsonl().as_bytes())
            .and_then(|_| f.sync_all())
            .map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Precomputed per-record features read from `.vfeat` / `.tfeat` / `.tglobal`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecomputedFeatures {
    /// Secondary visual features, N×d_b.
    pub visual: Array2<f64>,
    /// Token embeddings, L×d_t.
    pub tokens: Array2<f64>,
    /// Global caption embedding, 1×d_t.
    pub global: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct LoadedRecord {
    pub split: Split,
    pub instance: PuzzleInstance,
    pub features: Option<PrecomputedFeatures>,
}

#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub header: ManifestHeader,
    pub records: Vec<LoadedRecord>,
}

impl LoadedDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &LoadedRecord> + '_ {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn geometry(&self) -> GridGeometry {
        self.header.geometry
    }

    pub fn find(&self, id: &str) -> Option<&LoadedRecord> {
        self.records.iter().find(|r| r.instance.id == id)
    }
}

/// Widths precomputed features must have, when the caller knows them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FeatureWidths {
    pub visual: usize,
    pub text: usize,
}

pub fn read_manifest(manifest_path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    DatasetManifest::parse(&text, manifest_path)
}

/// Loads every record of a manifest, checking each array against the
/// geometry (and against `widths`, when given, for precomputed features).
pub fn load_external(manifest_path: &Path, widths: Option<FeatureWidths>) -> Result<LoadedDataset> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let geometry = manifest.header.geometry;
    let records = manifest
        .records
        .iter()
        .map(|r| load_record(r, base, &geometry, widths))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedDataset {
        header: manifest.header,
        records,
    })
}

fn load_record(
    rec: &ManifestRecord,
    base: &Path,
    geometry: &GridGeometry,
    widths: Option<FeatureWidths>,
) -> Result<LoadedRecord> {
    let fail = |reason: String| Error::Load {
        id: rec.id.clone(),
        reason,
    };
    let (shape, data) = read_array(&base.join(&rec.pieces)).map_err(&fail)?;
    let p = geometry.piece_px;
    let want = vec![geometry.n(), p, p, 3];
    if shape != want {
        return Err(fail(format!("piece array has shape {shape:?}, geometry needs {want:?}")));
    }
    let pieces = Pieces::from_shape_vec((want[0], want[1], want[2], want[3]), data)
        .map_err(|e| fail(e.to_string()))?;
    let instance = PuzzleInstance {
        id: rec.id.clone(),
        pieces,
        shuffle: rec.shuffle.clone(),
        caption: rec.caption.clone(),
        geometry: *geometry,
    };
    instance.validate().map_err(|e| fail(e.to_string()))?;

    let features = match (&rec.vfeat, &rec.tfeat, &rec.tglobal) {
        (None, None, None) => None,
        (Some(v), Some(t), Some(g)) => {
            let visual = read_matrix(&base.join(v), &fail)?;
            let tokens = read_matrix(&base.join(t), &fail)?;
            let global = read_matrix(&base.join(g), &fail)?;
            if visual.nrows() != geometry.n() {
                return Err(fail(format!(
                    "vfeat has {} rows for {} pieces",
                    visual.nrows(),
                    geometry.n()
                )));
            }
            if tokens.nrows() == 0 {
                return Err(fail("tfeat has no tokens".into()));
            }
            if global.dim() != (1, tokens.ncols()) {
                return Err(fail(format!(
                    "tglobal has shape {:?}, tfeat width is {}",
                    global.dim(),
                    tokens.ncols()
                )));
            }
            if let Some(w) = widths {
                if visual.ncols() != w.visual || tokens.ncols() != w.text {
                    return Err(fail(format!(
                        "feature widths (d_b={}, d_t={}) differ from the configured ({}, {})",
                        visual.ncols(),
                        tokens.ncols(),
                        w.visual,
                        w.text
                    )));
                }
            }
            Some(PrecomputedFeatures {
                visual,
                tokens,
                global,
            })
        }
        _ => return Err(fail("vfeat, tfeat and tglobal must be given together".into())),
    };
    Ok(LoadedRecord {
        split: rec.split,
        instance,
        features,
    })
}

/// Reads a 1-D or 2-D container as a matrix (vectors become one row).
fn read_matrix(path: &Path, fail: &impl Fn(String) -> Error) -> Result<Array2<f64>> {
    let (shape, data) = read_array(path).map_err(fail)?;
    let (r, c) = match shape.as_slice() {
        [c] => (1, *c),
        [r, c] => (*r, *c),
        other => return Err(fail(format!("{} has rank-{} shape", path.display(), other.len()))),
    };
    Array2::from_shape_vec((r, c), data.into_iter().map(f64::from).collect())
        .map_err(|e| fail(e.to_string()))
}

/// Writes precomputed features for `id` next to a manifest, returning the
/// relative paths to put in its record.
pub fn write_features(
    dir: &Path,
    id: &str,
    features: &PrecomputedFeatures,
) -> Result<(PathBuf, PathBuf, PathBuf)> {
    let mut paths = Vec::with_capacity(3);
    for (ext, m) in [
        ("vfeat", &features.visual),
        ("tfeat", &features.tokens),
        ("tglobal", &features.global),
    ] {
        let rel = PathBuf::from(format!("{id}.{ext}"));
        let data: Vec<f32> = m.iter().map(|&v| v as f32).collect();
        let shape = if ext == "tglobal" {
            vec![m.ncols()]
        } else {
            vec![m.nrows(), m.ncols()]
        };
        write_array(&dir.join(&rel), &shape, &data)?;
        paths.push(rel);
    }
    let tg = paths.pop().unwrap();
    let tf = paths.pop().unwrap();
    let vf = paths.pop().unwrap();
    Ok((vf, tf, tg))
}

/// Per-channel multiplicative colour noise in `[0.9, 1.1]`, shared by all
/// pieces of an instance, clamped back to `[0, 1]`.
pub fn color_jitter<R: Rng + ?Sized>(pieces: &mut Pieces, rng: &mut R) {
    let factors: [f32; 3] = [
        rng.gen_range(0.9..=1.1),
        rng.gen_range(0.9..=1.1),
        rng.gen_range(0.9..=1.1),
    ];
    for mut px in pieces.lanes_mut(ndarray::Axis(3)) {
        for (v, f) in px.iter_mut().zip(factors) {
            *v = (*v * f).clamp(0.0, 1.0);
        }
    }
}
