//! Grid puzzles, permutations, and the reconstruction metrics.

use std::fmt;

use ndarray::Array4;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layout of a rectangular puzzle and the pixel geometry of its fragments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Side of one square fragment, in pixels.
    pub piece_px: usize,
    /// Eroded pixels between neighbouring cells.
    pub gap_px: usize,
    /// Maximum per-axis displacement of a fragment inside its cell.
    pub jitter_px: usize,
}

impl GridGeometry {
    pub fn new(
        rows: usize,
        cols: usize,
        piece_px: usize,
        gap_px: usize,
        jitter_px: usize,
    ) -> Result<Self> {
        let g = Self {
            rows,
            cols,
            piece_px,
            gap_px,
            jitter_px,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::arg(format!(
                "grid must be at least 2x2, got {}x{}",
                self.rows, self.cols
            )));
        }
        if self.piece_px == 0 {
            return Err(Error::arg("piece_px must be positive"));
        }
        if self.jitter_px > self.gap_px / 2 {
            return Err(Error::arg(format!(
                "jitter_px {} exceeds half the gap ({})",
                self.jitter_px,
                self.gap_px / 2
            )));
        }
        Ok(())
    }

    /// Number of pieces.
    pub fn n(&self) -> usize {
        self.rows * self.cols
    }

    /// Side of one cell of the source image: fragment plus gap.
    pub fn cell_px(&self) -> usize {
        self.piece_px + self.gap_px
    }

    pub fn image_px(&self) -> (usize, usize) {
        (self.rows * self.cell_px(), self.cols * self.cell_px())
    }

    /// (row, col) of a row-major cell index.
    pub fn cell(&self, pos: usize) -> (usize, usize) {
        (pos / self.cols, pos % self.cols)
    }

    /// Ordered pairs of cells `(a, b)` with `a` immediately left of (horizontal)
    /// or immediately above (vertical) `b`.
    pub fn adjacent_cells(&self, axis: Axis) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                let p = r * self.cols + c;
                match axis {
                    Axis::Horizontal if c + 1 < self.cols => out.push((p, p + 1)),
                    Axis::Vertical if r + 1 < self.rows => out.push((p, p + self.cols)),
                    _ => {}
                }
            }
        }
        out
    }

    /// Whether cell `a` sits immediately left of / above cell `b`.
    pub fn is_adjacent(&self, a: usize, b: usize, axis: Axis) -> bool {
        let (ra, ca) = self.cell(a);
        let (rb, cb) = self.cell(b);
        match axis {
            Axis::Horizontal => ra == rb && ca + 1 == cb,
            Axis::Vertical => ca == cb && ra + 1 == rb,
        }
    }
}

impl fmt::Display for GridGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{} pieces of {}px, gap {}px, jitter ±{}px",
            self.rows, self.cols, self.piece_px, self.gap_px, self.jitter_px
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// Bijection piece index → grid position. `mapping[i]` is the cell of piece `i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation(Vec<usize>);

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(mapping: Vec<usize>) -> Result<Self> {
        Permutation::new(mapping)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.0
    }
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &m in &mapping {
            if m >= n || std::mem::replace(&mut seen[m], true) {
                return Err(Error::arg(format!(
                    "{mapping:?} is not a permutation of 0..{n}"
                )));
            }
        }
        Ok(Self(mapping))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    /// Uniform draw from S_n, fixed by `seed`.
    pub fn random(n: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::arg("random permutation needs n >= 2"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::random_with(n, &mut rng))
    }

    pub fn random_with<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(rng);
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn get(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &m) in self.0.iter().enumerate() {
            inv[m] = i;
        }
        Self(inv)
    }

    /// `(self ∘ other)[i] = self[other[i]]`: apply `other` first.
    pub fn compose(&self, other: &Permutation) -> Result<Self> {
        check_len(self, other)?;
        Ok(Self(other.0.iter().map(|&j| self.0[j]).collect()))
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &m)| i == m)
    }

    /// Number of indices that are not fixed points.
    pub fn misplaced_against(&self, truth: &Permutation) -> Result<usize> {
        check_len(self, truth)?;
        Ok(self.0.iter().zip(&truth.0).filter(|(a, b)| a != b).count())
    }
}

fn check_len(a: &Permutation, b: &Permutation) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::arg(format!(
            "permutation size mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Fragments of one puzzle, `N × piece_px × piece_px × 3`, values in `[0, 1]`.
pub type Pieces = Array4<f32>;

/// One shuffled puzzle: `pieces[i]` was cut from cell `shuffle[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PuzzleInstance {
    pub id: String,
    pub pieces: Pieces,
    pub shuffle: Permutation,
    pub caption: String,
    pub geometry: GridGeometry,
}

impl PuzzleInstance {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let n = self.geometry.n();
        let p = self.geometry.piece_px;
        if self.pieces.dim() != (n, p, p, 3) {
            return Err(Error::arg(format!(
                "instance {} has pieces {:?}, expected ({n}, {p}, {p}, 3)",
                self.id,
                self.pieces.dim()
            )));
        }
        if self.shuffle.len() != n {
            return Err(Error::arg(format!(
                "instance {} has a shuffle of length {} for {n} pieces",
                self.id,
                self.shuffle.len()
            )));
        }
        if self.caption.trim().is_empty() {
            return Err(Error::arg(format!("instance {} has an empty caption", self.id)));
        }
        Ok(())
    }
}

/// Fraction of pieces placed at their true cell.
pub fn piece_accuracy(pred: &Permutation, truth: &Permutation) -> Result<f64> {
    let misplaced = pred.misplaced_against(truth)?;
    Ok((truth.len() - misplaced) as f64 / truth.len() as f64)
}

/// Fraction of ground-truth neighbouring piece pairs along `axis` that the
/// prediction keeps as the same directed immediate adjacency.
pub fn neighbor_accuracy(
    pred: &Permutation,
    truth: &Permutation,
    geometry: &GridGeometry,
    axis: Axis,
) -> Result<f64> {
    check_len(pred, truth)?;
    if truth.len() != geometry.n() {
        return Err(Error::arg(format!(
            "permutation has {} entries but geometry has {} cells",
            truth.len(),
            geometry.n()
        )));
    }
    // Piece occupying each cell under the ground truth.
    let piece_at = truth.inverse();
    let pairs = geometry.adjacent_cells(axis);
    let kept = pairs
        .iter()
        .filter(|&&(ca, cb)| {
            let (a, b) = (piece_at.get(ca), piece_at.get(cb));
            geometry.is_adjacent(pred.get(a), pred.get(b), axis)
        })
        .count();
    Ok(kept as f64 / pairs.len() as f64)
}

/// Error level of one reconstruction by number of misplaced pieces.
/// A permutation can never misplace exactly one piece, so there is no 1-off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OffBy {
    Perfect,
    Two,
    Three,
    Four,
    Five,
    SixOrMore,
}

impl OffBy {
    pub const ALL: [OffBy; 6] = [
        OffBy::Perfect,
        OffBy::Two,
        OffBy::Three,
        OffBy::Four,
        OffBy::Five,
        OffBy::SixOrMore,
    ];

    pub fn from_misplaced(m: usize) -> Self {
        match m {
            0 => OffBy::Perfect,
            1 => unreachable!("a permutation cannot misplace exactly one piece"),
            2 => OffBy::Two,
            3 => OffBy::Three,
            4 => OffBy::Four,
            5 => OffBy::Five,
            _ => OffBy::SixOrMore,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            OffBy::Perfect => "Perfect",
            OffBy::Two => "2-off",
            OffBy::Three => "3-off",
            OffBy::Four => "4-off",
            OffBy::Five => "5-off",
            OffBy::SixOrMore => "≥6-off",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for OffBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub fn off_by_category(pred: &Permutation, truth: &Permutation) -> Result<OffBy> {
    Ok(OffBy::from_misplaced(pred.misplaced_against(truth)?))
}

/// Normalized histogram over [`OffBy`] categories.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffByHistogram {
    #[serde(rename = "Perfect")]
    pub perfect: f64,
    #[serde(rename = "2-off")]
    pub two: f64,
    #[serde(rename = "3-off")]
    pub three: f64,
    #[serde(rename = "4-off")]
    pub four: f64,
    #[serde(rename = "5-off")]
    pub five: f64,
    #[serde(rename = "≥6-off")]
    pub six_or_more: f64,
}

impl OffByHistogram {
    pub fn get(&self, c: OffBy) -> f64 {
        self.as_array()[c.slot()]
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.perfect,
            self.two,
            self.three,
            self.four,
            self.five,
            self.six_or_more,
        ]
    }

    fn from_array(a: [f64; 6]) -> Self {
        Self {
            perfect: a[0],
            two: a[1],
            three: a[2],
            four: a[3],
            five: a[4],
            six_or_more: a[5],
        }
    }
}

/// Dataset-level reconstruction quality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub perfect: f64,
    pub piece: f64,
    pub horizontal: f64,
    pub vertical: f64,
    pub off_by_k: OffByHistogram,
    pub n_samples: usize,
}

/// Per-instance means of every metric, plus the normalized off-by-k histogram.
pub fn aggregate_report(
    preds: &[Permutation],
    truths: &[Permutation],
    geometry: &GridGeometry,
) -> Result<EvalReport> {
    if preds.is_empty() {
        return Err(Error::arg("cannot aggregate an empty prediction set"));
    }
    if preds.len() != truths.len() {
        return Err(Error::arg(format!(
            "{} predictions for {} ground truths",
            preds.len(),
            truths.len()
        )));
    }
    let n = preds.len() as f64;
    let (mut piece, mut horizontal, mut vertical) = (0.0, 0.0, 0.0);
    let mut counts = [0usize; 6];
    for (p, t) in preds.iter().zip(truths) {
        piece += piece_accuracy(p, t)?;
        horizontal += neighbor_accuracy(p, t, geometry, Axis::Horizontal)?;
        vertical += neighbor_accuracy(p, t, geometry, Axis::Vertical)?;
        counts[off_by_category(p, t)?.slot()] += 1;
    }
    let hist = OffByHistogram::from_array(counts.map(|c| c as f64 / n));
    Ok(EvalReport {
        perfect: hist.perfect,
        piece: piece / n,
        horizontal: horizontal / n,
        vertical: vertical / n,
        off_by_k: hist,
        n_samples: preds.len(),
    })
}
