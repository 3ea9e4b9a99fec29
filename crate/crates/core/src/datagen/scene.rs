//! Procedural scenes: a coloured background with up to four simple shapes
//! placed on a coarse 3×3 layout, plus a template caption naming each
//! object's colour, shape, and location.

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An RGB image, `height × width × 3`, values in `[0, 1]`.
pub type Image = Array3<f32>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaletteColor {
    Red,
    Green,
    Blue,
    Yellow,
    Orange,
    Purple,
    White,
    Black,
}

impl PaletteColor {
    pub const ALL: [PaletteColor; 8] = [
        PaletteColor::Red,
        PaletteColor::Green,
        PaletteColor::Blue,
        PaletteColor::Yellow,
        PaletteColor::Orange,
        PaletteColor::Purple,
        PaletteColor::White,
        PaletteColor::Black,
    ];

    pub fn rgb(self) -> [f32; 3] {
        match self {
            PaletteColor::Red => [0.9, 0.1, 0.1],
            PaletteColor::Green => [0.1, 0.7, 0.2],
            PaletteColor::Blue => [0.1, 0.2, 0.9],
            PaletteColor::Yellow => [0.95, 0.85, 0.1],
            PaletteColor::Orange => [1.0, 0.55, 0.0],
            PaletteColor::Purple => [0.55, 0.2, 0.75],
            PaletteColor::White => [1.0, 1.0, 1.0],
            PaletteColor::Black => [0.05, 0.05, 0.05],
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            PaletteColor::Red => "red",
            PaletteColor::Green => "green",
            PaletteColor::Blue => "blue",
            PaletteColor::Yellow => "yellow",
            PaletteColor::Orange => "orange",
            PaletteColor::Purple => "purple",
            PaletteColor::White => "white",
            PaletteColor::Black => "black",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Stripe,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Stripe];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Stripe => "stripe",
        }
    }

    /// Whether offset `(dx, dy)` from the object centre lies inside the
    /// shape of radius `r`.
    fn contains(self, dx: f32, dy: f32, r: f32) -> bool {
        match self {
            Shape::Circle => dx * dx + dy * dy <= r * r,
            Shape::Square => dx.abs() <= 0.8 * r && dy.abs() <= 0.8 * r,
            Shape::Triangle => {
                // apex up at -r, base at +0.8r, base half-width r
                dy >= -r && dy <= 0.8 * r && dx.abs() <= (dy + r) / 1.8
            }
            Shape::Stripe => dx.abs() <= r && dy.abs() <= 0.3 * r,
        }
    }
}

/// Cell of the coarse 3×3 layout an object is centred in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub row: usize,
    pub col: usize,
}

pub const LAYOUT: usize = 3;

impl Placement {
    pub fn all() -> impl Iterator<Item = Placement> {
        (0..LAYOUT * LAYOUT).map(|i| Placement {
            row: i / LAYOUT,
            col: i % LAYOUT,
        })
    }

    pub fn word(self) -> Result<&'static str> {
        const WORDS: [[&str; 3]; 3] = [
            ["top-left", "top", "top-right"],
            ["left", "center", "right"],
            ["bottom-left", "bottom", "bottom-right"],
        ];
        WORDS
            .get(self.row)
            .and_then(|r| r.get(self.col))
            .copied()
            .ok_or_else(|| {
                Error::arg(format!(
                    "placement ({}, {}) is outside the 3x3 layout",
                    self.row, self.col
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: PaletteColor,
    pub placement: Placement,
}

/// Everything needed to render a scene and caption it, deterministically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub background: PaletteColor,
    pub objects: Vec<SceneObject>,
    pub seed: u64,
    /// When set to the puzzle grid `(rows, cols)`, every grid cell gets its
    /// own position-coded tint, which makes each fragment's location
    /// recoverable from its colour alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_tint: Option<(usize, usize)>,
}

pub const MAX_OBJECTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneStyle {
    /// Plain background; only the objects carry content.
    Objects,
    /// Every grid cell tinted with a colour unique to its position.
    DistinctCells,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.objects.len() > MAX_OBJECTS {
            return Err(Error::arg(format!(
                "a scene holds at most {MAX_OBJECTS} objects, got {}",
                self.objects.len()
            )));
        }
        for o in &self.objects {
            o.placement.word()?;
        }
        if let Some((r, c)) = self.cell_tint {
            if r == 0 || c == 0 {
                return Err(Error::arg("cell tint grid must be non-empty"));
            }
        }
        Ok(())
    }

    /// Draws a random scene with `n_objects` objects in distinct layout cells,
    /// each with a colour different from the background and a distinct
    /// (colour, shape) pair.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        n_objects: usize,
        seed: u64,
        cell_tint: Option<(usize, usize)>,
    ) -> Result<Self> {
        if n_objects > MAX_OBJECTS {
            return Err(Error::arg(format!("at most {MAX_OBJECTS} objects")));
        }
        // black backgrounds flatten position tints, so they are excluded
        let backgrounds: Vec<_> = PaletteColor::ALL
            .into_iter()
            .filter(|&c| c != PaletteColor::Black)
            .collect();
        let background = *backgrounds.choose(rng).expect("non-empty palette");
        let mut placements: Vec<Placement> = Placement::all().collect();
        placements.shuffle(rng);
        let colors: Vec<_> = PaletteColor::ALL
            .into_iter()
            .filter(|&c| c != background)
            .collect();
        let mut objects: Vec<SceneObject> = Vec::with_capacity(n_objects);
        for placement in placements.into_iter().take(n_objects) {
            loop {
                let color = *colors.choose(rng).expect("non-empty");
                let shape = *Shape::ALL.choose(rng).expect("non-empty");
                if !objects.iter().any(|o| o.color == color && o.shape == shape) {
                    objects.push(SceneObject {
                        shape,
                        color,
                        placement,
                    });
                    break;
                }
            }
        }
        Ok(Self {
            background,
            objects,
            seed,
            cell_tint,
        })
    }
}

/// Distinct hue for grid cell `k` of `n`, used by position tinting.
pub fn position_tint(k: usize, n: usize) -> [f32; 3] {
    let h = k as f32 / n as f32 * 6.0;
    let (s, v) = (0.85_f32, 0.5 + 0.45 * ((k % 2) as f32));
    let i = h.floor();
    let f = h - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Renders `spec` as a square `image_px × image_px` image. Objects are drawn
/// in list order, so later objects cover earlier ones.
pub fn render_scene(spec: &SceneSpec, image_px: usize) -> Result<Image> {
    spec.validate()?;
    if image_px == 0 {
        return Err(Error::arg("image_px must be positive"));
    }
    let bg = spec.background.rgb();
    let mut img = Image::zeros((image_px, image_px, 3));
    for y in 0..image_px {
        for x in 0..image_px {
            for ch in 0..3 {
                img[[y, x, ch]] = bg[ch];
            }
        }
    }

    if let Some((rows, cols)) = spec.cell_tint {
        if !image_px.is_multiple_of(rows) || !image_px.is_multiple_of(cols) {
            return Err(Error::arg(format!(
                "image side {image_px} is not divisible by the {rows}x{cols} grid"
            )));
        }
        let (ch_px, cw_px) = (image_px / rows, image_px / cols);
        for y in 0..image_px {
            for x in 0..image_px {
                let k = (y / ch_px) * cols + x / cw_px;
                let tint = position_tint(k, rows * cols);
                for ch in 0..3 {
                    img[[y, x, ch]] = 0.3 * bg[ch] + 0.7 * tint[ch];
                }
            }
        }
    }

    let cell = image_px as f32 / LAYOUT as f32;
    let r = 0.3 * cell;
    for obj in &spec.objects {
        let cx = (obj.placement.col as f32 + 0.5) * cell;
        let cy = (obj.placement.row as f32 + 0.5) * cell;
        let rgb = obj.color.rgb();
        let (x0, x1) = span(cx, r, image_px);
        let (y0, y1) = span(cy, r, image_px);
        for y in y0..y1 {
            for x in x0..x1 {
                let dx = x as f32 + 0.5 - cx;
                let dy = y as f32 + 0.5 - cy;
                if obj.shape.contains(dx, dy, r) {
                    for ch in 0..3 {
                        img[[y, x, ch]] = rgb[ch];
                    }
                }
            }
        }
    }
    Ok(img)
}

fn span(center: f32, r: f32, limit: usize) -> (usize, usize) {
    let lo = (center - r - 1.0).floor().max(0.0) as usize;
    let hi = ((center + r + 1.0).ceil() as usize).min(limit);
    (lo, hi)
}

/// Template caption, e.g. `red circle top-left, blue square center on green`.
/// A scene without objects reads `a plain <colour> background`.
pub fn caption_scene(spec: &SceneSpec) -> Result<String> {
    spec.validate()?;
    if spec.objects.is_empty() {
        return Ok(format!("a plain {} background", spec.background.word()));
    }
    let parts = spec
        .objects
        .iter()
        .map(|o| {
            Ok(format!(
                "{} {} {}",
                o.color.word(),
                o.shape.word(),
                o.placement.word()?
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(format!("{} on {}", parts.join(", "), spec.background.word()))
}

/// Closed vocabulary of every word the caption templates can produce.
pub fn caption_vocabulary() -> Vec<&'static str> {
    let mut words = vec!["a", "plain", "background", "on"];
    words.extend(PaletteColor::ALL.iter().map(|c| c.word()));
    words.extend(Shape::ALL.iter().map(|s| s.word()));
    words.extend(Placement::all().map(|p| p.word().expect("layout word")));
    words
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn red_circle_top_left() -> SceneSpec {
        SceneSpec {
            background: PaletteColor::Green,
            objects: vec![SceneObject {
                shape: Shape::Circle,
                color: PaletteColor::Red,
                placement: Placement { row: 0, col: 0 },
            }],
            seed: 0,
            cell_tint: None,
        }
    }

    #[test]
    fn empty_scene_is_constant_background() {
        let spec = SceneSpec {
            background: PaletteColor::Blue,
            objects: vec![],
            seed: 1,
            cell_tint: None,
        };
        let img = render_scene(&spec, 30).unwrap();
        let rgb = PaletteColor::Blue.rgb();
        for px in img.outer_iter().flat_map(|row| row.outer_iter().map(|p| p.to_vec()).collect::<Vec<_>>()) {
            assert_eq!(px, rgb.to_vec());
        }
        assert_eq!(caption_scene(&spec).unwrap(), "a plain blue background");
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = red_circle_top_left();
        assert_eq!(render_scene(&spec, 60).unwrap(), render_scene(&spec, 60).unwrap());
        assert_eq!(caption_scene(&spec).unwrap(), caption_scene(&spec).unwrap());
    }

    #[test]
    fn circle_centre_pixel_is_palette_red() {
        let img = render_scene(&red_circle_top_left(), 60).unwrap();
        // top-left layout cell spans 0..20, centre at 10.0 -> pixel (10, 10)
        let px: Vec<f32> = (0..3).map(|c| img[[10, 10, c]]).collect();
        assert_eq!(px, PaletteColor::Red.rgb().to_vec());
        let corner: Vec<f32> = (0..3).map(|c| img[[0, 59, c]]).collect();
        assert_eq!(corner, PaletteColor::Green.rgb().to_vec());
    }

    #[test]
    fn out_of_layout_placement_is_rejected() {
        let mut spec = red_circle_top_left();
        spec.objects[0].placement = Placement { row: 3, col: 0 };
        assert!(matches!(render_scene(&spec, 60), Err(Error::Argument(_))));
    }

    #[test]
    fn caption_mentions_every_object() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 0..=MAX_OBJECTS {
            let spec = SceneSpec::random(&mut rng, n, 5, None).unwrap();
            let cap = caption_scene(&spec).unwrap();
            let words = cap.replace(',', " ");
            let words: Vec<&str> = words.split_whitespace().collect();
            assert!((4..=14).contains(&words.len()), "{cap}");
            for o in &spec.objects {
                assert!(words.contains(&o.shape.word()));
                assert!(words.contains(&o.color.word()));
            }
            // and conversely: every colour/shape word names something in the scene
            for w in &words {
                if let Some(s) = Shape::ALL.iter().find(|s| s.word() == *w) {
                    assert!(spec.objects.iter().any(|o| o.shape == *s));
                }
                if let Some(c) = PaletteColor::ALL.iter().find(|c| c.word() == *w) {
                    assert!(*c == spec.background || spec.objects.iter().any(|o| o.color == *c));
                }
            }
            let vocab = caption_vocabulary();
            assert!(words.iter().all(|w| vocab.contains(w)));
        }
    }

    #[test]
    fn position_tints_are_distinct() {
        for n in [4, 9, 25] {
            let tints: Vec<_> = (0..n).map(|k| position_tint(k, n)).collect();
            for i in 0..n {
                for j in i + 1..n {
                    let d: f32 = (0..3).map(|c| (tints[i][c] - tints[j][c]).abs()).sum();
                    assert!(d > 0.05, "tints {i} and {j} of {n} too close");
                }
            }
        }
    }
}
