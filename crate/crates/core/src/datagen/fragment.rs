use ndarray::s;
use rand::Rng;

use super::scene::Image;
use crate::error::{Error, Result};
use crate::puzzle::{GridGeometry, Pieces};

/// Per-piece (dy, dx) displacement applied at extraction.
pub type Jitter = (i32, i32);

/// Cuts the image into `rows × cols` cells of side `piece_px + gap_px` and
/// extracts one centred `piece_px` square per cell, displaced per axis by a
/// uniform integer jitter in `[-jitter_px, jitter_px]`. Pieces come back in
/// row-major cell order.
pub fn fragment_image<R: Rng + ?Sized>(
    image: &Image,
    geometry: &GridGeometry,
    rng: &mut R,
) -> Result<(Pieces, Vec<Jitter>)> {
    geometry.validate()?;
    let (h, w) = geometry.image_px();
    if image.dim() != (h, w, 3) {
        return Err(Error::arg(format!(
            "image is {:?} but geometry {geometry} needs {h}x{w}x3",
            image.dim()
        )));
    }
    let p = geometry.piece_px;
    let cell = geometry.cell_px();
    let margin = (geometry.gap_px / 2) as i64;
    let j = geometry.jitter_px as i32;
    let mut pieces = Pieces::zeros((geometry.n(), p, p, 3));
    let mut jitters = Vec::with_capacity(geometry.n());
    for k in 0..geometry.n() {
        let (r, c) = geometry.cell(k);
        let (dy, dx) = if j > 0 {
            (rng.gen_range(-j..=j), rng.gen_range(-j..=j))
        } else {
            (0, 0)
        };
        let y0 = (r * cell) as i64 + margin + dy as i64;
        let x0 = (c * cell) as i64 + margin + dx as i64;
        // jitter <= gap/2 keeps the crop inside its own cell
        let (y0, x0) = (y0 as usize, x0 as usize);
        pieces
            .slice_mut(s![k, .., .., ..])
            .assign(&image.slice(s![y0..y0 + p, x0..x0 + p, ..]));
        jitters.push((dy, dx));
    }
    Ok((pieces, jitters))
}

/// Places piece `k` at cell `k` of a gapless `rows·p × cols·p` canvas.
pub fn stitch(pieces: &Pieces, rows: usize, cols: usize) -> Result<Image> {
    let (n, p, p2, ch) = pieces.dim();
    if n != rows * cols || p != p2 || ch != 3 {
        return Err(Error::arg(format!(
            "cannot stitch {:?} pieces into a {rows}x{cols} grid",
            pieces.dim()
        )));
    }
    let mut img = Image::zeros((rows * p, cols * p, 3));
    for k in 0..n {
        let (r, c) = (k / cols, k % cols);
        img.slice_mut(s![r * p..(r + 1) * p, c * p..(c + 1) * p, ..])
            .assign(&pieces.slice(s![k, .., .., ..]));
    }
    Ok(img)
}

/// Reorders pieces so that output slot `mapping[i]` holds input piece `i`.
pub fn place_pieces(pieces: &Pieces, mapping: &[usize]) -> Pieces {
    let mut out = Pieces::zeros(pieces.dim());
    for (i, &m) in mapping.iter().enumerate() {
        out.slice_mut(s![m, .., .., ..])
            .assign(&pieces.slice(s![i, .., .., ..]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(side: usize) -> Image {
        Image::from_shape_fn((side, side, 3), |(y, x, c)| {
            ((y * 31 + x * 7 + c * 3) % 97) as f32 / 97.0
        })
    }

    #[test]
    fn gapless_fragments_tile_the_image() {
        let geo = GridGeometry::new(3, 4, 5, 0, 0).unwrap();
        let img = Image::from_shape_fn((15, 20, 3), |(y, x, c)| (y * 20 + x + c) as f32 / 1000.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (pieces, jit) = fragment_image(&img, &geo, &mut rng).unwrap();
        assert!(jit.iter().all(|&j| j == (0, 0)));
        assert_eq!(stitch(&pieces, 3, 4).unwrap(), img);
    }

    #[test]
    fn paper_like_geometries() {
        let geo3 = GridGeometry::new(3, 3, 96, 48, 7).unwrap();
        assert_eq!(geo3.image_px(), (432, 432));
        let geo5 = GridGeometry::new(5, 5, 96, 12, 6).unwrap();
        assert_eq!(geo5.image_px(), (540, 540));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (pieces, jit) = fragment_image(&ramp(432), &geo3, &mut rng).unwrap();
        assert_eq!(pieces.dim(), (9, 96, 96, 3));
        assert!(jit.iter().all(|&(dy, dx)| dy.abs() <= 7 && dx.abs() <= 7));
        let (pieces, _) = fragment_image(&ramp(540), &geo5, &mut rng).unwrap();
        assert_eq!(pieces.dim(), (25, 96, 96, 3));
    }

    #[test]
    fn jittered_piece_matches_its_offset_crop() {
        let geo = GridGeometry::new(2, 2, 6, 4, 2).unwrap();
        let img = ramp(20);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (pieces, jit) = fragment_image(&img, &geo, &mut rng).unwrap();
        for k in 0..4 {
            let (r, c) = geo.cell(k);
            let (dy, dx) = jit[k];
            let y0 = (r * 10 + 2) as i32 + dy;
            let x0 = (c * 10 + 2) as i32 + dx;
            assert_eq!(pieces[[k, 0, 0, 1]], img[[y0 as usize, x0 as usize, 1]]);
            assert_eq!(pieces[[k, 5, 5, 2]], img[[y0 as usize + 5, x0 as usize + 5, 2]]);
        }
    }

    #[test]
    fn mismatched_image_is_rejected() {
        let geo = GridGeometry::new(3, 3, 8, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(fragment_image(&ramp(29), &geo, &mut rng).is_err());
    }
}
