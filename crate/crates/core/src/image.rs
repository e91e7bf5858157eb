//! Sample grids as 8-bit greyscale images.

use std::fs;
use std::path::Path;

use crate::error::{DgaError, Result};

/// Tile geometry of a sample grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridLayout {
    pub tile_height: usize,
    pub tile_width: usize,
    pub rows: usize,
    pub cols: usize,
}

impl GridLayout {
    /// Square tiles of side `side` in a `rows x cols` grid.
    pub fn square(side: usize, rows: usize, cols: usize) -> Self {
        Self { tile_height: side, tile_width: side, rows, cols }
    }

    pub fn width(&self) -> usize {
        self.tile_width * self.cols
    }

    pub fn height(&self) -> usize {
        self.tile_height * self.rows
    }
}

/// Maps a mean in `[0, 1]` to `floor(255 m)`.
pub fn to_grey(m: f64) -> u8 {
    (m.clamp(0.0, 1.0) * 255.0).floor() as u8
}

/// Lays out `tiles` row-major (tile `r * cols + c` at grid row `r`, column
/// `c`) and returns the raster, one byte per pixel.
pub fn grid_pixels(tiles: &[Vec<f64>], layout: GridLayout) -> Result<Vec<u8>> {
    let GridLayout { tile_height: th, tile_width: tw, rows, cols } = layout;
    if th == 0 || tw == 0 || rows == 0 || cols == 0 {
        return Err(DgaError::Config(format!("empty grid layout {layout:?}")));
    }
    if tiles.len() != rows * cols {
        return Err(DgaError::Shape(format!("a {rows}x{cols} grid needs {} tiles, got {}", rows * cols, tiles.len())));
    }
    if let Some((i, t)) = tiles.iter().enumerate().find(|(_, t)| t.len() != th * tw) {
        return Err(DgaError::Shape(format!("tile {i} has {} values, expected {th}x{tw} = {}", t.len(), th * tw)));
    }
    let width = layout.width();
    let mut px = vec![0u8; width * layout.height()];
    for (i, tile) in tiles.iter().enumerate() {
        let (gr, gc) = (i / cols, i % cols);
        for y in 0..th {
            let dst = (gr * th + y) * width + gc * tw;
            for (d, &m) in px[dst..dst + tw].iter_mut().zip(&tile[y * tw..(y + 1) * tw]) {
                *d = to_grey(m);
            }
        }
    }
    Ok(px)
}

/// Binary PGM (`P5`) bytes for a grid of tiles.
pub fn emit_sample_grid(tiles: &[Vec<f64>], layout: GridLayout) -> Result<Vec<u8>> {
    let px = grid_pixels(tiles, layout)?;
    let mut out = format!("P5\n{} {}\n255\n", layout.width(), layout.height()).into_bytes();
    out.extend_from_slice(&px);
    Ok(out)
}

pub fn write_pgm(path: &Path, tiles: &[Vec<f64>], layout: GridLayout) -> Result<()> {
    let bytes = emit_sample_grid(tiles, layout)?;
    fs::write(path, bytes).map_err(|e| DgaError::io(path, e))
}

/// PNG output of the same raster.
#[cfg(feature = "png")]
pub fn write_png(path: &Path, tiles: &[Vec<f64>], layout: GridLayout) -> Result<()> {
    let px = grid_pixels(tiles, layout)?;
    let img = image::GrayImage::from_raw(layout.width() as u32, layout.height() as u32, px)
        .ok_or_else(|| DgaError::Shape("raster size mismatch".into()))?;
    img.save(path).map_err(|e| DgaError::format(path, e.to_string()))
}

/// Parses a binary PGM, returning `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8], origin: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(DgaError::format(origin, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(DgaError::format(origin, format!("unsupported PGM header {fields:?}")));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| DgaError::format(origin, format!("bad PGM dimension {s:?}")));
    let (w, h) = (num(&fields[1])?, num(&fields[2])?);
    let px = bytes.get(pos..).unwrap_or_default();
    if px.len() != w * h {
        return Err(DgaError::format(origin, format!("PGM has {} pixel bytes, expected {}", px.len(), w * h)));
    }
    Ok((w, h, px.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_white_tile() {
        let bytes = emit_sample_grid(&[vec![1.0; 4]], GridLayout::square(2, 1, 1)).unwrap();
        let mut expected = b"P5\n2 2\n255\n".to_vec();
        expected.extend([255; 4]);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn grey_levels_floor() {
        assert_eq!(to_grey(0.5), 127);
        assert_eq!(to_grey(0.0), 0);
        assert_eq!(to_grey(1.0 - 1e-12), 254);
        assert_eq!(to_grey(1.5), 255);
    }

    #[test]
    fn mnist_grid_dimensions() {
        let tiles: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 100.0; 784]).collect();
        let bytes = emit_sample_grid(&tiles, GridLayout::square(28, 10, 10)).unwrap();
        let (w, h, px) = parse_pgm(&bytes, Path::new("grid")).unwrap();
        assert_eq!((w, h), (280, 280));
        // Tile 23 is grid row 2, column 3.
        assert_eq!(px[(2 * 28 + 5) * 280 + 3 * 28 + 7], to_grey(0.23));
    }

    #[test]
    fn tile_placement_is_row_major() {
        let tiles = vec![vec![0.0], vec![1.0], vec![0.0], vec![0.0], vec![0.0], vec![1.0]];
        let px = grid_pixels(&tiles, GridLayout::square(1, 2, 3)).unwrap();
        assert_eq!(px, vec![0, 255, 0, 0, 0, 255]);
    }

    #[test]
    fn size_mismatches_rejected() {
        let layout = GridLayout::square(2, 1, 2);
        assert!(matches!(grid_pixels(&[vec![0.0; 4]], layout), Err(DgaError::Shape(_))));
        assert!(matches!(grid_pixels(&[vec![0.0; 4], vec![0.0; 3]], layout), Err(DgaError::Shape(_))));
        assert!(matches!(grid_pixels(&[], GridLayout::square(0, 0, 0)), Err(DgaError::Config(_))));
    }
}
