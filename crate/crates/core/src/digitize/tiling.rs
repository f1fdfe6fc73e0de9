//! Sliding-window inference with Gaussian importance weighting.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::GrayImage;

/// Anything that maps a square tile to a same-sized probability map.
pub trait TileModel: Sync {
    fn predict(&self, tile: &GrayImage) -> GrayImage;
}

/// Returns the same probability everywhere.
pub struct ConstantModel(pub f64);

impl TileModel for ConstantModel {
    fn predict(&self, tile: &GrayImage) -> GrayImage {
        GrayImage::new(tile.width(), tile.height(), self.0)
    }
}

/// Separable Gaussian importance map, σ = tile/8, centred on the tile.
pub fn gaussian_window(tile: usize) -> Vec<f64> {
    let sigma = tile as f64 / 8.0;
    let c = (tile as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..tile)
        .map(|i| (-0.5 * ((i as f64 - c) / sigma).powi(2)).exp())
        .collect();
    let mut w = Vec::with_capacity(tile * tile);
    for gy in &g {
        for gx in &g {
            w.push(gy * gx);
        }
    }
    w
}

fn starts(extent: usize, tile: usize, stride: usize) -> Vec<usize> {
    if extent <= tile {
        return vec![0];
    }
    let mut s: Vec<usize> = (0..).map(|k| k * stride).take_while(|&v| v + tile < extent).collect();
    s.push(extent - tile);
    s.dedup();
    s
}

/// Tiles `page` with stride `tile·(1 − overlap)`, predicts every tile,
/// and blends the tiles with Gaussian weights. Pages smaller than a tile
/// are padded with white; the output has the page's size.
pub fn infer_tiled(model: &dyn TileModel, page: &GrayImage, tile: usize, overlap: f64) -> Result<GrayImage> {
    if !(0.0..=0.75).contains(&overlap) {
        return Err(Error::invalid("overlap", format!("{overlap} outside [0, 0.75]")));
    }
    if tile == 0 {
        return Err(Error::invalid("tile", "must be positive"));
    }
    let (w, h) = page.dims();
    let stride = ((tile as f64 * (1.0 - overlap)).round() as usize).max(1);
    let xs = starts(w, tile, stride);
    let ys = starts(h, tile, stride);
    let origins: Vec<(usize, usize)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
    let preds: Vec<GrayImage> = origins
        .par_iter()
        .map(|&(x, y)| model.predict(&page.crop(x as isize, y as isize, tile, tile, 1.0)))
        .collect();

    let win = gaussian_window(tile);
    let mut acc = vec![0.0; w * h];
    let mut wsum = vec![0.0; w * h];
    for (&(x0, y0), p) in origins.iter().zip(&preds) {
        for ty in 0..tile.min(h - y0) {
            let row = (y0 + ty) * w;
            for tx in 0..tile.min(w - x0) {
                let wt = win[ty * tile + tx];
                acc[row + x0 + tx] += wt * p.get(tx, ty);
                wsum[row + x0 + tx] += wt;
            }
        }
    }
    let data = acc.iter().zip(&wsum).map(|(a, s)| (a / s).clamp(0.0, 1.0)).collect();
    GrayImage::from_vec(w, h, data)
}
