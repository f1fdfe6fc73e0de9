//! Page-to-signal pipeline: preprocessing, tiled inference, mask cleanup,
//! centerline tracing and calibrated vectorization.

mod spline;
mod tiling;
mod trace;

pub use spline::{savgol_coeffs, savgol_smooth, NaturalSpline};
pub use tiling::{gaussian_window, infer_tiled, ConstantModel, TileModel};
pub use trace::{parse_panels, smooth_for_display, trace_centerlines, vectorize, LeadFlag, PanelTrace, Vectorized};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{
    estimate_grid_period, estimate_skew, geodesic_close_x, morph_open, remove_small_components, robust_normalize,
    rotate, Axis, BinMask, GrayImage,
};
use crate::synthgen::{CalibrationMeta, LeadSignalSet};

/// Cleanup and vectorization settings, in pixels at 4 px/mm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VectorizeParams {
    pub bin_threshold: f64,
    pub min_component_area: usize,
    pub open_radius: usize,
    pub max_gap: usize,
    pub band_halfwidth: usize,
    pub resample_fs: f64,
    pub savgol_window: usize,
    pub savgol_order: usize,
}

impl Default for VectorizeParams {
    fn default() -> Self {
        Self {
            bin_threshold: 0.5,
            min_component_area: 12,
            open_radius: 1,
            max_gap: 6,
            band_halfwidth: 12,
            resample_fs: 500.0,
            savgol_window: 9,
            savgol_order: 3,
        }
    }
}

impl VectorizeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_threshold > 0.0 && self.bin_threshold < 1.0) {
            return Err(Error::invalid("bin_threshold", "must lie in (0, 1)"));
        }
        if self.savgol_window % 2 == 0 || self.savgol_window <= self.savgol_order {
            return Err(Error::invalid("savgol_window", "must be odd and larger than the order"));
        }
        if !(self.resample_fs > 0.0) {
            return Err(Error::invalid("resample_fs", "must be positive"));
        }
        Ok(())
    }

    /// Pixel sizes rescaled from the 0.25 mm/px reference to `mm_per_px`.
    pub fn scaled_for(&self, mm_per_px: f64) -> Self {
        let f = 0.25 / mm_per_px;
        let s = |v: usize| ((v as f64 * f).round() as usize).max(1);
        Self {
            min_component_area: s(self.min_component_area),
            open_radius: s(self.open_radius),
            max_gap: s(self.max_gap),
            band_halfwidth: s(self.band_halfwidth),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessOptions {
    pub lo_pct: f64,
    pub hi_pct: f64,
    pub skew_range_deg: f64,
    pub skew_step_deg: f64,
    /// Rotation is applied only above this magnitude.
    pub skew_threshold_deg: f64,
    /// Used when the grid estimator is not confident.
    pub default_mm_per_px: f64,
    pub pad_multiple: usize,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            lo_pct: 0.01,
            hi_pct: 0.99,
            skew_range_deg: 4.0,
            skew_step_deg: 0.1,
            skew_threshold_deg: 0.25,
            default_mm_per_px: 0.25,
            pad_multiple: 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Preprocessed {
    /// Normalized, deskewed and padded page.
    pub image: GrayImage,
    pub width: usize,
    pub height: usize,
    pub skew_estimate_deg: f64,
    pub rotated: bool,
    pub mm_per_px_x: f64,
    pub mm_per_px_y: f64,
    /// Whether each axis's spacing came from the grid rather than the default.
    pub grid_found: (bool, bool),
}

/// Normalizes contrast, removes skew above the threshold, estimates grid
/// spacing on both axes and pads to the network stride.
pub fn preprocess(page: &GrayImage, opts: &PreprocessOptions) -> Result<Preprocessed> {
    let (w, h) = page.dims();
    if w == 0 || h == 0 {
        return Err(Error::invalid("page", "empty image"));
    }
    let mut img = robust_normalize(page, opts.lo_pct, opts.hi_pct);
    let skew = estimate_skew(&img, opts.skew_range_deg, opts.skew_step_deg);
    let rotated = skew.abs() > opts.skew_threshold_deg;
    if rotated {
        img = rotate(&img, skew, 1.0);
    }
    let period = opts.default_mm_per_px.recip();
    let min_p = ((0.6 * period).floor() as usize).max(2);
    let max_p = (1.5 * period).ceil() as usize;
    let est = |axis: Axis, extent: usize| {
        if max_p <= min_p || max_p >= extent / 4 {
            return None;
        }
        estimate_grid_period(&img, axis, min_p, max_p)
    };
    let px = est(Axis::X, w);
    let py = est(Axis::Y, h);
    let image = img.pad_to_multiple(opts.pad_multiple.max(1), 1.0);
    Ok(Preprocessed {
        image,
        width: w,
        height: h,
        skew_estimate_deg: skew,
        rotated,
        mm_per_px_x: px.map_or(opts.default_mm_per_px, f64::recip),
        mm_per_px_y: py.map_or(opts.default_mm_per_px, f64::recip),
        grid_found: (px.is_some(), py.is_some()),
    })
}

/// Threshold, then drop small components, open, and bridge short
/// horizontal gaps.
pub fn binarize_and_clean(prob: &GrayImage, p: &VectorizeParams) -> BinMask {
    let m = prob.threshold_at_least(p.bin_threshold);
    let m = remove_small_components(&m, p.min_component_area);
    let m = if p.open_radius > 0 {
        morph_open(&m, p.open_radius)
    } else {
        m
    };
    geodesic_close_x(&m, p.max_gap)
}

/// Full result of digitizing one page.
#[derive(Clone, Debug)]
pub struct PageDigitization {
    pub prob: GrayImage,
    pub mask: BinMask,
    pub traces: Vec<PanelTrace>,
    pub signal: LeadSignalSet,
    /// Savitzky–Golay copy for display only; never scored.
    pub display: LeadSignalSet,
    pub flags: Vec<LeadFlag>,
    pub skew_estimate_deg: f64,
    pub mm_per_px: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferOptions {
    pub tile: usize,
    pub overlap: f64,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            tile: 128,
            overlap: 0.5,
        }
    }
}

/// Runs the whole chain on a page with known calibration.
pub fn digitize_page(
    model: &dyn TileModel,
    page: &GrayImage,
    calib: &CalibrationMeta,
    pre: &PreprocessOptions,
    infer: &InferOptions,
    params: &VectorizeParams,
) -> Result<PageDigitization> {
    params.validate()?;
    calib.validate()?;
    let pp = preprocess(page, pre)?;
    let prob_full = infer_tiled(model, &pp.image, infer.tile, infer.overlap)?;
    let prob = prob_full.crop(0, 0, pp.width, pp.height, 0.0);
    let scaled = params.scaled_for(calib.mm_per_px_x);
    let mask = binarize_and_clean(&prob, &scaled);
    let panels = parse_panels(calib)?;
    let traces = trace_centerlines(&mask, &panels, scaled.band_halfwidth);
    let out = vectorize(&traces, calib, &scaled)?;
    let display = smooth_for_display(&out.signal, params.savgol_window, params.savgol_order)?;
    Ok(PageDigitization {
        prob,
        mask,
        traces,
        signal: out.signal,
        display,
        flags: out.flags,
        skew_estimate_deg: pp.skew_estimate_deg,
        mm_per_px: (pp.mm_per_px_x, pp.mm_per_px_y),
    })
}
