//! Per-site perturbation profiles and their application to rendered pages.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::render::PageSample;
use crate::error::{Error, Result};
use crate::raster::{
    add_noise_snr, blockdct_artifacts, gaussian_blur, rotate, rotate_mask, translate, translate_mask, GrayImage,
};
use crate::rng::{derive_seed, sim_rng, uniform};

/// Perturbation distribution of one site. Every `(lo, hi)` pair is sampled
/// uniformly; `skew_deg` and `offset_px` are symmetric half-ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientProfile {
    pub name: String,
    pub skew_deg: f64,
    pub quality: (u32, u32),
    pub grid_contrast: (f64, f64),
    /// `None` disables additive noise.
    pub snr_db: Option<(f64, f64)>,
    pub blur_px: (f64, f64),
    pub offset_px: i64,
    pub overlay_prob: f64,
    pub n_pages: usize,
}

/// Probability of a shadow, wrinkle or handwriting overlay on built-in sites.
pub const OVERLAY_PROB: f64 = 0.15;

/// Desk-scale page counts for C1..C5.
pub const DESK_COUNTS: [usize; 5] = [200, 160, 140, 120, 100];

impl ClientProfile {
    fn builtin(
        name: &str,
        skew: f64,
        quality: (u32, u32),
        contrast: (f64, f64),
        snr: (f64, f64),
        blur: (f64, f64),
        offset: i64,
        n: usize,
    ) -> Self {
        Self {
            name: name.into(),
            skew_deg: skew,
            quality,
            grid_contrast: contrast,
            snr_db: Some(snr),
            blur_px: blur,
            offset_px: offset,
            overlay_prob: OVERLAY_PROB,
            n_pages: n,
        }
    }

    pub fn c1() -> Self {
        Self::builtin(
            "C1",
            0.5,
            (90, 95),
            (0.65, 0.75),
            (35.0, 40.0),
            (0.0, 0.2),
            2,
            DESK_COUNTS[0],
        )
    }
    pub fn c2() -> Self {
        Self::builtin(
            "C2",
            1.0,
            (80, 90),
            (0.55, 0.70),
            (30.0, 35.0),
            (0.2, 0.4),
            4,
            DESK_COUNTS[1],
        )
    }
    pub fn c3() -> Self {
        Self::builtin(
            "C3",
            2.0,
            (75, 85),
            (0.45, 0.65),
            (27.0, 32.0),
            (0.3, 0.6),
            6,
            DESK_COUNTS[2],
        )
    }
    pub fn c4() -> Self {
        Self::builtin(
            "C4",
            3.0,
            (65, 80),
            (0.35, 0.55),
            (24.0, 30.0),
            (0.5, 0.8),
            8,
            DESK_COUNTS[3],
        )
    }
    pub fn c5() -> Self {
        Self::builtin(
            "C5",
            3.5,
            (60, 75),
            (0.30, 0.50),
            (20.0, 26.0),
            (0.7, 1.0),
            10,
            DESK_COUNTS[4],
        )
    }

    /// The five built-in sites, clean to hard.
    pub fn builtins() -> Vec<Self> {
        vec![Self::c1(), Self::c2(), Self::c3(), Self::c4(), Self::c5()]
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Self::builtins().into_iter().find(|p| p.name == name)
    }

    /// No perturbation at all: zero skew, offsets and blur, quality 100,
    /// no noise, no overlays.
    pub fn identity(grid_contrast: f64, n_pages: usize) -> Self {
        Self {
            name: "identity".into(),
            skew_deg: 0.0,
            quality: (100, 100),
            grid_contrast: (grid_contrast, grid_contrast),
            snr_db: None,
            blur_px: (0.0, 0.0),
            offset_px: 0,
            overlay_prob: 0.0,
            n_pages,
        }
    }

    /// Only the geometric part of the profile (skew and offsets).
    pub fn geometric_only(&self) -> Self {
        Self {
            quality: (100, 100),
            snr_db: None,
            blur_px: (0.0, 0.0),
            overlay_prob: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |arg: &'static str| Err(Error::invalid(arg, format!("invalid range in profile {}", self.name)));
        if !(self.skew_deg >= 0.0 && self.skew_deg <= 10.0) {
            return bad("skew_deg");
        }
        if !(1 <= self.quality.0 && self.quality.0 <= self.quality.1 && self.quality.1 <= 100) {
            return bad("quality");
        }
        let (c0, c1) = self.grid_contrast;
        if !(c0 > 0.0 && c0 <= c1 && c1 <= 1.0) {
            return bad("grid_contrast");
        }
        if let Some((s0, s1)) = self.snr_db {
            if !(s0.is_finite() && s1.is_finite() && s0 <= s1) {
                return bad("snr_db");
            }
        }
        if !(self.blur_px.0 >= 0.0 && self.blur_px.0 <= self.blur_px.1) {
            return bad("blur_px");
        }
        if self.offset_px < 0 {
            return bad("offset_px");
        }
        if !(0.0..=1.0).contains(&self.overlay_prob) {
            return bad("overlay_prob");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlayKind {
    Shadow,
    Wrinkle,
    Handwriting,
}

/// The values actually sampled for one page.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationDraw {
    pub skew_deg: f64,
    pub quality: u32,
    pub grid_contrast: f64,
    pub snr_db: Option<f64>,
    pub blur_px: f64,
    pub offset_x: i64,
    pub offset_y: i64,
    pub overlay: Option<OverlayKind>,
    /// Seed for the photometric streams (noise, overlay geometry).
    pub seed: u64,
}

impl PerturbationDraw {
    pub fn sample(profile: &ClientProfile, seed: u64) -> Self {
        let mut rng = sim_rng(seed, "profile.draw", 0);
        let skew_deg = uniform(&mut rng, -profile.skew_deg, profile.skew_deg);
        let quality = rng.gen_range(profile.quality.0..=profile.quality.1);
        let grid_contrast = uniform(&mut rng, profile.grid_contrast.0, profile.grid_contrast.1);
        let snr_db = profile.snr_db.map(|(a, b)| uniform(&mut rng, a, b));
        let blur_px = uniform(&mut rng, profile.blur_px.0, profile.blur_px.1);
        let o = profile.offset_px;
        let offset_x = rng.gen_range(-o..=o);
        let offset_y = rng.gen_range(-o..=o);
        let overlay = (profile.overlay_prob > 0.0 && uniform(&mut rng, 0.0, 1.0) < profile.overlay_prob).then(|| {
            match rng.gen_range(0..3) {
                0 => OverlayKind::Shadow,
                1 => OverlayKind::Wrinkle,
                _ => OverlayKind::Handwriting,
            }
        });
        Self {
            skew_deg,
            quality,
            grid_contrast,
            snr_db,
            blur_px,
            offset_x,
            offset_y,
            overlay,
            seed: derive_seed(seed, "profile.photometric", 0),
        }
    }

    pub fn is_geometric_identity(&self) -> bool {
        self.skew_deg == 0.0 && self.offset_x == 0 && self.offset_y == 0
    }
}

/// Applies a sampled draw to an unperturbed page. Offsets and skew move the
/// image and the mask together (the calibration boxes follow the offset);
/// overlays, blur, noise and block-DCT touch the image only.
pub fn apply_draw(page: &PageSample, draw: &PerturbationDraw, background: f64) -> PageSample {
    let (dx, dy) = (draw.offset_x, draw.offset_y);
    let mut image = page.image.clone();
    let mut mask = page.mask.clone();
    let mut calib = page.calib.clone();
    if dx != 0 || dy != 0 {
        image = translate(&image, dx as isize, dy as isize, background);
        mask = translate_mask(&mask, dx as isize, dy as isize);
        calib = calib.shifted(dx, dy);
    }
    if draw.skew_deg != 0.0 {
        image = rotate(&image, draw.skew_deg, background);
        mask = rotate_mask(&mask, draw.skew_deg);
    }

    if let Some(kind) = draw.overlay {
        apply_overlay(&mut image, kind, draw.seed);
    }
    if draw.blur_px > 0.0 {
        image = gaussian_blur(&image, draw.blur_px);
    }
    if let Some(snr) = draw.snr_db {
        image = add_noise_snr(&image, snr, draw.seed);
    }
    image = blockdct_artifacts(&image, draw.quality);

    PageSample {
        image,
        mask,
        calib,
        signal: page.signal.clone(),
        client: page.client.clone(),
        draw: Some(draw.clone()),
    }
}

/// Samples a draw from `profile` and applies it.
pub fn apply_profile(page: &PageSample, profile: &ClientProfile, seed: u64, background: f64) -> PageSample {
    let mut draw = PerturbationDraw::sample(profile, seed);
    // Grid contrast is a render-time parameter; keep what the page has.
    draw.grid_contrast = page.draw.as_ref().map_or(draw.grid_contrast, |d| d.grid_contrast);
    let mut out = apply_draw(page, &draw, background);
    out.client = profile.name.clone();
    out
}

fn apply_overlay(img: &mut GrayImage, kind: OverlayKind, seed: u64) {
    let mut rng = sim_rng(seed, "profile.overlay", 0);
    let (w, h) = img.dims();
    let (wf, hf) = (w as f64, h as f64);
    match kind {
        OverlayKind::Shadow => {
            // smooth multiplicative darkening towards one side of the page
            let theta = uniform(&mut rng, 0.0, std::f64::consts::TAU);
            let depth = uniform(&mut rng, 0.08, 0.2);
            let (c, s) = (theta.cos(), theta.sin());
            let half = 0.5 * (wf * c.abs() + hf * s.abs());
            for y in 0..h {
                for x in 0..w {
                    let u = ((x as f64 - wf / 2.0) * c + (y as f64 - hf / 2.0) * s) / half;
                    let f = 1.0 - depth * (0.5 + 0.5 * u).clamp(0.0, 1.0).powi(2);
                    let v = img.get(x, y) * f;
                    img.set(x, y, v);
                }
            }
        }
        OverlayKind::Wrinkle => {
            let creases = rng.gen_range(1..=3);
            for _ in 0..creases {
                let (x0, y0) = (uniform(&mut rng, 0.0, wf), uniform(&mut rng, 0.0, hf));
                let theta = uniform(&mut rng, 0.0, std::f64::consts::PI);
                let (nx, ny) = (-theta.sin(), theta.cos());
                let amp = uniform(&mut rng, 0.04, 0.1);
                for y in 0..h {
                    for x in 0..w {
                        let d = (x as f64 - x0) * nx + (y as f64 - y0) * ny;
                        if d.abs() < 4.0 {
                            // bright ridge on one side, shadowed fold on the other
                            let f = 1.0 + amp * (d / 2.0) * (-(d * d) / 4.0).exp();
                            let v = (img.get(x, y) * f).clamp(0.0, 1.0);
                            img.set(x, y, v);
                        }
                    }
                }
            }
        }
        OverlayKind::Handwriting => {
            let strokes = rng.gen_range(3..=6);
            for _ in 0..strokes {
                let (cx, cy) = (
                    uniform(&mut rng, 0.05 * wf, 0.95 * wf),
                    uniform(&mut rng, 0.05 * hf, 0.95 * hf),
                );
                let len = uniform(&mut rng, 15.0, 60.0);
                let theta = uniform(&mut rng, 0.0, std::f64::consts::TAU);
                let bend = uniform(&mut rng, -0.5, 0.5);
                let ink = uniform(&mut rng, 0.25, 0.45);
                draw_arc_stroke(img, &mut rng, (cx, cy), len, theta, bend, ink);
            }
        }
    }
}

fn draw_arc_stroke<R: RngCore>(
    img: &mut GrayImage,
    rng: &mut R,
    c: (f64, f64),
    len: f64,
    theta: f64,
    bend: f64,
    ink: f64,
) {
    let (w, h) = img.dims();
    let steps = (len * 2.0) as usize;
    let wobble = uniform(rng, 0.0, 0.3);
    for i in 0..=steps {
        let s = i as f64 / steps as f64 - 0.5;
        let a = theta + bend * s * 2.0 + wobble * (s * 12.0).sin();
        let (x, y) = (c.0 + s * len * a.cos(), c.1 + s * len * a.sin());
        for oy in -1..=1 {
            for ox in -1..=1 {
                let (px, py) = (x.round() as i64 + ox, y.round() as i64 + oy);
                if px < 0 || py < 0 || px >= w as i64 || py >= h as i64 {
                    continue;
                }
                let d = ((px as f64 - x).powi(2) + (py as f64 - y).powi(2)).sqrt();
                let cov = (1.2 - d).clamp(0.0, 1.0);
                let (px, py) = (px as usize, py as usize);
                let v = img.get(px, py);
                img.set(px, py, v.min(v * (1.0 - cov) + ink * cov));
            }
        }
    }
}
