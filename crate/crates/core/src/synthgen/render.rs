//! Page rendering: grid, calibration pulses, and the 3×4 lead layout.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::profile::PerturbationDraw;
use super::waveform::{lead_index, LeadSignalSet, LEAD_NAMES};
use crate::error::{Error, Result};
use crate::raster::{BinMask, GrayImage};

/// Leads per layout column, top row first.
pub const LAYOUT: [[&str; 3]; 4] = [
    ["I", "II", "III"],
    ["aVR", "aVL", "aVF"],
    ["V1", "V2", "V3"],
    ["V4", "V5", "V6"],
];

/// Physical and photometric rendering settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSpec {
    pub mm_per_px: f64,
    /// mm/s
    pub paper_speed: f64,
    /// mm/mV
    pub gain: f64,
    pub margin_mm: f64,
    /// Space at the start of each row for the calibration pulse.
    pub lead_in_mm: f64,
    pub panel_seconds: f64,
    pub panel_height_mm: f64,
    pub stroke_halfwidth_px: f64,
    pub background: f64,
    pub ink: f64,
    pub minor_line_mm: f64,
    pub major_line_mm: f64,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            mm_per_px: 0.25,
            paper_speed: 25.0,
            gain: 10.0,
            margin_mm: 10.0,
            lead_in_mm: 10.0,
            panel_seconds: 2.5,
            panel_height_mm: 40.0,
            stroke_halfwidth_px: 1.1,
            background: 0.92,
            ink: 0.05,
            minor_line_mm: 0.08,
            major_line_mm: 0.12,
        }
    }
}

impl RenderSpec {
    fn px(&self, mm: f64) -> usize {
        (mm / self.mm_per_px).round() as usize
    }

    pub fn panel_width_px(&self) -> usize {
        self.px(self.panel_seconds * self.paper_speed)
    }

    pub fn panel_height_px(&self) -> usize {
        self.px(self.panel_height_mm)
    }

    /// Grid pitch in pixels (1 mm).
    pub fn grid_period_px(&self) -> f64 {
        1.0 / self.mm_per_px
    }

    pub fn page_dims(&self) -> (usize, usize) {
        let m = self.px(self.margin_mm);
        (
            2 * m + self.px(self.lead_in_mm) + 4 * self.panel_width_px(),
            2 * m + 3 * self.panel_height_px(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("mm_per_px", self.mm_per_px > 0.0),
            ("paper_speed", self.paper_speed > 0.0),
            ("gain", self.gain > 0.0),
            ("panel_seconds", self.panel_seconds > 0.0),
            ("stroke_halfwidth_px", self.stroke_halfwidth_px > 0.0),
            (
                "background",
                (0.0..=1.0).contains(&self.background) && self.background > self.ink,
            ),
            ("ink", (0.0..=1.0).contains(&self.ink)),
        ];
        for (arg, ok) in checks {
            if !ok {
                return Err(Error::invalid(arg, "out of range"));
            }
        }
        Ok(())
    }

    /// Calibration metadata of an unperturbed page.
    pub fn layout(&self, record_id: &str) -> CalibrationMeta {
        let (w, h) = self.page_dims();
        let m = self.px(self.margin_mm) as i64;
        let lead_in = self.px(self.lead_in_mm);
        let (pw, ph) = (self.panel_width_px(), self.panel_height_px());
        let mut panels = Vec::with_capacity(12);
        for name in LEAD_NAMES {
            let (col, row) = layout_position(name);
            let y0 = m + (row * ph) as i64;
            panels.push(PanelBox {
                lead: name.to_string(),
                x0: m + (lead_in + col * pw) as i64,
                y0,
                width: pw,
                height: ph,
                t_start: col as f64 * self.panel_seconds,
                t_end: (col + 1) as f64 * self.panel_seconds,
                baseline_row: y0 as f64 + (ph / 2) as f64,
            });
        }
        let pulses = (0..3)
            .map(|row| {
                let y0 = m + (row * ph) as i64;
                PulseBox {
                    x0: m,
                    y0,
                    width: lead_in,
                    height: ph,
                    baseline_row: y0 as f64 + (ph / 2) as f64,
                }
            })
            .collect();
        CalibrationMeta {
            record_id: record_id.to_string(),
            mm_per_px_x: self.mm_per_px,
            mm_per_px_y: self.mm_per_px,
            paper_speed: self.paper_speed,
            gain: self.gain,
            page_width: w,
            page_height: h,
            grid_origin: (m as f64, m as f64),
            panels,
            pulses,
        }
    }
}

/// (column, row) of a lead in the layout.
pub fn layout_position(lead: &str) -> (usize, usize) {
    for (c, col) in LAYOUT.iter().enumerate() {
        if let Some(r) = col.iter().position(|&n| n == lead) {
            return (c, r);
        }
    }
    panic!("unknown lead {lead}")
}

/// Pixel rectangle hosting one lead and the time window it shows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelBox {
    pub lead: String,
    pub x0: i64,
    pub y0: i64,
    pub width: usize,
    pub height: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub baseline_row: f64,
}

impl PanelBox {
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x0 && x < self.x0 + self.width as i64 && y >= self.y0 && y < self.y0 + self.height as i64
    }

    fn overlaps(&self, o: &PanelBox) -> bool {
        self.x0 < o.x0 + o.width as i64
            && o.x0 < self.x0 + self.width as i64
            && self.y0 < o.y0 + o.height as i64
            && o.y0 < self.y0 + self.height as i64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseBox {
    pub x0: i64,
    pub y0: i64,
    pub width: usize,
    pub height: usize,
    pub baseline_row: f64,
}

/// Everything needed to map page pixels back to time and voltage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMeta {
    pub record_id: String,
    pub mm_per_px_x: f64,
    pub mm_per_px_y: f64,
    /// mm/s
    pub paper_speed: f64,
    /// mm/mV
    pub gain: f64,
    pub page_width: usize,
    pub page_height: usize,
    /// Pixel position of the first grid line on each axis.
    pub grid_origin: (f64, f64),
    pub panels: Vec<PanelBox>,
    pub pulses: Vec<PulseBox>,
}

impl CalibrationMeta {
    pub fn panel(&self, lead: &str) -> Option<&PanelBox> {
        self.panels.iter().find(|p| p.lead == lead)
    }

    /// Time in seconds at pixel column `x` of `panel`.
    pub fn time_at(&self, panel: &PanelBox, x: f64) -> f64 {
        panel.t_start + (x - panel.x0 as f64) * self.mm_per_px_x / self.paper_speed
    }

    /// Pixel column at time `t` (inverse of [`Self::time_at`]).
    pub fn x_at(&self, panel: &PanelBox, t: f64) -> f64 {
        panel.x0 as f64 + (t - panel.t_start) * self.paper_speed / self.mm_per_px_x
    }

    /// Voltage in mV of a centerline at `row`.
    pub fn mv_at(&self, panel: &PanelBox, row: f64) -> f64 {
        (panel.baseline_row - row) * self.mm_per_px_y / self.gain
    }

    pub fn row_at(&self, panel: &PanelBox, mv: f64) -> f64 {
        panel.baseline_row - mv * self.gain / self.mm_per_px_y
    }

    /// Same layout moved by an integer pixel offset.
    pub fn shifted(&self, dx: i64, dy: i64) -> Self {
        let mut out = self.clone();
        for p in &mut out.panels {
            p.x0 += dx;
            p.y0 += dy;
            p.baseline_row += dy as f64;
        }
        for p in &mut out.pulses {
            p.x0 += dx;
            p.y0 += dy;
            p.baseline_row += dy as f64;
        }
        out.grid_origin.0 += dx as f64;
        out.grid_origin.1 += dy as f64;
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.paper_speed > 0.0 && self.gain > 0.0 && self.mm_per_px_x > 0.0 && self.mm_per_px_y > 0.0) {
            return Err(Error::invalid("calibration", "scales must be positive"));
        }
        if self.panels.len() != 12 {
            return Err(Error::invalid(
                "calibration",
                format!("{} panels, expected 12", self.panels.len()),
            ));
        }
        for name in LEAD_NAMES {
            if self.panel(name).is_none() {
                return Err(Error::MissingLead(name.into()));
            }
        }
        for (i, a) in self.panels.iter().enumerate() {
            if self.panels[i + 1..].iter().any(|b| a.overlaps(b)) {
                return Err(Error::invalid(
                    "calibration",
                    format!("panel {} overlaps another", a.lead),
                ));
            }
        }
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let meta: Self = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
            kind: "calibration json",
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        meta.validate()?;
        Ok(meta)
    }
}

/// A rendered page with its supervision target and provenance.
#[derive(Clone, Debug)]
pub struct PageSample {
    pub image: GrayImage,
    pub mask: BinMask,
    pub calib: CalibrationMeta,
    pub signal: LeadSignalSet,
    pub client: String,
    pub draw: Option<PerturbationDraw>,
}

/// Analytic trace of one panel as (x, row) vertices, one per signal sample
/// inside the panel's time window.
pub fn panel_polyline(signal: &LeadSignalSet, calib: &CalibrationMeta, panel: &PanelBox) -> Vec<(f64, f64)> {
    let lead = &signal.leads[lead_index(&panel.lead).expect("layout lead")];
    let i0 = (panel.t_start * signal.fs).ceil() as usize;
    let i1 = ((panel.t_end * signal.fs).floor() as usize).min(lead.len().saturating_sub(1));
    (i0..=i1)
        .map(|i| {
            let t = i as f64 / signal.fs;
            (calib.x_at(panel, t), calib.row_at(panel, lead[i]))
        })
        .collect()
}

/// Standard 1 mV, 200 ms pulse, centred in the lead-in box.
pub fn pulse_polyline(calib: &CalibrationMeta, pulse: &PulseBox) -> Vec<(f64, f64)> {
    let wpx = 0.2 * calib.paper_speed / calib.mm_per_px_x;
    let hpx = calib.gain / calib.mm_per_px_y;
    let x0 = pulse.x0 as f64;
    let xa = x0 + (pulse.width as f64 - wpx) / 2.0;
    let xb = xa + wpx;
    let b = pulse.baseline_row;
    vec![
        (x0, b),
        (xa, b),
        (xa, b - hpx),
        (xb, b - hpx),
        (xb, b),
        (x0 + pulse.width as f64 - 1.0, b),
    ]
}

fn seg_dist(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - px, a.1 + t * dy - py);
    (qx * qx + qy * qy).sqrt()
}

/// Lowers `dist` to the distance from each pixel centre of the clip box to
/// the polyline.
fn stroke_distance(dist: &mut [f64], width: usize, clip: (i64, i64, usize, usize), pts: &[(f64, f64)], reach: f64) {
    let (cx0, cy0, cw, ch) = clip;
    let height = dist.len() / width;
    let xlo = cx0.max(0);
    let ylo = cy0.max(0);
    let xhi = (cx0 + cw as i64).min(width as i64);
    let yhi = (cy0 + ch as i64).min(height as i64);
    let segs: Vec<((f64, f64), (f64, f64))> = if pts.len() == 1 {
        vec![(pts[0], pts[0])]
    } else {
        pts.windows(2).map(|w| (w[0], w[1])).collect()
    };
    for (a, b) in segs {
        let x_lo = ((a.0.min(b.0) - reach).floor() as i64).max(xlo);
        let x_hi = ((a.0.max(b.0) + reach).ceil() as i64 + 1).min(xhi);
        let y_lo = ((a.1.min(b.1) - reach).floor() as i64).max(ylo);
        let y_hi = ((a.1.max(b.1) + reach).ceil() as i64 + 1).min(yhi);
        for y in y_lo..y_hi {
            let row = &mut dist[y as usize * width..(y as usize + 1) * width];
            for x in x_lo..x_hi {
                let d = seg_dist(x as f64, y as f64, a, b);
                let cell = &mut row[x as usize];
                if d < *cell {
                    *cell = d;
                }
            }
        }
    }
}

/// Length of `[c - w/2, c + w/2]` inside the pixel `[p - 1/2, p + 1/2]`.
fn line_cover(c: f64, w: f64, p: f64) -> f64 {
    let lo = (c - w / 2.0).max(p - 0.5);
    let hi = (c + w / 2.0).min(p + 0.5);
    (hi - lo).max(0.0)
}

/// Per-pixel grid-line coverage along one axis for lines every 1 mm
/// starting at `origin`, spanning `[origin, origin + extent]`.
fn axis_cover(n: usize, origin: f64, extent: f64, spec: &RenderSpec) -> Vec<f64> {
    let pitch = spec.grid_period_px();
    let lines = (extent / pitch).round() as usize;
    let mut cover = vec![0.0; n];
    for k in 0..=lines {
        let c = origin + k as f64 * pitch;
        let w = if k % 5 == 0 {
            spec.major_line_mm
        } else {
            spec.minor_line_mm
        } / spec.mm_per_px;
        let lo = ((c - w).floor() as i64).max(0);
        let hi = ((c + w).ceil() as i64 + 1).min(n as i64);
        for p in lo..hi {
            cover[p as usize] += line_cover(c, w, p as f64);
        }
    }
    cover.iter_mut().for_each(|v| *v = v.min(1.0));
    cover
}

/// Renders `signal` on a gridded page at the given Michelson grid contrast.
///
/// Grid lines are drawn at intensity `bg (1 - c) / (1 + c)` with area
/// coverage anti-aliasing. Each trace is a polyline stroked with half-width
/// `stroke_halfwidth_px`, clipped to its panel; the mask holds the pixels
/// whose centre lies within the half-width of a trace or calibration pulse.
pub fn render_page(
    signal: &LeadSignalSet,
    spec: &RenderSpec,
    grid_contrast: f64,
    record_id: &str,
) -> Result<PageSample> {
    signal.validate()?;
    spec.validate()?;
    if !(grid_contrast > 0.0 && grid_contrast <= 1.0) {
        return Err(Error::invalid(
            "grid_contrast",
            format!("{grid_contrast} outside (0, 1]"),
        ));
    }
    let calib = spec.layout(record_id);
    let (w, h) = (calib.page_width, calib.page_height);
    let bg = spec.background;
    let line = bg * (1.0 - grid_contrast) / (1.0 + grid_contrast);

    let (gx, gy) = calib.grid_origin;
    let plot_w = (w as f64 - 2.0 * gx).max(0.0);
    let plot_h = (h as f64 - 2.0 * gy).max(0.0);
    let xcov = axis_cover(w, gx, plot_w, spec);
    let ycov = axis_cover(h, gy, plot_h, spec);
    let (x_end, y_end) = (gx + plot_w + 0.5, gy + plot_h + 0.5);
    let mut image = GrayImage::from_fn(w, h, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let inside_x = xf >= gx - 0.5 && xf <= x_end;
        let inside_y = yf >= gy - 0.5 && yf <= y_end;
        let c = match (inside_x, inside_y) {
            (true, true) => xcov[x].max(ycov[y]),
            _ => 0.0,
        };
        bg - c * (bg - line)
    });

    let hw = spec.stroke_halfwidth_px;
    let reach = hw + 1.0;
    let mut dist = vec![f64::INFINITY; w * h];
    for panel in &calib.panels {
        let pts = panel_polyline(signal, &calib, panel);
        stroke_distance(
            &mut dist,
            w,
            (panel.x0, panel.y0, panel.width, panel.height),
            &pts,
            reach,
        );
    }
    for pulse in &calib.pulses {
        let pts = pulse_polyline(&calib, pulse);
        stroke_distance(
            &mut dist,
            w,
            (pulse.x0, pulse.y0, pulse.width, pulse.height),
            &pts,
            reach,
        );
    }

    let mut mask = BinMask::new(w, h);
    for (i, &d) in dist.iter().enumerate() {
        if d.is_finite() {
            let cov = (hw + 0.5 - d).clamp(0.0, 1.0);
            let v = &mut image.data_mut()[i];
            *v = *v * (1.0 - cov) + spec.ink * cov;
            if d <= hw {
                mask.set(i % w, i / w, true);
            }
        }
    }

    Ok(PageSample {
        image,
        mask,
        calib,
        signal: signal.clone(),
        client: String::new(),
        draw: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{estimate_grid_period, Axis};
    use crate::synthgen::synth_waveforms;

    #[test]
    fn default_geometry() {
        let spec = RenderSpec::default();
        assert_eq!(spec.page_dims(), (1120, 560));
        let meta = spec.layout("r0");
        meta.validate().unwrap();
        let ii = meta.panel("II").unwrap();
        assert_eq!((ii.x0, ii.y0, ii.width, ii.height), (80, 200, 250, 160));
        assert_eq!(ii.baseline_row, 280.0);
        let v4 = meta.panel("V4").unwrap();
        assert_eq!((v4.t_start, v4.t_end), (7.5, 10.0));
    }

    #[test]
    fn zero_signal_draws_baselines() {
        let sig = LeadSignalSet::zeros(500.0, 10.0);
        let page = render_page(&sig, &RenderSpec::default(), 0.7, "z").unwrap();
        for p in &page.calib.panels {
            let b = p.baseline_row as usize;
            for x in p.x0..p.x0 + p.width as i64 {
                let x = x as usize;
                assert!(page.mask.get(x, b - 1) && page.mask.get(x, b) && page.mask.get(x, b + 1));
                assert!(!page.mask.get(x, b - 2) && !page.mask.get(x, b + 2));
            }
        }
    }

    #[test]
    fn one_millivolt_sits_forty_pixels_up() {
        let mut sig = LeadSignalSet::zeros(500.0, 10.0);
        sig.leads[1].iter_mut().for_each(|v| *v = 1.0);
        let page = render_page(&sig, &RenderSpec::default(), 0.7, "z").unwrap();
        let ii = page.calib.panel("II").unwrap();
        let x = (ii.x0 + 100) as usize;
        let rows: Vec<usize> = (200..360).filter(|&y| page.mask.get(x, y)).collect();
        assert_eq!(rows, vec![239, 240, 241]);
        assert_eq!(ii.baseline_row - 40.0, 240.0);
    }

    #[test]
    fn mask_is_dark_and_nonempty() {
        let sig = synth_waveforms(5, 500.0, 75.0).unwrap();
        let page = render_page(&sig, &RenderSpec::default(), 0.75, "a").unwrap();
        assert!(page.mask.count_ones() > 5000);
        for (m, v) in page.mask.data().iter().zip(page.image.data()) {
            if *m == 1 {
                assert!(*v < 0.5);
            }
        }
    }

    #[test]
    fn grid_period_matches_metadata() {
        let sig = synth_waveforms(9, 500.0, 70.0).unwrap();
        let page = render_page(&sig, &RenderSpec::default(), 0.7, "g").unwrap();
        for axis in [Axis::X, Axis::Y] {
            let p = estimate_grid_period(&page.image, axis, 2, 6).unwrap();
            assert!((p - 4.0).abs() <= 1.0, "{axis:?}: {p}");
        }
    }

    #[test]
    fn meta_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let meta = RenderSpec::default().layout("rt").shifted(3, -2);
        let p = dir.path().join("m.json");
        meta.write_json(&p).unwrap();
        assert_eq!(CalibrationMeta::read_json(&p).unwrap(), meta);
    }
}
