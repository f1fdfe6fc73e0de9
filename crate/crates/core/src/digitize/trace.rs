//! Per-panel centerline tracking and calibrated vectorization.

use serde::{Deserialize, Serialize};

use super::spline::{savgol_smooth, NaturalSpline};
use super::VectorizeParams;
use crate::error::Result;
use crate::raster::BinMask;
use crate::synthgen::{lead_index, CalibrationMeta, LeadSignalSet, PanelBox, LEAD_NAMES, RECORD_SECONDS};

/// Column coverage below which a panel is flagged.
pub const MIN_COVERAGE: f64 = 0.10;

#[derive(Clone, Debug, PartialEq)]
pub struct PanelTrace {
    pub lead: String,
    pub panel: PanelBox,
    /// Centerline row per panel column, `None` where nothing was found.
    pub rows: Vec<Option<f64>>,
    pub low_confidence: bool,
}

impl PanelTrace {
    pub fn coverage(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.is_some()).count() as f64 / self.rows.len() as f64
    }
}

/// The twelve panel boxes in lead order.
pub fn parse_panels(calib: &CalibrationMeta) -> Result<Vec<PanelBox>> {
    calib.validate()?;
    Ok(LEAD_NAMES
        .iter()
        .map(|&n| calib.panel(n).expect("validated").clone())
        .collect())
}

/// Vertical extent of the foreground picked in one column.
#[derive(Clone, Copy, Debug)]
struct ColumnHit {
    top: f64,
    bottom: f64,
}

/// Tracks one centerline per panel. In each column the vertical foreground
/// runs that touch the band `center ± band` are collected; the band starts
/// at the baseline and follows the running mean row.
///
/// A stroke of half-thickness `h` puts the curve at least `h` below the top
/// and above the bottom of the stroke in its own column, and not above
/// (below) the top (bottom) of either neighbouring column. On monotone
/// segments the two bounds nearly meet and their midpoint is used. At a
/// peak the lower bound is tight and the upper one is not, and the reverse
/// at a trough, so those columns take the tight bound.
pub fn trace_centerlines(mask: &BinMask, panels: &[PanelBox], band: usize) -> Vec<PanelTrace> {
    panels
        .iter()
        .map(|panel| {
            let hits = column_hits(mask, panel, band);
            let rows = centers_from_bounds(&hits);
            let mut t = PanelTrace {
                lead: panel.lead.clone(),
                panel: panel.clone(),
                rows,
                low_confidence: false,
            };
            t.low_confidence = t.coverage() < MIN_COVERAGE;
            t
        })
        .collect()
}

fn centers_from_bounds(hits: &[Option<ColumnHit>]) -> Vec<Option<f64>> {
    let mut spans: Vec<f64> = hits.iter().flatten().map(|c| c.bottom - c.top).collect();
    if spans.is_empty() {
        return vec![None; hits.len()];
    }
    let mid = spans.len() / 2;
    let half = *spans.select_nth_unstable_by(mid, f64::total_cmp).1 / 2.0;
    let n = hits.len();
    (0..n)
        .map(|i| {
            let c = hits[i]?;
            let left = if i > 0 { hits[i - 1] } else { None };
            let right = hits.get(i + 1).copied().flatten();
            let (mut lo, mut hi) = (c.top + half, c.bottom - half);
            for o in [left, right].into_iter().flatten() {
                let reach = (half * half - 1.0).max(0.0).sqrt();
                lo = lo.max(o.top + reach);
                hi = hi.min(o.bottom - reach);
            }
            let (Some(l), Some(r)) = (left, right) else {
                return Some(0.5 * (lo + hi));
            };
            let peak = c.top <= l.top && c.top <= r.top && (c.top < l.top || c.top < r.top);
            let trough = c.bottom >= l.bottom && c.bottom >= r.bottom && (c.bottom > l.bottom || c.bottom > r.bottom);
            Some(match (peak, trough) {
                (true, false) => c.top + half,
                (false, true) => c.bottom - half,
                _ => 0.5 * (lo + hi),
            })
        })
        .collect()
}

fn column_hits(mask: &BinMask, panel: &PanelBox, band: usize) -> Vec<Option<ColumnHit>> {
    let (w, h) = mask.dims();
    let y_lo = panel.y0.max(0);
    let y_hi = (panel.y0 + panel.height as i64).min(h as i64);
    let mut center = panel.baseline_row;
    // Until the first hit, the trace may sit anywhere in the panel (a window
    // can open mid-QRS), so take the run nearest the baseline.
    let mut locked = false;
    let mut out = Vec::with_capacity(panel.width);
    for x in panel.x0..panel.x0 + panel.width as i64 {
        if x < 0 || x >= w as i64 || y_hi <= y_lo {
            out.push(None);
            continue;
        }
        let x = x as usize;
        let mut runs = Vec::new();
        let mut y = y_lo;
        while y < y_hi {
            if !mask.get(x, y as usize) {
                y += 1;
                continue;
            }
            let start = y;
            while y < y_hi && mask.get(x, y as usize) {
                y += 1;
            }
            runs.push((start as f64, (y - 1) as f64));
        }
        let picked: Vec<(f64, f64)> = if locked {
            let (b_lo, b_hi) = (center - band as f64, center + band as f64);
            runs.into_iter().filter(|&(s, e)| e >= b_lo && s <= b_hi).collect()
        } else {
            let dist = |&(s, e): &(f64, f64)| {
                if center < s {
                    s - center
                } else if center > e {
                    center - e
                } else {
                    0.0
                }
            };
            runs.iter()
                .min_by(|a, b| dist(a).total_cmp(&dist(b)))
                .map(|r| vec![*r])
                .unwrap_or_default()
        };
        if picked.is_empty() {
            out.push(None);
            continue;
        }
        let (mut sum, mut count) = (0.0, 0.0);
        let (mut top, mut bottom) = (f64::INFINITY, f64::NEG_INFINITY);
        for (s, e) in picked {
            let n = e - s + 1.0;
            sum += (s + e) * n / 2.0;
            count += n;
            top = top.min(s);
            bottom = bottom.max(e);
        }
        center = sum / count;
        locked = true;
        out.push(Some(ColumnHit { top, bottom }));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadFlag {
    pub lead: String,
    pub coverage: f64,
    pub low_confidence: bool,
    /// No centerline at all; the lead was emitted as zeros.
    pub absent: bool,
}

#[derive(Clone, Debug)]
pub struct Vectorized {
    pub signal: LeadSignalSet,
    pub flags: Vec<LeadFlag>,
}

/// Maps centerlines to seconds and millivolts and resamples each lead onto
/// a uniform grid with a natural cubic spline. Missing columns are bridged
/// by the spline; each lead is defined only over its panel's time window.
pub fn vectorize(traces: &[PanelTrace], calib: &CalibrationMeta, p: &VectorizeParams) -> Result<Vectorized> {
    let mut signal = LeadSignalSet::zeros(p.resample_fs, RECORD_SECONDS);
    let n = signal.len();
    let mut flags = Vec::with_capacity(12);
    for tr in traces {
        let k = lead_index(&tr.lead).expect("layout lead");
        let panel = &tr.panel;
        let (mut ts, mut vs) = (Vec::new(), Vec::new());
        for (i, r) in tr.rows.iter().enumerate() {
            if let Some(row) = r {
                ts.push(calib.time_at(panel, (panel.x0 + i as i64) as f64));
                vs.push(calib.mv_at(panel, *row));
            }
        }
        signal.spans[k] = (panel.t_start, panel.t_end.min(RECORD_SECONDS));
        flags.push(LeadFlag {
            lead: tr.lead.clone(),
            coverage: tr.coverage(),
            low_confidence: tr.low_confidence,
            absent: ts.is_empty(),
        });
        if ts.is_empty() {
            continue;
        }
        let spline = NaturalSpline::new(&ts, &vs)?;
        let i0 = (panel.t_start * p.resample_fs).ceil() as usize;
        for i in i0..n {
            let t = i as f64 / p.resample_fs;
            if t >= panel.t_end {
                break;
            }
            signal.leads[k][i] = spline.eval(t);
        }
    }
    Ok(Vectorized { signal, flags })
}

/// Savitzky–Golay copy of each lead over its span, for plotting only.
pub fn smooth_for_display(signal: &LeadSignalSet, window: usize, order: usize) -> Result<LeadSignalSet> {
    let mut out = signal.clone();
    for (lead, &(t0, t1)) in out.leads.iter_mut().zip(&signal.spans) {
        let i0 = ((t0 * signal.fs).ceil() as usize).min(lead.len());
        let i1 = ((t1 * signal.fs).ceil() as usize).clamp(i0, lead.len());
        let smooth = savgol_smooth(&lead[i0..i1], window, order)?;
        lead[i0..i1].copy_from_slice(&smooth);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::RenderSpec;

    fn meta() -> CalibrationMeta {
        RenderSpec::default().layout("v")
    }

    #[test]
    fn flat_and_thick_lines_trace_exactly() {
        let calib = meta();
        let panels = parse_panels(&calib).unwrap();
        let mut mask = BinMask::new(calib.page_width, calib.page_height);
        let ii = calib.panel("II").unwrap();
        let v1 = calib.panel("V1").unwrap();
        for x in ii.x0..ii.x0 + 250 {
            mask.set(x as usize, 270, true);
        }
        for x in v1.x0..v1.x0 + 250 {
            for y in 119..=121 {
                mask.set(x as usize, y, true);
            }
        }
        let traces = trace_centerlines(&mask, &panels, 12);
        assert!(traces[1].rows.iter().all(|r| *r == Some(270.0)));
        assert!(traces[6].rows.iter().all(|r| *r == Some(120.0)));
        assert!(traces[0].low_confidence && traces[0].coverage() == 0.0);
    }

    #[test]
    fn ten_millimetres_is_one_millivolt() {
        let calib = meta();
        let panel = calib.panel("aVL").unwrap().clone();
        let rows = vec![Some(panel.baseline_row - 40.0); panel.width];
        let tr = PanelTrace {
            lead: "aVL".into(),
            panel,
            rows,
            low_confidence: false,
        };
        let out = vectorize(&[tr], &calib, &VectorizeParams::default()).unwrap();
        let s = &out.signal;
        let k = lead_index("aVL").unwrap();
        assert_eq!(s.spans[k], (2.5, 5.0));
        for i in 1250..2496 {
            assert!((s.leads[k][i] - 1.0).abs() < 1e-12, "{i}");
        }
        assert_eq!(s.leads[k][1249], 0.0);
    }

    #[test]
    fn linear_ramp_is_reproduced() {
        let calib = meta();
        let panel = calib.panel("V5").unwrap().clone();
        let rows: Vec<Option<f64>> = (0..panel.width)
            .map(|i| {
                if i % 7 == 3 {
                    None
                } else {
                    Some(panel.baseline_row - 0.1 * i as f64)
                }
            })
            .collect();
        let tr = PanelTrace {
            lead: "V5".into(),
            panel: panel.clone(),
            rows,
            low_confidence: false,
        };
        let out = vectorize(&[tr], &calib, &VectorizeParams::default()).unwrap();
        let k = lead_index("V5").unwrap();
        for i in 3750..4995 {
            let t = i as f64 / 500.0;
            let x = calib.x_at(&panel, t) - panel.x0 as f64;
            let want = 0.1 * x * calib.mm_per_px_y / calib.gain;
            assert!((out.signal.leads[k][i] - want).abs() < 1e-9, "{i}");
        }
    }

    #[test]
    fn display_copy_differs_only_by_smoothing() {
        let mut s = LeadSignalSet::zeros(500.0, 10.0);
        for (i, v) in s.leads[0].iter_mut().enumerate() {
            *v = 0.01 * i as f64;
        }
        let d = smooth_for_display(&s, 9, 3).unwrap();
        for i in 10..4990 {
            assert!((d.leads[0][i] - s.leads[0][i]).abs() < 1e-9);
        }
    }
}
