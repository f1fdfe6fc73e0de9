//! Synthetic 12-lead waveforms and the plain-CSV signal format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{sim_rng, uniform};

/// Fixed lead order used everywhere (files, layouts, metrics).
pub const LEAD_NAMES: [&str; 12] = [
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6",
];

/// Record length after padding or clipping.
pub const RECORD_SECONDS: f64 = 10.0;

pub fn lead_index(name: &str) -> Option<usize> {
    LEAD_NAMES.iter().position(|&n| n == name)
}

/// Twelve uniformly sampled leads in mV.
///
/// `spans[k]` is the time interval over which lead `k` carries information.
/// Ground-truth signals cover the whole record; a signal recovered from a
/// page only covers the window its panel printed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadSignalSet {
    pub fs: f64,
    pub duration: f64,
    pub leads: Vec<Vec<f64>>,
    pub spans: Vec<(f64, f64)>,
}

impl LeadSignalSet {
    pub fn zeros(fs: f64, duration: f64) -> Self {
        let n = (fs * duration).round() as usize;
        Self {
            fs,
            duration,
            leads: vec![vec![0.0; n]; 12],
            spans: vec![(0.0, duration); 12],
        }
    }

    pub fn len(&self) -> usize {
        self.leads.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lead(&self, name: &str) -> Option<&[f64]> {
        lead_index(name).map(|k| self.leads[k].as_slice())
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.fs
    }

    pub fn validate(&self) -> Result<()> {
        let n = (self.fs * self.duration).round() as usize;
        if self.leads.len() != 12 || self.spans.len() != 12 {
            return Err(Error::DimensionMismatch {
                expected: "12 leads".into(),
                actual: format!("{} leads", self.leads.len()),
            });
        }
        if let Some(bad) = self.leads.iter().find(|l| l.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} samples"),
                actual: format!("{} samples", bad.len()),
            });
        }
        Ok(())
    }

    /// CSV with header `t,I,II,...,V6`, time in seconds, values in mV.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("t");
        for name in LEAD_NAMES {
            s.push(',');
            s.push_str(name);
        }
        s.push('\n');
        for i in 0..self.len() {
            write!(s, "{}", self.time(i)).unwrap();
            for lead in &self.leads {
                write!(s, ",{}", lead[i]).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Reads a waveform CSV (`time` or `t` column followed by the twelve leads in
/// any order), infers the sampling rate from the time column, and pads or
/// clips to ten seconds.
pub fn import_csv_signal(path: impl AsRef<Path>) -> Result<LeadSignalSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv_signal(&text, path)
}

pub fn parse_csv_signal(text: &str, path: &Path) -> Result<LeadSignalSet> {
    let bad = |reason: String| Error::Format {
        kind: "signal csv",
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    let tcol = header
        .iter()
        .position(|&h| h == "time" || h == "t")
        .ok_or_else(|| Error::MissingLead("time".into()))?;
    let cols = LEAD_NAMES
        .iter()
        .map(|&name| {
            header
                .iter()
                .position(|&h| h == name)
                .ok_or_else(|| Error::MissingLead(name.into()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut times = Vec::new();
    let mut raw = vec![Vec::new(); 12];
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != header.len() {
            return Err(bad(format!(
                "row {row} has {} fields, header has {}",
                fields.len(),
                header.len()
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| bad(format!("row {row}: `{s}` is not a number")))
        };
        let t = num(fields[tcol])?;
        if times.last().is_some_and(|&prev| t <= prev) {
            return Err(Error::NonMonotoneTime { row });
        }
        times.push(t);
        for (k, &c) in cols.iter().enumerate() {
            raw[k].push(num(fields[c])?);
        }
    }
    if times.len() < 2 {
        return Err(bad("need at least two samples".into()));
    }
    let span = times[times.len() - 1] - times[0];
    let fs = ((times.len() - 1) as f64 / span).round();
    if !(fs > 0.0) {
        return Err(bad("cannot infer sampling rate".into()));
    }

    let mut out = LeadSignalSet::zeros(fs, RECORD_SECONDS);
    let t0 = times[0];
    let mut j = 0;
    for i in 0..out.len() {
        let t = t0 + i as f64 / fs;
        if t > times[times.len() - 1] + 1e-9 {
            break; // right-pad with zeros
        }
        while j + 1 < times.len() && times[j + 1] <= t + 1e-9 {
            j += 1;
        }
        for k in 0..12 {
            out.leads[k][i] = if (times[j] - t).abs() <= 1e-9 || j + 1 == times.len() {
                raw[k][j]
            } else {
                let f = (t - times[j]) / (times[j + 1] - times[j]);
                raw[k][j] + f * (raw[k][j + 1] - raw[k][j])
            };
        }
    }
    Ok(out)
}

/// One Gaussian wave: centre offset from beat onset (s), width (s), and a
/// frontal-plane vector (amplitude mV, axis degrees) plus precordial gains.
struct Wave {
    offset: f64,
    width: f64,
    amp: f64,
    axis_deg: f64,
    precordial: [f64; 6],
}

/// Beat onsets in `[0, duration)`: a random phase in `[0.02, 0.02 + 0.3 RR)`,
/// then one beat per RR interval, each jittered by at most 10 ms.
pub fn beat_onsets(seed: u64, hr_bpm: f64, duration: f64) -> Vec<f64> {
    all_onsets(seed, hr_bpm, duration)
        .into_iter()
        .filter(|&t| (0.0..duration).contains(&t))
        .collect()
}

/// Onsets including one beat before the record so its tail is present.
fn all_onsets(seed: u64, hr_bpm: f64, duration: f64) -> Vec<f64> {
    let rr = 60.0 / hr_bpm;
    let mut rng = sim_rng(seed, "synth.onsets", 0);
    let phase = uniform(&mut rng, 0.02, 0.02 + 0.3 * rr);
    let mut out = Vec::new();
    let mut k = -1i64;
    loop {
        let base = phase + k as f64 * rr;
        if base > duration + 0.02 {
            break;
        }
        out.push(base + uniform(&mut rng, -0.01, 0.01));
        k += 1;
    }
    out
}

fn templates<R: RngCore>(rng: &mut R, rr: f64) -> Vec<Wave> {
    let scale = uniform(rng, 0.8, 1.2);
    let s = |g: [f64; 6]| g.map(|v| v * scale);
    let qrs_axis = uniform(rng, 20.0, 75.0);
    // QT shortens with rate (Bazett-like square-root law).
    let t_off = 0.25 + 0.22 * rr.sqrt();
    vec![
        Wave {
            offset: 0.10,
            width: 0.022,
            amp: 0.15 * scale,
            axis_deg: 55.0,
            precordial: s([0.06, 0.08, 0.08, 0.08, 0.08, 0.07]),
        },
        Wave {
            offset: 0.205,
            width: 0.010,
            amp: -0.08 * scale,
            axis_deg: qrs_axis,
            precordial: s([0.0, 0.0, 0.0, -0.04, -0.08, -0.08]),
        },
        Wave {
            offset: 0.24,
            width: 0.018,
            amp: 1.1 * scale,
            axis_deg: qrs_axis,
            precordial: s([0.25, 0.5, 0.8, 1.1, 1.2, 1.0]),
        },
        Wave {
            offset: 0.285,
            width: 0.014,
            amp: -0.22 * scale,
            axis_deg: qrs_axis,
            precordial: s([-0.8, -1.1, -0.8, -0.5, -0.25, -0.12]),
        },
        Wave {
            offset: t_off,
            width: 0.045,
            amp: 0.3 * scale,
            axis_deg: 45.0,
            precordial: s([0.08, 0.22, 0.3, 0.35, 0.3, 0.25]),
        },
    ]
}

/// Ten seconds of 12-lead ECG from sums of Gaussian P/Q/R/S/T waves.
///
/// Limb leads come from projecting each wave's frontal vector onto leads I
/// and II, with III, aVR, aVL and aVF following from Einthoven's and
/// Goldberger's relations; precordial leads use per-wave gain tables.
/// A slow baseline wander of at most 0.05 mV rides on the same projections.
pub fn synth_waveforms(seed: u64, fs: f64, hr_bpm: f64) -> Result<LeadSignalSet> {
    if fs != 100.0 && fs != 500.0 {
        return Err(Error::invalid("fs", format!("{fs} Hz not in {{100, 500}}")));
    }
    if !(40.0..=180.0).contains(&hr_bpm) {
        return Err(Error::invalid("hr_bpm", format!("{hr_bpm} outside [40, 180]")));
    }
    let rr = 60.0 / hr_bpm;
    let onsets = all_onsets(seed, hr_bpm, RECORD_SECONDS);
    let mut rng = sim_rng(seed, "synth.templates", 0);
    let waves = templates(&mut rng, rr);
    let wander_f = uniform(&mut rng, 0.1, 0.4);
    let wander_ph = uniform(&mut rng, 0.0, std::f64::consts::TAU);
    let wander_a = uniform(&mut rng, 0.0, 0.05);
    let wander_axis = uniform(&mut rng, 0.0, 90.0).to_radians();

    let mut out = LeadSignalSet::zeros(fs, RECORD_SECONDS);
    for i in 0..out.len() {
        let t = i as f64 / fs;
        let (mut l1, mut l2) = (0.0, 0.0);
        let mut pre = [0.0; 6];
        for &on in &onsets {
            for w in &waves {
                let z = (t - on - w.offset) / w.width;
                if z.abs() > 8.0 {
                    continue;
                }
                let g = (-0.5 * z * z).exp();
                let a = w.axis_deg.to_radians();
                l1 += w.amp * g * a.cos();
                l2 += w.amp * g * (a - 60f64.to_radians()).cos();
                for (p, &gain) in pre.iter_mut().zip(&w.precordial) {
                    *p += gain * g;
                }
            }
        }
        let wander = wander_a * (std::f64::consts::TAU * wander_f * t + wander_ph).sin();
        l1 += wander * wander_axis.cos();
        l2 += wander * (wander_axis - 60f64.to_radians()).cos();
        for p in &mut pre {
            *p += wander;
        }
        let vals = [
            l1,
            l2,
            l2 - l1,
            -(l1 + l2) / 2.0,
            l1 - l2 / 2.0,
            l2 - l1 / 2.0,
            pre[0],
            pre[1],
            pre[2],
            pre[3],
            pre[4],
            pre[5],
        ];
        for (lead, v) in out.leads.iter_mut().zip(vals) {
            lead[i] = v;
        }
    }
    Ok(out)
}
