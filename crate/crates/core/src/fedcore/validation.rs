//! Fixed trace-centered validation crops and their per-page scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evalstats::{bce_from_probs, weighted_global, MaskCounts};
use crate::raster::{BinMask, GrayImage};
use crate::rng::sim_rng;
use crate::segnet::{sample_patch, ParamVec, SegNet};
use crate::synthgen::PageSet;
use crate::Result;

/// A crop of a validation page, fixed for the whole run.
#[derive(Clone, Debug)]
pub struct ValCrop {
    pub client: usize,
    pub record_id: String,
    pub patch: GrayImage,
    pub mask: BinMask,
}

/// `per_page` crops of side `size` per validation page, each centered on a
/// trace pixel. Positions depend only on the record id, so every run over
/// the same dataset scores the same pixels.
pub fn validation_crops(pages: &PageSet, size: usize, per_page: usize) -> Vec<ValCrop> {
    let mut out = Vec::new();
    for (c, client) in pages.clients.iter().enumerate() {
        for page in &client.val {
            for j in 0..per_page {
                let mut rng = sim_rng(0, &format!("val-crop/{}", page.record_id), j as u64);
                let (patch, mask) = sample_patch(page, size, 1.0, &mut rng);
                out.push(ValCrop {
                    client: c,
                    record_id: page.record_id.clone(),
                    patch,
                    mask,
                });
            }
        }
    }
    out
}

/// Counts pooled over a page's crops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PageScore {
    pub record_id: String,
    pub client: usize,
    pub counts: MaskCounts,
    pub bce: f64,
}

impl PageScore {
    pub fn dice(&self) -> f64 {
        self.counts.metrics().dice
    }
}

/// Scores every crop at threshold 0.5 and merges crops of the same page.
pub fn evaluate_crops(net: &SegNet, params: &ParamVec, crops: &[ValCrop]) -> Result<Vec<PageScore>> {
    let per_crop: Vec<(MaskCounts, f64)> = crops
        .par_iter()
        .map(|c| {
            let (prob, _) = net.forward(params, &c.patch)?;
            let pred = prob.threshold_at_least(0.5);
            Ok((
                MaskCounts::from_masks(&pred, &c.mask)?,
                bce_from_probs(prob.data(), &c.mask)?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<PageScore> = Vec::new();
    let mut n_crops = 0usize;
    for (c, (counts, bce)) in crops.iter().zip(per_crop) {
        match out.last_mut() {
            Some(last) if last.record_id == c.record_id => {
                last.counts.merge(&counts);
                last.bce += bce;
                n_crops += 1;
            }
            _ => {
                if let Some(last) = out.last_mut() {
                    last.bce /= n_crops as f64;
                }
                out.push(PageScore {
                    record_id: c.record_id.clone(),
                    client: c.client,
                    counts,
                    bce,
                });
                n_crops = 1;
            }
        }
    }
    if let Some(last) = out.last_mut() {
        last.bce /= n_crops as f64;
    }
    Ok(out)
}

/// Per-client mean page Dice and their page-count–weighted mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValSummary {
    pub global_dice: f64,
    pub client_dice: Vec<f64>,
    pub client_pages: Vec<usize>,
}

impl ValSummary {
    pub fn from_scores(scores: &[PageScore], n_clients: usize) -> Result<Self> {
        let mut sums = vec![0.0; n_clients];
        let mut counts = vec![0usize; n_clients];
        for s in scores {
            sums[s.client] += s.dice();
            counts[s.client] += 1;
        }
        let client_dice: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &n)| if n == 0 { f64::NAN } else { s / n as f64 })
            .collect();
        let groups: Vec<(f64, f64)> = client_dice
            .iter()
            .zip(&counts)
            .filter(|(_, &n)| n > 0)
            .map(|(&d, &n)| (d, n as f64))
            .collect();
        Ok(Self {
            global_dice: weighted_global(&groups)?,
            client_dice,
            client_pages: counts,
        })
    }
}
