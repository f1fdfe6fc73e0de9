//! Client-side training loop and the tile predictor used at inference.

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::loss::LossConfig;
use super::net::SegNet;
use super::optim::OptState;
use super::params::ParamVec;
use crate::digitize::TileModel;
use crate::raster::{BinMask, Gray8, GrayImage};
use crate::rng::{derive_seed, sim_rng};
use crate::synthgen::StoredPage;
use crate::{Error, Result};

/// Read access to a training page.
pub trait PageData: Sync {
    fn image8(&self) -> &Gray8;
    fn mask(&self) -> &BinMask;
}

impl PageData for StoredPage {
    fn image8(&self) -> &Gray8 {
        &self.image
    }

    fn mask(&self) -> &BinMask {
        &self.mask
    }
}

/// Crops a `size`×`size` window at `(x0, y0)`; outside pixels read as paper
/// white and background.
pub fn crop_pair(page: &impl PageData, x0: isize, y0: isize, size: usize) -> (GrayImage, BinMask) {
    let img = page.image8();
    let mask = page.mask();
    let mut patch = GrayImage::new(size, size, 1.0);
    let mut m = BinMask::new(size, size);
    for y in 0..size {
        let sy = y0 + y as isize;
        if sy < 0 || sy >= img.height as isize {
            continue;
        }
        for x in 0..size {
            let sx = x0 + x as isize;
            if sx < 0 || sx >= img.width as isize {
                continue;
            }
            let (sx, sy) = (sx as usize, sy as usize);
            patch.set(x, y, img.data[sy * img.width + sx] as f64 / 255.0);
            m.set(x, y, mask.get(sx, sy));
        }
    }
    (patch, m)
}

fn clamp_origin(center: isize, size: usize, extent: usize) -> isize {
    let max0 = extent as isize - size as isize;
    (center - size as isize / 2).clamp(0.min(max0), max0.max(0))
}

/// Draws a training patch: with probability `fg_fraction` centered on a
/// uniformly chosen foreground pixel, otherwise at a uniform origin.
pub fn sample_patch(
    page: &impl PageData,
    size: usize,
    fg_fraction: f64,
    rng: &mut impl RngCore,
) -> (GrayImage, BinMask) {
    let img = page.image8();
    let (w, h) = (img.width, img.height);
    let u = crate::rng::unit_closed_open(rng);
    let fg = page.mask().count_ones();
    let (x0, y0) = if u < fg_fraction && fg > 0 {
        let k = (rng.next_u64() % fg as u64) as usize;
        let idx = page
            .mask()
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0)
            .nth(k)
            .map(|(i, _)| i)
            .expect("k < count");
        let (cx, cy) = ((idx % w) as isize, (idx / w) as isize);
        (clamp_origin(cx, size, w), clamp_origin(cy, size, h))
    } else {
        let rx = (w.saturating_sub(size) + 1) as u64;
        let ry = (h.saturating_sub(size) + 1) as u64;
        ((rng.next_u64() % rx) as isize, (rng.next_u64() % ry) as isize)
    };
    crop_pair(page, x0, y0, size)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalTrainOptions {
    pub epochs: usize,
    pub prox_mu: f64,
    pub loss: LossConfig,
    /// Share of patches centered on the trace.
    pub fg_fraction: f64,
}

impl Default for LocalTrainOptions {
    fn default() -> Self {
        Self {
            epochs: 1,
            prox_mu: 0.0,
            loss: LossConfig::default(),
            fg_fraction: 1.0 / 3.0,
        }
    }
}

impl LocalTrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be positive"));
        }
        if !(self.prox_mu >= 0.0) || !self.prox_mu.is_finite() {
            return Err(Error::invalid("prox_mu", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.fg_fraction) {
            return Err(Error::invalid("fg_fraction", "must lie in [0, 1]"));
        }
        self.loss.validate()
    }
}

/// Per-call training statistics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LocalStats {
    pub steps: usize,
    pub mean_loss: f64,
    pub last_loss: f64,
    pub mean_grad_norm: f64,
    pub clipped_steps: usize,
    pub final_lr: f64,
}

/// Number of optimizer steps in one epoch over `n` pages.
pub fn steps_per_epoch(n: usize, batch: usize) -> usize {
    n.div_ceil(batch.max(1))
}

/// Seed of the page order and patch draws in epoch `epoch` of a stream.
pub fn epoch_seed(stream_seed: u64, epoch: u64) -> u64 {
    derive_seed(stream_seed, "epoch", epoch)
}

/// Runs `opts.epochs` epochs of mini-batch AdamW over `pages`.
///
/// Epoch `e` of the call is epoch `first_epoch + e` of the data stream, so
/// splitting training into several calls reproduces one long call. When
/// `prox_mu > 0`, `prox_mu·(θ − anchor)` is added to every batch gradient.
#[allow(clippy::too_many_arguments)]
pub fn local_train<P: PageData>(
    net: &SegNet,
    params_in: &ParamVec,
    opt: &mut OptState,
    pages: &[&P],
    opts: &LocalTrainOptions,
    anchor: Option<&ParamVec>,
    stream_seed: u64,
    first_epoch: u64,
) -> Result<(ParamVec, LocalStats)> {
    opts.validate()?;
    if pages.is_empty() {
        return Err(Error::EmptyClientData);
    }
    if opts.prox_mu > 0.0 {
        let a = anchor.ok_or_else(|| Error::invalid("prox_anchor", "required when prox_mu > 0"))?;
        params_in.check_same_layout(a)?;
    }
    let cfg = net.config();
    let mut params = params_in.clone();
    let mut grad = params.zeros_like();
    let mut stats = LocalStats::default();
    let (mut loss_sum, mut norm_sum) = (0.0, 0.0);
    for e in 0..opts.epochs as u64 {
        let seed = epoch_seed(stream_seed, first_epoch + e);
        let mut order: Vec<usize> = (0..pages.len()).collect();
        order.shuffle(&mut sim_rng(seed, "shuffle", 0));
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            grad.values_mut().fill(0.0);
            let scale = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            for (j, &i) in chunk.iter().enumerate() {
                let mut rng = sim_rng(seed, "patch", (b * cfg.batch + j) as u64);
                let (patch, mask) = sample_patch(pages[i], cfg.patch, opts.fg_fraction, &mut rng);
                let (l, _, _) =
                    net.accumulate_grad(params.values(), &patch, &mask, &opts.loss, scale, grad.values_mut());
                batch_loss += scale * l;
            }
            if opts.prox_mu > 0.0 {
                let a = anchor.expect("checked above");
                for ((g, p), a) in grad.values_mut().iter_mut().zip(params.values()).zip(a.values()) {
                    *g += opts.prox_mu * (p - a);
                }
                let d = params.sub(a)?;
                batch_loss += 0.5 * opts.prox_mu * d.dot(&d)?;
            }
            let rep = opt.step(&mut params, &grad)?;
            stats.steps += 1;
            stats.last_loss = batch_loss;
            stats.final_lr = rep.lr;
            stats.clipped_steps += rep.clipped as usize;
            loss_sum += batch_loss;
            norm_sum += rep.grad_norm;
        }
    }
    stats.mean_loss = loss_sum / stats.steps as f64;
    stats.mean_grad_norm = norm_sum / stats.steps as f64;
    Ok((params, stats))
}

/// A network with fixed parameters, usable as a tile predictor.
pub struct SegModel {
    pub net: SegNet,
    pub params: ParamVec,
}

impl SegModel {
    pub fn new(net: SegNet, params: ParamVec) -> Result<Self> {
        if **params.layout() != **net.layout() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} parameters", net.num_params()),
                actual: format!("{} parameters", params.len()),
            });
        }
        Ok(Self { net, params })
    }

    pub fn tile(&self) -> usize {
        self.net.config().patch
    }
}

impl TileModel for SegModel {
    fn predict(&self, tile: &GrayImage) -> GrayImage {
        self.net
            .forward(&self.params, tile)
            .expect("tile size equals the network patch")
            .0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segnet::net::NetConfig;
    use crate::segnet::optim::{AdamWConfig, LrSchedule};

    pub(crate) struct ToyPage {
        image: Gray8,
        mask: BinMask,
    }

    impl PageData for ToyPage {
        fn image8(&self) -> &Gray8 {
            &self.image
        }
        fn mask(&self) -> &BinMask {
            &self.mask
        }
    }

    /// A dark horizontal line on white.
    fn toy_page(w: usize, h: usize, row: usize) -> ToyPage {
        let mask = BinMask::from_fn(w, h, |_, y| y.abs_diff(row) <= 1);
        let img = GrayImage::from_fn(w, h, |x, y| if mask.get(x, y) { 0.05 } else { 0.92 });
        ToyPage {
            image: Gray8::from_image(&img),
            mask,
        }
    }

    fn toy_setup() -> (SegNet, ParamVec, OptState) {
        let net = SegNet::new(NetConfig {
            depth: 2,
            channels: vec![2, 4],
            patch: 16,
            batch: 2,
            ..NetConfig::default()
        })
        .unwrap();
        let p = net.init(3);
        let cfg = AdamWConfig {
            schedule: LrSchedule {
                peak: 1e-2,
                warmup: 10,
                floor: 1e-4,
                total_steps: 400,
            },
            ..AdamWConfig::default()
        };
        let st = OptState::new(&p, cfg);
        (net, p, st)
    }

    #[test]
    fn crop_pads_outside_with_background() {
        let page = toy_page(20, 20, 5);
        let (img, m) = crop_pair(&page, -2, 3, 8);
        assert_eq!(img.get(0, 0), 1.0);
        assert!(!m.get(0, 2));
        assert!(m.get(3, 2));
        assert!((img.get(3, 2) - 13.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn foreground_patches_contain_trace() {
        let page = toy_page(200, 100, 70);
        let mut rng = sim_rng(1, "t", 0);
        for _ in 0..20 {
            let (_, m) = sample_patch(&page, 16, 1.0, &mut rng);
            assert!(m.count_ones() > 0);
        }
    }

    #[test]
    fn same_seed_same_result_and_empty_rejected() {
        let (net, p, st) = toy_setup();
        let pages = [toy_page(40, 40, 10), toy_page(40, 40, 25), toy_page(40, 40, 30)];
        let refs: Vec<&ToyPage> = pages.iter().collect();
        let opts = LocalTrainOptions::default();
        let (a, _) = local_train(&net, &p, &mut st.clone(), &refs, &opts, None, 9, 0).unwrap();
        let (b, _) = local_train(&net, &p, &mut st.clone(), &refs, &opts, None, 9, 0).unwrap();
        assert_eq!(a, b);
        let empty: Vec<&ToyPage> = Vec::new();
        assert!(matches!(
            local_train(&net, &p, &mut st.clone(), &empty, &opts, None, 9, 0),
            Err(Error::EmptyClientData)
        ));
    }

    #[test]
    fn split_calls_equal_one_long_call() {
        let (net, p, st) = toy_setup();
        let pages = [toy_page(40, 40, 10), toy_page(40, 40, 25), toy_page(40, 40, 30)];
        let refs: Vec<&ToyPage> = pages.iter().collect();
        let two = LocalTrainOptions {
            epochs: 2,
            ..LocalTrainOptions::default()
        };
        let one = LocalTrainOptions::default();
        let mut s_long = st.clone();
        let (long, _) = local_train(&net, &p, &mut s_long, &refs, &two, None, 4, 0).unwrap();
        let mut s_split = st.clone();
        let (mid, _) = local_train(&net, &p, &mut s_split, &refs, &one, None, 4, 0).unwrap();
        let (split, _) = local_train(&net, &mid, &mut s_split, &refs, &one, None, 4, 1).unwrap();
        assert_eq!(long, split);
        assert_eq!(s_long, s_split);
    }

    #[test]
    fn prox_zero_matches_plain_and_large_prox_stays_near_anchor() {
        let (net, p, st) = toy_setup();
        let pages = [toy_page(40, 40, 10), toy_page(40, 40, 25)];
        let refs: Vec<&ToyPage> = pages.iter().collect();
        let opts = LocalTrainOptions {
            epochs: 3,
            ..LocalTrainOptions::default()
        };
        let (plain, _) = local_train(&net, &p, &mut st.clone(), &refs, &opts, None, 2, 0).unwrap();
        let zero = LocalTrainOptions { prox_mu: 0.0, ..opts };
        let (z, _) = local_train(&net, &p, &mut st.clone(), &refs, &zero, Some(&p), 2, 0).unwrap();
        assert_eq!(plain, z);
        let big = LocalTrainOptions { prox_mu: 1e6, ..opts };
        let (b, _) = local_train(&net, &p, &mut st.clone(), &refs, &big, Some(&p), 2, 0).unwrap();
        assert!(b.sub(&p).unwrap().norm() < plain.sub(&p).unwrap().norm());
    }

    #[test]
    fn overfits_a_single_page() {
        let (net, p, st) = toy_setup();
        let page = toy_page(16, 16, 7);
        let refs = vec![&page];
        let opts = LocalTrainOptions {
            epochs: 200,
            fg_fraction: 1.0,
            ..LocalTrainOptions::default()
        };
        let (patch, mask) = crop_pair(&page, 0, 0, 16);
        let before = net.loss(&p, &patch, &mask, &opts.loss).unwrap();
        let (q, stats) = local_train(&net, &p, &mut st.clone(), &refs, &opts, None, 5, 0).unwrap();
        let after = net.loss(&q, &patch, &mask, &opts.loss).unwrap();
        assert_eq!(stats.steps, 200);
        assert!(after < 0.5 * before, "{before} -> {after}");
    }
}
