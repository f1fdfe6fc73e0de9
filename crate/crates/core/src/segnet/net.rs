//! The fixed encoder–decoder: per level two conv–norm–SiLU blocks on the way
//! down (2×2 average pooling between levels), nearest ×2 upsampling followed
//! by a block and a fusion block over `[up; skip]` on the way up, a 1×1 main
//! head at full resolution and a 1×1 auxiliary head at half resolution.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::loss::{head_loss, LossConfig, LossParts};
use super::ops::{self, NormCache, Tensor};
use super::params::{Layout, ParamVec};
use crate::raster::{BinMask, GrayImage};
use crate::rng::{sim_rng, BoxMuller};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub depth: usize,
    pub channels: Vec<usize>,
    /// Weights of the (full, half) resolution heads; normalized to sum 1.
    pub deep_supervision_weights: (f64, f64),
    pub patch: usize,
    pub batch: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            channels: vec![8, 16, 32],
            deep_supervision_weights: (1.0, 0.5),
            patch: 128,
            batch: 2,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::invalid("depth", "need at least 2 levels for the auxiliary head"));
        }
        if self.channels.len() != self.depth || self.channels.contains(&0) {
            return Err(Error::invalid("channels", "one positive width per level"));
        }
        let stride = 1usize << (self.depth - 1);
        if self.patch == 0 || self.patch % stride != 0 {
            return Err(Error::invalid(
                "patch",
                format!("must be a positive multiple of {stride}"),
            ));
        }
        let (a, b) = self.deep_supervision_weights;
        if !(a >= 0.0 && b >= 0.0 && a + b > 0.0) {
            return Err(Error::invalid(
                "deep_supervision_weights",
                "non-negative, not both zero",
            ));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch", "must be positive"));
        }
        Ok(())
    }

    /// Recovers depth and widths from a checkpoint layout; the other
    /// fields come from `base`.
    pub fn from_layout(layout: &Layout, base: &NetConfig) -> Result<NetConfig> {
        let mut channels = Vec::new();
        while let Some(t) = layout.get(&format!("enc{}.0.w", channels.len())) {
            channels.push(t.shape[0]);
        }
        let cfg = NetConfig {
            depth: channels.len(),
            channels,
            ..base.clone()
        };
        cfg.validate()?;
        if *SegNet::new(cfg.clone())?.layout().as_ref() != *layout {
            return Err(Error::invalid(
                "checkpoint",
                "layout does not match any network of this family",
            ));
        }
        Ok(cfg)
    }

    fn head_weights(&self) -> (f64, f64) {
        let (a, b) = self.deep_supervision_weights;
        (a / (a + b), b / (a + b))
    }
}

#[derive(Clone, Copy, Debug)]
struct BlockSpec {
    cin: usize,
    cout: usize,
    /// Offset of `w`, followed by `gamma` and `beta`.
    offset: usize,
}

impl BlockSpec {
    fn nw(&self) -> usize {
        self.cout * self.cin * 9
    }

    fn len(&self) -> usize {
        self.nw() + 2 * self.cout
    }
}

#[derive(Clone, Copy, Debug)]
struct HeadSpec {
    cin: usize,
    offset: usize,
}

struct BlockCache {
    input: Tensor,
    norm: NormCache,
    pre: Tensor,
}

/// Activations kept for the backward pass.
pub struct ForwardCache {
    enc: Vec<[BlockCache; 2]>,
    skips: Vec<Tensor>,
    dec_up: Vec<Option<BlockCache>>,
    dec_fuse: Vec<Option<BlockCache>>,
    dec_out: Vec<Option<Tensor>>,
    pub logits: Tensor,
    pub aux_logits: Tensor,
}

/// Output of [`SegNet::loss_and_grad`].
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    pub main: LossParts,
    pub aux: LossParts,
    pub grad: ParamVec,
}

/// Architecture bound to a [`NetConfig`]; stateless apart from offsets.
#[derive(Clone, Debug)]
pub struct SegNet {
    cfg: NetConfig,
    layout: Arc<Layout>,
    enc: Vec<[BlockSpec; 2]>,
    dec_up: Vec<Option<BlockSpec>>,
    dec_fuse: Vec<Option<BlockSpec>>,
    head: HeadSpec,
    aux: HeadSpec,
}

impl SegNet {
    pub fn new(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        let c = &cfg.channels;
        let d = cfg.depth;
        let mut layout = Layout::new();
        let block = |layout: &mut Layout, name: String, cin: usize, cout: usize| {
            let offset = layout.push(format!("{name}.w"), &[cout, cin, 3, 3]);
            layout.push(format!("{name}.gamma"), &[cout]);
            layout.push(format!("{name}.beta"), &[cout]);
            BlockSpec { cin, cout, offset }
        };
        let mut enc = Vec::with_capacity(d);
        for l in 0..d {
            let cin = if l == 0 { 1 } else { c[l - 1] };
            let a = block(&mut layout, format!("enc{l}.0"), cin, c[l]);
            let b = block(&mut layout, format!("enc{l}.1"), c[l], c[l]);
            enc.push([a, b]);
        }
        let mut dec_up = vec![None; d];
        let mut dec_fuse = vec![None; d];
        for l in (0..d - 1).rev() {
            dec_up[l] = Some(block(&mut layout, format!("dec{l}.up"), c[l + 1], c[l]));
            dec_fuse[l] = Some(block(&mut layout, format!("dec{l}.fuse"), 2 * c[l], c[l]));
        }
        let aux = HeadSpec {
            cin: c[1],
            offset: layout.push("aux.w", &[1, c[1]]),
        };
        layout.push("aux.b", &[1]);
        let head = HeadSpec {
            cin: c[0],
            offset: layout.push("head.w", &[1, c[0]]),
        };
        layout.push("head.b", &[1]);
        Ok(Self {
            cfg,
            layout: Arc::new(layout),
            enc,
            dec_up,
            dec_fuse,
            head,
            aux,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.total()
    }

    /// He-normal convolution weights, unit gains, zero shifts and biases.
    pub fn init(&self, seed: u64) -> ParamVec {
        let mut p = ParamVec::zeros(self.layout.clone());
        let mut g = BoxMuller::new(sim_rng(seed, "segnet-init", 0));
        let v = p.values_mut();
        let blocks = self
            .enc
            .iter()
            .flat_map(|b| b.iter().copied())
            .chain(self.dec_up.iter().flatten().copied())
            .chain(self.dec_fuse.iter().flatten().copied());
        for b in blocks {
            let std = (2.0 / (b.cin * 9) as f64).sqrt();
            for x in &mut v[b.offset..b.offset + b.nw()] {
                *x = std * g.next();
            }
            v[b.offset + b.nw()..b.offset + b.nw() + b.cout].fill(1.0);
        }
        for h in [self.aux, self.head] {
            let std = (1.0 / h.cin as f64).sqrt();
            for x in &mut v[h.offset..h.offset + h.cin] {
                *x = std * g.next();
            }
        }
        p
    }

    fn check_inputs(&self, params: &ParamVec, patch: &GrayImage) -> Result<()> {
        if **params.layout() != *self.layout {
            return Err(Error::DimensionMismatch {
                expected: format!("{} parameters", self.layout.total()),
                actual: format!("{} parameters", params.len()),
            });
        }
        let p = self.cfg.patch;
        if patch.dims() != (p, p) {
            return Err(Error::DimensionMismatch {
                expected: format!("{p}x{p} patch"),
                actual: format!("{}x{}", patch.width(), patch.height()),
            });
        }
        Ok(())
    }

    /// Foreground probabilities at full and half resolution.
    pub fn forward(&self, params: &ParamVec, patch: &GrayImage) -> Result<(GrayImage, GrayImage)> {
        self.check_inputs(params, patch)?;
        let cache = self.forward_cached(params.values(), patch);
        let to_image = |t: &Tensor| {
            GrayImage::from_vec(t.w, t.h, t.data.iter().map(|&z| ops::sigmoid(z)).collect()).expect("consistent dims")
        };
        Ok((to_image(&cache.logits), to_image(&cache.aux_logits)))
    }

    /// Raw logits at full and half resolution plus all saved activations.
    pub fn forward_cached(&self, p: &[f64], patch: &GrayImage) -> ForwardCache {
        let d = self.cfg.depth;
        let input = Tensor {
            c: 1,
            h: patch.height(),
            w: patch.width(),
            data: patch.data().to_vec(),
        };
        let mut enc = Vec::with_capacity(d);
        let mut skips: Vec<Tensor> = Vec::with_capacity(d);
        for l in 0..d {
            let x = if l == 0 {
                input.clone()
            } else {
                ops::avg_pool2(&skips[l - 1])
            };
            let (y0, c0) = block_forward(&self.enc[l][0], p, x);
            let (y1, c1) = block_forward(&self.enc[l][1], p, y0);
            enc.push([c0, c1]);
            skips.push(y1);
        }
        let mut dec_up: Vec<Option<BlockCache>> = (0..d).map(|_| None).collect();
        let mut dec_fuse: Vec<Option<BlockCache>> = (0..d).map(|_| None).collect();
        let mut dec_out: Vec<Option<Tensor>> = vec![None; d];
        let mut cur = skips[d - 1].clone();
        for l in (0..d - 1).rev() {
            let up = ops::upsample2(&cur);
            let (u, cu) = block_forward(self.dec_up[l].as_ref().expect("decoder level"), p, up);
            let cat = Tensor::concat(&u, &skips[l]);
            let (f, cf) = block_forward(self.dec_fuse[l].as_ref().expect("decoder level"), p, cat);
            dec_up[l] = Some(cu);
            dec_fuse[l] = Some(cf);
            dec_out[l] = Some(f.clone());
            cur = f;
        }
        let aux_feat = if d >= 3 {
            dec_out[1].as_ref().expect("level 1 output")
        } else {
            &skips[1]
        };
        let aux_logits = head_forward(&self.aux, p, aux_feat);
        let logits = head_forward(&self.head, p, &cur);
        ForwardCache {
            enc,
            skips,
            dec_up,
            dec_fuse,
            dec_out,
            logits,
            aux_logits,
        }
    }

    /// Back-propagates logit gradients, accumulating into `grad`.
    pub fn backward(&self, p: &[f64], cache: &ForwardCache, g_logits: &Tensor, g_aux: &Tensor, grad: &mut [f64]) {
        let d = self.cfg.depth;
        let mut gskip: Vec<Tensor> = cache.skips.iter().map(Tensor::same_shape).collect();
        let top = cache.dec_out[0].as_ref().expect("level 0 output");
        let mut g_cur = head_backward(&self.head, p, top, g_logits, grad);
        let g_aux_feat = {
            let feat = if d >= 3 {
                cache.dec_out[1].as_ref().expect("level 1 output")
            } else {
                &cache.skips[1]
            };
            head_backward(&self.aux, p, feat, g_aux, grad)
        };
        for l in 0..d - 1 {
            if l == 1 {
                add_into(&mut g_cur, &g_aux_feat);
            }
            let fuse = self.dec_fuse[l].as_ref().expect("decoder level");
            let g_cat = block_backward(fuse, p, cache.dec_fuse[l].as_ref().expect("cache"), &g_cur, grad, true)
                .expect("input gradient");
            let (g_u, g_s) = g_cat.split(fuse.cout);
            add_into(&mut gskip[l], &g_s);
            let up = self.dec_up[l].as_ref().expect("decoder level");
            let g_up = block_backward(up, p, cache.dec_up[l].as_ref().expect("cache"), &g_u, grad, true)
                .expect("input gradient");
            g_cur = ops::upsample2_backward(&g_up);
        }
        add_into(&mut gskip[d - 1], &g_cur);
        if d == 2 {
            add_into(&mut gskip[1], &g_aux_feat);
        }
        for l in (0..d).rev() {
            let g =
                block_backward(&self.enc[l][1], p, &cache.enc[l][1], &gskip[l], grad, true).expect("input gradient");
            let g = block_backward(&self.enc[l][0], p, &cache.enc[l][0], &g, grad, l > 0);
            if l > 0 {
                let g = g.expect("input gradient");
                let pooled = ops::avg_pool2_backward(&g);
                add_into(&mut gskip[l - 1], &pooled);
            }
        }
    }

    /// Deep-supervised loss of one patch and its exact gradient.
    pub fn loss_and_grad(
        &self,
        params: &ParamVec,
        patch: &GrayImage,
        mask: &BinMask,
        loss: &LossConfig,
    ) -> Result<LossGrad> {
        self.check_inputs(params, patch)?;
        if mask.dims() != patch.dims() {
            return Err(Error::DimensionMismatch {
                expected: format!("{:?} mask", patch.dims()),
                actual: format!("{:?}", mask.dims()),
            });
        }
        loss.validate()?;
        let mut grad = params.zeros_like();
        let (total, main, aux) = self.accumulate_grad(params.values(), patch, mask, loss, 1.0, grad.values_mut());
        Ok(LossGrad {
            loss: total,
            main,
            aux,
            grad,
        })
    }

    /// Adds `scale ·` the gradient of one patch into `grad`; returns the loss.
    pub(crate) fn accumulate_grad(
        &self,
        p: &[f64],
        patch: &GrayImage,
        mask: &BinMask,
        loss: &LossConfig,
        scale: f64,
        grad: &mut [f64],
    ) -> (f64, LossParts, LossParts) {
        let cache = self.forward_cached(p, patch);
        let half = mask.downsample_or();
        let (wm, wa) = self.cfg.head_weights();
        let (main, mut gl) = head_loss(&cache.logits.data, mask.data(), loss);
        let (aux, mut ga) = head_loss(&cache.aux_logits.data, half.data(), loss);
        for g in &mut gl {
            *g *= wm * scale;
        }
        for g in &mut ga {
            *g *= wa * scale;
        }
        let g_logits = Tensor {
            data: gl,
            ..cache.logits.same_shape()
        };
        let g_aux = Tensor {
            data: ga,
            ..cache.aux_logits.same_shape()
        };
        self.backward(p, &cache, &g_logits, &g_aux, grad);
        (wm * main.total + wa * aux.total, main, aux)
    }

    /// Loss without gradient, for checks and validation.
    pub fn loss(&self, params: &ParamVec, patch: &GrayImage, mask: &BinMask, loss: &LossConfig) -> Result<f64> {
        self.check_inputs(params, patch)?;
        let cache = self.forward_cached(params.values(), patch);
        let (wm, wa) = self.cfg.head_weights();
        let half = mask.downsample_or();
        let (main, _) = head_loss(&cache.logits.data, mask.data(), loss);
        let (aux, _) = head_loss(&cache.aux_logits.data, half.data(), loss);
        Ok(wm * main.total + wa * aux.total)
    }
}

fn add_into(dst: &mut Tensor, src: &Tensor) {
    for (a, b) in dst.data.iter_mut().zip(&src.data) {
        *a += b;
    }
}

fn block_forward(b: &BlockSpec, p: &[f64], input: Tensor) -> (Tensor, BlockCache) {
    let w = &p[b.offset..b.offset + b.nw()];
    let gamma = &p[b.offset + b.nw()..b.offset + b.nw() + b.cout];
    let beta = &p[b.offset + b.nw() + b.cout..b.offset + b.len()];
    let conv = ops::conv3x3(&input, w, b.cout);
    let (pre, norm) = ops::instance_norm(&conv, gamma, beta);
    let out = ops::silu(&pre);
    (out, BlockCache { input, norm, pre })
}

fn block_backward(
    b: &BlockSpec,
    p: &[f64],
    cache: &BlockCache,
    grad_out: &Tensor,
    grad: &mut [f64],
    want_input: bool,
) -> Option<Tensor> {
    let w = &p[b.offset..b.offset + b.nw()];
    let gamma = &p[b.offset + b.nw()..b.offset + b.nw() + b.cout];
    let g_pre = ops::silu_backward(&cache.pre, grad_out);
    let slot = &mut grad[b.offset..b.offset + b.len()];
    let (gw, rest) = slot.split_at_mut(b.nw());
    let (gg, gb) = rest.split_at_mut(b.cout);
    let g_conv = ops::instance_norm_backward(&cache.norm, gamma, &g_pre, gg, gb);
    ops::conv3x3_backward(&cache.input, w, &g_conv, gw, want_input)
}

fn head_forward(h: &HeadSpec, p: &[f64], feat: &Tensor) -> Tensor {
    ops::conv1x1(
        feat,
        &p[h.offset..h.offset + h.cin],
        &p[h.offset + h.cin..h.offset + h.cin + 1],
    )
}

fn head_backward(h: &HeadSpec, p: &[f64], feat: &Tensor, g: &Tensor, grad: &mut [f64]) -> Tensor {
    let slot = &mut grad[h.offset..h.offset + h.cin + 1];
    let (gw, gb) = slot.split_at_mut(h.cin);
    ops::conv1x1_backward(feat, &p[h.offset..h.offset + h.cin], g, gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::uniform;

    pub(crate) fn toy(depth: usize, channels: Vec<usize>, patch: usize) -> SegNet {
        SegNet::new(NetConfig {
            depth,
            channels,
            patch,
            ..NetConfig::default()
        })
        .unwrap()
    }

    fn random_case(net: &SegNet, seed: u64) -> (ParamVec, GrayImage, BinMask) {
        let mut rng = sim_rng(seed, "net-test", 0);
        let mut params = net.init(seed);
        for v in params.values_mut() {
            *v += uniform(&mut rng, -0.3, 0.3);
        }
        let p = net.config().patch;
        let img = GrayImage::from_fn(p, p, |_, _| uniform(&mut rng, 0.0, 1.0));
        let mask = BinMask::from_fn(p, p, |_, _| uniform(&mut rng, 0.0, 1.0) < 0.3);
        (params, img, mask)
    }

    #[test]
    fn zero_params_give_half_everywhere() {
        let net = toy(3, vec![2, 3, 4], 8);
        let params = ParamVec::zeros(net.layout().clone());
        let (p, aux) = net.forward(&params, &GrayImage::new(8, 8, 0.4)).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
        assert_eq!(p.dims(), (8, 8));
        assert_eq!(aux.dims(), (4, 4));
    }

    #[test]
    fn forward_is_deterministic_and_checks_dims() {
        let net = toy(3, vec![2, 3, 4], 8);
        let (params, img, _) = random_case(&net, 1);
        let a = net.forward(&params, &img).unwrap();
        let b = net.forward(&params, &img).unwrap();
        assert_eq!(a, b);
        assert!(net.forward(&params, &GrayImage::new(16, 8, 0.0)).is_err());
        assert!(SegNet::new(NetConfig {
            patch: 6,
            ..NetConfig::default()
        })
        .is_err());
    }

    #[test]
    fn default_layout_is_stable() {
        let net = SegNet::new(NetConfig::default()).unwrap();
        assert_eq!(net.layout().tensors().first().unwrap().name, "enc0.0.w");
        assert_eq!(net.layout().tensors().last().unwrap().name, "head.b");
        assert_eq!(
            net.num_params(),
            SegNet::new(NetConfig::default()).unwrap().num_params()
        );
        let small = toy(2, vec![3, 5], 8);
        let cfg = NetConfig::from_layout(small.layout(), &NetConfig::default()).unwrap();
        assert_eq!((cfg.depth, cfg.channels.clone(), cfg.patch), (2, vec![3, 5], 128));
        let mut odd = Layout::new();
        odd.push("enc0.0.w", &[3, 1, 3, 3]);
        assert!(NetConfig::from_layout(&odd, &NetConfig::default()).is_err());
    }

    fn check_gradient(net: &SegNet, seed: u64) {
        let (params, img, mask) = random_case(net, seed);
        let cfg = LossConfig::default();
        let lg = net.loss_and_grad(&params, &img, &mask, &cfg).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            let mut a = params.clone();
            let mut b = params.clone();
            a.values_mut()[i] += h;
            b.values_mut()[i] -= h;
            let fd = (net.loss(&a, &img, &mask, &cfg).unwrap() - net.loss(&b, &img, &mask, &cfg).unwrap()) / (2.0 * h);
            let an = lg.grad.values()[i];
            let scale = an.abs().max(fd.abs());
            let err = if scale < 1e-7 {
                (an - fd).abs()
            } else {
                (an - fd).abs() / scale
            };
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "seed {seed}: worst relative error {worst}");
    }

    #[test]
    fn gradient_matches_finite_differences_depth2() {
        check_gradient(&toy(2, vec![2, 3], 8), 11);
    }

    #[test]
    fn gradient_matches_finite_differences_depth3() {
        check_gradient(&toy(3, vec![2, 2, 3], 8), 12);
    }
}
