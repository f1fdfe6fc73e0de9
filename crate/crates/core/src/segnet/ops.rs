//! Planar `(channels, height, width)` kernels and their adjoints.
//!
//! Every backward routine *accumulates* into its gradient buffers.

/// Dense feature map in channel-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self) -> Self {
        Self::zeros(self.c, self.h, self.w)
    }

    /// Channel concatenation `[a; b]`.
    pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
        debug_assert_eq!((a.h, a.w), (b.h, b.w));
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor {
            c: a.c + b.c,
            h: a.h,
            w: a.w,
            data,
        }
    }

    /// Splits a channel range off into a new tensor.
    pub fn split(&self, at: usize) -> (Tensor, Tensor) {
        let n = at * self.plane();
        (
            Tensor {
                c: at,
                h: self.h,
                w: self.w,
                data: self.data[..n].to_vec(),
            },
            Tensor {
                c: self.c - at,
                h: self.h,
                w: self.w,
                data: self.data[n..].to_vec(),
            },
        )
    }
}

/// Copies each channel into a zero border of one pixel, row stride `w + 2`.
fn pad_planes(t: &Tensor) -> Vec<f64> {
    let (pw, ph) = (t.w + 2, t.h + 2);
    let mut out = vec![0.0; t.c * pw * ph];
    for c in 0..t.c {
        let src = t.channel(c);
        let dst = &mut out[c * pw * ph..(c + 1) * pw * ph];
        for y in 0..t.h {
            dst[(y + 1) * pw + 1..(y + 1) * pw + 1 + t.w].copy_from_slice(&src[y * t.w..(y + 1) * t.w]);
        }
    }
    out
}

/// Flat offset of tap `(ky, kx)` in a padded plane, and the flat length
/// covering every output pixel when outputs use row stride `w + 2`.
#[inline]
fn tap_geometry(h: usize, w: usize) -> (usize, usize) {
    let pw = w + 2;
    (pw, h * pw - 2)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let mut ac = a.chunks_exact(8);
    let mut bc = b.chunks_exact(8);
    for (x, y) in (&mut ac).zip(&mut bc) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ac.remainder().iter().zip(bc.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

const LANES: usize = 8;

/// `out[i] = Σ_c Σ_t k[c][t] · src_c[i + offs[t]]` for `i < out.len()`,
/// accumulated in register-sized blocks of pixels.
fn gather_taps(out: &mut [f64], planes: &[&[f64]], kernels: &[[f64; 9]], offs: &[usize; 9]) {
    let len = out.len();
    let mut i = 0;
    while i + LANES <= len {
        let mut acc = [0.0f64; LANES];
        for (src, k) in planes.iter().zip(kernels) {
            for t in 0..9 {
                let s = &src[i + offs[t]..i + offs[t] + LANES];
                let wv = k[t];
                for j in 0..LANES {
                    acc[j] += wv * s[j];
                }
            }
        }
        out[i..i + LANES].copy_from_slice(&acc);
        i += LANES;
    }
    for (j, o) in out.iter_mut().enumerate().skip(i) {
        let mut a = 0.0;
        for (src, k) in planes.iter().zip(kernels) {
            for t in 0..9 {
                a += k[t] * src[j + offs[t]];
            }
        }
        *o = a;
    }
}

fn kernel(weight: &[f64], idx: usize) -> [f64; 9] {
    weight[idx * 9..idx * 9 + 9].try_into().expect("9 taps")
}

/// 3×3 "same" convolution without bias. `weight` is `[cout][cin][3][3]`.
pub fn conv3x3(input: &Tensor, weight: &[f64], cout: usize) -> Tensor {
    let (cin, h, w) = (input.c, input.h, input.w);
    debug_assert_eq!(weight.len(), cout * cin * 9);
    let padded = pad_planes(input);
    let plane = (h + 2) * (w + 2);
    let (pw, len) = tap_geometry(h, w);
    let offs: [usize; 9] = std::array::from_fn(|t| (t / 3) * pw + t % 3);
    let planes: Vec<&[f64]> = (0..cin).map(|ci| &padded[ci * plane..(ci + 1) * plane]).collect();
    let mut strided = vec![0.0; h * pw];
    let mut out = Tensor::zeros(cout, h, w);
    for co in 0..cout {
        let kernels: Vec<[f64; 9]> = (0..cin).map(|ci| kernel(weight, co * cin + ci)).collect();
        gather_taps(&mut strided[..len], &planes, &kernels, &offs);
        let o = &mut out.data[co * h * w..(co + 1) * h * w];
        for y in 0..h {
            o[y * w..(y + 1) * w].copy_from_slice(&strided[y * pw..y * pw + w]);
        }
    }
    out
}

/// Adjoint of [`conv3x3`]: accumulates into `grad_w` and returns the input
/// gradient when `want_input` is set.
pub fn conv3x3_backward(
    input: &Tensor,
    weight: &[f64],
    grad_out: &Tensor,
    grad_w: &mut [f64],
    want_input: bool,
) -> Option<Tensor> {
    let (cin, h, w) = (input.c, input.h, input.w);
    let cout = grad_out.c;
    let padded = pad_planes(input);
    let plane = (h + 2) * (w + 2);
    let (pw, len) = tap_geometry(h, w);
    // Output gradients in row stride `w + 2` behind a zero margin of
    // `margin` on both sides; the spare columns stay 0.
    let margin = 2 * pw + 2;
    let ext = h * pw + 2 * margin;
    let mut g_ext = vec![0.0; cout * ext];
    for co in 0..cout {
        let g = grad_out.channel(co);
        let dst = &mut g_ext[co * ext + margin..co * ext + margin + h * pw];
        for y in 0..h {
            dst[y * pw..y * pw + w].copy_from_slice(&g[y * w..(y + 1) * w]);
        }
    }
    for co in 0..cout {
        let g = &g_ext[co * ext + margin..co * ext + margin + len];
        for ci in 0..cin {
            let src = &padded[ci * plane..(ci + 1) * plane];
            let base = (co * cin + ci) * 9;
            for t in 0..9 {
                let off = (t / 3) * pw + t % 3;
                grad_w[base + t] += dot(g, &src[off..off + len]);
            }
        }
    }
    if !want_input {
        return None;
    }
    // gin_padded[p] = Σ_co Σ_t w[co][ci][t] · g[co][p − off_t].
    let offs: [usize; 9] = std::array::from_fn(|t| margin - ((t / 3) * pw + t % 3));
    let planes: Vec<&[f64]> = (0..cout).map(|co| &g_ext[co * ext..(co + 1) * ext]).collect();
    let mut gin_padded = vec![0.0; plane];
    let mut gin = input.same_shape();
    for ci in 0..cin {
        let kernels: Vec<[f64; 9]> = (0..cout).map(|co| kernel(weight, co * cin + ci)).collect();
        gather_taps(&mut gin_padded, &planes, &kernels, &offs);
        let dst = &mut gin.data[ci * h * w..(ci + 1) * h * w];
        for y in 0..h {
            dst[y * w..(y + 1) * w].copy_from_slice(&gin_padded[(y + 1) * pw + 1..(y + 1) * pw + 1 + w]);
        }
    }
    Some(gin)
}

/// 1×1 convolution with bias. `weight` is `[cout][cin]`.
pub fn conv1x1(input: &Tensor, weight: &[f64], bias: &[f64]) -> Tensor {
    let cout = bias.len();
    let cin = input.c;
    let n = input.plane();
    let mut out = Tensor::zeros(cout, input.h, input.w);
    for co in 0..cout {
        let o = &mut out.data[co * n..(co + 1) * n];
        o.fill(bias[co]);
        for ci in 0..cin {
            let wv = weight[co * cin + ci];
            for (a, b) in o.iter_mut().zip(input.channel(ci)) {
                *a += wv * b;
            }
        }
    }
    out
}

pub fn conv1x1_backward(
    input: &Tensor,
    weight: &[f64],
    grad_out: &Tensor,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> Tensor {
    let cin = input.c;
    let n = input.plane();
    let mut gin = input.same_shape();
    for co in 0..grad_out.c {
        let g = grad_out.channel(co);
        grad_b[co] += g.iter().sum::<f64>();
        for ci in 0..cin {
            let x = input.channel(ci);
            grad_w[co * cin + ci] += g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            let wv = weight[co * cin + ci];
            for (d, a) in gin.data[ci * n..(ci + 1) * n].iter_mut().zip(g) {
                *d += wv * a;
            }
        }
    }
    gin
}

pub const NORM_EPS: f64 = 1e-5;

/// Saved statistics of an instance normalization.
#[derive(Clone, Debug)]
pub struct NormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

/// Per-channel instance normalization with affine `gamma`, `beta`.
pub fn instance_norm(input: &Tensor, gamma: &[f64], beta: &[f64]) -> (Tensor, NormCache) {
    let n = input.plane();
    let mut xhat = input.same_shape();
    let mut out = input.same_shape();
    let mut inv_std = Vec::with_capacity(input.c);
    for c in 0..input.c {
        let x = input.channel(c);
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let is = 1.0 / (var + NORM_EPS).sqrt();
        inv_std.push(is);
        let xh = &mut xhat.data[c * n..(c + 1) * n];
        let o = &mut out.data[c * n..(c + 1) * n];
        for i in 0..n {
            xh[i] = (x[i] - mean) * is;
            o[i] = gamma[c] * xh[i] + beta[c];
        }
    }
    (out, NormCache { xhat, inv_std })
}

pub fn instance_norm_backward(
    cache: &NormCache,
    gamma: &[f64],
    grad_out: &Tensor,
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
) -> Tensor {
    let n = grad_out.plane();
    let nf = n as f64;
    let mut gin = grad_out.same_shape();
    for c in 0..grad_out.c {
        let g = grad_out.channel(c);
        let xh = cache.xhat.channel(c);
        let sum_g: f64 = g.iter().sum();
        let sum_gx: f64 = g.iter().zip(xh).map(|(a, b)| a * b).sum();
        grad_gamma[c] += sum_gx;
        grad_beta[c] += sum_g;
        let k = gamma[c] * cache.inv_std[c] / nf;
        let d = &mut gin.data[c * n..(c + 1) * n];
        for i in 0..n {
            d[i] = k * (nf * g[i] - sum_g - xh[i] * sum_gx);
        }
    }
    gin
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// SiLU, `x·σ(x)`.
pub fn silu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in &mut out.data {
        *v *= sigmoid(*v);
    }
    out
}

/// Gradient through SiLU given its pre-activation.
pub fn silu_backward(pre: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut gin = grad_out.clone();
    for (g, &x) in gin.data.iter_mut().zip(&pre.data) {
        let s = sigmoid(x);
        *g *= s * (1.0 + x * (1.0 - s));
    }
    gin
}

/// 2×2 average pooling; dimensions must be even.
pub fn avg_pool2(input: &Tensor) -> Tensor {
    let (h, w) = (input.h / 2, input.w / 2);
    let mut out = Tensor::zeros(input.c, h, w);
    for c in 0..input.c {
        let x = input.channel(c);
        let o = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            let r0 = &x[2 * y * input.w..];
            let r1 = &x[(2 * y + 1) * input.w..];
            for xx in 0..w {
                o[y * w + xx] = 0.25 * (r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1]);
            }
        }
    }
    out
}

pub fn avg_pool2_backward(grad_out: &Tensor) -> Tensor {
    let (h, w) = (grad_out.h * 2, grad_out.w * 2);
    let mut gin = Tensor::zeros(grad_out.c, h, w);
    for c in 0..grad_out.c {
        let g = grad_out.channel(c);
        let d = &mut gin.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                d[y * w + x] = 0.25 * g[(y / 2) * grad_out.w + x / 2];
            }
        }
    }
    gin
}

/// Nearest-neighbor ×2 upsampling.
pub fn upsample2(input: &Tensor) -> Tensor {
    let (h, w) = (input.h * 2, input.w * 2);
    let mut out = Tensor::zeros(input.c, h, w);
    for c in 0..input.c {
        let x = input.channel(c);
        let o = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                o[y * w + xx] = x[(y / 2) * input.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &Tensor) -> Tensor {
    let (h, w) = (grad_out.h / 2, grad_out.w / 2);
    let mut gin = Tensor::zeros(grad_out.c, h, w);
    for c in 0..grad_out.c {
        let g = grad_out.channel(c);
        let d = &mut gin.data[c * h * w..(c + 1) * h * w];
        for y in 0..grad_out.h {
            for x in 0..grad_out.w {
                d[(y / 2) * w + x / 2] += g[y * grad_out.w + x];
            }
        }
    }
    gin
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{sim_rng, uniform};

    fn random_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = sim_rng(seed, "ops-test", 0);
        let mut t = Tensor::zeros(c, h, w);
        for v in &mut t.data {
            *v = uniform(&mut rng, -1.0, 1.0);
        }
        t
    }

    fn naive_conv(input: &Tensor, weight: &[f64], cout: usize) -> Tensor {
        let mut out = Tensor::zeros(cout, input.h, input.w);
        for co in 0..cout {
            for y in 0..input.h as isize {
                for x in 0..input.w as isize {
                    let mut s = 0.0;
                    for ci in 0..input.c {
                        for ky in -1..=1isize {
                            for kx in -1..=1isize {
                                let (sy, sx) = (y + ky, x + kx);
                                if sy < 0 || sx < 0 || sy >= input.h as isize || sx >= input.w as isize {
                                    continue;
                                }
                                let wv = weight[(co * input.c + ci) * 9 + ((ky + 1) * 3 + kx + 1) as usize];
                                s += wv * input.data[ci * input.plane() + (sy as usize) * input.w + sx as usize];
                            }
                        }
                    }
                    out.data[co * input.plane() + y as usize * input.w + x as usize] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        let x = random_tensor(3, 7, 9, 1);
        let w = random_tensor(2, 3, 9, 2).data;
        let fast = conv3x3(&x, &w, 2);
        let slow = naive_conv(&x, &w, 2);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_adjoint_identity() {
        // <conv(x), g> = <x, conv^T(g)> and = <w, dW>.
        let x = random_tensor(2, 6, 5, 3);
        let w = random_tensor(3, 2, 9, 4).data;
        let g = random_tensor(3, 6, 5, 5);
        let y = conv3x3(&x, &w, 3);
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let mut gw = vec![0.0; w.len()];
        let gx = conv3x3_backward(&x, &w, &g, &mut gw, true).unwrap();
        let via_x: f64 = x.data.iter().zip(&gx.data).map(|(a, b)| a * b).sum();
        let via_w: f64 = w.iter().zip(&gw).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-10);
        assert!((lhs - via_w).abs() < 1e-10);
    }

    #[test]
    fn pool_and_upsample_are_adjoint_up_to_scale() {
        let x = random_tensor(2, 4, 6, 6);
        let g = random_tensor(2, 2, 3, 7);
        let lhs: f64 = avg_pool2(&x).data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x
            .data
            .iter()
            .zip(&avg_pool2_backward(&g).data)
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let u = upsample2(&g);
        assert_eq!(u.data[0], u.data[7]);
        let back = upsample2_backward(&u);
        for (a, b) in back.data.iter().zip(&g.data) {
            assert!((a - 4.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn instance_norm_output_is_standardized() {
        let x = random_tensor(2, 5, 5, 8);
        let (y, _) = instance_norm(&x, &[1.0, 2.0], &[0.0, 0.5]);
        let c1 = y.channel(1);
        let mean = c1.iter().sum::<f64>() / 25.0;
        assert!((mean - 0.5).abs() < 1e-12);
        let var = c1.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 25.0;
        assert!((var - 4.0).abs() < 1e-3);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
