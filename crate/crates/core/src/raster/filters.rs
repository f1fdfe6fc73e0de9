use super::GrayImage;
use crate::rng::{sim_rng, BoxMuller};

/// Linear-interpolated empirical quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Percentile contrast stretch: the `lo_pct` quantile maps to 0, the `hi_pct`
/// quantile to 1, linear in between, clipped outside. A degenerate range
/// yields a uniform 0.5 image.
pub fn robust_normalize(img: &GrayImage, lo_pct: f64, hi_pct: f64) -> GrayImage {
    assert!(
        (0.0..=1.0).contains(&lo_pct) && (0.0..=1.0).contains(&hi_pct) && lo_pct < hi_pct,
        "need 0 <= lo_pct < hi_pct <= 1"
    );
    let (w, h) = img.dims();
    if img.data().is_empty() {
        return img.clone();
    }
    let mut sorted = img.data().to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let lo = quantile_sorted(&sorted, lo_pct);
    let hi = quantile_sorted(&sorted, hi_pct);
    if !(hi > lo) {
        return GrayImage::new(w, h, 0.5);
    }
    let span = hi - lo;
    let data = img.data().iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect();
    GrayImage::from_vec(w, h, data).expect("same dims")
}

/// Normalized 1-D Gaussian kernel with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Separable Gaussian blur with clamped edges.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    assert!(sigma >= 0.0, "sigma must be non-negative");
    if sigma == 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = img.dims();
    let src = img.data();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let out = &mut tmp[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let sx = (x as isize + j as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * row[sx];
            }
            *o = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for (j, kv) in k.iter().enumerate() {
        for y in 0..h {
            let sy = (y as isize + j as isize - r).clamp(0, h as isize - 1) as usize;
            let src_row = &tmp[sy * w..(sy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += kv * s;
            }
        }
    }
    GrayImage::from_vec(w, h, out).expect("same dims")
}

/// Adds zero-mean Gaussian noise whose variance is the mean-removed image
/// power divided by `10^(snr_db / 10)`, then clamps to `[0, 1]`.
pub fn add_noise_snr(img: &GrayImage, snr_db: f64, seed: u64) -> GrayImage {
    assert!(!snr_db.is_nan(), "snr must not be NaN");
    let mean = img.mean();
    let n = img.data().len().max(1) as f64;
    let power = img.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let var = power / 10f64.powf(snr_db / 10.0);
    // Constant images only carry rounding residue in `power`.
    if !(var > 0.0) || power < 1e-24 {
        return img.clone();
    }
    let sd = var.sqrt();
    let mut g = BoxMuller::new(sim_rng(seed, "raster.noise", 0));
    let (w, h) = img.dims();
    let data = img
        .data()
        .iter()
        .map(|&v| (v + sd * g.next()).clamp(0.0, 1.0))
        .collect();
    GrayImage::from_vec(w, h, data).expect("same dims")
}

/// Standard luminance quantization table (ITU T.81 Annex K, table K.1).
const LUMA_Q: [u32; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Quantization table for a quality factor, libjpeg scaling with a floor of 1.
pub(crate) fn quant_table(quality: u32) -> [f64; 64] {
    let q = quality.clamp(1, 100);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut t = [0.0; 64];
    for (o, &base) in t.iter_mut().zip(LUMA_Q.iter()) {
        *o = ((base * scale + 50) / 100).clamp(1, 255) as f64;
    }
    t
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut c = [[0.0; 8]; 8];
    for (u, row) in c.iter_mut().enumerate() {
        let alpha = if u == 0 {
            (1.0f64 / 8.0).sqrt()
        } else {
            (2.0f64 / 8.0).sqrt()
        };
        for (x, v) in row.iter_mut().enumerate() {
            *v = alpha * (((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI) / 16.0).cos();
        }
    }
    c
}

/// Simulated JPEG: orthonormal 8×8 DCT-II on the 0–255 scale, quantize with
/// the scaled luminance table, dequantize, inverse DCT, clamp. Partial edge
/// blocks are edge-replicated.
pub fn blockdct_artifacts(img: &GrayImage, quality: u32) -> GrayImage {
    assert!((1..=100).contains(&quality), "quality must be in 1..=100");
    let table = quant_table(quality);
    let basis = dct_basis();
    let (w, h) = img.dims();
    let mut out = img.clone();
    let mut block = [[0.0f64; 8]; 8];
    let mut tmp = [[0.0f64; 8]; 8];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for (y, row) in block.iter_mut().enumerate() {
                let sy = (by + y).min(h - 1);
                for (x, v) in row.iter_mut().enumerate() {
                    let sx = (bx + x).min(w - 1);
                    *v = img.get(sx, sy) * 255.0 - 128.0;
                }
            }
            // forward: coef = C * B * C^T
            for u in 0..8 {
                for x in 0..8 {
                    let mut acc = 0.0;
                    for y in 0..8 {
                        acc += basis[u][y] * block[y][x];
                    }
                    tmp[u][x] = acc;
                }
            }
            for u in 0..8 {
                for v in 0..8 {
                    let mut acc = 0.0;
                    for x in 0..8 {
                        acc += tmp[u][x] * basis[v][x];
                    }
                    let q = table[u * 8 + v];
                    block[u][v] = (acc / q).round() * q;
                }
            }
            // inverse: B = C^T * coef * C
            for y in 0..8 {
                for v in 0..8 {
                    let mut acc = 0.0;
                    for u in 0..8 {
                        acc += basis[u][y] * block[u][v];
                    }
                    tmp[y][v] = acc;
                }
            }
            for y in 0..8 {
                if by + y >= h {
                    break;
                }
                for x in 0..8 {
                    if bx + x >= w {
                        break;
                    }
                    let mut acc = 0.0;
                    for v in 0..8 {
                        acc += tmp[y][v] * basis[v][x];
                    }
                    out.set(bx + x, by + y, ((acc + 128.0) / 255.0).clamp(0.0, 1.0));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> GrayImage {
        GrayImage::from_fn(n, 1, |x, _| x as f64 / (n - 1) as f64)
    }

    #[test]
    fn normalize_identity_on_full_range() {
        let img = GrayImage::from_vec(3, 1, vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(robust_normalize(&img, 0.0, 1.0), img);
    }

    #[test]
    fn normalize_constant_is_half() {
        let img = GrayImage::new(5, 4, 0.7);
        assert!(robust_normalize(&img, 0.01, 0.99).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn normalize_ramp_clips_tails() {
        let img = ramp(100);
        let out = robust_normalize(&img, 0.1, 0.9);
        // quantiles of i/99 at p*99 land exactly on 0.1 and 0.9
        for (i, &v) in out.data().iter().enumerate() {
            let x = i as f64 / 99.0;
            let expect = ((x - 0.1) / 0.8).clamp(0.0, 1.0);
            assert!((v - expect).abs() < 1e-12, "i={i} v={v} expect={expect}");
            if x <= 0.1 {
                assert_eq!(v, 0.0);
            }
            if x >= 0.9 {
                assert_eq!(v, 1.0);
            }
        }
    }

    #[test]
    fn blur_identities() {
        let img = GrayImage::from_fn(9, 7, |x, y| ((x * 7 + y * 3) % 5) as f64 / 4.0);
        assert_eq!(gaussian_blur(&img, 0.0), img);
        let c = GrayImage::new(12, 9, 0.37);
        for v in gaussian_blur(&c, 1.3).data() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_impulse_center_weight() {
        let mut img = GrayImage::new(15, 15, 0.0);
        img.set(7, 7, 1.0);
        let out = gaussian_blur(&img, 1.0);
        // oracle: product of renormalized radius-3 kernels evaluated directly
        let s: f64 = (-3i32..=3).map(|i| (-(i * i) as f64 / 2.0).exp()).sum();
        let expect = 1.0 / (s * s);
        assert!((out.get(7, 7) - expect).abs() < 1e-12);
        assert!((expect - 0.1592).abs() < 1e-4);
        assert!((out.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noise_vanishes_at_huge_snr_and_is_seeded() {
        let img = ramp(64);
        let quiet = add_noise_snr(&img, 300.0, 1);
        let max = img
            .data()
            .iter()
            .zip(quiet.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max < 1e-6);
        assert_eq!(add_noise_snr(&img, 20.0, 9), add_noise_snr(&img, 20.0, 9));
        assert_ne!(add_noise_snr(&img, 20.0, 9), add_noise_snr(&img, 20.0, 10));
    }

    #[test]
    fn noise_on_zero_power_image_is_noop() {
        let img = GrayImage::new(8, 8, 0.4);
        assert_eq!(add_noise_snr(&img, 10.0, 2), img);
    }

    #[test]
    fn quant_table_scaling() {
        assert!(quant_table(100).iter().all(|&q| q == 1.0));
        assert_eq!(quant_table(50)[0], 16.0);
        assert_eq!(quant_table(90)[0], 3.0);
    }

    #[test]
    fn constant_block_survives_quantization() {
        let img = GrayImage::new(16, 16, 0.61);
        for q in [60, 75, 90, 95, 100] {
            let out = blockdct_artifacts(&img, q);
            for v in out.data() {
                assert!((v - 0.61).abs() < 1.0 / 255.0, "q={q} v={v}");
            }
        }
    }
}
