use super::GrayImage;

/// Profile axis for grid-period estimation. `X` measures the spacing of
/// vertical lines (period along x); `Y` that of horizontal lines.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Peak autocorrelation below this fraction of lag-0 means no usable grid.
pub const GRID_PEAK_THRESHOLD: f64 = 0.2;

fn mean_profile(img: &GrayImage, axis: Axis) -> Vec<f64> {
    let (w, h) = img.dims();
    match axis {
        Axis::X => {
            let mut p = vec![0.0; w];
            for y in 0..h {
                for (acc, v) in p.iter_mut().zip(img.row(y)) {
                    *acc += v;
                }
            }
            p.iter().map(|s| s / h as f64).collect()
        }
        Axis::Y => (0..h).map(|y| img.row(y).iter().sum::<f64>() / w as f64).collect(),
    }
}

/// Grid spacing in pixels along `axis`: the lag in `[min_p, max_p]`
/// maximizing the (biased) autocorrelation of the mean-removed intensity
/// profile, refined to sub-pixel by a parabola through the neighbouring lags.
/// Returns `None` when the peak is below [`GRID_PEAK_THRESHOLD`] of lag 0.
pub fn estimate_grid_period(img: &GrayImage, axis: Axis, min_p: usize, max_p: usize) -> Option<f64> {
    let mut p = mean_profile(img, axis);
    let n = p.len();
    assert!(
        min_p >= 2 && min_p < max_p && max_p < n / 4,
        "need 2 <= min_p < max_p < extent/4"
    );
    let m = p.iter().sum::<f64>() / n as f64;
    for v in &mut p {
        *v -= m;
    }
    let acf = |lag: usize| -> f64 { p[..n - lag].iter().zip(&p[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64 };
    let r0 = acf(0);
    if !(r0 > 0.0) {
        return None;
    }
    let mut best_lag = min_p;
    let mut best = f64::NEG_INFINITY;
    for lag in min_p..=max_p {
        let r = acf(lag);
        if r > best {
            best = r;
            best_lag = lag;
        }
    }
    if best < GRID_PEAK_THRESHOLD * r0 {
        return None;
    }
    let (rm, rp) = (acf(best_lag - 1), acf(best_lag + 1));
    let denom = rm - 2.0 * best + rp;
    let shift = if denom < 0.0 {
        (0.5 * (rm - rp) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Some(best_lag as f64 + shift)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vertical_lines(w: usize, h: usize, period: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, _| if x % period == 3 { 0.2 } else { 0.95 })
    }

    #[test]
    fn finds_synthetic_period() {
        let img = vertical_lines(200, 50, 10);
        let p = estimate_grid_period(&img, Axis::X, 5, 15).unwrap();
        assert_eq!(p.round(), 10.0);
        assert!((p - 10.0).abs() < 0.1);
    }

    #[test]
    fn white_page_has_no_grid() {
        let img = GrayImage::new(200, 100, 1.0);
        assert_eq!(estimate_grid_period(&img, Axis::X, 3, 20), None);
        assert_eq!(estimate_grid_period(&img, Axis::Y, 3, 20), None);
    }

    #[test]
    fn invariant_to_affine_intensity() {
        let img = GrayImage::from_fn(240, 120, |x, y| {
            let mut v: f64 = 0.9;
            if x % 7 == 0 {
                v -= 0.3;
            }
            if y % 9 == 0 {
                v -= 0.2;
            }
            v + 0.01 * (((x * 31 + y * 17) % 13) as f64 / 13.0)
        });
        let a = estimate_grid_period(&img, Axis::X, 3, 20).unwrap();
        let b = estimate_grid_period(&img, Axis::Y, 3, 20).unwrap();
        let scaled = GrayImage::from_fn(240, 120, |x, y| 0.1 + 0.5 * img.get(x, y));
        let a2 = estimate_grid_period(&scaled, Axis::X, 3, 20).unwrap();
        let b2 = estimate_grid_period(&scaled, Axis::Y, 3, 20).unwrap();
        assert!((a - a2).abs() < 1e-9 && (b - b2).abs() < 1e-9);
        assert_eq!(a.round(), 7.0);
        assert_eq!(b.round(), 9.0);
    }
}
