use super::{BinMask, GrayImage};

/// Bilinear sample at continuous pixel-center coordinates, or `None` when
/// the point falls outside the pixel-center hull.
#[inline]
fn bilinear(img: &GrayImage, sx: f64, sy: f64) -> Option<f64> {
    let (w, h) = img.dims();
    if !(sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f64 && sy <= (h - 1) as f64) {
        return None;
    }
    let x0 = (sx.floor() as usize).min(w.saturating_sub(2));
    let y0 = (sy.floor() as usize).min(h.saturating_sub(2));
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
    let bot = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
    Some(top * (1.0 - fy) + bot * fy)
}

/// Rotates by `angle_deg` about the image center with bilinear resampling.
/// Positive angles turn content counterclockwise as displayed (y down).
/// Samples that fall outside the source take `fill`.
pub fn rotate(img: &GrayImage, angle_deg: f64, fill: f64) -> GrayImage {
    if angle_deg == 0.0 {
        return img.clone();
    }
    let (w, h) = img.dims();
    let (s, c) = angle_deg.to_radians().sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    GrayImage::from_fn(w, h, |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let sx = cx + dx * c - dy * s;
        let sy = cy + dx * s + dy * c;
        bilinear(img, sx, sy).unwrap_or(fill)
    })
}

/// Rotates a mask by resampling its indicator and thresholding at 0.5.
pub fn rotate_mask(mask: &BinMask, angle_deg: f64) -> BinMask {
    if angle_deg == 0.0 {
        return mask.clone();
    }
    rotate(&mask.to_image(), angle_deg, 0.0).threshold_at_least(0.5)
}

/// Integer shift: output pixel `(x, y)` takes source `(x - dx, y - dy)`.
pub fn translate(img: &GrayImage, dx: isize, dy: isize, fill: f64) -> GrayImage {
    let (w, h) = img.dims();
    img.crop(-dx, -dy, w, h, fill)
}

pub fn translate_mask(mask: &BinMask, dx: isize, dy: isize) -> BinMask {
    let (w, h) = mask.dims();
    mask.crop(-dx, -dy, w, h)
}

/// Variance of the column-mean profile of `img` rotated by `angle_deg`,
/// using only in-bounds samples.
fn column_profile_variance(img: &GrayImage, angle_deg: f64) -> f64 {
    let (w, h) = img.dims();
    let (s, c) = angle_deg.to_radians().sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut means = Vec::with_capacity(w);
    for x in 0..w {
        let dx = x as f64 - cx;
        let mut acc = 0.0;
        let mut n = 0usize;
        for y in 0..h {
            let dy = y as f64 - cy;
            if let Some(v) = bilinear(img, cx + dx * c - dy * s, cy + dx * s + dy * c) {
                acc += v;
                n += 1;
            }
        }
        if n * 2 >= h {
            means.push(acc / n as f64);
        }
    }
    if means.len() < 2 {
        return 0.0;
    }
    let m = means.iter().sum::<f64>() / means.len() as f64;
    means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / means.len() as f64
}

/// Grid-search skew estimate: the angle in `[-range, range]` (multiples of
/// `step`) that, applied with [`rotate`], best aligns vertical grid lines.
/// Ties go to the candidate nearest zero.
pub fn estimate_skew(img: &GrayImage, range_deg: f64, step_deg: f64) -> f64 {
    assert!(step_deg > 0.0, "step must be positive");
    assert!(range_deg <= 5.0 + 1e-12, "range must be at most 5 degrees");
    let n = (range_deg / step_deg + 1e-9).floor() as i64;
    // zero first, then outward, so strict improvement implements the tie rule
    let mut order = vec![0i64];
    for k in 1..=n {
        order.push(k);
        order.push(-k);
    }
    let mut best_angle = 0.0;
    let mut best = column_profile_variance(img, 0.0);
    for &k in &order[1..] {
        let a = k as f64 * step_deg;
        let v = column_profile_variance(img, a);
        if v > best * (1.0 + 1e-12) + 1e-300 {
            best = v;
            best_angle = a;
        }
    }
    best_angle
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_angle_is_identity() {
        let img = GrayImage::from_fn(11, 9, |x, y| ((x * 13 + y * 7) % 10) as f64 / 9.0);
        assert_eq!(rotate(&img, 0.0, 1.0), img);
    }

    #[test]
    fn center_pixel_is_fixed() {
        let mut img = GrayImage::new(21, 21, 0.0);
        img.set(10, 10, 1.0);
        for a in [-7.0, -2.5, 1.0, 3.3, 10.0] {
            let out = rotate(&img, a, 0.0);
            let (mut bx, mut by, mut bv) = (0, 0, -1.0);
            for y in 0..21 {
                for x in 0..21 {
                    if out.get(x, y) > bv {
                        bv = out.get(x, y);
                        bx = x;
                        by = y;
                    }
                }
            }
            assert_eq!((bx, by), (10, 10), "angle {a}");
            assert_eq!(out.get(10, 10), 1.0);
        }
    }

    #[test]
    fn positive_angle_turns_counterclockwise() {
        // a point right of center should move up
        let mut img = GrayImage::new(41, 41, 0.0);
        img.set(35, 20, 1.0);
        let out = rotate(&img, 10.0, 0.0);
        let mut best = (0, 0);
        let mut bv = 0.0;
        for y in 0..41 {
            for x in 0..41 {
                if out.get(x, y) > bv {
                    bv = out.get(x, y);
                    best = (x, y);
                }
            }
        }
        assert!(best.1 < 20, "moved to {best:?}");
    }

    #[test]
    fn translate_moves_content() {
        let mut img = GrayImage::new(5, 5, 0.0);
        img.set(1, 1, 1.0);
        let t = translate(&img, 2, 1, 0.5);
        assert_eq!(t.get(3, 2), 1.0);
        assert_eq!(t.get(0, 0), 0.5);
    }

    #[test]
    fn blank_page_skew_is_zero() {
        let img = GrayImage::new(60, 40, 1.0);
        assert_eq!(estimate_skew(&img, 2.0, 0.25), 0.0);
    }
}
