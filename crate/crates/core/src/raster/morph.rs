use super::BinMask;

/// Digital disc of diameter `2 * radius` centered on a pixel corner:
/// offsets `(dx, dy)` in `[1 - r, r]^2` with
/// `(dx - 0.5)^2 + (dy - 0.5)^2 <= r^2`. Radius 1 is the 2×2 block.
pub fn disc_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let r2 = (radius * radius) as f64;
    let mut out = Vec::new();
    for dy in (1 - r)..=r {
        for dx in (1 - r)..=r {
            let fx = dx as f64 - 0.5;
            let fy = dy as f64 - 0.5;
            if fx * fx + fy * fy <= r2 {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn erode(mask: &BinMask, se: &[(isize, isize)]) -> BinMask {
    let (w, h) = mask.dims();
    BinMask::from_fn(w, h, |x, y| {
        se.iter().all(|&(dx, dy)| {
            let sx = x as isize + dx;
            let sy = y as isize + dy;
            sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h && mask.get(sx as usize, sy as usize)
        })
    })
}

fn dilate(mask: &BinMask, se: &[(isize, isize)]) -> BinMask {
    let (w, h) = mask.dims();
    let mut out = BinMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            for &(dx, dy) in se {
                let tx = x as isize + dx;
                let ty = y as isize + dy;
                if tx >= 0 && ty >= 0 && (tx as usize) < w && (ty as usize) < h {
                    out.set(tx as usize, ty as usize, true);
                }
            }
        }
    }
    out
}

/// Morphological opening (erosion then dilation) with [`disc_offsets`].
/// Keeps exactly the union of disc placements that fit inside the mask.
pub fn morph_open(mask: &BinMask, radius: usize) -> BinMask {
    assert!(radius >= 1, "radius must be at least 1");
    let se = disc_offsets(radius);
    dilate(&erode(mask, &se), &se)
}

/// 8-connected component labels (0 = background, components numbered from 1
/// in raster order of their first pixel) and per-label areas (index 0 unused).
pub fn label_components(mask: &BinMask) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = mask.dims();
    let mut labels = vec![0u32; w * h];
    let mut areas = vec![0usize];
    let mut stack = Vec::new();
    for start in 0..w * h {
        if mask.data()[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = areas.len() as u32;
        let mut area = 0;
        labels[start] = label;
        stack.push(start);
        while let Some(p) = stack.pop() {
            area += 1;
            let (px, py) = ((p % w) as isize, (p / w) as isize);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let nx = px + dx;
                    let ny = py + dy;
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if mask.data()[q] != 0 && labels[q] == 0 {
                        labels[q] = label;
                        stack.push(q);
                    }
                }
            }
        }
        areas.push(area);
    }
    (labels, areas)
}

/// Clears 8-connected components whose area is below `min_area`.
pub fn remove_small_components(mask: &BinMask, min_area: usize) -> BinMask {
    let (labels, areas) = label_components(mask);
    let (w, h) = mask.dims();
    let data = labels
        .iter()
        .map(|&l| (l != 0 && areas[l as usize] >= min_area) as u8)
        .collect();
    BinMask::from_vec(w, h, data).expect("same dims")
}

/// Row-wise gap bridging along the time axis: a background run of at most
/// `max_gap` pixels between two foreground pixels of the same row is filled
/// when those pixels belong to different 8-connected components. Concavities
/// inside one stroke are left open; nothing changes along y.
pub fn geodesic_close_x(mask: &BinMask, max_gap: usize) -> BinMask {
    let (w, h) = mask.dims();
    let (labels, _) = label_components(mask);
    let mut out = mask.clone();
    for y in 0..h {
        let row = &labels[y * w..(y + 1) * w];
        let mut last_fg: Option<usize> = None;
        for x in 0..w {
            if row[x] == 0 {
                continue;
            }
            if let Some(prev) = last_fg {
                let gap = x - prev - 1;
                if gap > 0 && gap <= max_gap && row[prev] != row[x] {
                    for gx in prev + 1..x {
                        out.set(gx, y, true);
                    }
                }
            }
            last_fg = Some(x);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(n: usize, x0: usize, y0: usize, s: usize) -> BinMask {
        BinMask::from_fn(n, n, |x, y| x >= x0 && x < x0 + s && y >= y0 && y < y0 + s)
    }

    #[test]
    fn disc_shapes() {
        assert_eq!(disc_offsets(1).len(), 4);
        assert_eq!(disc_offsets(2).len(), 12);
    }

    #[test]
    fn opening_removes_specks_and_hairlines() {
        let mut m = BinMask::new(16, 16);
        m.set(8, 8, true);
        assert_eq!(morph_open(&m, 1).count_ones(), 0);
        let line = BinMask::from_fn(30, 10, |x, y| y == 4 && (3..27).contains(&x));
        assert_eq!(morph_open(&line, 1).count_ones(), 0);
    }

    #[test]
    fn opening_keeps_square() {
        let sq = square(30, 5, 5, 20);
        assert_eq!(morph_open(&sq, 1), sq);
    }

    #[test]
    fn opening_keeps_two_pixel_strokes() {
        let stroke = BinMask::from_fn(40, 12, |x, y| (y == 5 || y == 6) && (2..38).contains(&x));
        assert_eq!(morph_open(&stroke, 1), stroke);
    }

    #[test]
    fn closing_bridges_short_gaps_between_segments() {
        let m = BinMask::from_fn(30, 5, |x, y| y == 2 && ((2..10).contains(&x) || (13..20).contains(&x)));
        let c = geodesic_close_x(&m, 4);
        assert!((2..20).all(|x| c.get(x, 2)));
        let far = BinMask::from_fn(30, 5, |x, y| y == 2 && ((2..10).contains(&x) || (15..20).contains(&x)));
        assert_eq!(geodesic_close_x(&far, 4), far);
    }

    #[test]
    fn closing_ignores_vertical_gaps() {
        let m = BinMask::from_fn(10, 20, |x, y| x == 4 && ((0..5).contains(&y) || (11..20).contains(&y)));
        assert_eq!(geodesic_close_x(&m, 6), m);
    }

    #[test]
    fn small_components_removed() {
        let mut m = BinMask::new(10, 10);
        m.set(1, 1, true);
        m.set(2, 2, true);
        m.set(3, 2, true);
        assert_eq!(remove_small_components(&m, 4).count_ones(), 0);
        assert_eq!(remove_small_components(&m, 3), m);
    }
}
