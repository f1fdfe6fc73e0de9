//! Natural cubic splines and Savitzky–Golay smoothing weights.

use crate::error::{Error, Result};

/// Natural cubic spline through strictly increasing knots.
#[derive(Clone, Debug)]
pub struct NaturalSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// second derivatives at the knots
    m: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n != y.len() || n == 0 {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", x.len()),
                actual: format!("{} values", y.len()),
            });
        }
        if let Some(i) = x.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::NonMonotoneTime { row: i + 1 });
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior equations.
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            let mut upper = vec![0.0; k];
            for i in 0..k {
                let (h0, h1) = (x[i + 1] - x[i], x[i + 2] - x[i + 1]);
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
            }
            for i in 1..k {
                let lower = x[i + 1] - x[i];
                let f = lower / diag[i - 1];
                diag[i] -= f * upper[i - 1];
                rhs[i] -= f * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(Self {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        })
    }

    /// Value at `t`; outside the knot range the end values are held.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if n == 1 || t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let i = self.x.partition_point(|&v| v <= t) - 1;
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Least-squares polynomial smoothing weights for a centred window.
pub fn savgol_coeffs(window: usize, order: usize) -> Result<Vec<f64>> {
    if window % 2 == 0 || order >= window {
        return Err(Error::invalid(
            "savgol",
            format!("window {window} must be odd and exceed order {order}"),
        ));
    }
    let half = (window / 2) as i64;
    let p = order + 1;
    // normal matrix G = AᵀA with A[j][k] = j^k
    let mut g = vec![vec![0.0; p]; p];
    for j in -half..=half {
        for r in 0..p {
            for c in 0..p {
                g[r][c] += (j as f64).powi((r + c) as i32);
            }
        }
    }
    // first row of G⁻¹ via solving G z = e0
    let mut e0 = vec![0.0; p];
    e0[0] = 1.0;
    let z = solve(g, e0);
    Ok((-half..=half)
        .map(|j| (0..p).map(|k| z[k] * (j as f64).powi(k as i32)).sum())
        .collect())
}

/// Gaussian elimination with partial pivoting for small dense systems.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Convolves with Savitzky–Golay weights, mirroring at the ends.
pub fn savgol_smooth(x: &[f64], window: usize, order: usize) -> Result<Vec<f64>> {
    let w = savgol_coeffs(window, order)?;
    let n = x.len() as i64;
    if n == 0 {
        return Ok(Vec::new());
    }
    let half = (window / 2) as i64;
    let at = |i: i64| -> f64 {
        let mut j = i;
        if n == 1 {
            return x[0];
        }
        while j < 0 || j >= n {
            j = if j < 0 { -j } else { 2 * (n - 1) - j };
        }
        x[j as usize]
    };
    Ok((0..n)
        .map(|i| w.iter().enumerate().map(|(k, c)| c * at(i + k as i64 - half)).sum())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn savgol_five_two() {
        let c = savgol_coeffs(5, 2).unwrap();
        let want = [-3.0, 12.0, 17.0, 12.0, -3.0].map(|v| v / 35.0);
        for (a, b) in c.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn savgol_passes_low_order_polynomials() {
        for (window, order) in [(5, 2), (7, 3), (9, 3), (11, 4), (9, 0)] {
            let c = savgol_coeffs(window, order).unwrap();
            assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for k in 0..c.len() {
                assert!((c[k] - c[c.len() - 1 - k]).abs() < 1e-12);
            }
            let half = (window / 2) as f64;
            for deg in 0..=order {
                let y: f64 = (0..window)
                    .map(|j| c[j] * (j as f64 - half + 3.0).powi(deg as i32))
                    .sum();
                assert!((y - 3f64.powi(deg as i32)).abs() < 1e-8, "{window},{order},{deg}");
            }
        }
        assert!(savgol_coeffs(4, 2).is_err());
        assert!(savgol_coeffs(5, 5).is_err());
    }

    #[test]
    fn spline_reproduces_lines_and_knots() {
        let x: Vec<f64> = (0..20)
            .map(|i| i as f64 * 0.01 + if i % 3 == 0 { 0.002 } else { 0.0 })
            .collect();
        let y: Vec<f64> = x.iter().map(|t| 2.0 - 3.0 * t).collect();
        let s = NaturalSpline::new(&x, &y).unwrap();
        for i in 2..190 {
            let t = i as f64 * 0.001;
            assert!((s.eval(t) - (2.0 - 3.0 * t)).abs() < 1e-12);
        }
        let yq: Vec<f64> = x.iter().map(|t| (10.0 * t).sin()).collect();
        let s = NaturalSpline::new(&x, &yq).unwrap();
        for (t, v) in x.iter().zip(&yq) {
            assert!((s.eval(*t) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn spline_rejects_unsorted_knots() {
        assert!(NaturalSpline::new(&[0.0, 1.0, 1.0], &[0.0; 3]).is_err());
    }
}
