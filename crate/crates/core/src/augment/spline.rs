use crate::{Error, Result};

/// Natural cubic spline through `(u[j], v[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    /// Second derivatives at the knots; zero at both ends.
    curvature: Vec<f64>,
}

impl CubicSpline {
    pub fn natural(knots: &[f64], values: &[f64]) -> Result<Self> {
        let n = knots.len();
        if n < 2 || values.len() != n {
            return Err(Error::BadKnots(format!(
                "need at least 2 knots with matching values, got {n} knots and {} values",
                values.len()
            )));
        }
        if knots.iter().chain(values).any(|x| !x.is_finite()) {
            return Err(Error::BadKnots("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::BadKnots("knot positions must be strictly increasing".into()));
        }
        let mut curvature = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior unknowns M_1..M_{n-2}.
            let m = n - 2;
            let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
            let mut diag = vec![0.0; m];
            let mut upper = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            for k in 0..m {
                let i = k + 1;
                diag[k] = 2.0 * (h[i - 1] + h[i]);
                upper[k] = h[i];
                rhs[k] = 6.0
                    * ((values[i + 1] - values[i]) / h[i] - (values[i] - values[i - 1]) / h[i - 1]);
            }
            for k in 1..m {
                let lower = h[k];
                let w = lower / diag[k - 1];
                diag[k] -= w * upper[k - 1];
                rhs[k] -= w * rhs[k - 1];
            }
            curvature[m] = rhs[m - 1] / diag[m - 1];
            for k in (0..m - 1).rev() {
                curvature[k + 1] = (rhs[k] - upper[k] * curvature[k + 2]) / diag[k];
            }
        }
        Ok(Self { knots: knots.to_vec(), values: values.to_vec(), curvature })
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.knots.len();
        self.knots.partition_point(|&k| k <= t).saturating_sub(1).min(n - 2)
    }

    /// Evaluates the spline. Outside the knot range the end cubics extrapolate.
    pub fn eval(&self, t: f64) -> f64 {
        if let Ok(j) = self.knots.binary_search_by(|k| k.total_cmp(&t)) {
            return self.values[j];
        }
        let i = self.segment(t);
        let h = self.knots[i + 1] - self.knots[i];
        let b = (t - self.knots[i]) / h;
        let a = 1.0 - b;
        self.values[i]
            + b * (self.values[i + 1] - self.values[i])
            + h * h / 6.0
                * ((a * a * a - a) * self.curvature[i] + (b * b * b - b) * self.curvature[i + 1])
    }

    /// Second derivative, linear between knots.
    pub fn second_derivative(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.knots[i + 1] - self.knots[i];
        let b = (t - self.knots[i]) / h;
        (1.0 - b) * self.curvature[i] + b * self.curvature[i + 1]
    }
}

/// Evaluates the natural cubic spline through `(u, v)` on a grid.
pub fn cubic_spline_curve(u: &[f64], v: &[f64], t_grid: &[f64]) -> Result<Vec<f64>> {
    let spline = CubicSpline::natural(u, v)?;
    Ok(t_grid.iter().map(|&t| spline.eval(t)).collect())
}

/// `n` knot positions evenly spaced over `[0, len - 1]`.
pub fn even_knots(len: usize, n: usize) -> Vec<f64> {
    let span = len.saturating_sub(1).max(1) as f64;
    (0..n).map(|j| span * j as f64 / (n - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_knots_give_constant_curve() {
        let grid: Vec<f64> = (0..=30).map(|i| i as f64 * 0.1).collect();
        let c = cubic_spline_curve(&[0.0, 1.0, 2.0, 3.0], &[1.0; 4], &grid).unwrap();
        assert!(c.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn passes_through_knots() {
        let u = [0.0, 0.7, 2.0, 2.5, 4.0];
        let v = [0.3, -1.0, 2.2, 0.1, 5.0];
        let c = cubic_spline_curve(&u, &v, &u).unwrap();
        for (a, b) in c.iter().zip(&v) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn two_knots_is_a_line() {
        let s = CubicSpline::natural(&[1.0, 3.0], &[2.0, 6.0]).unwrap();
        for t in [1.0, 1.5, 2.0, 2.9] {
            assert!((s.eval(t) - (2.0 + 2.0 * (t - 1.0))).abs() < 1e-12);
        }
    }

    #[test]
    fn natural_ends_and_c2_interior() {
        let u = [0.0, 1.0, 2.5, 3.0, 5.0];
        let v = [1.0, 0.2, 1.7, 1.1, 0.4];
        let s = CubicSpline::natural(&u, &v).unwrap();
        assert_eq!(s.second_derivative(0.0), 0.0);
        assert!(s.second_derivative(5.0).abs() < 1e-12);
        // one-sided second differences on either side of each interior knot
        // converge to the same value
        for &k in &u[1..4] {
            let mut gaps = Vec::new();
            for h in [1e-2, 1e-3] {
                let left = (s.eval(k) - 2.0 * s.eval(k - h) + s.eval(k - 2.0 * h)) / (h * h);
                let right = (s.eval(k + 2.0 * h) - 2.0 * s.eval(k + h) + s.eval(k)) / (h * h);
                gaps.push((left - right).abs());
            }
            assert!(gaps[1] < gaps[0] * 0.2 + 1e-6, "{gaps:?}");
        }
    }

    #[test]
    fn bad_knots() {
        assert!(CubicSpline::natural(&[0.0], &[1.0]).is_err());
        assert!(CubicSpline::natural(&[0.0, 0.0], &[1.0, 2.0]).is_err());
        assert!(CubicSpline::natural(&[0.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn matches_dense_solve() {
        // dense Gaussian elimination of the same natural-spline system
        let u = [0.0, 0.5, 1.7, 2.0, 3.3, 4.0];
        let v = [0.0, 1.0, -0.5, 0.25, 2.0, 1.0];
        let n = u.len();
        let mut a = vec![vec![0.0; n + 1]; n];
        a[0][0] = 1.0;
        a[n - 1][n - 1] = 1.0;
        for i in 1..n - 1 {
            let (h0, h1) = (u[i] - u[i - 1], u[i + 1] - u[i]);
            a[i][i - 1] = h0;
            a[i][i] = 2.0 * (h0 + h1);
            a[i][i + 1] = h1;
            a[i][n] = 6.0 * ((v[i + 1] - v[i]) / h1 - (v[i] - v[i - 1]) / h0);
        }
        for col in 0..n {
            let p = a[col][col];
            for j in col..=n {
                a[col][j] /= p;
            }
            for r in 0..n {
                if r != col {
                    let f = a[r][col];
                    for j in col..=n {
                        a[r][j] -= f * a[col][j];
                    }
                }
            }
        }
        let s = CubicSpline::natural(&u, &v).unwrap();
        for i in 0..n {
            assert!((s.curvature[i] - a[i][n]).abs() < 1e-10);
        }
    }
}
