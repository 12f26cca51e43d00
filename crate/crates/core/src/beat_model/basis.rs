//! Basis functions of the beat model: Hermite functions, sigmoids and B-splines.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::FitError;

/// Evaluates the Hermite functions `h_0..h_{n_max-1}` at `x`, writing into `out`.
///
/// Uses the three-term recurrence, stable for large `|x|`.
pub fn hermite_functions_at(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = PI.powf(-0.25) * (-0.5 * x * x).exp();
    if out.len() > 1 {
        out[1] = std::f64::consts::SQRT_2 * x * out[0];
    }
    for n in 2..out.len() {
        let nf = n as f64;
        out[n] = x * (2.0 / nf).sqrt() * out[n - 1] - ((nf - 1.0) / nf).sqrt() * out[n - 2];
    }
}

/// Matrix whose column `n` holds `h_n((t - tau) / lambda)` over `time_grid`.
pub fn hermite_basis(
    n_max: usize,
    time_grid: &[f64],
    tau: f64,
    lambda: f64,
) -> Result<DMatrix<f64>, FitError> {
    if n_max == 0 {
        return Err(FitError::InvalidConfig("hermite basis needs n_max >= 1".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(FitError::NonPositiveDilation(lambda));
    }
    let mut m = DMatrix::zeros(time_grid.len(), n_max);
    fill_hermite(&mut m, 0, n_max, time_grid, tau, lambda);
    Ok(m)
}

pub(crate) fn fill_hermite(
    m: &mut DMatrix<f64>,
    col0: usize,
    n: usize,
    time_grid: &[f64],
    tau: f64,
    lambda: f64,
) {
    let mut row = vec![0.0; n];
    for (i, &t) in time_grid.iter().enumerate() {
        hermite_functions_at((t - tau) / lambda, &mut row);
        for (k, v) in row.iter().enumerate() {
            m[(i, col0 + k)] = *v;
        }
    }
}

/// Logistic step `1 / (1 + exp(-(t - tau) / lambda))`.
pub fn sigmoid_at(t: f64, tau: f64, lambda: f64) -> f64 {
    let z = (t - tau) / lambda;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_basis(time_grid: &[f64], tau: f64, lambda: f64) -> Result<Vec<f64>, FitError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(FitError::NonPositiveDilation(lambda));
    }
    Ok(time_grid.iter().map(|&t| sigmoid_at(t, tau, lambda)).collect())
}

/// Clamped B-spline basis over strictly increasing breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    degree: usize,
    breakpoints: Vec<f64>,
    knots: Vec<f64>,
}

impl BSplineBasis {
    pub fn new(breakpoints: &[f64], degree: usize) -> Result<Self, FitError> {
        if breakpoints.len() < 2 {
            return Err(FitError::InvalidConfig(
                "spline needs at least two breakpoints".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(FitError::InvalidConfig(
                "spline knots must be strictly increasing".into(),
            ));
        }
        let first = breakpoints[0];
        let last = *breakpoints.last().unwrap();
        let mut knots = vec![first; degree + 1];
        knots.extend_from_slice(&breakpoints[1..breakpoints.len() - 1]);
        knots.extend(std::iter::repeat_n(last, degree + 1));
        Ok(BSplineBasis {
            degree,
            breakpoints: breakpoints.to_vec(),
            knots,
        })
    }

    pub fn len(&self) -> usize {
        self.breakpoints.len() + self.degree - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// All basis values at `t`. Outside the breakpoint span the basis is evaluated at
    /// the nearest end.
    pub fn eval(&self, t: f64, out: &mut [f64]) {
        let p = self.degree;
        let first = self.breakpoints[0];
        let last = *self.breakpoints.last().unwrap();
        let t = t.clamp(first, last);
        out.iter_mut().for_each(|v| *v = 0.0);
        // knot span index with knots[span] <= t < knots[span + 1]
        let n = self.len();
        let span = if t >= last {
            n - 1
        } else {
            let mut s = p;
            while s + 1 < self.knots.len() && self.knots[s + 1] <= t {
                s += 1;
            }
            s
        };
        // de Boor / Piegl-Tiller basis function evaluation
        let mut values = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        values[0] = 1.0;
        for j in 1..=p {
            left[j] = t - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { values[r] / denom };
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        for (k, v) in values.into_iter().enumerate() {
            out[span - p + k] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_values_at_origin() {
        let mut h = [0.0; 4];
        hermite_functions_at(0.0, &mut h);
        assert!((h[0] - 0.751_125_544_464_942_5).abs() < 1e-12);
        assert_eq!(h[1], 0.0);
        assert_eq!(h[3], 0.0);
    }

    #[test]
    fn hermite_parity() {
        let mut a = [0.0; 8];
        let mut b = [0.0; 8];
        hermite_functions_at(1.3, &mut a);
        hermite_functions_at(-1.3, &mut b);
        for n in 0..8 {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            assert!((a[n] - sign * b[n]).abs() < 1e-14);
        }
    }

    /// Oracle: `h_n` from the explicit physicists' Hermite polynomial.
    #[test]
    fn hermite_matches_closed_form() {
        fn phys_hermite(n: usize, x: f64) -> f64 {
            let (mut a, mut b) = (1.0, 2.0 * x);
            if n == 0 {
                return a;
            }
            for k in 1..n {
                let c = 2.0 * x * b - 2.0 * k as f64 * a;
                a = b;
                b = c;
            }
            b
        }
        let mut h = [0.0; 7];
        for &x in &[-2.5, -0.3, 0.7, 3.1] {
            hermite_functions_at(x, &mut h);
            let mut fact = 1.0;
            for (n, &got) in h.iter().enumerate() {
                if n > 0 {
                    fact *= n as f64;
                }
                let norm = (2f64.powi(n as i32) * fact * PI.sqrt()).sqrt();
                let expect = phys_hermite(n, x) * (-x * x / 2.0).exp() / norm;
                assert!((got - expect).abs() < 1e-12, "n={n} x={x}");
            }
        }
    }

    #[test]
    fn dilation_must_be_positive() {
        assert!(matches!(
            hermite_basis(3, &[0.0, 1.0], 0.0, 0.0),
            Err(FitError::NonPositiveDilation(_))
        ));
        assert!(sigmoid_basis(&[0.0], 0.0, -1.0).is_err());
    }

    #[test]
    fn sigmoid_shape() {
        assert_eq!(sigmoid_at(0.3, 0.3, 0.01), 0.5);
        assert!(sigmoid_at(0.3 + 5.0 * 0.01, 0.3, 0.01) > 0.993);
        assert!(sigmoid_at(1e6, 0.0, 1.0) == 1.0);
        assert!(sigmoid_at(-1e6, 0.0, 1.0) == 0.0);
        let s = sigmoid_basis(&(0..100).map(|i| i as f64 * 0.01).collect::<Vec<_>>(), 0.5, 0.05)
            .unwrap();
        assert!(s.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn bspline_partition_of_unity() {
        let basis = BSplineBasis::new(&[0.0, 0.4, 0.8], 3).unwrap();
        assert_eq!(basis.len(), 5);
        let mut out = vec![0.0; 5];
        for i in 0..=80 {
            let t = i as f64 * 0.01;
            basis.eval(t, &mut out);
            let sum: f64 = out.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "t={t} sum={sum}");
            assert!(out.iter().all(|v| *v >= -1e-15));
        }
        basis.eval(0.0, &mut out);
        assert_eq!(out[0], 1.0);
        basis.eval(0.8, &mut out);
        assert_eq!(out[4], 1.0);
    }

    #[test]
    fn bspline_reproduces_cubics() {
        // a cubic spline space contains every cubic polynomial
        let basis = BSplineBasis::new(&[0.0, 0.25, 0.5, 1.0], 3).unwrap();
        let grid: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let mut m = DMatrix::zeros(grid.len(), basis.len());
        let mut row = vec![0.0; basis.len()];
        for (i, &t) in grid.iter().enumerate() {
            basis.eval(t, &mut row);
            for (k, v) in row.iter().enumerate() {
                m[(i, k)] = *v;
            }
        }
        let y = nalgebra::DVector::from_iterator(
            grid.len(),
            grid.iter().map(|t| 1.0 - 2.0 * t + 3.0 * t * t - 0.5 * t * t * t),
        );
        let c = m.clone().svd(true, true).solve(&y, 1e-14).unwrap();
        let r = (&m * c - &y).amax();
        assert!(r < 1e-12, "{r}");
    }

    #[test]
    fn bspline_rejects_unsorted_knots() {
        assert!(BSplineBasis::new(&[0.0, 0.5, 0.5], 3).is_err());
        assert!(BSplineBasis::new(&[0.0], 3).is_err());
    }
}
