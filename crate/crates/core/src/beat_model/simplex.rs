//! Derivative-free Nelder-Mead minimisation with dimension-adaptive coefficients.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub max_iterations: usize,
    /// Stop when `f_worst - f_best <= rel_tol * |f_best| + abs_tol`.
    pub rel_tol: f64,
    pub abs_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimises `f` from `x0`, using `steps[i]` as the initial edge along axis `i`.
///
/// Non-finite objective values are treated as `+inf`, which turns them into a
/// feasibility barrier. The returned value never exceeds `f(x0)`.
pub fn minimize<F>(f: F, x0: &[f64], steps: &[f64], opts: SimplexOptions) -> SimplexResult
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    if n == 0 {
        return SimplexResult {
            x: Vec::new(),
            value: eval(x0),
            iterations: 0,
            converged: true,
        };
    }
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = if n > 2 {
        (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let v = eval(&x);
        simplex.push((x, v));
    }

    let mut iterations = 0;
    let mut converged = false;
    let sort = |s: &mut Vec<(Vec<f64>, f64)>| {
        // stable: ties keep the earlier vertex (x0 first) at the front
        s.sort_by(|a, b| a.1.total_cmp(&b.1));
    };
    sort(&mut simplex);

    while iterations < opts.max_iterations {
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if worst.is_finite() && worst - best <= opts.rel_tol * best.abs() + opts.abs_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(alpha);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(alpha * gamma);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(alpha * rho);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-rho);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for (x, v) in simplex.iter_mut().skip(1) {
                    for (xi, bi) in x.iter_mut().zip(&best) {
                        *xi = bi + sigma * (*xi - bi);
                    }
                    *v = eval(x);
                }
            }
        }
        sort(&mut simplex);
    }

    let (x, value) = simplex.swap_remove(0);
    SimplexResult {
        x,
        value,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(max_iterations: usize) -> SimplexOptions {
        SimplexOptions {
            max_iterations,
            rel_tol: 1e-12,
            abs_tol: 1e-20,
        }
    }

    #[test]
    fn quadratic_bowl() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2) + (x[2] - 0.5).powi(2);
        let r = minimize(f, &[0.0, 0.0, 0.0], &[0.5, 0.5, 0.5], opts(2000));
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4);
        assert!((r.x[1] + 2.0).abs() < 1e-4);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let r = minimize(f, &[-1.2, 1.0], &[0.1, 0.1], opts(5000));
        assert!((r.x[0] - 1.0).abs() < 1e-3, "{:?}", r);
    }

    #[test]
    fn never_worse_than_start_and_respects_barrier() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::INFINITY } else { (x[0] - 3.0).powi(2) };
        let r = minimize(f, &[0.0], &[-1.0], opts(200));
        assert!(r.value <= 9.0);
        assert!(r.x[0] >= 0.0);
        let stuck = minimize(|_| 1.0, &[0.0, 0.0], &[1.0, 1.0], opts(10));
        assert!(stuck.converged);
        assert_eq!(stuck.x, vec![0.0, 0.0]);
    }

    #[test]
    fn iteration_cap_reports_not_converged() {
        let f = |x: &[f64]| x.iter().map(|v| (v - 10.0).powi(2)).sum::<f64>();
        let r = minimize(f, &[0.0; 4], &[0.01; 4], opts(3));
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
    }
}
