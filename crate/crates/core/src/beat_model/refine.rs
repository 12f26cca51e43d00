//! Levenberg-Marquardt polishing of a nonlinear least-squares problem given only
//! its residual vector. The Jacobian is taken by central differences.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub(crate) struct RefineOptions {
    pub max_iterations: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct RefineResult {
    pub x: Vec<f64>,
    pub ssr: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn jacobian<F>(residual: &F, x: &[f64], r0: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Option<DVector<f64>>,
{
    let mut j = DMatrix::zeros(r0.len(), x.len());
    let mut probe = x.to_vec();
    for k in 0..x.len() {
        let h = 1e-6 * x[k].abs().max(1.0);
        probe[k] = x[k] + h;
        let plus = residual(&probe);
        probe[k] = x[k] - h;
        let minus = residual(&probe);
        probe[k] = x[k];
        let column = match (plus, minus) {
            (Some(p), Some(m)) => (p - m) / (2.0 * h),
            (Some(p), None) => (p - r0) / h,
            (None, Some(m)) => (r0 - m) / h,
            (None, None) => continue,
        };
        j.set_column(k, &column);
    }
    j
}

/// Minimises `‖residual(x)‖²` from `x0`. `residual` returns `None` outside the
/// feasible region; such trial points are rejected like any uphill step, so the
/// result is never worse than `x0`.
pub(crate) fn levenberg_marquardt<F>(residual: F, x0: &[f64], opts: RefineOptions) -> Option<RefineResult>
where
    F: Fn(&[f64]) -> Option<DVector<f64>>,
{
    let mut x = x0.to_vec();
    let mut r = residual(&x)?;
    let mut ssr = r.norm_squared();
    let mut mu = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        iterations += 1;
        let j = jacobian(&residual, &x, &r);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let floor = jtj.diagonal().max() * 1e-12;
        let mut improved = None;
        while mu < 1e12 {
            let mut damped = jtj.clone();
            for i in 0..x.len() {
                damped[(i, i)] += mu * jtj[(i, i)].max(floor);
            }
            let step = damped.cholesky().map(|c| c.solve(&(-&g)));
            if let Some(step) = step {
                let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                if let Some(rt) = residual(&trial) {
                    let st = rt.norm_squared();
                    if st < ssr {
                        improved = Some((trial, rt, st));
                        mu = (mu / 3.0).max(1e-12);
                        break;
                    }
                }
            }
            mu *= 4.0;
        }
        let Some((trial, rt, st)) = improved else {
            converged = true;
            break;
        };
        let gain = ssr - st;
        x = trial;
        r = rt;
        ssr = st;
        if gain <= opts.rel_tol * ssr + opts.abs_tol {
            converged = true;
            break;
        }
    }
    Some(RefineResult {
        x,
        ssr,
        iterations,
        converged,
    })
}
