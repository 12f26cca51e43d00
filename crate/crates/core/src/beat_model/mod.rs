//! Low-dimensional beat representation.
//!
//! A beat window of duration `T` is modelled as
//!
//! ```text
//! y(t) = Σ_w Σ_n c_{w,n} h_n((t - τ_w) / λ_w)      Hermite terms for w ∈ {P, QRS, T}
//!      + Σ_k d_k σ((t - τ_k) / λ_k)                sigmoid steps (ST shifts)
//!      + Σ_j b_j B_j(t)                            clamped B-spline baseline
//! ```
//!
//! The problem is separable: for fixed translations and dilations the amplitudes
//! `c`, `d` and `b` solve a linear least-squares problem, so the nonlinear search
//! only moves `(τ, λ)` pairs. The search is a Nelder-Mead descent over
//! `(τ / λ₀, ln λ)` from a caller supplied start, repeated from jittered starts,
//! and each descent is polished by Levenberg-Marquardt steps on the projected
//! residual. The simplex alone stalls on the flat valleys created by the
//! translation/coefficient trade-off inside each Hermite expansion.

mod basis;
mod refine;
mod simplex;

pub use basis::{
    hermite_basis, hermite_functions_at, sigmoid_at, sigmoid_basis, BSplineBasis,
};
pub use simplex::{minimize, SimplexOptions, SimplexResult};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Execution;
use refine::{levenberg_marquardt, RefineOptions};
use crate::signal_io::Strip;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("invalid basis configuration: {0}")]
    InvalidConfig(String),
    #[error("dilation must be positive, got {0}")]
    NonPositiveDilation(f64),
    #[error("initial translation {tau} s of {what} lies outside the window [0, {window}] s")]
    InitOutsideWindow {
        what: String,
        tau: f64,
        window: f64,
    },
    #[error("initial translations must be ordered P < QRS < T")]
    InitUnordered,
    #[error("{samples} samples cannot determine {terms} linear terms")]
    TooFewSamples { samples: usize, terms: usize },
    #[error("design matrix condition number {condition:.3e} exceeds {limit:.1e} for {config:?} at {params:?}")]
    IllConditioned {
        condition: f64,
        limit: f64,
        config: Box<BasisConfig>,
        params: Box<NonlinearParams>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wave {
    P,
    Qrs,
    T,
}

impl Wave {
    pub const ALL: [Wave; 3] = [Wave::P, Wave::Qrs, Wave::T];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HermiteOrders {
    pub p: usize,
    pub qrs: usize,
    pub t: usize,
}

impl HermiteOrders {
    pub fn get(&self, wave: Wave) -> usize {
        match wave {
            Wave::P => self.p,
            Wave::Qrs => self.qrs,
            Wave::T => self.t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnotPlacement {
    /// Window endpoints plus `interior` equally spaced knots.
    Uniform { interior: usize },
    /// Knot positions in seconds from the window start.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineConfig {
    pub degree: usize,
    pub knots: KnotPlacement,
}

impl SplineConfig {
    pub fn breakpoints(&self, window: f64) -> Vec<f64> {
        match &self.knots {
            KnotPlacement::Uniform { interior } => {
                let segments = interior + 1;
                (0..=segments)
                    .map(|i| window * i as f64 / segments as f64)
                    .collect()
            }
            KnotPlacement::Explicit(k) => k.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    pub n_hermite: HermiteOrders,
    pub n_sigmoid: usize,
    /// Baseline spline; `None` fits without a baseline term.
    pub spline: Option<SplineConfig>,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            n_hermite: HermiteOrders { p: 4, qrs: 6, t: 4 },
            n_sigmoid: 2,
            spline: Some(SplineConfig {
                degree: 3,
                knots: KnotPlacement::Uniform { interior: 1 },
            }),
        }
    }
}

impl BasisConfig {
    pub fn validate(&self, window: f64) -> Result<(), FitError> {
        let spline_terms = match &self.spline {
            Some(s) => {
                let bp = s.breakpoints(window);
                if s.degree > 5 {
                    return Err(FitError::InvalidConfig(format!(
                        "spline degree {} is above 5",
                        s.degree
                    )));
                }
                let tol = 1e-9 * window.max(1.0);
                if bp.iter().any(|k| *k < -tol || *k > window + tol) {
                    return Err(FitError::InvalidConfig(
                        "spline knots must lie inside the beat window".into(),
                    ));
                }
                BSplineBasis::new(&bp, s.degree)?.len()
            }
            None => 0,
        };
        let total = self.n_hermite.p + self.n_hermite.qrs + self.n_hermite.t + self.n_sigmoid + spline_terms;
        if total == 0 {
            return Err(FitError::InvalidConfig("no basis terms".into()));
        }
        Ok(())
    }

    pub fn n_linear(&self, window: f64) -> usize {
        let spline = self
            .spline
            .as_ref()
            .map(|s| s.breakpoints(window).len() + s.degree - 1)
            .unwrap_or(0);
        self.n_hermite.p + self.n_hermite.qrs + self.n_hermite.t + self.n_sigmoid + spline
    }
}

/// Translation and dilation of one basis group, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub tau: f64,
    pub lambda: f64,
}

impl Shape {
    pub fn new(tau: f64, lambda: f64) -> Self {
        Shape { tau, lambda }
    }
}

/// The nonlinear parameters of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearParams {
    pub p: Shape,
    pub qrs: Shape,
    pub t: Shape,
    pub sigmoids: Vec<Shape>,
}

impl NonlinearParams {
    pub fn wave(&self, wave: Wave) -> Shape {
        match wave {
            Wave::P => self.p,
            Wave::Qrs => self.qrs,
            Wave::T => self.t,
        }
    }

    fn wave_mut(&mut self, wave: Wave) -> &mut Shape {
        match wave {
            Wave::P => &mut self.p,
            Wave::Qrs => &mut self.qrs,
            Wave::T => &mut self.t,
        }
    }

    /// Start values for a window centred on the R peak, sized for adult sinus beats.
    pub fn default_for_window(window: f64, n_sigmoid: usize) -> Self {
        let c = window / 2.0;
        let clamp = |t: f64| t.clamp(0.02 * window, 0.98 * window);
        let sigmoids = (0..n_sigmoid)
            .map(|k| Shape::new(clamp(c + 0.04 + 0.08 * k as f64), 0.01))
            .collect();
        NonlinearParams {
            p: Shape::new(clamp(c - 0.17), 0.02),
            qrs: Shape::new(c, 0.012),
            t: Shape::new(clamp(c + 0.25), 0.04),
            sigmoids,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveFit {
    pub wave: Wave,
    pub tau: f64,
    pub lambda: f64,
    /// Hermite amplitudes in mV.
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidFit {
    pub amplitude: f64,
    pub tau: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFit {
    pub degree: usize,
    /// Breakpoints in seconds from the window start.
    pub knots: Vec<f64>,
    pub coefficients: Vec<f64>,
}

/// A fitted (or generating) beat model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatModelFit {
    /// Window duration in seconds.
    pub window: f64,
    /// Waves with at least one Hermite term, in P, QRS, T order.
    pub waves: Vec<WaveFit>,
    pub sigmoids: Vec<SigmoidFit>,
    pub baseline: Option<BaselineFit>,
    /// Residual RMS in mV on the fitted samples.
    pub residual_rms: f64,
    /// Residual RMS at the supplied start, before the nonlinear search.
    pub initial_residual_rms: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl BeatModelFit {
    pub fn wave(&self, wave: Wave) -> Option<&WaveFit> {
        self.waves.iter().find(|w| w.wave == wave)
    }

    pub fn params(&self) -> NonlinearParams {
        let mut p = NonlinearParams::default_for_window(self.window, 0);
        for w in &self.waves {
            *p.wave_mut(w.wave) = Shape::new(w.tau, w.lambda);
        }
        p.sigmoids = self.sigmoids.iter().map(|s| Shape::new(s.tau, s.lambda)).collect();
        p
    }

    pub fn validate(&self) -> Result<(), FitError> {
        for w in &self.waves {
            if !(w.lambda > 0.0) {
                return Err(FitError::NonPositiveDilation(w.lambda));
            }
        }
        for s in &self.sigmoids {
            if !(s.lambda > 0.0) {
                return Err(FitError::NonPositiveDilation(s.lambda));
            }
        }
        if self.waves.windows(2).any(|w| !(w[0].tau < w[1].tau)) {
            return Err(FitError::InitUnordered);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Simplex iterations per start.
    pub max_iterations: usize,
    /// Levenberg-Marquardt iterations after each simplex run; 0 disables polishing.
    pub refine_iterations: usize,
    pub rel_tol: f64,
    /// Number of starts: the supplied one plus `starts - 1` jittered copies.
    pub starts: usize,
    /// Uniform translation jitter half-width in seconds.
    pub tau_jitter: f64,
    /// Relative dilation jitter half-width.
    pub lambda_jitter: f64,
    pub condition_limit: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 500,
            refine_iterations: 100,
            rel_tol: 1e-8,
            starts: 3,
            tau_jitter: 0.020,
            lambda_jitter: 0.2,
            condition_limit: 1e10,
            seed: 0,
        }
    }
}

/// Uniform time grid `i / fs` for `n` samples.
pub fn time_grid(n: usize, fs: f64) -> Vec<f64> {
    (0..n).map(|i| i as f64 / fs).collect()
}

struct Layout {
    waves: Vec<(Wave, usize, usize)>,
    sigmoid_col: usize,
    spline: Option<(BSplineBasis, usize)>,
    n_cols: usize,
}

impl Layout {
    fn new(config: &BasisConfig, window: f64) -> Result<Self, FitError> {
        config.validate(window)?;
        let mut col = 0;
        let mut waves = Vec::new();
        for wave in Wave::ALL {
            let n = config.n_hermite.get(wave);
            if n > 0 {
                waves.push((wave, col, n));
                col += n;
            }
        }
        let sigmoid_col = col;
        col += config.n_sigmoid;
        let spline = match &config.spline {
            Some(s) => {
                let basis = BSplineBasis::new(&s.breakpoints(window), s.degree)?;
                let start = col;
                col += basis.len();
                Some((basis, start))
            }
            None => None,
        };
        Ok(Layout {
            waves,
            sigmoid_col,
            spline,
            n_cols: col,
        })
    }

    fn design(&self, params: &NonlinearParams, grid: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(grid.len(), self.n_cols);
        for &(wave, col, n) in &self.waves {
            let s = params.wave(wave);
            basis::fill_hermite(&mut m, col, n, grid, s.tau, s.lambda);
        }
        for (k, s) in params.sigmoids.iter().enumerate() {
            for (i, &t) in grid.iter().enumerate() {
                m[(i, self.sigmoid_col + k)] = sigmoid_at(t, s.tau, s.lambda);
            }
        }
        if let Some((basis, col)) = &self.spline {
            let mut row = vec![0.0; basis.len()];
            for (i, &t) in grid.iter().enumerate() {
                basis.eval(t, &mut row);
                for (k, v) in row.iter().enumerate() {
                    m[(i, col + k)] = *v;
                }
            }
        }
        m
    }
}

struct LinearSolution {
    coefficients: DVector<f64>,
    ssr: f64,
    condition: f64,
}

fn solve_linear(design: DMatrix<f64>, y: &DVector<f64>) -> LinearSolution {
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let coefficients = svd
        .solve(y, smax * f64::EPSILON * design.nrows().max(design.ncols()) as f64)
        .unwrap_or_else(|_| DVector::zeros(design.ncols()));
    let ssr = (&design * &coefficients - y).norm_squared();
    LinearSolution {
        coefficients,
        ssr,
        condition,
    }
}

/// Parameter vector layout for the simplex: `(τ, ln λ)` per active wave, then per sigmoid.
/// Search coordinates: each translation in units of its starting dilation, then the
/// log dilation. Keeps simplex steps comparable across narrow and wide waves.
fn pack(layout: &Layout, template: &NonlinearParams, params: &NonlinearParams) -> Vec<f64> {
    scales(layout, template)
        .zip(shapes(layout, params))
        .flat_map(|(scale, s)| [s.tau / scale, s.lambda.ln()])
        .collect()
}

fn unpack(layout: &Layout, template: &NonlinearParams, v: &[f64]) -> NonlinearParams {
    let scales: Vec<f64> = scales(layout, template).collect();
    let mut p = template.clone();
    let mut i = 0;
    for &(wave, _, _) in &layout.waves {
        *p.wave_mut(wave) = Shape::new(v[2 * i] * scales[i], v[2 * i + 1].exp());
        i += 1;
    }
    for s in p.sigmoids.iter_mut() {
        *s = Shape::new(v[2 * i] * scales[i], v[2 * i + 1].exp());
        i += 1;
    }
    p
}

fn shapes<'a>(layout: &'a Layout, params: &'a NonlinearParams) -> impl Iterator<Item = Shape> + 'a {
    layout
        .waves
        .iter()
        .map(|&(wave, _, _)| params.wave(wave))
        .chain(params.sigmoids.iter().copied())
}

fn scales<'a>(layout: &'a Layout, template: &'a NonlinearParams) -> impl Iterator<Item = f64> + 'a {
    shapes(layout, template).map(|s| s.lambda)
}

fn feasible(layout: &Layout, params: &NonlinearParams, window: f64) -> bool {
    let inside = |s: &Shape| s.tau >= 0.0 && s.tau <= window && s.lambda > 0.0 && s.lambda <= window;
    let mut prev = f64::NEG_INFINITY;
    for &(wave, _, _) in &layout.waves {
        let s = params.wave(wave);
        if !inside(&s) || !(s.tau > prev) {
            return false;
        }
        prev = s.tau;
    }
    params.sigmoids.iter().all(inside)
}

fn check_init(layout: &Layout, params: &NonlinearParams, window: f64, n_sigmoid: usize) -> Result<(), FitError> {
    if params.sigmoids.len() != n_sigmoid {
        return Err(FitError::InvalidConfig(format!(
            "{} sigmoid starts for {} sigmoid terms",
            params.sigmoids.len(),
            n_sigmoid
        )));
    }
    let mut prev = f64::NEG_INFINITY;
    for &(wave, _, _) in &layout.waves {
        let s = params.wave(wave);
        if !(s.lambda > 0.0 && s.lambda.is_finite()) {
            return Err(FitError::NonPositiveDilation(s.lambda));
        }
        if !(0.0..=window).contains(&s.tau) {
            return Err(FitError::InitOutsideWindow {
                what: format!("{wave:?}"),
                tau: s.tau,
                window,
            });
        }
        if !(s.tau > prev) {
            return Err(FitError::InitUnordered);
        }
        prev = s.tau;
    }
    for (k, s) in params.sigmoids.iter().enumerate() {
        if !(s.lambda > 0.0 && s.lambda.is_finite()) {
            return Err(FitError::NonPositiveDilation(s.lambda));
        }
        if !(0.0..=window).contains(&s.tau) {
            return Err(FitError::InitOutsideWindow {
                what: format!("sigmoid {k}"),
                tau: s.tau,
                window,
            });
        }
    }
    Ok(())
}

/// Fits the beat model to one R-peak-centred beat window.
pub fn fit_beat(
    beat: &Strip,
    config: &BasisConfig,
    init: &NonlinearParams,
    opts: &FitOptions,
) -> Result<BeatModelFit, FitError> {
    fit_samples(&beat.samples, beat.fs, config, init, opts)
}

/// Fits samples taken at `fs` Hz; the window is `samples.len() / fs` seconds.
pub fn fit_samples(
    samples: &[f64],
    fs: f64,
    config: &BasisConfig,
    init: &NonlinearParams,
    opts: &FitOptions,
) -> Result<BeatModelFit, FitError> {
    let window = samples.len() as f64 / fs;
    let layout = Layout::new(config, window)?;
    if samples.len() < layout.n_cols {
        return Err(FitError::TooFewSamples {
            samples: samples.len(),
            terms: layout.n_cols,
        });
    }
    check_init(&layout, init, window, config.n_sigmoid)?;
    let grid = time_grid(samples.len(), fs);
    let y = DVector::from_column_slice(samples);

    let x0 = pack(&layout, init, init);
    let start = unpack(&layout, init, &x0);
    let at_init = solve_linear(layout.design(&start, &grid), &y);
    if !(at_init.condition <= opts.condition_limit) {
        return Err(FitError::IllConditioned {
            condition: at_init.condition,
            limit: opts.condition_limit,
            config: Box::new(config.clone()),
            params: Box::new(init.clone()),
        });
    }

    let residual = |v: &[f64]| -> Option<DVector<f64>> {
        let params = unpack(&layout, init, v);
        if !feasible(&layout, &params, window) {
            return None;
        }
        let design = layout.design(&params, &grid);
        let sol = solve_linear(design.clone(), &y);
        (sol.condition <= opts.condition_limit).then(|| design * sol.coefficients - &y)
    };
    let objective = |v: &[f64]| -> f64 { residual(v).map_or(f64::INFINITY, |r| r.norm_squared()) };

    let mut starts = vec![x0.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let lambdas: Vec<f64> = scales(&layout, init).collect();
    for _ in 1..opts.starts.max(1) {
        let jittered: Vec<f64> = x0
            .chunks(2)
            .zip(&lambdas)
            .flat_map(|(pair, lambda)| {
                let tau = pair[0] + rng.random_range(-1.0..=1.0) * opts.tau_jitter / lambda;
                let scale = 1.0 + rng.random_range(-1.0..=1.0) * opts.lambda_jitter;
                [tau, pair[1] + scale.ln()]
            })
            .collect();
        starts.push(jittered);
    }
    let steps: Vec<f64> = x0.chunks(2).flat_map(|_| [0.5, 0.15]).collect();
    let simplex_opts = SimplexOptions {
        max_iterations: opts.max_iterations,
        rel_tol: opts.rel_tol,
        abs_tol: 1e-14 * y.norm_squared().max(f64::MIN_POSITIVE),
    };

    let refine_opts = RefineOptions {
        max_iterations: opts.refine_iterations,
        rel_tol: opts.rel_tol,
        abs_tol: simplex_opts.abs_tol,
    };

    let runs = Execution::default().map(&starts, |x| {
        if !objective(x).is_finite() {
            return None;
        }
        let coarse = minimize(objective, x, &steps, simplex_opts);
        let mut run = (coarse.x.clone(), coarse.value, coarse.iterations, coarse.converged);
        if opts.refine_iterations > 0 {
            if let Some(fine) = levenberg_marquardt(residual, &coarse.x, refine_opts) {
                run = (fine.x, fine.ssr, coarse.iterations + fine.iterations, fine.converged);
            }
        }
        Some(run)
    });
    // the first start is always feasible, so at least one run exists
    let (best_x, _, iterations, converged) = runs
        .into_iter()
        .flatten()
        .reduce(|a, b| if b.1 < a.1 { b } else { a })
        .expect("supplied start is feasible");
    let params = unpack(&layout, init, &best_x);
    let solution = solve_linear(layout.design(&params, &grid), &y);
    let m = samples.len() as f64;
    let mut fit = assemble(&layout, config, &params, &solution.coefficients, window);
    fit.residual_rms = (solution.ssr / m).sqrt();
    fit.initial_residual_rms = (at_init.ssr / m).sqrt();
    fit.iterations = iterations;
    fit.converged = converged;
    Ok(fit)
}

fn assemble(
    layout: &Layout,
    config: &BasisConfig,
    params: &NonlinearParams,
    coef: &DVector<f64>,
    window: f64,
) -> BeatModelFit {
    let waves = layout
        .waves
        .iter()
        .map(|&(wave, col, n)| {
            let s = params.wave(wave);
            WaveFit {
                wave,
                tau: s.tau,
                lambda: s.lambda,
                coefficients: coef.rows(col, n).iter().copied().collect(),
            }
        })
        .collect();
    let sigmoids = params
        .sigmoids
        .iter()
        .enumerate()
        .map(|(k, s)| SigmoidFit {
            amplitude: coef[layout.sigmoid_col + k],
            tau: s.tau,
            lambda: s.lambda,
        })
        .collect();
    let baseline = layout.spline.as_ref().map(|(basis, col)| BaselineFit {
        degree: config.spline.as_ref().map_or(0, |s| s.degree),
        knots: basis.breakpoints().to_vec(),
        coefficients: coef.rows(*col, basis.len()).iter().copied().collect(),
    });
    BeatModelFit {
        window,
        waves,
        sigmoids,
        baseline,
        residual_rms: 0.0,
        initial_residual_rms: 0.0,
        converged: true,
        iterations: 0,
    }
}

/// Refits only the linear amplitudes for fixed nonlinear parameters.
pub fn fit_linear(
    samples: &[f64],
    fs: f64,
    config: &BasisConfig,
    params: &NonlinearParams,
) -> Result<BeatModelFit, FitError> {
    let window = samples.len() as f64 / fs;
    let layout = Layout::new(config, window)?;
    let grid = time_grid(samples.len(), fs);
    let sol = solve_linear(layout.design(params, &grid), &DVector::from_column_slice(samples));
    let mut fit = assemble(&layout, config, params, &sol.coefficients, window);
    fit.residual_rms = (sol.ssr / samples.len() as f64).sqrt();
    fit.initial_residual_rms = fit.residual_rms;
    Ok(fit)
}

/// A beat window to fit: samples plus the start for the nonlinear search.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatJob {
    pub beat: Strip,
    pub init: NonlinearParams,
}

/// Fits independent beats, in parallel when `exec` allows it.
pub fn fit_beats(
    jobs: &[BeatJob],
    config: &BasisConfig,
    opts: &FitOptions,
    exec: Execution,
) -> Vec<Result<BeatModelFit, FitError>> {
    exec.map(jobs, |job| fit_beat(&job.beat, config, &job.init, opts))
}

/// Per-wave components of a fitted beat; they sum to [`reconstruct`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub p_wave: Vec<f64>,
    pub qrs: Vec<f64>,
    /// Contribution of the sigmoid terms (ST level shifts).
    pub st_t: Vec<f64>,
    pub t_wave: Vec<f64>,
    pub baseline: Vec<f64>,
}

impl Segmentation {
    pub fn sum(&self) -> Vec<f64> {
        (0..self.p_wave.len())
            .map(|i| self.p_wave[i] + self.qrs[i] + self.st_t[i] + self.t_wave[i] + self.baseline[i])
            .collect()
    }

    pub fn wave(&self, wave: Wave) -> &[f64] {
        match wave {
            Wave::P => &self.p_wave,
            Wave::Qrs => &self.qrs,
            Wave::T => &self.t_wave,
        }
    }
}

fn wave_curve(w: &WaveFit, time_grid: &[f64]) -> Vec<f64> {
    let mut h = vec![0.0; w.coefficients.len()];
    time_grid
        .iter()
        .map(|&t| {
            hermite_functions_at((t - w.tau) / w.lambda, &mut h);
            h.iter().zip(&w.coefficients).map(|(a, b)| a * b).sum()
        })
        .collect()
}

pub fn segment(fit: &BeatModelFit, time_grid: &[f64]) -> Segmentation {
    let zeros = || vec![0.0; time_grid.len()];
    let mut seg = Segmentation {
        p_wave: zeros(),
        qrs: zeros(),
        st_t: zeros(),
        t_wave: zeros(),
        baseline: zeros(),
    };
    for w in &fit.waves {
        let curve = wave_curve(w, time_grid);
        match w.wave {
            Wave::P => seg.p_wave = curve,
            Wave::Qrs => seg.qrs = curve,
            Wave::T => seg.t_wave = curve,
        }
    }
    for s in &fit.sigmoids {
        for (v, &t) in seg.st_t.iter_mut().zip(time_grid) {
            *v += s.amplitude * sigmoid_at(t, s.tau, s.lambda);
        }
    }
    if let Some(b) = &fit.baseline {
        if let Ok(basis) = BSplineBasis::new(&b.knots, b.degree) {
            let mut row = vec![0.0; basis.len()];
            for (v, &t) in seg.baseline.iter_mut().zip(time_grid) {
                basis.eval(t, &mut row);
                *v = row.iter().zip(&b.coefficients).map(|(a, c)| a * c).sum();
            }
        }
    }
    seg
}

/// Samples the model on `time_grid` (seconds from the window start).
pub fn reconstruct(fit: &BeatModelFit, time_grid: &[f64]) -> Vec<f64> {
    segment(fit, time_grid).sum()
}
