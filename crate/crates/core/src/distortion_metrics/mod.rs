//! Objective distortion measures between an original signal `x` and a
//! reconstruction `y`.
//!
//! * PRD: percent root-mean-square difference, mean-removed by default.
//! * WWPRD: per-subband PRD of the wavelet coefficients combined with caller
//!   supplied diagnostic weights.
//! * WEDD: the same per-subband PRDs weighted by the relative subband energy of `x`.
//!
//! Subband PRDs are computed on raw coefficients (no mean removal).

mod dwt;

pub use dwt::{dwt, idwt, Extension, WaveletConfig, WaveletDecomposition, WaveletFilter};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Execution;
use dwt::energy;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("signals have different lengths ({x} vs {y})")]
    LengthMismatch { x: usize, y: usize },
    #[error("signal of length {len} is too short (need at least {min})")]
    TooShort { len: usize, min: usize },
    #[error("PRD denominator is zero")]
    ZeroDenominator,
    #[error("subband {0} of the original signal has zero energy")]
    ZeroEnergySubband(String),
    #[error("original signal has zero energy")]
    ZeroEnergySignal,
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid wavelet configuration: {0}")]
    InvalidConfig(String),
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch {
            x: x.len(),
            y: y.len(),
        });
    }
    Ok(())
}

/// `100 * sqrt(Σ(x−y)² / Σ(x−x̄)²)`, or with denominator `Σx²` when `mean_removed` is false.
pub fn prd(x: &[f64], y: &[f64], mean_removed: bool) -> Result<f64, MetricError> {
    check_pair(x, y)?;
    if x.len() < 2 {
        return Err(MetricError::TooShort { len: x.len(), min: 2 });
    }
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = if mean_removed {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|a| (a - mean) * (a - mean)).sum()
    } else {
        energy(x)
    };
    if den <= 0.0 {
        return Err(MetricError::ZeroDenominator);
    }
    Ok(100.0 * (num / den).sqrt())
}

fn band_prd(x: &[f64], y: &[f64]) -> Option<f64> {
    let den = energy(x);
    if den > 0.0 {
        let num: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        Some(100.0 * (num / den).sqrt())
    } else {
        None
    }
}

/// Equal weight on every subband, `1 / (levels + 1)` each.
pub fn uniform_weights(cfg: &WaveletConfig) -> Vec<f64> {
    vec![1.0 / cfg.n_subbands() as f64; cfg.n_subbands()]
}

fn check_weights(weights: &[f64], n: usize) -> Result<(), MetricError> {
    if weights.len() != n {
        return Err(MetricError::InvalidWeights(format!(
            "{} weights for {n} subbands",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(MetricError::InvalidWeights("weights must be non-negative".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(MetricError::InvalidWeights(format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

/// A weighted combination of subband PRDs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPrd {
    /// Percent.
    pub value: f64,
    /// Per-subband PRD in percent, `d1..dL, aL`. `None` where the original subband
    /// carries no energy (only possible with zero weight).
    pub subband_prd: Vec<Option<f64>>,
    pub weights: Vec<f64>,
}

/// WWPRD over precomputed subbands.
pub fn wwprd_from_subbands(
    x_bands: &[&[f64]],
    y_bands: &[&[f64]],
    weights: &[f64],
    names: &[String],
) -> Result<WeightedPrd, MetricError> {
    check_weights(weights, x_bands.len())?;
    let mut subband_prd = Vec::with_capacity(x_bands.len());
    for (j, (xb, yb)) in x_bands.iter().zip(y_bands).enumerate() {
        check_pair(xb, yb)?;
        let p = band_prd(xb, yb).ok_or_else(|| {
            MetricError::ZeroEnergySubband(names.get(j).cloned().unwrap_or_else(|| j.to_string()))
        })?;
        subband_prd.push(Some(p));
    }
    let value = subband_prd
        .iter()
        .zip(weights)
        .map(|(p, w)| w * p.unwrap_or(0.0))
        .sum();
    Ok(WeightedPrd {
        value,
        subband_prd,
        weights: weights.to_vec(),
    })
}

/// WEDD over precomputed subbands: weights are the relative subband energies of `x`.
pub fn wedd_from_subbands(x_bands: &[&[f64]], y_bands: &[&[f64]]) -> Result<WeightedPrd, MetricError> {
    let energies: Vec<f64> = x_bands.iter().map(|b| energy(b)).collect();
    let total: f64 = energies.iter().sum();
    if total <= 0.0 {
        return Err(MetricError::ZeroEnergySignal);
    }
    let weights: Vec<f64> = energies.iter().map(|e| e / total).collect();
    let mut subband_prd = Vec::with_capacity(x_bands.len());
    let mut value = 0.0;
    for ((xb, yb), w) in x_bands.iter().zip(y_bands).zip(&weights) {
        check_pair(xb, yb)?;
        let p = band_prd(xb, yb);
        value += w * p.unwrap_or(0.0);
        subband_prd.push(p);
    }
    Ok(WeightedPrd {
        value,
        subband_prd,
        weights,
    })
}

fn decompose_pair(
    x: &[f64],
    y: &[f64],
    cfg: &WaveletConfig,
) -> Result<(WaveletDecomposition, WaveletDecomposition), MetricError> {
    check_pair(x, y)?;
    Ok((dwt(x, cfg)?, dwt(y, cfg)?))
}

pub fn wwprd(x: &[f64], y: &[f64], weights: &[f64], cfg: &WaveletConfig) -> Result<WeightedPrd, MetricError> {
    let (dx, dy) = decompose_pair(x, y, cfg)?;
    wwprd_from_subbands(&dx.subbands(), &dy.subbands(), weights, &cfg.subband_names())
}

pub fn wedd(x: &[f64], y: &[f64], cfg: &WaveletConfig) -> Result<WeightedPrd, MetricError> {
    let (dx, dy) = decompose_pair(x, y, cfg)?;
    wedd_from_subbands(&dx.subbands(), &dy.subbands())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionResult {
    /// Percent.
    pub prd: f64,
    pub prd_mean_removed: bool,
    pub wwprd: WeightedPrd,
    pub wedd: WeightedPrd,
    pub subbands: Vec<String>,
    pub wavelet: WaveletConfig,
}

/// All three measures. Without `weights`, WWPRD uses [`uniform_weights`].
pub fn distortion(
    x: &[f64],
    y: &[f64],
    weights: Option<&[f64]>,
    cfg: &WaveletConfig,
    mean_removed: bool,
) -> Result<DistortionResult, MetricError> {
    let prd_value = prd(x, y, mean_removed)?;
    let (dx, dy) = decompose_pair(x, y, cfg)?;
    let names = cfg.subband_names();
    let uniform = uniform_weights(cfg);
    let weights = weights.unwrap_or(&uniform);
    Ok(DistortionResult {
        prd: prd_value,
        prd_mean_removed: mean_removed,
        wwprd: wwprd_from_subbands(&dx.subbands(), &dy.subbands(), weights, &names)?,
        wedd: wedd_from_subbands(&dx.subbands(), &dy.subbands())?,
        subbands: names,
        wavelet: *cfg,
    })
}

/// Evaluates [`distortion`] over many `(x, y)` pairs.
pub fn distortion_batch(
    pairs: &[(Vec<f64>, Vec<f64>)],
    weights: Option<&[f64]>,
    cfg: &WaveletConfig,
    exec: Execution,
) -> Vec<Result<DistortionResult, MetricError>> {
    exec.map(pairs, |(x, y)| distortion(x, y, weights, cfg, true))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prd_examples() {
        let x = [1.0, -1.0, 1.0, -1.0];
        assert_eq!(prd(&x, &x, true).unwrap(), 0.0);
        assert!((prd(&x, &[0.0; 4], true).unwrap() - 100.0).abs() < 1e-12);
        let y = [0.9, -1.2, 0.7, -1.0];
        let a = prd(&x, &y, true).unwrap();
        let x3: Vec<f64> = x.iter().map(|v| v * 3.0).collect();
        let y3: Vec<f64> = y.iter().map(|v| v * 3.0).collect();
        assert!((a - prd(&x3, &y3, true).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn prd_errors() {
        assert_eq!(prd(&[2.0, 2.0], &[1.0, 1.0], true), Err(MetricError::ZeroDenominator));
        assert!(prd(&[2.0, 2.0], &[1.0, 1.0], false).is_ok());
        assert!(matches!(prd(&[1.0], &[1.0], true), Err(MetricError::TooShort { .. })));
        assert!(matches!(prd(&[1.0, 2.0], &[1.0], true), Err(MetricError::LengthMismatch { .. })));
    }

    #[test]
    fn two_band_weighted_toy() {
        // subband PRDs 10% and 50%
        let x: [&[f64]; 2] = [&[1.0], &[2.0]];
        let y: [&[f64]; 2] = [&[0.9], &[1.0]];
        let names = vec!["d1".to_string(), "a1".to_string()];
        let r = wwprd_from_subbands(&x, &y, &[0.8, 0.2], &names).unwrap();
        assert!((r.subband_prd[0].unwrap() - 10.0).abs() < 1e-12);
        assert!((r.subband_prd[1].unwrap() - 50.0).abs() < 1e-12);
        assert!((r.value - 18.0).abs() < 1e-12);
    }

    #[test]
    fn wedd_energy_toy() {
        // energies 9 and 1, subband PRDs 10% and 100%
        let x: [&[f64]; 2] = [&[3.0], &[1.0]];
        let y: [&[f64]; 2] = [&[2.7], &[0.0]];
        let r = wedd_from_subbands(&x, &y).unwrap();
        assert!((r.weights[0] - 0.9).abs() < 1e-15);
        assert!((r.weights[1] - 0.1).abs() < 1e-15);
        assert!((r.value - 19.0).abs() < 1e-12);
    }

    fn test_signal(n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = i as f64 / 360.0;
                (2.0 * std::f64::consts::PI * 1.2 * t).sin() + 0.3 * (2.0 * std::f64::consts::PI * 7.0 * t).cos()
            })
            .collect()
    }

    #[test]
    fn identical_signals_score_zero() {
        let x = test_signal(1024);
        let cfg = WaveletConfig::default();
        let r = distortion(&x, &x, None, &cfg, true).unwrap();
        assert_eq!(r.prd, 0.0);
        assert_eq!(r.wwprd.value, 0.0);
        assert_eq!(r.wedd.value, 0.0);
        assert!((r.wedd.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_hot_weights_select_a_subband() {
        let x = test_signal(512);
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + 0.05 * ((i * 31 % 17) as f64 - 8.0) / 8.0).collect();
        let cfg = WaveletConfig::default();
        let dx = dwt(&x, &cfg).unwrap();
        let dy = dwt(&y, &cfg).unwrap();
        for j in 0..cfg.n_subbands() {
            let mut w = vec![0.0; cfg.n_subbands()];
            w[j] = 1.0;
            let r = wwprd(&x, &y, &w, &cfg).unwrap();
            let expected = band_prd(dx.subbands()[j], dy.subbands()[j]).unwrap();
            assert!((r.value - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_are_validated() {
        let x = test_signal(64);
        let cfg = WaveletConfig::default();
        assert!(matches!(wwprd(&x, &x, &[0.5, 0.5], &cfg), Err(MetricError::InvalidWeights(_))));
        assert!(matches!(
            wwprd(&x, &x, &[0.5, 0.5, 0.0, 0.0, 0.0, 0.1], &cfg),
            Err(MetricError::InvalidWeights(_))
        ));
        assert!(matches!(
            wwprd(&x, &x, &[1.5, -0.5, 0.0, 0.0, 0.0, 0.0], &cfg),
            Err(MetricError::InvalidWeights(_))
        ));
    }

    #[test]
    fn zero_energy_subband_is_named() {
        // a constant signal lives entirely in the approximation band
        let x = vec![1.0; 64];
        let cfg = WaveletConfig::default();
        let err = wwprd(&x, &x, &uniform_weights(&cfg), &cfg).unwrap_err();
        assert_eq!(err, MetricError::ZeroEnergySubband("d1".into()));
        assert_eq!(wedd(&[0.0; 64], &[0.0; 64], &cfg), Err(MetricError::ZeroEnergySignal));
        // WEDD skips zero-energy subbands through zero weight
        let r = wedd(&x, &x, &cfg).unwrap();
        assert_eq!(r.weights[5], 1.0);
        assert!(r.subband_prd[0].is_none());
    }

    #[test]
    fn high_frequency_noise_hurts_uniform_wwprd_more_than_wedd() {
        // x band-limited to the coarse subbands; noise only in y's finest detail
        let cfg = WaveletConfig::default();
        let x: Vec<f64> = (0..1024).map(|i| (2.0 * std::f64::consts::PI * i as f64 / 256.0).sin()).collect();
        let y: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| v + if i % 2 == 0 { 0.05 } else { -0.05 })
            .collect();
        let u = wwprd(&x, &y, &uniform_weights(&cfg), &cfg).unwrap();
        let e = wedd(&x, &y, &cfg).unwrap();
        assert!(u.value > e.value, "wwprd {} wedd {}", u.value, e.value);
    }

    #[test]
    fn batch_matches_single() {
        let cfg = WaveletConfig::default();
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..8)
            .map(|k| {
                let x = test_signal(256 + 32 * k);
                let y = x.iter().map(|v| v * 0.9 + 0.01).collect();
                (x, y)
            })
            .collect();
        let par = distortion_batch(&pairs, None, &cfg, Execution::Parallel);
        let seq = distortion_batch(&pairs, None, &cfg, Execution::Sequential);
        assert_eq!(par, seq);
    }
}
