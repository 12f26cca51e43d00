//! Periodised orthogonal discrete wavelet transform.

use serde::{Deserialize, Serialize};

use super::MetricError;

/// Orthogonal Daubechies filters, named by vanishing moments (`db1` = Haar).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletFilter {
    #[serde(alias = "db1")]
    Haar,
    Db2,
    Db3,
    Db4,
}

// Scaling (low-pass) filters, computed by spectral factorisation at 50 digits.
const HAAR: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];
const DB2: [f64; 4] = [
    0.48296291314453416,
    0.8365163037378079,
    0.2241438680420134,
    -0.12940952255126037,
];
const DB3: [f64; 6] = [
    0.33267055295008263,
    0.8068915093110925,
    0.45987750211849154,
    -0.13501102001025458,
    -0.08544127388202666,
    0.03522629188570953,
];
const DB4: [f64; 8] = [
    0.2303778133088965,
    0.7148465705529157,
    0.6308807679298589,
    -0.027983769416859854,
    -0.18703481171909309,
    0.030841381835560764,
    0.0328830116668852,
    -0.010597401785069032,
];

impl WaveletFilter {
    pub fn lowpass(self) -> &'static [f64] {
        match self {
            WaveletFilter::Haar => &HAAR,
            WaveletFilter::Db2 => &DB2,
            WaveletFilter::Db3 => &DB3,
            WaveletFilter::Db4 => &DB4,
        }
    }

    /// Quadrature mirror of the low-pass filter: `g[k] = (-1)^k h[L-1-k]`.
    pub fn highpass(self) -> Vec<f64> {
        let h = self.lowpass();
        let l = h.len();
        (0..l)
            .map(|k| if k % 2 == 0 { h[l - 1 - k] } else { -h[l - 1 - k] })
            .collect()
    }
}

impl std::str::FromStr for WaveletFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "haar" | "db1" => Ok(WaveletFilter::Haar),
            "db2" => Ok(WaveletFilter::Db2),
            "db3" => Ok(WaveletFilter::Db3),
            "db4" => Ok(WaveletFilter::Db4),
            other => Err(format!("unknown wavelet filter {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Extension {
    #[default]
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveletConfig {
    pub levels: usize,
    pub filter: WaveletFilter,
    #[serde(default)]
    pub extension: Extension,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        WaveletConfig {
            levels: 5,
            filter: WaveletFilter::Db4,
            extension: Extension::Periodic,
        }
    }
}

impl WaveletConfig {
    pub fn n_subbands(&self) -> usize {
        self.levels + 1
    }

    pub fn min_len(&self) -> usize {
        1usize << self.levels
    }

    /// Subband names in decomposition order: `d1..dL`, then `aL`.
    pub fn subband_names(&self) -> Vec<String> {
        (1..=self.levels)
            .map(|j| format!("d{j}"))
            .chain(std::iter::once(format!("a{}", self.levels)))
            .collect()
    }

    fn check(&self, len: usize) -> Result<(), MetricError> {
        if self.levels == 0 {
            return Err(MetricError::InvalidConfig("levels must be >= 1".into()));
        }
        if len < self.min_len() {
            return Err(MetricError::TooShort {
                len,
                min: self.min_len(),
            });
        }
        Ok(())
    }
}

/// Coefficients of an `L`-level decomposition.
///
/// Signals whose length is not a multiple of `2^L` are zero-padded up to the next
/// multiple; the padding carries no energy, so the transform stays orthogonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletDecomposition {
    /// Detail coefficients, finest level first.
    pub details: Vec<Vec<f64>>,
    pub approximation: Vec<f64>,
    pub signal_len: usize,
}

impl WaveletDecomposition {
    /// `d1, …, dL, aL`.
    pub fn subbands(&self) -> Vec<&[f64]> {
        self.details
            .iter()
            .map(Vec::as_slice)
            .chain(std::iter::once(self.approximation.as_slice()))
            .collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.subbands().iter().map(|b| energy(b)).collect()
    }
}

pub(crate) fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn analysis_step(x: &[f64], h: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let half = n / 2;
    let mut approx = vec![0.0; half];
    let mut detail = vec![0.0; half];
    for i in 0..half {
        let (mut a, mut d) = (0.0, 0.0);
        for (k, (hk, gk)) in h.iter().zip(g).enumerate() {
            let v = x[(2 * i + k) % n];
            a += hk * v;
            d += gk * v;
        }
        approx[i] = a;
        detail[i] = d;
    }
    (approx, detail)
}

fn synthesis_step(approx: &[f64], detail: &[f64], h: &[f64], g: &[f64]) -> Vec<f64> {
    let n = approx.len() * 2;
    let mut x = vec![0.0; n];
    for i in 0..approx.len() {
        for (k, (hk, gk)) in h.iter().zip(g).enumerate() {
            x[(2 * i + k) % n] += hk * approx[i] + gk * detail[i];
        }
    }
    x
}

pub fn dwt(x: &[f64], cfg: &WaveletConfig) -> Result<WaveletDecomposition, MetricError> {
    cfg.check(x.len())?;
    let block = cfg.min_len();
    let padded = x.len().div_ceil(block) * block;
    let h = cfg.filter.lowpass();
    let g = cfg.filter.highpass();
    let mut current = x.to_vec();
    current.resize(padded, 0.0);
    let mut details = Vec::with_capacity(cfg.levels);
    for _ in 0..cfg.levels {
        let (a, d) = analysis_step(&current, h, &g);
        details.push(d);
        current = a;
    }
    Ok(WaveletDecomposition {
        details,
        approximation: current,
        signal_len: x.len(),
    })
}

pub fn idwt(dec: &WaveletDecomposition, cfg: &WaveletConfig) -> Vec<f64> {
    let h = cfg.filter.lowpass();
    let g = cfg.filter.highpass();
    let mut current = dec.approximation.clone();
    for d in dec.details.iter().rev() {
        current = synthesis_step(&current, d, h, &g);
    }
    current.truncate(dec.signal_len);
    current
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filters_are_orthonormal() {
        for f in [WaveletFilter::Haar, WaveletFilter::Db2, WaveletFilter::Db3, WaveletFilter::Db4] {
            let h = f.lowpass();
            let sum: f64 = h.iter().sum();
            assert!((sum - std::f64::consts::SQRT_2).abs() < 1e-14, "{f:?}");
            for shift in 0..h.len() / 2 {
                let dot: f64 = (0..h.len() - 2 * shift).map(|k| h[k] * h[k + 2 * shift]).sum();
                let target = if shift == 0 { 1.0 } else { 0.0 };
                assert!((dot - target).abs() < 1e-15, "{f:?} shift {shift}: {dot}");
            }
            // vanishing moments of the high-pass filter
            let g = f.highpass();
            for m in 0..h.len() / 2 {
                let moment: f64 = g.iter().enumerate().map(|(k, v)| v * (k as f64).powi(m as i32)).sum();
                assert!(moment.abs() < 1e-9, "{f:?} moment {m}: {moment}");
            }
        }
    }

    #[test]
    fn zero_signal_has_zero_subbands() {
        let dec = dwt(&[0.0; 64], &WaveletConfig::default()).unwrap();
        assert_eq!(dec.subbands().len(), 6);
        assert!(dec.subbands().iter().all(|b| b.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn impulse_energy_is_preserved() {
        let mut x = vec![0.0; 256];
        x[37] = 1.0;
        let dec = dwt(&x, &WaveletConfig::default()).unwrap();
        let total: f64 = dec.energies().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn subband_lengths_halve() {
        let dec = dwt(&vec![1.0; 1024], &WaveletConfig::default()).unwrap();
        let lens: Vec<usize> = dec.subbands().iter().map(|b| b.len()).collect();
        assert_eq!(lens, vec![512, 256, 128, 64, 32, 32]);
    }

    #[test]
    fn too_short_is_rejected() {
        assert!(matches!(
            dwt(&[1.0; 31], &WaveletConfig::default()),
            Err(MetricError::TooShort { len: 31, min: 32 })
        ));
    }

    #[test]
    fn padded_lengths_round_trip() {
        let x: Vec<f64> = (0..3600).map(|i| (i as f64 * 0.013).sin() + (i % 7) as f64 * 0.1).collect();
        let cfg = WaveletConfig::default();
        let dec = dwt(&x, &cfg).unwrap();
        let back = idwt(&dec, &cfg);
        assert_eq!(back.len(), 3600);
        let err = back.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10);
        let ex: f64 = energy(&x);
        let es: f64 = dec.energies().iter().sum();
        assert!(((ex - es) / ex).abs() < 1e-12);
    }

    #[test]
    fn short_signals_with_wraparound() {
        // coarsest level is shorter than the filter
        let x: Vec<f64> = (0..32).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let cfg = WaveletConfig::default();
        let dec = dwt(&x, &cfg).unwrap();
        let back = idwt(&dec, &cfg);
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
