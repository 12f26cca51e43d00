//! Synthetic ECG material for demos, tests and benchmarks.
//!
//! Beats are generated by the beat model itself, so a fit of generated data has a
//! known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::beat_model::{
    reconstruct, time_grid, BaselineFit, BasisConfig, BeatModelFit, SigmoidFit, Wave, WaveFit,
};
use crate::signal_io::{Lead, Record, RecordMeta};

/// The configuration [`reference_beat`] is expressed in.
pub fn reference_config() -> BasisConfig {
    BasisConfig::default()
}

/// A sinus-like beat in a window of `window` seconds, R peak at the centre.
pub fn reference_beat(window: f64) -> BeatModelFit {
    let c = window / 2.0;
    BeatModelFit {
        window,
        waves: vec![
            WaveFit {
                wave: Wave::P,
                tau: c - 0.17,
                lambda: 0.022,
                coefficients: vec![0.20, 0.02, -0.04, 0.01],
            },
            WaveFit {
                wave: Wave::Qrs,
                tau: c,
                lambda: 0.011,
                coefficients: vec![1.40, 0.10, -0.35, 0.05, 0.12, -0.02],
            },
            WaveFit {
                wave: Wave::T,
                tau: c + 0.24,
                lambda: 0.045,
                coefficients: vec![0.45, -0.05, -0.05, 0.02],
            },
        ],
        sigmoids: vec![
            SigmoidFit {
                amplitude: 0.05,
                tau: c + 0.05,
                lambda: 0.008,
            },
            SigmoidFit {
                amplitude: -0.04,
                tau: c + 0.15,
                lambda: 0.02,
            },
        ],
        baseline: Some(BaselineFit {
            degree: 3,
            knots: vec![0.0, window / 2.0, window],
            coefficients: vec![0.02, 0.0, -0.01, 0.01, 0.0],
        }),
        residual_rms: 0.0,
        initial_residual_rms: 0.0,
        converged: true,
        iterations: 0,
    }
}

/// Samples `fit` at `fs` over its window.
pub fn beat_samples(fit: &BeatModelFit, fs: f64) -> Vec<f64> {
    let n = (fit.window * fs).round() as usize;
    reconstruct(fit, &time_grid(n, fs))
}

/// `amplitude * sin(2π f t + phase)` sampled at `fs`.
pub fn sinusoidal_drift(n: usize, fs: f64, amplitude: f64, freq_hz: f64, phase: f64) -> Vec<f64> {
    (0..n)
        .map(|i| amplitude * (2.0 * std::f64::consts::PI * freq_hz * i as f64 / fs + phase).sin())
        .collect()
}

/// Knobs for [`synthetic_record`].
#[derive(Debug, Clone, PartialEq)]
pub struct RecordRecipe {
    pub id: String,
    pub fs: f64,
    pub beats: usize,
    /// RR interval; also the beat window.
    pub rr: f64,
    pub drift_mv: f64,
    pub drift_hz: f64,
    pub noise_mv: f64,
    pub seed: u64,
}

impl Default for RecordRecipe {
    fn default() -> Self {
        RecordRecipe {
            id: "synthetic".into(),
            fs: 360.0,
            beats: 12,
            rr: 0.8,
            drift_mv: 0.0,
            drift_hz: 0.5,
            noise_mv: 0.0,
            seed: 0,
        }
    }
}

/// A 3-lead record (I, II, V1) of concatenated reference beats.
///
/// Lead I is a scaled copy, V1 has an inverted QRS and T. Drift and white noise
/// are added per lead with lead-specific phases.
pub fn synthetic_record(recipe: &RecordRecipe) -> Record {
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let base = reference_beat(recipe.rr);
    let variants: [(&str, f64, f64); 3] = [("I", 0.6, 1.0), ("II", 1.0, 1.0), ("V1", 0.8, -1.0)];
    let leads = variants
        .iter()
        .enumerate()
        .map(|(k, &(name, gain, polarity))| {
            let mut beat = base.clone();
            for w in beat.waves.iter_mut() {
                let sign = if w.wave == Wave::P { 1.0 } else { polarity };
                w.coefficients.iter_mut().for_each(|c| *c *= gain * sign);
            }
            beat.sigmoids.iter_mut().for_each(|s| s.amplitude *= gain * polarity);
            let one = beat_samples(&beat, recipe.fs);
            let mut samples: Vec<f64> = one.iter().copied().cycle().take(one.len() * recipe.beats).collect();
            let drift = sinusoidal_drift(
                samples.len(),
                recipe.fs,
                recipe.drift_mv,
                recipe.drift_hz,
                k as f64 * 0.7,
            );
            for (s, d) in samples.iter_mut().zip(drift) {
                *s += d;
                if recipe.noise_mv > 0.0 {
                    *s += recipe.noise_mv * (rng.random::<f64>() * 2.0 - 1.0) * 3f64.sqrt();
                }
            }
            Lead {
                name: name.to_string(),
                samples,
            }
        })
        .collect();
    Record::new(
        recipe.id.clone(),
        recipe.fs,
        leads,
        Some(RecordMeta {
            interpretation: Some("synthetic sinus rhythm".into()),
            ..RecordMeta::default()
        }),
    )
    .expect("synthetic record is valid")
}
