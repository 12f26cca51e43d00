use dqa_core::beat_model::{
    fit_beats, fit_samples, reconstruct, time_grid, BeatJob, BeatModelFit, FitOptions, NonlinearParams,
    Shape, Wave,
};
use dqa_core::distortion_metrics::prd;
use dqa_core::signal_io::Strip;
use dqa_core::synth::{beat_samples, reference_beat, reference_config, sinusoidal_drift};
use dqa_core::Execution;

const FS: f64 = 360.0;
const WINDOW: f64 = 0.8;

fn perturbed(p: &NonlinearParams) -> NonlinearParams {
    let shift = |s: Shape| Shape::new(s.tau + 0.010, s.lambda * 1.2);
    NonlinearParams {
        p: shift(p.p),
        qrs: shift(p.qrs),
        t: shift(p.t),
        sigmoids: p.sigmoids.iter().copied().map(shift).collect(),
    }
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn coefficients(fit: &BeatModelFit, wave: Wave) -> &[f64] {
    &fit.wave(wave).unwrap().coefficients
}

#[test]
fn perturbed_start_recovers_model_data() {
    let truth = reference_beat(WINDOW);
    let x = beat_samples(&truth, FS);
    let fit = fit_samples(&x, FS, &reference_config(), &perturbed(&truth.params()), &FitOptions::default()).unwrap();
    let y = reconstruct(&fit, &time_grid(x.len(), FS));
    let p = prd(&x, &y, true).unwrap();
    assert!(p < 1.0, "reconstruction PRD {p}%");
    assert!(fit.residual_rms <= fit.initial_residual_rms);
}

#[test]
fn drift_is_absorbed_by_the_baseline() {
    let truth = reference_beat(WINDOW);
    let x = beat_samples(&truth, FS);
    let drift = sinusoidal_drift(x.len(), FS, 0.3, 0.5, 0.0);
    let y: Vec<f64> = x.iter().zip(&drift).map(|(a, d)| a + d).collect();
    let p = prd(&x, &y, true).unwrap();
    assert!(p > 15.0, "PRD {p}%");

    let init = perturbed(&truth.params());
    let opts = FitOptions::default();
    let clean = fit_samples(&x, FS, &reference_config(), &init, &opts).unwrap();
    let drifted = fit_samples(&y, FS, &reference_config(), &init, &opts).unwrap();
    for wave in Wave::ALL {
        let d = rel_l2(coefficients(&drifted, wave), coefficients(&clean, wave));
        assert!(d < 0.05, "{wave:?}: relative distance {d}");
    }
}

#[test]
fn batch_fit_matches_sequential() {
    let truth = reference_beat(WINDOW);
    let jobs: Vec<BeatJob> = (0..4)
        .map(|k| {
            let drift = sinusoidal_drift((WINDOW * FS) as usize, FS, 0.1 * k as f64, 0.5, k as f64);
            let samples = beat_samples(&truth, FS).iter().zip(drift).map(|(a, d)| a + d).collect();
            BeatJob {
                beat: Strip {
                    record_id: "r".into(),
                    lead: "II".into(),
                    t_start: k as f64 * WINDOW,
                    duration: WINDOW,
                    fs: FS,
                    samples,
                },
                init: perturbed(&truth.params()),
            }
        })
        .collect();
    let opts = FitOptions::default();
    let seq = fit_beats(&jobs, &reference_config(), &opts, Execution::Sequential);
    let par = fit_beats(&jobs, &reference_config(), &opts, Execution::Parallel);
    assert_eq!(seq, par);
}
