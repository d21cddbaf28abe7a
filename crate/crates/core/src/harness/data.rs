//! Labeled dataset generation: every record is one user's view of one
//! sensing interval (interval-averaged measured indicators paired with the
//! exact input vector that produced them).

use rayon::prelude::*;

use crate::det_equiv::CaseId;
use crate::link_sim::sense_indicators;
use crate::predictor::{Dataset, Sample};
use crate::rng::stream;
use crate::Result;

use super::scenario::{sample_alpha, sample_v, DistortionRegime, ScenarioSampler};

const L_DATA: u64 = 0x01;

/// Generate `n_records` labeled samples for one regime. Each scenario draw
/// contributes K records (one per user). Deterministic in `(seed, labels)`
/// regardless of thread count.
pub fn generate_dataset(
    case_id: CaseId,
    regime: DistortionRegime,
    n_records: usize,
    frame_size: usize,
    n_frames: usize,
    seed: u64,
    label: u64,
    fixed_dims: Option<(usize, usize)>,
) -> Result<Dataset> {
    let mut sampler = ScenarioSampler::new(case_id, regime, frame_size, n_frames);
    if let Some((m, k)) = fixed_dims {
        sampler = sampler.with_dims(m, k);
    }
    // Enough draws even if every draw lands on the smallest K.
    let min_k = 2;
    let n_draws = n_records.div_ceil(min_k);
    let batches: Vec<Result<Vec<Sample>>> = (0..n_draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = stream(seed, &[L_DATA, label, case_id.index() as u64, d as u64]);
            let scenario = sampler.draw(&mut rng)?;
            let alpha = sample_alpha(&mut rng);
            let v: Vec<f64> = match case_id {
                CaseId::Case4 => vec![sample_v(&mut rng); scenario.cfg.k],
                _ => (0..scenario.cfg.k).map(|_| sample_v(&mut rng)).collect(),
            };
            let report = sense_indicators(
                &scenario.cfg,
                &scenario.solver,
                &scenario.channel,
                alpha,
                &v,
                &mut rng,
            )?;
            let mut out = Vec::with_capacity(scenario.cfg.k);
            for k in 0..scenario.cfg.k {
                let mse_label = if regime.measured_mse {
                    report.indicators.mse_meas[k]
                } else {
                    report.indicators.mse_true[k]
                };
                out.push(Sample {
                    x: report.inputs[k].clone(),
                    y: [report.indicators.gamma[k], mse_label],
                });
            }
            Ok(out)
        })
        .collect();
    let mut samples = Vec::with_capacity(n_records + 4);
    for batch in batches {
        let batch = batch?;
        if samples.len() >= n_records {
            break;
        }
        samples.extend(batch);
    }
    samples.truncate(n_records);
    Ok(Dataset { case_id, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_is_deterministic_and_sized() {
        let regime = DistortionRegime::impaired();
        let a = generate_dataset(CaseId::Case3, regime, 24, 32, 4, 5, 7, None).unwrap();
        let b = generate_dataset(CaseId::Case3, regime, 24, 32, 4, 5, 7, None).unwrap();
        assert_eq!(a.len(), 24);
        for (sa, sb) in a.samples.iter().zip(&b.samples) {
            assert_eq!(sa.x.flatten(), sb.x.flatten());
            assert_eq!(sa.y, sb.y);
        }
    }

    #[test]
    fn impairment_deflates_sinr_labels() {
        // Same seed, interference on/off: impaired SINR labels sit strictly
        // below the clean ones.
        let clean = generate_dataset(
            CaseId::Case4,
            DistortionRegime::clean(),
            12,
            64,
            8,
            11,
            3,
            None,
        )
        .unwrap();
        let mut impaired_regime = DistortionRegime::clean();
        impaired_regime.rho_ratio = 1.0 / 8.0;
        let impaired =
            generate_dataset(CaseId::Case4, impaired_regime, 12, 64, 8, 11, 3, None).unwrap();
        let mut below = 0;
        for (c, i) in clean.samples.iter().zip(&impaired.samples) {
            assert_eq!(c.x.flatten(), i.x.flatten());
            if i.y[0] < c.y[0] {
                below += 1;
            }
        }
        assert_eq!(below, 12);
    }

    #[test]
    fn labels_approach_equivalents_at_large_m() {
        // Clean labels at M = 64, beta = 4: mean relative gap to the model
        // values stays below 5%.
        let regime = DistortionRegime::clean();
        let ds = generate_dataset(
            CaseId::Case4,
            regime,
            16,
            64,
            300,
            13,
            9,
            Some((64, 16)),
        )
        .unwrap();
        let mut rel_sum = 0.0;
        for s in &ds.samples {
            let (g_model, _) = s.x.model_prediction().unwrap();
            rel_sum += (s.y[0] - g_model).abs() / g_model;
        }
        let rel = rel_sum / ds.len() as f64;
        // The sampler draws alpha log-uniformly over the whole search range;
        // at the extreme ends the finite-M gap reaches ~6%, while mid-range
        // terms sit near 1-2% (the pinned-point accuracy check lives in the
        // acceptance suite).
        assert!(rel < 0.08, "mean relative gamma gap {rel}");
    }
}
