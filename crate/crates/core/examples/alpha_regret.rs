use rzflab::det_equiv::CaseId;
use rzflab::harness::{prepare_trained_set, DistortionRegime, HarnessConfig, ScenarioSampler};
use rzflab::harness::scenario::sample_alpha;
use rzflab::link_sim::{evaluate_points, sense_indicators, EvalPoint};
use rzflab::optimizer::{run_pipeline, ScalingRule};
use rzflab::predictor::Variant;
use rzflab::rng::stream;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let case: u8 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let patience: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(60);
    let mut cfg = HarnessConfig::default();
    cfg.dataset_records = 8000;
    cfg.frames_per_interval = 4000;
    cfg.train.plateau_patience = patience;
    cfg.seed = 7;
    let case_id = CaseId::from_index(case).unwrap();
    let set = prepare_trained_set(case_id, DistortionRegime::impaired(), &cfg, 0).unwrap();
    let sampler = ScenarioSampler::new(case_id, DistortionRegime::impaired(), 256, 4000);
    let mut reg_dual = Vec::new();
    let mut reg_model = Vec::new();
    let mut log_ratio = Vec::new();
    for d in 0..60u64 {
        let mut rng = stream(501, &[d]);
        let scenario = sampler.draw(&mut rng).unwrap();
        let alpha_sense = sample_alpha(&mut rng);
        let report = sense_indicators(&scenario.cfg, &scenario.solver, &scenario.channel,
            alpha_sense, &vec![1.0; scenario.cfg.k], &mut rng).unwrap();
        let y: Vec<[f64;2]> = (0..scenario.cfg.k)
            .map(|k| [report.indicators.gamma[k], report.indicators.mse_meas[k]]).collect();
        let mut alphas = Vec::new();
        for variant in [Variant::DualWb, Variant::ModelDriven] {
            let state = run_pipeline(set.model(variant), &scenario.solver, &report.inputs, &y,
                &cfg.tau_grid, &cfg.alpha_grid, ScalingRule::ClosedForm, 5, false).unwrap();
            alphas.push(state.alpha_star);
        }
        // oracle alpha via fine grid on the same eval frames
        let grid: Vec<f64> = (0..=40).map(|i| 1e-3 + (2.0-1e-3) * i as f64 / 40.0).collect();
        let mut pts: Vec<EvalPoint> = grid.iter().map(|&alpha| EvalPoint { alpha, u: None }).collect();
        pts.push(EvalPoint { alpha: alphas[0], u: None });
        pts.push(EvalPoint { alpha: alphas[1], u: None });
        let stats = evaluate_points(&scenario.cfg, &scenario.channel, &pts, 4000, &mut stream(502, &[d])).unwrap();
        let (mut best, mut bi) = (f64::MIN, 0);
        for i in 0..=40 { if stats[i].sr_mean > best { best = stats[i].sr_mean; bi = i; } }
        reg_dual.push(best - stats[41].sr_mean);
        reg_model.push(best - stats[42].sr_mean);
        log_ratio.push((alphas[0] / grid[bi]).ln());
    }
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    println!("case {case}: mean regret dual {:.4}, model {:.4}", mean(&reg_dual), mean(&reg_model));
    println!("mean log(alpha_dual / alpha_oracle): {:.3} (neg = dual picks smaller)", mean(&log_ratio));
    let worst: Vec<(usize, f64)> = reg_dual.iter().enumerate().filter(|(_, &r)| r > 0.05).map(|(i, &r)| (i, r)).collect();
    println!("draws with dual regret > 0.05: {:?}", worst);
}
