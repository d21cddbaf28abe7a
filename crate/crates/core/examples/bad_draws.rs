use rzflab::det_equiv::{CaseId, InputVector};
use rzflab::harness::{prepare_trained_set, DistortionRegime, HarnessConfig, ScenarioSampler};
use rzflab::harness::scenario::sample_alpha;
use rzflab::link_sim::{evaluate_points, sense_indicators, EvalPoint};
use rzflab::optimizer::{estimate_tau, predicted_sum_rate, GridSearchConfig};
use rzflab::predictor::Variant;
use rzflab::rng::stream;

fn main() {
    let mut cfg = HarnessConfig::default();
    cfg.dataset_records = 8000;
    cfg.frames_per_interval = 4000;
    cfg.train.plateau_patience = 60;
    cfg.seed = 7;
    let case_id = CaseId::Case1;
    let set = prepare_trained_set(case_id, DistortionRegime::impaired(), &cfg, 0).unwrap();
    let sampler = ScenarioSampler::new(case_id, DistortionRegime::impaired(), 256, 4000);
    let model = set.model(Variant::DualWb);
    let grid = GridSearchConfig::tau_default();
    for d in [7u64, 24, 57, 12] {
        let mut rng = stream(501, &[d]);
        let scenario = sampler.draw(&mut rng).unwrap();
        let alpha_sense = sample_alpha(&mut rng);
        let report = sense_indicators(&scenario.cfg, &scenario.solver, &scenario.channel,
            alpha_sense, &vec![1.0; scenario.cfg.k], &mut rng).unwrap();
        let y: Vec<[f64;2]> = (0..scenario.cfg.k)
            .map(|k| [report.indicators.gamma[k], report.indicators.mse_meas[k]]).collect();
        let mut xs: Vec<InputVector> = report.inputs.clone();
        for (k, x) in xs.iter_mut().enumerate() {
            let t = estimate_tau(model, x, &y[k], &grid).unwrap();
            x.set_tau(t);
        }
        println!("--- draw {d}: M={} K={} P={:.1} tau={:?} tau^={:?} y_gamma={:?}",
            scenario.cfg.m, scenario.cfg.k, scenario.cfg.p_total,
            scenario.tau.iter().map(|t| (t*100.0).round()/100.0).collect::<Vec<_>>(),
            xs.iter().map(|x| (x.tau()*100.0).round()/100.0).collect::<Vec<_>>(),
            y.iter().map(|v| (v[0]*100.0).round()/100.0).collect::<Vec<_>>());
        let alphas: Vec<f64> = (0..=12).map(|i| 1e-3 + (2.0-1e-3)*i as f64/12.0).collect();
        let pts: Vec<EvalPoint> = alphas.iter().map(|&alpha| EvalPoint { alpha, u: None }).collect();
        let truth = evaluate_points(&scenario.cfg, &scenario.channel, &pts, 3000, &mut stream(502, &[d])).unwrap();
        print!("  alpha:  "); for a in &alphas { print!("{:7.3}", a); } println!();
        print!("  sim SR: "); for s in &truth { print!("{:7.3}", s.sr_mean); } println!();
        print!("  dual Rp:"); for &a in &alphas { print!("{:7.3}", predicted_sum_rate(model, &xs, &scenario.solver, a).unwrap()); } println!();
    }
}
