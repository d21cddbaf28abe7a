use rzflab::det_equiv::{CaseId, InputVector};
use rzflab::harness::{prepare_trained_set, DistortionRegime, HarnessConfig, ScenarioSampler};
use rzflab::harness::scenario::sample_alpha;
use rzflab::link_sim::{evaluate_points, sense_indicators, EvalPoint};
use rzflab::optimizer::{estimate_tau_shared, predicted_sum_rate, GridSearchConfig};
use rzflab::predictor::Variant;
use rzflab::rng::stream;

fn main() {
    let mut cfg = HarnessConfig::default();
    cfg.dataset_records = 4000;
    cfg.frames_per_interval = 2000;
    cfg.seed = 7;
    let case = CaseId::Case4;
    let set = prepare_trained_set(case, DistortionRegime::impaired(), &cfg, 0).unwrap();
    let sampler = ScenarioSampler::new(case, DistortionRegime::impaired(), 256, 2000);
    let grid = GridSearchConfig::tau_default();

    for d in 0..4u64 {
        let mut rng = stream(77, &[d]);
        let scenario = sampler.draw(&mut rng).unwrap();
        let alpha_sense = sample_alpha(&mut rng);
        let report = sense_indicators(&scenario.cfg, &scenario.solver, &scenario.channel,
            alpha_sense, &vec![1.0; scenario.cfg.k], &mut rng).unwrap();
        let y: Vec<[f64;2]> = (0..scenario.cfg.k)
            .map(|k| [report.indicators.gamma[k], report.indicators.mse_meas[k]]).collect();
        println!("--- draw {d}: M={} K={} P={:.1} tau={:.3} alpha_sense={:.4}",
            scenario.cfg.m, scenario.cfg.k, scenario.cfg.p_total, scenario.tau[0], alpha_sense);
        // True simulated SR on an alpha grid.
        let alphas: Vec<f64> = (0..=10).map(|i| 1e-3 + (2.0 - 1e-3) * i as f64 / 10.0).collect();
        let pts: Vec<EvalPoint> = alphas.iter().map(|&alpha| EvalPoint { alpha, u: None }).collect();
        let truth = evaluate_points(&scenario.cfg, &scenario.channel, &pts, 2000, &mut stream(78, &[d])).unwrap();
        print!("  alpha:   ");
        for a in &alphas { print!("{:7.3}", a); }
        println!();
        print!("  sim SR:  ");
        for s in &truth { print!("{:7.3}", s.sr_mean); }
        println!();
        for variant in [Variant::DualWb, Variant::DualW, Variant::DataDriven, Variant::ModelDriven] {
            let model = set.model(variant);
            let tau_hat = estimate_tau_shared(model, &report.inputs, &y, &grid).unwrap();
            let mut xs: Vec<InputVector> = report.inputs.clone();
            for x in xs.iter_mut() { x.set_tau(tau_hat); }
            print!("  {:<12} tau^ {:.3} R_p:", variant.name(), tau_hat);
            for &alpha in &alphas {
                let r = predicted_sum_rate(model, &xs, &scenario.solver, alpha).unwrap();
                print!("{:7.3}", r);
            }
            println!();
        }
    }
}
