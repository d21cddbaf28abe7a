use rzflab::channel::{ChannelModel, ChannelSpace, CorrelationModel, CorrelationSet, SystemConfig};
use rzflab::det_equiv::{CaseId, ProfileSolver};
use rzflab::link_sim::{evaluate_points, sense_indicators, EvalPoint};
use rzflab::rng::stream;
use num_complex::Complex64;
use std::sync::Arc;
use std::time::Instant;

fn main() {
    for (m, k, corr) in [
        (8usize, 4usize, CorrelationSet::Identity),
        (4, 2, CorrelationSet::Identity),
        (8, 4, CorrelationSet::Shared(CorrelationModel::new(Complex64::new(0.5, 0.2)).unwrap())),
    ] {
        let cfg = SystemConfig::equal_power(m, k, 20.0, 1.0, 0.125, 256, 5000).unwrap();
        let space = Arc::new(ChannelSpace::new(m, k, &corr).unwrap());
        let chan = ChannelModel::new(space.clone(), vec![0.25; k]).unwrap();
        let case = match corr { CorrelationSet::Identity => CaseId::Case3, _ => CaseId::Case2 };
        let solver = ProfileSolver::from_space(case, &space, 20.0, 1.0, cfg.power_alloc.clone()).unwrap();
        let t = Instant::now();
        let _r = sense_indicators(&cfg, &solver, &chan, 0.1, &vec![1.0; k], &mut stream(1, &[1])).unwrap();
        let dt = t.elapsed().as_secs_f64();
        println!("M={m} K={k} {:?}: sensing 5000 frames: {:.3}s ({:.1} us/frame)", corr_label(&corr), dt, dt * 1e6 / 5000.0);

        let points: Vec<EvalPoint> = (0..11).map(|i| EvalPoint { alpha: 0.01 + 0.1 * i as f64, u: None }).collect();
        let t = Instant::now();
        let _s = evaluate_points(&cfg, &chan, &points, 5000, &mut stream(1, &[2])).unwrap();
        let dt = t.elapsed().as_secs_f64();
        println!("  eval pass (11 points, 5000 frames): {:.3}s", dt);
    }
}

fn corr_label(c: &CorrelationSet) -> &'static str {
    match c { CorrelationSet::Identity => "identity", CorrelationSet::Shared(_) => "shared", _ => "distinct" }
}
