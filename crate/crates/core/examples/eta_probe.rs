use rzflab::det_equiv::CaseId;
use rzflab::harness::{run_eta_convergence, HarnessConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let starts: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(4);
    let mut cfg = HarnessConfig::default();
    cfg.seed = 11;
    cfg.eta_train.train.max_epochs = epochs;
    cfg.eta_train.train.learning_rate = lr;
    cfg.eta_train.starts_per_op = starts;
    let t = Instant::now();
    let r = run_eta_convergence(CaseId::Case3, 100, 1000, &cfg, 0.01, 0.3).unwrap();
    println!("elapsed {:.1}s", t.elapsed().as_secs_f64());
    println!("pass abs(<=0.05): {:.3}  rel(<=1.05x): {:.3}  reachable rel cap: {:.3}",
        r.pass_fraction, r.pass_fraction_relative, r.reachable_fraction_relative);
    println!("final learned {:.5} vs fixed small {:.5}", r.final_learned, r.final_small);
    println!("nonmonotone large-rate traces: {} (over 1000)", r.nonmonotone_large);
    println!("monotone learned traces: {}/{}", r.monotone_learned, r.points);
    println!("learned trace: {:?}", r.trace_learned.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>());
    println!("small trace:   {:?}", r.trace_small.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>());
    println!("large trace:   {:?}", r.trace_large.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>());
}
