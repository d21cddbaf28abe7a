use rzflab::det_equiv::CaseId;
use rzflab::harness::{prepare_trained_set, run_fitting_experiment, run_optimize_tables, DistortionRegime, HarnessConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let records: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4000);
    let frames: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let draws: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(60);
    let case: u8 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(4);
    let mut cfg = HarnessConfig::default();
    cfg.dataset_records = records;
    cfg.frames_per_interval = frames;
    cfg.draws_per_cell = draws;
    cfg.seed = 7;
    if let Some(p) = args.get(5).and_then(|s| s.parse().ok()) { cfg.train.plateau_patience = p; }
    let case_id = CaseId::from_index(case).unwrap();
    let t0 = Instant::now();
    let set = prepare_trained_set(case_id, DistortionRegime::impaired(), &cfg, 0).unwrap();
    println!("prepare: {:.1}s", t0.elapsed().as_secs_f64());
    let fit = run_fitting_experiment(&set).unwrap();
    for (v, mean, se, _) in &fit.cells {
        println!("  fit {:>12}: {:.4e} (se {:.1e})", v.name(), mean, se);
    }
    let t1 = Instant::now();
    let tables = run_optimize_tables(&set, &cfg).unwrap();
    println!("tables ({} draws): {:.1}s", draws, t1.elapsed().as_secs_f64());
    for ((m, se), col) in &tables.sr {
        println!("  SR {:<18} {:.4} (se {:.4})", col.name(), m, se);
    }
    for ((m, se), col) in &tables.mse {
        println!("  MSE {:<18} {:.4} (se {:.4})", col.name(), m, se);
    }
    for ((m, se), v) in &tables.tau_err {
        println!("  tau {:<18} {:.5} (se {:.5})", v.name(), m, se);
    }
    for c in tables.ordering_checks() {
        println!("  {:<44} {}", c.label, c.status());
    }
}
