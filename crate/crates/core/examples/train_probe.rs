use rzflab::det_equiv::CaseId;
use rzflab::harness::{
    prepare_trained_set, run_fitting_experiment, DistortionRegime, HarnessConfig,
};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let records: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4000);
    let frames: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(800);
    let case: u8 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(4);
    let mut cfg = HarnessConfig::default();
    cfg.dataset_records = records;
    cfg.frames_per_interval = frames;
    cfg.train.max_epochs = epochs;
    cfg.seed = 7;
    let case_id = CaseId::from_index(case).unwrap();
    let t0 = Instant::now();
    let set = prepare_trained_set(case_id, DistortionRegime::impaired(), &cfg, 0xAA).unwrap();
    let t1 = Instant::now();
    println!("prepare (datagen+train+eta): {:.1}s", (t1 - t0).as_secs_f64());
    let fit = run_fitting_experiment(&set).unwrap();
    for (v, mean, se, n) in &fit.cells {
        println!("case{} {:>12}: test_err {:.4e} (se {:.1e}, n={})", case, v.name(), mean, se, n);
    }
    for (v, r) in &set.fits {
        println!(
            "  {:>12}: train {:.3e} val {:.3e} epochs {}",
            v.name(),
            r.train_error,
            r.val_error,
            r.epochs_run
        );
    }
}
