use rzflab::channel::CorrelationSet;
use rzflab::det_equiv::{CaseId, InputVector, ProfileSolver};
use rzflab::harness::{DistortionRegime, ScenarioSampler};
use rzflab::optimizer::{optimize_alpha, GridSearchConfig};
use rzflab::predictor::{PredictorModel, Variant};
use rzflab::rng::stream;
use rand::Rng;

fn main() {
    let model = PredictorModel::new(Variant::ModelDriven, CaseId::Case3, &mut stream(1, &[0])).unwrap();
    let sampler = ScenarioSampler::new(CaseId::Case3, DistortionRegime::clean(), 256, 10);
    let grid = GridSearchConfig::alpha_default();
    let mut rng = stream(11, &[0x17, 2]); // same stream family as run_eta_convergence eval
    let mut stats = Vec::new();
    let mut n_osc = 0;
    let mut pass_cold = 0;
    let mut pass_warm = 0;
    let mut n = 0;
    while n < 300 {
        let scenario = sampler.draw(&mut rng).unwrap();
        let alpha0 = (1e-3f64.ln() + rng.gen::<f64>() * (2.0f64 / 1e-3).ln()).exp();
        let profile = scenario.solver.profile(alpha0).unwrap();
        let mut xs: Vec<InputVector> = (0..scenario.cfg.k)
            .map(|k| scenario.solver.input(&profile, k, alpha0, scenario.tau[k], 1.0).unwrap())
            .collect();
        // warm start: optimum at the sensing alpha
        let warm: Vec<f64> = xs.iter().map(|x| x.model_v_star().unwrap()).collect();
        if optimize_alpha(&model, &mut xs, &scenario.solver, &grid).is_err() { continue; }
        for (i, x) in xs.iter().enumerate() {
            let (_, b, q) = x.model_parts().unwrap();
            let a = b * b + q;
            let vstar = x.model_v_star().unwrap();
            let mse_star = (vstar * b - 1.0).powi(2) + q * vstar * vstar;
            let contraction = (1.0 - 0.2 * a).abs().powi(10);
            let excess = |v0: f64| a * (v0 - vstar).powi(2) * contraction;
            if excess(1.0) <= 0.05 * mse_star { pass_cold += 1; }
            if excess(warm[i]) <= 0.05 * mse_star { pass_warm += 1; }
            if a > 1.0 / 0.3 { n_osc += 1; }
            stats.push(a);
            n += 1;
        }
    }
    stats.sort_by(|x, y| x.partial_cmp(y).unwrap());
    println!("n={n} a: min {:.3} p25 {:.3} med {:.3} p75 {:.3} p95 {:.3} max {:.3}",
        stats[0], stats[n/4], stats[n/2], stats[3*n/4], stats[(95*n)/100], stats[n-1]);
    println!("osc-capable (a > 3.33): {n_osc}/{n}");
    println!("reachability pass cold-start: {}/{n}  warm-start: {}/{n}", pass_cold, pass_warm);
}
