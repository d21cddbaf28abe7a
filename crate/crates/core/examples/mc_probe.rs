use rzflab::channel::{ChannelModel, ChannelSpace, CorrelationSet, SystemConfig};
use rzflab::det_equiv::gamma_mse_case4;
use rzflab::link_sim::{instantaneous_sinr, rzf_precoder};
use rzflab::rng::stream;
use std::sync::Arc;

fn probe(m: usize, k: usize, tau: f64, alpha: f64, rho_db: f64, n: usize) {
    let p_total = 10f64.powf(rho_db / 10.0);
    let cfg = SystemConfig::equal_power(m, k, p_total, 1.0, 1.0, 16, 1).unwrap();
    let space = Arc::new(ChannelSpace::new(m, k, &CorrelationSet::Identity).unwrap());
    let model = ChannelModel::new(space, vec![tau; k]).unwrap();
    let mut rng = stream(123, &[m as u64]);
    let mut acc = 0.0;
    let mut count = 0usize;
    for _ in 0..n {
        let chan = model.sample(&mut rng);
        let state = rzf_precoder(&chan.h_hat, alpha, &cfg.power_alloc, cfg.p_total).unwrap();
        let g = instantaneous_sinr(&state, &chan, &cfg);
        acc += g.iter().sum::<f64>();
        count += g.len();
    }
    let mc = acc / count as f64;
    let (g0, _) = gamma_mse_case4(m, k, tau, 1.0, alpha, cfg.rho()).unwrap();
    println!(
        "M={m} K={k} tau={tau} alpha={alpha} rho={rho_db}dB: MC={mc:.5} det={g0:.5} rel={:.4}",
        (mc - g0).abs() / g0
    );
}

fn main() {
    probe(64, 16, 0.2, 0.1, 10.0, 2000);
    probe(16, 4, 0.2, 0.1, 10.0, 2000);
    probe(32, 8, 0.2, 0.1, 10.0, 2000);
    // the dataset test regime: tau/alpha random-ish values
    probe(64, 16, 0.35, 0.004, 13.0, 500);
    probe(64, 16, 0.1, 1.5, 13.0, 500);
    probe(64, 16, 0.25, 0.02, 19.0, 500);
}
