//! Command-line driver: dataset generation, predictor and step-size
//! training, single-scenario pipeline runs, paper-style reproduction tables
//! and a quick self-test.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use rzflab::channel::CorrelationSet;
use rzflab::det_equiv::{CaseId, ProfileSolver};
use rzflab::harness::{
    self, generate_dataset, prepare_trained_set, DistortionRegime, HarnessConfig,
};
use rzflab::link_sim::sense_indicators;
use rzflab::optimizer::{run_pipeline, train_eta_net, GridSearchConfig, ScalingRule};
use rzflab::predictor::{
    read_dataset_csv, train_predictor, write_dataset_csv, PredictorModel, Variant,
};
use rzflab::rng::stream;

#[derive(Parser)]
#[command(name = "rzflab", about = "RZF downlink twin: simulation, prediction and auto-tuning")]
struct Cli {
    /// Flat key = value config file applied before the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled dataset for one regime.
    GenData {
        #[arg(long, default_value_t = 4)]
        case: u8,
        /// Records to emit.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Frames per sensing interval.
        #[arg(long)]
        frames: Option<usize>,
        /// Disable the interference / measured-MSE distortions.
        #[arg(long)]
        clean: bool,
        #[arg(long, default_value = "dataset.csv")]
        out: PathBuf,
    },
    /// Train a performance predictor on a dataset file.
    TrainPp {
        #[arg(long, default_value_t = 4)]
        case: u8,
        #[arg(long, default_value = "dual_wb")]
        variant: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "predictor.rzfp")]
        out: PathBuf,
    },
    /// Train the unfolded step-size network for a stored predictor.
    TrainEta {
        #[arg(long, default_value_t = 4)]
        case: u8,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "eta.dnet")]
        out: PathBuf,
    },
    /// Run the tuning pipeline once on a sampled scenario and print the
    /// result as JSON.
    Pipeline {
        #[arg(long, default_value_t = 4)]
        case: u8,
        #[arg(long, default_value = "model_driven")]
        variant: String,
        /// Stored predictor (defaults to the closed-form model).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Reproduce a paper-style table or figure into CSV files.
    Reproduce {
        /// One of v, vi, vii, viii.
        #[arg(long)]
        table: Option<String>,
        /// One of 5, 6, 7, 8.
        #[arg(long)]
        figure: Option<u8>,
        /// Restrict to one regime (1-4); defaults to all.
        #[arg(long)]
        case: Option<u8>,
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Fast analytic self-checks of the numerical core.
    Selftest,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn load_config(cli_seed: u64, config: &Option<PathBuf>) -> rzflab::Result<HarnessConfig> {
    let mut cfg = HarnessConfig::default();
    if let Some(path) = config {
        cfg.load_overrides(path)?;
    }
    cfg.seed = cli_seed;
    Ok(cfg)
}

fn run(cli: Cli) -> rzflab::Result<()> {
    let cfg = load_config(cli.seed, &cli.config)?;
    match cli.command {
        Command::GenData {
            case,
            samples,
            frames,
            clean,
            out,
        } => {
            let case_id = CaseId::from_index(case)?;
            let regime = if clean {
                DistortionRegime::clean()
            } else {
                DistortionRegime {
                    rho_ratio: cfg.rho_ratio_impaired,
                    measured_mse: true,
                    fixed_practical_snr: false,
                }
            };
            let ds = generate_dataset(
                case_id,
                regime,
                samples,
                cfg.frame_size,
                frames.unwrap_or(cfg.frames_per_interval),
                cfg.seed,
                if clean { 1 } else { 0 },
                None,
            )?;
            let mut f = std::fs::File::create(&out)?;
            write_dataset_csv(&ds, &mut f)?;
            println!("wrote {} records to {}", ds.len(), out.display());
        }
        Command::TrainPp {
            case,
            variant,
            data,
            out,
        } => {
            let case_id = CaseId::from_index(case)?;
            let variant = Variant::from_name(&variant)?;
            let mut f = std::fs::File::open(&data)?;
            let ds = read_dataset_csv(&mut f)?;
            if ds.case_id != case_id {
                return Err(rzflab::Error::InvalidArgument(
                    "dataset case does not match --case".into(),
                ));
            }
            let mut rng = stream(cfg.seed, &[0xC1, case as u64, variant.code_u64()]);
            let mut model = PredictorModel::new(variant, case_id, &mut rng)?;
            let report = train_predictor(&mut model, &ds, &cfg.train, &mut rng)?;
            model.save(&out)?;
            println!(
                "trained {} on {} records: train {:.4e} val {:.4e} test {:.4e} ({} epochs) -> {}",
                variant.name(),
                ds.len(),
                report.train_error,
                report.val_error,
                report.test_error,
                report.epochs_run,
                out.display()
            );
        }
        Command::TrainEta { case, model, out } => {
            let case_id = CaseId::from_index(case)?;
            let model = PredictorModel::load(&model)?;
            if model.case_id != case_id {
                return Err(rzflab::Error::InvalidArgument(
                    "predictor case does not match --case".into(),
                ));
            }
            let mut rng = stream(cfg.seed, &[0xC2, case as u64]);
            let sampler = harness::ScenarioSampler::new(
                case_id,
                DistortionRegime::clean(),
                cfg.frame_size,
                cfg.frames_per_interval,
            );
            let mut ops = Vec::new();
            while ops.len() < cfg.eta_ops {
                let scenario = sampler.draw(&mut rng)?;
                let alpha = harness::scenario::sample_alpha(&mut rng);
                let profile = scenario.solver.profile(alpha)?;
                for k in 0..scenario.cfg.k {
                    ops.push(scenario.solver.input(&profile, k, alpha, scenario.tau[k], 1.0)?);
                }
            }
            let (eta, losses) = train_eta_net(&model, &ops, &cfg.eta_train, &mut rng)?;
            let mut f = std::fs::File::create(&out)?;
            eta.write_to(&mut f)?;
            println!(
                "trained step-size net over {} epochs (final loss {:.4e}) -> {}",
                losses.len(),
                losses.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Pipeline {
            case,
            variant,
            model,
            frames,
        } => {
            let case_id = CaseId::from_index(case)?;
            let variant = Variant::from_name(&variant)?;
            let model = match model {
                Some(path) => PredictorModel::load(&path)?,
                None => PredictorModel::new(
                    Variant::ModelDriven,
                    case_id,
                    &mut stream(cfg.seed, &[0xC3]),
                )?,
            };
            if model.variant != variant && model.variant != Variant::ModelDriven {
                eprintln!(
                    "note: stored predictor is {}, ignoring --variant {}",
                    model.variant.name(),
                    variant.name()
                );
            }
            let regime = DistortionRegime {
                rho_ratio: cfg.rho_ratio_impaired,
                measured_mse: true,
                fixed_practical_snr: false,
            };
            let sampler = harness::ScenarioSampler::new(
                case_id,
                regime,
                cfg.frame_size,
                frames.unwrap_or(cfg.frames_per_interval),
            );
            let mut rng = stream(cfg.seed, &[0xC4, case as u64]);
            let scenario = sampler.draw(&mut rng)?;
            let alpha_sense = harness::scenario::sample_alpha(&mut rng);
            let report = sense_indicators(
                &scenario.cfg,
                &scenario.solver,
                &scenario.channel,
                alpha_sense,
                &vec![1.0; scenario.cfg.k],
                &mut rng,
            )?;
            let y_meas: Vec<[f64; 2]> = (0..scenario.cfg.k)
                .map(|k| [report.indicators.gamma[k], report.indicators.mse_meas[k]])
                .collect();
            let state = run_pipeline(
                &model,
                &scenario.solver,
                &report.inputs,
                &y_meas,
                &cfg.tau_grid,
                &cfg.alpha_grid,
                ScalingRule::ClosedForm,
                cfg.pgd_iterations,
                case_id == CaseId::Case4,
            )?;
            let summary = serde_json::json!({
                "case": case,
                "m": scenario.cfg.m,
                "k": scenario.cfg.k,
                "p_total": scenario.cfg.p_total,
                "true_tau": scenario.tau,
                "tau_hat": state.tau_hat,
                "alpha_star": state.alpha_star,
                "v_star": state.v_star,
                "u_star": state.u_star,
            });
            println!("{}", serde_json::to_string_pretty(&summary).unwrap());
        }
        Command::Reproduce {
            table,
            figure,
            case,
            draws,
            samples,
            frames,
            out,
        } => {
            let mut cfg = cfg;
            if let Some(d) = draws {
                cfg.draws_per_cell = d;
                cfg.sweep_draws = d;
            }
            if let Some(s) = samples {
                cfg.dataset_records = s;
                cfg.sweep_dataset_records = s;
            }
            if let Some(f) = frames {
                cfg.frames_per_interval = f;
            }
            std::fs::create_dir_all(&out)?;
            let cases: Vec<CaseId> = match case {
                Some(c) => vec![CaseId::from_index(c)?],
                None => vec![CaseId::Case1, CaseId::Case2, CaseId::Case3, CaseId::Case4],
            };
            match (table.as_deref(), figure) {
                (Some("v"), None) => reproduce_fitting(&cfg, &cases, &out, false)?,
                (Some("vi"), None) | (Some("vii"), None) | (Some("viii"), None) => {
                    reproduce_tables(&cfg, &cases, &out)?
                }
                (None, Some(5)) => reproduce_fitting(&cfg, &cases, &out, true)?,
                (None, Some(6)) => {
                    let r = harness::run_eta_convergence(CaseId::Case3, 100, 1000, &cfg, 0.01, 0.3)?;
                    harness::experiments::write_eta_csv(
                        &out.join("fig6.csv"),
                        &r,
                        0.01,
                        0.3,
                        cfg.seed,
                        cfg.to_json(),
                    )?;
                    println!(
                        "fig6: pass(abs 0.05) {:.3}, learned {:.4} vs small {:.4}, nonmonotone(0.3) {}",
                        r.pass_fraction, r.final_learned, r.final_small, r.nonmonotone_large
                    );
                }
                (None, Some(7)) => {
                    let ratios = [-20.0, -17.0, -13.0, -10.0, -7.0, -3.0, 0.0];
                    let results =
                        harness::run_imperfect_ratio_sweep(CaseId::Case3, &ratios, &cfg)?;
                    harness::experiments::write_sweep_csv(
                        &out.join("fig7.csv"),
                        &results,
                        cfg.seed,
                        cfg.to_json(),
                    )?;
                    for r in &results {
                        println!(
                            "ratio {:>5} dB: dual {:.3}, model {:.3}, optimal {:.3}",
                            r.ratio_db,
                            r.sr("dual_wb").0,
                            r.sr("model_driven").0,
                            r.sr("optimal").0
                        );
                    }
                }
                (None, Some(8)) => {
                    let results = harness::run_online_learning(CaseId::Case2, (4, 2), &cfg)?;
                    harness::experiments::write_online_csv(
                        &out.join("fig8.csv"),
                        &results,
                        cfg.seed,
                        cfg.to_json(),
                    )?;
                    println!("fig8: {} rows -> {}", results.len(), out.join("fig8.csv").display());
                }
                _ => {
                    return Err(rzflab::Error::InvalidArgument(
                        "pass exactly one of --table {v,vi,vii,viii} or --figure {5,6,7,8}".into(),
                    ))
                }
            }
        }
        Command::Selftest => selftest()?,
    }
    Ok(())
}

fn reproduce_fitting(
    cfg: &HarnessConfig,
    cases: &[CaseId],
    out: &PathBuf,
    clean: bool,
) -> rzflab::Result<()> {
    let regime = if clean {
        DistortionRegime::clean()
    } else {
        DistortionRegime {
            rho_ratio: cfg.rho_ratio_impaired,
            measured_mse: true,
            fixed_practical_snr: false,
        }
    };
    let label = if clean { 1 } else { 0 };
    let mut results = Vec::new();
    for &case in cases {
        let set = prepare_trained_set(case, regime, cfg, label)?;
        let fit = harness::run_fitting_experiment(&set)?;
        for (v, mean, ..) in &fit.cells {
            println!("case {} {:>12}: {mean:.4e}", case.index(), v.name());
        }
        results.push(fit);
    }
    let name = if clean { "fig5.csv" } else { "table_v.csv" };
    harness::experiments::write_fitting_csv(&out.join(name), &results, cfg.seed, cfg.to_json())
}

fn reproduce_tables(cfg: &HarnessConfig, cases: &[CaseId], out: &PathBuf) -> rzflab::Result<()> {
    let regime = DistortionRegime {
        rho_ratio: cfg.rho_ratio_impaired,
        measured_mse: true,
        fixed_practical_snr: false,
    };
    let mut results = Vec::new();
    for &case in cases {
        let set = prepare_trained_set(case, regime, cfg, 0)?;
        let tables = harness::run_optimize_tables(&set, cfg)?;
        for check in tables.ordering_checks() {
            println!(
                "case {} {:<40} {:<22} ({:.4} vs {:.4})",
                case.index(),
                check.label,
                check.status(),
                check.lhs,
                check.rhs
            );
        }
        results.push(tables);
    }
    harness::experiments::write_tables_csv(out, &results, cfg.seed, cfg.to_json())
}

fn selftest() -> rzflab::Result<()> {
    use rzflab::det_equiv::{e_uncorrelated, gamma_mse_case3, gamma_mse_case4, solve_e_fixed_point};
    use rzflab::linalg::CMat;

    let mut failures = 0;
    let mut check = |name: &str, ok: bool| {
        println!("{}: {}", if ok { "PASS" } else { "FAIL" }, name);
        if !ok {
            failures += 1;
        }
    };

    // Closed-form fixed point vs generic solver.
    let theta = CMat::identity(6, 6);
    let thetas: Vec<&CMat> = (0..3).map(|_| &theta).collect();
    let (e, _) = solve_e_fixed_point(&thetas, 0.37)?;
    let closed = e_uncorrelated(2.0, 0.37)?;
    check(
        "fixed point matches closed form (1e-10)",
        (e[0] - closed).abs() <= 1e-10 * closed,
    );

    // Case containment.
    let (g3, m3) = gamma_mse_case3(8, 4, 10.0, 2.5, 0.25, 1.1, 0.1, 10.0, 1.0)?;
    let (g4, m4) = gamma_mse_case4(8, 4, 0.25, 1.1, 0.1, 10.0)?;
    check(
        "equal-power case containment (1e-9)",
        (g3 - g4).abs() <= 1e-9 * g4 && (m3 - m4).abs() <= 1e-9 * m4,
    );

    // Precoder power constraint.
    let mut rng = stream(99, &[0]);
    let cfgs = rzflab::channel::SystemConfig::equal_power(4, 2, 5.0, 1.0, 1.0, 16, 1)?;
    let space = std::sync::Arc::new(rzflab::channel::ChannelSpace::new(
        4,
        2,
        &CorrelationSet::Identity,
    )?);
    let model = rzflab::channel::ChannelModel::new(space, vec![0.2, 0.2])?;
    let chan = model.sample(&mut rng);
    let state = rzflab::link_sim::rzf_precoder(&chan.h_hat, 0.1, &cfgs.power_alloc, 5.0)?;
    let mut tr = 0.0;
    for j in 0..2 {
        tr += cfgs.power_alloc[j] * state.g.column(j).norm_squared();
    }
    check("power constraint equality (1e-9)", (tr - 5.0).abs() <= 5e-9);

    // Uncertainty estimation self-consistency.
    let solver = ProfileSolver::new(
        CaseId::Case3,
        8,
        2,
        20.0,
        1.0,
        vec![12.0, 8.0],
        &CorrelationSet::Identity,
    )?;
    let md = PredictorModel::new(Variant::ModelDriven, CaseId::Case3, &mut rng)?;
    let profile = solver.profile(0.15)?;
    let mut x = solver.input(&profile, 0, 0.15, 0.25, 1.1)?;
    let (g, m) = md.predict(&x)?;
    x.set_tau(0.1);
    let tau_hat = rzflab::optimizer::estimate_tau(
        &md,
        &x,
        &[g, m],
        &GridSearchConfig::tau_default(),
    )?;
    check("tau estimation recovers truth (1.2e-2)", (tau_hat - 0.25).abs() <= 0.012);

    // Step-size network structure.
    let eta = rzflab::optimizer::eta_net(&mut rng);
    check("step-size net has 33 parameters", eta.param_count() == 33);
    check(
        "step-size net uses one exponential",
        eta.exponential_ops_per_forward() == 1,
    );

    if failures > 0 {
        return Err(rzflab::Error::NumericalFailure(format!(
            "{failures} self-test(s) failed"
        )));
    }
    println!("all self-tests passed");
    Ok(())
}
