//! Auto-tuning algorithms on a frozen performance predictor.
//!
//! Three stages, run in pipeline order: CSI-uncertainty estimation by nested
//! grid search on the prediction residual, regularization-term search
//! maximizing the predicted sum rate (the numerical sub-vectors are re-solved
//! for every candidate), and receive power scaling by projected gradient
//! descent whose per-step update rate comes from a small learned network
//! (deep unfolding). The unfolded training backpropagates the summed
//! per-iteration predicted MSE through every step, including the dependence
//! of later gradients on earlier updates.
//!
//! Also included: closed-form stationary points of the per-user residual
//! objective as a function of tau in the general regime, used as analytical
//! validators.

use nalgebra::DMatrix;
use rand::Rng;

use crate::det_equiv::{InputVector, ProfileSolver};
use crate::nn::{Activation, DenseNet, LayerSpec, Mode, TrainConfig};
use crate::predictor::PredictorModel;
use crate::{invalid, numerical, Result};

/// Nested grid refinement settings.
#[derive(Debug, Clone, Copy)]
pub struct GridSearchConfig {
    pub lo: f64,
    pub hi: f64,
    /// Division number: each level evaluates `n_div + 1` points.
    pub n_div: usize,
    /// Refinement levels.
    pub n_iter: usize,
}

impl GridSearchConfig {
    pub fn new(lo: f64, hi: f64, n_div: usize, n_iter: usize) -> Result<Self> {
        if !(lo < hi) {
            return Err(invalid("grid search needs lo < hi"));
        }
        if n_div < 2 || n_iter < 1 {
            return Err(invalid("grid search needs n_div >= 2 and n_iter >= 1"));
        }
        Ok(Self {
            lo,
            hi,
            n_div,
            n_iter,
        })
    }

    /// Default tau search range, matching the scenario uncertainty range.
    pub fn tau_default() -> Self {
        Self {
            lo: 0.1,
            hi: 0.4,
            n_div: 10,
            n_iter: 2,
        }
    }

    /// Conservative tau search over the whole admissible interval.
    pub fn tau_full_range() -> Self {
        Self {
            lo: 0.0,
            hi: 1.0,
            n_div: 10,
            n_iter: 2,
        }
    }

    /// Default regularization-term search range.
    pub fn alpha_default() -> Self {
        Self {
            lo: 1e-3,
            hi: 2.0,
            n_div: 10,
            n_iter: 2,
        }
    }
}

/// Nested grid search. Evaluates `n_iter * (n_div + 1)` points; at each level
/// the bracket shrinks to the two neighbors of the best point (clamped at the
/// grid ends). Ties resolve to the lowest index. Returns the best point of
/// the last level.
pub fn grid_search(
    cfg: &GridSearchConfig,
    maximize: bool,
    mut score: impl FnMut(f64) -> f64,
) -> (f64, usize) {
    let mut lo = cfg.lo;
    let mut hi = cfg.hi;
    let n = cfg.n_div;
    let mut evals = 0usize;
    let mut best_x = lo;
    for _ in 0..cfg.n_iter {
        let mut best_idx = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        let mut points = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let x = lo + (hi - lo) * i as f64 / n as f64;
            points.push(x);
            let raw = score(x);
            evals += 1;
            let s = if maximize { raw } else { -raw };
            if s > best_score {
                best_score = s;
                best_idx = i;
            }
        }
        best_x = points[best_idx];
        lo = points[best_idx.saturating_sub(1)];
        hi = points[(best_idx + 1).min(n)];
    }
    (best_x, evals)
}

/// Residual objective of one user: weighted squared distance between the
/// predicted and measured indicator pairs. Weights default to `(1, 1)`.
pub fn objective_j(
    model: &PredictorModel,
    x: &InputVector,
    y_meas: &[f64; 2],
    weights: [f64; 2],
) -> Result<f64> {
    let (pg, pm) = model.predict(x)?;
    let dg = pg - y_meas[0];
    let dm = pm - y_meas[1];
    Ok(weights[0] * dg * dg + weights[1] * dm * dm)
}

/// Estimate one user's CSI uncertainty by nested grid search on the residual
/// objective. Users are decoupled; call once per user.
pub fn estimate_tau(
    model: &PredictorModel,
    x: &InputVector,
    y_meas: &[f64; 2],
    grid: &GridSearchConfig,
) -> Result<f64> {
    estimate_tau_weighted(model, x, y_meas, grid, [1.0, 1.0])
}

pub fn estimate_tau_weighted(
    model: &PredictorModel,
    x: &InputVector,
    y_meas: &[f64; 2],
    grid: &GridSearchConfig,
    weights: [f64; 2],
) -> Result<f64> {
    if grid.lo < 0.0 || grid.hi > 1.0 {
        return Err(invalid("tau search bounds must lie within [0, 1]"));
    }
    let mut probe = x.clone();
    let (tau_hat, _) = grid_search(grid, false, |tau| {
        probe.set_tau(tau);
        objective_j(model, &probe, y_meas, weights).unwrap_or(f64::INFINITY)
    });
    Ok(tau_hat)
}

/// Estimate a single shared uncertainty by minimizing the summed residual of
/// all users (used when the regime ties every user to one tau).
pub fn estimate_tau_shared(
    model: &PredictorModel,
    xs: &[InputVector],
    y_meas: &[[f64; 2]],
    grid: &GridSearchConfig,
) -> Result<f64> {
    if grid.lo < 0.0 || grid.hi > 1.0 {
        return Err(invalid("tau search bounds must lie within [0, 1]"));
    }
    let mut probes: Vec<InputVector> = xs.to_vec();
    let (tau_hat, _) = grid_search(grid, false, |tau| {
        let mut total = 0.0;
        for (probe, y) in probes.iter_mut().zip(y_meas) {
            probe.set_tau(tau);
            total += objective_j(model, probe, y, [1.0, 1.0]).unwrap_or(f64::INFINITY);
        }
        total
    });
    Ok(tau_hat)
}

/// Search the regularization term maximizing the predicted sum rate. Every
/// candidate re-solves the numerical parameter set and refreshes each user's
/// numerical sub-vector. Candidates where the solve fails score negative
/// infinity. On success the input vectors are updated in place with the
/// winning term.
pub fn optimize_alpha(
    model: &PredictorModel,
    xs: &mut [InputVector],
    solver: &ProfileSolver,
    grid: &GridSearchConfig,
) -> Result<f64> {
    if !(grid.lo > 0.0) {
        return Err(invalid("alpha search bounds must be positive"));
    }
    let mut best_seen = f64::NEG_INFINITY;
    let (alpha_star, _) = grid_search(grid, true, |alpha| {
        let score = predicted_sum_rate(model, xs, solver, alpha).unwrap_or(f64::NEG_INFINITY);
        if score > best_seen {
            best_seen = score;
        }
        score
    });
    if best_seen == f64::NEG_INFINITY {
        return Err(numerical("no feasible regularization term on the grid"));
    }
    let profile = solver.profile(alpha_star)?;
    for (user, x) in xs.iter_mut().enumerate() {
        x.set_alpha(alpha_star, &profile, user)?;
    }
    Ok(alpha_star)
}

/// Predicted sum rate at a candidate regularization term.
pub fn predicted_sum_rate(
    model: &PredictorModel,
    xs: &[InputVector],
    solver: &ProfileSolver,
    alpha: f64,
) -> Result<f64> {
    let profile = solver.profile(alpha)?;
    let mut total = 0.0;
    for (user, x) in xs.iter().enumerate() {
        let mut probe = x.clone();
        probe.set_alpha(alpha, &profile, user)?;
        let (gamma, _) = model.predict(&probe)?;
        total += (1.0 + gamma.max(0.0)).ln();
    }
    Ok(total)
}

/// Trace of one projected-gradient run.
#[derive(Debug, Clone)]
pub struct PgdTrace {
    /// Scaling iterates, `L + 1` entries including the initial point.
    pub v: Vec<f64>,
    /// Predicted MSE at each iterate.
    pub mse: Vec<f64>,
}

impl PgdTrace {
    pub fn final_v(&self) -> f64 {
        *self.v.last().unwrap()
    }

    pub fn final_mse(&self) -> f64 {
        *self.mse.last().unwrap()
    }
}

/// Layer layout of the update-rate network: 2 linear inputs, 8 ReLU hidden
/// units, one output clamped to `[1e-3, 1e-1]` (33 trainable parameters).
pub fn eta_layer_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::new(2, Activation::Linear, false),
        LayerSpec::new(8, Activation::Relu, false),
        LayerSpec::new(1, Activation::ClampedPow10, false),
    ]
}

/// Fresh update-rate network. The output bias starts at -2 so the initial
/// rate is 1e-2, inside the clamp band where gradients flow.
pub fn eta_net(rng: &mut impl Rng) -> DenseNet {
    let mut net = DenseNet::new(eta_layer_specs(), rng).expect("eta topology is valid");
    let l = net.specs().len() - 1;
    let w = DMatrix::from_fn(net.specs()[l - 1].width, 1, |_, _| {
        0.1 * rng.gen_range(-1.0..1.0)
    });
    net.set_output_layer(w, nalgebra::DVector::from_element(1, -2.0))
        .unwrap();
    net
}

fn eta_forward(eta: &DenseNet, v: f64, g: f64) -> Result<f64> {
    let x = DMatrix::from_row_slice(1, 2, &[v, g]);
    Ok(eta.forward(&x, Mode::Infer)?[(0, 0)])
}

/// Deep-unfolded projected gradient descent: per iteration the rate network
/// maps `[v, grad]` to a step size, then `v <- max(v - eta * grad, 0)`.
pub fn unfolded_pgd(
    model: &PredictorModel,
    x: &InputVector,
    eta: &DenseNet,
    iterations: usize,
) -> Result<PgdTrace> {
    pgd_run(model, x, iterations, |v, g| eta_forward(eta, v, g))
}

/// Projected gradient descent with a constant update rate.
pub fn vanilla_pgd(
    model: &PredictorModel,
    x: &InputVector,
    eta: f64,
    iterations: usize,
) -> Result<PgdTrace> {
    pgd_run(model, x, iterations, |_, _| Ok(eta))
}

fn pgd_run(
    model: &PredictorModel,
    x: &InputVector,
    iterations: usize,
    mut rate: impl FnMut(f64, f64) -> Result<f64>,
) -> Result<PgdTrace> {
    if iterations == 0 {
        return Err(invalid("need at least one iteration"));
    }
    let mut probe = x.clone();
    let mut v = x.v();
    let (mse0, mut grad, _) = model.mse_value_grad_hess(&probe)?;
    let mut trace = PgdTrace {
        v: vec![v],
        mse: vec![mse0],
    };
    for _ in 0..iterations {
        let eta = rate(v, grad)?;
        v = (v - eta * grad).max(0.0);
        probe.set_v(v);
        let (mse, g, _) = model.mse_value_grad_hess(&probe)?;
        grad = g;
        trace.v.push(v);
        trace.mse.push(mse);
    }
    Ok(trace)
}

/// Training settings for the unfolded optimizer.
#[derive(Debug, Clone)]
pub struct EtaTrainConfig {
    /// Initial-scaling distribution bounds (uniform).
    pub v0_lo: f64,
    pub v0_hi: f64,
    /// Initial points drawn per operating point.
    pub starts_per_op: usize,
    /// Unrolled iterations.
    pub iterations: usize,
    pub train: TrainConfig,
}

impl Default for EtaTrainConfig {
    fn default() -> Self {
        Self {
            v0_lo: 0.1,
            v0_hi: 3.0,
            starts_per_op: 4,
            iterations: 5,
            train: TrainConfig {
                learning_rate: 1e-3,
                batch_size: 64,
                max_epochs: 400,
                plateau_tol: 1e-6,
                plateau_patience: 30,
                ..TrainConfig::default()
            },
        }
    }
}

/// Mean summed per-iteration predicted MSE of an unfolded run over a sample
/// set; the quantity the training minimizes.
pub fn unfolded_objective(
    model: &PredictorModel,
    samples: &[(InputVector, f64)],
    eta: &DenseNet,
    iterations: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for (x, v0) in samples {
        let mut probe = x.clone();
        probe.set_v(*v0);
        let trace = unfolded_pgd(model, &probe, eta, iterations)?;
        total += trace.mse[1..].iter().sum::<f64>();
    }
    Ok(total / samples.len() as f64)
}

/// Train the update-rate network endogenously: no external data, just random
/// initial scalings and operating points scored through the frozen predictor.
/// Gradients flow through the whole unrolled chain, including the dependence
/// of each step's gradient on the previous update (the predicted-MSE second
/// derivative is exact almost everywhere).
pub fn train_eta_net(
    model: &PredictorModel,
    ops: &[InputVector],
    cfg: &EtaTrainConfig,
    rng: &mut impl Rng,
) -> Result<(DenseNet, Vec<f64>)> {
    if ops.is_empty() {
        return Err(invalid("need at least one operating point"));
    }
    let mut eta = eta_net(rng);
    let mut samples: Vec<(InputVector, f64)> = Vec::new();
    for op in ops {
        for _ in 0..cfg.starts_per_op {
            let v0 = rng.gen_range(cfg.v0_lo..cfg.v0_hi);
            samples.push((op.clone(), v0));
        }
    }
    let n = samples.len();
    let mut epoch_losses = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut best_params = eta.params_flat();
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.train.max_epochs {
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.train.batch_size) {
            let mut grad_acc = vec![0.0; eta.param_count()];
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let (x, v0) = &samples[idx];
                let mut probe = x.clone();
                probe.set_v(*v0);
                let (loss, grads) =
                    unrolled_loss_and_grads(model, &probe, &eta, cfg.iterations)?;
                if !loss.is_finite() {
                    return Err(numerical(format!(
                        "unrolled loss became non-finite at epoch {epoch}"
                    )));
                }
                batch_loss += loss;
                for (a, g) in grad_acc.iter_mut().zip(&grads) {
                    *a += g;
                }
            }
            let scale = cfg.train.learning_rate / chunk.len() as f64;
            let mut params = eta.params_flat();
            for (p, g) in params.iter_mut().zip(&grad_acc) {
                *p -= scale * g;
            }
            eta.set_params_flat(&params)?;
            epoch_loss += batch_loss;
        }
        epoch_loss /= n as f64;
        epoch_losses.push(epoch_loss);
        if epoch_loss < best_loss - cfg.train.plateau_tol {
            best_loss = epoch_loss;
            best_params = eta.params_flat();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.train.plateau_patience {
                break;
            }
        }
    }
    eta.set_params_flat(&best_params)?;
    Ok((eta, epoch_losses))
}

/// One sample's unrolled loss `sum_l mse(v_l)` and its gradient with respect
/// to the rate-network parameters.
fn unrolled_loss_and_grads(
    model: &PredictorModel,
    x0: &InputVector,
    eta: &DenseNet,
    iterations: usize,
) -> Result<(f64, Vec<f64>)> {
    struct Step {
        v_prev: f64,
        grad_prev: f64,
        hess_prev: f64,
        eta: f64,
        active: bool,
        v: f64,
        mse: f64,
        grad: f64,
    }
    let mut probe = x0.clone();
    let mut v = x0.v();
    let (_, mut grad, mut hess) = model.mse_value_grad_hess(&probe)?;
    let mut steps: Vec<Step> = Vec::with_capacity(iterations);
    let mut loss = 0.0;
    for _ in 0..iterations {
        let rate = eta_forward(eta, v, grad)?;
        let s = v - rate * grad;
        let active = s > 0.0;
        let v_next = s.max(0.0);
        probe.set_v(v_next);
        let (mse, g_next, h_next) = model.mse_value_grad_hess(&probe)?;
        loss += mse;
        steps.push(Step {
            v_prev: v,
            grad_prev: grad,
            hess_prev: hess,
            eta: rate,
            active,
            v: v_next,
            mse,
            grad: g_next,
        });
        v = v_next;
        grad = g_next;
        hess = h_next;
    }
    let _ = hess;

    // Reverse sweep: lambda is d loss / d v_l.
    let mut grad_flat = vec![0.0; eta.param_count()];
    let mut lambda = 0.0;
    for step in steps.iter().rev() {
        lambda += step.grad; // loss term mse(v_l)
        let lam_s = if step.active { lambda } else { 0.0 };
        // Through eta = N(v_prev, grad_prev): upstream on the eta output is
        // lam_s * d s / d eta = -lam_s * grad_prev.
        let up = -lam_s * step.grad_prev;
        let trace = eta.forward_cached(
            &DMatrix::from_row_slice(1, 2, &[step.v_prev, step.grad_prev]),
            Mode::Infer,
        )?;
        let grads = eta.backward(&trace, &DMatrix::from_element(1, 1, up));
        for (a, g) in grad_flat.iter_mut().zip(eta.gradients_flat(&grads)) {
            *a += g;
        }
        // d v_l / d v_{l-1} through the explicit v term, the rate inputs and
        // the gradient recomputation.
        let dn_dv = grads.input[(0, 0)]; // already scaled by `up`
        let dn_dg = grads.input[(0, 1)];
        lambda = lam_s * (1.0 - step.eta * step.hess_prev) + dn_dv + dn_dg * step.hess_prev;
        let _ = step.v;
        let _ = step.mse;
    }
    Ok((loss, grad_flat))
}

/// State of one pipeline pass for a scenario.
#[derive(Debug, Clone)]
pub struct PipelineState {
    pub x: Vec<InputVector>,
    pub tau_hat: Vec<f64>,
    pub alpha_star: f64,
    pub v_star: Vec<f64>,
    pub u_star: Vec<f64>,
}

/// Step-size source for the scaling stage.
pub enum ScalingRule<'a> {
    Unfolded(&'a DenseNet),
    Fixed(f64),
    /// Closed-form optimum of the model part (used by oracle-style baselines).
    ClosedForm,
}

/// Run the full tuning cascade on one sensing report: estimate per-user
/// uncertainties, search the regularization term, optimize the receive
/// scalings, and map them back to receiver gains
/// `u_k = v_k sqrt(Psi0 / P) / sqrt(p_k)`.
pub fn run_pipeline(
    model: &PredictorModel,
    solver: &ProfileSolver,
    inputs: &[InputVector],
    y_meas: &[[f64; 2]],
    tau_grid: &GridSearchConfig,
    alpha_grid: &GridSearchConfig,
    scaling: ScalingRule<'_>,
    pgd_iterations: usize,
    shared_tau: bool,
) -> Result<PipelineState> {
    let mut xs: Vec<InputVector> = inputs.to_vec();
    // Stage 1: uncertainty estimation.
    let tau_hat: Vec<f64> = if shared_tau {
        let t = estimate_tau_shared(model, &xs, y_meas, tau_grid)?;
        vec![t; xs.len()]
    } else {
        xs.iter()
            .zip(y_meas)
            .map(|(x, y)| estimate_tau(model, x, y, tau_grid))
            .collect::<Result<_>>()?
    };
    for (x, &t) in xs.iter_mut().zip(&tau_hat) {
        x.set_tau(t);
    }
    // Stage 2: regularization term.
    let alpha_star = optimize_alpha(model, &mut xs, solver, alpha_grid)?;
    // Stage 3: receive scaling, decoupled per user.
    let mut v_star = Vec::with_capacity(xs.len());
    for x in xs.iter_mut() {
        let v = match &scaling {
            ScalingRule::Unfolded(eta) => unfolded_pgd(model, x, eta, pgd_iterations)?.final_v(),
            ScalingRule::Fixed(rate) => vanilla_pgd(model, x, *rate, pgd_iterations)?.final_v(),
            ScalingRule::ClosedForm => x.model_v_star()?,
        };
        x.set_v(v);
        v_star.push(v);
    }
    let profile = solver.profile(alpha_star)?;
    let u_star: Vec<f64> = v_star
        .iter()
        .enumerate()
        .map(|(k, &v)| v * (profile.psi0 / solver.p_total()).sqrt() / solver.p()[k].sqrt())
        .collect();
    Ok(PipelineState {
        x: xs,
        tau_hat,
        alpha_star,
        v_star,
        u_star,
    })
}

/// Closed-form stationary points of the per-user residual objective in the
/// general regime, split by indicator branch.
#[derive(Debug, Clone, Default)]
pub struct StationaryPoints {
    /// Root of `gamma(tau) = gamma_m` (residual zero, global minimum).
    pub tau1_gamma: Option<f64>,
    /// Second SINR-branch stationary point. The SINR equivalent is strictly
    /// decreasing on (0, 1), so no interior stationary point beyond the
    /// residual zero exists; kept in the interface for symmetry.
    pub tau2_gamma: Option<f64>,
    /// Root of `mse(tau) = mse_m` (residual zero).
    pub tau1_mse: Option<f64>,
    /// Interior stationary point of the MSE equivalent itself.
    pub tau2_mse: Option<f64>,
}

/// Inputs describing one general-regime operating point for user k.
#[derive(Debug, Clone, Copy)]
pub struct Case1Point {
    pub e: f64,
    pub upsilon: f64,
    pub psi0: f64,
    pub p_k: f64,
    pub rho: f64,
    pub v: f64,
}

impl Case1Point {
    pub fn gamma(&self, tau: f64) -> f64 {
        crate::det_equiv::gamma_mse_case1(self.e, self.upsilon, self.psi0, self.p_k, tau, self.v, self.rho)
            .0
    }

    pub fn mse(&self, tau: f64) -> f64 {
        crate::det_equiv::gamma_mse_case1(self.e, self.upsilon, self.psi0, self.p_k, tau, self.v, self.rho)
            .1
    }
}

const ROOT_EDGE: f64 = 1e-9;

/// Compute the closed-form stationary-point candidates and keep only the
/// ones that genuinely zero the corresponding residual derivative.
/// Nonexistent roots are reported absent, never fabricated.
pub fn appendix_stationary_points(pt: &Case1Point, y_meas: &[f64; 2]) -> StationaryPoints {
    let mut out = StationaryPoints::default();
    let e = pt.e;
    let one_e = 1.0 + e;
    let one_e2 = one_e * one_e;
    let c = 1.0 - one_e2; // negative
    let gamma_m = y_meas[0];
    let mse_m = y_meas[1];

    // SINR branch: gamma(tau) = gamma_m has
    // tau^2 = (p e^2 - gamma_m (Upsilon + (Psi/rho)(1+e)^2))
    //       / (p e^2 + gamma_m Upsilon ((1+e)^2 - 1)).
    let d0 = pt.upsilon + pt.psi0 / pt.rho * one_e2;
    let num = pt.p_k * e * e - gamma_m * d0;
    let den = pt.p_k * e * e + gamma_m * pt.upsilon * (one_e2 - 1.0);
    if den > 0.0 {
        let t2 = num / den;
        if (0.0..=1.0).contains(&t2) {
            let tau = t2.sqrt();
            if tau > ROOT_EDGE
                && tau < 1.0 - ROOT_EDGE
                && (pt.gamma(tau) - gamma_m).abs() <= 1e-8 * (1.0 + gamma_m.abs())
            {
                out.tau1_gamma = Some(tau);
            }
        }
    }
    // The SINR equivalent is strictly decreasing in tau on (0, 1): its only
    // interior stationary residual point is the residual zero above.
    out.tau2_gamma = None;

    // MSE branch, in x = sqrt(1 - tau^2):
    // A x^2 - 2 x e(1+e)/v + (1+e)^2 B = 0 with
    // A = e^2 + (Upsilon/p) (1 - (1+e)^2), B = (1-mse_m)/v^2 + (Upsilon + Psi/rho)/p.
    if pt.v > 0.0 {
        let a = e * e + pt.upsilon / pt.p_k * c;
        let b = (1.0 - mse_m) / (pt.v * pt.v) + (pt.upsilon + pt.psi0 / pt.rho) / pt.p_k;
        let rad = e * e / (pt.v * pt.v) - a * b;
        if rad >= 0.0 && a.abs() > 1e-14 {
            let sq = rad.sqrt();
            for root in [(e / pt.v + sq) / a, (e / pt.v - sq) / a] {
                let x = one_e * root;
                if x > ROOT_EDGE && x <= 1.0 {
                    let tau = (1.0 - x * x).max(0.0).sqrt();
                    if tau > ROOT_EDGE
                        && tau < 1.0 - ROOT_EDGE
                        && (pt.mse(tau) - mse_m).abs() <= 1e-8 * (1.0 + mse_m.abs())
                    {
                        out.tau1_mse = Some(tau);
                        break;
                    }
                }
            }
        }
        // Interior stationary point of the MSE equivalent itself:
        // x* = e (1+e) / (v A), valid when A > 0 and x* < 1.
        if a > 0.0 {
            let x_star = e * one_e / (pt.v * a);
            if x_star > ROOT_EDGE && x_star < 1.0 - ROOT_EDGE {
                let tau = (1.0 - x_star * x_star).sqrt();
                // The derivative factor v e /((1+e) x) - v^2 A / (1+e)^2
                // must vanish at the candidate.
                let factor = pt.v * e / (one_e * x_star) - pt.v * pt.v * a / one_e2;
                if tau > ROOT_EDGE && factor.abs() <= 1e-8 * (1.0 + a.abs()) {
                    out.tau2_mse = Some(tau);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::CorrelationSet;
    use crate::det_equiv::{CaseId, ProfileSolver};
    use crate::predictor::Variant;
    use crate::rng::stream;
    use approx::assert_relative_eq;

    #[test]
    fn grid_refinement_width_and_count() {
        let cfg = GridSearchConfig::new(0.0, 1.0, 10, 2).unwrap();
        let mut evals = Vec::new();
        let (x, n) = grid_search(&cfg, false, |x| {
            evals.push(x);
            (x - 0.47).abs()
        });
        assert_eq!(n, 22);
        // Level 2 points live inside the two-cell bracket around 0.5.
        let level2 = &evals[11..];
        let width = level2.last().unwrap() - level2.first().unwrap();
        assert_relative_eq!(width, 0.2, epsilon = 1e-12);
        assert!(level2.iter().all(|&p| (0.4..=0.6).contains(&p)));
        assert!((x - 0.47).abs() <= 0.01 + 1e-12);
    }

    #[test]
    fn grid_clamps_at_edges() {
        let cfg = GridSearchConfig::new(0.0, 1.0, 10, 2).unwrap();
        let (x, _) = grid_search(&cfg, false, |x| x);
        assert_relative_eq!(x, 0.0, epsilon = 1e-12);
        let (x, _) = grid_search(&cfg, true, |x| x);
        assert_relative_eq!(x, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn grid_tie_breaks_to_lowest_index() {
        let cfg = GridSearchConfig::new(0.0, 1.0, 4, 1).unwrap();
        let (x, _) = grid_search(&cfg, false, |_| 1.0);
        assert_relative_eq!(x, 0.0);
    }

    #[test]
    fn argmax_invariant_to_positive_scaling() {
        let cfg = GridSearchConfig::new(0.1, 2.0, 10, 2).unwrap();
        let f = |x: f64| -(x - 0.73) * (x - 0.73) + 3.0;
        let (a, _) = grid_search(&cfg, true, f);
        let (b, _) = grid_search(&cfg, true, |x| 7.5 * f(x));
        assert_eq!(a, b);
    }

    fn case3_setup() -> (ProfileSolver, PredictorModel) {
        let solver = ProfileSolver::new(
            CaseId::Case3,
            8,
            2,
            20.0,
            1.0,
            vec![12.0, 8.0],
            &CorrelationSet::Identity,
        )
        .unwrap();
        let model =
            PredictorModel::new(Variant::ModelDriven, CaseId::Case3, &mut stream(80, &[0]))
                .unwrap();
        (solver, model)
    }

    #[test]
    fn objective_zero_at_exact_labels() {
        let (solver, model) = case3_setup();
        let profile = solver.profile(0.15).unwrap();
        let x = solver.input(&profile, 0, 0.15, 0.25, 1.1).unwrap();
        let (g, m) = model.predict(&x).unwrap();
        let j = objective_j(&model, &x, &[g, m], [1.0, 1.0]).unwrap();
        assert!(j < 1e-20);
        assert!(objective_j(&model, &x, &[g + 0.5, m], [1.0, 1.0]).unwrap() > 0.0);
    }

    #[test]
    fn tau_estimation_recovers_truth_on_exact_model() {
        let (solver, model) = case3_setup();
        let profile = solver.profile(0.15).unwrap();
        let grid = GridSearchConfig::tau_default();
        for &tau_true in &[0.15, 0.25, 0.35] {
            let mut x = solver.input(&profile, 0, 0.15, 0.2, 1.1).unwrap();
            let mut gen = x.clone();
            gen.set_tau(tau_true);
            let y = {
                let (g, m) = model.predict(&gen).unwrap();
                [g, m]
            };
            x.set_tau(grid.lo); // estimation does not know the truth
            let tau_hat = estimate_tau(&model, &x, &y, &grid).unwrap();
            assert!(
                (tau_hat - tau_true).abs() <= 0.012,
                "tau_hat {tau_hat} vs {tau_true}"
            );
            // J at the truth beats every distant grid value.
            let j_true = {
                let mut probe = x.clone();
                probe.set_tau(tau_true);
                objective_j(&model, &probe, &y, [1.0, 1.0]).unwrap()
            };
            for i in 0..=10 {
                let tau = 0.1 + 0.3 * i as f64 / 10.0;
                if (tau - tau_true).abs() >= 0.05 {
                    let mut probe = x.clone();
                    probe.set_tau(tau);
                    let j = objective_j(&model, &probe, &y, [1.0, 1.0]).unwrap();
                    assert!(j_true < j, "J({tau_true}) = {j_true} vs J({tau}) = {j}");
                }
            }
        }
    }

    #[test]
    fn tau_on_grid_point_is_recovered_exactly() {
        let (solver, model) = case3_setup();
        let profile = solver.profile(0.15).unwrap();
        let grid = GridSearchConfig::tau_default();
        let tau_true = 0.25; // a level-1 grid point of [0.1, 0.4] / 10
        let mut x = solver.input(&profile, 0, 0.15, 0.1, 1.1).unwrap();
        let mut gen = x.clone();
        gen.set_tau(tau_true);
        let (g, m) = model.predict(&gen).unwrap();
        x.set_tau(0.1);
        let tau_hat = estimate_tau(&model, &x, &[g, m], &grid).unwrap();
        assert_relative_eq!(tau_hat, tau_true, epsilon = 1e-12);
    }

    #[test]
    fn alpha_search_beats_fixed_candidates() {
        let (solver, model) = case3_setup();
        let profile = solver.profile(0.1).unwrap();
        let mut xs: Vec<_> = (0..2)
            .map(|k| solver.input(&profile, k, 0.1, 0.25, 1.0).unwrap())
            .collect();
        let grid = GridSearchConfig::alpha_default();
        let alpha_star = optimize_alpha(&model, &mut xs, &solver, &grid).unwrap();
        let r_star = predicted_sum_rate(&model, &xs, &solver, alpha_star).unwrap();
        for &alpha in &[0.01, 0.1, 1.0] {
            let r = predicted_sum_rate(&model, &xs, &solver, alpha).unwrap();
            assert!(
                r_star >= r - 1e-12,
                "R({alpha_star}) = {r_star} < R({alpha}) = {r}"
            );
        }
        assert_relative_eq!(xs[0].alpha(), alpha_star);
    }

    #[test]
    fn single_user_search_follows_the_monotone_model() {
        // K = 1, tau = 0: the model sum rate reduces to
        // rho (beta - (e/(1+e))^2), strictly increasing in alpha since e
        // decreases; the refinement must land in the last cell. (The true
        // single-user SINR is invariant in alpha, so the choice is harmless.)
        let solver = ProfileSolver::new(
            CaseId::Case3,
            4,
            1,
            10.0,
            1.0,
            vec![10.0],
            &CorrelationSet::Identity,
        )
        .unwrap();
        let model =
            PredictorModel::new(Variant::ModelDriven, CaseId::Case3, &mut stream(81, &[0]))
                .unwrap();
        let profile = solver.profile(0.1).unwrap();
        let mut xs = vec![solver.input(&profile, 0, 0.1, 0.0, 1.0).unwrap()];
        let grid = GridSearchConfig::alpha_default();
        let alpha_star = optimize_alpha(&model, &mut xs, &solver, &grid).unwrap();
        assert_relative_eq!(alpha_star, grid.hi, epsilon = 1e-12);
        // Monotonicity itself.
        let r_lo = predicted_sum_rate(&model, &xs, &solver, grid.lo).unwrap();
        let r_mid = predicted_sum_rate(&model, &xs, &solver, 0.5).unwrap();
        let r_hi = predicted_sum_rate(&model, &xs, &solver, grid.hi).unwrap();
        assert!(r_lo < r_mid && r_mid < r_hi);
    }

    #[test]
    fn vanilla_pgd_zero_rate_keeps_v() {
        let (solver, model) = case3_setup();
        let profile = solver.profile(0.2).unwrap();
        let x = solver.input(&profile, 0, 0.2, 0.25, 2.0).unwrap();
        let trace = vanilla_pgd(&model, &x, 0.0, 4).unwrap();
        assert!(trace.v.iter().all(|&v| v == 2.0));
        assert_eq!(trace.v.len(), 5);
        assert_eq!(trace.mse.len(), 5);
    }

    #[test]
    fn pgd_fixed_point_at_closed_form_optimum() {
        let (solver, model) = case3_setup();
        let profile = solver.profile(0.2).unwrap();
        let mut x = solver.input(&profile, 0, 0.2, 0.25, 1.0).unwrap();
        x.set_v(x.model_v_star().unwrap());
        let eta = eta_net(&mut stream(82, &[0]));
        let trace = unfolded_pgd(&model, &x, &eta, 5).unwrap();
        for &v in &trace.v {
            assert_relative_eq!(v, x.v(), epsilon = 1e-9);
        }
    }

    #[test]
    fn pgd_iterates_stay_nonnegative() {
        let (solver, model) = case3_setup();
        let profile = solver.profile(0.2).unwrap();
        let mut x = solver.input(&profile, 0, 0.2, 0.25, 0.05).unwrap();
        x.set_v(0.01);
        let trace = vanilla_pgd(&model, &x, 0.3, 10).unwrap();
        assert!(trace.v.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn eta_outputs_stay_clamped() {
        let eta = eta_net(&mut stream(83, &[0]));
        for &(v, g) in &[(0.0, 0.0), (5.0, -3.0), (1e6, 1e6), (-1e6, 1e-9)] {
            let rate = eta_forward(&eta, v, g).unwrap();
            assert!((1e-3..=1e-1).contains(&rate), "rate {rate}");
        }
    }

    #[test]
    fn unrolled_gradients_match_finite_differences() {
        let (solver, model) = case3_setup();
        let profile = solver.profile(0.12).unwrap();
        let mut x = solver.input(&profile, 0, 0.12, 0.3, 1.0).unwrap();
        x.set_v(2.0);
        let eta = eta_net(&mut stream(84, &[0]));
        let (_, ana) = unrolled_loss_and_grads(&model, &x, &eta, 5).unwrap();
        let base = eta.params_flat();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let mut ep = eta.clone();
            let mut flat = base.clone();
            flat[i] += h;
            ep.set_params_flat(&flat).unwrap();
            let (lp, _) = unrolled_loss_and_grads(&model, &x, &ep, 5).unwrap();
            let mut em = eta.clone();
            let mut flat = base.clone();
            flat[i] -= h;
            em.set_params_flat(&flat).unwrap();
            let (lm, _) = unrolled_loss_and_grads(&model, &x, &em, 5).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let denom = ana[i].abs().max(fd.abs()).max(1e-4);
            worst = worst.max((ana[i] - fd).abs() / denom);
        }
        assert!(worst < 1e-4, "max relative error {worst:.3e}");
    }

    #[test]
    fn training_improves_unfolded_objective() {
        let (solver, model) = case3_setup();
        let profile = solver.profile(0.12).unwrap();
        let ops: Vec<InputVector> = (0..2)
            .map(|k| solver.input(&profile, k, 0.12, 0.25, 1.0).unwrap())
            .collect();
        let mut rng = stream(85, &[0]);
        let cfg = EtaTrainConfig {
            starts_per_op: 16,
            train: TrainConfig {
                learning_rate: 3e-3,
                max_epochs: 120,
                plateau_patience: 120,
                ..TrainConfig::default()
            },
            ..EtaTrainConfig::default()
        };
        let untrained = eta_net(&mut stream(85, &[1]));
        // Held-out evaluation set.
        let mut eval_rng = stream(85, &[2]);
        let samples: Vec<(InputVector, f64)> = (0..40)
            .map(|i| {
                let x = ops[i % 2].clone();
                let v0 = eval_rng.gen_range(0.1..3.0);
                (x, v0)
            })
            .collect();
        let before = unfolded_objective(&model, &samples, &untrained, 5).unwrap();
        let (trained, losses) = train_eta_net(&model, &ops, &cfg, &mut rng).unwrap();
        let after = unfolded_objective(&model, &samples, &trained, 5).unwrap();
        assert!(
            after < before,
            "objective did not improve: {before} -> {after} (losses {:?})",
            &losses[..losses.len().min(5)]
        );
    }

    fn case1_point() -> Case1Point {
        // Identity-correlation general regime numbers, K = 2.
        let m = 4;
        let theta = crate::linalg::CMat::identity(m, m);
        let thetas: Vec<&crate::linalg::CMat> = (0..2).map(|_| &theta).collect();
        let alpha = 0.15;
        let (e, t) = crate::det_equiv::solve_e_fixed_point(&thetas, alpha).unwrap();
        let p = vec![6.0, 4.0];
        let primes = crate::det_equiv::solve_e_primes(&thetas, &e, &t, &p).unwrap();
        Case1Point {
            e: e[0],
            upsilon: primes.upsilon0[0],
            psi0: primes.psi0,
            p_k: p[0],
            rho: 10.0,
            v: 1.1,
        }
    }

    #[test]
    fn residual_zero_roots_recover_generating_tau() {
        let pt = case1_point();
        let tau_true = 0.3;
        let y = [pt.gamma(tau_true), pt.mse(tau_true)];
        let roots = appendix_stationary_points(&pt, &y);
        let t1g = roots.tau1_gamma.expect("gamma root must exist");
        assert!((t1g - tau_true).abs() < 1e-8, "gamma root {t1g}");
        let t1m = roots.tau1_mse.expect("mse root must exist");
        // Either quadratic root is a genuine residual zero; the generating
        // tau must be among the stationary set.
        assert!((pt.mse(t1m) - y[1]).abs() < 1e-10);
    }

    #[test]
    fn returned_roots_are_stationary_by_finite_difference() {
        let pt = case1_point();
        let y = [pt.gamma(0.22), pt.mse(0.22)];
        let roots = appendix_stationary_points(&pt, &y);
        let h = 1e-5;
        if let Some(t) = roots.tau1_gamma {
            let j = |tau: f64| (pt.gamma(tau) - y[0]).powi(2);
            let fd = (j(t + h) - j(t - h)) / (2.0 * h);
            assert!(fd.abs() < 1e-4, "gamma fd {fd}");
        }
        for t in [roots.tau1_mse, roots.tau2_mse].into_iter().flatten() {
            let j = |tau: f64| (pt.mse(tau) - y[1]).powi(2);
            let fd = (j(t + h) - j(t - h)) / (2.0 * h);
            assert!(fd.abs() < 1e-4, "mse fd {fd} at root {t}");
        }
    }

    #[test]
    fn absent_second_root_leaves_single_stationary_point() {
        let pt = case1_point();
        let tau_true = 0.28;
        let y = [pt.gamma(tau_true), pt.mse(tau_true)];
        let roots = appendix_stationary_points(&pt, &y);
        assert!(roots.tau2_gamma.is_none());
        // Dense scan of the SINR residual: count interior sign changes of the
        // finite-difference slope.
        let n = 10_000;
        let mut crossings = 0;
        let j = |tau: f64| (pt.gamma(tau) - y[0]).powi(2);
        let mut last_slope = 0.0f64;
        for i in 1..n {
            let tau0 = i as f64 / n as f64;
            let tau1 = (i + 1) as f64 / n as f64;
            let slope = j(tau1) - j(tau0);
            if i > 1 && slope.signum() != last_slope.signum() && slope != 0.0 {
                crossings += 1;
            }
            last_slope = slope;
        }
        assert_eq!(crossings, 1, "expected a single interior stationary point");
    }
}
