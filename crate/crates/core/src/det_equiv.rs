//! Large-system deterministic equivalents of the RZF downlink indicators.
//!
//! For `M -> infinity` at fixed `beta = M/K` the instantaneous SINR and
//! detection MSE concentrate around channel-independent formulas driven by a
//! small set of fixed-point quantities. Four nested regimes are supported:
//!
//! 1. distinct per-user correlation `Theta_k` and per-user `tau_k`;
//! 2. one shared `Theta` for all users;
//! 3. uncorrelated antennas (`Theta = I`), where the fixed point collapses
//!    to a closed-form scalar;
//! 4. uncorrelated antennas with a common `tau` and equal power, where all
//!    users share one indicator pair.
//!
//! The module also assembles the predictor input vectors (prior / numerical /
//! optimization sub-vectors) whose numerical part is a deterministic function
//! of the correlation set, the regularization term and the power allocation.

use nalgebra::DMatrix;

use crate::channel::{ChannelSpace, CorrelationSet};
use crate::linalg::{self, CMat};
use crate::{invalid, numerical, Result};

/// Regime selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseId {
    /// Distinct `Theta_k`, per-user `tau_k`.
    Case1,
    /// Shared `Theta`, per-user `tau_k`.
    Case2,
    /// `Theta = I`, per-user `tau_k`.
    Case3,
    /// `Theta = I`, shared `tau`, equal power.
    Case4,
}

impl CaseId {
    pub fn index(self) -> u8 {
        match self {
            CaseId::Case1 => 1,
            CaseId::Case2 => 2,
            CaseId::Case3 => 3,
            CaseId::Case4 => 4,
        }
    }

    pub fn from_index(i: u8) -> Result<Self> {
        Ok(match i {
            1 => CaseId::Case1,
            2 => CaseId::Case2,
            3 => CaseId::Case3,
            4 => CaseId::Case4,
            _ => return Err(invalid(format!("unknown case id {i}"))),
        })
    }
}

/// Fixed-point solutions for one `(correlation set, alpha, power)` tuple.
#[derive(Debug, Clone)]
pub struct DetEquivProfile {
    pub case_id: CaseId,
    pub beta: f64,
    /// Deterministic equivalent of the precoder normalization denominator.
    pub psi0: f64,
    pub data: ProfileData,
}

#[derive(Debug, Clone)]
pub enum ProfileData {
    /// Per-user fixed point of the general regime.
    General {
        e: Vec<f64>,
        e_prime: Vec<f64>,
        e_prime_k: Vec<Vec<f64>>,
        upsilon0: Vec<f64>,
    },
    /// Scalar fixed point plus the two trace moments of the shared regime.
    SharedCorr { e: f64, e12: f64, e22: f64 },
    /// Closed-form scalar of the uncorrelated regimes.
    Uncorrelated { e: f64 },
}

impl DetEquivProfile {
    /// Numerical sub-vector for user `k`, laid out per regime.
    pub fn numerical(&self, user: usize) -> Vec<f64> {
        match &self.data {
            ProfileData::General { e, upsilon0, .. } => {
                vec![e[user], upsilon0[user], self.psi0]
            }
            ProfileData::SharedCorr { e, e12, e22 } => vec![*e, *e12, *e22],
            ProfileData::Uncorrelated { e } => match self.case_id {
                CaseId::Case4 => vec![],
                _ => vec![*e],
            },
        }
    }
}

const FP_TOL: f64 = 1e-12;
const FP_DAMPING: f64 = 0.5;
const FP_MAX_ITER: usize = 10_000;

/// Solve the coupled fixed point `e_i = tr(Theta_i T) / M` with
/// `T = ((1/M) sum_j Theta_j / (1 + e_j) + alpha I)^{-1}` by damped Picard
/// iteration. Returns the solution vector and the final `T`.
pub fn solve_e_fixed_point(thetas: &[&CMat], alpha: f64) -> Result<(Vec<f64>, CMat)> {
    solve_e_fixed_point_from(thetas, alpha, 1.0)
}

/// Same as [`solve_e_fixed_point`] with an explicit initialization, used to
/// check that the solution does not depend on the starting point.
pub fn solve_e_fixed_point_from(
    thetas: &[&CMat],
    alpha: f64,
    init: f64,
) -> Result<(Vec<f64>, CMat)> {
    if !(alpha > 0.0) {
        return Err(invalid("fixed point requires alpha > 0"));
    }
    let k = thetas.len();
    if k == 0 {
        return Err(invalid("fixed point requires at least one user"));
    }
    let m = thetas[0].nrows();
    let mf = m as f64;
    let mut e = vec![init; k];
    let mut t = CMat::zeros(m, m);
    let mut residual = f64::INFINITY;
    for _ in 0..FP_MAX_ITER {
        let mut denom = CMat::identity(m, m) * num_complex::Complex64::new(alpha, 0.0);
        for (j, theta) in thetas.iter().enumerate() {
            let w = 1.0 / (mf * (1.0 + e[j]));
            denom += *theta * num_complex::Complex64::new(w, 0.0);
        }
        t = linalg::inverse(&denom)?;
        let mut next = Vec::with_capacity(k);
        residual = 0.0;
        for (i, theta) in thetas.iter().enumerate() {
            let val = linalg::trace_prod(theta, &t).re / mf;
            residual = residual.max((val - e[i]).abs());
            next.push(val);
        }
        if residual < FP_TOL {
            e = next;
            break;
        }
        for i in 0..k {
            e[i] += FP_DAMPING * (next[i] - e[i]);
        }
    }
    if residual >= FP_TOL {
        return Err(numerical(format!(
            "fixed point did not converge (residual {residual:.3e})"
        )));
    }
    if e.iter().any(|&v| !(v > 0.0)) {
        return Err(numerical("fixed point produced a non-positive solution"));
    }
    Ok((e, t))
}

/// Derived quantities of the general regime.
#[derive(Debug, Clone)]
pub struct EPrimes {
    pub e_prime: Vec<f64>,
    pub e_prime_k: Vec<Vec<f64>>,
    pub psi0: f64,
    pub upsilon0: Vec<f64>,
}

/// Solve the K x K linear systems for `e'` and `e'_k`, then form `Psi` and
/// `Upsilon_k` deterministic equivalents.
pub fn solve_e_primes(
    thetas: &[&CMat],
    e: &[f64],
    t: &CMat,
    p: &[f64],
) -> Result<EPrimes> {
    let k = thetas.len();
    let m = thetas[0].nrows();
    let mf = m as f64;
    if e.len() != k || p.len() != k {
        return Err(invalid("e and p must have one entry per user"));
    }
    // A_i = Theta_i T; G[i][j] = tr(A_i A_j); m_i = tr(A_i T).
    let a: Vec<CMat> = thetas.iter().map(|th| *th * t).collect();
    let mut g = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let tr = linalg::trace_prod(&a[i], &a[j]).re;
            g[(i, j)] = tr;
            g[(j, i)] = tr;
        }
    }
    let mut jmat = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            jmat[(i, j)] = g[(i, j)] / (mf * mf * (1.0 + e[j]).powi(2));
        }
    }
    let mut rhs = DMatrix::<f64>::zeros(k, k + 1);
    for i in 0..k {
        rhs[(i, 0)] = linalg::trace_prod(&a[i], t).re / mf;
        for j in 0..k {
            rhs[(i, j + 1)] = g[(i, j)] / mf;
        }
    }
    let eye = DMatrix::<f64>::identity(k, k);
    let solved = linalg::solve_real_guarded(&(eye - &jmat), &rhs, 1e-10)?;
    let e_prime: Vec<f64> = (0..k).map(|i| solved[(i, 0)]).collect();
    let e_prime_k: Vec<Vec<f64>> = (0..k)
        .map(|kk| (0..k).map(|i| solved[(i, kk + 1)]).collect())
        .collect();
    if e_prime.iter().any(|&v| !(v > 0.0)) {
        return Err(numerical("e' has a non-positive entry"));
    }
    let psi0 = (0..k)
        .map(|j| p[j] * e_prime[j] / (1.0 + e[j]).powi(2))
        .sum::<f64>()
        / mf;
    let mut upsilon0 = Vec::with_capacity(k);
    for kk in 0..k {
        let mut acc = 0.0;
        for j in 0..k {
            if j != kk {
                acc += p[j] * e_prime_k[kk][j] / (1.0 + e[j]).powi(2);
            }
        }
        upsilon0.push(acc / mf);
    }
    if !(psi0 > 0.0) || upsilon0.iter().any(|&v| v < 0.0) {
        return Err(numerical("Psi/Upsilon deterministic equivalents not positive"));
    }
    Ok(EPrimes {
        e_prime,
        e_prime_k,
        psi0,
        upsilon0,
    })
}

/// Closed-form fixed point of the uncorrelated regime.
pub fn e_uncorrelated(beta: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) || !(beta > 0.0) {
        return Err(invalid("need alpha > 0 and beta > 0"));
    }
    let disc = (beta - 1.0).powi(2) + 2.0 * (1.0 + beta) * alpha * beta + alpha * alpha * beta * beta;
    Ok((beta - 1.0 - beta * alpha + disc.sqrt()) / (2.0 * alpha * beta))
}

fn tau_mix(tau: f64, e: f64) -> f64 {
    // 1 - tau^2 [1 - (1+e)^2]
    1.0 - tau * tau * (1.0 - (1.0 + e) * (1.0 + e))
}

/// SINR and MSE deterministic equivalents, general regime.
pub fn gamma_mse_case1(
    e_k: f64,
    upsilon_k: f64,
    psi0: f64,
    p_k: f64,
    tau_k: f64,
    v_k: f64,
    rho: f64,
) -> (f64, f64) {
    let one_e2 = (1.0 + e_k) * (1.0 + e_k);
    let mix = tau_mix(tau_k, e_k);
    let gamma = p_k * (1.0 - tau_k * tau_k) * e_k * e_k
        / (upsilon_k * mix + psi0 / rho * one_e2);
    let (b, q) = mse_quad_case1(e_k, upsilon_k, psi0, p_k, tau_k, rho);
    let mse = (v_k * b - 1.0).powi(2) + v_k * v_k * q;
    (gamma, mse)
}

fn mse_quad_case1(
    e_k: f64,
    upsilon_k: f64,
    psi0: f64,
    p_k: f64,
    tau_k: f64,
    rho: f64,
) -> (f64, f64) {
    let one_e2 = (1.0 + e_k) * (1.0 + e_k);
    let b = (1.0 - tau_k * tau_k).sqrt() * e_k / (1.0 + e_k);
    let q = upsilon_k * tau_mix(tau_k, e_k) / (p_k * one_e2) + psi0 / (p_k * rho);
    (b, q)
}

/// SINR and MSE deterministic equivalents, shared-correlation regime.
#[allow(clippy::too_many_arguments)]
pub fn gamma_mse_case2(
    e: f64,
    e12: f64,
    e22: f64,
    m: usize,
    k: usize,
    p_total: f64,
    p_k: f64,
    tau_k: f64,
    v_k: f64,
    alpha: f64,
    rho: f64,
    sigma2: f64,
) -> Result<(f64, f64)> {
    let beta = m as f64 / k as f64;
    if !(e22 < beta) {
        return Err(numerical(format!(
            "shared-correlation equivalents need e22 < beta (e22={e22}, beta={beta})"
        )));
    }
    let kf = k as f64;
    let one_e2 = (1.0 + e) * (1.0 + e);
    let mix = tau_mix(tau_k, e);
    let gamma = (p_k / (p_total / kf)) * (1.0 - tau_k * tau_k) * e
        * (e22 + alpha * beta * one_e2 * e12)
        / ((1.0 - p_k / p_total) * mix * e22 + one_e2 * e12 / rho);
    let (b, q) = mse_quad_case2(e, e12, e22, m, k, p_total, p_k, tau_k, sigma2);
    let mse = (v_k * b - 1.0).powi(2) + v_k * v_k * q;
    Ok((gamma, mse))
}

#[allow(clippy::too_many_arguments)]
fn mse_quad_case2(
    e: f64,
    e12: f64,
    e22: f64,
    m: usize,
    k: usize,
    p_total: f64,
    p_k: f64,
    tau_k: f64,
    sigma2: f64,
) -> (f64, f64) {
    let beta = m as f64 / k as f64;
    let kf = k as f64;
    let one_e2 = (1.0 + e) * (1.0 + e);
    let b = (1.0 - tau_k * tau_k).sqrt() * e / (1.0 + e);
    let q = (p_total - p_k) * tau_mix(tau_k, e) * e22
        / (p_k * kf * one_e2 * (beta - e22))
        + sigma2 * e12 / (p_k * kf * (beta - e22));
    (b, q)
}

/// SINR and MSE deterministic equivalents, uncorrelated regime.
#[allow(clippy::too_many_arguments)]
pub fn gamma_mse_case3(
    m: usize,
    k: usize,
    p_total: f64,
    p_k: f64,
    tau_k: f64,
    v_k: f64,
    alpha: f64,
    rho: f64,
    sigma2: f64,
) -> Result<(f64, f64)> {
    let beta = m as f64 / k as f64;
    let e = e_uncorrelated(beta, alpha)?;
    let kf = k as f64;
    let one_e2 = (1.0 + e) * (1.0 + e);
    let mix = tau_mix(tau_k, e);
    let gamma = (p_k / (p_total / kf)) * (1.0 - tau_k * tau_k) * e
        * (1.0 + alpha * beta * one_e2)
        / ((1.0 - p_k / p_total) * mix + one_e2 / rho);
    let (b, q) = mse_quad_case3(e, m, k, p_total, p_k, tau_k, alpha, sigma2)?;
    let mse = (v_k * b - 1.0).powi(2) + v_k * v_k * q;
    Ok((gamma, mse))
}

#[allow(clippy::too_many_arguments)]
fn mse_quad_case3(
    e: f64,
    m: usize,
    k: usize,
    p_total: f64,
    p_k: f64,
    tau_k: f64,
    alpha: f64,
    sigma2: f64,
) -> Result<(f64, f64)> {
    let beta = m as f64 / k as f64;
    let kf = k as f64;
    let one_e2 = (1.0 + e) * (1.0 + e);
    let gdenom = (alpha * beta * (1.0 + e) + 1.0).powi(2) - beta;
    if !(gdenom > 0.0) {
        return Err(numerical(format!(
            "uncorrelated equivalents degenerate: [alpha beta (1+e) + 1]^2 - beta = {gdenom}"
        )));
    }
    let b = (1.0 - tau_k * tau_k).sqrt() * e / (1.0 + e);
    let q = ((p_total - p_k) * tau_mix(tau_k, e) / one_e2 + sigma2) * beta
        / (p_k * kf * gdenom);
    Ok((b, q))
}

/// SINR and MSE deterministic equivalents, uncorrelated regime with shared
/// `tau` and equal power; identical across users.
pub fn gamma_mse_case4(
    m: usize,
    k: usize,
    tau: f64,
    v: f64,
    alpha: f64,
    rho: f64,
) -> Result<(f64, f64)> {
    let beta = m as f64 / k as f64;
    let e = e_uncorrelated(beta, alpha)?;
    let kf = k as f64;
    let one_e2 = (1.0 + e) * (1.0 + e);
    let mix = tau_mix(tau, e);
    let gamma = (1.0 - tau * tau) * e * (1.0 + alpha * beta * one_e2)
        / ((1.0 - 1.0 / kf) * mix + one_e2 / rho);
    let (b, q) = mse_quad_case4(e, m, k, tau, alpha, rho)?;
    let mse = (v * b - 1.0).powi(2) + v * v * q;
    Ok((gamma, mse))
}

fn mse_quad_case4(
    e: f64,
    m: usize,
    k: usize,
    tau: f64,
    alpha: f64,
    rho: f64,
) -> Result<(f64, f64)> {
    let beta = m as f64 / k as f64;
    let kf = k as f64;
    let one_e2 = (1.0 + e) * (1.0 + e);
    let gdenom = (alpha * beta * (1.0 + e) + 1.0).powi(2) - beta;
    if !(gdenom > 0.0) {
        return Err(numerical("uncorrelated equivalents degenerate"));
    }
    let b = (1.0 - tau * tau).sqrt() * e / (1.0 + e);
    let q = ((1.0 - 1.0 / kf) * tau_mix(tau, e) / one_e2 + 1.0 / rho) * beta / gdenom;
    Ok((b, q))
}

/// Closed-form minimizer of the quadratic MSE equivalent: with
/// `MSE(v) = (v b - 1)^2 + q v^2` the optimum is `v* = b / (b^2 + q)`.
pub fn v_star_from_quad(b: f64, q: f64) -> f64 {
    if b == 0.0 {
        return 0.0;
    }
    b / (b * b + q)
}

/// Predictor input split into prior / numerical / optimization sub-vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct InputVector {
    pub case_id: CaseId,
    pub prior: Vec<f64>,
    pub numerical: Vec<f64>,
    /// `[alpha, tau_k, v_k]`.
    pub optimization: [f64; 3],
}

impl InputVector {
    pub fn dim(&self) -> usize {
        self.prior.len() + self.numerical.len() + 3
    }

    /// Fixed layout per regime: prior, then numerical, then optimization.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(&self.prior);
        out.extend_from_slice(&self.numerical);
        out.extend_from_slice(&self.optimization);
        out
    }

    /// Index of the `v` entry in the flattened layout.
    pub fn v_index(&self) -> usize {
        self.prior.len() + self.numerical.len() + 2
    }

    pub fn m(&self) -> usize {
        self.prior[0] as usize
    }

    pub fn k(&self) -> usize {
        self.prior[1] as usize
    }

    pub fn p_total(&self) -> f64 {
        self.prior[2]
    }

    pub fn p_k(&self) -> f64 {
        match self.case_id {
            CaseId::Case4 => self.prior[2] / self.prior[1],
            _ => self.prior[3],
        }
    }

    pub fn sigma2(&self) -> f64 {
        match self.case_id {
            CaseId::Case4 => self.prior[3],
            _ => self.prior[4],
        }
    }

    pub fn rho(&self) -> f64 {
        self.p_total() / self.sigma2()
    }

    pub fn alpha(&self) -> f64 {
        self.optimization[0]
    }

    pub fn tau(&self) -> f64 {
        self.optimization[1]
    }

    pub fn v(&self) -> f64 {
        self.optimization[2]
    }

    pub fn set_tau(&mut self, tau: f64) {
        self.optimization[1] = tau;
    }

    pub fn set_v(&mut self, v: f64) {
        self.optimization[2] = v;
    }

    /// Replace the regularization term and refresh the numerical sub-vector
    /// from a profile solved at that term.
    pub fn set_alpha(&mut self, alpha: f64, profile: &DetEquivProfile, user: usize) -> Result<()> {
        if profile.case_id != self.case_id {
            return Err(invalid("profile/case mismatch"));
        }
        self.optimization[0] = alpha;
        self.numerical = profile.numerical(user);
        Ok(())
    }

    /// Model-driven indicator pair implied by this input vector alone.
    pub fn model_prediction(&self) -> Result<(f64, f64)> {
        let (gamma, b, q) = self.model_parts()?;
        let v = self.v();
        Ok((gamma, (v * b - 1.0).powi(2) + v * v * q))
    }

    /// Quadratic decomposition of the model MSE: `MSE(v) = (v b - 1)^2 + q v^2`,
    /// plus the (v-independent) SINR equivalent.
    pub fn model_parts(&self) -> Result<(f64, f64, f64)> {
        let tau = self.tau();
        let alpha = self.alpha();
        match self.case_id {
            CaseId::Case1 => {
                let (e_k, upsilon, psi0) =
                    (self.numerical[0], self.numerical[1], self.numerical[2]);
                let (gamma, _) =
                    gamma_mse_case1(e_k, upsilon, psi0, self.p_k(), tau, 0.0, self.rho());
                let (b, q) = mse_quad_case1(e_k, upsilon, psi0, self.p_k(), tau, self.rho());
                Ok((gamma, b, q))
            }
            CaseId::Case2 => {
                let (e, e12, e22) = (self.numerical[0], self.numerical[1], self.numerical[2]);
                let (gamma, _) = gamma_mse_case2(
                    e,
                    e12,
                    e22,
                    self.m(),
                    self.k(),
                    self.p_total(),
                    self.p_k(),
                    tau,
                    0.0,
                    alpha,
                    self.rho(),
                    self.sigma2(),
                )?;
                let (b, q) = mse_quad_case2(
                    e,
                    e12,
                    e22,
                    self.m(),
                    self.k(),
                    self.p_total(),
                    self.p_k(),
                    tau,
                    self.sigma2(),
                );
                Ok((gamma, b, q))
            }
            CaseId::Case3 => {
                let (gamma, _) = gamma_mse_case3(
                    self.m(),
                    self.k(),
                    self.p_total(),
                    self.p_k(),
                    tau,
                    0.0,
                    alpha,
                    self.rho(),
                    self.sigma2(),
                )?;
                let e = self.numerical[0];
                let (b, q) = mse_quad_case3(
                    e,
                    self.m(),
                    self.k(),
                    self.p_total(),
                    self.p_k(),
                    tau,
                    alpha,
                    self.sigma2(),
                )?;
                Ok((gamma, b, q))
            }
            CaseId::Case4 => {
                let (gamma, _) = gamma_mse_case4(self.m(), self.k(), tau, 0.0, alpha, self.rho())?;
                let beta = self.m() as f64 / self.k() as f64;
                let e = e_uncorrelated(beta, alpha)?;
                let (b, q) = mse_quad_case4(e, self.m(), self.k(), tau, alpha, self.rho())?;
                Ok((gamma, b, q))
            }
        }
    }

    /// d MSE / d v of the model part (exact, the equivalent is quadratic).
    pub fn model_mse_grad_v(&self) -> Result<f64> {
        let (_, b, q) = self.model_parts()?;
        let v = self.v();
        Ok(2.0 * (b * b + q) * v - 2.0 * b)
    }

    /// d^2 MSE / d v^2 of the model part.
    pub fn model_mse_hess_v(&self) -> Result<f64> {
        let (_, b, q) = self.model_parts()?;
        Ok(2.0 * (b * b + q))
    }

    /// Closed-form optimal scaling of the model part.
    pub fn model_v_star(&self) -> Result<f64> {
        let (_, b, q) = self.model_parts()?;
        Ok(v_star_from_quad(b, q))
    }
}

/// Solver that produces profiles and input vectors for one scenario. Holds
/// what the transmitter knows: the correlation structure, power allocation
/// and static configuration (but not the CSI uncertainty).
#[derive(Debug, Clone)]
pub struct ProfileSolver {
    case_id: CaseId,
    m: usize,
    k: usize,
    p_total: f64,
    sigma2: f64,
    p: Vec<f64>,
    corr: SolverCorr,
}

#[derive(Debug, Clone)]
enum SolverCorr {
    Distinct(Vec<CMat>),
    /// Eigenvalues of the shared correlation matrix.
    SharedEigs(Vec<f64>),
    Identity,
}

impl ProfileSolver {
    pub fn new(
        case_id: CaseId,
        m: usize,
        k: usize,
        p_total: f64,
        sigma2: f64,
        p: Vec<f64>,
        corr: &CorrelationSet,
    ) -> Result<Self> {
        if p.len() != k {
            return Err(invalid("power allocation length must equal K"));
        }
        let corr = match (case_id, corr) {
            (CaseId::Case1, CorrelationSet::Distinct(models)) => {
                let thetas = models
                    .iter()
                    .map(|cm| cm.matrix(m))
                    .collect::<Result<Vec<_>>>()?;
                SolverCorr::Distinct(thetas)
            }
            (CaseId::Case1, CorrelationSet::Shared(model)) => {
                SolverCorr::Distinct(vec![model.matrix(m)?; k])
            }
            (CaseId::Case1, CorrelationSet::Identity) => {
                SolverCorr::Distinct(vec![CMat::identity(m, m); k])
            }
            (CaseId::Case2, CorrelationSet::Shared(model)) => {
                let theta = model.matrix(m)?;
                let (eigs, _) = linalg::hermitian_eig(&theta)?;
                SolverCorr::SharedEigs(eigs)
            }
            (CaseId::Case2, CorrelationSet::Identity) => SolverCorr::SharedEigs(vec![1.0; m]),
            (CaseId::Case3 | CaseId::Case4, CorrelationSet::Identity) => SolverCorr::Identity,
            _ => return Err(invalid("correlation set does not match the case")),
        };
        Ok(Self {
            case_id,
            m,
            k,
            p_total,
            sigma2,
            p,
            corr,
        })
    }

    /// Convenience constructor from a channel space.
    pub fn from_space(
        case_id: CaseId,
        space: &ChannelSpace,
        p_total: f64,
        sigma2: f64,
        p: Vec<f64>,
    ) -> Result<Self> {
        let m = space.m();
        let k = space.k();
        match case_id {
            CaseId::Case1 => {
                let thetas = space.thetas().into_iter().cloned().collect();
                Ok(Self {
                    case_id,
                    m,
                    k,
                    p_total,
                    sigma2,
                    p,
                    corr: SolverCorr::Distinct(thetas),
                })
            }
            CaseId::Case2 => {
                let (eigs, _) = linalg::hermitian_eig(space.theta(0))?;
                Ok(Self {
                    case_id,
                    m,
                    k,
                    p_total,
                    sigma2,
                    p,
                    corr: SolverCorr::SharedEigs(eigs),
                })
            }
            CaseId::Case3 | CaseId::Case4 => Ok(Self {
                case_id,
                m,
                k,
                p_total,
                sigma2,
                p,
                corr: SolverCorr::Identity,
            }),
        }
    }

    pub fn case_id(&self) -> CaseId {
        self.case_id
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn p_total(&self) -> f64 {
        self.p_total
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn rho(&self) -> f64 {
        self.p_total / self.sigma2
    }

    fn beta(&self) -> f64 {
        self.m as f64 / self.k as f64
    }

    /// Solve the regime's numerical parameter set at a given `alpha`.
    pub fn profile(&self, alpha: f64) -> Result<DetEquivProfile> {
        if !(alpha > 0.0) {
            return Err(invalid("profile requires alpha > 0"));
        }
        let beta = self.beta();
        match &self.corr {
            SolverCorr::Distinct(thetas) => {
                let refs: Vec<&CMat> = thetas.iter().collect();
                let (e, t) = solve_e_fixed_point(&refs, alpha)?;
                let primes = solve_e_primes(&refs, &e, &t, &self.p)?;
                Ok(DetEquivProfile {
                    case_id: self.case_id,
                    beta,
                    psi0: primes.psi0,
                    data: ProfileData::General {
                        e,
                        e_prime: primes.e_prime,
                        e_prime_k: primes.e_prime_k,
                        upsilon0: primes.upsilon0,
                    },
                })
            }
            SolverCorr::SharedEigs(eigs) => {
                let (e, e12, e22) = shared_corr_moments(eigs, beta, alpha, self.m)?;
                if !(e22 < beta) {
                    return Err(numerical(format!(
                        "shared-correlation profile needs e22 < beta (e22={e22}, beta={beta})"
                    )));
                }
                let psi0 = self.p_total * e12 / (self.k as f64 * (beta - e22));
                Ok(DetEquivProfile {
                    case_id: self.case_id,
                    beta,
                    psi0,
                    data: ProfileData::SharedCorr { e, e12, e22 },
                })
            }
            SolverCorr::Identity => {
                let e = e_uncorrelated(beta, alpha)?;
                let denom = 1.0 + alpha * beta * (1.0 + e) * (1.0 + e);
                let psi0 = self.p_total * e / (self.k as f64 * denom);
                Ok(DetEquivProfile {
                    case_id: self.case_id,
                    beta,
                    psi0,
                    data: ProfileData::Uncorrelated { e },
                })
            }
        }
    }

    /// Assemble the input vector for one user.
    pub fn input(
        &self,
        profile: &DetEquivProfile,
        user: usize,
        alpha: f64,
        tau: f64,
        v: f64,
    ) -> Result<InputVector> {
        if profile.case_id != self.case_id {
            return Err(invalid("profile/case mismatch"));
        }
        if user >= self.k {
            return Err(invalid("user index out of range"));
        }
        let prior = match self.case_id {
            CaseId::Case4 => vec![
                self.m as f64,
                self.k as f64,
                self.p_total,
                self.sigma2,
            ],
            _ => vec![
                self.m as f64,
                self.k as f64,
                self.p_total,
                self.p[user],
                self.sigma2,
            ],
        };
        Ok(InputVector {
            case_id: self.case_id,
            prior,
            numerical: profile.numerical(user),
            optimization: [alpha, tau, v],
        })
    }
}

/// Scalar fixed point and trace moments for a shared correlation matrix,
/// expressed through its eigenvalues.
fn shared_corr_moments(eigs: &[f64], beta: f64, alpha: f64, m: usize) -> Result<(f64, f64, f64)> {
    let mf = m as f64;
    let phi = |e: f64| -> f64 {
        eigs.iter()
            .map(|&l| l / (l / (beta * (1.0 + e)) + alpha))
            .sum::<f64>()
            / mf
    };
    let mut e = 1.0;
    let mut residual = f64::INFINITY;
    for _ in 0..FP_MAX_ITER {
        let next = phi(e);
        residual = (next - e).abs();
        if residual < FP_TOL {
            e = next;
            break;
        }
        e += FP_DAMPING * (next - e);
    }
    if residual >= FP_TOL {
        return Err(numerical(format!(
            "shared-correlation fixed point did not converge (residual {residual:.3e})"
        )));
    }
    if !(e > 0.0) {
        return Err(numerical("shared-correlation fixed point not positive"));
    }
    let one_e2 = (1.0 + e) * (1.0 + e);
    let mut e12 = 0.0;
    let mut e22 = 0.0;
    for &l in eigs {
        let t = 1.0 / (l / (beta * (1.0 + e)) + alpha);
        e12 += l * t * t;
        e22 += l * l * t * t;
    }
    e12 /= mf * one_e2;
    e22 /= mf * one_e2;
    Ok((e, e12, e22))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{correlation_matrix, CorrelationModel};
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use num_complex::Complex64;
    use rand::Rng;

    fn identity_thetas(m: usize, k: usize) -> Vec<CMat> {
        vec![CMat::identity(m, m); k]
    }

    #[test]
    fn fixed_point_matches_closed_form_beta1() {
        let thetas = identity_thetas(4, 4);
        let refs: Vec<&CMat> = thetas.iter().collect();
        let (e, _) = solve_e_fixed_point(&refs, 1.0).unwrap();
        let expect = (-1.0 + 5.0f64.sqrt()) / 2.0;
        for v in e {
            assert_relative_eq!(v, expect, epsilon = 1e-10);
        }
        assert_relative_eq!(e_uncorrelated(1.0, 1.0).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn fixed_point_matches_closed_form_beta2() {
        let thetas = identity_thetas(4, 2);
        let refs: Vec<&CMat> = thetas.iter().collect();
        let (e, _) = solve_e_fixed_point(&refs, 1.0).unwrap();
        let expect = (-1.0 + 17.0f64.sqrt()) / 4.0;
        for v in e {
            assert_relative_eq!(v, expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn fixed_point_large_alpha_vanishes() {
        let thetas = identity_thetas(4, 2);
        let refs: Vec<&CMat> = thetas.iter().collect();
        let (e, _) = solve_e_fixed_point(&refs, 1e6).unwrap();
        assert!(e.iter().all(|&v| v < 2e-6));
    }

    #[test]
    fn fixed_point_independent_of_init() {
        let mut rng = stream(5, &[1]);
        let thetas: Vec<CMat> = (0..3)
            .map(|_| CorrelationModel::sample(&mut rng).matrix(6).unwrap())
            .collect();
        let refs: Vec<&CMat> = thetas.iter().collect();
        let (e1, _) = solve_e_fixed_point_from(&refs, 0.1, 0.1).unwrap();
        let (e2, _) = solve_e_fixed_point_from(&refs, 0.1, 1.0).unwrap();
        let (e3, _) = solve_e_fixed_point_from(&refs, 0.1, 10.0).unwrap();
        for i in 0..3 {
            assert_relative_eq!(e1[i], e2[i], epsilon = 1e-10);
            assert_relative_eq!(e1[i], e3[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn residual_decreases_under_damping() {
        // Track the Picard residual by hand on a random draw.
        let mut rng = stream(6, &[2]);
        let thetas: Vec<CMat> = (0..2)
            .map(|_| CorrelationModel::sample(&mut rng).matrix(5).unwrap())
            .collect();
        let refs: Vec<&CMat> = thetas.iter().collect();
        let alpha = 0.3;
        let m = 5.0;
        let mut e = vec![1.0f64; 2];
        let mut last = f64::INFINITY;
        for _ in 0..60 {
            let mut denom = CMat::identity(5, 5) * Complex64::new(alpha, 0.0);
            for (j, th) in refs.iter().enumerate() {
                denom += *th * Complex64::new(1.0 / (m * (1.0 + e[j])), 0.0);
            }
            let t = linalg::inverse(&denom).unwrap();
            let next: Vec<f64> = refs
                .iter()
                .map(|th| linalg::trace_prod(th, &t).re / m)
                .collect();
            let residual = next
                .iter()
                .zip(&e)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(residual <= last + 1e-12, "residual grew: {last} -> {residual}");
            last = residual;
            for i in 0..2 {
                e[i] += 0.5 * (next[i] - e[i]);
            }
        }
    }

    #[test]
    fn upsilon_symmetric_for_identical_users() {
        let thetas = identity_thetas(6, 3);
        let refs: Vec<&CMat> = thetas.iter().collect();
        let (e, t) = solve_e_fixed_point(&refs, 0.2).unwrap();
        let p = vec![2.0, 2.0, 2.0];
        let primes = solve_e_primes(&refs, &e, &t, &p).unwrap();
        for k in 1..3 {
            assert_relative_eq!(primes.upsilon0[0], primes.upsilon0[k], epsilon = 1e-10);
        }
    }

    #[test]
    fn spectral_radius_of_j_below_one() {
        let mut rng = stream(7, &[3]);
        for _ in 0..5 {
            let thetas: Vec<CMat> = (0..3)
                .map(|_| CorrelationModel::sample(&mut rng).matrix(6).unwrap())
                .collect();
            let refs: Vec<&CMat> = thetas.iter().collect();
            let (e, t) = solve_e_fixed_point(&refs, 0.1).unwrap();
            // Rebuild J exactly as solve_e_primes does and bound its radius.
            let m = 6.0;
            let a: Vec<CMat> = refs.iter().map(|th| *th * &t).collect();
            let mut jmat = DMatrix::<f64>::zeros(3, 3);
            for i in 0..3 {
                for j in 0..3 {
                    jmat[(i, j)] =
                        linalg::trace_prod(&a[i], &a[j]).re / (m * m * (1.0 + e[j]).powi(2));
                }
            }
            let radius = jmat
                .complex_eigenvalues()
                .iter()
                .map(|l| l.norm())
                .fold(0.0, f64::max);
            assert!(radius < 1.0, "spectral radius {radius}");
        }
    }

    #[test]
    fn psi_matches_monte_carlo_at_large_m() {
        // Monte-Carlo oracle for the normalization denominator Psi.
        let m = 64;
        let k = 16;
        let alpha = 0.1;
        let theta = CMat::identity(m, m);
        let thetas: Vec<&CMat> = (0..k).map(|_| &theta).collect();
        let (e, t) = solve_e_fixed_point(&thetas, alpha).unwrap();
        let p = vec![1.0 / k as f64; k];
        let primes = solve_e_primes(&thetas, &e, &t, &p).unwrap();

        let mut rng = stream(12, &[9]);
        let n = 400;
        let mut acc = 0.0;
        for _ in 0..n {
            let mut h_hat = CMat::zeros(k, m);
            for i in 0..k {
                for j in 0..m {
                    h_hat[(i, j)] = crate::channel::complex_gaussian(&mut rng);
                }
            }
            let gram = &h_hat * h_hat.adjoint()
                + CMat::identity(k, k) * Complex64::new(m as f64 * alpha, 0.0);
            let f = h_hat.adjoint() * linalg::inverse(&gram).unwrap();
            let mut psi = 0.0;
            for j in 0..k {
                psi += p[j] * f.column(j).norm_squared();
            }
            acc += psi;
        }
        let mc = acc / n as f64;
        let rel = (mc - primes.psi0).abs() / primes.psi0;
        assert!(rel < 0.05, "Psi MC {mc} vs deterministic {} (rel {rel})", primes.psi0);
    }

    #[test]
    fn case2_identity_matches_case3() {
        let mut rng = stream(21, &[0]);
        for _ in 0..50 {
            let m = [2usize, 4, 8][rng.gen_range(0..3)];
            let k = if m >= 4 { [2usize, 4][rng.gen_range(0..2)] } else { 2 };
            let alpha = 10f64.powf(rng.gen_range(-3.0..0.3));
            let p_total = 10f64.powf(rng.gen_range(0.6..2.0));
            let p_k = p_total * rng.gen_range(0.2..0.8) / k as f64;
            let tau = rng.gen_range(0.0..0.9);
            let v = rng.gen_range(0.0..3.0);
            let rho = p_total;
            let eigs = vec![1.0; m];
            let beta = m as f64 / k as f64;
            let (e, e12, e22) = shared_corr_moments(&eigs, beta, alpha, m).unwrap();
            let (g2, mse2) = gamma_mse_case2(
                e, e12, e22, m, k, p_total, p_k, tau, v, alpha, rho, 1.0,
            )
            .unwrap();
            let (g3, mse3) =
                gamma_mse_case3(m, k, p_total, p_k, tau, v, alpha, rho, 1.0).unwrap();
            assert_relative_eq!(g2, g3, max_relative = 1e-9);
            assert_relative_eq!(mse2, mse3, max_relative = 1e-9);
        }
    }

    #[test]
    fn case3_equal_power_matches_case4() {
        let mut rng = stream(22, &[0]);
        for _ in 0..50 {
            let m = [2usize, 4, 8][rng.gen_range(0..3)];
            let k = if m >= 4 { [2usize, 4][rng.gen_range(0..2)] } else { 2 };
            let alpha = 10f64.powf(rng.gen_range(-3.0..0.3));
            let p_total = 10f64.powf(rng.gen_range(0.6..2.0));
            let tau = rng.gen_range(0.0..0.9);
            let v = rng.gen_range(0.0..3.0);
            let rho = p_total;
            let (g3, mse3) = gamma_mse_case3(
                m,
                k,
                p_total,
                p_total / k as f64,
                tau,
                v,
                alpha,
                rho,
                1.0,
            )
            .unwrap();
            let (g4, mse4) = gamma_mse_case4(m, k, tau, v, alpha, rho).unwrap();
            assert_relative_eq!(g3, g4, max_relative = 1e-9);
            assert_relative_eq!(mse3, mse4, max_relative = 1e-9);
        }
    }

    #[test]
    fn tau_one_kills_sinr_and_v_zero_unit_mse() {
        let (g, mse) = gamma_mse_case4(8, 4, 1.0, 0.7, 0.1, 10.0).unwrap();
        assert_relative_eq!(g, 0.0, epsilon = 1e-14);
        assert!(mse > 0.0);
        let (_, mse0) = gamma_mse_case4(8, 4, 0.3, 0.0, 0.1, 10.0).unwrap();
        assert_relative_eq!(mse0, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn single_user_has_no_interference_term() {
        // K = 1, p_k = P: the only MSE contributions are signal and noise.
        let p_total = 5.0;
        let (_, mse) = gamma_mse_case2(
            0.8, 0.3, 0.4, 4, 1, p_total, p_total, 0.2, 1.0, 0.1, p_total, 1.0,
        )
        .unwrap();
        let e: f64 = 0.8;
        let b = (1.0f64 - 0.04).sqrt() * e / (1.0 + e);
        let beta = 4.0;
        let noise = 1.0 * 0.3 / (p_total * 1.0 * (beta - 0.4));
        let expect = (1.0 * b - 1.0).powi(2) + noise;
        assert_relative_eq!(mse, expect, epsilon = 1e-12);
    }

    #[test]
    fn sinr_strictly_decreasing_in_tau() {
        for &(m, k, alpha) in &[(4usize, 2usize, 0.05f64), (8, 4, 0.3), (2, 2, 1.0)] {
            let mut last = f64::INFINITY;
            for i in 0..40 {
                let tau = 0.01 + 0.98 * i as f64 / 39.0;
                let (g, _) = gamma_mse_case4(m, k, tau, 1.0, alpha, 20.0).unwrap();
                assert!(g < last, "gamma not decreasing at tau={tau}");
                last = g;
            }
        }
    }

    #[test]
    fn mse_is_quadratic_in_v() {
        // Constant second difference across v in {0.5, 1.0, 1.5}.
        let f = |v: f64| {
            gamma_mse_case3(4, 2, 10.0, 4.0, 0.25, v, 0.1, 10.0, 1.0)
                .unwrap()
                .1
        };
        let d2a = f(1.5) - 2.0 * f(1.0) + f(0.5);
        let d2b = f(2.5) - 2.0 * f(2.0) + f(1.5);
        assert!((d2a - d2b).abs() < 1e-9, "{d2a} vs {d2b}");
    }

    #[test]
    fn v_star_minimizes_on_grid() {
        let mut rng = stream(30, &[1]);
        for _ in 0..30 {
            let m = [2usize, 4, 8][rng.gen_range(0..3)];
            let k = if m >= 4 { [2usize, 4][rng.gen_range(0..2)] } else { 2 };
            let alpha = 10f64.powf(rng.gen_range(-3.0..0.0));
            let p_total = 10f64.powf(rng.gen_range(0.6..2.0));
            let tau = rng.gen_range(0.1..0.4);
            let e = e_uncorrelated(m as f64 / k as f64, alpha).unwrap();
            let (b, q) = mse_quad_case4(e, m, k, tau, alpha, p_total).unwrap();
            let vstar = v_star_from_quad(b, q);
            let eval = |v: f64| (v * b - 1.0).powi(2) + q * v * v;
            let n = 1000;
            let mut best = (0usize, f64::INFINITY);
            for i in 0..=n {
                let v = 5.0 * i as f64 / n as f64;
                let val = eval(v);
                if val < best.1 {
                    best = (i, val);
                }
            }
            let grid_v = 5.0 * best.0 as f64 / n as f64;
            assert!(
                (vstar - grid_v).abs() <= 5.0 / n as f64 + 1e-12,
                "vstar {vstar} vs grid {grid_v}"
            );
            // Centered difference of a quadratic is exact; the slope at the
            // optimum must vanish.
            let h = 1e-4;
            let slope = (eval(vstar + h) - eval(vstar - h)) / (2.0 * h);
            assert!(slope.abs() < 1e-7, "slope {slope}");
        }
    }

    #[test]
    fn v_star_zero_at_tau_one() {
        let e = e_uncorrelated(2.0, 0.1).unwrap();
        let (b, q) = mse_quad_case4(e, 4, 2, 1.0, 0.1, 10.0).unwrap();
        assert_eq!(v_star_from_quad(b, q), 0.0);
    }

    #[test]
    fn input_vector_layouts() {
        let solver = ProfileSolver::new(
            CaseId::Case4,
            4,
            2,
            10.0,
            1.0,
            vec![5.0, 5.0],
            &CorrelationSet::Identity,
        )
        .unwrap();
        let profile = solver.profile(0.1).unwrap();
        let x = solver.input(&profile, 0, 0.1, 0.2, 1.0).unwrap();
        assert_eq!(x.prior, vec![4.0, 2.0, 10.0, 1.0]);
        assert!(x.numerical.is_empty());
        assert_eq!(x.dim(), 7);

        let solver3 = ProfileSolver::new(
            CaseId::Case3,
            4,
            2,
            10.0,
            1.0,
            vec![6.0, 4.0],
            &CorrelationSet::Identity,
        )
        .unwrap();
        let profile3 = solver3.profile(0.1).unwrap();
        let x3 = solver3.input(&profile3, 1, 0.1, 0.2, 1.0).unwrap();
        assert_eq!(x3.numerical.len(), 1);
        assert_relative_eq!(x3.numerical[0], e_uncorrelated(2.0, 0.1).unwrap());
        assert_eq!(x3.prior, vec![4.0, 2.0, 10.0, 4.0, 1.0]);

        // Changing tau leaves the numerical part untouched.
        let mut x3b = x3.clone();
        x3b.set_tau(0.37);
        assert_eq!(x3.numerical, x3b.numerical);
    }

    #[test]
    fn input_refresh_on_alpha_change() {
        let theta = CorrelationModel::new(Complex64::new(0.4, 0.1)).unwrap();
        let solver = ProfileSolver::new(
            CaseId::Case2,
            4,
            2,
            10.0,
            1.0,
            vec![5.0, 5.0],
            &CorrelationSet::Shared(theta),
        )
        .unwrap();
        let p1 = solver.profile(0.1).unwrap();
        let mut x = solver.input(&p1, 0, 0.1, 0.2, 1.0).unwrap();
        let n1 = x.numerical.clone();
        let p2 = solver.profile(0.5).unwrap();
        x.set_alpha(0.5, &p2, 0).unwrap();
        assert_ne!(n1, x.numerical);
        assert_relative_eq!(x.alpha(), 0.5);
    }

    #[test]
    fn model_prediction_matches_direct_formulas() {
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
        let profile = solver.profile(0.2).unwrap();
        let x = solver.input(&profile, 0, 0.2, 0.3, 1.2).unwrap();
        let (g, mse) = x.model_prediction().unwrap();
        let (g2, mse2) = gamma_mse_case3(8, 2, 20.0, 12.0, 0.3, 1.2, 0.2, 20.0, 1.0).unwrap();
        assert_relative_eq!(g, g2, epsilon = 1e-14);
        assert_relative_eq!(mse, mse2, epsilon = 1e-14);
    }

    #[test]
    fn case1_identity_reduces_to_case3() {
        // Containment: the general machinery on Theta = I agrees with the
        // closed forms.
        let m = 6;
        let k = 3;
        let theta = CMat::identity(m, m);
        let thetas: Vec<&CMat> = (0..k).map(|_| &theta).collect();
        let alpha = 0.15;
        let p = vec![3.0, 2.0, 5.0];
        let p_total = 10.0;
        let (e, t) = solve_e_fixed_point(&thetas, alpha).unwrap();
        let primes = solve_e_primes(&thetas, &e, &t, &p).unwrap();
        for user in 0..k {
            let (g1, mse1) = gamma_mse_case1(
                e[user],
                primes.upsilon0[user],
                primes.psi0,
                p[user],
                0.25,
                1.1,
                p_total,
            );
            let (g3, mse3) =
                gamma_mse_case3(m, k, p_total, p[user], 0.25, 1.1, alpha, p_total, 1.0).unwrap();
            assert_relative_eq!(g1, g3, max_relative = 1e-9);
            assert_relative_eq!(mse1, mse3, max_relative = 1e-9);
        }
    }

    #[test]
    fn correlated_case2_profile_is_consistent_with_case1_machinery() {
        // Same shared Theta through the general (Case 1) and reduced (Case 2)
        // paths must give identical indicators.
        let m = 5;
        let k = 2;
        let model = CorrelationModel::new(Complex64::new(0.45, 0.25)).unwrap();
        let theta = correlation_matrix(m, model.r).unwrap();
        let thetas: Vec<&CMat> = (0..k).map(|_| &theta).collect();
        let alpha = 0.2;
        let p = vec![4.0, 6.0];
        let p_total = 10.0;
        let (e, t) = solve_e_fixed_point(&thetas, alpha).unwrap();
        let primes = solve_e_primes(&thetas, &e, &t, &p).unwrap();
        let (eigs, _) = linalg::hermitian_eig(&theta).unwrap();
        let (es, e12, e22) = shared_corr_moments(&eigs, m as f64 / k as f64, alpha, m).unwrap();
        assert_relative_eq!(e[0], es, max_relative = 1e-9);
        for user in 0..k {
            let (g1, mse1) = gamma_mse_case1(
                e[user],
                primes.upsilon0[user],
                primes.psi0,
                p[user],
                0.3,
                0.9,
                p_total,
            );
            let (g2, mse2) = gamma_mse_case2(
                es, e12, e22, m, k, p_total, p[user], 0.3, 0.9, alpha, p_total, 1.0,
            )
            .unwrap();
            assert_relative_eq!(g1, g2, max_relative = 1e-8);
            assert_relative_eq!(mse1, mse2, max_relative = 1e-8);
        }
    }
}
