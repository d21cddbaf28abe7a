//! Correlated Rayleigh channels and their imperfect estimates.
//!
//! Each user k has an M x M correlation matrix `Theta_k`; the true channel is
//! `h_k = Theta_k^{1/2} z_k` and the transmitter only sees
//! `h_hat_k = Theta_k^{1/2} (sqrt(1 - tau_k^2) z_k + tau_k q_k)` where `z_k`
//! and `q_k` are i.i.d. standard complex Gaussian and `tau_k` in [0, 1] sets
//! the amount of CSI uncertainty. The corruption preserves the covariance
//! since (1 - tau^2) + tau^2 = 1.

use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::{self, CMat};
use crate::{invalid, Result};

/// Static scenario parameters.
#[derive(Debug, Clone)]
pub struct SystemConfig {
    /// Antenna count at the base station.
    pub m: usize,
    /// Single-antenna user count, `k <= m`.
    pub k: usize,
    /// Maximum total transmit power (linear watts).
    pub p_total: f64,
    /// Noise variance assumed by the transmitter (linear).
    pub sigma2: f64,
    /// Imperfect ratio rho_m / rho in (0, 1]; 1 means no unknown interference.
    pub rho_ratio: f64,
    /// Symbols per frame.
    pub frame_size: usize,
    /// Frames per sensing interval.
    pub n_frames: usize,
    /// Per-user power allocation, sums to at most `p_total`.
    pub power_alloc: Vec<f64>,
}

impl SystemConfig {
    pub fn new(
        m: usize,
        k: usize,
        p_total: f64,
        sigma2: f64,
        rho_ratio: f64,
        frame_size: usize,
        n_frames: usize,
        power_alloc: Vec<f64>,
    ) -> Result<Self> {
        if m == 0 || k == 0 || k > m {
            return Err(invalid(format!("need 1 <= K <= M, got M={m}, K={k}")));
        }
        if !(p_total > 0.0) {
            return Err(invalid("total power must be positive"));
        }
        if !(sigma2 > 0.0) {
            return Err(invalid("noise variance must be positive"));
        }
        if !(rho_ratio > 0.0 && rho_ratio <= 1.0) {
            return Err(invalid("rho_ratio must lie in (0, 1]"));
        }
        if power_alloc.len() != k {
            return Err(invalid("power allocation length must equal K"));
        }
        if power_alloc.iter().any(|&p| !(p > 0.0)) {
            return Err(invalid("per-user powers must be positive"));
        }
        let sum: f64 = power_alloc.iter().sum();
        if sum > p_total * (1.0 + 1e-9) {
            return Err(invalid(format!(
                "power allocation sum {sum} exceeds budget {p_total}"
            )));
        }
        Ok(Self {
            m,
            k,
            p_total,
            sigma2,
            rho_ratio,
            frame_size,
            n_frames,
            power_alloc,
        })
    }

    /// Equal-power configuration helper.
    pub fn equal_power(
        m: usize,
        k: usize,
        p_total: f64,
        sigma2: f64,
        rho_ratio: f64,
        frame_size: usize,
        n_frames: usize,
    ) -> Result<Self> {
        let p = vec![p_total / k as f64; k];
        Self::new(m, k, p_total, sigma2, rho_ratio, frame_size, n_frames, p)
    }

    /// Nominal SNR rho = P / sigma^2.
    pub fn rho(&self) -> f64 {
        self.p_total / self.sigma2
    }

    /// Practical SNR rho_m after the unknown interference.
    pub fn rho_m(&self) -> f64 {
        self.rho() * self.rho_ratio
    }

    /// Effective noise variance seen by the receivers: sigma^2 * (rho / rho_m).
    pub fn sigma_eff2(&self) -> f64 {
        self.sigma2 / self.rho_ratio
    }
}

/// Exponential correlation profile with complex coefficient `r`, |r| < 1.
#[derive(Debug, Clone, Copy)]
pub struct CorrelationModel {
    pub r: Complex64,
}

impl CorrelationModel {
    pub fn new(r: Complex64) -> Result<Self> {
        if !(r.norm() < 1.0) {
            return Err(invalid(format!("|r| must be < 1, got {}", r.norm())));
        }
        Ok(Self { r })
    }

    /// Draw `r = u e^{i phi}` with `u ~ U[0, 1)` and `phi ~ U[0, 2 pi)`.
    pub fn sample(rng: &mut impl Rng) -> Self {
        let u: f64 = rng.gen();
        let phi: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
        Self {
            r: Complex64::from_polar(u, phi),
        }
    }

    /// The M x M matrix with `Theta[i][j] = r^{j-i}` for `i <= j` and
    /// Hermitian completion below the diagonal.
    pub fn matrix(&self, m: usize) -> Result<CMat> {
        correlation_matrix(m, self.r)
    }
}

/// Build the exponential-profile correlation matrix for coefficient `r`.
pub fn correlation_matrix(m: usize, r: Complex64) -> Result<CMat> {
    if m == 0 {
        return Err(invalid("correlation matrix needs M >= 1"));
    }
    if !(r.norm() < 1.0) {
        return Err(invalid(format!("|r| must be < 1, got {}", r.norm())));
    }
    let mut powers = Vec::with_capacity(m);
    let mut acc = Complex64::new(1.0, 0.0);
    for _ in 0..m {
        powers.push(acc);
        acc *= r;
    }
    let mut theta = CMat::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            theta[(i, j)] = if i <= j {
                powers[j - i]
            } else {
                powers[i - j].conj()
            };
        }
    }
    Ok(theta)
}

/// Principal square root of a Hermitian PSD matrix (eigenvalue clamp at zero).
pub fn matrix_sqrt_psd(theta: &CMat) -> Result<CMat> {
    linalg::sqrt_psd(theta)
}

/// Per-user correlation structure for one scenario.
#[derive(Debug, Clone)]
pub enum CorrelationSet {
    /// Distinct Theta_k per user.
    Distinct(Vec<CorrelationModel>),
    /// One Theta shared by every user.
    Shared(CorrelationModel),
    /// Theta = I for every user (no square root needed).
    Identity,
}

/// Correlation matrices and their cached square roots for one scenario.
#[derive(Debug, Clone)]
pub struct ChannelSpace {
    m: usize,
    k: usize,
    thetas: Vec<CMat>,
    sqrts: Option<Vec<CMat>>,
    shared: bool,
}

impl ChannelSpace {
    pub fn new(m: usize, k: usize, corr: &CorrelationSet) -> Result<Self> {
        match corr {
            CorrelationSet::Distinct(models) => {
                if models.len() != k {
                    return Err(invalid("need one correlation model per user"));
                }
                let thetas: Vec<CMat> = models
                    .iter()
                    .map(|c| c.matrix(m))
                    .collect::<Result<_>>()?;
                let sqrts = thetas.iter().map(matrix_sqrt_psd).collect::<Result<_>>()?;
                Ok(Self {
                    m,
                    k,
                    thetas,
                    sqrts: Some(sqrts),
                    shared: false,
                })
            }
            CorrelationSet::Shared(model) => {
                let theta = model.matrix(m)?;
                let sqrt = matrix_sqrt_psd(&theta)?;
                Ok(Self {
                    m,
                    k,
                    thetas: vec![theta],
                    sqrts: Some(vec![sqrt]),
                    shared: true,
                })
            }
            CorrelationSet::Identity => Ok(Self {
                m,
                k,
                thetas: vec![CMat::identity(m, m)],
                sqrts: None,
                shared: true,
            }),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Correlation matrix of user `k`.
    pub fn theta(&self, k: usize) -> &CMat {
        if self.shared {
            &self.thetas[0]
        } else {
            &self.thetas[k]
        }
    }

    /// All K correlation matrices (shared ones repeated by reference).
    pub fn thetas(&self) -> Vec<&CMat> {
        (0..self.k).map(|k| self.theta(k)).collect()
    }

    fn sqrt(&self, k: usize) -> Option<&CMat> {
        self.sqrts
            .as_ref()
            .map(|s| if self.shared { &s[0] } else { &s[k] })
    }
}

/// Fading model: a correlation space plus per-user CSI uncertainty. Sampling
/// is pure given the random source, so independent streams can sample frames
/// concurrently.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    space: Arc<ChannelSpace>,
    tau: Vec<f64>,
}

impl ChannelModel {
    pub fn new(space: Arc<ChannelSpace>, tau: Vec<f64>) -> Result<Self> {
        if tau.len() != space.k() {
            return Err(invalid("need one tau per user"));
        }
        if tau.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
            return Err(invalid("tau entries must lie in [0, 1]"));
        }
        Ok(Self { space, tau })
    }

    pub fn space(&self) -> &Arc<ChannelSpace> {
        &self.space
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    /// Draw one channel realization: fresh `z_k`, `q_k` for every user.
    pub fn sample(&self, rng: &mut impl Rng) -> ChannelRealization {
        let m = self.space.m();
        let k = self.space.k();
        let mut z = CMat::zeros(m, k);
        let mut q = CMat::zeros(m, k);
        let mut h = CMat::zeros(k, m);
        let mut h_hat = CMat::zeros(k, m);
        let mut zbuf = DVector::zeros(m);
        let mut mixbuf = DVector::zeros(m);
        for user in 0..k {
            for i in 0..m {
                z[(i, user)] = complex_gaussian(rng);
            }
            for i in 0..m {
                q[(i, user)] = complex_gaussian(rng);
            }
            let tau = self.tau[user];
            let keep = (1.0 - tau * tau).sqrt();
            for i in 0..m {
                zbuf[i] = z[(i, user)];
                mixbuf[i] = keep * z[(i, user)] + tau * q[(i, user)];
            }
            match self.space.sqrt(user) {
                Some(s) => {
                    let hk = s * &zbuf;
                    let hk_hat = s * &mixbuf;
                    for j in 0..m {
                        h[(user, j)] = hk[j].conj();
                        h_hat[(user, j)] = hk_hat[j].conj();
                    }
                }
                None => {
                    for j in 0..m {
                        h[(user, j)] = zbuf[j].conj();
                        h_hat[(user, j)] = mixbuf[j].conj();
                    }
                }
            }
        }
        ChannelRealization {
            space: Arc::clone(&self.space),
            tau: self.tau.clone(),
            h,
            h_hat,
            z,
            q,
        }
    }
}

/// One draw of true channels and their corrupted estimates.
///
/// `h` and `h_hat` are K x M with row k equal to `h_k^H` (`h_k` column
/// convention), consistent with `y = H x + n`.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    space: Arc<ChannelSpace>,
    tau: Vec<f64>,
    pub h: CMat,
    pub h_hat: CMat,
    /// Underlying i.i.d. draws, columns `z_k` (M x K).
    pub z: CMat,
    /// Underlying i.i.d. error draws, columns `q_k` (M x K).
    pub q: CMat,
}

impl ChannelRealization {
    pub fn theta(&self, k: usize) -> &CMat {
        self.space.theta(k)
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn space(&self) -> &Arc<ChannelSpace> {
        &self.space
    }
}

/// Draw a channel realization for an explicit configuration. Deterministic
/// under a fixed random source.
pub fn sample_channel(
    cfg: &SystemConfig,
    corr: &CorrelationSet,
    tau: &[f64],
    rng: &mut impl Rng,
) -> Result<ChannelRealization> {
    let space = Arc::new(ChannelSpace::new(cfg.m, cfg.k, corr)?);
    let model = ChannelModel::new(space, tau.to_vec())?;
    Ok(model.sample(rng))
}

/// One CN(0, 1) draw: independent real and imaginary parts of variance 1/2.
#[inline]
pub fn complex_gaussian(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * std::f64::consts::FRAC_1_SQRT_2, im * std::f64::consts::FRAC_1_SQRT_2)
}
