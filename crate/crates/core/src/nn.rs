//! Minimal dense feed-forward network engine.
//!
//! Supports exactly what the predictors and the unfolded optimizer need:
//! batch normalization (batch statistics while training, running statistics
//! at inference), ReLU and linear activations, a clamped power-of-ten output
//! activation `10^{max(min(a, -1), -3)}`, manual backpropagation for both
//! parameter and input gradients, and plain mini-batch gradient descent.
//!
//! Layer 0 is the input layer: no affine map, just optional batch
//! normalization of the raw features (this is where input standardization
//! lives; its running statistics freeze the training-set feature scales).
//! Every later layer applies affine -> optional BN -> activation.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{invalid, numerical, Result};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    /// `10^{max(min(a, -1), -3)}`; output always inside `[1e-3, 1e-1]`.
    ClampedPow10,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::ClampedPow10 => 10f64.powf(z.min(-1.0).max(-3.0)),
        }
    }

    /// Derivative given pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::ClampedPow10 => {
                if z > -3.0 && z < -1.0 {
                    std::f64::consts::LN_10 * a
                } else {
                    0.0
                }
            }
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::ClampedPow10 => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => Activation::Linear,
            1 => Activation::Relu,
            2 => Activation::ClampedPow10,
            _ => return Err(crate::Error::Format(format!("bad activation code {c}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation, batch_norm: bool) -> Self {
        Self {
            width,
            activation,
            batch_norm,
        }
    }
}

#[derive(Debug, Clone)]
struct BnParams {
    scale: DVector<f64>,
    shift: DVector<f64>,
}

#[derive(Debug, Clone)]
struct BnStats {
    mean: DVector<f64>,
    var: DVector<f64>,
}

/// Dense network with learnable affine, BN scale/shift parameters and BN
/// running statistics.
#[derive(Debug, Clone)]
pub struct DenseNet {
    specs: Vec<LayerSpec>,
    /// weights[l-1] maps layer l-1 outputs (rows) to layer l units (cols).
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
    bn: Vec<Option<BnParams>>,
    bn_stats: Vec<Option<BnStats>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-layer caches of one forward pass, consumed by `backward`.
pub struct ForwardTrace {
    mode: Mode,
    /// Activations entering each affine map; inputs[0] is the raw batch.
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activation (post-BN) values per layer.
    pre_act: Vec<DMatrix<f64>>,
    /// Outputs per layer (after activation).
    outputs: Vec<DMatrix<f64>>,
    /// Normalized values per BN layer.
    bn_xhat: Vec<Option<DMatrix<f64>>>,
    /// Inverse standard deviation per BN layer (batch or running).
    bn_istd: Vec<Option<DVector<f64>>>,
    /// Batch means per BN layer (train mode only).
    bn_mean: Vec<Option<DVector<f64>>>,
    /// Batch vars per BN layer (train mode only), for stats commits.
    bn_var: Vec<Option<DVector<f64>>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &DMatrix<f64> {
        self.outputs.last().unwrap()
    }
}

/// Parameter gradients mirroring the net layout, plus input gradients.
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub bn_scale: Vec<Option<DVector<f64>>>,
    pub bn_shift: Vec<Option<DVector<f64>>>,
    pub input: DMatrix<f64>,
}

impl DenseNet {
    /// Build a network with random affine weights (`N(0, 1/fan_in)`), zero
    /// biases, unit BN scales and zero shifts.
    pub fn new(specs: Vec<LayerSpec>, rng: &mut impl Rng) -> Result<Self> {
        if specs.len() < 2 {
            return Err(invalid("a network needs an input and at least one layer"));
        }
        if specs.iter().any(|s| s.width == 0) {
            return Err(invalid("layer widths must be positive"));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 1..specs.len() {
            let fan_in = specs[l - 1].width;
            let std = (1.0 / fan_in as f64).sqrt();
            let w = DMatrix::from_fn(fan_in, specs[l].width, |_, _| {
                let g: f64 = rng.sample(StandardNormal);
                g * std
            });
            weights.push(w);
            biases.push(DVector::zeros(specs[l].width));
        }
        let bn = specs
            .iter()
            .map(|s| {
                s.batch_norm.then(|| BnParams {
                    scale: DVector::from_element(s.width, 1.0),
                    shift: DVector::zeros(s.width),
                })
            })
            .collect();
        let bn_stats = specs
            .iter()
            .map(|s| {
                s.batch_norm.then(|| BnStats {
                    mean: DVector::zeros(s.width),
                    var: DVector::from_element(s.width, 1.0),
                })
            })
            .collect();
        let net = Self {
            specs,
            weights,
            biases,
            bn,
            bn_stats,
        };
        debug_assert_eq!(net.param_count(), net.analytic_param_count());
        Ok(net)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_dim(&self) -> usize {
        self.specs[0].width
    }

    pub fn output_dim(&self) -> usize {
        self.specs.last().unwrap().width
    }

    /// Trainable parameter count implied by the layer dimensions.
    pub fn analytic_param_count(&self) -> usize {
        let mut n = 0;
        for l in 1..self.specs.len() {
            n += self.specs[l - 1].width * self.specs[l].width + self.specs[l].width;
        }
        for s in &self.specs {
            if s.batch_norm {
                n += 2 * s.width;
            }
        }
        n
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for w in &self.weights {
            n += w.len();
        }
        for b in &self.biases {
            n += b.len();
        }
        for p in self.bn.iter().flatten() {
            n += p.scale.len() + p.shift.len();
        }
        n
    }

    /// Number of exponential evaluations in one forward pass (one per
    /// clamped power-of-ten unit).
    pub fn exponential_ops_per_forward(&self) -> usize {
        self.specs
            .iter()
            .skip(1)
            .filter(|s| s.activation == Activation::ClampedPow10)
            .map(|s| s.width)
            .sum()
    }

    /// Overwrite the final affine layer (used for identity-correction
    /// initialization of predictor heads).
    pub fn set_output_layer(&mut self, weights: DMatrix<f64>, biases: DVector<f64>) -> Result<()> {
        let l = self.weights.len() - 1;
        if weights.shape() != self.weights[l].shape() || biases.len() != self.biases[l].len() {
            return Err(invalid("output layer shape mismatch"));
        }
        self.weights[l] = weights;
        self.biases[l] = biases;
        Ok(())
    }

    /// Forward pass. `Train` uses batch statistics in BN layers but does not
    /// mutate the running statistics; call `commit_bn_stats` with the trace
    /// to fold them in.
    pub fn forward_cached(&self, x: &DMatrix<f64>, mode: Mode) -> Result<ForwardTrace> {
        if x.ncols() != self.input_dim() {
            return Err(invalid(format!(
                "input has {} features, expected {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let levels = self.specs.len();
        let mut trace = ForwardTrace {
            mode,
            inputs: Vec::with_capacity(levels),
            pre_act: Vec::with_capacity(levels),
            outputs: Vec::with_capacity(levels),
            bn_xhat: Vec::with_capacity(levels),
            bn_istd: Vec::with_capacity(levels),
            bn_mean: Vec::with_capacity(levels),
            bn_var: Vec::with_capacity(levels),
        };
        let mut current = x.clone();
        for l in 0..levels {
            let z = if l == 0 {
                trace.inputs.push(DMatrix::zeros(0, 0));
                current.clone()
            } else {
                trace.inputs.push(current.clone());
                let mut z = &current * &self.weights[l - 1];
                for mut row in z.row_iter_mut() {
                    row += self.biases[l - 1].transpose();
                }
                z
            };
            let (pre, xhat, istd, mean, var) = self.apply_bn(l, z, mode);
            let spec = self.specs[l];
            let out = pre.map(|v| spec.activation.apply(v));
            trace.pre_act.push(pre);
            trace.outputs.push(out.clone());
            trace.bn_xhat.push(xhat);
            trace.bn_istd.push(istd);
            trace.bn_mean.push(mean);
            trace.bn_var.push(var);
            current = out;
        }
        Ok(trace)
    }

    /// Inference-mode forward returning just the outputs.
    pub fn forward(&self, x: &DMatrix<f64>, mode: Mode) -> Result<DMatrix<f64>> {
        Ok(self.forward_cached(x, mode)?.output().clone())
    }

    /// Fold the batch statistics recorded in a train-mode trace into the
    /// running statistics.
    pub fn commit_bn_stats(&mut self, trace: &ForwardTrace) {
        debug_assert_eq!(trace.mode, Mode::Train);
        for l in 0..self.specs.len() {
            if let (Some(stats), Some(mean), Some(var)) = (
                self.bn_stats[l].as_mut(),
                trace.bn_mean[l].as_ref(),
                trace.bn_var[l].as_ref(),
            ) {
                stats.mean = &stats.mean * BN_MOMENTUM + mean * (1.0 - BN_MOMENTUM);
                stats.var = &stats.var * BN_MOMENTUM + var * (1.0 - BN_MOMENTUM);
            }
        }
    }

    #[allow(clippy::type_complexity)]
    fn apply_bn(
        &self,
        l: usize,
        z: DMatrix<f64>,
        mode: Mode,
    ) -> (
        DMatrix<f64>,
        Option<DMatrix<f64>>,
        Option<DVector<f64>>,
        Option<DVector<f64>>,
        Option<DVector<f64>>,
    ) {
        let Some(params) = self.bn[l].as_ref() else {
            return (z, None, None, None, None);
        };
        let n = z.nrows() as f64;
        let d = z.ncols();
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = DVector::zeros(d);
                let mut var = DVector::zeros(d);
                for j in 0..d {
                    let col = z.column(j);
                    let m = col.sum() / n;
                    mean[j] = m;
                    var[j] = col.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / n;
                }
                (mean, var)
            }
            Mode::Infer => {
                let stats = self.bn_stats[l].as_ref().unwrap();
                (stats.mean.clone(), stats.var.clone())
            }
        };
        let istd = var.map(|v| 1.0 / (v + BN_EPS).sqrt());
        let mut xhat = z;
        for j in 0..d {
            let (m, is) = (mean[j], istd[j]);
            for i in 0..xhat.nrows() {
                xhat[(i, j)] = (xhat[(i, j)] - m) * is;
            }
        }
        let mut out = xhat.clone();
        for j in 0..d {
            let (s, b) = (params.scale[j], params.shift[j]);
            for i in 0..out.nrows() {
                out[(i, j)] = out[(i, j)] * s + b;
            }
        }
        let (mean_c, var_c) = match mode {
            Mode::Train => (Some(mean), Some(var)),
            Mode::Infer => (None, None),
        };
        (out, Some(xhat), Some(istd), mean_c, var_c)
    }

    /// Exact gradients of a scalar loss with respect to every parameter and
    /// the inputs, given `d loss / d output` for the traced batch.
    pub fn backward(&self, trace: &ForwardTrace, dout: &DMatrix<f64>) -> Gradients {
        let levels = self.specs.len();
        let mut gw: Vec<DMatrix<f64>> = self
            .weights
            .iter()
            .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
            .collect();
        let mut gb: Vec<DVector<f64>> = self.biases.iter().map(|b| DVector::zeros(b.len())).collect();
        let mut gscale: Vec<Option<DVector<f64>>> = self
            .bn
            .iter()
            .map(|p| p.as_ref().map(|p| DVector::zeros(p.scale.len())))
            .collect();
        let mut gshift = gscale.clone();

        let mut delta = dout.clone();
        for l in (0..levels).rev() {
            let spec = self.specs[l];
            // Through the activation.
            let pre = &trace.pre_act[l];
            let out = &trace.outputs[l];
            let mut dpre = delta;
            for i in 0..dpre.nrows() {
                for j in 0..dpre.ncols() {
                    dpre[(i, j)] *= spec.activation.derivative(pre[(i, j)], out[(i, j)]);
                }
            }
            // Through BN if present.
            let dz = if let Some(params) = self.bn[l].as_ref() {
                let xhat = trace.bn_xhat[l].as_ref().unwrap();
                let istd = trace.bn_istd[l].as_ref().unwrap();
                let n = dpre.nrows() as f64;
                let d = dpre.ncols();
                let gs = gscale[l].as_mut().unwrap();
                let gh = gshift[l].as_mut().unwrap();
                for j in 0..d {
                    for i in 0..dpre.nrows() {
                        gs[j] += dpre[(i, j)] * xhat[(i, j)];
                        gh[j] += dpre[(i, j)];
                    }
                }
                match trace.mode {
                    Mode::Infer => {
                        let mut dz = dpre;
                        for j in 0..d {
                            let f = params.scale[j] * istd[j];
                            for i in 0..dz.nrows() {
                                dz[(i, j)] *= f;
                            }
                        }
                        dz
                    }
                    Mode::Train => {
                        let mut dz = DMatrix::zeros(dpre.nrows(), d);
                        for j in 0..d {
                            let is = istd[j];
                            let scale = params.scale[j];
                            // dxhat (implicit), then dvar and dmean.
                            let mut dvar = 0.0;
                            let mut dmean = 0.0;
                            let mut sum_xm = 0.0;
                            for i in 0..dpre.nrows() {
                                let dxh = dpre[(i, j)] * scale;
                                let xm = xhat[(i, j)] / is; // z - mean
                                dvar += dxh * xm;
                                dmean += dxh;
                                sum_xm += xm;
                            }
                            dvar *= -0.5 * is * is * is;
                            dmean = -is * dmean + dvar * (-2.0 / n) * sum_xm;
                            for i in 0..dpre.nrows() {
                                let dxh = dpre[(i, j)] * scale;
                                let xm = xhat[(i, j)] / is;
                                dz[(i, j)] = dxh * is + dvar * 2.0 * xm / n + dmean / n;
                            }
                        }
                        dz
                    }
                }
            } else {
                dpre
            };
            // Through the affine map (absent for the input layer).
            if l == 0 {
                return Gradients {
                    weights: gw,
                    biases: gb,
                    bn_scale: gscale,
                    bn_shift: gshift,
                    input: dz,
                };
            }
            let prev = &trace.inputs[l];
            gw[l - 1] = prev.transpose() * &dz;
            for j in 0..dz.ncols() {
                gb[l - 1][j] = dz.column(j).sum();
            }
            delta = &dz * self.weights[l - 1].transpose();
        }
        unreachable!();
    }

    /// Apply a plain gradient step with learning rate `lr`.
    pub fn apply_gradients(&mut self, g: &Gradients, lr: f64) {
        for (w, gw) in self.weights.iter_mut().zip(&g.weights) {
            *w -= gw * lr;
        }
        for (b, gb) in self.biases.iter_mut().zip(&g.biases) {
            *b -= gb * lr;
        }
        for (p, (gs, gh)) in self
            .bn
            .iter_mut()
            .zip(g.bn_scale.iter().zip(&g.bn_shift))
        {
            if let (Some(p), Some(gs), Some(gh)) = (p.as_mut(), gs.as_ref(), gh.as_ref()) {
                p.scale -= gs * lr;
                p.shift -= gh * lr;
            }
        }
    }

    /// All trainable parameters in declaration order.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in 0..self.specs.len() {
            if l > 0 {
                out.extend(self.weights[l - 1].iter());
                out.extend(self.biases[l - 1].iter());
            }
            if let Some(p) = self.bn[l].as_ref() {
                out.extend(p.scale.iter());
                out.extend(p.shift.iter());
            }
        }
        out
    }

    /// Restore parameters from `params_flat` layout.
    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(invalid("parameter vector length mismatch"));
        }
        let mut it = flat.iter().copied();
        for l in 0..self.specs.len() {
            if l > 0 {
                for v in self.weights[l - 1].iter_mut() {
                    *v = it.next().unwrap();
                }
                for v in self.biases[l - 1].iter_mut() {
                    *v = it.next().unwrap();
                }
            }
            if let Some(p) = self.bn[l].as_mut() {
                for v in p.scale.iter_mut() {
                    *v = it.next().unwrap();
                }
                for v in p.shift.iter_mut() {
                    *v = it.next().unwrap();
                }
            }
        }
        Ok(())
    }

    /// Gradients in the `params_flat` layout.
    pub fn gradients_flat(&self, g: &Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in 0..self.specs.len() {
            if l > 0 {
                out.extend(g.weights[l - 1].iter());
                out.extend(g.biases[l - 1].iter());
            }
            if let Some(gs) = g.bn_scale[l].as_ref() {
                out.extend(gs.iter());
                out.extend(g.bn_shift[l].as_ref().unwrap().iter());
            }
        }
        out
    }

    /// Serialize: version header, layer specs, then parameters and BN
    /// running statistics in declaration order as little-endian f64.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"DNET")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.specs.len() as u32).to_le_bytes())?;
        for s in &self.specs {
            w.write_all(&(s.width as u32).to_le_bytes())?;
            w.write_all(&[s.activation.code(), s.batch_norm as u8, 0, 0])?;
        }
        for v in self.params_flat() {
            w.write_all(&v.to_le_bytes())?;
        }
        for stats in self.bn_stats.iter().flatten() {
            for v in stats.mean.iter().chain(stats.var.iter()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"DNET" {
            return Err(crate::Error::Format("bad network file magic".into()));
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        let version = u32::from_le_bytes(buf4);
        if version != 1 {
            return Err(crate::Error::Format(format!(
                "unsupported network format version {version}"
            )));
        }
        r.read_exact(&mut buf4)?;
        let n_layers = u32::from_le_bytes(buf4) as usize;
        let mut specs = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            r.read_exact(&mut buf4)?;
            let width = u32::from_le_bytes(buf4) as usize;
            let mut tail = [0u8; 4];
            r.read_exact(&mut tail)?;
            specs.push(LayerSpec {
                width,
                activation: Activation::from_code(tail[0])?,
                batch_norm: tail[1] != 0,
            });
        }
        let mut rng = crate::rng::stream(0, &[0]);
        let mut net = Self::new(specs, &mut rng)?;
        let read_f64 = |r: &mut dyn Read| -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let mut flat = Vec::with_capacity(net.param_count());
        for _ in 0..net.param_count() {
            flat.push(read_f64(r)?);
        }
        net.set_params_flat(&flat)?;
        for stats in net.bn_stats.iter_mut().flatten() {
            for v in stats.mean.iter_mut() {
                *v = read_f64(r)?;
            }
            for v in stats.var.iter_mut() {
                *v = read_f64(r)?;
            }
        }
        Ok(net)
    }
}

/// Maps raw network outputs and a target row to a loss value and the loss
/// gradient with respect to the outputs. `aux` carries per-sample context
/// (for example the model-part indicator values a predictor head combines
/// with).
pub trait OutputHead {
    fn loss_and_grad(&self, aux: &[f64], out: &[f64], target: &[f64], grad: &mut [f64]) -> f64;
}

/// Plain squared error summed over outputs.
pub struct SquaredError;

impl OutputHead for SquaredError {
    fn loss_and_grad(&self, _aux: &[f64], out: &[f64], target: &[f64], grad: &mut [f64]) -> f64 {
        let mut loss = 0.0;
        for i in 0..out.len() {
            let r = out[i] - target[i];
            loss += r * r;
            grad[i] = 2.0 * r;
        }
        loss
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop when the best epoch loss has not improved by more than this.
    pub plateau_tol: f64,
    /// Number of consecutive non-improving epochs tolerated.
    pub plateau_patience: usize,
    /// Global L2 bound on each batch gradient; keeps ill-scaled batches from
    /// blowing up the parameters.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 2000,
            plateau_tol: 1e-6,
            plateau_patience: 20,
            grad_clip: 100.0,
        }
    }
}

/// Scale a gradient set down to the given global L2 norm when it exceeds it.
pub fn clip_gradients(g: &mut Gradients, max_norm: f64) {
    if !(max_norm > 0.0) {
        return;
    }
    let mut sq = 0.0;
    for w in &g.weights {
        sq += w.iter().map(|v| v * v).sum::<f64>();
    }
    for b in &g.biases {
        sq += b.iter().map(|v| v * v).sum::<f64>();
    }
    for s in g.bn_scale.iter().flatten() {
        sq += s.iter().map(|v| v * v).sum::<f64>();
    }
    for s in g.bn_shift.iter().flatten() {
        sq += s.iter().map(|v| v * v).sum::<f64>();
    }
    let norm = sq.sqrt();
    if norm <= max_norm {
        return;
    }
    let scale = max_norm / norm;
    for w in g.weights.iter_mut() {
        *w *= scale;
    }
    for b in g.biases.iter_mut() {
        *b *= scale;
    }
    for s in g.bn_scale.iter_mut().flatten() {
        *s *= scale;
    }
    for s in g.bn_shift.iter_mut().flatten() {
        *s *= scale;
    }
}

/// Loss trace of one training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Mini-batch gradient descent against an output head. Deterministic under a
/// fixed random source; parameters from the best epoch are kept.
pub fn train_mbgd(
    net: &mut DenseNet,
    inputs: &DMatrix<f64>,
    aux: Option<&DMatrix<f64>>,
    targets: &DMatrix<f64>,
    head: &dyn OutputHead,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<TrainReport> {
    let n = inputs.nrows();
    if n == 0 {
        return Err(invalid("training set is empty"));
    }
    if targets.nrows() != n {
        return Err(invalid("inputs/targets row mismatch"));
    }
    let empty_aux: Vec<f64> = Vec::new();
    let eval_loss = |net: &DenseNet| -> Result<f64> {
        let trace = net.forward_cached(inputs, Mode::Infer)?;
        let out = trace.output();
        let mut grad = vec![0.0; out.ncols()];
        let mut total = 0.0;
        for i in 0..n {
            let aux_row: Vec<f64> = aux.map(|a| a.row(i).iter().copied().collect()).unwrap_or_default();
            let aux_slice = if aux.is_some() { &aux_row[..] } else { &empty_aux[..] };
            let o: Vec<f64> = out.row(i).iter().copied().collect();
            let t: Vec<f64> = targets.row(i).iter().copied().collect();
            total += head.loss_and_grad(aux_slice, &o, &t, &mut grad);
        }
        Ok(total / n as f64)
    };

    let initial_loss = eval_loss(net)?;
    let mut best_loss = initial_loss;
    let mut best_params = net.params_flat();
    let mut best_stats: Vec<Option<BnStats>> = net.bn_stats.clone();
    let mut epoch_losses = Vec::new();
    let mut stale = 0usize;

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.max_epochs {
        // Fisher-Yates with the provided stream.
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let bsz = chunk.len();
            let mut xb = DMatrix::zeros(bsz, inputs.ncols());
            let mut tb = DMatrix::zeros(bsz, targets.ncols());
            for (r, &idx) in chunk.iter().enumerate() {
                xb.set_row(r, &inputs.row(idx));
                tb.set_row(r, &targets.row(idx));
            }
            let trace = net.forward_cached(&xb, Mode::Train)?;
            let out = trace.output();
            let mut dout = DMatrix::zeros(bsz, out.ncols());
            let mut grad = vec![0.0; out.ncols()];
            let mut batch_loss = 0.0;
            for (r, &idx) in chunk.iter().enumerate() {
                let aux_row: Vec<f64> = aux
                    .map(|a| a.row(idx).iter().copied().collect())
                    .unwrap_or_default();
                let aux_slice = if aux.is_some() { &aux_row[..] } else { &empty_aux[..] };
                let o: Vec<f64> = out.row(r).iter().copied().collect();
                let t: Vec<f64> = tb.row(r).iter().copied().collect();
                batch_loss += head.loss_and_grad(aux_slice, &o, &t, &mut grad);
                for c in 0..grad.len() {
                    dout[(r, c)] = grad[c] / bsz as f64;
                }
            }
            batch_loss /= bsz as f64;
            if !batch_loss.is_finite() {
                return Err(numerical(format!("loss became non-finite at epoch {epoch}")));
            }
            let mut grads = net.backward(&trace, &dout);
            clip_gradients(&mut grads, cfg.grad_clip);
            net.apply_gradients(&grads, cfg.learning_rate);
            net.commit_bn_stats(&trace);
            epoch_loss += batch_loss * bsz as f64;
        }
        epoch_loss /= n as f64;
        epoch_losses.push(epoch_loss);
        if epoch_loss < best_loss - cfg.plateau_tol {
            best_loss = epoch_loss;
            best_params = net.params_flat();
            best_stats = net.bn_stats.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.plateau_patience {
                break;
            }
        }
    }
    net.set_params_flat(&best_params)?;
    net.bn_stats = best_stats;
    let final_loss = eval_loss(net)?;
    Ok(TrainReport {
        epoch_losses,
        initial_loss,
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;

    fn eta_specs() -> Vec<LayerSpec> {
        vec![
            LayerSpec::new(2, Activation::Linear, false),
            LayerSpec::new(8, Activation::Relu, false),
            LayerSpec::new(1, Activation::ClampedPow10, false),
        ]
    }

    #[test]
    fn eta_net_parameter_count_is_33() {
        let net = DenseNet::new(eta_specs(), &mut stream(1, &[1])).unwrap();
        assert_eq!(net.param_count(), 33);
        assert_eq!(net.analytic_param_count(), 33);
        assert_eq!(net.exponential_ops_per_forward(), 1);
    }

    #[test]
    fn clamped_pow10_cases() {
        // Zero parameters: pre-activation 0 clamps to -1, output 0.1.
        let mut net = DenseNet::new(eta_specs(), &mut stream(1, &[2])).unwrap();
        let zeros = vec![0.0; net.param_count()];
        net.set_params_flat(&zeros).unwrap();
        let x = DMatrix::from_row_slice(1, 2, &[0.3, -0.7]);
        let y = net.forward(&x, Mode::Infer).unwrap();
        assert_relative_eq!(y[(0, 0)], 0.1, epsilon = 1e-15);

        assert_relative_eq!(Activation::ClampedPow10.apply(-5.0), 1e-3);
        assert_relative_eq!(Activation::ClampedPow10.apply(-2.0), 1e-2);
        assert_eq!(Activation::ClampedPow10.derivative(-5.0, 1e-3), 0.0);
        let a = Activation::ClampedPow10.apply(-2.0);
        assert_relative_eq!(
            Activation::ClampedPow10.derivative(-2.0, a),
            std::f64::consts::LN_10 * 1e-2
        );
    }

    #[test]
    fn clamped_pow10_bounded_for_extreme_inputs() {
        let net = DenseNet::new(eta_specs(), &mut stream(1, &[3])).unwrap();
        for &v in &[f64::INFINITY, f64::NEG_INFINITY, 1e300, -1e300, 0.0] {
            let x = DMatrix::from_row_slice(1, 2, &[v, -v]);
            let y = net.forward(&x, Mode::Infer).unwrap()[(0, 0)];
            assert!((1e-3..=1e-1).contains(&y), "output {y} for input {v}");
        }
    }

    #[test]
    fn identity_network_passes_through() {
        let specs = vec![
            LayerSpec::new(3, Activation::Linear, false),
            LayerSpec::new(3, Activation::Linear, false),
        ];
        let mut net = DenseNet::new(specs, &mut stream(1, &[4])).unwrap();
        let mut flat = vec![0.0; net.param_count()];
        // Weight matrix is 3x3 stored column-major by nalgebra; identity.
        for i in 0..3 {
            flat[i * 3 + i] = 1.0;
        }
        net.set_params_flat(&flat).unwrap();
        let x = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, -1.0]);
        let y = net.forward(&x, Mode::Infer).unwrap();
        assert!((&y - &x).norm() < 1e-14);

        // Input gradient of the identity net equals the upstream gradient.
        let trace = net.forward_cached(&x, Mode::Infer).unwrap();
        let dout = DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.3, -0.4, 0.5, -0.6]);
        let g = net.backward(&trace, &dout);
        assert!((&g.input - &dout).norm() < 1e-14);
    }

    #[test]
    fn identical_rows_stay_identical_in_inference() {
        let specs = vec![
            LayerSpec::new(4, Activation::Linear, true),
            LayerSpec::new(8, Activation::Relu, true),
            LayerSpec::new(2, Activation::Linear, false),
        ];
        let net = DenseNet::new(specs, &mut stream(2, &[5])).unwrap();
        let row = [0.7, -1.1, 0.0, 2.2];
        let mut x = DMatrix::zeros(5, 4);
        for i in 0..5 {
            for j in 0..4 {
                x[(i, j)] = row[j];
            }
        }
        let y = net.forward(&x, Mode::Infer).unwrap();
        for i in 1..5 {
            for j in 0..2 {
                assert_eq!(y[(i, j)], y[(0, j)]);
            }
        }
    }

    /// Shared harness: compare analytic gradients against centered finite
    /// differences of the scalar loss `sum(c .* out)`.
    fn check_gradients(specs: Vec<LayerSpec>, mode: Mode, seed: u64) -> f64 {
        let mut rng = stream(seed, &[6]);
        let mut net = DenseNet::new(specs, &mut rng).unwrap();
        // Randomize BN parameters a little so their gradients are generic.
        let mut flat = net.params_flat();
        for v in flat.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v += 0.05 * g;
        }
        net.set_params_flat(&flat).unwrap();
        let n = 5;
        let d = net.input_dim();
        let x = DMatrix::from_fn(n, d, |_, _| {
            let g: f64 = rng.sample(StandardNormal);
            g
        });
        let c = DMatrix::from_fn(n, net.output_dim(), |_, _| {
            let g: f64 = rng.sample(StandardNormal);
            g
        });
        let loss = |net: &DenseNet, x: &DMatrix<f64>| -> f64 {
            let y = net.forward(x, mode).unwrap();
            y.component_mul(&c).sum()
        };
        let trace = net.forward_cached(&x, mode).unwrap();
        let g = net.backward(&trace, &c);
        let ana_params = net.gradients_flat(&g);

        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let base_flat = net.params_flat();
        for i in 0..base_flat.len() {
            let mut plus = base_flat.clone();
            plus[i] += h;
            let mut minus = base_flat.clone();
            minus[i] -= h;
            let mut np = net.clone();
            np.set_params_flat(&plus).unwrap();
            let mut nm = net.clone();
            nm.set_params_flat(&minus).unwrap();
            let fd = (loss(&np, &x) - loss(&nm, &x)) / (2.0 * h);
            let denom = ana_params[i].abs().max(fd.abs()).max(1e-3);
            worst = worst.max((ana_params[i] - fd).abs() / denom);
        }
        // Input gradients.
        for i in 0..n {
            for j in 0..d {
                let mut xp = x.clone();
                xp[(i, j)] += h;
                let mut xm = x.clone();
                xm[(i, j)] -= h;
                let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
                let denom = g.input[(i, j)].abs().max(fd.abs()).max(1e-3);
                worst = worst.max((g.input[(i, j)] - fd).abs() / denom);
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cases = vec![
            (
                vec![
                    LayerSpec::new(3, Activation::Linear, true),
                    LayerSpec::new(6, Activation::Relu, true),
                    LayerSpec::new(2, Activation::Linear, false),
                ],
                Mode::Train,
            ),
            (
                vec![
                    LayerSpec::new(3, Activation::Linear, true),
                    LayerSpec::new(6, Activation::Relu, true),
                    LayerSpec::new(2, Activation::Linear, false),
                ],
                Mode::Infer,
            ),
            (
                vec![
                    LayerSpec::new(2, Activation::Linear, false),
                    LayerSpec::new(8, Activation::Relu, false),
                    LayerSpec::new(1, Activation::ClampedPow10, false),
                ],
                Mode::Infer,
            ),
            (
                vec![
                    LayerSpec::new(4, Activation::Linear, false),
                    LayerSpec::new(5, Activation::Relu, true),
                    LayerSpec::new(5, Activation::Relu, true),
                    LayerSpec::new(3, Activation::Linear, false),
                ],
                Mode::Train,
            ),
        ];
        for (i, (specs, mode)) in cases.into_iter().enumerate() {
            let worst = check_gradients(specs, mode, 100 + i as u64);
            assert!(worst < 1e-5, "case {i}: max relative error {worst:.3e}");
        }
    }

    #[test]
    fn fit_linear_function() {
        // y = 2x + 1 to MSE < 1e-3 with one hidden layer.
        let mut rng = stream(40, &[0]);
        let n = 100;
        let x = DMatrix::from_fn(n, 1, |i, _| -1.0 + 2.0 * i as f64 / (n - 1) as f64);
        let y = x.map(|v| 2.0 * v + 1.0);
        let specs = vec![
            LayerSpec::new(1, Activation::Linear, true),
            LayerSpec::new(16, Activation::Relu, false),
            LayerSpec::new(1, Activation::Linear, false),
        ];
        let mut net = DenseNet::new(specs, &mut rng).unwrap();
        let cfg = TrainConfig {
            learning_rate: 2e-2,
            max_epochs: 2000,
            plateau_tol: 1e-8,
            plateau_patience: 200,
            ..TrainConfig::default()
        };
        let report = train_mbgd(&mut net, &x, None, &y, &SquaredError, &cfg, &mut rng).unwrap();
        assert!(
            report.final_loss < 1e-3,
            "final loss {:.3e}",
            report.final_loss
        );
        assert!(report.final_loss <= report.initial_loss);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut rng = stream(41, &[0]);
        let x = DMatrix::from_fn(32, 2, |i, j| (i + j) as f64 / 10.0);
        let y = DMatrix::from_fn(32, 1, |i, _| i as f64 / 32.0);
        let specs = vec![
            LayerSpec::new(2, Activation::Linear, false),
            LayerSpec::new(4, Activation::Relu, false),
            LayerSpec::new(1, Activation::Linear, false),
        ];
        let mut net = DenseNet::new(specs, &mut rng).unwrap();
        let before = net.params_flat();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 5,
            plateau_patience: 100,
            ..TrainConfig::default()
        };
        train_mbgd(&mut net, &x, None, &y, &SquaredError, &cfg, &mut rng).unwrap();
        assert_eq!(before, net.params_flat());
    }

    #[test]
    fn duplicated_dataset_full_batch_matches() {
        // Averaged gradients are invariant to duplicating every row when the
        // batch covers the whole set.
        let x = DMatrix::from_fn(16, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        let y = DMatrix::from_fn(16, 1, |i, _| ((i * 5) % 7) as f64 / 7.0);
        let mut x2 = DMatrix::zeros(32, 2);
        let mut y2 = DMatrix::zeros(32, 1);
        for i in 0..16 {
            x2.set_row(i, &x.row(i));
            x2.set_row(i + 16, &x.row(i));
            y2.set_row(i, &y.row(i));
            y2.set_row(i + 16, &y.row(i));
        }
        let specs = vec![
            LayerSpec::new(2, Activation::Linear, false),
            LayerSpec::new(6, Activation::Relu, false),
            LayerSpec::new(1, Activation::Linear, false),
        ];
        let base = DenseNet::new(specs, &mut stream(43, &[0])).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            batch_size: 16,
            max_epochs: 10,
            plateau_patience: 100,
            ..TrainConfig::default()
        };
        let cfg2 = TrainConfig {
            batch_size: 32,
            ..cfg.clone()
        };
        let mut n1 = base.clone();
        train_mbgd(&mut n1, &x, None, &y, &SquaredError, &cfg, &mut stream(44, &[0])).unwrap();
        let mut n2 = base.clone();
        train_mbgd(&mut n2, &x2, None, &y2, &SquaredError, &cfg2, &mut stream(44, &[0])).unwrap();
        let p1 = n1.params_flat();
        let p2 = n2.params_flat();
        for (a, b) in p1.iter().zip(&p2) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let mut rng = stream(45, &[0]);
        let x = DMatrix::from_fn(50, 2, |i, j| ((i + j) as f64).sin());
        let y = DMatrix::from_fn(50, 1, |i, _| (i as f64 / 25.0).cos());
        let specs = vec![
            LayerSpec::new(2, Activation::Linear, true),
            LayerSpec::new(8, Activation::Relu, true),
            LayerSpec::new(1, Activation::Linear, false),
        ];
        let _ = &mut rng;
        let run = || {
            let mut net = DenseNet::new(specs.clone(), &mut stream(46, &[1])).unwrap();
            let cfg = TrainConfig {
                max_epochs: 30,
                ..TrainConfig::default()
            };
            train_mbgd(&mut net, &x, None, &y, &SquaredError, &cfg, &mut stream(46, &[2])).unwrap();
            net.params_flat()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn persistence_round_trip() {
        let specs = vec![
            LayerSpec::new(3, Activation::Linear, true),
            LayerSpec::new(7, Activation::Relu, true),
            LayerSpec::new(2, Activation::Linear, false),
        ];
        let mut rng = stream(47, &[0]);
        let mut net = DenseNet::new(specs, &mut rng).unwrap();
        // Touch the running stats so they are not defaults.
        let x = DMatrix::from_fn(8, 3, |i, j| (i as f64 - j as f64) / 3.0);
        let trace = net.forward_cached(&x, Mode::Train).unwrap();
        net.commit_bn_stats(&trace);

        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let restored = DenseNet::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(net.params_flat(), restored.params_flat());
        let y1 = net.forward(&x, Mode::Infer).unwrap();
        let y2 = restored.forward(&x, Mode::Infer).unwrap();
        assert_eq!(y1, y2);
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let net = DenseNet::new(eta_specs(), &mut stream(48, &[0])).unwrap();
        let x = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 2.0]);
        assert!(net.forward(&x, Mode::Infer).is_err());
    }
}
