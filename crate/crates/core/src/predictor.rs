//! Learnable model-driven performance predictors.
//!
//! A predictor maps an input vector to the indicator pair
//! `(gamma_p, mse_p)`. The model part `h` is the deterministic-equivalent
//! formula set of [`crate::det_equiv`]; the learnable part refines it:
//!
//! - `dual_wb`: `Y = w(X) .* h(X) + b(X)` (elementwise learned affine),
//! - `dual_w`:  bias fixed to zero,
//! - `dual_b`:  weight fixed to one (pure residual),
//! - `data_driven`: `Y` predicted directly, no model part,
//! - `model_driven`: `Y = h(X)` with nothing learnable.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng;

use crate::det_equiv::{CaseId, InputVector};
use crate::nn::{Activation, DenseNet, LayerSpec, Mode, OutputHead, TrainConfig};
use crate::{invalid, Result};

/// Predictor flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    DualWb,
    DualW,
    DualB,
    DataDriven,
    ModelDriven,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::DualWb,
        Variant::DualW,
        Variant::DualB,
        Variant::DataDriven,
        Variant::ModelDriven,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::DualWb => "dual_wb",
            Variant::DualW => "dual_w",
            Variant::DualB => "dual_b",
            Variant::DataDriven => "data_driven",
            Variant::ModelDriven => "model_driven",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "dual_wb" => Variant::DualWb,
            "dual_w" => Variant::DualW,
            "dual_b" => Variant::DualB,
            "data_driven" => Variant::DataDriven,
            "model_driven" => Variant::ModelDriven,
            _ => return Err(invalid(format!("unknown variant '{name}'"))),
        })
    }

    pub fn is_learnable(self) -> bool {
        !matches!(self, Variant::ModelDriven)
    }

    /// Stable label for random-stream paths.
    pub fn code_u64(self) -> u64 {
        self.code() as u64
    }

    fn head_width(self) -> usize {
        match self {
            Variant::DualWb => 4,
            Variant::DualW | Variant::DualB | Variant::DataDriven => 2,
            Variant::ModelDriven => 0,
        }
    }

    fn code(self) -> u8 {
        match self {
            Variant::DualWb => 0,
            Variant::DualW => 1,
            Variant::DualB => 2,
            Variant::DataDriven => 3,
            Variant::ModelDriven => 4,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => Variant::DualWb,
            1 => Variant::DualW,
            2 => Variant::DualB,
            3 => Variant::DataDriven,
            4 => Variant::ModelDriven,
            _ => return Err(crate::Error::Format(format!("bad variant code {c}"))),
        })
    }
}

/// Per-indicator standardization statistics frozen on the training set.
#[derive(Debug, Clone, Copy)]
pub struct TargetStats {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl Default for TargetStats {
    fn default() -> Self {
        Self {
            mean: [0.0, 0.0],
            std: [1.0, 1.0],
        }
    }
}

impl TargetStats {
    fn from_targets(targets: &DMatrix<f64>) -> Self {
        let n = targets.nrows() as f64;
        let mut mean = [0.0; 2];
        let mut std = [1.0; 2];
        for c in 0..2 {
            let m = targets.column(c).sum() / n;
            let var = targets
                .column(c)
                .iter()
                .map(|&v| (v - m) * (v - m))
                .sum::<f64>()
                / n;
            mean[c] = m;
            std[c] = var.sqrt().max(1e-3);
        }
        Self { mean, std }
    }
}

/// A (possibly) trained performance predictor for one regime.
#[derive(Debug, Clone)]
pub struct PredictorModel {
    pub variant: Variant,
    pub case_id: CaseId,
    net: Option<DenseNet>,
    target_stats: TargetStats,
}

/// Double hidden layers for the regimes the paper fits with deeper trunks.
fn hidden_layers(case_id: CaseId) -> usize {
    match case_id {
        CaseId::Case1 | CaseId::Case4 => 2,
        CaseId::Case2 | CaseId::Case3 => 1,
    }
}

fn input_dim(case_id: CaseId) -> usize {
    match case_id {
        CaseId::Case1 | CaseId::Case2 => 11,
        CaseId::Case3 => 9,
        CaseId::Case4 => 7,
    }
}

const TRUNK_WIDTH: usize = 32;

impl PredictorModel {
    /// Fresh predictor. Dual heads start as the identity correction
    /// (`w = 1`, `b = 0`), so an untrained dual predictor equals the
    /// model-driven one.
    pub fn new(variant: Variant, case_id: CaseId, rng: &mut impl Rng) -> Result<Self> {
        if variant == Variant::ModelDriven {
            return Ok(Self {
                variant,
                case_id,
                net: None,
                target_stats: TargetStats::default(),
            });
        }
        let d = input_dim(case_id);
        let mut specs = vec![LayerSpec::new(d, Activation::Linear, true)];
        for _ in 0..hidden_layers(case_id) {
            specs.push(LayerSpec::new(TRUNK_WIDTH, Activation::Relu, true));
        }
        specs.push(LayerSpec::new(variant.head_width(), Activation::Linear, false));
        let mut net = DenseNet::new(specs, rng)?;
        let head_bias = match variant {
            Variant::DualWb => vec![1.0, 1.0, 0.0, 0.0],
            Variant::DualW => vec![1.0, 1.0],
            Variant::DualB | Variant::DataDriven => vec![0.0, 0.0],
            Variant::ModelDriven => unreachable!(),
        };
        if variant != Variant::DataDriven {
            net.set_output_layer(
                DMatrix::zeros(TRUNK_WIDTH, variant.head_width()),
                nalgebra::DVector::from_vec(head_bias),
            )?;
        }
        Ok(Self {
            variant,
            case_id,
            net: Some(net),
            target_stats: TargetStats::default(),
        })
    }

    pub fn net(&self) -> Option<&DenseNet> {
        self.net.as_ref()
    }

    pub fn target_stats(&self) -> TargetStats {
        self.target_stats
    }

    fn check_layout(&self, x: &InputVector) -> Result<()> {
        if x.case_id != self.case_id {
            return Err(invalid("input vector case does not match the predictor"));
        }
        if let Some(net) = &self.net {
            if x.dim() != net.input_dim() {
                return Err(invalid(format!(
                    "input vector length {} does not match network width {}",
                    x.dim(),
                    net.input_dim()
                )));
            }
        }
        Ok(())
    }

    /// Combine raw head outputs with the model part.
    fn combine(&self, head: &[f64], h: (f64, f64)) -> (f64, f64) {
        let stats = &self.target_stats;
        match self.variant {
            Variant::ModelDriven => h,
            Variant::DualWb => (head[0] * h.0 + head[2], head[1] * h.1 + head[3]),
            Variant::DualW => (head[0] * h.0, head[1] * h.1),
            Variant::DualB => (h.0 + head[0], h.1 + head[1]),
            Variant::DataDriven => (
                stats.mean[0] + stats.std[0] * head[0],
                stats.mean[1] + stats.std[1] * head[1],
            ),
        }
    }

    /// Predict the indicator pair `(gamma_p, mse_p)`.
    pub fn predict(&self, x: &InputVector) -> Result<(f64, f64)> {
        self.check_layout(x)?;
        let h = match self.variant {
            Variant::DataDriven => (0.0, 0.0),
            _ => x.model_prediction()?,
        };
        let Some(net) = &self.net else {
            return Ok(h);
        };
        let row = DMatrix::from_row_slice(1, x.dim(), &x.flatten());
        let out = net.forward(&row, Mode::Infer)?;
        let head: Vec<f64> = out.row(0).iter().copied().collect();
        Ok(self.combine(&head, h))
    }

    /// Exact derivative of the predicted MSE with respect to the `v` entry,
    /// composed through the network input gradient (which includes the input
    /// standardization) and the analytic quadratic model part.
    pub fn predict_gradient_v(&self, x: &InputVector) -> Result<f64> {
        Ok(self.mse_value_grad_hess(x)?.1)
    }

    /// `(mse_p, d mse_p / d v, d^2 mse_p / d v^2)` at the input vector.
    ///
    /// The second derivative is exact almost everywhere: ReLU/linear trunks
    /// are piecewise linear in the inputs, so curvature only enters through
    /// the quadratic model part.
    pub fn mse_value_grad_hess(&self, x: &InputVector) -> Result<(f64, f64, f64)> {
        self.check_layout(x)?;
        match self.variant {
            Variant::ModelDriven => {
                let (_, b, q) = x.model_parts()?;
                let v = x.v();
                let mse = (v * b - 1.0).powi(2) + q * v * v;
                let a2 = 2.0 * (b * b + q);
                Ok((mse, a2 * v - 2.0 * b, a2))
            }
            Variant::DataDriven => {
                let net = self.net.as_ref().unwrap();
                let row = DMatrix::from_row_slice(1, x.dim(), &x.flatten());
                let trace = net.forward_cached(&row, Mode::Infer)?;
                let out = trace.output();
                let mse = self.target_stats.mean[1] + self.target_stats.std[1] * out[(0, 1)];
                let mut upstream = DMatrix::zeros(1, 2);
                upstream[(0, 1)] = self.target_stats.std[1];
                let grads = net.backward(&trace, &upstream);
                Ok((mse, grads.input[(0, x.v_index())], 0.0))
            }
            Variant::DualWb | Variant::DualW | Variant::DualB => {
                let net = self.net.as_ref().unwrap();
                let (_, bq, q) = x.model_parts()?;
                let v = x.v();
                let h_mse = (v * bq - 1.0).powi(2) + q * v * v;
                let dh = 2.0 * (bq * bq + q) * v - 2.0 * bq;
                let d2h = 2.0 * (bq * bq + q);
                let row = DMatrix::from_row_slice(1, x.dim(), &x.flatten());
                let trace = net.forward_cached(&row, Mode::Infer)?;
                let out = trace.output();
                let head: Vec<f64> = out.row(0).iter().copied().collect();
                let vi = x.v_index();
                // Gradients of the relevant head outputs w.r.t. the v input.
                let (w, dw_dv, b_add, db_dv, mse) = match self.variant {
                    Variant::DualWb => {
                        let mut up = DMatrix::zeros(1, 4);
                        up[(0, 1)] = 1.0;
                        let gw = net.backward(&trace, &up).input[(0, vi)];
                        let mut up_b = DMatrix::zeros(1, 4);
                        up_b[(0, 3)] = 1.0;
                        let gb = net.backward(&trace, &up_b).input[(0, vi)];
                        (head[1], gw, head[3], gb, head[1] * h_mse + head[3])
                    }
                    Variant::DualW => {
                        let mut up = DMatrix::zeros(1, 2);
                        up[(0, 1)] = 1.0;
                        let gw = net.backward(&trace, &up).input[(0, vi)];
                        (head[1], gw, 0.0, 0.0, head[1] * h_mse)
                    }
                    Variant::DualB => {
                        let mut up = DMatrix::zeros(1, 2);
                        up[(0, 1)] = 1.0;
                        let gb = net.backward(&trace, &up).input[(0, vi)];
                        (1.0, 0.0, head[1], gb, h_mse + head[1])
                    }
                    _ => unreachable!(),
                };
                let _ = b_add;
                let grad = dw_dv * h_mse + w * dh + db_dv;
                // w'' = b'' = 0 a.e. for piecewise-linear trunks.
                let hess = 2.0 * dw_dv * dh + w * d2h;
                Ok((mse, grad, hess))
            }
        }
    }

    /// Serialize the predictor (variant, case, target stats, network).
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"RZFP")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&[self.variant.code(), self.case_id.index(), 0, 0])?;
        for v in self
            .target_stats
            .mean
            .iter()
            .chain(self.target_stats.std.iter())
        {
            w.write_all(&v.to_le_bytes())?;
        }
        if let Some(net) = &self.net {
            net.write_to(w)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"RZFP" {
            return Err(crate::Error::Format("bad predictor file magic".into()));
        }
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)?;
        if u32::from_le_bytes(buf) != 1 {
            return Err(crate::Error::Format("unsupported predictor version".into()));
        }
        r.read_exact(&mut buf)?;
        let variant = Variant::from_code(buf[0])?;
        let case_id = CaseId::from_index(buf[1])?;
        let mut stats = TargetStats::default();
        let mut f = [0u8; 8];
        for slot in stats.mean.iter_mut().chain(stats.std.iter_mut()) {
            r.read_exact(&mut f)?;
            *slot = f64::from_le_bytes(f);
        }
        let net = if variant == Variant::ModelDriven {
            None
        } else {
            Some(DenseNet::read_from(r)?)
        };
        Ok(Self {
            variant,
            case_id,
            net,
            target_stats: stats,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        self.write_to(&mut f)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        Self::read_from(&mut f)
    }
}

/// One labeled sample: input vector and measured indicator pair.
#[derive(Debug, Clone)]
pub struct Sample {
    pub x: InputVector,
    pub y: [f64; 2],
}

/// Labeled dataset for one regime.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub case_id: CaseId,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn numerical_column_names(case_id: CaseId) -> &'static [&'static str] {
    match case_id {
        CaseId::Case1 => &["e_k", "upsilon_k", "psi0"],
        CaseId::Case2 => &["e", "e12", "e22"],
        CaseId::Case3 => &["e"],
        CaseId::Case4 => &[],
    }
}

/// Write a dataset as columnar text: one record per sample, header row, the
/// input columns in prior / numerical / optimization order, then the labels.
pub fn write_dataset_csv(dataset: &Dataset, w: &mut impl Write) -> Result<()> {
    let mut header: Vec<&str> = vec!["case"];
    match dataset.case_id {
        CaseId::Case4 => header.extend(["m", "k", "p_total", "sigma2"]),
        _ => header.extend(["m", "k", "p_total", "p_k", "sigma2"]),
    }
    header.extend(numerical_column_names(dataset.case_id));
    header.extend(["alpha", "tau", "v", "gamma_m", "mse_m"]);
    writeln!(w, "{}", header.join(","))?;
    for s in &dataset.samples {
        let mut row = vec![format!("{}", dataset.case_id.index())];
        for v in s.x.flatten() {
            row.push(format!("{v}"));
        }
        row.push(format!("{}", s.y[0]));
        row.push(format!("{}", s.y[1]));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Read a dataset written by [`write_dataset_csv`].
pub fn read_dataset_csv(r: &mut impl Read) -> Result<Dataset> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| crate::Error::Format("empty dataset file".into()))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.first() != Some(&"case") {
        return Err(crate::Error::Format("dataset header must start with 'case'".into()));
    }
    let mut case_id: Option<CaseId> = None;
    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(crate::Error::Format(format!(
                "dataset line {} has {} fields, expected {}",
                lineno + 2,
                fields.len(),
                columns.len()
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| crate::Error::Format(format!("bad number '{s}' on line {}", lineno + 2)))
        };
        let case = CaseId::from_index(parse(fields[0])? as u8)?;
        if let Some(existing) = case_id {
            if existing != case {
                return Err(crate::Error::Format("mixed cases in one dataset file".into()));
            }
        } else {
            case_id = Some(case);
        }
        let prior_len = match case {
            CaseId::Case4 => 4,
            _ => 5,
        };
        let numerical_len = numerical_column_names(case).len();
        let mut idx = 1;
        let mut take = |n: usize| -> Result<Vec<f64>> {
            let out = fields[idx..idx + n].iter().map(|s| parse(s)).collect();
            idx += n;
            out
        };
        let prior = take(prior_len)?;
        let numerical = take(numerical_len)?;
        let opt = take(3)?;
        let labels = take(2)?;
        samples.push(Sample {
            x: InputVector {
                case_id: case,
                prior,
                numerical,
                optimization: [opt[0], opt[1], opt[2]],
            },
            y: [labels[0], labels[1]],
        });
    }
    let case_id = case_id.ok_or_else(|| crate::Error::Format("dataset has no records".into()))?;
    Ok(Dataset { case_id, samples })
}

/// Loss head for dual variants: combines raw head outputs with the
/// per-sample model values carried in `aux = [h_gamma, h_mse]`, and weights
/// indicator residuals by the inverse target standard deviations.
struct DualHead {
    variant: Variant,
    inv_std: [f64; 2],
}

impl OutputHead for DualHead {
    fn loss_and_grad(&self, aux: &[f64], out: &[f64], target: &[f64], grad: &mut [f64]) -> f64 {
        let (pg, pm) = match self.variant {
            Variant::DualWb => (out[0] * aux[0] + out[2], out[1] * aux[1] + out[3]),
            Variant::DualW => (out[0] * aux[0], out[1] * aux[1]),
            Variant::DualB => (aux[0] + out[0], aux[1] + out[1]),
            _ => unreachable!(),
        };
        let rg = (pg - target[0]) * self.inv_std[0];
        let rm = (pm - target[1]) * self.inv_std[1];
        let dg = 2.0 * rg * self.inv_std[0];
        let dm = 2.0 * rm * self.inv_std[1];
        match self.variant {
            Variant::DualWb => {
                grad[0] = dg * aux[0];
                grad[1] = dm * aux[1];
                grad[2] = dg;
                grad[3] = dm;
            }
            Variant::DualW => {
                grad[0] = dg * aux[0];
                grad[1] = dm * aux[1];
            }
            Variant::DualB => {
                grad[0] = dg;
                grad[1] = dm;
            }
            _ => unreachable!(),
        }
        rg * rg + rm * rm
    }
}

/// Train / validation / test split report, in raw indicator units.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub train_error: f64,
    pub val_error: f64,
    pub test_error: f64,
    pub test_error_gamma: f64,
    pub test_error_mse: f64,
    pub epochs_run: usize,
}

/// Per-sample squared errors plus their mean and standard error.
#[derive(Debug, Clone)]
pub struct EvalStats {
    pub mean: f64,
    pub se: f64,
    pub mean_gamma: f64,
    pub mean_mse: f64,
    pub n: usize,
}

/// Squared prediction error statistics over a sample set.
pub fn evaluate_with_se(model: &PredictorModel, samples: &[Sample]) -> Result<EvalStats> {
    let mut errs = Vec::with_capacity(samples.len());
    let mut eg = 0.0;
    let mut em = 0.0;
    for s in samples {
        let (pg, pm) = model.predict(&s.x)?;
        let dg = pg - s.y[0];
        let dm = pm - s.y[1];
        errs.push(dg * dg + dm * dm);
        eg += dg * dg;
        em += dm * dm;
    }
    let n = errs.len().max(1) as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let var = if errs.len() > 1 {
        errs.iter().map(|&e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(EvalStats {
        mean,
        se: (var / n).sqrt(),
        mean_gamma: eg / n,
        mean_mse: em / n,
        n: errs.len(),
    })
}

/// Squared prediction error `||Y_p - Y_m||^2` averaged over a sample set.
pub fn evaluate(model: &PredictorModel, samples: &[Sample]) -> Result<FitReport> {
    let mut agg = 0.0;
    let mut eg = 0.0;
    let mut em = 0.0;
    for s in samples {
        let (pg, pm) = model.predict(&s.x)?;
        let dg = pg - s.y[0];
        let dm = pm - s.y[1];
        agg += dg * dg + dm * dm;
        eg += dg * dg;
        em += dm * dm;
    }
    let n = samples.len().max(1) as f64;
    Ok(FitReport {
        train_error: agg / n,
        val_error: agg / n,
        test_error: agg / n,
        test_error_gamma: eg / n,
        test_error_mse: em / n,
        epochs_run: 0,
    })
}

/// 80/10/10 partition of sample indices.
#[derive(Debug, Clone)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffle `0..n` and split 80/10/10.
pub fn split_indices(n: usize, rng: &mut impl Rng) -> SplitIndices {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_train = (((n as f64) * 0.8).round() as usize).clamp(1, n);
    let n_val = ((n as f64) * 0.1).round() as usize;
    let n_val = n_val.min(n - n_train);
    let (train, rest) = order.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    SplitIndices {
        train: train.to_vec(),
        val: val.to_vec(),
        test: test.to_vec(),
    }
}

/// Train a learnable predictor on an 80/10/10 split of the dataset.
pub fn train_predictor(
    model: &mut PredictorModel,
    dataset: &Dataset,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<FitReport> {
    let split = split_indices(dataset.len().max(1), rng);
    train_predictor_split(model, dataset, &split, cfg, rng)
}

/// Train against an explicit split (shared across variants for paired
/// comparisons on the same held-out rows).
pub fn train_predictor_split(
    model: &mut PredictorModel,
    dataset: &Dataset,
    split: &SplitIndices,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<FitReport> {
    if !model.variant.is_learnable() {
        return Err(invalid("the model-driven predictor has nothing to train"));
    }
    if dataset.is_empty() {
        return Err(invalid("dataset is empty"));
    }
    if dataset.case_id != model.case_id {
        return Err(invalid("dataset case does not match the predictor"));
    }
    let (train_idx, val_idx, test_idx) = (&split.train[..], &split.val[..], &split.test[..]);

    let dim = dataset.samples[0].x.dim();
    let gather = |idx: &[usize]| -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let mut x = DMatrix::zeros(idx.len(), dim);
        let mut aux = DMatrix::zeros(idx.len(), 2);
        let mut y = DMatrix::zeros(idx.len(), 2);
        for (r, &i) in idx.iter().enumerate() {
            let s = &dataset.samples[i];
            for (c, v) in s.x.flatten().into_iter().enumerate() {
                x[(r, c)] = v;
            }
            if model.variant != Variant::DataDriven {
                let (hg, hm) = s.x.model_prediction()?;
                aux[(r, 0)] = hg;
                aux[(r, 1)] = hm;
            }
            y[(r, 0)] = s.y[0];
            y[(r, 1)] = s.y[1];
        }
        Ok((x, aux, y))
    };
    let (xt, auxt, yt) = gather(train_idx)?;
    model.target_stats = TargetStats::from_targets(&yt);

    let report = {
        let stats = model.target_stats;
        let net = model.net.as_mut().unwrap();
        match model.variant {
            Variant::DataDriven => {
                // Standardized regression targets.
                let mut ys = yt.clone();
                for r in 0..ys.nrows() {
                    for c in 0..2 {
                        ys[(r, c)] = (ys[(r, c)] - stats.mean[c]) / stats.std[c];
                    }
                }
                crate::nn::train_mbgd(net, &xt, None, &ys, &crate::nn::SquaredError, cfg, rng)?
            }
            _ => {
                let head = DualHead {
                    variant: model.variant,
                    inv_std: [1.0 / stats.std[0], 1.0 / stats.std[1]],
                };
                crate::nn::train_mbgd(net, &xt, Some(&auxt), &yt, &head, cfg, rng)?
            }
        }
    };

    let subset = |idx: &[usize]| -> Vec<Sample> {
        idx.iter().map(|&i| dataset.samples[i].clone()).collect()
    };
    let train_err = evaluate(model, &subset(train_idx))?.test_error;
    let val_err = if val_idx.is_empty() {
        train_err
    } else {
        evaluate(model, &subset(val_idx))?.test_error
    };
    let test_report = if test_idx.is_empty() {
        evaluate(model, &subset(train_idx))?
    } else {
        evaluate(model, &subset(test_idx))?
    };
    Ok(FitReport {
        train_error: train_err,
        val_error: val_err,
        test_error: test_report.test_error,
        test_error_gamma: test_report.test_error_gamma,
        test_error_mse: test_report.test_error_mse,
        epochs_run: report.epoch_losses.len(),
    })
}
