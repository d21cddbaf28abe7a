//! Harness settings with a flat `key = value` config-file override layer.

use std::path::Path;

use crate::nn::TrainConfig;
use crate::optimizer::{EtaTrainConfig, GridSearchConfig};
use crate::{invalid, Result};

/// All tunables of the experiment drivers. Field names double as config-file
/// keys (see `HarnessConfig::apply_kv`).
#[derive(Debug, Clone)]
pub struct HarnessConfig {
    pub seed: u64,
    /// Symbols per frame.
    pub frame_size: usize,
    /// Frames per sensing or evaluation interval.
    pub frames_per_interval: usize,
    /// Scenario draws per emitted table cell.
    pub draws_per_cell: usize,
    /// Labeled records per regime for offline training.
    pub dataset_records: usize,
    /// Records per ratio point in the robustness sweep.
    pub sweep_dataset_records: usize,
    /// Scenario draws per ratio point in the robustness sweep.
    pub sweep_draws: usize,
    /// Practical-to-nominal SNR ratio of the impaired regime.
    pub rho_ratio_impaired: f64,
    /// Predictor training settings.
    pub train: TrainConfig,
    /// Update-rate network training settings.
    pub eta_train: EtaTrainConfig,
    /// Operating points drawn for update-rate training.
    pub eta_ops: usize,
    pub tau_grid: GridSearchConfig,
    pub alpha_grid: GridSearchConfig,
    /// Unrolled scaling iterations.
    pub pgd_iterations: usize,
    /// Online learning: interval count and per-interval dataset sizes.
    pub online_intervals: usize,
    pub online_sizes: Vec<usize>,
    /// Online learning warm-start epochs per interval.
    pub online_epochs: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            frame_size: 256,
            frames_per_interval: 5000,
            draws_per_cell: 200,
            dataset_records: 10_000,
            sweep_dataset_records: 3000,
            sweep_draws: 120,
            rho_ratio_impaired: 1.0 / 8.0,
            train: TrainConfig::default(),
            eta_train: EtaTrainConfig::default(),
            eta_ops: 48,
            tau_grid: GridSearchConfig::tau_default(),
            alpha_grid: GridSearchConfig::alpha_default(),
            pgd_iterations: 5,
            online_intervals: 20,
            online_sizes: vec![100, 1000, 10_000],
            online_epochs: 300,
        }
    }
}

impl HarnessConfig {
    /// Apply one `key = value` override.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let parse_usize = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| invalid(format!("expected integer for '{key}', got '{v}'")))
        };
        let parse_f64 = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| invalid(format!("expected number for '{key}', got '{v}'")))
        };
        match key {
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| invalid(format!("bad seed '{value}'")))?
            }
            "frame_size" => self.frame_size = parse_usize(value)?,
            "frames_per_interval" => self.frames_per_interval = parse_usize(value)?,
            "draws_per_cell" => self.draws_per_cell = parse_usize(value)?,
            "dataset_records" => self.dataset_records = parse_usize(value)?,
            "sweep_dataset_records" => self.sweep_dataset_records = parse_usize(value)?,
            "sweep_draws" => self.sweep_draws = parse_usize(value)?,
            "rho_ratio_impaired" => self.rho_ratio_impaired = parse_f64(value)?,
            "learning_rate" => self.train.learning_rate = parse_f64(value)?,
            "batch_size" => self.train.batch_size = parse_usize(value)?,
            "max_epochs" => self.train.max_epochs = parse_usize(value)?,
            "plateau_tol" => self.train.plateau_tol = parse_f64(value)?,
            "plateau_patience" => self.train.plateau_patience = parse_usize(value)?,
            "eta_learning_rate" => self.eta_train.train.learning_rate = parse_f64(value)?,
            "eta_max_epochs" => self.eta_train.train.max_epochs = parse_usize(value)?,
            "eta_starts_per_op" => self.eta_train.starts_per_op = parse_usize(value)?,
            "eta_ops" => self.eta_ops = parse_usize(value)?,
            "tau_lo" => self.tau_grid.lo = parse_f64(value)?,
            "tau_hi" => self.tau_grid.hi = parse_f64(value)?,
            "tau_divisions" => self.tau_grid.n_div = parse_usize(value)?,
            "tau_iterations" => self.tau_grid.n_iter = parse_usize(value)?,
            "alpha_lo" => self.alpha_grid.lo = parse_f64(value)?,
            "alpha_hi" => self.alpha_grid.hi = parse_f64(value)?,
            "alpha_divisions" => self.alpha_grid.n_div = parse_usize(value)?,
            "alpha_iterations" => self.alpha_grid.n_iter = parse_usize(value)?,
            "pgd_iterations" => self.pgd_iterations = parse_usize(value)?,
            "online_intervals" => self.online_intervals = parse_usize(value)?,
            "online_epochs" => self.online_epochs = parse_usize(value)?,
            "online_sizes" => {
                self.online_sizes = value
                    .split(',')
                    .map(|s| parse_usize(s.trim()))
                    .collect::<Result<_>>()?
            }
            _ => return Err(invalid(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Load overrides from a flat `key = value` file; `#` starts a comment.
    pub fn load_overrides(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(invalid(format!(
                    "config line {} is not 'key = value': '{raw}'",
                    lineno + 1
                )));
            };
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Manifest-friendly view of the settings.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "seed": self.seed,
            "frame_size": self.frame_size,
            "frames_per_interval": self.frames_per_interval,
            "draws_per_cell": self.draws_per_cell,
            "dataset_records": self.dataset_records,
            "sweep_dataset_records": self.sweep_dataset_records,
            "sweep_draws": self.sweep_draws,
            "rho_ratio_impaired": self.rho_ratio_impaired,
            "learning_rate": self.train.learning_rate,
            "batch_size": self.train.batch_size,
            "max_epochs": self.train.max_epochs,
            "eta_learning_rate": self.eta_train.train.learning_rate,
            "eta_max_epochs": self.eta_train.train.max_epochs,
            "tau_grid": [self.tau_grid.lo, self.tau_grid.hi, self.tau_grid.n_div, self.tau_grid.n_iter],
            "alpha_grid": [self.alpha_grid.lo, self.alpha_grid.hi, self.alpha_grid.n_div, self.alpha_grid.n_iter],
            "pgd_iterations": self.pgd_iterations,
            "online_intervals": self.online_intervals,
            "online_sizes": self.online_sizes,
            "online_epochs": self.online_epochs,
        })
    }
}
