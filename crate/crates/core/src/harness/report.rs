//! CSV and run-manifest emission. No timestamps or host state end up in the
//! outputs, so identical settings and seed produce byte-identical files.

use std::io::Write;
use std::path::Path;

use crate::Result;

/// Write a CSV file with a header row.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{}", header.join(","))?;
    for row in rows {
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}

/// Write the JSON run manifest next to an output file.
pub fn write_manifest(
    output: &Path,
    experiment: &str,
    seed: u64,
    params: serde_json::Value,
) -> Result<()> {
    let manifest = serde_json::json!({
        "experiment": experiment,
        "seed": seed,
        "params": params,
        "version": env!("CARGO_PKG_VERSION"),
    });
    let path = output.with_extension("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).map_err(|e| {
        crate::Error::Format(format!("manifest serialization failed: {e}"))
    })?)?;
    Ok(())
}

/// Format a float for CSV output (shortest round-trip representation).
pub fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Mean and standard error of a sample.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Ordering check between two cells: `holds` when the means order as
/// requested; `separated` when additionally the +-1 standard-error intervals
/// do not overlap.
#[derive(Debug, Clone)]
pub struct OrderingCheck {
    pub label: String,
    pub holds: bool,
    pub separated: bool,
    pub lhs: f64,
    pub rhs: f64,
}

impl OrderingCheck {
    /// Check `lhs <= rhs` (use negated values for >=).
    pub fn leq(label: &str, lhs: (f64, f64), rhs: (f64, f64)) -> Self {
        let holds = lhs.0 <= rhs.0;
        let separated = holds && lhs.0 + lhs.1 < rhs.0 - rhs.1;
        Self {
            label: label.to_string(),
            holds,
            separated,
            lhs: lhs.0,
            rhs: rhs.0,
        }
    }

    pub fn geq(label: &str, lhs: (f64, f64), rhs: (f64, f64)) -> Self {
        let mut check = Self::leq(label, rhs, lhs);
        check.label = label.to_string();
        check.lhs = lhs.0;
        check.rhs = rhs.0;
        check
    }

    pub fn status(&self) -> &'static str {
        if !self.holds {
            "violated"
        } else if self.separated {
            "holds"
        } else {
            "holds_flagged_overlap"
        }
    }
}
