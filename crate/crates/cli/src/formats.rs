//! On-disk formats: the JSON checkpoint (matrices as nested arrays of
//! [re, im] pairs), the JSON run report, and the history CSV.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use quiverml::mat::Mat;
use quiverml::rep::FramedRep;
use quiverml::scalar::ScalarMode;
use quiverml::trainer::TrainHistory;

use crate::config::{QuiverCfg, SignatureCfg};

pub type MatJson = Vec<Vec<[f64; 2]>>;

pub fn mat_to_json(m: &Mat<f64>) -> MatJson {
    (0..m.rows())
        .map(|i| {
            (0..m.cols())
                .map(|j| {
                    let z = m[(i, j)];
                    [z.re, z.im]
                })
                .collect()
        })
        .collect()
}

pub fn mat_from_json(rows: &MatJson) -> Result<Mat<f64>> {
    let r = rows.len();
    let c = rows.first().map(|row| row.len()).unwrap_or(0);
    if rows.iter().any(|row| row.len() != c) {
        bail!("ragged matrix in checkpoint");
    }
    Ok(Mat::from_fn(r, c, |i, j| {
        Complex::new(rows[i][j][0], rows[i][j][1])
    }))
}

/// A trained (or constructed) point with everything needed to evaluate it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub quiver: QuiverCfg,
    pub algorithm: String,
    pub signature: SignatureCfg,
    pub activations: Vec<String>,
    pub mode: String,
    /// Framing matrices e^(i), in vertex declaration order.
    pub framings: Vec<MatJson>,
    /// Arrow matrices w_a, in arrow declaration order.
    pub arrows: Vec<MatJson>,
}

impl Checkpoint {
    pub fn mode(&self) -> Result<ScalarMode> {
        match self.mode.as_str() {
            "complex" => Ok(ScalarMode::Complex),
            "real" => Ok(ScalarMode::Real),
            other => bail!("unknown scalar mode {other:?} in checkpoint"),
        }
    }

    pub fn rep(&self, quiver: &Arc<quiverml::quiver::Quiver>) -> Result<FramedRep<f64>> {
        let arrows = self
            .arrows
            .iter()
            .map(mat_from_json)
            .collect::<Result<Vec<_>>>()?;
        let framings = self
            .framings
            .iter()
            .map(mat_from_json)
            .collect::<Result<Vec<_>>>()?;
        FramedRep::new(quiver.clone(), arrows, framings, self.mode()?)
            .map_err(|e| anyhow::anyhow!("checkpoint does not match its quiver: {e}"))
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let text = serde_json::to_string_pretty(ck)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading checkpoint {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing checkpoint {}", path.display()))
}

/// One invariant-suite outcome in the run report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub deviation: f64,
    pub tolerance: f64,
}

/// Per-vertex metric dump: evaluated metric and the smallest eigenvalue of
/// the un-inverted form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricDump {
    pub vertex: u32,
    pub metric: MatJson,
    pub form_min_eigenvalue: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config: serde_json::Value,
    pub tolerance_scale: f64,
    pub checks: Vec<CheckResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub history_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_cost: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub metric_dump: Vec<MetricDump>,
}

pub fn save_report(path: &Path, report: &RunReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Formats a float with 17 significant digits (round-trip exact).
pub fn f17(x: f64) -> String {
    format!("{x:.16e}")
}

/// History CSV: step, cost, grad_norm, step_norm, min_eig per vertex,
/// signature.
pub fn history_csv(history: &TrainHistory<f64>) -> String {
    let mut out = String::from("step,cost,grad_norm,step_norm");
    for v in &history.vertex_ids {
        out.push_str(&format!(",min_eig_v{v}"));
    }
    out.push_str(",signature\n");
    for r in &history.records {
        out.push_str(&r.step.to_string());
        for value in [r.cost, r.grad_norm, r.step_norm] {
            out.push(',');
            out.push_str(&f17(value));
        }
        for e in &r.min_eigs {
            out.push(',');
            out.push_str(&f17(*e));
        }
        out.push(',');
        out.push_str(&f17(r.signature_value));
        out.push('\n');
    }
    out
}
