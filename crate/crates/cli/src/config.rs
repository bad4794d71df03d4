//! JSON configuration: one human-writable document drives every subcommand.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use quiverml::machine::{ActivationCatalog, ActivationKind, Dataset};
use quiverml::metric::MetricSignature;
use quiverml::quiver::{ArrowSpec, Quiver, Role, VertexSpec};
use quiverml::scalar::ScalarMode;
use quiverml::trainer::SignatureSpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigFile {
    pub quiver: QuiverCfg,
    pub algorithm: String,
    #[serde(default = "default_signature")]
    pub signature: SignatureCfg,
    #[serde(default)]
    pub adjoint_signature: Option<SignatureCfg>,
    #[serde(default)]
    pub train: TrainCfg,
    #[serde(default)]
    pub data: Option<DataCfg>,
    /// Activation catalog names for s1, s2, ...; defaults to
    /// [identity, tanh, smooth_relu, hyperbolic_sigma].
    #[serde(default)]
    pub activations: Option<Vec<String>>,
    /// Restrict scalars to the real locus.
    #[serde(default)]
    pub real: bool,
}

fn default_signature() -> SignatureCfg {
    SignatureCfg::Preset("euclidean".to_string())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuiverCfg {
    pub vertices: Vec<VertexCfg>,
    #[serde(default)]
    pub arrows: Vec<ArrowCfg>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VertexCfg {
    pub id: u32,
    pub n: usize,
    pub d: usize,
    #[serde(default = "default_role")]
    pub role: String,
}

fn default_role() -> String {
    "plain".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrowCfg {
    pub id: u32,
    pub src: u32,
    pub dst: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SignatureCfg {
    Preset(String),
    Custom {
        alpha: f64,
        #[serde(default)]
        alpha_paths: Option<AlphaPaths>,
        #[serde(default)]
        learnable: bool,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaPaths {
    Uniform(f64),
    PerPath(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainCfg {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub batch: Option<usize>,
    #[serde(default = "default_refresh")]
    pub refresh: usize,
}

impl Default for TrainCfg {
    fn default() -> Self {
        TrainCfg {
            lr: default_lr(),
            steps: default_steps(),
            seed: default_seed(),
            batch: None,
            refresh: default_refresh(),
        }
    }
}

fn default_lr() -> f64 {
    0.1
}
fn default_steps() -> usize {
    200
}
fn default_seed() -> u64 {
    1
}
fn default_refresh() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataCfg {
    Inline { samples: Vec<SampleCfg> },
    Csv { csv: String },
}

/// A sample is an (input, target) pair; entries are reals or [re, im] pairs.
pub type SampleCfg = (Vec<NumOrPair>, Vec<NumOrPair>);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NumOrPair {
    Real(f64),
    Pair([f64; 2]),
}

impl NumOrPair {
    pub fn to_complex(&self) -> Complex<f64> {
        match self {
            NumOrPair::Real(x) => Complex::new(*x, 0.0),
            NumOrPair::Pair([re, im]) => Complex::new(*re, *im),
        }
    }
}

pub fn load_config(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg: ConfigFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    Ok(cfg)
}

pub fn build_quiver(cfg: &QuiverCfg) -> Result<Quiver> {
    let vertices = cfg.quiver_vertices().collect::<Result<Vec<VertexSpec>>>()?;
    let arrows = cfg
        .arrows
        .iter()
        .map(|a| ArrowSpec {
            id: a.id,
            src: a.src,
            dst: a.dst,
        })
        .collect();
    Quiver::new(vertices, arrows).map_err(|e| anyhow::anyhow!("invalid quiver: {e}"))
}

impl QuiverCfg {
    fn quiver_vertices(&self) -> impl Iterator<Item = Result<VertexSpec>> + '_ {
        self.vertices.iter().map(|v| {
            let role = match v.role.as_str() {
                "input" => Role::Input,
                "output" => Role::Output,
                "memory" => Role::Memory,
                "plain" => Role::Plain,
                other => bail!("unknown vertex role {other:?} at vertex {}", v.id),
            };
            Ok(VertexSpec {
                id: v.id,
                n: v.n,
                d: v.d,
                role,
            })
        })
    }

    pub fn from_quiver(q: &Quiver) -> QuiverCfg {
        QuiverCfg {
            vertices: q
                .vertices()
                .iter()
                .map(|v| VertexCfg {
                    id: v.id,
                    n: v.n,
                    d: v.d,
                    role: match v.role {
                        Role::Input => "input",
                        Role::Output => "output",
                        Role::Memory => "memory",
                        Role::Plain => "plain",
                    }
                    .to_string(),
                })
                .collect(),
            arrows: q
                .arrows()
                .iter()
                .map(|a| ArrowCfg {
                    id: a.id,
                    src: a.src,
                    dst: a.dst,
                })
                .collect(),
        }
    }
}

pub fn build_signature(cfg: &SignatureCfg) -> Result<(MetricSignature<f64>, bool)> {
    match cfg {
        SignatureCfg::Preset(name) => {
            let sig = match name.as_str() {
                "compact" => MetricSignature::compact(),
                "euclidean" => MetricSignature::euclidean(),
                "hyperbolic" => MetricSignature::hyperbolic(),
                other => {
                    // allow a plain interpolation coefficient in string form
                    match other.parse::<f64>() {
                        Ok(s) if (-1.0..=1.0).contains(&s) => MetricSignature::uniform(s),
                        _ => bail!(
                            "unknown signature {other:?} (expected compact | euclidean | hyperbolic | a coefficient in [-1,1])"
                        ),
                    }
                }
            };
            Ok((sig, false))
        }
        SignatureCfg::Custom {
            alpha,
            alpha_paths,
            learnable,
        } => {
            let mut sig = MetricSignature {
                bias_coeff: *alpha,
                path_default: *alpha,
                path_overrides: BTreeMap::new(),
            };
            match alpha_paths {
                None => {}
                Some(AlphaPaths::Uniform(s)) => sig.path_default = *s,
                Some(AlphaPaths::PerPath(map)) => {
                    sig.path_overrides = map.clone();
                }
            }
            Ok((sig, *learnable))
        }
    }
}

pub fn build_signature_spec(cfg: &SignatureCfg) -> Result<SignatureSpec<f64>> {
    let (sig, learnable) = build_signature(cfg)?;
    if learnable {
        if !sig.is_uniform() || sig.bias_coeff != sig.path_default {
            bail!("a learnable signature must be a single uniform coefficient");
        }
        Ok(SignatureSpec::Learnable {
            init: sig.path_default,
        })
    } else {
        Ok(SignatureSpec::Fixed(sig))
    }
}

pub fn build_catalog(names: &Option<Vec<String>>) -> Result<ActivationCatalog> {
    match names {
        None => Ok(ActivationCatalog::default()),
        Some(list) => {
            let kinds = list
                .iter()
                .map(|name| {
                    ActivationKind::from_name(name)
                        .ok_or_else(|| anyhow::anyhow!("unknown activation {name:?}"))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ActivationCatalog::new(kinds))
        }
    }
}

/// Validates the signature against the quiver's dimension assumption: the
/// Euclidean and hyperbolic families need n_i >= d_i at every vertex.
pub fn validate_signature_dims(q: &Quiver, sig: &MetricSignature<f64>) -> Result<()> {
    let restricted = sig.bias_coeff <= 0.0 || sig.path_default <= 0.0;
    if restricted {
        for v in q.vertices() {
            if v.n < v.d {
                bail!(
                    "signature requires n >= d at every vertex, but vertex {} has n = {} < d = {}",
                    v.id,
                    v.n,
                    v.d
                );
            }
        }
    }
    Ok(())
}

pub fn scalar_mode(cfg: &ConfigFile, real_flag: bool) -> ScalarMode {
    if cfg.real || real_flag {
        ScalarMode::Real
    } else {
        ScalarMode::Complex
    }
}

/// Loads the dataset: inline samples or a CSV of real rows
/// (n_in input columns then n_out target columns).
pub fn build_dataset(
    cfg: &ConfigFile,
    q: &Arc<Quiver>,
    config_dir: &Path,
) -> Result<Option<Dataset<f64>>> {
    let Some(data) = &cfg.data else {
        return Ok(None);
    };
    match data {
        DataCfg::Inline { samples } => {
            let converted = samples
                .iter()
                .map(|(x, y)| {
                    (
                        x.iter().map(NumOrPair::to_complex).collect(),
                        y.iter().map(NumOrPair::to_complex).collect(),
                    )
                })
                .collect();
            Ok(Some(Dataset::new(converted)))
        }
        DataCfg::Csv { csv } => {
            let path = config_dir.join(csv);
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading data csv {}", path.display()))?;
            let in_v = q
                .input_vertex()
                .ok_or_else(|| anyhow::anyhow!("quiver needs an input vertex"))?;
            let out_v = q
                .output_vertex()
                .ok_or_else(|| anyhow::anyhow!("quiver needs an output vertex"))?;
            let n_in = q.vertex(in_v).unwrap().n;
            let n_out = q.vertex(out_v).unwrap().n;
            let mut samples = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let nums: Vec<f64> = line
                    .split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .with_context(|| format!("line {} of {}", lineno + 1, path.display()))?;
                if nums.len() != n_in + n_out {
                    bail!(
                        "line {} of {}: expected {} columns, found {}",
                        lineno + 1,
                        path.display(),
                        n_in + n_out,
                        nums.len()
                    );
                }
                let x = nums[..n_in].iter().map(|&v| Complex::new(v, 0.0)).collect();
                let y = nums[n_in..].iter().map(|&v| Complex::new(v, 0.0)).collect();
                samples.push((x, y));
            }
            Ok(Some(Dataset::new(samples)))
        }
    }
}
