//! Command-line driver: invariant checks, training, evaluation, dimension
//! reports, and the space-like Grassmannian coordinate dump.

mod checks;
mod config;
mod formats;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use quiverml::machine::forward;
use quiverml::metric::MetricSignature;
use quiverml::nearring::parse_algorithm;
use quiverml::rep::gauge_fix;
use quiverml::scalar::ScalarMode;
use quiverml::trainer::{train, TrainConfig};
use quiverml::uniformize::{grassmann_inverse, grassmann_map};

use checks::CheckContext;
use config::{
    build_catalog, build_dataset, build_quiver, build_signature, build_signature_spec, load_config,
    scalar_mode, validate_signature_dims, ConfigFile, SignatureCfg,
};
use formats::{
    f17, history_csv, load_checkpoint, mat_to_json, save_checkpoint, save_report, Checkpoint,
    RunReport,
};

#[derive(Parser)]
#[command(
    name = "quiverml",
    about = "Machine learning over framed quiver moduli",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Configuration file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for reports and artifacts.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the signature: compact | euclidean | hyperbolic | coefficient.
    #[arg(long)]
    signature: Option<String>,
    /// Restrict scalars to the real locus.
    #[arg(long)]
    real: bool,
    /// Multiplies every check tolerance.
    #[arg(long, default_value_t = 1.0)]
    tolerance_scale: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Run the invariant suites against a configuration.
    Check(CommonOpts),
    /// Train and write the history CSV, checkpoint, and report.
    Train(CommonOpts),
    /// Evaluate a checkpoint on rows of inputs.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV of input rows (one sample per line, real entries).
        #[arg(long)]
        inputs: PathBuf,
        /// Output predictions CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the moduli dimension and per-vertex bundle data.
    Dim {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write the space-like Grassmannian coordinates of a checkpoint and the
    /// round-trip residual.
    Map {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Check(opts) => cmd_check(&opts),
        Command::Train(opts) => cmd_train(&opts),
        Command::Eval {
            checkpoint,
            inputs,
            out,
        } => cmd_eval(&checkpoint, &inputs, out.as_deref()).map(|_| true),
        Command::Dim { config } => cmd_dim(&config).map(|_| true),
        Command::Map { checkpoint, out } => cmd_map(&checkpoint, out.as_deref()).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

struct Resolved {
    cfg: ConfigFile,
    quiver: Arc<quiverml::quiver::Quiver>,
    signature: MetricSignature<f64>,
    signature_cfg: SignatureCfg,
    mode: ScalarMode,
    seed: u64,
}

fn resolve(opts: &CommonOpts) -> Result<Resolved> {
    let mut cfg = load_config(&opts.config)?;
    if let Some(sig) = &opts.signature {
        cfg.signature = SignatureCfg::Preset(sig.clone());
    }
    if let Some(seed) = opts.seed {
        cfg.train.seed = seed;
    }
    let quiver = Arc::new(build_quiver(&cfg.quiver)?);
    let (signature, _) = build_signature(&cfg.signature)?;
    signature
        .validate(&quiver)
        .map_err(|e| anyhow::anyhow!("invalid signature: {e}"))?;
    validate_signature_dims(&quiver, &signature)?;
    let mode = scalar_mode(&cfg, opts.real);
    let seed = cfg.train.seed;
    let signature_cfg = cfg.signature.clone();
    Ok(Resolved {
        cfg,
        quiver,
        signature,
        signature_cfg,
        mode,
        seed,
    })
}

fn cmd_check(opts: &CommonOpts) -> Result<bool> {
    let r = resolve(opts)?;
    let catalog = build_catalog(&r.cfg.activations)?;
    let tree = parse_algorithm::<f64>(&r.cfg.algorithm, &r.quiver, catalog.len())
        .map_err(|e| anyhow::anyhow!("invalid algorithm: {e}"))?;
    let ctx = CheckContext {
        quiver: r.quiver.clone(),
        tree,
        signature: r.signature.clone(),
        catalog,
        mode: r.mode,
        seed: r.seed,
        tolerance_scale: opts.tolerance_scale,
    };
    let checks = ctx.run_all()?;
    let all_pass = checks.iter().all(|c| c.pass);
    for c in &checks {
        println!(
            "check {:<24} {}  (deviation {:.3e}, tolerance {:.1e})",
            c.name,
            if c.pass { "PASS" } else { "FAIL" },
            c.deviation,
            c.tolerance
        );
    }
    std::fs::create_dir_all(&opts.out)?;
    let report = RunReport {
        command: "check".into(),
        config: serde_json::to_value(&r.cfg)?,
        tolerance_scale: opts.tolerance_scale,
        checks,
        history_path: None,
        checkpoint_path: None,
        final_cost: None,
        metric_dump: Vec::new(),
    };
    save_report(&opts.out.join("report.json"), &report)?;
    Ok(all_pass)
}

fn cmd_train(opts: &CommonOpts) -> Result<bool> {
    let r = resolve(opts)?;
    let catalog = build_catalog(&r.cfg.activations)?;
    let config_dir = opts
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let data = build_dataset(&r.cfg, &r.quiver, &config_dir)?
        .ok_or_else(|| anyhow::anyhow!("training requires a data section in the config"))?;

    let mut tc = TrainConfig::new(r.quiver.clone(), &r.cfg.algorithm, r.signature.clone());
    tc.signature = build_signature_spec(&r.cfg.signature)?;
    if let Some(adj) = &r.cfg.adjoint_signature {
        let (sig, _) = build_signature(adj)?;
        tc.adjoint_signature = Some(sig);
    }
    tc.learning_rate = r.cfg.train.lr;
    tc.max_steps = r.cfg.train.steps;
    tc.seed = r.seed;
    tc.batch = r.cfg.train.batch;
    tc.refresh_period = r.cfg.train.refresh;
    tc.mode = r.mode;
    tc.catalog = catalog;

    let outcome = train(&tc, data).map_err(|e| anyhow::anyhow!("training failed: {e}"))?;

    std::fs::create_dir_all(&opts.out)?;
    let history_path = opts.out.join("history.csv");
    std::fs::write(&history_path, history_csv(&outcome.history))?;

    let checkpoint = Checkpoint {
        quiver: config::QuiverCfg::from_quiver(&r.quiver),
        algorithm: r.cfg.algorithm.clone(),
        signature: r.signature_cfg.clone(),
        activations: tc.catalog.kinds().iter().map(|k| k.name().into()).collect(),
        mode: match r.mode {
            ScalarMode::Complex => "complex".into(),
            ScalarMode::Real => "real".into(),
        },
        framings: outcome.point.framings().iter().map(mat_to_json).collect(),
        arrows: outcome.point.arrows().iter().map(mat_to_json).collect(),
    };
    let checkpoint_path = opts.out.join("checkpoint.json");
    save_checkpoint(&checkpoint_path, &checkpoint)?;

    let final_cost = outcome.history.final_cost();
    let report = RunReport {
        command: "train".into(),
        config: serde_json::to_value(&r.cfg)?,
        tolerance_scale: opts.tolerance_scale,
        checks: Vec::new(),
        history_path: Some(history_path.display().to_string()),
        checkpoint_path: Some(checkpoint_path.display().to_string()),
        final_cost: Some(final_cost),
        metric_dump: checks::metric_dump(&outcome.point, &outcome.signature)?,
    };
    save_report(&opts.out.join("report.json"), &report)?;
    println!(
        "trained {} steps, final cost {}",
        outcome.history.records.last().map(|r| r.step).unwrap_or(0),
        f17(final_cost)
    );
    Ok(true)
}

fn cmd_eval(checkpoint: &Path, inputs: &Path, out: Option<&Path>) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let quiver = Arc::new(build_quiver(&ck.quiver)?);
    let rep = ck.rep(&quiver)?;
    let catalog = build_catalog(&Some(ck.activations.clone()))?;
    let (signature, _) = build_signature(&ck.signature)?;
    let tree = parse_algorithm::<f64>(&ck.algorithm, &quiver, catalog.len())
        .map_err(|e| anyhow::anyhow!("invalid algorithm in checkpoint: {e}"))?;
    let n_in = quiver.vertex(tree.in_block).unwrap().n;

    let text = std::fs::read_to_string(inputs)
        .with_context(|| format!("reading inputs {}", inputs.display()))?;
    let mut lines_out = String::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nums: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("line {} of {}", lineno + 1, inputs.display()))?;
        if nums.len() != n_in {
            bail!(
                "line {}: expected {} input columns, found {}",
                lineno + 1,
                n_in,
                nums.len()
            );
        }
        let x: Vec<num_complex::Complex<f64>> = nums
            .iter()
            .map(|&v| num_complex::Complex::new(v, 0.0))
            .collect();
        let (y, _) = forward(&tree, &rep, &signature, &catalog, &x)
            .map_err(|e| anyhow::anyhow!("forward pass failed: {e}"))?;
        let row: Vec<String> = y
            .iter()
            .flat_map(|z| {
                if rep.mode().is_real() {
                    vec![f17(z.re)]
                } else {
                    vec![f17(z.re), f17(z.im)]
                }
            })
            .collect();
        lines_out.push_str(&row.join(","));
        lines_out.push('\n');
    }
    match out {
        Some(path) => std::fs::write(path, lines_out)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{lines_out}"),
    }
    Ok(())
}

fn cmd_dim(config: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let quiver = Arc::new(build_quiver(&cfg.quiver)?);
    let dim = quiver
        .moduli_dimension()
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    println!("moduli dimension: {dim}");
    println!("vertex  d  n  m_i  N_i");
    for v in quiver.vertices() {
        println!(
            "{:>6} {:>2} {:>2} {:>4} {:>4}",
            v.id,
            v.d,
            v.n,
            quiver.m_at(v.id)?,
            quiver.n_total_at(v.id)?
        );
    }
    Ok(())
}

fn cmd_map(checkpoint: &Path, out: Option<&Path>) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let quiver = Arc::new(build_quiver(&ck.quiver)?);
    let rep = ck.rep(&quiver)?;
    let fixed = gauge_fix(&rep).map_err(|e| anyhow::anyhow!("gauge fixing failed: {e}"))?;
    let coords = grassmann_map(&fixed).map_err(|e| anyhow::anyhow!("{e}"))?;
    let back = grassmann_inverse(&coords, fixed.mode()).map_err(|e| anyhow::anyhow!("{e}"))?;
    let residual = fixed.max_abs_diff(&back);

    #[derive(serde::Serialize)]
    struct MapDump {
        round_trip_residual: f64,
        blocks: Vec<BlockDump>,
    }
    #[derive(serde::Serialize)]
    struct BlockDump {
        vertex: u32,
        coordinates: formats::MatJson,
    }
    let dump = MapDump {
        round_trip_residual: residual,
        blocks: quiver
            .vertices()
            .iter()
            .map(|v| BlockDump {
                vertex: v.id,
                coordinates: mat_to_json(coords.block(v.id)),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&dump)?;
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => println!("{text}"),
    }
    println!("round-trip residual: {}", f17(residual));
    Ok(())
}
