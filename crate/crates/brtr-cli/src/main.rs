//! `brtr`: synthetic problem generation, robust tensor-ring completion,
//! metric evaluation, and PPM/PGM conversion.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 usage or I/O error.

mod img;

use anyhow::{anyhow, bail, Context, Result};
use brtr_core::error::Error as CoreError;
use brtr_core::inference::{fit, predict, InferenceConfig, InitMode, MomentMode, RunReport};
use brtr_core::io as bio;
use brtr_core::metrics::{psnr, ree, rse};
use brtr_core::synth::{gen_problem, SynthSpec};
use brtr_core::tensor::{frobenius_norm, DenseTensor, IndexMask, Shape};
use brtr_core::tr::TRRank;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "brtr", version, about = "Bayesian robust tensor ring completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic robust-completion problem directory.
    Synth(SynthArgs),
    /// Fit the low-rank + sparse decomposition to an observed tensor.
    Complete(CompleteArgs),
    /// Compare an estimate against a ground-truth tensor.
    Metrics(MetricsArgs),
    /// Convert a binary PPM/PGM image to a .brt tensor.
    Img2ten(ConvertArgs),
    /// Convert a .brt tensor (H×W×3 or H×W, values in [0,255]) to PPM/PGM.
    Ten2img(ConvertArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Tensor dimensions, e.g. 10,10,10,10
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    /// True TR ranks: either R_1..R_N or R_0..R_N (ring-closed)
    #[arg(long, value_delimiter = ',')]
    rank: Vec<usize>,
    /// Missing ratio in [0,1)
    #[arg(long, default_value_t = 0.0)]
    mr: f64,
    /// Sparse corruption ratio in [0,1]
    #[arg(long, default_value_t = 0.0)]
    sr: f64,
    /// Signal-to-noise ratio in dB; omit for noise-free
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompleteArgs {
    /// Observed tensor (.brt)
    #[arg(long)]
    input: Option<PathBuf>,
    /// Observation mask (.brm); omitted means fully observed
    #[arg(long)]
    mask: Option<PathBuf>,
    /// JSON config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rank caps R_0..R_N (or a single value for all positions)
    #[arg(long, value_delimiter = ',')]
    max_rank: Option<Vec<usize>>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Relative ELBO convergence tolerance
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    prune_threshold: Option<f64>,
    #[arg(long, value_parser = ["exact", "plugin"])]
    moment_mode: Option<String>,
    #[arg(long, value_parser = ["tr-approx", "random"])]
    init_mode: Option<String>,
    /// Sweeps with the sparse factor frozen at zero
    #[arg(long)]
    sparse_warmup: Option<usize>,
    /// Fit in this shape (first-index-fastest relinearization)
    #[arg(long, value_delimiter = ',')]
    reshape: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Ground-truth low-rank tensor, enables metrics in the report
    #[arg(long)]
    truth_low: Option<PathBuf>,
    /// Ground-truth sparse tensor
    #[arg(long)]
    truth_sparse: Option<PathBuf>,
    /// Ground-truth TR ranks R_0..R_N, enables REE in the report
    #[arg(long, value_delimiter = ',')]
    truth_rank: Option<Vec<usize>>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Estimated TR ranks R_0..R_N
    #[arg(long, value_delimiter = ',')]
    est_rank: Option<Vec<usize>>,
    /// True TR ranks R_0..R_N
    #[arg(long, value_delimiter = ',')]
    true_rank: Option<Vec<usize>>,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// On-disk experiment configuration; any field may be omitted and every flag
/// overrides the file value.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    version: Option<u32>,
    max_rank: Option<Vec<usize>>,
    max_iters: Option<usize>,
    tol: Option<f64>,
    prune_threshold: Option<f64>,
    moment_mode: Option<MomentMode>,
    init_mode: Option<InitMode>,
    sparse_warmup: Option<usize>,
    seed: Option<u64>,
    reshape: Option<Vec<usize>>,
}

#[derive(Serialize)]
struct MetricsOut {
    rse_low: f64,
    rse_sparse: Option<f64>,
    psnr: serde_json::Value,
    ree: Option<f64>,
}

#[derive(Serialize)]
struct Report {
    #[serde(flatten)]
    run: RunReport,
    metrics: Option<MetricsOut>,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<CoreError>() {
                Some(CoreError::Numerical(_)) => 1,
                _ => 2,
            }
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Complete(a) => cmd_complete(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Img2ten(a) => cmd_img2ten(a),
        Command::Ten2img(a) => cmd_ten2img(a),
    }
}

/// Accepts R_1..R_N (ring closure implied) or R_0..R_N.
fn parse_rank_vector(raw: &[usize], n_modes: usize) -> Result<TRRank> {
    let full = if raw.len() == n_modes {
        let mut v = Vec::with_capacity(n_modes + 1);
        v.push(raw[n_modes - 1]);
        v.extend_from_slice(raw);
        v
    } else {
        raw.to_vec()
    };
    Ok(TRRank::new(full)?)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    if a.dims.is_empty() {
        bail!("--dims must name at least one mode");
    }
    let rank = parse_rank_vector(&a.rank, a.dims.len())?;
    let spec = SynthSpec {
        dims: a.dims,
        true_rank: rank.ranks().to_vec(),
        mr: a.mr,
        sr: a.sr,
        snr_db: a.snr,
        seed: a.seed,
    };
    let problem = gen_problem(&spec)?;
    bio::write_problem_dir(&a.out, &spec, &problem)?;
    println!("{}", serde_json::to_string_pretty(&spec)?);
    Ok(())
}

fn cmd_complete(a: CompleteArgs) -> Result<()> {
    let input = a.input.as_ref().ok_or_else(|| anyhow!("--input is required"))?;
    let y0 = bio::read_tensor(input).with_context(|| format!("reading {}", input.display()))?;
    let mask0 = match &a.mask {
        Some(p) => bio::read_mask(p).with_context(|| format!("reading {}", p.display()))?,
        None => IndexMask::full(y0.shape().clone()),
    };

    let file_cfg: FileConfig = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => FileConfig::default(),
    };
    if let Some(v) = file_cfg.version {
        if v != 1 {
            bail!("unsupported config version {v}");
        }
    }

    let reshape = a.reshape.clone().or(file_cfg.reshape.clone());
    let original_shape = y0.shape().clone();
    let (y, mask) = match &reshape {
        Some(dims) => {
            let shape = Shape::new(dims.clone())?;
            (y0.reshape(shape.clone())?, mask0.reshape(shape)?)
        }
        None => (y0, mask0),
    };

    let nm = y.shape().ndim();
    let mut config = InferenceConfig::default_for(nm);
    // default caps never exceed the mode sizes
    let default_caps: Vec<usize> = {
        let cap = |k: usize| y.shape().dims()[k.min(nm - 1)].min(30);
        let mut v: Vec<usize> = (0..nm).map(cap).collect();
        v.insert(0, *v.last().unwrap());
        v
    };
    config.max_rank = TRRank::new(default_caps)?;
    if let Some(r) = a.max_rank.clone().or(file_cfg.max_rank) {
        config.max_rank = if r.len() == 1 {
            TRRank::uniform(nm, r[0])?
        } else {
            parse_rank_vector(&r, nm)?
        };
    }
    if let Some(v) = a.max_iters.or(file_cfg.max_iters) {
        config.max_iters = v;
    }
    if let Some(v) = a.tol.or(file_cfg.tol) {
        config.elbo_rel_tol = v;
    }
    if let Some(v) = a.prune_threshold.or(file_cfg.prune_threshold) {
        config.prune_threshold = v;
    }
    if let Some(v) = a.sparse_warmup.or(file_cfg.sparse_warmup) {
        config.sparse_warmup = v;
    }
    if let Some(v) = a.seed.or(file_cfg.seed) {
        config.seed = v;
    }
    if let Some(m) = &a.moment_mode {
        config.moment_mode = if m == "exact" { MomentMode::Exact } else { MomentMode::Plugin };
    } else if let Some(m) = file_cfg.moment_mode {
        config.moment_mode = m;
    }
    if let Some(m) = &a.init_mode {
        config.init_mode = if m == "random" { InitMode::Random } else { InitMode::TrApprox };
    } else if let Some(m) = file_cfg.init_mode {
        config.init_mode = m;
    }

    let (state, run) = fit(&y, &mask, &config)?;
    let low = predict(&state)?;
    let sparse = state.sparse.mean.clone();
    let (low_out, sparse_out) = if reshape.is_some() {
        (low.reshape(original_shape.clone())?, sparse.reshape(original_shape.clone())?)
    } else {
        (low.clone(), sparse.clone())
    };

    let metrics = build_metrics(&a, &low_out, &sparse_out, &run)?;

    std::fs::create_dir_all(&a.out)?;
    bio::write_tensor(&a.out.join("low_rank.brt"), &low_out)?;
    bio::write_tensor(&a.out.join("sparse.brt"), &sparse_out)?;
    let report = Report { run, metrics };
    std::fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn build_metrics(
    a: &CompleteArgs,
    low: &DenseTensor,
    sparse: &DenseTensor,
    run: &RunReport,
) -> Result<Option<MetricsOut>> {
    let Some(truth_low_path) = &a.truth_low else {
        return Ok(None);
    };
    let truth_low = bio::read_tensor(truth_low_path)?;
    let rse_low = rse(low, &truth_low)?;
    let p = psnr(low, &truth_low)?;
    // an all-zero sparse truth (no outliers) has no defined relative error
    let rse_sparse = match &a.truth_sparse {
        Some(path) => {
            let t = bio::read_tensor(path)?;
            if frobenius_norm(&t) == 0.0 { None } else { Some(rse(sparse, &t)?) }
        }
        None => None,
    };
    let ree_val = match &a.truth_rank {
        Some(r) => {
            let truth = parse_rank_vector(r, run.final_ranks.len() - 1)?;
            let est = TRRank::new(run.final_ranks.clone())?;
            Some(ree(&est, &truth)?)
        }
        None => None,
    };
    Ok(Some(MetricsOut {
        rse_low,
        rse_sparse,
        psnr: psnr_json(p),
        ree: ree_val,
    }))
}

/// Infinite PSNR (perfect reconstruction) serializes as the string "inf".
fn psnr_json(v: f64) -> serde_json::Value {
    if v.is_infinite() {
        serde_json::Value::String("inf".into())
    } else {
        serde_json::json!(v)
    }
}

fn cmd_metrics(a: MetricsArgs) -> Result<()> {
    let est = bio::read_tensor(&a.est)?;
    let truth = bio::read_tensor(&a.truth)?;
    let mut out = serde_json::Map::new();
    out.insert("rse".into(), serde_json::json!(rse(&est, &truth)?));
    out.insert("psnr".into(), psnr_json(psnr(&est, &truth)?));
    if let (Some(er), Some(tr)) = (&a.est_rank, &a.true_rank) {
        let e = TRRank::new(er.clone())?;
        let t = TRRank::new(tr.clone())?;
        out.insert("ree".into(), serde_json::json!(ree(&e, &t)?));
    }
    println!("{}", serde_json::to_string_pretty(&serde_json::Value::Object(out))?);
    Ok(())
}

fn cmd_img2ten(a: ConvertArgs) -> Result<()> {
    let bytes =
        std::fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let t = img::decode(&bytes)?;
    bio::write_tensor(&a.out, &t)?;
    Ok(())
}

fn cmd_ten2img(a: ConvertArgs) -> Result<()> {
    let t = bio::read_tensor(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))?;
    let bytes = img::encode(&t)?;
    std::fs::write(&a.out, bytes)?;
    Ok(())
}
