use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use grace_cli::evaluate::{category_order, evaluate_pairs, join_labels, nearest_centroid_loo, read_label_csv};
use grace_cli::losses::{evaluate as evaluate_losses, LossBatch};
use grace_cli::pipeline::{read_fused_csv, run_align, run_report, run_saliency, write_fused_csv};
use grace_cli::synth::synth;
use grace_cli::{CliError, PipelineConfig};
use grace_core::io::write_atomic;
use grace_core::losses::Mixup;
use grace_core::motion::MotionMode;
use grace_core::text::{build_prompt, refine, top_k, HttpRefiner, MockRefiner, RefinerClient};

#[derive(Parser)]
#[command(name = "grace", version, about = "Text-guided video emotion alignment toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Default)]
struct MotionFlags {
    /// temporal-only, spatial-only or spatiotemporal.
    #[arg(long)]
    mode: Option<MotionMode>,
    /// Lower bound on every saliency weight, in (0, 1).
    #[arg(long)]
    floor: Option<f64>,
}

#[derive(Args)]
struct SolverFlags {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Use the scaling iteration instead of the log-domain one.
    #[arg(long)]
    linear_domain: bool,
    /// Patch marginal proportional to saliency instead of uniform.
    #[arg(long)]
    saliency_marginal: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic manifest with embedding files.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        categories: Option<usize>,
        #[arg(long)]
        per_category: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long)]
        tokens: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        planted: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Align every manifest sample; writes plan/ranking CSVs and summary.json.
    Align {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Exit 3 on non-converged plans and 2 on failed samples.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        key_frames: Option<usize>,
        /// Also write fused clip vectors as `id,label,f0,...`.
        #[arg(long)]
        export_fused: Option<PathBuf>,
        #[command(flatten)]
        motion: MotionFlags,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Write per-patch saliency weights for every manifest sample.
    Saliency {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[command(flatten)]
        motion: MotionFlags,
    },
    /// Span-weight CSVs and SVG charts from an earlier align run.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Directory holding the align outputs.
        #[arg(long)]
        align_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate focal, contrastive and auxiliary losses on a batch file.
    Losses {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        batch: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        temperature: Option<f64>,
        /// Enable same-category mixup with this Beta parameter.
        #[arg(long)]
        mixup_alpha: Option<f64>,
        #[arg(long, default_value_t = 0)]
        mixup_seed: u64,
    },
    /// UAR/WAR from label CSVs, or from fused vectors by nearest centroid.
    Eval {
        #[command(flatten)]
        common: Common,
        /// `id,label` predictions.
        #[arg(long, requires = "gold", conflicts_with = "fused")]
        pred: Option<PathBuf>,
        /// `id,label` ground truth.
        #[arg(long, requires = "pred")]
        gold: Option<PathBuf>,
        /// Fused-vector CSV from `align --export-fused`.
        #[arg(long, required_unless_present = "pred")]
        fused: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a descriptor prompt and send it to a rewriting service.
    Refine {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        caption: String,
        /// Comma-separated category scores in label order.
        #[arg(long, value_delimiter = ',', conflicts_with = "categories", required_unless_present = "categories")]
        scores: Option<Vec<f64>>,
        /// Comma-separated category names, used as given.
        #[arg(long, value_delimiter = ',')]
        categories: Option<Vec<String>>,
        #[arg(long)]
        top_k: Option<usize>,
        /// Rewriter endpoint; the offline mock is used when absent.
        #[arg(long)]
        url: Option<String>,
        #[arg(long, default_value_t = 30_000)]
        timeout_ms: u64,
    },
}

fn load(common: &Common) -> Result<PipelineConfig, CliError> {
    PipelineConfig::load_or_default(common.config.as_deref())
}

fn apply_motion(cfg: &mut PipelineConfig, flags: &MotionFlags) {
    if let Some(mode) = flags.mode {
        cfg.motion.mode = mode;
    }
    if let Some(floor) = flags.floor {
        cfg.motion.floor = floor;
    }
}

fn require(path: Option<PathBuf>, fallback: &Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    path.or_else(|| fallback.clone())
        .ok_or_else(|| CliError::Usage(format!("--{flag} is required (or set it under `paths` in the config)")))
}

fn emit_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let mut json = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    json.push('\n');
    match out {
        Some(path) => write_atomic(path, json.as_bytes())?,
        None => print!("{json}"),
    }
    Ok(())
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth {
            common,
            out,
            categories,
            per_category,
            frames,
            rows,
            cols,
            channels,
            tokens,
            dim,
            planted,
            sigma,
            seed,
        } => {
            let mut cfg = load(&common)?;
            let s = &mut cfg.synth;
            let set = |slot: &mut usize, v: Option<usize>| {
                if let Some(v) = v {
                    *slot = v;
                }
            };
            set(&mut s.categories, categories);
            set(&mut s.per_category, per_category);
            set(&mut s.frames, frames);
            set(&mut s.rows, rows);
            set(&mut s.cols, cols);
            set(&mut s.channels, channels);
            set(&mut s.tokens, tokens);
            set(&mut s.dim, dim);
            set(&mut s.planted, planted);
            if let Some(v) = sigma {
                s.sigma = v;
            }
            if let Some(v) = seed {
                s.seed = v;
            }
            cfg.validate()?;
            let out = require(out, &cfg.paths.out_dir, "out")?;
            let result = synth(&cfg.synth, &cfg.labels, &out)?;
            eprintln!("wrote {} samples to {}", result.samples.len(), result.manifest.display());
            Ok(())
        }
        Command::Align {
            common,
            manifest,
            out,
            jobs,
            strict,
            key_frames,
            export_fused,
            motion,
            solver,
        } => {
            let mut cfg = load(&common)?;
            apply_motion(&mut cfg, &motion);
            if let Some(v) = solver.lambda {
                cfg.sinkhorn.lambda = v;
            }
            if let Some(v) = solver.tol {
                cfg.sinkhorn.tol = v;
            }
            if let Some(v) = solver.max_iter {
                cfg.sinkhorn.max_iter = v;
            }
            if solver.linear_domain {
                cfg.sinkhorn.log_domain = false;
            }
            if solver.saliency_marginal {
                cfg.saliency_marginal = true;
            }
            if let Some(k) = key_frames {
                cfg.key_frames = k;
            }
            let manifest = require(manifest, &cfg.paths.manifest, "manifest")?;
            let out = require(out, &cfg.paths.out_dir, "out")?;
            let run = run_align(&cfg, &manifest, &out, jobs)?;
            if let Some(path) = export_fused {
                write_fused_csv(&run, &path)?;
            }
            let s = &run.summary;
            eprintln!(
                "{} samples: {} converged, {} not converged, {} failed",
                s.samples, s.converged, s.not_converged, s.failed
            );
            if s.samples > 0 && s.failed == s.samples {
                return Err(CliError::Data("every sample failed".into()));
            }
            match strict.then(|| s.strict_error()).flatten() {
                Some(e) => Err(e),
                None => Ok(()),
            }
        }
        Command::Saliency {
            common,
            manifest,
            out,
            jobs,
            motion,
        } => {
            let mut cfg = load(&common)?;
            apply_motion(&mut cfg, &motion);
            let manifest = require(manifest, &cfg.paths.manifest, "manifest")?;
            let out = require(out, &cfg.paths.out_dir, "out")?;
            let summary = run_saliency(&cfg, &manifest, &out, jobs)?;
            eprintln!("{} samples, {} failed", summary.samples, summary.failed);
            if summary.samples > 0 && summary.failed == summary.samples {
                return Err(CliError::Data("every sample failed".into()));
            }
            Ok(())
        }
        Command::Report {
            common,
            manifest,
            align_dir,
            out,
        } => {
            let cfg = load(&common)?;
            let manifest = require(manifest, &cfg.paths.manifest, "manifest")?;
            let out = out.unwrap_or_else(|| align_dir.clone());
            let summary = run_report(&manifest, &align_dir, &out)?;
            eprintln!("{} samples, {} failed", summary.samples, summary.failed);
            if summary.samples > 0 && summary.failed == summary.samples {
                return Err(CliError::Data("every sample failed".into()));
            }
            Ok(())
        }
        Command::Losses {
            common,
            batch,
            out,
            gamma,
            alpha,
            temperature,
            mixup_alpha,
            mixup_seed,
        } => {
            let mut cfg = load(&common)?;
            let l = &mut cfg.losses;
            if let Some(v) = gamma {
                l.gamma = v;
            }
            if let Some(v) = alpha {
                l.alpha = v;
            }
            if let Some(v) = temperature {
                l.temperature = v;
            }
            if let Some(alpha) = mixup_alpha {
                l.mixup = Some(Mixup {
                    alpha,
                    seed: mixup_seed,
                });
            }
            cfg.validate()?;
            let text = std::fs::read_to_string(&batch)
                .map_err(|e| CliError::Data(format!("{}: {e}", batch.display())))?;
            let batch: LossBatch =
                serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", batch.display())))?;
            emit_json(&evaluate_losses(&batch, &cfg.losses)?, out.as_deref())
        }
        Command::Eval {
            common,
            pred,
            gold,
            fused,
            out,
        } => {
            let cfg = load(&common)?;
            let pairs = if let (Some(pred), Some(gold)) = (pred, gold) {
                join_labels(&read_label_csv(&gold)?, &read_label_csv(&pred)?)?
            } else {
                let path = fused.ok_or_else(|| CliError::Usage("--fused or --pred/--gold required".into()))?;
                let rows = read_fused_csv(&path)?;
                let categories = category_order(&cfg.labels, rows.iter().map(|r| r.label.as_str()));
                let predicted = nearest_centroid_loo(&rows, &categories)?;
                rows.iter().map(|r| r.label.clone()).zip(predicted).collect()
            };
            emit_json(&evaluate_pairs(&cfg.labels, &pairs)?, out.as_deref())
        }
        Command::Refine {
            common,
            caption,
            scores,
            categories,
            top_k: k,
            url,
            timeout_ms,
        } => {
            let cfg = load(&common)?;
            let k = k.unwrap_or(cfg.top_k);
            let chosen: Vec<String> = match (scores, categories) {
                (Some(scores), _) => {
                    if scores.len() != cfg.labels.len() {
                        return Err(CliError::Usage(format!(
                            "{} scores for {} labels",
                            scores.len(),
                            cfg.labels.len()
                        )));
                    }
                    top_k(&scores, k)
                        .map_err(|e| CliError::Usage(e.to_string()))?
                        .into_iter()
                        .map(|i| cfg.labels[i].clone())
                        .collect()
                }
                (None, Some(names)) => names,
                (None, None) => return Err(CliError::Usage("--scores or --categories required".into())),
            };
            let request = build_prompt(&caption, &chosen).map_err(|e| CliError::Usage(e.to_string()))?;
            let client: Box<dyn RefinerClient> = match url {
                Some(url) => Box::new(
                    HttpRefiner::from_env(url, Duration::from_millis(timeout_ms))
                        .map_err(|e| CliError::Data(e.to_string()))?,
                ),
                None => Box::new(MockRefiner),
            };
            let refined = refine(client.as_ref(), &request).map_err(|e| CliError::Data(e.to_string()))?;
            emit_json(
                &serde_json::json!({
                    "categories": chosen,
                    "prompt": request.prompt,
                    "refined": refined,
                }),
                None,
            )
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
