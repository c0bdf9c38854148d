use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gaitnet_core::backward::ExpertBundle;
use gaitnet_core::dataset::Dataset;
use gaitnet_core::forward::{load_fgn, save_fgn};
use gaitnet_core::oracle::Oracle;
use gaitnet_core::pipeline::{self, Observation, PipelineConfig};
use gaitnet_core::{Error, Result};

/// Desk-scale gait pipeline: synthetic data, forward gait network, backward (c-VAE) muscle
/// inference and evaluation reports.
///
/// Configuration is a TOML file with optional sections [data], [fgn], [bgn], [eval] and
/// [ablation]; every key has a default (see `configs/desk.toml`) and unknown keys are errors.
///
/// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical divergence.
#[derive(Parser)]
#[command(name = "gaitnet", version)]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Require reproducible output: seeds that would otherwise come from the clock default
    /// to 0. Parallel stages always reduce in a fixed order.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample conditions, simulate them with the oracle and write training and holdout data.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training dataset output.
        #[arg(long)]
        out: PathBuf,
        /// Holdout dataset output [default: <out stem>.holdout.bgnd].
        #[arg(long)]
        holdout: Option<PathBuf>,
    },
    /// Train the forward gait network; writes weights and a loss-history CSV.
    TrainForward {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss history [default: <out>.loss.csv].
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Train the three backward experts against a frozen forward network.
    TrainBackward {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Forward-network weights from `train-forward`.
        #[arg(long)]
        fgn: PathBuf,
        /// Expert bundle output.
        #[arg(long)]
        out: PathBuf,
        /// Loss history [default: <out>.loss.csv].
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Infer muscle conditions for an observed gait.
    Predict {
        #[arg(long)]
        bundle: PathBuf,
        /// Observation file from `export-gait`.
        #[arg(long)]
        gait: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write the evaluation report (CSV, SVG and summary.txt) for a trained bundle.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        holdout: PathBuf,
        /// Forward weights saved before backward training, for the frozen-network check.
        #[arg(long)]
        fgn: Option<PathBuf>,
        /// Also train and score the sampling-strategy ablation.
        #[arg(long)]
        ablation: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write an observation file from a dataset tuple or an oracle preset.
    ExportGait {
        /// Take tuple `--index` of this dataset.
        #[arg(long, conflicts_with = "preset")]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Simulate this oracle preset at the reference gait condition.
        #[arg(long)]
        preset: Option<String>,
        /// Oracle schema for `--preset` [default: built-in].
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn holdout_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}.holdout.bgnd"))
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, body)?;
    Ok(())
}

/// Fails with every absent `(role, path)` listed.
fn require(paths: &[(&str, &Path)]) -> Result<()> {
    let missing: Vec<String> = paths
        .iter()
        .filter(|(_, p)| !p.exists())
        .map(|(what, p)| format!("{what} {}", p.display()))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingInputs(missing))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            config,
            out,
            holdout,
        } => {
            let cfg = load_config(config.as_deref())?;
            if cfg.data.n_tuples == 0 {
                eprintln!("warning: data.n_tuples = 0, writing an empty dataset");
            }
            let (train, held) = pipeline::generate_data(&cfg)?;
            train.save(&out)?;
            let held_path = holdout.unwrap_or_else(|| holdout_path(&out));
            held.save(&held_path)?;
            println!(
                "wrote {} training and {} holdout tuples ({} sampling, seed {}, schema {:016x})",
                train.len(),
                held.len(),
                train.strategy(),
                train.seed(),
                train.schema_hash()
            );
            println!("  {}\n  {}", out.display(), held_path.display());
        }
        Command::TrainForward {
            config,
            data,
            out,
            loss_csv,
        } => {
            let cfg = load_config(config.as_deref())?;
            require(&[("training data", &data)])?;
            let ds = Dataset::load(&data)?;
            let (net, report) = pipeline::train_forward(&cfg, &ds)?;
            let oracle = ds.oracle()?;
            save_fgn(&net, &cfg.fgn, oracle.space(), &out)?;
            let csv = loss_csv.unwrap_or_else(|| with_suffix(&out, ".loss.csv"));
            write(&csv, report.to_csv())?;
            write(
                &csv.with_extension("svg"),
                pipeline::loss_plot(Some(&report), &[]),
            )?;
            println!(
                "forward network trained: {} epochs{}, final loss {}",
                report.epoch_loss.len(),
                if report.stopped_early { " (plateau)" } else { "" },
                report.final_loss()
            );
            println!("  {}\n  {}", out.display(), csv.display());
        }
        Command::TrainBackward {
            config,
            data,
            fgn,
            out,
            loss_csv,
        } => {
            let cfg = load_config(config.as_deref())?;
            require(&[
                ("forward-network weights (frozen decoder; run train-forward first)", &fgn),
                ("training data", &data),
            ])?;
            let ds = Dataset::load(&data)?;
            let oracle = ds.oracle()?;
            let (net, _) = load_fgn(&fgn, oracle.space(), oracle.layout())?;
            let (bundle, reports) = pipeline::train_backward(&cfg, &ds, &net)?;
            bundle.save(&out)?;
            let csv = loss_csv.unwrap_or_else(|| with_suffix(&out, ".loss.csv"));
            let mut body = String::from("expert,");
            body.push_str(reports[0].to_csv().lines().next().unwrap_or(""));
            body.push('\n');
            for (i, r) in reports.iter().enumerate() {
                for line in r.to_csv().lines().skip(1) {
                    body.push_str(&format!("{i},{line}\n"));
                }
            }
            write(&csv, body)?;
            write(&csv.with_extension("svg"), pipeline::loss_plot(None, &reports))?;
            for (i, r) in reports.iter().enumerate() {
                println!(
                    "expert {i}: {} epochs, final loss {}",
                    r.epochs.len(),
                    r.final_loss()
                );
            }
            println!("  {}\n  {}", out.display(), csv.display());
        }
        Command::Predict {
            bundle,
            gait,
            samples,
            seed,
            out_dir,
        } => {
            require(&[("expert bundle", &bundle)])?;
            let b = ExpertBundle::load(&bundle)?;
            let obs = Observation::load(&gait)?;
            let seed = seed.unwrap_or_else(|| {
                if cli.deterministic {
                    0
                } else {
                    std::time::SystemTime::now()
                        .duration_since(std::time::UNIX_EPOCH)
                        .map(|d| d.as_nanos() as u64)
                        .unwrap_or(0)
                }
            });
            let p = pipeline::predict(&b, &obs, samples, seed)?;
            let oracle = b.oracle()?;
            let names: Vec<&str> = oracle.space().muscle().iter().map(|m| m.name.as_str()).collect();
            std::fs::create_dir_all(&out_dir)?;
            write(&out_dir.join("samples.csv"), p.samples_csv(&names))?;
            write(
                &out_dir.join("prediction.csv"),
                p.report(&names, oracle.joints()),
            )?;
            println!(
                "expert {} selected; {} samples (seed {seed}); oracle re-simulation error {:.3} deg",
                p.expert,
                p.samples.len(),
                p.resim_joint_average()
            );
            println!("  {}", out_dir.display());
        }
        Command::Evaluate {
            config,
            bundle,
            holdout,
            fgn,
            ablation,
            out_dir,
        } => {
            let cfg = load_config(config.as_deref())?;
            let mut needed = vec![("expert bundle", bundle.as_path()), ("holdout data", holdout.as_path())];
            if let Some(f) = &fgn {
                needed.push(("forward weights", f.as_path()));
            }
            require(&needed)?;
            let b = ExpertBundle::load(&bundle)?;
            let oracle = b.oracle()?;
            let held = Dataset::load_expecting(&holdout, oracle.space().hash())?;
            let reference = match &fgn {
                Some(f) => Some(load_fgn(f, oracle.space(), oracle.layout())?.0),
                None => None,
            };
            let outcome =
                pipeline::evaluate(&cfg, &b, &held, reference.as_ref(), ablation || cfg.ablation.enabled)?;
            outcome.write(&out_dir)?;
            print!("{}", outcome.summary());
            println!("report written to {}", out_dir.display());
        }
        Command::ExportGait {
            data,
            index,
            preset,
            oracle,
            out,
        } => {
            let obs = match (data, preset) {
                (Some(d), None) => {
                    require(&[("dataset", &d)])?;
                    let ds = Dataset::load(&d)?;
                    if index >= ds.len() {
                        return Err(Error::Config(format!(
                            "--index {index} out of range for {} tuples",
                            ds.len()
                        )));
                    }
                    Observation::from_tuple(&ds, index)
                }
                (None, Some(name)) => {
                    let o = match oracle {
                        Some(p) => Oracle::load(p)?,
                        None => Oracle::desk(),
                    };
                    let anatomy = o
                        .preset(&name)
                        .ok_or_else(|| Error::Config(format!("oracle has no preset `{name}`")))?;
                    Observation::simulated(&o, &anatomy, o.space().reference_gait())?
                }
                _ => {
                    return Err(Error::Config(
                        "export-gait needs either --data or --preset".into(),
                    ))
                }
            };
            obs.save(&out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
