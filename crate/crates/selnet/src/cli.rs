//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use selnet_core::calibration;
use selnet_core::evaluation::{self, accept_mask, risk_coverage_curve, ScoredModel};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{DataSpec, RunConfig};
use crate::dataio::load_csv;
use crate::experiment::{self, confidence, score, ScoreKind};
use crate::report;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "SELNET_OUT";

#[derive(Parser, Debug)]
#[command(name = "selnet", version, about = "Train and evaluate selective prediction networks")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Score {
    G,
    Sr,
    Mcdropout,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model and write its checkpoint and history.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the target coverage.
        #[arg(long)]
        coverage: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Train the plain full-coverage network used by the SR and
        /// MC-dropout scores instead.
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a coverage threshold and write a calibrated copy of the checkpoint.
    Calibrate {
        #[arg(long)]
        model: PathBuf,
        /// Unlabeled validation CSV; the stored calibration split when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        coverage: f64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Selective risk and coverage on labeled data.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Labeled CSV; the stored test split when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Threshold on g; the calibrated threshold (or 0.5) when absent.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Risk–coverage curve.
    Curve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// CSV used to fit thresholds; the stored calibration split when absent.
        #[arg(long)]
        calibration_data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        coverages: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Score::G)]
        score: Score,
        #[arg(long, default_value_t = 100)]
        passes: usize,
        #[arg(long, default_value_t = 0.5)]
        rate: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-calibration grid over models trained at different coverages.
    Grid {
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        calibration_data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        coverages: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train per coverage and seed, compare against baselines.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        coverages: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parse `args` (program name first) and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn out_dir(out: Option<PathBuf>, command: &str) -> anyhow::Result<PathBuf> {
    let dir = match out {
        Some(d) => d,
        None => std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("selnet-out"))
            .join(command),
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_config(dir: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg.to_toml()?).with_context(|| format!("writing {}", path.display()))
}

fn stored_run(ck: &Checkpoint) -> anyhow::Result<(RunConfig, u64)> {
    let run = ck
        .run
        .clone()
        .context("checkpoint carries no run configuration; pass --data explicitly")?;
    let seed = run.seeds[0];
    Ok((run, seed))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Split {
    Calibration,
    Test,
}

/// `--data` CSV transformed with the checkpoint's stored preprocessing, or a
/// regenerated split of the stored run.
fn eval_data(ck: &Checkpoint, data: Option<&Path>, split: Split) -> anyhow::Result<selnet_core::data::Dataset> {
    match data {
        Some(path) => {
            let (run, _) = stored_run(ck)?;
            let DataSpec::Csv {
                path: train_path,
                schema,
                ..
            } = &run.data
            else {
                bail!("--data needs a checkpoint trained from a CSV schema");
            };
            if same_file(path, train_path) {
                warn!(
                    "{} is the training data file; its samples are not independent",
                    path.display()
                );
            }
            let raw = load_csv(path, schema)?;
            Ok(experiment::apply_preprocessing(&raw, &ck.preprocessing)?)
        }
        None => {
            let (run, seed) = stored_run(ck)?;
            let p = experiment::prepare(&run, seed)?;
            Ok(match split {
                Split::Calibration => p.calibration,
                Split::Test => p.test,
            })
        }
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn provenance_of(ck: &Checkpoint) -> anyhow::Result<String> {
    Ok(match &ck.run {
        Some(r) => report::provenance(&r.hash()?, &r.seeds),
        None => report::provenance("none", &[]),
    })
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Train {
            config,
            seed,
            coverage,
            epochs,
            baseline,
            out,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            cfg.seeds.truncate(1);
            if let Some(c) = coverage {
                cfg.loss.coverage = c;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cfg.validate()?;
            let dir = out_dir(out.or_else(|| cfg.out_dir.clone()), "train")?;
            let seed = cfg.seeds[0];
            let prep = experiment::prepare(&cfg, seed)?;
            let (model, history) = if baseline {
                experiment::train_baseline(&cfg, &prep, seed)?
            } else {
                experiment::train_selective(&cfg, &prep, cfg.loss.coverage, seed)?
            };
            if let Some(last) = history.last() {
                info!("final epoch: loss {:.5}", last.total_loss);
            }
            let prov = report::provenance(&cfg.hash()?, &cfg.seeds);
            let ck = Checkpoint {
                model,
                calibration: None,
                preprocessing: prep.preprocessing,
                run: Some(cfg.clone()),
            };
            checkpoint::save(dir.join("model.ckpt"), &ck)?;
            report::write_history(&dir.join("history.csv"), &prov, &history)?;
            write_config(&dir, &cfg)?;
            println!("{}", dir.join("model.ckpt").display());
        }
        Command::Calibrate {
            model,
            data,
            coverage,
            delta,
            out,
        } => {
            let mut ck = checkpoint::load(&model)?;
            let d = eval_data(&ck, data.as_deref(), Split::Calibration)?;
            let cal = calibration::calibrate(&ck.model, &d.features, coverage, delta)?;
            ck.calibration = Some(cal);
            ck.model.set_calibrated_threshold(Some(cal.threshold));
            let dir = out_dir(out, "calibrate")?;
            checkpoint::save(dir.join("model.ckpt"), &ck)?;
            let text = toml::to_string(&cal)?;
            std::fs::write(dir.join("calibration.toml"), &text)?;
            print!("{text}");
        }
        Command::Evaluate { model, data, tau, out } => {
            let ck = checkpoint::load(&model)?;
            let d = eval_data(&ck, data.as_deref(), Split::Test)?;
            let tau = tau.unwrap_or_else(|| ck.model.decision_threshold());
            let s = score(&ck.model, &d)?;
            let mut r = experiment::evaluate_g(&s, tau)?;
            r.target_coverage = ck.calibration.map(|c| c.target_coverage);
            let text = format!(
                "tau = {tau}\ncoverage = {}\nrisk = {}\ncovered = {}\nrejected = {}\n",
                r.coverage, r.risk, r.covered, r.rejected
            );
            print!("{text}");
            if let Some(o) = out {
                let dir = out_dir(Some(o), "evaluate")?;
                std::fs::write(dir.join("report.toml"), text)?;
            }
        }
        Command::Curve {
            model,
            data,
            calibration_data,
            coverages,
            score: kind,
            passes,
            rate,
            out,
        } => {
            let ck = checkpoint::load(&model)?;
            let test = eval_data(&ck, data.as_deref(), Split::Test)?;
            let cal = eval_data(&ck, calibration_data.as_deref(), Split::Calibration)?;
            let kind = match kind {
                Score::G => ScoreKind::G,
                Score::Sr => ScoreKind::Sr,
                Score::Mcdropout => ScoreKind::McDropout { passes },
            };
            let (run_seed, m) = (ck.run.as_ref().map_or(0, |r| r.seeds[0]), &ck.model);
            let ts = score(m, &test)?;
            let cs = score(m, &cal)?;
            let t_scores = confidence(m, &test, &ts, kind, rate, run_seed.wrapping_add(1))?;
            let c_scores = confidence(m, &cal, &cs, kind, rate, run_seed)?;
            let pts = risk_coverage_curve(Some(&c_scores), &t_scores, &ts.losses, ts.percent, &coverages)?;
            let se: Vec<f64> = pts
                .iter()
                .map(|p| risk_stderr(&ts.losses, &accept_mask(&t_scores, p.threshold), ts.percent))
                .collect();
            let dir = out_dir(out, "curve")?;
            report::write_curve(&dir.join("curve.csv"), &provenance_of(&ck)?, &pts, &se)?;
            println!("{}", dir.join("curve.csv").display());
        }
        Command::Grid {
            models,
            data,
            calibration_data,
            coverages,
            out,
        } => {
            let mut scored = Vec::with_capacity(models.len());
            let mut prov = None;
            let mut percent = false;
            for path in &models {
                let ck = checkpoint::load(path)?;
                let test = eval_data(&ck, data.as_deref(), Split::Test)?;
                let cal = eval_data(&ck, calibration_data.as_deref(), Split::Calibration)?;
                let ts = score(&ck.model, &test)?;
                let cs = score(&ck.model, &cal)?;
                percent = ts.percent;
                scored.push(ScoredModel {
                    trained_coverage: ck
                        .model
                        .trained_coverage()
                        .with_context(|| format!("{} has no training coverage", path.display()))?,
                    calibration_scores: experiment::selection(&cs)?.to_vec(),
                    test_scores: experiment::selection(&ts)?.to_vec(),
                    test_losses: ts.losses,
                });
                prov.get_or_insert(provenance_of(&ck)?);
            }
            let grid = evaluation::cross_calibration_grid(&scored, &coverages, percent)?;
            let dir = out_dir(out, "grid")?;
            report::write_grid(&dir.join("grid.csv"), &prov.unwrap_or_default(), &grid)?;
            println!("{}", dir.join("grid.csv").display());
        }
        Command::Compare {
            config,
            coverages,
            seeds,
            out,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if !seeds.is_empty() {
                cfg.seeds = seeds;
            }
            cfg.validate()?;
            let dir = out_dir(out.or_else(|| cfg.out_dir.clone()), "compare")?;
            let (rows, _) = experiment::compare(&cfg, &coverages, &cfg.seeds)?;
            let prov = report::provenance(&cfg.hash()?, &cfg.seeds);
            report::write_compare(&dir.join("compare.csv"), &prov, &rows)?;
            write_config(&dir, &cfg)?;
            println!("{}", dir.join("compare.csv").display());
        }
    }
    Ok(())
}

/// Standard error of the mean accepted loss, in the same units as the risk.
pub fn risk_stderr(losses: &[f64], accept: &[bool], percent: bool) -> f64 {
    let kept: Vec<f64> = losses.iter().zip(accept).filter(|(_, &a)| a).map(|(&l, _)| l).collect();
    let se = evaluation::summarize(&kept).map_or(0.0, |s| s.stderr);
    if percent {
        100.0 * se
    } else {
        se
    }
}
