use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use magan_core::config::{ConfigMap, SimConfig, TrainConfig};
use magan_core::io;
use magan_core::pipeline;
use magan_core::sim;

#[derive(Parser)]
#[command(name = "magan", version, about = "Margin-adaptive energy-based GAN toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a GAN on a toy mixture or an IDX dataset.
    Train(Common),
    /// Run the idealized discrete simulation.
    Simulate(Common),
    /// Check the theory suite and idealized convergence; exits nonzero on failure.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random distribution pairs for the theory checks.
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
        /// Simulation trials per mode.
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Score generated samples (or ground truth) with a reference classifier.
    Score {
        #[command(flatten)]
        common: Common,
        /// CSV of samples; ground-truth draws when omitted.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Re-render plots from a saved trace.
    Plot {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Draw a fixed-margin reference line.
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// key = value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// magan or ebgan.
    #[arg(long)]
    mode: Option<String>,
    /// Fixed margin (ebgan) or initial margin (simulate).
    #[arg(long)]
    margin: Option<f64>,
    /// Extra config overrides, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_kv)]
    set: Vec<(String, String)>,
    #[arg(long)]
    trials: Option<usize>,
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl Common {
    /// Config file, then `--set`, then the dedicated flags.
    fn map(&self, margin_key: &str, trials_key: Option<&str>) -> Result<ConfigMap> {
        let mut flags = self.set.clone();
        if let Some(s) = self.seed {
            flags.push(("seed".into(), s.to_string()));
        }
        if let Some(m) = &self.mode {
            flags.push(("mode".into(), m.clone()));
        }
        if let Some(m) = self.margin {
            flags.push((margin_key.into(), m.to_string()));
        }
        if let (Some(t), Some(key)) = (self.trials, trials_key) {
            flags.push((key.into(), t.to_string()));
        }
        Ok(ConfigMap::merged(self.config.as_deref(), &flags)?)
    }

    fn train_config(&self) -> Result<TrainConfig> {
        TrainConfig::from_map(&self.map("margin", None)?).context("invalid training config")
    }
}

fn train(c: &Common) -> Result<()> {
    let cfg = c.train_config()?;
    let trials = c.trials.unwrap_or(1);
    if trials == 0 {
        bail!("--trials must be at least 1");
    }
    let artifacts = pipeline::run_train_trials(&cfg, trials, &c.out_dir)?;
    report_files(artifacts.all());
    Ok(())
}

fn simulate(c: &Common) -> Result<()> {
    let cfg = SimConfig::from_map(&c.map("m0", Some("trials"))?).context("invalid simulation config")?;
    let (artifacts, traces) = pipeline::run_simulate(&cfg, &c.out_dir)?;
    for (i, t) in traces.iter().enumerate() {
        println!(
            "trial {i}: {} after {} steps, final tv {:.3e}{}",
            if t.converged { "converged" } else { "not converged" },
            t.records.len(),
            t.final_tv(),
            if t.stalled { " (stalled)" } else { "" }
        );
    }
    report_files(artifacts.all());
    Ok(())
}

fn verify(seed: u64, pairs: usize, trials: usize) -> Result<bool> {
    let report = sim::verify(seed, pairs, trials)?;
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(report.passed())
}

fn score(c: &Common, samples: Option<&Path>) -> Result<()> {
    let cfg = c.train_config()?;
    let samples = samples
        .map(io::read_points)
        .transpose()
        .context("reading samples")?;
    let (artifacts, out) = pipeline::run_score(&cfg, samples.as_ref(), &c.out_dir)?;
    println!(
        "score {:.4} +/- {:.4} (collapsed baseline {:.4}, classifier held-out accuracy {:.3})",
        out.score.mean, out.score.std, out.collapsed.mean, out.classifier_accuracy
    );
    report_files(artifacts.all());
    Ok(())
}

fn report_files<'a>(paths: impl Iterator<Item = &'a PathBuf>) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(c) => train(&c)?,
        Command::Simulate(c) => simulate(&c)?,
        Command::Verify { seed, pairs, trials } => return verify(seed, pairs, trials),
        Command::Score { common, samples } => score(&common, samples.as_deref())?,
        Command::Plot {
            trace,
            samples,
            margin,
            out_dir,
        } => report_files(pipeline::run_plot(&trace, margin, samples.as_deref(), &out_dir)?.iter()),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
