//! Whole runs: build inputs from config, execute, write every artifact
//! under one output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use serde_json::json;
use thiserror::Error;

use crate::config::{SimConfig, TrainConfig};
use crate::data::{make_dataset, DataError, Dataset};
use crate::gan::{train, GanError, RunTrace, TrainOutcome};
use crate::io::{self, IoError, Series};
use crate::metrics::{self, MetricsError, ScoreReport};
use crate::rng::{Rng, Stream};
use crate::sim::{self, SimError, SimTrace};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("trial thread panicked")]
    Panic,
}

/// Files written by a run. Every path exists once the run returns `Ok`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunArtifacts {
    pub config: PathBuf,
    pub traces: Vec<PathBuf>,
    pub metrics: Vec<PathBuf>,
    pub plots: Vec<PathBuf>,
    pub samples: Vec<PathBuf>,
}

impl RunArtifacts {
    pub fn all(&self) -> impl Iterator<Item = &PathBuf> {
        std::iter::once(&self.config)
            .chain(&self.traces)
            .chain(&self.metrics)
            .chain(&self.plots)
            .chain(&self.samples)
    }

    fn extend(&mut self, other: RunArtifacts) {
        self.traces.extend(other.traces);
        self.metrics.extend(other.metrics);
        self.plots.extend(other.plots);
        self.samples.extend(other.samples);
    }
}

fn ensure_dir(dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|e| IoError::Io {
        path: dir.display().to_string(),
        reason: e.to_string(),
    })
}

/// The configured dataset: a named generator, or the first `n` images of
/// an `idx:<path>` file.
pub fn load_dataset(config: &TrainConfig) -> Result<Dataset, PipelineError> {
    match config.dataset.strip_prefix("idx:") {
        Some(path) => {
            let ds = io::read_idx(Path::new(path))?;
            if ds.len() <= config.n {
                return Ok(ds);
            }
            let head = ds.flat()[..config.n * ds.dim()].to_vec();
            Ok(Dataset::new(ds.id.clone(), ds.dim(), head)?)
        }
        None => Ok(make_dataset(&config.dataset, config.n, config.sigma, config.seed)?),
    }
}

fn rows_2d(t: &Tensor) -> Vec<(f64, f64)> {
    t.rows().filter(|r| r.len() >= 2).map(|r| (r[0], r[1])).collect()
}

/// Trains once and writes `config.txt`, `trace.csv`, `metrics.jsonl`,
/// `samples.csv`, `energies.svg` and, for 2-D data, `samples.svg`.
pub fn run_train(config: &TrainConfig, out_dir: &Path) -> Result<(RunArtifacts, TrainOutcome), PipelineError> {
    ensure_dir(out_dir)?;
    let data = load_dataset(config)?;
    let mut outcome = train(config.clone(), data)?;
    let trainer = &mut outcome.trainer;

    let config_path = out_dir.join("config.txt");
    io::write_text(&config_path, &config.to_text())?;
    let trace_path = out_dir.join("trace.csv");
    io::write_trace(&outcome.trace, &trace_path)?;

    let n_samples = metrics::SCORE_BATCHES * metrics::SCORE_BATCH_SIZE;
    let samples = trainer.sample(n_samples)?;
    let samples_path = out_dir.join("samples.csv");
    io::write_points(&samples, &samples_path)?;

    let final_coverage = trainer.coverage()?;
    let mut lines: Vec<serde_json::Value> = outcome
        .trace
        .records
        .iter()
        .map(|r| {
            json!({
                "kind": "epoch",
                "epoch": r.epoch,
                "margin": r.margin,
                "e_real": r.e_real,
                "e_fake": r.e_fake,
                "margin_updated": r.margin_updated,
                "covered": r.coverage.as_ref().map(|h| h.covered),
            })
        })
        .collect();
    let last = outcome.trace.records.last();
    lines.push(json!({
        "kind": "summary",
        "mode": config.mode,
        "seed": config.seed,
        "epochs": outcome.trace.len(),
        "initial_margin": outcome.initial_margin,
        "final_margin": trainer.state.margin,
        "margin_updates": outcome.trace.records.iter().filter(|r| r.margin_updated).count(),
        "final_e_real": last.map(|r| r.e_real),
        "final_e_fake": last.map(|r| r.e_fake),
        "covered": final_coverage.as_ref().map(|h| h.covered),
        "modes": final_coverage.as_ref().map(|h| h.modes()),
        "assigned_fraction": final_coverage.as_ref().map(|h| h.assigned_fraction()),
        "energy_correlation": pearson(&outcome.trace.e_real(), &outcome.trace.e_fake()),
    }));
    let metrics_path = out_dir.join("metrics.jsonl");
    io::write_metrics(&lines, &metrics_path)?;

    let mut plots = Vec::new();
    if !outcome.trace.is_empty() {
        let fixed = (!trainer.policy().adapts_margin()).then_some(outcome.initial_margin);
        let (series, hlines) = io::trace_curves(&outcome.trace, fixed);
        let p = out_dir.join("energies.svg");
        io::write_text(&p, &io::render_curves("energies per epoch", &series, &hlines)?)?;
        plots.push(p);
    }
    if trainer.data.dim() == 2 {
        let real = trainer.data.to_tensor()?;
        let p = out_dir.join("samples.svg");
        let svg = io::render_scatter(
            "real vs generated",
            &[
                Series::new("real", "#1f77b4", rows_2d(&real)),
                Series::new("generated", "#d62728", rows_2d(&samples)),
            ],
        )?;
        io::write_text(&p, &svg)?;
        plots.push(p);
    }

    let artifacts = RunArtifacts {
        config: config_path,
        traces: vec![trace_path],
        metrics: vec![metrics_path],
        plots,
        samples: vec![samples_path],
    };
    Ok((artifacts, outcome))
}

/// Runs `trials` seeds (`seed`, `seed + 1`, ...) concurrently, each in
/// `out_dir/seed-<s>`. Results come back in seed order.
pub fn run_train_trials(config: &TrainConfig, trials: usize, out_dir: &Path) -> Result<RunArtifacts, PipelineError> {
    if trials <= 1 {
        return Ok(run_train(config, out_dir)?.0);
    }
    ensure_dir(out_dir)?;
    let results: Vec<Result<RunArtifacts, PipelineError>> = thread::scope(|s| {
        let handles: Vec<_> = (0..trials)
            .map(|i| {
                let cfg = TrainConfig {
                    seed: config.seed.wrapping_add(i as u64),
                    ..config.clone()
                };
                let dir = out_dir.join(format!("seed-{}", cfg.seed));
                s.spawn(move || run_train(&cfg, &dir).map(|(a, _)| a))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or(Err(PipelineError::Panic)))
            .collect()
    });
    let config_path = out_dir.join("config.txt");
    io::write_text(&config_path, &config.to_text())?;
    let mut all = RunArtifacts {
        config: config_path,
        ..RunArtifacts::default()
    };
    for r in results {
        all.extend(r?);
    }
    Ok(all)
}

/// Runs every sim trial and writes one CSV trace each, a `tv.svg` plot of
/// the first trial, and a JSON-lines summary.
pub fn run_simulate(config: &SimConfig, out_dir: &Path) -> Result<(RunArtifacts, Vec<SimTrace>), PipelineError> {
    ensure_dir(out_dir)?;
    let traces: Vec<Result<SimTrace, SimError>> = thread::scope(|s| {
        let handles: Vec<_> = (0..config.trials)
            .map(|t| s.spawn(move || sim::simulate_trial(config, t)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(SimError::Policy("trial panicked".into()))))
            .collect()
    });
    let traces = traces.into_iter().collect::<Result<Vec<_>, _>>()?;

    let config_path = out_dir.join("config.txt");
    io::write_text(&config_path, &sim_config_text(config))?;
    let mut artifacts = RunArtifacts {
        config: config_path,
        ..RunArtifacts::default()
    };
    let mut lines = Vec::new();
    for (t, trace) in traces.iter().enumerate() {
        let p = if config.trials == 1 {
            out_dir.join("sim_trace.csv")
        } else {
            out_dir.join(format!("sim_trace-{t}.csv"))
        };
        io::write_sim_trace(trace, &p)?;
        artifacts.traces.push(p);
        let (lo, hi) = trace.step_range().unwrap_or((0.0, 0.0));
        lines.push(json!({
            "trial": t,
            "steps": trace.records.len().saturating_sub(1),
            "converged": trace.converged,
            "stalled": trace.stalled,
            "final_tv": trace.final_tv(),
            "final_margin": trace.records.last().map(|r| r.margin),
            "margin_updates": trace.records.iter().filter(|r| r.margin_updated).count(),
            "min_step": lo,
            "max_step": hi,
        }));
    }
    let metrics_path = out_dir.join("sim_summary.jsonl");
    io::write_metrics(&lines, &metrics_path)?;
    artifacts.metrics.push(metrics_path);

    if let Some(first) = traces.first() {
        let pts = |f: fn(&sim::SimRecord) -> f64| -> Vec<(f64, f64)> {
            first.records.iter().map(|r| (r.step as f64, f(r))).collect()
        };
        let svg = io::render_curves(
            "exact dynamics, trial 0",
            &[
                Series::new("TV", "#9467bd", pts(|r| r.tv)),
                Series::new("margin", "#2ca02c", pts(|r| r.margin)),
                Series::new("E_G", "#d62728", pts(|r| r.e_g)),
                Series::new("E_data", "#1f77b4", pts(|r| r.e_data)),
            ],
            &[],
        )?;
        let p = out_dir.join("tv.svg");
        io::write_text(&p, &svg)?;
        artifacts.plots.push(p);
    }
    Ok((artifacts, traces))
}

fn sim_config_text(c: &SimConfig) -> String {
    let mut s = format!(
        "mode = {}\nk = {}\neta = {}\nmax_steps = {}\ntol = {}\nm0 = {}\nseed = {}\ntrials = {}\n",
        c.mode, c.k, c.eta, c.max_steps, c.tol, c.m0, c.seed, c.trials
    );
    if let Some(rule) = c.step_rule {
        s.push_str(match rule {
            crate::config::StepRule::Fixed => "step_rule = fixed\n",
            crate::config::StepRule::Descent => "step_rule = descent\n",
        });
    }
    s
}

/// `n` draws from the single mode `mode` of a mixture, with the mixture's
/// spread: a maximally collapsed sampler.
pub fn collapsed_samples(data_id: &str, mode: usize, n: usize, sigma: f64, seed: u64) -> Result<Tensor, PipelineError> {
    let gen = crate::data::generator(data_id)?;
    let centers = gen.centers().ok_or(DataError::Empty)?;
    let c = &centers[mode % centers.len()];
    let mut rng = Rng::for_stream(seed, Stream::Eval);
    let mut rows = Vec::with_capacity(n * c.len());
    for _ in 0..n {
        rows.extend(c.iter().map(|v| v + sigma * rng.normal()));
    }
    Ok(Tensor::matrix(n, c.len(), rows)?)
}

/// Splits rows into `batches` equal batches, dropping any remainder.
pub fn split_batches(samples: &Tensor, batches: usize) -> Result<Vec<Tensor>, PipelineError> {
    let n = samples.shape()[0];
    let per = n / batches.max(1);
    if per == 0 {
        return Err(MetricsError::TooFew {
            what: "samples",
            need: batches,
            got: n,
        }
        .into());
    }
    let dim = samples.shape()[1];
    (0..batches)
        .map(|b| Ok(Tensor::matrix(per, dim, samples.data()[b * per * dim..(b + 1) * per * dim].to_vec())?))
        .collect()
}

/// Score of `samples` (or of fresh ground-truth draws) under a reference
/// classifier trained on the configured dataset, plus a collapsed-sampler
/// baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreOutcome {
    pub score: ScoreReport,
    pub collapsed: ScoreReport,
    pub classifier_accuracy: f64,
}

pub fn run_score(config: &TrainConfig, samples: Option<&Tensor>, out_dir: &Path) -> Result<(RunArtifacts, ScoreOutcome), PipelineError> {
    ensure_dir(out_dir)?;
    let n = metrics::SCORE_BATCHES * metrics::SCORE_BATCH_SIZE;
    let labeled = make_dataset(&config.dataset, 4000, config.sigma, config.seed)?;
    let clf = metrics::train_reference_classifier(&labeled, config.seed)?;
    let fresh;
    let samples = match samples {
        Some(s) => s,
        None => {
            let gen = crate::data::generator(&config.dataset)?;
            let mut rng = Rng::for_stream(config.seed, Stream::Eval);
            fresh = gen.sample(n, config.sigma, &mut rng)?.to_tensor()?;
            &fresh
        }
    };
    let score = metrics::inception_style_score(&clf, &split_batches(samples, metrics::SCORE_BATCHES)?)?;
    let collapsed = collapsed_samples(&config.dataset, 0, n, config.sigma, config.seed)?;
    let collapsed = metrics::inception_style_score(&clf, &split_batches(&collapsed, metrics::SCORE_BATCHES)?)?;
    let outcome = ScoreOutcome {
        score,
        collapsed,
        classifier_accuracy: clf.heldout_accuracy,
    };

    let config_path = out_dir.join("config.txt");
    io::write_text(&config_path, &config.to_text())?;
    let metrics_path = out_dir.join("score.jsonl");
    io::write_metrics(
        &[json!({
            "dataset": config.dataset,
            "seed": config.seed,
            "score_mean": outcome.score.mean,
            "score_std": outcome.score.std,
            "batches": outcome.score.batches,
            "batch_size": outcome.score.batch_size,
            "collapsed_score_mean": outcome.collapsed.mean,
            "classifier_accuracy": outcome.classifier_accuracy,
        })],
        &metrics_path,
    )?;
    let artifacts = RunArtifacts {
        config: config_path,
        metrics: vec![metrics_path],
        ..RunArtifacts::default()
    };
    Ok((artifacts, outcome))
}

/// Re-renders the energy plot of a saved trace, and a scatter of saved
/// samples when given.
pub fn run_plot(
    trace_path: &Path,
    fixed_margin: Option<f64>,
    samples_path: Option<&Path>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    ensure_dir(out_dir)?;
    let trace: RunTrace = io::read_trace(trace_path)?;
    let (series, hlines) = io::trace_curves(&trace, fixed_margin);
    let mut plots = Vec::new();
    let p = out_dir.join("energies.svg");
    io::write_text(&p, &io::render_curves("energies per epoch", &series, &hlines)?)?;
    plots.push(p);
    if let Some(sp) = samples_path {
        let samples = io::read_points(sp)?;
        let p = out_dir.join("samples.svg");
        let svg = io::render_scatter("generated", &[Series::new("generated", "#d62728", rows_2d(&samples))])?;
        io::write_text(&p, &svg)?;
        plots.push(p);
    }
    Ok(plots)
}

/// Pearson correlation; `None` when either side is constant or shorter
/// than two.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let (a, b) = (&a[..n], &b[..n]);
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny() -> TrainConfig {
        TrainConfig {
            n: 256,
            batch_size: 32,
            t_max: 2,
            hidden: 8,
            eval_every: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0], &[0.0, 1.0]), None);
    }

    #[test]
    fn train_writes_every_artifact() {
        let dir = tempdir().unwrap();
        let (art, out) = run_train(&tiny(), dir.path()).unwrap();
        assert!(art.all().all(|p| p.exists() && p.starts_with(dir.path())));
        assert_eq!(out.trace.len(), 2);
        assert!(out.trace.records.iter().all(|r| r.coverage.is_some()));
        assert_eq!(art.plots.len(), 2);
    }

    #[test]
    fn trials_fan_out_by_seed() {
        let dir = tempdir().unwrap();
        let art = run_train_trials(&tiny(), 2, dir.path()).unwrap();
        assert!(dir.path().join("seed-0/trace.csv").exists());
        assert!(dir.path().join("seed-1/trace.csv").exists());
        assert_eq!(art.traces.len(), 2);
        let a = fs::read(dir.path().join("seed-0/trace.csv")).unwrap();
        let b = fs::read(dir.path().join("seed-1/trace.csv")).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn simulate_writes_trace_per_trial() {
        let dir = tempdir().unwrap();
        let cfg = SimConfig {
            trials: 3,
            max_steps: 500,
            ..SimConfig::default()
        };
        let (art, traces) = run_simulate(&cfg, dir.path()).unwrap();
        assert_eq!(art.traces.len(), 3);
        assert_eq!(traces.len(), 3);
        assert!(art.all().all(|p| p.exists()));
    }

    #[test]
    fn batches_split_evenly() {
        let t = Tensor::matrix(5, 2, (0..10).map(f64::from).collect()).unwrap();
        let b = split_batches(&t, 2).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[1].data(), &[4.0, 5.0, 6.0, 7.0]);
    }
}
