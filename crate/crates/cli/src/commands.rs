//! The five pipeline commands: simulate, train, evaluate, attack-demo,
//! and correct-stream. Every command is a pure function of (config,
//! seed); artifacts land in the configured output directory.

use crate::config::{ProfileConfig, RunConfig, SeedStream};
use crate::report::{self, EvalReport};
use anyhow::{bail, Context, Result};
use gridmend_core::attack::AttackSampler;
use gridmend_core::dataset::{
    self, load_dataset, load_manifest, save_dataset, save_manifest, DatasetManifest, DatasetSplit,
    Normalizer, WindowConfig,
};
use gridmend_core::grid::{ieee30, load_case, NetworkModel, StateVector};
use gridmend_core::neural::{self, load_model, save_model, DaeModel, TrainReport};
use gridmend_core::pipeline::Corrector;
use gridmend_core::powerflow::{
    self, synthetic_profile, LoadProfile, SyntheticProfileConfig, Trajectory,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

/// Well-known artifact locations inside the output directory.
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let dir = cfg.effective_output_dir();
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("cannot create output dir {}", dir.display()))?;
        Ok(Self { dir })
    }

    pub fn trajectory_csv(&self) -> PathBuf {
        self.dir.join("trajectory.csv")
    }
    pub fn dataset(&self) -> PathBuf {
        self.dir.join("dataset.gmwd")
    }
    pub fn manifest(&self) -> PathBuf {
        self.dir.join("dataset_manifest.json")
    }
    pub fn model(&self) -> PathBuf {
        self.dir.join("model.gmda")
    }
    pub fn train_report(&self) -> PathBuf {
        self.dir.join("train_report.csv")
    }
    pub fn eval_report(&self) -> PathBuf {
        self.dir.join("eval_report.json")
    }
    pub fn histogram(&self) -> PathBuf {
        self.dir.join("histogram.csv")
    }
    pub fn predictions(&self) -> PathBuf {
        self.dir.join("predictions.csv")
    }
    pub fn attack_demo(&self) -> PathBuf {
        self.dir.join("attack_demo.csv")
    }
}

pub fn load_network(cfg: &RunConfig) -> Result<NetworkModel> {
    match &cfg.case_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read case file {}", path.display()))?;
            Ok(load_case(&text)?)
        }
        None => Ok(ieee30()),
    }
}

fn load_profile(cfg: &RunConfig) -> Result<LoadProfile> {
    match &cfg.profile {
        ProfileConfig::Synthetic { hours } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.stream_seed(SeedStream::Profile));
            Ok(synthetic_profile(
                &SyntheticProfileConfig {
                    hours: *hours,
                    ..Default::default()
                },
                &mut rng,
            ))
        }
        ProfileConfig::Csv { path } => {
            let file = std::fs::File::open(path)
                .with_context(|| format!("cannot open load CSV {}", path.display()))?;
            Ok(LoadProfile::from_csv(file)?)
        }
    }
}

fn attack_sampler(cfg: &RunConfig, model: &NetworkModel) -> AttackSampler {
    AttackSampler {
        mode: cfg.attack.mode,
        n_states: model.n_states(),
        slack_theta_index: model.slack_index(),
        magnitude: cfg.attack.magnitude,
        min_magnitude: cfg.attack.min_magnitude,
        targets: cfg.attack.targets.clone(),
    }
}

fn window_config(cfg: &RunConfig) -> WindowConfig {
    WindowConfig {
        w: cfg.window.w,
        stride: cfg.window.stride,
        awgn_sigma: cfg.window.awgn_sigma,
        audit_fraction: cfg.window.audit_fraction,
        bdd_alpha: cfg.window.bdd_alpha,
        max_attempts: cfg.window.max_attempts,
    }
}

#[derive(Debug)]
pub struct SimulateSummary {
    pub hours_solved: usize,
    pub hours_failed: usize,
    pub counts: (usize, usize, usize),
    pub skipped_windows: usize,
}

/// Solves the hourly trajectory, builds attacked windows, splits them,
/// and persists trajectory CSV, dataset container, and manifest.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulateSummary> {
    let artifacts = Artifacts::new(cfg)?;
    let network = load_network(cfg)?;
    let profile = load_profile(cfg)?;

    let mut scen_rng = ChaCha8Rng::seed_from_u64(cfg.stream_seed(SeedStream::Scenarios));
    let scenarios =
        powerflow::scenarios_from_profile(&profile, network.n_bus(), cfg.load_jitter, &mut scen_rng)?;
    let traj = powerflow::trajectory(&network, &scenarios, cfg.pf_tol, cfg.pf_max_iter)?;
    if traj.failures.len() * 10 > scenarios.len() {
        bail!(
            "{} of {} scenarios infeasible; first failures: {:?}",
            traj.failures.len(),
            scenarios.len(),
            &traj.failures[..traj.failures.len().min(5)]
        );
    }
    write_trajectory_csv(&artifacts.trajectory_csv(), &traj)?;

    let sampler = attack_sampler(cfg, &network);
    let wcfg = window_config(cfg);
    let mut win_rng = ChaCha8Rng::seed_from_u64(cfg.stream_seed(SeedStream::Windows));
    let (mut samples, skipped) = dataset::windows_from_trajectory(
        &network,
        &traj,
        &sampler,
        &cfg.noise,
        &wcfg,
        &mut win_rng,
    )?;
    if cfg.sample_count > 0 && samples.len() > cfg.sample_count {
        samples.truncate(cfg.sample_count);
    } else if cfg.sample_count > 0 && samples.len() < cfg.sample_count {
        eprintln!(
            "note: only {} windows available of {} requested",
            samples.len(),
            cfg.sample_count
        );
    }
    let split = dataset::split(samples, cfg.fractions, cfg.boundary_mode)?;
    let counts = (split.train.len(), split.val.len(), split.test.len());
    save_dataset(&artifacts.dataset(), &split)?;
    save_manifest(
        &artifacts.manifest(),
        &DatasetManifest {
            seed: cfg.seed,
            w: cfg.window.w,
            n_states: network.n_states(),
            awgn_sigma: cfg.window.awgn_sigma,
            counts,
            fractions: cfg.fractions,
            input_shape: (cfg.window.w, network.n_states()),
            attack: serde_json::to_value(&cfg.attack)?,
            skipped_hours: skipped.clone(),
        },
    )?;
    Ok(SimulateSummary {
        hours_solved: traj.states.len(),
        hours_failed: traj.failures.len(),
        counts,
        skipped_windows: skipped.len(),
    })
}

fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n = traj.states.first().map(StateVector::n_bus).unwrap_or(0);
    write!(file, "hour")?;
    for i in 0..n {
        write!(file, ",theta_{i}")?;
    }
    for i in 0..n {
        write!(file, ",v_{i}")?;
    }
    writeln!(file)?;
    for (hour, state) in traj.hours.iter().zip(&traj.states) {
        write!(file, "{hour}")?;
        for t in &state.theta {
            write!(file, ",{t:.17e}")?;
        }
        for v in &state.v {
            write!(file, ",{v:.17e}")?;
        }
        writeln!(file)?;
    }
    Ok(())
}

#[derive(Debug)]
pub struct TrainSummary {
    pub report: TrainReport,
    pub first_epoch: usize,
}

/// Trains (or resumes) the autoencoder on the persisted dataset; saves
/// the best-validation checkpoint and the epoch report CSV.
pub fn cmd_train(cfg: &RunConfig, resume: bool) -> Result<TrainSummary> {
    let artifacts = Artifacts::new(cfg)?;
    let split = load_dataset(&artifacts.dataset())
        .with_context(|| format!("dataset missing at {}; run simulate first", artifacts.dataset().display()))?;

    let (mut model, first_epoch) = if resume {
        let model = load_model(&artifacts.model()).context("resume requested but no checkpoint")?;
        let last = last_reported_epoch(&artifacts.train_report())?;
        (model, last + 1)
    } else {
        let normalizer = Normalizer::fit(&split.train)?;
        let model = DaeModel::new(
            split.w(),
            split.n_states(),
            cfg.model.sizes,
            cfg.model.activation,
            normalizer,
            cfg.stream_seed(SeedStream::Training),
        );
        (model, 1)
    };

    let report = neural::train(&mut model, &split, &cfg.train_config())?;
    save_model(&artifacts.model(), &model)?;
    write_train_report(&artifacts.train_report(), &report, first_epoch, resume)?;
    Ok(TrainSummary {
        report,
        first_epoch,
    })
}

fn last_reported_epoch(path: &Path) -> Result<usize> {
    let text = std::fs::read_to_string(path).unwrap_or_default();
    Ok(text
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').next()?.parse::<usize>().ok())
        .max()
        .unwrap_or(0))
}

fn write_train_report(path: &Path, report: &TrainReport, first_epoch: usize, append: bool) -> Result<()> {
    let mut file = if append && path.exists() {
        std::fs::OpenOptions::new().append(true).open(path)?
    } else {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "epoch,train_rmse,val_rmse")?;
        f
    };
    for stats in &report.epochs {
        writeln!(
            file,
            "{},{:.17e},{:.17e}",
            stats.epoch + first_epoch - 1,
            stats.train_rmse,
            stats.val_rmse
        )?;
    }
    Ok(())
}

/// Evaluates the trained model on the test split and writes the report
/// JSON, histogram CSV, and (optionally) the per-element prediction dump.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvalReport> {
    let artifacts = Artifacts::new(cfg)?;
    let split = load_dataset(&artifacts.dataset()).context("dataset missing; run simulate")?;
    let model = load_model(&artifacts.model()).context("model missing; run train")?;
    if model.n_states() != split.n_states() || model.w != split.w() {
        bail!(
            "model ({} states, w={}) does not match dataset ({} states, w={})",
            model.n_states(),
            model.w,
            split.n_states(),
            split.w()
        );
    }
    let rows = report::predict(&model, &split.test)?;
    let eval = report::evaluate(&rows, model.n_states(), &cfg.thresholds, &cfg.histogram)?;
    report::write_report_json(&artifacts.eval_report(), &eval)?;
    report::write_histogram_csv(&artifacts.histogram(), &eval)?;
    if cfg.dump_predictions {
        report::write_predictions_csv(&artifacts.predictions(), &rows)?;
    }
    Ok(eval)
}

/// Picks a test window, prints a normal/attacked/corrected table for the
/// attacked coordinates, and writes the full per-state CSV.
pub fn cmd_attack_demo(cfg: &RunConfig, window_index: Option<usize>, out: &mut dyn Write) -> Result<()> {
    let artifacts = Artifacts::new(cfg)?;
    let split = load_dataset(&artifacts.dataset()).context("dataset missing; run simulate")?;
    let model = load_model(&artifacts.model()).context("model missing; run train")?;
    let idx = window_index.unwrap_or(0);
    let sample = split
        .test
        .get(idx)
        .with_context(|| format!("test window {idx} out of range ({})", split.test.len()))?;

    let w = model.w;
    let rows: Vec<Vec<f64>> = (0..w).map(|t| sample.input_row(t).to_vec()).collect();
    let corrected = model.correct_window(&rows)?;
    let normal = sample.target_row(w - 1);
    let attacked = sample.input_row(w - 1);

    let mut csv = std::fs::File::create(artifacts.attack_demo())?;
    writeln!(csv, "state_index,normal,attacked,corrected")?;
    for k in 0..model.n_states() {
        writeln!(
            csv,
            "{},{:.17e},{:.17e},{:.17e}",
            k, normal[k], attacked[k], corrected[k]
        )?;
    }

    writeln!(out, "test window {idx} (source hour {}):", sample.meta)?;
    writeln!(out, "{:>6} {:>14} {:>14} {:>14} {:>9}", "state", "normal", "attacked", "corrected", "hit")?;
    for k in 0..model.n_states() {
        if sample.attack_mask[k] || (attacked[k] - corrected[k]).abs() > 1e-4 {
            writeln!(
                out,
                "{:>6} {:>14.6} {:>14.6} {:>14.6} {:>9}",
                k,
                normal[k],
                attacked[k],
                corrected[k],
                if sample.attack_mask[k] { "attacked" } else { "" }
            )?;
        }
    }
    Ok(())
}

/// Streaming correction: JSON-lines state vectors on stdin, outcomes on
/// stdout. The first w-1 lines are trusted warm-up context.
pub fn cmd_correct_stream(
    cfg: &RunConfig,
    input: &mut dyn BufRead,
    output: &mut dyn Write,
) -> Result<()> {
    let artifacts = Artifacts::new(cfg)?;
    let model = load_model(&artifacts.model()).context("model missing; run train")?;
    let network = load_network(cfg)?;
    let mut corrector = Corrector::new(model, cfg.thresholds, network.slack_index());
    let warmup_needed = corrector.queue.capacity();

    let mut timestep = 0usize;
    let mut warmup: Vec<StateVector> = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let state: StateVector =
            serde_json::from_str(&line).with_context(|| format!("bad state on line {timestep}"))?;
        if warmup.len() < warmup_needed {
            warmup.push(state);
            if warmup.len() == warmup_needed {
                corrector.warm_up(&warmup)?;
            }
            timestep += 1;
            continue;
        }
        let outcome = corrector.correct(&state)?;
        let record = serde_json::json!({
            "timestep": timestep,
            "corrected": outcome.corrected,
            "flagged": outcome.flagged,
            "deltas": outcome.deltas,
        });
        writeln!(output, "{record}")?;
        timestep += 1;
    }
    Ok(())
}

/// Loads the manifest written by `simulate`; exposed for report checks.
pub fn read_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    let artifacts = Artifacts::new(cfg)?;
    Ok(load_manifest(&artifacts.manifest())?)
}

/// Loads the persisted dataset; exposed for downstream tooling.
pub fn read_dataset(cfg: &RunConfig) -> Result<DatasetSplit> {
    let artifacts = Artifacts::new(cfg)?;
    Ok(load_dataset(&artifacts.dataset())?)
}
