//! Experiment protocols: bounds, training, evaluation and the sweep tables.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::baselines::{ConstantPolicy, PolicyKind, Psm, Rsm, Spm};
use crate::channel::{ChannelParams, ReceptionMatrix};
use crate::config::ExperimentConfig;
use crate::ddpg::{train, Actor, TrainConfig, TrainOutcome, TrainingLog};
use crate::dkf::Topology;
use crate::env::{CostWeights, Policy, SensingEnv, TrajectoryRow};
use crate::error::{Error, Result};
use crate::linsys::{jordanize, JordanForm, ObservabilityChecker};
use crate::obsbound::{action_bounds, contexts_for, solve_rate_for_target, ActionBounds, BoundKind};
use crate::rng::{derive_seed, stream};
use crate::config::Plant;

/// Everything derived once from a configuration.
#[derive(Debug, Clone)]
pub struct Setup {
    pub cfg: ExperimentConfig,
    pub plant: Plant,
    pub jordan: JordanForm,
    pub topo: Topology,
    pub channel: ChannelParams,
}

impl Setup {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let plant = cfg.plant()?;
        let jordan = jordanize(&plant.system)?;
        let topo = cfg.topology()?;
        let channel = cfg.channel(plant.system.sensor_count())?;
        Ok(Self {
            cfg,
            plant,
            jordan,
            topo,
            channel,
        })
    }

    pub fn bounds(&self, window: usize, p0: f64) -> Result<ActionBounds> {
        action_bounds(&contexts_for(&self.jordan, &self.topo, window)?, p0)
    }

    pub fn env(&self, weights: CostWeights, bounds: ActionBounds) -> Result<SensingEnv> {
        Ok(SensingEnv::new(
            self.plant.system.clone(),
            self.topo.clone(),
            self.channel.clone(),
            weights,
            self.plant.input.clone(),
        )?
        .with_bounds(bounds))
    }

    pub fn ecus(&self) -> usize {
        self.topo.ecu_count()
    }

    pub fn sensors(&self) -> usize {
        self.plant.system.sensor_count()
    }
}

/// Which policy to run; learned actors are carried by value.
#[derive(Debug, Clone)]
pub enum PolicySpec {
    Learned(Actor),
    Baseline(PolicyKind),
    Constant(f64),
}

impl PolicySpec {
    pub fn label(&self) -> String {
        match self {
            PolicySpec::Learned(_) => PolicyKind::Oidm.to_string(),
            PolicySpec::Baseline(k) => k.to_string(),
            PolicySpec::Constant(mu) => format!("constant({mu})"),
        }
    }

    pub fn instantiate(&self, setup: &Setup, bounds: ActionBounds, seed: u64, run: u64) -> Result<Box<dyn Policy>> {
        let (m, n) = (setup.ecus(), setup.sensors());
        Ok(match self {
            PolicySpec::Learned(a) => Box::new(a.clone()),
            PolicySpec::Baseline(PolicyKind::Spm) => Box::new(Spm::new(bounds, m, n)),
            PolicySpec::Baseline(PolicyKind::Rsm) => Box::new(Rsm::new(bounds, m, n, stream(seed, run))),
            PolicySpec::Baseline(PolicyKind::Psm) => {
                Box::new(Psm::new(bounds, m, n, setup.cfg.evaluation.psm_start_high))
            }
            PolicySpec::Baseline(PolicyKind::Oidm) => {
                return Err(Error::InvalidConfig("the learned policy needs a trained actor".into()))
            }
            PolicySpec::Constant(mu) => Box::new(ConstantPolicy {
                mu: *mu,
                ecus: m,
                sensors: n,
            }),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub run: usize,
    pub mean_cost: f64,
    pub mean_accuracy: f64,
    pub mean_power: f64,
    pub observability: f64,
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub policy: String,
    pub mean_cost: f64,
    pub cost_stderr: f64,
    pub mean_accuracy: f64,
    pub mean_power: f64,
    pub observability: f64,
    pub observability_stderr: f64,
    pub runs: Vec<RunResult>,
}

/// Fraction of (window, ECU) pairs that are observable over the windows of
/// `receptions`, disjoint or sliding.
pub fn posterior_observability(
    checker: &ObservabilityChecker,
    receptions: &[ReceptionMatrix],
    topo: &Topology,
    sliding: bool,
) -> f64 {
    let l = checker.window();
    if receptions.len() < l {
        return 0.0;
    }
    let step = if sliding { 1 } else { l };
    let starts: Vec<usize> = (0..=receptions.len() - l).step_by(step).collect();
    let mut hits = 0usize;
    for &s in &starts {
        for j in 0..topo.ecu_count() {
            hits += usize::from(checker.is_observable(&receptions[s..s + l], topo, j));
        }
    }
    hits as f64 / (starts.len() * topo.ecu_count()) as f64
}

/// One trajectory of `horizon` slots. The environment draws from stream `run`
/// of `env_seed`, so policies compared under one seed see common noise.
pub fn run_trajectory(
    setup: &Setup,
    env: &SensingEnv,
    policy: &mut dyn Policy,
    horizon: usize,
    env_seed: u64,
    run: usize,
    checker: Option<&ObservabilityChecker>,
    mut trajectory: Option<&mut Vec<TrajectoryRow>>,
) -> Result<RunResult> {
    let mut env = env.clone();
    let mut rng = stream(env_seed, run as u64);
    let mut state = env.reset(&mut rng);
    let (mut cost, mut acc, mut pow) = (0.0, 0.0, 0.0);
    let mut receptions = Vec::with_capacity(if checker.is_some() { horizon } else { 0 });
    let mut clamped = 0;
    for k in 0..horizon {
        let plan = policy.plan(&state)?;
        let out = env.step(&plan, &mut rng)?;
        cost += out.cost.total;
        acc += out.cost.accuracy;
        pow += out.cost.power;
        clamped += out.clamped;
        state = env.state();
        if let Some(rows) = trajectory.as_deref_mut() {
            rows.push(TrajectoryRow::new(k + 1, out.cost.total, &state, &plan, &out.receptions));
        }
        if checker.is_some() {
            receptions.push(out.receptions);
        }
    }
    let t = horizon as f64;
    let observability = checker.map_or(f64::NAN, |c| {
        posterior_observability(c, &receptions, &setup.topo, setup.cfg.evaluation.sliding_windows)
    });
    Ok(RunResult {
        run,
        mean_cost: cost / t,
        mean_accuracy: acc / t,
        mean_power: pow / t,
        observability,
        clamped,
    })
}

fn mean_and_stderr(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `repetitions` independent runs in parallel, reduced in run order.
pub fn run_eval(
    setup: &Setup,
    policy: &PolicySpec,
    weights: CostWeights,
    bounds: ActionBounds,
    repetitions: usize,
    horizon: usize,
    seed: u64,
    check_observability: bool,
) -> Result<EvalSummary> {
    if repetitions == 0 || horizon == 0 {
        return Err(Error::InvalidConfig("evaluation needs at least one run and one slot".into()));
    }
    let env = setup.env(weights, bounds)?;
    let checker = check_observability.then(|| ObservabilityChecker::new(&setup.jordan, setup.cfg.evaluation.check_window));
    let env_seed = derive_seed(seed, "eval/env");
    let policy_seed = derive_seed(seed, &format!("eval/policy/{}", policy.label()));
    let runs = (0..repetitions)
        .into_par_iter()
        .map(|r| {
            let mut p = policy.instantiate(setup, bounds, policy_seed, r as u64)?;
            run_trajectory(setup, &env, p.as_mut(), horizon, env_seed, r, checker.as_ref(), None)
        })
        .collect::<Result<Vec<_>>>()?;
    let (mean_cost, cost_stderr) = mean_and_stderr(runs.iter().map(|r| r.mean_cost));
    let (observability, observability_stderr) = mean_and_stderr(runs.iter().map(|r| r.observability));
    Ok(EvalSummary {
        policy: policy.label(),
        mean_cost,
        cost_stderr,
        mean_accuracy: runs.iter().map(|r| r.mean_accuracy).sum::<f64>() / repetitions as f64,
        mean_power: runs.iter().map(|r| r.mean_power).sum::<f64>() / repetitions as f64,
        observability,
        observability_stderr,
        runs,
    })
}

/// Trains a policy inside `bounds` with the configured training settings.
pub fn train_policy(setup: &Setup, weights: CostWeights, bounds: ActionBounds, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    let mut env = setup.env(weights, bounds)?;
    let cfg = TrainConfig { seed, ..cfg.clone() };
    let out = train(&mut env, bounds, &cfg)?;
    if env.clamp_count() != 0 {
        return Err(Error::InvalidParameter(format!(
            "{} training actions fell outside the action interval",
            env.clamp_count()
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsRow {
    pub window: usize,
    pub p0: f64,
    /// ECU index, or `all` for the combined interval.
    pub ecu: String,
    pub mu_lo: f64,
    pub mu_hi: f64,
    pub width: f64,
}

/// Per-ECU solutions and the combined interval at one `(window, p0)`.
pub fn run_bounds(setup: &Setup, window: usize, p0: f64) -> Result<Vec<BoundsRow>> {
    let ctxs = contexts_for(&setup.jordan, &setup.topo, window)?;
    let mut rows = Vec::new();
    for (j, ctx) in ctxs.iter().enumerate() {
        let hi = solve_rate_for_target(BoundKind::Lower, ctx, p0)?;
        let lo = solve_rate_for_target(BoundKind::Upper, ctx, p0)?;
        rows.push(BoundsRow {
            window,
            p0,
            ecu: j.to_string(),
            mu_lo: lo,
            mu_hi: hi,
            width: hi - lo,
        });
    }
    let b = action_bounds(&ctxs, p0)?;
    rows.push(BoundsRow {
        window,
        p0,
        ecu: "all".into(),
        mu_lo: b.mu_lo,
        mu_hi: b.mu_hi,
        width: b.width(),
    });
    Ok(rows)
}

/// Combined interval over the `(window, p0)` grid; unreachable targets give NaN rows.
pub fn run_fig6(setup: &Setup, windows: &[usize], p0s: &[f64]) -> Result<Vec<BoundsRow>> {
    let cells: Vec<(usize, f64)> = windows.iter().flat_map(|&l| p0s.iter().map(move |&p| (l, p))).collect();
    cells
        .par_iter()
        .map(|&(window, p0)| {
            let (mu_lo, mu_hi) = match setup.bounds(window, p0) {
                Ok(b) => (b.mu_lo, b.mu_hi),
                Err(Error::TargetUnreachable { .. }) | Err(Error::EmptyActionSpace { .. }) => (f64::NAN, f64::NAN),
                Err(e) => return Err(e),
            };
            Ok(BoundsRow {
                window,
                p0,
                ecu: "all".into(),
                mu_lo,
                mu_hi,
                width: mu_hi - mu_lo,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub policy: String,
    pub beta: f64,
    pub beta_ratio: f64,
    pub mu_lo: f64,
    pub mu_hi: f64,
    pub mean_cost: f64,
    pub cost_stderr: f64,
    pub mean_accuracy: f64,
    pub mean_power: f64,
    pub runs: usize,
}

impl SummaryRow {
    fn new(s: &EvalSummary, weights: CostWeights, ratio: f64, bounds: ActionBounds) -> Self {
        Self {
            policy: s.policy.clone(),
            beta: weights.beta,
            beta_ratio: ratio,
            mu_lo: bounds.mu_lo,
            mu_hi: bounds.mu_hi,
            mean_cost: s.mean_cost,
            cost_stderr: s.cost_stderr,
            mean_accuracy: s.mean_accuracy,
            mean_power: s.mean_power,
            runs: s.runs.len(),
        }
    }
}

/// Training log rows tagged with the sweep cell they belong to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaggedLogRow {
    pub window: usize,
    pub beta_ratio: f64,
    pub episode: usize,
    pub mean_cost: f64,
    pub mean_power: f64,
    pub mean_accuracy: f64,
    pub mean_action: f64,
    pub episode_return: f64,
    pub buffer_len: usize,
}

fn tag_log(log: &TrainingLog, window: usize, ratio: f64) -> Vec<TaggedLogRow> {
    log.episodes
        .iter()
        .map(|e| TaggedLogRow {
            window,
            beta_ratio: ratio,
            episode: e.episode,
            mean_cost: e.mean_cost,
            mean_power: e.mean_power,
            mean_accuracy: e.mean_accuracy,
            mean_action: e.mean_action,
            episode_return: e.episode_return,
            buffer_len: e.buffer_len,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Fig5Result {
    pub rows: Vec<SummaryRow>,
    pub training: Vec<TaggedLogRow>,
}

/// Every policy at every power weight; the learned policy is retrained per weight.
pub fn run_fig5(setup: &Setup, ratios: &[f64], seed: u64) -> Result<Fig5Result> {
    let cfg = &setup.cfg;
    let bounds = setup.bounds(cfg.observability.window, cfg.observability.p0)?;
    let cells = ratios
        .par_iter()
        .map(|&ratio| {
            let weights = cfg.weights_with_ratio(ratio)?;
            let trained = train_policy(setup, weights, bounds, &cfg.training, derive_seed(seed, &format!("train/{ratio}")))?;
            let mut rows = Vec::new();
            let specs = [
                PolicySpec::Learned(trained.actor.clone()),
                PolicySpec::Baseline(PolicyKind::Spm),
                PolicySpec::Baseline(PolicyKind::Rsm),
                PolicySpec::Baseline(PolicyKind::Psm),
            ];
            for spec in &specs {
                let s = run_eval(setup, spec, weights, bounds, cfg.evaluation.repetitions, cfg.horizon(), seed, false)?;
                rows.push(SummaryRow::new(&s, weights, ratio, bounds));
            }
            Ok((rows, tag_log(&trained.log, bounds.window, ratio)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Fig5Result {
        rows: Vec::new(),
        training: Vec::new(),
    };
    for (rows, log) in cells {
        out.rows.extend(rows);
        out.training.extend(log);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Row {
    pub window: usize,
    pub beta_ratio: f64,
    pub mu_lo: f64,
    pub mu_hi: f64,
    pub observability: f64,
    pub observability_stderr: f64,
    pub mean_cost: f64,
}

#[derive(Debug, Clone)]
pub struct Table1Result {
    pub rows: Vec<Table1Row>,
    pub training: Vec<TaggedLogRow>,
}

/// Posterior observability of the learned policy for each `(window, ratio)`.
pub fn run_table1(setup: &Setup, windows: &[usize], ratios: &[f64], seed: u64) -> Result<Table1Result> {
    let cfg = &setup.cfg;
    let cells: Vec<(usize, f64)> = windows.iter().flat_map(|&l| ratios.iter().map(move |&r| (l, r))).collect();
    let results = cells
        .par_iter()
        .map(|&(window, ratio)| {
            let bounds = setup.bounds(window, cfg.observability.p0)?;
            let weights = cfg.weights_with_ratio(ratio)?;
            let trained = train_policy(
                setup,
                weights,
                bounds,
                &cfg.training,
                derive_seed(seed, &format!("train/{window}/{ratio}")),
            )?;
            let s = run_eval(
                setup,
                &PolicySpec::Learned(trained.actor),
                weights,
                bounds,
                cfg.evaluation.repetitions,
                cfg.horizon(),
                seed,
                true,
            )?;
            let row = Table1Row {
                window,
                beta_ratio: ratio,
                mu_lo: bounds.mu_lo,
                mu_hi: bounds.mu_hi,
                observability: s.observability,
                observability_stderr: s.observability_stderr,
                mean_cost: s.mean_cost,
            };
            Ok((row, tag_log(&trained.log, window, ratio)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Table1Result {
        rows: Vec::new(),
        training: Vec::new(),
    };
    for (row, log) in results {
        out.rows.push(row);
        out.training.extend(log);
    }
    Ok(out)
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    Ok(sha256_hex(cfg.to_toml()?.as_bytes()))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestFile {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub policy: Option<String>,
    pub files: Vec<ManifestFile>,
    pub started_unix: u64,
    pub elapsed_seconds: f64,
}

/// Collects result files and metadata while a command runs.
#[derive(Debug)]
pub struct ManifestBuilder {
    out_dir: PathBuf,
    command: String,
    config_hash: String,
    seed: u64,
    policy: Option<String>,
    files: Vec<String>,
    started: Instant,
    started_unix: u64,
}

impl ManifestBuilder {
    pub fn new(out_dir: &Path, command: &str, cfg: &ExperimentConfig, seed: u64, policy: Option<String>) -> Result<Self> {
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            command: command.to_string(),
            config_hash: config_hash(cfg)?,
            seed,
            policy,
            files: Vec::new(),
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn record(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    /// Hashes recorded files and writes `manifest.json` through a temporary rename.
    pub fn finish(self) -> Result<RunManifest> {
        let files = self
            .files
            .iter()
            .map(|name| {
                let bytes = fs::read(self.out_dir.join(name))?;
                Ok(ManifestFile {
                    name: name.clone(),
                    sha256: sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.config_hash,
            seed: self.seed,
            policy: self.policy,
            files,
            started_unix: self.started_unix,
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
        };
        let tmp = self.out_dir.join("manifest.json.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
            f.write_all(text.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.out_dir.join("manifest.json"))?;
        Ok(manifest)
    }
}
