use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use edgesense::baselines::PolicyKind;
use edgesense::config::{load_config, ExperimentConfig};
use edgesense::ddpg::{load_checkpoint, save_checkpoint};
use edgesense::env::write_trajectory_csv;
use edgesense::experiment::{
    run_bounds, run_eval, run_fig5, run_fig6, run_table1, run_trajectory, train_policy, write_csv, ManifestBuilder,
    PolicySpec, Setup, SummaryRow,
};
use edgesense::rng::derive_seed;
use edgesense::Result;

#[derive(Parser, Debug)]
#[command(name = "edgesense", version, about = "Sensing power control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// TOML configuration; omitted sections take reference values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Action interval for the configured window and target probability.
    Bounds(Common),
    /// Train the learned policy and save its actor.
    Train(Common),
    /// Evaluate one policy.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "oidm")]
        policy: PolicyKind,
        /// Actor checkpoint for the learned policy; trained on the spot when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also write the per-slot trajectory of the first run.
        #[arg(long)]
        trajectory: bool,
    },
    /// Observability probability over window lengths and power weights.
    Table1(Common),
    /// Cost of every policy over power weights.
    Fig5(Common),
    /// Action interval over window lengths and target probabilities.
    Fig6(Common),
}

fn load(common: &Common) -> Result<Setup> {
    let cfg = match &common.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    fs::create_dir_all(&common.out)?;
    Setup::new(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Bounds(c) => {
            let setup = load(&c)?;
            let mut man = ManifestBuilder::new(&c.out, "bounds", &setup.cfg, c.seed, None)?;
            let o = &setup.cfg.observability;
            let rows = run_bounds(&setup, o.window, o.p0)?;
            write_csv(man.path("bounds.csv"), &rows)?;
            man.record("bounds.csv");
            let all = rows.last().expect("combined row");
            println!("mu in [{}, {}] for p0 = {}, L = {}", all.mu_lo, all.mu_hi, o.p0, o.window);
            man.finish()?;
        }
        Command::Train(c) => {
            let setup = load(&c)?;
            let mut man = ManifestBuilder::new(&c.out, "train", &setup.cfg, c.seed, Some("oidm".into()))?;
            let o = &setup.cfg.observability;
            let bounds = setup.bounds(o.window, o.p0)?;
            write_csv(man.path("bounds.csv"), &run_bounds(&setup, o.window, o.p0)?)?;
            man.record("bounds.csv");
            let out = train_policy(&setup, setup.cfg.weights()?, bounds, &setup.cfg.training, derive_seed(c.seed, "train"))?;
            out.log.write_csv(fs::File::create(man.path("training_log.csv"))?)?;
            man.record("training_log.csv");
            save_checkpoint(man.path("actor.txt"), &out.actor)?;
            man.record("actor.txt");
            if let Some(last) = out.log.episodes.last() {
                println!("trained {} episodes, last mean cost {}", out.log.episodes.len(), last.mean_cost);
            }
            man.finish()?;
        }
        Command::Eval {
            common: c,
            policy,
            checkpoint,
            trajectory,
        } => {
            let setup = load(&c)?;
            let mut man = ManifestBuilder::new(&c.out, "eval", &setup.cfg, c.seed, Some(policy.to_string()))?;
            let o = &setup.cfg.observability;
            let bounds = setup.bounds(o.window, o.p0)?;
            let weights = setup.cfg.weights()?;
            let spec = match (policy, checkpoint) {
                (PolicyKind::Oidm, Some(p)) => PolicySpec::Learned(load_checkpoint(p)?),
                (PolicyKind::Oidm, None) => {
                    let out = train_policy(&setup, weights, bounds, &setup.cfg.training, derive_seed(c.seed, "train"))?;
                    out.log.write_csv(fs::File::create(man.path("training_log.csv"))?)?;
                    man.record("training_log.csv");
                    PolicySpec::Learned(out.actor)
                }
                (k, _) => PolicySpec::Baseline(k),
            };
            let e = &setup.cfg.evaluation;
            let s = run_eval(&setup, &spec, weights, bounds, e.repetitions, setup.cfg.horizon(), c.seed, true)?;
            let row = SummaryRow {
                policy: s.policy.clone(),
                beta: weights.beta,
                beta_ratio: weights.beta / weights.alpha,
                mu_lo: bounds.mu_lo,
                mu_hi: bounds.mu_hi,
                mean_cost: s.mean_cost,
                cost_stderr: s.cost_stderr,
                mean_accuracy: s.mean_accuracy,
                mean_power: s.mean_power,
                runs: s.runs.len(),
            };
            write_csv(man.path("summary.csv"), &[row])?;
            man.record("summary.csv");
            write_csv(man.path("runs.csv"), &s.runs)?;
            man.record("runs.csv");
            if trajectory {
                let env = setup.env(weights, bounds)?;
                let mut rows = Vec::new();
                let mut p = spec.instantiate(&setup, bounds, derive_seed(c.seed, "trajectory"), 0)?;
                run_trajectory(&setup, &env, p.as_mut(), setup.cfg.horizon(), derive_seed(c.seed, "eval/env"), 0, None, Some(&mut rows))?;
                write_trajectory_csv(&rows, fs::File::create(man.path("trajectory.csv"))?)?;
                man.record("trajectory.csv");
            }
            println!(
                "{}: mean cost {} (se {}), accuracy {}, power {}, observability {}",
                s.policy, s.mean_cost, s.cost_stderr, s.mean_accuracy, s.mean_power, s.observability
            );
            man.finish()?;
        }
        Command::Table1(c) => {
            let setup = load(&c)?;
            let mut man = ManifestBuilder::new(&c.out, "table1", &setup.cfg, c.seed, Some("oidm".into()))?;
            let sw = &setup.cfg.sweeps;
            let res = run_table1(&setup, &sw.table1_windows, &sw.table1_beta_ratios, c.seed)?;
            write_csv(man.path("table1.csv"), &res.rows)?;
            man.record("table1.csv");
            write_csv(man.path("training_log.csv"), &res.training)?;
            man.record("training_log.csv");
            for r in &res.rows {
                println!("L = {:>3}, beta = {:>6} alpha: {:.4}", r.window, r.beta_ratio, r.observability);
            }
            man.finish()?;
        }
        Command::Fig5(c) => {
            let setup = load(&c)?;
            let mut man = ManifestBuilder::new(&c.out, "fig5", &setup.cfg, c.seed, None)?;
            let res = run_fig5(&setup, &setup.cfg.sweeps.fig5_beta_ratios, c.seed)?;
            write_csv(man.path("summary.csv"), &res.rows)?;
            man.record("summary.csv");
            write_csv(man.path("training_log.csv"), &res.training)?;
            man.record("training_log.csv");
            for r in &res.rows {
                println!("beta = {:>6} alpha, {:>4}: {:.6}", r.beta_ratio, r.policy, r.mean_cost);
            }
            man.finish()?;
        }
        Command::Fig6(c) => {
            let setup = load(&c)?;
            let mut man = ManifestBuilder::new(&c.out, "fig6", &setup.cfg, c.seed, None)?;
            let sw = &setup.cfg.sweeps;
            let rows = run_fig6(&setup, &sw.fig6_windows, &sw.fig6_p0)?;
            write_csv(man.path("bounds.csv"), &rows)?;
            man.record("bounds.csv");
            man.finish()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
