//! `train`, `eval` and `metrics` commands.

pub mod config;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use platoon::eval::{compute_metrics, run_scenario, write_outputs, EvalOutcome, NoObserver, Trace};
use platoon::policy::checkpoint::{load_checkpoint, Checkpoint};
use platoon::trainer::{train, TrainConfig, TrainSummary, STATS_HEADER};

pub use config::{ConfigError, Manifest, Overrides, RunConfig};

pub const MANIFEST_NAME: &str = "manifest.json";

/// Resolves the config, writes the manifest, then trains. Stats rows go to stdout.
pub fn cmd_train(config_path: Option<&Path>, overrides: &Overrides, resume: Option<PathBuf>) -> Result<TrainSummary> {
    let cfg = RunConfig::resolve(config_path, overrides)?;
    cfg.validate_train()?;
    std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let manifest_path = cfg.out_dir.join(MANIFEST_NAME);
    Manifest::new("train", &cfg)
        .write(&manifest_path)
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    let tc = TrainConfig {
        seed: cfg.seed()?,
        ppo: cfg.ppo.clone(),
        env: cfg.env_config(),
        track: cfg.train_track()?,
        policy_shape: cfg.policy_shape(),
        config_hash: cfg.config_hash(),
        out_dir: cfg.out_dir.clone(),
        resume_from: resume,
        stop_after_updates: None,
    };
    println!("{STATS_HEADER}");
    let summary = train(&tc, |row| println!("{}", row.csv_line()))?;
    println!(
        "trained {} updates, {} steps; checkpoint {}",
        summary.updates,
        summary.global_step,
        summary.final_checkpoint.display()
    );
    Ok(summary)
}

/// Runs one scenario and writes traces and reports under the output directory.
pub fn cmd_eval(config_path: Option<&Path>, overrides: &Overrides) -> Result<EvalOutcome> {
    let cfg = RunConfig::resolve(config_path, overrides)?;
    let id = cfg
        .eval
        .scenario
        .ok_or_else(|| ConfigError::Invalid("a scenario is required (--scenario 1..5)".into()))?;
    let spec = cfg.scenario_spec(id)?;
    let settings = cfg.eval_settings()?;
    let ckpt_path = cfg.checkpoint()?;
    let ckpt: Checkpoint<f64> =
        load_checkpoint(ckpt_path).with_context(|| format!("loading {}", ckpt_path.display()))?;
    let mut outcome = run_scenario(&spec, &ckpt.params, &settings, &mut NoObserver)?;
    std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    Manifest::new("eval", &cfg).write(&cfg.out_dir.join(MANIFEST_NAME))?;
    write_outputs(&mut outcome, &cfg.out_dir)?;
    print!("{outcome}");
    Ok(outcome)
}

/// Recomputes the metrics of a trace file and prints them.
pub fn cmd_metrics(trace_path: &Path) -> Result<platoon::eval::TraceMetrics> {
    let text = std::fs::read_to_string(trace_path).with_context(|| format!("reading {}", trace_path.display()))?;
    let trace = Trace::parse_csv(&text).with_context(|| format!("parsing {}", trace_path.display()))?;
    let metrics = compute_metrics(&trace)?;
    println!("Trace {}", trace_path.display());
    print!("{metrics}");
    Ok(metrics)
}
