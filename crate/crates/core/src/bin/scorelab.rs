//! Command-line front end: parse an experiment file, dispatch the requested
//! experiment, and write CSV/JSON artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scorelab::config::{ExperimentConfig, ExperimentKind, ResolvedExperiment};
use scorelab::presets::PRESET_NAMES;
use scorelab::runner::{
    anneal_comparison, edit_experiment, gradient_norm_experiment, omega_sweep, run, RunResult,
};
use scorelab::Error;

#[derive(Parser)]
#[command(name = "scorelab", version, about = "Score-distillation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Path to the experiment JSON file.
    config: PathBuf,
    /// Override the seed from the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the step count from the file.
    #[arg(long)]
    steps: Option<usize>,
    /// Override the output directory from the file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a single optimization run.
    Run(ConfigArgs),
    /// Execute one run per guidance weight with identical seeds.
    Sweep(ConfigArgs),
    /// Compare a fixed negative-prompt weight against a linear decay to zero.
    Anneal(ConfigArgs),
    /// Continue from a source configuration under the editing rule.
    Edit(ConfigArgs),
    /// Run SDS while tracking its per-component gradient norms.
    Gradnorm(ConfigArgs),
    /// Parse and statically check a config without executing it.
    Validate(ConfigArgs),
    /// List the built-in world presets.
    Presets,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Presets => {
            for name in PRESET_NAMES {
                println!("{name}");
            }
            return ExitCode::SUCCESS;
        }
        Command::Validate(args) => load(args).map(|(cfg, resolved)| {
            println!(
                "ok: {} experiment on {} prompts, {} steps",
                resolved.kind.name(),
                resolved.base.world.prompts().len(),
                resolved.base.steps
            );
            drop(cfg);
        }),
        Command::Run(args)
        | Command::Sweep(args)
        | Command::Anneal(args)
        | Command::Edit(args)
        | Command::Gradnorm(args) => execute(&cli.command, args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Diverged { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

/// Read, parse, apply flag overrides, and resolve the experiment file.
fn load(args: &ConfigArgs) -> Result<(ExperimentConfig, ResolvedExperiment), Error> {
    let text = fs::read_to_string(&args.config).map_err(|e| {
        Error::Config(format!("cannot read {}: {e}", args.config.display()))
    })?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    for spec in [&mut cfg.run, &mut cfg.anneal, &mut cfg.gradnorm]
        .into_iter()
        .flatten()
        .chain(cfg.sweep.as_mut().map(|s| &mut s.base))
        .chain(cfg.edit.as_mut().map(|e| &mut e.source))
    {
        if let Some(seed) = args.seed {
            spec.seed = seed;
        }
        if let Some(steps) = args.steps {
            spec.steps = steps;
        }
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    let resolved = cfg.resolve()?;
    Ok((cfg, resolved))
}

/// Write via a temporary sibling and rename, so partial files never appear
/// under the final name.
fn write_atomic(path: &Path, contents: &str) -> Result<(), Error> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_run_artifacts(dir: &Path, prefix: &str, result: &RunResult) -> Result<(), Error> {
    let p = result.final_theta.len();
    write_atomic(&dir.join(format!("{prefix}trajectory.csv")), &result.trajectory.to_csv(p))?;
    let json = serde_json::to_string_pretty(&result.to_json()).expect("result serializes");
    write_atomic(&dir.join(format!("{prefix}result.json")), &json)?;
    Ok(())
}

fn summary_line(label: &str, prompt: &str, result: &RunResult) {
    let prob = result.prob(prompt).unwrap_or(f64::NAN);
    println!("{label}: P({prompt}) = {prob:.6}, {} ms", result.wall_time_ms);
}

fn execute(command: &Command, args: &ConfigArgs) -> Result<(), Error> {
    let (cfg, resolved) = load(args)?;
    let requested = match command {
        Command::Run(_) => "run",
        Command::Sweep(_) => "sweep",
        Command::Anneal(_) => "anneal",
        Command::Edit(_) => "edit",
        Command::Gradnorm(_) => "gradnorm",
        _ => unreachable!("execute only handles experiment subcommands"),
    };
    if requested != resolved.kind.name() {
        return Err(Error::Config(format!(
            "subcommand `{requested}` does not match the `{}` stanza in {}",
            resolved.kind.name(),
            args.config.display()
        )));
    }
    let dir = &resolved.output_dir;
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("config.resolved.json"), &cfg.resolved_json())?;
    let prompt = resolved.base.rule.prompt.clone();

    match &resolved.kind {
        ExperimentKind::Run => {
            let result = run(&resolved.base)?;
            write_run_artifacts(dir, "", &result)?;
            summary_line("run", &prompt, &result);
        }
        ExperimentKind::Sweep { omegas } => {
            let results = omega_sweep(&resolved.base, omegas)?;
            let mut finals = Vec::new();
            for (omega, result) in omegas.iter().zip(&results) {
                write_run_artifacts(dir, &format!("omega_{omega}_"), result)?;
                finals.push(serde_json::json!({
                    "omega": omega,
                    "result": result.to_json(),
                }));
            }
            let json = serde_json::to_string_pretty(&serde_json::Value::Array(finals))
                .expect("sweep serializes");
            write_atomic(&dir.join("result.json"), &json)?;
            // also keep the canonical file names for the last run
            if let Some(last) = results.last() {
                let p = last.final_theta.len();
                write_atomic(&dir.join("trajectory.csv"), &last.trajectory.to_csv(p))?;
                summary_line(&format!("sweep ({} runs)", results.len()), &prompt, last);
            }
        }
        ExperimentKind::Anneal => {
            let out = anneal_comparison(&resolved.base)?;
            write_run_artifacts(dir, "fixed_", &out.fixed)?;
            write_run_artifacts(dir, "annealed_", &out.annealed)?;
            let json = serde_json::to_string_pretty(&serde_json::json!({
                "fixed": out.fixed.to_json(),
                "annealed": out.annealed.to_json(),
            }))
            .expect("anneal serializes");
            write_atomic(&dir.join("result.json"), &json)?;
            let p = out.annealed.final_theta.len();
            write_atomic(&dir.join("trajectory.csv"), &out.annealed.trajectory.to_csv(p))?;
            summary_line("anneal/fixed", &prompt, &out.fixed);
            summary_line("anneal/annealed", &prompt, &out.annealed);
        }
        ExperimentKind::Edit { target, edit, w1, w2 } => {
            let out = edit_experiment(&resolved.base, target, edit, *w1, *w2)?;
            write_run_artifacts(dir, "", &out.result)?;
            let before: serde_json::Map<String, serde_json::Value> = out
                .probs_before
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::json!(v)))
                .collect();
            let json = serde_json::to_string_pretty(&serde_json::json!({
                "probs_before": before,
                "result": out.result.to_json(),
            }))
            .expect("edit serializes");
            write_atomic(&dir.join("edit.json"), &json)?;
            summary_line("edit", target, &out.result);
        }
        ExperimentKind::GradNorm => {
            let (result, table) = gradient_norm_experiment(&resolved.base)?;
            write_run_artifacts(dir, "", &result)?;
            write_atomic(&dir.join("gradnorm.csv"), &table.to_csv())?;
            println!(
                "gradnorm: mean |delta_gen| = {:.6}, mean |delta_cls| = {:.6}, ratio = {:.3}",
                table.mean_gen, table.mean_cls, table.ratio
            );
            summary_line("gradnorm", &prompt, &result);
        }
    }
    Ok(())
}
