use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use toml::{Table, Value};
use treeqn_autodiff::Checkpoint;
use treeqn_boxworld::{generate_level, Action, BoardState, Rules};
use treeqn_model::Arch;
use treeqn_training::gradcheck::{run_suite, Scope};
use treeqn_training::trainer::{FINAL_CHECKPOINT, METRICS_FILE, NAN_DUMP_FILE};
use treeqn_training::{evaluate, load_network, MetricsRow, TrainConfig, Trainer};

use crate::args::{EvalArgs, GradcheckArgs, InspectArgs, TrainArgs};
use crate::config::{parse_file, parse_override, resolve, to_file};
use crate::{dump, CliError, VERSION};

pub const RUNS_DIR_ENV: &str = "TREEQN_RUNS_DIR";
pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const CONFIG_SOURCE: &str = "config.source.toml";
pub const VERSION_FILE: &str = "version.txt";

pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

pub fn run_dir_for(cfg: &TrainConfig) -> PathBuf {
    runs_root().join(format!("{}-seed{}", cfg.arch, cfg.seed))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn progress(row: &MetricsRow) {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    let loss = row.q_loss.or(row.pg_loss);
    eprintln!(
        "transitions {:>9}  updates {:>7}  return {:>8}  loss {:>9}",
        row.transitions,
        row.updates,
        fmt(row.mean_return_100ep),
        fmt(loss)
    );
}

pub fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (mut trainer, source) = match &args.resume {
        Some(path) => (
            Trainer::from_checkpoint(&load_checkpoint(path)?, args.transitions)?,
            None,
        ),
        None => {
            let (table, source) = match &args.config {
                Some(p) => {
                    let text = read(p)?;
                    (parse_file(&text)?, Some(text))
                }
                None => (Table::new(), None),
            };
            let mut overrides = Vec::new();
            if let Some(a) = &args.arch {
                overrides.push(("arch".to_string(), Value::String(a.clone())));
            }
            if let Some(s) = args.seed {
                overrides.push(("seed".to_string(), Value::Integer(to_int(s)?)));
            }
            if let Some(t) = args.transitions {
                overrides.push(("transitions".to_string(), Value::Integer(to_int(t)?)));
            }
            for o in &args.overrides {
                overrides.push(parse_override(o)?);
            }
            (Trainer::new(resolve(table, &overrides)?)?, source)
        }
    };
    let cfg = trainer.config().clone();
    let dir = match (&args.run_dir, &args.resume) {
        (Some(d), _) => d.clone(),
        (None, Some(ckpt)) => ckpt
            .parent()
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf),
        (None, None) => run_dir_for(&cfg),
    };

    if args.resume.is_none() {
        prepare_fresh_dir(&dir, args.force)?;
        fs::write(dir.join(CONFIG_SNAPSHOT), to_file(&cfg))?;
        if let Some(text) = source {
            fs::write(dir.join(CONFIG_SOURCE), text)?;
        }
    } else {
        fs::create_dir_all(&dir)?;
    }
    fs::write(dir.join(VERSION_FILE), format!("treeqn {VERSION}\n"))?;

    writeln!(out, "run directory {}", dir.display())?;
    let quiet = args.quiet;
    let summary = trainer.run_with(Some(&dir), |row| {
        if !quiet {
            progress(row)
        }
    })?;
    let ret = summary
        .mean_return_100ep
        .map_or_else(|| "n/a".to_string(), |r| format!("{r:.4}"));
    writeln!(
        out,
        "finished {} at {} transitions, {} updates, mean return (last 100 episodes) {ret}",
        cfg.arch, summary.transitions, summary.updates
    )?;
    Ok(())
}

fn to_int(v: u64) -> Result<i64, CliError> {
    i64::try_from(v).map_err(|_| CliError::Config(format!("{v} is out of range")))
}

/// Refuse to mix two runs in one directory unless told to start over.
fn prepare_fresh_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.join(METRICS_FILE).exists() {
        if !force {
            return Err(CliError::Config(format!(
                "{} already holds a run; pass --force to replace it or --resume to continue it",
                dir.display()
            )));
        }
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let ours = name.ends_with(".ckpt")
                || [
                    METRICS_FILE,
                    NAN_DUMP_FILE,
                    CONFIG_SNAPSHOT,
                    CONFIG_SOURCE,
                    VERSION_FILE,
                ]
                .contains(&name);
            if ours && path.is_file() {
                fs::remove_file(&path)?;
            }
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

#[derive(Serialize)]
struct EvalReport<'a> {
    checkpoint: String,
    arch: Arch,
    seed: u64,
    episodes: usize,
    mean: f64,
    std: f64,
    returns: &'a [f64],
}

pub fn eval(args: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (net, store, cfg) = load_network(&load_checkpoint(&args.checkpoint)?)?;
    if let Some(a) = &args.arch {
        let want: Arch = a
            .parse()
            .map_err(|e: treeqn_model::UnknownArch| CliError::Config(e.to_string()))?;
        if want != cfg.arch {
            return Err(CliError::Config(format!(
                "{} holds a {} network, not {want}",
                args.checkpoint.display(),
                cfg.arch
            )));
        }
    }
    let rules = Rules {
        goals_consumable: cfg.goals_consumable,
    };
    let stats = evaluate(&net, &store, args.episodes, args.seed, rules)?;
    let report = EvalReport {
        checkpoint: args.checkpoint.display().to_string(),
        arch: cfg.arch,
        seed: args.seed,
        episodes: stats.episodes,
        mean: stats.mean,
        std: stats.std,
        returns: &stats.returns,
    };
    let path = args.out.clone().unwrap_or_else(|| {
        let dir = args.checkpoint.parent().unwrap_or(Path::new("."));
        dir.join(format!("eval-seed{}.json", args.seed))
    });
    fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    writeln!(
        out,
        "{} over {} episodes: mean return {:.4}, std {:.4} ({})",
        cfg.arch,
        stats.episodes,
        stats.mean,
        stats.std,
        path.display()
    )?;
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let scopes = Scope::parse(&args.scope).ok_or_else(|| {
        CliError::Config(format!(
            "unknown scope {:?} (all, primitives, models, losses)",
            args.scope
        ))
    })?;
    let results = run_suite(&scopes, args.seed);
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed() { "ok  " } else { "FAIL" };
        failed += usize::from(!r.passed());
        writeln!(
            out,
            "{verdict} {:<58} max rel err {:.2e} (tol {:.0e}, {} coords, {:.1}s)",
            r.name, r.max_rel_error, r.tolerance, r.coords_checked, r.seconds
        )?;
        if let (false, Some((tensor, i, a, n))) = (r.passed(), &r.worst) {
            writeln!(
                out,
                "     worst at {tensor}[{i}]: analytic {a:.6e}, numeric {n:.6e}"
            )?;
        }
    }
    if let Some(p) = &args.json {
        fs::write(p, serde_json::to_string_pretty(&results)?)?;
    }
    writeln!(out, "{} checks, {failed} failed", results.len())?;
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} gradient checks failed")));
    }
    Ok(())
}

pub fn inspect(args: &InspectArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (net, store, _) = load_network(&load_checkpoint(&args.checkpoint)?)?;
    let state = match (&args.board, args.seed) {
        (Some(p), _) => {
            BoardState::from_ascii(&read(p)?).map_err(|e| CliError::Config(e.to_string()))?
        }
        (None, Some(seed)) => generate_level(seed),
        (None, None) => return Err(CliError::Config("give --seed or --board".into())),
    };
    let d = dump::tree_dump(&net, &store, &state, args.latents)?;
    let json = serde_json::to_string_pretty(&d)?;
    write!(out, "{}", d.board)?;
    let action = Action::from_index(d.greedy_action)
        .map_or_else(|| d.greedy_action.to_string(), |a| a.to_string());
    writeln!(
        out,
        "{}, depth {}, {} nodes, greedy action {action}",
        d.arch, d.depth, d.node_count
    )?;
    match &args.out {
        Some(p) => fs::write(p, json)?,
        None => writeln!(out, "{json}")?,
    }
    Ok(())
}

/// Final checkpoint of a finished run directory.
pub fn final_checkpoint(dir: &Path) -> PathBuf {
    dir.join(FINAL_CHECKPOINT)
}
