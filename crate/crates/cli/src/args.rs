use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "treeqn", version = crate::VERSION, about = "TreeQN and ATreeC on the box-pushing gridworld")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one agent and write metrics and checkpoints to a run directory.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint on fresh levels.
    Eval(EvalArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Dump the look-ahead tree of a tree checkpoint for one board.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Transition budget.
    #[arg(long)]
    pub transitions: Option<u64>,
    /// `key=value` overrides, applied last.
    #[arg(short = 'o', long = "override", value_name = "KEY=VALUE", num_args = 1..)]
    pub overrides: Vec<String>,
    /// Run directory; defaults to `$TREEQN_RUNS_DIR/{arch}-seed{seed}`.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Continue from a checkpoint. Only `--transitions` and `--run-dir` may
    /// accompany it.
    #[arg(long, conflicts_with_all = ["config", "arch", "seed", "overrides", "force"])]
    pub resume: Option<PathBuf>,
    /// Replace an existing run in the run directory.
    #[arg(long)]
    pub force: bool,
    /// No per-row progress on stderr.
    #[arg(short, long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fail unless the checkpoint holds this architecture.
    #[arg(long)]
    pub arch: Option<String>,
    /// Where to write the JSON result; defaults to `eval-seed{seed}.json`
    /// next to the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// all, primitives, models or losses.
    #[arg(long, default_value = "all")]
    pub scope: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write every result as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub checkpoint: PathBuf,
    /// Use the generated level for this seed.
    #[arg(long, conflicts_with = "board", required_unless_present = "board")]
    pub seed: Option<u64>,
    /// Read an 8×8 ASCII board (`A B G O .`).
    #[arg(long)]
    pub board: Option<PathBuf>,
    /// Write the JSON dump here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Include latent vectors in the dump.
    #[arg(long)]
    pub latents: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn overrides_take_several_values() {
        let cli = Cli::try_parse_from([
            "treeqn",
            "train",
            "--arch",
            "dqn",
            "-o",
            "lambda=1.0",
            "eta_s=1",
            "--seed",
            "2",
        ])
        .unwrap();
        match cli.command {
            Command::Train(a) => {
                assert_eq!(a.overrides, ["lambda=1.0", "eta_s=1"]);
                assert_eq!(a.seed, Some(2));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resume_excludes_fresh_run_options() {
        assert!(
            Cli::try_parse_from(["treeqn", "train", "--resume", "x.ckpt", "--arch", "dqn"])
                .is_err()
        );
        assert!(Cli::try_parse_from([
            "treeqn",
            "train",
            "--resume",
            "x.ckpt",
            "--transitions",
            "10"
        ])
        .is_ok());
    }

    #[test]
    fn inspect_needs_exactly_one_board_source() {
        assert!(Cli::try_parse_from(["treeqn", "inspect", "c.ckpt"]).is_err());
        assert!(Cli::try_parse_from([
            "treeqn", "inspect", "c.ckpt", "--seed", "1", "--board", "b.txt"
        ])
        .is_err());
        assert!(Cli::try_parse_from(["treeqn", "inspect", "c.ckpt", "--board", "b.txt"]).is_ok());
    }
}
