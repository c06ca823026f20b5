use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mixmatch::commands::{cmd_generate, cmd_revise, cmd_train, prepare_config, Overrides, RunOutput, TrainOptions};
use mixmatch::config::{ExpertSpec, Task, PRESETS};
use mixmatch::verify::{cmd_verify, Scale, VerifyOptions};
use mixmatch::{Error, Result};
use mixmatch_core::experts::ExpertKind;

#[derive(Parser)]
#[command(name = "mixmatch", version, about = "Controlled text generation by sampling from a product of experts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the vocabulary, neighbor MLM and classifier on toy corpora.
    Train {
        /// Unlabeled corpus, one sentence per line.
        #[arg(long)]
        corpus: PathBuf,
        /// Labeled corpus, `label<TAB>text` per line.
        #[arg(long)]
        labeled: Option<PathBuf>,
        /// Add-k smoothing.
        #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
        k: f64,
        #[arg(long, default_value_t = 1)]
        min_count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prompted generation.
    Generate(RunArgs),
    /// Revision of source sentences.
    Revise(RunArgs),
    /// Run the sampler self-checks against exact enumeration.
    Verify {
        #[arg(long, value_enum, default_value_t = ScaleArg::Tiny)]
        scale: ScaleArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Vocabulary size of the convergence check.
        #[arg(long)]
        vocab: Option<usize>,
        /// Sequence length of the convergence check.
        #[arg(long)]
        length: Option<usize>,
        /// Steps of the convergence check.
        #[arg(long)]
        steps: Option<usize>,
        /// Replace the acceptance rule with a sign-flipped one.
        #[arg(long)]
        corrupt_acceptance: bool,
    },
    /// List the named presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write one trace file per chain.
    #[arg(long)]
    trace: bool,
    /// Override an expert weight, e.g. `discriminator=25`. Repeatable.
    #[arg(long = "weight", value_parser = parse_weight)]
    weights: Vec<(ExpertKind, f64)>,
    /// Add a remote energy expert as `url:name:weight`. Repeatable.
    #[arg(long = "remote-expert", value_parser = ExpertSpec::parse_remote)]
    remote_experts: Vec<ExpertSpec>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Tiny,
    Small,
}

fn parse_weight(s: &str) -> std::result::Result<(ExpertKind, f64), String> {
    let (kind, w) = s.split_once('=').ok_or_else(|| format!("expected kind=value, got {s:?}"))?;
    let kind = [
        ExpertKind::Mlm,
        ExpertKind::Discriminator,
        ExpertKind::Hamming,
        ExpertKind::Fuzzy,
        ExpertKind::Lexicon,
        ExpertKind::Joint,
        ExpertKind::Remote,
    ]
    .into_iter()
    .find(|k| k.as_str() == kind)
    .ok_or_else(|| format!("unknown expert kind {kind:?}"))?;
    let w: f64 = w.parse().map_err(|e| format!("bad weight {w:?}: {e}"))?;
    Ok((kind, w))
}

fn print_run(out: &RunOutput, dir: &std::path::Path) {
    println!("wrote {} samples to {}", out.texts.len(), dir.display());
    match serde_json::to_string_pretty(&out.report) {
        Ok(s) => println!("{s}"),
        Err(e) => log::warn!("could not render report: {e}"),
    }
}

fn run_task(task: Task, args: RunArgs) -> Result<()> {
    let overrides = Overrides {
        preset: args.preset,
        seed: args.seed,
        out_dir: args.out,
        trace: args.trace,
        weights: args.weights,
        remote_experts: args.remote_experts,
    };
    let cfg = prepare_config(&args.config, &overrides)?;
    if cfg.task != task {
        return Err(Error::Config(vec![format!("config task is {:?}, command needs {task:?}", cfg.task)]));
    }
    let out = match task {
        Task::Generate => cmd_generate(&cfg)?,
        Task::Revise => cmd_revise(&cfg)?,
    };
    print_run(&out, &cfg.out_dir);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { corpus, labeled, k, min_count, out } => {
            let summary = cmd_train(&TrainOptions { corpus, labeled, k, min_count, out_dir: out.clone() })?;
            println!(
                "vocabulary {} tokens, {} corpus lines, {} labeled lines -> {}",
                summary.vocab_size,
                summary.corpus_lines,
                summary.labeled_lines,
                out.display()
            );
            if let Some(acc) = summary.classifier_accuracy {
                println!("classifier: {} classes, training accuracy {acc:.4}", summary.classes);
            }
            Ok(())
        }
        Command::Generate(args) => run_task(Task::Generate, args),
        Command::Revise(args) => run_task(Task::Revise, args),
        Command::Verify { scale, seed, vocab, length, steps, corrupt_acceptance } => {
            let scale = match scale {
                ScaleArg::Tiny => Scale::Tiny,
                ScaleArg::Small => Scale::Small,
            };
            let report =
                cmd_verify(&VerifyOptions { scale, seed, vocab_size: vocab, length, steps, corrupt_acceptance })?;
            for c in &report.checks {
                println!("{c}");
            }
            if report.passed() {
                println!("all checks passed");
                Ok(())
            } else {
                let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
                Err(Error::Verification(failed.join(", ")))
            }
        }
        Command::Presets => {
            for p in PRESETS {
                println!("{:<22} {:<8} {}", p.name, format!("{:?}", p.task).to_lowercase(), p.description);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                Error::Config(errs) => {
                    eprintln!("error: invalid configuration");
                    for msg in errs {
                        eprintln!("  - {msg}");
                    }
                }
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
