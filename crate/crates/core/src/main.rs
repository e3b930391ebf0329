use std::path::PathBuf;
use std::process::ExitCode;

use augkit::pipeline::{synth_corpus, Overrides, Pipeline, PipelineConfig, SynthSpec};
use augkit::Error;
use clap::{Args, Parser, Subcommand};

/// Speaker-verification data augmentation pipeline.
#[derive(Debug, Parser)]
#[command(name = "augkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    work_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads within a stage.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Speed-perturb and convert the training manifest.
    Augment(Common),
    /// Embed every training and evaluation utterance.
    Extract(Common),
    /// Apply the similarity gate to converted utterances.
    Filter(Common),
    /// Train one classification head per training condition.
    Train(Common),
    /// Score the trial list against each trained head.
    Score(Common),
    /// Compute EER, minDCF and DET points.
    Evaluate(Common),
    /// Tabulate all evaluated conditions.
    Report(Common),
    /// Run every stage in order.
    Run(Common),
    /// Write a synthetic corpus and a starter config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        speakers: usize,
        #[arg(long, default_value_t = 9)]
        train_utts: usize,
        #[arg(long, default_value_t = 4)]
        eval_utts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        jobs: usize,
    },
}

fn load(common: &Common) -> Result<Pipeline, Error> {
    let overrides = Overrides {
        work_dir: common.work_dir.clone(),
        seed: common.seed,
        jobs: common.jobs,
    };
    Ok(Pipeline::new(PipelineConfig::load(&common.config, &overrides)?))
}

fn run(command: Command) -> Result<String, Error> {
    Ok(match command {
        Command::Augment(c) => load(&c)?.augment()?.to_string(),
        Command::Extract(c) => load(&c)?.extract()?.to_string(),
        Command::Filter(c) => load(&c)?.filter()?.to_string(),
        Command::Train(c) => {
            let heads = load(&c)?.train()?;
            heads
                .iter()
                .map(|h| {
                    format!(
                        "{}: {} classes, {} utterances, final loss {:.4}",
                        h.condition,
                        h.classes,
                        h.utterances,
                        h.final_loss.unwrap_or(f64::NAN)
                    )
                })
                .collect::<Vec<_>>()
                .join("\n")
        }
        Command::Score(c) => {
            let p = load(&c)?;
            let conditions = p.score()?;
            format!("scored {} condition(s) in {}", conditions.len(), p.layout.root().display())
        }
        Command::Evaluate(c) => load(&c)?
            .evaluate()?
            .iter()
            .map(|m| format!("{}: EER {:.6} minDCF {:.6}", m.condition, m.eer, m.min_dcf))
            .collect::<Vec<_>>()
            .join("\n"),
        Command::Report(c) => load(&c)?.report()?.to_text(),
        Command::Run(c) => load(&c)?.run_all()?.to_text(),
        Command::Synth { out, speakers, train_utts, eval_utts, seed, jobs } => {
            let spec = SynthSpec {
                speakers,
                train_utts,
                eval_utts,
                seed,
                ..SynthSpec::default()
            };
            let corpus = synth_corpus(&out, &spec, jobs.max(1))?;
            format!("wrote corpus and {}", corpus.config.display())
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(msg) => {
            println!("{}", msg.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("augkit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
