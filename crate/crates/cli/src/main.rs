use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use genoseq_core::corpus::{parse_task_csv, registry_csv, DnaSequence};
use genoseq_core::experiment::{
    load_records, report, run_grid_observed, write_reports, ExperimentError, GridConfig, Layout,
};
use genoseq_core::tokenize::{bpe_train, load_vocabulary, save_vocabulary, TokenizerSpec};

#[derive(Parser)]
#[command(
    name = "genoseq",
    version,
    about = "DNA tokenization and positional-encoding experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of a grid config, skipping cells already on disk.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's worker count.
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides the config's run directory.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Lay out stored records as CSV tables.
    Report {
        #[arg(long)]
        dir: PathBuf,
        /// by-scheme or robustness
        #[arg(long, default_value = "by-scheme")]
        layout: String,
        /// Output directory; defaults to <dir>/reports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Benchmark task registry.
    Registry {
        #[command(subcommand)]
        command: RegistryCommand,
    },
    Tokenizer {
        #[command(subcommand)]
        command: TokenizerCommand,
    },
}

#[derive(Subcommand)]
enum RegistryCommand {
    /// Print the registry as CSV.
    List,
}

#[derive(Subcommand)]
enum TokenizerCommand {
    /// Learn a BPE vocabulary from the sequence column of a task CSV.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        merges: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the tokens of one sequence.
    Encode {
        /// A vocabulary file, or a k-mer descriptor such as 3mer.
        #[arg(long)]
        vocab: String,
        #[arg(long)]
        seq: String,
    },
}

/// Failure classes, each with its own exit status.
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Cells(usize),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(_) | ExperimentError::UnknownLayout(_) => {
                Failure::Usage(e.into())
            }
            _ => Failure::Data(e.into()),
        }
    }
}

fn data<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Data(e.into())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            workers,
            run_dir,
        } => {
            let mut grid = GridConfig::load(&config)?;
            if let Some(w) = workers {
                grid.workers = w;
            }
            if let Some(d) = run_dir {
                grid.run_dir = d;
            }
            grid.validate()?;
            eprintln!(
                "{} cells ({} tasks x {} tokenizers x {} schemes x {} depths x {} seeds), {} worker(s)",
                grid.num_cells(),
                grid.tasks.len(),
                grid.tokenizers.len(),
                grid.schemes.len(),
                grid.depths.len(),
                grid.seeds.len(),
                grid.workers
            );
            let outcome = run_grid_observed(&grid, &|line| eprintln!("{line}"))?;
            eprintln!(
                "{} records ({} trained, {} resumed), {} failed",
                outcome.records.len(),
                outcome.trained,
                outcome.resumed,
                outcome.failures.len()
            );
            if !outcome.failures.is_empty() {
                return Err(Failure::Cells(outcome.failures.len()));
            }
        }
        Command::Report { dir, layout, out } => {
            let layout: Layout = layout.parse()?;
            let records = load_records(&dir)?;
            let files = report(&records, layout)?;
            let out = out.unwrap_or_else(|| dir.join("reports"));
            write_reports(&files, &out)?;
            for f in &files {
                println!("{}", out.join(&f.name).display());
            }
        }
        Command::Registry {
            command: RegistryCommand::List,
        } => print!("{}", registry_csv()),
        Command::Tokenizer { command } => tokenizer(command)?,
    }
    Ok(())
}

fn tokenizer(command: TokenizerCommand) -> Result<(), Failure> {
    match command {
        TokenizerCommand::Train { input, merges, out } => {
            let text = fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))
                .map_err(data)?;
            // labels are irrelevant here, so accept any class index
            let rows = parse_task_csv(&text, usize::MAX)
                .with_context(|| format!("parsing {}", input.display()))
                .map_err(data)?;
            let corpus: Vec<DnaSequence> = rows.into_iter().map(|r| r.sequence).collect();
            let vocab = bpe_train(&corpus, merges).map_err(data)?;
            let learned = vocab.merges().map_or(0, |m| m.len());
            save_vocabulary(&vocab, &out).map_err(data)?;
            eprintln!(
                "{learned} merges, {} tokens -> {}",
                vocab.len(),
                out.display()
            );
        }
        TokenizerCommand::Encode { vocab, seq } => {
            let spec = if vocab.ends_with("mer") && !vocab.contains(['/', '.']) {
                TokenizerSpec::from_descriptor(&vocab).map_err(|e| Failure::Usage(e.into()))?
            } else {
                TokenizerSpec::bpe(load_vocabulary(&PathBuf::from(&vocab)).map_err(data)?)
                    .map_err(data)?
            };
            let seq = DnaSequence::new(seq.trim().as_bytes().to_vec())
                .map_err(|e| Failure::Usage(e.into()))?;
            let tokens = spec.tokenize(&seq).map_err(|e| Failure::Usage(e.into()))?;
            let ids = spec.body_ids(&seq).map_err(|e| Failure::Usage(e.into()))?;
            println!("{}", tokens.join(" "));
            println!(
                "{}",
                ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Cells(n)) => {
            eprintln!("error: {n} cell(s) failed");
            ExitCode::from(3)
        }
    }
}
