use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use twist_core::remote::serve_capped;
use twist_core::{map_indexed, Execution, GenerationOrder, NGramConfig, Scorer, SourceRecord};
use twist_harness::config::{ExperimentConfig, Method, SchemeKind, SpecDecl};
use twist_harness::data::read_lines;
use twist_harness::error::{HarnessError, Result};
use twist_harness::experiment::{self, Models};
use twist_harness::methods::run_method;
use twist_harness::models::{load_model_dir, load_table, save_model_dir, train_ngram};
use twist_harness::synth::{write_scenario, ScenarioKind, SynthOptions};

/// Bind address for `serve` when `--listen` is not given.
const BIND_ENV: &str = "TWIST_BIND";

#[derive(Parser)]
#[command(name = "twist", version, about = "Decode with two sequence models guiding each other")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for one per core. Overrides the config.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory. Overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Whitespace,
    Contractions,
    Character,
    Bpe,
}

#[derive(Clone, Copy, ValueEnum)]
enum Order {
    L2r,
    R2l,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Complementary,
    Identical,
    Copy,
}

#[derive(Subcommand)]
enum Command {
    /// Train an n-gram model on a corpus and write a model directory.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "whitespace")]
        scheme: Scheme,
        #[arg(long, default_value_t = 100)]
        merges: usize,
        #[arg(long, default_value = twist_core::text::DEFAULT_MARKER)]
        marker: String,
        #[arg(long, value_enum, default_value = "l2r")]
        order: Order,
        #[arg(long)]
        max_vocab: Option<usize>,
        #[arg(long, default_value_t = 3)]
        ngram_order: usize,
        #[arg(long, default_value_t = 0.1)]
        k_add: f64,
        #[arg(long, default_value_t = 0.0)]
        copy_bonus: f64,
    },
    /// Decode stdin line by line with one method, writing outputs to stdout.
    /// A line holding a JSON object is read as a structured record.
    Decode {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        method: String,
    },
    /// Run every configured method on the test set and write reports.
    Experiment {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluate the lambda grid on the dev set and select a cell.
    Tune {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Time every method single-threaded relative to isolation-f.
    Bench {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Retrain the designated model on corpus subsamples and rerun.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write a synthetic scenario with a ready-to-run config.
    Synth {
        #[arg(long, value_enum)]
        scenario: Scenario,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        dev: usize,
        #[arg(long, default_value_t = 40)]
        test: usize,
        #[arg(long, default_value_t = 4)]
        length: usize,
        #[arg(long, default_value_t = 400)]
        train: usize,
    },
    /// Serve a local model over the remote-scorer protocol.
    Serve {
        /// Model directory from `train`, or a table file.
        #[arg(long)]
        model: PathBuf,
        /// Talk over stdin/stdout instead of TCP.
        #[arg(long)]
        stdio: bool,
        /// TCP address; defaults to $TWIST_BIND, then 127.0.0.1:7878.
        #[arg(long)]
        listen: Option<String>,
        /// Caps the entries per reply below what clients request.
        #[arg(long)]
        top_n: Option<usize>,
    },
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(workers) = args.workers {
        config.workers = workers;
    }
    if let Some(out) = &args.out {
        config.output_dir = std::path::absolute(out)?;
    }
    Ok(config)
}

fn load_scorer(path: &Path) -> Result<Box<dyn Scorer>> {
    Ok(if path.is_dir() { Box::new(load_model_dir(path)?) } else { Box::new(load_table(path)?) })
}

fn parse_record(line: &str) -> Result<SourceRecord> {
    if line.trim_start().starts_with('{') {
        Ok(serde_json::from_str(line)?)
    } else {
        Ok(twist_core::scoring::record_from_line(&twist_harness::data::normalize(line)))
    }
}

fn decode(args: &RunArgs, method: &str) -> Result<()> {
    let config = load_config(args)?;
    let method: Method = method.parse()?;
    let models = Models::load(&config)?;
    if method == Method::Fusion && models.f.spec().id() != models.g.spec().id() {
        return Err(HarnessError::Config("fusion needs both models to share one text spec".into()));
    }
    let records = io::stdin().lock().lines().map(|l| parse_record(&l?)).collect::<Result<Vec<_>>>()?;
    let outputs = map_indexed(&records, Execution::from_workers(config.workers), |i, r| {
        run_method(method, &models.f, &models.g, r, &config.beam, &config.guidance, i)
    });
    let mut out = io::stdout().lock();
    for (i, o) in outputs.into_iter().enumerate() {
        match o {
            Ok(r) => writeln!(out, "{}", r.hypothesis)?,
            Err(e) => {
                eprintln!("line {}: {}", i + 1, e.message);
                writeln!(out)?;
            }
        }
    }
    Ok(())
}

fn serve_model(model: &Path, stdio: bool, listen: Option<String>, top_n: Option<usize>) -> Result<()> {
    let scorer: Arc<dyn Scorer> = Arc::from(load_scorer(model)?);
    if stdio {
        serve_capped(&*scorer, io::stdin().lock(), io::stdout().lock(), top_n)?;
        return Ok(());
    }
    let addr = listen.or_else(|| std::env::var(BIND_ENV).ok()).unwrap_or_else(|| "127.0.0.1:7878".into());
    let listener = TcpListener::bind(&addr)?;
    eprintln!("listening on {}", listener.local_addr()?);
    for stream in listener.incoming() {
        let stream = stream?;
        let scorer = scorer.clone();
        std::thread::spawn(move || {
            let Ok(read_half) = stream.try_clone() else { return };
            if let Err(e) = serve_capped(&*scorer, BufReader::new(read_half), stream, top_n) {
                eprintln!("connection closed: {e}");
            }
        });
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { corpus, out, scheme, merges, marker, order, max_vocab, ngram_order, k_add, copy_bonus } => {
            let spec = SpecDecl {
                scheme: match scheme {
                    Scheme::Whitespace => SchemeKind::Whitespace,
                    Scheme::Contractions => SchemeKind::Contractions,
                    Scheme::Character => SchemeKind::Character,
                    Scheme::Bpe => SchemeKind::Bpe,
                },
                merges,
                marker,
                order: match order {
                    Order::L2r => GenerationOrder::LeftToRight,
                    Order::R2l => GenerationOrder::RightToLeft,
                },
                max_vocab,
            };
            let config = NGramConfig { order: ngram_order, k_add, copy_bonus };
            let model = train_ngram(&read_lines(&corpus)?, &spec, config).map_err(|e| match e {
                HarnessError::Core(twist_core::Error::Training(m)) => HarnessError::Config(m),
                e => e,
            })?;
            save_model_dir(&model, &out)?;
            eprintln!("wrote {} ({} tokens)", out.display(), model.spec().vocab().len());
        }
        Command::Decode { run, method } => decode(&run, &method)?,
        Command::Experiment { run } => {
            let config = load_config(&run)?;
            let report = experiment::run_experiment(&config)?;
            print!("{}", report.report_tsv());
        }
        Command::Tune { run } => {
            let config = load_config(&run)?;
            let report = experiment::tune_lambda(&config)?;
            print!("{}", report.selected_tsv());
        }
        Command::Bench { run } => {
            let config = load_config(&run)?;
            print!("{}", experiment::bench(&config)?.tsv());
        }
        Command::Sweep { run } => {
            let config = load_config(&run)?;
            print!("{}", experiment::subsample_sweep(&config)?.tsv());
        }
        Command::Synth { scenario, out, seed, dev, test, length, train } => {
            let kind = match scenario {
                Scenario::Complementary => ScenarioKind::Complementary,
                Scenario::Identical => ScenarioKind::Identical,
                Scenario::Copy => ScenarioKind::Copy,
            };
            let path = write_scenario(kind, &out, &SynthOptions { seed, dev, test, length, train })?;
            println!("{}", path.display());
        }
        Command::Serve { model, stdio, listen, top_n } => serve_model(&model, stdio, listen, top_n)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
