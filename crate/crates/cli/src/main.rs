mod commands;
mod config;

use std::io::{self, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cognidb::ann::Strategy;
use cognidb::query::OutputFormat;
use cognidb::{Error, ErrorClass, Result};

use commands::{IndexArgs, Session, TrainArgs};
use config::ProjectConfig;

/// Query relational tables through word embeddings trained on their rows.
#[derive(Debug, Parser)]
#[command(name = "cognidb", version)]
struct Cli {
    /// Project file (JSON)
    #[arg(short, long, global = true, default_value = "cognidb.json")]
    config: PathBuf,

    /// Log filter for stderr, e.g. `info`, `warn` or `cognidb=debug`
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turn the configured tables into a training corpus (one sentence per row)
    Textify {
        /// Corpus path, overriding the project file
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Train word vectors on the corpus and write the model store
    Train {
        /// Store of a model to continue training from (incremental mode)
        #[arg(long)]
        base: Option<PathBuf>,
        /// Worker threads; 1 gives byte-identical reruns
        #[arg(long)]
        threads: Option<usize>,
        /// RNG seed, overriding the training config
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build ANN indices over the stored model
    Index {
        /// LSH signature bits (1-64)
        #[arg(long)]
        lsh_bits: Option<usize>,
        /// Spherical k-means cluster count
        #[arg(long)]
        kmeans_k: Option<usize>,
        /// Seed for hyperplanes and initial centroids
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one statement and print its result to stdout
    Query {
        /// Statement text
        #[arg(short = 'e', long = "execute", conflicts_with = "file")]
        execute: Option<String>,
        /// File holding the statement
        #[arg(short, long)]
        file: Option<PathBuf>,
        /// Nearest-neighbour strategy: exact, lsh:<radius> or kmeans:<n_probe>
        #[arg(long, default_value = "exact")]
        strategy: Strategy,
        /// Output format: table, csv or json
        #[arg(long, default_value = "table")]
        format: OutputFormat,
    },
    /// Interactive shell; statements end with `;`
    Repl {
        /// Initial nearest-neighbour strategy
        #[arg(long, default_value = "exact")]
        strategy: Strategy,
        /// Initial output format
        #[arg(long, default_value = "table")]
        format: OutputFormat,
    },
    /// Print the nearest neighbours of a token
    InspectModel {
        /// Token to look up
        token: String,
        /// Number of neighbours
        #[arg(short, default_value_t = 10)]
        k: usize,
        /// Nearest-neighbour strategy: exact, lsh:<radius> or kmeans:<n_probe>
        #[arg(long, default_value = "exact")]
        strategy: Strategy,
        /// Output format: table, csv or json
        #[arg(long, default_value = "table")]
        format: OutputFormat,
    },
}

fn init_logging(filter: &str) {
    env_logger::Builder::new()
        .parse_filters(filter)
        .format(|buf, rec| {
            writeln!(
                buf,
                "level={} target={} {}",
                rec.level().as_str().to_lowercase(),
                rec.target(),
                rec.args()
            )
        })
        .target(env_logger::Target::Stderr)
        .init();
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Io => 4,
        ErrorClass::Syntax => 5,
    }
}

fn load(path: &Path) -> Result<ProjectConfig> {
    ProjectConfig::load(path)
}

fn run(cli: Cli) -> Result<(), (Error, Option<String>)> {
    let cfg = load(&cli.config).map_err(|e| (e, None))?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let plain = |e: Error| (e, None);
    match cli.command {
        Command::Textify { out: path } => {
            commands::cmd_textify(&cfg, path, &mut out).map_err(plain)
        }
        Command::Train {
            base,
            threads,
            seed,
        } => commands::cmd_train(
            &cfg,
            &TrainArgs {
                base,
                threads,
                seed,
            },
            &mut out,
        )
        .map_err(plain),
        Command::Index {
            lsh_bits,
            kmeans_k,
            seed,
        } => commands::cmd_index(
            &cfg,
            &IndexArgs {
                lsh_bits,
                kmeans_k,
                seed,
            },
            &mut out,
        )
        .map_err(plain),
        Command::Query {
            execute,
            file,
            strategy,
            format,
        } => {
            let sql = commands::read_sql(execute, file).map_err(plain)?;
            let session = Session::open(&cfg).map_err(plain)?;
            let rs = session.run(&sql, strategy).map_err(|e| (e, Some(sql)))?;
            commands::print_result(&rs, format, &mut out).map_err(plain)
        }
        Command::Repl { strategy, format } => {
            let session = Session::open(&cfg).map_err(plain)?;
            let stdin = io::stdin();
            let prompt = stdin.is_terminal();
            commands::repl(
                &session,
                strategy,
                format,
                &mut stdin.lock(),
                &mut out,
                &mut io::stderr(),
                prompt,
            )
            .map_err(plain)
        }
        Command::InspectModel {
            token,
            k,
            strategy,
            format,
        } => {
            let session = Session::open(&cfg).map_err(plain)?;
            let rs = session.neighbors(&token, k, strategy).map_err(plain)?;
            commands::print_result(&rs, format, &mut out).map_err(plain)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli.log_level);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((e, sql)) => {
            match sql {
                Some(sql) => eprintln!("{}", commands::diagnostic(&e, &sql)),
                None => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(e.class()))
        }
    }
}
