//! Subcommand wiring: train / update / encode / query / eval.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or model error.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use sih_core::dataset::{load_dataset, DatasetFormat};
use sih_core::error::Error;
use sih_core::eval::{evaluate, rank_by_hamming, CodeDatabase};
use sih_core::incremental::{
    apply_event, incremental_train, incremental_train_reanchored, ModificationEvent, TrainState,
};
use sih_core::model_io::{load_codes, load_model, save_codes, save_train_state};
use sih_core::trainer::{encode_all, train, TrainConfig};
use sih_core::{Dataset64, ModificationEvent64, TrainState64};

#[derive(Parser)]
#[command(name = "sih", version, about = "Learned binary hash codes: train, update, encode, query, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a labeled dataset
    Train(TrainArgs),
    /// Apply database modification events and refresh the model
    Update(UpdateArgs),
    /// Hash a dataset into a codes file
    Encode(EncodeArgs),
    /// Rank a codes database by Hamming distance from query points
    Query(QueryArgs),
    /// Leave-one-out retrieval evaluation on a test set
    Eval(EvalArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    /// Detect binary datasets by their magic bytes, else CSV
    Auto,
    Csv,
    Binary,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled dataset: CSV `label,f1,...,fd` or a binary dataset file
    #[arg(long)]
    data: PathBuf,
    /// Code length m
    #[arg(long)]
    bits: usize,
    /// Number of anchor points r
    #[arg(long)]
    anchors: usize,
    /// RBF kernel width (defaults to the median-distance heuristic)
    #[arg(long)]
    sigma: Option<f64>,
    /// Soft margin of the per-bit SVMs
    #[arg(long, default_value_t = 16.0)]
    cx: f64,
    /// Soft margin of the multi-class SVM
    #[arg(long, default_value_t = 1e-3)]
    cb: f64,
    /// Multi-class block scale (defaults to bits * 1e8)
    #[arg(long)]
    lambda: Option<f64>,
    /// Imbalance penalty weight
    #[arg(long, default_value_t = 1e5)]
    gamma: f64,
    /// Absolute solver tolerance (defaults to a relative rule)
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 5)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (defaults to SIH_THREADS, then all cores)
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    format: FormatArg,
    /// Output model file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Strategy {
    /// Warm-start from the previous model
    Incremental,
    /// Retrain fully on the final data with a fresh seed
    Scratch,
    /// Keep the previous model, ignoring the events
    Passive,
}

#[derive(Args)]
struct UpdateArgs {
    /// Model file saved by `train` or `update`
    #[arg(long)]
    model: PathBuf,
    /// Line-delimited events: `add-class F`, `add-images F`, `delete-class L[,L...]`
    #[arg(long)]
    events: PathBuf,
    #[arg(long, value_enum, default_value_t = Strategy::Incremental)]
    strategy: Strategy,
    /// Resample anchors and refit preprocessing on the final data
    /// (disables weight warm starts)
    #[arg(long)]
    re_anchor: bool,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    format: FormatArg,
    /// Output codes file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    model: PathBuf,
    /// Codes file to search
    #[arg(long)]
    db: PathBuf,
    /// Query points (labels are ignored)
    #[arg(long)]
    data: PathBuf,
    /// Results per query
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    format: FormatArg,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Labeled test set for leave-one-out retrieval
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    format: FormatArg,
    /// Output JSON report
    #[arg(long)]
    out: PathBuf,
}

pub fn run_command(argv: &[String]) -> u8 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Update(args) => cmd_update(args),
        Command::Encode(args) => cmd_encode(args),
        Command::Query(args) => cmd_query(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn default_threads() -> usize {
    std::env::var("SIH_THREADS").ok().and_then(|v| v.parse().ok()).unwrap_or(0)
}

fn load_data(path: &Path, format: FormatArg) -> Result<Dataset64, Error> {
    let format = match format {
        FormatArg::Csv => DatasetFormat::Csv,
        FormatArg::Binary => DatasetFormat::Binary,
        FormatArg::Auto => detect_format(path)?,
    };
    load_dataset(path, format)
}

fn detect_format(path: &Path) -> Result<DatasetFormat, Error> {
    let display = path.display().to_string();
    let mut file = File::open(path).map_err(|e| Error::Io { path: display, source: e })?;
    let mut magic = [0u8; 4];
    let n = file.read(&mut magic).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    if n == 4 && &magic == sih_core::dataset::DATASET_MAGIC {
        Ok(DatasetFormat::Binary)
    } else {
        Ok(DatasetFormat::Csv)
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let data = load_data(&args.data, args.format)?;
    let mut config: TrainConfig<f64> = TrainConfig::new(args.bits, args.anchors);
    config.cx = args.cx;
    config.cb = args.cb;
    config.lambda = args.lambda.unwrap_or(args.bits as f64 * 1e8);
    config.gamma = args.gamma;
    config.max_iter = args.max_iter;
    config.sigma = args.sigma;
    config.epsilon = args.epsilon;
    config.seed = args.seed;
    config.threads = args.threads.unwrap_or_else(default_threads);
    let (model, codes) = train(&data, &config)?;
    if !model.converged {
        log::warn!("training stopped at max_iter without code convergence");
    }
    save_train_state(&TrainState::new(data, model, codes), &args.out)
}

/// Parses a line-delimited event file. Relative dataset paths resolve
/// against the event file's directory.
fn parse_events(path: &Path) -> Result<Vec<ModificationEvent64>, Error> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io { path: display.clone(), source: e })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut events = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = idx + 1;
        let (command, rest) = match line.split_once(char::is_whitespace) {
            Some((c, r)) => (c, r.trim()),
            None => (line, ""),
        };
        match command {
            "add-class" | "add-images" => {
                if rest.is_empty() {
                    return Err(Error::Parse {
                        path: display,
                        line: lineno,
                        msg: format!("`{command}` needs a dataset path"),
                    });
                }
                let mut data_path = PathBuf::from(rest);
                if data_path.is_relative() {
                    data_path = base.join(data_path);
                }
                let data = load_data(&data_path, FormatArg::Auto)?;
                events.push(if command == "add-class" {
                    ModificationEvent::AddClasses(data)
                } else {
                    ModificationEvent::AddImages(data)
                });
            }
            "delete-class" => {
                let mut labels = Vec::new();
                for piece in rest.split(',') {
                    let piece = piece.trim();
                    let label: i32 = piece.parse().map_err(|_| Error::Parse {
                        path: display.clone(),
                        line: lineno,
                        msg: format!("`{piece}` is not an integer class label"),
                    })?;
                    labels.push(label);
                }
                if labels.is_empty() {
                    return Err(Error::Parse {
                        path: display,
                        line: lineno,
                        msg: "`delete-class` needs at least one label".into(),
                    });
                }
                events.push(ModificationEvent::DeleteClasses(labels));
            }
            other => {
                return Err(Error::Parse {
                    path: display,
                    line: lineno,
                    msg: format!("unknown event `{other}`"),
                });
            }
        }
    }
    Ok(events)
}

fn cmd_update(args: UpdateArgs) -> Result<(), Error> {
    let loaded = load_model::<f64>(&args.model)?;
    if args.strategy == Strategy::Passive {
        // Ignore the changes entirely: the previous model is re-emitted.
        let model_path = args.model.display().to_string();
        match loaded.resume {
            Some(part) => save_train_state(
                &TrainState {
                    dataset: part.dataset,
                    codes: part.codes,
                    model: loaded.model,
                    wb_cold: part.wb_cold,
                },
                &args.out,
            ),
            None => Err(Error::Corrupt {
                path: model_path,
                section: "training state (file holds a model without codes)".into(),
            }),
        }?;
        return Ok(());
    }

    let events = parse_events(&args.events)?;
    let mut state: TrainState64 =
        loaded.into_train_state(&args.model.display().to_string())?;
    let base_seed = state.model.config.seed;
    for (idx, event) in events.iter().enumerate() {
        state = apply_event(&state, event, base_seed.wrapping_add(1000 + idx as u64))?;
    }

    let mut config = state.model.config.clone();
    if let Some(t) = args.threads {
        config.threads = t;
    }
    let (model, codes) = match args.strategy {
        Strategy::Scratch => {
            // Fresh run on the final data; a shifted seed keeps it
            // independent of the original initialization.
            config.seed = base_seed.wrapping_add(1);
            config.sigma = None;
            train(&state.dataset, &config)?
        }
        Strategy::Incremental => {
            if args.re_anchor {
                config.sigma = None;
                incremental_train_reanchored(&state, &config)?
            } else {
                incremental_train(&state, &config)?
            }
        }
        Strategy::Passive => unreachable!("handled above"),
    };
    if !model.converged {
        log::warn!("update stopped at max_iter without code convergence");
    }
    save_train_state(&TrainState::new(state.dataset, model, codes), &args.out)
}

fn cmd_encode(args: EncodeArgs) -> Result<(), Error> {
    let loaded = load_model::<f64>(&args.model)?;
    let data = load_data(&args.data, args.format)?;
    let codes = encode_all(&loaded.model, data.features())?;
    save_codes(&codes, &args.out)
}

fn cmd_query(args: QueryArgs) -> Result<(), Error> {
    let loaded = load_model::<f64>(&args.model)?;
    let db_codes = load_codes(&args.db)?;
    let db = CodeDatabase::new(&db_codes, &vec![0; db_codes.n()]);
    let data = load_data(&args.data, args.format)?;
    let codes = encode_all(&loaded.model, data.features())?;
    let mut stdout = String::new();
    for q in 0..codes.n() {
        let packed = sih_core::eval::pack_bits(&codes.row(q));
        let order = rank_by_hamming(&packed, &db)?;
        stdout.push_str(&format!("{q}"));
        for &idx in order.iter().take(args.top) {
            let dist = sih_core::eval::hamming_distance(&packed, db.code(idx))?;
            stdout.push_str(&format!("\t{idx}:{dist}"));
        }
        stdout.push('\n');
    }
    print!("{stdout}");
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let loaded = load_model::<f64>(&args.model)?;
    let data = load_data(&args.test, args.format)?;
    let codes = encode_all(&loaded.model, data.features())?;
    let db = CodeDatabase::new(&codes, data.labels());
    let report = evaluate(&db)?;
    let json = serde_json::to_string_pretty(&report.to_json()).expect("report serializes");
    std::fs::write(&args.out, json)
        .map_err(|e| Error::Io { path: args.out.display().to_string(), source: e })?;
    match report.map {
        Some(map) => println!("map={map:.4} queries={} excluded={}", report.queries, report.excluded_queries),
        None => println!("map=undefined queries={} excluded={}", report.queries, report.excluded_queries),
    }
    Ok(())
}
