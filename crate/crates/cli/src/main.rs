use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ctprior::analysis::{classify_sample, corpus_stats};
use ctprior::dataset::{generate_corpus, to_json_line, write_paired_csv, write_series_csv, CorpusReader, PairedSample};
use ctprior::eval::{
    evaluate, predict_corpus, query_records, score_predictions_file, shuffled_control, EvalReport, MeanPredictor,
    OraclePredictor, Predictor, VarPredictor, DEFAULT_VAR_LAG,
};
use ctprior::prior::PriorConfig;
use ctprior::scm::{InterventionAction, Profile};
use ctprior::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "ctprior", version, about = "Generate, validate and evaluate paired causal time-series corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a corpus from the prior and write it to a .ctpr file.
    Generate {
        /// Prior configuration (TOML). Defaults are used when omitted.
        #[arg(long, conflicts_with = "ood")]
        config: Option<PathBuf>,
        #[arg(long, env = "CTP_SEED", default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        n: u64,
        /// Worker threads (default: available cores).
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Out-of-distribution preset: N in 8..=10, K = 3, dense graphs,
        /// strongly nonlinear activations only.
        #[arg(long)]
        ood: bool,
        /// Only hard interventions.
        #[arg(long)]
        hard_only: bool,
    },
    /// Print corpus statistics; exit 1 if any record diverged or is unreadable.
    Validate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Score a baseline, the oracle or a predictions file on a corpus.
    Evaluate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// `index,mean,std` lines, one per record.
        #[arg(long, required_if_eq("method", "predictions-file"))]
        predictions: Option<PathBuf>,
        /// Also report predictions under randomly moved intervention targets.
        #[arg(long)]
        shuffled_control: bool,
        /// Seed for the shuffled control.
        #[arg(long, env = "CTP_SEED", default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_VAR_LAG)]
        var_lag: usize,
        /// Let VAR rollouts leave the observed range of each variable.
        #[arg(long)]
        var_unbounded: bool,
        #[arg(long)]
        json: bool,
    },
    /// Describe one record; optionally write its paired series as CSV.
    Inspect {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        index: u64,
        /// CSV with columns t, obs_x0.., int_x0..
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
    /// Export records as JSON lines or per-series CSV.
    Export {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: ExportFormat,
        /// First record (jsonl) or the record to export (csv).
        #[arg(long, default_value_t = 0)]
        start: u64,
        /// One past the last record (jsonl; default: all).
        #[arg(long)]
        end: Option<u64>,
        /// Output file (jsonl, default stdout) or directory (csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Var,
    Mean,
    Oracle,
    PredictionsFile,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Jsonl,
    Csv,
}

enum Failure {
    Validation(String),
    Usage(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate {
            config,
            seed,
            n,
            workers,
            out,
            ood,
            hard_only,
        } => generate(config.as_deref(), seed, n, workers, &out, ood, hard_only),
        Command::Validate { input, json } => validate(&input, json),
        Command::Evaluate {
            input,
            method,
            predictions,
            shuffled_control,
            seed,
            var_lag,
            var_unbounded,
            json,
        } => evaluate_cmd(
            &input,
            method,
            predictions.as_deref(),
            shuffled_control,
            seed,
            VarPredictor {
                lag: var_lag,
                bounded: !var_unbounded,
            },
            json,
        ),
        Command::Inspect { input, index, csv_out } => inspect(&input, index, csv_out.as_deref()),
        Command::Export {
            input,
            format,
            start,
            end,
            out,
        } => export(&input, format, start, end, out.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("validation failed: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("i/o error: {msg}");
            ExitCode::from(EXIT_IO)
        }
    }
}

fn check_parent_dir(path: &Path) -> CliResult {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(Failure::Io(format!("output directory {} does not exist", parent.display())));
    }
    Ok(())
}

fn open_corpus(path: &Path) -> Result<CorpusReader, Failure> {
    if !path.is_file() {
        return Err(Failure::Io(format!("cannot read {}", path.display())));
    }
    Ok(CorpusReader::open(path)?)
}

fn generate(config: Option<&Path>, seed: u64, n: u64, workers: Option<usize>, out: &Path, ood: bool, hard_only: bool) -> CliResult {
    check_parent_dir(out)?;
    if n == 0 {
        return Err(Failure::Usage("--n must be at least 1".into()));
    }
    let mut cfg = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
            PriorConfig::from_toml(&text)?
        }
        None if ood => PriorConfig::ood(),
        None => PriorConfig::default(),
    };
    if hard_only {
        cfg = cfg.hard_only();
    }
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let summary = generate_corpus(&cfg, seed, n, workers, out)?;
    println!("wrote {} records to {} ({} bytes)", summary.count, out.display(), summary.bytes);
    println!("seed {seed}, {workers} workers, {:.2}s", summary.seconds);
    println!("diverged records: {}", summary.diverged);
    Ok(())
}

fn validate(input: &Path, json: bool) -> CliResult {
    let reader = open_corpus(input)?;
    let stats = corpus_stats(&reader);
    if json {
        println!("{}", stats.to_json());
    } else {
        print!("{stats}");
    }
    if stats.diverged_records > 0 || stats.unreadable_records > 0 {
        return Err(Failure::Validation(format!(
            "{} diverged and {} unreadable records",
            stats.diverged_records, stats.unreadable_records
        )));
    }
    Ok(())
}

fn print_report(report: &EvalReport, json: bool) {
    if json {
        println!("{}", report.to_json());
    } else {
        println!("{report}");
    }
}

fn evaluate_cmd(
    input: &Path,
    method: Method,
    predictions: Option<&Path>,
    shuffled: bool,
    seed: u64,
    var: VarPredictor,
    json: bool,
) -> CliResult {
    let reader = open_corpus(input)?;
    let predictor: Box<dyn Predictor> = match method {
        Method::Var => Box::new(var),
        Method::Mean => Box::new(MeanPredictor),
        Method::Oracle => Box::new(OraclePredictor { cfg: reader.config()? }),
        Method::PredictionsFile => {
            if shuffled {
                return Err(Failure::Usage("a predictions file cannot be re-run under shuffled targets".into()));
            }
            let path = predictions.ok_or_else(|| Failure::Usage("--predictions is required".into()))?;
            if !path.is_file() {
                return Err(Failure::Io(format!("cannot read {}", path.display())));
            }
            print_report(&score_predictions_file(&reader, path)?, json);
            return Ok(());
        }
    };
    if shuffled {
        let (normal, moved) = shuffled_control(&reader, predictor.as_ref(), seed)?;
        print_report(&normal, json);
        print_report(&moved, json);
    } else {
        let records = query_records(&reader)?;
        let preds = predict_corpus(&reader, predictor.as_ref())?;
        print_report(&evaluate(&predictor.name(), &records, &preds)?, json);
    }
    Ok(())
}

fn describe(s: &PairedSample, out: &mut impl Write) -> io::Result<()> {
    let m = &s.model;
    writeln!(out, "seed {}", s.seed)?;
    writeln!(
        out,
        "family {}, N = {}, K = {}, T = {}, regimes = {}",
        m.family().name(),
        m.n_vars(),
        m.max_lag(),
        s.seq_len(),
        m.n_regimes()
    )?;
    if let Some(p) = m.edge_prob() {
        writeln!(out, "edge probability {p:.4}")?;
    }
    for r in 0..m.n_regimes() {
        if m.is_switching() {
            writeln!(out, "regime {r}:")?;
        }
        let g = m.regime_graph(r);
        writeln!(out, "  topological order {:?}", g.topo_order)?;
        writeln!(out, "  edges ({}):", g.edge_count())?;
        for lag in 0..=g.max_lag {
            for from in 0..g.n_vars {
                for to in 0..g.n_vars {
                    if g.edge(lag, from, to) {
                        writeln!(out, "    x{from}[t-{lag}] -> x{to}[t]")?;
                    }
                }
            }
        }
        writeln!(out, "  mechanisms:")?;
        for (i, mech) in m.regime_mechanisms(r).iter().enumerate() {
            let terms: Vec<String> = mech
                .parents
                .iter()
                .zip(&mech.weights)
                .zip(&mech.activations)
                .map(|((p, w), a)| format!("{w:+.4}*{}(x{}[t-{}])", a.name(), p.var, p.lag))
                .chain(std::iter::once(format!("{:+.4}", mech.bias)))
                .collect();
            writeln!(out, "    x{i}[t] = {} + eps", terms.join(" "))?;
        }
    }
    if let Some(tr) = m.transition() {
        writeln!(out, "transition matrix {tr:?}")?;
    }
    let noise: Vec<String> = m
        .noise()
        .iter()
        .enumerate()
        .map(|(i, n)| format!("x{i}: {:?}({:.4})", n.family, n.scale))
        .collect();
    writeln!(out, "noise {}", noise.join(", "))?;

    let spec = &s.intervention;
    writeln!(
        out,
        "intervention {} on {:?} at t = {}..={}",
        spec.kind().name(),
        spec.targets,
        spec.times[0],
        spec.times[spec.times.len() - 1]
    )?;
    match &spec.action {
        InterventionAction::Hard { value } => writeln!(out, "  value {value}")?,
        InterventionAction::Soft { shifts } => writeln!(out, "  shifts {shifts:?}")?,
        InterventionAction::TimeVarying { profile, .. } => match profile {
            Profile::Step { level } => writeln!(out, "  profile step level {level}")?,
            Profile::Ramp { start, end } => writeln!(out, "  profile ramp {start} -> {end}")?,
            Profile::Sinusoidal { amplitude, period } => {
                writeln!(out, "  profile sinusoidal amplitude {amplitude} period {period}")?
            }
            Profile::Sampled => writeln!(out, "  profile sampled")?,
        },
    }
    writeln!(out, "  intervened cells (t, var, obs, int):")?;
    for &t in &spec.times {
        for &v in &spec.targets {
            writeln!(out, "    {t:>4} x{v:<3} {:>14} {:>14}", s.obs.get(t, v), s.int.get(t, v))?;
        }
    }
    writeln!(
        out,
        "query x{} at t = {}: target {}, observational {}, class {}",
        s.query.var,
        s.query.time,
        s.query.target,
        s.obs.get(s.query.time, s.query.var),
        classify_sample(s)
    )
}

fn inspect(input: &Path, index: u64, csv_out: Option<&Path>) -> CliResult {
    if let Some(path) = csv_out {
        check_parent_dir(path)?;
    }
    let reader = open_corpus(input)?;
    let sample = reader.read_record(index)?;
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    describe(&sample, &mut out)?;
    out.flush()?;
    if let Some(path) = csv_out {
        let mut file = BufWriter::new(File::create(path)?);
        write_paired_csv(&sample, &mut file)?;
        file.flush()?;
    }
    Ok(())
}

fn export(input: &Path, format: ExportFormat, start: u64, end: Option<u64>, out: Option<&Path>) -> CliResult {
    let reader = open_corpus(input)?;
    match format {
        ExportFormat::Jsonl => {
            let end = end.unwrap_or(reader.len());
            if start > end || end > reader.len() {
                return Err(Failure::Usage(format!(
                    "range {start}..{end} out of bounds for {} records",
                    reader.len()
                )));
            }
            let mut sink: Box<dyn Write> = match out {
                Some(path) => {
                    check_parent_dir(path)?;
                    Box::new(BufWriter::new(File::create(path)?))
                }
                None => Box::new(BufWriter::new(io::stdout().lock())),
            };
            for i in start..end {
                writeln!(sink, "{}", to_json_line(&reader.read_record(i)?))?;
            }
            sink.flush()?;
        }
        ExportFormat::Csv => {
            let dir = out.ok_or_else(|| Failure::Usage("--out <DIR> is required for csv export".into()))?;
            if !dir.is_dir() {
                return Err(Failure::Io(format!("{} is not a directory", dir.display())));
            }
            let sample = reader.read_record(start)?;
            for (name, series) in [("obs", &sample.obs), ("int", &sample.int)] {
                let path = dir.join(format!("record{start}_{name}.csv"));
                let mut file = BufWriter::new(File::create(&path)?);
                write_series_csv(series, &mut file)?;
                file.flush()?;
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}
