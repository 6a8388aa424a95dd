use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use summcs::basis_pursuit::{solve_bp, BpOptions};
use summcs::bounds::{self, BinomialRule, BoundParams};
use summcs::harness::{self, ingest_stacked, ingest_summaries, Algorithm, ExperimentConfig, IngestOptions, ValueKind};
use summcs::mixmatch::{decode_mm, StackedCodebook};
use summcs::operator::encode;
use summcs::ssii::{decode_ssii, CompletionRule, SsiiOptions};
use summcs::{Codebook, Error, Result, SamplingMode, SparseSignal, ValueMode};

#[derive(Parser)]
#[command(name = "summcs", version, about = "Summary-codebook compressed sensing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a complete or random codebook as JSON.
    GenCodebook(GenCodebookArgs),
    /// Write a random sparse signal as JSON.
    GenSignal(GenSignalArgs),
    /// Encode a signal with a codebook into a measurement CSV.
    Encode(EncodeArgs),
    /// Recover a signal from a measurement CSV.
    Decode(DecodeArgs),
    /// Check a measurement CSV and report the codebook it implies.
    Ingest(IngestArgs),
    /// Run a Monte-Carlo experiment and write CSV rows.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Evaluate the recovery bounds.
    Bounds(BoundsArgs),
}

#[derive(Args)]
struct GenCodebookArgs {
    #[arg(long)]
    n: u8,
    #[arg(long)]
    d: usize,
    /// Number of random subsets; omit for the complete codebook.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Sampling::Dedup)]
    sampling: Sampling,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sampling {
    Dedup,
    Distinct,
}

impl From<Sampling> for SamplingMode {
    fn from(s: Sampling) -> Self {
        match s {
            Sampling::Dedup => SamplingMode::Dedup,
            Sampling::Distinct => SamplingMode::Distinct,
        }
    }
}

#[derive(Args)]
struct GenSignalArgs {
    #[arg(long)]
    n: u8,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ValueKind::Int)]
    values: ValueKind,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long)]
    signal: PathBuf,
    /// Append the complete (n,1) codebook as part 2, for Mix-and-Match.
    #[arg(long)]
    stacked: bool,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MeasurementInput {
    /// Measurement CSV (`subset,pattern,value[,weight][,part]`).
    #[arg(long, short = 'i')]
    input: PathBuf,
    /// Label width; defaults to the largest position in the file.
    #[arg(long)]
    n: Option<u8>,
    /// Mark absent rows as missing instead of failing.
    #[arg(long)]
    allow_partial: bool,
    /// Treat values as reals compared with this relative tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
}

impl MeasurementInput {
    fn options(&self) -> Result<IngestOptions> {
        let mode = self.tolerance.map(ValueMode::real).transpose()?;
        Ok(IngestOptions { n: self.n, allow_partial: self.allow_partial, mode })
    }
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, value_enum)]
    alg: Algorithm,
    #[command(flatten)]
    input: MeasurementInput,
    #[arg(long, value_enum, default_value_t = CompletionRule::Nonzero)]
    completion: CompletionRule,
    /// SSII pass budget; defaults to 4k + 16 with k the number of nonzero rows.
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    input: MeasurementInput,
    /// Read a stacked file with a `part` column.
    #[arg(long)]
    stacked: bool,
    /// Also write the implied codebook (part 1 when stacked) as JSON.
    #[arg(long)]
    codebook_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Minimal measurements reaching the success threshold (oversampling curve).
    Oversampling(ExperimentArgs),
    /// Success rate versus sparsity at fixed measurement counts.
    SuccessProb(ExperimentArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    seed: u64,
    /// JSON config; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    n: Vec<u8>,
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    d: Vec<usize>,
    #[arg(long)]
    m_max: Option<usize>,
    /// Measurement cap for the oversampling search.
    #[arg(long)]
    max_measurements: Option<usize>,
    /// Target measurement counts (success-prob).
    #[arg(long, value_delimiter = ',')]
    measurements: Vec<usize>,
    #[arg(long, value_enum)]
    alg: Option<Algorithm>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum)]
    values: Option<ValueKind>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long, value_enum)]
    sampling: Option<Sampling>,
    #[arg(long, value_enum)]
    completion: Option<CompletionRule>,
    /// Write 0 in the seconds column so reruns are byte-identical.
    #[arg(long)]
    omit_timing: bool,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let mut c: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
                c.seed = self.seed;
                c
            }
            None => ExperimentConfig::new(Vec::new(), Vec::new(), self.seed),
        };
        if !self.n.is_empty() {
            c.n = self.n.clone();
        }
        if !self.k.is_empty() {
            c.k = self.k.clone();
        }
        if !self.d.is_empty() {
            c.d = Some(self.d.clone());
        }
        if !self.measurements.is_empty() {
            c.measurements = self.measurements.clone();
        }
        c.m_max = self.m_max.or(c.m_max);
        c.max_measurements = self.max_measurements.or(c.max_measurements);
        c.algorithm = self.alg.unwrap_or(c.algorithm);
        c.trials = self.trials.unwrap_or(c.trials);
        c.threshold = self.threshold.unwrap_or(c.threshold);
        c.values = self.values.unwrap_or(c.values);
        c.tolerance = self.tolerance.unwrap_or(c.tolerance);
        c.sampling = self.sampling.map_or(c.sampling, Into::into);
        c.completion = self.completion.unwrap_or(c.completion);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct BoundsArgs {
    #[command(subcommand)]
    grid: Option<BoundsCommand>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    d: Option<u32>,
    #[arg(long)]
    m: Option<u32>,
    #[arg(long)]
    k: Option<u64>,
    #[arg(long, default_value_t = bounds::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = bounds::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, value_enum, default_value_t = Rule::Floor)]
    rule: Rule,
}

#[derive(Subcommand)]
enum BoundsCommand {
    /// CSV over the cartesian product of the given lists.
    Grid(GridArgs),
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<u32>,
    #[arg(long, value_delimiter = ',', required = true)]
    d: Vec<u32>,
    #[arg(long, value_delimiter = ',', required = true)]
    m: Vec<u32>,
    #[arg(long, value_delimiter = ',', required = true)]
    k: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.9")]
    lambda: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Rule::Floor)]
    rule: Rule,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    Floor,
    Gamma,
}

impl From<Rule> for BinomialRule {
    fn from(r: Rule) -> Self {
        match r {
            Rule::Floor => BinomialRule::Floor,
            Rule::Gamma => BinomialRule::Gamma,
        }
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_text(path: &Option<PathBuf>, text: &str) -> Result<()> {
    let mut out = output(path)?;
    writeln!(out, "{text}")?;
    out.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCodebook(a) => {
            let c = match a.m {
                None => Codebook::complete(a.n, a.d)?,
                Some(m) => Codebook::random(a.n, a.d, m, a.seed, a.sampling.into())?,
            };
            write_text(&a.out, &c.to_json()?)
        }
        Command::GenSignal(a) => {
            let mode = match a.values {
                ValueKind::Int => ValueMode::ExactInteger,
                ValueKind::Real => ValueMode::real(a.tolerance)?,
            };
            write_text(&a.out, &SparseSignal::generate(a.n, a.k, mode, a.seed)?.to_json()?)
        }
        Command::Encode(a) => {
            let codebook = Codebook::load(&a.codebook)?;
            let signal = SparseSignal::load(&a.signal)?;
            let mut out = output(&a.out)?;
            if a.stacked {
                let stacked = StackedCodebook::new(codebook)?;
                stacked.encode(&signal)?.write_csv(&mut out)?;
            } else {
                encode(&signal, &codebook)?.write_csv(&mut out)?;
            }
            out.flush()?;
            Ok(())
        }
        Command::Decode(a) => decode(a),
        Command::Ingest(a) => {
            let options = a.input.options()?;
            let report = if a.stacked {
                let got = ingest_stacked(open(&a.input.input)?, options)?;
                if let Some(p) = &a.codebook_out {
                    got.stacked.part1().save(p)?;
                }
                let c = got.stacked.part1();
                serde_json::json!({
                    "n": c.n(), "d": c.d(), "m": c.m(), "rows": got.stacked.rows(),
                    "missing": 0, "mode": got.mode.name(), "stacked": true,
                })
            } else {
                let got = ingest_summaries(open(&a.input.input)?, options)?;
                if let Some(p) = &a.codebook_out {
                    got.codebook.save(p)?;
                }
                let c = &got.codebook;
                let missing = got.missing.as_ref().map_or(0, |m| m.iter().filter(|&&x| x).count());
                serde_json::json!({
                    "n": c.n(), "d": c.d(), "m": c.m(), "rows": c.rows(),
                    "missing": missing, "mode": got.mode.name(), "stacked": false,
                })
            };
            write_text(&None, &serde_json::to_string_pretty(&report)?)
        }
        Command::Experiment(cmd) => {
            let (args, oversampling) = match &cmd {
                ExperimentCommand::Oversampling(a) => (a, true),
                ExperimentCommand::SuccessProb(a) => (a, false),
            };
            let config = args.config()?;
            let rows = if oversampling {
                harness::oversampling_curve(&config)?
            } else {
                harness::success_prob_curve(&config)?
            };
            let unsound: usize = rows.iter().map(|r| r.unsound).sum();
            let capacity: usize = rows.iter().map(|r| r.capacity_errors).sum();
            if unsound > 0 || capacity > 0 {
                eprintln!("warning: {unsound} unsound successes, {capacity} capacity errors");
            }
            let mut out = output(&args.out)?;
            harness::write_rows_csv(&rows, &mut out, args.omit_timing)?;
            out.flush()?;
            Ok(())
        }
        Command::Bounds(a) => match a.grid {
            Some(BoundsCommand::Grid(g)) => {
                let mut points = Vec::new();
                for &n in &g.n {
                    for &d in &g.d {
                        for &m in &g.m {
                            for &k in &g.k {
                                for &alpha in &g.alpha {
                                    for &lambda in &g.lambda {
                                        points.push(BoundParams { n, d, m, k, alpha, lambda, rule: g.rule.into() });
                                    }
                                }
                            }
                        }
                    }
                }
                let mut out = output(&g.out)?;
                bounds::write_grid_csv(points, &mut out)?;
                out.flush()?;
                Ok(())
            }
            None => {
                let (Some(n), Some(d), Some(m), Some(k)) = (a.n, a.d, a.m, a.k) else {
                    return Err(Error::InvalidArgument("bounds needs --n, --d, --m and --k".into()));
                };
                let params = BoundParams { n, d, m, k, alpha: a.alpha, lambda: a.lambda, rule: a.rule.into() };
                write_text(&None, &serde_json::to_string_pretty(&bounds::report(&params)?)?)
            }
        },
    }
}

fn decode(a: DecodeArgs) -> Result<()> {
    let options = a.input.options()?;
    let (signal, status) = match a.alg {
        Algorithm::Mm => {
            let got = ingest_stacked(open(&a.input.input)?, options)?;
            let y = got.measurements()?;
            let r = decode_mm(&y, &got.stacked)?;
            let line = r.status_line();
            (r.recovered, line)
        }
        Algorithm::Ssii => {
            let got = ingest_summaries(open(&a.input.input)?, options)?;
            let y = got.measurements()?;
            let mut opts = SsiiOptions::for_sparsity(y.nonzero_count()).with_completion(a.completion);
            if let Some(it) = a.max_iterations {
                opts.max_iterations = it;
            }
            let r = decode_ssii(&y, opts)?;
            let line = r.status_line();
            (r.recovered, line)
        }
        Algorithm::Bp => {
            let got = ingest_summaries(open(&a.input.input)?, options)?;
            let y = got.measurements()?;
            let s = solve_bp(&y, BpOptions::default())?;
            let line = format!("status=success objective={}", s.objective);
            (s.signal, line)
        }
    };
    write_text(&a.out, &signal.to_json()?)?;
    eprintln!("{status}");
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
