use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use fts_conformal::backtest::{calibrate_horizons, origin_forecasts, SchemeKind};
use fts_conformal::fda::DEFAULT_EVR_TAU;
use fts_conformal::io::report::g6;
use fts_conformal::io::{
    load_series, write_report, write_wide, Conversion, InputFormat, LoadOptions, Sex, DEFAULT_TOP_AGE,
};
use fts_conformal::split::CoverageTarget;
use fts_conformal::{
    run_backtest, synth_generate, Error, FunctionalSeries, KRule, MethodChoice, RunConfig, ScaleStat, SplitSpec,
    SynthSpec, Tuning, WindowScheme,
};

/// Functional time-series forecasts with conformal prediction intervals.
#[derive(Debug, Parser)]
#[command(name = "ftsconf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full backtest and write the report files.
    Backtest(RunArgs),
    /// Calibrate split-conformal bands on the validation phase and print them.
    Calibrate(RunArgs),
    /// Run the sequential method only and write the report files.
    Sequential(RunArgs),
    /// Write a synthetic log-rate series as wide CSV.
    Synth(SynthArgs),
    /// Load a data file and report what ingestion did.
    ValidateData(DataArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Mortality file: HMD 1x1 period rates or wide CSV.
    #[arg(long)]
    input: PathBuf,
    /// Input layout.
    #[arg(long, default_value = "auto")]
    format: InputFormat,
    /// Wide CSV values are already log rates.
    #[arg(long)]
    log_input: bool,
    #[arg(long, default_value = "total")]
    sex: Sex,
    /// Ages at and above this are pooled into one group (HMD input).
    #[arg(long, default_value_t = DEFAULT_TOP_AGE)]
    top_age: u32,
    /// Train, validation and test years as `Y1:Y2,Y3:Y4,Y5:Y6`, or `auto` for 60/20/20.
    #[arg(long, default_value = "auto", value_parser = parse_split)]
    split: SplitArg,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    /// `split`, `sequential` or `both`.
    #[arg(long, default_value = "split")]
    method: MethodChoice,
    /// Scale statistic (`sd`, `iqr`, `mad`, `quant`); repeatable.
    #[arg(long = "stat")]
    stats: Vec<ScaleStat>,
    /// Miscoverage level; repeatable.
    #[arg(long = "alpha")]
    alphas: Vec<f64>,
    /// `expanding` or `rolling`.
    #[arg(long, default_value = "expanding")]
    scheme: SchemeKind,
    /// Rolling window length; defaults to the first window of each phase.
    #[arg(long)]
    rolling_length: Option<usize>,
    /// Number of components: `evr` or a fixed integer.
    #[arg(long = "k", default_value = "evr")]
    k: String,
    /// Eigenvalue threshold of the `evr` rule.
    #[arg(long, default_value_t = DEFAULT_EVR_TAU)]
    tau: f64,
    /// `single` or `double` band multipliers.
    #[arg(long, default_value = "single")]
    tuning: Tuning,
    /// Smooth the multipliers to be nondecreasing in the horizon.
    #[arg(long)]
    isotonic: bool,
    /// Calibration target: `pointwise` cells or whole-curve `band`.
    #[arg(long, default_value = "pointwise")]
    coverage: CoverageTarget,
    /// Largest horizon; defaults to min(20, test length).
    #[arg(long)]
    horizons: Option<usize>,
    /// Keep the FPCA basis of the first test origin for sequential forecasts.
    #[arg(long)]
    freeze_fpca: bool,
    /// Recorded in the configuration; the pipeline itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report directory.
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Number of years.
    #[arg(long, default_value_t = 101)]
    n: usize,
    /// Number of integer ages.
    #[arg(long, default_value_t = 50)]
    ages: usize,
    #[arg(long, default_value_t = 3)]
    k_true: usize,
    /// AR(1) coefficient shared by all components.
    #[arg(long, default_value_t = 0.5)]
    ar: f64,
    /// Innovation sd of the first component; component k uses innov_sd / k.
    #[arg(long, default_value_t = 1.0)]
    innov_sd: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1921)]
    start_year: i32,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
enum SplitArg {
    Auto,
    Years(SplitSpec),
}

fn parse_split(s: &str) -> Result<SplitArg, Error> {
    if s.eq_ignore_ascii_case("auto") {
        Ok(SplitArg::Auto)
    } else {
        s.parse().map(SplitArg::Years)
    }
}

/// Command failures with the exit code they map to.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidInput(_) | Error::InvalidK { .. } => Failure::Usage(msg),
            Error::Alignment { .. } | Error::InsufficientData { .. } | Error::Io(_) => Failure::Data(msg),
            ref e if e.is_data_error() => Failure::Data(msg),
            _ => Failure::Numeric(msg),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl RunArgs {
    fn k_rule(&self) -> Result<KRule, Failure> {
        if self.k.eq_ignore_ascii_case("evr") {
            return Ok(KRule::Evr { tau: self.tau, k_max: None });
        }
        match self.k.parse::<usize>() {
            Ok(k) if k > 0 => Ok(KRule::Fixed(k)),
            _ => Err(Failure::Usage(format!("--k expects 'evr' or a positive integer, got '{}'", self.k))),
        }
    }

    fn config(&self, method: MethodChoice) -> Result<RunConfig, Failure> {
        let cfg = RunConfig {
            input: self.data.input.clone(),
            format: self.data.format,
            log_input: self.data.log_input,
            sex: self.data.sex,
            top_age: self.data.top_age,
            method,
            stats: if self.stats.is_empty() { vec![ScaleStat::Sd] } else { self.stats.clone() },
            alphas: if self.alphas.is_empty() { vec![0.2] } else { self.alphas.clone() },
            scheme: WindowScheme { kind: self.scheme, rolling_length: self.rolling_length },
            k_rule: self.k_rule()?,
            split: match self.data.split {
                SplitArg::Auto => None,
                SplitArg::Years(s) => Some(s),
            },
            tuning: self.tuning,
            isotonic: self.isotonic,
            coverage: self.coverage,
            max_horizon: self.horizons,
            refresh_fpca: !self.freeze_fpca,
            seed: self.seed,
            out: self.out.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load(path: &Path, opts: &LoadOptions) -> Result<Conversion, Failure> {
    load_series(path, opts).map_err(|e| match e {
        Error::Io(io) => Failure::Data(format!("{}: {io}", path.display())),
        e => e.into(),
    })
}

fn backtest(args: &RunArgs, method: MethodChoice) -> Result<(), Failure> {
    let cfg = args.config(method)?;
    let data = load(&cfg.input, &cfg.load_options())?;
    let output = run_backtest(&data.series, &cfg.backtest())?;
    let written = write_report(&output, &cfg.sex.to_string(), &cfg, &cfg.out)?;
    let mut out = io::stdout().lock();
    let r = &output.report;
    writeln!(out, "split {}, horizons 1..={}", r.split, r.max_horizon)?;
    for v in &r.variants {
        let ecp: Vec<String> = v.horizons.iter().map(|m| g6(m.ecp)).collect();
        writeln!(
            out,
            "{} alpha={} stat={}: ecp by h [{}]",
            v.variant.method,
            g6(v.variant.alpha),
            v.variant.stat_label(),
            ecp.join(", ")
        )?;
        for s in &v.skipped {
            writeln!(out, "  skipped h={}: {}", s.h, s.reason)?;
        }
    }
    writeln!(out, "wrote {} files to {}", written.len(), cfg.out.display())?;
    Ok(())
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn calibrate(args: &RunArgs) -> Result<(), Failure> {
    let cfg = args.config(MethodChoice::Split)?;
    let data = load(&cfg.input, &cfg.load_options())?;
    let bt = cfg.backtest();
    let split = bt.resolve_split(&data.series)?;
    let h_max = bt.resolve_horizons(&split);
    let fc = origin_forecasts(&data.series, &split, &bt, h_max)?;
    let mut out = io::stdout().lock();
    writeln!(out, "split {split}")?;
    for &stat in &cfg.stats {
        for &alpha in &cfg.alphas {
            let (cals, skipped) = calibrate_horizons(&data.series, fc.validation(), h_max, stat, alpha, &bt, &split)?;
            writeln!(out, "\nstat={stat} alpha={}", g6(alpha))?;
            writeln!(out, "h,n_curves,gamma_min,gamma_median,gamma_max,xi_lower,xi_upper,validation_ecp")?;
            for c in &cals {
                let g = c.scale.effective();
                let min = g.iter().copied().fold(f64::INFINITY, f64::min);
                let max = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    c.horizon,
                    c.n_curves,
                    g6(min),
                    g6(median(&g)),
                    g6(max),
                    g6(c.xi.lower),
                    g6(c.xi.upper),
                    g6(c.achieved_ecp)
                )?;
            }
            for s in &skipped {
                writeln!(out, "# skipped h={}: {}", s.h, s.reason)?;
            }
        }
    }
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<(), Failure> {
    let mut spec = SynthSpec::simple(args.n, args.ages, args.k_true, args.ar, args.innov_sd, args.noise, args.seed);
    spec.first_year = args.start_year;
    let series = synth_generate(&spec)?;
    match &args.out {
        Some(path) => write_series(&series, path),
        None => Ok(write_wide(&series, io::stdout().lock())?),
    }
}

fn write_series(series: &FunctionalSeries, path: &Path) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    write_wide(series, BufWriter::new(file))?;
    Ok(())
}

fn validate_data(args: &DataArgs) -> Result<(), Failure> {
    let opts = LoadOptions { format: args.format, sex: args.sex, log_input: args.log_input, top_age: args.top_age };
    let data = load(&args.input, &opts)?;
    let s = &data.series;
    let split = match args.split {
        SplitArg::Auto => SplitSpec::auto(s.first_year(), s.last_year())?,
        SplitArg::Years(sp) => sp,
    };
    split.check_against(s)?;
    let mut out = io::stdout().lock();
    writeln!(out, "years {}:{} ({} curves)", s.first_year(), s.last_year(), s.n_years())?;
    let ages = s.grid().ages();
    writeln!(out, "ages {}..{} ({} points)", g6(ages[0]), g6(ages[ages.len() - 1]), ages.len())?;
    writeln!(out, "imputed cells {}", data.imputed.len())?;
    writeln!(out, "split {split}")?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Backtest(a) => backtest(a, a.method),
        Command::Sequential(a) => backtest(a, MethodChoice::Sequential),
        Command::Calibrate(a) => calibrate(a),
        Command::Synth(a) => synth(a),
        Command::ValidateData(a) => validate_data(a),
    }
}

/// Prints a parse error followed by the usage of the offending subcommand.
fn usage_error(e: clap::Error) -> ! {
    if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
        e.exit();
    }
    let _ = e.print();
    if e.render().to_string().contains("Usage:") {
        std::process::exit(2);
    }
    let mut cmd = Cli::command();
    cmd.build();
    let sub = std::env::args().nth(1).and_then(|name| cmd.find_subcommand(&name).cloned());
    let usage = match sub {
        Some(mut sub) => sub.render_usage(),
        None => cmd.render_usage(),
    };
    eprintln!("\n{usage}");
    std::process::exit(2);
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => usage_error(e),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Usage(m) => (2, m),
                Failure::Data(m) => (3, m),
                Failure::Numeric(m) => (4, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
