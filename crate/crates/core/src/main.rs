use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use sncov::clt::{contour_cov, contour_mean, log_limit_moments, moment_mu, moment_sigma2, ContourSpec};
use sncov::datagen::{gen_panel, GenModel, ModelKind, SigmaSpec};
use sncov::empirical::{
    load_factors, load_returns, residual_norm_series, rolling_diag_test, summarize_reports, FactorModel,
};
use sncov::montecarlo::{render_table, run_design, ExperimentConfig, Layout, TableId, DEFAULT_REPLICATIONS};
use sncov::mp::{density, mp_moment, stieltjes_m_underline, ComplexPoint};
use sncov::panel_io::{read_matrix_csv, write_matrix_csv};
use sncov::spectra::{ObservationMatrix, SpectralFunction};
use sncov::sphericity::{test_proportional_to, TargetSpec, TestKind};
use sncov::{Error, Result};

const DEFAULT_SEED: u64 = 42;

/// Sphericity tests built on self-normalized sample covariance matrices.
#[derive(Parser, Debug)]
#[command(name = "sncov", version, about)]
struct Cli {
    /// Master random seed [default: 42]
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads [default: logical cores]
    #[arg(long, global = true, env = "SNCOV_THREADS")]
    threads: Option<usize>,

    /// Log level: error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Marčenko–Pastur law quantities
    #[command(subcommand)]
    Mp(MpCommand),
    /// Simulate a panel and write it as CSV (p rows, n columns)
    Gen(GenArgs),
    /// Run a sphericity test on a CSV panel
    Test(TestArgs),
    /// Monte Carlo size and power experiments
    Simulate(SimulateArgs),
    /// Compare closed-form CLT constants with contour quadrature
    VerifyClt(VerifyArgs),
    /// Rolling factor-residual test on return data
    Empirical(EmpiricalArgs),
}

#[derive(Subcommand, Debug)]
enum MpCommand {
    /// k-th moment of the law
    Moment {
        /// Moment order
        #[arg(long)]
        k: u32,
        /// Dimension-to-sample-size ratio p/n
        #[arg(long)]
        y: f64,
    },
    /// Density at x (the atom at 0 is excluded)
    Density {
        /// Evaluation point
        #[arg(long)]
        x: f64,
        /// Dimension-to-sample-size ratio p/n
        #[arg(long)]
        y: f64,
    },
    /// Companion Stieltjes transform at re + i im; prints real then imaginary part
    Stieltjes {
        /// Real part of z
        #[arg(long, allow_hyphen_values = true)]
        re: f64,
        /// Imaginary part of z (nonzero)
        #[arg(long, allow_hyphen_values = true)]
        im: f64,
        /// Dimension-to-sample-size ratio p/n
        #[arg(long)]
        y: f64,
    },
}

#[derive(Args, Debug)]
struct GenArgs {
    /// iid, elliptical or garch-t4
    #[arg(long)]
    model: ModelKind,
    /// Dimension (rows)
    #[arg(long)]
    p: usize,
    /// Sample size (columns)
    #[arg(long)]
    n: usize,
    /// identity or toeplitz:<rho>
    #[arg(long, default_value = "identity")]
    sigma: SigmaSpec,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TestArgs {
    /// Headerless CSV with p rows and n columns
    #[arg(long)]
    input: PathBuf,
    /// lr-sn, jhn-sn or moment:k
    #[arg(long)]
    test: TestKind,
    /// Significance level
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// identity, diag:<file.csv> or full:<file.csv>
    #[arg(long, default_value = "identity")]
    target: String,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// table3, table4, table5, table6 or a JSON experiment file
    #[arg(long)]
    design: String,
    /// Replications per cell [default: 2000 or the file's value]
    #[arg(long)]
    reps: Option<usize>,
    /// Write the JSON report here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the rejection-rate table
    #[arg(long)]
    render: bool,
    /// Include wall-clock time in the report
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// power:k or log
    #[arg(long = "f")]
    function: SpectralFunction,
    /// Dimension-to-sample-size ratio p/n
    #[arg(long)]
    y: f64,
    /// Radius of the inner circle; the outer one is 1.3 times larger
    #[arg(long)]
    radius: Option<f64>,
    /// Quadrature nodes per circle
    #[arg(long)]
    nodes: Option<usize>,
}

#[derive(Args, Debug)]
struct EmpiricalArgs {
    /// CSV with header date,ticker1,...,tickerP
    #[arg(long)]
    returns: PathBuf,
    /// CSV with header date,mktrf[,smb,hml]
    #[arg(long)]
    factors: PathBuf,
    /// capm or ff3
    #[arg(long)]
    model: FactorModel,
    /// Significance level
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Output JSON path
    #[arg(long)]
    out: PathBuf,
    /// Also write daily residual norms as CSV
    #[arg(long)]
    norms: Option<PathBuf>,
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e }),
        None => {
            std::io::stdout().write_all(text.as_bytes()).ok();
            Ok(())
        }
    }
}

fn parse_target(spec: &str, p: usize) -> Result<TargetSpec> {
    if spec.eq_ignore_ascii_case("identity") {
        return Ok(TargetSpec::Identity);
    }
    let (kind, file) = spec
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("unknown target '{spec}' (expected identity, diag:<file> or full:<file>)")))?;
    let m = read_matrix_csv(Path::new(file))?;
    match kind.to_ascii_lowercase().as_str() {
        "diag" => {
            if m.nrows() != 1 && m.ncols() != 1 {
                return Err(Error::Config(format!("diagonal target file must be one row or one column, got {}x{}", m.nrows(), m.ncols())));
            }
            Ok(TargetSpec::Diagonal(m.iter().copied().collect()))
        }
        "full" => {
            if m.shape() != (p, p) {
                return Err(Error::Config(format!("full target must be {p}x{p}, got {}x{}", m.nrows(), m.ncols())));
            }
            Ok(TargetSpec::FullPsd(m))
        }
        other => Err(Error::Config(format!("unknown target kind '{other}'"))),
    }
}

fn run_mp(cmd: MpCommand) -> Result<()> {
    match cmd {
        MpCommand::Moment { k, y } => {
            if !(y > 0.0) {
                return Err(Error::Domain(format!("y must be positive, got {y}")));
            }
            println!("{}", mp_moment(k, y)?);
        }
        MpCommand::Density { x, y } => {
            if !(y > 0.0) {
                return Err(Error::Domain(format!("y must be positive, got {y}")));
            }
            println!("{}", density(x, y));
        }
        MpCommand::Stieltjes { re, im, y } => {
            let m = stieltjes_m_underline(ComplexPoint::new(re, im), y)?;
            println!("{}", m.re);
            println!("{}", m.im);
        }
    }
    Ok(())
}

fn run_gen(args: GenArgs, seed: u64) -> Result<()> {
    let obs = gen_panel(&GenModel {
        kind: args.model,
        sigma: args.sigma,
        p: args.p,
        n: args.n,
        seed,
    })?;
    write_matrix_csv(&args.out, obs.data())
}

fn run_test_cmd(args: TestArgs) -> Result<()> {
    let data = read_matrix_csv(&args.input)?;
    let obs = ObservationMatrix::new(data)?;
    let target = parse_target(&args.target, obs.p())?;
    let report = test_proportional_to(&obs, &target, args.test, args.alpha)?;
    write_json(&report, args.out.as_deref())
}

fn run_simulate(args: SimulateArgs, seed: Option<u64>, threads: usize) -> Result<()> {
    let (name, configs, layout) = match args.design.parse::<TableId>() {
        Ok(id) => {
            let reps = args.reps.unwrap_or(DEFAULT_REPLICATIONS);
            (id.name().to_string(), id.configs(reps, seed.unwrap_or(DEFAULT_SEED)), Layout::Table(id))
        }
        Err(_) if args.design.ends_with(".json") || Path::new(&args.design).is_file() => {
            let path = Path::new(&args.design);
            let mut configs = ExperimentConfig::from_json_file(path)?;
            for c in &mut configs {
                if let Some(r) = args.reps {
                    c.replications = r;
                }
                if let Some(s) = seed {
                    c.master_seed = s;
                }
            }
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (name, configs, Layout::Custom)
        }
        Err(e) => return Err(e),
    };
    let start = std::time::Instant::now();
    let mut report = run_design(&name, &configs, threads)?;
    let elapsed = start.elapsed().as_secs_f64();
    eprintln!("{name}: {} cells in {elapsed:.2} s on {threads} thread(s)", report.cells.len());
    if args.timing {
        report.wall_time_secs = Some(elapsed);
    }
    if args.out.is_some() || !args.render {
        write_json(&report, args.out.as_deref())?;
    }
    if args.render {
        print!("{}", render_table(&report, layout)?);
    }
    Ok(())
}

#[derive(Serialize)]
struct Comparison {
    closed_form: f64,
    contour: f64,
    abs_diff: f64,
}

impl Comparison {
    fn new(closed_form: f64, contour: f64) -> Self {
        Comparison { closed_form, contour, abs_diff: (closed_form - contour).abs() }
    }
}

#[derive(Serialize)]
struct Verification {
    function: String,
    y: f64,
    inner: ContourSpec,
    outer: ContourSpec,
    mean: Comparison,
    variance: Comparison,
}

fn run_verify(args: VerifyArgs) -> Result<()> {
    let f = args.function;
    let y = args.y;
    let (mut inner, mut outer) = ContourSpec::default_pair(f, y)?;
    if let Some(r) = args.radius {
        inner.radius = r;
        outer = ContourSpec { center_re: inner.center_re, radius: 1.3 * r, nodes: outer.nodes };
    }
    if let Some(nodes) = args.nodes {
        inner.nodes = nodes;
        outer.nodes = nodes;
    }
    let (mean, var) = match f {
        SpectralFunction::Log => log_limit_moments(y)?,
        SpectralFunction::Power(k) => (moment_mu(k, y)?, moment_sigma2(k, y)?),
    };
    let report = Verification {
        function: f.to_string(),
        y,
        inner,
        outer,
        mean: Comparison::new(mean, contour_mean(f, y, &inner)?),
        variance: Comparison::new(var, contour_cov(f, f, y, &inner, &outer)?),
    };
    write_json(&report, None)
}

#[derive(Serialize)]
struct EmpiricalOutput {
    model: FactorModel,
    results: Vec<sncov::empirical::RollingResult>,
    skipped: Vec<sncov::empirical::SkippedMonth>,
    summary: sncov::empirical::Summary,
}

fn run_empirical(args: EmpiricalArgs) -> Result<()> {
    let returns = load_returns(&args.returns)?;
    let factors = load_factors(&args.factors)?;
    let out = rolling_diag_test(&returns, &factors, args.model, args.alpha)?;
    let summary = summarize_reports(&out.results)?;
    info!("{} months tested, {} skipped", out.results.len(), out.skipped.len());
    write_json(
        &EmpiricalOutput { model: args.model, results: out.results, skipped: out.skipped, summary },
        Some(&args.out),
    )?;
    if let Some(path) = args.norms {
        let norms = residual_norm_series(&returns, &factors, args.model)?;
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Parse { path: path.clone(), message: e.to_string() })?;
        let io_err = |e: csv::Error| Error::Parse { path: path.clone(), message: e.to_string() };
        w.write_record(["date", "norm"]).map_err(io_err)?;
        for d in norms {
            w.write_record([d.date.to_string(), format!("{:e}", d.norm)]).map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::Io { path: path.clone(), source: e })?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    if threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    match cli.command {
        Command::Mp(cmd) => run_mp(cmd),
        Command::Gen(args) => run_gen(args, cli.seed.unwrap_or(DEFAULT_SEED)),
        Command::Test(args) => run_test_cmd(args),
        Command::Simulate(args) => run_simulate(args, cli.seed, threads),
        Command::VerifyClt(args) => run_verify(args),
        Command::Empirical(args) => run_empirical(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
