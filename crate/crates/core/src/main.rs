use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mpcsbl::bench::io::{write_summary_csv, write_trials_csv, InstanceFile, InstanceMetadata};
use mpcsbl::bench::{nmse, run_plan, solve_instance, solver_defaults, ExperimentPlan, Method, SweepKind};
use mpcsbl::datagen::{gen_instance, GenSpec};
use mpcsbl::model::{LambdaInit, SolverConfig};
use mpcsbl::msbl::MsblConfig;
use mpcsbl::selfcheck::run_selfcheck;
use mpcsbl::{Error, Execution};

#[derive(Parser)]
#[command(name = "mpcsbl", version, about = "Block-sparse MMV recovery with pattern-coupled sparse Bayesian learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic problem instance and write it as JSON.
    Gen(GenArgs),
    /// Run one method on an instance file.
    Solve(SolveArgs),
    /// Run a Monte-Carlo sweep and write the aggregate CSV.
    Bench(BenchArgs),
    /// Run the randomized consistency checks.
    Selfcheck(SelfcheckArgs),
}

/// SNR in dB; `None` is noiseless. Wrapped so clap does not read the
/// `Option` as "flag may be absent".
#[derive(Clone, Copy)]
struct Snr(Option<f64>);

/// Parses `noiseless` or a dB value.
fn parse_snr(s: &str) -> Result<Snr, String> {
    if s.eq_ignore_ascii_case("noiseless") || s.eq_ignore_ascii_case("inf") {
        return Ok(Snr(None));
    }
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(|v| Snr(Some(v)))
        .ok_or_else(|| format!("expected a dB value or 'noiseless', got '{s}'"))
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 25)]
    m: usize,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    l: usize,
    #[arg(long, default_value_t = 16)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    num_blocks: usize,
    /// SNR in dB, or `noiseless`.
    #[arg(long, value_parser = parse_snr, default_value = "noiseless")]
    snr: Snr,
    #[arg(long)]
    normalize_columns: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Mpcsbl,
    Msbl,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Mpcsbl => Method::Mpcsbl,
            MethodArg::Msbl => Method::Msbl,
        }
    }
}

#[derive(Args)]
struct SolverArgs {
    /// Relative-change stopping threshold (default 1e-6).
    #[arg(long)]
    tol: Option<f64>,
    /// Iteration cap (default 500; 2000 for noiseless bench sweeps).
    #[arg(long)]
    max_iter: Option<usize>,
    /// Fixed noise precision; disables noise learning.
    #[arg(long)]
    lambda: Option<f64>,
}

impl SolverArgs {
    /// Applies the flags that were given on top of the template configs.
    fn apply(&self, solver: &mut SolverConfig, msbl: &mut MsblConfig) {
        if let Some(tol) = self.tol {
            solver.tol = tol;
            msbl.tol = tol;
        }
        if let Some(max_iter) = self.max_iter {
            solver.max_iter = max_iter;
            msbl.max_iter = max_iter;
        }
        if let Some(v) = self.lambda {
            solver.lambda_init = LambdaInit::Fixed(v);
            solver.noise_learning = false;
            msbl.lambda_init = LambdaInit::Fixed(v);
            msbl.noise_learning = false;
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, value_enum, default_value = "mpcsbl")]
    method: MethodArg,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long)]
    input: PathBuf,
    /// Write the estimate as JSON (row-major) to this path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    /// Success rate against N/M (noiseless).
    Ratio,
    /// Success rate against the nonzero row count K (noiseless).
    Sparsity,
    /// NMSE against SNR.
    Snr,
}

/// Comma-separated reals, parsed as one value.
#[derive(Clone)]
struct RealList(Vec<f64>);

fn parse_list(s: &str) -> Result<RealList, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
        .collect::<Result<_, _>>()
        .map(RealList)
}

#[derive(Args)]
struct BenchArgs {
    #[arg(value_enum)]
    sweep: SweepArg,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_list, default_value = "0,0.5,1")]
    betas: RealList,
    /// Sweep values; defaults depend on the sweep.
    #[arg(long, value_parser = parse_list)]
    values: Option<RealList>,
    /// SNR for the ratio and sparsity sweeps (default noiseless).
    #[arg(long, value_parser = parse_snr)]
    snr: Option<Snr>,
    #[arg(long, default_value_t = 4)]
    num_blocks: usize,
    #[arg(long)]
    normalize_columns: bool,
    #[arg(long, default_value_t = 1e-4)]
    success_nmse: f64,
    #[arg(long, default_value = "mpcsbl,msbl", value_delimiter = ',')]
    methods: Vec<MethodArg>,
    /// Worker threads; 0 means one per core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Aggregate CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-trial CSV path.
    #[arg(long)]
    trials_out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct SelfcheckArgs {
    #[arg(long, default_value_t = 200)]
    cases: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn cmd_gen(args: GenArgs) -> Result<(), Error> {
    let spec = GenSpec {
        m: args.m,
        n: args.n,
        l: args.l,
        k: args.k,
        num_blocks: args.num_blocks,
        snr_db: args.snr.0,
        normalize_columns: args.normalize_columns,
        seed: args.seed,
    };
    let (inst, _) = gen_instance(&spec)?;
    let meta = InstanceMetadata {
        seed: Some(spec.seed),
        spec: Some(spec),
    };
    let mut out = output(&args.out)?;
    InstanceFile::from_instance(&inst, Some(meta)).write(&mut out)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_solve(args: SolveArgs) -> Result<(), Error> {
    let inst = InstanceFile::read(BufReader::new(File::open(&args.input)?))?.to_instance()?;
    let (mut solver, mut msbl) = (SolverConfig::default(), MsblConfig::default());
    args.solver.apply(&mut solver, &mut msbl);
    let method = Method::from(args.method);
    let beta = (method == Method::Mpcsbl).then_some(args.beta);
    let report = solve_instance(&inst, method, beta, &solver, &msbl)?;

    println!("method: {method}");
    if let Some(b) = beta {
        println!("beta: {b}");
    }
    println!("iterations: {}", report.iterations);
    println!("converged: {}", report.converged);
    println!("lambda: {:e}", report.hyper.lambda);
    if let Some(truth) = inst.truth() {
        println!("nmse: {:e}", nmse(&report.x_hat, truth)?);
    }
    if let Some(path) = &args.out {
        let est = serde_json::json!({
            "n": report.x_hat.nrows(),
            "l": report.x_hat.ncols(),
            "x_hat": report.x_hat.transpose().as_slice(),
        });
        serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), &est)?;
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), Error> {
    let mut plan = match args.sweep {
        SweepArg::Ratio => ExperimentPlan::ratio_sweep(),
        SweepArg::Sparsity => ExperimentPlan::sparsity_sweep(),
        SweepArg::Snr => ExperimentPlan::snr_sweep(),
    };
    if let Some(v) = args.values {
        plan.sweep_values = v.0;
    }
    if let Some(snr) = args.snr {
        plan.base.snr_db = snr.0;
    }
    plan.trials = args.trials;
    plan.base_seed = args.seed;
    plan.betas = args.betas.0;
    plan.base.num_blocks = args.num_blocks;
    plan.base.normalize_columns = args.normalize_columns;
    plan.success_nmse = args.success_nmse;
    plan.methods = args.methods.into_iter().map(Method::from).collect();
    plan.methods.dedup();
    // noise handling follows the noise level of the first sweep point
    let snr0 = match plan.kind {
        SweepKind::SnrSweep => plan.sweep_values.first().copied(),
        _ => plan.base.snr_db,
    };
    let (mut solver, mut msbl) = solver_defaults(snr0);
    args.solver.apply(&mut solver, &mut msbl);
    plan.solver = solver;
    plan.msbl = msbl;

    let result = run_plan(&plan, Execution::with_workers(args.workers))?;
    write_summary_csv(output(&args.out)?, &result.cells)?;
    if let Some(path) = &args.trials_out {
        write_trials_csv(BufWriter::new(File::create(path)?), &result.records)?;
    }
    Ok(())
}

fn cmd_selfcheck(args: SelfcheckArgs) -> Result<bool, Error> {
    let outcomes = run_selfcheck(args.cases, args.seed)?;
    let mut ok = true;
    for o in &outcomes {
        let status = if o.passed() { "PASS" } else { "FAIL" };
        println!("{status} {} ({} cases, {} failures, worst {:e})", o.name, o.cases, o.failures, o.worst);
        ok &= o.passed();
    }
    Ok(ok)
}

fn exit_for(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    if err.is_numerical() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Selfcheck(a) => match cmd_selfcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(2),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => exit_for(&e),
    }
}
