//! `streamforge` command-line driver: transfer and GEMM benchmarks, solver
//! runs and convergence studies. Exit status is 0 on success, 1 when a
//! benchmark or run fails and 2 on bad arguments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use streamforge::codegen::{Backend, Precision};
use streamforge::fr::SolverConfig;
use streamforge::harness::{self, BenchRecord, Clock, ConvergenceConfig, GemmBenchConfig, TransferBenchConfig};
use streamforge::{Error, OffloadDevice, Runtime, RuntimeConfig, TimingModel};

#[derive(Parser)]
#[command(name = "streamforge", version, about = "Offload runtime benchmarks and flux-reconstruction solver")]
struct Cli {
    #[command(flatten)]
    runtime: RuntimeOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RuntimeOpts {
    /// Runtime config file (TOML: devices, arena_bytes, latency_us,
    /// bandwidth_bytes_per_s, realistic_timing).
    #[arg(long, global = true)]
    runtime_config: Option<PathBuf>,
    /// Number of emulated devices; overrides the config and STREAMFORGE_DEVICES.
    #[arg(long, global = true)]
    devices: Option<usize>,
    /// Device to run on.
    #[arg(long, global = true, default_value_t = 0)]
    device: usize,
    /// Timing model per-request latency in microseconds.
    #[arg(long, global = true, requires = "bandwidth")]
    latency_us: Option<f64>,
    /// Timing model bandwidth in bytes per second.
    #[arg(long, global = true, requires = "latency_us")]
    bandwidth: Option<f64>,
    /// Sleep so wall-clock time follows the timing model.
    #[arg(long, global = true)]
    realistic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Runtime benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Flux-reconstruction solver.
    #[command(subcommand)]
    Solve(SolveCommand),
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Transfer bandwidth against size for the copyin, copyout and bind paths.
    Transfer {
        #[arg(long, default_value_t = 1024)]
        min_bytes: usize,
        #[arg(long, default_value_t = 64 << 20)]
        max_bytes: usize,
        #[arg(long, default_value_t = 2.0)]
        factor: f64,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value = "device")]
        clock: Clock,
        /// Output file; stdout when absent.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Square GEMM throughput, kernel only and including transfers.
    Gemm {
        #[arg(long, value_delimiter = ',', default_values_t = [64, 128, 256, 512])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value = "f64")]
        precision: Precision,
        #[arg(long, default_value = "device")]
        clock: Clock,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SolveCommand {
    /// Runs a solver config and reports throughput.
    Run {
        /// Solver config file (TOML).
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Benchmark record output; stdout when absent.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Diagnostics output (step, t, l2_error, conserved_integral).
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Sine-advection mesh convergence table.
    Converge {
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4])]
        orders: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [8, 16, 32, 64])]
        meshes: Vec<usize>,
        #[arg(long, default_value_t = 0.5)]
        cfl: f64,
        #[arg(long, default_value = "f64")]
        precision: Precision,
        /// Compile generated kernels with the C toolchain into this directory.
        #[arg(long)]
        compiled: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::Config(_) | Error::DeviceNotFound(_) => Failure::Usage(e.to_string()),
            e => Failure::Run(e.to_string()),
        }
    }
}

fn runtime_config(o: &RuntimeOpts) -> Result<RuntimeConfig, Error> {
    let mut cfg = match &o.runtime_config {
        Some(p) => RuntimeConfig::from_file(p)?,
        None => RuntimeConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(d) = o.devices {
        cfg.devices = d;
    }
    if let (Some(l), Some(b)) = (o.latency_us, o.bandwidth) {
        cfg.timing.model = Some(TimingModel::new(l, b));
    }
    cfg.timing.realistic |= o.realistic;
    cfg.validate()?;
    Ok(cfg)
}

fn emit(csv: Option<&Path>, text: &str) -> Result<(), Failure> {
    match csv {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Run(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_records(csv: Option<&Path>, records: &[BenchRecord]) -> Result<(), Failure> {
    emit(csv, &harness::to_csv(records))
}

fn bench(device: &OffloadDevice, cmd: BenchCommand) -> Result<(), Failure> {
    match cmd {
        BenchCommand::Transfer { min_bytes, max_bytes, factor, reps, clock, csv } => {
            let cfg = TransferBenchConfig { min_bytes, max_bytes, factor, reps, clock };
            harness::check_reps(reps)?;
            harness::geometric_sizes(min_bytes, max_bytes, factor)?;
            emit_records(csv.as_deref(), &harness::bench_transfer(device, &cfg)?)
        }
        BenchCommand::Gemm { sizes, reps, precision, clock, csv } => {
            let cfg = GemmBenchConfig { sizes, reps, precision, clock, ..Default::default() };
            emit_records(csv.as_deref(), &harness::bench_gemm(device, &cfg)?)
        }
    }
}

fn solve(device: &OffloadDevice, cmd: SolveCommand) -> Result<(), Failure> {
    match cmd {
        SolveCommand::Run { config, reps, csv, diagnostics } => {
            let cfg = SolverConfig::from_file(&config).map_err(|e| Failure::Usage(e.to_string()))?;
            harness::check_reps(reps)?;
            let report = harness::bench_solve(device, &cfg, reps)?;
            eprintln!("{}", report.summary());
            if let Some(p) = diagnostics {
                emit(Some(&p), &report.last.diagnostics_csv())?;
            }
            emit_records(csv.as_deref(), &[report.record()])
        }
        SolveCommand::Converge { orders, meshes, cfl, precision, compiled, csv } => {
            if cfl.is_nan() || cfl <= 0.0 {
                return Err(Failure::Usage(format!("cfl = {cfl} must be positive")));
            }
            let backend = match compiled {
                Some(workdir) => Backend::Compiled { workdir, compiler: None },
                None => Backend::Intrinsic,
            };
            let cfg = ConvergenceConfig { orders, meshes, cfl, precision, backend, ..Default::default() };
            for &p in &cfg.orders {
                streamforge::fr::build_operators(p)?;
            }
            if let Some(&n) = cfg.meshes.iter().find(|&&n| n < 2) {
                return Err(Failure::Usage(format!("mesh of {n} elements, at least 2 required")));
            }
            let rows = harness::convergence_study(device, &cfg)?;
            emit(csv.as_deref(), &harness::convergence_table(&rows))
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let rt = Runtime::new(runtime_config(&cli.runtime)?)?;
    let device = rt.device(cli.runtime.device)?;
    match cli.command {
        Command::Bench(c) => bench(&device, c),
        Command::Solve(c) => solve(&device, c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
