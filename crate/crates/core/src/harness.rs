//! Benchmark harness: transfer bandwidth against size, GEMM throughput
//! against matrix size, solver throughput and mesh-convergence studies.
//!
//! Transfer and GEMM timings are read from the request log, so they cover
//! exactly the requests of the measured path and exclude host enqueue and
//! wake-up costs. With [`Clock::Device`] a request lasts its modeled
//! duration when the device has a timing model and its executor wall time
//! otherwise; [`Clock::Wall`] always uses executor wall time. Solver
//! timings are host wall clock. Every figure is the median over
//! `reps >= 3` repetitions.

use std::io::Write;
use std::path::Path;
use std::time::Duration;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::array::HostArray;
use crate::codegen::{Backend, Precision};
use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::fr::{self, SolverConfig};
use crate::kernel::{builtin, KernelArg};
use crate::memory::HostBuffer;
use crate::runtime::OffloadDevice;
use crate::stream::{OffloadStream, RequestKind, RequestRecord};

pub const CSV_HEADER: &str = "benchmark,size,reps,median_seconds,metric";

/// Estimated floating-point operations per step of a large 3D
/// cylinder-flow production case, printed next to the desk-scale figure.
pub const CYLINDER_FLOPS_PER_STEP: f64 = 4.6e11;

pub const MIN_REPS: usize = 3;

/// One CSV row. `metric` is GB/s for transfers, GFLOP/s otherwise.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BenchRecord {
    pub benchmark: String,
    pub size: u64,
    pub reps: usize,
    pub median_seconds: f64,
    pub metric: f64,
}

fn write_records<W: Write>(out: W, records: &[BenchRecord]) -> csv::Result<W> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

/// Records as CSV text with a [`CSV_HEADER`] line.
pub fn to_csv(records: &[BenchRecord]) -> String {
    let bytes = write_records(Vec::new(), records).expect("writing to memory cannot fail");
    String::from_utf8(bytes).expect("CSV of UTF-8 fields is UTF-8")
}

pub fn write_csv(path: &Path, records: &[BenchRecord]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_records(f, records)?;
    Ok(())
}

/// Median of `v`; the mean of the middle pair for even lengths.
pub fn median(v: &[f64]) -> f64 {
    assert!(!v.is_empty(), "median of empty sample");
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

pub fn check_reps(reps: usize) -> Result<()> {
    if reps < MIN_REPS {
        return Err(Error::invalid(format!("reps = {reps}, at least {MIN_REPS} required")));
    }
    Ok(())
}

/// `min, min*factor, ...` up to and including `max` (which is appended if
/// the sequence steps over it).
pub fn geometric_sizes(min: usize, max: usize, factor: f64) -> Result<Vec<usize>> {
    if min < 1 || min > max {
        return Err(Error::invalid(format!("need 1 <= min <= max, got {min} and {max}")));
    }
    if factor.is_nan() || factor <= 1.0 {
        return Err(Error::invalid(format!("growth factor {factor} must exceed 1")));
    }
    let mut out = vec![min];
    loop {
        let last = *out.last().expect("non-empty");
        let next = ((last as f64 * factor).round() as usize).max(last + 1);
        if next >= max {
            if last < max {
                out.push(max);
            }
            return Ok(out);
        }
        out.push(next);
    }
}

/// Which duration of a request the transfer and GEMM benchmarks use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    /// Modeled duration if a timing model is installed, else wall time.
    #[default]
    Device,
    /// Executor wall time.
    Wall,
}

impl std::str::FromStr for Clock {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "device" => Ok(Clock::Device),
            "wall" => Ok(Clock::Wall),
            _ => Err(format!("unknown clock {s:?}, expected device or wall")),
        }
    }
}

impl Clock {
    pub fn seconds(self, r: &RequestRecord) -> f64 {
        match (self, r.modeled) {
            (Clock::Device, Some(m)) => m.as_secs_f64(),
            _ => r.elapsed.as_secs_f64(),
        }
    }

    fn total(self, records: &[RequestRecord]) -> f64 {
        records.iter().map(|r| self.seconds(r)).sum()
    }
}

/// A stream that logs every request, for executor-side timing.
fn logged_stream(device: &OffloadDevice) -> OffloadStream {
    let s = device.create_stream();
    s.set_request_logging(true);
    s
}

/// Runs `body` on `stream`, returning the records of what it enqueued.
fn measured(stream: &OffloadStream, body: impl FnOnce() -> Result<()>) -> Result<Vec<RequestRecord>> {
    stream.sync()?;
    stream.clear_request_log();
    body()?;
    stream.sync()?;
    Ok(stream.request_log())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferBenchConfig {
    pub min_bytes: usize,
    pub max_bytes: usize,
    pub factor: f64,
    pub reps: usize,
    pub clock: Clock,
}

impl Default for TransferBenchConfig {
    fn default() -> Self {
        TransferBenchConfig { min_bytes: 1 << 10, max_bytes: 64 << 20, factor: 2.0, reps: MIN_REPS, clock: Clock::Device }
    }
}

/// Times the three ways of moving `size` bytes to or from the device:
/// `copyin` (host-to-device into an existing buffer), `copyout`
/// (device-to-host) and `bind` (allocation of a fresh buffer plus upload,
/// the requests an offload-array bind issues). The metric is GB/s.
pub fn bench_transfer(device: &OffloadDevice, cfg: &TransferBenchConfig) -> Result<Vec<BenchRecord>> {
    check_reps(cfg.reps)?;
    let sizes = geometric_sizes(cfg.min_bytes, cfg.max_bytes, cfg.factor)?;
    let stream = logged_stream(device);
    let mut out = Vec::new();
    for &size in &sizes {
        let host = HostBuffer::from_bytes(&vec![0x5a; size]);
        let dev = stream.allocate(size)?;
        let mut samples: [Vec<f64>; 3] = Default::default();
        // One untimed pass faults in pages on both sides.
        for rep in 0..=cfg.reps {
            let t_in = cfg.clock.total(&measured(&stream, || stream.transfer_host2device(&host, &dev, size, 0, 0))?);
            let t_out = cfg.clock.total(&measured(&stream, || stream.transfer_device2host(&dev, &host, size, 0, 0))?);
            let mut keep = None;
            let t_bind = cfg.clock.total(&measured(&stream, || {
                let fresh = stream.allocate(size)?;
                stream.transfer_host2device(&host, &fresh, size, 0, 0)?;
                keep = Some(fresh);
                Ok(())
            })?);
            drop(keep);
            if rep > 0 {
                for (s, t) in samples.iter_mut().zip([t_in, t_out, t_bind]) {
                    s.push(t);
                }
            }
        }
        for (name, s) in ["copyin", "copyout", "bind"].iter().zip(&samples) {
            let med = median(s);
            out.push(BenchRecord {
                benchmark: (*name).into(),
                size: size as u64,
                reps: cfg.reps,
                median_seconds: med,
                metric: size as f64 / med * 1e-9,
            });
        }
        drop(dev);
    }
    stream.sync()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GemmBenchConfig {
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub precision: Precision,
    pub seed: u64,
    pub clock: Clock,
}

impl Default for GemmBenchConfig {
    fn default() -> Self {
        GemmBenchConfig { sizes: vec![64, 128, 256, 512], reps: MIN_REPS, precision: Precision::F64, seed: 1, clock: Clock::Device }
    }
}

pub const MIN_GEMM_SIZE: usize = 16;

fn random_matrix(rng: &mut StdRng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn host_matrix(data: &[f64], rows: usize, cols: usize, precision: Precision) -> Result<HostArray> {
    match precision {
        Precision::F64 => HostArray::from_slice(data, &[rows, cols]),
        Precision::F32 => HostArray::from_slice(&data.iter().map(|&v| v as f32).collect::<Vec<_>>(), &[rows, cols]),
    }
}

fn host_values(a: &HostArray) -> Result<Vec<f64>> {
    Ok(match a.dtype() {
        DType::F32 => a.to_vec::<f32>()?.into_iter().map(f64::from).collect(),
        _ => a.to_vec::<f64>()?,
    })
}

/// Reference product `alpha*A*B + beta*C` by the textbook triple loop.
#[allow(clippy::too_many_arguments)]
pub fn reference_gemm(a: &[f64], b: &[f64], c: &[f64], m: usize, n: usize, k: usize, alpha: f64, beta: f64) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..k {
                acc += a[i * k + l] * b[l * n + j];
            }
            out[i * n + j] = alpha * acc + beta * c[i * n + j];
        }
    }
    out
}

pub fn relative_frobenius_error(got: &[f64], want: &[f64]) -> f64 {
    let num: f64 = got.iter().zip(want).map(|(g, w)| (g - w) * (g - w)).sum();
    let den: f64 = want.iter().map(|w| w * w).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

fn gemm_name(precision: Precision) -> &'static str {
    match precision {
        Precision::F64 => "mydgemm",
        Precision::F32 => "mysgemm",
    }
}

/// `C = alpha*A*B + beta*C` on `stream` with copy-in/copy-out marshalling
/// of host matrices; returns the product.
#[allow(clippy::too_many_arguments)]
pub fn offload_gemm(
    stream: &OffloadStream,
    precision: Precision,
    a: &[f64],
    b: &[f64],
    c: &[f64],
    (m, n, k): (usize, usize, usize),
    alpha: f64,
    beta: f64,
) -> Result<Vec<f64>> {
    let kernel = stream.device().load_library(builtin::GEMM)?.get_kernel(gemm_name(precision))?;
    let (ha, hb, hc) = (host_matrix(a, m, k, precision)?, host_matrix(b, k, n, precision)?, host_matrix(c, m, n, precision)?);
    let args: Vec<KernelArg> =
        vec![ha.into(), hb.into(), (&hc).into(), (m as i64).into(), (n as i64).into(), (k as i64).into(), alpha.into(), beta.into()];
    stream.invoke(&kernel, args)?;
    stream.sync()?;
    host_values(&hc)
}

/// Tolerance on the relative Frobenius error of the GEMM spot check.
pub fn gemm_tolerance(precision: Precision) -> f64 {
    match precision {
        Precision::F64 => 1e-13,
        Precision::F32 => 1e-5,
    }
}

/// Square GEMM throughput with `alpha = 1, beta = 0`. Each size gives a
/// `gemm-kernel` record (the invoke alone) and a `gemm-transfers` record
/// (the invoke with its argument transfers), taken from the same
/// repetitions. A 64x64 product is checked against the triple-loop
/// reference first.
pub fn bench_gemm(device: &OffloadDevice, cfg: &GemmBenchConfig) -> Result<Vec<BenchRecord>> {
    check_reps(cfg.reps)?;
    if let Some(&n) = cfg.sizes.iter().find(|&&n| n < MIN_GEMM_SIZE) {
        return Err(Error::invalid(format!("matrix size {n} below {MIN_GEMM_SIZE}")));
    }
    let stream = logged_stream(device);
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let check = 64;
    let (a, b, c) = (
        random_matrix(&mut rng, check * check),
        random_matrix(&mut rng, check * check),
        random_matrix(&mut rng, check * check),
    );
    let got = offload_gemm(&stream, cfg.precision, &a, &b, &c, (check, check, check), 1.0, 0.0)?;
    let round = |v: &[f64]| -> Vec<f64> {
        match cfg.precision {
            Precision::F64 => v.to_vec(),
            Precision::F32 => v.iter().map(|&x| f64::from(x as f32)).collect(),
        }
    };
    let want = reference_gemm(&round(&a), &round(&b), &round(&c), check, check, check, 1.0, 0.0);
    let err = relative_frobenius_error(&got, &want);
    if err.is_nan() || err > gemm_tolerance(cfg.precision) {
        return Err(Error::InvalidState(format!("GEMM spot check failed: relative error {err:e}")));
    }

    let kernel = device.load_library(builtin::GEMM)?.get_kernel(gemm_name(cfg.precision))?;
    let mut out = Vec::new();
    for &n in &cfg.sizes {
        let ha = host_matrix(&random_matrix(&mut rng, n * n), n, n, cfg.precision)?;
        let hb = host_matrix(&random_matrix(&mut rng, n * n), n, n, cfg.precision)?;
        let hc = HostArray::zeros(ha.dtype(), &[n, n])?;
        let (mut kernel_t, mut total_t) = (Vec::new(), Vec::new());
        for rep in 0..=cfg.reps {
            let recs = measured(&stream, || {
                let args: Vec<KernelArg> = vec![
                    (&ha).into(),
                    (&hb).into(),
                    (&hc).into(),
                    (n as i64).into(),
                    (n as i64).into(),
                    (n as i64).into(),
                    1.0f64.into(),
                    0.0f64.into(),
                ];
                stream.invoke(&kernel, args)
            })?;
            if rep == 0 {
                continue;
            }
            let inv: f64 = recs.iter().filter(|r| r.kind == RequestKind::Invoke).map(|r| cfg.clock.seconds(r)).sum();
            kernel_t.push(inv);
            total_t.push(cfg.clock.total(&recs));
        }
        let flops = 2.0 * (n as f64).powi(3);
        for (name, s) in [("gemm-kernel", &kernel_t), ("gemm-transfers", &total_t)] {
            let med = median(s);
            out.push(BenchRecord {
                benchmark: name.into(),
                size: n as u64,
                reps: cfg.reps,
                median_seconds: med,
                metric: flops / med * 1e-9,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub steps: u64,
    pub reps: usize,
    pub median_seconds: f64,
    pub steps_per_second: f64,
    pub flops_per_step: u64,
    pub gflops: f64,
    pub last: fr::SimulationResult,
}

impl SolveReport {
    pub fn record(&self) -> BenchRecord {
        BenchRecord {
            benchmark: "solve".into(),
            size: self.last.config.n_points() as u64,
            reps: self.reps,
            median_seconds: self.median_seconds,
            metric: self.gflops,
        }
    }

    pub fn summary(&self) -> String {
        let c = &self.last.config;
        let err = self.last.final_l2_error().map_or("n/a".to_string(), |e| format!("{e:.3e}"));
        format!(
            "p={} elements={} points={} steps={} dt={:.3e} t_end={}\n\
             median wall time {:.4} s over {} reps, {:.1} steps/s, {:.3} GFLOP/s\n\
             model: {} FLOPs/step here, {:.1e} FLOPs/step for the 3D cylinder case\n\
             final L2 error {}",
            c.p,
            c.n_elements,
            c.n_points(),
            self.steps,
            self.last.dt,
            c.t_end,
            self.median_seconds,
            self.reps,
            self.steps_per_second,
            self.gflops,
            self.flops_per_step,
            CYLINDER_FLOPS_PER_STEP,
            err
        )
    }
}

/// Runs the solver `reps` times on `device`, reporting the median wall
/// time of the stepping phase.
pub fn bench_solve(device: &OffloadDevice, cfg: &SolverConfig, reps: usize) -> Result<SolveReport> {
    check_reps(reps)?;
    let stream = device.create_stream();
    stream.set_request_logging(false);
    let mut times = Vec::new();
    let mut last = None;
    for _ in 0..reps {
        let r = fr::run_simulation_on(&stream, cfg)?;
        times.push(r.wall_time.as_secs_f64());
        last = Some(r);
    }
    let last = last.expect("reps >= 3");
    let med = median(&times);
    let steps = last.steps;
    let fps = last.flops_per_step;
    let (sps, gflops) =
        if steps == 0 || med == 0.0 { (0.0, 0.0) } else { (steps as f64 / med, (fps * steps) as f64 / med * 1e-9) };
    Ok(SolveReport { steps, reps, median_seconds: med, steps_per_second: sps, flops_per_step: fps, gflops, last })
}

/// Time step for the convergence study: `cfl*h / ((p+1)^2 |a|)`.
pub fn convergence_dt(p: usize, n_elements: usize, length: f64, a: f64, cfl: f64) -> f64 {
    cfl * length / n_elements as f64 / ((p + 1) * (p + 1)) as f64 / a.abs().max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub p: usize,
    pub n_elements: usize,
    pub l2_error: f64,
    /// `log2(e_coarse / e_fine)` against the previous mesh.
    pub order: Option<f64>,
    pub wall_time: Duration,
}

#[derive(Debug, Clone)]
pub struct ConvergenceConfig {
    pub orders: Vec<usize>,
    pub meshes: Vec<usize>,
    pub cfl: f64,
    pub precision: Precision,
    pub backend: Backend,
    /// Advection periods to run.
    pub periods: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            orders: vec![1, 2, 3, 4],
            meshes: vec![8, 16, 32, 64],
            cfl: 0.5,
            precision: Precision::F64,
            backend: Backend::Intrinsic,
            periods: 1.0,
        }
    }
}

/// Sine advection on `[-1, 1]` with `a = 1` for each order and mesh.
pub fn convergence_study(device: &OffloadDevice, cfg: &ConvergenceConfig) -> Result<Vec<ConvergenceRow>> {
    let stream = device.create_stream();
    stream.set_request_logging(false);
    let mut rows = Vec::new();
    for &p in &cfg.orders {
        let mut prev: Option<f64> = None;
        for &ne in &cfg.meshes {
            let base = SolverConfig::default();
            let sc = SolverConfig {
                p,
                n_elements: ne,
                dt: convergence_dt(p, ne, base.length(), base.a, cfg.cfl),
                t_end: cfg.periods * base.length() / base.a,
                precision: cfg.precision,
                backend: cfg.backend.clone(),
                ..base
            };
            let r = fr::run_simulation_on(&stream, &sc)?;
            let e = r.final_l2_error().expect("no source term");
            rows.push(ConvergenceRow {
                p,
                n_elements: ne,
                l2_error: e,
                order: prev.map(|pe| (pe / e).log2()),
                wall_time: r.wall_time,
            });
            prev = Some(e);
        }
    }
    Ok(rows)
}

pub fn convergence_table(rows: &[ConvergenceRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut write = || -> csv::Result<()> {
        w.write_record(["p", "n_elements", "l2_error", "order"])?;
        for r in rows {
            let o = r.order.map_or(String::new(), |o| format!("{o:.3}"));
            w.write_record([r.p.to_string(), r.n_elements.to_string(), format!("{:e}", r.l2_error), o])?;
        }
        w.flush()?;
        Ok(())
    };
    write().expect("writing to memory cannot fail");
    String::from_utf8(w.into_inner().expect("flushed")).expect("ASCII")
}
