//! Device-resident flux-reconstruction solver for periodic 1D advection
//! `du/dt + a du/dx = S(x, t)`.
//!
//! Device layout: point-major with elements fastest, so a field is a
//! `(p+1) x n_elements` row-major matrix and every operator application is
//! a plain row-major GEMM `op * U`. Host-facing states are element-major,
//! `(n_elements, p+1)`.
//!
//! One right-hand-side evaluation enqueues, in order:
//!
//! 1. GEMM `F = M_interp * U` into the face rows `uL`, `uR`;
//! 2. two device copies shifting `uL` left by one element (periodic) into `nR`;
//! 3. `riemann_upwind(uR, nR)` into `fc`, the flux at each element's right face;
//! 4. two device copies shifting `fc` right by one element into `fcL`;
//! 5. `flux_jump` giving `J = f_common - a*u` at both faces;
//! 6. GEMM `R = a*D*U`;
//! 7. GEMM `R += C_corr * J`;
//! 8. `negdivconf`: `R = -(2/h)*R + S(x, t)`.

use std::time::{Duration, Instant};

use crate::codegen::{self, kernels, Backend, GeneratedSource, Precision};
use crate::error::{Error, Result};
use crate::kernel::{builtin, KernelArg, KernelHandle};
use crate::memory::{DevicePointer, HostBuffer};
use crate::stream::{OffloadStream, RequestCounts};
use crate::HostArray;

use super::config::SolverConfig;
use super::operators::{build_operators, FrOperators};

/// Steps enqueued between synchronizations in long runs.
const SYNC_EVERY: u64 = 256;

fn encode(v: &[f64], precision: Precision) -> HostBuffer {
    match precision {
        Precision::F64 => HostBuffer::from_slice(v),
        Precision::F32 => HostBuffer::from_slice(&v.iter().map(|&x| x as f32).collect::<Vec<_>>()),
    }
}

fn decode(buf: &HostBuffer, precision: Precision) -> Result<Vec<f64>> {
    Ok(match precision {
        Precision::F64 => buf.to_vec::<f64>()?,
        Precision::F32 => buf.to_vec::<f32>()?.into_iter().map(f64::from).collect(),
    })
}

/// Allocates a block holding `data` and enqueues its upload.
fn upload(stream: &OffloadStream, data: &[f64], precision: Precision) -> Result<DevicePointer> {
    let host = encode(data, precision);
    let ptr = stream.allocate(host.len())?;
    stream.transfer_host2device(&host, &ptr, host.len(), 0, 0)?;
    Ok(ptr)
}

/// A block of 8-byte scalar slots, uploaded once and passed to kernels by
/// device address.
fn upload_scalars(stream: &OffloadStream, values: &[crate::Scalar]) -> Result<Vec<DevicePointer>> {
    let bytes: Vec<u8> = values.iter().flat_map(|s| s.encode()).collect();
    let host = HostBuffer::from_bytes(&bytes);
    let block = stream.allocate(bytes.len())?;
    stream.transfer_host2device(&host, &block, bytes.len(), 0, 0)?;
    (0..values.len()).map(|i| block.slice(8 * i, 8)).collect()
}

fn gemm_kernel(stream: &OffloadStream, precision: Precision) -> Result<KernelHandle> {
    let name = match precision {
        Precision::F64 => "mydgemm",
        Precision::F32 => "mysgemm",
    };
    stream.device().load_library(builtin::GEMM)?.get_kernel(name)
}

/// Classical four-stage Runge-Kutta on a device field of `n` points.
///
/// Stage arithmetic runs as the `axpy` and `rk4_combine` pointwise kernels.
/// Time lives on the device as an `f64` slot advanced with an `f64` `axpy`,
/// so a step needs no host transfers.
pub struct Rk4Stepper {
    stream: OffloadStream,
    n: usize,
    dt: f64,
    axpy: KernelHandle,
    combine: KernelHandle,
    time_axpy: KernelHandle,
    tmp: DevicePointer,
    k: [DevicePointer; 4],
    /// `t`, stage time, and a constant 1.
    t: DevicePointer,
    ts: DevicePointer,
    one: DevicePointer,
    /// npts, 1, dt/2, dt, dt/6.
    sc: Vec<DevicePointer>,
}

/// `rhs(state, out, time)` enqueues `out = f(state, time)`.
pub type RhsFn<'a> = dyn FnMut(&DevicePointer, &DevicePointer, &DevicePointer) -> Result<()> + 'a;

impl Rk4Stepper {
    pub fn new(stream: &OffloadStream, n: usize, precision: Precision, dt: f64, backend: &Backend) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("empty field"));
        }
        let dev = stream.device();
        let (_, axpy) = codegen::build_kernel(dev, &kernels::axpy(precision), backend)?;
        let (_, combine) = codegen::build_kernel(dev, &kernels::rk4_combine(precision), backend)?;
        let (_, time_axpy) = codegen::build_kernel(dev, &kernels::axpy(Precision::F64), backend)?;
        let s = precision.size();
        let stages = stream.allocate(5 * n * s)?;
        let tmp = stages.slice(0, n * s)?;
        let stage = |i: usize| stages.slice(i * n * s, n * s);
        let k = [stage(1)?, stage(2)?, stage(3)?, stage(4)?];
        let time = upload(stream, &[0.0, 0.0, 1.0], Precision::F64)?;
        use crate::Scalar::{F64, I64};
        let sc = upload_scalars(stream, &[I64(n as i64), I64(1), F64(dt / 2.0), F64(dt), F64(dt / 6.0)])?;
        Ok(Rk4Stepper {
            stream: stream.clone(),
            n,
            dt,
            axpy,
            combine,
            time_axpy,
            tmp,
            k,
            t: time.slice(0, 8)?,
            ts: time.slice(8, 8)?,
            one: time.slice(16, 8)?,
            sc,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Device slot holding the current time as `f64`.
    pub fn time_slot(&self) -> &DevicePointer {
        &self.t
    }

    /// Stage derivative buffers `k1..k4` of the last step.
    pub fn stages(&self) -> &[DevicePointer; 4] {
        &self.k
    }

    fn field_axpy(&self, c: &DevicePointer, u: &DevicePointer, k: &DevicePointer, out: &DevicePointer) -> Result<()> {
        let args: Vec<KernelArg> = vec![(&self.sc[0]).into(), c.into(), u.into(), k.into(), out.into()];
        self.stream.invoke(&self.axpy, args)
    }

    fn time_update(&self, c: &DevicePointer, out: &DevicePointer) -> Result<()> {
        let args: Vec<KernelArg> = vec![(&self.sc[1]).into(), c.into(), (&self.t).into(), (&self.one).into(), out.into()];
        self.stream.invoke(&self.time_axpy, args)
    }

    /// Enqueues one step of `u` by `dt`, advancing the device time.
    pub fn step(&self, u: &DevicePointer, rhs: &mut RhsFn<'_>) -> Result<()> {
        let [k1, k2, k3, k4] = &self.k;
        let (half, full, sixth) = (&self.sc[2], &self.sc[3], &self.sc[4]);
        rhs(u, k1, &self.t)?;
        self.time_update(half, &self.ts)?;
        self.field_axpy(half, u, k1, &self.tmp)?;
        rhs(&self.tmp, k2, &self.ts)?;
        self.field_axpy(half, u, k2, &self.tmp)?;
        rhs(&self.tmp, k3, &self.ts)?;
        self.time_update(full, &self.ts)?;
        self.field_axpy(full, u, k3, &self.tmp)?;
        rhs(&self.tmp, k4, &self.ts)?;
        let args: Vec<KernelArg> =
            vec![(&self.sc[0]).into(), sixth.into(), u.into(), k1.into(), k2.into(), k3.into(), k4.into()];
        self.stream.invoke(&self.combine, args)?;
        self.time_update(full, &self.t)
    }
}

/// Upwind common flux for each `(ul[i], ur[i])` pair, computed on the
/// device by the generated `riemann_upwind` kernel with copy-in/copy-out
/// argument marshalling.
pub fn riemann_upwind(stream: &OffloadStream, ul: &[f64], ur: &[f64], a: f64, backend: &Backend) -> Result<Vec<f64>> {
    if ul.len() != ur.len() || ul.is_empty() {
        return Err(Error::invalid("left and right states must be non-empty and of equal length"));
    }
    let (_, k) = codegen::build_kernel(stream.device(), &kernels::riemann_upwind(Precision::F64), backend)?;
    let fc = HostArray::zeros(crate::DType::F64, &[ul.len()])?;
    let args: Vec<KernelArg> = vec![
        (ul.len() as i64).into(),
        HostArray::from_vec(ul)?.into(),
        HostArray::from_vec(ur)?.into(),
        a.into(),
        (&fc).into(),
    ];
    stream.invoke(&k, args)?;
    stream.sync()?;
    fc.to_vec()
}

/// Estimated floating-point operations per step: `2mnk` per GEMM plus the
/// arithmetic of the pointwise kernels (source term not counted).
pub fn flops_per_step(p: usize, n_elements: usize) -> u64 {
    let (np1, ne) = ((p + 1) as u64, n_elements as u64);
    let gemm = 2 * 2 * ne * np1 + 2 * np1 * ne * np1 + 2 * np1 * ne * 2;
    let pointwise = ne + 4 * ne + 2 * np1 * ne;
    let rhs = gemm + pointwise;
    4 * rhs + 3 * 2 * np1 * ne + 7 * np1 * ne
}

/// The solver state and its device buffers.
pub struct Solver {
    stream: OffloadStream,
    cfg: SolverConfig,
    ops: FrOperators,
    dt: f64,
    x: Vec<f64>,
    gemm: KernelHandle,
    riemann: KernelHandle,
    jump: KernelHandle,
    negdiv: (GeneratedSource, KernelHandle),
    op_m: DevicePointer,
    op_d: DevicePointer,
    op_c: DevicePointer,
    u: DevicePointer,
    /// Rows `uL, uR, nR, fcL, fc, J0, J1`, each `n_elements` long.
    faces: DevicePointer,
    ploc: DevicePointer,
    rcpdjac: DevicePointer,
    /// n_e, npts, 2, p+1, 1.0, 0.0, a.
    sc: Vec<DevicePointer>,
    rk: Rk4Stepper,
    step: u64,
}

impl Solver {
    /// Sets up operators, kernels and device buffers and uploads the
    /// initial condition.
    pub fn new(stream: &OffloadStream, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let ops = build_operators(cfg.p)?;
        let (prec, ne, np1) = (cfg.precision, cfg.n_elements, cfg.p + 1);
        let n = cfg.n_points();
        let h = cfg.h();
        let dev = stream.device();
        let backend = &cfg.backend;

        let gemm = gemm_kernel(stream, prec)?;
        let (_, riemann) = codegen::build_kernel(dev, &kernels::riemann_upwind(prec), backend)?;
        let (_, jump) = codegen::build_kernel(dev, &kernels::flux_jump(prec), backend)?;
        let src: Vec<String> = cfg
            .source_term_expr
            .iter()
            .map(|e| format!("({})", codegen::rename_identifier(e, "x", "ploc[0]")))
            .collect();
        let negdiv = codegen::build_kernel(dev, &kernels::negdivconf(1, 1, prec, &src), backend)?;

        // Positions in host (element-major) order.
        let x: Vec<f64> = (0..ne)
            .flat_map(|e| ops.xi.iter().map(move |&xi| cfg.domain[0] + h * (e as f64 + 0.5 * (xi + 1.0))))
            .collect();

        let (m_len, d_len) = (2 * np1, np1 * np1);
        let op_block: Vec<f64> = [ops.m_interp.as_slice(), &ops.d, &ops.c_corr].concat();
        let opb = upload(stream, &op_block, prec)?;
        let s = prec.size();
        let op_m = opb.slice(0, m_len * s)?;
        let op_d = opb.slice(m_len * s, d_len * s)?;
        let op_c = opb.slice((m_len + d_len) * s, 2 * np1 * s)?;

        let mut geom = to_device_layout(&x, ne, np1);
        geom.extend(std::iter::repeat_n(2.0 / h, n));
        let gb = upload(stream, &geom, prec)?;
        let ploc = gb.slice(0, n * s)?;
        let rcpdjac = gb.slice(n * s, n * s)?;

        let faces = stream.allocate(7 * ne * s)?;
        let u0: Vec<f64> = x.iter().map(|&xx| cfg.initial.eval(xx, cfg.domain[0], cfg.length())).collect();
        let u = upload(stream, &to_device_layout(&u0, ne, np1), prec)?;

        use crate::Scalar::{F64, I64};
        let sc = upload_scalars(
            stream,
            &[I64(ne as i64), I64(n as i64), I64(2), I64(np1 as i64), F64(1.0), F64(0.0), F64(cfg.a)],
        )?;
        let dt = cfg.effective_dt();
        let rk = Rk4Stepper::new(stream, n, prec, dt, backend)?;
        Ok(Solver {
            stream: stream.clone(),
            cfg: cfg.clone(),
            ops,
            dt,
            x,
            gemm,
            riemann,
            jump,
            negdiv,
            op_m,
            op_d,
            op_c,
            u,
            faces,
            ploc,
            rcpdjac,
            sc,
            rk,
            step: 0,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn operators(&self) -> &FrOperators {
        &self.ops
    }

    pub fn stream(&self) -> &OffloadStream {
        &self.stream
    }

    /// Solution-point positions, element-major.
    pub fn positions(&self) -> &[f64] {
        &self.x
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    /// The generated assembly kernel, after argument pruning.
    pub fn negdivconf_source(&self) -> &GeneratedSource {
        &self.negdiv.0
    }

    /// Device view of the state, `(p+1) x n_elements` row-major.
    pub fn state_ptr(&self) -> &DevicePointer {
        &self.u
    }

    fn ne(&self) -> usize {
        self.cfg.n_elements
    }

    fn row(&self, r: usize, rows: usize) -> Result<DevicePointer> {
        let b = self.ne() * self.cfg.precision.size();
        self.faces.slice(r * b, rows * b)
    }

    fn gemm(&self, a: &DevicePointer, b: &DevicePointer, c: &DevicePointer, dims: [usize; 3], alpha: usize, beta: usize) -> Result<()> {
        let sc = |i: usize| KernelArg::from(&self.sc[i]);
        let args = vec![a.into(), b.into(), c.into(), sc(dims[0]), sc(dims[1]), sc(dims[2]), sc(alpha), sc(beta)];
        self.stream.invoke(&self.gemm, args)
    }

    // Scalar slot indices.
    const NE: usize = 0;
    const NPTS: usize = 1;
    const TWO: usize = 2;
    const NP1: usize = 3;
    const ONE: usize = 4;
    const ZERO: usize = 5;
    const A: usize = 6;

    fn enqueue_interp(&self, v: &DevicePointer) -> Result<()> {
        self.gemm(&self.op_m, v, &self.row(0, 2)?, [Self::TWO, Self::NE, Self::NP1], Self::ONE, Self::ZERO)
    }

    /// Copies row `src` shifted by `shift` elements (periodic) into row `dst`:
    /// `dst[e] = src[e + shift]`, `shift` is +1 or -1.
    fn enqueue_shift(&self, src: usize, dst: usize, shift: isize) -> Result<()> {
        let (ne, s) = (self.ne(), self.cfg.precision.size());
        let (so, dso) = (src * ne * s, dst * ne * s);
        let bulk = (ne - 1) * s;
        if shift > 0 {
            self.stream.transfer_device2device(&self.faces, &self.faces, bulk, so + s, dso)?;
            self.stream.transfer_device2device(&self.faces, &self.faces, s, so, dso + bulk)
        } else {
            self.stream.transfer_device2device(&self.faces, &self.faces, bulk, so, dso + s)?;
            self.stream.transfer_device2device(&self.faces, &self.faces, s, so + bulk, dso)
        }
    }

    fn enqueue_common_flux(&self) -> Result<()> {
        self.enqueue_shift(0, 2, 1)?;
        let sc = |i: usize| KernelArg::from(&self.sc[i]);
        let args = vec![sc(Self::NE), self.row(1, 1)?.into(), self.row(2, 1)?.into(), sc(Self::A), self.row(4, 1)?.into()];
        self.stream.invoke(&self.riemann, args)?;
        self.enqueue_shift(4, 3, -1)
    }

    fn enqueue_rhs(&self, v: &DevicePointer, out: &DevicePointer, t: &DevicePointer) -> Result<()> {
        self.enqueue_interp(v)?;
        self.enqueue_common_flux()?;
        let sc = |i: usize| KernelArg::from(&self.sc[i]);
        let jmp = self.row(5, 2)?;
        let args = vec![sc(Self::NE), sc(Self::A), self.row(0, 2)?.into(), self.row(3, 2)?.into(), (&jmp).into()];
        self.stream.invoke(&self.jump, args)?;
        self.gemm(&self.op_d, v, out, [Self::NP1, Self::NE, Self::NP1], Self::A, Self::ZERO)?;
        self.gemm(&self.op_c, &jmp, out, [Self::NP1, Self::NE, Self::TWO], Self::ONE, Self::ONE)?;
        let mut args = vec![sc(Self::NPTS)];
        for p in &self.negdiv.0.pruned_params {
            args.push(match p.name.as_str() {
                "t" => t.into(),
                "tdivf" => out.into(),
                "ploc" => (&self.ploc).into(),
                "rcpdjac" => (&self.rcpdjac).into(),
                other => return Err(Error::InvalidState(format!("unexpected negdivconf parameter {other}"))),
            });
        }
        self.stream.invoke(&self.negdiv.1, args)
    }

    fn download(&self, ptr: &DevicePointer) -> Result<Vec<f64>> {
        let host = HostBuffer::zeroed(ptr.len());
        self.stream.transfer_device2host(ptr, &host, ptr.len(), 0, 0)?;
        self.stream.sync()?;
        decode(&host, self.cfg.precision)
    }

    /// Replaces the state; `u` is element-major.
    pub fn set_state(&mut self, u: &[f64]) -> Result<()> {
        if u.len() != self.cfg.n_points() {
            return Err(Error::invalid(format!("state has {} values, expected {}", u.len(), self.cfg.n_points())));
        }
        let host = encode(&to_device_layout(u, self.ne(), self.cfg.p + 1), self.cfg.precision);
        self.stream.transfer_host2device(&host, &self.u, host.len(), 0, 0)?;
        self.stream.sync()
    }

    /// Downloads the state, element-major.
    pub fn state(&self) -> Result<Vec<f64>> {
        Ok(to_host_layout(&self.download(&self.u)?, self.ne(), self.cfg.p + 1))
    }

    /// Left and right face values of every element, from one GEMM.
    pub fn interp_to_flux_points(&self) -> Result<Vec<[f64; 2]>> {
        self.enqueue_interp(&self.u)?;
        let f = self.download(&self.row(0, 2)?)?;
        let ne = self.ne();
        Ok((0..ne).map(|e| [f[e], f[ne + e]]).collect())
    }

    /// Common flux at the right face of every element (element `e` with
    /// `e+1`, periodic).
    pub fn common_fluxes(&self) -> Result<Vec<f64>> {
        self.enqueue_interp(&self.u)?;
        self.enqueue_common_flux()?;
        self.download(&self.row(4, 1)?)
    }

    /// `du/dt` at the solution points for the current state and time,
    /// element-major.
    pub fn corrected_divergence(&self) -> Result<Vec<f64>> {
        let out = &self.rk.stages()[0];
        self.enqueue_rhs(&self.u, out, self.rk.time_slot())?;
        Ok(to_host_layout(&self.download(out)?, self.ne(), self.cfg.p + 1))
    }

    fn enqueue_step(&mut self) -> Result<()> {
        self.rk.step(&self.u, &mut |v, out, t| self.enqueue_rhs(v, out, t))?;
        self.step += 1;
        Ok(())
    }

    /// Advances one step and checks the result is finite.
    pub fn rk4_step(&mut self) -> Result<()> {
        self.enqueue_step()?;
        let u = self.state()?;
        self.check_finite(&u)
    }

    /// Enqueues `n` steps without reading anything back.
    pub fn advance(&mut self, n: u64) -> Result<()> {
        for i in 0..n {
            self.enqueue_step()?;
            if (i + 1) % SYNC_EVERY == 0 {
                self.stream.sync()?;
            }
        }
        self.stream.sync()
    }

    pub fn check_finite(&self, u: &[f64]) -> Result<()> {
        if u.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NumericalDivergence { step: self.step, t: self.time() })
        }
    }

    /// Quadrature-weighted integral of an element-major field.
    pub fn conserved_integral(&self, u: &[f64]) -> f64 {
        let np1 = self.cfg.p + 1;
        let half_h = 0.5 * self.cfg.h();
        u.chunks(np1)
            .map(|c| c.iter().zip(&self.ops.weights).map(|(v, w)| v * w).sum::<f64>() * half_h)
            .sum()
    }

    /// Exact solution `u0(x - a t)` at the solution points, element-major.
    pub fn exact(&self, t: f64) -> Vec<f64> {
        let (x0, len) = (self.cfg.domain[0], self.cfg.length());
        self.x.iter().map(|&x| self.cfg.initial.eval(x - self.cfg.a * t, x0, len)).collect()
    }

    /// Quadrature L2 norm of `u - exact(t)`.
    pub fn l2_error(&self, u: &[f64], t: f64) -> f64 {
        let diff: Vec<f64> = u.iter().zip(self.exact(t)).map(|(a, b)| (a - b) * (a - b)).collect();
        self.conserved_integral(&diff).sqrt()
    }

    /// Initial condition sampled at the solution points in the working
    /// precision, element-major.
    pub fn initial_state(&self) -> Vec<f64> {
        let u0 = self.exact(0.0);
        match self.cfg.precision {
            Precision::F64 => u0,
            Precision::F32 => u0.into_iter().map(|v| f64::from(v as f32)).collect(),
        }
    }
}

/// Element-major `(ne, np1)` to device `(np1, ne)`.
pub fn to_device_layout(u: &[f64], ne: usize, np1: usize) -> Vec<f64> {
    (0..np1).flat_map(|j| (0..ne).map(move |e| u[e * np1 + j])).collect()
}

/// Device `(np1, ne)` to element-major `(ne, np1)`.
pub fn to_host_layout(u: &[f64], ne: usize, np1: usize) -> Vec<f64> {
    (0..ne).flat_map(|e| (0..np1).map(move |j| u[j * ne + e])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DiagnosticRecord {
    pub step: u64,
    pub t: f64,
    /// `None` when a source term makes the exact solution unknown.
    pub l2_error: Option<f64>,
    pub conserved_integral: f64,
}

/// Request counts of a run, split into phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    /// Operator, geometry, state and scalar uploads and allocations.
    pub setup: RequestCounts,
    /// Everything enqueued by time stepping, diagnostics excluded.
    pub stepping: RequestCounts,
    /// Intermediate diagnostic downloads.
    pub diagnostics: RequestCounts,
    /// The final download.
    pub teardown: RequestCounts,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub config: SolverConfig,
    /// Initial condition as uploaded, element-major `(n_elements, p+1)`.
    pub initial: Vec<f64>,
    /// Final state, element-major `(n_elements, p+1)`.
    pub final_state: Vec<f64>,
    pub positions: Vec<f64>,
    pub steps: u64,
    pub dt: f64,
    pub t_final: f64,
    pub diagnostics: Vec<DiagnosticRecord>,
    /// Time spent stepping, setup excluded.
    pub wall_time: Duration,
    pub requests: RunSummary,
    pub flops_per_step: u64,
}

impl SimulationResult {
    pub fn final_l2_error(&self) -> Option<f64> {
        self.diagnostics.last().and_then(|d| d.l2_error)
    }

    /// Diagnostics as CSV with columns `step,t,l2_error,conserved_integral`;
    /// `l2_error` is empty when unknown.
    pub fn diagnostics_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for d in &self.diagnostics {
            w.serialize(d).expect("writing to memory cannot fail");
        }
        if self.diagnostics.is_empty() {
            w.write_record(["step", "t", "l2_error", "conserved_integral"]).expect("writing to memory cannot fail");
        }
        String::from_utf8(w.into_inner().expect("flushed")).expect("ASCII")
    }
}

/// Runs `cfg` to `t_end` on `stream`. Between the initial uploads and the
/// final download everything happens on the device; diagnostics at
/// intermediate steps (when `diagnostics_every > 0`) each add one download.
pub fn run_simulation_on(stream: &OffloadStream, cfg: &SolverConfig) -> Result<SimulationResult> {
    let c0 = stream.request_counts();
    let mut solver = Solver::new(stream, cfg)?;
    stream.sync()?;
    let c1 = stream.request_counts();
    let initial = solver.initial_state();
    let has_exact = cfg.source_term_expr.is_none();
    let record = |s: &Solver, u: &[f64]| DiagnosticRecord {
        step: s.step_count(),
        t: s.time(),
        l2_error: has_exact.then(|| s.l2_error(u, s.time())),
        conserved_integral: s.conserved_integral(u),
    };
    let mut diagnostics = vec![record(&solver, &initial)];
    let steps = cfg.n_steps();
    let mut stepping = RequestCounts::default();
    let mut diag = RequestCounts::default();
    let start = Instant::now();
    let every = if cfg.diagnostics_every == 0 { steps.max(1) } else { cfg.diagnostics_every };
    let mut done = 0;
    while done < steps {
        let chunk = every.min(steps - done);
        let before = stream.request_counts();
        solver.advance(chunk)?;
        let mid = stream.request_counts();
        stepping = stepping.plus(&mid.since(&before));
        done += chunk;
        if done < steps {
            let u = solver.state()?;
            solver.check_finite(&u)?;
            diagnostics.push(record(&solver, &u));
            diag = diag.plus(&stream.request_counts().since(&mid));
        }
    }
    let wall_time = start.elapsed();
    let before = stream.request_counts();
    let final_state = solver.state()?;
    let teardown = stream.request_counts().since(&before);
    solver.check_finite(&final_state)?;
    if steps > 0 {
        diagnostics.push(record(&solver, &final_state));
    }
    Ok(SimulationResult {
        config: cfg.clone(),
        initial,
        final_state,
        positions: solver.positions().to_vec(),
        steps,
        dt: solver.dt(),
        t_final: solver.time(),
        diagnostics,
        wall_time,
        requests: RunSummary { setup: c1.since(&c0), stepping, diagnostics: diag, teardown },
        flops_per_step: flops_per_step(cfg.p, cfg.n_elements),
    })
}

/// Runs `cfg` on the default stream of a fresh single-device runtime.
pub fn run_simulation(cfg: &SolverConfig) -> Result<SimulationResult> {
    let rt = crate::Runtime::with_devices(1)?;
    let stream = rt.get_default_stream(0)?;
    stream.set_request_logging(false);
    run_simulation_on(&stream, cfg)
}
