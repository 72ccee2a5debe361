//! Shared test support: a serial reference executor for random request
//! programs, plus small numeric oracles.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use streamforge::{DType, DevicePointer, HostArray, HostBuffer, IntrinsicFn, KernelArg, OffloadStream, Runtime, Scalar};

pub const HOSTS: usize = 3;
pub const HOST_LEN: usize = 256;
pub const FILL: u8 = 0xCD;
pub const BYTES_LIB: &str = "test-bytes";

/// `buf[i] = buf[i]*3 + k` over the raw bytes of argument 0, with `k` the
/// low byte of the i64 scalar in argument 1.
pub fn affine_byte(b: u8, k: i64) -> u8 {
    b.wrapping_mul(3).wrapping_add(k as u8)
}

pub fn bytes_library() -> BTreeMap<String, IntrinsicFn> {
    let affine: IntrinsicFn = Arc::new(|a| {
        let k: i64 = a.scalar(1)?;
        for b in a.bytes_mut(0)? {
            *b = affine_byte(*b, k);
        }
        Ok(())
    });
    let mut m = BTreeMap::new();
    m.insert("affine".to_string(), affine);
    m
}

pub fn runtime(devices: usize) -> Runtime {
    let rt = Runtime::with_devices(devices).unwrap();
    rt.register_intrinsic_library(BYTES_LIB, bytes_library()).unwrap();
    rt
}

#[derive(Debug, Clone)]
pub enum Op {
    Alloc { size: usize, align: usize },
    Dealloc { slot: usize },
    H2D { host: usize, slot: usize, n: usize, off_host: usize, off_dev: usize },
    D2H { slot: usize, host: usize, n: usize, off_dev: usize, off_host: usize },
    D2D { src: usize, dst: usize, n: usize, off_src: usize, off_dst: usize },
    /// `affine` on a device allocation (no automatic transfers).
    InvokeDevice { slot: usize, k: i64 },
    /// `affine` on a whole host buffer (copy-in, copy-out).
    InvokeHost { host: usize, k: i64 },
}

/// A random valid program of at most `max_len` requests. Every operation
/// refers only to live allocations and in-bounds ranges.
pub fn random_program(rng: &mut impl Rng, max_len: usize) -> Vec<Op> {
    let len = rng.gen_range(1..=max_len);
    let mut sizes: Vec<usize> = Vec::new();
    let mut live: Vec<usize> = Vec::new();
    let mut ops = Vec::with_capacity(len);
    while ops.len() < len {
        let choice = if live.is_empty() { 0 } else { rng.gen_range(0..10) };
        let op = match choice {
            0 | 1 => {
                let size = rng.gen_range(1..=192);
                let align = 1 << rng.gen_range(0..=12);
                sizes.push(size);
                live.push(sizes.len() - 1);
                Op::Alloc { size, align }
            }
            2 => {
                let i = rng.gen_range(0..live.len());
                Op::Dealloc { slot: live.swap_remove(i) }
            }
            3 | 4 => {
                let slot = *live.choose(rng).unwrap();
                let n = rng.gen_range(0..=sizes[slot]);
                Op::H2D {
                    host: rng.gen_range(0..HOSTS),
                    slot,
                    n,
                    off_host: rng.gen_range(0..=HOST_LEN - n),
                    off_dev: rng.gen_range(0..=sizes[slot] - n),
                }
            }
            5 | 6 => {
                let slot = *live.choose(rng).unwrap();
                let n = rng.gen_range(0..=sizes[slot]);
                Op::D2H {
                    slot,
                    host: rng.gen_range(0..HOSTS),
                    n,
                    off_dev: rng.gen_range(0..=sizes[slot] - n),
                    off_host: rng.gen_range(0..=HOST_LEN - n),
                }
            }
            7 => {
                let src = *live.choose(rng).unwrap();
                let dst = *live.choose(rng).unwrap();
                if src == dst {
                    // Two disjoint halves of one allocation.
                    let half = sizes[src] / 2;
                    let n = rng.gen_range(0..=half);
                    Op::D2D { src, dst, n, off_src: 0, off_dst: sizes[src] - n }
                } else {
                    let n = rng.gen_range(0..=sizes[src].min(sizes[dst]));
                    Op::D2D {
                        src,
                        dst,
                        n,
                        off_src: rng.gen_range(0..=sizes[src] - n),
                        off_dst: rng.gen_range(0..=sizes[dst] - n),
                    }
                }
            }
            8 => Op::InvokeDevice { slot: *live.choose(rng).unwrap(), k: rng.gen_range(0..256) },
            _ => Op::InvokeHost { host: rng.gen_range(0..HOSTS), k: rng.gen_range(0..256) },
        };
        ops.push(op);
    }
    ops
}

pub fn random_hosts(rng: &mut impl Rng) -> Vec<Vec<u8>> {
    (0..HOSTS).map(|_| (0..HOST_LEN).map(|_| rng.gen()).collect()).collect()
}

/// Final memory: host buffers, then the contents of every allocation still
/// live at the end (`None` for released ones).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryState {
    pub hosts: Vec<Vec<u8>>,
    pub devices: Vec<Option<Vec<u8>>>,
}

/// Executes `ops` one at a time on plain byte vectors.
pub fn reference_execute(ops: &[Op], hosts: &[Vec<u8>]) -> MemoryState {
    let mut hosts = hosts.to_vec();
    let mut dev: Vec<Option<Vec<u8>>> = Vec::new();
    for op in ops {
        match *op {
            Op::Alloc { size, .. } => dev.push(Some(vec![FILL; size])),
            Op::Dealloc { slot } => dev[slot] = None,
            Op::H2D { host, slot, n, off_host, off_dev } => {
                let src = hosts[host][off_host..off_host + n].to_vec();
                dev[slot].as_mut().unwrap()[off_dev..off_dev + n].copy_from_slice(&src);
            }
            Op::D2H { slot, host, n, off_dev, off_host } => {
                let src = dev[slot].as_ref().unwrap()[off_dev..off_dev + n].to_vec();
                hosts[host][off_host..off_host + n].copy_from_slice(&src);
            }
            Op::D2D { src, dst, n, off_src, off_dst } => {
                let bytes = dev[src].as_ref().unwrap()[off_src..off_src + n].to_vec();
                dev[dst].as_mut().unwrap()[off_dst..off_dst + n].copy_from_slice(&bytes);
            }
            Op::InvokeDevice { slot, k } => {
                for b in dev[slot].as_mut().unwrap() {
                    *b = affine_byte(*b, k);
                }
            }
            Op::InvokeHost { host, k } => {
                for b in &mut hosts[host] {
                    *b = affine_byte(*b, k);
                }
            }
        }
    }
    MemoryState { hosts, devices: dev }
}

/// Enqueues `ops` on `stream` without intermediate syncs; when `serial` is
/// set, syncs after every operation instead.
pub fn runtime_execute(stream: &OffloadStream, ops: &[Op], hosts: &[Vec<u8>], serial: bool) -> MemoryState {
    let bufs: Vec<HostBuffer> = hosts.iter().map(|h| HostBuffer::from_bytes(h)).collect();
    let lib = stream.device().load_library(BYTES_LIB).unwrap();
    let affine = lib.get_kernel("affine").unwrap();
    let mut ptrs: Vec<Option<DevicePointer>> = Vec::new();
    for op in ops {
        match *op {
            Op::Alloc { size, align } => ptrs.push(Some(stream.allocate_device_memory(size, align).unwrap())),
            Op::Dealloc { slot } => {
                let p = ptrs[slot].take().unwrap();
                stream.deallocate_device_memory(&p).unwrap();
            }
            Op::H2D { host, slot, n, off_host, off_dev } => {
                stream.transfer_host2device(&bufs[host], ptrs[slot].as_ref().unwrap(), n, off_host, off_dev).unwrap()
            }
            Op::D2H { slot, host, n, off_dev, off_host } => {
                stream.transfer_device2host(ptrs[slot].as_ref().unwrap(), &bufs[host], n, off_dev, off_host).unwrap()
            }
            Op::D2D { src, dst, n, off_src, off_dst } => stream
                .transfer_device2device(ptrs[src].as_ref().unwrap(), ptrs[dst].as_ref().unwrap(), n, off_src, off_dst)
                .unwrap(),
            Op::InvokeDevice { slot, k } => {
                let args: Vec<KernelArg> = vec![ptrs[slot].as_ref().unwrap().into(), Scalar::I64(k).into()];
                stream.invoke(&affine, args).unwrap()
            }
            Op::InvokeHost { host, k } => {
                let arr = HostArray::from_buffer(bufs[host].clone(), DType::I64, &[HOST_LEN / 8]).unwrap();
                let args: Vec<KernelArg> = vec![arr.into(), Scalar::I64(k).into()];
                stream.invoke(&affine, args).unwrap()
            }
        }
        if serial {
            stream.sync().unwrap();
        }
    }
    stream.sync().unwrap();
    let devices = ptrs
        .iter()
        .map(|p| {
            p.as_ref().map(|p| {
                let out = HostBuffer::zeroed(p.len());
                stream.transfer_device2host(p, &out, p.len(), 0, 0).unwrap();
                stream.sync().unwrap();
                out.to_bytes()
            })
        })
        .collect();
    MemoryState { hosts: bufs.iter().map(HostBuffer::to_bytes).collect(), devices }
}

/// Textbook triple-loop `alpha*A*B + beta*C`, row-major.
#[allow(clippy::too_many_arguments)]
pub fn triple_loop(a: &[f64], b: &[f64], c: &[f64], m: usize, n: usize, k: usize, alpha: f64, beta: f64) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[l * n + j];
            }
            out[i * n + j] = alpha * s + beta * c[i * n + j];
        }
    }
    out
}

pub fn frobenius_rel(got: &[f64], want: &[f64]) -> f64 {
    let num: f64 = got.iter().zip(want).map(|(g, w)| (g - w).powi(2)).sum();
    let den: f64 = want.iter().map(|w| w * w).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// Prints a pass/fail line and returns the verdict.
pub fn report(id: &str, pass: bool, detail: &str) -> bool {
    println!("[{}] criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}
