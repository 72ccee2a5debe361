//! Built-in intrinsic kernel libraries.
//!
//! `builtin-elementwise`, for each `T` in `i64`, `f32`, `f64`, `c128`:
//!
//! | kernel         | arguments          | effect                 |
//! |----------------|--------------------|------------------------|
//! | `fill_T`       | `x, value, n`      | `x[i] = value`         |
//! | `zero_T`       | `x, n`             | `x[i] = 0`             |
//! | `add_T`        | `x, y, n`          | `x[i] = x[i] + y[i]`   |
//! | `multiply_T`   | `x, y, n`          | `x[i] = x[i] * y[i]`   |
//!
//! `n` is an `i64`. `value` is an `i64` for `i64`, an `f64` for `f32` and
//! `f64` (rounded for `f32`), and a `c128` for `c128`. Integer arithmetic
//! wraps.
//!
//! `builtin-gemm`: `mydgemm(A, B, C, m, n, k, alpha, beta)` and its `f32`
//! sibling `mysgemm`, computing `C = alpha*A*B + beta*C` on row-major `A`
//! (m×k), `B` (k×n) and `C` (m×n). `m`, `n`, `k` are `i64`; `alpha` and
//! `beta` are `f64` for both.

use std::collections::HashMap;
use std::sync::Arc;

use bytemuck::Pod;
use num_complex::Complex64;

use super::{IntrinsicFn, KernelArgs};

pub const ELEMENTWISE: &str = "builtin-elementwise";
pub const GEMM: &str = "builtin-gemm";

type KResult = Result<(), String>;

fn check_len<T>(args: &KernelArgs, i: usize, n: usize) -> KResult {
    let have = args.bytes(i)?.len();
    let need = n * std::mem::size_of::<T>();
    if have < need {
        return Err(format!("argument {i} holds {have} bytes, {n} elements need {need}"));
    }
    Ok(())
}

trait Arith: Pod {
    const SUFFIX: &'static str;
    type Value: Pod;
    fn from_value(v: Self::Value) -> Self;
    fn add(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
}

impl Arith for i64 {
    const SUFFIX: &'static str = "i64";
    type Value = i64;
    fn from_value(v: i64) -> Self {
        v
    }
    fn add(self, o: Self) -> Self {
        self.wrapping_add(o)
    }
    fn mul(self, o: Self) -> Self {
        self.wrapping_mul(o)
    }
}

impl Arith for f32 {
    const SUFFIX: &'static str = "f32";
    type Value = f64;
    fn from_value(v: f64) -> Self {
        v as f32
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
}

impl Arith for f64 {
    const SUFFIX: &'static str = "f64";
    type Value = f64;
    fn from_value(v: f64) -> Self {
        v
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
}

impl Arith for Complex64 {
    const SUFFIX: &'static str = "c128";
    type Value = Complex64;
    fn from_value(v: Complex64) -> Self {
        v
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
}

fn fill<T: Arith>(a: &mut KernelArgs) -> KResult {
    let v = T::from_value(a.scalar::<T::Value>(1)?);
    let n = a.count(2)?;
    check_len::<T>(a, 0, n)?;
    a.slice_mut::<T>(0)?[..n].fill(v);
    Ok(())
}

fn zero<T: Arith>(a: &mut KernelArgs) -> KResult {
    let n = a.count(1)?;
    check_len::<T>(a, 0, n)?;
    a.slice_mut::<T>(0)?[..n].fill(T::zeroed());
    Ok(())
}

fn binary<T: Arith>(a: &mut KernelArgs, op: fn(T, T) -> T) -> KResult {
    let n = a.count(2)?;
    check_len::<T>(a, 0, n)?;
    check_len::<T>(a, 1, n)?;
    let y = a.read::<T>(1)?;
    for (x, y) in a.slice_mut::<T>(0)?[..n].iter_mut().zip(&y[..n]) {
        *x = op(*x, *y);
    }
    Ok(())
}

fn insert<T: Arith>(m: &mut HashMap<String, IntrinsicFn>) {
    m.insert(format!("fill_{}", T::SUFFIX), Arc::new(fill::<T>));
    m.insert(format!("zero_{}", T::SUFFIX), Arc::new(zero::<T>));
    m.insert(format!("add_{}", T::SUFFIX), Arc::new(|a: &mut KernelArgs| binary::<T>(a, T::add)));
    m.insert(format!("multiply_{}", T::SUFFIX), Arc::new(|a: &mut KernelArgs| binary::<T>(a, T::mul)));
}

pub fn elementwise() -> HashMap<String, IntrinsicFn> {
    let mut m = HashMap::new();
    insert::<i64>(&mut m);
    insert::<f32>(&mut m);
    insert::<f64>(&mut m);
    insert::<Complex64>(&mut m);
    m
}

struct Dims {
    m: usize,
    n: usize,
    k: usize,
    alpha: f64,
    beta: f64,
}

fn gemm_dims<T>(a: &KernelArgs) -> Result<Dims, String> {
    let d = Dims { m: a.count(3)?, n: a.count(4)?, k: a.count(5)?, alpha: a.scalar(6)?, beta: a.scalar(7)? };
    check_len::<T>(a, 0, d.m * d.k)?;
    check_len::<T>(a, 1, d.k * d.n)?;
    check_len::<T>(a, 2, d.m * d.n)?;
    Ok(d)
}

macro_rules! gemm_kernel {
    ($name:ident, $t:ty, $mm:path) => {
        fn $name(a: &mut KernelArgs) -> KResult {
            let d = gemm_dims::<$t>(a)?;
            if d.m == 0 || d.n == 0 {
                return Ok(());
            }
            // Copy inputs that alias the output; matrixmultiply needs C disjoint.
            let ca = (!a.disjoint(0, 2)?).then(|| a.read::<$t>(0)).transpose()?;
            let cb = (!a.disjoint(1, 2)?).then(|| a.read::<$t>(1)).transpose()?;
            let pa = match &ca {
                Some(v) => v.as_ptr(),
                None => a.slice::<$t>(0)?.as_ptr(),
            };
            let pb = match &cb {
                Some(v) => v.as_ptr(),
                None => a.slice::<$t>(1)?.as_ptr(),
            };
            let c = a.slice_mut::<$t>(2)?.as_mut_ptr();
            let (m, n, k) = (d.m, d.n, d.k);
            // SAFETY: lengths checked in gemm_dims; C does not alias A or B.
            unsafe {
                $mm(
                    m, k, n, d.alpha as $t, pa, k as isize, 1, pb, n as isize, 1, d.beta as $t, c, n as isize, 1,
                );
            }
            Ok(())
        }
    };
}

gemm_kernel!(mydgemm, f64, matrixmultiply::dgemm);
gemm_kernel!(mysgemm, f32, matrixmultiply::sgemm);

pub fn gemm() -> HashMap<String, IntrinsicFn> {
    let mut m: HashMap<String, IntrinsicFn> = HashMap::new();
    m.insert("mydgemm".into(), Arc::new(mydgemm));
    m.insert("mysgemm".into(), Arc::new(mysgemm));
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(f: &IntrinsicFn, mem: &mut [u8], regions: Vec<(usize, usize)>) -> KResult {
        f(&mut KernelArgs::new(mem, regions))
    }

    #[test]
    fn elementwise_f64() {
        let lib = elementwise();
        let mut mem = vec![0u8; 128];
        mem[64..72].copy_from_slice(&3.5f64.to_le_bytes());
        mem[72..80].copy_from_slice(&4i64.to_le_bytes());
        run(&lib["fill_f64"], &mut mem, vec![(0, 32), (64, 8), (72, 8)]).unwrap();
        let x: Vec<f64> = bytemuck::pod_read_unaligned::<[f64; 4]>(&mem[..32]).to_vec();
        assert_eq!(x, vec![3.5; 4]);
        run(&lib["add_f64"], &mut mem, vec![(0, 32), (0, 32), (72, 8)]).unwrap();
        assert_eq!(bytemuck::pod_read_unaligned::<f64>(&mem[24..32]), 7.0);
        mem[72..80].copy_from_slice(&5i64.to_le_bytes());
        assert!(run(&lib["zero_f64"], &mut mem, vec![(0, 32), (72, 8)]).is_err());
    }

    #[test]
    fn gemm_identity() {
        let lib = gemm();
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [1.0f64, 0.0, 0.0, 1.0];
        let mut mem = vec![0u8; 256];
        mem[..32].copy_from_slice(bytemuck::cast_slice(&a));
        mem[32..64].copy_from_slice(bytemuck::cast_slice(&b));
        for (i, v) in [2i64, 2, 2].iter().enumerate() {
            mem[96 + 8 * i..104 + 8 * i].copy_from_slice(&v.to_le_bytes());
        }
        mem[120..128].copy_from_slice(&1.0f64.to_le_bytes());
        mem[128..136].copy_from_slice(&0.0f64.to_le_bytes());
        let regions = vec![(0, 32), (32, 32), (64, 32), (96, 8), (104, 8), (112, 8), (120, 8), (128, 8)];
        run(&lib["mydgemm"], &mut mem, regions).unwrap();
        assert_eq!(bytemuck::pod_read_unaligned::<[f64; 4]>(&mem[64..96]), a);
    }
}
