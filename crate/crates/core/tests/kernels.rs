mod common;

use std::collections::BTreeMap;
use std::process::Command;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamforge::codegen::compiler_available;
use streamforge::kernel::builtin;
use streamforge::{
    kargs, DType, Error, HostArray, HostBuffer, IntrinsicFn, KernelArg, KernelHandle, OffloadArray, OffloadStream,
    Origin, RequestKind, Runtime, Scalar,
};

#[test]
fn builtin_libraries_are_registered() {
    let rt = Runtime::with_devices(1).unwrap();
    let dev = rt.device(0).unwrap();
    let syms = dev.load_library(builtin::ELEMENTWISE).unwrap().symbols();
    for name in ["fill_f64", "zero_f64", "add_f64", "multiply_f64", "add_i64", "fill_f32", "multiply_c128"] {
        assert!(syms.iter().any(|s| s == name), "{name} missing");
    }
    let gemm = dev.load_library(builtin::GEMM).unwrap();
    assert_eq!(gemm.symbols(), ["mydgemm", "mysgemm"]);
}

#[test]
fn lookup_is_idempotent_and_unknown_symbols_fail() {
    let rt = Runtime::with_devices(1).unwrap();
    let lib = rt.device(0).unwrap().load_library(builtin::GEMM).unwrap();
    assert_eq!(lib.get_kernel("mydgemm").unwrap(), lib.get_kernel("mydgemm").unwrap());
    assert_ne!(lib.get_kernel("mydgemm").unwrap(), lib.get_kernel("mysgemm").unwrap());
    assert!(matches!(lib.get_kernel("mydgem"), Err(Error::SymbolNotFound { symbol, .. }) if symbol == "mydgem"));
}

#[test]
fn missing_library_fails_to_load() {
    let rt = Runtime::with_devices(1).unwrap();
    let err = rt.device(0).unwrap().load_library("/nonexistent/libdgemm.so").unwrap_err();
    assert!(matches!(err, Error::LibraryLoad { .. }));
}

#[test]
fn registering_a_name_twice_is_rejected() {
    let rt = Runtime::with_devices(1).unwrap();
    let calls = Arc::new(Mutex::new(Vec::new()));
    let seen = calls.clone();
    let saxpy: IntrinsicFn = Arc::new(move |a| {
        seen.lock().unwrap().push(a.len());
        let alpha: f64 = a.scalar(0)?;
        let x = a.read::<f64>(1)?;
        for (y, x) in a.slice_mut::<f64>(2)?.iter_mut().zip(x) {
            *y += alpha * x;
        }
        Ok(())
    });
    let lib: BTreeMap<String, IntrinsicFn> = [("saxpy_f64".to_string(), saxpy)].into_iter().collect();
    rt.register_intrinsic_library("mine", lib.clone()).unwrap();
    assert!(matches!(rt.register_intrinsic_library("mine", lib.clone()), Err(Error::InvalidArgument(_))));
    assert!(matches!(rt.register_intrinsic_library(builtin::GEMM, lib), Err(Error::InvalidArgument(_))));

    let s = rt.get_default_stream(0).unwrap();
    let k = s.device().load_library("mine").unwrap().get_kernel("saxpy_f64").unwrap();
    let y = HostArray::from_vec(&[1.0f64, 1.0]).unwrap();
    s.invoke(&k, kargs![2.0, HostArray::from_vec(&[1.0f64, 2.0]).unwrap(), &y]).unwrap();
    s.sync().unwrap();
    assert_eq!(y.to_vec::<f64>().unwrap(), vec![3.0, 5.0]);
    assert_eq!(*calls.lock().unwrap(), vec![3]);
}

#[test]
fn identity_gemm_two_by_two() {
    let rt = Runtime::with_devices(1).unwrap();
    let s = rt.get_default_stream(0).unwrap();
    let k = s.device().load_library(builtin::GEMM).unwrap().get_kernel("mydgemm").unwrap();
    let a = HostArray::from_slice(&[1.0f64, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
    let b = HostArray::from_slice(&[1.0f64, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
    let c = HostArray::zeros(DType::F64, &[2, 2]).unwrap();
    s.invoke(&k, kargs![&a, &b, &c, 2i64, 2i64, 2i64, 1.0, 0.0]).unwrap();
    s.sync().unwrap();
    assert_eq!(c.to_vec::<f64>().unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn invoke_enqueues_staging_kernel_and_copy_out_back_to_back() {
    let rt = Runtime::with_devices(1).unwrap();
    let s = rt.get_default_stream(0).unwrap();
    let k = s.device().load_library(builtin::ELEMENTWISE).unwrap().get_kernel("fill_f64").unwrap();
    let x = HostArray::from_vec(&[0.0f64; 3]).unwrap();
    s.invoke(&k, kargs![&x, 1.5, 3i64]).unwrap();
    s.sync().unwrap();
    let got: Vec<(RequestKind, Origin)> = s.request_log().iter().map(|r| (r.kind, r.origin)).collect();
    use Origin::*;
    use RequestKind::*;
    assert_eq!(
        got,
        [
            (Alloc, Staging),
            (TransferH2D, CopyIn),
            (Alloc, Staging),
            (TransferH2D, ScalarCopyIn),
            (Alloc, Staging),
            (TransferH2D, ScalarCopyIn),
            (Invoke, User),
            (TransferD2H, CopyOut),
            (Dealloc, Staging),
            (Dealloc, Staging),
            (Dealloc, Staging),
        ]
    );
    assert_eq!(x.to_vec::<f64>().unwrap(), vec![1.5; 3]);
    assert_eq!(s.device().memory_stats().live_allocations, 0);
}

#[test]
fn kernels_of_another_device_are_rejected() {
    let rt = Runtime::with_devices(2).unwrap();
    let k = rt.device(1).unwrap().load_library(builtin::GEMM).unwrap().get_kernel("mydgemm").unwrap();
    let s0 = rt.get_default_stream(0).unwrap();
    assert!(matches!(s0.invoke(&k, Vec::new()), Err(Error::InvalidArgument(_))));
    let p = rt.get_default_stream(1).unwrap().allocate(8).unwrap();
    let k0 = s0.device().load_library(builtin::GEMM).unwrap().get_kernel("mydgemm").unwrap();
    assert!(matches!(s0.invoke(&k0, kargs![&p]), Err(Error::InvalidArgument(_))));
}

#[test]
fn kernel_failures_surface_at_sync() {
    let rt = Runtime::with_devices(1).unwrap();
    let s = rt.get_default_stream(0).unwrap();
    let k = s.device().load_library(builtin::ELEMENTWISE).unwrap().get_kernel("zero_f64").unwrap();
    // Too few elements for the requested count.
    s.invoke(&k, kargs![HostArray::from_vec(&[1.0f64]).unwrap(), 10i64]).unwrap();
    assert!(matches!(s.sync().unwrap_err(), Error::KernelFailed { kernel, .. } if kernel == "zero_f64"));
    assert_eq!(s.device().memory_stats().live_allocations, 0);
}

/// One argument of a fidelity call, tagged with the first i64 the kernel
/// should find behind its address.
fn fidelity_args(s: &OffloadStream, rng: &mut ChaCha8Rng, arity: usize) -> (Vec<KernelArg>, HostArray, Vec<i64>) {
    let out = HostArray::from_vec(&[0i64; 16]).unwrap();
    let mut args: Vec<KernelArg> = vec![(&out).into()];
    let mut tags = vec![0i64];
    for _ in 1..arity {
        let tag: i64 = rng.gen_range(1..1 << 40);
        tags.push(tag);
        args.push(match rng.gen_range(0..4) {
            0 => Scalar::I64(tag).into(),
            1 => HostArray::from_vec(&[tag, -1]).unwrap().into(),
            2 => OffloadArray::bind(s, &HostArray::from_vec(&[tag]).unwrap(), true).unwrap().into(),
            _ => {
                let p = s.allocate(8).unwrap();
                s.transfer_host2device(&HostBuffer::from_slice(&[tag]), &p, 8, 0, 0).unwrap();
                p.into()
            }
        });
    }
    (args, out, tags)
}

fn check_fidelity(s: &OffloadStream, kernel_for: impl Fn(usize) -> KernelHandle) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for arity in 1..=16 {
        for _ in 0..8 {
            let (args, out, tags) = fidelity_args(s, &mut rng, arity);
            s.invoke(&kernel_for(arity), args).unwrap();
            s.sync().unwrap();
            assert_eq!(&out.to_vec::<i64>().unwrap()[..arity], &tags[..], "arity {arity}");
        }
    }
}

#[test]
fn arguments_arrive_in_positional_order() {
    let rt = Runtime::with_devices(1).unwrap();
    let gather: IntrinsicFn = Arc::new(|a| {
        let tags: Vec<i64> = (1..a.len()).map(|i| a.read::<i64>(i).map(|v| v[0])).collect::<Result<_, _>>()?;
        a.slice_mut::<i64>(0)?[1..=tags.len()].copy_from_slice(&tags);
        Ok(())
    });
    rt.register_intrinsic_library("gather", [("gather".to_string(), gather)].into_iter().collect()).unwrap();
    let s = rt.get_default_stream(0).unwrap();
    let k = s.device().load_library("gather").unwrap().get_kernel("gather").unwrap();
    check_fidelity(&s, |_| k.clone());
}

fn compile_c(dir: &std::path::Path, source: &str) -> std::path::PathBuf {
    let (c, so) = (dir.join("k.c"), dir.join("libk.so"));
    std::fs::write(&c, source).unwrap();
    let st = Command::new("cc").args(["-O2", "-shared", "-fPIC", "-o"]).arg(&so).arg(&c).status().unwrap();
    assert!(st.success());
    so
}

#[test]
fn native_module_arguments_arrive_in_positional_order() {
    if !compiler_available("cc") {
        eprintln!("no C compiler; skipping");
        return;
    }
    let mut src = String::from("#include <stdint.h>\n");
    for arity in 1..=16 {
        let params: Vec<String> = (0..arity).map(|i| format!("int64_t *a{i}")).collect();
        src.push_str(&format!("void gather{arity}({}) {{\n", params.join(", ")));
        for i in 1..arity {
            src.push_str(&format!("    a0[{i}] = a{i}[0];\n"));
        }
        src.push_str("}\n");
    }
    let dir = tempfile::tempdir().unwrap();
    let so = compile_c(dir.path(), &src);
    let rt = Runtime::with_devices(1).unwrap();
    let s = rt.get_default_stream(0).unwrap();
    let lib = s.device().load_library(so.to_str().unwrap()).unwrap();
    check_fidelity(&s, |arity| lib.get_kernel(&format!("gather{arity}")).unwrap());
    assert!(lib.get_kernel("nothing").is_err());
}

#[test]
fn native_dgemm_module() {
    if !compiler_available("cc") {
        eprintln!("no C compiler; skipping");
        return;
    }
    let src = r#"
#include <stdint.h>
void mydgemm(const double *a, const double *b, double *c, const int64_t *m, const int64_t *n,
             const int64_t *k, const double *alpha, const double *beta) {
    for (int64_t i = 0; i < *m; i++)
        for (int64_t j = 0; j < *n; j++) {
            double s = 0.0;
            for (int64_t l = 0; l < *k; l++) s += a[i * *k + l] * b[l * *n + j];
            c[i * *n + j] = *alpha * s + *beta * c[i * *n + j];
        }
}
"#;
    let dir = tempfile::tempdir().unwrap();
    let so = compile_c(dir.path(), src);
    let rt = Runtime::with_devices(1).unwrap();
    let s = rt.get_default_stream(0).unwrap();
    let k = s.device().load_library(so.to_str().unwrap()).unwrap().get_kernel("mydgemm").unwrap();
    assert!(k.is_native());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (m, n, kk) = (37, 21, 50);
    let gen = |rng: &mut ChaCha8Rng, len| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let (a, b, c) = (gen(&mut rng, m * kk), gen(&mut rng, kk * n), gen(&mut rng, m * n));
    let hc = HostArray::from_slice(&c, &[m, n]).unwrap();
    let args = kargs![
        HostArray::from_slice(&a, &[m, kk]).unwrap(),
        HostArray::from_slice(&b, &[kk, n]).unwrap(),
        &hc,
        m as i64,
        n as i64,
        kk as i64,
        0.5,
        2.0
    ];
    s.invoke(&k, args).unwrap();
    s.sync().unwrap();
    let want = common::triple_loop(&a, &b, &c, m, n, kk, 0.5, 2.0);
    assert!(common::frobenius_rel(&hc.to_vec::<f64>().unwrap(), &want) < 1e-15);
}
