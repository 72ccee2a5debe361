use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamforge::codegen::{
    self, compile_to_library, compiler_available, expand_body, generate_pointwise_source, kernels, prune_unused_args,
    suffix_float_constants, Backend, CodegenError, Context, Expr, Intent, KernelSpec, Param, Precision,
};
use streamforge::{Error, HostArray, KernelArg, OffloadStream, Runtime, Scalar};

fn names(params: &[Param]) -> Vec<&str> {
    params.iter().map(|p| p.name.as_str()).collect()
}

#[test]
fn negdivconf_unrolls_over_variables() {
    let ex: Vec<String> = (0..4).map(|k| format!("ex{k}")).collect();
    let spec = kernels::negdivconf(2, 4, Precision::F64, &ex);
    let body = expand_body(&spec).unwrap();
    let want: Vec<String> = (0..4).map(|k| format!("tdivf[{k}] = -rcpdjac*tdivf[{k}] + ex{k};")).collect();
    assert_eq!(body, want);
}

#[test]
fn empty_source_expression_adds_zero() {
    let body = expand_body(&kernels::negdivconf(1, 1, Precision::F64, &[])).unwrap();
    assert_eq!(body, ["tdivf[0] = -rcpdjac*tdivf[0] + 0;"]);
}

#[test]
fn unresolved_placeholder_is_named() {
    let spec = KernelSpec::new("bad", vec![Param::point("u", Intent::InOut)], "u = ${foo};", Context::new(1, 1, Precision::F64));
    assert_eq!(expand_body(&spec).unwrap_err(), CodegenError::UnresolvedPlaceholder("foo".into()));
    assert!(matches!(generate_pointwise_source(&spec), Err(CodegenError::UnresolvedPlaceholder(_))));
}

#[test]
fn pruning_follows_the_source_terms() {
    let prune = |src: &[&str]| {
        let src: Vec<String> = src.iter().map(|s| s.to_string()).collect();
        let spec = kernels::negdivconf(3, src.len().max(1), Precision::F64, &src);
        let body = expand_body(&spec).unwrap();
        names(&prune_unused_args(&spec, &body)).iter().map(|s| s.to_string()).collect::<Vec<_>>()
    };
    assert_eq!(prune(&[]), ["tdivf", "rcpdjac"]);
    assert_eq!(prune(&["sin(t)"]), ["t", "tdivf", "rcpdjac"]);
    assert_eq!(prune(&["ploc[0]*ploc[2]"]), ["tdivf", "ploc", "rcpdjac"]);
    assert_eq!(prune(&["t*ploc[1]", "0"]), ["t", "tdivf", "ploc", "rcpdjac"]);
    // Comments do not count as uses.
    let spec = KernelSpec::new(
        "c",
        vec![Param::scalar("t"), Param::point("u", Intent::InOut)],
        "u = 2.0*u; /* t */",
        Context::new(1, 1, Precision::F64),
    );
    assert_eq!(names(&generate_pointwise_source(&spec).unwrap().pruned_params), ["u"]);
}

#[test]
fn wide_negdivconf_prototype() {
    let src = generate_pointwise_source(&kernels::negdivconf(3, 5, Precision::F64, &[])).unwrap();
    assert_eq!(src.param_names(), ["tdivf", "rcpdjac"]);
    assert!(src.text.contains("SF_KERNEL void\nnegdivconf(const int64_t *npts, fpdtype_t *tdivf, const fpdtype_t *rcpdjac)"));
    assert_eq!(src.statements.len(), 5);
}

#[test]
fn suffixing_examples() {
    let line = "u = 0.5*u + 1e-3;";
    assert_eq!(suffix_float_constants(line, Precision::F32), "u = 0.5f*u + 1e-3f;");
    assert_eq!(suffix_float_constants(line, Precision::F64), line);
    assert_eq!(suffix_float_constants("n = 10;", Precision::F32), "n = 10;");
    assert_eq!(
        suffix_float_constants("x = .5 + 2. + 1.5E+2 + 3.0f + 0x1e5 + v1e5;", Precision::F32),
        "x = .5f + 2.f + 1.5E+2f + 3.0f + 0x1e5 + v1e5;"
    );
}

#[test]
fn single_precision_sources_carry_suffixed_literals() {
    let src = generate_pointwise_source(&kernels::rk4_combine(Precision::F32)).unwrap();
    assert!(src.text.contains("typedef float fpdtype_t;"));
    assert!(src.text.contains("2.0f*k2"));
    assert_eq!(suffix_float_constants(&src.text, Precision::F32), src.text);
}

#[test]
fn generation_is_deterministic() {
    for prec in [Precision::F32, Precision::F64] {
        for spec in kernels::all(prec) {
            let a = generate_pointwise_source(&spec).unwrap();
            let b = generate_pointwise_source(&spec.clone()).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.digest(), b.digest());
        }
    }
}

#[test]
fn copy_kernel_has_the_pointwise_call_form() {
    let src = generate_pointwise_source(&kernels::copy(Precision::F64)).unwrap();
    assert!(src.text.contains("copy_point(in1[_i], &out1[_i]);"), "{}", src.text);
    assert!(src.text.contains("#pragma omp parallel for"));
}

#[test]
fn every_source_exports_exactly_one_symbol() {
    for prec in [Precision::F32, Precision::F64] {
        for spec in kernels::all(prec) {
            let src = generate_pointwise_source(&spec).unwrap();
            let exported = src.text.lines().filter(|l| l.trim_start().starts_with("SF_KERNEL ")).count();
            assert_eq!(exported, 1, "{}", spec.name);
            assert_eq!(src.entry_symbol, spec.name);
            let opens = src.text.matches('{').count();
            assert_eq!(opens, src.text.matches('}').count());
        }
    }
}

#[test]
fn all_used_params_survive_pruning() {
    let spec = kernels::rk4_combine(Precision::F64);
    let body = expand_body(&spec).unwrap();
    assert_eq!(prune_unused_args(&spec, &body), spec.params);
}

#[test]
fn invalid_specs_are_rejected() {
    let dup = KernelSpec::new(
        "dup",
        vec![Param::point("u", Intent::InOut), Param::point("u", Intent::In)],
        "u = u;",
        Context::new(1, 1, Precision::F64),
    );
    assert!(matches!(generate_pointwise_source(&dup), Err(CodegenError::InvalidSpec(_))));
    let reserved = KernelSpec::new("r", vec![Param::point("npts", Intent::InOut)], "npts = 1.0;", Context::new(1, 1, Precision::F64));
    assert!(matches!(generate_pointwise_source(&reserved), Err(CodegenError::InvalidSpec(_))));
}

/// Random inputs for every pruned parameter of `src`: scalars, then arrays
/// of `extent*npts` values.
struct Inputs {
    npts: usize,
    scalars: Vec<f64>,
    arrays: Vec<Vec<f64>>,
}

fn random_inputs(src: &codegen::GeneratedSource, rng: &mut ChaCha8Rng) -> Inputs {
    let npts = rng.gen_range(1..300);
    let mut scalars = Vec::new();
    let mut arrays = Vec::new();
    for p in &src.pruned_params {
        if p.intent == Intent::Scalar {
            scalars.push(rng.gen_range(-2.0..2.0));
        } else {
            arrays.push((0..p.per_point_extent * npts).map(|_| rng.gen_range(-2.0..2.0)).collect());
        }
    }
    Inputs { npts, scalars, arrays }
}

fn run_kernel(stream: &OffloadStream, src: &codegen::GeneratedSource, backend: &Backend, inp: &Inputs) -> Vec<Vec<f64>> {
    let k = codegen::load_kernel(stream.device(), src, backend).unwrap();
    let mut args: Vec<KernelArg> = vec![Scalar::I64(inp.npts as i64).into()];
    let (mut si, mut hosts) = (0, Vec::new());
    for p in &src.pruned_params {
        if p.intent == Intent::Scalar {
            args.push(Scalar::F64(inp.scalars[si]).into());
            si += 1;
        } else {
            let data = &inp.arrays[hosts.len()];
            let h = match src.precision {
                Precision::F64 => HostArray::from_vec(data).unwrap(),
                Precision::F32 => HostArray::from_vec(&data.iter().map(|&v| v as f32).collect::<Vec<_>>()).unwrap(),
            };
            args.push((&h).into());
            hosts.push(h);
        }
    }
    stream.invoke(&k, args).unwrap();
    stream.sync().unwrap();
    hosts
        .iter()
        .map(|h| match src.precision {
            Precision::F64 => h.to_vec::<f64>().unwrap(),
            Precision::F32 => h.to_vec::<f32>().unwrap().into_iter().map(f64::from).collect(),
        })
        .collect()
}

#[test]
fn interpreter_matches_host_formulas() {
    let rt = Runtime::with_devices(1).unwrap();
    let s = rt.get_default_stream(0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let src = generate_pointwise_source(&kernels::rk4_combine(Precision::F64)).unwrap();
    let inp = random_inputs(&src, &mut rng);
    let out = run_kernel(&s, &src, &Backend::Intrinsic, &inp);
    let c = inp.scalars[0];
    let a = &inp.arrays;
    for i in 0..inp.npts {
        let want = a[0][i] + c * (a[1][i] + 2.0 * a[2][i] + 2.0 * a[3][i] + a[4][i]);
        assert_eq!(out[0][i], want);
    }
    let src = generate_pointwise_source(&kernels::riemann_upwind(Precision::F64)).unwrap();
    let inp = random_inputs(&src, &mut rng);
    let out = run_kernel(&s, &src, &Backend::Intrinsic, &inp);
    let a = inp.scalars[0];
    for ((got, l), r) in out[2].iter().zip(&inp.arrays[0]).zip(&inp.arrays[1]).take(inp.npts) {
        let want = if a > 0.0 { a * l } else { a * r };
        assert_eq!(*got, want);
    }
}

fn toolchain() -> Option<tempfile::TempDir> {
    if compiler_available(&codegen::compiler_command()) {
        Some(tempfile::tempdir().unwrap())
    } else {
        eprintln!("no C toolchain; skipping");
        None
    }
}

#[test]
fn compiled_kernels_match_the_interpreter() {
    let Some(dir) = toolchain() else { return };
    let rt = Runtime::with_devices(1).unwrap();
    let s = rt.get_default_stream(0).unwrap();
    let compiled = Backend::Compiled { workdir: dir.path().to_path_buf(), compiler: None };
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for prec in [Precision::F64, Precision::F32] {
        let mut specs = kernels::all(prec);
        specs.push(kernels::negdivconf(3, 2, prec, &["sin(t)*ploc[0]".into(), "exp(-ploc[2]) + 1.5".into()]));
        for spec in specs {
            let src = generate_pointwise_source(&spec).unwrap();
            for _ in 0..5 {
                let inp = random_inputs(&src, &mut rng);
                let want = run_kernel(&s, &src, &Backend::Intrinsic, &inp);
                let got = run_kernel(&s, &src, &compiled, &inp);
                for (g, w) in got.iter().flatten().zip(want.iter().flatten()) {
                    match prec {
                        Precision::F64 => assert!((g - w).abs() <= 1e-14, "{}: {g} vs {w}", spec.name),
                        Precision::F32 => assert!((g - w).abs() <= 1e-5 * w.abs().max(1.0), "{}: {g} vs {w}", spec.name),
                    }
                }
            }
        }
    }
}

#[test]
fn compiled_modules_are_cached_by_content() {
    let Some(dir) = toolchain() else { return };
    let src = generate_pointwise_source(&kernels::axpy(Precision::F64)).unwrap();
    let first = compile_to_library(&src, dir.path(), None).unwrap();
    assert!(!first.cache_hit);
    let name = first.path.file_name().unwrap().to_string_lossy().into_owned();
    assert!(name.starts_with(&format!("axpy-{}", &src.digest()[..8])));
    assert!(first.path.parent().unwrap().ends_with(codegen::CACHE_DIR));
    // A compiler that cannot run proves the second call never invokes it.
    let second = compile_to_library(&src, dir.path(), Some("/nonexistent/cc")).unwrap();
    assert!(second.cache_hit);
    assert_eq!(second.path, first.path);
}

#[test]
fn broken_source_reports_compiler_diagnostics() {
    let Some(dir) = toolchain() else { return };
    let mut src = generate_pointwise_source(&kernels::copy(Precision::F64)).unwrap();
    src.text.push_str("\nthis is not C;\n");
    match compile_to_library(&src, dir.path(), None).unwrap_err() {
        Error::Compile { diagnostics, source_path } => {
            assert!(!diagnostics.trim().is_empty());
            assert!(source_path.exists());
        }
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn spliced_expression_lists_need_one_entry_per_variable() {
    let spec = KernelSpec::new(
        "l",
        vec![Param::vector("u", Intent::InOut, 2)],
        "% for i in nvars\nu[${i}] = ${e[i]};\n% endfor",
        Context::new(1, 2, Precision::F64).with_expr("e", Expr::List(vec!["1.0".into()])),
    );
    assert!(generate_pointwise_source(&spec).is_err());
}
