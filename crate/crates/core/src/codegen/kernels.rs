//! Pointwise kernels used by the solver.

use super::spec::{Context, Expr, Intent, KernelSpec, Param, Precision};

/// `tdivf = -rcpdjac*tdivf + src` for each of `nvars` variables, with
/// source expressions `srcex` (one per variable, empty for none) that may
/// refer to `t` and `ploc[d]`.
pub fn negdivconf(ndims: usize, nvars: usize, precision: Precision, srcex: &[String]) -> KernelSpec {
    let mut ex: Vec<String> = srcex.to_vec();
    ex.resize(nvars, String::new());
    KernelSpec::new(
        "negdivconf",
        vec![
            Param::scalar("t"),
            Param::vector("tdivf", Intent::InOut, nvars),
            Param::vector("ploc", Intent::In, ndims),
            Param::point("rcpdjac", Intent::In),
        ],
        "% for i in nvars\n\
         tdivf[${i}] = -rcpdjac*tdivf[${i}] + ${srcex[i]};\n\
         % endfor",
        Context::new(ndims, nvars, precision).with_expr("srcex", Expr::List(ex)),
    )
}

/// Upwind flux across an interface: `a*ul` if `a > 0`, else `a*ur`.
pub fn riemann_upwind(precision: Precision) -> KernelSpec {
    KernelSpec::new(
        "riemann_upwind",
        vec![
            Param::point("ul", Intent::In),
            Param::point("ur", Intent::In),
            Param::scalar("a"),
            Param::point("fc", Intent::Out),
        ],
        "fc = (a > 0.0) ? a*ul : a*ur;",
        Context::new(1, 1, precision),
    )
}

/// Face flux jumps of one element: `jmp[f] = fc[f] - a*uf[f]` for the left
/// (0) and right (1) face.
pub fn flux_jump(precision: Precision) -> KernelSpec {
    KernelSpec::new(
        "flux_jump",
        vec![
            Param::scalar("a"),
            Param::vector("uf", Intent::In, 2),
            Param::vector("fc", Intent::In, 2),
            Param::vector("jmp", Intent::Out, 2),
        ],
        "% for f in 2\n\
         jmp[${f}] = fc[${f}] - a*uf[${f}];\n\
         % endfor",
        Context::new(1, 1, precision),
    )
}

/// `out = u + c*k`.
pub fn axpy(precision: Precision) -> KernelSpec {
    KernelSpec::new(
        "axpy",
        vec![
            Param::scalar("c"),
            Param::point("u", Intent::In),
            Param::point("k", Intent::In),
            Param::point("out", Intent::Out),
        ],
        "out = u + c*k;",
        Context::new(1, 1, precision),
    )
}

/// Final classical Runge-Kutta update `u += c*(k1 + 2*k2 + 2*k3 + k4)`.
pub fn rk4_combine(precision: Precision) -> KernelSpec {
    KernelSpec::new(
        "rk4_combine",
        vec![
            Param::scalar("c"),
            Param::point("u", Intent::InOut),
            Param::point("k1", Intent::In),
            Param::point("k2", Intent::In),
            Param::point("k3", Intent::In),
            Param::point("k4", Intent::In),
        ],
        "u = u + c*(k1 + 2.0*k2 + 2.0*k3 + k4);",
        Context::new(1, 1, precision),
    )
}

/// `out1 = in1`.
pub fn copy(precision: Precision) -> KernelSpec {
    KernelSpec::new(
        "copy",
        vec![Param::point("in1", Intent::In), Param::point("out1", Intent::Out)],
        "out1 = in1;",
        Context::new(1, 1, precision),
    )
}

/// Every built-in kernel at `precision`, with no source terms.
pub fn all(precision: Precision) -> Vec<KernelSpec> {
    vec![
        negdivconf(1, 1, precision, &[]),
        riemann_upwind(precision),
        flux_jump(precision),
        axpy(precision),
        rk4_combine(precision),
        copy(precision),
    ]
}
