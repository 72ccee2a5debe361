//! C translation units for pointwise kernels.
//!
//! The exported function takes the point count first, then one pointer per
//! surviving parameter:
//!
//! ```c
//! SF_KERNEL void name(const int64_t *npts, <params>...)
//! ```
//!
//! Arrays are laid out structure-of-arrays with points fastest: value `k` of
//! point `i` lives at `p[k*npts + i]`. Scalar parameters arrive as pointers
//! to their 8-byte encodings (`double` or `int64_t`).

use std::fmt::Write;

use sha2::{Digest, Sha256};

use super::spec::{BaseType, Intent, KernelSpec, Param, Precision};
use super::template::{expand_body, prune_unused_args, suffix_float_constants};
use super::{lex, CodegenError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedSource {
    pub name: String,
    /// The complete translation unit.
    pub text: String,
    /// Parameters left after pruning, in declaration order. Callers pass the
    /// point count and then exactly these.
    pub pruned_params: Vec<Param>,
    pub entry_symbol: String,
    /// Expanded, comment-free, suffixed statements for one point.
    pub statements: Vec<String>,
    pub precision: Precision,
}

impl GeneratedSource {
    /// Hex SHA-256 of the text.
    pub fn digest(&self) -> String {
        Sha256::digest(self.text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.pruned_params.iter().map(|p| p.name.as_str()).collect()
    }
}

fn elem_type(p: &Param) -> &'static str {
    match p.base_type {
        BaseType::Fp => "fpdtype_t",
        BaseType::I64 => "int64_t",
    }
}

fn point_param(p: &Param) -> String {
    let t = elem_type(p);
    match (p.intent, p.indexed) {
        (Intent::Scalar, _) | (Intent::In, false) => format!("const {t} {}", p.name),
        (Intent::In, true) => format!("const {t} {}[{}]", p.name, p.per_point_extent),
        (_, false) => format!("{t} *_p_{}", p.name),
        (_, true) => format!("{t} {}[{}]", p.name, p.per_point_extent),
    }
}

fn kernel_param(p: &Param) -> String {
    match (p.intent, p.base_type) {
        (Intent::Scalar, BaseType::Fp) => format!("const double *{}", p.name),
        (Intent::Scalar, BaseType::I64) => format!("const int64_t *{}", p.name),
        (Intent::In, _) => format!("const {} *{}", elem_type(p), p.name),
        _ => format!("{} *{}", elem_type(p), p.name),
    }
}

/// Builds the translation unit for `spec`.
pub fn generate_pointwise_source(spec: &KernelSpec) -> Result<GeneratedSource, CodegenError> {
    let expanded = expand_body(spec)?;
    let pruned = prune_unused_args(spec, &expanded);
    let precision = spec.context.precision;
    let statements: Vec<String> = expanded
        .iter()
        .map(|s| suffix_float_constants(lex::strip_comments(s).trim(), precision))
        .filter(|s| !s.is_empty())
        .collect();
    let name = &spec.name;

    let mut t = String::new();
    let w = &mut t;
    let _ = writeln!(w, "/* pointwise kernel {name} */");
    let _ = writeln!(w, "#include <stdint.h>");
    let _ = writeln!(w, "#include <math.h>");
    let _ = writeln!(w);
    let _ = writeln!(w, "#define SF_KERNEL __attribute__((visibility(\"default\")))");
    let _ = writeln!(w);
    let _ = writeln!(w, "typedef {} fpdtype_t;", precision.c_type());
    let _ = writeln!(w);

    let pp: Vec<String> = pruned.iter().map(point_param).collect();
    let _ = writeln!(w, "static inline void\n{name}_point({})", if pp.is_empty() { "void".into() } else { pp.join(", ") });
    let _ = writeln!(w, "{{");
    for p in pruned.iter().filter(|p| p.intent.writes() && !p.indexed) {
        let _ = writeln!(w, "    {} {} = *_p_{};", elem_type(p), p.name, p.name);
    }
    for s in &statements {
        let _ = writeln!(w, "    {s}");
    }
    for p in pruned.iter().filter(|p| p.intent.writes() && !p.indexed) {
        let _ = writeln!(w, "    *_p_{} = {};", p.name, p.name);
    }
    let _ = writeln!(w, "}}");
    let _ = writeln!(w);

    let mut kp = vec!["const int64_t *npts".to_string()];
    kp.extend(pruned.iter().map(kernel_param));
    let _ = writeln!(w, "SF_KERNEL void\n{name}({})", kp.join(", "));
    let _ = writeln!(w, "{{");
    let _ = writeln!(w, "    const int64_t _n = *npts;");
    for p in pruned.iter().filter(|p| p.intent == Intent::Scalar) {
        let _ = writeln!(w, "    const {} _s_{} = ({}) *{};", elem_type(p), p.name, elem_type(p), p.name);
    }
    let _ = writeln!(w);
    let _ = writeln!(w, "    #pragma omp parallel for");
    let _ = writeln!(w, "    for (int64_t _i = 0; _i < _n; _i++)");
    let _ = writeln!(w, "    {{");
    let mut call = Vec::new();
    for p in &pruned {
        let (n, e) = (&p.name, p.per_point_extent);
        match (p.intent, p.indexed) {
            (Intent::Scalar, _) => call.push(format!("_s_{n}")),
            (Intent::In, false) => call.push(format!("{n}[_i]")),
            (_, false) => call.push(format!("&{n}[_i]")),
            (intent, true) => {
                let _ = writeln!(w, "        {} _v_{n}[{e}];", elem_type(p));
                if intent != Intent::Out {
                    let _ = writeln!(w, "        for (int _k = 0; _k < {e}; _k++) _v_{n}[_k] = {n}[_k*_n + _i];");
                } else {
                    let _ = writeln!(w, "        for (int _k = 0; _k < {e}; _k++) _v_{n}[_k] = 0;");
                }
                call.push(format!("_v_{n}"));
            }
        }
    }
    let _ = writeln!(w, "        {name}_point({});", call.join(", "));
    for p in pruned.iter().filter(|p| p.intent.writes() && p.indexed) {
        let (n, e) = (&p.name, p.per_point_extent);
        let _ = writeln!(w, "        for (int _k = 0; _k < {e}; _k++) {n}[_k*_n + _i] = _v_{n}[_k];");
    }
    let _ = writeln!(w, "    }}");
    let _ = writeln!(w, "}}");

    Ok(GeneratedSource {
        name: name.clone(),
        text: t,
        pruned_params: pruned,
        entry_symbol: name.clone(),
        statements,
        precision,
    })
}
