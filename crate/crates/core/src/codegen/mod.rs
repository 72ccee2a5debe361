//! Pointwise kernel generation.
//!
//! A [`KernelSpec`] describes a scalar computation applied independently at
//! every point. Generation expands the body template, prunes parameters the
//! body never mentions, suffixes floating literals in single precision and
//! emits a C translation unit with one exported entry point. The result
//! runs either compiled to a native module or through the in-process
//! interpreter; both take the same arguments.

mod compile;
mod emit;
mod interp;
pub mod kernels;
mod lex;
mod spec;
mod template;

use std::path::PathBuf;

pub use compile::{
    cache_paths, compile_to_library, compiler_available, compiler_command, CompiledModule, CACHE_DIR, COMPILER_ENV,
    DEFAULT_COMPILER,
};
pub use emit::{generate_pointwise_source, GeneratedSource};
pub use interp::PointwiseProgram;
pub use spec::{BaseType, Context, Expr, Intent, KernelSpec, Param, Precision};
pub use template::{expand_body, prune_unused_args, suffix_float_constants};
pub(crate) use template::rename_identifier;

use crate::error::Result;
use crate::kernel::KernelHandle;
use crate::runtime::OffloadDevice;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodegenError {
    #[error("unresolved placeholder ${{{0}}}")]
    UnresolvedPlaceholder(String),
    #[error("template line {line}: {message}")]
    Template { line: usize, message: String },
    #[error("invalid kernel spec: {0}")]
    InvalidSpec(String),
    #[error("cannot interpret {statement:?}: {message}")]
    Parse { statement: String, message: String },
}

/// How generated kernels are executed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Backend {
    /// The in-process interpreter, registered as an intrinsic library.
    #[default]
    Intrinsic,
    /// Compiled with the C toolchain into `<workdir>/.streamforge-cache`.
    Compiled { workdir: PathBuf, compiler: Option<String> },
}

/// Makes `source` callable on `device` through `backend`.
pub fn load_kernel(device: &OffloadDevice, source: &GeneratedSource, backend: &Backend) -> Result<KernelHandle> {
    match backend {
        Backend::Intrinsic => {
            let program = PointwiseProgram::compile(source)?;
            let lib_name = format!("generated/{}-{}", source.name, &source.digest()[..16]);
            let entry = source.entry_symbol.clone();
            device.registry().register_if_absent(&lib_name, || {
                std::iter::once((entry, program.into_intrinsic())).collect()
            });
            device.load_library(&lib_name)?.get_kernel(&source.entry_symbol)
        }
        Backend::Compiled { workdir, compiler } => {
            let module = compile_to_library(source, workdir, compiler.as_deref())?;
            device.load_library(&module.path.to_string_lossy())?.get_kernel(&source.entry_symbol)
        }
    }
}

/// Generates and loads `spec` in one go.
pub fn build_kernel(device: &OffloadDevice, spec: &KernelSpec, backend: &Backend) -> Result<(GeneratedSource, KernelHandle)> {
    let src = generate_pointwise_source(spec)?;
    let k = load_kernel(device, &src, backend)?;
    Ok((src, k))
}
