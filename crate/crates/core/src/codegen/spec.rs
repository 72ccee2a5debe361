use std::collections::{BTreeMap, HashSet};
use std::fmt;

use super::CodegenError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn c_type(self) -> &'static str {
        match self {
            Precision::F32 => "float",
            Precision::F64 => "double",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }

    pub fn dtype(self) -> crate::DType {
        match self {
            Precision::F32 => crate::DType::F32,
            Precision::F64 => crate::DType::F64,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl std::str::FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" | "single" => Ok(Precision::F32),
            "f64" | "double" => Ok(Precision::F64),
            _ => Err(format!("unknown precision {s:?}, expected f32 or f64")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Intent {
    In,
    Out,
    InOut,
    /// One value for all points, passed as an 8-byte encoding.
    Scalar,
}

impl Intent {
    pub fn writes(self) -> bool {
        matches!(self, Intent::Out | Intent::InOut)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseType {
    /// The kernel's floating type, `fpdtype_t`.
    Fp,
    I64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Param {
    pub name: String,
    pub intent: Intent,
    pub base_type: BaseType,
    /// Values per point.
    pub per_point_extent: usize,
    /// Accessed as `name[k]` in the body; otherwise as plain `name`, which
    /// requires an extent of 1.
    pub indexed: bool,
}

impl Param {
    /// A per-point value used as a plain variable.
    pub fn point(name: &str, intent: Intent) -> Self {
        Param { name: name.into(), intent, base_type: BaseType::Fp, per_point_extent: 1, indexed: false }
    }

    /// `extent` per-point values used as `name[0]`..`name[extent-1]`.
    pub fn vector(name: &str, intent: Intent, extent: usize) -> Self {
        Param { name: name.into(), intent, base_type: BaseType::Fp, per_point_extent: extent, indexed: true }
    }

    pub fn scalar(name: &str) -> Self {
        Param { name: name.into(), intent: Intent::Scalar, base_type: BaseType::Fp, per_point_extent: 1, indexed: false }
    }

    pub fn with_type(mut self, t: BaseType) -> Self {
        self.base_type = t;
        self
    }
}

/// A spliced expression: one text, or one per loop index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    One(String),
    List(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Context {
    pub ndims: usize,
    pub nvars: usize,
    pub precision: Precision,
    pub exprs: BTreeMap<String, Expr>,
}

impl Context {
    pub fn new(ndims: usize, nvars: usize, precision: Precision) -> Self {
        Context { ndims, nvars, precision, exprs: BTreeMap::new() }
    }

    pub fn with_expr(mut self, name: &str, e: Expr) -> Self {
        self.exprs.insert(name.into(), e);
        self
    }
}

/// A scalar pointwise kernel: a body run independently at every point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelSpec {
    pub name: String,
    pub params: Vec<Param>,
    /// Statement template lines.
    pub body: Vec<String>,
    pub context: Context,
}

pub(crate) const RESERVED: &[&str] = &["npts", "fpdtype_t", "int64_t", "double", "float", "int", "for", "if", "else"];

pub(crate) fn is_ident(s: &str) -> bool {
    let mut c = s.chars();
    matches!(c.next(), Some(ch) if ch.is_ascii_alphabetic() || ch == '_')
        && c.all(|ch| ch.is_ascii_alphanumeric() || ch == '_')
}

impl KernelSpec {
    pub fn new(name: &str, params: Vec<Param>, body: &str, context: Context) -> Self {
        KernelSpec { name: name.into(), params, body: body.lines().map(str::to_string).collect(), context }
    }

    pub fn validate(&self) -> Result<(), CodegenError> {
        let bad = |m: String| Err(CodegenError::InvalidSpec(m));
        if !is_ident(&self.name) || self.name.starts_with('_') {
            return bad(format!("kernel name {:?} is not an identifier", self.name));
        }
        if !(1..=3).contains(&self.context.ndims) {
            return bad(format!("ndims = {} outside 1..=3", self.context.ndims));
        }
        if self.context.nvars == 0 {
            return bad("nvars must be at least 1".into());
        }
        let mut seen = HashSet::new();
        for p in &self.params {
            if !is_ident(&p.name) || p.name.starts_with('_') || RESERVED.contains(&p.name.as_str()) {
                return bad(format!("parameter name {:?} is not usable", p.name));
            }
            if !seen.insert(p.name.as_str()) {
                return bad(format!("duplicate parameter {:?}", p.name));
            }
            if p.per_point_extent == 0 {
                return bad(format!("parameter {:?} has zero extent", p.name));
            }
            if !p.indexed && p.per_point_extent != 1 {
                return bad(format!("plain parameter {:?} must have extent 1", p.name));
            }
            if p.intent == Intent::Scalar && p.indexed {
                return bad(format!("scalar parameter {:?} cannot be indexed", p.name));
            }
        }
        Ok(())
    }
}
