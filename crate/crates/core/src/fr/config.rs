//! Solver configuration.
//!
//! A config is a TOML file:
//!
//! ```toml
//! p = 3                    # polynomial order, 1..=10
//! n_elements = 32          # at least 2
//! domain = [-1.0, 1.0]     # periodic
//! a = 1.0                  # advection speed
//! dt = 1e-3
//! t_end = 2.0
//! precision = "f64"        # or "f32"
//! source_term_expr = ""    # optional C expression in x and t
//! backend = "intrinsic"    # or "compiled"
//! diagnostics_every = 0    # 0 records only the initial and final state
//!
//! [initial]                # u0(x) = mean + amplitude*sin(2*pi*waves*(x - x0)/L)
//! mean = 0.0
//! amplitude = 1.0
//! waves = 1
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::codegen::{Backend, Precision};
use crate::error::{Error, Result};

use super::operators::MAX_ORDER;

/// Initial condition `mean + amplitude*sin(2*pi*waves*(x - x0)/L)`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialCondition {
    pub mean: f64,
    pub amplitude: f64,
    pub waves: u32,
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition { mean: 0.0, amplitude: 1.0, waves: 1 }
    }
}

impl InitialCondition {
    pub fn constant(c: f64) -> Self {
        InitialCondition { mean: c, amplitude: 0.0, waves: 1 }
    }

    pub fn eval(&self, x: f64, x0: f64, length: f64) -> f64 {
        let arg = 2.0 * std::f64::consts::PI * f64::from(self.waves) * (x - x0) / length;
        self.mean + self.amplitude * arg.sin()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub p: usize,
    pub n_elements: usize,
    pub domain: [f64; 2],
    pub a: f64,
    pub dt: f64,
    pub t_end: f64,
    pub precision: Precision,
    /// Source term `S(x, t)` as a C expression; `None` for none.
    pub source_term_expr: Option<String>,
    pub backend: Backend,
    pub initial: InitialCondition,
    /// Record diagnostics every this many steps; 0 for initial and final only.
    pub diagnostics_every: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            p: 3,
            n_elements: 32,
            domain: [-1.0, 1.0],
            a: 1.0,
            dt: 1e-3,
            t_end: 2.0,
            precision: Precision::F64,
            source_term_expr: None,
            backend: Backend::Intrinsic,
            initial: InitialCondition::default(),
            diagnostics_every: 0,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    p: usize,
    n_elements: usize,
    #[serde(default = "default_domain")]
    domain: [f64; 2],
    #[serde(default = "one")]
    a: f64,
    dt: f64,
    t_end: f64,
    #[serde(default = "default_precision")]
    precision: String,
    #[serde(default)]
    source_term_expr: Option<String>,
    #[serde(default = "default_backend")]
    backend: String,
    #[serde(default)]
    workdir: Option<PathBuf>,
    #[serde(default)]
    compiler: Option<String>,
    #[serde(default)]
    diagnostics_every: u64,
    #[serde(default)]
    initial: InitialCondition,
}

fn default_domain() -> [f64; 2] {
    [-1.0, 1.0]
}
fn one() -> f64 {
    1.0
}
fn default_precision() -> String {
    "f64".into()
}
fn default_backend() -> String {
    "intrinsic".into()
}

impl SolverConfig {
    /// Parses TOML text. Relative compiled-backend work directories are
    /// resolved against `base`.
    pub fn parse_with_base(text: &str, base: &Path) -> Result<Self> {
        let raw: Raw = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let precision = raw.precision.parse().map_err(Error::Config)?;
        let backend = match raw.backend.as_str() {
            "intrinsic" => Backend::Intrinsic,
            "compiled" => Backend::Compiled {
                workdir: base.join(raw.workdir.unwrap_or_else(|| PathBuf::from("."))),
                compiler: raw.compiler,
            },
            other => return Err(Error::Config(format!("unknown backend {other:?}"))),
        };
        let cfg = SolverConfig {
            p: raw.p,
            n_elements: raw.n_elements,
            domain: raw.domain,
            a: raw.a,
            dt: raw.dt,
            t_end: raw.t_end,
            precision,
            source_term_expr: raw.source_term_expr.filter(|s| !s.trim().is_empty()),
            backend,
            initial: raw.initial,
            diagnostics_every: raw.diagnostics_every,
        };
        cfg.validate().map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            e => e,
        })?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_base(text, Path::new("."))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse_with_base(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_ORDER).contains(&self.p) {
            return Err(Error::invalid(format!("p = {} outside 1..={MAX_ORDER}", self.p)));
        }
        if self.n_elements < 2 {
            return Err(Error::invalid("n_elements must be at least 2"));
        }
        let [x0, x1] = self.domain;
        if !(x0.is_finite() && x1.is_finite() && x1 > x0) {
            return Err(Error::invalid(format!("bad domain [{x0}, {x1}]")));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt must be positive"));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::invalid("t_end must be non-negative"));
        }
        if !self.a.is_finite() {
            return Err(Error::invalid("a must be finite"));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.domain[1] - self.domain[0]
    }

    /// Element width.
    pub fn h(&self) -> f64 {
        self.length() / self.n_elements as f64
    }

    pub fn n_points(&self) -> usize {
        self.n_elements * (self.p + 1)
    }

    /// Number of steps to reach `t_end`; `dt` is shrunk so they land on it.
    pub fn n_steps(&self) -> u64 {
        if self.t_end == 0.0 {
            return 0;
        }
        (self.t_end / self.dt - 1e-9).ceil().max(1.0) as u64
    }

    /// The step actually taken.
    pub fn effective_dt(&self) -> f64 {
        match self.n_steps() {
            0 => self.dt,
            n => self.t_end / n as f64,
        }
    }
}
