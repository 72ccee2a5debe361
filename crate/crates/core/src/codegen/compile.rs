//! Runtime compilation of generated sources into loadable modules.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex, OnceLock};

use super::emit::GeneratedSource;
use crate::error::{Error, Result};

pub const COMPILER_ENV: &str = "STREAMFORGE_CC";
pub const DEFAULT_COMPILER: &str = "cc -O2 -fopenmp -shared -fPIC";
pub const CACHE_DIR: &str = ".streamforge-cache";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledModule {
    pub path: PathBuf,
    /// The module was already in the cache; no compiler ran.
    pub cache_hit: bool,
}

/// The compiler command: `STREAMFORGE_CC` if set, else the default.
pub fn compiler_command() -> String {
    std::env::var(COMPILER_ENV).ok().filter(|s| !s.trim().is_empty()).unwrap_or_else(|| DEFAULT_COMPILER.into())
}

/// True if the first word of `command` can be executed.
pub fn compiler_available(command: &str) -> bool {
    let Some(prog) = command.split_whitespace().next() else { return false };
    Command::new(prog).arg("--version").output().is_ok_and(|o| o.status.success())
}

fn key_lock(key: &str) -> Arc<Mutex<()>> {
    static LOCKS: OnceLock<Mutex<HashMap<String, Arc<Mutex<()>>>>> = OnceLock::new();
    let mut m = LOCKS.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    m.entry(key.to_string()).or_default().clone()
}

/// Paths `<workdir>/.streamforge-cache/<kernel>-<hash8>.{c,so}`.
pub fn cache_paths(source: &GeneratedSource, workdir: &Path) -> (PathBuf, PathBuf) {
    let dir = workdir.join(CACHE_DIR);
    let stem = format!("{}-{}", source.name, &source.digest()[..8]);
    (dir.join(format!("{stem}.c")), dir.join(format!("{stem}.{}", std::env::consts::DLL_EXTENSION)))
}

/// Writes `source` under `workdir` and compiles it to a shared module,
/// reusing a cached module with the same source hash. `compiler` defaults
/// to [`compiler_command`]; the source file and `-o <module>` are appended.
pub fn compile_to_library(source: &GeneratedSource, workdir: &Path, compiler: Option<&str>) -> Result<CompiledModule> {
    let (c_path, so_path) = cache_paths(source, workdir);
    let lock = key_lock(&so_path.to_string_lossy());
    let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
    if so_path.exists() {
        return Ok(CompiledModule { path: so_path, cache_hit: true });
    }
    std::fs::create_dir_all(c_path.parent().expect("cache dir"))?;
    std::fs::write(&c_path, &source.text)?;

    let command = compiler.map(str::to_string).unwrap_or_else(compiler_command);
    let mut words = command.split_whitespace();
    let prog = words.next().ok_or_else(|| Error::invalid("empty compiler command"))?;
    let tmp = so_path.with_extension(format!("tmp{}", std::process::id()));
    let out = Command::new(prog)
        .args(words)
        .arg(&c_path)
        .arg("-o")
        .arg(&tmp)
        .output()
        .map_err(|e| Error::Compile { source_path: c_path.clone(), diagnostics: format!("cannot run {prog}: {e}") })?;
    if !out.status.success() {
        let _ = std::fs::remove_file(&tmp);
        let mut diagnostics = String::from_utf8_lossy(&out.stderr).into_owned();
        diagnostics.push_str(&String::from_utf8_lossy(&out.stdout));
        return Err(Error::Compile { source_path: c_path, diagnostics });
    }
    std::fs::rename(&tmp, &so_path)?;
    Ok(CompiledModule { path: so_path, cache_hit: false })
}
