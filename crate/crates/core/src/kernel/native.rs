//! Native kernel modules loaded with the platform dynamic loader.

use std::ffi::c_void;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Largest argument count a native kernel can be called with.
pub const MAX_ARITY: usize = 32;

pub(crate) struct NativeModule {
    path: PathBuf,
    lib: libloading::Library,
}

impl NativeModule {
    pub(crate) fn open(path: &Path) -> Result<Arc<Self>> {
        let err = |reason: String| Error::LibraryLoad { name: path.display().to_string(), reason };
        if !path.exists() {
            return Err(err("no such file".into()));
        }
        // SAFETY: loading runs the module's initialisers; modules are trusted
        // kernel libraries by contract.
        let lib = unsafe { libloading::Library::new(path) }.map_err(|e| err(e.to_string()))?;
        Ok(Arc::new(NativeModule { path: path.to_path_buf(), lib }))
    }

    pub(crate) fn path(&self) -> &Path {
        &self.path
    }

    /// Address of an exported symbol.
    pub(crate) fn symbol(&self, name: &str) -> Result<usize> {
        // SAFETY: the symbol is only reinterpreted as a kernel entry point
        // when called, with the ABI every kernel module must follow.
        let sym = unsafe { self.lib.get::<unsafe extern "C" fn()>(name.as_bytes()) }.map_err(|_| {
            Error::SymbolNotFound { library: self.path.display().to_string(), symbol: name.to_string() }
        })?;
        Ok(*sym as usize)
    }
}

macro_rules! dispatch {
    ($addr:expr, $args:expr; $($n:literal => ($($i:literal),*)),* $(,)?) => {
        match $args.len() {
            $($n => {
                let f: unsafe extern "C" fn($(dispatch!(@ty $i)),*) = std::mem::transmute($addr);
                f($($args[$i]),*)
            })*
            n => return Err(format!("native kernels take at most {MAX_ARITY} arguments, got {n}")),
        }
    };
    (@ty $i:literal) => { *mut c_void };
}

/// Calls the kernel at `addr` with one address per argument.
///
/// # Safety
/// `addr` must be a function following the kernel ABI and `args` must point
/// at storage it may read and write.
pub(crate) unsafe fn call(addr: usize, args: &[*mut c_void]) -> std::result::Result<(), String> {
    dispatch!(addr, args;
        0 => (),
        1 => (0),
        2 => (0, 1),
        3 => (0, 1, 2),
        4 => (0, 1, 2, 3),
        5 => (0, 1, 2, 3, 4),
        6 => (0, 1, 2, 3, 4, 5),
        7 => (0, 1, 2, 3, 4, 5, 6),
        8 => (0, 1, 2, 3, 4, 5, 6, 7),
        9 => (0, 1, 2, 3, 4, 5, 6, 7, 8),
        10 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9),
        11 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10),
        12 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11),
        13 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12),
        14 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13),
        15 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14),
        16 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15),
        17 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16),
        18 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17),
        19 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18),
        20 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19),
        21 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20),
        22 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21),
        23 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22),
        24 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23),
        25 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24),
        26 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25),
        27 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26),
        28 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27),
        29 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28),
        30 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28, 29),
        31 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28, 29, 30),
        32 => (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28, 29, 30, 31),
    );
    Ok(())
}
