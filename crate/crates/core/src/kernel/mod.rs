//! Kernel libraries, kernel handles and invocation.
//!
//! A kernel receives one device address per argument, in positional order,
//! and returns nothing. [`invoke`](crate::OffloadStream::invoke) marshals
//! each argument by kind:
//!
//! * raw host arrays are copied to a temporary device buffer before the
//!   kernel runs and copied back (then released) after it;
//! * scalars are staged in a temporary device buffer as their
//!   little-endian encoding, copied in only;
//! * offload arrays and raw device pointers are passed as they are, with no
//!   transfer.
//!
//! All requests of one invocation are enqueued back to back: staging for the
//! host arrays in argument order, then for the scalars, then the kernel,
//! then copy-out and release for the host arrays in argument order, then
//! release of the scalar staging.

mod args;
pub mod builtin;
pub(crate) mod native;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use num_complex::Complex64;

pub use args::KernelArgs;
pub use native::MAX_ARITY;

use crate::array::{HostArray, OffloadArray};
use crate::dtype::Scalar;
use crate::error::{Error, Result};
use crate::memory::{DevicePointer, HostBuffer, DEFAULT_ALIGNMENT};
use crate::stream::{OffloadStream, Origin, Payload};

/// An in-process kernel.
pub type IntrinsicFn = Arc<dyn Fn(&mut KernelArgs) -> std::result::Result<(), String> + Send + Sync>;

static NEXT_LIBRARY_ID: AtomicU64 = AtomicU64::new(1);

/// Named sets of intrinsic kernels, shared by all devices of a runtime.
#[derive(Default)]
pub struct IntrinsicRegistry {
    libs: RwLock<HashMap<String, Arc<HashMap<String, IntrinsicFn>>>>,
}

impl IntrinsicRegistry {
    /// A registry holding `builtin-elementwise` and `builtin-gemm`.
    pub fn with_builtins() -> Self {
        let r = IntrinsicRegistry::default();
        r.register(builtin::ELEMENTWISE, builtin::elementwise()).expect("fresh registry");
        r.register(builtin::GEMM, builtin::gemm()).expect("fresh registry");
        r
    }

    pub fn register(&self, name: &str, kernels: HashMap<String, IntrinsicFn>) -> Result<()> {
        let mut libs = self.libs.write().unwrap_or_else(|e| e.into_inner());
        if libs.contains_key(name) {
            return Err(Error::invalid(format!("intrinsic library {name:?} already registered")));
        }
        libs.insert(name.to_string(), Arc::new(kernels));
        Ok(())
    }

    /// Registers `name` unless it exists. Returns whether it was added.
    pub fn register_if_absent(&self, name: &str, make: impl FnOnce() -> HashMap<String, IntrinsicFn>) -> bool {
        let mut libs = self.libs.write().unwrap_or_else(|e| e.into_inner());
        if libs.contains_key(name) {
            return false;
        }
        libs.insert(name.to_string(), Arc::new(make()));
        true
    }

    pub fn contains(&self, name: &str) -> bool {
        self.libs.read().unwrap_or_else(|e| e.into_inner()).contains_key(name)
    }

    fn get(&self, name: &str) -> Option<Arc<HashMap<String, IntrinsicFn>>> {
        self.libs.read().unwrap_or_else(|e| e.into_inner()).get(name).cloned()
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<_> = self.libs.read().unwrap_or_else(|e| e.into_inner()).keys().cloned().collect();
        v.sort();
        v
    }
}

#[derive(Clone)]
enum Provider {
    Intrinsic { name: String, kernels: Arc<HashMap<String, IntrinsicFn>> },
    Native(Arc<native::NativeModule>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LibrarySource {
    Intrinsic(String),
    Native(std::path::PathBuf),
}

/// A loaded kernel library on one device.
#[derive(Clone)]
pub struct KernelLibrary {
    id: u64,
    device_id: usize,
    provider: Provider,
}

impl KernelLibrary {
    /// Opens `name` as a registered intrinsic library, or else as a path to
    /// a native module.
    pub(crate) fn load(device_id: usize, registry: &IntrinsicRegistry, name: &str) -> Result<Self> {
        let provider = match registry.get(name) {
            Some(kernels) => Provider::Intrinsic { name: name.to_string(), kernels },
            None => Provider::Native(native::NativeModule::open(Path::new(name))?),
        };
        Ok(KernelLibrary { id: NEXT_LIBRARY_ID.fetch_add(1, Ordering::Relaxed), device_id, provider })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn device_id(&self) -> usize {
        self.device_id
    }

    pub fn source(&self) -> LibrarySource {
        match &self.provider {
            Provider::Intrinsic { name, .. } => LibrarySource::Intrinsic(name.clone()),
            Provider::Native(m) => LibrarySource::Native(m.path().to_path_buf()),
        }
    }

    fn label(&self) -> String {
        match &self.provider {
            Provider::Intrinsic { name, .. } => name.clone(),
            Provider::Native(m) => m.path().display().to_string(),
        }
    }

    /// Kernel names of an intrinsic library, sorted. Native modules do not
    /// enumerate their symbols and return an empty list.
    pub fn symbols(&self) -> Vec<String> {
        match &self.provider {
            Provider::Intrinsic { kernels, .. } => {
                let mut v: Vec<_> = kernels.keys().cloned().collect();
                v.sort();
                v
            }
            Provider::Native(_) => Vec::new(),
        }
    }

    pub fn get_kernel(&self, name: &str) -> Result<KernelHandle> {
        let imp = match &self.provider {
            Provider::Intrinsic { kernels, .. } => Impl::Intrinsic(kernels.get(name).cloned().ok_or_else(|| {
                Error::SymbolNotFound { library: self.label(), symbol: name.to_string() }
            })?),
            Provider::Native(m) => Impl::Native { addr: m.symbol(name)?, _module: m.clone() },
        };
        Ok(KernelHandle {
            inner: Arc::new(HandleInner {
                name: name.to_string(),
                library_id: self.id,
                device_id: self.device_id,
                imp,
            }),
        })
    }
}

impl fmt::Debug for KernelLibrary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelLibrary")
            .field("id", &self.id)
            .field("device", &self.device_id)
            .field("source", &self.source())
            .finish()
    }
}

enum Impl {
    Intrinsic(IntrinsicFn),
    // The module handle keeps the code mapped while the handle lives.
    Native { addr: usize, _module: Arc<native::NativeModule> },
}

struct HandleInner {
    name: String,
    library_id: u64,
    device_id: usize,
    imp: Impl,
}

/// A kernel resolved in a library. Handles for the same name in the same
/// library compare equal.
#[derive(Clone)]
pub struct KernelHandle {
    inner: Arc<HandleInner>,
}

impl KernelHandle {
    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn library_id(&self) -> u64 {
        self.inner.library_id
    }

    pub fn device_id(&self) -> usize {
        self.inner.device_id
    }

    pub fn is_native(&self) -> bool {
        matches!(self.inner.imp, Impl::Native { .. })
    }

    /// Runs the kernel synchronously on the given argument regions.
    pub fn call(&self, args: &mut KernelArgs) -> std::result::Result<(), String> {
        match &self.inner.imp {
            Impl::Intrinsic(f) => f(args),
            Impl::Native { addr, .. } => {
                let ptrs = (0..args.len())
                    .map(|i| args.raw_ptr(i).map(|p| p.cast()))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                // SAFETY: symbols of native modules follow the kernel ABI; every
                // pointer addresses a live argument region.
                unsafe { native::call(*addr, &ptrs) }
            }
        }
    }
}

impl PartialEq for KernelHandle {
    fn eq(&self, other: &Self) -> bool {
        self.inner.library_id == other.inner.library_id && self.inner.name == other.inner.name
    }
}

impl Eq for KernelHandle {}

impl fmt::Debug for KernelHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelHandle")
            .field("name", &self.inner.name)
            .field("library", &self.inner.library_id)
            .finish()
    }
}

/// One kernel argument, classified for marshalling.
#[derive(Debug, Clone)]
pub enum KernelArg {
    Scalar(Scalar),
    /// Copied in before and out after the kernel.
    Host(HostArray),
    /// Passed by device address; no transfers.
    Offloaded(OffloadArray),
    /// Passed as is; no transfers.
    Device(DevicePointer),
}

macro_rules! scalar_arg {
    ($($t:ty),*) => {$(
        impl From<$t> for KernelArg {
            fn from(v: $t) -> Self {
                KernelArg::Scalar(v.into())
            }
        }
    )*};
}

scalar_arg!(Scalar, i64, f64, Complex64);

impl From<HostArray> for KernelArg {
    fn from(a: HostArray) -> Self {
        KernelArg::Host(a)
    }
}
impl From<&HostArray> for KernelArg {
    fn from(a: &HostArray) -> Self {
        KernelArg::Host(a.clone())
    }
}
impl From<OffloadArray> for KernelArg {
    fn from(a: OffloadArray) -> Self {
        KernelArg::Offloaded(a)
    }
}
impl From<&OffloadArray> for KernelArg {
    fn from(a: &OffloadArray) -> Self {
        KernelArg::Offloaded(a.clone())
    }
}
impl From<DevicePointer> for KernelArg {
    fn from(p: DevicePointer) -> Self {
        KernelArg::Device(p)
    }
}
impl From<&DevicePointer> for KernelArg {
    fn from(p: &DevicePointer) -> Self {
        KernelArg::Device(p.clone())
    }
}

/// Builds a `Vec<KernelArg>` from anything convertible.
#[macro_export]
macro_rules! kargs {
    ($($a:expr),* $(,)?) => {
        vec![$($crate::kernel::KernelArg::from($a)),*]
    };
}

pub(crate) fn invoke(stream: &OffloadStream, kernel: &KernelHandle, args: Vec<KernelArg>) -> Result<()> {
    if kernel.device_id() != stream.device_id() {
        return Err(Error::invalid(format!(
            "kernel {} belongs to device {}, stream to device {}",
            kernel.name(),
            kernel.device_id(),
            stream.device_id()
        )));
    }
    let mut copy_in = Vec::new();
    let mut scalar_in = Vec::new();
    let mut copy_out = Vec::new();
    let mut scalar_release = Vec::new();
    let mut addrs = Vec::with_capacity(args.len());
    let mut host_staged = Vec::new();
    let mut scalar_staged = Vec::new();

    // Validate everything before creating any staging buffer.
    for (i, a) in args.iter().enumerate() {
        match a {
            KernelArg::Host(h) => {
                if !h.dtype().is_offloadable() {
                    return Err(Error::invalid(format!("argument {i}: dtype {} cannot be offloaded", h.dtype())));
                }
                if !h.is_contiguous() {
                    return Err(Error::invalid(format!("argument {i}: host array is not contiguous")));
                }
            }
            KernelArg::Offloaded(o) => stream.check_owned(o.device_ptr())?,
            KernelArg::Device(p) => stream.check_owned(p)?,
            KernelArg::Scalar(_) => {}
        }
    }

    for a in &args {
        match a {
            KernelArg::Host(h) => {
                let n = h.nbytes();
                let dev = DevicePointer::new(stream, n, DEFAULT_ALIGNMENT, false);
                copy_in.push((Payload::Alloc { ptr: dev.clone() }, Origin::Staging));
                copy_in.push((
                    Payload::H2D { src: h.buffer().clone(), dst: dev.clone(), nbytes: n, off_src: h.byte_offset(), off_dst: 0 },
                    Origin::CopyIn,
                ));
                addrs.push(dev.clone());
                host_staged.push((h.clone(), dev));
            }
            KernelArg::Scalar(s) => {
                let bytes = s.encode();
                let dev = DevicePointer::new(stream, bytes.len(), DEFAULT_ALIGNMENT, false);
                scalar_in.push((Payload::Alloc { ptr: dev.clone() }, Origin::Staging));
                scalar_in.push((
                    Payload::H2D {
                        src: HostBuffer::from_bytes(&bytes),
                        dst: dev.clone(),
                        nbytes: bytes.len(),
                        off_src: 0,
                        off_dst: 0,
                    },
                    Origin::ScalarCopyIn,
                ));
                addrs.push(dev.clone());
                scalar_staged.push(dev);
            }
            KernelArg::Offloaded(o) => addrs.push(o.device_ptr().clone()),
            KernelArg::Device(p) => addrs.push(p.clone()),
        }
    }
    for (h, dev) in host_staged {
        let n = h.nbytes();
        copy_out.push((
            Payload::D2H { src: dev.clone(), dst: h.buffer().clone(), nbytes: n, off_src: 0, off_dst: h.byte_offset() },
            Origin::CopyOut,
        ));
        copy_out.push((Payload::Dealloc { alloc_id: dev.alloc_id(), _keep: Some(dev) }, Origin::Staging));
    }
    for dev in scalar_staged {
        scalar_release.push((Payload::Dealloc { alloc_id: dev.alloc_id(), _keep: Some(dev) }, Origin::Staging));
    }

    let mut items = copy_in;
    items.extend(scalar_in);
    items.push((Payload::Invoke { kernel: kernel.clone(), args: addrs }, Origin::User));
    items.extend(copy_out);
    items.extend(scalar_release);
    stream.enqueue(items);
    Ok(())
}
