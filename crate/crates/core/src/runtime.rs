//! Device registry.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};
use std::thread::{JoinHandle, ThreadId};

use crate::backend::arena::ArenaStats;
use crate::backend::config::RuntimeConfig;
use crate::backend::device::{lock, run_executor, DeviceCore};
use crate::backend::timing::{TimingModel, TimingSettings};
use crate::error::{Error, Result};
use crate::kernel::{builtin, IntrinsicFn, IntrinsicRegistry, KernelLibrary};
use crate::stream::{next_stream_id, OffloadStream};

/// A set of emulated devices sharing one intrinsic kernel registry.
///
/// Cheap to clone. Devices shut down when the runtime and every handle
/// derived from it (devices, streams, pointers, arrays) are gone.
#[derive(Clone)]
pub struct Runtime {
    devices: Arc<Vec<OffloadDevice>>,
    registry: Arc<IntrinsicRegistry>,
}

impl Runtime {
    /// Starts `config.devices` emulated devices; at least one is always
    /// created.
    pub fn new(config: RuntimeConfig) -> Result<Self> {
        config.validate()?;
        let registry = Arc::new(IntrinsicRegistry::with_builtins());
        let devices = (0..config.devices.max(1))
            .map(|id| OffloadDevice::start(id, config.arena_bytes, config.timing, registry.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Runtime { devices: Arc::new(devices), registry })
    }

    /// Default configuration with the device count from `STREAMFORGE_DEVICES`.
    pub fn from_env() -> Result<Self> {
        Self::new(RuntimeConfig::from_env()?)
    }

    pub fn with_devices(n: usize) -> Result<Self> {
        Self::new(RuntimeConfig::with_devices(n))
    }

    pub fn list_devices(&self) -> Vec<OffloadDevice> {
        self.devices.to_vec()
    }

    pub fn device_count(&self) -> usize {
        self.devices.len()
    }

    pub fn device(&self, id: usize) -> Result<OffloadDevice> {
        self.devices.get(id).cloned().ok_or(Error::DeviceNotFound(id))
    }

    pub fn get_default_stream(&self, device_id: usize) -> Result<OffloadStream> {
        Ok(self.device(device_id)?.get_default_stream())
    }

    pub fn create_stream(&self, device_id: usize) -> Result<OffloadStream> {
        Ok(self.device(device_id)?.create_stream())
    }

    /// Makes `kernels` loadable under `name` on every device of the runtime.
    pub fn register_intrinsic_library(&self, name: &str, kernels: BTreeMap<String, IntrinsicFn>) -> Result<()> {
        self.registry.register(name, kernels.into_iter().collect())
    }

    pub fn registry(&self) -> &Arc<IntrinsicRegistry> {
        &self.registry
    }
}

impl fmt::Debug for Runtime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Runtime").field("devices", &self.devices.len()).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceKind {
    Emulated,
}

/// Handle to one device. Cheap to clone.
#[derive(Clone)]
pub struct OffloadDevice {
    inner: Arc<DeviceRuntime>,
}

struct DeviceRuntime {
    core: Arc<DeviceCore>,
    executor: Mutex<Option<JoinHandle<()>>>,
    executor_thread: ThreadId,
    registry: Arc<IntrinsicRegistry>,
    elementwise: OnceLock<KernelLibrary>,
}

impl Drop for DeviceRuntime {
    fn drop(&mut self) {
        self.core.shutdown();
        // The last handle may die on the executor itself, when a finished
        // request held it; the thread then exits on its own.
        if std::thread::current().id() != self.executor_thread {
            if let Some(h) = lock(&self.executor).take() {
                let _ = h.join();
            }
        }
    }
}

impl OffloadDevice {
    fn start(id: usize, arena_bytes: usize, timing: TimingSettings, registry: Arc<IntrinsicRegistry>) -> Result<Self> {
        let core = Arc::new(DeviceCore::new(id, arena_bytes, timing));
        let worker = core.clone();
        let handle = std::thread::Builder::new()
            .name(format!("streamforge-dev{id}"))
            .spawn(move || run_executor(worker))?;
        Ok(OffloadDevice {
            inner: Arc::new(DeviceRuntime {
                core,
                executor_thread: handle.thread().id(),
                executor: Mutex::new(Some(handle)),
                registry,
                elementwise: OnceLock::new(),
            }),
        })
    }

    pub fn id(&self) -> usize {
        self.inner.core.id
    }

    pub fn name(&self) -> String {
        format!("emulated-{}", self.id())
    }

    pub fn kind(&self) -> DeviceKind {
        DeviceKind::Emulated
    }

    /// Limits of the device: `max_allocation_bytes` and `workers`.
    pub fn capabilities(&self) -> BTreeMap<&'static str, u64> {
        BTreeMap::from([("max_allocation_bytes", lock(&self.inner.core.arena).capacity() as u64), ("workers", 1)])
    }

    pub(crate) fn core(&self) -> &Arc<DeviceCore> {
        &self.inner.core
    }

    /// The per-device default stream; every call returns the same stream.
    pub fn get_default_stream(&self) -> OffloadStream {
        let id = self.inner.core.default_stream_id(next_stream_id);
        OffloadStream::new(id, self.clone(), true)
    }

    /// A new stream with no ordering relation to any other.
    pub fn create_stream(&self) -> OffloadStream {
        let id = next_stream_id();
        self.inner.core.open_stream(id);
        OffloadStream::new(id, self.clone(), false)
    }

    /// Loads a registered intrinsic library by name, or a native module by
    /// path.
    pub fn load_library(&self, name: &str) -> Result<KernelLibrary> {
        KernelLibrary::load(self.id(), &self.inner.registry, name)
    }

    pub fn registry(&self) -> &Arc<IntrinsicRegistry> {
        &self.inner.registry
    }

    pub(crate) fn elementwise_library(&self) -> &KernelLibrary {
        self.inner
            .elementwise
            .get_or_init(|| self.load_library(builtin::ELEMENTWISE).expect("built-in library is registered"))
    }

    /// Resizes the arena and installs a timing model. Only allowed while the
    /// device holds no allocations and no stream has queued work.
    pub fn configure(&self, arena_bytes: usize, timing: Option<TimingModel>) -> Result<()> {
        if let Some(m) = timing {
            if !(m.latency_us >= 0.0 && m.bandwidth_bytes_per_s > 0.0) {
                return Err(Error::invalid(format!("invalid timing model {m:?}")));
            }
        }
        let core = &self.inner.core;
        if !core.is_quiescent() {
            return Err(Error::InvalidState(format!("device {} has queued requests", self.id())));
        }
        let mut arena = lock(&core.arena);
        if !arena.is_empty() {
            return Err(Error::InvalidState(format!(
                "device {} has {} live allocations",
                self.id(),
                arena.stats().live_allocations
            )));
        }
        arena.reset(arena_bytes);
        lock(&core.timing).model = timing;
        Ok(())
    }

    /// Sleep on the executor so wall-clock time follows the timing model.
    pub fn set_realistic_timing(&self, on: bool) {
        lock(&self.inner.core.timing).realistic = on;
    }

    pub fn timing(&self) -> TimingSettings {
        *lock(&self.inner.core.timing)
    }

    pub fn memory_stats(&self) -> ArenaStats {
        lock(&self.inner.core.arena).stats()
    }

    /// Checks the allocator's bookkeeping; see [`crate::backend::arena::Arena::audit`].
    pub fn audit_memory(&self) -> std::result::Result<(), String> {
        lock(&self.inner.core.arena).audit()
    }
}

impl PartialEq for OffloadDevice {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }
}

impl fmt::Debug for OffloadDevice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OffloadDevice").field("id", &self.id()).field("kind", &self.kind()).finish()
    }
}
