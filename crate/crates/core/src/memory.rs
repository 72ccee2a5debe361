//! Host buffers and device pointers: the operands of stream transfers.

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use crate::dtype::Element;
use crate::error::{Error, Result};
use crate::stream::OffloadStream;

static NEXT_HOST_ID: AtomicU64 = AtomicU64::new(1);
static NEXT_ALLOC_ID: AtomicU64 = AtomicU64::new(1);

/// Default alignment of device allocations, in bytes.
pub const DEFAULT_ALIGNMENT: usize = 64;
/// Largest alignment a device allocation may request.
pub const MAX_ALIGNMENT: usize = crate::backend::arena::PAGE_SIZE;

/// A contiguous, fixed-length region of host memory shared with the runtime.
///
/// Transfers keep a reference to the buffer until they execute, so the
/// region cannot be freed or resized under an in-flight request. Reading
/// the buffer while a device-to-host transfer into it is still queued sees
/// whatever was there before; call `sync` first.
#[derive(Clone)]
pub struct HostBuffer {
    inner: Arc<HostInner>,
}

struct HostInner {
    id: u64,
    len: usize,
    // u64 words keep every element type up to 8-byte alignment castable.
    words: RwLock<Vec<u64>>,
}

impl HostBuffer {
    pub fn zeroed(len: usize) -> Self {
        HostBuffer {
            inner: Arc::new(HostInner {
                id: NEXT_HOST_ID.fetch_add(1, Ordering::Relaxed),
                len,
                words: RwLock::new(vec![0u64; len.div_ceil(8)]),
            }),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        let buf = HostBuffer::zeroed(bytes.len());
        buf.write().copy_from_slice(bytes);
        buf
    }

    pub fn from_slice<T: Element>(data: &[T]) -> Self {
        Self::from_bytes(bytemuck::cast_slice(data))
    }

    /// Opaque token identifying the host region.
    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn len(&self) -> usize {
        self.inner.len
    }

    pub fn is_empty(&self) -> bool {
        self.inner.len == 0
    }

    pub fn read(&self) -> HostRead<'_> {
        HostRead {
            guard: self.inner.words.read().unwrap_or_else(|e| e.into_inner()),
            len: self.inner.len,
        }
    }

    pub fn write(&self) -> HostWrite<'_> {
        HostWrite {
            guard: self.inner.words.write().unwrap_or_else(|e| e.into_inner()),
            len: self.inner.len,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.read().to_vec()
    }

    /// Copies the buffer out as elements of `T`. The length must divide evenly.
    pub fn to_vec<T: Element>(&self) -> Result<Vec<T>> {
        let r = self.read();
        bytemuck::try_cast_slice::<u8, T>(&r)
            .map(|s| s.to_vec())
            .map_err(|e| Error::invalid(format!("cannot view {} bytes as {}: {e}", r.len(), T::DTYPE)))
    }

    pub fn with_slice_mut<T: Element, R>(&self, f: impl FnOnce(&mut [T]) -> R) -> Result<R> {
        let mut w = self.write();
        let len = w.len();
        let s = bytemuck::try_cast_slice_mut::<u8, T>(&mut w)
            .map_err(|e| Error::invalid(format!("cannot view {len} bytes as {}: {e}", T::DTYPE)))?;
        Ok(f(s))
    }

    pub fn same_buffer(&self, other: &HostBuffer) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }
}

impl fmt::Debug for HostBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HostBuffer").field("id", &self.inner.id).field("len", &self.inner.len).finish()
    }
}

pub struct HostRead<'a> {
    guard: RwLockReadGuard<'a, Vec<u64>>,
    len: usize,
}

impl std::ops::Deref for HostRead<'_> {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        &bytemuck::cast_slice(&self.guard)[..self.len]
    }
}

pub struct HostWrite<'a> {
    guard: RwLockWriteGuard<'a, Vec<u64>>,
    len: usize,
}

impl std::ops::Deref for HostWrite<'_> {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        &bytemuck::cast_slice(&self.guard)[..self.len]
    }
}

impl std::ops::DerefMut for HostWrite<'_> {
    fn deref_mut(&mut self) -> &mut [u8] {
        &mut bytemuck::cast_slice_mut(&mut self.guard)[..self.len]
    }
}

/// Handle to a device allocation, optionally narrowed to a byte view.
///
/// The handle is valid as soon as `allocate_device_memory` returns; the
/// backing storage materialises when the allocation request executes. When
/// the last handle to an allocation is dropped without an explicit
/// deallocation, a release request is queued on the allocating stream.
#[derive(Clone)]
pub struct DevicePointer {
    alloc: Arc<Allocation>,
    offset: usize,
    len: usize,
}

pub(crate) struct Allocation {
    pub(crate) id: u64,
    pub(crate) device_id: usize,
    pub(crate) len: usize,
    pub(crate) alignment: usize,
    base: AtomicUsize,
    released: AtomicBool,
    owner: OffloadStream,
}

const UNMATERIALIZED: usize = usize::MAX;

impl Allocation {
    pub(crate) fn set_base(&self, base: usize) {
        self.base.store(base, Ordering::Release);
    }

    /// Marks the allocation as explicitly released. Returns false if it
    /// already was.
    pub(crate) fn mark_released(&self) -> bool {
        !self.released.swap(true, Ordering::AcqRel)
    }

    pub(crate) fn owner(&self) -> &OffloadStream {
        &self.owner
    }
}

impl Drop for Allocation {
    fn drop(&mut self) {
        if !self.released.load(Ordering::Acquire) {
            self.owner.enqueue_auto_release(self.id);
        }
    }
}

impl DevicePointer {
    pub(crate) fn new(owner: &OffloadStream, len: usize, alignment: usize, auto_release: bool) -> Self {
        let alloc = Allocation {
            id: NEXT_ALLOC_ID.fetch_add(1, Ordering::Relaxed),
            device_id: owner.device_id(),
            len,
            alignment,
            base: AtomicUsize::new(UNMATERIALIZED),
            released: AtomicBool::new(!auto_release),
            owner: owner.clone(),
        };
        DevicePointer { alloc: Arc::new(alloc), offset: 0, len }
    }

    pub(crate) fn allocation(&self) -> &Arc<Allocation> {
        &self.alloc
    }

    pub fn device_id(&self) -> usize {
        self.alloc.device_id
    }

    /// Unique allocation token; never reused.
    pub fn alloc_id(&self) -> u64 {
        self.alloc.id
    }

    /// Length of this view in bytes.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Byte offset of this view inside its allocation.
    pub fn view_offset(&self) -> usize {
        self.offset
    }

    pub fn allocation_len(&self) -> usize {
        self.alloc.len
    }

    pub fn alignment(&self) -> usize {
        self.alloc.alignment
    }

    /// Arena offset of the view, once the allocation request has executed.
    pub fn base(&self) -> Option<usize> {
        match self.alloc.base.load(Ordering::Acquire) {
            UNMATERIALIZED => None,
            b => Some(b + self.offset),
        }
    }

    /// A narrower view `[offset, offset + len)` of this view.
    pub fn slice(&self, offset: usize, len: usize) -> Result<DevicePointer> {
        if offset.checked_add(len).is_none_or(|end| end > self.len) {
            return Err(Error::invalid(format!(
                "slice [{offset}, {offset}+{len}) exceeds view of {} bytes",
                self.len
            )));
        }
        Ok(DevicePointer { alloc: self.alloc.clone(), offset: self.offset + offset, len })
    }

    pub fn same_allocation(&self, other: &DevicePointer) -> bool {
        Arc::ptr_eq(&self.alloc, &other.alloc)
    }
}

impl PartialEq for DevicePointer {
    fn eq(&self, other: &Self) -> bool {
        self.same_allocation(other) && self.offset == other.offset && self.len == other.len
    }
}

impl Eq for DevicePointer {}

impl fmt::Debug for DevicePointer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DevicePointer")
            .field("device", &self.alloc.device_id)
            .field("alloc_id", &self.alloc.id)
            .field("offset", &self.offset)
            .field("len", &self.len)
            .finish()
    }
}

/// Either side of a transfer.
#[derive(Debug, Clone)]
pub enum MemRef {
    Host(HostBuffer),
    Device(DevicePointer),
}

impl From<HostBuffer> for MemRef {
    fn from(h: HostBuffer) -> Self {
        MemRef::Host(h)
    }
}
impl From<&HostBuffer> for MemRef {
    fn from(h: &HostBuffer) -> Self {
        MemRef::Host(h.clone())
    }
}
impl From<DevicePointer> for MemRef {
    fn from(d: DevicePointer) -> Self {
        MemRef::Device(d)
    }
}
impl From<&DevicePointer> for MemRef {
    fn from(d: &DevicePointer) -> Self {
        MemRef::Device(d.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    HostToDevice,
    DeviceToHost,
    DeviceToDevice,
}
