//! Ordered asynchronous request streams.
//!
//! Every operation on an [`OffloadStream`] enqueues a request and returns
//! immediately. Requests of one stream execute strictly in enqueue order on
//! the device executor; [`OffloadStream::sync`] blocks until all of them
//! have finished and reports the first failure, if any. Once a request
//! fails, the remaining requests queued before the next `sync` are skipped.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crate::backend::device::DeviceCore;
use crate::error::{Error, Result, Seq};
use crate::kernel::KernelHandle;
use crate::memory::{DevicePointer, Direction, HostBuffer, MemRef, DEFAULT_ALIGNMENT, MAX_ALIGNMENT};
use crate::runtime::OffloadDevice;

static NEXT_STREAM_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) fn next_stream_id() -> u64 {
    NEXT_STREAM_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RequestKind {
    Alloc,
    Dealloc,
    TransferH2D,
    TransferD2H,
    TransferD2D,
    Invoke,
}

impl RequestKind {
    pub const ALL: [RequestKind; 6] = [
        RequestKind::Alloc,
        RequestKind::Dealloc,
        RequestKind::TransferH2D,
        RequestKind::TransferD2H,
        RequestKind::TransferD2D,
        RequestKind::Invoke,
    ];

    pub fn is_transfer(self) -> bool {
        matches!(self, RequestKind::TransferH2D | RequestKind::TransferD2H | RequestKind::TransferD2D)
    }

    pub fn is_host_transfer(self) -> bool {
        matches!(self, RequestKind::TransferH2D | RequestKind::TransferD2H)
    }
}

/// Who put a request into the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    /// Issued directly by the caller.
    User,
    /// Automatic host-to-device copy of a raw host array argument.
    CopyIn,
    /// Automatic device-to-host copy of a raw host array argument.
    CopyOut,
    /// Automatic host-to-device copy of a scalar argument.
    ScalarCopyIn,
    /// Allocation or release of a temporary argument buffer.
    Staging,
    /// Release triggered by dropping the last handle to an allocation.
    AutoRelease,
}

impl Origin {
    pub const ALL: [Origin; 6] =
        [Origin::User, Origin::CopyIn, Origin::CopyOut, Origin::ScalarCopyIn, Origin::Staging, Origin::AutoRelease];

    pub fn is_automatic(self) -> bool {
        !matches!(self, Origin::User)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestStatus {
    Queued,
    Running,
    Done,
    Failed,
}

/// One entry of a stream's request log.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestRecord {
    pub seq: Seq,
    pub kind: RequestKind,
    pub origin: Origin,
    pub nbytes: usize,
    pub kernel: Option<String>,
    pub status: RequestStatus,
    /// Wall-clock execution time on the executor.
    pub elapsed: Duration,
    /// Duration predicted by the device timing model, when one is installed.
    pub modeled: Option<Duration>,
}

/// Per-(kind, origin) totals of enqueued requests. Maintained even when
/// the detailed log is disabled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RequestCounts {
    counts: [[u64; 6]; 6],
}

impl RequestCounts {
    pub(crate) fn bump(&mut self, kind: RequestKind, origin: Origin) {
        self.counts[kind as usize][origin as usize] += 1;
    }

    pub fn get(&self, kind: RequestKind, origin: Origin) -> u64 {
        self.counts[kind as usize][origin as usize]
    }

    pub fn of_kind(&self, kind: RequestKind) -> u64 {
        self.counts[kind as usize].iter().sum()
    }

    pub fn total(&self) -> u64 {
        RequestKind::ALL.iter().map(|&k| self.of_kind(k)).sum()
    }

    /// Host/device transfers in either direction, any origin.
    pub fn host_transfers(&self) -> u64 {
        self.of_kind(RequestKind::TransferH2D) + self.of_kind(RequestKind::TransferD2H)
    }

    /// Transfers the runtime inserted on its own for kernel arguments.
    pub fn automatic_transfers(&self) -> u64 {
        RequestKind::ALL
            .iter()
            .filter(|k| k.is_transfer())
            .flat_map(|&k| Origin::ALL.iter().filter(|o| o.is_automatic()).map(move |&o| self.get(k, o)))
            .sum()
    }

    pub fn plus(&self, other: &RequestCounts) -> RequestCounts {
        let mut out = *self;
        for (row, o) in out.counts.iter_mut().zip(&other.counts) {
            for (c, x) in row.iter_mut().zip(o) {
                *c += x;
            }
        }
        out
    }

    pub fn since(&self, earlier: &RequestCounts) -> RequestCounts {
        let mut out = *self;
        for (row, prev) in out.counts.iter_mut().zip(&earlier.counts) {
            for (c, p) in row.iter_mut().zip(prev) {
                *c -= p;
            }
        }
        out
    }
}

pub(crate) enum Payload {
    Alloc {
        ptr: DevicePointer,
    },
    Dealloc {
        alloc_id: u64,
        // Keeps the allocation handle alive until the release has run.
        _keep: Option<DevicePointer>,
    },
    H2D {
        src: HostBuffer,
        dst: DevicePointer,
        nbytes: usize,
        off_src: usize,
        off_dst: usize,
    },
    D2H {
        src: DevicePointer,
        dst: HostBuffer,
        nbytes: usize,
        off_src: usize,
        off_dst: usize,
    },
    D2D {
        src: DevicePointer,
        dst: DevicePointer,
        nbytes: usize,
        off_src: usize,
        off_dst: usize,
    },
    Invoke {
        kernel: KernelHandle,
        args: Vec<DevicePointer>,
    },
}

impl Payload {
    pub(crate) fn kind(&self) -> RequestKind {
        match self {
            Payload::Alloc { .. } => RequestKind::Alloc,
            Payload::Dealloc { .. } => RequestKind::Dealloc,
            Payload::H2D { .. } => RequestKind::TransferH2D,
            Payload::D2H { .. } => RequestKind::TransferD2H,
            Payload::D2D { .. } => RequestKind::TransferD2D,
            Payload::Invoke { .. } => RequestKind::Invoke,
        }
    }

    pub(crate) fn nbytes(&self) -> usize {
        match self {
            Payload::Alloc { ptr } => ptr.allocation_len(),
            Payload::Dealloc { .. } => 0,
            Payload::H2D { nbytes, .. } | Payload::D2H { nbytes, .. } | Payload::D2D { nbytes, .. } => *nbytes,
            Payload::Invoke { args, .. } => args.iter().map(|a| a.len()).sum(),
        }
    }

    fn kernel_name(&self) -> Option<String> {
        match self {
            Payload::Invoke { kernel, .. } => Some(kernel.name().to_string()),
            _ => None,
        }
    }
}

pub(crate) struct Request {
    pub(crate) seq: Seq,
    pub(crate) origin: Origin,
    pub(crate) payload: Payload,
}

impl Request {
    /// Releases issued by the runtime itself. They run even after a failure
    /// on the stream and never report errors, so staging and dropped
    /// allocations are not leaked.
    pub(crate) fn is_cleanup(&self) -> bool {
        matches!(self.payload, Payload::Dealloc { .. }) && matches!(self.origin, Origin::AutoRelease | Origin::Staging)
    }

    pub(crate) fn record(&self) -> RequestRecord {
        RequestRecord {
            seq: self.seq,
            kind: self.payload.kind(),
            origin: self.origin,
            nbytes: self.payload.nbytes(),
            kernel: self.payload.kernel_name(),
            status: RequestStatus::Queued,
            elapsed: Duration::ZERO,
            modeled: None,
        }
    }
}

/// An ordered queue of asynchronous requests bound to one device.
///
/// Handles are cheap to clone; clones refer to the same stream. Enqueueing
/// on one stream from several threads at once needs external serialisation
/// to get a meaningful order, though it is memory safe.
#[derive(Clone)]
pub struct OffloadStream {
    inner: Arc<StreamHandle>,
}

struct StreamHandle {
    id: u64,
    device: OffloadDevice,
    is_default: bool,
}

impl Drop for StreamHandle {
    fn drop(&mut self) {
        if !self.is_default {
            self.device.core().close_stream(self.id);
        }
    }
}

impl PartialEq for OffloadStream {
    fn eq(&self, other: &Self) -> bool {
        self.inner.id == other.inner.id
    }
}

impl Eq for OffloadStream {}

impl fmt::Debug for OffloadStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OffloadStream")
            .field("id", &self.inner.id)
            .field("device", &self.device_id())
            .finish()
    }
}

fn check_alignment(alignment: usize) -> Result<()> {
    if !alignment.is_power_of_two() || alignment > MAX_ALIGNMENT {
        return Err(Error::invalid(format!(
            "alignment {alignment} is not a power of two in 1..={MAX_ALIGNMENT}"
        )));
    }
    Ok(())
}

impl OffloadStream {
    pub(crate) fn new(id: u64, device: OffloadDevice, is_default: bool) -> Self {
        OffloadStream { inner: Arc::new(StreamHandle { id, device, is_default }) }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn device_id(&self) -> usize {
        self.inner.device.id()
    }

    pub fn device(&self) -> &OffloadDevice {
        &self.inner.device
    }

    pub(crate) fn core(&self) -> &Arc<DeviceCore> {
        self.inner.device.core()
    }

    pub(crate) fn enqueue(&self, items: Vec<(Payload, Origin)>) {
        self.core().enqueue(self.id(), items);
    }

    pub(crate) fn enqueue_auto_release(&self, alloc_id: u64) {
        self.enqueue(vec![(Payload::Dealloc { alloc_id, _keep: None }, Origin::AutoRelease)]);
    }

    /// Blocks until every request enqueued so far has finished. Returns the
    /// first asynchronous failure since the previous `sync`.
    pub fn sync(&self) -> Result<()> {
        self.core().sync(self.id())
    }

    /// Highest sequence number that has finished executing (0 if none).
    pub fn completed_seq(&self) -> Seq {
        self.core().with_stream(self.id(), |s| s.completed_seq)
    }

    /// Sequence number of the most recently enqueued request (0 if none).
    pub fn last_seq(&self) -> Seq {
        self.core().with_stream(self.id(), |s| s.next_seq - 1)
    }

    pub fn request_log(&self) -> Vec<RequestRecord> {
        self.core().with_stream(self.id(), |s| s.log.clone())
    }

    pub fn clear_request_log(&self) {
        self.core().with_stream(self.id(), |s| s.log.clear())
    }

    /// Turns the detailed per-request log on or off. Counts are kept either way.
    pub fn set_request_logging(&self, enabled: bool) {
        self.core().with_stream(self.id(), |s| s.logging = enabled)
    }

    pub fn request_counts(&self) -> RequestCounts {
        self.core().with_stream(self.id(), |s| s.counts)
    }

    // ---- low-level memory interface ---------------------------------------

    /// Enqueues an allocation of `nbytes` aligned to `alignment` (a power of
    /// two up to 4096). The returned handle may be used in later requests
    /// immediately.
    pub fn allocate_device_memory(&self, nbytes: usize, alignment: usize) -> Result<DevicePointer> {
        if nbytes == 0 {
            return Err(Error::invalid("zero-byte allocation"));
        }
        check_alignment(alignment)?;
        let ptr = DevicePointer::new(self, nbytes, alignment, true);
        self.enqueue(vec![(Payload::Alloc { ptr: ptr.clone() }, Origin::User)]);
        Ok(ptr)
    }

    /// `allocate_device_memory` with the default 64-byte alignment.
    pub fn allocate(&self, nbytes: usize) -> Result<DevicePointer> {
        self.allocate_device_memory(nbytes, DEFAULT_ALIGNMENT)
    }

    /// Enqueues release of the allocation behind `ptr`. Releasing twice is
    /// reported as an invalid handle at `sync`.
    pub fn deallocate_device_memory(&self, ptr: &DevicePointer) -> Result<()> {
        self.check_owned(ptr)?;
        ptr.allocation().mark_released();
        self.enqueue(vec![(
            Payload::Dealloc { alloc_id: ptr.alloc_id(), _keep: Some(ptr.clone()) },
            Origin::User,
        )]);
        Ok(())
    }

    pub fn transfer_host2device(
        &self,
        host: &HostBuffer,
        device: &DevicePointer,
        nbytes: usize,
        offset_host: usize,
        offset_device: usize,
    ) -> Result<()> {
        self.transfer(Direction::HostToDevice, host, device, nbytes, offset_host, offset_device)
    }

    pub fn transfer_device2host(
        &self,
        device: &DevicePointer,
        host: &HostBuffer,
        nbytes: usize,
        offset_device: usize,
        offset_host: usize,
    ) -> Result<()> {
        self.transfer(Direction::DeviceToHost, device, host, nbytes, offset_device, offset_host)
    }

    pub fn transfer_device2device(
        &self,
        src: &DevicePointer,
        dst: &DevicePointer,
        nbytes: usize,
        offset_src: usize,
        offset_dst: usize,
    ) -> Result<()> {
        self.transfer(Direction::DeviceToDevice, src, dst, nbytes, offset_src, offset_dst)
    }

    /// Enqueues a copy of `nbytes` from `src + off_src` to `dst + off_dst`.
    ///
    /// Operand kinds must match `direction`. Bounds are checked when the
    /// request executes and reported at `sync`.
    pub fn transfer(
        &self,
        direction: Direction,
        src: impl Into<MemRef>,
        dst: impl Into<MemRef>,
        nbytes: usize,
        off_src: usize,
        off_dst: usize,
    ) -> Result<()> {
        let payload = self.transfer_payload(direction, src.into(), dst.into(), nbytes, off_src, off_dst)?;
        self.enqueue(vec![(payload, Origin::User)]);
        Ok(())
    }

    pub(crate) fn transfer_payload(
        &self,
        direction: Direction,
        src: MemRef,
        dst: MemRef,
        nbytes: usize,
        off_src: usize,
        off_dst: usize,
    ) -> Result<Payload> {
        Ok(match (direction, src, dst) {
            (Direction::HostToDevice, MemRef::Host(src), MemRef::Device(dst)) => {
                self.check_owned(&dst)?;
                Payload::H2D { src, dst, nbytes, off_src, off_dst }
            }
            (Direction::DeviceToHost, MemRef::Device(src), MemRef::Host(dst)) => {
                self.check_owned(&src)?;
                Payload::D2H { src, dst, nbytes, off_src, off_dst }
            }
            (Direction::DeviceToDevice, MemRef::Device(src), MemRef::Device(dst)) => {
                if src.same_allocation(&dst) && nbytes > 0 {
                    let s = src.view_offset().saturating_add(off_src);
                    let d = dst.view_offset().saturating_add(off_dst);
                    if s < d.saturating_add(nbytes) && d < s.saturating_add(nbytes) {
                        return Err(Error::invalid(
                            "overlapping source and destination in one allocation",
                        ));
                    }
                }
                Payload::D2D { src, dst, nbytes, off_src, off_dst }
            }
            (direction, src, dst) => {
                return Err(Error::invalid(format!(
                    "{direction:?} transfer cannot take {} source and {} destination",
                    side_name(&src),
                    side_name(&dst)
                )))
            }
        })
    }

    pub(crate) fn check_owned(&self, ptr: &DevicePointer) -> Result<()> {
        if !Arc::ptr_eq(ptr.allocation().owner().core(), self.core()) {
            return Err(Error::invalid(format!(
                "device pointer of device {} used on a stream of device {}",
                ptr.device_id(),
                self.device_id()
            )));
        }
        Ok(())
    }

    /// Enqueues execution of `kernel` with copy-in/copy-out marshalling of
    /// its arguments; see [`crate::kernel`] for the rules.
    pub fn invoke(&self, kernel: &KernelHandle, args: impl IntoIterator<Item = crate::kernel::KernelArg>) -> Result<()> {
        crate::kernel::invoke(self, kernel, args.into_iter().collect())
    }
}

fn side_name(m: &MemRef) -> &'static str {
    match m {
        MemRef::Host(_) => "a host",
        MemRef::Device(_) => "a device",
    }
}
