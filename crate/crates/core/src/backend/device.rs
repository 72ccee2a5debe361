//! Emulated device: a private arena plus one executor thread that drains
//! the request queues of all streams on the device, one request at a time,
//! round-robin across streams and FIFO within each.

use std::collections::{HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use super::arena::{Arena, ArenaError};
use super::timing::TimingSettings;
use crate::error::{Error, Result, Seq};
use crate::kernel::KernelArgs;
use crate::memory::DevicePointer;
use crate::stream::{Origin, Payload, Request, RequestCounts, RequestRecord, RequestStatus};

pub(crate) fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

pub(crate) struct StreamState {
    pub(crate) next_seq: Seq,
    pub(crate) completed_seq: Seq,
    pending: VecDeque<Request>,
    running: bool,
    error: Option<Error>,
    poisoned: bool,
    closed: bool,
    pub(crate) logging: bool,
    pub(crate) log: Vec<RequestRecord>,
    pub(crate) counts: RequestCounts,
}

impl StreamState {
    fn new() -> Self {
        StreamState {
            next_seq: 1,
            completed_seq: 0,
            pending: VecDeque::new(),
            running: false,
            error: None,
            poisoned: false,
            closed: false,
            logging: true,
            log: Vec::new(),
            counts: RequestCounts::default(),
        }
    }

    fn is_idle(&self) -> bool {
        self.pending.is_empty() && !self.running
    }

    fn record_mut(&mut self, seq: Seq) -> Option<&mut RequestRecord> {
        let i = self.log.binary_search_by_key(&seq, |r| r.seq).ok()?;
        self.log.get_mut(i)
    }
}

#[derive(Default)]
pub(crate) struct Scheduler {
    streams: HashMap<u64, StreamState>,
    ready: VecDeque<u64>,
    default_stream: Option<u64>,
    shutdown: bool,
}

pub(crate) struct DeviceCore {
    pub(crate) id: usize,
    sched: Mutex<Scheduler>,
    work: Condvar,
    idle: Condvar,
    pub(crate) arena: Mutex<Arena>,
    pub(crate) timing: Mutex<TimingSettings>,
}

impl DeviceCore {
    pub(crate) fn new(id: usize, arena_bytes: usize, timing: TimingSettings) -> Self {
        DeviceCore {
            id,
            sched: Mutex::new(Scheduler::default()),
            work: Condvar::new(),
            idle: Condvar::new(),
            arena: Mutex::new(Arena::new(arena_bytes)),
            timing: Mutex::new(timing),
        }
    }

    pub(crate) fn open_stream(&self, id: u64) {
        lock(&self.sched).streams.insert(id, StreamState::new());
    }

    /// Id of the default stream, creating its state on first use.
    pub(crate) fn default_stream_id(&self, fresh_id: impl FnOnce() -> u64) -> u64 {
        let mut s = lock(&self.sched);
        if let Some(id) = s.default_stream {
            return id;
        }
        let id = fresh_id();
        s.streams.insert(id, StreamState::new());
        s.default_stream = Some(id);
        id
    }

    pub(crate) fn close_stream(&self, id: u64) {
        let mut s = lock(&self.sched);
        if let Some(st) = s.streams.get_mut(&id) {
            if st.is_idle() {
                s.streams.remove(&id);
            } else {
                st.closed = true;
            }
        }
    }

    pub(crate) fn with_stream<R>(&self, id: u64, f: impl FnOnce(&mut StreamState) -> R) -> R {
        let mut s = lock(&self.sched);
        f(s.streams.get_mut(&id).expect("stream state exists while a handle is live"))
    }

    pub(crate) fn is_quiescent(&self) -> bool {
        lock(&self.sched).streams.values().all(StreamState::is_idle)
    }

    pub(crate) fn enqueue(&self, stream: u64, items: Vec<(Payload, Origin)>) {
        if items.is_empty() {
            return;
        }
        let mut s = lock(&self.sched);
        let st = s.streams.get_mut(&stream).expect("stream state exists while a handle is live");
        let was_idle = st.is_idle();
        for (payload, origin) in items {
            let req = Request { seq: st.next_seq, origin, payload };
            st.next_seq += 1;
            st.counts.bump(req.payload.kind(), origin);
            if st.logging {
                st.log.push(req.record());
            }
            st.pending.push_back(req);
        }
        if was_idle {
            s.ready.push_back(stream);
        }
        drop(s);
        self.work.notify_one();
    }

    pub(crate) fn sync(&self, stream: u64) -> Result<()> {
        let mut s = lock(&self.sched);
        loop {
            let st = s.streams.get_mut(&stream).expect("stream state exists while a handle is live");
            if st.is_idle() {
                st.poisoned = false;
                return st.error.take().map_or(Ok(()), Err);
            }
            s = self.idle.wait(s).unwrap_or_else(|e| e.into_inner());
        }
    }

    pub(crate) fn shutdown(&self) {
        lock(&self.sched).shutdown = true;
        self.work.notify_all();
    }
}

pub(crate) fn run_executor(core: Arc<DeviceCore>) {
    loop {
        let (sid, req, skip) = {
            let mut s = lock(&core.sched);
            loop {
                if let Some(sid) = s.ready.pop_front() {
                    let st = s.streams.get_mut(&sid).expect("ready stream exists");
                    let req = st.pending.pop_front().expect("ready stream has work");
                    st.running = true;
                    if let Some(r) = st.record_mut(req.seq) {
                        r.status = RequestStatus::Running;
                    }
                    let skip = st.poisoned && !req.is_cleanup();
                    break (sid, req, skip);
                }
                if s.shutdown {
                    return;
                }
                s = core.work.wait(s).unwrap_or_else(|e| e.into_inner());
            }
        };

        let (seq, cleanup) = (req.seq, req.is_cleanup());
        let timing = *lock(&core.timing);
        let start = Instant::now();
        let result = if skip { Err(Error::Skipped { seq }) } else { execute(&core, &req) };
        let modeled = timing.model.map(|m| m.request_duration(req.payload.kind(), req.payload.nbytes()));
        if let (true, Some(target)) = (timing.realistic, modeled) {
            wait_until(start + target);
        }
        let elapsed = start.elapsed();
        // Dropping the request may release the last handle of an allocation,
        // which enqueues on this device, so do it before re-locking.
        drop(req);

        let mut s = lock(&core.sched);
        let st = s.streams.get_mut(&sid).expect("running stream exists");
        st.running = false;
        st.completed_seq = seq;
        let failed = result.is_err();
        if let Some(r) = st.record_mut(seq) {
            r.status = if failed { RequestStatus::Failed } else { RequestStatus::Done };
            r.elapsed = elapsed;
            r.modeled = modeled;
        }
        if let Err(e) = result {
            if !cleanup {
                st.error.get_or_insert(e);
                st.poisoned = true;
            }
        }
        if !st.pending.is_empty() {
            s.ready.push_back(sid);
        } else {
            if st.closed {
                s.streams.remove(&sid);
            }
            drop(s);
            core.idle.notify_all();
        }
    }
}

fn check_range(seq: Seq, what: &str, offset: usize, nbytes: usize, len: usize) -> Result<()> {
    if offset.checked_add(nbytes).is_none_or(|end| end > len) {
        return Err(Error::Range {
            seq,
            detail: format!("{what}: [{offset}, {offset}+{nbytes}) outside {len} bytes"),
        });
    }
    Ok(())
}

fn resolve(arena: &Arena, seq: Seq, ptr: &DevicePointer) -> Result<usize> {
    arena
        .block(ptr.alloc_id())
        .map(|b| b.base + ptr.view_offset())
        .ok_or(Error::InvalidHandle { seq, alloc_id: ptr.alloc_id() })
}

fn core_of(ptr: &DevicePointer) -> &Arc<DeviceCore> {
    ptr.allocation().owner().core()
}

fn execute(core: &DeviceCore, req: &Request) -> Result<()> {
    let seq = req.seq;
    match &req.payload {
        Payload::Alloc { ptr } => {
            let a = ptr.allocation();
            let mut arena = lock(&core.arena);
            let capacity = arena.capacity();
            let block = arena.allocate(a.id, a.len, a.alignment).map_err(|e| match e {
                ArenaError::Exhausted { requested, available } => {
                    Error::OutOfDeviceMemory { seq, requested, available, capacity }
                }
                _ => Error::InvalidHandle { seq, alloc_id: a.id },
            })?;
            a.set_base(block.base);
            Ok(())
        }
        Payload::Dealloc { alloc_id, .. } => lock(&core.arena)
            .free(*alloc_id)
            .map(|_| ())
            .map_err(|_| Error::InvalidHandle { seq, alloc_id: *alloc_id }),
        Payload::H2D { src, dst, nbytes, off_src, off_dst } => {
            let n = *nbytes;
            if n == 0 {
                return Ok(());
            }
            check_range(seq, "host source", *off_src, n, src.len())?;
            check_range(seq, "device destination", *off_dst, n, dst.len())?;
            let host = src.read();
            let mut arena = lock(&core.arena);
            let d = resolve(&arena, seq, dst)? + off_dst;
            arena.bytes_mut(d, n).copy_from_slice(&host[*off_src..*off_src + n]);
            Ok(())
        }
        Payload::D2H { src, dst, nbytes, off_src, off_dst } => {
            let n = *nbytes;
            if n == 0 {
                return Ok(());
            }
            check_range(seq, "device source", *off_src, n, src.len())?;
            check_range(seq, "host destination", *off_dst, n, dst.len())?;
            let mut host = dst.write();
            let arena = lock(&core.arena);
            let s = resolve(&arena, seq, src)? + off_src;
            host[*off_dst..*off_dst + n].copy_from_slice(arena.bytes(s, n));
            Ok(())
        }
        Payload::D2D { src, dst, nbytes, off_src, off_dst } => {
            let n = *nbytes;
            if n == 0 {
                return Ok(());
            }
            check_range(seq, "device source", *off_src, n, src.len())?;
            check_range(seq, "device destination", *off_dst, n, dst.len())?;
            let (src_core, dst_core) = (core_of(src), core_of(dst));
            if Arc::ptr_eq(src_core, dst_core) {
                let mut arena = lock(&src_core.arena);
                let s = resolve(&arena, seq, src)? + off_src;
                let d = resolve(&arena, seq, dst)? + off_dst;
                arena.storage_mut().copy_within(s..s + n, d);
            } else {
                // Staged through the host; never hold two arenas at once.
                let staged = {
                    let arena = lock(&src_core.arena);
                    let s = resolve(&arena, seq, src)? + off_src;
                    arena.bytes(s, n).to_vec()
                };
                let mut arena = lock(&dst_core.arena);
                let d = resolve(&arena, seq, dst)? + off_dst;
                arena.bytes_mut(d, n).copy_from_slice(&staged);
            }
            Ok(())
        }
        Payload::Invoke { kernel, args } => {
            let mut arena = lock(&core.arena);
            let regions = args
                .iter()
                .map(|p| resolve(&arena, seq, p).map(|start| (start, p.len())))
                .collect::<Result<Vec<_>>>()?;
            let mut kargs = KernelArgs::new(arena.storage_mut(), regions);
            let failed = |message: String| Error::KernelFailed { seq, kernel: kernel.name().to_string(), message };
            match catch_unwind(AssertUnwindSafe(|| kernel.call(&mut kargs))) {
                Ok(Ok(())) => Ok(()),
                Ok(Err(msg)) => Err(failed(msg)),
                Err(panic) => Err(failed(panic_message(&panic))),
            }
        }
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "kernel panicked".into())
}

/// Sleeps most of the way to `deadline`, then spins, since plain sleeps
/// overshoot by tens of microseconds.
fn wait_until(deadline: Instant) {
    const SPIN: Duration = Duration::from_micros(200);
    let now = Instant::now();
    if deadline > now + SPIN {
        std::thread::sleep(deadline - now - SPIN);
    }
    while Instant::now() < deadline {
        std::thread::yield_now();
    }
}
