//! The tracer: per-thread event buffers, the location registry and trace dumping.
//!
//! Each thread that records an event gets its own [`ThreadBuffer`], created on
//! first use and only ever appended to by that thread. The per-recorder list of
//! buffers and the location registry are the only shared state. When a buffer
//! fills it is dumped synchronously and recording continues in the emptied buffer.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::cycles::{CycleReading, CycleSource, CycleSourceDescriptor};

/// Index into the location registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MethodId(pub u32);

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Stream id carried by events and spans; `-1` marks anonymous spans.
pub type StreamId = i64;

pub const ANONYMOUS_STREAM: StreamId = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    /// Anonymous span begin.
    Asb,
    /// Support span begin.
    Ssb,
    /// Primordial span begin.
    Psb,
    /// Span end.
    Se,
}

impl EventKind {
    pub fn tag(self) -> u8 {
        match self {
            EventKind::Asb => 0,
            EventKind::Ssb => 1,
            EventKind::Psb => 2,
            EventKind::Se => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(EventKind::Asb),
            1 => Some(EventKind::Ssb),
            2 => Some(EventKind::Psb),
            3 => Some(EventKind::Se),
            _ => None,
        }
    }

    pub fn is_begin(self) -> bool {
        self != EventKind::Se
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpanEvent {
    pub kind: EventKind,
    pub cycles: u64,
    pub stream_id: StreamId,
    /// Unused (zero) for `Se`.
    pub method_id: MethodId,
}

impl SpanEvent {
    pub fn anonymous_begin(cycles: u64, method_id: MethodId) -> Self {
        SpanEvent { kind: EventKind::Asb, cycles, stream_id: ANONYMOUS_STREAM, method_id }
    }

    pub fn support_begin(cycles: u64, stream_id: u64, method_id: MethodId) -> Self {
        SpanEvent { kind: EventKind::Ssb, cycles, stream_id: stream_id as StreamId, method_id }
    }

    pub fn primordial_begin(cycles: u64, stream_id: u64, method_id: MethodId) -> Self {
        SpanEvent { kind: EventKind::Psb, cycles, stream_id: stream_id as StreamId, method_id }
    }

    pub fn end(cycles: u64) -> Self {
        SpanEvent { kind: EventKind::Se, cycles, stream_id: ANONYMOUS_STREAM, method_id: MethodId(0) }
    }
}

/// All events one thread recorded, in recording order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadTrace {
    pub thread_id: u64,
    pub thread_name: String,
    pub events: Vec<SpanEvent>,
}

/// Maps dense method ids to fully qualified caller names.
#[derive(Debug, Default)]
pub struct LocationRegistry {
    inner: RwLock<LocationTable>,
}

#[derive(Debug, Default)]
struct LocationTable {
    names: Vec<String>,
    ids: HashMap<String, MethodId>,
}

impl LocationRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id for `qualified_name`, assigning the next dense id on first sight.
    pub fn register(&self, qualified_name: &str) -> MethodId {
        assert!(!qualified_name.is_empty(), "location names must be non-empty");
        if let Some(id) = self.inner.read().ids.get(qualified_name) {
            return *id;
        }
        let mut table = self.inner.write();
        if let Some(id) = table.ids.get(qualified_name) {
            return *id;
        }
        let id = MethodId(table.names.len() as u32);
        table.names.push(qualified_name.to_owned());
        table.ids.insert(qualified_name.to_owned(), id);
        id
    }

    pub fn name(&self, id: MethodId) -> Option<String> {
        self.inner.read().names.get(id.0 as usize).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.read().names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Names indexed by method id.
    pub fn snapshot(&self) -> Vec<String> {
        self.inner.read().names.clone()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RecorderError {
    #[error("failed to write trace {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("recorder has no output directory; use drain() for in-memory traces")]
    NoOutputDirectory,
    #[error("an earlier buffer dump failed: {0}")]
    EarlierDumpFailed(String),
}

/// Where full buffers go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceSink {
    /// Keep dumped segments in memory; collect them with [`Recorder::drain`].
    Memory,
    /// Append to `thread-<id>.sptr` files in this directory.
    Directory(PathBuf),
}

#[derive(Debug, Clone)]
pub struct RecorderConfig {
    /// Events per thread buffer before a dump.
    pub capacity: usize,
    pub sink: TraceSink,
    /// Fence every cycle read. Used by calibration.
    pub serialized_reads: bool,
}

impl RecorderConfig {
    pub const DEFAULT_CAPACITY: usize = 1 << 20;

    pub fn memory() -> Self {
        RecorderConfig { capacity: Self::DEFAULT_CAPACITY, sink: TraceSink::Memory, serialized_reads: false }
    }

    pub fn directory(dir: impl Into<PathBuf>) -> Self {
        RecorderConfig {
            capacity: Self::DEFAULT_CAPACITY,
            sink: TraceSink::Directory(dir.into()),
            serialized_reads: false,
        }
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        self.capacity = capacity;
        self
    }

    pub fn with_serialized_reads(mut self, serialized: bool) -> Self {
        self.serialized_reads = serialized;
        self
    }
}

pub const LOCATIONS_FILE: &str = "locations.tsv";

pub fn trace_file_name(thread_id: u64) -> String {
    format!("thread-{thread_id:04}.sptr")
}

/// One thread's buffer. Written only by its owner; read by flush/drain at quiescence.
pub struct ThreadBuffer {
    thread_id: u64,
    thread_name: String,
    events: Vec<SpanEvent>,
    capacity: usize,
    /// Dumped segments when the sink is in-memory.
    segments: Vec<Vec<SpanEvent>>,
    header_written: bool,
    total_events: u64,
}

impl ThreadBuffer {
    fn new(thread_id: u64, thread_name: String, capacity: usize) -> Self {
        ThreadBuffer {
            thread_id,
            thread_name,
            events: Vec::with_capacity(capacity),
            capacity,
            segments: Vec::new(),
            header_written: false,
            total_events: 0,
        }
    }

    pub fn thread_id(&self) -> u64 {
        self.thread_id
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    #[inline]
    fn push(&mut self, shared: &Shared, event: SpanEvent) -> Result<(), RecorderError> {
        let mut result = Ok(());
        if self.events.len() >= self.capacity {
            result = self.dump(shared);
        }
        self.events.push(event);
        self.total_events += 1;
        result
    }

    fn dump(&mut self, shared: &Shared) -> Result<(), RecorderError> {
        match &shared.config.sink {
            TraceSink::Memory => {
                let full = std::mem::replace(&mut self.events, Vec::with_capacity(self.capacity));
                self.segments.push(full);
                Ok(())
            }
            TraceSink::Directory(dir) => match self.write_pending(dir, shared.source.descriptor()) {
                Ok(_) => {
                    self.events.clear();
                    Ok(())
                }
                Err(e) => {
                    // Keep the events and grow instead; the error sticks until flush.
                    self.capacity = self.capacity.saturating_mul(2);
                    self.events.reserve(self.capacity - self.events.len());
                    shared.sticky_error.lock().get_or_insert_with(|| e.to_string());
                    Err(e)
                }
            },
        }
    }

    fn write_pending(&mut self, dir: &Path, descriptor: &CycleSourceDescriptor) -> Result<PathBuf, RecorderError> {
        let path = dir.join(trace_file_name(self.thread_id));
        let io_err = |source| RecorderError::Io { path: path.clone(), source };
        let file = if self.header_written {
            OpenOptions::new().append(true).open(&path)
        } else {
            fs::create_dir_all(dir).and_then(|_| File::create(&path))
        }
        .map_err(io_err)?;
        let mut w = BufWriter::new(file);
        if !self.header_written {
            codec::write_header(&mut w, descriptor, self.thread_id, &self.thread_name).map_err(io_err)?;
        }
        codec::write_events(&mut w, &self.events).map_err(io_err)?;
        w.flush().map_err(io_err)?;
        self.header_written = true;
        Ok(path)
    }

    fn take_all(&mut self) -> Vec<SpanEvent> {
        let mut out = Vec::with_capacity(self.segments.iter().map(Vec::len).sum::<usize>() + self.events.len());
        for seg in self.segments.drain(..) {
            out.extend(seg);
        }
        out.append(&mut self.events);
        out
    }
}

static NEXT_RECORDER_ID: AtomicU64 = AtomicU64::new(1);

type BufferHandle = Arc<Mutex<ThreadBuffer>>;

thread_local! {
    static LOCAL_BUFFERS: RefCell<Vec<(u64, BufferHandle)>> = const { RefCell::new(Vec::new()) };
}

struct Shared {
    id: u64,
    source: Arc<dyn CycleSource>,
    config: RecorderConfig,
    locations: LocationRegistry,
    buffers: Mutex<Vec<BufferHandle>>,
    next_thread_id: AtomicU64,
    sticky_error: Mutex<Option<String>>,
}

impl Drop for Shared {
    fn drop(&mut self) {
        // Threads may outlive the recorder and still hold their buffer handle.
        for buf in self.buffers.get_mut().iter() {
            let mut b = buf.lock();
            b.events = Vec::new();
            b.segments = Vec::new();
        }
    }
}

/// Per-thread event recorder. Cheap to clone; clones share state.
#[derive(Clone)]
pub struct Recorder {
    shared: Arc<Shared>,
}

impl fmt::Debug for Recorder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Recorder")
            .field("id", &self.shared.id)
            .field("sink", &self.shared.config.sink)
            .field("capacity", &self.shared.config.capacity)
            .finish()
    }
}

impl Recorder {
    pub fn new(source: Arc<dyn CycleSource>, config: RecorderConfig) -> Self {
        Recorder {
            shared: Arc::new(Shared {
                id: NEXT_RECORDER_ID.fetch_add(1, Ordering::Relaxed),
                source,
                config,
                locations: LocationRegistry::new(),
                buffers: Mutex::new(Vec::new()),
                next_thread_id: AtomicU64::new(0),
                sticky_error: Mutex::new(None),
            }),
        }
    }

    /// Process-unique id of this recorder.
    pub fn id(&self) -> u64 {
        self.shared.id
    }

    pub fn source(&self) -> &Arc<dyn CycleSource> {
        &self.shared.source
    }

    pub fn descriptor(&self) -> &CycleSourceDescriptor {
        self.shared.source.descriptor()
    }

    pub fn config(&self) -> &RecorderConfig {
        &self.shared.config
    }

    pub fn locations(&self) -> &LocationRegistry {
        &self.shared.locations
    }

    pub fn register_location(&self, qualified_name: &str) -> MethodId {
        self.shared.locations.register(qualified_name)
    }

    #[inline]
    pub fn read_cycles(&self) -> CycleReading {
        if self.shared.config.serialized_reads {
            self.shared.source.read_serialized()
        } else {
            self.shared.source.read()
        }
    }

    #[inline]
    fn with_local<R>(&self, f: impl FnOnce(&mut ThreadBuffer) -> R) -> R {
        LOCAL_BUFFERS.with(|cell| {
            let mut local = cell.borrow_mut();
            let idx = match local.iter().position(|(id, _)| *id == self.shared.id) {
                Some(i) => i,
                None => {
                    // Entries whose recorder is gone are only referenced from here.
                    local.retain(|(_, handle)| Arc::strong_count(handle) > 1);
                    local.push((self.shared.id, self.register_thread()));
                    local.len() - 1
                }
            };
            let mut buf = local[idx].1.lock();
            f(&mut buf)
        })
    }

    fn register_thread(&self) -> BufferHandle {
        let thread_id = self.shared.next_thread_id.fetch_add(1, Ordering::Relaxed);
        let thread_name = std::thread::current()
            .name()
            .map(str::to_owned)
            .unwrap_or_else(|| format!("thread-{thread_id}"));
        let handle = Arc::new(Mutex::new(ThreadBuffer::new(thread_id, thread_name, self.shared.config.capacity)));
        self.shared.buffers.lock().push(Arc::clone(&handle));
        handle
    }

    /// Appends an already-timestamped event to the calling thread's buffer.
    pub fn record_event(&self, event: SpanEvent) -> Result<(), RecorderError> {
        self.with_local(|buf| buf.push(&self.shared, event))
    }

    /// Records a begin event, reading the counter after the buffer lookup so the
    /// lookup is not charged to the span.
    #[inline]
    pub(crate) fn record_begin(&self, kind: EventKind, stream_id: StreamId, method_id: MethodId) {
        self.with_local(|buf| {
            let cycles = self.read_cycles().0;
            let _ = buf.push(&self.shared, SpanEvent { kind, cycles, stream_id, method_id });
        });
    }

    /// Records an end event, reading the counter before the buffer lookup.
    #[inline]
    pub(crate) fn record_end(&self) {
        let cycles = self.read_cycles().0;
        self.with_local(|buf| {
            let _ = buf.push(&self.shared, SpanEvent::end(cycles));
        });
    }

    /// Writes every thread's pending events and the location mapping file.
    ///
    /// Callers must ensure no thread is recording concurrently.
    pub fn flush_all(&self) -> Result<Vec<PathBuf>, RecorderError> {
        let dir = match &self.shared.config.sink {
            TraceSink::Directory(dir) => dir.clone(),
            TraceSink::Memory => return Err(RecorderError::NoOutputDirectory),
        };
        if let Some(msg) = self.shared.sticky_error.lock().clone() {
            return Err(RecorderError::EarlierDumpFailed(msg));
        }
        fs::create_dir_all(&dir).map_err(|source| RecorderError::Io { path: dir.clone(), source })?;
        let descriptor = self.descriptor().clone();
        let mut paths = Vec::new();
        let buffers = self.shared.buffers.lock().clone();
        for handle in &buffers {
            let mut buf = handle.lock();
            if buf.total_events == 0 {
                continue;
            }
            if !buf.events.is_empty() || !buf.header_written {
                buf.write_pending(&dir, &descriptor)?;
                buf.events.clear();
            }
            paths.push(dir.join(trace_file_name(buf.thread_id)));
        }
        paths.sort();
        let loc_path = dir.join(LOCATIONS_FILE);
        codec::write_locations(&loc_path, &self.shared.locations.snapshot())
            .map_err(|source| RecorderError::Io { path: loc_path, source })?;
        Ok(paths)
    }

    /// Takes every thread's events (in-memory sink), ordered by thread id.
    ///
    /// Threads that recorded nothing since the last drain are omitted.
    pub fn drain(&self) -> Vec<ThreadTrace> {
        let buffers = self.shared.buffers.lock().clone();
        let mut traces: Vec<ThreadTrace> = buffers
            .iter()
            .filter_map(|handle| {
                let mut buf = handle.lock();
                let events = buf.take_all();
                (!events.is_empty()).then(|| ThreadTrace {
                    thread_id: buf.thread_id,
                    thread_name: buf.thread_name.clone(),
                    events,
                })
            })
            .collect();
        traces.sort_by_key(|t| t.thread_id);
        traces
    }

    /// Moves the calling thread's recorded events into `out`.
    pub fn drain_current_thread(&self, out: &mut Vec<SpanEvent>) {
        self.with_local(|buf| {
            for seg in buf.segments.drain(..) {
                out.extend(seg);
            }
            out.append(&mut buf.events);
        });
    }

    /// Number of threads that have recorded at least one event.
    pub fn thread_count(&self) -> usize {
        self.shared.buffers.lock().len()
    }

    pub fn total_events(&self) -> u64 {
        self.shared.buffers.lock().iter().map(|b| b.lock().total_events).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::read_trace_file;
    use crate::cycles::ScriptedSource;
    use std::collections::HashSet;

    fn scripted() -> Arc<dyn CycleSource> {
        Arc::new(ScriptedSource::new(10))
    }

    #[test]
    fn register_location_is_idempotent() {
        let reg = LocationRegistry::new();
        assert_eq!(reg.register("MnemonicsCoderWithStream.wordForNum"), MethodId(0));
        assert_eq!(reg.register("MnemonicsCoderWithStream.wordForNum"), MethodId(0));
        assert_eq!(reg.register("Other.caller"), MethodId(1));
    }

    #[test]
    fn random_names_get_dense_ids() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let reg = LocationRegistry::new();
        let mut names = HashSet::new();
        while names.len() < 10_000 {
            names.insert(format!("mod{}::f{}", rng.random_range(0..1_000_000u32), rng.random::<u16>()));
        }
        let ids: HashSet<u32> = names.iter().map(|n| reg.register(n).0).collect();
        // Brute force: the id set is exactly 0..n.
        let expected: HashSet<u32> = (0..10_000).collect();
        assert_eq!(ids, expected);
        for n in &names {
            assert_eq!(reg.name(reg.register(n)).as_deref(), Some(n.as_str()));
        }
    }

    #[test]
    #[should_panic]
    fn empty_location_name_rejected() {
        LocationRegistry::new().register("");
    }

    #[test]
    fn append_grows_buffer() {
        let rec = Recorder::new(scripted(), RecorderConfig::memory().with_capacity(8));
        rec.record_event(SpanEvent::anonymous_begin(100, MethodId(0))).unwrap();
        let traces = rec.drain();
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].events.len(), 1);
    }

    #[test]
    fn overflow_dumps_segment_to_disk() {
        let dir = tempfile::tempdir().unwrap();
        let rec = Recorder::new(scripted(), RecorderConfig::directory(dir.path()).with_capacity(2));
        let m = rec.register_location("a::b");
        rec.record_event(SpanEvent::anonymous_begin(1, m)).unwrap();
        rec.record_event(SpanEvent::anonymous_begin(2, m)).unwrap();
        rec.record_event(SpanEvent::end(3)).unwrap();
        let path = dir.path().join(trace_file_name(0));
        let on_disk = read_trace_file(&path).unwrap();
        assert_eq!(on_disk.trace.events.len(), 2);
        let pending = LOCAL_BUFFERS.with(|l| {
            let l = l.borrow();
            let (_, h) = l.iter().find(|(id, _)| *id == rec.id()).unwrap();
            let n = h.lock().len();
            n
        });
        assert_eq!(pending, 1);
    }

    #[test]
    fn flush_without_events_writes_only_registry() {
        let dir = tempfile::tempdir().unwrap();
        let rec = Recorder::new(scripted(), RecorderConfig::directory(dir.path()));
        rec.register_location("x::y");
        let paths = rec.flush_all().unwrap();
        assert!(paths.is_empty());
        let locs = std::fs::read_to_string(dir.path().join(LOCATIONS_FILE)).unwrap();
        assert_eq!(locs, "0\tx::y\n");
    }

    #[test]
    fn flush_writes_one_trace_per_thread() {
        let dir = tempfile::tempdir().unwrap();
        let rec = Recorder::new(scripted(), RecorderConfig::directory(dir.path()).with_capacity(16));
        let m = rec.register_location("t::run");
        std::thread::scope(|s| {
            for _ in 0..3 {
                s.spawn(|| {
                    rec.record_begin(EventKind::Asb, ANONYMOUS_STREAM, m);
                    rec.record_end();
                });
            }
        });
        let paths = rec.flush_all().unwrap();
        assert_eq!(paths.len(), 3);
    }

    #[test]
    fn segments_concatenate_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let rec = Recorder::new(scripted(), RecorderConfig::directory(dir.path()).with_capacity(3));
        let m = rec.register_location("seg::ments");
        for _ in 0..10 {
            rec.record_begin(EventKind::Asb, ANONYMOUS_STREAM, m);
            rec.record_end();
        }
        let paths = rec.flush_all().unwrap();
        assert_eq!(paths.len(), 1);
        let file = read_trace_file(&paths[0]).unwrap();
        assert_eq!(file.trace.events.len(), 20);
        assert!(file.trace.events.windows(2).all(|w| w[0].cycles < w[1].cycles));
        assert!(file.trace.events.iter().step_by(2).all(|e| e.kind == EventKind::Asb));
    }

    #[test]
    fn failed_dump_retains_events() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("plain-file");
        std::fs::write(&blocker, b"x").unwrap();
        let missing = blocker.join("sub");
        let rec = Recorder::new(scripted(), RecorderConfig::directory(&missing).with_capacity(2));
        let m = MethodId(0);
        rec.record_event(SpanEvent::anonymous_begin(1, m)).unwrap();
        rec.record_event(SpanEvent::anonymous_begin(2, m)).unwrap();
        assert!(matches!(rec.record_event(SpanEvent::end(3)), Err(RecorderError::Io { .. })));
        assert_eq!(rec.total_events(), 3);
        assert!(matches!(rec.flush_all(), Err(RecorderError::EarlierDumpFailed(_))));
        let traces = rec.drain();
        assert_eq!(traces[0].events.len(), 3);
    }

    #[test]
    fn memory_sink_cannot_flush_to_disk() {
        let rec = Recorder::new(scripted(), RecorderConfig::memory());
        assert!(matches!(rec.flush_all(), Err(RecorderError::NoOutputDirectory)));
    }

    #[test]
    fn thread_ids_are_per_recorder() {
        let a = Recorder::new(scripted(), RecorderConfig::memory().with_capacity(4));
        let b = Recorder::new(scripted(), RecorderConfig::memory().with_capacity(4));
        a.record_event(SpanEvent::end(1)).unwrap();
        b.record_event(SpanEvent::end(1)).unwrap();
        assert_eq!(a.drain()[0].thread_id, 0);
        assert_eq!(b.drain()[0].thread_id, 0);
    }
}
