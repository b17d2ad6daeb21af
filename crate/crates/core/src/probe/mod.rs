//! Instrumentation wrappers that emit span events around pipeline executions.
//!
//! A sequential pipeline execution produces one anonymous span on the thread that
//! runs its terminal operation. A parallel execution produces one named span per
//! fork/join task; the first task to run generates the stream id and stores it in
//! the pipeline's [`PipelineHandle`] (primordial span), later tasks only read it
//! (support spans).
//!
//! ```
//! use std::sync::Arc;
//! use spanprof::cycles::MonotonicTicks;
//! use spanprof::probe::{profile_sequential, Profiler};
//! use spanprof::recorder::RecorderConfig;
//!
//! let profiler = Profiler::new(Arc::new(MonotonicTicks::new()), RecorderConfig::memory());
//! let total: u64 = profile_sequential(&profiler, spanprof::location!(), || (1..=10u64).sum());
//! assert_eq!(total, 55);
//! assert_eq!(profiler.recorder().drain()[0].events.len(), 2);
//! ```

mod adapters;

pub use adapters::{ParallelStream, ProfileIterator};

use std::marker::PhantomData;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::cycles::CycleSource;
use crate::recorder::{EventKind, MethodId, Recorder, RecorderConfig, ANONYMOUS_STREAM};

/// Instrumentation entry point: a recorder plus the stream-id generator.
#[derive(Clone, Debug)]
pub struct Profiler {
    recorder: Recorder,
    next_stream_id: Arc<AtomicU64>,
}

impl Profiler {
    pub fn new(source: Arc<dyn CycleSource>, config: RecorderConfig) -> Self {
        Self::from_recorder(Recorder::new(source, config))
    }

    pub fn from_recorder(recorder: Recorder) -> Self {
        Profiler { recorder, next_stream_id: Arc::new(AtomicU64::new(0)) }
    }

    pub fn recorder(&self) -> &Recorder {
        &self.recorder
    }

    /// Maps a call-site descriptor to its method id.
    pub fn resolve_location(&self, call_site_descriptor: &str) -> MethodId {
        self.recorder.register_location(call_site_descriptor)
    }

    /// Number of stream ids handed out so far.
    pub fn streams_generated(&self) -> u64 {
        self.next_stream_id.load(Ordering::Relaxed)
    }

    #[inline]
    fn fresh_stream_id(&self) -> u64 {
        self.next_stream_id.fetch_add(1, Ordering::Relaxed)
    }

    /// Opens the anonymous span of a sequential pipeline execution.
    #[inline]
    pub fn enter_sequential_execution(&self, method_id: MethodId) -> SpanGuard<'_> {
        self.recorder.record_begin(EventKind::Asb, ANONYMOUS_STREAM, method_id);
        SpanGuard::new(&self.recorder, method_id, SpanKind::Anonymous)
    }

    /// Opens the named span of one fork/join task of a parallel pipeline.
    #[inline]
    pub fn enter_task_execution(&self, handle: &PipelineHandle, method_id: MethodId) -> SpanGuard<'_> {
        debug_assert!(handle.is_parallel(), "task spans belong to parallel pipelines");
        let (kind, stream_id) = match handle.stream_id() {
            Some(id) => (SpanKind::Support, id),
            None => match handle.try_set(self.fresh_stream_id()) {
                Ok(id) => (SpanKind::Primordial, id),
                // Lost a race against another first task; the winner is primordial.
                Err(existing) => (SpanKind::Support, existing),
            },
        };
        let event = if kind == SpanKind::Primordial { EventKind::Psb } else { EventKind::Ssb };
        self.recorder.record_begin(event, stream_id as i64, method_id);
        SpanGuard::new(&self.recorder, method_id, kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanKind {
    Anonymous,
    Primordial,
    Support,
}

/// Records the span end when dropped, including during unwinding.
///
/// Guards are bound to the thread that created them.
#[must_use = "the span ends when the guard is dropped"]
#[derive(Debug)]
pub struct SpanGuard<'a> {
    recorder: &'a Recorder,
    method_id: MethodId,
    kind: SpanKind,
    _thread_bound: PhantomData<*const ()>,
}

impl<'a> SpanGuard<'a> {
    fn new(recorder: &'a Recorder, method_id: MethodId, kind: SpanKind) -> Self {
        SpanGuard { recorder, method_id, kind, _thread_bound: PhantomData }
    }

    pub fn method_id(&self) -> MethodId {
        self.method_id
    }

    pub fn kind(&self) -> SpanKind {
        self.kind
    }
}

impl Drop for SpanGuard<'_> {
    #[inline]
    fn drop(&mut self) {
        self.recorder.record_end();
    }
}

const UNSET: u64 = u64::MAX;

/// Per-execution state shared by all tasks of one pipeline: the set-once stream id.
#[derive(Debug)]
pub struct PipelineHandle {
    head_slot: AtomicU64,
    is_parallel: bool,
}

impl PipelineHandle {
    pub fn parallel() -> Self {
        PipelineHandle { head_slot: AtomicU64::new(UNSET), is_parallel: true }
    }

    pub fn sequential() -> Self {
        PipelineHandle { head_slot: AtomicU64::new(UNSET), is_parallel: false }
    }

    pub fn is_parallel(&self) -> bool {
        self.is_parallel
    }

    pub fn stream_id(&self) -> Option<u64> {
        match self.head_slot.load(Ordering::Acquire) {
            UNSET => None,
            id => Some(id),
        }
    }

    /// Stores `id` if the slot is empty; otherwise returns the id already stored.
    pub fn try_set(&self, id: u64) -> Result<u64, u64> {
        debug_assert_ne!(id, UNSET);
        self.head_slot
            .compare_exchange(UNSET, id, Ordering::AcqRel, Ordering::Acquire)
            .map(|_| id)
    }
}

/// Anything that identifies the caller of a pipeline execution.
pub trait Location {
    fn method_id(&self, profiler: &Profiler) -> MethodId;
}

impl Location for MethodId {
    fn method_id(&self, _: &Profiler) -> MethodId {
        *self
    }
}

impl Location for str {
    fn method_id(&self, profiler: &Profiler) -> MethodId {
        profiler.resolve_location(self)
    }
}

impl Location for String {
    fn method_id(&self, profiler: &Profiler) -> MethodId {
        profiler.resolve_location(self)
    }
}

impl<L: Location + ?Sized> Location for &L {
    fn method_id(&self, profiler: &Profiler) -> MethodId {
        (**self).method_id(profiler)
    }
}

/// A call site captured at compile time by [`location!`](crate::location).
///
/// Caches the method id of the last recorder it was resolved against, so the
/// hot path is a single atomic load.
pub struct CallSite {
    name: fn() -> &'static str,
    cache: AtomicU64,
}

impl CallSite {
    #[doc(hidden)]
    pub const fn new(name: fn() -> &'static str) -> Self {
        CallSite { name, cache: AtomicU64::new(0) }
    }

    pub fn name(&self) -> &'static str {
        (self.name)()
    }
}

impl std::fmt::Debug for CallSite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CallSite").field("name", &self.name()).finish()
    }
}

impl Location for CallSite {
    #[inline]
    fn method_id(&self, profiler: &Profiler) -> MethodId {
        let key = profiler.recorder.id();
        let cached = self.cache.load(Ordering::Relaxed);
        if cached >> 32 == key {
            return MethodId(cached as u32);
        }
        let id = profiler.resolve_location(self.name());
        self.cache.store((key << 32) | id.0 as u64, Ordering::Relaxed);
        id
    }
}

#[doc(hidden)]
pub fn __trim_call_site(raw: &'static str) -> &'static str {
    let name = raw.strip_suffix("::__spanprof_site::f").unwrap_or(raw);
    let mut name = name;
    while let Some(stripped) = name.strip_suffix("::{{closure}}") {
        name = stripped;
    }
    name
}

/// Captures the enclosing function's path as a [`CallSite`].
#[macro_export]
macro_rules! location {
    () => {{
        fn __spanprof_site() -> &'static str {
            fn f() {}
            fn type_name_of<T>(_: T) -> &'static str {
                ::std::any::type_name::<T>()
            }
            $crate::probe::__trim_call_site(type_name_of(f))
        }
        static SITE: $crate::probe::CallSite = $crate::probe::CallSite::new(__spanprof_site);
        &SITE
    }};
}

/// Runs `body` as a sequential pipeline execution attributed to `location`.
#[inline]
pub fn profile_sequential<R>(profiler: &Profiler, location: impl Location, body: impl FnOnce() -> R) -> R {
    let method_id = location.method_id(profiler);
    let _span = profiler.enter_sequential_execution(method_id);
    body()
}

/// Runs `body` as one fork/join task of the parallel pipeline behind `handle`.
#[inline]
pub fn profile_parallel_task<R>(
    profiler: &Profiler,
    handle: &PipelineHandle,
    location: impl Location,
    body: impl FnOnce() -> R,
) -> R {
    let method_id = location.method_id(profiler);
    let _span = profiler.enter_task_execution(handle, method_id);
    body()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cycles::ScriptedSource;
    use crate::recorder::SpanEvent;

    fn profiler() -> Profiler {
        Profiler::new(Arc::new(ScriptedSource::new(10)), RecorderConfig::memory().with_capacity(64))
    }

    fn kinds(events: &[SpanEvent]) -> Vec<EventKind> {
        events.iter().map(|e| e.kind).collect()
    }

    #[test]
    fn empty_sequential_span() {
        let p = profiler();
        drop(p.enter_sequential_execution(MethodId(0)));
        let t = p.recorder().drain();
        assert_eq!(kinds(&t[0].events), vec![EventKind::Asb, EventKind::Se]);
        assert!(t[0].events[1].cycles > t[0].events[0].cycles);
    }

    #[test]
    fn back_to_back_and_nested() {
        let p = profiler();
        let m = p.resolve_location("a::b");
        profile_sequential(&p, m, || ());
        profile_sequential(&p, m, || ());
        profile_sequential(&p, m, || profile_sequential(&p, m, || ()));
        use EventKind::*;
        assert_eq!(kinds(&p.recorder().drain()[0].events), vec![Asb, Se, Asb, Se, Asb, Asb, Se, Se]);
    }

    #[test]
    fn first_task_is_primordial() {
        let p = profiler();
        let h = PipelineHandle::parallel();
        let m = MethodId(0);
        let first = p.enter_task_execution(&h, m);
        assert_eq!(first.kind(), SpanKind::Primordial);
        drop(first);
        let second = std::thread::scope(|s| s.spawn(|| p.enter_task_execution(&h, m).kind()).join().unwrap());
        assert_eq!(second, SpanKind::Support);
        let traces = p.recorder().drain();
        let begins: Vec<_> = traces.iter().flat_map(|t| &t.events).filter(|e| e.kind.is_begin()).collect();
        assert_eq!(begins.len(), 2);
        assert!(begins.iter().all(|e| e.stream_id == 0));
    }

    #[test]
    fn guard_closes_span_on_panic() {
        let p = profiler();
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            profile_sequential(&p, MethodId(0), || panic!("boom"))
        }));
        assert!(r.is_err());
        assert_eq!(kinds(&p.recorder().drain()[0].events), vec![EventKind::Asb, EventKind::Se]);
    }

    #[test]
    fn handle_is_set_once() {
        let h = PipelineHandle::parallel();
        assert_eq!(h.try_set(4), Ok(4));
        assert_eq!(h.try_set(5), Err(4));
        assert_eq!(h.stream_id(), Some(4));
    }

    fn where_am_i() -> &'static CallSite {
        crate::location!()
    }

    #[test]
    fn location_macro_names_the_function() {
        assert_eq!(where_am_i().name(), "spanprof::probe::tests::where_am_i");
        let in_closure = (|| crate::location!().name())();
        assert_eq!(in_closure, "spanprof::probe::tests::location_macro_names_the_function");
    }

    #[test]
    fn call_sites_resolve_stably() {
        let p = profiler();
        let a = where_am_i().method_id(&p);
        assert_eq!(where_am_i().method_id(&p), a);
        let b = crate::location!().method_id(&p);
        assert_ne!(a, b);
        let q = profiler();
        assert_eq!(where_am_i().method_id(&q), MethodId(0));
        assert_eq!(p.recorder().locations().len(), 2);
    }
}
