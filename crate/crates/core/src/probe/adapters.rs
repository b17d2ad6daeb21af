use super::{profile_parallel_task, Location, PipelineHandle, Profiler};
use crate::recorder::MethodId;

/// Wraps the terminal operation of an ordinary iterator pipeline in an anonymous span.
///
/// ```
/// # use std::sync::Arc;
/// # use spanprof::{cycles::ScriptedSource, probe::{Profiler, ProfileIterator}, recorder::RecorderConfig};
/// # let profiler = Profiler::new(Arc::new(ScriptedSource::new(1)), RecorderConfig::memory());
/// let evens: Vec<u32> = (0..10u32)
///     .filter(|n| n % 2 == 0)
///     .profiled_collect(&profiler, spanprof::location!());
/// assert_eq!(evens, [0, 2, 4, 6, 8]);
/// ```
pub trait ProfileIterator: Iterator + Sized {
    /// Runs `terminal` on the pipeline inside one anonymous span.
    fn profiled<R>(self, profiler: &Profiler, location: impl Location, terminal: impl FnOnce(Self) -> R) -> R {
        let method_id = location.method_id(profiler);
        let _span = profiler.enter_sequential_execution(method_id);
        terminal(self)
    }

    fn profiled_collect<B: FromIterator<Self::Item>>(self, profiler: &Profiler, location: impl Location) -> B {
        self.profiled(profiler, location, |it| it.collect())
    }

    fn profiled_fold<B>(
        self,
        profiler: &Profiler,
        location: impl Location,
        init: B,
        f: impl FnMut(B, Self::Item) -> B,
    ) -> B {
        self.profiled(profiler, location, |it| it.fold(init, f))
    }

    fn profiled_for_each(self, profiler: &Profiler, location: impl Location, f: impl FnMut(Self::Item)) {
        self.profiled(profiler, location, |it| it.for_each(f))
    }
}

impl<I: Iterator> ProfileIterator for I {}

/// A parallel pipeline over a slice, executed as fork/join tasks on the current
/// rayon pool.
///
/// Execution mirrors a fork/join stream: the root task splits the input in half
/// while it exceeds the grain, continues with the left half itself and forks the
/// right half as a new task. Every task body runs inside a named span, so an
/// input split into `n` leaves produces one primordial and `n - 1` support spans.
pub struct ParallelStream<'a, T> {
    items: &'a [T],
    grain: usize,
}

impl<'a, T: Sync> ParallelStream<'a, T> {
    pub fn new(items: &'a [T]) -> Self {
        ParallelStream { items, grain: 1 }
    }

    /// Maximum number of items a leaf processes without splitting further.
    pub fn grain(mut self, grain: usize) -> Self {
        self.grain = grain.max(1);
        self
    }

    /// Number of tasks (and thus named spans) an execution will create.
    pub fn task_count(&self) -> usize {
        fn leaves(len: usize, grain: usize) -> usize {
            if len <= grain {
                1
            } else {
                let mid = len / 2;
                leaves(mid, grain) + leaves(len - mid, grain)
            }
        }
        leaves(self.items.len(), self.grain)
    }

    pub fn map_reduce<R, M, I, F>(self, profiler: &Profiler, location: impl Location, map: M, identity: I, reduce: F) -> R
    where
        R: Send,
        M: Fn(&T) -> R + Sync,
        I: Fn() -> R + Sync,
        F: Fn(R, R) -> R + Sync,
    {
        let exec = Execution {
            profiler,
            handle: PipelineHandle::parallel(),
            method_id: location.method_id(profiler),
            grain: self.grain,
            map: &map,
            identity: &identity,
            reduce: &reduce,
        };
        exec.task(self.items)
    }

    pub fn for_each<F>(self, profiler: &Profiler, location: impl Location, f: F)
    where
        F: Fn(&T) + Sync,
    {
        self.map_reduce(profiler, location, |x| f(x), || (), |_, _| ())
    }
}

struct Execution<'e, M, I, F> {
    profiler: &'e Profiler,
    handle: PipelineHandle,
    method_id: MethodId,
    grain: usize,
    map: &'e M,
    identity: &'e I,
    reduce: &'e F,
}

impl<M, I, F> Execution<'_, M, I, F> {
    fn task<T, R>(&self, items: &[T]) -> R
    where
        T: Sync,
        R: Send,
        M: Fn(&T) -> R + Sync,
        I: Fn() -> R + Sync,
        F: Fn(R, R) -> R + Sync,
    {
        profile_parallel_task(self.profiler, &self.handle, self.method_id, || self.body(items))
    }

    fn body<T, R>(&self, items: &[T]) -> R
    where
        T: Sync,
        R: Send,
        M: Fn(&T) -> R + Sync,
        I: Fn() -> R + Sync,
        F: Fn(R, R) -> R + Sync,
    {
        if items.len() <= self.grain {
            return items.iter().fold((self.identity)(), |acc, x| (self.reduce)(acc, (self.map)(x)));
        }
        let (left, right) = items.split_at(items.len() / 2);
        let (a, b) = rayon::join(|| self.body(left), || self.task(right));
        (self.reduce)(a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cycles::ScriptedSource;
    use crate::recorder::{EventKind, RecorderConfig};
    use std::collections::HashMap;
    use std::sync::Arc;

    fn profiler() -> Profiler {
        Profiler::new(Arc::new(ScriptedSource::new(3)), RecorderConfig::memory())
    }

    #[test]
    fn iterator_terminals_emit_one_span_each() {
        let p = profiler();
        let v: Vec<i32> = (1..4).map(|x| x * 2).profiled_collect(&p, "it::collect");
        let s = v.iter().profiled_fold(&p, "it::fold", 0, |a, b| a + b);
        assert_eq!(s, 12);
        let traces = p.recorder().drain();
        assert_eq!(traces[0].events.len(), 4);
        assert_eq!(p.recorder().locations().snapshot(), vec!["it::collect", "it::fold"]);
    }

    #[test]
    fn thirty_two_leaves_give_one_primordial_and_31_supports() {
        let p = profiler();
        let data: Vec<u64> = (0..256).collect();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let stream = ParallelStream::new(&data).grain(8);
        assert_eq!(stream.task_count(), 32);
        let sum = pool.install(|| stream.map_reduce(&p, "par::sum", |x| *x, || 0, |a, b| a + b));
        assert_eq!(sum, 255 * 256 / 2);
        let mut counts: HashMap<EventKind, usize> = HashMap::new();
        for t in p.recorder().drain() {
            for e in t.events {
                *counts.entry(e.kind).or_default() += 1;
                if e.kind.is_begin() {
                    assert_eq!(e.stream_id, 0);
                }
            }
        }
        assert_eq!(counts.get(&EventKind::Psb), Some(&1));
        assert_eq!(counts.get(&EventKind::Ssb), Some(&31));
        assert_eq!(counts.get(&EventKind::Se), Some(&32));
        assert_eq!(counts.get(&EventKind::Asb), None);
    }

    #[test]
    fn concurrent_pipelines_get_distinct_ids() {
        let p = profiler();
        let data: Vec<u32> = (0..64).collect();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        pool.install(|| {
            rayon::join(
                || ParallelStream::new(&data).grain(4).for_each(&p, "a", |_| ()),
                || ParallelStream::new(&data).grain(4).for_each(&p, "b", |_| ()),
            )
        });
        let mut prim_per_stream: HashMap<i64, usize> = HashMap::new();
        let mut named: HashMap<i64, usize> = HashMap::new();
        for t in p.recorder().drain() {
            for e in t.events.iter().filter(|e| e.kind.is_begin()) {
                *named.entry(e.stream_id).or_default() += 1;
                if e.kind == EventKind::Psb {
                    *prim_per_stream.entry(e.stream_id).or_default() += 1;
                }
            }
        }
        assert_eq!(named.len(), 2);
        assert_eq!(prim_per_stream.len(), 2);
        assert!(prim_per_stream.values().all(|&c| c == 1));
        assert!(named.values().all(|&c| c == 16));
    }
}
