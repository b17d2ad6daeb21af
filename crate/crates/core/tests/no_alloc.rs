//! Recording into a buffer with spare capacity must not touch the allocator.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::sync::Arc;

use spanprof::cycles::MonotonicTicks;
use spanprof::probe::Profiler;
use spanprof::recorder::{MethodId, RecorderConfig};

struct Counting;

thread_local! {
    static ALLOCATIONS: Cell<u64> = const { Cell::new(0) };
}

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let _ = ALLOCATIONS.try_with(|c| c.set(c.get() + 1));
        System.alloc(layout)
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout)
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let _ = ALLOCATIONS.try_with(|c| c.set(c.get() + 1));
        System.realloc(ptr, layout, new_size)
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

fn allocations() -> u64 {
    ALLOCATIONS.with(Cell::get)
}

fn spans(profiler: &Profiler, n: usize) {
    for _ in 0..n {
        let _outer = profiler.enter_sequential_execution(MethodId(0));
        let _inner = profiler.enter_sequential_execution(MethodId(1));
    }
}

#[test]
fn steady_state_recording_does_not_allocate() {
    let profiler = Profiler::new(Arc::new(MonotonicTicks::new()), RecorderConfig::memory().with_capacity(10_000));
    // The first event registers this thread's buffer.
    spans(&profiler, 1);
    let before = allocations();
    spans(&profiler, 2_000);
    assert_eq!(allocations() - before, 0);
}

#[test]
fn a_full_buffer_is_replaced() {
    let profiler = Profiler::new(Arc::new(MonotonicTicks::new()), RecorderConfig::memory().with_capacity(64));
    spans(&profiler, 1);
    let before = allocations();
    spans(&profiler, 100);
    assert!(allocations() > before);
    let events: usize = profiler.recorder().drain().iter().map(|t| t.events.len()).sum();
    assert_eq!(events, 4 * 101);
}
