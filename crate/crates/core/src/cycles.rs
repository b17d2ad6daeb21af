//! Per-thread cycle counters.
//!
//! Every timestamp in a trace comes from a [`CycleSource`]. Three backends exist:
//!
//! * [`HardwareRefCycles`]: the per-thread, virtualized reference-cycle counter
//!   exposed by Linux `perf_event_open`. Only counts while the thread is on CPU.
//! * [`MonotonicTicks`]: nanoseconds from the monotonic clock, reported as
//!   cycle-equivalent ticks at a nominal 1 GHz. Counts wall time, including time
//!   the thread spends descheduled, so outputs built on it are labeled tick-based.
//! * [`ScriptedSource`]: a deterministic virtual counter for tests and golden runs.
//!
//! Readings are only ever compared within one thread.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

/// A raw counter value read on the current thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CycleReading(pub u64);

impl CycleReading {
    pub fn get(self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleSourceKind {
    HardwareReferenceCycles,
    MonotonicClockTicks,
    /// Deterministic virtual counter driven by the test harness.
    Scripted,
}

impl CycleSourceKind {
    pub fn code(self) -> u8 {
        match self {
            CycleSourceKind::HardwareReferenceCycles => 0,
            CycleSourceKind::MonotonicClockTicks => 1,
            CycleSourceKind::Scripted => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(CycleSourceKind::HardwareReferenceCycles),
            1 => Some(CycleSourceKind::MonotonicClockTicks),
            2 => Some(CycleSourceKind::Scripted),
            _ => None,
        }
    }

    /// Human label used in reports. Anything that is not a hardware counter is tick-based.
    pub fn unit_label(self) -> &'static str {
        match self {
            CycleSourceKind::HardwareReferenceCycles => "reference cycles",
            CycleSourceKind::MonotonicClockTicks => "tick-based",
            CycleSourceKind::Scripted => "tick-based (scripted)",
        }
    }
}

impl fmt::Display for CycleSourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CycleSourceKind::HardwareReferenceCycles => "hardware-reference-cycles",
            CycleSourceKind::MonotonicClockTicks => "monotonic-clock-ticks",
            CycleSourceKind::Scripted => "scripted",
        };
        f.write_str(s)
    }
}

/// Identifies where the numbers in a trace or cost model came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CycleSourceDescriptor {
    pub kind: CycleSourceKind,
    pub nominal_frequency_hz: Option<u64>,
    pub platform_label: String,
}

impl CycleSourceDescriptor {
    /// Traces and cost models can be combined only when their kinds agree.
    pub fn compatible_with(&self, other: &CycleSourceDescriptor) -> bool {
        self.kind == other.kind
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CycleError {
    #[error("unsupported platform: {0}")]
    UnsupportedPlatform(String),
}

/// A per-thread, strictly monotonic counter.
pub trait CycleSource: Send + Sync {
    /// Reads the calling thread's counter. Successive reads on one thread are
    /// strictly increasing.
    fn read(&self) -> CycleReading;

    /// Same as [`read`](Self::read) but fenced against instruction reordering.
    fn read_serialized(&self) -> CycleReading {
        serialize_barrier();
        let r = self.read();
        serialize_barrier();
        r
    }

    fn descriptor(&self) -> &CycleSourceDescriptor;
}

#[inline(always)]
fn serialize_barrier() {
    #[cfg(target_arch = "x86_64")]
    // SAFETY: lfence has no memory-safety preconditions; SSE2 is baseline on x86_64.
    unsafe {
        core::arch::x86_64::_mm_lfence();
    }
    #[cfg(not(target_arch = "x86_64"))]
    std::sync::atomic::fence(Ordering::SeqCst);
}

/// Which backend to open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceSelection {
    /// Hardware counter when available, otherwise monotonic ticks.
    Auto,
    /// Hardware counter only; fails with `UnsupportedPlatform` when absent.
    Hardware,
    Ticks,
    Scripted { step: u64 },
}

impl std::str::FromStr for SourceSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(SourceSelection::Auto),
            "hardware" | "hw" => Ok(SourceSelection::Hardware),
            "ticks" => Ok(SourceSelection::Ticks),
            "scripted" => Ok(SourceSelection::Scripted { step: ScriptedSource::DEFAULT_STEP }),
            other => match other.strip_prefix("scripted:") {
                Some(step) => step
                    .parse::<u64>()
                    .ok()
                    .filter(|s| *s > 0)
                    .map(|step| SourceSelection::Scripted { step })
                    .ok_or_else(|| format!("invalid scripted step in `{other}`")),
                None => Err(format!(
                    "unknown cycle source `{other}` (expected auto, hardware, ticks, scripted[:STEP])"
                )),
            },
        }
    }
}

pub fn open_source(selection: SourceSelection) -> Result<Arc<dyn CycleSource>, CycleError> {
    match selection {
        SourceSelection::Auto => match HardwareRefCycles::open() {
            Ok(hw) => Ok(Arc::new(hw)),
            Err(_) => Ok(Arc::new(MonotonicTicks::new())),
        },
        SourceSelection::Hardware => Ok(Arc::new(HardwareRefCycles::open()?)),
        SourceSelection::Ticks => Ok(Arc::new(MonotonicTicks::new())),
        SourceSelection::Scripted { step } => Ok(Arc::new(ScriptedSource::new(step))),
    }
}

fn platform_label() -> String {
    format!("{}-{}", std::env::consts::OS, std::env::consts::ARCH)
}

// ---------------------------------------------------------------------------
// Monotonic clock ticks

fn process_epoch() -> Instant {
    static EPOCH: OnceLock<Instant> = OnceLock::new();
    *EPOCH.get_or_init(Instant::now)
}

thread_local! {
    static LAST_TICK: Cell<u64> = const { Cell::new(0) };
}

/// Nanoseconds since a process-wide epoch, forced strictly increasing per thread.
#[derive(Debug, Clone)]
pub struct MonotonicTicks {
    descriptor: CycleSourceDescriptor,
    epoch: Instant,
}

impl MonotonicTicks {
    pub fn new() -> Self {
        MonotonicTicks {
            descriptor: CycleSourceDescriptor {
                kind: CycleSourceKind::MonotonicClockTicks,
                nominal_frequency_hz: Some(1_000_000_000),
                platform_label: platform_label(),
            },
            epoch: process_epoch(),
        }
    }
}

impl Default for MonotonicTicks {
    fn default() -> Self {
        Self::new()
    }
}

impl CycleSource for MonotonicTicks {
    #[inline]
    fn read(&self) -> CycleReading {
        let now = self.epoch.elapsed().as_nanos() as u64;
        LAST_TICK.with(|last| {
            // The clock can return the same nanosecond twice.
            let v = now.max(last.get() + 1);
            last.set(v);
            CycleReading(v)
        })
    }

    fn descriptor(&self) -> &CycleSourceDescriptor {
        &self.descriptor
    }
}

// ---------------------------------------------------------------------------
// Hardware reference cycles (Linux perf_event)

#[cfg(target_os = "linux")]
mod perf {
    use std::cell::Cell;

    const PERF_TYPE_HARDWARE: u64 = 0;
    const PERF_COUNT_HW_REF_CPU_CYCLES: u64 = 9;
    const ATTR_SIZE: u64 = 128;
    const EXCLUDE_KERNEL: u64 = 1 << 5;
    const EXCLUDE_HV: u64 = 1 << 6;

    pub(super) struct ThreadCounter {
        pub fd: i32,
        pub last: Cell<u64>,
    }

    impl Drop for ThreadCounter {
        fn drop(&mut self) {
            if self.fd >= 0 {
                // SAFETY: fd was returned by perf_event_open and is owned by this struct.
                unsafe {
                    libc::close(self.fd);
                }
            }
        }
    }

    /// Opens a counter for the calling thread only (pid 0, any cpu).
    pub(super) fn open_for_current_thread() -> Result<i32, String> {
        // perf_event_attr laid out as 16 little-endian u64 words; unused fields stay zero.
        let mut attr = [0u64; 16];
        attr[0] = PERF_TYPE_HARDWARE | (ATTR_SIZE << 32);
        attr[1] = PERF_COUNT_HW_REF_CPU_CYCLES;
        attr[5] = EXCLUDE_KERNEL | EXCLUDE_HV;
        // SAFETY: attr is a valid, fully initialised perf_event_attr of the declared size.
        let fd = unsafe {
            libc::syscall(
                libc::SYS_perf_event_open,
                attr.as_ptr(),
                0 as libc::pid_t,
                -1 as libc::c_int,
                -1 as libc::c_int,
                0 as libc::c_ulong,
            )
        };
        if fd < 0 {
            return Err(format!(
                "perf_event_open(PERF_COUNT_HW_REF_CPU_CYCLES) failed: {}",
                std::io::Error::last_os_error()
            ));
        }
        Ok(fd as i32)
    }

    pub(super) fn read_counter(fd: i32) -> u64 {
        let mut value = 0u64;
        // SAFETY: reading exactly 8 bytes into a u64 we own.
        let n = unsafe { libc::read(fd, (&mut value as *mut u64).cast(), 8) };
        if n != 8 {
            panic!(
                "reading the reference-cycle counter failed: {}",
                std::io::Error::last_os_error()
            );
        }
        value
    }
}

#[cfg(target_os = "linux")]
thread_local! {
    static HW_COUNTER: RefCell<Option<perf::ThreadCounter>> = const { RefCell::new(None) };
}

/// Per-thread virtualized reference-cycle counter.
#[derive(Debug, Clone)]
pub struct HardwareRefCycles {
    descriptor: CycleSourceDescriptor,
}

impl HardwareRefCycles {
    /// Probes the counter on the calling thread.
    pub fn open() -> Result<Self, CycleError> {
        #[cfg(target_os = "linux")]
        {
            Self::register_current_thread()?;
            Ok(HardwareRefCycles {
                descriptor: CycleSourceDescriptor {
                    kind: CycleSourceKind::HardwareReferenceCycles,
                    nominal_frequency_hz: None,
                    platform_label: platform_label(),
                },
            })
        }
        #[cfg(not(target_os = "linux"))]
        {
            Err(CycleError::UnsupportedPlatform(
                "per-thread reference cycles require Linux perf events".into(),
            ))
        }
    }

    /// Idempotent; opens the calling thread's counter on first use.
    #[cfg(target_os = "linux")]
    pub fn register_current_thread() -> Result<(), CycleError> {
        HW_COUNTER.with(|slot| {
            let mut slot = slot.borrow_mut();
            if slot.is_none() {
                let fd = perf::open_for_current_thread().map_err(CycleError::UnsupportedPlatform)?;
                *slot = Some(perf::ThreadCounter { fd, last: Cell::new(0) });
            }
            Ok(())
        })
    }
}

impl CycleSource for HardwareRefCycles {
    #[inline]
    fn read(&self) -> CycleReading {
        #[cfg(target_os = "linux")]
        {
            HW_COUNTER.with(|slot| {
                if slot.borrow().is_none() {
                    Self::register_current_thread().expect("reference-cycle counter vanished");
                }
                let slot = slot.borrow();
                let counter = slot.as_ref().unwrap();
                let v = perf::read_counter(counter.fd).max(counter.last.get() + 1);
                counter.last.set(v);
                CycleReading(v)
            })
        }
        #[cfg(not(target_os = "linux"))]
        unreachable!("HardwareRefCycles cannot be constructed on this platform")
    }

    fn descriptor(&self) -> &CycleSourceDescriptor {
        &self.descriptor
    }
}

// ---------------------------------------------------------------------------
// Scripted source

static NEXT_SCRIPTED_ID: AtomicU64 = AtomicU64::new(1);

struct ScriptedThreadState {
    source_id: u64,
    counter: u64,
    reads: u64,
}

thread_local! {
    static SCRIPTED: RefCell<Vec<ScriptedThreadState>> = const { RefCell::new(Vec::new()) };
}

/// Deterministic per-thread virtual counter.
///
/// Every read advances the calling thread's counter by `step` and returns the new
/// value; [`advance`](Self::advance) adds simulated work. A span that encloses `w`
/// units of work and no nested spans therefore measures exactly `w + step`.
pub struct ScriptedSource {
    id: u64,
    step: u64,
    total_reads: AtomicU64,
    descriptor: CycleSourceDescriptor,
}

impl ScriptedSource {
    pub const DEFAULT_STEP: u64 = 100;

    pub fn new(step: u64) -> Self {
        assert!(step > 0, "scripted step must be positive");
        ScriptedSource {
            id: NEXT_SCRIPTED_ID.fetch_add(1, Ordering::Relaxed),
            step,
            total_reads: AtomicU64::new(0),
            descriptor: CycleSourceDescriptor {
                kind: CycleSourceKind::Scripted,
                nominal_frequency_hz: None,
                platform_label: format!("scripted(step={step})"),
            },
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    fn with_state<R>(&self, f: impl FnOnce(&mut ScriptedThreadState) -> R) -> R {
        SCRIPTED.with(|states| {
            let mut states = states.borrow_mut();
            let idx = match states.iter().position(|s| s.source_id == self.id) {
                Some(i) => i,
                None => {
                    states.push(ScriptedThreadState { source_id: self.id, counter: 0, reads: 0 });
                    states.len() - 1
                }
            };
            f(&mut states[idx])
        })
    }

    /// Simulates `ticks` of work on the calling thread.
    pub fn advance(&self, ticks: u64) {
        self.with_state(|s| s.counter += ticks);
    }

    /// Reads performed on this source across all threads.
    pub fn read_count(&self) -> u64 {
        self.total_reads.load(Ordering::Relaxed)
    }

    pub fn reads_on_current_thread(&self) -> u64 {
        self.with_state(|s| s.reads)
    }
}

impl fmt::Debug for ScriptedSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScriptedSource").field("id", &self.id).field("step", &self.step).finish()
    }
}

impl CycleSource for ScriptedSource {
    fn read(&self) -> CycleReading {
        self.total_reads.fetch_add(1, Ordering::Relaxed);
        self.with_state(|s| {
            s.counter += self.step;
            s.reads += 1;
            CycleReading(s.counter)
        })
    }

    // No fences: the scripted counter is already exact.
    fn read_serialized(&self) -> CycleReading {
        self.read()
    }

    fn descriptor(&self) -> &CycleSourceDescriptor {
        &self.descriptor
    }
}
