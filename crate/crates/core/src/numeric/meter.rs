//! Allocation accounting for matrix buffers.
//!
//! Every [`Matrix`](super::Matrix) reports its buffer size here on creation
//! and on drop. Accounting is per thread and only active inside
//! [`measure`], so it costs one thread-local flag read otherwise.

use std::cell::Cell;

thread_local! {
    static ACTIVE: Cell<bool> = const { Cell::new(false) };
    static LIVE: Cell<u64> = const { Cell::new(0) };
    static PEAK: Cell<u64> = const { Cell::new(0) };
    static TOTAL: Cell<u64> = const { Cell::new(0) };
}

/// Byte counts observed while a closure ran.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemoryUsage {
    /// Highest simultaneous live matrix bytes allocated inside the region.
    pub peak_bytes: u64,
    /// Sum of all matrix allocations inside the region.
    pub allocated_bytes: u64,
}

pub(crate) fn on_alloc(bytes: usize) {
    if ACTIVE.with(Cell::get) {
        let live = LIVE.with(|l| {
            let v = l.get() + bytes as u64;
            l.set(v);
            v
        });
        PEAK.with(|p| p.set(p.get().max(live)));
        TOTAL.with(|t| t.set(t.get() + bytes as u64));
    }
}

pub(crate) fn on_free(bytes: usize) {
    if ACTIVE.with(Cell::get) {
        // Buffers created before the region started may be freed inside it.
        LIVE.with(|l| l.set(l.get().saturating_sub(bytes as u64)));
    }
}

/// Runs `f` with matrix allocation accounting enabled on this thread.
///
/// Nested calls are not supported; the inner region resets the counters.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, MemoryUsage) {
    LIVE.with(|l| l.set(0));
    PEAK.with(|p| p.set(0));
    TOTAL.with(|t| t.set(0));
    ACTIVE.with(|a| a.set(true));
    let out = f();
    ACTIVE.with(|a| a.set(false));
    let usage = MemoryUsage {
        peak_bytes: PEAK.with(Cell::get),
        allocated_bytes: TOTAL.with(Cell::get),
    };
    (out, usage)
}
