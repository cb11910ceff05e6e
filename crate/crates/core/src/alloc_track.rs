//! Counting wrapper around the system allocator.
//!
//! Install it in a binary or test crate with
//!
//! ```ignore
//! #[global_allocator]
//! static ALLOC: TrackingAllocator = TrackingAllocator::new();
//! ```
//!
//! and read [`TrackingAllocator::snapshot`] around the code under test.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering::Relaxed};

pub struct TrackingAllocator {
    current: AtomicUsize,
    peak: AtomicUsize,
    largest: AtomicUsize,
    threshold: AtomicUsize,
    over_threshold: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AllocSnapshot {
    /// Live bytes right now.
    pub current: usize,
    /// Highest live byte count since the last reset.
    pub peak: usize,
    /// Largest single request since the last reset.
    pub largest: usize,
    /// Requests of at least the threshold since the last reset.
    pub over_threshold: usize,
}

impl TrackingAllocator {
    pub const fn new() -> Self {
        Self {
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            largest: AtomicUsize::new(0),
            threshold: AtomicUsize::new(usize::MAX),
            over_threshold: AtomicUsize::new(0),
        }
    }

    /// Starts a new measurement window: peak drops to the current live
    /// bytes and requests of `threshold` bytes or more are counted.
    pub fn reset(&self, threshold: usize) {
        self.peak.store(self.current.load(Relaxed), Relaxed);
        self.largest.store(0, Relaxed);
        self.threshold.store(threshold, Relaxed);
        self.over_threshold.store(0, Relaxed);
    }

    pub fn snapshot(&self) -> AllocSnapshot {
        AllocSnapshot {
            current: self.current.load(Relaxed),
            peak: self.peak.load(Relaxed),
            largest: self.largest.load(Relaxed),
            over_threshold: self.over_threshold.load(Relaxed),
        }
    }

    fn record(&self, size: usize) {
        let now = self.current.fetch_add(size, Relaxed) + size;
        self.peak.fetch_max(now, Relaxed);
        self.largest.fetch_max(size, Relaxed);
        if size >= self.threshold.load(Relaxed) {
            self.over_threshold.fetch_add(1, Relaxed);
        }
    }
}

impl Default for TrackingAllocator {
    fn default() -> Self {
        Self::new()
    }
}

unsafe impl GlobalAlloc for TrackingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let ptr = System.alloc(layout);
        if !ptr.is_null() {
            self.record(layout.size());
        }
        ptr
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let ptr = System.alloc_zeroed(layout);
        if !ptr.is_null() {
            self.record(layout.size());
        }
        ptr
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        self.current.fetch_sub(layout.size(), Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let out = System.realloc(ptr, layout, new_size);
        if !out.is_null() {
            self.current.fetch_sub(layout.size(), Relaxed);
            self.record(new_size);
        }
        out
    }
}
