//! Process-wide accounting of live tensor buffer bytes.
//!
//! Every [`Tensor`](super::Tensor) registers its buffer on construction and
//! releases it on drop, so the meter reflects exactly the bytes held by live
//! tensors. The peak is monotone until [`reset_peak`] is called.

use std::sync::atomic::{AtomicUsize, Ordering};

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

pub(crate) fn record_alloc(bytes: usize) {
    let now = CURRENT.fetch_add(bytes, Ordering::Relaxed) + bytes;
    PEAK.fetch_max(now, Ordering::Relaxed);
}

pub(crate) fn record_free(bytes: usize) {
    CURRENT.fetch_sub(bytes, Ordering::Relaxed);
}

/// Live and peak byte counts at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocSnapshot {
    pub current_bytes: usize,
    pub peak_bytes: usize,
}

/// Returns `(current, peak)` live tensor bytes.
pub fn snapshot() -> AllocSnapshot {
    let current_bytes = CURRENT.load(Ordering::Relaxed);
    let peak_bytes = PEAK.load(Ordering::Relaxed).max(current_bytes);
    AllocSnapshot {
        current_bytes,
        peak_bytes,
    }
}

/// Restarts peak tracking from the current live byte count.
pub fn reset_peak() {
    PEAK.store(CURRENT.load(Ordering::Relaxed), Ordering::Relaxed);
}
