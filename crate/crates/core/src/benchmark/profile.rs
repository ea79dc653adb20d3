use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

/// Global allocator wrapper that tracks live and peak heap bytes. Install it
/// in the binary that wants memory profiles:
///
/// ```ignore
/// #[global_allocator]
/// static ALLOC: TrackingAllocator = TrackingAllocator::new();
/// ```
pub struct TrackingAllocator {
    inner: System,
}

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static INSTALLED: AtomicBool = AtomicBool::new(false);

impl TrackingAllocator {
    pub const fn new() -> Self {
        TrackingAllocator { inner: System }
    }
}

impl Default for TrackingAllocator {
    fn default() -> Self {
        Self::new()
    }
}

unsafe impl GlobalAlloc for TrackingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        INSTALLED.store(true, Ordering::Relaxed);
        let ptr = unsafe { self.inner.alloc(layout) };
        if !ptr.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        ptr
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { self.inner.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

/// Whether a [`TrackingAllocator`] is live in this process.
pub fn tracking_enabled() -> bool {
    INSTALLED.load(Ordering::Relaxed)
}

/// Reset the peak to the current live size (call before a workload).
pub fn reset_peak() {
    PEAK.store(CURRENT.load(Ordering::Relaxed), Ordering::Relaxed);
}

pub fn current_bytes() -> usize {
    CURRENT.load(Ordering::Relaxed)
}

pub fn peak_bytes() -> usize {
    PEAK.load(Ordering::Relaxed)
}

/// Wall time and peak allocator bytes for one workload, with factors
/// relative to a baseline profile when one is supplied.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResourceProfile {
    pub name: String,
    pub wall_time_secs: f64,
    pub peak_memory_bytes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_memory: Option<f64>,
}

impl ResourceProfile {
    /// Factors against a baseline profile. A profile against itself reads
    /// exactly 1.00x / 1.00x.
    pub fn relative_to(&self, baseline: &ResourceProfile) -> ResourceProfile {
        ResourceProfile {
            name: self.name.clone(),
            wall_time_secs: self.wall_time_secs,
            peak_memory_bytes: self.peak_memory_bytes,
            relative_time: (baseline.wall_time_secs > 0.0)
                .then(|| self.wall_time_secs / baseline.wall_time_secs),
            relative_memory: (baseline.peak_memory_bytes > 0)
                .then(|| self.peak_memory_bytes as f64 / baseline.peak_memory_bytes as f64),
        }
    }
}

/// Run `workload` and measure it. Peak memory counts allocations above the
/// pre-workload baseline; it reads zero unless a [`TrackingAllocator`] is
/// installed.
pub fn profile_run<F: FnOnce()>(
    name: &str,
    workload: F,
    baseline: Option<&ResourceProfile>,
) -> ResourceProfile {
    reset_peak();
    let before = current_bytes();
    let start = Instant::now();
    workload();
    let wall_time_secs = start.elapsed().as_secs_f64();
    let peak_memory_bytes = peak_bytes().saturating_sub(before);
    let raw = ResourceProfile {
        name: name.to_string(),
        wall_time_secs,
        peak_memory_bytes,
        relative_time: None,
        relative_memory: None,
    };
    match baseline {
        Some(b) => raw.relative_to(b),
        None => raw,
    }
}

/// Relative-efficiency table: one row per profile, factors against the
/// baseline row (the baseline shows 1.00x by construction).
pub fn format_profile_table(rows: &[ResourceProfile]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<24} {:>10} {:>14}\n", "Model", "Time", "Memory"));
    for row in rows {
        let time = row
            .relative_time
            .map(|f| format!("{f:.2}x"))
            .unwrap_or_else(|| format!("{:.3}s", row.wall_time_secs));
        let mem = row
            .relative_memory
            .map(|f| format!("{f:.2}x"))
            .unwrap_or_else(|| format!("{}B", row.peak_memory_bytes));
        out.push_str(&format!("{:<24} {:>10} {:>14}\n", row.name, time, mem));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_against_itself_is_unity() {
        let base = profile_run(
            "base",
            || std::thread::sleep(std::time::Duration::from_millis(5)),
            None,
        );
        let vs_self = base.relative_to(&base);
        assert_eq!(vs_self.relative_time, Some(1.0));
        if base.peak_memory_bytes > 0 {
            assert_eq!(vs_self.relative_memory, Some(1.0));
        }
    }

    #[test]
    fn table_formats_one_row_per_profile() {
        let rows = vec![
            ResourceProfile {
                name: "baseline".into(),
                wall_time_secs: 1.0,
                peak_memory_bytes: 100,
                relative_time: Some(1.0),
                relative_memory: Some(1.0),
            },
            ResourceProfile {
                name: "two-layer".into(),
                wall_time_secs: 2.0,
                peak_memory_bytes: 220,
                relative_time: Some(2.0),
                relative_memory: Some(2.2),
            },
        ];
        let table = format_profile_table(&rows);
        assert_eq!(table.lines().count(), 3);
        assert!(table.contains("1.00x"));
        assert!(table.contains("2.00x"));
        assert!(table.contains("2.20x"));
    }
}
