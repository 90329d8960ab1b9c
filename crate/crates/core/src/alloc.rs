//! Allocator tuning for long training runs.

/// Keep large freed buffers in the heap instead of returning them to the
/// kernel.
///
/// A training step allocates and drops several multi-megabyte activation
/// buffers. glibc serves blocks that size with fresh `mmap`s by default, so
/// every step pays for page faults and zeroing. Raising the mmap and trim
/// thresholds lets the next step reuse the same memory. Elsewhere this is a
/// no-op. Call once, before training.
pub fn keep_freed_buffers() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator parameters; it is called before
    // any training buffers exist and the values are in range.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TOP_PAD, 256 << 20);
    }
}
