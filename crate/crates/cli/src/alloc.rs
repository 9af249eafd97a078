//! Training allocates and frees the same multi-megabyte temporaries every
//! epoch. glibc serves those with fresh `mmap`s by default, so each epoch
//! pays page faults for memory it just released. Raising the thresholds keeps
//! them on the heap.

#[cfg(all(target_os = "linux", target_env = "gnu"))]
pub fn keep_large_blocks() {
    const LIMIT: libc::c_int = 1 << 30;
    // SAFETY: mallopt only adjusts allocator tuning parameters.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, LIMIT);
        libc::mallopt(libc::M_TRIM_THRESHOLD, LIMIT);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
pub fn keep_large_blocks() {}
