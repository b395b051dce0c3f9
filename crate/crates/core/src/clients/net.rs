//! Process-wide accounting of outbound network attempts.
//!
//! [`HttpClient`](super::HttpClient) bumps the counter before opening any
//! connection and refuses to connect while network access is forbidden,
//! which lets tests prove that a mock run never touched a socket.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

static ATTEMPTS: AtomicU64 = AtomicU64::new(0);
static FORBIDDEN: AtomicBool = AtomicBool::new(false);

/// Number of outbound requests attempted so far in this process.
pub fn attempts() -> u64 {
    ATTEMPTS.load(Ordering::SeqCst)
}

pub fn set_forbidden(forbidden: bool) {
    FORBIDDEN.store(forbidden, Ordering::SeqCst);
}

pub fn is_forbidden() -> bool {
    FORBIDDEN.load(Ordering::SeqCst)
}

pub(crate) fn record_attempt() -> Result<(), super::ClientError> {
    ATTEMPTS.fetch_add(1, Ordering::SeqCst);
    if is_forbidden() {
        return Err(super::ClientError::NetworkForbidden);
    }
    Ok(())
}
