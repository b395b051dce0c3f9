use std::sync::Mutex;
use std::time::Duration;

use super::ClientError;

/// Pause between attempts. Injectable so tests never wait on a real clock.
pub trait Sleep: Send + Sync {
    fn sleep(&self, delay: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadSleep;

impl Sleep for ThreadSleep {
    fn sleep(&self, delay: Duration) {
        std::thread::sleep(delay);
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoSleep;

impl Sleep for NoSleep {
    fn sleep(&self, _delay: Duration) {}
}

/// Records requested delays without sleeping.
#[derive(Debug, Default)]
pub struct RecordingSleep {
    delays: Mutex<Vec<Duration>>,
}

impl RecordingSleep {
    pub fn delays(&self) -> Vec<Duration> {
        self.delays.lock().unwrap().clone()
    }
}

impl Sleep for RecordingSleep {
    fn sleep(&self, delay: Duration) {
        self.delays.lock().unwrap().push(delay);
    }
}

/// Bounded retry with exponential backoff: attempt `n` (0-based) that fails
/// with a retryable error waits `base_delay * 2^n` before the next one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn delay_for(&self, attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << attempt.min(16))
    }

    /// Runs `call` until it succeeds, fails with a non-retryable error, or the
    /// retry budget is spent. Returns the value and the number of retries used.
    pub fn run<T>(
        &self,
        sleeper: &dyn Sleep,
        mut call: impl FnMut() -> Result<T, ClientError>,
    ) -> Result<(T, u32), ClientError> {
        let mut attempt = 0;
        loop {
            match call() {
                Ok(v) => return Ok((v, attempt)),
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    log::warn!("attempt {} failed: {e}; retrying", attempt + 1);
                    sleeper.sleep(self.delay_for(attempt));
                    attempt += 1;
                }
                Err(e) if attempt > 0 => {
                    return Err(ClientError::RetriesExhausted {
                        attempts: attempt + 1,
                        source: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}
