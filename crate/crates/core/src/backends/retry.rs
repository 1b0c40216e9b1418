use std::time::Duration;

use tracing::warn;

use super::BackendError;

/// Exponential backoff over retryable failures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    /// Three attempts in total, backing off 1s then 2s.
    fn default() -> Self {
        Self {
            max_retries: 2,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn new(max_retries: u32, base_delay: Duration) -> Self {
        Self {
            max_retries,
            base_delay,
        }
    }

    pub fn delay_for(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << retry.min(16))
    }

    pub fn run<T>(
        &self,
        mut attempt: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let mut retry = 0;
        loop {
            match attempt() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() => {
                    if retry == self.max_retries {
                        return Err(BackendError::ExhaustedRetries {
                            attempts: retry + 1,
                            last: Box::new(e),
                        });
                    }
                    let delay = self.delay_for(retry);
                    warn!(attempt = retry + 1, ?delay, error = %e, "retrying backend call");
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    retry += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay_for(0), Duration::from_secs(1));
        assert_eq!(p.delay_for(1), Duration::from_secs(2));
        assert_eq!(p.delay_for(2), Duration::from_secs(4));
    }

    #[test]
    fn recovers_after_transient_failure() {
        let p = RetryPolicy::new(2, Duration::ZERO);
        let mut n = 0;
        let out = p.run(|| {
            n += 1;
            if n < 3 {
                Err(BackendError::RateLimited)
            } else {
                Ok(n)
            }
        });
        assert_eq!(out.unwrap(), 3);
    }

    #[test]
    fn timeout_is_retried_until_exhausted() {
        let p = RetryPolicy::new(1, Duration::ZERO);
        let mut n = 0;
        let err = p
            .run::<()>(|| {
                n += 1;
                Err(BackendError::Timeout)
            })
            .unwrap_err();
        assert_eq!(n, 2);
        assert!(matches!(err, BackendError::ExhaustedRetries { attempts: 2, .. }));
    }
}
