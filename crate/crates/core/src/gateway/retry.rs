//! Retry with exponential backoff and jitter.

use std::time::Duration;

use rand::Rng;

use super::GatewayError;

const BASE_DELAY: Duration = Duration::from_millis(250);
const MAX_DELAY: Duration = Duration::from_secs(8);

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl RetryPolicy {
    pub fn new(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: BASE_DELAY,
            max_delay: MAX_DELAY,
        }
    }

    /// Policy that never sleeps; for tests.
    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    fn delay(&self, attempt: u32) -> Duration {
        let exp = self
            .base_delay
            .saturating_mul(2u32.saturating_pow(attempt.saturating_sub(1)))
            .min(self.max_delay);
        // Jitter in [0.5, 1.5) of the exponential delay.
        let factor = 0.5 + rand::rng().random::<f64>();
        exp.mul_f64(factor)
    }
}

/// A single attempt: `Err((error, retryable))`.
pub type Attempt<T> = Result<T, (GatewayError, bool)>;

/// Run `op` up to `max_retries + 1` times, sleeping between attempts.
/// Non-retryable errors propagate immediately. The attempt count is
/// reported inside transport errors.
pub fn run_with_retries<T>(
    policy: &RetryPolicy,
    mut op: impl FnMut() -> Attempt<T>,
) -> Result<T, GatewayError> {
    let attempts = policy.max_retries + 1;
    let mut last = None;
    for attempt in 1..=attempts {
        match op() {
            Ok(value) => return Ok(value),
            Err((error, retryable)) => {
                if !retryable {
                    return Err(error);
                }
                last = Some(error);
                if attempt < attempts {
                    std::thread::sleep(policy.delay(attempt));
                }
            }
        }
    }
    Err(match last.unwrap() {
        GatewayError::Transport { message, .. } => GatewayError::Transport { attempts, message },
        other => other,
    })
}
