//! Retry backoff and request pacing for the description service.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Bounded exponential backoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, initial_backoff_ms: 500, max_backoff_ms: 8_000, multiplier: 2.0 }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(retry as i32);
        Duration::from_millis(ms.min(self.max_backoff_ms as f64) as u64)
    }
}

struct Bucket {
    tokens: f64,
    last: Instant,
}

/// Caps concurrent requests and paces them with a token bucket.
pub struct RateLimiter {
    max_in_flight: usize,
    in_flight: Mutex<usize>,
    released: Condvar,
    rate_per_sec: f64,
    burst: f64,
    bucket: Mutex<Bucket>,
}

/// Holds one in-flight slot until dropped.
pub struct Permit<'a> {
    limiter: &'a RateLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.limiter.released.notify_one();
    }
}

impl RateLimiter {
    /// `rate_per_sec <= 0` disables pacing.
    pub fn new(max_in_flight: usize, rate_per_sec: f64, burst: usize) -> Self {
        let burst = burst.max(1) as f64;
        RateLimiter {
            max_in_flight: max_in_flight.max(1),
            in_flight: Mutex::new(0),
            released: Condvar::new(),
            rate_per_sec,
            burst,
            bucket: Mutex::new(Bucket { tokens: burst, last: Instant::now() }),
        }
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Blocks until a slot and a token are both available.
    pub fn acquire(&self) -> Permit<'_> {
        {
            let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
            while *n >= self.max_in_flight {
                n = self.released.wait(n).unwrap_or_else(|e| e.into_inner());
            }
            *n += 1;
        }
        let permit = Permit { limiter: self };
        if self.rate_per_sec > 0.0 {
            loop {
                let wait = {
                    let mut b = self.bucket.lock().unwrap_or_else(|e| e.into_inner());
                    let now = Instant::now();
                    let refill = now.duration_since(b.last).as_secs_f64() * self.rate_per_sec;
                    b.tokens = (b.tokens + refill).min(self.burst);
                    b.last = now;
                    if b.tokens >= 1.0 {
                        b.tokens -= 1.0;
                        None
                    } else {
                        Some(Duration::from_secs_f64((1.0 - b.tokens) / self.rate_per_sec))
                    }
                };
                match wait {
                    None => break,
                    Some(d) => std::thread::sleep(d),
                }
            }
        }
        permit
    }
}
