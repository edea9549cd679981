//! Token buckets, retry with exponential backoff, and per-host politeness.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Blocking token bucket. `acquire` sleeps until a token is available.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    burst: f64,
    state: Mutex<BucketState>,
}

#[derive(Debug)]
struct BucketState {
    tokens: f64,
    last: Instant,
}

impl TokenBucket {
    /// `qps <= 0` disables limiting.
    pub fn new(qps: f64, burst: u32) -> Self {
        let burst = f64::from(burst.max(1));
        Self { rate: qps, burst, state: Mutex::new(BucketState { tokens: burst, last: Instant::now() }) }
    }

    pub fn unlimited() -> Self {
        Self::new(0.0, 1)
    }

    pub fn acquire(&self) {
        if self.rate <= 0.0 || !self.rate.is_finite() {
            return;
        }
        loop {
            let wait = {
                let mut st = self.state.lock().unwrap();
                let now = Instant::now();
                let elapsed = now.duration_since(st.last).as_secs_f64();
                st.tokens = (st.tokens + elapsed * self.rate).min(self.burst);
                st.last = now;
                if st.tokens >= 1.0 {
                    st.tokens -= 1.0;
                    return;
                }
                (1.0 - st.tokens) / self.rate
            };
            thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub initial_backoff: Duration,
    pub multiplier: f64,
    #[serde(with = "millis")]
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
            multiplier: 2.0,
            max_backoff: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn no_wait(max_attempts: u32) -> Self {
        Self { max_attempts, initial_backoff: Duration::ZERO, multiplier: 1.0, max_backoff: Duration::ZERO }
    }

    /// Delay before attempt `n` (1-based; attempt 1 never waits).
    pub fn backoff(&self, attempt: u32) -> Duration {
        if attempt <= 1 {
            return Duration::ZERO;
        }
        let factor = self.multiplier.powi(attempt as i32 - 2);
        let d = self.initial_backoff.as_secs_f64() * factor;
        Duration::from_secs_f64(d.min(self.max_backoff.as_secs_f64()))
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// attempt budget is spent.
    pub fn run<T>(&self, mut op: impl FnMut(u32) -> Result<T>) -> Result<T> {
        let attempts = self.max_attempts.max(1);
        let mut last: Option<Error> = None;
        for attempt in 1..=attempts {
            let delay = self.backoff(attempt);
            if !delay.is_zero() {
                thread::sleep(delay);
            }
            match op(attempt) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() => {
                    log::debug!("attempt {attempt}/{attempts} failed: {e}");
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

/// At most one in-flight request per host, and consecutive request starts to
/// the same host are at least `delay` apart.
#[derive(Debug)]
pub struct HostGate {
    delay: Duration,
    hosts: Mutex<HashMap<String, HostState>>,
    cv: Condvar,
}

#[derive(Debug, Default)]
struct HostState {
    in_flight: bool,
    last_start: Option<Instant>,
}

pub struct HostPermit<'a> {
    gate: &'a HostGate,
    host: String,
}

impl HostGate {
    pub fn new(delay: Duration) -> Self {
        Self { delay, hosts: Mutex::new(HashMap::new()), cv: Condvar::new() }
    }

    pub fn enter(&self, host: &str) -> HostPermit<'_> {
        let mut hosts = self.hosts.lock().unwrap();
        loop {
            let st = hosts.entry(host.to_string()).or_default();
            if !st.in_flight {
                let ready_at = st.last_start.map(|t| t + self.delay);
                let now = Instant::now();
                match ready_at {
                    Some(t) if t > now => {
                        let (guard, _) = self.cv.wait_timeout(hosts, t - now).unwrap();
                        hosts = guard;
                        continue;
                    }
                    _ => {
                        st.in_flight = true;
                        st.last_start = Some(now);
                        return HostPermit { gate: self, host: host.to_string() };
                    }
                }
            }
            hosts = self.cv.wait(hosts).unwrap();
        }
    }
}

impl Drop for HostPermit<'_> {
    fn drop(&mut self) {
        let mut hosts = self.gate.hosts.lock().unwrap();
        if let Some(st) = hosts.get_mut(&self.host) {
            st.in_flight = false;
        }
        self.gate.cv.notify_all();
    }
}

pub(crate) mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}
