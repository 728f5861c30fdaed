use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration as StdDuration;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarvestError;

/// Source of "now" plus the ability to wait. Tests use [`SimulatedClock`]
/// so politeness delays cost no wall time.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
    fn sleep_until(&self, t: DateTime<Utc>);

    fn sleep_for(&self, d: Duration) {
        self.sleep_until(self.now() + d);
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn sleep_until(&self, t: DateTime<Utc>) {
        if let Ok(d) = (t - Utc::now()).to_std() {
            std::thread::sleep(d);
        }
    }
}

/// Virtual clock: sleeping advances time instantly.
#[derive(Debug)]
pub struct SimulatedClock {
    now: Mutex<DateTime<Utc>>,
}

impl SimulatedClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        SimulatedClock { now: Mutex::new(start) }
    }

    /// 2026-01-01T00:00:00Z
    pub fn default_epoch() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap()
    }
}

impl Clock for SimulatedClock {
    fn now(&self) -> DateTime<Utc> {
        *self.now.lock().unwrap()
    }

    fn sleep_until(&self, t: DateTime<Utc>) {
        let mut now = self.now.lock().unwrap();
        if t > *now {
            *now = t;
        }
    }
}

pub const DEFAULT_USER_AGENTS: &[&str] = &[
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/124.0 Safari/537.36",
    "Mozilla/5.0 (Macintosh; Intel Mac OS X 14_4) AppleWebKit/605.1.15 (KHTML, like Gecko) Version/17.4 Safari/605.1.15",
    "Mozilla/5.0 (X11; Linux x86_64; rv:125.0) Gecko/20100101 Firefox/125.0",
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64; rv:125.0) Gecko/20100101 Firefox/125.0",
    "Mozilla/5.0 (Macintosh; Intel Mac OS X 14_4) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/124.0 Safari/537.36",
];

/// Request pacing and retry limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FetchPolicy {
    pub min_delay_s: f64,
    pub max_delay_s: f64,
    pub user_agents: Vec<String>,
    pub result_cap: usize,
    pub max_retries: u32,
    pub timeout_s: f64,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        FetchPolicy {
            min_delay_s: 1.5,
            max_delay_s: 4.0,
            user_agents: DEFAULT_USER_AGENTS.iter().map(|s| s.to_string()).collect(),
            result_cap: 100,
            max_retries: 3,
            timeout_s: 30.0,
        }
    }
}

/// Lowest `min_delay_s` accepted without an explicit override.
pub const POLITENESS_FLOOR_S: f64 = 1.0;

impl FetchPolicy {
    /// Rejects a minimum delay under [`POLITENESS_FLOOR_S`] unless `override_floor` is set.
    pub fn check_floor(&self, override_floor: bool) -> Result<(), HarvestError> {
        if self.min_delay_s < POLITENESS_FLOOR_S && !override_floor {
            return Err(HarvestError::Policy(format!(
                "min_delay_s {} is below the {POLITENESS_FLOOR_S} s floor",
                self.min_delay_s
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarvestError> {
        let bad = |m: &str| Err(HarvestError::Policy(m.to_string()));
        if !(self.min_delay_s > 0.0 && self.min_delay_s <= self.max_delay_s) {
            return bad("delays must satisfy 0 < min_delay_s <= max_delay_s");
        }
        if !self.max_delay_s.is_finite() {
            return bad("max_delay_s must be finite");
        }
        if self.result_cap == 0 {
            return bad("result_cap must be positive");
        }
        if self.user_agents.is_empty() || self.user_agents.iter().any(|u| u.trim().is_empty()) {
            return bad("user_agents must be a non-empty list of non-empty strings");
        }
        if self.timeout_s.is_nan() || self.timeout_s <= 0.0 {
            return bad("timeout_s must be positive");
        }
        Ok(())
    }

    pub fn timeout(&self) -> StdDuration {
        StdDuration::from_secs_f64(self.timeout_s)
    }

    /// Wait before retry number `attempt` (1-based): doubles from `max_delay_s`.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let secs = self.max_delay_s * 2f64.powi(attempt.saturating_sub(1).min(16) as i32);
        seconds(secs)
    }
}

/// Whole milliseconds, rounded up so a wait never undershoots.
pub(crate) fn seconds(s: f64) -> Duration {
    Duration::milliseconds((s * 1000.0).ceil() as i64)
}

/// Draws a delay uniformly from `[min_delay_s, max_delay_s]`.
pub fn schedule_delay<R: Rng + ?Sized>(policy: &FetchPolicy, rng: &mut R) -> f64 {
    if policy.min_delay_s == policy.max_delay_s {
        return policy.min_delay_s;
    }
    rng.random_range(policy.min_delay_s..=policy.max_delay_s)
}

/// One granted request slot.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestSlot {
    pub host: String,
    pub start: DateTime<Utc>,
    /// Delay drawn after this request; the next one to `host` waits for it.
    pub delay_s: f64,
    pub user_agent: String,
}

#[derive(Debug)]
struct SchedulerState {
    rng: ChaCha8Rng,
    next_allowed: HashMap<String, DateTime<Utc>>,
    agent_cursor: usize,
    history: Vec<RequestSlot>,
}

/// Per-host pacing and User-Agent rotation.
///
/// Slots for one host are handed out strictly one delay apart; different
/// hosts don't wait on each other. Agents rotate round-robin from a
/// seed-chosen starting offset.
pub struct PoliteScheduler {
    policy: FetchPolicy,
    clock: Arc<dyn Clock>,
    state: Mutex<SchedulerState>,
}

impl std::fmt::Debug for PoliteScheduler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PoliteScheduler").field("policy", &self.policy).finish()
    }
}

impl PoliteScheduler {
    pub fn new(policy: FetchPolicy, clock: Arc<dyn Clock>, seed: u64) -> Result<Self, HarvestError> {
        policy.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent_cursor = rng.random_range(0..policy.user_agents.len());
        Ok(PoliteScheduler {
            policy,
            clock,
            state: Mutex::new(SchedulerState {
                rng,
                next_allowed: HashMap::new(),
                agent_cursor,
                history: Vec::new(),
            }),
        })
    }

    pub fn policy(&self) -> &FetchPolicy {
        &self.policy
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// Reserves the next slot for `host` and waits until it opens.
    pub fn acquire(&self, host: &str) -> RequestSlot {
        let slot = {
            let mut st = self.state.lock().unwrap();
            let now = self.clock.now();
            let start = match st.next_allowed.get(host) {
                Some(&t) if t > now => t,
                _ => now,
            };
            let delay_s = schedule_delay(&self.policy, &mut st.rng);
            st.next_allowed.insert(host.to_string(), start + seconds(delay_s));
            let agents = &self.policy.user_agents;
            let user_agent = agents[st.agent_cursor % agents.len()].clone();
            st.agent_cursor = (st.agent_cursor + 1) % agents.len();
            let slot = RequestSlot {
                host: host.to_string(),
                start,
                delay_s,
                user_agent,
            };
            st.history.push(slot.clone());
            slot
        };
        self.clock.sleep_until(slot.start);
        slot
    }

    pub fn history(&self) -> Vec<RequestSlot> {
        self.state.lock().unwrap().history.clone()
    }

    pub fn request_count(&self) -> usize {
        self.state.lock().unwrap().history.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_needs_explicit_override() {
        let mut p = FetchPolicy::default();
        assert!(p.check_floor(false).is_ok());
        p.min_delay_s = 0.5;
        assert!(p.check_floor(false).is_err());
        assert!(p.check_floor(true).is_ok());
    }

    fn sim() -> Arc<dyn Clock> {
        Arc::new(SimulatedClock::new(SimulatedClock::default_epoch()))
    }

    #[test]
    fn delays_stay_in_range() {
        let p = FetchPolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let d = schedule_delay(&p, &mut rng);
            assert!((1.5..=4.0).contains(&d));
        }
    }

    #[test]
    fn degenerate_interval() {
        let p = FetchPolicy {
            min_delay_s: 2.0,
            max_delay_s: 2.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(schedule_delay(&p, &mut rng), 2.0);
    }

    #[test]
    fn seeded_mean_is_near_midpoint() {
        let p = FetchPolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mean: f64 = (0..1000).map(|_| schedule_delay(&p, &mut rng)).sum::<f64>() / 1000.0;
        assert!((2.6..=2.9).contains(&mean), "mean {mean}");
    }

    #[test]
    fn same_seed_same_sequence() {
        let p = FetchPolicy::default();
        let a: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(7);
            (0..20).map(|_| schedule_delay(&p, &mut r)).collect()
        };
        let b: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(7);
            (0..20).map(|_| schedule_delay(&p, &mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_policies() {
        let bad = [
            FetchPolicy {
                min_delay_s: 0.0,
                ..Default::default()
            },
            FetchPolicy {
                min_delay_s: 5.0,
                ..Default::default()
            },
            FetchPolicy {
                result_cap: 0,
                ..Default::default()
            },
            FetchPolicy {
                user_agents: vec![],
                ..Default::default()
            },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn same_host_gap_and_other_hosts_free() {
        let clock = sim();
        let s = PoliteScheduler::new(FetchPolicy::default(), clock.clone(), 3).unwrap();
        let a1 = s.acquire("a.com");
        let b1 = s.acquire("b.com");
        assert_eq!(a1.start, b1.start);
        let a2 = s.acquire("a.com");
        assert!(a2.start - a1.start >= Duration::milliseconds(1500));
        assert_eq!(clock.now(), a2.start);
    }

    #[test]
    fn agents_rotate_through_all() {
        let s = PoliteScheduler::new(FetchPolicy::default(), sim(), 11).unwrap();
        let n = s.policy().user_agents.len();
        let used: std::collections::HashSet<String> = (0..n).map(|_| s.acquire("h").user_agent).collect();
        assert_eq!(used.len(), n);
    }

    #[test]
    fn backoff_doubles_from_max_delay() {
        let p = FetchPolicy::default();
        assert_eq!(p.backoff(1), Duration::milliseconds(4000));
        assert_eq!(p.backoff(3), Duration::milliseconds(16000));
    }
}
