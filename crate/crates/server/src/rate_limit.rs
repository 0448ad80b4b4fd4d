use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use factcheck_core::UserId;

/// Sliding one-minute window per user.
pub struct RateLimiter {
    per_minute: u32,
    window: Duration,
    hits: Mutex<HashMap<UserId, VecDeque<Instant>>>,
}

impl RateLimiter {
    pub fn per_minute(limit: u32) -> Self {
        Self {
            per_minute: limit,
            window: Duration::from_secs(60),
            hits: Mutex::new(HashMap::new()),
        }
    }

    /// Records a hit, or returns how long until the next one is allowed.
    pub fn check(&self, user: UserId, now: Instant) -> Result<(), Duration> {
        let mut hits = self.hits.lock().unwrap_or_else(|e| e.into_inner());
        let queue = hits.entry(user).or_default();
        while queue.front().is_some_and(|t| now.saturating_duration_since(*t) >= self.window) {
            queue.pop_front();
        }
        if queue.len() as u32 >= self.per_minute {
            let oldest = *queue.front().expect("non-empty at limit");
            return Err(self.window.saturating_sub(now.saturating_duration_since(oldest)));
        }
        queue.push_back(now);
        Ok(())
    }
}
