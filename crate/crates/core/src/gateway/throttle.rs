use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

/// Bounds in-flight requests and the token volume sent per window.
#[derive(Debug)]
pub struct Throttle {
    max_in_flight: usize,
    in_flight: Mutex<usize>,
    released: Condvar,
    token_budget: Option<u64>,
    window: Duration,
    spent: Mutex<(Instant, u64)>,
}

pub struct Permit<'a> {
    throttle: &'a Throttle,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.throttle.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.throttle.released.notify_one();
    }
}

impl Throttle {
    /// `tokens_per_minute = None` disables the token budget.
    pub fn new(max_in_flight: usize, tokens_per_minute: Option<u64>) -> Self {
        Self::with_window(max_in_flight, tokens_per_minute, Duration::from_secs(60))
    }

    pub fn with_window(max_in_flight: usize, token_budget: Option<u64>, window: Duration) -> Self {
        Self {
            max_in_flight: max_in_flight.max(1),
            in_flight: Mutex::new(0),
            released: Condvar::new(),
            token_budget,
            window,
            spent: Mutex::new((Instant::now(), 0)),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(usize::MAX, None)
    }

    /// Block until a slot is free and `tokens` fit in the current window.
    pub fn acquire(&self, tokens: u64) -> Permit<'_> {
        self.wait_for_budget(tokens);
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max_in_flight {
            n = self.released.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit { throttle: self }
    }

    fn wait_for_budget(&self, tokens: u64) {
        let Some(budget) = self.token_budget else {
            return;
        };
        loop {
            let sleep_for = {
                let mut spent = self.spent.lock().unwrap_or_else(|e| e.into_inner());
                let elapsed = spent.0.elapsed();
                if elapsed >= self.window {
                    *spent = (Instant::now(), 0);
                }
                // a single oversized request still goes through in an empty window
                if spent.1 == 0 || spent.1 + tokens <= budget {
                    spent.1 += tokens;
                    return;
                }
                self.window.saturating_sub(spent.0.elapsed())
            };
            std::thread::sleep(sleep_for.max(Duration::from_millis(1)));
        }
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Rough token estimate for budgeting: four characters per token.
pub(crate) fn estimate_tokens(text: &str, max_output_tokens: u32) -> u64 {
    (text.chars().count() as u64).div_ceil(4) + u64::from(max_output_tokens)
}
