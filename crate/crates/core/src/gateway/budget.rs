use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{GatewayError, TokenUsage};

/// Running totals charged against a [`Budget`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSnapshot {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl UsageSnapshot {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn since(&self, earlier: &UsageSnapshot) -> UsageSnapshot {
        UsageSnapshot {
            calls: self.calls - earlier.calls,
            prompt_tokens: self.prompt_tokens - earlier.prompt_tokens,
            completion_tokens: self.completion_tokens - earlier.completion_tokens,
        }
    }
}

/// Call and token ceiling shared by every gateway participating in a run.
///
/// A call is reserved before it is issued, so the call count never exceeds
/// `max_calls`. Tokens are only known after a reply arrives; a call is
/// refused once the token total has reached `max_total_tokens`.
#[derive(Debug)]
pub struct Budget {
    max_calls: u64,
    max_total_tokens: u64,
    used: Mutex<UsageSnapshot>,
}

impl Budget {
    pub fn new(max_calls: u64, max_total_tokens: u64) -> Result<Self, GatewayError> {
        if max_calls == 0 || max_total_tokens == 0 {
            return Err(GatewayError::Config(
                "budget limits must be positive".into(),
            ));
        }
        Ok(Self {
            max_calls,
            max_total_tokens,
            used: Mutex::new(UsageSnapshot::default()),
        })
    }

    pub fn unlimited() -> Self {
        Self {
            max_calls: u64::MAX,
            max_total_tokens: u64::MAX,
            used: Mutex::new(UsageSnapshot::default()),
        }
    }

    pub fn max_calls(&self) -> u64 {
        self.max_calls
    }

    pub fn max_total_tokens(&self) -> u64 {
        self.max_total_tokens
    }

    pub fn snapshot(&self) -> UsageSnapshot {
        *self.used.lock().expect("budget lock poisoned")
    }

    pub fn is_exhausted(&self) -> bool {
        let used = self.snapshot();
        used.calls >= self.max_calls || used.total_tokens() >= self.max_total_tokens
    }

    pub(crate) fn reserve_call(&self) -> Result<(), GatewayError> {
        let mut used = self.used.lock().expect("budget lock poisoned");
        if used.calls >= self.max_calls || used.total_tokens() >= self.max_total_tokens {
            return Err(GatewayError::BudgetExhausted {
                calls: used.calls,
                tokens: used.total_tokens(),
            });
        }
        used.calls += 1;
        Ok(())
    }

    pub(crate) fn record(&self, usage: TokenUsage) {
        let mut used = self.used.lock().expect("budget lock poisoned");
        used.prompt_tokens += usage.prompt_tokens;
        used.completion_tokens += usage.completion_tokens;
    }
}

/// `(calls, tokens)` consumed so far.
pub fn usage_report(budget: &Budget) -> (u64, u64) {
    let used = budget.snapshot();
    (used.calls, used.total_tokens())
}
