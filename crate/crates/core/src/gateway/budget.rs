use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub max_calls: u64,
    pub max_tokens: u64,
    pub spent_calls: u64,
    pub spent_tokens: u64,
}

impl BudgetLedger {
    pub fn remaining_calls(&self) -> u64 {
        self.max_calls - self.spent_calls
    }

    pub fn remaining_tokens(&self) -> u64 {
        self.max_tokens - self.spent_tokens
    }
}

/// Call and token allowance shared by all invocations of a run. Spending is
/// reserved up front under a lock, so `spent <= max` holds at every instant.
#[derive(Debug)]
pub struct Budget {
    ledger: Mutex<BudgetLedger>,
}

impl Budget {
    pub fn new(max_calls: u64, max_tokens: u64) -> Self {
        Budget::from_ledger(BudgetLedger {
            max_calls,
            max_tokens,
            spent_calls: 0,
            spent_tokens: 0,
        })
    }

    pub fn unlimited() -> Self {
        Budget::new(u64::MAX, u64::MAX)
    }

    pub fn from_ledger(ledger: BudgetLedger) -> Self {
        Budget {
            ledger: Mutex::new(ledger),
        }
    }

    pub fn ledger(&self) -> BudgetLedger {
        *self.ledger.lock().expect("budget lock poisoned")
    }

    pub fn restore(&self, ledger: BudgetLedger) {
        *self.ledger.lock().expect("budget lock poisoned") = ledger;
    }

    /// Takes one call and `tokens` tokens, or refuses without spending.
    pub fn reserve(&self, tokens: u64) -> Result<(), GatewayError> {
        let mut l = self.ledger.lock().expect("budget lock poisoned");
        if l.spent_calls >= l.max_calls {
            return Err(GatewayError::BudgetExhausted {
                resource: "calls".into(),
                limit: l.max_calls,
                spent: l.spent_calls,
            });
        }
        if tokens > l.max_tokens - l.spent_tokens {
            return Err(GatewayError::BudgetExhausted {
                resource: "tokens".into(),
                limit: l.max_tokens,
                spent: l.spent_tokens,
            });
        }
        l.spent_calls += 1;
        l.spent_tokens += tokens;
        Ok(())
    }

    pub(crate) fn refund(&self, tokens: u64) {
        let mut l = self.ledger.lock().expect("budget lock poisoned");
        l.spent_tokens = l.spent_tokens.saturating_sub(tokens);
    }
}
