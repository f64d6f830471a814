//! Single-rate token bucket, counter formulation, and the rate bound its
//! output must satisfy.

use serde::{Deserialize, Serialize};

/// Credit is kept in ticks: one token is worth `q` ticks, a full bucket
/// `b * q`. Integer ticks make the fractional refill exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBucket {
    pub burst: u64,
    pub period: u64,
    credit: u64,
    last: Option<u64>,
}

impl TokenBucket {
    /// Starts full.
    pub fn new(burst: u64, period: u64) -> Self {
        assert!(burst >= 1 && period >= 1, "burst and period must be positive");
        TokenBucket {
            burst,
            period,
            credit: burst * period,
            last: None,
        }
    }

    pub fn tokens(&self) -> f64 {
        self.credit as f64 / self.period as f64
    }

    /// Returns true when the arrival conforms (is forwarded).
    pub fn arrive(&mut self, t: u64) -> bool {
        if let Some(last) = self.last {
            assert!(t >= last, "arrivals must be sorted");
            self.credit = (self.credit + (t - last)).min(self.burst * self.period);
        }
        self.last = Some(t);
        if self.credit >= self.period {
            self.credit -= self.period;
            true
        } else {
            false
        }
    }
}

/// Forward/drop decision for each arrival of a single flow.
pub fn token_bucket(burst: u64, period: u64, arrivals: &[u64]) -> Vec<bool> {
    let mut tb = TokenBucket::new(burst, period);
    arrivals.iter().map(|&t| tb.arrive(t)).collect()
}

/// The first window that breaks "at most `burst + floor(T / period)`
/// forwarded packets in any window of length T", as (first, last) indices
/// into `forwarded`, which must be sorted.
///
/// With `a_k = k*period - t_k`, packets i..=j break the bound exactly when
/// `a_j - a_i > (burst - 1) * period`, so one pass with a running minimum
/// suffices.
pub fn rate_bound_violation(burst: u64, period: u64, forwarded: &[u64]) -> Option<(usize, usize)> {
    let limit = (burst as i128 - 1) * period as i128;
    let mut min: Option<(i128, usize)> = None;
    for (k, &t) in forwarded.iter().enumerate() {
        let a = k as i128 * period as i128 - t as i128;
        let (m, i) = match min {
            Some((m, i)) if m <= a => (m, i),
            _ => (a, k),
        };
        min = Some((m, i));
        if a - m > limit {
            return Some((i, k));
        }
    }
    None
}

/// Quadratic check of the same bound, counting every window directly.
pub fn rate_bound_violation_naive(burst: u64, period: u64, forwarded: &[u64]) -> Option<(usize, usize)> {
    for i in 0..forwarded.len() {
        for j in i..forwarded.len() {
            let span = forwarded[j] - forwarded[i];
            if (j - i + 1) as u64 > burst + span / period {
                return Some((i, j));
            }
        }
    }
    None
}
