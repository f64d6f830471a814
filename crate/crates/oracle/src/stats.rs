//! Batch replays of the streaming statistics.
//!
//! `avg` and `var` follow the integer recurrences
//!
//! ```text
//! mean' = mean + trunc((x - mean) / (n + 1))
//! var'  = var  + trunc(((x - mean)^2 - var) / (n + 1))     (old mean)
//! ```
//!
//! evaluated in wide signed arithmetic. `ewma` is the closed form of the
//! shift-decayed sum, `floor(sum_k x_k * 2^-(t_n - t_k))`, evaluated exactly.

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: i128,
    pub var: i128,
    pub total: i128,
}

fn trunc_div(num: i128, den: i128) -> i128 {
    // Rust's `/` on integers already truncates toward zero.
    num / den
}

/// Replays the recurrences over `samples` from an empty accumulator.
pub fn replay(samples: &[u64]) -> Moments {
    let mut m = Moments::default();
    for &x in samples {
        let x = x as i128;
        let n = m.count as i128 + 1;
        let dev = x - m.mean;
        let mean = m.mean + trunc_div(dev, n);
        let var = m.var + trunc_div(dev * dev - m.var, n);
        m = Moments {
            count: m.count + 1,
            mean,
            var,
            total: m.total + x,
        };
    }
    m
}

/// Exact arithmetic mean as (numerator, denominator).
pub fn exact_mean(samples: &[u64]) -> (i128, i128) {
    (samples.iter().map(|&x| x as i128).sum(), samples.len() as i128)
}

/// Whether `approx` lies within `slack` of the exact mean of `samples`.
pub fn within_of_mean(samples: &[u64], approx: i128, slack: i128) -> bool {
    let (s, n) = exact_mean(samples);
    if n == 0 {
        return approx == 0;
    }
    // |approx - s/n| <= slack  <=>  |approx*n - s| <= slack*n
    (approx * n - s).abs() <= slack * n
}

/// One `(timestamp, sample)` observation for the decayed sum.
pub type Event = (u64, u64);

/// Value of the decayed sum after `events`, starting from `acc0` stamped at
/// `t0`. Timestamps must be non-decreasing and not before `t0`, and the sum
/// must stay below 2^32 (the engine register wraps, this model does not).
///
/// A gap of 32 or more ticks shifts any 32-bit history to zero, after which
/// the earlier terms cannot change a floor: the sum restarts there, which
/// keeps the exact integers small.
pub fn ewma(t0: u64, acc0: u64, events: &[Event]) -> u64 {
    let mut terms: Vec<Event> = vec![(t0, acc0)];
    for &(t, x) in events {
        let last = terms.last().expect("non-empty").0;
        assert!(t >= last, "events must be time-ordered");
        if t - last >= 32 {
            terms.clear();
        }
        terms.push((t, x));
    }
    let start = terms[0].0;
    let end = terms.last().expect("non-empty").0;
    let mut sum = BigUint::from(0u32);
    for &(t, x) in &terms {
        sum += BigUint::from(x) << (t - start) as usize;
    }
    let value: BigUint = sum >> (end - start) as usize;
    u64::try_from(value).expect("decayed sum fits in 64 bits")
}
