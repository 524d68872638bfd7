//! Spray-walk parameters and the rank bound they imply.
//!
//! A spray starts at the head sentinel on level `H = height_scale * ceil(log2 p)`
//! and, on every level from `H` down to 0, moves forward a uniformly drawn
//! number of steps in `0..=W` where `W = walk_scale * ceil(log2 p)`. The node it
//! lands on (or the head's successor, if it never moved) is the candidate.
//!
//! # Rank bound
//!
//! A step on level `j` passes a `Geometric(2^-j)` number of bottom-level nodes,
//! because node heights are geometric with ratio 1/2. The landing position is
//! therefore stochastically dominated by
//!
//! ```text
//! T = sum over j in 0..=H of (sum of W independent Geometric(2^-j))
//! ```
//!
//! [`SprayParams::rank_bound`] returns the smallest `R >= 1` with
//! `P(T > R) <= RANK_BOUND_TAIL`, computed exactly by convolving the step
//! distributions. In a quiescent queue every sprayed rank is `<= R` except
//! with probability at most [`RANK_BOUND_TAIL`] per call.
//!
//! The walk counts deleted nodes that are still linked as positions, and the
//! claim takes the first live node at or after the landing node, so the rank
//! is at most the landing position. This is why claimed nodes are not
//! unlinked on the spot: the walk lands on tall nodes more often than short
//! ones, and removing them would leave a front made of short nodes that each
//! step skips in bulk.
//!
//! | p | H | W | R(p) |
//! |---|---|---|------|
//! | 1 | 0 | 0 | 1 |
//! | 2 | 1 | 1 | 41 |
//! | 4 | 2 | 2 | 116 |
//! | 8 | 3 | 3 | 281 |
//! | 16 | 4 | 4 | 643 |

/// Per-call tail probability allowed by [`SprayParams::rank_bound`].
pub const RANK_BOUND_TAIL: f64 = 1e-12;

/// Parameters of the relaxed (spray) deleteMin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SprayParams {
    /// Thread-count hint `p`, at least 1.
    pub threads: usize,
    /// Multiplier on `ceil(log2 p)` for the starting level.
    pub height_scale: usize,
    /// Multiplier on `ceil(log2 p)` for the per-level walk length.
    pub walk_scale: usize,
}

impl Default for SprayParams {
    fn default() -> Self {
        Self::new(1)
    }
}

pub(crate) fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

impl SprayParams {
    pub fn new(threads: usize) -> Self {
        Self {
            threads: threads.max(1),
            height_scale: 1,
            walk_scale: 1,
        }
    }

    pub fn start_height(&self) -> usize {
        self.height_scale * ceil_log2(self.threads)
    }

    pub fn max_walk(&self) -> usize {
        self.walk_scale * ceil_log2(self.threads)
    }

    /// Documented rank bound `R(p)`; see the module docs.
    pub fn rank_bound(&self) -> usize {
        rank_bound(self.start_height(), self.max_walk(), RANK_BOUND_TAIL)
    }
}

/// Smallest `R >= 1` with `P(T > R) <= tail` for the dominating walk `T`.
pub fn rank_bound(height: usize, walk: usize, tail: f64) -> usize {
    if walk == 0 {
        return 1;
    }
    let height = height.min(40);
    // Enough room for the slowest geometric to lose all but ~1e-15 of its mass.
    let cap = (walk + 1) * (1usize << height) * 64 + 64;
    let mut pmf = vec![0.0f64; cap + 1];
    pmf[0] = 1.0;
    for level in 0..=height {
        let q = 0.5f64.powi(level as i32);
        for _ in 0..walk {
            // Convolution with Geometric(q) on {1, 2, ...}:
            // out[k] = q * in[k-1] + (1-q) * out[k-1]
            let mut prev_out = 0.0;
            let mut prev_in = pmf[0];
            pmf[0] = 0.0;
            for slot in &mut pmf[1..] {
                let cur_in = *slot;
                let out = q * prev_in + (1.0 - q) * prev_out;
                *slot = out;
                prev_out = out;
                prev_in = cur_in;
            }
        }
    }
    let kept: f64 = pmf.iter().sum();
    let mut beyond = (1.0 - kept).max(0.0);
    let mut r = cap;
    while r > 0 && beyond + pmf[r] <= tail {
        beyond += pmf[r];
        r -= 1;
    }
    r.max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log2_ceiling() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(8), 3);
        assert_eq!(ceil_log2(9), 4);
    }

    #[test]
    fn single_thread_is_exact() {
        let p = SprayParams::new(1);
        assert_eq!(p.start_height(), 0);
        assert_eq!(p.max_walk(), 0);
        assert_eq!(p.rank_bound(), 1);
    }

    #[test]
    fn documented_bounds() {
        let got: Vec<usize> = [1, 2, 4, 8, 16]
            .iter()
            .map(|&p| SprayParams::new(p).rank_bound())
            .collect();
        assert_eq!(got, vec![1, 41, 116, 281, 643]);
    }

    #[test]
    fn two_thread_bound_matches_closed_form() {
        // H = 1, W = 1: T = 1 + Geometric(1/2), so P(T > R) = 2^-(R-1).
        let r = SprayParams::new(2).rank_bound();
        assert!(0.5f64.powi(r as i32 - 1) <= RANK_BOUND_TAIL);
        assert!(0.5f64.powi(r as i32 - 2) > RANK_BOUND_TAIL);
    }

    #[test]
    fn bound_grows_with_threads() {
        let mut last = 0;
        for p in [1, 2, 4, 8, 16, 32] {
            let r = SprayParams::new(p).rank_bound();
            assert!(r > last || p == 1);
            last = r;
        }
    }
}
