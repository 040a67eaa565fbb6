//! Closed-form multiplication counts of the collaborative phase, for a
//! network `Q -> n1 -> n2 -> q -> K` whose extractor is the first three
//! layers.

use super::Method;
use crate::error::{LearnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostArch {
    /// Input width.
    pub q_in: u64,
    pub n1: u64,
    pub n2: u64,
    /// Embedding width.
    pub q: u64,
    pub classes: u64,
}

impl CostArch {
    /// Sizes from a four-layer `[Q, n1, n2, q, K]` list.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        match *sizes {
            [q_in, n1, n2, q, k] => Ok(CostArch {
                q_in: q_in as u64,
                n1: n1 as u64,
                n2: n2 as u64,
                q: q as u64,
                classes: k as u64,
            }),
            _ => Err(LearnError::Config(format!("cost model needs five layer sizes, got {sizes:?}"))),
        }
    }

    fn full(&self) -> u64 {
        self.q_in * self.n1 + self.n1 * self.n2 + self.n2 * self.q + self.q * self.classes
    }
}

/// Secure multiplications for `n` shared samples per party, `p` parties and
/// `t` epochs. Without collaboration there is nothing to cost.
pub fn estimate_cost(arch: &CostArch, n: u64, p: u64, t: u64, method: Method) -> Result<u64> {
    let npt = n * p * t;
    match method {
        Method::Nc => Err(LearnError::Config("the non-collaborative baseline has no secure phase".into())),
        Method::Ctfe => Ok(npt * arch.full()),
        Method::Sfe => Ok(npt * arch.q * arch.classes),
        Method::Ltfe => Ok(npt * (arch.full() + p * arch.q * arch.classes)),
    }
}
