//! Hierarchical seed derivation.
//!
//! Every random draw in a run comes from a ChaCha8 stream whose seed is a pure
//! function of the master seed and a path of integer labels:
//!
//! ```text
//! master ──► agent i           derive(master, [AGENT, i])
//!              ├─► init        derive(agent,  [INIT, 0])
//!              └─► step t      derive(agent,  [STEP, t])
//! master ──► eval round q      derive(master, [EVAL, q])
//! master ──► policy init       derive(master, [POLICY_INIT, 0])
//! ```
//!
//! Each label is folded into the running state with the SplitMix64 finalizer,
//! so streams depend only on their path and never on the order in which they
//! are created. That is what makes traces independent of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream used for every stochastic operation.
pub type RngStream = ChaCha8Rng;

pub const AGENT: u64 = 0x6167_656e_74;
pub const INIT: u64 = 0x696e_6974;
pub const STEP: u64 = 0x7374_6570;
pub const EVAL: u64 = 0x6576_616c;
pub const POLICY_INIT: u64 = 0x706f_6c69_6379;
pub const MDP: u64 = 0x6d64_70;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a label path.
pub fn derive(parent: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(parent), |acc, &label| splitmix64(acc ^ splitmix64(label)))
}

/// Opens the stream at `path` below `parent`.
pub fn stream(parent: u64, path: &[u64]) -> RngStream {
    ChaCha8Rng::seed_from_u64(derive(parent, path))
}
