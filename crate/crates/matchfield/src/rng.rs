//! Deterministic random-number streams.
//!
//! One master seed spawns an independent ChaCha stream per
//! (replication, period, sub-step). Runs are therefore reproducible
//! regardless of how replications are scheduled across threads, and a
//! single sub-step can be replayed in isolation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Sub-step tags keying the per-period streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Init,
    Mutation,
    Matching,
    Breakup,
    EnvironmentPath,
    AgentPath,
}

impl StreamKind {
    fn tag(self) -> u64 {
        match self {
            StreamKind::Init => 1,
            StreamKind::Mutation => 2,
            StreamKind::Matching => 3,
            StreamKind::Breakup => 4,
            StreamKind::EnvironmentPath => 5,
            StreamKind::AgentPath => 6,
        }
    }
}

/// splitmix64 finalizer; decorrelates the stream key components.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the generator for one (replication, period, sub-step) cell.
pub fn substream(master_seed: u64, replication: u64, period: u64, kind: StreamKind) -> ChaCha8Rng {
    let mut state = mix(master_seed);
    state = mix(state ^ mix(replication.wrapping_add(0x517c_c1b7_2722_0a95)));
    state = mix(state ^ mix(period.wrapping_add(0x6c62_272e_07bb_0142)));
    state = mix(state ^ mix(kind.tag()));

    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        state = mix(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Sample an index from a cumulative weight row: the first position whose
/// cumulative weight exceeds `u`. Falls back to the last positive-weight
/// entry when rounding leaves the total slightly below `u`.
pub fn sample_from_cumulative(cumulative: &[f64], u: f64) -> usize {
    let idx = cumulative.partition_point(|&c| c <= u);
    if idx < cumulative.len() {
        idx
    } else {
        cumulative.len() - 1
    }
}

/// Build the cumulative sums of a weight row.
pub fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}
