//! Keyed random streams.
//!
//! Every consumer of randomness derives its generator from a `(seed, purpose,
//! epoch)` key plus a stream index, so trajectories can be sampled in any
//! order or on any worker and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Dataset = 2,
    Pretrain = 3,
    Rollout = 4,
    Shuffle = 5,
    Validation = 6,
    Probe = 7,
    Check = 8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub purpose: Purpose,
    pub epoch: u64,
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose, epoch: u64) -> Self {
        Self {
            seed,
            purpose,
            epoch,
        }
    }

    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut bytes = [0u8; 32];
        bytes[..8].copy_from_slice(&splitmix(self.seed).to_le_bytes());
        bytes[8..16].copy_from_slice(&splitmix(self.purpose as u64 ^ 0x5eed).to_le_bytes());
        bytes[16..24].copy_from_slice(&splitmix(self.epoch.wrapping_add(0x9e37)).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(bytes);
        rng.set_stream(index);
        rng
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
