//! Deterministic random streams.
//!
//! Every stochastic draw in a simulation comes from a ChaCha stream keyed by
//! `(master seed, SNR index, trial index)` and selected by a [`Role`], so a
//! trial's outcome does not depend on which worker ran it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Channel,
    Noise,
    EstimationError,
    Payload,
    /// Private stream of sampler `p`.
    Sampler(usize),
}

impl Role {
    fn stream_id(self) -> u64 {
        match self {
            Role::Channel => 0,
            Role::Noise => 1,
            Role::EstimationError => 2,
            Role::Payload => 3,
            Role::Sampler(p) => 16 + p as u64,
        }
    }
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key identifying one trial's family of streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master_seed: u64,
    pub snr_index: u64,
    pub trial: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64, snr_index: u64, trial: u64) -> Self {
        Self {
            master_seed,
            snr_index,
            trial,
        }
    }

    /// Shorthand for library callers that only have a seed.
    pub fn from_seed(seed: u64) -> Self {
        Self::new(seed, 0, 0)
    }

    fn seed_bytes(&self) -> [u8; 32] {
        let mut state = self.master_seed;
        let mut out = [0u8; 32];
        let words = [
            splitmix64(&mut state) ^ self.snr_index.rotate_left(17),
            splitmix64(&mut state) ^ self.trial,
            splitmix64(&mut state) ^ self.trial.rotate_left(32),
            splitmix64(&mut state),
        ];
        // A second mixing round so nearby trial indices land far apart.
        let mut mix = words[0] ^ words[1].rotate_left(7) ^ words[2].rotate_left(41);
        for (chunk, w) in out.chunks_exact_mut(8).zip(words) {
            let v = w ^ splitmix64(&mut mix);
            chunk.copy_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Stream for `role`.
    pub fn stream(&self, role: Role) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed_bytes());
        rng.set_stream(role.stream_id());
        rng
    }

    /// Private streams for `count` samplers.
    pub fn sampler_streams(&self, count: usize) -> Vec<ChaCha8Rng> {
        (0..count).map(|p| self.stream(Role::Sampler(p))).collect()
    }
}
