//! Counter-based random substreams.
//!
//! Every source of randomness in the system is a ChaCha8 stream keyed by
//! `(global seed, purpose, a, b)` written directly into the 256-bit seed.
//! Streams are independent by construction, reproducible from the global
//! seed alone, and need no state to be carried between uses — which is what
//! makes checkpoint resume and cross-thread determinism trivial.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep unrelated substreams disjoint even for equal counters.
pub mod purpose {
    pub const DATASET_AUDIO: u64 = 0x01;
    pub const DATASET_VIDEO: u64 = 0x02;
    pub const EPOCH_SHUFFLE: u64 = 0x10;
    pub const CLIP_PAIR: u64 = 0x11;
    pub const AUGMENT: u64 = 0x12;
    pub const PARAM_INIT: u64 = 0x20;
    pub const PROBE_SHUFFLE: u64 = 0x30;
    pub const PROBE_CLIP: u64 = 0x31;
    pub const PROBE_AUGMENT: u64 = 0x32;
}

/// Derives the substream for `(seed, purpose, a, b)`.
pub fn substream(seed: u64, purpose: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&purpose.to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..32].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Substream for augmenting one clip: keyed by epoch, video, and which of
/// the clip pair (and stream role) is being augmented.
pub fn clip_substream(seed: u64, epoch: u64, video_id: u64, clip_index: u64) -> ChaCha8Rng {
    substream(seed, purpose::AUGMENT ^ (clip_index << 32), epoch, video_id)
}

/// Standard normal draw via Box–Muller.
pub fn randn(rng: &mut impl rand::Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
