//! Seedable, counter-based random streams.
//!
//! Every stochastic component draws from a ChaCha8 stream whose key and
//! stream id are derived from a master seed and a list of tags such as
//! `(level, set index)`. Streams for distinct tags are independent, and the
//! output for a tag never depends on the order in which streams are created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type Rng = ChaCha8Rng;

/// Stream domain tags, kept distinct so that e.g. the shift and the sample
/// never share a stream.
pub mod tag {
    pub const SAMPLE: u64 = 0x5341_4d50;
    pub const SHIFT: u64 = 0x5348_4946;
    pub const SPLIT: u64 = 0x5350_4c54;
    pub const TRIAL: u64 = 0x5452_4941;
    pub const DIAG: u64 = 0x4449_4147;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream from `seed` and a path of tags.
pub fn substream(seed: u64, tags: &[u64]) -> Rng {
    let mut key = [0u8; 32];
    let mut state = splitmix(seed);
    for &t in tags {
        state = splitmix(state ^ splitmix(t.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    for chunk in key.chunks_mut(8) {
        state = splitmix(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(splitmix(state ^ 0xd1b5_4a32_d192_ed03));
    rng
}
