//! Counter-based random streams.
//!
//! Every random draw comes from a ChaCha8 keystream selected by
//! `(seed, stream, index)`: the seed and a stream tag form the key, the index
//! picks the ChaCha stream. A scene or network can therefore be generated on
//! any thread, in any order, with the same result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Scene layouts.
    Scenes,
    /// Feature noise.
    Noise,
    /// Parameter initialization.
    Init,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Scenes => u64::from_le_bytes(*b"scenes\0\0"),
            Stream::Noise => u64::from_le_bytes(*b"noise\0\0\0"),
            Stream::Init => u64::from_le_bytes(*b"init\0\0\0\0"),
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.tag().to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
