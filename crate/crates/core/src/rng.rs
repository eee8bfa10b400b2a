//! Seed plumbing. Every stochastic component draws from a ChaCha8 stream
//! keyed by a 64-bit seed so outputs are reproducible across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// One round of the splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed `index` of `seed`. Index 0 maps to the parent seed itself so a
/// single-child derivation reproduces the parent run.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    if index == 0 {
        seed
    } else {
        splitmix64(seed ^ splitmix64(index))
    }
}

/// Independent stream for a named purpose, so e.g. phantom and FOV draws for
/// the same sample never share random numbers.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed).wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
