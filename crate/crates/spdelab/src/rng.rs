//! Counter-style random streams.
//!
//! Every Monte-Carlo draw in the crate comes from a ChaCha8 generator whose key
//! is derived from `(seed, domain)` and whose 64-bit stream id is the draw
//! index. Draws are therefore reproducible regardless of thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Domain tags separating independent uses of the same user seed.
pub mod domain {
    pub const PATHS: u64 = 1;
    pub const WIENER_EXACT: u64 = 2;
    pub const SKOROHOD: u64 = 3;
    pub const MODEWISE: u64 = 4;
    pub const TEST_FUNCTIONS: u64 = 5;
    pub const R2_CHECK: u64 = 6;
    pub const RANDOM_WALK: u64 = 7;
    pub const BATTERY: u64 = 8;
}

/// Generator for substream `index` of `domain` under `seed`.
pub fn substream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let key = seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Stream index for the pair (sample, component).
pub fn pair_index(sample: usize, component: usize) -> u64 {
    ((sample as u64) << 20) | (component as u64 & 0xF_FFFF)
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn fill_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}
