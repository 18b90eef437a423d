use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a base seed with stream tags so independent draws never share a stream.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ 0x5851_f42d_4c95_7f2d);
    for &t in tags {
        h = splitmix(h ^ t.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    h
}

pub fn rng_for(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
