//! Deterministic seed derivation for per-block and per-symbol streams.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `(master, domain, index)`; distinct domains never collide in practice.
pub(crate) fn derive(master: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(domain)).wrapping_add(index.wrapping_mul(GOLDEN)))
}

pub(crate) const BITS: u64 = 1;
pub(crate) const NOISE: u64 = 2;
pub(crate) const INIT_G: u64 = 3;
pub(crate) const INIT_D: u64 = 4;
pub(crate) const TRAIN: u64 = 5;
