//! Seeded randomness. Every stochastic component takes an explicit stream
//! derived from a 64-bit seed so runs reproduce across machines.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere in the crate.
pub type SimRng = ChaCha8Rng;

/// ChaCha8 stream keyed by `seed`. The algorithm is fixed, so streams are
/// identical on every platform.
pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer; used to derive independent child seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for a named sub-stream of `seed`.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    mix64(seed ^ mix64(fnv1a(stream.as_bytes())))
}

/// Child seed for an indexed sub-stream of `seed`.
pub fn derive_indexed(seed: u64, stream: &str, index: u64) -> u64 {
    mix64(derive_seed(seed, stream) ^ mix64(index))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_same_stream() {
        let mut a = seeded_rng(0);
        let mut b = seeded_rng(0);
        for _ in 0..10_000 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn different_seeds_differ() {
        let mut a = seeded_rng(0);
        let mut b = seeded_rng(1);
        let xs: Vec<u64> = (0..100).map(|_| a.random()).collect();
        let ys: Vec<u64> = (0..100).map(|_| b.random()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn derived_streams_are_distinct() {
        assert_ne!(derive_seed(7, "bank"), derive_seed(7, "proposer"));
        assert_ne!(derive_indexed(7, "cond", 0), derive_indexed(7, "cond", 1));
        assert_eq!(derive_indexed(7, "cond", 3), derive_indexed(7, "cond", 3));
    }

    #[test]
    fn reference_values() {
        // Published SplitMix64 and FNV-1a outputs.
        assert_eq!(mix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn golden_stream_for_seed_42() {
        let mut rng = seeded_rng(42);
        let got: Vec<u64> = (0..3).map(|_| rng.random()).collect();
        assert_eq!(got, GOLDEN_42);
        assert_eq!(derive_seed(42, "bank"), GOLDEN_42_BANK);
    }

    const GOLDEN_42: [u64; 3] = [
        12578764544318200737,
        17529487244874322312,
        7886285670807131020,
    ];
    const GOLDEN_42_BANK: u64 = 17178617884950463399;
}
