use growamq::hashing::{derive_params, PolyHash};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PAIRS: u64 = 10_000_000;
const FUNCTIONS: u64 = 5;

fn collisions(ell: u32, seed: u64) -> u64 {
    let h = PolyHash::seeded(seed, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc011);
    let mut hits = 0u64;
    let mut done = 0u64;
    while done < PAIRS {
        let x: u32 = rng.gen();
        let y: u32 = rng.gen();
        if x == y {
            continue;
        }
        done += 1;
        hits += (h.top_bits(x as u64, ell) == h.top_bits(y as u64, ell)) as u64;
    }
    hits
}

#[test]
fn pair_collisions_match_two_to_minus_ell() {
    // 10^7 pairs from each of several sampled functions, pooled
    for ell in [8u32, 12, 16, 20] {
        let total = (PAIRS * FUNCTIONS) as f64;
        let p = (-(ell as f64)).exp2();
        let sigma = (p * (1.0 - p) / total).sqrt();
        let hits: u64 = growamq::par::map_indices(FUNCTIONS as usize, |f| collisions(ell, 100 * ell as u64 + f as u64))
            .into_iter()
            .sum();
        let got = hits as f64 / total;
        let lo = p * 0.95 - 3.0 * sigma;
        let hi = p * 1.05 + 3.0 * sigma;
        assert!(got >= lo && got <= hi, "ell {ell}: {got:e} outside [{lo:e}, {hi:e}]");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn prefixes_nest(seed in any::<u64>(), x in any::<u32>(), e in 1u32..10) {
        let p = derive_params((-(e as f64)).exp2(), 32, seed).unwrap();
        for i in 1..32 {
            let a = p.prefix_sig(x as u64, i).unwrap();
            let b = p.prefix_sig(x as u64, i + 1).unwrap();
            prop_assert_eq!(b.len, a.len + 1);
            prop_assert!(a.is_prefix_of(&b));
        }
    }

    #[test]
    fn buffer_predicts_next_prefix(seed in any::<u64>(), x in any::<u32>(), e in 1u32..10) {
        let p = derive_params((-(e as f64)).exp2(), 32, seed).unwrap();
        for i in 1..32 {
            let buf = p.buffer_sig(x as u64, i).unwrap();
            if let Some(bit) = buf.first().bit() {
                let next = p.prefix_sig(x as u64, i + 1).unwrap();
                prop_assert_eq!(next, p.prefix_sig(x as u64, i).unwrap().push(bit));
            }
        }
    }

    #[test]
    fn hashing_is_deterministic(seed in any::<u64>(), x in any::<u64>()) {
        let a = derive_params(0.01, 64, seed).unwrap();
        let b = derive_params(0.01, 64, seed).unwrap();
        prop_assert_eq!(a.full_sig(x), b.full_sig(x));
        let restored = growamq::HashParams::from_bytes(&a.to_bytes()).unwrap();
        prop_assert_eq!(restored.full_sig(x), a.full_sig(x));
    }
}
