use proptest::prelude::*;
use reid_core::RngStream;

#[test]
fn matches_reference_outputs() {
    let text = include_str!("data/splitmix64_golden.txt");
    let mut checked = 0;
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let (head, values) = line.split_once(':').unwrap();
        let seed: u64 = head.trim_start_matches("seed ").parse().unwrap();
        let mut rng = RngStream::new(seed);
        for v in values.split_whitespace() {
            assert_eq!(rng.next(), u64::from_str_radix(v, 16).unwrap(), "seed {seed}");
            checked += 1;
        }
    }
    assert_eq!(checked, 30);
}

#[test]
fn child_streams_are_reproducible() {
    let mut a = RngStream::new(5);
    let mut b = RngStream::new(5);
    let (mut ca, mut cb) = (a.child(), b.child());
    assert_eq!(ca.next(), cb.next());
    assert_eq!(a.next(), b.next());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shuffle_is_a_permutation(seed in any::<u64>(), n in 1usize..10_000) {
        let mut p = RngStream::new(seed).shuffle(n).unwrap();
        let again = RngStream::new(seed).shuffle(n).unwrap();
        prop_assert_eq!(&p, &again);
        p.sort_unstable();
        prop_assert!(p.iter().enumerate().all(|(i, &v)| i == v));
    }

    #[test]
    fn below_stays_in_range(seed in any::<u64>(), k in 1u64..1_000_000) {
        let mut rng = RngStream::new(seed);
        for _ in 0..100 {
            prop_assert!(rng.below(k) < k);
        }
    }

    #[test]
    fn uniform_in_unit_interval(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        for _ in 0..100 {
            let u = rng.uniform();
            prop_assert!((0.0..1.0).contains(&u));
        }
    }
}
