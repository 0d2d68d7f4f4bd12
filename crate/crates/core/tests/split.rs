use std::collections::BTreeSet;

use proptest::prelude::*;

use privstory_core::export::SplitSpec;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("app{}/doc{i}.md", i % 4)).collect()
}

proptest! {
    #[test]
    fn seeded_split_partitions(n in 1usize..40, frac in 0.0..1.0f64, seed in any::<u64>()) {
        let all = ids(n);
        let k = ((n as f64) * frac) as usize;
        let spec = SplitSpec::Seeded { heldout_count: k, seed };
        let s = spec.resolve(&all).unwrap();
        prop_assert_eq!(s.heldout.len(), k);
        prop_assert_eq!(s.train.len(), n - k);
        let union: BTreeSet<&String> = s.train.iter().chain(&s.heldout).collect();
        prop_assert_eq!(union.len(), n);
        // same seed, same split, whatever the input order
        let mut rev = all.clone();
        rev.reverse();
        prop_assert_eq!(spec.resolve(&rev).unwrap(), s);
    }
}

#[test]
fn oversized_and_unknown_splits_are_rejected() {
    let all = ids(5);
    assert!(SplitSpec::Seeded { heldout_count: 6, seed: 1 }.resolve(&all).is_err());
    let explicit = SplitSpec::Explicit {
        heldout: vec!["nope.md".into()],
        train: None,
    };
    assert!(explicit.resolve(&all).is_err());
    let overlap = SplitSpec::Explicit {
        heldout: vec![all[0].clone()],
        train: Some(vec![all[0].clone()]),
    };
    assert!(overlap.resolve(&all).is_err());
}

#[test]
fn explicit_split_defaults_train_to_the_rest() {
    let all = ids(4);
    let s = SplitSpec::Explicit {
        heldout: vec![all[1].clone()],
        train: None,
    }
    .resolve(&all)
    .unwrap();
    assert_eq!(s.heldout, vec![all[1].clone()]);
    assert_eq!(s.train.len(), 3);
}
