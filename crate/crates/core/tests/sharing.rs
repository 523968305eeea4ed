mod oracle;

use d2oc::sharing::{half_sum_min, merge_original, merge_proposed, CoverageLedger};
use d2oc::transport::TransportPlan;
use nalgebra::Vector2;
use oracle::checks;
use proptest::prelude::*;

#[test]
fn replayed_histories_keep_the_ordering() {
    for seed in 0..20 {
        let r = checks::replay_history(100 + seed);
        assert!(r.worst_central_over_proposed <= 1e-9, "seed {seed}: {r:?}");
        assert!(r.worst_proposed_over_original <= 1e-9, "seed {seed}: {r:?}");
        assert!(r.worst_negative_delta <= 1e-9, "seed {seed}: {r:?}");
    }
}

/// Ledger for `owner` of 3 agents over 4 samples with the given own progress.
fn ledger(owner: usize, progress: &[f64]) -> CoverageLedger<f64> {
    let beta0 = vec![0.25; 4];
    let mut led = CoverageLedger::new(owner, 3, beta0).unwrap();
    let entries = progress
        .iter()
        .enumerate()
        .filter(|(_, g)| **g > 0.0)
        .map(|(j, g)| (j, *g))
        .collect::<Vec<_>>();
    let alpha = entries.iter().map(|e| e.1).sum();
    led.record_own_progress(&TransportPlan {
        entries,
        target: Vector2::zeros(),
        alpha,
    })
    .unwrap();
    led
}

fn progress() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..0.25f64, 4)
}

proptest! {
    #[test]
    fn proposed_merge_is_commutative(a in progress(), b in progress()) {
        let (mut x1, mut y1) = (ledger(0, &a), ledger(1, &b));
        let (mut x2, mut y2) = (ledger(0, &a), ledger(1, &b));
        merge_proposed(&mut x1, &mut y1).unwrap();
        merge_proposed(&mut y2, &mut x2).unwrap();
        prop_assert_eq!(x1.progress(), y2.progress());
        prop_assert_eq!(x1.beta(), x2.beta());
        prop_assert_eq!(y1.beta(), y2.beta());
    }

    #[test]
    fn proposed_merge_is_idempotent(a in progress(), b in progress()) {
        let (mut x, mut y) = (ledger(0, &a), ledger(1, &b));
        prop_assert!(merge_proposed(&mut x, &mut y).unwrap() || a == b);
        let before = (x.beta().to_vec(), x.progress().to_vec());
        prop_assert!(!merge_proposed(&mut x, &mut y).unwrap());
        prop_assert_eq!(before, (x.beta().to_vec(), x.progress().to_vec()));
    }

    #[test]
    fn proposed_merge_keeps_ledgers_consistent(a in progress(), b in progress(), c in progress()) {
        let (mut x, mut y, mut z) = (ledger(0, &a), ledger(1, &b), ledger(2, &c));
        merge_proposed(&mut x, &mut y).unwrap();
        merge_proposed(&mut y, &mut z).unwrap();
        for led in [&x, &y, &z] {
            prop_assert!(led.consistency_error() <= 1e-15);
            prop_assert!(led.beta().iter().all(|b| *b >= 0.0));
        }
        merge_proposed(&mut x, &mut z).unwrap();
        prop_assert_eq!(x.progress(), z.progress());
        prop_assert_eq!(x.progress(), y.progress());
    }

    #[test]
    fn original_merge_takes_the_minimum(a in progress(), b in progress()) {
        let (mut x, mut y) = (ledger(0, &a), ledger(1, &b));
        let expect: Vec<f64> = x.beta().iter().zip(y.beta()).map(|(p, q)| p.min(*q)).collect();
        merge_original(&mut x, &mut y).unwrap();
        prop_assert_eq!(x.beta(), &expect[..]);
        prop_assert_eq!(y.beta(), &expect[..]);
    }

    #[test]
    fn half_sum_min_is_exact(a in -1e6..1e6f64, b in -1e6..1e6f64) {
        prop_assert_eq!(half_sum_min(a, b), a.min(b));
    }
}
