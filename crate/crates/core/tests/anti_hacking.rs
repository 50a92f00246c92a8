mod support;

use proptest::prelude::*;
use structreward::matcher::UnitType;
use support::{reward_hack_case, HackOutcome, Injection};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn injected_units_never_raise_the_score(
        seed in 0u64..100_000,
        t in prop::sample::select(UnitType::ALL.to_vec()),
        how in prop::sample::select(vec![Injection::Duplicate, Injection::NearSynonym]),
        pick in 0usize..16,
    ) {
        if let HackOutcome::Checked { before, after } = reward_hack_case(seed, t, how, pick) {
            prop_assert!(after <= before, "{t:?} {how:?}: {before} -> {after}");
            if before > 0.0 {
                prop_assert!(after < before, "{t:?} {how:?}: denominator grew but {before} -> {after}");
            }
        }
    }
}

#[test]
fn most_cases_are_applicable() {
    let mut checked = 0;
    for seed in 0..60u64 {
        for t in UnitType::ALL {
            if matches!(reward_hack_case(seed, t, Injection::Duplicate, seed as usize), HackOutcome::Checked { .. }) {
                checked += 1;
            }
        }
    }
    assert!(checked > 90, "only {checked} of 180 duplicate injections were applicable");
}
