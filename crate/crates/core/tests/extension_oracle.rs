use std::collections::BTreeSet;

use ergolab::extension::{
    overlap_measure, t_orbit, verify_conjugacy, verify_lemma2, window_points, CocycleContext,
    LeveledSet, VerifyMode,
};
use ergolab::tower::{ConstructionParams, FloorSet, Preset, StageTable};
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use proptest::prelude::*;

fn basic(j_max: u32) -> StageTable {
    StageTable::build(&ConstructionParams::new(Preset::Basic, j_max)).unwrap()
}

fn big(v: u64) -> BigUint {
    BigUint::from(v)
}

fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

/// Applies T one step at a time to every `(floor, level)` point.
fn brute_force_t(
    points: &[(u64, bool)],
    markers: &BTreeSet<u64>,
    n: u64,
) -> (BTreeSet<u64>, BTreeSet<u64>) {
    let mut out = (BTreeSet::new(), BTreeSet::new());
    for &(mut f, mut z) in points {
        for _ in 0..n {
            z ^= markers.contains(&f);
            f += 1;
        }
        if z {
            out.1.insert(f);
        } else {
            out.0.insert(f);
        }
    }
    out
}

fn u64s(f: &FloorSet) -> BTreeSet<u64> {
    f.indices().iter().map(|x| x.to_u64().unwrap()).collect()
}

#[test]
fn t_orbit_matches_single_steps() {
    let t = basic(6);
    for stage in [3u32, 4, 5] {
        let ctx = CocycleContext::new(&t, stage).unwrap();
        let markers: BTreeSet<u64> = ctx
            .e_indices()
            .iter()
            .map(|x| x.to_u64().unwrap())
            .collect();
        let a = LeveledSet::base_set(&t, stage).unwrap();
        let points: Vec<(u64, bool)> = u64s(a.level0()).into_iter().map(|f| (f, false)).collect();
        let top = *points.iter().map(|(f, _)| f).max().unwrap();
        let h = t.height(stage).unwrap().to_u64().unwrap();
        let h3 = t.height(3).unwrap().to_u64().unwrap();
        let n_hi = (h - 1 - top).min(4 * h3);
        for n in 0..=n_hi {
            let got = t_orbit(&a, &big(n), &ctx, &t).unwrap();
            let (l0, l1) = brute_force_t(&points, &markers, n);
            assert_eq!(u64s(got.level0()), l0, "stage {stage} n {n}");
            assert_eq!(u64s(got.level1()), l1, "stage {stage} n {n}");
        }
    }
}

#[test]
fn t_orbit_on_mixed_levels() {
    // Any leveled set, not just A: flip a few floors onto level 1 first.
    let t = basic(5);
    let ctx = CocycleContext::new(&t, 5).unwrap();
    let markers: BTreeSet<u64> = ctx
        .e_indices()
        .iter()
        .map(|x| x.to_u64().unwrap())
        .collect();
    let l0 = FloorSet::new(4, [0u64, 5, 17, 200].map(big).to_vec(), &t).unwrap();
    let l1 = FloorSet::new(4, [5u64, 90, 286].map(big).to_vec(), &t).unwrap();
    let set = LeveledSet::new(l0, l1, &t).unwrap().refine(5, &t).unwrap();
    let mut points = Vec::new();
    points.extend(u64s(set.level0()).into_iter().map(|f| (f, false)));
    points.extend(u64s(set.level1()).into_iter().map(|f| (f, true)));
    for n in [1u64, 3, 40, 288, 1000, 1153] {
        let got = t_orbit(&set, &big(n), &ctx, &t).unwrap();
        let (a, b) = brute_force_t(&points, &markers, n);
        assert_eq!((u64s(got.level0()), u64s(got.level1())), (a, b), "n {n}");
    }
}

#[test]
fn frozen_overlap_values() {
    // Python per-step simulation at stage 6 (240 fragments of width 1/240).
    let t = basic(7);
    let ctx = CocycleContext::new(&t, 6).unwrap();
    let frozen = [
        (0u64, 240i64),
        (2, 240),
        (3, 120),
        (5, 0),
        (8, 120),
        (9, 240),
        (100, 80),
        (288, 20),
        (289, 0),
        (946, 0),
        (947, 20),
        (1000, 80),
        (1151, 220),
        (1153, 240),
        (2000, 60),
        (3000, 200),
        (5000, 180),
    ];
    for (n, count) in frozen {
        assert_eq!(
            overlap_measure(&big(n), &ctx).unwrap(),
            ratio(count, 240),
            "n {n}"
        );
    }
}

#[test]
fn coincidence_window_holds_exactly() {
    let t = basic(8);
    let r = verify_lemma2(&t, 2, VerifyMode::Exhaustive, 0).unwrap();
    let coincide = &r.windows[1];
    assert_eq!(coincide.window, ["5760".to_string(), "23040".to_string()]);
    assert_eq!(coincide.checked_count, 23040 - 5760 - 1);
    assert!(coincide.passed());

    let r3 = verify_lemma2(&t, 3, VerifyMode::Sampled, 2_000).unwrap();
    assert!(r3.windows[1].passed());
}

#[test]
fn disjointness_holds_up_to_top_fragment() {
    // Exact disjointness holds on (h_{2j}, 2j h_{2j} - max X_1].
    let t = basic(8);
    for j in [2u32, 3] {
        let r = verify_lemma2(&t, j, VerifyMode::Sampled, 50).unwrap();
        let upper: BigUint = r.exact_disjoint_upper.parse().unwrap();
        let lo = t.height(2 * j).unwrap().clone();
        let ctx = CocycleContext::new(&t, r.context_stage).unwrap();
        let mode = if j == 2 {
            VerifyMode::Exhaustive
        } else {
            VerifyMode::Sampled
        };
        for n in window_points(&lo, &(&upper + 1u32), mode, 2_000) {
            assert!(overlap_measure(&n, &ctx).unwrap().is_zero(), "j {j} n {n}");
        }
        assert!(!overlap_measure(&(&upper + 1u32), &ctx).unwrap().is_zero());
    }
    let r = verify_lemma2(&t, 2, VerifyMode::Exhaustive, 0).unwrap();
    assert_eq!(r.exact_disjoint_upper, "946");
    let first: u64 = r.windows[0].violations[0].parse().unwrap();
    assert_eq!(first, 947);
    assert_eq!(r.windows[0].violations.len(), 1151 - 947 + 1);
}

#[test]
fn conjugacy_on_staircase_preset() {
    let t = StageTable::build(&ConstructionParams::new(Preset::StaircaseMixing, 6)).unwrap();
    let r = verify_conjugacy(&t, 300).unwrap();
    assert!(r.passed(), "{:?}", r.mismatches);
    assert_eq!(r.checked, 301);
}

#[test]
fn report_json_shape() {
    let t = basic(5);
    let r = verify_lemma2(&t, 1, VerifyMode::Exhaustive, 0).unwrap();
    let v = serde_json::to_value(&r).unwrap();
    let w = &v["windows"][0];
    for key in ["j", "window", "mode", "violations", "checked_count"] {
        assert!(w.get(key).is_some(), "missing {key}");
    }
    assert_eq!(w["mode"], "exhaustive");
    assert_eq!(w["window"][0], "4");
}

proptest! {
    #[test]
    // Top stage-6 fragment sits at 142752 of 172800; keep f + a + b inside.
    fn parity_is_additive(f_idx in 0usize..240, a in 0u64..14_000, b in 0u64..14_000) {
        let t = basic(7);
        let ctx = CocycleContext::new(&t, 6).unwrap();
        let f = ctx.fragments()[f_idx].clone();
        let (a, b) = (big(a), big(b));
        let whole = ctx.parity(&f, &(&a + &b)).unwrap();
        let split = ctx.parity(&f, &a).unwrap() ^ ctx.parity(&(&f + &a), &b).unwrap();
        prop_assert_eq!(whole, split);
    }

    #[test]
    fn orbit_mass_and_overlap_range(n in 0u64..20_000) {
        let t = basic(7);
        let ctx = CocycleContext::new(&t, 6).unwrap();
        let a = LeveledSet::base_set(&t, 6).unwrap();
        let orbit = t_orbit(&a, &big(n), &ctx, &t).unwrap();
        prop_assert_eq!(orbit.measure(&t).unwrap(), ratio(1, 1));
        let o = overlap_measure(&big(n), &ctx).unwrap();
        prop_assert!(o >= ratio(0, 1) && o <= ratio(1, 1));
        // Denominator divides r_1 ... r_5 = 240.
        prop_assert!((BigInt::from(240) % o.denom()).is_zero());
    }
}
