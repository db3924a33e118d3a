//! Constraint checking against a direct evaluator, and feasibility of
//! prefixes against exhaustive extension.

mod common;

use common::oracle_flags;
use layup_core::plan::{
    feasible_exact, feasible_screened, prefix_feasible, validate_kinds, AbsConstraint, ActionKind, ConstraintSet,
    RelConstraint, Relation,
};
use proptest::prelude::*;

fn library_flags(kinds: &[ActionKind], cs: &ConstraintSet) -> Vec<bool> {
    let v = validate_kinds(kinds, cs);
    let rel = cs.rel.iter().map(|c| {
        v.iter()
            .any(|x| matches!(x.constraint, layup_core::plan::Constraint::Rel(r) if r == *c))
    });
    let abs = cs.abs.iter().map(|c| {
        v.iter()
            .any(|x| matches!(x.constraint, layup_core::plan::Constraint::Abs(a) if a == *c))
    });
    rel.chain(abs).collect()
}

fn kind() -> impl Strategy<Value = ActionKind> {
    prop::sample::select(ActionKind::ALL.to_vec())
}

fn relation() -> impl Strategy<Value = Relation> {
    prop::sample::select(vec![Relation::Greater, Relation::Equal, Relation::Less])
}

fn rel_constraint() -> impl Strategy<Value = RelConstraint> {
    (kind(), kind(), relation(), 0u32..4)
        .prop_filter("distinct kinds", |(a, b, _, _)| a != b)
        .prop_map(|(a, b, g, l)| RelConstraint::new(a, b, g, l).unwrap())
}

fn abs_constraint() -> impl Strategy<Value = AbsConstraint> {
    (kind(), relation(), 0u32..3).prop_map(|(alpha, gamma, lambda)| AbsConstraint { alpha, gamma, lambda })
}

fn constraint_set() -> impl Strategy<Value = ConstraintSet> {
    (
        prop::collection::vec(rel_constraint(), 0..4),
        prop::collection::vec(abs_constraint(), 0..4),
    )
        .prop_map(|(rel, abs)| ConstraintSet { rel, abs })
}

fn any_extension_valid(prefix: &[ActionKind], cs: &ConstraintSet, left: usize) -> bool {
    let mut buf = prefix.to_vec();
    fn go(buf: &mut Vec<ActionKind>, cs: &ConstraintSet, left: usize) -> bool {
        if oracle_flags(buf, cs).iter().all(|f| !f) {
            return true;
        }
        if left == 0 {
            return false;
        }
        ActionKind::ALL.iter().any(|&k| {
            buf.push(k);
            let r = go(buf, cs, left - 1);
            buf.pop();
            r
        })
    }
    go(&mut buf, cs, left)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn validate_matches_direct_evaluation(
        cs in constraint_set(),
        kinds in prop::collection::vec(kind(), 0..9),
    ) {
        prop_assert_eq!(library_flags(&kinds, &cs), oracle_flags(&kinds, &cs));
    }

    #[test]
    fn exact_feasibility_matches_enumeration(
        cs in constraint_set(),
        prefix in prop::collection::vec(kind(), 0..4),
        left in 0usize..4,
    ) {
        prop_assert_eq!(feasible_exact(&prefix, &cs, left), any_extension_valid(&prefix, &cs, left));
    }

    #[test]
    fn screen_never_rejects_a_feasible_prefix(
        cs in constraint_set(),
        prefix in prop::collection::vec(kind(), 0..5),
        left in 0usize..5,
    ) {
        if feasible_exact(&prefix, &cs, left) {
            prop_assert!(feasible_screened(&prefix, &cs, left));
        }
    }

    #[test]
    fn feasibility_grows_with_the_horizon(
        cs in constraint_set(),
        prefix in prop::collection::vec(kind(), 0..4),
        left in 0usize..4,
    ) {
        let h = prefix.len() + left;
        if prefix_feasible(&prefix, &cs, h).unwrap() {
            prop_assert!(prefix_feasible(&prefix, &cs, h + 1).unwrap());
        }
    }
}

/// On the layup sets the screen is exact, so long horizons lose nothing.
#[test]
fn screen_is_exact_on_the_layup_sets() {
    for cs in [ConstraintSet::layup_default(), ConstraintSet::initial_plans()] {
        let mut prefixes: Vec<Vec<ActionKind>> = vec![vec![]];
        for _ in 0..4 {
            let next: Vec<Vec<ActionKind>> = prefixes
                .iter()
                .flat_map(|p| {
                    ActionKind::ALL.iter().map(move |&k| {
                        let mut q = p.clone();
                        q.push(k);
                        q
                    })
                })
                .collect();
            prefixes.extend(next.into_iter().filter(|p| p.len() <= 4));
            prefixes.sort();
            prefixes.dedup();
        }
        for p in &prefixes {
            for left in 0..=5 {
                assert_eq!(
                    feasible_exact(p, &cs, left),
                    feasible_screened(p, &cs, left),
                    "{p:?} with {left} slots"
                );
            }
        }
    }
}

#[test]
fn horizon_shorter_than_prefix_is_ill_posed() {
    let cs = ConstraintSet::layup_default();
    assert!(prefix_feasible(&[ActionKind::Path; 3], &cs, 2).is_err());
}
