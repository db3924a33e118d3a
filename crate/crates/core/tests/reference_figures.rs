//! Reference figures checked literally. The ignored tests fail against the
//! reference data itself; run them with `--ignored` to see the mismatch.

use layup_core::plan::{validate, ConstraintSet, DrapingPlan};
use layup_core::report::{improvement_pct, round1, Baseline, Report, TrialRow};
use layup_core::simulator::PlanRole;

const TOTALS: [(&str, &str, [u32; 3]); 6] = [
    ("sheet1", "D1", [33, 46, 32]),
    ("sheet1", "D2", [45, 28, 30]),
    ("sheet1", "refined", [19, 19, 22]),
    ("sheet2", "D1", [24, 25, 27]),
    ("sheet2", "D2", [28, 25, 29]),
    ("sheet2", "refined", [17, 17, 15]),
];

fn rows() -> Vec<TrialRow> {
    let mut out = Vec::new();
    for (sheet, plan, totals) in TOTALS {
        let refined = plan == "refined";
        let in_plan = match (sheet, refined) {
            (_, false) => 16,
            ("sheet1", true) => 14,
            _ => 12,
        };
        for (i, total) in totals.into_iter().enumerate() {
            out.push(TrialRow {
                sheet: sheet.into(),
                plan: plan.into(),
                role: if refined { PlanRole::Refined } else { PlanRole::Initial },
                trial: 0,
                seed: i as u64 + 1,
                plan_paths: in_plan,
                correction_cycles: 0,
                correction_paths: total - in_plan,
                total_paths: total,
            });
        }
    }
    out
}

fn improvement(report: &Report, sheet: &str) -> f64 {
    report
        .improvements
        .iter()
        .find(|i| i.sheet == sheet)
        .unwrap()
        .improvement_pct
}

#[test]
fn reference_totals_average_to_one_decimal() {
    let report = Report::from_rows(rows(), &Baseline::BestInitial);
    let got: Vec<f64> = report.plans.iter().map(|p| p.average_paths).collect();
    assert_eq!(got, vec![37.0, 34.3, 20.0, 25.3, 27.3, 16.3]);
    assert_eq!(round1(37.0), 37.0);
}

#[test]
fn sheet1_improvement_is_41_7() {
    let report = Report::from_rows(rows(), &Baseline::BestInitial);
    assert_eq!(improvement(&report, "sheet1"), 41.7);
    assert_eq!(improvement_pct(34.3, 20.0), 41.7);
}

#[test]
fn sheet2_improvement_against_d2_is_40_3() {
    let report = Report::from_rows(rows(), &Baseline::Named("D2".into()));
    assert_eq!(improvement(&report, "sheet2"), 40.3);
}

/// The reference sheet2 figure uses D2 (27.3) as the baseline even though
/// D1 averages 25.3; against the best initial plan it is 35.6%.
#[test]
#[ignore = "the reference sheet2 improvement is not measured against the best initial plan"]
fn sheet2_improvement_against_best_initial_is_40_3() {
    let report = Report::from_rows(rows(), &Baseline::BestInitial);
    assert_eq!(improvement(&report, "sheet2"), 40.3);
}

/// The expert plans have no refinement action, which the layup set requires
/// exactly once.
#[test]
#[ignore = "the expert plans contain no refinement action"]
fn expert_plans_satisfy_the_layup_set() {
    let cs = ConstraintSet::layup_default();
    for plan in [DrapingPlan::expert_d1(), DrapingPlan::expert_d2()] {
        assert!(
            validate(&plan, &cs).is_empty(),
            "{}: {}",
            plan.name,
            validate(&plan, &cs)[0]
        );
    }
}

#[test]
fn expert_plans_satisfy_the_initial_set() {
    let cs = ConstraintSet::initial_plans();
    for plan in [DrapingPlan::expert_d1(), DrapingPlan::expert_d2()] {
        assert!(validate(&plan, &cs).is_empty());
        assert_eq!(plan.path_equivalents(), 16);
    }
}
