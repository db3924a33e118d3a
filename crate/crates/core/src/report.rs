//! Per-trial and per-plan path statistics.
//!
//! Averages are shown to one decimal and the improvement of a refined plan
//! is computed from those shown averages, so a table built from the same
//! totals reproduces reference figures digit for digit.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::simulator::{ExperimentLog, PlanRole};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub sheet: String,
    pub plan: String,
    pub role: PlanRole,
    /// 1-based trial number within the plan, in seed order.
    pub trial: usize,
    pub seed: u64,
    pub plan_paths: u32,
    pub correction_cycles: u32,
    pub correction_paths: u32,
    pub total_paths: u32,
}

impl TrialRow {
    pub fn from_log(log: &ExperimentLog) -> Self {
        TrialRow {
            sheet: log.sheet.clone(),
            plan: log.plan.name.clone(),
            role: log.role,
            trial: 0,
            seed: log.seed,
            plan_paths: log.plan_paths,
            correction_cycles: log.correction_cycles,
            correction_paths: log.correction_paths,
            total_paths: log.total_paths,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub sheet: String,
    pub plan: String,
    pub role: PlanRole,
    pub trials: usize,
    pub mean_total_paths: f64,
    /// `mean_total_paths` rounded to one decimal.
    pub average_paths: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub sheet: String,
    pub baseline: String,
    pub refined: String,
    pub baseline_average: f64,
    pub refined_average: f64,
    /// `(baseline − refined) / baseline` in percent, one decimal.
    pub improvement_pct: f64,
}

/// Which initial plan a refined plan is compared against.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum Baseline {
    /// The initial plan with the lowest average on the same sheet.
    #[default]
    BestInitial,
    /// A named plan, on every sheet that has it.
    Named(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<TrialRow>,
    pub plans: Vec<PlanSummary>,
    pub improvements: Vec<Improvement>,
}

pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

pub fn improvement_pct(baseline_average: f64, refined_average: f64) -> f64 {
    round1(100.0 * (baseline_average - refined_average) / baseline_average)
}

impl Report {
    pub fn from_logs(logs: &[ExperimentLog], baseline: &Baseline) -> Self {
        Self::from_rows(logs.iter().map(TrialRow::from_log).collect(), baseline)
    }

    /// Groups rows by (sheet, role, plan), numbers trials by seed and
    /// computes averages and improvements. Input order does not matter.
    pub fn from_rows(mut rows: Vec<TrialRow>, baseline: &Baseline) -> Self {
        let role_rank = |r: PlanRole| r == PlanRole::Refined;
        rows.sort_by(|a, b| {
            (&a.sheet, role_rank(a.role), &a.plan, a.seed, a.total_paths).cmp(&(
                &b.sheet,
                role_rank(b.role),
                &b.plan,
                b.seed,
                b.total_paths,
            ))
        });
        let mut plans: Vec<PlanSummary> = Vec::new();
        let mut start = 0;
        while start < rows.len() {
            let key = (rows[start].sheet.clone(), rows[start].role, rows[start].plan.clone());
            let mut end = start;
            while end < rows.len() && (rows[end].sheet.clone(), rows[end].role, rows[end].plan.clone()) == key {
                rows[end].trial = end - start + 1;
                end += 1;
            }
            let n = end - start;
            let sum: u64 = rows[start..end].iter().map(|r| u64::from(r.total_paths)).sum();
            let mean = sum as f64 / n as f64;
            plans.push(PlanSummary {
                sheet: key.0,
                plan: key.2,
                role: key.1,
                trials: n,
                mean_total_paths: mean,
                average_paths: round1(mean),
            });
            start = end;
        }

        let mut improvements = Vec::new();
        for refined in plans.iter().filter(|p| p.role == PlanRole::Refined) {
            let initials = plans
                .iter()
                .filter(|p| p.role == PlanRole::Initial && p.sheet == refined.sheet);
            let base = match baseline {
                Baseline::BestInitial => {
                    initials.min_by(|a, b| a.average_paths.total_cmp(&b.average_paths).then(a.plan.cmp(&b.plan)))
                }
                Baseline::Named(name) => initials.into_iter().find(|p| &p.plan == name),
            };
            if let Some(base) = base {
                improvements.push(Improvement {
                    sheet: refined.sheet.clone(),
                    baseline: base.plan.clone(),
                    refined: refined.plan.clone(),
                    baseline_average: base.average_paths,
                    refined_average: refined.average_paths,
                    improvement_pct: improvement_pct(base.average_paths, refined.average_paths),
                });
            }
        }
        Report {
            rows,
            plans,
            improvements,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let header = [
            "sheet",
            "plan",
            "role",
            "trial",
            "in plan",
            "cycles",
            "corr. paths",
            "total",
            "average",
        ];
        let mut table: Vec<Vec<String>> = vec![header.iter().map(|h| h.to_string()).collect()];
        for p in &self.plans {
            let mine: Vec<&TrialRow> = self
                .rows
                .iter()
                .filter(|r| r.sheet == p.sheet && r.plan == p.plan && r.role == p.role)
                .collect();
            for (i, r) in mine.iter().enumerate() {
                table.push(vec![
                    r.sheet.clone(),
                    r.plan.clone(),
                    format!("{:?}", r.role).to_lowercase(),
                    r.trial.to_string(),
                    r.plan_paths.to_string(),
                    r.correction_cycles.to_string(),
                    r.correction_paths.to_string(),
                    r.total_paths.to_string(),
                    if i == 0 {
                        format!("{:.1}", p.average_paths)
                    } else {
                        String::new()
                    },
                ]);
            }
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
            .collect();
        for row in &table {
            let line: Vec<String> = row.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
            writeln!(s, "{}", line.join("  ").trim_end()).unwrap();
        }
        if !self.improvements.is_empty() {
            writeln!(s).unwrap();
            for imp in &self.improvements {
                writeln!(
                    s,
                    "{}: {} {:.1} -> {} {:.1}, improvement {:.1}%",
                    imp.sheet,
                    imp.baseline,
                    imp.baseline_average,
                    imp.refined,
                    imp.refined_average,
                    imp.improvement_pct
                )
                .unwrap();
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(sheet: &str, plan: &str, role: PlanRole, seed: u64, total: u32) -> TrialRow {
        TrialRow {
            sheet: sheet.into(),
            plan: plan.into(),
            role,
            trial: 0,
            seed,
            plan_paths: 16,
            correction_cycles: 1,
            correction_paths: total.saturating_sub(16),
            total_paths: total,
        }
    }

    #[test]
    fn averages_and_improvement() {
        let rows = vec![
            row("s", "D1", PlanRole::Initial, 1, 33),
            row("s", "D1", PlanRole::Initial, 2, 46),
            row("s", "D1", PlanRole::Initial, 3, 32),
            row("s", "D2", PlanRole::Initial, 1, 45),
            row("s", "D2", PlanRole::Initial, 2, 28),
            row("s", "D2", PlanRole::Initial, 3, 30),
            row("s", "R", PlanRole::Refined, 1, 19),
            row("s", "R", PlanRole::Refined, 2, 19),
            row("s", "R", PlanRole::Refined, 3, 22),
        ];
        let r = Report::from_rows(rows, &Baseline::BestInitial);
        let avg: Vec<f64> = r.plans.iter().map(|p| p.average_paths).collect();
        assert_eq!(avg, vec![37.0, 34.3, 20.0]);
        assert_eq!(r.improvements.len(), 1);
        assert_eq!(r.improvements[0].baseline, "D2");
        assert_eq!(r.improvements[0].improvement_pct, 41.7);
        assert!(r.to_text().contains("improvement 41.7%"));
    }

    #[test]
    fn named_baseline_and_order_independence() {
        let mut rows = vec![
            row("s", "A", PlanRole::Initial, 2, 30),
            row("s", "A", PlanRole::Initial, 1, 20),
            row("s", "B", PlanRole::Initial, 1, 40),
            row("s", "R", PlanRole::Refined, 1, 10),
        ];
        let a = Report::from_rows(rows.clone(), &Baseline::Named("B".into()));
        rows.reverse();
        let b = Report::from_rows(rows, &Baseline::Named("B".into()));
        assert_eq!(a, b);
        assert_eq!(a.improvements[0].improvement_pct, 75.0);
        assert_eq!(a.rows[0].seed, 1);
        assert_eq!(a.rows[0].trial, 1);
        assert!(Report::from_rows(vec![], &Baseline::BestInitial)
            .improvements
            .is_empty());
    }

    #[test]
    fn improvement_examples() {
        assert_eq!(improvement_pct(34.3, 20.0), 41.7);
        assert_eq!(improvement_pct(27.3, 16.3), 40.3);
    }
}
