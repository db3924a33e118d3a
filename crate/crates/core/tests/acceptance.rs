//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria in `KNOWN_RED` are reported but do not fail the run; each has a
//! literal, ignored test in `reference_figures.rs`.

mod common;

use std::f64::consts::{FRAC_PI_2, PI};
use std::process::{Command, ExitCode};
use std::time::Instant;

use layup_core::effectiveness::{
    aggregate, compute_delta, compute_signs, extract_transitions, propagate, step_sign, DeltaVector,
    EffectivenessModel, PropagationMode, SignMatrices, TransitionSample,
};
use layup_core::plan::{
    validate, AbsConstraint, Action, ActionKind, ConstraintSet, DrapingPlan, RelConstraint, Relation,
};
use layup_core::search::{action_cost, generate_refinement_paths, refine_plan, state_utility, SearchConfig};
use layup_core::sheet_state::{fit_ellipse, SectorGaussians, SheetGeometry, SheetState};
use layup_core::simulator::{run_experiment, ExperimentLog, ExperimentOptions, GroundTruthParams, PlanRole, SheetSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const KNOWN_RED: [u32; 2] = [1, 7];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---- 1: constraint semantics ------------------------------------------

fn every_constraint() -> ConstraintSet {
    let rels = [Relation::Greater, Relation::Equal, Relation::Less];
    let mut cs = ConstraintSet {
        rel: Vec::new(),
        abs: Vec::new(),
    };
    for &alpha in &ActionKind::ALL {
        for &gamma in &rels {
            for lambda in 0..3 {
                cs.abs.push(AbsConstraint { alpha, gamma, lambda });
                for &beta in &ActionKind::ALL {
                    if beta != alpha {
                        cs.rel.push(RelConstraint::new(alpha, beta, gamma, lambda).unwrap());
                    }
                }
            }
        }
    }
    cs
}

fn library_flags(plan: &DrapingPlan, cs: &ConstraintSet) -> Vec<bool> {
    use layup_core::plan::Constraint;
    let v = validate(plan, cs);
    let rel = cs
        .rel
        .iter()
        .map(|c| v.iter().any(|x| x.constraint == Constraint::Rel(*c)));
    let abs = cs
        .abs
        .iter()
        .map(|c| v.iter().any(|x| x.constraint == Constraint::Abs(*c)));
    rel.chain(abs).collect()
}

fn criterion_1() -> Outcome {
    let alphabet = [
        Action::Path(1),
        Action::Path(2),
        Action::Peel,
        Action::Capture,
        Action::End,
        Action::Refinement(1),
    ];
    let sets = [
        ConstraintSet::layup_default(),
        ConstraintSet::initial_plans(),
        every_constraint(),
    ];
    let mut plans: Vec<Vec<Action>> = vec![vec![]];
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    for _ in 0..6 {
        plans = plans
            .iter()
            .flat_map(|p| {
                alphabet.iter().map(move |a| {
                    let mut q = p.clone();
                    q.push(*a);
                    q
                })
            })
            .collect();
        for actions in &plans {
            let plan = DrapingPlan {
                name: "p".into(),
                actions: actions.clone(),
            };
            let kinds = plan.kinds();
            for cs in &sets {
                if library_flags(&plan, cs) != common::oracle_flags(&kinds, cs) {
                    mismatches += 1;
                }
            }
            checked += 1;
        }
    }
    let reference = [
        ("D1", DrapingPlan::expert_d1()),
        ("D2", DrapingPlan::expert_d2()),
        ("sheet1 refined", DrapingPlan::parse(common::REFINED_SHEET1).unwrap()),
        ("sheet2 refined", DrapingPlan::parse(common::REFINED_SHEET2).unwrap()),
    ];
    let layup = ConstraintSet::layup_default();
    let failing: Vec<String> = reference
        .iter()
        .filter(|(_, p)| !validate(p, &layup).is_empty())
        .map(|(n, p)| format!("{n} ({})", validate(p, &layup)[0]))
        .collect();
    let initial_ok = reference[..2]
        .iter()
        .all(|(_, p)| validate(p, &ConstraintSet::initial_plans()).is_empty());
    outcome(
        mismatches == 0 && failing.is_empty(),
        format!(
            "{checked} plans x {} constraint sets, {mismatches} disagreements with the direct evaluator; \
             reference plans failing the layup set: [{}]; expert plans valid without the refinement constraints: {initial_ok}",
            sets.len(),
            failing.join(", ")
        ),
    )
}

// ---- 2: delta and sign oracle -----------------------------------------

fn oracle_delta(b: &SectorGaussians, a: &SectorGaussians) -> [f64; 6] {
    let mut dt = a.mu2[2] - b.mu2[2];
    if dt > FRAC_PI_2 {
        dt -= PI;
    } else if dt <= -FRAC_PI_2 {
        dt += PI;
    }
    [
        a.mu1[0] - b.mu1[0],
        a.mu1[1] - b.mu1[1],
        a.mu1[2] - b.mu1[2],
        a.mu2[0] - b.mu2[0],
        a.mu2[1] - b.mu2[1],
        dt,
    ]
}

fn oracle_signs(b: &SectorGaussians, a: &SectorGaussians) -> ([i8; 3], [i8; 3]) {
    let h = |x: f64| if x <= 0.0 { -1 } else { 1 };
    (
        [0, 1, 2].map(|l| h(a.sigma1[l][l] - b.sigma1[l][l])),
        [0, 1, 2].map(|l| h(a.sigma2[l][l] - b.sigma2[l][l])),
    )
}

fn random_sector(rng: &mut ChaCha8Rng, like: Option<&SectorGaussians>) -> SectorGaussians {
    if rng.random_bool(0.1) {
        return SectorGaussians::sentinel(1);
    }
    let a = rng.random_range(0.0..40.0);
    let mut s = SectorGaussians::sentinel(1);
    s.mu1 = [
        rng.random_range(-150.0..150.0),
        rng.random_range(-150.0..150.0),
        rng.random_range(0.0..5.0),
    ];
    s.mu2 = [a, a * rng.random_range(0.0..1.0), rng.random_range(0.0..PI)];
    for l in 0..3 {
        s.sigma1[l][l] = rng.random_range(0.0..20.0);
        s.sigma2[l][l] = rng.random_range(0.0..20.0);
        // an unchanged spread exercises the zero branch of the step
        if let Some(o) = like {
            if rng.random_bool(0.3) {
                s.sigma1[l][l] = o.sigma1[l][l];
            }
            if rng.random_bool(0.3) {
                s.sigma2[l][l] = o.sigma2[l][l];
            }
        }
    }
    s.sample_count = rng.random_range(1..5);
    s
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = 0;
    let mut zero_cases = 0;
    for _ in 0..1000 {
        let before = random_sector(&mut rng, None);
        let after = random_sector(&mut rng, Some(&before));
        let got = compute_delta(&before, &after).to_array();
        let want = oracle_delta(&before, &after);
        let signs = compute_signs(&before, &after);
        let (u1, u2) = oracle_signs(&before, &after);
        if got.iter().zip(&want).any(|(g, w)| g.to_bits() != w.to_bits()) || signs.u1 != u1 || signs.u2 != u2 {
            bad += 1;
        }
        zero_cases += (0..3)
            .filter(|&l| after.sigma1[l][l] == before.sigma1[l][l] || after.sigma2[l][l] == before.sigma2[l][l])
            .count();
    }
    let h0 = step_sign(0.0) == -1 && step_sign(-0.0) == -1 && step_sign(f64::MIN_POSITIVE) == 1;
    let same = random_sector(&mut rng, None);
    let unchanged = compute_signs(&same, &same)
        == SignMatrices {
            u1: [-1; 3],
            u2: [-1; 3],
        };
    outcome(
        bad == 0 && h0 && unchanged,
        format!(
            "1000 pairs, {bad} bitwise mismatches, {zero_cases} unchanged-spread entries; H(0) = -1: {}",
            h0 && unchanged
        ),
    )
}

// ---- 3: ellipse recovery ----------------------------------------------

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let (mut worst_a, mut worst_b, mut worst_t) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let sa: f64 = rng.random_range(2.0..20.0);
        let sb = sa * rng.random_range(0.2..0.6);
        let theta: f64 = rng.random_range(0.0..PI);
        let c = [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)];
        let (s, co) = theta.sin_cos();
        let pts: Vec<[f64; 3]> = (0..10_000)
            .map(|_| {
                let (u, v): (f64, f64) = (sa * unit.sample(&mut rng), sb * unit.sample(&mut rng));
                [c[0] + co * u - s * v, c[1] + s * u + co * v, 1.0]
            })
            .collect();
        let e = fit_ellipse(&pts);
        // semi-axes are two standard deviations
        worst_a = worst_a.max((e.a / (2.0 * sa) - 1.0).abs());
        worst_b = worst_b.max((e.b / (2.0 * sb) - 1.0).abs());
        let d = (e.theta - theta).rem_euclid(PI);
        worst_t = worst_t.max(d.min(PI - d).to_degrees());
    }
    outcome(
        worst_a <= 0.05 && worst_b <= 0.05 && worst_t <= 2.0,
        format!(
            "50 ellipses x 10^4 samples: worst a error {:.2}%, b error {:.2}%, theta error {:.3} deg",
            100.0 * worst_a,
            100.0 * worst_b,
            worst_t
        ),
    )
}

// ---- 4: small-instance optimality -------------------------------------

fn small_constraints() -> ConstraintSet {
    use ActionKind::*;
    ConstraintSet {
        rel: vec![
            RelConstraint::new(End, Path, Relation::Greater, 0).unwrap(),
            RelConstraint::new(End, Capture, Relation::Greater, 0).unwrap(),
        ],
        abs: vec![
            AbsConstraint {
                alpha: End,
                gamma: Relation::Equal,
                lambda: 1,
            },
            AbsConstraint {
                alpha: Capture,
                gamma: Relation::Equal,
                lambda: 1,
            },
            AbsConstraint {
                alpha: Peel,
                gamma: Relation::Less,
                lambda: 1,
            },
            AbsConstraint {
                alpha: Refinement,
                gamma: Relation::Less,
                lambda: 1,
            },
        ],
    }
}

fn small_state(rng: &mut ChaCha8Rng) -> SheetState {
    let geometry = SheetGeometry::rectangle(100.0, 100.0, 2).unwrap();
    let sectors = (1..=2)
        .map(|id| {
            let mut s = random_sector(rng, None);
            if s.is_sentinel() {
                s = SectorGaussians::sentinel(id);
            }
            s.sector = id;
            s
        })
        .collect();
    SheetState {
        geometry,
        sectors,
        t: 0,
    }
}

fn small_model(rng: &mut ChaCha8Rng) -> EffectivenessModel {
    let mut m = EffectivenessModel::empty(2);
    let actions = [
        Action::Path(1),
        Action::Path(2),
        Action::Path(3),
        Action::Path(4),
        Action::Capture,
    ];
    for (i, a) in actions.iter().enumerate() {
        for sector in 1..=2 {
            if rng.random_bool(0.15) {
                continue;
            }
            for k in 0..rng.random_range(1..4) {
                let delta = DeltaVector {
                    dx: rng.random_range(-5.0..5.0),
                    dy: rng.random_range(-5.0..5.0),
                    dh: rng.random_range(-1.0..0.3),
                    da: rng.random_range(-6.0..2.0),
                    db: rng.random_range(-4.0..2.0),
                    dtheta: rng.random_range(-0.3..0.3),
                };
                let sign = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { 1 } else { -1 };
                let signs = SignMatrices {
                    u1: [sign(rng), sign(rng), sign(rng)],
                    u2: [sign(rng), sign(rng), sign(rng)],
                };
                m.insert(TransitionSample {
                    action: *a,
                    sector,
                    delta,
                    signs,
                    plan: format!("m{k}"),
                    seed: k,
                    time_index: i + 1,
                })
                .unwrap();
            }
        }
    }
    m
}

/// Plan cost from the definitions, summed in the same order as the search.
fn plan_cost(x0: &SheetState, actions: &[Action], model: &EffectivenessModel, cfg: &SearchConfig) -> f64 {
    let w = &cfg.weights;
    let mut x = x0.clone();
    let mut total = 0.0;
    for a in actions {
        let next = propagate(&x, a, model, PropagationMode::Expectation);
        let penalty = if next.unmodeled { w.w_unk } else { 0.0 };
        total = total + action_cost(a, w) + state_utility(&next.state, w) + penalty;
        x = next.state;
    }
    total + state_utility(&x, w)
}

fn criterion_4() -> Outcome {
    let cs = small_constraints();
    let cfg = SearchConfig {
        b_f: usize::MAX,
        d_f: 5,
        horizon: 5,
        epsilon_conv: None,
        path_count: 4,
        ..Default::default()
    };
    let alphabet = [
        Action::Path(1),
        Action::Path(2),
        Action::Path(3),
        Action::Path(4),
        Action::Peel,
        Action::Capture,
        Action::Refinement(1),
        Action::End,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut exact = 0;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x0 = small_state(&mut rng);
        let model = small_model(&mut rng);
        let mut best = f64::INFINITY;
        let mut seqs: Vec<Vec<Action>> = vec![vec![]];
        for _ in 0..5 {
            seqs = seqs
                .iter()
                .flat_map(|p| {
                    alphabet.iter().map(move |a| {
                        let mut q = p.clone();
                        q.push(*a);
                        q
                    })
                })
                .collect();
            for s in &seqs {
                let plan = DrapingPlan {
                    name: "b".into(),
                    actions: s.clone(),
                };
                if validate(&plan, &cs).is_empty() {
                    best = best.min(plan_cost(&x0, s, &model, &cfg));
                }
            }
        }
        let r = refine_plan(&x0, &model, &cs, &cfg).unwrap();
        let own = plan_cost(&x0, &r.plan.actions, &model, &cfg);
        if r.audit.cost == best && own == best {
            exact += 1;
        }
        worst = worst.max((r.audit.cost - best).abs());
    }
    outcome(
        exact == 20,
        format!("{exact}/20 models at the exhaustive minimum, largest gap {worst:e}"),
    )
}

// ---- 5, 6, 9: simulated experiments -----------------------------------

fn generator(
    spec: &SheetSpec,
) -> impl Fn(&SheetState, u32) -> layup_core::Result<Vec<layup_core::simulator::PathGeometry>> {
    let geom = spec.geometry.clone();
    let hw = GroundTruthParams::default().roller_half_width;
    move |s, n| generate_refinement_paths(s, n, &geom, hw).map(|g| g.paths)
}

fn initial_logs(sheet: &str) -> Vec<ExperimentLog> {
    let spec = SheetSpec::builtin(sheet).unwrap();
    let gen = generator(&spec);
    let params = GroundTruthParams::default();
    let cs = ConstraintSet::initial_plans();
    let mut logs = Vec::new();
    for plan in [DrapingPlan::expert_d1(), DrapingPlan::expert_d2()] {
        for seed in 1..=3 {
            logs.push(run_experiment(&plan, &spec, &params, &cs, seed, &gen, &ExperimentOptions::default()).unwrap());
        }
    }
    logs
}

fn criterion_5(logs: &[ExperimentLog]) -> Outcome {
    let model = aggregate(logs).unwrap();
    let mean_at = |t: usize| {
        let v: Vec<f64> = model
            .buckets()
            .flat_map(|(_, b)| b.samples())
            .filter(|s| s.time_index == t && s.action.kind() == ActionKind::Path)
            .map(|s| s.delta.dh.abs())
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let transitions: usize = logs.iter().map(|l| extract_transitions(l).unwrap().len()).sum();
    let (first, eighth) = (mean_at(1), mean_at(8));
    let ratio = first / eighth;
    outcome(
        ratio >= 2.0 && model.experiments == 12 && transitions == model.sample_count(),
        format!(
            "{} experiments; mean |dh| first path {first:.4} mm, eighth path {eighth:.4} mm, ratio {ratio:.2}",
            model.experiments
        ),
    )
}

struct SheetRun {
    sheet: &'static str,
    refined: DrapingPlan,
    stop: String,
    means: [f64; 3],
}

const EVAL_SEEDS: std::ops::Range<u64> = 1000..1030;

fn sheet_run(sheet: &'static str, logs: &[ExperimentLog]) -> SheetRun {
    let spec = SheetSpec::builtin(sheet).unwrap();
    let gen = generator(&spec);
    let params = GroundTruthParams::default();
    let model = aggregate(logs).unwrap();
    let x0 = logs[0].steps[0].state_before.clone().unwrap();
    let r = refine_plan(&x0, &model, &ConstraintSet::layup_default(), &SearchConfig::default()).unwrap();
    let mut refined = r.plan;
    refined.name = "refined".into();
    let plans = [
        (
            DrapingPlan::expert_d1(),
            ConstraintSet::initial_plans(),
            PlanRole::Initial,
        ),
        (
            DrapingPlan::expert_d2(),
            ConstraintSet::initial_plans(),
            PlanRole::Initial,
        ),
        (refined.clone(), ConstraintSet::layup_default(), PlanRole::Refined),
    ];
    let mut means = [0.0; 3];
    for (i, (plan, cs, role)) in plans.iter().enumerate() {
        let opts = ExperimentOptions {
            role: *role,
            keep_captures: false,
        };
        let total: u32 = EVAL_SEEDS
            .map(|seed| {
                run_experiment(plan, &spec, &params, cs, seed, &gen, &opts)
                    .unwrap()
                    .total_paths
            })
            .sum();
        means[i] = f64::from(total) / EVAL_SEEDS.count() as f64;
    }
    SheetRun {
        sheet,
        refined,
        stop: format!("{:?}", r.audit.stop),
        means,
    }
}

fn criterion_6(runs: &[SheetRun]) -> Outcome {
    let mut pass = true;
    let parts: Vec<String> = runs
        .iter()
        .map(|r| {
            let best = r.means[0].min(r.means[1]);
            let ratio = r.means[2] / best;
            pass &= ratio <= 0.75;
            format!(
                "{}: D1 {:.2}, D2 {:.2}, refined {:.2}, ratio {ratio:.3}",
                r.sheet, r.means[0], r.means[1], r.means[2]
            )
        })
        .collect();
    outcome(pass, format!("30 paired seeds; {}", parts.join("; ")))
}

fn criterion_9(run: &SheetRun) -> Outcome {
    let kinds = run.refined.kinds();
    let n = kinds.len();
    let tail = |s: &[ActionKind]| n >= s.len() && kinds[n - s.len()..] == *s;
    let shaped = tail(&[ActionKind::Refinement, ActionKind::Capture, ActionKind::End])
        || tail(&[ActionKind::Capture, ActionKind::End]);
    let pe = run.refined.path_equivalents();
    let text: Vec<String> = run.refined.actions.iter().map(|a| a.to_string()).collect();
    outcome(
        pe < 16 && shaped,
        format!("{} path-equivalents, stop {}: {}", pe, run.stop, text.join(" ")),
    )
}

// ---- 7: report arithmetic ---------------------------------------------

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let logs = common::write_reference_fixtures(dir.path());
    let report = |extra: &[&str]| -> serde_json::Value {
        let out = dir.path().join("report");
        let status = Command::new(env!("CARGO_BIN_EXE_layup"))
            .arg("report")
            .arg("--out")
            .arg(&out)
            .args(extra)
            .args(&logs)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
    };
    let cents = |x: f64| (x * 100.0).round() as i64;
    let best = report(&[]);
    let average = |sheet: &str, plan: &str| {
        best["plans"]
            .as_array()
            .unwrap()
            .iter()
            .find(|p| p["sheet"] == sheet && p["plan"] == plan)
            .map(|p| p["average_paths"].as_f64().unwrap())
            .unwrap_or(f64::NAN)
    };
    let want = [
        ("sheet1", "D1", 37.0),
        ("sheet1", "D2", 34.3),
        ("sheet1", "refined", 20.0),
        ("sheet2", "D1", 25.3),
        ("sheet2", "D2", 27.3),
        ("sheet2", "refined", 16.3),
    ];
    let averages_ok = want.iter().all(|&(s, p, v)| cents(average(s, p)) == cents(v));
    let got: Vec<String> = want.iter().map(|&(s, p, _)| format!("{:.1}", average(s, p))).collect();
    let improvement = |rep: &serde_json::Value, sheet: &str| {
        rep["improvements"]
            .as_array()
            .unwrap()
            .iter()
            .find(|i| i["sheet"] == sheet)
            .map(|i| {
                (
                    i["baseline"].as_str().unwrap().to_owned(),
                    i["improvement_pct"].as_f64().unwrap(),
                )
            })
            .unwrap()
    };
    let (b1, i1) = improvement(&best, "sheet1");
    let (b2, i2) = improvement(&best, "sheet2");
    let (_, named) = improvement(&report(&["--baseline", "D2"]), "sheet2");
    outcome(
        averages_ok && cents(i1) == 4170 && cents(i2) == 4030,
        format!(
            "averages [{}]; improvement vs best initial: sheet1 {i1:.1}% ({b1}), sheet2 {i2:.1}% ({b2}); \
             sheet2 vs D2 {named:.1}%",
            got.join(", ")
        ),
    )
}

// ---- 8: determinism ---------------------------------------------------

fn criterion_8() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = common::sheet1_pipeline(a.path());
    let second = common::sheet1_pipeline(b.path());
    let same = first == second;
    let golden = std::fs::read_to_string(common::golden_manifest()).unwrap_or_default();
    let matches = common::manifest(&first) == golden;
    outcome(
        same && matches,
        format!(
            "{} files from simulate/learn/refine/evaluate/report; reruns identical: {same}; golden hashes match: {matches}",
            first.len()
        ),
    )
}

fn main() -> ExitCode {
    let mut failures = Vec::new();
    let mut report = |n: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed().as_secs_f64();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && KNOWN_RED.contains(&n) {
            " (known)"
        } else {
            ""
        };
        println!("criterion {n} {tag}{note} [{secs:.1}s] {name}: {}", o.detail);
        if !o.pass && !KNOWN_RED.contains(&n) {
            failures.push(n);
        }
    };
    report(1, "constraint semantics", &mut criterion_1);
    report(2, "delta and sign oracle", &mut criterion_2);
    report(3, "ellipse recovery", &mut criterion_3);
    report(4, "small-instance search optimality", &mut criterion_4);

    let logs1 = initial_logs("sheet1");
    let logs2 = initial_logs("sheet2");
    let all: Vec<ExperimentLog> = logs1.iter().chain(&logs2).cloned().collect();
    report(5, "effect decay", &mut || criterion_5(&all));
    let mut runs = Vec::new();
    report(6, "end-to-end path reduction", &mut || {
        runs = vec![sheet_run("sheet1", &logs1), sheet_run("sheet2", &logs2)];
        criterion_6(&runs)
    });
    report(7, "report arithmetic", &mut criterion_7);
    report(8, "determinism and golden files", &mut criterion_8);
    report(9, "refined plan shape", &mut || criterion_9(&runs[0]));

    if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {failures:?}");
        ExitCode::FAILURE
    }
}
