#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use layup_core::cli::{self, Cli};
use layup_core::io;
use layup_core::plan::{AbsConstraint, ActionKind, ConstraintSet, DrapingPlan, RelConstraint, Relation};
use layup_core::search::generate_refinement_paths;
use layup_core::sheet_state::SheetState;
use layup_core::simulator::{run_experiment, ExperimentOptions, GroundTruthParams, PlanRole, SheetSpec};
use sha2::{Digest, Sha256};

pub fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn golden_manifest() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/sheet1.sha256")
}

pub const REFINED_SHEET1: &str = "name: refined\n(path, 3)\n(path, 11)\n(path, 7)\n(path, 15)\n(path, 1)\n(path, 9)\n(peel,)\n(path, 5)\n(path, 13)\n(refinement, 6)\n(capture,)\n(end,)\n";
pub const REFINED_SHEET2: &str = "name: refined\n(path, 7)\n(path, 15)\n(path, 5)\n(path, 1)\n(path, 13)\n(path, 9)\n(peel,)\n(path, 3)\n(path, 11)\n(refinement, 4)\n(capture,)\n(end,)\n";

/// Per-trial (correction cycles, correction paths) of the reference trials.
pub struct TableRow {
    pub sheet: &'static str,
    pub plan: &'static str,
    pub trials: [(u32, u32); 3],
}

pub const REFERENCE_TRIALS: [TableRow; 6] = [
    TableRow {
        sheet: "sheet1",
        plan: "D1",
        trials: [(5, 17), (7, 30), (5, 16)],
    },
    TableRow {
        sheet: "sheet1",
        plan: "D2",
        trials: [(7, 29), (2, 12), (4, 14)],
    },
    TableRow {
        sheet: "sheet1",
        plan: "refined",
        trials: [(2, 5), (2, 5), (3, 8)],
    },
    TableRow {
        sheet: "sheet2",
        plan: "D1",
        trials: [(2, 8), (3, 9), (3, 11)],
    },
    TableRow {
        sheet: "sheet2",
        plan: "D2",
        trials: [(2, 12), (3, 9), (3, 13)],
    },
    TableRow {
        sheet: "sheet2",
        plan: "refined",
        trials: [(1, 5), (3, 5), (2, 3)],
    },
];

fn table_plan(sheet: &str, plan: &str) -> DrapingPlan {
    match (sheet, plan) {
        (_, "D1") => DrapingPlan::expert_d1(),
        (_, "D2") => DrapingPlan::expert_d2(),
        ("sheet1", _) => DrapingPlan::parse(REFINED_SHEET1).unwrap(),
        _ => DrapingPlan::parse(REFINED_SHEET2).unwrap(),
    }
}

/// Simulated logs of the reference plans with the reference correction
/// counts written over the simulated ones; returns the log paths.
pub fn write_reference_fixtures(dir: &Path) -> Vec<PathBuf> {
    let params = GroundTruthParams::default();
    let mut out = Vec::new();
    for row in &REFERENCE_TRIALS {
        let spec = SheetSpec::builtin(row.sheet).unwrap();
        let geom = spec.geometry.clone();
        let gen = move |s: &SheetState, n: u32| generate_refinement_paths(s, n, &geom, 15.0).map(|g| g.paths);
        let plan = table_plan(row.sheet, row.plan);
        let (role, cs) = if row.plan == "refined" {
            (PlanRole::Refined, ConstraintSet::layup_default())
        } else {
            (PlanRole::Initial, ConstraintSet::initial_plans())
        };
        for (i, &(cycles, paths)) in row.trials.iter().enumerate() {
            let seed = i as u64 + 1;
            let opts = ExperimentOptions {
                role,
                keep_captures: false,
            };
            let mut log = run_experiment(&plan, &spec, &params, &cs, seed, &gen, &opts).unwrap();
            log.correction_cycles = cycles;
            log.correction_paths = paths;
            log.total_paths = log.plan_paths + paths;
            let path = cli::log_file_name(dir, row.sheet, &plan.name, seed);
            io::write_log(&path, &log).unwrap();
            out.push(path);
        }
    }
    out
}

pub fn run_cli(args: &[&str]) -> String {
    use clap::Parser;
    let cli = Cli::try_parse_from(std::iter::once("layup").chain(args.iter().copied())).unwrap();
    let mut buf = Vec::new();
    cli::run(&cli, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

/// One full sheet1 run through every command; returns each output file
/// (relative name, bytes) in a fixed order.
pub fn sheet1_pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let logs = dir.join("logs");
    for plan in ["d1.plan", "d2.plan"] {
        run_cli(&[
            "simulate",
            &s(&data(plan)),
            "--sheet",
            "sheet1",
            "--seed",
            "1",
            "2",
            "3",
            "--out",
            &s(&logs),
        ]);
    }
    let initial: Vec<String> = ["D1", "D2"]
        .iter()
        .flat_map(|p| (1..=3).map(move |seed| (p, seed)))
        .map(|(p, seed)| s(&cli::log_file_name(&logs, "sheet1", p, seed)))
        .collect();
    let model = s(&dir.join("model.json"));
    let mut learn = vec!["learn", "-o", &model];
    learn.extend(initial.iter().map(String::as_str));
    run_cli(&learn);
    let plans = dir.join("plans");
    run_cli(&["refine", &model, "--from-log", &initial[0], "--out", &s(&plans)]);
    run_cli(&[
        "evaluate",
        &s(&plans.join("refined.plan")),
        "--seed",
        "1",
        "2",
        "3",
        "--out",
        &s(&logs),
    ]);
    let mut all = initial.clone();
    all.extend((1..=3).map(|seed| s(&cli::log_file_name(&logs, "sheet1", "refined", seed))));
    let report = s(&dir.join("report"));
    let mut rep = vec!["report", "--out", &report];
    rep.extend(all.iter().map(String::as_str));
    run_cli(&rep);

    let mut files = Vec::new();
    for sub in ["logs", "plans", "report"] {
        let mut names: Vec<PathBuf> = fs::read_dir(dir.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        names.sort();
        for p in names {
            files.push((
                p.strip_prefix(dir).unwrap().display().to_string(),
                fs::read(&p).unwrap(),
            ));
        }
    }
    files.push(("model.json".into(), fs::read(dir.join("model.json")).unwrap()));
    files
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `<hash>  <name>` lines, as `sha256sum` writes them.
pub fn manifest(files: &[(String, Vec<u8>)]) -> String {
    files.iter().map(|(n, b)| format!("{}  {n}\n", sha256_hex(b))).collect()
}

// Straight from the definitions, sharing nothing with the library.
#[allow(clippy::needless_range_loop)]
pub fn rel_ok(kinds: &[ActionKind], c: &RelConstraint) -> bool {
    for p in 0..kinds.len() {
        if kinds[p] != c.alpha {
            continue;
        }
        let mut found = false;
        for q in 0..p {
            if kinds[q] != c.beta {
                continue;
            }
            let g = (p - q) as i64;
            let l = i64::from(c.lambda);
            let ok = match c.gamma {
                Relation::Greater => g > l,
                Relation::Equal => g == l,
                Relation::Less => g <= l,
            };
            if ok {
                found = true;
            }
        }
        if !found {
            return false;
        }
    }
    true
}

pub fn abs_ok(kinds: &[ActionKind], c: &AbsConstraint) -> bool {
    let mut n = 0i64;
    for k in kinds {
        if *k == c.alpha {
            n += 1;
        }
    }
    let l = i64::from(c.lambda);
    match c.gamma {
        Relation::Greater => n > l,
        Relation::Equal => n == l,
        Relation::Less => n < l,
    }
}

pub fn oracle_flags(kinds: &[ActionKind], cs: &ConstraintSet) -> Vec<bool> {
    cs.rel
        .iter()
        .map(|c| !rel_ok(kinds, c))
        .chain(cs.abs.iter().map(|c| !abs_ok(kinds, c)))
        .collect()
}
