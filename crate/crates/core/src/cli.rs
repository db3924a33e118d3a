//! The `layup` command line: simulate, learn, refine, evaluate, report.
//!
//! Commands write their human-readable output to the supplied writer and
//! their artifacts under `--out` (default: the current directory).

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::effectiveness::aggregate;
use crate::io::{self, RunConfig};
use crate::plan::ConstraintSet;
use crate::report::{Baseline, Report};
use crate::search::{generate_refinement_paths, refine_plan, SearchConfig};
use crate::sheet_state::{build_state, SheetState};
use crate::simulator::{
    init_sheet, render_capture, run_experiment, ExperimentLog, ExperimentOptions, GroundTruthParams, PathGeometry,
    PlanRole, SheetSpec,
};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "layup",
    version,
    about = "Draping-plan refinement for robotic composite layup"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an initial plan on the simulator, one log per seed.
    Simulate(SimulateArgs),
    /// Aggregate experiment logs into an effectiveness model.
    Learn(LearnArgs),
    /// Search for a refined plan.
    Refine(RefineArgs),
    /// Run a refined plan on the simulator, one log per seed.
    Evaluate(SimulateArgs),
    /// Per-trial and per-plan path statistics from logs.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seeds; repeat or list several. Overrides the config's seeds.
    #[arg(long = "seed", num_args = 1..)]
    pub seeds: Vec<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Built-in sheet (`sheet1`, `sheet2`).
    #[arg(long)]
    pub sheet: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub plan: PathBuf,
    #[command(flatten)]
    pub common: Common,
    /// Also write the rendered captures next to each log.
    #[arg(long)]
    pub keep_captures: bool,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    /// Model file to write.
    #[arg(long, short, default_value = "model.json")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    pub model: PathBuf,
    #[command(flatten)]
    pub common: Common,
    /// Initial capture: a captures JSON-lines file, first frame used.
    #[arg(long, conflicts_with = "from_log")]
    pub capture: Option<PathBuf>,
    /// Take the initial state from the first step of an experiment log.
    #[arg(long)]
    pub from_log: Option<PathBuf>,
    /// Name of the refined plan.
    #[arg(long, default_value = "refined")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    /// Compare refined plans with this initial plan instead of the best one.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Directory for `report.txt` and `report.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit status for a failed command: 2 for bad input, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_input_error() {
        2
    } else {
        1
    }
}

struct Resolved {
    spec: SheetSpec,
    params: GroundTruthParams,
    constraints: Option<ConstraintSet>,
    search: SearchConfig,
    seeds: Vec<u64>,
    out: PathBuf,
}

fn resolve(common: &Common) -> Result<Resolved> {
    let cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let sheet = common.sheet.clone().or(cfg.sheet).unwrap_or_else(|| "sheet1".into());
    let params = match &cfg.params {
        Some(p) => io::load_params(p)?,
        None => GroundTruthParams::default(),
    };
    let constraints = cfg.constraints.as_deref().map(io::load_constraints).transpose()?;
    let search = match &cfg.search {
        Some(p) => io::load_search_config(p)?,
        None => SearchConfig::default(),
    };
    let seeds = if common.seeds.is_empty() {
        cfg.seeds
    } else {
        common.seeds.clone()
    };
    let out = common.out.clone().or(cfg.out).unwrap_or_else(|| PathBuf::from("."));
    Ok(Resolved {
        spec: SheetSpec::builtin(&sheet)?,
        params,
        constraints,
        search,
        seeds,
        out,
    })
}

fn file_stem_safe(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// `<out>/<sheet>-<plan>-s<seed>.jsonl`
pub fn log_file_name(out: &Path, sheet: &str, plan: &str, seed: u64) -> PathBuf {
    out.join(format!(
        "{}-{}-s{seed}.jsonl",
        file_stem_safe(sheet),
        file_stem_safe(plan)
    ))
}

fn run_plan(args: &SimulateArgs, role: PlanRole, w: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let r = resolve(&args.common)?;
    if r.seeds.is_empty() {
        return Err(Error::Config(
            "at least one seed is required (--seed or `seeds` in the config)".into(),
        ));
    }
    let plan = io::load_plan(&args.plan)?;
    let cs = r.constraints.clone().unwrap_or_else(|| match role {
        PlanRole::Initial => ConstraintSet::initial_plans(),
        PlanRole::Refined => ConstraintSet::layup_default(),
    });
    let geom = r.spec.geometry.clone();
    let half_width = r.params.roller_half_width;
    let gen = move |s: &SheetState, n: u32| -> Result<Vec<PathGeometry>> {
        generate_refinement_paths(s, n, &geom, half_width).map(|g| g.paths)
    };
    let opts = ExperimentOptions {
        role,
        keep_captures: args.keep_captures,
    };
    let mut written = Vec::new();
    for &seed in &r.seeds {
        let log = run_experiment(&plan, &r.spec, &r.params, &cs, seed, &gen, &opts)?;
        let path = log_file_name(&r.out, &r.spec.name, &plan.name, seed);
        io::write_log(&path, &log)?;
        writeln!(
            w,
            "{}: seed {seed}, {} plan paths, {} correction cycles, {} correction paths, {} total",
            path.display(),
            log.plan_paths,
            log.correction_cycles,
            log.correction_paths,
            log.total_paths
        )?;
        written.push(path);
    }
    Ok(written)
}

fn load_logs(paths: &[PathBuf]) -> Result<Vec<ExperimentLog>> {
    paths
        .iter()
        .map(|p| {
            io::load_log(p).map_err(|e| match e {
                Error::CorruptLog { record, message } => Error::CorruptLog {
                    record,
                    message: format!("{}: {message}", p.display()),
                },
                other => other,
            })
        })
        .collect()
}

fn learn(args: &LearnArgs, w: &mut dyn Write) -> Result<()> {
    let logs = load_logs(&args.logs)?;
    let model = aggregate(&logs)?;
    io::write_text(&args.output, &model.to_json()?)?;
    writeln!(
        w,
        "{}: {} experiments, {} transitions, {} buckets",
        args.output.display(),
        model.experiments,
        model.sample_count(),
        model.buckets().count()
    )?;
    for (key, bucket) in model.buckets() {
        let n = bucket.samples().len();
        let note = if n == 1 { "  (single sample, zero variance)" } else { "" };
        writeln!(w, "  {key}: {n}{note}")?;
    }
    Ok(())
}

fn initial_state(args: &RefineArgs, r: &Resolved) -> Result<SheetState> {
    if let Some(p) = &args.from_log {
        let log = io::load_log(p)?;
        return log
            .steps
            .first()
            .and_then(|s| s.state_before.clone())
            .ok_or_else(|| Error::NoData(format!("{} has no initial state", p.display())));
    }
    let frame = match &args.capture {
        Some(p) => io::read_captures(p)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::NoData(format!("{} holds no capture", p.display())))?,
        None => {
            // no capture given: render one from the sheet at the first seed
            let seed = r.seeds.first().copied().unwrap_or(0);
            let mut sim = init_sheet(&r.spec, &r.params, seed);
            render_capture(&mut sim, &r.spec, &r.params)
        }
    };
    Ok(build_state(
        &frame,
        &r.spec.geometry,
        r.params.h_min,
        r.params.link_radius,
    ))
}

fn refine(args: &RefineArgs, w: &mut dyn Write) -> Result<PathBuf> {
    let r = resolve(&args.common)?;
    let model = io::load_model(&args.model)?;
    let initial = initial_state(args, &r)?;
    let cs = r.constraints.clone().unwrap_or_else(ConstraintSet::layup_default);
    let mut refined = refine_plan(&initial, &model, &cs, &r.search)?;
    refined.plan.name = args.name.clone();
    let plan_path = r.out.join(format!("{}.plan", file_stem_safe(&args.name)));
    io::write_text(&plan_path, &refined.plan.emit())?;
    let audit_path = r.out.join(format!("{}.audit.json", file_stem_safe(&args.name)));
    io::write_text(&audit_path, &serde_json::to_string_pretty(&refined.audit)?)?;
    writeln!(
        w,
        "{}: {} actions, {} path-equivalents, stop {:?}",
        plan_path.display(),
        refined.plan.len(),
        refined.plan.path_equivalents(),
        refined.audit.stop
    )?;
    write!(w, "{}", refined.plan.emit())?;
    Ok(plan_path)
}

fn report(args: &ReportArgs, w: &mut dyn Write) -> Result<()> {
    let logs = load_logs(&args.logs)?;
    let baseline = args.baseline.clone().map(Baseline::Named).unwrap_or_default();
    let rep = Report::from_logs(&logs, &baseline);
    let text = rep.to_text();
    write!(w, "{text}")?;
    if let Some(out) = &args.out {
        io::write_text(&out.join("report.txt"), &text)?;
        io::write_text(&out.join("report.json"), &rep.to_json())?;
    }
    Ok(())
}

pub fn run(cli: &Cli, w: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => run_plan(a, PlanRole::Initial, w).map(drop),
        Command::Evaluate(a) => run_plan(a, PlanRole::Refined, w).map(drop),
        Command::Learn(a) => learn(a, w),
        Command::Refine(a) => refine(a, w).map(drop),
        Command::Report(a) => report(a, w),
    }
}
