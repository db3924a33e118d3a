//! Refined-plan search.
//!
//! Plans are scored by `J = Σ (c(aᵢ) + f(Xᵢ)) + f(X_N)`, where `Xᵢ` is the
//! predicted state after action `i`, `c` the action cost and `f` the state
//! utility; the trailing `f(X_N)` prices what the correction controller will
//! have to fix. Actions without data add `w_unk` each. The search commits one
//! action at a time: it ranks feasible actions by their one-step score, keeps
//! the best `b_f`, values each by a depth-`d_f` lookahead, and commits the
//! cheapest. The end action is terminal and is only offered once the plan
//! with it satisfies every constraint.

use std::cell::RefCell;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::effectiveness::{effectiveness_score, propagate, EffectivenessModel, PropagationMode};
use crate::geometry::{self, Vec2};
use crate::plan::{
    prefix_feasible, validate, validate_kinds, Action, ActionKind, ConstraintSet, DrapingPlan, DEFAULT_PATH_COUNT,
};
use crate::sheet_state::{SheetGeometry, SheetState};
use crate::simulator::PathGeometry;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub w_h: f64,
    pub w_area: f64,
    pub w_sigma: f64,
    /// Penalty per action that some active sector has no data for.
    pub w_unk: f64,
    pub c_path: f64,
    /// Cost of each pass of a refinement action.
    pub c_refine_per_path: f64,
    pub c_peel: f64,
    pub c_capture: f64,
    pub c_end: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            w_h: 20_000.0,
            w_area: 20.0,
            w_sigma: 0.0,
            w_unk: 0.5,
            c_path: 1.0,
            c_refine_per_path: 1.0,
            c_peel: 0.2,
            c_capture: 0.2,
            c_end: 0.0,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_h,
            self.w_area,
            self.w_sigma,
            self.w_unk,
            self.c_path,
            self.c_refine_per_path,
            self.c_peel,
            self.c_capture,
            self.c_end,
        ];
        if all.iter().all(|w| *w >= 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("cost weights must be finite and non-negative".into()))
        }
    }
}

pub fn action_cost(a: &Action, w: &CostWeights) -> f64 {
    match *a {
        Action::Path(_) => w.c_path,
        Action::Refinement(n) => w.c_refine_per_path * f64::from(n),
        Action::Peel => w.c_peel,
        Action::Capture => w.c_capture,
        Action::End => w.c_end,
    }
}

/// `f(X)`: per active sector `w_h·max(0, h) + w_area·a·b + w_σ·(tr Σ₁ + tr Σ₂)`,
/// summed and divided by the sheet area. Compacted sectors add nothing.
pub fn state_utility(x: &SheetState, w: &CostWeights) -> f64 {
    let sum: f64 = x
        .sectors
        .iter()
        .filter(|s| !s.is_sentinel())
        .map(|s| {
            w.w_h * s.height().max(0.0)
                + w.w_area * s.mu2[0] * s.mu2[1]
                + w.w_sigma * (geometry::trace(&s.sigma1) + geometry::trace(&s.sigma2))
        })
        .sum();
    sum / x.geometry.area()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Branching factor; `usize::MAX` expands every feasible action.
    pub b_f: usize,
    pub d_f: usize,
    pub horizon: usize,
    pub weights: CostWeights,
    /// Stop committing once no action improves `f` by at least this much;
    /// `None` never stops early.
    pub epsilon_conv: Option<f64>,
    pub mode: PropagationMode,
    pub path_count: u32,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            b_f: 4,
            d_f: 3,
            horizon: 20,
            weights: CostWeights::default(),
            epsilon_conv: Some(0.1),
            mode: PropagationMode::Expectation,
            path_count: DEFAULT_PATH_COUNT,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b_f == 0 || self.d_f == 0 || self.horizon == 0 || self.path_count == 0 {
            return Err(Error::Config(
                "b_f, d_f, horizon and path count must be positive".into(),
            ));
        }
        if let Some(e) = self.epsilon_conv {
            if e.is_nan() || e < 0.0 {
                return Err(Error::Config("epsilon_conv must be non-negative".into()));
            }
        }
        self.weights.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SearchConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchNode {
    pub state: SheetState,
    pub prefix: Vec<Action>,
    /// `Σ (c(aᵢ) + f(Xᵢ))` over the prefix plus `w_unk` per unmodeled step.
    pub cost: f64,
    pub unmodeled: u32,
}

impl SearchNode {
    pub fn root(state: SheetState) -> Self {
        SearchNode {
            state,
            prefix: Vec::new(),
            cost: 0.0,
            unmodeled: 0,
        }
    }

    /// Cost of stopping here: accumulated cost plus the terminal utility.
    pub fn value(&self, w: &CostWeights) -> f64 {
        self.cost + state_utility(&self.state, w)
    }

    fn kinds(&self) -> Vec<ActionKind> {
        self.prefix.iter().map(|a| a.kind()).collect()
    }

    fn is_terminal(&self) -> bool {
        self.prefix.last() == Some(&Action::End)
    }
}

fn mix_seed(seed: u64, depth: usize, action: &Action) -> u64 {
    let (r, arg) = action.tie_rank();
    let mut z = seed
        ^ (depth as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (u64::from(r) << 40 | u64::from(arg)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The planner's search context: model, constraints, configuration and a
/// cache of prefix feasibility (it depends only on action kinds).
pub struct Planner<'a> {
    pub model: &'a EffectivenessModel,
    pub cs: &'a ConstraintSet,
    pub cfg: &'a SearchConfig,
    feasible: RefCell<HashMap<Vec<ActionKind>, bool>>,
}

impl<'a> Planner<'a> {
    pub fn new(model: &'a EffectivenessModel, cs: &'a ConstraintSet, cfg: &'a SearchConfig) -> Self {
        Planner {
            model,
            cs,
            cfg,
            feasible: RefCell::new(HashMap::new()),
        }
    }

    fn is_feasible(&self, kinds: &[ActionKind]) -> bool {
        if kinds.len() > self.cfg.horizon {
            return false;
        }
        if let Some(&v) = self.feasible.borrow().get(kinds) {
            return v;
        }
        let v = prefix_feasible(kinds, self.cs, self.cfg.horizon).unwrap_or(false);
        self.feasible.borrow_mut().insert(kinds.to_vec(), v);
        v
    }

    /// Refinement size at a node: its active sector count, at least one.
    pub fn refinement_size(state: &SheetState) -> u32 {
        (state.active_sector_count() as u32).max(1)
    }

    /// Every action allowed after the node's prefix, in tie-break order.
    pub fn candidates(&self, node: &SearchNode) -> Vec<Action> {
        if node.is_terminal() {
            return Vec::new();
        }
        let mut kinds = node.kinds();
        let mut out = Vec::new();
        let mut all: Vec<Action> = (1..=self.cfg.path_count).map(Action::Path).collect();
        all.extend([
            Action::Peel,
            Action::Capture,
            Action::Refinement(Self::refinement_size(&node.state)),
            Action::End,
        ]);
        for a in all {
            kinds.push(a.kind());
            let ok = if a == Action::End {
                kinds.len() <= self.cfg.horizon && validate_kinds(&kinds, self.cs).is_empty()
            } else {
                self.is_feasible(&kinds)
            };
            kinds.pop();
            if ok {
                out.push(a);
            }
        }
        out
    }

    pub fn child(&self, node: &SearchNode, a: Action) -> SearchNode {
        let mode = match self.cfg.mode {
            PropagationMode::Expectation => PropagationMode::Expectation,
            PropagationMode::Sampled { seed } => PropagationMode::Sampled {
                seed: mix_seed(seed, node.prefix.len(), &a),
            },
        };
        let next = propagate(&node.state, &a, self.model, mode);
        let w = &self.cfg.weights;
        let penalty = if next.unmodeled { w.w_unk } else { 0.0 };
        let cost = node.cost + action_cost(&a, w) + state_utility(&next.state, w) + penalty;
        let mut prefix = node.prefix.clone();
        prefix.push(a);
        SearchNode {
            state: next.state,
            prefix,
            cost,
            unmodeled: node.unmodeled + u32::from(next.unmodeled),
        }
    }

    /// Up to `b_f` feasible children, best one-step score first; equal scores
    /// fall back to the action order.
    pub fn expand(&self, node: &SearchNode) -> Vec<(Action, f64)> {
        let w = &self.cfg.weights;
        let mut scored: Vec<(Action, f64)> = self
            .candidates(node)
            .into_iter()
            .map(|a| {
                let s = effectiveness_score(&a, &node.state, self.model, w) + action_cost(&a, w);
                (a, s)
            })
            .collect();
        scored.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.tie_rank().cmp(&y.0.tie_rank())));
        scored.truncate(self.cfg.b_f);
        scored
    }

    /// Minimum of `cost + f` over the leaves of the depth-`depth` subtree;
    /// nodes without feasible children are leaves wherever they occur.
    pub fn lookahead_value(&self, node: &SearchNode, depth: usize) -> f64 {
        if depth == 0 {
            return node.value(&self.cfg.weights);
        }
        let children = self.expand(node);
        if children.is_empty() {
            return node.value(&self.cfg.weights);
        }
        children
            .into_iter()
            .map(|(a, _)| self.lookahead_value(&self.child(node, a), depth - 1))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn expand(
    node: &SearchNode,
    model: &EffectivenessModel,
    cs: &ConstraintSet,
    cfg: &SearchConfig,
) -> Vec<SearchNode> {
    let p = Planner::new(model, cs, cfg);
    p.expand(node).into_iter().map(|(a, _)| p.child(node, a)).collect()
}

pub fn lookahead_value(node: &SearchNode, model: &EffectivenessModel, cs: &ConstraintSet, cfg: &SearchConfig) -> f64 {
    Planner::new(model, cs, cfg).lookahead_value(node, cfg.d_f)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EndCommitted,
    Horizon,
    Converged,
    NoFeasibleAction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub action: Action,
    pub score: f64,
    pub lookahead: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditStep {
    pub position: usize,
    pub chosen: Action,
    pub candidates: Vec<CandidateScore>,
    pub utility_after: f64,
}

/// Per-step record of a search, written next to the refined plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchAudit {
    pub steps: Vec<AuditStep>,
    pub stop: StopReason,
    /// Actions appended after the search stopped to satisfy the constraints.
    pub completion: Vec<Action>,
    pub initial_utility: f64,
    pub cost: f64,
    pub unmodeled: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Refined {
    pub plan: DrapingPlan,
    pub audit: SearchAudit,
}

/// Names the constraint that makes `cs` unsatisfiable within `horizon`.
fn binding_constraint(cs: &ConstraintSet, horizon: usize) -> String {
    let mut acc = ConstraintSet::default();
    for c in &cs.rel {
        acc.rel.push(*c);
        if !prefix_feasible(&[], &acc, horizon).unwrap_or(false) {
            return format!("rel {c}");
        }
    }
    for c in &cs.abs {
        acc.abs.push(*c);
        if !prefix_feasible(&[], &acc, horizon).unwrap_or(false) {
            return format!("abs {c}");
        }
    }
    "the combined constraint set".into()
}

/// Kind order used for completion suffixes: passes, peel, refinement,
/// capture, end.
fn completion_rank(k: ActionKind) -> u8 {
    match k {
        ActionKind::Path => 0,
        ActionKind::Peel => 1,
        ActionKind::Refinement => 2,
        ActionKind::Capture => 3,
        ActionKind::End => 4,
    }
}

impl Planner<'_> {
    /// Cheapest shortest kind sequence that makes the prefix valid.
    fn completion_kinds(&self, prefix: &[ActionKind]) -> Option<Vec<ActionKind>> {
        let room = self.cfg.horizon.saturating_sub(prefix.len());
        let w = &self.cfg.weights;
        let kind_cost = |k: ActionKind| match k {
            ActionKind::Path => w.c_path,
            ActionKind::Refinement => w.c_refine_per_path,
            ActionKind::Peel => w.c_peel,
            ActionKind::Capture => w.c_capture,
            ActionKind::End => w.c_end,
        };
        let mut order = ActionKind::ALL.to_vec();
        order.sort_by_key(|&k| completion_rank(k));
        for len in 0..=room {
            let mut best: Option<(f64, Vec<u8>, Vec<ActionKind>)> = None;
            let mut buf = prefix.to_vec();
            self.completions(&mut buf, prefix.len(), len, &order, &mut |suffix| {
                let cost: f64 = suffix.iter().map(|&k| kind_cost(k)).sum();
                let ranks: Vec<u8> = suffix.iter().map(|&k| completion_rank(k)).collect();
                let better = match &best {
                    None => true,
                    Some((c, r, _)) => cost < *c - 1e-9 || ((cost - *c).abs() <= 1e-9 && ranks < *r),
                };
                if better {
                    best = Some((cost, ranks, suffix.to_vec()));
                }
            });
            if let Some((_, _, s)) = best {
                return Some(s);
            }
        }
        None
    }

    fn completions(
        &self,
        buf: &mut Vec<ActionKind>,
        start: usize,
        left: usize,
        order: &[ActionKind],
        found: &mut dyn FnMut(&[ActionKind]),
    ) {
        if left == 0 {
            if validate_kinds(buf, self.cs).is_empty() {
                found(&buf[start..]);
            }
            return;
        }
        // the end action closes the plan
        if buf.len() > start && buf.last() == Some(&ActionKind::End) {
            return;
        }
        for &k in order {
            buf.push(k);
            if self.is_feasible(buf) {
                self.completions(buf, start, left - 1, order, found);
            }
            buf.pop();
        }
    }
}

/// Searches for a low-cost plan from `initial`.
pub fn refine_plan(
    initial: &SheetState,
    model: &EffectivenessModel,
    cs: &ConstraintSet,
    cfg: &SearchConfig,
) -> Result<Refined> {
    cfg.validate()?;
    initial.validate()?;
    if model.is_empty() {
        return Err(Error::NoData("the effectiveness model holds no transitions".into()));
    }
    if model.sector_count != initial.sectors.len() {
        return Err(Error::Incompatible(format!(
            "model has {} sectors, state has {}",
            model.sector_count,
            initial.sectors.len()
        )));
    }
    if !prefix_feasible(&[], cs, cfg.horizon)? {
        return Err(Error::SearchFailed(format!(
            "no valid plan within horizon {}: {} cannot be met",
            cfg.horizon,
            binding_constraint(cs, cfg.horizon)
        )));
    }
    let planner = Planner::new(model, cs, cfg);
    let w = &cfg.weights;
    let mut node = SearchNode::root(initial.clone());
    let mut steps = Vec::new();
    let stop = loop {
        if node.is_terminal() {
            break StopReason::EndCommitted;
        }
        if node.prefix.len() >= cfg.horizon {
            break StopReason::Horizon;
        }
        let children = planner.expand(&node);
        if children.is_empty() {
            break StopReason::NoFeasibleAction;
        }
        let here = state_utility(&node.state, w);
        if let Some(eps) = cfg.epsilon_conv {
            let best_gain = planner
                .candidates(&node)
                .into_iter()
                .filter(|a| *a != Action::End)
                .map(|a| here - state_utility(&planner.child(&node, a).state, w))
                .fold(f64::NEG_INFINITY, f64::max);
            if best_gain < eps {
                break StopReason::Converged;
            }
        }
        let mut candidates = Vec::with_capacity(children.len());
        let mut best: Option<(f64, SearchNode)> = None;
        for (a, score) in children {
            let child = planner.child(&node, a);
            let v = planner.lookahead_value(&child, cfg.d_f);
            candidates.push(CandidateScore {
                action: a,
                score,
                lookahead: v,
            });
            if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                best = Some((v, child));
            }
        }
        let (_, chosen) = best.expect("non-empty expansion");
        steps.push(AuditStep {
            position: chosen.prefix.len(),
            chosen: *chosen.prefix.last().expect("child has an action"),
            candidates,
            utility_after: state_utility(&chosen.state, w),
        });
        node = chosen;
    };

    let mut completion = Vec::new();
    if !validate(
        &DrapingPlan {
            name: String::new(),
            actions: node.prefix.clone(),
        },
        cs,
    )
    .is_empty()
    {
        let kinds = planner.completion_kinds(&node.kinds()).ok_or_else(|| {
            Error::SearchFailed(format!(
                "no completion of the committed prefix within horizon {}: {}",
                cfg.horizon,
                binding_constraint(cs, cfg.horizon)
            ))
        })?;
        for k in kinds {
            let a = instantiate(&planner, &node, k);
            completion.push(a);
            node = planner.child(&node, a);
        }
    }
    let plan = DrapingPlan::new("refined", node.prefix.clone())?;
    let violations = validate(&plan, cs);
    if !violations.is_empty() {
        return Err(Error::SearchFailed(format!(
            "search produced an invalid plan: {}",
            violations[0]
        )));
    }
    Ok(Refined {
        plan,
        audit: SearchAudit {
            steps,
            stop,
            completion,
            initial_utility: state_utility(initial, w),
            cost: node.value(w),
            unmodeled: node.unmodeled,
        },
    })
}

/// Concrete action for a completion kind; passes take the best-scoring index.
fn instantiate(planner: &Planner<'_>, node: &SearchNode, k: ActionKind) -> Action {
    let w = &planner.cfg.weights;
    match k {
        ActionKind::Path => (1..=planner.cfg.path_count)
            .map(Action::Path)
            .map(|a| (effectiveness_score(&a, &node.state, planner.model, w), a))
            .fold(None::<(f64, Action)>, |best, cur| match best {
                Some(b) if b.0 <= cur.0 => Some(b),
                _ => Some(cur),
            })
            .map(|(_, a)| a)
            .unwrap_or(Action::Path(1)),
        ActionKind::Peel => Action::Peel,
        ActionKind::Capture => Action::Capture,
        ActionKind::End => Action::End,
        ActionKind::Refinement => Action::Refinement(Planner::refinement_size(&node.state)),
    }
}

/// Passes produced for one refinement action.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedPaths {
    pub paths: Vec<PathGeometry>,
    /// Every sector was compacted, so the passes are harmless sweeps.
    pub idle: bool,
}

fn center_sweep(geom: &SheetGeometry, half_width: f64) -> Result<PathGeometry> {
    let (edge, _) = geometry::nearest_edge(&geom.polygon, geom.center);
    let n = geom.polygon.len();
    let (a, b) = (geom.polygon[edge], geom.polygon[(edge + 1) % n]);
    let ab = geometry::sub(b, a);
    let t = (geometry::dot(geometry::sub(geom.center, a), ab) / geometry::dot(ab, ab)).clamp(0.0, 1.0);
    PathGeometry::new(geom.center, geometry::add(a, geometry::scale(ab, t)), half_width)
}

fn sector_pass(geom: &SheetGeometry, c: Vec2, a: f64, theta: f64, half_width: f64) -> Option<PathGeometry> {
    if !geom.contains(c) {
        return None;
    }
    let u = geometry::unit(theta);
    let back = geometry::scale(u, -1.0);
    let tf = geometry::ray_exit(&geom.polygon, c, u)?;
    let tb = geometry::ray_exit(&geom.polygon, c, back)?;
    let (dir, t_out, t_in) = if tf <= tb { (u, tf, tb) } else { (back, tb, tf) };
    let start = geometry::sub(c, geometry::scale(dir, a.max(0.0).min(t_in)));
    let end = geometry::add(c, geometry::scale(dir, t_out));
    PathGeometry::new(start, end, half_width).ok()
}

/// Passes for a `(refinement, n)` action: the most severe active sectors
/// (by `h·a·b`) each get a pass along their mean major axis, starting `a`
/// behind the mean centroid and rolling out to the nearer boundary.
/// Sectors are reused in order when `n` exceeds the active count.
pub fn generate_refinement_paths(
    state: &SheetState,
    n: u32,
    geom: &SheetGeometry,
    half_width: f64,
) -> Result<GeneratedPaths> {
    if n == 0 {
        return Err(Error::IllPosed("a refinement needs at least one pass".into()));
    }
    let mut active: Vec<_> = state.sectors.iter().filter(|s| !s.is_sentinel()).collect();
    active.sort_by(|x, y| {
        let sev = |s: &crate::sheet_state::SectorGaussians| s.height() * s.mu2[0] * s.mu2[1];
        sev(y).total_cmp(&sev(x)).then(x.sector.cmp(&y.sector))
    });
    let passes: Vec<PathGeometry> = active
        .iter()
        .filter_map(|s| sector_pass(geom, [s.mu1[0], s.mu1[1]], s.mu2[0], s.mu2[2], half_width))
        .collect();
    if passes.is_empty() {
        let sweep = center_sweep(geom, half_width)?;
        return Ok(GeneratedPaths {
            paths: vec![sweep; n as usize],
            idle: true,
        });
    }
    Ok(GeneratedPaths {
        paths: (0..n as usize).map(|i| passes[i % passes.len()]).collect(),
        idle: false,
    })
}
