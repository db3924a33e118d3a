//! Draping plans, their ordering/count constraints, and the plan text format.
//!
//! A plan file holds one action per line, `(kind, arg)` or `(kind,)`, with
//! optional `name: <name>` header and `#` comments:
//!
//! ```text
//! name: D1
//! (path, 15)
//! (peel,)
//! (refinement, 6)
//! (capture,)
//! (end,)
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of geometry-planner paths available to path actions.
pub const DEFAULT_PATH_COUNT: u32 = 16;

/// Longest extension enumerated exactly by [`prefix_feasible`].
pub const EXACT_FEASIBILITY_SPAN: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Path,
    Peel,
    Capture,
    End,
    Refinement,
}

impl ActionKind {
    pub const ALL: [ActionKind; 5] = [
        ActionKind::Path,
        ActionKind::Peel,
        ActionKind::Capture,
        ActionKind::End,
        ActionKind::Refinement,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Path => "path",
            ActionKind::Peel => "peel",
            ActionKind::Capture => "capture",
            ActionKind::End => "end",
            ActionKind::Refinement => "refinement",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "path" | "p" => Ok(ActionKind::Path),
            "peel" | "o" => Ok(ActionKind::Peel),
            "capture" | "c" => Ok(ActionKind::Capture),
            "end" | "e" => Ok(ActionKind::End),
            "refinement" | "refine" | "t" => Ok(ActionKind::Refinement),
            other => Err(format!("unknown action kind `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "arg", rename_all = "lowercase")]
pub enum Action {
    /// Geometry-planner path by index, `1..=n`.
    Path(u32),
    Peel,
    Capture,
    End,
    /// Insert this many paths generated from the current state estimate.
    Refinement(u32),
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Path(_) => ActionKind::Path,
            Action::Peel => ActionKind::Peel,
            Action::Capture => ActionKind::Capture,
            Action::End => ActionKind::End,
            Action::Refinement(_) => ActionKind::Refinement,
        }
    }

    pub fn arg(&self) -> Option<u32> {
        match *self {
            Action::Path(i) | Action::Refinement(i) => Some(i),
            _ => None,
        }
    }

    /// Number of roller passes this action executes.
    pub fn path_count(&self) -> u32 {
        match *self {
            Action::Path(_) => 1,
            Action::Refinement(n) => n,
            _ => 0,
        }
    }

    /// Total order used for deterministic tie-breaking: path index
    /// ascending, then peel, capture, refinement, end.
    pub fn tie_rank(&self) -> (u8, u32) {
        match *self {
            Action::Path(i) => (0, i),
            Action::Peel => (1, 0),
            Action::Capture => (2, 0),
            Action::Refinement(n) => (3, n),
            Action::End => (4, 0),
        }
    }

    pub fn check_args(&self, path_count: u32) -> Result<(), String> {
        match *self {
            Action::Path(i) if i == 0 || i > path_count => Err(format!("path index {i} outside 1..={path_count}")),
            Action::Refinement(0) => Err("refinement count must be at least 1".into()),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.arg() {
            Some(a) => write!(f, "({}, {})", self.kind(), a),
            None => write!(f, "({},)", self.kind()),
        }
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let inner = s
            .trim()
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| format!("expected `(kind, arg)`, got `{}`", s.trim()))?;
        let mut parts = inner.splitn(2, ',');
        let kind: ActionKind = parts.next().unwrap_or("").parse()?;
        let arg = parts.next().map(str::trim).unwrap_or("");
        let arg = match arg {
            "" | "∅" | "_" | "-" => None,
            a => Some(a.parse::<u32>().map_err(|_| format!("bad argument `{a}`"))?),
        };
        match (kind, arg) {
            (ActionKind::Path, Some(i)) => Ok(Action::Path(i)),
            (ActionKind::Refinement, Some(n)) => Ok(Action::Refinement(n)),
            (ActionKind::Path | ActionKind::Refinement, None) => Err(format!("{kind} requires an integer argument")),
            (k, Some(a)) => Err(format!("{k} takes no argument, got {a}")),
            (ActionKind::Peel, None) => Ok(Action::Peel),
            (ActionKind::Capture, None) => Ok(Action::Capture),
            (ActionKind::End, None) => Ok(Action::End),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrapingPlan {
    pub name: String,
    pub actions: Vec<Action>,
}

impl DrapingPlan {
    pub fn new(name: impl Into<String>, actions: Vec<Action>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::IllPosed("a draping plan needs at least one action".into()));
        }
        Ok(DrapingPlan {
            name: name.into(),
            actions,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn kinds(&self) -> Vec<ActionKind> {
        self.actions.iter().map(Action::kind).collect()
    }

    /// Path-equivalents executed by the plan itself: one per path action plus
    /// `n` per `(refinement, n)`.
    pub fn path_equivalents(&self) -> u32 {
        self.actions.iter().map(Action::path_count).sum()
    }

    pub fn check_args(&self, path_count: u32) -> Result<()> {
        for (i, a) in self.actions.iter().enumerate() {
            a.check_args(path_count).map_err(|m| Error::Parse {
                line: i + 1,
                message: m,
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut name = String::from("plan");
        let mut actions = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(n) = line.strip_prefix("name:") {
                if !actions.is_empty() {
                    return Err(Error::Parse {
                        line: idx + 1,
                        message: "name header must precede the actions".into(),
                    });
                }
                name = n.trim().to_string();
                continue;
            }
            let action = line
                .parse::<Action>()
                .map_err(|message| Error::Parse { line: idx + 1, message })?;
            if let Err(message) = action.check_args(u32::MAX) {
                return Err(Error::Parse { line: idx + 1, message });
            }
            actions.push(action);
        }
        if actions.is_empty() {
            return Err(Error::Parse {
                line: text.lines().count().max(1),
                message: "plan contains no actions".into(),
            });
        }
        Ok(DrapingPlan { name, actions })
    }

    pub fn emit(&self) -> String {
        let mut out = format!("name: {}\n", self.name);
        for a in &self.actions {
            out.push_str(&a.to_string());
            out.push('\n');
        }
        out
    }

    /// Initial plan D₁ for both sheets.
    pub fn expert_d1() -> Self {
        expert("D1", &[15, 9, 5, 13, 3, 7, 11, 1, 2, 4, 6, 8, 10, 12, 14, 16])
    }

    /// Initial plan D₂ for both sheets.
    pub fn expert_d2() -> Self {
        expert("D2", &[3, 11, 7, 15, 1, 9, 5, 13, 2, 4, 6, 8, 10, 12, 14, 16])
    }
}

fn expert(name: &str, paths: &[u32]) -> DrapingPlan {
    let mut actions: Vec<Action> = paths.iter().map(|&i| Action::Path(i)).collect();
    actions.extend([Action::Peel, Action::Capture, Action::End]);
    DrapingPlan {
        name: name.into(),
        actions,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = ">")]
    Greater,
    #[serde(rename = "=")]
    Equal,
    #[serde(rename = "<")]
    Less,
}

impl Relation {
    pub fn symbol(self) -> char {
        match self {
            Relation::Greater => '>',
            Relation::Equal => '=',
            Relation::Less => '<',
        }
    }

    /// Count semantics: strict `>`, exact `=`, strict `<`.
    pub fn count_holds(self, count: u32, lambda: u32) -> bool {
        match self {
            Relation::Greater => count > lambda,
            Relation::Equal => count == lambda,
            Relation::Less => count < lambda,
        }
    }

    /// Positional-gap semantics for relative constraints: `g > λ`, `g = λ`,
    /// or `g ≤ λ` ("within λ actions").
    pub fn gap_holds(self, gap: usize, lambda: u32) -> bool {
        let l = lambda as usize;
        match self {
            Relation::Greater => gap > l,
            Relation::Equal => gap == l,
            Relation::Less => gap <= l,
        }
    }
}

impl FromStr for Relation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            ">" => Ok(Relation::Greater),
            "=" => Ok(Relation::Equal),
            "<" => Ok(Relation::Less),
            o => Err(format!("unknown relation `{o}`")),
        }
    }
}

/// Every occurrence of `alpha` needs an earlier `beta` at a positional gap
/// satisfying `gamma` against `lambda`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelConstraint {
    pub alpha: ActionKind,
    pub beta: ActionKind,
    pub gamma: Relation,
    pub lambda: u32,
}

impl RelConstraint {
    pub fn new(alpha: ActionKind, beta: ActionKind, gamma: Relation, lambda: u32) -> Result<Self> {
        if alpha == beta {
            return Err(Error::Config(format!(
                "relative constraint needs distinct kinds, got {alpha} twice"
            )));
        }
        Ok(RelConstraint {
            alpha,
            beta,
            gamma,
            lambda,
        })
    }
}

impl fmt::Display for RelConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rel ({}, {}, {}, {})",
            self.alpha,
            self.beta,
            self.gamma.symbol(),
            self.lambda
        )
    }
}

/// The number of `alpha` occurrences compares to `lambda` by `gamma`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AbsConstraint {
    pub alpha: ActionKind,
    pub gamma: Relation,
    pub lambda: u32,
}

impl fmt::Display for AbsConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "abs ({}, {}, {})", self.alpha, self.gamma.symbol(), self.lambda)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub rel: Vec<RelConstraint>,
    pub abs: Vec<AbsConstraint>,
}

impl ConstraintSet {
    /// The layup constraints: end comes after at least one path, peel,
    /// capture and refinement; peel and end occur; exactly one refinement and
    /// one capture.
    pub fn layup_default() -> Self {
        use ActionKind::*;
        let rel = [Path, Peel, Capture, Refinement]
            .into_iter()
            .map(|beta| RelConstraint {
                alpha: End,
                beta,
                gamma: Relation::Greater,
                lambda: 0,
            })
            .collect();
        let abs = vec![
            AbsConstraint {
                alpha: Peel,
                gamma: Relation::Greater,
                lambda: 0,
            },
            AbsConstraint {
                alpha: End,
                gamma: Relation::Greater,
                lambda: 0,
            },
            AbsConstraint {
                alpha: Refinement,
                gamma: Relation::Equal,
                lambda: 1,
            },
            AbsConstraint {
                alpha: Capture,
                gamma: Relation::Equal,
                lambda: 1,
            },
        ];
        ConstraintSet { rel, abs }
    }

    /// The layup constraints without the two that mention refinement; the
    /// expert plans that seed the model are checked against this set.
    pub fn initial_plans() -> Self {
        let mut cs = Self::layup_default();
        cs.rel
            .retain(|c| c.alpha != ActionKind::Refinement && c.beta != ActionKind::Refinement);
        cs.abs.retain(|c| c.alpha != ActionKind::Refinement);
        cs
    }

    /// Parses lines `rel (alpha, beta, gamma, lambda)` and
    /// `abs (alpha, gamma, lambda)`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cs = ConstraintSet::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: idx + 1, message };
            let (tag, rest) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| err(format!("expected `rel (...)` or `abs (...)`, got `{line}`")))?;
            let fields: Vec<&str> = rest
                .trim()
                .strip_prefix('(')
                .and_then(|r| r.strip_suffix(')'))
                .ok_or_else(|| err("constraint fields must be parenthesized".into()))?
                .split(',')
                .map(str::trim)
                .collect();
            let lambda = |s: &str| s.parse::<u32>().map_err(|_| err(format!("bad lambda `{s}`")));
            match (tag, fields.as_slice()) {
                ("rel", [a, b, g, l]) => {
                    let c = RelConstraint::new(
                        a.parse().map_err(err)?,
                        b.parse().map_err(err)?,
                        g.parse().map_err(err)?,
                        lambda(l)?,
                    )
                    .map_err(|e| err(e.to_string()))?;
                    cs.rel.push(c);
                }
                ("abs", [a, g, l]) => cs.abs.push(AbsConstraint {
                    alpha: a.parse().map_err(err)?,
                    gamma: g.parse().map_err(err)?,
                    lambda: lambda(l)?,
                }),
                _ => return Err(err(format!("malformed constraint `{line}`"))),
            }
        }
        Ok(cs)
    }

    pub fn emit(&self) -> String {
        let mut out = String::new();
        for c in &self.rel {
            out.push_str(&format!("{c}\n"));
        }
        for c in &self.abs {
            out.push_str(&format!("{c}\n"));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Constraint {
    Rel(RelConstraint),
    Abs(AbsConstraint),
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::Rel(c) => c.fmt(f),
            Constraint::Abs(c) => c.fmt(f),
        }
    }
}

/// A failed constraint and the first 1-based position witnessing the
/// failure (`None` when the plan is too short to show one, e.g. a missing
/// action).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: Constraint,
    pub position: Option<usize>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.position {
            Some(p) => write!(f, "{} fails at position {}", self.constraint, p),
            None => write!(f, "{} fails", self.constraint),
        }
    }
}

fn abs_witness(kinds: &[ActionKind], c: &AbsConstraint) -> Option<Option<usize>> {
    let count = kinds.iter().filter(|&&k| k == c.alpha).count() as u32;
    if c.gamma.count_holds(count, c.lambda) {
        return None;
    }
    // first occurrence beyond what the bound allows, if the count is too high
    let allowed = match c.gamma {
        Relation::Less => c.lambda.saturating_sub(1),
        Relation::Equal => c.lambda,
        Relation::Greater => return Some(None),
    };
    let pos = kinds
        .iter()
        .enumerate()
        .filter(|(_, &k)| k == c.alpha)
        .nth(allowed as usize)
        .map(|(i, _)| i + 1);
    Some(pos)
}

fn rel_witness(kinds: &[ActionKind], c: &RelConstraint) -> Option<usize> {
    kinds.iter().enumerate().find_map(|(p, &k)| {
        if k != c.alpha {
            return None;
        }
        let ok = kinds[..p]
            .iter()
            .enumerate()
            .any(|(q, &kb)| kb == c.beta && c.gamma.gap_holds(p - q, c.lambda));
        (!ok).then_some(p + 1)
    })
}

pub fn check_abs(plan: &DrapingPlan, c: &AbsConstraint) -> bool {
    abs_witness(&plan.kinds(), c).is_none()
}

pub fn check_rel(plan: &DrapingPlan, c: &RelConstraint) -> bool {
    rel_witness(&plan.kinds(), c).is_none()
}

/// Violations of a kind sequence, relative constraints first.
pub fn validate_kinds(kinds: &[ActionKind], cs: &ConstraintSet) -> Vec<Violation> {
    let mut out = Vec::new();
    for c in &cs.rel {
        if let Some(p) = rel_witness(kinds, c) {
            out.push(Violation {
                constraint: Constraint::Rel(*c),
                position: Some(p),
            });
        }
    }
    for c in &cs.abs {
        if let Some(p) = abs_witness(kinds, c) {
            out.push(Violation {
                constraint: Constraint::Abs(*c),
                position: p,
            });
        }
    }
    out
}

pub fn validate(plan: &DrapingPlan, cs: &ConstraintSet) -> Vec<Violation> {
    validate_kinds(&plan.kinds(), cs)
}

/// Whether `prefix` can be extended (possibly by nothing) to a plan of at
/// most `horizon` actions satisfying `cs`.
///
/// Constraints only look at action kinds, so extensions are enumerated over
/// the five kinds. Up to [`EXACT_FEASIBILITY_SPAN`] remaining slots are
/// searched exhaustively; beyond that a necessary-condition screen is used.
pub fn prefix_feasible(prefix: &[ActionKind], cs: &ConstraintSet, horizon: usize) -> Result<bool> {
    if horizon < prefix.len() {
        return Err(Error::IllPosed(format!(
            "horizon {horizon} is shorter than the prefix ({} actions)",
            prefix.len()
        )));
    }
    let remaining = horizon - prefix.len();
    if remaining <= EXACT_FEASIBILITY_SPAN {
        Ok(feasible_exact(prefix, cs, remaining))
    } else {
        Ok(feasible_screened(prefix, cs, remaining))
    }
}

pub fn feasible_exact(prefix: &[ActionKind], cs: &ConstraintSet, remaining: usize) -> bool {
    fn go(buf: &mut Vec<ActionKind>, cs: &ConstraintSet, left: usize) -> bool {
        if validate_kinds(buf, cs).is_empty() {
            return true;
        }
        // dead prefixes stay dead under extension
        if left == 0 || prefix_dead(buf, cs) {
            return false;
        }
        for k in ActionKind::ALL {
            buf.push(k);
            let found = go(buf, cs, left - 1);
            buf.pop();
            if found {
                return true;
            }
        }
        false
    }
    if prefix_dead(prefix, cs) {
        return false;
    }
    let mut buf = prefix.to_vec();
    go(&mut buf, cs, remaining)
}

/// Failures no extension can repair: an `alpha` already placed without a
/// qualifying `beta` (only earlier actions can witness it), or a count that
/// has already passed an `=` / `<` bound.
fn prefix_dead(prefix: &[ActionKind], cs: &ConstraintSet) -> bool {
    cs.rel.iter().any(|c| rel_witness(prefix, c).is_some())
        || cs.abs.iter().any(|c| {
            let count = prefix.iter().filter(|&&k| k == c.alpha).count() as u32;
            match c.gamma {
                Relation::Greater => false,
                Relation::Equal => count > c.lambda,
                Relation::Less => count >= c.lambda,
            }
        })
}

/// Necessary conditions: nothing dead in the prefix, and a lower bound on
/// the actions still required fits in the remaining slots.
pub fn feasible_screened(prefix: &[ActionKind], cs: &ConstraintSet, remaining: usize) -> bool {
    if prefix_dead(prefix, cs) {
        return false;
    }
    let idx = |k: ActionKind| ActionKind::ALL.iter().position(|&x| x == k).unwrap();
    let mut have = [0u32; 5];
    for &k in prefix {
        have[idx(k)] += 1;
    }
    let mut cap = [u32::MAX; 5];
    let mut need = [0u32; 5];
    for c in &cs.abs {
        let i = idx(c.alpha);
        match c.gamma {
            Relation::Greater => need[i] = need[i].max((c.lambda + 1).saturating_sub(have[i])),
            Relation::Equal => {
                need[i] = need[i].max(c.lambda.saturating_sub(have[i]));
                cap[i] = cap[i].min(c.lambda);
            }
            Relation::Less => cap[i] = cap[i].min(c.lambda.saturating_sub(1)),
        }
    }
    // A forced new alpha needs some beta before it; if no beta is placed or
    // forced yet, one more is required.
    loop {
        let mut changed = false;
        for c in &cs.rel {
            let (a, b) = (idx(c.alpha), idx(c.beta));
            if need[a] > 0 && have[b] + need[b] == 0 {
                need[b] = 1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    for i in 0..5 {
        if have[i] + need[i] > cap[i] {
            return false;
        }
    }
    need.iter().map(|&n| n as usize).sum::<usize>() <= remaining
}
