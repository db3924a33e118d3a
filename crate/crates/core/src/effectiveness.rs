//! Action-effectiveness learning.
//!
//! Every executed action is bracketed by two sheet states. For each sector
//! the change of the Gaussian means is a [`DeltaVector`] and the direction of
//! change of the covariance diagonals is a pair of [`SignMatrices`]. Samples
//! are pooled across all experiments per `(action kind, path index, sector)`
//! bucket into an [`EffectivenessModel`], which the search uses to predict
//! how a plan moves the sheet state.

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{fold_pi, trace, wrap_half_pi, Mat3};
use crate::plan::{Action, ActionKind};
use crate::search::{state_utility, CostWeights};
use crate::sheet_state::{SectorGaussians, SheetState, DEFAULT_H_MIN};
use crate::simulator::ExperimentLog;
use crate::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Covariance-diagonal scale applied where a bucket's majority sign says the
/// spread shrinks (`-1`) or grows (`+1`).
pub const SHRINK_FACTOR: f64 = 0.9;
pub const GROW_FACTOR: f64 = 1.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeltaVector {
    pub dx: f64,
    pub dy: f64,
    pub dh: f64,
    pub da: f64,
    pub db: f64,
    pub dtheta: f64,
}

impl DeltaVector {
    pub fn to_array(self) -> [f64; 6] {
        [self.dx, self.dy, self.dh, self.da, self.db, self.dtheta]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        DeltaVector {
            dx: a[0],
            dy: a[1],
            dh: a[2],
            da: a[3],
            db: a[4],
            dtheta: a[5],
        }
    }
}

/// Diagonals of the two 3×3 sign matrices; off-diagonal entries are zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignMatrices {
    pub u1: [i8; 3],
    pub u2: [i8; 3],
}

impl SignMatrices {
    pub fn matrix(diag: [i8; 3]) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for l in 0..3 {
            m[l][l] = f64::from(diag[l]);
        }
        m
    }
}

/// +1 when the argument is positive, −1 otherwise (including zero).
pub fn step_sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else {
        -1
    }
}

pub fn compute_delta(before: &SectorGaussians, after: &SectorGaussians) -> DeltaVector {
    DeltaVector {
        dx: after.mu1[0] - before.mu1[0],
        dy: after.mu1[1] - before.mu1[1],
        dh: after.mu1[2] - before.mu1[2],
        da: after.mu2[0] - before.mu2[0],
        db: after.mu2[1] - before.mu2[1],
        dtheta: wrap_half_pi(after.mu2[2] - before.mu2[2]),
    }
}

pub fn compute_signs(before: &SectorGaussians, after: &SectorGaussians) -> SignMatrices {
    let diag = |a: &Mat3, b: &Mat3| [0, 1, 2].map(|l| step_sign(a[l][l] - b[l][l]));
    SignMatrices {
        u1: diag(&after.sigma1, &before.sigma1),
        u2: diag(&after.sigma2, &before.sigma2),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    pub action: Action,
    pub sector: usize,
    pub delta: DeltaVector,
    pub signs: SignMatrices,
    pub plan: String,
    pub seed: u64,
    /// 1-based position of the action in its plan.
    pub time_index: usize,
}

impl TransitionSample {
    fn order_key(&self) -> (&str, u64, usize, usize) {
        (&self.plan, self.seed, self.time_index, self.sector)
    }
}

/// One sample per `(action, sector)` for every action bracketed by states.
pub fn extract_transitions(log: &ExperimentLog) -> Result<Vec<TransitionSample>> {
    let k = log.sector_count;
    let mut out = Vec::with_capacity(log.steps.len() * k);
    for (record, step) in log.steps.iter().enumerate() {
        let (Some(before), Some(after)) = (&step.state_before, &step.state_after) else {
            continue;
        };
        for (which, s) in [("before", before), ("after", after)] {
            if s.sectors.len() != k {
                return Err(Error::CorruptLog {
                    record: record + 1,
                    message: format!("{which}-state has {} sectors, expected {k}", s.sectors.len()),
                });
            }
            if let Some((i, _)) = s.sectors.iter().enumerate().find(|(i, g)| g.sector != i + 1) {
                return Err(Error::CorruptLog {
                    record: record + 1,
                    message: format!("{which}-state sector at position {} is mislabeled", i + 1),
                });
            }
        }
        for (b, a) in before.sectors.iter().zip(&after.sectors) {
            out.push(TransitionSample {
                action: step.action,
                sector: b.sector,
                delta: compute_delta(b, a),
                signs: compute_signs(b, a),
                plan: log.plan.name.clone(),
                seed: log.seed,
                time_index: step.index,
            });
        }
    }
    Ok(out)
}

/// Model table key. Path actions are keyed by path index; every other kind
/// (including refinement regardless of its count) shares arg 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BucketKey {
    pub kind: ActionKind,
    pub arg: u32,
    pub sector: usize,
}

impl BucketKey {
    pub fn new(action: &Action, sector: usize) -> Self {
        let arg = match *action {
            Action::Path(i) => i,
            _ => 0,
        };
        BucketKey {
            kind: action.kind(),
            arg,
            sector,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad bucket key `{s}`"));
        let inner = s.strip_prefix('(').and_then(|r| r.strip_suffix(')')).ok_or_else(bad)?;
        let parts: Vec<&str> = inner.split('|').collect();
        let [kind, arg, sector] = parts.as_slice() else {
            return Err(bad());
        };
        Ok(BucketKey {
            kind: kind.parse().map_err(|_| bad())?,
            arg: arg.parse().map_err(|_| bad())?,
            sector: sector.parse().map_err(|_| bad())?,
        })
    }
}

impl fmt::Display for BucketKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}|{}|{})", self.kind, self.arg, self.sector)
    }
}

/// Samples of one bucket with cached statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Bucket {
    samples: Vec<TransitionSample>,
    mean: DeltaVector,
    variance: DeltaVector,
    majority: SignMatrices,
}

impl Bucket {
    fn from_samples(mut samples: Vec<TransitionSample>) -> Self {
        samples.sort_by(|a, b| {
            a.order_key().cmp(&b.order_key()).then_with(|| {
                a.delta
                    .to_array()
                    .partial_cmp(&b.delta.to_array())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        let mut b = Bucket {
            samples,
            mean: DeltaVector::default(),
            variance: DeltaVector::default(),
            majority: SignMatrices {
                u1: [-1; 3],
                u2: [-1; 3],
            },
        };
        b.refresh();
        b
    }

    fn refresh(&mut self) {
        let n = self.samples.len() as f64;
        let mut mean = [0.0; 6];
        for s in &self.samples {
            for (m, v) in mean.iter_mut().zip(s.delta.to_array()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; 6];
        if self.samples.len() > 1 {
            for s in &self.samples {
                for ((acc, v), m) in var.iter_mut().zip(s.delta.to_array()).zip(mean) {
                    *acc += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|v| *v /= n - 1.0);
        }
        let vote = |pick: fn(&SignMatrices) -> [i8; 3]| {
            [0, 1, 2].map(|l| {
                let total: i64 = self.samples.iter().map(|s| i64::from(pick(&s.signs)[l])).sum();
                step_sign(total as f64)
            })
        };
        self.majority = SignMatrices {
            u1: vote(|s| s.u1),
            u2: vote(|s| s.u2),
        };
        self.mean = DeltaVector::from_array(mean);
        self.variance = DeltaVector::from_array(var);
    }

    /// Adds a sample and revalidates the caches.
    pub fn insert(&mut self, sample: TransitionSample) {
        let mut samples = std::mem::take(&mut self.samples);
        samples.push(sample);
        *self = Bucket::from_samples(samples);
    }

    pub fn samples(&self) -> &[TransitionSample] {
        &self.samples
    }

    pub fn mean(&self) -> DeltaVector {
        self.mean
    }

    /// Per-component sample variance (`n − 1` denominator; zero for a
    /// single sample).
    pub fn variance(&self) -> DeltaVector {
        self.variance
    }

    pub fn majority(&self) -> SignMatrices {
        self.majority
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EffectivenessModel {
    pub sector_count: usize,
    pub experiments: usize,
    /// Sector mean height below which a predicted region counts as gone.
    pub visibility_height: f64,
    buckets: BTreeMap<BucketKey, Bucket>,
}

impl EffectivenessModel {
    pub fn empty(sector_count: usize) -> Self {
        EffectivenessModel {
            sector_count,
            experiments: 0,
            visibility_height: DEFAULT_H_MIN,
            buckets: BTreeMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    pub fn bucket(&self, key: &BucketKey) -> Option<&Bucket> {
        self.buckets.get(key)
    }

    pub fn buckets(&self) -> impl Iterator<Item = (&BucketKey, &Bucket)> {
        self.buckets.iter()
    }

    pub fn sample_count(&self) -> usize {
        self.buckets.values().map(|b| b.samples.len()).sum()
    }

    pub fn insert(&mut self, sample: TransitionSample) -> Result<()> {
        if sample.sector == 0 || sample.sector > self.sector_count {
            return Err(Error::Incompatible(format!(
                "sample sector {} outside 1..={}",
                sample.sector, self.sector_count
            )));
        }
        let key = BucketKey::new(&sample.action, sample.sector);
        match self.buckets.get_mut(&key) {
            Some(b) => b.insert(sample),
            None => {
                self.buckets.insert(key, Bucket::from_samples(vec![sample]));
            }
        }
        Ok(())
    }

    /// Whether any bucket for this action has data.
    pub fn knows(&self, action: &Action) -> bool {
        (1..=self.sector_count).any(|s| self.buckets.contains_key(&BucketKey::new(action, s)))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            version: MODEL_FORMAT_VERSION,
            sector_count: self.sector_count,
            experiments: self.experiments,
            visibility_height: self.visibility_height,
            buckets: self
                .buckets
                .iter()
                .map(|(k, b)| (k.to_string(), b.samples.clone()))
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model version {} (expected {MODEL_FORMAT_VERSION})",
                file.version
            )));
        }
        let mut buckets = BTreeMap::new();
        for (k, samples) in file.buckets {
            let key = BucketKey::parse(&k)?;
            if samples.is_empty() {
                continue;
            }
            if samples.iter().any(|s| BucketKey::new(&s.action, s.sector) != key) {
                return Err(Error::Config(format!("bucket {k} holds samples of another key")));
            }
            buckets.insert(key, Bucket::from_samples(samples));
        }
        Ok(EffectivenessModel {
            sector_count: file.sector_count,
            experiments: file.experiments,
            visibility_height: file.visibility_height,
            buckets,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    sector_count: usize,
    experiments: usize,
    visibility_height: f64,
    buckets: BTreeMap<String, Vec<TransitionSample>>,
}

/// Pools the transitions of all logs into one model. Logs must agree on the
/// sector count.
pub fn aggregate(logs: &[ExperimentLog]) -> Result<EffectivenessModel> {
    let Some(first) = logs.first() else {
        return Ok(EffectivenessModel::empty(0));
    };
    let k = first.sector_count;
    if let Some(other) = logs.iter().find(|l| l.sector_count != k) {
        return Err(Error::Incompatible(format!(
            "logs mix sector counts {k} and {}",
            other.sector_count
        )));
    }
    let mut grouped: BTreeMap<BucketKey, Vec<TransitionSample>> = BTreeMap::new();
    for log in logs {
        for s in extract_transitions(log)? {
            grouped.entry(BucketKey::new(&s.action, s.sector)).or_default().push(s);
        }
    }
    Ok(EffectivenessModel {
        sector_count: k,
        experiments: logs.len(),
        visibility_height: DEFAULT_H_MIN,
        buckets: grouped.into_iter().map(|(k, v)| (k, Bucket::from_samples(v))).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PropagationMode {
    Expectation,
    Sampled { seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Propagated {
    pub state: SheetState,
    /// Some active sector had no data for this action.
    pub unmodeled: bool,
}

fn scale_covariance(m: &mut Mat3, signs: [i8; 3]) {
    let f = signs.map(|s| if s > 0 { GROW_FACTOR } else { SHRINK_FACTOR });
    for r in 0..3 {
        for c in 0..3 {
            m[r][c] *= (f[r] * f[c]).sqrt();
        }
    }
}

/// Advances a state by one action using the learned per-sector deltas.
///
/// Compacted (sentinel) sectors stay compacted. Active sectors shift their
/// means by the bucket mean (plus Gaussian noise with the bucket's sample
/// variance in sampled mode), clamp `h, a, b ≥ 0`, fold θ into `[0, π)`, and
/// scale their covariances by the bucket's majority sign. A sector whose
/// predicted height drops to the visibility height or below becomes the
/// sentinel. Sectors without data keep their means and mark the result
/// unmodeled.
pub fn propagate(state: &SheetState, action: &Action, model: &EffectivenessModel, mode: PropagationMode) -> Propagated {
    let mut rng = match mode {
        PropagationMode::Sampled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        PropagationMode::Expectation => None,
    };
    let mut next = state.clone();
    let mut unmodeled = false;
    for sec in next.sectors.iter_mut() {
        if sec.is_sentinel() {
            continue;
        }
        let Some(bucket) = model.bucket(&BucketKey::new(action, sec.sector)) else {
            unmodeled = true;
            continue;
        };
        let mut d = bucket.mean.to_array();
        if let Some(rng) = rng.as_mut() {
            for (v, var) in d.iter_mut().zip(bucket.variance.to_array()) {
                if var > 0.0 {
                    *v += Normal::new(0.0, var.sqrt()).expect("finite variance").sample(rng);
                }
            }
        }
        sec.mu1[0] += d[0];
        sec.mu1[1] += d[1];
        sec.mu1[2] = (sec.mu1[2] + d[2]).max(0.0);
        sec.mu2[0] = (sec.mu2[0] + d[3]).max(0.0);
        sec.mu2[1] = (sec.mu2[1] + d[4]).max(0.0);
        sec.mu2[2] = fold_pi(sec.mu2[2] + d[5]);
        if sec.mu1[2] <= model.visibility_height {
            *sec = SectorGaussians::sentinel(sec.sector);
            continue;
        }
        scale_covariance(&mut sec.sigma1, bucket.majority.u1);
        scale_covariance(&mut sec.sigma2, bucket.majority.u2);
    }
    next.t = state.t + 1;
    Propagated { state: next, unmodeled }
}

/// Summed covariance diagonals over all sectors.
pub fn total_trace(state: &SheetState) -> f64 {
    state.sectors.iter().map(|s| trace(&s.sigma1) + trace(&s.sigma2)).sum()
}

/// One-step heuristic score of an action (lower is better): the utility
/// change after expectation-mode propagation plus the weighted change in
/// summed covariance traces per unit sheet area, plus `w_unk` when some
/// active sector has no data for the action.
pub fn effectiveness_score(
    action: &Action,
    state: &SheetState,
    model: &EffectivenessModel,
    weights: &CostWeights,
) -> f64 {
    let next = propagate(state, action, model, PropagationMode::Expectation);
    let d_trace = (total_trace(&next.state) - total_trace(state)) / state.geometry.area();
    let penalty = if next.unmodeled { weights.w_unk } else { 0.0 };
    state_utility(&next.state, weights) - state_utility(state, weights) + weights.w_sigma * d_trace + penalty
}
