//! Seeded stand-in for the robotic layup cell.
//!
//! The sheet carries a set of true uncompacted regions, each an elliptical
//! bump. Roller passes flatten the regions they cross by a factor that
//! decays with the number of passes already made and with the misalignment
//! between pass direction and region major axis; crossed regions also drift
//! along the pass and turn toward the nearest edge normal. Captures render
//! the bumps on a regular grid with sensor noise. After the end action the
//! correction controller repeatedly inspects the sheet and rolls one pass
//! along the major axis of every remaining region.
//!
//! All randomness comes from one ChaCha stream seeded per experiment, so an
//! experiment is bitwise reproducible from `(params, plan, seed)`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{self, fold_pi, wrap_half_pi, Vec2};
use crate::plan::{validate, Action, ConstraintSet, DrapingPlan, DEFAULT_PATH_COUNT};
use crate::sheet_state::{
    build_state, extract_regions, state_from_regions, CaptureFrame, SheetGeometry, SheetState, DEFAULT_H_MIN,
    DEFAULT_LINK_RADIUS,
};
use crate::{Error, Result};

pub const PARAMS_FORMAT_VERSION: u32 = 1;
pub const LOG_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseScales {
    /// Relative jitter of every region's peak height per pass.
    pub height: f64,
    /// Relative jitter of the height reduction of a crossed region.
    pub reduction: f64,
    /// Centroid jitter per pass, mm.
    pub centroid: f64,
    /// Semi-axis jitter per pass, mm.
    pub axes: f64,
    /// Orientation jitter per pass, rad.
    pub theta: f64,
    /// Capture height noise, mm.
    pub sensor: f64,
}

impl Default for NoiseScales {
    fn default() -> Self {
        NoiseScales {
            height: 0.02,
            reduction: 0.15,
            centroid: 0.5,
            axes: 0.3,
            theta: 0.02,
            sensor: 0.05,
        }
    }
}

impl NoiseScales {
    pub fn none() -> Self {
        NoiseScales {
            height: 0.0,
            reduction: 0.0,
            centroid: 0.0,
            axes: 0.0,
            theta: 0.0,
            sensor: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionSpec {
    pub count: usize,
    /// Semi-major axis range (2σ), mm.
    pub semi_major: [f64; 2],
    /// Minor/major ratio range.
    pub aspect: [f64; 2],
    pub peak_height: [f64; 2],
    /// Standard deviation of region placement around the sheet's anchors, mm.
    pub anchor_jitter: f64,
}

impl Default for RegionSpec {
    fn default() -> Self {
        RegionSpec {
            count: 6,
            semi_major: [14.0, 22.0],
            aspect: [0.45, 0.8],
            peak_height: [2.5, 5.0],
            anchor_jitter: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerParams {
    /// A sector whose mean region height exceeds this needs correction, mm.
    pub height_threshold: f64,
    pub max_cycles: u32,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams {
            height_threshold: 0.75,
            max_cycles: 10,
        }
    }
}

/// Every constant of the simulated process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundTruthParams {
    pub version: u32,
    /// Height reduction factor of the j-th pass (1-based); the last entry
    /// applies to every later pass.
    pub reduction_schedule: Vec<f64>,
    /// Centroid shift of a crossed region along the pass, mm per pass.
    pub edge_drift: f64,
    /// Rotation of a crossed region toward the nearest edge normal, rad per pass.
    pub orientation_relaxation: f64,
    /// Lower bound of the alignment factor `|cos(pass − major axis)|`.
    pub alignment_floor: f64,
    pub roller_half_width: f64,
    /// Regions flatter than this are gone, mm.
    pub extinction_height: f64,
    /// Relative height increase of every region when the backing film is peeled.
    pub peel_disturbance: f64,
    pub noise: NoiseScales,
    pub regions: RegionSpec,
    pub capture_pitch: f64,
    pub h_min: f64,
    pub link_radius: f64,
    pub controller: ControllerParams,
    pub path_count: u32,
}

impl Default for GroundTruthParams {
    fn default() -> Self {
        GroundTruthParams {
            version: PARAMS_FORMAT_VERSION,
            reduction_schedule: linear_schedule(0.8, 0.3, 8),
            edge_drift: 25.0,
            orientation_relaxation: 0.15,
            alignment_floor: 0.25,
            roller_half_width: 15.0,
            extinction_height: 0.2,
            peel_disturbance: 0.05,
            noise: NoiseScales::default(),
            regions: RegionSpec::default(),
            capture_pitch: 4.0,
            h_min: DEFAULT_H_MIN,
            link_radius: DEFAULT_LINK_RADIUS,
            controller: ControllerParams::default(),
            path_count: DEFAULT_PATH_COUNT,
        }
    }
}

/// `first` at pass 1 falling linearly to `last` at pass `steps`.
pub fn linear_schedule(first: f64, last: f64, steps: usize) -> Vec<f64> {
    if steps <= 1 {
        return vec![first];
    }
    (0..steps)
        .map(|i| first + (last - first) * i as f64 / (steps - 1) as f64)
        .collect()
}

impl GroundTruthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != PARAMS_FORMAT_VERSION {
            return bad(format!("unsupported params version {}", self.version));
        }
        if self.reduction_schedule.is_empty() || self.reduction_schedule.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return bad("reduction factors must lie in (0, 1)".into());
        }
        let rates = [self.edge_drift, self.orientation_relaxation, self.peel_disturbance];
        if rates.iter().any(|&r| r.is_nan() || r < 0.0) {
            return bad("rates must be non-negative".into());
        }
        let n = &self.noise;
        if [n.height, n.reduction, n.centroid, n.axes, n.theta, n.sensor]
            .iter()
            .any(|&s| s.is_nan() || s < 0.0)
        {
            return bad("noise scales must be non-negative".into());
        }
        if !(self.roller_half_width > 0.0 && self.capture_pitch > 0.0 && self.link_radius > 0.0) {
            return bad("half-width, pitch and link radius must be positive".into());
        }
        if self.h_min.is_nan() || self.h_min <= 0.0 || !(self.alignment_floor > 0.0 && self.alignment_floor <= 1.0) {
            return bad("h_min must be positive and the alignment floor in (0, 1]".into());
        }
        let r = &self.regions;
        if r.semi_major[0] > r.semi_major[1] || r.aspect[0] > r.aspect[1] || r.peak_height[0] > r.peak_height[1] {
            return bad("region ranges must be ordered [min, max]".into());
        }
        if r.aspect[0] <= 0.0 || r.aspect[1] > 1.0 || r.semi_major[0] <= 0.0 {
            return bad("aspect must lie in (0, 1] and semi-axes be positive".into());
        }
        Ok(())
    }

    /// Reduction factor of the `j`-th pass (1-based).
    pub fn reduction(&self, j: u32) -> f64 {
        let idx = (j.max(1) as usize - 1).min(self.reduction_schedule.len() - 1);
        self.reduction_schedule[idx]
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let p: GroundTruthParams = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("params serialize")
    }
}

/// A sheet outline with the spots where its mold tends to trap material.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SheetSpec {
    pub name: String,
    pub geometry: SheetGeometry,
    pub anchors: Vec<Vec2>,
}

impl SheetSpec {
    pub const BUILTIN: [&'static str; 2] = ["sheet1", "sheet2"];

    /// `sheet1`: squarish 300 × 300 mm. `sheet2`: rectangular 400 × 250 mm.
    pub fn builtin(name: &str) -> Result<Self> {
        let polar = |deg: f64, r: f64| {
            let t = deg.to_radians();
            [r * t.cos(), r * t.sin()]
        };
        let (geometry, anchors) = match name {
            "sheet1" => (
                SheetGeometry::rectangle(300.0, 300.0, 8)?,
                [(3, 95.0), (7, 95.0), (11, 95.0), (15, 95.0), (1, 120.0), (9, 120.0)],
            ),
            "sheet2" => (
                SheetGeometry::rectangle(400.0, 250.0, 8)?,
                [(3, 120.0), (11, 120.0), (15, 75.0), (7, 75.0), (1, 110.0), (9, 110.0)],
            ),
            other => {
                return Err(Error::Config(format!(
                    "unknown sheet `{other}` (built-in: sheet1, sheet2)"
                )))
            }
        };
        // just off the ray, inside the wedge that starts there
        let anchors = anchors
            .iter()
            .map(|&(path, r)| polar(path_angle(path, DEFAULT_PATH_COUNT).to_degrees() + 5.0, r))
            .collect();
        Ok(SheetSpec {
            name: name.into(),
            geometry,
            anchors,
        })
    }
}

/// One true uncompacted region: a bump `peak·exp(−m²/2)` whose 2σ ellipse
/// has semi-axes `a ≥ b` and major-axis angle θ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRegion {
    pub centroid: Vec2,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub peak: f64,
}

impl SimRegion {
    /// Squared Mahalanobis radius in units of σ (the 2σ ellipse is m² = 4).
    fn mahalanobis2(&self, p: Vec2) -> f64 {
        let d = geometry::sub(p, self.centroid);
        let (s, c) = self.theta.sin_cos();
        let u = d[0] * c + d[1] * s;
        let v = -d[0] * s + d[1] * c;
        let sa = (self.a / 2.0).max(1e-6);
        let sb = (self.b / 2.0).max(1e-6);
        (u / sa).powi(2) + (v / sb).powi(2)
    }

    /// Minimum squared ellipse radius (1 = on the 2σ ellipse) along a segment.
    fn min_ellipse_radius2(&self, p0: Vec2, p1: Vec2) -> f64 {
        let (s, c) = self.theta.sin_cos();
        let to_local = |p: Vec2| {
            let d = geometry::sub(p, self.centroid);
            [
                (d[0] * c + d[1] * s) / self.a.max(1e-6),
                (-d[0] * s + d[1] * c) / self.b.max(1e-6),
            ]
        };
        let (q0, q1) = (to_local(p0), to_local(p1));
        let dq = geometry::sub(q1, q0);
        let len2 = geometry::dot(dq, dq);
        let t = if len2 > 0.0 {
            (-geometry::dot(q0, dq) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = geometry::add(q0, geometry::scale(dq, t));
        geometry::dot(q, q)
    }

    pub fn height_at(&self, p: Vec2) -> f64 {
        let m2 = self.mahalanobis2(p);
        if m2 > 50.0 {
            0.0
        } else {
            self.peak * (-0.5 * m2).exp()
        }
    }

    /// Whether the 2σ ellipse touches the rectangle swept by a pass.
    pub fn crossed_by(&self, path: &PathGeometry) -> bool {
        let u = path.direction();
        let nrm = [-u[1], u[0]];
        let w = path.half_width;
        let edges = [
            (path.start, path.end),
            (
                geometry::add(path.start, geometry::scale(nrm, w)),
                geometry::add(path.end, geometry::scale(nrm, w)),
            ),
            (
                geometry::sub(path.start, geometry::scale(nrm, w)),
                geometry::sub(path.end, geometry::scale(nrm, w)),
            ),
        ];
        if edges.iter().any(|&(p0, p1)| self.min_ellipse_radius2(p0, p1) <= 1.0) {
            return true;
        }
        let len = path.length();
        let (s, c) = self.theta.sin_cos();
        (0..64).any(|i| {
            let t = i as f64 * PI / 32.0;
            let (lx, ly) = (self.a * t.cos(), self.b * t.sin());
            let p = [self.centroid[0] + lx * c - ly * s, self.centroid[1] + lx * s + ly * c];
            let d = geometry::sub(p, path.start);
            let along = geometry::dot(d, u);
            let across = geometry::dot(d, nrm).abs();
            (0.0..=len).contains(&along) && across <= w
        })
    }
}

/// A straight roller pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathGeometry {
    pub start: Vec2,
    pub end: Vec2,
    pub half_width: f64,
}

impl PathGeometry {
    pub fn new(start: Vec2, end: Vec2, half_width: f64) -> Result<Self> {
        if start == end || half_width.is_nan() || half_width <= 0.0 {
            return Err(Error::Geometry(
                "a pass needs distinct endpoints and a positive half-width".into(),
            ));
        }
        Ok(PathGeometry { start, end, half_width })
    }

    pub fn length(&self) -> f64 {
        geometry::norm(geometry::sub(self.end, self.start))
    }

    pub fn direction(&self) -> Vec2 {
        let d = geometry::sub(self.end, self.start);
        geometry::scale(d, 1.0 / geometry::norm(d))
    }

    pub fn angle(&self) -> f64 {
        let d = geometry::sub(self.end, self.start);
        d[1].atan2(d[0])
    }
}

/// Direction angle of geometry path `index` out of `count`: the first points
/// at the top-right diagonal and the rest follow clockwise at equal spacing.
pub fn path_angle(index: u32, count: u32) -> f64 {
    FRAC_PI_2 / 2.0 - f64::from(index - 1) * (2.0 * PI / f64::from(count))
}

/// Radial pass `index` (1-based) from the sheet center to the boundary.
pub fn path_geometry(index: u32, geom: &SheetGeometry, count: u32, half_width: f64) -> Result<PathGeometry> {
    if index == 0 || index > count {
        return Err(Error::IllPosed(format!("path index {index} outside 1..={count}")));
    }
    let u = geometry::unit(path_angle(index, count));
    let t = geometry::ray_exit(&geom.polygon, geom.center, u)
        .ok_or_else(|| Error::Geometry("radial ray does not leave the sheet".into()))?;
    PathGeometry::new(
        geom.center,
        geometry::add(geom.center, geometry::scale(u, t)),
        half_width,
    )
}

/// Full chord through `p` along `angle`, oriented toward the nearer boundary.
pub fn chord_through(geom: &SheetGeometry, p: Vec2, angle: f64, half_width: f64) -> Result<PathGeometry> {
    let u = geometry::unit(angle);
    let back = geometry::scale(u, -1.0);
    let fwd_t = geometry::ray_exit(&geom.polygon, p, u);
    let back_t = geometry::ray_exit(&geom.polygon, p, back);
    let (Some(tf), Some(tb)) = (fwd_t, back_t) else {
        return Err(Error::Geometry("chord origin outside the sheet".into()));
    };
    let (dir, t_out, t_in) = if tf <= tb { (u, tf, tb) } else { (back, tb, tf) };
    PathGeometry::new(
        geometry::sub(p, geometry::scale(dir, t_in)),
        geometry::add(p, geometry::scale(dir, t_out)),
        half_width,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub regions: Vec<SimRegion>,
    /// Passes executed so far (plan, refinement and correction passes).
    pub paths_executed: u32,
    pub peeled: bool,
    pub captures_taken: usize,
    rng: ChaCha8Rng,
}

impl SimState {
    pub fn volume(&self) -> f64 {
        self.regions.iter().map(|r| r.peak * r.a * r.b).sum()
    }

    fn gauss(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn uniform(&mut self, range: [f64; 2]) -> f64 {
        if range[1] > range[0] {
            self.rng.random_range(range[0]..range[1])
        } else {
            range[0]
        }
    }
}

/// Places the initial regions. With anchors, region `i` sits near anchor
/// `i mod len`; otherwise placement is uniform over the sheet.
pub fn init_sheet(spec: &SheetSpec, params: &GroundTruthParams, seed: u64) -> SimState {
    let mut sim = SimState {
        regions: Vec::with_capacity(params.regions.count),
        paths_executed: 0,
        peeled: false,
        captures_taken: 0,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let g = &spec.geometry;
    let (min, max) = g
        .polygon
        .iter()
        .fold(([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]), |(lo, hi), p| {
            ([lo[0].min(p[0]), lo[1].min(p[1])], [hi[0].max(p[0]), hi[1].max(p[1])])
        });
    let rs = params.regions.clone();
    for i in 0..rs.count {
        let a = sim.uniform(rs.semi_major);
        let b = a * sim.uniform(rs.aspect);
        let theta = sim.uniform([0.0, PI]);
        let peak = sim.uniform(rs.peak_height);
        let mut centroid = [0.0; 2];
        for attempt in 0..1000 {
            centroid = if spec.anchors.is_empty() {
                [sim.uniform([min[0], max[0]]), sim.uniform([min[1], max[1]])]
            } else {
                let anchor = spec.anchors[i % spec.anchors.len()];
                let jitter = if attempt < 100 { rs.anchor_jitter } else { 0.0 };
                [anchor[0] + jitter * sim.gauss(), anchor[1] + jitter * sim.gauss()]
            };
            if g.contains(centroid) && geometry::nearest_edge(&g.polygon, centroid).1 > 1.0 {
                break;
            }
        }
        sim.regions.push(SimRegion {
            centroid,
            a,
            b,
            theta,
            peak,
        });
    }
    sim
}

fn edge_normal_angle(geom: &SheetGeometry, p: Vec2) -> f64 {
    let (edge, _) = geometry::nearest_edge(&geom.polygon, p);
    fold_pi(geometry::edge_angle(&geom.polygon, edge) + FRAC_PI_2)
}

fn execute_pass(sim: &mut SimState, path: &PathGeometry, geom: &SheetGeometry, params: &GroundTruthParams) {
    sim.paths_executed += 1;
    let r = params.reduction(sim.paths_executed);
    let u = path.direction();
    let pass_angle = path.angle();
    let noise = params.noise.clone();
    for i in 0..sim.regions.len() {
        let hit = sim.regions[i].crossed_by(path);
        let z: [f64; 6] = std::array::from_fn(|_| sim.gauss());
        let reg = &mut sim.regions[i];
        if hit {
            let alignment = (pass_angle - reg.theta).cos().abs().max(params.alignment_floor);
            let cut = (r * alignment * (1.0 + noise.reduction * z[0])).clamp(0.0, 0.95);
            reg.peak *= 1.0 - cut;
            let moved = geometry::add(reg.centroid, geometry::scale(u, params.edge_drift));
            if !geom.contains(moved) {
                // rolled off the edge: the trapped air escapes
                reg.peak = 0.0;
                continue;
            }
            reg.centroid = moved;
            let target = edge_normal_angle(geom, reg.centroid);
            let turn =
                wrap_half_pi(target - reg.theta).clamp(-params.orientation_relaxation, params.orientation_relaxation);
            reg.theta = fold_pi(reg.theta + turn);
        }
        reg.peak = (reg.peak * (1.0 + noise.height * z[1])).max(0.0);
        let shifted = [
            reg.centroid[0] + noise.centroid * z[2],
            reg.centroid[1] + noise.centroid * z[3],
        ];
        if geom.contains(shifted) {
            reg.centroid = shifted;
        }
        let a = (reg.a + noise.axes * z[4]).max(1.0);
        let b = (reg.b + noise.axes * z[4] * 0.5).clamp(0.5, a);
        reg.a = a;
        reg.b = b;
        reg.theta = fold_pi(reg.theta + noise.theta * z[5]);
    }
    let floor = params.extinction_height;
    sim.regions.retain(|r| r.peak >= floor);
}

/// Executes one action. Refinement actions need their passes supplied.
pub fn apply_action(
    sim: &mut SimState,
    action: &Action,
    refinement_paths: Option<&[PathGeometry]>,
    spec: &SheetSpec,
    params: &GroundTruthParams,
) -> Result<()> {
    let geom = &spec.geometry;
    match *action {
        Action::Path(i) => {
            let p = path_geometry(i, geom, params.path_count, params.roller_half_width)?;
            execute_pass(sim, &p, geom, params);
        }
        Action::Refinement(n) => {
            let paths = refinement_paths
                .ok_or_else(|| Error::Precondition("refinement action executed without generated passes".into()))?;
            if paths.len() != n as usize {
                return Err(Error::Precondition(format!(
                    "refinement of {n} passes received {} geometries",
                    paths.len()
                )));
            }
            for p in paths {
                execute_pass(sim, p, geom, params);
            }
        }
        Action::Peel => {
            sim.peeled = true;
            let pulse = params.peel_disturbance;
            let jitter = params.noise.height;
            for i in 0..sim.regions.len() {
                let z = sim.gauss();
                let reg = &mut sim.regions[i];
                reg.peak = (reg.peak * (1.0 + pulse) * (1.0 + jitter * z)).max(0.0);
            }
        }
        Action::Capture | Action::End => {}
    }
    Ok(())
}

/// Renders the height field on a grid of the configured pitch over the sheet.
pub fn render_capture(sim: &mut SimState, spec: &SheetSpec, params: &GroundTruthParams) -> CaptureFrame {
    let poly = &spec.geometry.polygon;
    let (min, max) = poly
        .iter()
        .fold(([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]), |(lo, hi), p| {
            ([lo[0].min(p[0]), lo[1].min(p[1])], [hi[0].max(p[0]), hi[1].max(p[1])])
        });
    let pitch = params.capture_pitch;
    let nx = ((max[0] - min[0]) / pitch).floor() as usize;
    let ny = ((max[1] - min[1]) / pitch).floor() as usize;
    let sensor = params.noise.sensor;
    let mut points = Vec::with_capacity(nx * ny);
    for ix in 0..nx {
        for iy in 0..ny {
            let p = [min[0] + (ix as f64 + 0.5) * pitch, min[1] + (iy as f64 + 0.5) * pitch];
            if !geometry::contains(poly, p) {
                continue;
            }
            let h: f64 = sim.regions.iter().map(|r| r.height_at(p)).sum();
            let noise = if sensor > 0.0 { sensor * sim.gauss() } else { 0.0 };
            points.push([p[0], p[1], (h + noise).max(0.0)]);
        }
    }
    let frame = CaptureFrame {
        t: sim.captures_taken,
        points,
    };
    sim.captures_taken += 1;
    frame
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionOutcome {
    pub cycles: u32,
    pub paths: u32,
    /// False when the controller stopped at `max_cycles` with regions left.
    pub converged: bool,
}

/// Inspect-and-fix loop run after the end action.
pub fn run_correction(sim: &mut SimState, spec: &SheetSpec, params: &GroundTruthParams) -> Result<CorrectionOutcome> {
    if !sim.peeled {
        return Err(Error::Precondition(
            "correction requires the backing film to be peeled".into(),
        ));
    }
    let geom = &spec.geometry;
    let ctl = &params.controller;
    let mut out = CorrectionOutcome {
        cycles: 0,
        paths: 0,
        converged: false,
    };
    loop {
        let frame = render_capture(sim, spec, params);
        let regions = extract_regions(&frame, params.h_min, params.link_radius);
        let state = state_from_regions(&regions, geom, frame.t);
        let offending: Vec<usize> = state
            .sectors
            .iter()
            .filter(|s| !s.is_sentinel() && s.height() > ctl.height_threshold)
            .map(|s| s.sector)
            .collect();
        if offending.is_empty() {
            out.converged = true;
            return Ok(out);
        }
        if out.cycles >= ctl.max_cycles {
            return Ok(out);
        }
        let passes: Vec<PathGeometry> = regions
            .iter()
            .filter(|r| offending.contains(&crate::sheet_state::assign_sector(r.ellipse.centroid, geom)))
            .filter_map(|r| chord_through(geom, r.ellipse.centroid, r.ellipse.theta, params.roller_half_width).ok())
            .collect();
        for p in &passes {
            execute_pass(sim, p, geom, params);
        }
        out.paths += passes.len() as u32;
        out.cycles += 1;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanRole {
    #[default]
    Initial,
    Refined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based position of the action in the plan.
    pub index: usize,
    pub action: Action,
    pub capture_before: Option<usize>,
    pub capture_after: Option<usize>,
    pub state_before: Option<SheetState>,
    pub state_after: Option<SheetState>,
    /// Passes generated for a refinement action.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub refinement_paths: Vec<PathGeometry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentLog {
    pub sheet: String,
    pub plan: DrapingPlan,
    pub role: PlanRole,
    pub seed: u64,
    pub sector_count: usize,
    pub geometry: SheetGeometry,
    pub steps: Vec<StepRecord>,
    pub correction_cycles: u32,
    pub correction_paths: u32,
    pub plan_paths: u32,
    pub total_paths: u32,
    pub converged: bool,
    /// Captures in order of their `t`; empty unless requested.
    pub captures: Vec<CaptureFrame>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum LogRecord {
    Header {
        version: u32,
        sheet: String,
        plan: DrapingPlan,
        role: PlanRole,
        seed: u64,
        sector_count: usize,
        geometry: SheetGeometry,
    },
    Step(StepRecord),
    Summary {
        correction_cycles: u32,
        correction_paths: u32,
        plan_paths: u32,
        total_paths: u32,
        converged: bool,
    },
}

impl ExperimentLog {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = LogRecord::Header {
            version: LOG_FORMAT_VERSION,
            sheet: self.sheet.clone(),
            plan: self.plan.clone(),
            role: self.role,
            seed: self.seed,
            sector_count: self.sector_count,
            geometry: self.geometry.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for s in &self.steps {
            serde_json::to_writer(&mut w, &LogRecord::Step(s.clone()))?;
            w.write_all(b"\n")?;
        }
        let summary = LogRecord::Summary {
            correction_cycles: self.correction_cycles,
            correction_paths: self.correction_paths,
            plan_paths: self.plan_paths,
            total_paths: self.total_paths,
            converged: self.converged,
        };
        serde_json::to_writer(&mut w, &summary)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut log: Option<ExperimentLog> = None;
        let mut summarized = false;
        for (i, line) in r.lines().enumerate() {
            let record = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |message: String| Error::CorruptLog { record, message };
            let rec: LogRecord = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
            match (rec, log.as_mut()) {
                (
                    LogRecord::Header {
                        version,
                        sheet,
                        plan,
                        role,
                        seed,
                        sector_count,
                        geometry,
                    },
                    None,
                ) => {
                    if version != LOG_FORMAT_VERSION {
                        return Err(corrupt(format!("unsupported log version {version}")));
                    }
                    log = Some(ExperimentLog {
                        sheet,
                        plan,
                        role,
                        seed,
                        sector_count,
                        geometry,
                        steps: Vec::new(),
                        correction_cycles: 0,
                        correction_paths: 0,
                        plan_paths: 0,
                        total_paths: 0,
                        converged: false,
                        captures: Vec::new(),
                    });
                }
                (LogRecord::Header { .. }, Some(_)) => return Err(corrupt("second header".into())),
                (_, None) => return Err(corrupt("record before header".into())),
                (_, Some(_)) if summarized => return Err(corrupt("record after summary".into())),
                (LogRecord::Step(s), Some(l)) => {
                    if s.index != l.steps.len() + 1 {
                        return Err(corrupt(format!(
                            "step index {} out of sequence (expected {})",
                            s.index,
                            l.steps.len() + 1
                        )));
                    }
                    l.steps.push(s);
                }
                (
                    LogRecord::Summary {
                        correction_cycles,
                        correction_paths,
                        plan_paths,
                        total_paths,
                        converged,
                    },
                    Some(l),
                ) => {
                    if total_paths != plan_paths + correction_paths {
                        return Err(corrupt(format!(
                            "total paths {total_paths} != plan {plan_paths} + correction {correction_paths}"
                        )));
                    }
                    l.correction_cycles = correction_cycles;
                    l.correction_paths = correction_paths;
                    l.plan_paths = plan_paths;
                    l.total_paths = total_paths;
                    l.converged = converged;
                    summarized = true;
                }
            }
        }
        match (log, summarized) {
            (Some(l), true) => Ok(l),
            (Some(l), false) => Err(Error::CorruptLog {
                record: l.steps.len() + 2,
                message: "missing summary record".into(),
            }),
            (None, _) => Err(Error::CorruptLog {
                record: 1,
                message: "empty log".into(),
            }),
        }
    }
}

/// Produces the passes of a `(refinement, n)` action from the latest
/// capture-derived state.
pub type RefinementGenerator<'a> = &'a dyn Fn(&SheetState, u32) -> Result<Vec<PathGeometry>>;

#[derive(Clone, Debug, Default)]
pub struct ExperimentOptions {
    pub role: PlanRole,
    pub keep_captures: bool,
}

/// Executes a plan on a freshly initialized sheet.
///
/// A capture is taken before the first action and after every action. The
/// end action hands over to the correction controller and stops execution;
/// actions after it are not run.
pub fn run_experiment(
    plan: &DrapingPlan,
    spec: &SheetSpec,
    params: &GroundTruthParams,
    constraints: &ConstraintSet,
    seed: u64,
    refine: RefinementGenerator<'_>,
    opts: &ExperimentOptions,
) -> Result<ExperimentLog> {
    params.validate()?;
    let violations = validate(plan, constraints);
    if !violations.is_empty() {
        return Err(Error::PlanInvalid {
            count: violations.len(),
            summary: violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
        });
    }
    plan.check_args(params.path_count)?;

    let geom = &spec.geometry;
    let mut sim = init_sheet(spec, params, seed);
    let mut captures = Vec::new();
    let observe = |sim: &mut SimState, captures: &mut Vec<CaptureFrame>| {
        let frame = render_capture(sim, spec, params);
        let state = build_state(&frame, geom, params.h_min, params.link_radius);
        let t = frame.t;
        if opts.keep_captures {
            captures.push(frame);
        }
        (t, state)
    };

    let (mut t_prev, mut state_prev) = observe(&mut sim, &mut captures);
    let mut steps = Vec::with_capacity(plan.len());
    let mut plan_paths = 0;
    let mut correction = CorrectionOutcome {
        cycles: 0,
        paths: 0,
        converged: true,
    };
    for (i, action) in plan.actions.iter().enumerate() {
        let generated = match *action {
            Action::Refinement(n) => refine(&state_prev, n)?,
            _ => Vec::new(),
        };
        let supplied = matches!(action, Action::Refinement(_)).then_some(generated.as_slice());
        apply_action(&mut sim, action, supplied, spec, params)?;
        plan_paths += action.path_count();
        let (t, state) = observe(&mut sim, &mut captures);
        steps.push(StepRecord {
            index: i + 1,
            action: *action,
            capture_before: Some(t_prev),
            capture_after: Some(t),
            state_before: Some(state_prev),
            state_after: Some(state.clone()),
            refinement_paths: generated,
        });
        t_prev = t;
        state_prev = state;
        if *action == Action::End {
            correction = run_correction(&mut sim, spec, params)?;
            break;
        }
    }
    Ok(ExperimentLog {
        sheet: spec.name.clone(),
        plan: plan.clone(),
        role: opts.role,
        seed,
        sector_count: geom.sector_count,
        geometry: geom.clone(),
        steps,
        correction_cycles: correction.cycles,
        correction_paths: correction.paths,
        plan_paths,
        total_paths: plan_paths + correction.paths,
        converged: correction.converged,
        captures,
    })
}
