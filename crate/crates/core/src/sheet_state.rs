//! Sheet state estimation from height-field captures.
//!
//! A capture is filtered down to the points standing above the mold, the
//! points are grouped into regions by single-linkage, each region is fitted
//! with a 2σ ellipse, and regions are summarized per angular sector by two
//! Gaussians: one over `(x, y, h)` of the region centroids and one over the
//! ellipse parameters `(a, b, θ)`.

use std::collections::HashMap;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::geometry::{self, fold_pi, fold_tau, wrap_half_pi, Mat3, Vec2, Vec3, ZERO3};
use crate::{Error, Result};

pub const DEFAULT_H_MIN: f64 = 0.5;
pub const DEFAULT_LINK_RADIUS: f64 = 12.0;

/// Sheet frame: the center all sector angles and state coordinates are taken
/// about, the sheet outline, and the number of angular sectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SheetGeometry {
    pub center: Vec2,
    pub polygon: Vec<Vec2>,
    pub sector_count: usize,
}

impl SheetGeometry {
    pub fn new(center: Vec2, polygon: Vec<Vec2>, sector_count: usize) -> Result<Self> {
        let g = SheetGeometry {
            center,
            polygon,
            sector_count,
        };
        g.validate()?;
        Ok(g)
    }

    /// Axis-aligned rectangle centered on the origin.
    pub fn rectangle(width: f64, height: f64, sector_count: usize) -> Result<Self> {
        let (hw, hh) = (width / 2.0, height / 2.0);
        Self::new(
            [0.0, 0.0],
            vec![[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]],
            sector_count,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.sector_count < 2 {
            return Err(Error::Geometry(format!(
                "sector count must be at least 2, got {}",
                self.sector_count
            )));
        }
        if !geometry::is_simple(&self.polygon) {
            return Err(Error::Geometry("bounding polygon is not simple".into()));
        }
        if !geometry::contains(&self.polygon, self.center) {
            return Err(Error::Geometry("polygon does not contain the center".into()));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        geometry::area(&self.polygon)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        geometry::contains(&self.polygon, p)
    }

    /// Angular width of one sector.
    pub fn sector_width(&self) -> f64 {
        TAU / self.sector_count as f64
    }
}

/// One height-field capture. Heights are measured above the mold surface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureFrame {
    pub t: usize,
    pub points: Vec<Vec3>,
}

impl CaptureFrame {
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Precondition(format!("capture {} has no points", self.t)));
        }
        if let Some(p) = self.points.iter().find(|p| p[2].is_nan() || p[2] < 0.0) {
            return Err(Error::Precondition(format!(
                "capture {} has negative or NaN height {}",
                self.t, p[2]
            )));
        }
        Ok(())
    }
}

/// 2σ ellipse fitted to one uncompacted region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionEllipse {
    pub centroid: Vec2,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub mean_height: f64,
}

/// A segmented region with its fitted ellipse and raw moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub ellipse: RegionEllipse,
    pub point_count: usize,
    pub max_height: f64,
    /// Population covariance of `(x, y, h)` over the region's points.
    pub point_covariance: Mat3,
}

/// The two Gaussians summarizing one sector.
///
/// `mu1 = (x, y, h)` with `x, y` relative to the sheet center; `mu2 = (a, b, θ)`.
/// A sector with no regions is the compacted sentinel: every field zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorGaussians {
    pub sector: usize,
    pub mu1: Vec3,
    pub sigma1: Mat3,
    pub mu2: Vec3,
    pub sigma2: Mat3,
    pub sample_count: usize,
}

impl SectorGaussians {
    pub fn sentinel(sector: usize) -> Self {
        SectorGaussians {
            sector,
            mu1: [0.0; 3],
            sigma1: ZERO3,
            mu2: [0.0; 3],
            sigma2: ZERO3,
            sample_count: 0,
        }
    }

    pub fn is_sentinel(&self) -> bool {
        self.sample_count == 0
    }

    pub fn height(&self) -> f64 {
        self.mu1[2]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SheetState {
    pub geometry: SheetGeometry,
    pub sectors: Vec<SectorGaussians>,
    pub t: usize,
}

impl SheetState {
    pub fn compacted(geometry: SheetGeometry, t: usize) -> Self {
        let sectors = (1..=geometry.sector_count).map(SectorGaussians::sentinel).collect();
        SheetState { geometry, sectors, t }
    }

    pub fn sector(&self, id: usize) -> &SectorGaussians {
        &self.sectors[id - 1]
    }

    pub fn active_sector_count(&self) -> usize {
        self.sectors.iter().filter(|s| !s.is_sentinel()).count()
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.sectors.len() != self.geometry.sector_count {
            return Err(Error::Precondition(format!(
                "state has {} sectors, geometry declares {}",
                self.sectors.len(),
                self.geometry.sector_count
            )));
        }
        for (i, s) in self.sectors.iter().enumerate() {
            if s.sector != i + 1 {
                return Err(Error::Precondition(format!(
                    "sector at position {} carries id {}",
                    i + 1,
                    s.sector
                )));
            }
        }
        Ok(())
    }
}

/// Sector id (1-based) of a point: wedges of width 2π/k counter-clockwise
/// from the +x axis about the sheet center. The center itself maps to 1.
pub fn assign_sector(p: Vec2, geom: &SheetGeometry) -> usize {
    let d = geometry::sub(p, geom.center);
    if d == [0.0, 0.0] {
        return 1;
    }
    let angle = fold_tau(d[1].atan2(d[0]));
    let idx = (angle / geom.sector_width()).floor() as usize;
    idx.min(geom.sector_count - 1) + 1
}

/// Points strictly above `h_min`, in input order.
pub fn filter_uncompacted(frame: &CaptureFrame, h_min: f64) -> Vec<Vec3> {
    frame.points.iter().copied().filter(|p| p[2] > h_min).collect()
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Single-linkage components under xy distance `≤ link_radius`.
///
/// Components are ordered by `(min x, min y)`; points keep their input order
/// inside a component.
pub fn segment_regions(points: &[Vec3], link_radius: f64) -> Vec<Vec<Vec3>> {
    if points.is_empty() {
        return Vec::new();
    }
    let cell = |v: f64| (v / link_radius).floor() as i64;
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry((cell(p[0]), cell(p[1]))).or_default().push(i);
    }
    let r2 = link_radius * link_radius;
    let mut ds = DisjointSet::new(points.len());
    for (i, p) in points.iter().enumerate() {
        let (cx, cy) = (cell(p[0]), cell(p[1]));
        for gx in cx - 1..=cx + 1 {
            for gy in cy - 1..=cy + 1 {
                let Some(bucket) = grid.get(&(gx, gy)) else { continue };
                for &j in bucket {
                    if j <= i {
                        continue;
                    }
                    let q = points[j];
                    let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
                    if dx * dx + dy * dy <= r2 {
                        ds.union(i, j);
                    }
                }
            }
        }
    }
    let mut by_root: HashMap<usize, Vec<Vec3>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        by_root.entry(ds.find(i)).or_default().push(*p);
    }
    let mut groups: Vec<Vec<Vec3>> = by_root.into_values().collect();
    let key = |g: &Vec<Vec3>| {
        let mx = g.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let my = g.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        (mx, my)
    };
    groups.sort_by(|a, b| key(a).partial_cmp(&key(b)).expect("finite coordinates"));
    groups
}

fn point_moments(group: &[Vec3]) -> (Vec3, Mat3) {
    let n = group.len() as f64;
    let mut mean = [0.0; 3];
    for p in group {
        for k in 0..3 {
            mean[k] += p[k];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = ZERO3;
    for p in group {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for r in 0..3 {
            for c in 0..3 {
                cov[r][c] += d[r] * d[c];
            }
        }
    }
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    (mean, cov)
}

/// Fits the 2σ ellipse of a non-empty point group.
pub fn fit_ellipse(group: &[Vec3]) -> RegionEllipse {
    assert!(!group.is_empty(), "fit_ellipse requires a non-empty group");
    let (mean, cov) = point_moments(group);
    let (l1, l2, theta) = geometry::sym2_eigen(cov[0][0], cov[0][1], cov[1][1]);
    RegionEllipse {
        centroid: [mean[0], mean[1]],
        a: 2.0 * l1.max(0.0).sqrt(),
        b: 2.0 * l2.max(0.0).sqrt(),
        theta,
        mean_height: mean[2],
    }
}

/// Filter, segment and fit: every uncompacted region in a capture.
pub fn extract_regions(frame: &CaptureFrame, h_min: f64, link_radius: f64) -> Vec<Region> {
    let filtered = filter_uncompacted(frame, h_min);
    segment_regions(&filtered, link_radius)
        .into_iter()
        .map(|g| {
            let (_, cov) = point_moments(&g);
            Region {
                ellipse: fit_ellipse(&g),
                point_count: g.len(),
                max_height: g.iter().map(|p| p[2]).fold(0.0, f64::max),
                point_covariance: cov,
            }
        })
        .collect()
}

fn sector_summary(sector: usize, regions: &[&Region], center: Vec2) -> SectorGaussians {
    match regions {
        [] => SectorGaussians::sentinel(sector),
        [only] => {
            let e = &only.ellipse;
            SectorGaussians {
                sector,
                mu1: [e.centroid[0] - center[0], e.centroid[1] - center[1], e.mean_height],
                sigma1: only.point_covariance,
                mu2: [e.a, e.b, e.theta],
                sigma2: ZERO3,
                sample_count: 1,
            }
        }
        many => {
            let total: f64 = many.iter().map(|r| r.point_count as f64).sum();
            let samples: Vec<(f64, Vec3)> = many
                .iter()
                .map(|r| {
                    let e = &r.ellipse;
                    (
                        r.point_count as f64 / total,
                        [e.centroid[0] - center[0], e.centroid[1] - center[1], e.mean_height],
                    )
                })
                .collect();
            let (mu1, sigma1) = weighted_moments(&samples);

            // θ is axial: average on the doubled angle, spread on wrapped deviations.
            let n = many.len() as f64;
            let (s2, c2) = many.iter().fold((0.0, 0.0), |(s, c), r| {
                let t = 2.0 * r.ellipse.theta;
                (s + t.sin(), c + t.cos())
            });
            let theta_mean = fold_pi(0.5 * s2.atan2(c2));
            let shape: Vec<(f64, Vec3)> = many
                .iter()
                .map(|r| {
                    let e = &r.ellipse;
                    (1.0 / n, [e.a, e.b, theta_mean + wrap_half_pi(e.theta - theta_mean)])
                })
                .collect();
            let (mut mu2, sigma2) = weighted_moments(&shape);
            mu2[2] = fold_pi(mu2[2]);
            SectorGaussians {
                sector,
                mu1,
                sigma1,
                mu2,
                sigma2,
                sample_count: many.len(),
            }
        }
    }
}

/// Weighted mean and population covariance; weights must sum to one.
fn weighted_moments(samples: &[(f64, Vec3)]) -> (Vec3, Mat3) {
    let mut mean = [0.0; 3];
    for (w, s) in samples {
        for k in 0..3 {
            mean[k] += w * s[k];
        }
    }
    let mut cov = ZERO3;
    for (w, s) in samples {
        let d = [s[0] - mean[0], s[1] - mean[1], s[2] - mean[2]];
        for r in 0..3 {
            for c in 0..3 {
                cov[r][c] += w * d[r] * d[c];
            }
        }
    }
    (mean, cov)
}

/// Builds the per-sector state from already extracted regions. Each region
/// belongs to the sector containing its centroid.
pub fn state_from_regions(regions: &[Region], geom: &SheetGeometry, t: usize) -> SheetState {
    let mut per_sector: Vec<Vec<&Region>> = vec![Vec::new(); geom.sector_count];
    for r in regions {
        per_sector[assign_sector(r.ellipse.centroid, geom) - 1].push(r);
    }
    let sectors = per_sector
        .iter()
        .enumerate()
        .map(|(i, rs)| sector_summary(i + 1, rs, geom.center))
        .collect();
    SheetState {
        geometry: geom.clone(),
        sectors,
        t,
    }
}

pub fn build_state(frame: &CaptureFrame, geom: &SheetGeometry, h_min: f64, link_radius: f64) -> SheetState {
    let regions = extract_regions(frame, h_min, link_radius);
    state_from_regions(&regions, geom, frame.t)
}
