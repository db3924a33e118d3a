//! Planar helpers shared by the state estimator, simulator and search.
//!
//! Points are `[x, y]` in millimeters. Polygons are ordered vertex lists,
//! implicitly closed.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

pub type Vec2 = [f64; 2];
pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub const ZERO3: Mat3 = [[0.0; 3]; 3];

pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn scale(a: Vec2, s: f64) -> Vec2 {
    [a[0] * s, a[1] * s]
}

pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn cross(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

pub fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

pub fn unit(angle: f64) -> Vec2 {
    [angle.cos(), angle.sin()]
}

/// Folds an axial angle into `[0, π)`.
pub fn fold_pi(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    // rem_euclid can round up to exactly PI for tiny negative inputs
    if t >= PI {
        0.0
    } else {
        t
    }
}

/// Folds a full angle into `[0, 2π)`.
pub fn fold_tau(angle: f64) -> f64 {
    let t = angle.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Shortest signed difference between two axial angles, in `(−π/2, π/2]`.
pub fn wrap_half_pi(d: f64) -> f64 {
    // `%` is exact, so differences already in range come back unchanged
    let w = d % PI;
    if w > FRAC_PI_2 {
        w - PI
    } else if w <= -FRAC_PI_2 {
        w + PI
    } else {
        w
    }
}

pub fn trace(m: &Mat3) -> f64 {
    m[0][0] + m[1][1] + m[2][2]
}

/// Signed area by the shoelace formula (positive for counter-clockwise).
pub fn signed_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| cross(poly[i], poly[(i + 1) % n])).sum::<f64>() * 0.5
}

pub fn area(poly: &[Vec2]) -> f64 {
    signed_area(poly).abs()
}

/// Even-odd point-in-polygon test. Points exactly on an edge may land on
/// either side.
pub fn contains(poly: &[Vec2], p: Vec2) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi[1] > p[1]) != (pj[1] > p[1]) {
            let x = pj[0] + (p[1] - pj[1]) * (pi[0] - pj[0]) / (pi[1] - pj[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn segments_intersect(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> bool {
    let d1 = cross(sub(a1, a0), sub(b0, a0));
    let d2 = cross(sub(a1, a0), sub(b1, a0));
    let d3 = cross(sub(b1, b0), sub(a0, b0));
    let d4 = cross(sub(b1, b0), sub(a1, b0));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |p: Vec2, q0: Vec2, q1: Vec2, d: f64| {
        d == 0.0
            && p[0] >= q0[0].min(q1[0])
            && p[0] <= q0[0].max(q1[0])
            && p[1] >= q0[1].min(q1[1])
            && p[1] <= q0[1].max(q1[1])
    };
    on(b0, a0, a1, d1) || on(b1, a0, a1, d2) || on(a0, b0, b1, d3) || on(a1, b0, b1, d4)
}

/// True when no two non-adjacent edges touch and the polygon has nonzero area.
pub fn is_simple(poly: &[Vec2]) -> bool {
    let n = poly.len();
    if n < 3 || area(poly) <= 0.0 {
        return false;
    }
    for i in 0..n {
        let (a0, a1) = (poly[i], poly[(i + 1) % n]);
        if a0 == a1 {
            return false;
        }
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(a0, a1, poly[j], poly[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// Smallest positive `t` at which `origin + t·dir` crosses the polygon
/// boundary, or `None` when the ray misses it.
pub fn ray_exit(poly: &[Vec2], origin: Vec2, dir: Vec2) -> Option<f64> {
    let n = poly.len();
    let mut best: Option<f64> = None;
    for i in 0..n {
        let (p0, p1) = (poly[i], poly[(i + 1) % n]);
        let e = sub(p1, p0);
        let denom = cross(dir, e);
        if denom == 0.0 {
            continue;
        }
        let w = sub(p0, origin);
        let t = cross(w, e) / denom;
        let s = cross(w, dir) / denom;
        if t > 1e-12 && (-1e-12..=1.0 + 1e-12).contains(&s) {
            best = Some(best.map_or(t, |b: f64| b.min(t)));
        }
    }
    best
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    if len2 == 0.0 {
        return norm(sub(p, a));
    }
    let t = (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
    norm(sub(p, add(a, scale(ab, t))))
}

/// Index of the boundary edge closest to `p`, with the distance to it.
pub fn nearest_edge(poly: &[Vec2], p: Vec2) -> (usize, f64) {
    let n = poly.len();
    (0..n)
        .map(|i| (i, point_segment_distance(p, poly[i], poly[(i + 1) % n])))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Direction angle of edge `i` (from vertex `i` to vertex `i + 1`).
pub fn edge_angle(poly: &[Vec2], i: usize) -> f64 {
    let d = sub(poly[(i + 1) % poly.len()], poly[i]);
    d[1].atan2(d[0])
}

/// Symmetric 2×2 eigen-decomposition `[[sxx, sxy], [sxy, syy]]`.
///
/// Returns `(λ_major, λ_minor, θ)` with θ the major-axis angle folded into
/// `[0, π)`. An isotropic input yields θ = 0.
pub fn sym2_eigen(sxx: f64, sxy: f64, syy: f64) -> (f64, f64, f64) {
    let half_tr = 0.5 * (sxx + syy);
    let half_diff = 0.5 * (sxx - syy);
    let r = half_diff.hypot(sxy);
    let theta = if sxy == 0.0 && half_diff >= 0.0 {
        0.0
    } else {
        fold_pi(0.5 * (2.0 * sxy).atan2(sxx - syy))
    };
    (half_tr + r, half_tr - r, theta)
}
