//! Weighted least-squares trilateration.
//!
//! Minimizes `sum w_i (|p - a_i| - d_i)^2` with Gauss-Newton. The start
//! point comes from the linear system obtained by subtracting the first
//! anchor's circle equation from the others. When the full Hessian
//! (Gauss-Newton term plus residual curvature) is positive definite its
//! Newton step is taken instead, so large-residual fits converge
//! quadratically rather than linearly.

use std::collections::HashSet;

use crate::geometry::Point2D;

use super::PositioningError;

pub const MAX_ITERATIONS: usize = 50;
pub const STEP_TOLERANCE_M: f64 = 1e-9;
pub const DEFAULT_COLLINEARITY_TOL: f64 = 1e-6;
/// A final step above this after the iteration cap is a convergence failure.
const CONVERGENCE_FAILURE_STEP_M: f64 = 1e-6;
const MAX_STEP_HALVINGS: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceEstimate {
    pub sensor_id: String,
    pub anchor: Point2D,
    pub distance_m: f64,
    pub weight: f64,
}

impl DistanceEstimate {
    pub fn new(sensor_id: impl Into<String>, anchor: Point2D, distance_m: f64) -> Self {
        Self {
            sensor_id: sensor_id.into(),
            anchor,
            distance_m,
            weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trilateration {
    pub pos: Point2D,
    /// Root-mean-square of the weighted range residuals at `pos`.
    pub rms_residual_m: f64,
    pub iterations: usize,
}

/// Smallest singular value of the n x 2 matrix of anchor positions
/// centered on their mean.
pub fn smallest_singular_value(points: &[Point2D]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let my = points.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    // Eigenvalues of the symmetric 2x2 scatter matrix.
    let half_trace = (sxx + syy) / 2.0;
    let radius = (((sxx - syy) / 2.0).powi(2) + sxy * sxy).sqrt();
    (half_trace - radius).max(0.0).sqrt()
}

/// Solves the symmetric 2x2 system `[a b; b c] x = r`.
fn solve_sym2(a: f64, b: f64, c: f64, r: [f64; 2]) -> Option<[f64; 2]> {
    let det = a * c - b * b;
    let scale = (a.abs() + c.abs()).max(f64::MIN_POSITIVE);
    if !det.is_finite() || det.abs() <= 1e-14 * scale * scale {
        return None;
    }
    Some([(c * r[0] - b * r[1]) / det, (a * r[1] - b * r[0]) / det])
}

fn objective(anchors: &[DistanceEstimate], p: Point2D) -> f64 {
    anchors
        .iter()
        .map(|a| {
            let r = p.distance(&a.anchor) - a.distance_m;
            a.weight * r * r
        })
        .sum()
}

fn linearized_start(anchors: &[DistanceEstimate]) -> Option<Point2D> {
    let first = &anchors[0];
    let (a0, d0) = (first.anchor, first.distance_m);
    let (mut hxx, mut hxy, mut hyy, mut gx, mut gy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for a in &anchors[1..] {
        let ax = 2.0 * (a.anchor.x - a0.x);
        let ay = 2.0 * (a.anchor.y - a0.y);
        let b = d0 * d0 - a.distance_m * a.distance_m + a.anchor.x * a.anchor.x
            + a.anchor.y * a.anchor.y
            - a0.x * a0.x
            - a0.y * a0.y;
        let w = a.weight.min(first.weight);
        hxx += w * ax * ax;
        hxy += w * ax * ay;
        hyy += w * ay * ay;
        gx += w * ax * b;
        gy += w * ay * b;
    }
    solve_sym2(hxx, hxy, hyy, [gx, gy]).map(|[x, y]| Point2D::new(x, y))
}

fn centroid(anchors: &[DistanceEstimate]) -> Point2D {
    let n = anchors.len() as f64;
    Point2D::new(
        anchors.iter().map(|a| a.anchor.x).sum::<f64>() / n,
        anchors.iter().map(|a| a.anchor.y).sum::<f64>() / n,
    )
}

pub fn trilaterate(anchors: &[DistanceEstimate]) -> Result<Trilateration, PositioningError> {
    trilaterate_with(anchors, DEFAULT_COLLINEARITY_TOL)
}

pub fn trilaterate_with(
    anchors: &[DistanceEstimate],
    collinearity_tol: f64,
) -> Result<Trilateration, PositioningError> {
    if anchors.len() < 3 {
        return Err(PositioningError::InsufficientAnchors {
            found: anchors.len(),
        });
    }
    let mut seen = HashSet::new();
    for a in anchors {
        if !seen.insert(a.sensor_id.as_str()) {
            return Err(PositioningError::DuplicateAnchor(a.sensor_id.clone()));
        }
        let valid = a.anchor.is_finite()
            && a.distance_m.is_finite()
            && a.distance_m > 0.0
            && a.weight.is_finite()
            && a.weight >= 0.0;
        if !valid {
            return Err(PositioningError::InvalidMeasurement(a.sensor_id.clone()));
        }
    }
    let weighted: Vec<Point2D> = anchors
        .iter()
        .filter(|a| a.weight > 0.0)
        .map(|a| a.anchor)
        .collect();
    let sv = if weighted.len() < 3 {
        0.0
    } else {
        smallest_singular_value(&weighted)
    };
    if sv <= collinearity_tol {
        return Err(PositioningError::DegenerateGeometry {
            smallest_singular_value: sv,
        });
    }

    let mut p = linearized_start(anchors).unwrap_or_else(|| centroid(anchors));
    let mut cost = objective(anchors, p);
    let mut last_step = f64::INFINITY;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (mut hxx, mut hxy, mut hyy, mut gx, mut gy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
        for a in anchors {
            let dx = p.x - a.anchor.x;
            let dy = p.y - a.anchor.y;
            let range = dx.hypot(dy);
            if range < 1e-12 {
                continue;
            }
            let (jx, jy) = (dx / range, dy / range);
            let r = range - a.distance_m;
            hxx += a.weight * jx * jx;
            hxy += a.weight * jx * jy;
            hyy += a.weight * jy * jy;
            gx += a.weight * jx * r;
            gy += a.weight * jy * r;
            // r * Hessian of the range: (I - u u^T) / range.
            let k = a.weight * r / range;
            cxx += k * (1.0 - jx * jx);
            cxy -= k * jx * jy;
            cyy += k * (1.0 - jy * jy);
        }
        let (fxx, fxy, fyy) = (hxx + cxx, hxy + cxy, hyy + cyy);
        let newton = if fxx > 0.0 && fxx * fyy - fxy * fxy > 0.0 {
            solve_sym2(fxx, fxy, fyy, [-gx, -gy])
        } else {
            None
        };
        let Some([sx, sy]) = newton.or_else(|| solve_sym2(hxx, hxy, hyy, [-gx, -gy])) else {
            break;
        };
        last_step = sx.hypot(sy);
        if last_step < STEP_TOLERANCE_M {
            p = Point2D::new(p.x + sx, p.y + sy);
            break;
        }
        // Backtrack along the step until the cost drops.
        let mut frac = 1.0;
        let mut moved = false;
        for _ in 0..MAX_STEP_HALVINGS {
            let candidate = Point2D::new(p.x + frac * sx, p.y + frac * sy);
            let c = objective(anchors, candidate);
            if c <= cost {
                p = candidate;
                cost = c;
                moved = true;
                break;
            }
            frac *= 0.5;
        }
        if !moved {
            // No descent left along the step: at a minimum to working precision.
            last_step = 0.0;
            break;
        }
    }
    if last_step > CONVERGENCE_FAILURE_STEP_M {
        return Err(PositioningError::NoConvergence {
            last_step_m: last_step,
        });
    }
    let n = anchors.len() as f64;
    Ok(Trilateration {
        pos: p,
        rms_residual_m: (objective(anchors, p) / n).sqrt(),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(id: &str, x: f64, y: f64, d: f64) -> DistanceEstimate {
        DistanceEstimate::new(id, Point2D::new(x, y), d)
    }

    #[test]
    fn insufficient_anchors() {
        let two = [est("A", 0.0, 0.0, 1.0), est("B", 1.0, 0.0, 1.0)];
        assert_eq!(
            trilaterate(&two),
            Err(PositioningError::InsufficientAnchors { found: 2 })
        );
    }

    #[test]
    fn collinear_anchors_are_degenerate() {
        let line = [
            est("A", 0.0, 0.0, 3.0),
            est("B", 5.0, 0.0, 3.0),
            est("C", 10.0, 0.0, 3.0),
        ];
        assert!(matches!(
            trilaterate(&line),
            Err(PositioningError::DegenerateGeometry { .. })
        ));
    }

    #[test]
    fn duplicate_sensor_rejected() {
        let dup = [
            est("A", 0.0, 0.0, 3.0),
            est("A", 5.0, 0.0, 3.0),
            est("C", 0.0, 5.0, 3.0),
        ];
        assert_eq!(trilaterate(&dup), Err(PositioningError::DuplicateAnchor("A".into())));
    }

    #[test]
    fn exact_distances_give_true_point() {
        let truth = Point2D::new(3.2, -1.7);
        let anchors: Vec<_> = [(0.0, 0.0), (8.0, 1.0), (2.0, 9.0), (-4.0, 3.0)]
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                let a = Point2D::new(x, y);
                DistanceEstimate::new(format!("S{i}"), a, a.distance(&truth))
            })
            .collect();
        let fix = trilaterate(&anchors).unwrap();
        assert!(fix.pos.distance(&truth) < 1e-9);
        assert!(fix.rms_residual_m < 1e-9);
    }

    #[test]
    fn singular_value_of_square_corners() {
        let pts = [
            Point2D::new(0.0, 0.0),
            Point2D::new(2.0, 0.0),
            Point2D::new(0.0, 2.0),
            Point2D::new(2.0, 2.0),
        ];
        assert!((smallest_singular_value(&pts) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_anchor_is_ignored_for_geometry() {
        let anchors = [
            DistanceEstimate { weight: 0.0, ..est("A", 5.0, 5.0, 1.0) },
            est("B", 0.0, 0.0, 3.0),
            est("C", 10.0, 0.0, 3.0),
        ];
        assert!(matches!(
            trilaterate(&anchors),
            Err(PositioningError::DegenerateGeometry { .. })
        ));
    }
}
