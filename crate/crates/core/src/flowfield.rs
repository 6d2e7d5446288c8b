//! Directions pointing away from a curve and the flows they generate in its
//! complement.

use serde::Serialize;

use crate::curve::{distance_to_curve, Curve, Point};
use crate::distortion::{beta_n, distortion_angle, g3, local_distortion};
use crate::enclosing::enclosing_ball;
use crate::error::{KnotError, Result};

pub const MONOTONE_TOL: f64 = 1e-6;
pub const FINAL_TOL: f64 = 1e-3;
const EPS_START: f64 = 0.25;
const EPS_HALVINGS: usize = 60;

#[derive(Clone, Debug, Serialize)]
pub struct DirectionSet {
    pub base: Point,
    pub epsilon: f64,
    pub distance: f64,
    pub directions: Vec<Point>,
    pub cap_center: Point,
    pub cap_radius: f64,
}

/// Unit directions from the points of `m` within `(1 + epsilon) * dist(x, m)`
/// towards `x`, and the smallest spherical cap holding them. Each edge
/// contributes the two ends of its part inside the ball; the directions of
/// the part in between lie on the great arc joining them.
pub fn direction_set(m: &Curve, x: Point, epsilon: f64) -> Result<DirectionSet> {
    let d = distance_to_curve(m, &x);
    if d <= 0.0 {
        return Err(KnotError::OnCurve);
    }
    let reach = (1.0 + epsilon) * d;
    let s = m.samples();
    let n = s.len();
    let mut directions = Vec::new();
    for i in 0..n {
        let (a, b) = (s[i], s[(i + 1) % n]);
        let dir = b - a;
        let qa = dir.norm_squared();
        // expand around the foot of the perpendicular to avoid cancellation
        let uf = (x - a).dot(&dir) / qa;
        let h = (x - (a + dir * uf)).norm();
        if reach < h {
            continue;
        }
        let half = ((reach - h) * (reach + h) / qa).sqrt();
        let u0 = (uf - half).max(0.0);
        let u1 = (uf + half).min(1.0);
        if u0 > u1 {
            continue;
        }
        let foot = uf.clamp(u0, u1);
        for u in [u0, foot, u1] {
            let v = x - (a + dir * u);
            let len = v.norm();
            if len > 0.0 {
                directions.push(v / len);
            }
        }
    }
    if directions.is_empty() {
        return Err(KnotError::OnCurve);
    }
    let ball = enclosing_ball(&directions).expect("directions are nonempty");
    let (cap_center, cap_radius) = if ball.center.norm() < 1e-12 {
        (Point::new(0.0, 0.0, 1.0), std::f64::consts::PI)
    } else {
        let e = ball.center / ball.center.norm();
        let r = directions.iter().map(|v| v.dot(&e).clamp(-1.0, 1.0).acos()).fold(0.0, f64::max);
        (e, r)
    };
    Ok(DirectionSet { base: x, epsilon, distance: d, directions, cap_center, cap_radius })
}

/// Shrinks epsilon from 0.25 by halving until the cap diameter drops below `alpha`.
pub fn adaptive_direction_set(m: &Curve, x: Point, alpha: f64) -> Result<DirectionSet> {
    let mut eps = EPS_START;
    let mut set = direction_set(m, x, eps)?;
    for _ in 0..EPS_HALVINGS {
        if 2.0 * set.cap_radius < alpha {
            break;
        }
        eps *= 0.5;
        set = direction_set(m, x, eps)?;
    }
    if set.cap_radius >= std::f64::consts::FRAC_PI_2 {
        return Err(KnotError::DistortionHypothesis([x.x, x.y, x.z]));
    }
    Ok(set)
}

/// Geodesic radius of the cap of directions for angle `alpha` in R^3.
pub fn cap_angle(alpha: f64) -> f64 {
    ((4.0f64 / 3.0).sqrt() * (0.5 * alpha).sin()).min(1.0).asin()
}

/// Quintic smoothstep on [0, 1].
pub fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 + s * (6.0 * s - 15.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum FlowDirection {
    Increasing,
    Decreasing { delta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FieldParams {
    pub alpha: f64,
    pub r_m: f64,
    pub rho: f64,
    pub direction: FlowDirection,
}

impl FieldParams {
    pub fn cutoff(&self, d: f64) -> f64 {
        match self.direction {
            FlowDirection::Increasing => 1.0 - smoothstep((d - (0.5 * self.r_m - self.rho)) / self.rho),
            FlowDirection::Decreasing { delta } => {
                smoothstep((d - 0.5 * self.rho) / (0.5 * self.rho))
                    * (1.0 - smoothstep((d - delta) / (self.r_m - delta)))
            }
        }
    }

    fn gain(&self) -> f64 {
        match self.direction {
            FlowDirection::Increasing => 0.5 * self.r_m,
            FlowDirection::Decreasing { .. } => -self.r_m,
        }
    }
}

/// The uncut field `2 e_y / cos R(alpha)` at `y`.
pub fn away_field(m: &Curve, y: Point, alpha: f64) -> Result<Point> {
    let set = adaptive_direction_set(m, y, alpha)?;
    Ok(set.cap_center * (2.0 / cap_angle(alpha).cos()))
}

pub fn vector_field(m: &Curve, y: Point, params: &FieldParams) -> Result<Point> {
    let d = distance_to_curve(m, &y);
    let cut = params.cutoff(d);
    if cut == 0.0 {
        return Ok(Point::zeros());
    }
    Ok(away_field(m, y, params.alpha)? * (params.gain() * cut))
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowTrace {
    pub seed: Point,
    pub params: FieldParams,
    pub delta_m: f64,
    pub times: Vec<f64>,
    pub states: Vec<Point>,
    pub distances: Vec<f64>,
    /// Largest step against the expected direction of the distance.
    pub monotone_violation: f64,
    pub monotone: bool,
    /// `None` when the seed lies outside the region the final bound covers.
    pub final_bound_holds: Option<bool>,
}

/// Field parameters for an admissible scale `r_m` of `m`.
pub fn field_params(m: &Curve, r_m: f64, rho: f64, direction: FlowDirection) -> Result<(FieldParams, f64)> {
    let (delta_m, _) = local_distortion(m, r_m);
    if delta_m >= g3() {
        return Err(KnotError::Precondition(format!(
            "r_M = {r_m} is not admissible: local distortion {delta_m:.6} >= g3"
        )));
    }
    match direction {
        FlowDirection::Increasing if !(rho > 0.0 && rho < 0.5 * r_m) => {
            return Err(KnotError::Precondition(format!("need 0 < rho < r_M/2, got rho = {rho}")));
        }
        FlowDirection::Decreasing { delta } if !(rho > 0.0 && rho < delta && delta < r_m) => {
            return Err(KnotError::Precondition(format!("need 0 < rho < delta < r_M, got rho = {rho}, delta = {delta}")));
        }
        _ => {}
    }
    let alpha_m = distortion_angle(delta_m)?.alpha;
    let alpha = 0.5 * (alpha_m + beta_n(3)?);
    Ok((FieldParams { alpha, r_m, rho, direction }, delta_m))
}

pub fn flow(m: &Curve, seed: Point, direction: FlowDirection, r_m: f64, rho: f64, steps: usize) -> Result<FlowTrace> {
    let (params, delta_m) = field_params(m, r_m, rho, direction)?;
    flow_with(m, seed, &params, delta_m, steps)
}

/// Classical fourth-order Runge-Kutta on [0, 1].
pub fn flow_with(m: &Curve, seed: Point, params: &FieldParams, delta_m: f64, steps: usize) -> Result<FlowTrace> {
    if steps < 64 {
        return Err(KnotError::InvalidArgument(format!("need at least 64 steps, got {steps}")));
    }
    let d0 = distance_to_curve(m, &seed);
    if d0 <= 0.0 {
        return Err(KnotError::OnCurve);
    }
    let dt = 1.0 / steps as f64;
    // the decreasing flow settles near rho/2, so the crossing guard stays below that
    let floor = (0.5 * m.min_edge()).min(0.25 * params.rho);
    let mut states = vec![seed];
    let mut distances = vec![d0];
    let mut y = seed;
    for k in 0..steps {
        let k1 = vector_field(m, y, params)?;
        let k2 = vector_field(m, y + k1 * (0.5 * dt), params)?;
        let k3 = vector_field(m, y + k2 * (0.5 * dt), params)?;
        let k4 = vector_field(m, y + k3 * dt, params)?;
        y += (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (dt / 6.0);
        let d = distance_to_curve(m, &y);
        if d < floor && d < d0 {
            return Err(KnotError::FlowCollision(k + 1));
        }
        states.push(y);
        distances.push(d);
    }
    let sign = match params.direction {
        FlowDirection::Increasing => 1.0,
        FlowDirection::Decreasing { .. } => -1.0,
    };
    let monotone_violation = distances.windows(2).map(|w| sign * (w[0] - w[1])).fold(0.0, f64::max);
    let last = *distances.last().expect("trace is nonempty");
    let final_bound_holds = match params.direction {
        FlowDirection::Increasing => (d0 < 0.5 * params.r_m).then_some(last >= 0.5 * params.r_m - params.rho - FINAL_TOL),
        FlowDirection::Decreasing { delta } => (d0 < delta).then_some(last <= params.rho + FINAL_TOL),
    };
    Ok(FlowTrace {
        seed,
        params: *params,
        delta_m,
        times: (0..=steps).map(|k| k as f64 * dt).collect(),
        states,
        distances,
        monotone_violation,
        monotone: monotone_violation <= MONOTONE_TOL,
        final_bound_holds,
    })
}
