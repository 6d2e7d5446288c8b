//! Discrete Möbius energy, its exact gradient, rotational symmetry about the
//! z axis, torus-knot initializers and a symmetric descent loop.

use std::f64::consts::PI;

use nalgebra::Rotation3;
use rayon::prelude::*;
use serde::Serialize;

use crate::curve::{equal_chord_points, resample_arclength, Curve, Point};
use crate::distortion::{certify_equivalence, global_distortion, EquivalenceCertificate};
use crate::error::{KnotError, Result};

/// Curves whose symmetry residual is below this are called symmetric.
pub const SYMMETRY_TOL: f64 = 1e-9;
const ROW_BLOCK: usize = 32;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `Rot(2 pi m / p)` applied to `γ(s - 1/p)` gives back `γ(s)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SymmetrySpec {
    pub p: usize,
    pub m: usize,
}

impl SymmetrySpec {
    pub fn new(p: usize, m: usize) -> Result<Self> {
        if p < 2 {
            return Err(KnotError::InvalidArgument(format!("symmetry order must be at least 2, got {p}")));
        }
        let m = m % p;
        if gcd(m as u64, p as u64) != 1 {
            return Err(KnotError::InvalidArgument(format!("rotation multiplier {m} is not coprime to {p}")));
        }
        Ok(SymmetrySpec { p, m })
    }

    /// Rotation by `k` elementary steps (negative `k` rotates backwards).
    pub fn rotation(&self, k: i64) -> Rotation3<f64> {
        let angle = 2.0 * PI * (self.m as i64 * k).rem_euclid(self.p as i64) as f64 / self.p as f64;
        // quarter turns are kept exact so that straight pieces stay straight
        let snap = |v: f64| if v.abs() < 1e-15 { 0.0 } else if (v.abs() - 1.0).abs() < 1e-15 { v.signum() } else { v };
        let (sin, cos) = (snap(angle.sin()), snap(angle.cos()));
        Rotation3::from_matrix_unchecked(nalgebra::Matrix3::new(cos, -sin, 0.0, sin, cos, 0.0, 0.0, 0.0, 1.0))
    }

    fn block(&self, n: usize) -> Result<usize> {
        if !n.is_multiple_of(self.p) {
            return Err(KnotError::InvalidArgument(format!("sample count {n} is not divisible by p = {}", self.p)));
        }
        Ok(n / self.p)
    }

    /// `max_i |R q_{i-N/p} - q_i|`.
    pub fn residual(&self, c: &Curve) -> Result<f64> {
        self.field_residual(c.samples())
    }

    pub fn field_residual(&self, h: &[Point]) -> Result<f64> {
        let n = h.len();
        let b = self.block(n)?;
        let rot = self.rotation(1);
        Ok((0..n).map(|i| (rot * h[(i + n - b) % n] - h[i]).norm()).fold(0.0, f64::max))
    }

    pub fn is_symmetric(&self, c: &Curve) -> Result<bool> {
        Ok(self.residual(c)? <= SYMMETRY_TOL)
    }

    /// `h_sym(i) = sum_{k=1..p} R^{-k} h(i + kN/p)`.
    pub fn symmetrize_field(&self, h: &[Point]) -> Result<Vec<Point>> {
        let n = h.len();
        let b = self.block(n)?;
        let rots: Vec<_> = (1..=self.p as i64).map(|k| self.rotation(-k)).collect();
        Ok((0..n)
            .map(|i| rots.iter().enumerate().fold(Point::zeros(), |acc, (k, r)| acc + r * h[(i + (k + 1) * b) % n]))
            .collect())
    }

    /// Replaces every orbit by its rotational average.
    pub fn orbit_average(&self, c: &Curve) -> Result<Curve> {
        let sym = self.symmetrize_field(c.samples())?;
        Curve::new(sym.into_iter().map(|v| v / self.p as f64).collect())
    }

    /// Equal-chord resampling of a symmetric curve that keeps it symmetric:
    /// one fundamental arc is resampled and the copies are rotated into place.
    pub fn resample(&self, c: &Curve, n_out: usize) -> Result<Curve> {
        let b = self.block(n_out)?;
        let (block, _) = equal_chord_points(c, b, c.length() / self.p as f64)?;
        let mut pts = Vec::with_capacity(n_out);
        for k in 0..self.p as i64 {
            let r = self.rotation(k);
            pts.extend(block.iter().map(|q| r * q));
        }
        Curve::new(pts)
    }
}

pub fn symmetrize_field(h: &[Point], spec: &SymmetrySpec) -> Result<Vec<Point>> {
    spec.symmetrize_field(h)
}

/// Samples of the standard `(a, b)` torus knot, resampled to equal chords.
/// When `|b|` divides `n` the output is exactly symmetric of order `|b|`
/// with multiplier `a mod |b|`.
pub fn torus_knot(a: i64, b: i64, big_r: f64, small_r: f64, n: usize) -> Result<Curve> {
    if [a, b].iter().any(|v| v.abs() <= 1) || gcd(a.unsigned_abs(), b.unsigned_abs()) != 1 {
        return Err(KnotError::InvalidArgument(format!("torus parameters ({a},{b}) must be coprime and outside {{0, 1, -1}}")));
    }
    if !(small_r > 0.0 && small_r < big_r) {
        return Err(KnotError::InvalidArgument(format!("need 0 < r0 < R0, got r0 = {small_r}, R0 = {big_r}")));
    }
    let dense = 16 * n.max(8) * b.unsigned_abs() as usize;
    let raw = Curve::from_fn(dense, |t| {
        let (u, v) = (2.0 * PI * a as f64 * t, 2.0 * PI * b as f64 * t);
        let rad = big_r + small_r * v.cos();
        Point::new(rad * u.cos(), rad * u.sin(), small_r * v.sin())
    })?;
    match torus_symmetry(a, b) {
        Some(spec) if n.is_multiple_of(spec.p) => spec.resample(&raw, n),
        _ => resample_arclength(&raw, n),
    }
}

/// The rotational symmetry a torus knot carries with `p = |b|`.
pub fn torus_symmetry(a: i64, b: i64) -> Option<SymmetrySpec> {
    let p = b.unsigned_abs() as usize;
    SymmetrySpec::new(p, a.rem_euclid(p as i64) as usize).ok()
}

/// Vertex weights `(e_{i-1} + e_i) / 2`.
fn vertex_weights(c: &Curve) -> Vec<f64> {
    let e = c.edge_lengths();
    let n = e.len();
    (0..n).map(|i| 0.5 * (e[(i + n - 1) % n] + e[i])).collect()
}

struct Pair {
    chord_sq: f64,
    arc: f64,
    forward_shorter: Option<bool>,
}

#[inline]
fn pair(c: &Curve, i: usize, j: usize) -> Pair {
    let q = c.samples();
    let l = c.length();
    let fwd = (c.arclength_to(j) - c.arclength_to(i)).rem_euclid(l);
    let back = l - fwd;
    let tie = (fwd - back).abs() <= 1e-12 * l;
    Pair {
        chord_sq: (q[i] - q[j]).norm_squared(),
        arc: fwd.min(back),
        forward_shorter: if tie { None } else { Some(fwd < back) },
    }
}

fn check_embedded(c: &Curve) -> Result<()> {
    let n = c.n();
    let floor = 1e-14 * c.length();
    for i in 0..n {
        for j in i + 2..n {
            if (i, j) != (0, n - 1) && (c.point(i) - c.point(j)).norm() <= floor {
                return Err(KnotError::NotEmbedded(i, j));
            }
        }
    }
    Ok(())
}

/// `sum_{i != j} (1/|q_i - q_j|^2 - 1/d(i,j)^2) w_i w_j` with trapezoid
/// vertex weights and the intrinsic distance `d` along the polygon.
pub fn mobius_energy(c: &Curve) -> Result<f64> {
    check_embedded(c)?;
    let w = vertex_weights(c);
    let n = c.n();
    let rows = energy_rows(c, &w, 0..n);
    Ok(rows.iter().sum())
}

fn energy_rows(c: &Curve, w: &[f64], rows: std::ops::Range<usize>) -> Vec<f64> {
    let n = c.n();
    rows.into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for j in (0..n).filter(|&j| j != i) {
                let pr = pair(c, i, j);
                acc += (1.0 / pr.chord_sq - 1.0 / (pr.arc * pr.arc)) * w[j];
            }
            acc * w[i]
        })
        .collect()
}

/// Energy evaluated on one fundamental block of rows and multiplied by `p`.
pub fn mobius_energy_symmetric(c: &Curve, spec: &SymmetrySpec) -> Result<f64> {
    check_embedded(c)?;
    let b = spec.block(c.n())?;
    let w = vertex_weights(c);
    Ok(spec.p as f64 * energy_rows(c, &w, 0..b).iter().sum::<f64>())
}

struct BlockTerms {
    row_f: Vec<f64>,
    chord_grad: Vec<Point>,
    diff: Vec<f64>,
    everywhere: f64,
}

/// Exact gradient of [`mobius_energy`] with respect to the vertex positions,
/// through the chords, the weights and the intrinsic distances. Antipodal
/// ties split the arc derivative evenly between both arcs.
pub fn mobius_gradient(c: &Curve) -> Result<Vec<Point>> {
    check_embedded(c)?;
    let n = c.n();
    let q = c.samples();
    let w = vertex_weights(c);
    let starts: Vec<usize> = (0..n).step_by(ROW_BLOCK).collect();
    let blocks: Vec<BlockTerms> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + ROW_BLOCK).min(n);
            let mut t = BlockTerms {
                row_f: Vec::with_capacity(end - start),
                chord_grad: Vec::with_capacity(end - start),
                diff: vec![0.0; n + 1],
                everywhere: 0.0,
            };
            for i in start..end {
                let mut f = 0.0;
                let mut g = Point::zeros();
                for j in (0..n).filter(|&j| j != i) {
                    let pr = pair(c, i, j);
                    f += (1.0 / pr.chord_sq - 1.0 / (pr.arc * pr.arc)) * w[j];
                    g += (q[i] - q[j]) * (w[j] / (pr.chord_sq * pr.chord_sq));
                    if j > i {
                        let a = 4.0 * w[i] * w[j] / (pr.arc * pr.arc * pr.arc);
                        let (fwd, back) = match pr.forward_shorter {
                            Some(true) => (a, 0.0),
                            Some(false) => (0.0, a),
                            None => (0.5 * a, 0.5 * a),
                        };
                        // forward arc covers edges i..j, the other arc the rest
                        t.diff[i] += fwd - back;
                        t.diff[j] -= fwd - back;
                        t.everywhere += back;
                    }
                }
                t.row_f.push(f);
                t.chord_grad.push(g * (-4.0 * w[i]));
            }
            t
        })
        .collect();

    let mut row_f = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(n);
    let mut diff = vec![0.0; n + 1];
    let mut everywhere = 0.0;
    for b in blocks {
        row_f.extend(b.row_f);
        grad.extend(b.chord_grad);
        for (d, x) in diff.iter_mut().zip(&b.diff) {
            *d += x;
        }
        everywhere += b.everywhere;
    }
    let mut edge_grad = vec![0.0; n];
    let mut run = everywhere;
    for m in 0..n {
        run += diff[m];
        edge_grad[m] = row_f[m] + row_f[(m + 1) % n] + run;
    }
    for m in 0..n {
        let t = (c.point(m + 1) - q[m]) / c.edge_length(m);
        grad[(m + 1) % n] += t * edge_grad[m];
        grad[m] -= t * edge_grad[m];
    }
    Ok(grad)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Initializer {
    Torus { a: i64, b: i64, big_r: f64, small_r: f64 },
    Ellipse { semi_x: f64, semi_y: f64 },
}

impl Initializer {
    pub fn build(&self, n: usize, spec: &SymmetrySpec) -> Result<Curve> {
        match *self {
            Initializer::Torus { a, b, big_r, small_r } => torus_knot(a, b, big_r, small_r, n),
            Initializer::Ellipse { semi_x, semi_y } => {
                let raw = Curve::from_fn(16 * n * spec.p, |t| {
                    Point::new(semi_x * (2.0 * PI * t).cos(), semi_y * (2.0 * PI * t).sin(), 0.0)
                })?;
                spec.resample(&raw, n)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MinimizeConfig {
    pub init: Initializer,
    pub p: usize,
    pub m: usize,
    pub n: usize,
    pub max_iter: usize,
    pub armijo: f64,
    pub initial_step: f64,
    pub max_halvings: usize,
    /// Relative energy decrease below which the run counts as converged.
    pub energy_tol: f64,
    /// Certificates against the previous checkpoint every this many iterations; 0 disables.
    pub certificate_cadence: usize,
}

impl MinimizeConfig {
    pub fn torus(a: i64, b: i64, p: usize, m: usize, n: usize, max_iter: usize) -> Self {
        MinimizeConfig {
            init: Initializer::Torus { a, b, big_r: 2.0, small_r: 0.5 },
            p,
            m,
            n,
            max_iter,
            armijo: 1e-4,
            initial_step: 1e-2,
            max_halvings: 40,
            energy_tol: 1e-13,
            certificate_cadence: 5,
        }
    }

    pub fn validate(&self) -> Result<SymmetrySpec> {
        if let Initializer::Torus { a, b, .. } = self.init {
            if gcd(a.unsigned_abs(), b.unsigned_abs()) != 1 || [a, b].iter().any(|v| v.abs() <= 1) {
                return Err(KnotError::InvalidArgument(format!("torus parameters ({a},{b}) must be coprime and outside {{0, 1, -1}}")));
            }
        }
        let spec = SymmetrySpec::new(self.p, self.m)?;
        spec.block(self.n)?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyState {
    pub iteration: usize,
    pub energy: f64,
    pub residual: f64,
    pub bilip: f64,
    pub step: f64,
    #[serde(skip)]
    pub curve: Curve,
    #[serde(skip)]
    pub gradient: Vec<Point>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    MaxIterations,
    Converged,
    Stalled,
}

#[derive(Clone, Debug, Serialize)]
pub struct MinimizeRun {
    pub spec: SymmetrySpec,
    pub states: Vec<EnergyState>,
    pub certificates: Vec<(usize, EquivalenceCertificate)>,
    pub stop: StopReason,
}

impl MinimizeRun {
    pub fn last(&self) -> &EnergyState {
        self.states.last().expect("a run holds at least the initial state")
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.states.windows(2).all(|w| w[1].energy < w[0].energy)
    }

    pub fn max_residual(&self) -> f64 {
        self.states.iter().map(|s| s.residual).fold(0.0, f64::max)
    }
}

fn state(curve: Curve, spec: &SymmetrySpec, iteration: usize, step: f64) -> Result<EnergyState> {
    let energy = mobius_energy(&curve)?;
    let gradient = mobius_gradient(&curve)?;
    Ok(EnergyState {
        iteration,
        energy,
        residual: spec.residual(&curve)?,
        bilip: global_distortion(&curve).0,
        step,
        curve,
        gradient,
    })
}

pub fn minimize_symmetric(cfg: &MinimizeConfig) -> Result<MinimizeRun> {
    let spec = cfg.validate()?;
    let start = cfg.init.build(cfg.n, &spec)?;
    minimize_from(start, cfg, &spec)
}

/// Projected gradient descent inside the symmetric class. Each candidate is
/// moved along the symmetrized gradient, orbit-averaged, resampled
/// symmetrically, rescaled to the starting length and orbit-averaged again;
/// the Armijo test is applied to that candidate.
pub fn minimize_from(start: Curve, cfg: &MinimizeConfig, spec: &SymmetrySpec) -> Result<MinimizeRun> {
    let n = start.n();
    let length = start.length();
    let mut current = state(start, spec, 0, 0.0)?;
    let mut checkpoint = current.curve.clone();
    let mut states = Vec::with_capacity(cfg.max_iter + 1);
    let mut certificates = Vec::new();
    let mut stop = StopReason::MaxIterations;
    for iter in 1..=cfg.max_iter {
        let dir: Vec<Point> = spec.symmetrize_field(&current.gradient)?.into_iter().map(|v| v / spec.p as f64).collect();
        let slope: f64 = dir.iter().zip(&current.gradient).map(|(d, g)| d.dot(g)).sum();
        let peak = dir.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if peak == 0.0 || slope <= 0.0 {
            stop = StopReason::Converged;
            break;
        }
        let tau0 = cfg.initial_step / peak;
        let mut tau = tau0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            if let Ok(cand) = candidate(&current.curve, &dir, tau, spec, n, length) {
                if let Ok(e) = mobius_energy(&cand) {
                    if e < current.energy && e <= current.energy - cfg.armijo * tau * slope {
                        accepted = Some(cand);
                        break;
                    }
                }
            }
            tau *= 0.5;
        }
        let Some(next) = accepted else {
            stop = if tau0 * slope < cfg.energy_tol * current.energy { StopReason::Converged } else { StopReason::Stalled };
            break;
        };
        let prev = std::mem::replace(&mut current, state(next, spec, iter, tau)?);
        states.push(prev);
        if current.residual > SYMMETRY_TOL {
            return Err(KnotError::Precondition(format!("symmetry residual {} after re-projection", current.residual)));
        }
        if cfg.certificate_cadence > 0 && iter % cfg.certificate_cadence == 0 {
            let cert = certify_equivalence(&checkpoint, &current.curve);
            let ok = cert.pass;
            certificates.push((iter, cert));
            if !ok {
                return Err(KnotError::CertificateFailed(iter));
            }
            checkpoint = current.curve.clone();
        }
        let drop = states.last().map(|s| s.energy - current.energy).unwrap_or(0.0);
        if drop < cfg.energy_tol * current.energy {
            stop = StopReason::Converged;
            break;
        }
    }
    states.push(current);
    Ok(MinimizeRun { spec: *spec, states, certificates, stop })
}

fn candidate(c: &Curve, dir: &[Point], tau: f64, spec: &SymmetrySpec, n: usize, length: f64) -> Result<Curve> {
    let moved = Curve::new(c.samples().iter().zip(dir).map(|(q, d)| q - d * tau).collect())?;
    let moved = spec.orbit_average(&moved)?;
    let resampled = spec.resample(&moved, n)?;
    let scaled = resampled.scaled(length / resampled.length())?;
    spec.orbit_average(&scaled)
}
