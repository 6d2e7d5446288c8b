//! Detection of concentration points of the tangent seminorm measure, choice
//! of a working scale around them, and the substitution pipeline that
//! straightens them out.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::curve::{hausdorff_distance, index_distance, Curve, ParamPoint, Point};
use crate::distortion::{certify_equivalence, global_distortion, local_distortion, EquivalenceCertificate};
use crate::error::{KnotError, Result};
use crate::mobius::SymmetrySpec;
use crate::sobolev::{block_sum, fractional_admissible_scale, fractional_ladder, half_width, SeminormGrid, DEFAULT_BAND};
use crate::substitution::{substitute, theta4, SubstituteOptions, SubstitutionReport};

/// Default mass threshold for a concentration point, `2/3 - 6/pi^2`.
pub fn default_epsilon() -> f64 {
    2.0 / 3.0 - 6.0 / (PI * PI)
}

/// Margin on the final local distortion check against `pi/3`.
pub const DISTORTION_MARGIN: f64 = 1e-2;
const SPOT_CHECKS: usize = 100;

/// Smallest window radius the grid resolves, in parameter units.
pub fn smallest_window(n: usize) -> f64 {
    4.0 / n as f64
}

#[derive(Clone, Debug, Serialize)]
pub struct Detection {
    pub epsilon: f64,
    pub window: f64,
    pub total_mass: f64,
    /// Detected parameters, one per run of consecutive samples above epsilon.
    pub points: Vec<f64>,
    pub indices: Vec<usize>,
    pub masses: Vec<f64>,
    pub cardinality_bound: usize,
    pub cardinality_ok: bool,
    pub off_diagonal_checked: usize,
    pub warnings: Vec<String>,
}

/// Marks samples whose diagonal window mass at radius `4/N` exceeds
/// `epsilon`. Runs of consecutive marked samples are merged into the sample
/// with the largest mass.
pub fn detect_concentrations(c: &Curve, epsilon: f64, seed: u64) -> Detection {
    let grid = SeminormGrid::new(c, DEFAULT_BAND);
    detect_on(&grid, epsilon, seed)
}

fn detect_on(grid: &SeminormGrid, epsilon: f64, seed: u64) -> Detection {
    let n = grid.n();
    let window = smallest_window(n);
    let half = half_width(n, window);
    let masses: Vec<f64> = (0..n).into_par_iter().map(|x| grid.ball_mass(x, half)).collect();
    let marked: Vec<bool> = masses.iter().map(|&m| m > epsilon).collect();

    let mut indices = Vec::new();
    if marked.iter().all(|&m| m) {
        indices.push(argmax(&masses, 0..n));
    } else if marked.iter().any(|&m| m) {
        // start scanning just after an unmarked sample so runs do not wrap
        let start = (0..n).find(|&i| !marked[i]).expect("some sample is unmarked");
        let mut i = 0;
        while i < n {
            let k = (start + i) % n;
            if !marked[k] {
                i += 1;
                continue;
            }
            let mut run = Vec::new();
            while i < n && marked[(start + i) % n] {
                run.push((start + i) % n);
                i += 1;
            }
            indices.push(argmax(&masses, run.into_iter()));
        }
        indices.sort_unstable();
    }

    let total_mass = grid.total();
    let cardinality_bound = (total_mass / epsilon).ceil() as usize;
    let mut warnings = Vec::new();

    // off-diagonal windows: B_r(x) x B_r(y) is bounded by 16 w^2 / |x - y|^2
    // with w the window width, as soon as |x - y| >= 2w
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = (2 * half + 1) as f64 / n as f64;
    let min_gap = (2 * (2 * half + 1)).min(n / 2);
    let mut checked = 0;
    for _ in 0..SPOT_CHECKS {
        let x = rng.gen_range(0..n);
        let y = rng.gen_range(0..n);
        let gap = index_distance(x, y, n);
        if gap < min_gap {
            continue;
        }
        checked += 1;
        let sep = gap as f64 / n as f64;
        let mass = grid.pair_mass(x, y, half);
        let bound = 16.0 * width * width / (sep * sep);
        if mass > bound {
            warnings.push(format!("off-diagonal window ({x}, {y}) holds {mass:.3e} above {bound:.3e}"));
        }
        if mass > epsilon {
            warnings.push(format!("off-diagonal window ({x}, {y}) exceeds epsilon; grid too coarse"));
        }
    }

    Detection {
        epsilon,
        window,
        total_mass,
        points: indices.iter().map(|&i| i as f64 / n as f64).collect(),
        masses: indices.iter().map(|&i| masses[i]).collect(),
        cardinality_ok: indices.len() <= cardinality_bound,
        indices,
        cardinality_bound,
        off_diagonal_checked: checked,
        warnings,
    }
}

fn argmax(masses: &[f64], it: impl Iterator<Item = usize>) -> usize {
    it.fold(None, |best: Option<usize>, i| match best {
        Some(b) if masses[b] >= masses[i] => Some(b),
        _ => Some(i),
    })
    .expect("run is nonempty")
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ScaleChoice {
    pub r_bar: f64,
    pub annulus_limit: f64,
    pub r_gamma: Option<f64>,
    pub symmetry_limit: f64,
    pub separation_limit: f64,
    pub uniform_limit: Option<f64>,
    pub theta: f64,
}

fn annulus_mass(u: &[Point], x: usize, r: f64, theta: f64) -> f64 {
    let n = u.len();
    let half = half_width(n, r).min((n - 1) / 2) as isize;
    let cut = (theta * r).max(smallest_window(n)) * n as f64 + 1e-9;
    let idx: Vec<usize> = (-half..=half)
        .filter(|o| o.unsigned_abs() as f64 > cut)
        .map(|o| (x as isize + o).rem_euclid(n as isize) as usize)
        .collect();
    block_sum(u, &idx, &idx, DEFAULT_BAND)
}

/// Working scale around the detected points: the minimum of the annulus
/// limit, `r_gamma`, `1/(4p)`, a quarter of the smallest separation and the
/// uniform-smallness radius away from the detected points.
pub fn select_scale(c: &Curve, detected: &[usize], p: usize, bilip: f64, r_gamma: Option<f64>, epsilon: f64) -> Result<ScaleChoice> {
    if detected.is_empty() {
        return Err(KnotError::InvalidArgument("no concentration points; nothing to substitute".into()));
    }
    let grid = SeminormGrid::new(c, DEFAULT_BAND);
    select_on(&grid, detected, p, bilip, r_gamma, epsilon)
}

fn select_on(grid: &SeminormGrid, detected: &[usize], p: usize, bilip: f64, r_gamma: Option<f64>, epsilon: f64) -> Result<ScaleChoice> {
    let n = grid.n();
    let u = grid.tangents();
    let theta = theta4(bilip);
    let ladder = fractional_ladder(n);

    let mut annulus_limit = None;
    for &r in &ladder {
        if detected.iter().all(|&x| annulus_mass(u, x, r, theta) < 0.5 * theta) {
            annulus_limit = Some(r);
        } else {
            break;
        }
    }
    let annulus_limit = annulus_limit.ok_or(KnotError::ConcentrationTooSharp)?;

    let mut separation = f64::INFINITY;
    for a in 0..detected.len() {
        for b in a + 1..detected.len() {
            separation = separation.min(index_distance(detected[a], detected[b], n) as f64 / n as f64);
        }
    }

    let core = half_width(n, smallest_window(n));
    let mut uniform_limit = None;
    for &r in &ladder {
        let half = half_width(n, r);
        let clear = half + core;
        let worst = (0..n)
            .into_par_iter()
            .filter(|&z| detected.iter().all(|&x| index_distance(x, z, n) > clear))
            .map(|z| grid.ball_mass(z, half))
            .reduce(|| 0.0, f64::max);
        if worst <= 2.0 * epsilon {
            uniform_limit = Some(r);
        } else {
            break;
        }
    }

    let symmetry_limit = 1.0 / (4.0 * p.max(1) as f64);
    let separation_limit = 0.25 * separation;
    let r_bar = [Some(annulus_limit), r_gamma, Some(symmetry_limit), Some(separation_limit), uniform_limit]
        .into_iter()
        .flatten()
        .fold(f64::INFINITY, f64::min);
    Ok(ScaleChoice { r_bar, annulus_limit, r_gamma, symmetry_limit, separation_limit, uniform_limit, theta })
}

#[derive(Clone, Copy, Debug)]
pub struct PipelineOptions {
    pub epsilon: f64,
    pub p: usize,
    pub seed: u64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions { epsilon: default_epsilon(), p: 1, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ReferenceCheck {
    /// Sup distance between reference and modified curve, measured as the
    /// Hausdorff distance of the sample sets, in the curve's own units.
    pub sup_distance: f64,
    pub budget: f64,
    pub within_budget: bool,
    /// The budget is at most a quarter of both certificate scales.
    pub budget_below_scales: bool,
    pub certificate: EquivalenceCertificate,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConcentrationReport {
    pub epsilon: f64,
    pub epsilon_is_default: bool,
    pub grid_note: &'static str,
    pub bilip: f64,
    pub detection: Detection,
    pub scale: Option<ScaleChoice>,
    pub r_gamma_source: &'static str,
    pub substitution: Option<SubstitutionReport>,
    /// `r_bar / (16 L)`, in unit-length parameter units.
    pub certificate_scale: Option<f64>,
    pub distortion_at_certificate_scale: Option<f64>,
    pub distortion_bound: f64,
    pub distortion_ok: bool,
    pub reference: Option<ReferenceCheck>,
    pub all_pass: bool,
    #[serde(skip)]
    pub modified: Curve,
}

const GRID_NOTE: &str = "window masses are evaluated at the smallest resolvable radius 4/N in place of the limit r -> 0";

/// Detect, choose the scale, substitute with the fourth threshold and check
/// the final local distortion. With a reference curve the modified curve is
/// also compared against it and certified.
pub fn pipeline(c: &Curve, reference: Option<&Curve>, opts: PipelineOptions) -> Result<ConcentrationReport> {
    let eta = c.unit_length()?;
    let n = c.n();
    let (bilip, _) = global_distortion(&eta);
    let grid = SeminormGrid::new(&eta, DEFAULT_BAND);
    let detection = detect_on(&grid, opts.epsilon, opts.seed);
    let distortion_bound = PI / 3.0 + DISTORTION_MARGIN;
    let base = ConcentrationReport {
        epsilon: opts.epsilon,
        epsilon_is_default: opts.epsilon == default_epsilon(),
        grid_note: GRID_NOTE,
        bilip,
        detection,
        scale: None,
        r_gamma_source: "none",
        substitution: None,
        certificate_scale: None,
        distortion_at_certificate_scale: None,
        distortion_bound,
        distortion_ok: true,
        reference: None,
        all_pass: true,
        modified: c.clone(),
    };
    if base.detection.indices.is_empty() {
        let all_pass = base.detection.cardinality_ok;
        return Ok(ConcentrationReport { all_pass, ..base });
    }

    let (r_gamma, source) = match reference {
        Some(r) => (Some(fractional_admissible_scale(&r.unit_length()?)?.r_gamma), "reference"),
        None => match fractional_admissible_scale(&eta) {
            Ok(f) => (Some(f.r_gamma), "curve"),
            Err(KnotError::SeminormTooConcentrated) => (None, "unavailable"),
            Err(e) => return Err(e),
        },
    };
    let scale = select_on(&grid, &base.detection.indices, opts.p, bilip, r_gamma, opts.epsilon)?;
    let centers: Vec<ParamPoint> = base.detection.points.iter().map(|&t| ParamPoint::new(t)).collect();
    let sub_opts = SubstituteOptions {
        theta: Some(scale.theta),
        seed: opts.seed,
        inner_radius: smallest_window(n),
        ..SubstituteOptions::default()
    };
    let report = substitute(c, &centers, scale.r_bar, sub_opts)?;
    let modified = report.modified.clone();

    let cert_scale = scale.r_bar / (16.0 * bilip);
    let (delta, _) = local_distortion(&modified.unit_length()?, cert_scale);
    let distortion_ok = delta <= distortion_bound;

    let reference_check = reference.map(|r| {
        let sup_distance = hausdorff_distance(r, &modified);
        let budget = scale.r_bar / (64.0 * bilip) * c.length();
        let certificate = certify_equivalence(r, &modified);
        let budget_below_scales = match (certificate.r1, certificate.r2) {
            (Some(a), Some(b)) => budget <= 0.25 * a.min(b),
            _ => false,
        };
        ReferenceCheck { sup_distance, budget, within_budget: sup_distance < budget, budget_below_scales, certificate }
    });

    let all_pass = base.detection.cardinality_ok
        && report.all_pass
        && distortion_ok
        && reference_check.as_ref().is_none_or(|r| r.within_budget && r.certificate.pass);
    Ok(ConcentrationReport {
        scale: Some(scale),
        r_gamma_source: source,
        substitution: Some(report),
        certificate_scale: Some(cert_scale),
        distortion_at_certificate_scale: Some(delta),
        distortion_ok,
        reference: reference_check,
        all_pass,
        modified,
        ..base
    })
}

/// A stadium symmetric under the half turn about the z axis. With `twisted`
/// each straight side carries a small loop in its middle whose tangent turns
/// once around over about `twist_samples` samples; the loop leaves the plane
/// so the curve stays embedded.
pub fn twisted_stadium(n: usize, twist_samples: f64, twisted: bool) -> Result<Curve> {
    let spec = SymmetrySpec::new(2, 1)?;
    if !n.is_multiple_of(2) {
        return Err(KnotError::InvalidArgument(format!("sample count {n} must be even")));
    }
    let lp = 400;
    let loop_pt = |t: f64| {
        let (s1, c1) = (2.0 * PI * t).sin_cos();
        Point::new(t + 0.3 * (s1 - 0.5 * (4.0 * PI * t).sin()) - 0.5, 0.25 * (1.0 - c1).powi(2), 0.25 * s1 * (1.0 - c1))
    };
    let loop_len: f64 = (0..lp).map(|k| (loop_pt((k + 1) as f64 / lp as f64) - loop_pt(k as f64 / lp as f64)).norm()).sum();
    let total = n as f64 * loop_len / twist_samples;
    let radius = total / (4.0 * PI);
    let half_side = 0.5 * (0.25 * total - loop_len + 1.0);
    let y0 = -radius;

    let mut block = vec![Point::new(-half_side, y0, 0.0)];
    if twisted {
        block.extend((0..=lp).map(|k| loop_pt(k as f64 / lp as f64) + Point::new(0.0, y0, 0.0)));
    }
    block.push(Point::new(half_side, y0, 0.0));
    let arc = 4000;
    block.extend((1..arc).map(|k| {
        let a = -0.5 * PI + PI * k as f64 / arc as f64;
        Point::new(half_side + radius * a.cos(), radius * a.sin(), 0.0)
    }));
    let rot = spec.rotation(1);
    let mut pts = block.clone();
    pts.extend(block.iter().map(|q| rot * q));
    let dense = Curve::new(pts)?;
    spec.resample(&dense, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mobius::torus_knot;

    fn circle(n: usize) -> Curve {
        Curve::from_fn(n, |t| Point::new((2.0 * PI * t).cos(), (2.0 * PI * t).sin(), 0.0)).unwrap()
    }

    #[test]
    fn epsilon_value() {
        assert!((default_epsilon() - 0.0587).abs() < 1e-4);
    }

    #[test]
    fn smooth_curves_have_no_concentration() {
        let d = detect_concentrations(&circle(512), default_epsilon(), 1);
        assert!(d.indices.is_empty());
        assert!(d.cardinality_ok);
        assert!(d.warnings.is_empty(), "{:?}", d.warnings);
        let trefoil = torus_knot(2, 3, 2.0, 0.5, 510).unwrap();
        let report = pipeline(&trefoil, None, PipelineOptions::default()).unwrap();
        assert!(report.detection.indices.is_empty());
        assert_eq!(report.modified, trefoil);
        assert!(report.all_pass);
        // idempotent
        let again = pipeline(&report.modified, None, PipelineOptions::default()).unwrap();
        assert_eq!(again.modified, trefoil);
    }

    #[test]
    fn twist_is_embedded_and_symmetric() {
        let c = twisted_stadium(512, 8.0, true).unwrap();
        let spec = SymmetrySpec::new(2, 1).unwrap();
        assert!(spec.residual(&c).unwrap() < 1e-9);
        let h = c.length() / 512.0;
        for i in 0..512 {
            for j in i + 2..512 {
                if (i, j) != (0, 511) {
                    assert!((c.point(i) - c.point(j)).norm() > 0.2 * h, "{i} {j}");
                }
            }
        }
    }

    #[test]
    fn twists_are_detected_in_symmetric_pairs() {
        let n = 512;
        let c = twisted_stadium(n, 8.0, true).unwrap();
        let d = detect_concentrations(&c.unit_length().unwrap(), default_epsilon(), 3);
        assert_eq!(d.indices.len(), 2, "{:?}", d.points);
        assert!(d.cardinality_ok);
        assert_eq!(index_distance(d.indices[0], d.indices[1], n), n / 2);
        // each twist sits in the middle of a straight side
        let mid = c.samples().iter().enumerate().filter(|(_, q)| q.z.abs() > 1e-9).map(|(i, _)| i).collect::<Vec<_>>();
        assert!(mid.iter().any(|&i| index_distance(i, d.indices[0], n) <= 4));
        let plain = twisted_stadium(n, 8.0, false).unwrap();
        assert!(detect_concentrations(&plain, default_epsilon(), 3).indices.is_empty());
    }

    #[test]
    fn scale_selection_on_twists() {
        let n = 512;
        let c = twisted_stadium(n, 8.0, true).unwrap().unit_length().unwrap();
        let d = detect_concentrations(&c, default_epsilon(), 3);
        let (bilip, _) = global_distortion(&c);
        let s = select_scale(&c, &d.indices, 2, bilip, None, default_epsilon()).unwrap();
        assert!(s.r_bar > 0.0 && s.r_bar <= 0.125);
        assert!(s.separation_limit >= 0.125 - 1e-12);
        assert!(s.annulus_limit >= 8.0 / n as f64);
        assert!(select_scale(&c, &[], 2, bilip, None, default_epsilon()).is_err());
    }
}
