//! Local and global distortion of sampled curves, the dimension constants
//! and the sufficient test for knot equivalence built on them.

use std::cmp::Ordering;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::curve::{hausdorff_distance, Curve};
use crate::error::{KnotError, Result};

pub const LADDER_RUNGS: usize = 40;
pub const DEFAULT_MARGIN: f64 = 1e-3;

/// Threshold constant for curves in R^n, `n >= 3`.
pub fn g_n(n: u32) -> Result<f64> {
    if n < 3 {
        return Err(KnotError::InvalidArgument(format!("dimension must be at least 3, got {n}")));
    }
    let n = n as f64;
    Ok(((2.0 * n - 2.0) / n).sqrt() * (n / (2.0 * n - 2.0)).sqrt().asin())
}

/// Limit of `g_n` as n grows: the distortion of a quarter circle.
pub fn g_infinity() -> f64 {
    PI / 8f64.sqrt()
}

pub fn g3() -> f64 {
    g_n(3).expect("n = 3 is valid")
}

/// Angle whose distortion value equals `g_n`.
pub fn beta_n(n: u32) -> Result<f64> {
    if n < 3 {
        return Err(KnotError::InvalidArgument(format!("dimension must be at least 3, got {n}")));
    }
    let n = n as f64;
    Ok(2.0 * (n / (2.0 * n - 2.0)).sqrt().asin())
}

/// Ratio of arc to chord for a circular arc of opening angle `alpha`.
pub fn arc_chord_ratio(alpha: f64) -> f64 {
    let half = 0.5 * alpha;
    if half.abs() < 1e-8 {
        1.0 + half * half / 6.0
    } else {
        half / half.sin()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DistortionAngle {
    pub alpha: f64,
    pub g_value: f64,
}

/// Inverts `arc_chord_ratio` on (0, pi).
pub fn distortion_angle(delta: f64) -> Result<DistortionAngle> {
    if !(1.0..PI / 2.0).contains(&delta) {
        return Err(KnotError::InvalidArgument(format!("distortion {delta} outside [1, pi/2)")));
    }
    let (mut lo, mut hi) = (0.0f64, PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if arc_chord_ratio(mid) < delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha = if (arc_chord_ratio(lo) - delta).abs() <= (arc_chord_ratio(hi) - delta).abs() { lo } else { hi };
    Ok(DistortionAngle { alpha, g_value: arc_chord_ratio(alpha) })
}

/// Best pair found so far: ratio, then indices (smaller pair wins ties).
#[derive(Clone, Copy, Debug, PartialEq)]
struct Best {
    ratio: f64,
    pair: (usize, usize),
}

impl Best {
    fn better_than(&self, other: &Best) -> bool {
        match self.ratio.partial_cmp(&other.ratio) {
            Some(Ordering::Greater) => true,
            Some(Ordering::Equal) => self.pair < other.pair,
            _ => false,
        }
    }
}

fn merge(a: Option<Best>, b: Option<Best>) -> Option<Best> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.better_than(&x) { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

/// For each scale, the best pair whose chord is at most twice that scale but
/// larger than twice every smaller scale. `scales` must be increasing.
fn bucketed_scan(c: &Curve, scales: &[f64]) -> Vec<Option<Best>> {
    let s = c.samples();
    let n = s.len();
    let limits: Vec<f64> = scales.iter().map(|r| 2.0 * r).collect();
    let rows: Vec<Vec<Option<Best>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![None; limits.len()];
            for j in i + 1..n {
                let chord = (s[j] - s[i]).norm();
                if chord <= 0.0 {
                    continue;
                }
                let k = limits.partition_point(|&l| l < chord);
                if k == limits.len() {
                    continue;
                }
                let cand = Best { ratio: c.intrinsic_distance(i, j) / chord, pair: (i, j) };
                row[k] = merge(row[k], Some(cand));
            }
            row
        })
        .collect();
    let mut out = vec![None; limits.len()];
    for row in rows {
        for (slot, cand) in out.iter_mut().zip(row) {
            *slot = merge(*slot, cand);
        }
    }
    for k in 1..out.len() {
        out[k] = merge(out[k], out[k - 1]);
    }
    out
}

/// Sup of intrinsic over chord distance across sample pairs with chord at most `2r`.
/// Returns 1 and no pair when nothing qualifies.
pub fn local_distortion(c: &Curve, r: f64) -> (f64, Option<(usize, usize)>) {
    match bucketed_scan(c, &[r])[0] {
        Some(b) => (b.ratio.max(1.0), Some(b.pair)),
        None => (1.0, None),
    }
}

pub fn global_distortion(c: &Curve) -> (f64, Option<(usize, usize)>) {
    local_distortion(c, f64::INFINITY)
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_ladder(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| {
            if k == count - 1 {
                hi
            } else {
                (a + (b - a) * k as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

pub fn scale_ladder(c: &Curve) -> Vec<f64> {
    log_ladder(2.0 * c.min_edge(), c.diameter(), LADDER_RUNGS)
}

#[derive(Clone, Debug, Serialize)]
pub struct DistortionProfile {
    pub scales: Vec<f64>,
    pub values: Vec<f64>,
    pub argmax: Vec<Option<(usize, usize)>>,
    pub global: f64,
}

pub fn distortion_profile(c: &Curve) -> DistortionProfile {
    profile_on(c, &scale_ladder(c))
}

pub fn profile_on(c: &Curve, scales: &[f64]) -> DistortionProfile {
    let mut with_top = scales.to_vec();
    with_top.push(f64::INFINITY);
    let best = bucketed_scan(c, &with_top);
    let value = |b: &Option<Best>| b.map(|b| b.ratio.max(1.0)).unwrap_or(1.0);
    DistortionProfile {
        scales: scales.to_vec(),
        values: best[..scales.len()].iter().map(value).collect(),
        argmax: best[..scales.len()].iter().map(|b| b.map(|b| b.pair)).collect(),
        global: value(&best[scales.len()]),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AdmissibleScale {
    pub r: f64,
    pub delta: f64,
}

/// Largest ladder scale whose local distortion is strictly below `threshold`.
pub fn find_admissible_scale(c: &Curve, threshold: f64) -> Option<AdmissibleScale> {
    admissible_in(&distortion_profile(c), threshold)
}

pub fn admissible_in(profile: &DistortionProfile, threshold: f64) -> Option<AdmissibleScale> {
    profile
        .scales
        .iter()
        .zip(&profile.values)
        .rev()
        .find(|(_, &v)| v < threshold)
        .map(|(&r, &delta)| AdmissibleScale { r, delta })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Equivalent,
    Inconclusive,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CertifyOptions {
    pub threshold: f64,
    pub margin: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions { threshold: g3(), margin: DEFAULT_MARGIN }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceCertificate {
    pub r1: Option<f64>,
    pub r2: Option<f64>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
    pub hausdorff: f64,
    pub threshold: f64,
    pub margin: f64,
    pub pass: bool,
    pub verdict: Verdict,
    pub note: &'static str,
}

const CERTIFICATE_NOTE: &str =
    "pass is sufficient for equivalence of the knot types; a failed check says nothing about inequivalence";

pub fn certify_equivalence(a: &Curve, b: &Curve) -> EquivalenceCertificate {
    certify_with(a, b, CertifyOptions::default())
}

pub fn certify_with(a: &Curve, b: &Curve, opts: CertifyOptions) -> EquivalenceCertificate {
    let effective = opts.threshold - opts.margin;
    let s1 = find_admissible_scale(a, effective);
    let s2 = find_admissible_scale(b, effective);
    let hausdorff = hausdorff_distance(a, b);
    let pass = match (s1, s2) {
        (Some(x), Some(y)) => {
            x.delta < effective && y.delta < effective && hausdorff < 0.25 * x.r.min(y.r)
        }
        _ => false,
    };
    EquivalenceCertificate {
        r1: s1.map(|s| s.r),
        r2: s2.map(|s| s.r),
        delta1: s1.map(|s| s.delta),
        delta2: s2.map(|s| s.delta),
        hausdorff,
        threshold: opts.threshold,
        margin: opts.margin,
        pass,
        verdict: if pass { Verdict::Equivalent } else { Verdict::Inconclusive },
        note: CERTIFICATE_NOTE,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::Point;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn circle(n: usize) -> Curve {
        Curve::from_fn(n, |t| Point::new((2.0 * PI * t).cos(), (2.0 * PI * t).sin(), 0.0)).unwrap()
    }

    fn lumpy(n: usize, amp: f64, ph: f64) -> Curve {
        Curve::from_fn(n, |t| {
            let a = 2.0 * PI * t;
            Point::new((1.0 + amp * (2.0 * a + ph).cos()) * a.cos(), (1.0 + amp * (3.0 * a).cos()) * a.sin(), amp * a.sin())
        })
        .unwrap()
    }

    #[test]
    fn g3_closed_form() {
        let expect = 2.0 * PI / (3.0 * 3f64.sqrt());
        assert!((g3() - expect).abs() < 1e-12);
        assert!((g3() - 1.2091995762).abs() < 1e-10);
        assert!((g_infinity() - 1.1107207345).abs() < 1e-10);
        assert!(g_n(2).is_err());
    }

    #[test]
    fn g_n_decreases_to_quarter_circle_value() {
        // formula evaluated independently via the arc-chord ratio at beta_n
        let mut prev = f64::INFINITY;
        for n in 3..=64 {
            let v = g_n(n).unwrap();
            assert!(v < prev);
            assert!(v > g_infinity());
            let beta = beta_n(n).unwrap();
            assert!((arc_chord_ratio(beta) - v).abs() < 1e-12);
            prev = v;
        }
        assert!((g_n(1_000_000_000).unwrap() - g_infinity()).abs() < 1e-9);
        let g4 = g_n(4).unwrap();
        assert!(g_infinity() < g4 && g4 < g3());
    }

    #[test]
    fn angle_inversion() {
        let a = distortion_angle(g3()).unwrap();
        assert!((a.alpha - 2.0 * PI / 3.0).abs() < 1e-10);
        assert!((a.g_value - g3()).abs() < 1e-12);
        let a = distortion_angle(1.0).unwrap();
        assert!(a.alpha < 1e-6 && a.g_value <= 1.0 + 1e-12);
        let target = PI / 2.0 - 1e-9;
        let a = distortion_angle(target).unwrap();
        assert!((a.g_value - target).abs() < 1e-12);
        assert!(PI - a.alpha < 1e-8);
        assert!(distortion_angle(PI / 2.0).is_err());
        assert!(distortion_angle(0.99).is_err());
    }

    #[test]
    fn circle_distortion_is_half_pi() {
        let c = circle(2048);
        let (d, pair) = global_distortion(&c);
        assert!((d - PI / 2.0).abs() < 1e-3);
        let (i, j) = pair.unwrap();
        assert_eq!(crate::curve::index_distance(i, j, 2048), 1024);
        let quarter = c.intrinsic_distance(0, 512) / (c.point(0) - c.point(512)).norm();
        assert!((quarter - g_infinity()).abs() < 1e-3);
    }

    #[test]
    fn collinear_pair_has_ratio_one() {
        // a thin triangle-like closed curve: the straight run gives exact ratio one
        let mut pts: Vec<Point> = (0..6).map(|i| Point::new(i as f64, 0.0, 0.0)).collect();
        pts.extend([Point::new(4.0, 3.0, 0.0), Point::new(2.0, 3.0, 0.0), Point::new(0.5, 2.0, 0.0)]);
        let c = Curve::new(pts).unwrap();
        let (d, _) = local_distortion(&c, 0.5);
        assert_eq!(d, 1.0);
        let (d, pair) = local_distortion(&c, 1e-3);
        assert_eq!((d, pair), (1.0, None));
    }

    #[test]
    fn profile_is_monotone_and_top_is_global() {
        let c = lumpy(300, 0.3, 0.7);
        let p = distortion_profile(&c);
        assert_eq!(p.scales.len(), LADDER_RUNGS);
        for w in p.values.windows(2) {
            assert!(w[0] <= w[1]);
        }
        assert!(p.values.iter().all(|&v| v >= 1.0));
        assert_eq!(*p.values.last().unwrap(), p.global);
        // oracle: unrestricted brute-force scan
        let n = c.n();
        let mut best: f64 = 1.0;
        for i in 0..n {
            for j in i + 1..n {
                best = best.max(c.intrinsic_distance(i, j) / (c.point(i) - c.point(j)).norm());
            }
        }
        assert_eq!(best, p.global);
        for (k, &r) in p.scales.iter().enumerate() {
            assert_eq!(local_distortion(&c, r).0, p.values[k]);
        }
    }

    #[test]
    fn admissible_scale_is_largest_qualifying() {
        let c = circle(512);
        let p = distortion_profile(&c);
        let s = admissible_in(&p, g3()).unwrap();
        assert!(s.delta < g3());
        let k = p.scales.iter().position(|&r| r == s.r).unwrap();
        assert!(p.values[k + 1..].iter().all(|&v| v >= g3()));
        // chord of a third of the circle is sqrt(3)
        assert!(s.r < 3f64.sqrt() / 2.0 + 1e-9);
    }

    #[test]
    fn certificate_self_and_scaled() {
        let c = circle(256);
        let cert = certify_equivalence(&c, &c);
        assert!(cert.pass);
        assert_eq!(cert.hausdorff, 0.0);
        assert_eq!(cert.verdict, Verdict::Equivalent);
        let big = c.scaled(1e6).unwrap();
        let cert = certify_equivalence(&c, &big);
        assert!(!cert.pass);
        assert_eq!(cert.verdict, Verdict::Inconclusive);
        assert!(cert.r1.is_some() && cert.r2.is_some());
        assert_eq!(serde_json::to_value(cert.verdict).unwrap(), "inconclusive");
    }

    fn rotation(ax: f64, ay: f64, az: f64) -> Rotation3<f64> {
        Rotation3::from_euler_angles(ax, ay, az)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn monotone_in_scale(amp in 0.0f64..0.4, ph in 0.0f64..6.0, r1 in 0.01f64..2.0, r2 in 0.01f64..2.0) {
            let c = lumpy(64, amp, ph);
            let (lo, hi) = (r1.min(r2), r1.max(r2));
            prop_assert!(local_distortion(&c, lo).0 <= local_distortion(&c, hi).0);
            prop_assert!(local_distortion(&c, lo).0 >= 1.0);
        }

        #[test]
        fn rigid_and_scale_invariance(amp in 0.0f64..0.4, ph in 0.0f64..6.0, r in 0.05f64..2.0,
                                      ax in -3.0f64..3.0, ay in -3.0f64..3.0, az in -3.0f64..3.0,
                                      lambda in 0.1f64..10.0) {
            let c = lumpy(64, amp, ph);
            let q = rotation(ax, ay, az);
            let b = Point::new(0.3, -1.0, 2.0);
            // keep r off bucket boundaries of the moved copy
            let moved = c.map(|p| q * p + b).unwrap();
            let base = local_distortion(&c, r);
            let m = local_distortion(&moved, r);
            if base.1 == m.1 {
                prop_assert!((base.0 - m.0).abs() < 1e-12);
            }
            let s = c.scaled(lambda).unwrap();
            let sc = local_distortion(&s, lambda * r);
            if base.1 == sc.1 {
                prop_assert!((base.0 - sc.0).abs() < 1e-12);
            }
            prop_assert!((global_distortion(&c).0 - global_distortion(&moved).0).abs() < 1e-12);
            prop_assert!((global_distortion(&c).0 - global_distortion(&s).0).abs() < 1e-12);
        }

        #[test]
        fn certificate_symmetric(amp in 0.0f64..0.2, ph in 0.0f64..6.0, shift in 0.0f64..0.3) {
            let a = lumpy(48, amp, ph);
            let b = a.translated(Point::new(shift, 0.0, 0.0)).unwrap();
            prop_assert_eq!(certify_equivalence(&a, &b).pass, certify_equivalence(&b, &a).pass);
        }
    }
}
