//! Closed polylines sampled on a uniform parameter grid of R/Z.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KnotError, Result};

pub type Point = Vector3<f64>;

pub const MIN_SAMPLES: usize = 8;

/// A closed polyline. Sample `i` sits at parameter `i / N`.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    samples: Vec<Point>,
    edges: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Curve {
    pub fn new(samples: Vec<Point>) -> Result<Self> {
        let n = samples.len();
        if n < MIN_SAMPLES {
            return Err(KnotError::TooFewSamples(n));
        }
        if let Some(i) = samples.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(KnotError::InvalidCurve(format!("non-finite coordinate at sample {i}")));
        }
        let mut edges = Vec::with_capacity(n);
        for i in 0..n {
            let e = (samples[(i + 1) % n] - samples[i]).norm();
            if e <= 0.0 {
                return Err(KnotError::InvalidCurve(format!(
                    "repeated point: samples {i} and {} coincide",
                    (i + 1) % n
                )));
            }
            edges.push(e);
        }
        let mut cumulative = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for e in &edges {
            acc += e;
            cumulative.push(acc);
        }
        Ok(Curve { samples, edges, cumulative })
    }

    pub fn from_fn(n: usize, f: impl Fn(f64) -> Point) -> Result<Self> {
        Curve::new((0..n).map(|i| f(i as f64 / n as f64)).collect())
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[Point] {
        &self.samples
    }

    /// Sample at a periodic index.
    pub fn point(&self, i: usize) -> Point {
        self.samples[i % self.n()]
    }

    pub fn parameter(&self, i: usize) -> f64 {
        (i % self.n()) as f64 / self.n() as f64
    }

    /// Length of the edge from sample `i` to sample `i + 1`.
    pub fn edge_length(&self, i: usize) -> f64 {
        self.edges[i % self.n()]
    }

    pub fn edge_lengths(&self) -> &[f64] {
        &self.edges
    }

    pub fn length(&self) -> f64 {
        self.cumulative[self.n()]
    }

    /// Arclength from sample 0 to sample `i` (for `i <= N`).
    pub fn arclength_to(&self, i: usize) -> f64 {
        self.cumulative[i]
    }

    pub fn min_edge(&self) -> f64 {
        self.edges.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_edge(&self) -> f64 {
        self.edges.iter().cloned().fold(0.0, f64::max)
    }

    pub fn diameter(&self) -> f64 {
        let s = &self.samples;
        (0..s.len())
            .into_par_iter()
            .map(|i| s[i + 1..].iter().map(|q| (q - s[i]).norm()).fold(0.0, f64::max))
            .reduce(|| 0.0, f64::max)
    }

    pub fn intrinsic_distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (i % self.n(), j % self.n());
        let arc = (self.cumulative[a.max(b)] - self.cumulative[a.min(b)]).abs();
        arc.min(self.length() - arc)
    }

    pub fn map(&self, f: impl Fn(&Point) -> Point) -> Result<Curve> {
        Curve::new(self.samples.iter().map(f).collect())
    }

    pub fn scaled(&self, factor: f64) -> Result<Curve> {
        self.map(|p| p * factor)
    }

    /// Copy rescaled about the origin to total length one.
    pub fn unit_length(&self) -> Result<Curve> {
        self.scaled(1.0 / self.length())
    }

    pub fn translated(&self, offset: Point) -> Result<Curve> {
        self.map(|p| p + offset)
    }

    /// Curve with the sample order shifted so that old sample `k` becomes sample 0.
    pub fn rotated_start(&self, k: usize) -> Result<Curve> {
        let n = self.n();
        Curve::new((0..n).map(|i| self.samples[(i + k) % n]).collect())
    }
}

/// A parameter on R/Z, stored in [0, 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint(f64);

impl ParamPoint {
    pub fn new(value: f64) -> Self {
        let v = value.rem_euclid(1.0);
        ParamPoint(if v >= 1.0 { 0.0 } else { v })
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn distance(self, other: ParamPoint) -> f64 {
        periodic_distance(self.0, other.0)
    }

    /// Index of the grid sample nearest to this parameter on an `n`-point grid.
    pub fn nearest_index(self, n: usize) -> usize {
        ((self.0 * n as f64).round() as usize) % n
    }
}

pub fn periodic_distance(s: f64, t: f64) -> f64 {
    let d = (s - t).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Periodic distance between two indices on an `n`-cycle.
pub fn index_distance(i: usize, j: usize, n: usize) -> usize {
    let d = (i as isize - j as isize).rem_euclid(n as isize) as usize;
    d.min(n - d)
}

/// Signed offset from `from` to `to` on an `n`-cycle, in `(-n/2, n/2]`.
pub fn index_offset(from: usize, to: usize, n: usize) -> isize {
    let n = n as isize;
    let mut d = (to as isize - from as isize).rem_euclid(n);
    if d > n / 2 {
        d -= n;
    }
    d
}

pub fn intrinsic_distance(c: &Curve, i: usize, j: usize) -> f64 {
    c.intrinsic_distance(i, j)
}

pub fn closest_point_on_segment(p: &Point, a: &Point, b: &Point) -> Point {
    let d = b - a;
    let len2 = d.norm_squared();
    if len2 == 0.0 {
        return *a;
    }
    let u = ((p - a).dot(&d) / len2).clamp(0.0, 1.0);
    a + d * u
}

pub fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    (p - closest_point_on_segment(p, a, b)).norm()
}

/// Distance from `p` to the polyline of `c` (vertices and edges).
pub fn distance_to_curve(c: &Curve, p: &Point) -> f64 {
    let s = c.samples();
    let n = s.len();
    (0..n)
        .map(|i| point_segment_distance(p, &s[i], &s[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

fn one_sided_hausdorff(a: &Curve, b: &Curve) -> f64 {
    a.samples()
        .par_iter()
        .map(|p| distance_to_curve(b, p))
        .reduce(|| 0.0, f64::max)
}

/// Symmetric Hausdorff distance measured from each sample to the other polyline.
pub fn hausdorff_distance(a: &Curve, b: &Curve) -> f64 {
    one_sided_hausdorff(a, b).max(one_sided_hausdorff(b, a))
}

/// Unit edge directions `(q[i+1] - q[i]) / |q[i+1] - q[i]|`.
pub fn discrete_tangent(c: &Curve) -> Vec<Point> {
    let n = c.n();
    (0..n)
        .map(|i| (c.point(i + 1) - c.point(i)) / c.edge_length(i))
        .collect()
}

/// Position on the polyline while walking it by arclength.
#[derive(Clone, Copy, Debug)]
struct Cursor {
    seg: usize,
    u: f64,
    laps: usize,
}

/// Walks `steps` chords of length `h` from sample 0. Returns the visited
/// points (first is sample 0) and the arclength reached after the last chord.
fn march(c: &Curve, h: f64, steps: usize) -> (Vec<Point>, f64) {
    let n = c.n();
    let s = c.samples();
    let mut out = Vec::with_capacity(steps + 1);
    let mut cur = Cursor { seg: 0, u: 0.0, laps: 0 };
    let mut p = s[0];
    out.push(p);
    for _ in 0..steps {
        let mut found = false;
        for _ in 0..=n {
            let a = s[cur.seg];
            let b = s[(cur.seg + 1) % n];
            if (b - p).norm() >= h {
                let d = b - a;
                let qa = d.norm_squared();
                let qb = 2.0 * d.dot(&(a - p));
                let qc = (a - p).norm_squared() - h * h;
                let disc = (qb * qb - 4.0 * qa * qc).max(0.0);
                let q = -0.5 * (qb + qb.signum() * disc.sqrt());
                let r1 = q / qa;
                let r2 = if q != 0.0 { qc / q } else { r1 };
                let u = r1.max(r2).clamp(cur.u, 1.0);
                cur.u = u;
                p = a + d * u;
                found = true;
                break;
            }
            cur.seg += 1;
            cur.u = 0.0;
            if cur.seg == n {
                cur.seg = 0;
                cur.laps += 1;
            }
        }
        if !found {
            return (out, f64::INFINITY);
        }
        out.push(p);
    }
    let arc = cur.laps as f64 * c.length() + c.arclength_to(cur.seg) + cur.u * c.edge_length(cur.seg);
    (out, arc)
}

/// Finds `steps` points on the polyline, starting at sample 0, with equal
/// consecutive chords, such that one more chord lands at arclength `target`.
pub fn equal_chord_points(c: &Curve, steps: usize, target: f64) -> Result<(Vec<Point>, f64)> {
    if steps == 0 || target.is_nan() || target <= 0.0 {
        return Err(KnotError::InvalidArgument("equal-chord walk needs steps > 0 and target > 0".into()));
    }
    let mut lo = 0.0;
    let mut hi = target / steps as f64;
    let mut grow = 0;
    while march(c, hi, steps).1 < target {
        hi *= 1.0 + 1e-9;
        grow += 1;
        if grow > 64 {
            return Err(KnotError::InvalidCurve("equal-chord resampling failed to bracket".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (_, arc) = march(c, mid, steps);
        if arc < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (lo_pts, lo_arc) = march(c, lo, steps);
    let (hi_pts, hi_arc) = march(c, hi, steps);
    let (mut pts, h) = if (target - lo_arc).abs() <= (hi_arc - target).abs() { (lo_pts, lo) } else { (hi_pts, hi) };
    pts.pop();
    Ok((pts, h))
}

/// Resamples to `n_out` points with equal chords lying on the input polyline.
pub fn resample_arclength(c: &Curve, n_out: usize) -> Result<Curve> {
    if n_out < MIN_SAMPLES {
        return Err(KnotError::TooFewSamples(n_out));
    }
    let (pts, _) = equal_chord_points(c, n_out, c.length())?;
    Curve::new(pts)
}

#[derive(Serialize, Deserialize)]
struct CurveFile {
    closed: bool,
    samples: Vec<[f64; 3]>,
}

fn is_csv(path: &Path) -> bool {
    path.extension().map(|e| e.eq_ignore_ascii_case("csv")).unwrap_or(false)
}

/// Loads a curve from JSON (`{"closed": true, "samples": [...]}`) or CSV (`x,y,z`).
pub fn load_curve(path: impl AsRef<Path>) -> Result<Curve> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    if is_csv(path) {
        parse_csv(&text)
    } else {
        parse_json(&text)
    }
}

pub fn parse_json(text: &str) -> Result<Curve> {
    let file: CurveFile = serde_json::from_str(text).map_err(|e| KnotError::Malformed(e.to_string()))?;
    if !file.closed {
        return Err(KnotError::Malformed("only closed curves are supported".into()));
    }
    Curve::new(file.samples.iter().map(|s| Point::new(s[0], s[1], s[2])).collect())
}

pub fn parse_csv(text: &str) -> Result<Curve> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| KnotError::Malformed(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["x", "y", "z"] {
        return Err(KnotError::Malformed("expected header x,y,z".into()));
    }
    let mut pts = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| KnotError::Malformed(format!("line {}: {e}", line + 2)))?;
        let mut v = [0.0; 3];
        for (k, field) in rec.iter().enumerate().take(3) {
            v[k] = field
                .parse()
                .map_err(|_| KnotError::Malformed(format!("line {}: bad number {field:?}", line + 2)))?;
        }
        if rec.len() != 3 {
            return Err(KnotError::Malformed(format!("line {}: expected 3 fields", line + 2)));
        }
        pts.push(Point::new(v[0], v[1], v[2]));
    }
    Curve::new(pts)
}

pub fn to_json(c: &Curve) -> String {
    let file = CurveFile { closed: true, samples: c.samples().iter().map(|p| [p.x, p.y, p.z]).collect() };
    serde_json::to_string(&file).expect("curve serializes")
}

pub fn to_csv(c: &Curve) -> String {
    let mut out = String::from("x,y,z\n");
    for p in c.samples() {
        out.push_str(&format!("{},{},{}\n", p.x, p.y, p.z));
    }
    out
}

pub fn save_curve(c: &Curve, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = if is_csv(path) { to_csv(c) } else { to_json(c) };
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn circle(n: usize, radius: f64) -> Curve {
        Curve::from_fn(n, |t| Point::new(radius * (2.0 * PI * t).cos(), radius * (2.0 * PI * t).sin(), 0.0)).unwrap()
    }

    fn wobbly(n: usize, amp: f64, phase: f64) -> Curve {
        Curve::from_fn(n, |t| {
            let a = 2.0 * PI * t;
            Point::new(
                (1.0 + amp * (3.0 * a + phase).cos()) * a.cos(),
                (1.0 + amp * (2.0 * a).sin()) * a.sin(),
                amp * (5.0 * a + phase).sin(),
            )
        })
        .unwrap()
    }

    #[test]
    fn antipodal_intrinsic_distance_is_half_length() {
        let c = circle(1000, 1.0);
        assert!((c.intrinsic_distance(0, 500) - 0.5 * c.length()).abs() < 1e-12);
        assert_eq!(c.intrinsic_distance(17, 17), 0.0);
    }

    #[test]
    fn quarter_distance_on_unit_length_curve() {
        let c = resample_arclength(&wobbly(300, 0.2, 0.3), 256).unwrap().unit_length().unwrap();
        // independent edge-sum oracle
        let forward: f64 = (0..64).map(|i| (c.samples()[i + 1] - c.samples()[i]).norm()).sum();
        let backward: f64 = (64..256).map(|i| (c.samples()[(i + 1) % 256] - c.samples()[i]).norm()).sum();
        let oracle = forward.min(backward);
        assert!((c.intrinsic_distance(0, 64) - oracle).abs() < 1e-12);
        assert!((c.intrinsic_distance(0, 64) - 0.25).abs() < 1e-9);
    }

    #[test]
    fn rejects_short_and_degenerate_input() {
        let short = Curve::new(vec![Point::zeros(); 3]);
        assert!(matches!(short, Err(KnotError::TooFewSamples(3))));
        assert_eq!(short.unwrap_err().to_string(), "N < 8 (got 3 samples)");
        let mut pts: Vec<Point> = circle(16, 1.0).samples().to_vec();
        pts[4] = pts[3];
        assert!(matches!(Curve::new(pts), Err(KnotError::InvalidCurve(_))));
        let mut pts: Vec<Point> = circle(16, 1.0).samples().to_vec();
        pts[2].x = f64::NAN;
        assert!(Curve::new(pts).is_err());
    }

    #[test]
    fn concentric_circles_hausdorff_is_radial_gap() {
        let d = 0.05;
        let a = circle(256, 1.0);
        let b = circle(256, 1.0 + d);
        assert!((hausdorff_distance(&a, &b) - d).abs() < 1e-9);
        assert_eq!(hausdorff_distance(&a, &a), 0.0);
    }

    #[test]
    fn translated_circle_hausdorff() {
        let a = circle(2048, 1.0);
        let b = a.translated(Point::new(0.3, 0.0, 0.0)).unwrap();
        // brute-force vertex-to-vertex oracle
        let one_sided = |x: &Curve, y: &Curve| {
            x.samples()
                .iter()
                .map(|p| y.samples().iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        let oracle = one_sided(&a, &b).max(one_sided(&b, &a));
        let h = hausdorff_distance(&a, &b);
        assert!((oracle - 0.3).abs() < 2e-3);
        assert!((h - 0.3).abs() < 2e-3);
        assert!(h <= oracle + 1e-15);
    }

    #[test]
    fn resample_gives_equal_chords_on_input() {
        let c = wobbly(97, 0.3, 1.1);
        let r = resample_arclength(&c, 200).unwrap();
        assert_eq!(r.n(), 200);
        let h = r.length() / 200.0;
        for e in r.edge_lengths() {
            assert!(((e - h) / h).abs() < 1e-10, "edge {e} vs {h}");
        }
        for p in r.samples() {
            assert!(distance_to_curve(&c, p) < 1e-12);
        }
        // inscribed chords cut corners: length shrinks by a second-order amount
        let rel = (c.length() - r.length()) / c.length();
        assert!((-1e-12..1e-2).contains(&rel), "relative length change {rel}");
    }

    #[test]
    fn resample_of_equal_chord_curve_keeps_length() {
        let c = circle(4096, 1.0);
        let r = resample_arclength(&c, 4096).unwrap();
        assert!(((r.length() - c.length()) / c.length()).abs() < 1e-12);
    }

    #[test]
    fn resample_is_idempotent() {
        let r1 = resample_arclength(&wobbly(150, 0.25, 0.2), 128).unwrap();
        let r2 = resample_arclength(&r1, 128).unwrap();
        for (p, q) in r1.samples().iter().zip(r2.samples()) {
            assert!((p - q).norm() < 1e-9);
        }
    }

    #[test]
    fn tangents_are_unit() {
        let c = wobbly(64, 0.2, 0.0);
        for u in discrete_tangent(&c) {
            assert!((u.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let c = circle(64, 1.0);
        let path = dir.path().join("c.json");
        save_curve(&c, &path).unwrap();
        let back = load_curve(&path).unwrap();
        assert_eq!(back.samples(), c.samples());
        let path = dir.path().join("c.csv");
        save_curve(&c, &path).unwrap();
        assert_eq!(load_curve(&path).unwrap().samples(), c.samples());
    }

    #[test]
    fn csv_with_header_loads() {
        let c = circle(128, 2.0);
        let text = to_csv(&c);
        assert!(text.starts_with("x,y,z\n"));
        assert_eq!(parse_csv(&text).unwrap().n(), 128);
        assert!(parse_csv("a,b,c\n1,2,3\n").is_err());
        assert!(parse_csv("x,y,z\n1,2\n").is_err());
    }

    #[test]
    fn json_with_three_samples_is_rejected() {
        let err = parse_json(r#"{"closed": true, "samples": [[0,0,0],[1,0,0],[0,1,0]]}"#).unwrap_err();
        assert!(err.to_string().contains("N < 8"));
        assert!(parse_json("{").is_err());
    }

    #[test]
    fn param_point_wraps() {
        assert_eq!(ParamPoint::new(-0.25).value(), 0.75);
        assert!((ParamPoint::new(0.9).distance(ParamPoint::new(0.1)) - 0.2).abs() < 1e-15);
        assert_eq!(ParamPoint::new(0.999).nearest_index(100), 0);
        assert_eq!(index_offset(2, 98, 100), -4);
        assert_eq!(index_distance(2, 98, 100), 4);
    }

    fn arb_curve() -> impl Strategy<Value = Curve> {
        (8usize..40, 0.0f64..0.4, 0.0f64..6.0).prop_map(|(n, amp, ph)| wobbly(n, amp, ph))
    }

    proptest! {
        #[test]
        fn intrinsic_dominates_chord(c in arb_curve(), i in 0usize..1000, j in 0usize..1000) {
            let (i, j) = (i % c.n(), j % c.n());
            prop_assert!(c.intrinsic_distance(i, j) + 1e-12 >= (c.point(i) - c.point(j)).norm());
            prop_assert_eq!(c.intrinsic_distance(i, j), c.intrinsic_distance(j, i));
        }

        #[test]
        fn intrinsic_triangle_inequality(c in arb_curve(), i in 0usize..1000, j in 0usize..1000, k in 0usize..1000) {
            let (i, j, k) = (i % c.n(), j % c.n(), k % c.n());
            prop_assert!(c.intrinsic_distance(i, k) <= c.intrinsic_distance(i, j) + c.intrinsic_distance(j, k) + 1e-12);
        }

        #[test]
        fn param_distance_in_range(s in -3.0f64..3.0, t in -3.0f64..3.0) {
            let d = periodic_distance(s, t);
            prop_assert!((0.0..=0.5).contains(&d));
        }

        #[test]
        fn hausdorff_symmetric_and_triangle(a in arb_curve(), b in arb_curve(), c in arb_curve()) {
            let ab = hausdorff_distance(&a, &b);
            prop_assert_eq!(ab, hausdorff_distance(&b, &a));
            let ac = hausdorff_distance(&a, &c);
            let bc = hausdorff_distance(&b, &c);
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
