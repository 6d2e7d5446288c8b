//! Smallest enclosing ball of points in R^3 (Welzl's move-to-front recursion).

use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::curve::Point;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    fn contains(&self, p: &Point) -> bool {
        (p - self.center).norm() <= self.radius * (1.0 + 1e-12) + 1e-15
    }
}

fn from_two(a: &Point, b: &Point) -> Ball {
    let center = 0.5 * (a + b);
    Ball { center, radius: (a - center).norm().max((b - center).norm()) }
}

fn from_three(a: &Point, b: &Point, c: &Point) -> Option<Ball> {
    let (u, v) = (b - a, c - a);
    let w = u.cross(&v);
    let den = 2.0 * w.norm_squared();
    if den <= 1e-300 || den < 1e-24 * u.norm_squared() * v.norm_squared() {
        return None;
    }
    let center = a + (v.norm_squared() * w.cross(&u) + u.norm_squared() * v.cross(&w)) / den;
    let radius = [a, b, c].iter().map(|p| (*p - center).norm()).fold(0.0, f64::max);
    Some(Ball { center, radius })
}

fn from_four(a: &Point, b: &Point, c: &Point, d: &Point) -> Option<Ball> {
    let rows = [b - a, c - a, d - a];
    let m = Matrix3::from_rows(&[rows[0].transpose(), rows[1].transpose(), rows[2].transpose()]);
    let rhs = Point::new(rows[0].norm_squared(), rows[1].norm_squared(), rows[2].norm_squared()) * 0.5;
    let off = m.lu().solve(&rhs)?;
    if !off.iter().all(|v| v.is_finite()) {
        return None;
    }
    let center = a + off;
    let radius = [a, b, c, d].iter().map(|p| (*p - center).norm()).fold(0.0, f64::max);
    Some(Ball { center, radius })
}

/// Smallest ball with all of `support` (at most four points) on its boundary,
/// falling back to the smallest ball through a subset when degenerate.
fn trivial(support: &[Point]) -> Ball {
    match support {
        [] => Ball { center: Point::zeros(), radius: -1.0 },
        [a] => Ball { center: *a, radius: 0.0 },
        [a, b] => from_two(a, b),
        [a, b, c] => from_three(a, b, c).unwrap_or_else(|| widest_pair(support)),
        [a, b, c, d] => from_four(a, b, c, d).unwrap_or_else(|| {
            let triples = [[a, b, c], [a, b, d], [a, c, d], [b, c, d]];
            triples
                .iter()
                .filter_map(|t| from_three(t[0], t[1], t[2]))
                .chain(std::iter::once(widest_pair(support)))
                .filter(|ball| support.iter().all(|p| ball.contains(p)))
                .min_by(|x, y| x.radius.total_cmp(&y.radius))
                .unwrap_or_else(|| widest_pair(support))
        }),
        _ => unreachable!("support has at most four points"),
    }
}

fn widest_pair(pts: &[Point]) -> Ball {
    let mut best = from_two(&pts[0], &pts[0]);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let b = from_two(&pts[i], &pts[j]);
            if b.radius > best.radius {
                best = b;
            }
        }
    }
    best
}

fn welzl(pts: &[Point], support: &mut Vec<Point>) -> Ball {
    if pts.is_empty() || support.len() == 4 {
        return trivial(support);
    }
    let (p, rest) = pts.split_last().expect("nonempty");
    let ball = welzl(rest, support);
    if ball.radius >= 0.0 && ball.contains(p) {
        return ball;
    }
    support.push(*p);
    let ball = welzl(rest, support);
    support.pop();
    ball
}

/// Smallest enclosing ball. Input order is shuffled with a fixed seed.
pub fn enclosing_ball(points: &[Point]) -> Option<Ball> {
    if points.is_empty() {
        return None;
    }
    let mut pts = points.to_vec();
    pts.shuffle(&mut ChaCha8Rng::seed_from_u64(0x5eed));
    let mut ball = welzl(&pts, &mut Vec::with_capacity(4));
    // degenerate fallbacks may leave points marginally outside
    for p in points {
        let d = (p - ball.center).norm();
        if d > ball.radius {
            ball.radius = d;
        }
    }
    Some(ball)
}
