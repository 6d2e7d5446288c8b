//! Discrete fractional seminorm of the tangent field and the estimates
//! built on it.
//!
//! Tangent sample `i` is the unit direction of edge `i` and is attached to
//! parameter `i / N`. The density between samples `i` and `j` at periodic
//! index distance `k` is `|u_i - u_j|^2 / k^2`; pairs with `k <= band` are
//! left out of every sum.

use rayon::prelude::*;
use serde::Serialize;

use crate::curve::{discrete_tangent, index_distance, Curve, ParamPoint, Point};
use crate::distortion::{local_distortion, log_ladder, LADDER_RUNGS};
use crate::error::{KnotError, Result};

pub const DEFAULT_BAND: usize = 2;

/// Window threshold on the squared seminorm used by the scale search.
pub const SCALE_SEARCH_BOUND: f64 = 1.0 / 8.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Window {
    Full,
    Ball { center: ParamPoint, radius: f64 },
    /// `B_outer \ B_inner`, both closed balls around `center`.
    Annulus { center: ParamPoint, outer: f64, inner: f64 },
}

impl Window {
    pub fn annulus(center: ParamPoint, r: f64, theta: f64) -> Window {
        Window::Annulus { center, outer: r, inner: theta * r }
    }
}

const MEMBER_TOL: f64 = 1e-12;

/// Sample indices inside `window`, ordered by parameter offset from the center.
pub fn window_indices(n: usize, window: Window) -> Vec<usize> {
    match window {
        Window::Full => (0..n).collect(),
        Window::Ball { center, radius } => select(n, center, |d| d <= radius + MEMBER_TOL),
        Window::Annulus { center, outer, inner } => {
            select(n, center, |d| d <= outer + MEMBER_TOL && d > inner + MEMBER_TOL)
        }
    }
}

fn select(n: usize, center: ParamPoint, keep: impl Fn(f64) -> bool) -> Vec<usize> {
    let c = center.value() * n as f64;
    let base = c.floor() as isize;
    let half = n as isize / 2;
    let mut out: Vec<(f64, usize)> = (base - half..base - half + n as isize)
        .filter_map(|k| {
            let i = k.rem_euclid(n as isize) as usize;
            let offset = (k as f64 - c) / n as f64;
            keep(crate::curve::periodic_distance(offset, 0.0)).then_some((offset, i))
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out.into_iter().map(|(_, i)| i).collect()
}

fn density(u: &[Point], i: usize, j: usize, band: usize) -> f64 {
    let k = index_distance(i, j, u.len());
    if k <= band {
        0.0
    } else {
        (u[i] - u[j]).norm_squared() / (k * k) as f64
    }
}

/// Sum of the density over `rows x cols`, row by row in a fixed order.
pub fn block_sum(u: &[Point], rows: &[usize], cols: &[usize], band: usize) -> f64 {
    let partial: Vec<f64> = rows
        .par_iter()
        .map(|&i| cols.iter().map(|&j| density(u, i, j, band)).sum::<f64>())
        .collect();
    partial.iter().sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SeminormValue {
    pub value: f64,
    /// Set when the window held fewer than two samples.
    pub empty: bool,
}

/// Squared seminorm of the tangent over `window x window`.
pub fn seminorm_sq(c: &Curve, window: Window) -> SeminormValue {
    seminorm_sq_band(c, window, DEFAULT_BAND)
}

pub fn seminorm_sq_band(c: &Curve, window: Window, band: usize) -> SeminormValue {
    let idx = window_indices(c.n(), window);
    if idx.len() < 2 {
        return SeminormValue { value: 0.0, empty: true };
    }
    let u = discrete_tangent(c);
    SeminormValue { value: block_sum(&u, &idx, &idx, band), empty: false }
}

/// Density matrix with a summed-area table for fast window masses.
pub struct SeminormGrid {
    n: usize,
    band: usize,
    tangents: Vec<Point>,
    prefix: Vec<f64>,
}

impl SeminormGrid {
    pub fn new(c: &Curve, band: usize) -> Self {
        let n = c.n();
        let tangents = discrete_tangent(c);
        let w = n + 1;
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                let mut row = Vec::with_capacity(n + 1);
                row.push(0.0);
                for j in 0..n {
                    acc += density(&tangents, i, j, band);
                    row.push(acc);
                }
                row
            })
            .collect();
        let mut prefix = vec![0.0; w * w];
        for i in 0..n {
            for j in 0..=n {
                prefix[(i + 1) * w + j] = prefix[i * w + j] + rows[i][j];
            }
        }
        SeminormGrid { n, band, tangents, prefix }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn band(&self) -> usize {
        self.band
    }

    pub fn tangents(&self) -> &[Point] {
        &self.tangents
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        density(&self.tangents, i, j, self.band)
    }

    pub fn total(&self) -> f64 {
        self.prefix[self.n * (self.n + 1) + self.n]
    }

    fn rect(&self, r: (usize, usize), c: (usize, usize)) -> f64 {
        let w = self.n + 1;
        let p = &self.prefix;
        p[r.1 * w + c.1] - p[r.0 * w + c.1] - p[r.1 * w + c.0] + p[r.0 * w + c.0]
    }

    /// Mass over the product of two index windows given as contiguous ranges.
    pub fn mass(&self, a: &[(usize, usize)], b: &[(usize, usize)]) -> f64 {
        let mut s = 0.0;
        for &ra in a {
            for &rb in b {
                s += self.rect(ra, rb);
            }
        }
        s
    }

    /// Mass of `B x B` for the sample-centered window of `half` samples each side.
    pub fn ball_mass(&self, center: usize, half: usize) -> f64 {
        let r = index_ranges(self.n, center, half);
        self.mass(&r, &r)
    }

    pub fn pair_mass(&self, x: usize, y: usize, half: usize) -> f64 {
        self.mass(&index_ranges(self.n, x, half), &index_ranges(self.n, y, half))
    }
}

/// Contiguous index ranges `[lo, hi)` covering `center - half ..= center + half` periodically.
pub fn index_ranges(n: usize, center: usize, half: usize) -> Vec<(usize, usize)> {
    if 2 * half + 1 >= n {
        return vec![(0, n)];
    }
    let lo = (center as isize - half as isize).rem_euclid(n as isize) as usize;
    let hi = lo + 2 * half + 1;
    if hi <= n {
        vec![(lo, hi)]
    } else {
        vec![(lo, n), (0, hi - n)]
    }
}

/// Number of grid steps inside a parameter radius.
pub fn half_width(n: usize, radius: f64) -> usize {
    (radius * n as f64 + 1e-9).floor() as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BilipBound {
    /// `(1 - S/2) |t - s|^2` on the curve rescaled to unit length.
    pub bound: f64,
    /// Squared chord on the same rescaled curve.
    pub chord_sq: f64,
    pub seminorm_sq: f64,
    pub gap: f64,
}

/// Lower bound on the squared chord between parameters `s` and `t` from the
/// seminorm of the shorter arc between them. The arc seminorm is summed over
/// all pairs of distinct edges, without a diagonal band.
pub fn bilip_lower_bound(c: &Curve, s: ParamPoint, t: ParamPoint) -> BilipBound {
    let u = discrete_tangent(c);
    bilip_with_tangents(c, &u, s.nearest_index(c.n()), t.nearest_index(c.n()))
}

pub fn bilip_with_tangents(c: &Curve, u: &[Point], i: usize, j: usize) -> BilipBound {
    let n = c.n();
    let k = index_distance(i, j, n);
    let forward = (j + n - i) % n == k;
    let start = if forward { i } else { j };
    let edges: Vec<usize> = (0..k).map(|m| (start + m) % n).collect();
    let s = block_sum(u, &edges, &edges, 0);
    let gap = k as f64 / n as f64;
    let len = c.length();
    let chord_sq = ((c.point(i) - c.point(j)) / len).norm_squared();
    BilipBound { bound: (1.0 - 0.5 * s) * gap * gap, chord_sq, seminorm_sq: s, gap }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FractionalScale {
    /// Parameter radius of the windows.
    pub rho: f64,
    pub sup_window_seminorm_sq: f64,
    pub sigma: f64,
    pub r_gamma: f64,
    pub delta_at_r_gamma: f64,
    pub within_bound: bool,
}

pub fn fractional_ladder(n: usize) -> Vec<f64> {
    log_ladder(2.0 / n as f64, 0.25, LADDER_RUNGS)
}

/// Upper bound on the local distortion expected at the returned scale.
pub fn fractional_distortion_bound() -> f64 {
    2.0 / 3f64.sqrt()
}

pub fn fractional_admissible_scale(c: &Curve) -> Result<FractionalScale> {
    fractional_admissible_scale_with(c, &SeminormGrid::new(c, DEFAULT_BAND), crate::distortion::DEFAULT_MARGIN)
}

pub fn fractional_admissible_scale_with(c: &Curve, grid: &SeminormGrid, margin: f64) -> Result<FractionalScale> {
    let n = c.n();
    let sup_at = |rho: f64| {
        let half = half_width(n, rho);
        (0..n).map(|x| grid.ball_mass(x, half)).fold(0.0, f64::max)
    };
    let (rho, sup) = fractional_ladder(n)
        .into_iter()
        .rev()
        .map(|rho| (rho, sup_at(rho)))
        .find(|&(_, s)| s < SCALE_SEARCH_BOUND)
        .ok_or(KnotError::SeminormTooConcentrated)?;
    let min_gap = (2.0 * rho * n as f64 - 1e-9).ceil().max(1.0) as usize;
    let sigma = min_chord_beyond(c, min_gap);
    let r_gamma = 0.25 * sigma;
    let (delta, _) = local_distortion(c, r_gamma);
    Ok(FractionalScale {
        rho,
        sup_window_seminorm_sq: sup,
        sigma,
        r_gamma,
        delta_at_r_gamma: delta,
        within_bound: delta <= fractional_distortion_bound() + margin,
    })
}

/// Smallest chord between samples at periodic index distance at least `min_gap`.
pub fn min_chord_beyond(c: &Curve, min_gap: usize) -> f64 {
    let s = c.samples();
    let n = s.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .filter(|&j| index_distance(i, j, n) >= min_gap)
                .map(|j| (s[i] - s[j]).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min)
}
