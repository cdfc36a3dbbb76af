//! Pseudo-orbits, exact periodic-orbit enumeration by itineraries, periodic
//! shadowing and the approximation of ergodic measures by periodic ones.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use num_traits::{Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::maps::{CompositeMap, Layer};
use crate::measures::{
    approach_parameter_q, step, trace_orbit, weakstar_distance, AtomicMeasure, MetricResult, OrbitPolicy,
    TestFunctionFamily, DEFAULT_DEPTH,
};
use crate::numeric::{abs, fmt_rational, int, max_r, min_r, one, pow2_neg, rat, serde_q, zero, Rational};
use crate::par;

/// Default cap on itinerary tree nodes.
pub const DEFAULT_BUDGET: usize = 1 << 22;
/// Grid resolution (bits) for root isolation on maps with radial layers.
const GRID_BITS: u32 = 12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PseudoOrbit {
    pub points: Vec<Point>,
    #[serde(with = "serde_q")]
    pub delta: Rational,
    /// 0 when aperiodic.
    pub period: usize,
    #[serde(with = "serde_q::vec")]
    pub gaps: Vec<Rational>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum PseudoOrbitCheck {
    Valid(PseudoOrbit),
    Refused {
        index: usize,
        #[serde(with = "serde_q")]
        gap: Rational,
    },
}

/// Checks dist(f(y_n), y_{n+1}) < δ for every n, wrapping around when `periodic`.
pub fn validate_pseudo_orbit(
    map: &CompositeMap,
    points: &[Point],
    delta: &Rational,
    periodic: bool,
) -> Result<PseudoOrbitCheck> {
    if points.is_empty() {
        return Err(Error::invalid("empty pseudo-orbit"));
    }
    if !delta.is_positive() {
        return Err(Error::invalid("δ must be positive"));
    }
    if points.iter().any(|p| p.dim() != map.dim()) {
        return Err(Error::invalid("pseudo-orbit and map dimensions differ"));
    }
    let n = points.len();
    let steps = if periodic { n } else { n - 1 };
    let mut gaps = Vec::with_capacity(steps);
    for i in 0..steps {
        let gap = map.eval(&points[i]).dist(&points[(i + 1) % n]);
        if gap >= *delta {
            return Ok(PseudoOrbitCheck::Refused { index: i, gap });
        }
        gaps.push(gap);
    }
    Ok(PseudoOrbitCheck::Valid(PseudoOrbit {
        points: points.to_vec(),
        delta: delta.clone(),
        period: if periodic { n } else { 0 },
        gaps,
    }))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PeriodicOrbit {
    pub point: Point,
    pub period: usize,
    #[serde(with = "serde_q")]
    pub residual: Rational,
    pub orbit: Vec<Point>,
}

impl PeriodicOrbit {
    pub fn measure(&self) -> AtomicMeasure {
        AtomicMeasure::uniform(&self.orbit).expect("orbit is nonempty")
    }
}

/// Affine branch x ↦ a x + b on [lo, hi] of a one-dimensional composite.
#[derive(Clone, Debug)]
struct Branch {
    lo: Rational,
    hi: Rational,
    a: Rational,
    b: Rational,
}

/// Splits an affine-only 1D composite into maximal branches where it is a single affine map.
fn flatten(map: &CompositeMap) -> Option<Vec<Branch>> {
    if map.dim() != 1 {
        return None;
    }
    let mut out = vec![Branch { lo: zero(), hi: one(), a: one(), b: zero() }];
    for layer in map.layers() {
        let Layer::Affine(l) = layer else { return None };
        let mut next = Vec::new();
        for br in &out {
            let y0 = &br.a * &br.lo + &br.b;
            let y1 = &br.a * &br.hi + &br.b;
            if br.a.is_zero() {
                let p = l.piece_at(std::slice::from_ref(&y0));
                next.push(Branch {
                    lo: br.lo.clone(),
                    hi: br.hi.clone(),
                    a: zero(),
                    b: &p.matrix()[0][0] * &y0 + &p.offset()[0],
                });
                continue;
            }
            let (ylo, yhi) = (min_r(&y0, &y1), max_r(&y0, &y1));
            for p in l.pieces() {
                let (dl, dh) = p.domain().bbox();
                let (u, v) = (max_r(&dl[0], &ylo), min_r(&dh[0], &yhi));
                if u >= v {
                    continue;
                }
                let (x0, x1) = ((&u - &br.b) / &br.a, (&v - &br.b) / &br.a);
                let c = &p.matrix()[0][0];
                let d = &p.offset()[0];
                next.push(Branch {
                    lo: min_r(&x0, &x1),
                    hi: max_r(&x0, &x1),
                    a: c * &br.a,
                    b: c * &br.b + d,
                });
            }
        }
        out = next;
    }
    out.sort_by(|x, y| x.lo.cmp(&y.lo));
    Some(out)
}

/// Itinerary tree state: F^k(x) = a x + b on [lo, hi].
#[derive(Clone, Debug)]
struct Node {
    lo: Rational,
    hi: Rational,
    a: Rational,
    b: Rational,
}

struct Search<'a> {
    branches: &'a [Branch],
    depth: usize,
    windows: Option<&'a [(Rational, Rational)]>,
    counter: &'a AtomicUsize,
    budget: usize,
}

impl Search<'_> {
    /// Restricts x to F^k(x) ∈ window k.
    fn window(&self, k: usize, n: Node) -> Option<Node> {
        let Some(w) = self.windows else { return Some(n) };
        let (wl, wh) = &w[k % w.len()];
        if n.a.is_zero() {
            return (wl <= &n.b && &n.b <= wh).then_some(n);
        }
        let (x0, x1) = ((wl - &n.b) / &n.a, (wh - &n.b) / &n.a);
        let lo = max_r(&n.lo, &min_r(&x0, &x1));
        let hi = min_r(&n.hi, &max_r(&x0, &x1));
        (lo <= hi).then_some(Node { lo, hi, ..n })
    }

    fn children(&self, n: &Node) -> Vec<Node> {
        let y0 = &n.a * &n.lo + &n.b;
        let y1 = &n.a * &n.hi + &n.b;
        let (ylo, yhi) = (min_r(&y0, &y1), max_r(&y0, &y1));
        let mut out = Vec::new();
        for br in self.branches {
            let (u, v) = (max_r(&br.lo, &ylo), min_r(&br.hi, &yhi));
            let degenerate_image = ylo == yhi;
            if u > v || (u == v && !degenerate_image) {
                continue;
            }
            let (lo, hi) = if n.a.is_zero() {
                (n.lo.clone(), n.hi.clone())
            } else {
                let (x0, x1) = ((&u - &n.b) / &n.a, (&v - &n.b) / &n.a);
                (min_r(&x0, &x1), max_r(&x0, &x1))
            };
            out.push(Node { lo, hi, a: &br.a * &n.a, b: &br.a * &n.b + &br.b });
            if degenerate_image {
                break;
            }
        }
        out
    }

    fn run(&self, n: Node, k: usize, out: &mut Vec<Rational>) -> Result<()> {
        if self.counter.fetch_add(1, Ordering::Relaxed) >= self.budget {
            return Err(Error::Budget(format!("itinerary enumeration exceeded {} nodes", self.budget)));
        }
        if k == self.depth {
            let c = &n.a - one();
            if c.is_zero() {
                if n.b.is_zero() {
                    if n.lo < n.hi {
                        return Err(Error::NonIsolated(format!(
                            "continuum of period-{} points on [{}, {}]",
                            self.depth,
                            fmt_rational(&n.lo),
                            fmt_rational(&n.hi)
                        )));
                    }
                    out.push(n.lo.clone());
                }
                return Ok(());
            }
            let x = -&n.b / c;
            if n.lo <= x && x <= n.hi {
                out.push(x);
            }
            return Ok(());
        }
        for child in self.children(&n) {
            if let Some(c) = self.window(k + 1, child) {
                self.run(c, k + 1, out)?;
            }
        }
        Ok(())
    }
}

/// All x ∈ [0,1] with F^p(x) = x for an affine-only 1D composite, in increasing
/// order. With windows, only orbits with F^k(x) ∈ windows[k mod len] are kept.
fn affine_periodic_points(
    branches: &[Branch],
    p: usize,
    windows: Option<&[(Rational, Rational)]>,
    budget: usize,
) -> Result<Vec<Rational>> {
    let counter = AtomicUsize::new(0);
    let search = Search { branches, depth: p, windows, counter: &counter, budget };
    let root = Node { lo: zero(), hi: one(), a: one(), b: zero() };
    let Some(root) = search.window(0, root) else { return Ok(Vec::new()) };
    let firsts: Vec<Node> = search.children(&root).into_iter().filter_map(|c| search.window(1, c)).collect();
    let parts = if p == 1 {
        firsts
            .into_iter()
            .map(|n| {
                let mut v = Vec::new();
                search.run(n, 1, &mut v).map(|_| v)
            })
            .collect::<Vec<_>>()
    } else {
        par::map_slice(&firsts, |n| {
            let mut v = Vec::new();
            search.run(n.clone(), 1, &mut v).map(|_| v)
        })
    };
    let mut set = BTreeSet::new();
    for part in parts {
        set.extend(part?);
    }
    Ok(set.into_iter().collect())
}

fn orbit_eval(map: &CompositeMap, x: &Point, n: usize, err: &mut Rational) -> Point {
    let mut y = x.clone();
    for _ in 0..n {
        y = step(map, &y, OrbitPolicy::default(), err);
    }
    y
}

/// Roots of F^p(x) − x for 1D maps with radial layers: exact zeros on a dyadic
/// grid plus bisection-refined sign changes.
fn grid_periodic_points(map: &CompositeMap, p: usize, tol: &Rational) -> Vec<(Rational, Rational)> {
    let n = 1usize << GRID_BITS;
    let h = pow2_neg(GRID_BITS);
    let g = |x: &Rational| {
        let mut err = zero();
        let pt = Point::on_line(x.clone()).expect("grid point lies in [0,1]");
        orbit_eval(map, &pt, p, &mut err).x() - x
    };
    let vals = par::map_indexed(n + 1, |i| g(&(&h * int(i as i64))));
    let mut out = Vec::new();
    for i in 0..=n {
        if vals[i].is_zero() {
            out.push((&h * int(i as i64), zero()));
        } else if i < n && !vals[i + 1].is_zero() && vals[i + 1].is_positive() != vals[i].is_positive() {
            let (mut lo, mut hi) = (&h * int(i as i64), &h * int(i as i64 + 1));
            let lo_pos = vals[i].is_positive();
            while &hi - &lo > *tol {
                let mid = (&lo + &hi) / int(2);
                let v = g(&mid);
                if v.is_zero() {
                    lo = mid.clone();
                    hi = mid;
                    break;
                }
                if v.is_positive() == lo_pos {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let x = (&lo + &hi) / int(2);
            let r = abs(&g(&x));
            out.push((x, r));
        }
    }
    out
}

/// Every x with f^p(x) = x, sorted, paired with its residual (0 when exact).
pub fn periodic_points(map: &CompositeMap, p: usize, budget: usize) -> Result<Vec<(Point, Rational)>> {
    if p == 0 {
        return Err(Error::invalid("period must be at least 1"));
    }
    if map.dim() != 1 {
        return Err(Error::Unsupported("periodic-orbit enumeration is implemented on the interval only".into()));
    }
    if map.is_identity() {
        return Err(Error::NonIsolated("the identity fixes every point".into()));
    }
    if let Some(branches) = flatten(map) {
        let xs = affine_periodic_points(&branches, p, None, budget)?;
        return Ok(xs.into_iter().map(|x| (Point::on_line(x).expect("in [0,1]"), zero())).collect());
    }
    let tol = pow2_neg(48);
    Ok(grid_periodic_points(map, p, &tol)
        .into_iter()
        .map(|(x, r)| (Point::on_line(x).expect("in [0,1]"), r))
        .collect())
}

fn minimal_period(map: &CompositeMap, x: &Point, p: usize, residual: &Rational) -> usize {
    let mut err = zero();
    let mut y = x.clone();
    for m in 1..=p {
        y = step(map, &y, OrbitPolicy::default(), &mut err);
        if p % m == 0 && (y == *x || (!residual.is_zero() && y.dist(x) <= residual * int(4))) {
            return m;
        }
    }
    p
}

/// All periodic orbits whose period divides p, one per orbit, ordered by their
/// smallest point.
pub fn enumerate_periodic_orbits(map: &CompositeMap, p: usize, budget: usize) -> Result<Vec<PeriodicOrbit>> {
    let pts = periodic_points(map, p, budget)?;
    let mut seen: BTreeSet<Point> = BTreeSet::new();
    let mut out = Vec::new();
    for (x, r) in &pts {
        if seen.contains(x) {
            continue;
        }
        let m = minimal_period(map, x, p, r);
        let mut err = zero();
        let mut orbit = vec![x.clone()];
        for _ in 1..m {
            let next = step(map, orbit.last().unwrap(), OrbitPolicy::default(), &mut err);
            orbit.push(next);
        }
        if r.is_zero() {
            seen.extend(orbit.iter().cloned());
        } else {
            // approximate orbits: absorb every listed point close to one of ours
            for (y, _) in &pts {
                if orbit.iter().any(|z| z.dist(y) <= r * int(4)) {
                    seen.insert(y.clone());
                }
            }
        }
        let point = orbit.iter().min().unwrap().clone();
        let start = orbit.iter().position(|z| *z == point).unwrap();
        orbit.rotate_left(start);
        out.push(PeriodicOrbit { point, period: m, residual: r.clone(), orbit });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ShadowOutcome {
    Found {
        orbit: PeriodicOrbit,
        /// The shadowing orbit, aligned with the pseudo-orbit (starts at f^0 matching y_0).
        points: Vec<Point>,
        #[serde(with = "serde_q")]
        distance: Rational,
    },
    /// No periodic orbit of the tried periods stays within ε; the enumeration is
    /// exhaustive, so this is a verified absence.
    NotFound { periods: Vec<usize>, candidates: usize },
}

fn sup_distance(map: &CompositeMap, x: &Point, ys: &[Point], len: usize) -> (Vec<Point>, Rational) {
    let mut err = zero();
    let mut pts = vec![x.clone()];
    for _ in 1..len {
        let next = step(map, pts.last().unwrap(), OrbitPolicy::default(), &mut err);
        pts.push(next);
    }
    let d = pts.iter().enumerate().map(|(n, z)| z.dist(&ys[n % ys.len()])).max().unwrap();
    (pts, d)
}

/// Looks for a periodic orbit of period m·P (m = 1..=max_mult) with
/// max_n dist(f^n(x), y_n) < ε, returning the closest one.
pub fn shadow_periodic_pseudo_orbit(
    map: &CompositeMap,
    po: &PseudoOrbit,
    eps: &Rational,
    max_mult: usize,
    budget: usize,
) -> Result<ShadowOutcome> {
    if po.period == 0 {
        return Err(Error::invalid("shadowing needs a periodic pseudo-orbit"));
    }
    if map.dim() != 1 {
        return Err(Error::Unsupported("periodic shadowing is implemented on the interval only".into()));
    }
    let ys = &po.points;
    let windows: Vec<(Rational, Rational)> = ys.iter().map(|y| (y.x() - eps, y.x() + eps)).collect();
    let branches = flatten(map);
    let mut tried = Vec::new();
    let mut candidates = 0;
    for m in 1..=max_mult.max(1) {
        let p = m * po.period;
        tried.push(p);
        let xs: Vec<(Point, Rational)> = match &branches {
            Some(b) => affine_periodic_points(b, p, Some(&windows), budget)?
                .into_iter()
                .map(|x| (Point::on_line(x).expect("in [0,1]"), zero()))
                .collect(),
            None => periodic_points(map, p, budget)?,
        };
        candidates += xs.len();
        let mut best: Option<(Rational, Vec<Point>, Rational)> = None;
        for (x, r) in xs {
            let (pts, d) = sup_distance(map, &x, ys, p);
            if d < *eps && best.as_ref().is_none_or(|b| d < b.0) {
                best = Some((d, pts, r));
            }
        }
        if let Some((distance, points, residual)) = best {
            let mp = minimal_period(map, &points[0], p, &residual);
            let orbit = PeriodicOrbit {
                point: points[0].clone(),
                period: mp,
                residual,
                orbit: points[..mp].to_vec(),
            };
            return Ok(ShadowOutcome::Found { orbit, points, distance });
        }
    }
    Ok(ShadowOutcome::NotFound { periods: tried, candidates })
}

#[derive(Clone, Debug, Serialize)]
pub struct ErgodicApproximation {
    pub nu: AtomicMeasure,
    pub bound: MetricResult,
    #[serde(with = "serde_q")]
    pub eps0: Rational,
    /// Lemma parameter for ε₀; orbits 1/q-close give measures ε₀-close.
    pub q: u64,
    #[serde(with = "serde_q")]
    pub eps: Rational,
    #[serde(with = "serde_q")]
    pub delta: Rational,
    /// Orbit index of the pseudo-orbit start and the recurrence time.
    pub start: usize,
    pub recurrence: usize,
    #[serde(with = "serde_q")]
    pub recurrence_gap: Rational,
    pub pseudo_orbit: PseudoOrbit,
    pub shadow_orbit: Vec<Point>,
    #[serde(with = "serde_q")]
    pub shadow_distance: Rational,
    pub thresholds_met: bool,
}

/// Approximates the empirical measure along a recurrent stretch of the orbit of
/// x by the periodic measure of a shadowing orbit.
pub fn ergodic_to_periodic_measure(
    map: &CompositeMap,
    x: &Point,
    eps0: &Rational,
    horizon: usize,
) -> Result<ErgodicApproximation> {
    if !eps0.is_positive() {
        return Err(Error::invalid("ε₀ must be positive"));
    }
    let family = TestFunctionFamily::new(map.dim())?;
    let q = approach_parameter_q(eps0, &family)?;
    let eps = rat(1, q as i64);
    let delta = &eps / int(2);
    let orbit = trace_orbit(map, x, horizon, OrbitPolicy::default());
    let pts: Vec<Point> = (0..horizon).map(|t| orbit.point_at(t).clone()).collect();
    let (a, p) = (1..horizon)
        .find_map(|t| (0..t).find(|&a| pts[t].dist(&pts[a]) < delta).map(|a| (a, t - a)))
        .ok_or_else(|| Error::construction(format!("no δ-recurrence within {horizon} steps")))?;
    let ys: Vec<Point> = pts[a..a + p].to_vec();
    let po = match validate_pseudo_orbit(map, &ys, &delta, true)? {
        PseudoOrbitCheck::Valid(po) => po,
        PseudoOrbitCheck::Refused { index, .. } => {
            return Err(Error::Verification(format!("recurrent stretch is not a δ-pseudo-orbit at {index}")))
        }
    };
    let (shadow, distance) = match shadow_periodic_pseudo_orbit(map, &po, &eps, 4, DEFAULT_BUDGET)? {
        ShadowOutcome::Found { points, distance, .. } => (points, distance),
        ShadowOutcome::NotFound { periods, .. } => {
            return Err(Error::construction(format!("no shadowing periodic orbit of period in {periods:?}")))
        }
    };
    let nu = AtomicMeasure::uniform(&shadow)?;
    let emp = AtomicMeasure::uniform(&ys)?;
    let bound = weakstar_distance(&nu, &emp, DEFAULT_DEPTH)?;
    let thresholds_met = distance < eps && po.gaps.iter().all(|g| *g < delta);
    if thresholds_met && bound.hi >= int(2) * eps0 {
        return Err(Error::Verification(format!(
            "bound {} not below 2ε₀ = {}",
            fmt_rational(&bound.hi),
            fmt_rational(&(int(2) * eps0))
        )));
    }
    Ok(ErgodicApproximation {
        nu,
        bound,
        eps0: eps0.clone(),
        q,
        eps,
        delta,
        start: a,
        recurrence: p,
        recurrence_gap: pts[a + p].dist(&pts[a]),
        pseudo_orbit: po,
        shadow_orbit: shadow,
        shadow_distance: distance,
        thresholds_met,
    })
}

/// Fixed points of f^p for the tent map from its laps, used as an oracle.
#[cfg(test)]
pub(crate) fn tent_oracle(p: u32) -> Vec<Rational> {
    let n = 1i64 << p;
    let mut v: Vec<Rational> = (0..n)
        .map(|j| if j % 2 == 0 { rat(j, n - 1) } else { rat(j + 1, n + 1) })
        .collect();
    v.sort();
    v.dedup();
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::preset;

    fn pt(n: i64, d: i64) -> Point {
        Point::on_line(rat(n, d)).unwrap()
    }

    #[test]
    fn pseudo_orbit_examples() {
        let tent = preset("tent").unwrap();
        let ys = vec![pt(41, 100), pt(79, 100)];
        let PseudoOrbitCheck::Valid(po) = validate_pseudo_orbit(&tent, &ys, &rat(1, 25), true).unwrap() else {
            panic!()
        };
        assert_eq!(po.gaps, vec![rat(3, 100), rat(1, 100)]);
        assert_eq!(
            validate_pseudo_orbit(&tent, &ys, &rat(1, 100), true).unwrap(),
            PseudoOrbitCheck::Refused { index: 0, gap: rat(3, 100) }
        );
        let ShadowOutcome::Found { points, distance, orbit } =
            shadow_periodic_pseudo_orbit(&tent, &po, &rat(1, 50), 1, DEFAULT_BUDGET).unwrap()
        else {
            panic!()
        };
        assert_eq!(points, vec![pt(2, 5), pt(4, 5)]);
        assert_eq!(distance, rat(1, 100));
        assert_eq!(orbit.period, 2);
    }

    #[test]
    fn enumeration_matches_laps() {
        let tent = preset("tent").unwrap();
        for p in 1..=8u32 {
            let got: Vec<Rational> =
                periodic_points(&tent, p as usize, DEFAULT_BUDGET).unwrap().into_iter().map(|(x, _)| x.x().clone()).collect();
            assert_eq!(got.len(), 1 << p);
            assert_eq!(got, tent_oracle(p));
        }
        let orbits = enumerate_periodic_orbits(&tent, 2, DEFAULT_BUDGET).unwrap();
        let reps: Vec<_> = orbits.iter().map(|o| (o.point.x().clone(), o.period)).collect();
        assert_eq!(reps, vec![(zero(), 1), (rat(2, 5), 2), (rat(2, 3), 1)]);
        let id = CompositeMap::identity(crate::geometry::Domain::Interval);
        assert!(matches!(periodic_points(&id, 1, DEFAULT_BUDGET), Err(Error::NonIsolated(_))));
    }

    #[test]
    fn constant_pseudo_orbit_not_found() {
        let tent = preset("tent").unwrap();
        let po = PseudoOrbit { points: vec![pt(1, 2)], delta: one(), period: 1, gaps: vec![one()] };
        let out = shadow_periodic_pseudo_orbit(&tent, &po, &rat(1, 1000), 3, DEFAULT_BUDGET).unwrap();
        assert!(matches!(out, ShadowOutcome::NotFound { .. }));
    }

    #[test]
    fn ergodic_tent() {
        let tent = preset("tent").unwrap();
        let r = ergodic_to_periodic_measure(&tent, &pt(41, 100), &rat(1, 4), 200).unwrap();
        assert!(r.thresholds_met);
        assert!(r.bound.hi < rat(1, 2));
        let two_five = ergodic_to_periodic_measure(&tent, &pt(2, 5), &rat(1, 4), 50).unwrap();
        assert_eq!(two_five.nu, AtomicMeasure::uniform(&[pt(2, 5), pt(4, 5)]).unwrap());
        assert!(two_five.bound.hi <= pow2_neg(DEFAULT_DEPTH as u32));
    }
}
