//! Atomic measures, the dyadic test family and the truncated weak* metric.
//!
//! Integrals against the first N test functions are computed from node masses:
//! every function of level ≤ L is (bi)linear on the level-L dyadic cells, so a
//! measure only enters through the hat-function masses at the level-L nodes.

use std::collections::BTreeMap;
use std::collections::HashMap;

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Simplex, Vector};
use crate::maps::CompositeMap;
use crate::numeric::{fmt_rational, int, max_r, min_r, one, parse_rational, pow2_neg, rat, serde_q, zero, Rational};

pub const DEFAULT_DEPTH: usize = 20;

/// Finitely supported probability measure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AtomicMeasure {
    atoms: Vec<(Point, Rational)>,
}

impl AtomicMeasure {
    pub fn new(atoms: Vec<(Point, Rational)>) -> Result<Self> {
        let m = Self::merged(atoms)?;
        let total: Rational = m.atoms.iter().map(|(_, w)| w.clone()).sum();
        if total != one() {
            return Err(Error::invalid(format!("weights sum to {}", fmt_rational(&total))));
        }
        Ok(m)
    }

    fn merged(atoms: Vec<(Point, Rational)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::invalid("measure without atoms"));
        }
        let dim = atoms[0].0.dim();
        let mut map: BTreeMap<Point, Rational> = BTreeMap::new();
        for (p, w) in atoms {
            if p.dim() != dim {
                return Err(Error::invalid("atoms of mixed dimension"));
            }
            if !w.is_positive() {
                return Err(Error::invalid(format!("non-positive weight {}", fmt_rational(&w))));
            }
            *map.entry(p).or_insert_with(zero) += w;
        }
        Ok(AtomicMeasure { atoms: map.into_iter().collect() })
    }

    pub fn dirac(p: Point) -> Self {
        AtomicMeasure { atoms: vec![(p, one())] }
    }

    /// Equal weights on the given points (repeats add up).
    pub fn uniform(points: &[Point]) -> Result<Self> {
        let w = rat(1, points.len().max(1) as i64);
        Self::new(points.iter().map(|p| (p.clone(), w.clone())).collect())
    }

    /// λμ + (1−λ)ν
    pub fn convex(lambda: &Rational, mu: &AtomicMeasure, nu: &AtomicMeasure) -> Result<Self> {
        if lambda.is_negative() || lambda > &one() {
            return Err(Error::invalid("convex weight outside [0,1]"));
        }
        let mut atoms = Vec::new();
        if lambda.is_positive() {
            atoms.extend(mu.atoms.iter().map(|(p, w)| (p.clone(), w * lambda)));
        }
        let rest = one() - lambda;
        if rest.is_positive() {
            atoms.extend(nu.atoms.iter().map(|(p, w)| (p.clone(), w * &rest)));
        }
        Self::new(atoms)
    }

    pub fn atoms(&self) -> &[(Point, Rational)] {
        &self.atoms
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].0.dim()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total(&self) -> Rational {
        self.atoms.iter().map(|(_, w)| w.clone()).sum()
    }

    pub fn mass_where(&self, pred: impl Fn(&Point) -> bool) -> Rational {
        self.atoms.iter().filter(|(p, _)| pred(p)).map(|(_, w)| w.clone()).sum()
    }

    pub fn push_forward(&self, map: &CompositeMap) -> AtomicMeasure {
        let atoms = self.atoms.iter().map(|(p, w)| (map.eval(p), w.clone())).collect();
        Self::merged(atoms).expect("image of a measure")
    }

    /// f_*μ = μ exactly.
    pub fn is_invariant(&self, map: &CompositeMap) -> bool {
        self.push_forward(map) == *self
    }

    pub fn integrate(&self, f: impl Fn(&Point) -> Rational) -> Rational {
        self.atoms.iter().map(|(p, w)| f(p) * w).sum()
    }

    pub fn to_doc(&self) -> MeasureDoc {
        MeasureDoc {
            atoms: self
                .atoms
                .iter()
                .map(|(p, w)| {
                    let mut row: Vec<String> = p.coords().iter().map(fmt_rational).collect();
                    row.push(w.numer().to_string());
                    row.push(w.denom().to_string());
                    row
                })
                .collect(),
        }
    }

    pub fn from_doc(doc: &MeasureDoc) -> Result<Self> {
        let mut atoms = Vec::new();
        for row in &doc.atoms {
            if row.len() < 3 {
                return Err(Error::Parse("atom rows need coordinates, numerator and denominator".into()));
            }
            let k = row.len() - 2;
            let coords = row[..k].iter().map(|s| parse_rational(s)).collect::<Result<Vec<_>>>()?;
            let num: BigInt = row[k].parse().map_err(|_| Error::Parse(format!("bad weight numerator {}", row[k])))?;
            let den: BigInt = row[k + 1].parse().map_err(|_| Error::Parse(format!("bad weight denominator {}", row[k + 1])))?;
            if den.is_zero() {
                return Err(Error::Parse("zero weight denominator".into()));
            }
            atoms.push((Point::new(coords)?, Rational::new(num, den)));
        }
        Self::new(atoms)
    }
}

impl Serialize for AtomicMeasure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_doc().serialize(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasureDoc {
    pub atoms: Vec<Vec<String>>,
}

/// Dyadic piecewise-(bi)linear function with values k/2^L at the level-L nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestFunction {
    dim: usize,
    level: u32,
    values: Vec<u32>,
}

impl TestFunction {
    pub fn level(&self) -> u32 {
        self.level
    }

    fn cells(&self) -> u64 {
        1u64 << self.level
    }

    fn value(&self, idx: usize) -> Rational {
        rat(self.values[idx] as i64, self.cells() as i64)
    }

    pub fn eval(&self, x: &[Rational]) -> Rational {
        let n = self.cells();
        let side = n as usize + 1;
        let locate = |c: &Rational| {
            let scaled = c * int(n as i64);
            let k = scaled.floor().to_integer().to_u64().unwrap_or(0).min(n - 1);
            let t = scaled - int(k as i64);
            (k as usize, t)
        };
        if self.dim == 1 {
            let (k, t) = locate(&x[0]);
            let (a, b) = (self.value(k), self.value(k + 1));
            return &a + t * (b - &a);
        }
        let (i, u) = locate(&x[0]);
        let (j, v) = locate(&x[1]);
        let f = |a: usize, b: usize| self.value(a * side + b);
        let (f00, f10, f01, f11) = (f(i, j), f(i + 1, j), f(i, j + 1), f(i + 1, j + 1));
        let ou = one() - &u;
        let ov = one() - &v;
        f00 * &ou * &ov + f10 * &u * &ov + f01 * &ou * &v + f11 * &u * &v
    }

    /// Exact Lipschitz constant (1D) or the bound Lx + Ly (2D), max-norm.
    pub fn lipschitz(&self) -> Rational {
        let n = self.cells() as usize;
        let d = |a: u32, b: u32| (a as i64 - b as i64).unsigned_abs();
        if self.dim == 1 {
            let m = self.values.windows(2).map(|w| d(w[0], w[1])).max().unwrap_or(0);
            return int(m as i64);
        }
        let side = n + 1;
        let v = |a: usize, b: usize| self.values[a * side + b];
        let mut lx = 0;
        let mut ly = 0;
        for a in 0..n {
            for b in 0..n {
                lx = lx.max(d(v(a + 1, b), v(a, b))).max(d(v(a + 1, b + 1), v(a, b + 1)));
                ly = ly.max(d(v(a, b + 1), v(a, b))).max(d(v(a + 1, b + 1), v(a + 1, b)));
            }
        }
        int((lx + ly) as i64)
    }
}

/// The canonical countable family Ψ_1, Ψ_2, … ordered by level, then by value
/// vector (first node most significant).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestFunctionFamily {
    dim: usize,
}

impl TestFunctionFamily {
    pub fn new(dim: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::invalid(format!("no test family in dimension {dim}")));
        }
        Ok(TestFunctionFamily { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn nodes(&self, level: u32) -> u32 {
        ((1u32 << level) + 1).pow(self.dim as u32)
    }

    fn level_size(&self, level: u32) -> Option<u128> {
        let base = (1u128 << level) + 1;
        base.checked_pow(self.nodes(level))
    }

    /// Ψ_i for i ≥ 1.
    pub fn function(&self, i: usize) -> TestFunction {
        assert!(i >= 1, "test functions are indexed from 1");
        let mut r = (i - 1) as u128;
        let mut level = 0u32;
        loop {
            match self.level_size(level) {
                Some(sz) if r >= sz => {
                    r -= sz;
                    level += 1;
                }
                _ => break,
            }
        }
        let base = (1u128 << level) + 1;
        let nodes = self.nodes(level) as usize;
        let mut values = vec![0u32; nodes];
        for slot in values.iter_mut().rev() {
            *slot = (r % base) as u32;
            r /= base;
        }
        TestFunction { dim: self.dim, level, values }
    }

    pub fn lipschitz(&self, i: usize) -> Rational {
        self.function(i).lipschitz()
    }

    pub fn basis(&self, depth: usize) -> Basis {
        Basis::new(self.clone(), depth)
    }
}

/// Values of Ψ_1..Ψ_N at the finest node grid they need.
#[derive(Clone, Debug)]
pub struct Basis {
    family: TestFunctionFamily,
    depth: usize,
    level: u32,
    values: Vec<Vec<Rational>>,
    lipschitz: Vec<Rational>,
}

impl Basis {
    fn new(family: TestFunctionFamily, depth: usize) -> Self {
        assert!(depth >= 1, "metric depth must be at least 1");
        let funcs: Vec<TestFunction> = (1..=depth).map(|i| family.function(i)).collect();
        let level = funcs.iter().map(TestFunction::level).max().unwrap();
        let n = 1i64 << level;
        let nodes: Vec<Vec<Rational>> = if family.dim == 1 {
            (0..=n).map(|k| vec![rat(k, n)]).collect()
        } else {
            (0..=n).flat_map(|a| (0..=n).map(move |b| vec![rat(a, n), rat(b, n)])).collect()
        };
        let values = funcs.iter().map(|f| nodes.iter().map(|x| f.eval(x)).collect()).collect();
        let lipschitz = funcs.iter().map(TestFunction::lipschitz).collect();
        Basis { family, depth, level, values, lipschitz }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.family.dim
    }

    pub fn family(&self) -> &TestFunctionFamily {
        &self.family
    }

    /// Lipschitz constants of Ψ_1..Ψ_N.
    pub fn lipschitz(&self) -> &[Rational] {
        &self.lipschitz
    }

    fn cells(&self) -> i64 {
        1i64 << self.level
    }

    fn node_count(&self) -> usize {
        (self.cells() as usize + 1).pow(self.family.dim as u32)
    }

    /// Adds w times the hat-function values of x to the node masses.
    pub fn add_point(&self, mass: &mut [Rational], x: &[Rational], w: &Rational) {
        let n = self.cells();
        let locate = |c: &Rational| {
            let scaled = c * int(n);
            let k = scaled.floor().to_integer().to_i64().unwrap_or(0).min(n - 1);
            let t = scaled - int(k);
            (k as usize, t)
        };
        if self.family.dim == 1 {
            let (k, t) = locate(&x[0]);
            let wt = w * &t;
            mass[k] += w - &wt;
            mass[k + 1] += wt;
            return;
        }
        let side = n as usize + 1;
        let (i, u) = locate(&x[0]);
        let (j, v) = locate(&x[1]);
        let wu = w * &u;
        let wuv = &wu * &v;
        let wv = w * &v;
        mass[(i + 1) * side + j + 1] += &wuv;
        mass[(i + 1) * side + j] += &wu - &wuv;
        mass[i * side + j + 1] += &wv - &wuv;
        mass[i * side + j] += w - wu - wv + wuv;
    }

    pub fn empty_mass(&self) -> Vec<Rational> {
        vec![zero(); self.node_count()]
    }

    /// ∫Ψ_i for i = 1..N from node masses scaled by 1/total.
    pub fn integrals(&self, mass: &[Rational], total: &Rational) -> Signature {
        let v = self
            .values
            .iter()
            .map(|vals| vals.iter().zip(mass).map(|(a, m)| a * m).sum::<Rational>() / total)
            .collect();
        Signature(v)
    }

    pub fn signature(&self, mu: &AtomicMeasure) -> Signature {
        let mut mass = self.empty_mass();
        for (p, w) in mu.atoms() {
            self.add_point(&mut mass, p.coords(), w);
        }
        self.integrals(&mass, &one())
    }

    /// Lemma constant ε(q): min over n ≤ N of Σ_{i≤n} 2^{-i}·min(1, (1+Lip Ψ_i)/q) + 2^{-n}.
    pub fn epsilon_for_q(&self, q: u64) -> Rational {
        let q = int(q as i64);
        let mut acc = zero();
        let mut best: Option<Rational> = None;
        for (i, l) in self.lipschitz.iter().enumerate() {
            let term = min_r(&one(), &((one() + l) / &q));
            acc += pow2_neg(i as u32 + 1) * term;
            let cand = &acc + pow2_neg(i as u32 + 1);
            best = Some(best.map_or(cand.clone(), |b| min_r(&b, &cand)));
        }
        best.unwrap()
    }
}

/// (∫Ψ_1 dμ, …, ∫Ψ_N dμ)
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Signature(pub Vec<Rational>);

impl Signature {
    pub fn depth(&self) -> usize {
        self.0.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MetricResult {
    #[serde(with = "serde_q")]
    pub lo: Rational,
    #[serde(with = "serde_q")]
    pub hi: Rational,
    pub depth: usize,
}

impl std::fmt::Display for MetricResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}]@{}", fmt_rational(&self.lo), fmt_rational(&self.hi), self.depth)
    }
}

pub fn signature_distance(a: &Signature, b: &Signature) -> MetricResult {
    assert_eq!(a.depth(), b.depth(), "signatures of different depth");
    let depth = a.depth();
    let mut lo = zero();
    for (i, (x, y)) in a.0.iter().zip(&b.0).enumerate() {
        lo += pow2_neg(i as u32 + 1) * (x - y).abs();
    }
    let hi = min_r(&(&lo + pow2_neg(depth as u32)), &one());
    MetricResult { lo, hi, depth }
}

/// Truncated d(μ,ν) with tail bound 2^{-N}.
pub fn weakstar_distance(mu: &AtomicMeasure, nu: &AtomicMeasure, depth: usize) -> Result<MetricResult> {
    if mu.dim() != nu.dim() {
        return Err(Error::invalid("measures on different domains"));
    }
    let basis = TestFunctionFamily::new(mu.dim())?.basis(depth);
    Ok(signature_distance(&basis.signature(mu), &basis.signature(nu)))
}

/// Smallest q for which the approximation lemma guarantees d < ε.
pub fn approach_parameter_q(eps: &Rational, family: &TestFunctionFamily) -> Result<u64> {
    if !eps.is_positive() || eps > &one() {
        return Err(Error::invalid("ε must lie in (0,1]"));
    }
    let half = eps * rat(1, 2);
    let mut n = 1u32;
    while pow2_neg(n) >= half {
        n += 1;
    }
    let lip = (1..=n as usize).map(|i| family.lipschitz(i)).max().unwrap();
    let bound = max_r(&(int(4) * &lip / eps), &(int(4) / eps));
    let q = crate::numeric::next_int_above(&bound);
    q.to_u64().ok_or_else(|| Error::invalid("q overflows"))
}

/// Number of leading test functions the lemma needs for ε: n with 2^{-n} < ε/2.
pub fn lemma_depth(eps: &Rational) -> usize {
    let half = eps * rat(1, 2);
    let mut n = 1u32;
    while pow2_neg(n) >= half {
        n += 1;
    }
    n as usize
}

#[derive(Clone, Debug, Serialize)]
pub struct LemmaVerdict {
    pub hypotheses_hold: bool,
    pub reason: Option<String>,
    pub distance: Option<MetricResult>,
    #[serde(with = "serde_q")]
    pub epsilon_q: Rational,
}

/// Checks the approximation-lemma hypotheses for (μ, ν, pieces, q) and, when
/// they hold, that the certified distance stays below ε(q).
pub fn lemma_dist_check(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    pieces: &[Simplex],
    q: u64,
    depth: usize,
) -> Result<LemmaVerdict> {
    if pieces.is_empty() {
        return Err(Error::invalid("no pieces"));
    }
    let basis = TestFunctionFamily::new(mu.dim())?.basis(depth);
    let epsilon_q = basis.epsilon_for_q(q);
    // sweep on the first coordinate; exact test only for overlapping boxes
    let boxes: Vec<(Vector, Vector)> = pieces.iter().map(Simplex::bbox).collect();
    let mut order: Vec<usize> = (0..pieces.len()).collect();
    order.sort_by(|&a, &b| boxes[a].0[0].cmp(&boxes[b].0[0]));
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            if boxes[j].0[0] > boxes[i].1[0] {
                break;
            }
            let meet = (0..boxes[i].0.len()).all(|c| boxes[j].0[c] <= boxes[i].1[c] && boxes[i].0[c] <= boxes[j].1[c]);
            if meet && pieces[i].to_polytope().intersects(&pieces[j].to_polytope()) {
                let (i, j) = (i.min(j), i.max(j));
                return Err(Error::Geometry(format!("pieces {i} and {j} intersect")));
            }
        }
    }
    let refuse = |reason: String| LemmaVerdict { hypotheses_hold: false, reason: Some(reason), distance: None, epsilon_q: epsilon_q.clone() };
    let qr = int(q as i64);
    for (i, s) in pieces.iter().enumerate() {
        if s.diameter() * &qr > one() {
            return Ok(refuse(format!("piece {i} has diameter {} > 1/{q}", fmt_rational(&s.diameter()))));
        }
    }
    // pieces are disjoint, so each atom has at most one home
    let home = |x: &[Rational]| {
        if x.len() == 1 {
            // disjoint intervals sorted by left end: only the last one starting at or before x can hold it
            let k = order.partition_point(|&i| boxes[i].0[0] <= x[0]);
            return k.checked_sub(1).map(|k| order[k]).filter(|&i| x[0] <= boxes[i].1[0]);
        }
        pieces.iter().zip(&boxes).position(|(s, (lo, hi))| {
            x.iter().zip(lo.iter().zip(hi)).all(|(c, (a, b))| a <= c && c <= b) && s.contains_closed(x)
        })
    };
    let mut masses = [vec![zero(); pieces.len()], vec![zero(); pieces.len()]];
    for (slot, (name, m)) in [("μ", mu), ("ν", nu)].into_iter().enumerate() {
        for (p, w) in m.atoms() {
            match home(p.coords()) {
                Some(i) => masses[slot][i] += w,
                None => return Ok(refuse(format!("atom {p} of {name} outside the pieces"))),
            }
        }
    }
    let gap = rat(1, (q as i64) * pieces.len() as i64);
    for (i, (a, b)) in masses[0].iter().zip(&masses[1]).enumerate() {
        let diff = (a - b).abs();
        if diff > gap {
            return Ok(refuse(format!("piece {i} mass gap {} > {}", fmt_rational(&diff), fmt_rational(&gap))));
        }
    }
    let d = signature_distance(&basis.signature(mu), &basis.signature(nu));
    if d.hi >= epsilon_q {
        return Err(Error::Verification(format!("distance {d} not below ε({q}) = {}", fmt_rational(&epsilon_q))));
    }
    Ok(LemmaVerdict { hypotheses_hold: true, reason: None, distance: Some(d), epsilon_q })
}

/// Interval for a (directed) Hausdorff distance between finite measure sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HausdorffBound {
    #[serde(with = "serde_q")]
    pub lo: Rational,
    #[serde(with = "serde_q")]
    pub hi: Rational,
}

/// max_a min_b d(a,b), bounded from the metric intervals.
pub fn directed_hausdorff(a: &[Signature], b: &[Signature]) -> Result<HausdorffBound> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("Hausdorff distance of an empty set"));
    }
    let mut lo = zero();
    let mut hi = zero();
    for x in a {
        let ds: Vec<MetricResult> = b.iter().map(|y| signature_distance(x, y)).collect();
        let mlo = ds.iter().map(|d| d.lo.clone()).min().unwrap();
        let mhi = ds.iter().map(|d| d.hi.clone()).min().unwrap();
        lo = max_r(&lo, &mlo);
        hi = max_r(&hi, &mhi);
    }
    Ok(HausdorffBound { lo, hi })
}

pub fn measure_set_hausdorff(a: &[AtomicMeasure], b: &[AtomicMeasure], depth: usize) -> Result<HausdorffBound> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("Hausdorff distance of an empty set"));
    }
    let basis = TestFunctionFamily::new(a[0].dim())?.basis(depth);
    let sa: Vec<Signature> = a.iter().map(|m| basis.signature(m)).collect();
    let sb: Vec<Signature> = b.iter().map(|m| basis.signature(m)).collect();
    let ab = directed_hausdorff(&sa, &sb)?;
    let ba = directed_hausdorff(&sb, &sa)?;
    Ok(HausdorffBound { lo: max_r(&ab.lo, &ba.lo), hi: max_r(&ab.hi, &ba.hi) })
}

/// How orbits are iterated: exactly, or snapped to a dyadic grid once the
/// coordinates outgrow a bit budget (turning the orbit into a pseudo-orbit
/// whose step error is recorded).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrbitPolicy {
    Exact,
    Snap { max_bits: u64, grid_bits: u32 },
}

impl Default for OrbitPolicy {
    fn default() -> Self {
        OrbitPolicy::Snap { max_bits: 192, grid_bits: 64 }
    }
}

/// Orbit prefix with an exact cycle when one was detected.
#[derive(Clone, Debug)]
pub struct Orbit {
    pub points: Vec<Point>,
    /// Index where the cycle starts; the cycle is points[start..].
    pub cycle_start: Option<usize>,
    pub snap_error: Rational,
}

impl Orbit {
    /// Visit count of each stored point among the first `n` orbit points.
    pub fn counts(&self, n: usize) -> Vec<u64> {
        let mut c = vec![0u64; self.points.len()];
        match self.cycle_start {
            None => {
                for slot in c.iter_mut().take(n.min(self.points.len())) {
                    *slot = 1;
                }
            }
            Some(s) => {
                let pre = s.min(n);
                for slot in c.iter_mut().take(pre) {
                    *slot = 1;
                }
                if n > s {
                    let len = self.points.len() - s;
                    let rest = n - s;
                    let (full, extra) = (rest / len, rest % len);
                    for (k, slot) in c.iter_mut().skip(s).enumerate() {
                        *slot = full as u64 + u64::from(k < extra);
                    }
                }
            }
        }
        c
    }

    pub fn point_at(&self, t: usize) -> &Point {
        match self.cycle_start {
            Some(s) if t >= self.points.len() => {
                let len = self.points.len() - s;
                &self.points[s + (t - s) % len]
            }
            _ => &self.points[t],
        }
    }
}

pub fn step(map: &CompositeMap, x: &Point, policy: OrbitPolicy, snap_error: &mut Rational) -> Point {
    match policy {
        OrbitPolicy::Exact => map.eval(x),
        OrbitPolicy::Snap { max_bits, grid_bits } => {
            let (y, e) = map.apply_snapped(x.coords(), max_bits, grid_bits);
            if e > *snap_error {
                *snap_error = e;
            }
            Point::trusted(y)
        }
    }
}

/// First `n` orbit points (fewer when a cycle closes earlier).
pub fn trace_orbit(map: &CompositeMap, x: &Point, n: usize, policy: OrbitPolicy) -> Orbit {
    let mut points = vec![x.clone()];
    let mut seen: HashMap<Point, usize> = HashMap::new();
    seen.insert(x.clone(), 0);
    let mut snap_error = zero();
    while points.len() < n {
        let y = step(map, points.last().unwrap(), policy, &mut snap_error);
        if let Some(&j) = seen.get(&y) {
            return Orbit { points, cycle_start: Some(j), snap_error };
        }
        seen.insert(y.clone(), points.len());
        points.push(y);
    }
    Orbit { points, cycle_start: None, snap_error }
}

/// (1/n) Σ_{j<n} δ_{f^j x}, iterated exactly.
pub fn empirical_measure(map: &CompositeMap, x: &Point, n: usize) -> Result<AtomicMeasure> {
    empirical_measure_with(map, x, n, OrbitPolicy::Exact)
}

pub fn empirical_measure_with(map: &CompositeMap, x: &Point, n: usize, policy: OrbitPolicy) -> Result<AtomicMeasure> {
    if n == 0 {
        return Err(Error::invalid("empirical measure needs n ≥ 1"));
    }
    let orbit = trace_orbit(map, x, n, policy);
    Ok(orbit_measure(&orbit, n))
}

pub(crate) fn orbit_measure(orbit: &Orbit, n: usize) -> AtomicMeasure {
    let counts = orbit.counts(n);
    let nn = int(n as i64);
    let atoms = orbit
        .points
        .iter()
        .zip(counts)
        .filter(|(_, c)| *c > 0)
        .map(|(p, c)| (p.clone(), int(c as i64) / &nn))
        .collect();
    AtomicMeasure::new(atoms).expect("visit frequencies form a probability")
}

/// Signature of the empirical measure at time n from an orbit.
pub fn orbit_signature(basis: &Basis, orbit: &Orbit, n: usize) -> Signature {
    let counts = orbit.counts(n);
    let mut mass = basis.empty_mass();
    for (p, c) in orbit.points.iter().zip(counts) {
        if c > 0 {
            basis.add_point(&mut mass, p.coords(), &int(c as i64));
        }
    }
    basis.integrals(&mass, &int(n as i64))
}

/// Visit counts over the window [from, to) of orbit times.
fn window_counts(orbit: &Orbit, from: usize, to: usize) -> Vec<u64> {
    let hi = orbit.counts(to);
    let lo = orbit.counts(from);
    hi.into_iter().zip(lo).map(|(a, b)| a - b).collect()
}

/// Limit estimate of an orbit: the empirical measure of its second half,
/// times [n/2, n).
pub fn tail_measure(orbit: &Orbit, n: usize) -> AtomicMeasure {
    let from = n / 2;
    let counts = window_counts(orbit, from, n);
    let total = int((n - from) as i64);
    let atoms = orbit
        .points
        .iter()
        .zip(counts)
        .filter(|(_, c)| *c > 0)
        .map(|(p, c)| (p.clone(), int(c as i64) / &total))
        .collect();
    AtomicMeasure::new(atoms).expect("visit frequencies form a probability")
}

pub fn tail_signature(basis: &Basis, orbit: &Orbit, n: usize) -> Signature {
    let from = n / 2;
    let counts = window_counts(orbit, from, n);
    let mut mass = basis.empty_mass();
    for (p, c) in orbit.points.iter().zip(counts) {
        if c > 0 {
            basis.add_point(&mut mass, p.coords(), &int(c as i64));
        }
    }
    basis.integrals(&mass, &int((n - from) as i64))
}

#[derive(Clone, Debug)]
pub struct PomegaEstimate {
    pub candidates: Vec<AtomicMeasure>,
    pub candidate_times: Vec<usize>,
    pub dispersion: Rational,
    pub checkpoints: Vec<usize>,
    pub snap_error: Rational,
}

/// Limit-point estimate from the empirical measures at stride, 2·stride, …, horizon.
pub fn pomega_estimate(
    map: &CompositeMap,
    x: &Point,
    horizon: usize,
    stride: usize,
    depth: usize,
    policy: OrbitPolicy,
) -> Result<PomegaEstimate> {
    if stride == 0 || horizon < 2 * stride {
        return Err(Error::invalid("pω estimate needs horizon ≥ 2·stride > 0"));
    }
    let basis = TestFunctionFamily::new(x.dim())?.basis(depth);
    let orbit = trace_orbit(map, x, horizon, policy);
    let checkpoints: Vec<usize> = (1..=horizon / stride).map(|k| k * stride).collect();
    // late times: the second half of the checkpoints
    let late: Vec<usize> = checkpoints[checkpoints.len() / 2..].to_vec();
    let sigs: Vec<Signature> = late.iter().map(|&t| orbit_signature(&basis, &orbit, t)).collect();
    let mut dispersion = pow2_neg(depth as u32);
    for (i, a) in sigs.iter().enumerate() {
        for b in &sigs[i + 1..] {
            dispersion = max_r(&dispersion, &signature_distance(a, b).hi);
        }
    }
    let tol = pow2_neg(depth as u32) * int(2);
    let mut kept: Vec<usize> = Vec::new();
    for (k, s) in sigs.iter().enumerate() {
        if kept.iter().all(|&j| signature_distance(&sigs[j], s).lo > tol) {
            kept.push(k);
        }
    }
    let candidates = kept.iter().map(|&k| orbit_measure(&orbit, late[k])).collect();
    Ok(PomegaEstimate {
        candidates,
        candidate_times: kept.iter().map(|&k| late[k]).collect(),
        dispersion,
        checkpoints,
        snap_error: orbit.snap_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::preset;

    fn p(x: Rational) -> Point {
        Point::on_line(x).unwrap()
    }

    #[test]
    fn family_order_and_lipschitz() {
        let fam = TestFunctionFamily::new(1).unwrap();
        let x = [rat(1, 4)];
        assert_eq!(fam.function(1).eval(&x), zero());
        assert_eq!(fam.function(2).eval(&x), rat(1, 4));
        assert_eq!(fam.function(3).eval(&x), rat(3, 4));
        assert_eq!(fam.function(4).eval(&x), one());
        assert_eq!(fam.function(5).level(), 1);
        assert_eq!(fam.function(31).level(), 1);
        assert_eq!(fam.function(32).level(), 2);
        // (0, 1, 0) at level 1: a hat of height 1
        assert_eq!(fam.lipschitz(5 + 6), int(2));
        let fam2 = TestFunctionFamily::new(2).unwrap();
        assert_eq!(fam2.function(16).level(), 0);
        assert_eq!(fam2.function(17).level(), 1);
        assert_eq!(fam2.lipschitz(16), zero());
        assert_eq!(fam2.function(16).eval(&[rat(1, 3), rat(1, 5)]), one());
    }

    #[test]
    fn lemma_parameters() {
        let fam = TestFunctionFamily::new(1).unwrap();
        assert_eq!(approach_parameter_q(&rat(1, 4), &fam).unwrap(), 17);
        assert_eq!(approach_parameter_q(&rat(1, 8), &fam).unwrap(), 33);
        assert_eq!(approach_parameter_q(&rat(1, 16), &fam).unwrap(), 65);
        assert!(approach_parameter_q(&one(), &fam).unwrap() >= 5);
        let basis = fam.basis(DEFAULT_DEPTH);
        for e in [rat(1, 4), rat(1, 8), rat(1, 16)] {
            let q = approach_parameter_q(&e, &fam).unwrap();
            assert!(basis.epsilon_for_q(q) < e);
        }
    }

    #[test]
    fn identical_and_symmetric() {
        let mu = AtomicMeasure::uniform(&[p(rat(1, 3)), p(rat(5, 7))]).unwrap();
        let nu = AtomicMeasure::dirac(p(rat(1, 2)));
        let d = weakstar_distance(&mu, &mu, 12).unwrap();
        assert_eq!((d.lo, d.hi), (zero(), pow2_neg(12)));
        assert_eq!(weakstar_distance(&mu, &nu, 12).unwrap(), weakstar_distance(&nu, &mu, 12).unwrap());
    }

    #[test]
    fn empirical_examples() {
        let tent = preset("tent").unwrap();
        let e = empirical_measure(&tent, &p(rat(2, 5)), 2).unwrap();
        assert_eq!(e, AtomicMeasure::uniform(&[p(rat(2, 5)), p(rat(4, 5))]).unwrap());
        assert_eq!(empirical_measure(&tent, &p(zero()), 5).unwrap(), AtomicMeasure::dirac(p(zero())));
        let e = empirical_measure(&tent, &p(rat(1, 7)), 10).unwrap();
        assert_eq!(e.total(), one());
    }

    #[test]
    fn pomega_tent_period_two() {
        let tent = preset("tent").unwrap();
        let est = pomega_estimate(&tent, &p(rat(2, 5)), 1000, 100, 20, OrbitPolicy::Exact).unwrap();
        assert_eq!(est.candidates.len(), 1);
        assert_eq!(est.candidates[0], AtomicMeasure::uniform(&[p(rat(2, 5)), p(rat(4, 5))]).unwrap());
        assert_eq!(est.dispersion, pow2_neg(20));
    }

    #[test]
    fn lemma_check_examples() {
        let mu = AtomicMeasure::dirac(p(rat(1, 8)));
        let nu = AtomicMeasure::dirac(p(rat(3, 16)));
        let piece = Simplex::interval(rat(1, 16), rat(1, 4)).unwrap();
        let v = lemma_dist_check(&mu, &nu, &[piece], 4, 20).unwrap();
        assert!(v.hypotheses_hold);
        let big = Simplex::interval(zero(), rat(1, 2)).unwrap();
        assert!(!lemma_dist_check(&mu, &nu, &[big], 4, 20).unwrap().hypotheses_hold);
        let a = Simplex::interval(zero(), rat(1, 4)).unwrap();
        let b = Simplex::interval(rat(1, 4), rat(1, 2)).unwrap();
        assert!(lemma_dist_check(&mu, &nu, &[a, b], 4, 20).is_err());
    }

    #[test]
    fn measure_json_round_trip() {
        let mu = AtomicMeasure::uniform(&[p(rat(1, 3)), p(rat(2, 3)), p(rat(1, 3))]).unwrap();
        assert_eq!(mu.atoms()[0].1, rat(2, 3));
        let back = AtomicMeasure::from_doc(&mu.to_doc()).unwrap();
        assert_eq!(back, mu);
    }

    #[test]
    fn hausdorff_examples() {
        let d0 = AtomicMeasure::dirac(p(zero()));
        let d1 = AtomicMeasure::dirac(p(one()));
        let h = measure_set_hausdorff(&[d0.clone()], &[d0.clone()], 10).unwrap();
        assert_eq!((h.lo, h.hi), (zero(), pow2_neg(10)));
        let h = measure_set_hausdorff(&[d0.clone()], &[d0.clone(), d1.clone()], 10).unwrap();
        let d = weakstar_distance(&d0, &d1, 10).unwrap();
        assert_eq!((h.lo, h.hi), (d.lo, d.hi));
        assert!(measure_set_hausdorff(&[], &[d0], 10).is_err());
    }
}
