//! Certificates for periodic and eventually periodic shrinking sets, periodic
//! point witnesses, orbit mass profiles and the ψ-function test.

use num_traits::{Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{triangulate_mesh, Point, Polytope, Simplex, Vector};
use crate::maps::enclosure::push_forward;
use crate::maps::{image_enclosure, CompositeMap, Enclosure, Layer};
use crate::measures::{
    signature_distance, tail_measure, tail_signature, trace_orbit, AtomicMeasure, OrbitPolicy, Signature,
    TestFunctionFamily,
};
use crate::numeric::{fmt_rational, int, max_r, min_r, one, rat, serde_q, zero, Rational};
use crate::par;
use crate::sampling::{sample_point, MonteCarlo};

/// One iterate: an outer enclosure of f^j of the starting set, and the simplex
/// (if any) that was pushed forward to obtain the next enclosure.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Step {
    pub enclosure: Enclosure,
    pub via: Option<Simplex>,
    #[serde(with = "serde_q")]
    pub diameter: Rational,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ShrinkingCertificate {
    /// The certified set J (equal to `core` when the transience is 0).
    pub set: Simplex,
    /// Periodic core I.
    pub core: Simplex,
    pub period: usize,
    pub transience: usize,
    /// Enclosures of f^j(J̄), j = 1..=transience.
    pub entry: Vec<Step>,
    /// Enclosures of f^j(Ī), j = 1..=period.
    pub orbit: Vec<Step>,
    #[serde(with = "serde_q")]
    pub diameter: Rational,
    #[serde(with = "serde_q")]
    pub core_diameter: Rational,
    /// Barycentric margin of f^p(Ī) inside I.
    #[serde(with = "serde_q")]
    pub return_margin: Rational,
    /// Barycentric margin of f^n(J̄) inside I.
    #[serde(with = "serde_q::opt")]
    pub entry_margin: Option<Rational>,
    /// Bound on transience + period when the certificate comes from a construction.
    pub bound: Option<usize>,
}

impl ShrinkingCertificate {
    /// Closed sets f^j(Ī) (outer enclosures for j ≥ 1), j = 0..p−1.
    pub fn orbit_sets(&self) -> Vec<Enclosure> {
        let mut out = vec![Enclosure::single(self.core.to_polytope())];
        out.extend(self.orbit[..self.period - 1].iter().map(|s| s.enclosure.clone()));
        out
    }

    /// Enclosure of f^p(Ī).
    pub fn return_set(&self) -> &Enclosure {
        &self.orbit[self.period - 1].enclosure
    }

    pub fn in_orbit(&self, x: &[Rational]) -> Option<usize> {
        self.orbit_sets().iter().position(|e| e.contains(x))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Refusal {
    pub condition: String,
    pub step: usize,
    #[serde(with = "serde_q::opt")]
    pub deficit: Option<Rational>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Certification {
    Certified(Box<ShrinkingCertificate>),
    Refused(Refusal),
    Undecided { reason: String },
}

impl Certification {
    pub fn certificate(&self) -> Option<&ShrinkingCertificate> {
        match self {
            Certification::Certified(c) => Some(c),
            _ => None,
        }
    }

    pub fn into_certificate(self) -> Option<ShrinkingCertificate> {
        match self {
            Certification::Certified(c) => Some(*c),
            _ => None,
        }
    }
}

fn refuse(condition: &str, step: usize, deficit: Option<Rational>) -> Certification {
    Certification::Refused(Refusal { condition: condition.to_string(), step, deficit })
}

/// Enclosures of f^j(S̄) for j = 1..=count. When `guides[j−1]` is given it must
/// contain the enclosure of step j and is pushed forward instead of it.
pub fn orbit_steps(
    map: &CompositeMap,
    start: &Simplex,
    count: usize,
    guides: Option<&[Simplex]>,
    tol: &Rational,
) -> Result<Vec<Step>> {
    let mut steps: Vec<Step> = Vec::with_capacity(count);
    for j in 1..=count {
        let enclosure = match steps.last() {
            None => image_enclosure(map, start, tol)?,
            Some(prev) => match &prev.via {
                Some(s) => image_enclosure(map, s, tol)?,
                None => push_forward(map, &prev.enclosure, tol)?,
            },
        };
        let via = match guides.and_then(|g| g.get(j - 1)) {
            Some(s) if j < count => {
                if !enclosure.pieces.iter().all(|p| p.inside_closed(s)) {
                    return Err(Error::Verification(format!("enclosure of step {j} escapes its guide simplex {s}")));
                }
                Some(s.clone())
            }
            _ => None,
        };
        let diameter = enclosure.diameter();
        steps.push(Step { enclosure, via, diameter });
    }
    Ok(steps)
}

fn check_core(core: &Simplex, steps: &[Step]) -> std::result::Result<Rational, Certification> {
    let p = steps.len();
    let d0 = core.diameter();
    for (j, s) in steps.iter().enumerate().take(p - 1) {
        if s.diameter >= d0 {
            return Err(refuse("diameter decrease", j + 1, Some(&s.diameter - &d0)));
        }
    }
    let mut sets = vec![Enclosure::single(core.to_polytope())];
    sets.extend(steps[..p - 1].iter().map(|s| s.enclosure.clone()));
    for a in 0..sets.len() {
        for b in a + 1..sets.len() {
            if sets[a].intersects(&sets[b]) {
                return Err(refuse("pairwise disjointness", b, None));
            }
        }
    }
    match steps[p - 1].enclosure.interior_margin_in(core) {
        Some(m) => Ok(m),
        None => Err(refuse("return into the open core", p, None)),
    }
}

fn undecided_or(e: Error) -> Result<Certification> {
    match e {
        Error::NonConvergence { .. } => Ok(Certification::Undecided { reason: e.to_string() }),
        other => Err(other),
    }
}

/// Decides whether the interior of `core` is a periodic shrinking set of period p.
pub fn certify_periodic_shrinking(map: &CompositeMap, core: &Simplex, p: usize, tol: &Rational) -> Result<Certification> {
    certify_guided(map, core, core, 0, p, None, None, tol)
}

/// J eventually periodic: f^n(J̄) lands in the open core, which is periodic of period p.
pub fn certify_eventually_periodic(
    map: &CompositeMap,
    set: &Simplex,
    core: &Simplex,
    transience: usize,
    p: usize,
    tol: &Rational,
) -> Result<Certification> {
    certify_guided(map, set, core, transience, p, None, None, tol)
}

#[allow(clippy::too_many_arguments)]
pub fn certify_guided(
    map: &CompositeMap,
    set: &Simplex,
    core: &Simplex,
    transience: usize,
    p: usize,
    entry_guides: Option<&[Simplex]>,
    orbit_guides: Option<&[Simplex]>,
    tol: &Rational,
) -> Result<Certification> {
    if p == 0 {
        return Err(Error::invalid("period must be at least 1"));
    }
    if map.dim() != set.dim() || map.dim() != core.dim() {
        return Err(Error::invalid("map and sets live on different domains"));
    }
    if transience == 0 && set != core {
        return Err(Error::invalid("a periodic certificate needs set = core"));
    }
    let orbit = match orbit_steps(map, core, p, orbit_guides, tol) {
        Ok(s) => s,
        Err(e) => return undecided_or(e),
    };
    let return_margin = match check_core(core, &orbit) {
        Ok(m) => m,
        Err(c) => return Ok(c),
    };
    let mut entry = Vec::new();
    let mut entry_margin = None;
    if transience > 0 {
        entry = match orbit_steps(map, set, transience, entry_guides, tol) {
            Ok(s) => s,
            Err(e) => return undecided_or(e),
        };
        let d0 = set.diameter();
        for (j, s) in entry.iter().enumerate().take(transience - 1) {
            if s.diameter >= d0 {
                return Ok(refuse("transient diameter decrease", j + 1, Some(&s.diameter - &d0)));
            }
        }
        match entry[transience - 1].enclosure.interior_margin_in(core) {
            Some(m) => entry_margin = Some(m),
            None => return Ok(refuse("entry into the open core", transience, None)),
        }
    }
    Ok(Certification::Certified(Box::new(ShrinkingCertificate {
        set: set.clone(),
        core: core.clone(),
        period: p,
        transience,
        entry,
        orbit,
        diameter: set.diameter(),
        core_diameter: core.diameter(),
        return_margin,
        entry_margin,
        bound: None,
    })))
}

/// Recomputes every enclosure of a certificate from the map and rechecks all conditions.
pub fn verify_certificate(cert: &ShrinkingCertificate, map: &CompositeMap, tol: &Rational) -> Result<()> {
    let guides = |steps: &[Step]| -> Vec<Simplex> { steps.iter().filter_map(|s| s.via.clone()).collect() };
    let eg = guides(&cert.entry);
    let og = guides(&cert.orbit);
    let fresh = certify_guided(
        map,
        &cert.set,
        &cert.core,
        cert.transience,
        cert.period,
        (!eg.is_empty()).then_some(eg.as_slice()),
        (!og.is_empty()).then_some(og.as_slice()),
        tol,
    )?;
    match fresh {
        Certification::Certified(c) => {
            if c.entry != cert.entry || c.orbit != cert.orbit {
                return Err(Error::Verification("recomputed enclosures differ from the certificate".into()));
            }
            if let Some(l) = cert.bound {
                if cert.transience + cert.period > l {
                    return Err(Error::Verification(format!(
                        "transience {} + period {} exceeds the bound {l}",
                        cert.transience, cert.period
                    )));
                }
            }
            Ok(())
        }
        Certification::Refused(r) => Err(Error::Verification(format!("{} fails at step {}", r.condition, r.step))),
        Certification::Undecided { reason } => Err(Error::Verification(reason)),
    }
}

/// Counts orbit points f^j(x), x sampled in J̄, that escape the j-th enclosure.
pub fn soundness_violations(cert: &ShrinkingCertificate, map: &CompositeMap, points: &[Point]) -> usize {
    let mut bad = 0;
    for x in points {
        if !cert.set.contains_closed(x.coords()) {
            continue;
        }
        let mut y = x.clone();
        for s in &cert.entry {
            y = map.eval(&y);
            bad += usize::from(!s.enclosure.contains(y.coords()));
        }
        if cert.transience == 0 {
            for s in &cert.orbit {
                y = map.eval(&y);
                bad += usize::from(!s.enclosure.contains(y.coords()));
            }
        }
    }
    bad
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PeriodicWitness {
    pub point: Point,
    #[serde(with = "serde_q")]
    pub residual: Rational,
    pub iterations: usize,
    pub exact: bool,
    /// Residuals after each application of f^p.
    #[serde(with = "serde_q::vec")]
    pub history: Vec<Rational>,
}

/// Affine map x ↦ Ax + b of the composite near x, when every layer is affine.
fn local_affine(map: &CompositeMap, x: &[Rational]) -> Option<(Vec<Vector>, Vector)> {
    let m = x.len();
    let mut a: Vec<Vector> = (0..m).map(|i| (0..m).map(|j| if i == j { one() } else { zero() }).collect()).collect();
    let mut b: Vector = vec![zero(); m];
    let mut y = x.to_vec();
    for layer in map.layers() {
        let Layer::Affine(l) = layer else { return None };
        let piece = l.piece_at(&y);
        let pm = piece.matrix();
        let na: Vec<Vector> =
            (0..m).map(|i| (0..m).map(|j| (0..m).map(|k| &pm[i][k] * &a[k][j]).sum()).collect()).collect();
        let nb: Vector = piece.apply(&b);
        a = na;
        b = nb;
        y = piece.apply(&y);
    }
    Some((a, b))
}

/// Fixed point of f^p along the itinerary of x, when the local branch is affine.
fn affine_periodic_solve(map: &CompositeMap, x: &[Rational], p: usize) -> Option<Vector> {
    let m = x.len();
    let mut a: Vec<Vector> = (0..m).map(|i| (0..m).map(|j| if i == j { one() } else { zero() }).collect()).collect();
    let mut b: Vector = vec![zero(); m];
    let mut y = x.to_vec();
    for _ in 0..p {
        let (la, lb) = local_affine(map, &y)?;
        let na: Vec<Vector> =
            (0..m).map(|i| (0..m).map(|j| (0..m).map(|k| &la[i][k] * &a[k][j]).sum()).collect()).collect();
        let nb: Vector = (0..m).map(|i| (0..m).map(|k| &la[i][k] * &b[k]).sum::<Rational>() + &lb[i]).collect();
        a = na;
        b = nb;
        y = map.apply(&y);
    }
    // solve (A − I) z = −b
    let mut c = a;
    for (i, row) in c.iter_mut().enumerate() {
        row[i] -= one();
    }
    let z = match m {
        1 => {
            if c[0][0].is_zero() {
                return None;
            }
            vec![-&b[0] / &c[0][0]]
        }
        _ => {
            let det = &c[0][0] * &c[1][1] - &c[0][1] * &c[1][0];
            if det.is_zero() {
                return None;
            }
            let (r0, r1) = (-&b[0], -&b[1]);
            vec![(&r0 * &c[1][1] - &c[0][1] * &r1) / &det, (&c[0][0] * &r1 - &c[1][0] * &r0) / &det]
        }
    };
    Some(z)
}

/// A point of the core with f^p(x*) within `tol` of x*, from iterating f^p on the
/// core's centroid. Affine-only branches are then solved exactly.
pub fn periodic_point_witness(
    cert: &ShrinkingCertificate,
    map: &CompositeMap,
    tol: &Rational,
    budget: usize,
) -> Result<PeriodicWitness> {
    let p = cert.period;
    // f^p with snapping; the error bound is accumulated along the p steps
    let fp = |x: &Point| {
        let mut y = x.coords().to_vec();
        let mut err = zero();
        if let OrbitPolicy::Snap { max_bits, grid_bits } = OrbitPolicy::default() {
            for _ in 0..p {
                let (z, e) = map.apply_snapped(&y, max_bits, grid_bits);
                err = err * map.lipschitz() + e;
                y = z;
            }
        }
        (Point::trusted(y), err)
    };
    let exact_witness = |x: &Point| map.iterate(x, p) == *x;
    let mut x = cert.core.centroid().clone();
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let (y, err) = fp(&x);
        // upper bound on dist(x, f^p(x))
        let residual = x.dist(&y) + &err;
        history.push(residual.clone());
        if err.is_zero() && residual.is_zero() {
            return Ok(PeriodicWitness { point: x, residual, iterations, exact: true, history });
        }
        if let Some(z) = affine_periodic_solve(map, x.coords(), p) {
            if let Ok(zp) = Point::new(z) {
                if cert.core.contains_closed(zp.coords()) && exact_witness(&zp) {
                    history.push(zero());
                    return Ok(PeriodicWitness { point: zp, residual: zero(), iterations, exact: true, history });
                }
            }
        }
        if residual <= *tol || iterations >= budget {
            if residual > *tol {
                return Err(Error::Budget(format!(
                    "periodic witness residual {} after {budget} iterations",
                    fmt_rational(&residual)
                )));
            }
            return Ok(PeriodicWitness { point: x, residual, iterations, exact: false, history });
        }
        x = y;
        iterations += 1;
    }
}

/// Periodic orbit measure (1/p)Σδ_{f^j x}.
pub fn periodic_measure(map: &CompositeMap, x: &Point, p: usize) -> Result<AtomicMeasure> {
    if p == 0 {
        return Err(Error::invalid("period must be at least 1"));
    }
    AtomicMeasure::uniform(&map.evaluate(x, p - 1))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MassProfile {
    #[serde(with = "serde_q::vec")]
    pub masses: Vec<Rational>,
    #[serde(with = "serde_q")]
    pub total: Rational,
    pub invariant: bool,
}

/// μ(f^j(Ī)) for j = 0..p−1. For an exactly invariant μ with μ(K) = 1 every
/// mass must equal 1/p; a mismatch is a verification error.
pub fn orbit_measure_profile(
    cert: &ShrinkingCertificate,
    map: &CompositeMap,
    mu: &AtomicMeasure,
    require_full: bool,
) -> Result<MassProfile> {
    let sets = cert.orbit_sets();
    let masses: Vec<Rational> = sets.iter().map(|e| mu.mass_where(|p| e.contains(p.coords()))).collect();
    let total: Rational = masses.iter().cloned().sum();
    let invariant = mu.is_invariant(map);
    if require_full && total != one() {
        return Err(Error::invalid(format!("measure gives K mass {}", fmt_rational(&total))));
    }
    if invariant && total == one() {
        let expect = rat(1, cert.period as i64);
        if masses.iter().any(|m| *m != expect) {
            return Err(Error::Verification(format!(
                "invariant measure on K with unequal masses {:?}",
                masses.iter().map(fmt_rational).collect::<Vec<_>>()
            )));
        }
    }
    Ok(MassProfile { masses, total, invariant })
}

/// ψ(x) = dist(x, M∖I) / (dist(x, f^p(Ī)) + dist(x, M∖I)) against the certified
/// outer enclosure of f^p(Ī).
#[derive(Clone, Debug)]
pub struct Psi {
    core: Simplex,
    target: Enclosure,
}

impl Psi {
    pub fn new(cert: &ShrinkingCertificate) -> Self {
        Psi { core: cert.core.clone(), target: cert.return_set().clone() }
    }

    pub fn value(&self, x: &[Rational]) -> Rational {
        let dc = self.core.dist_to_complement(x);
        if dc.is_zero() {
            return zero();
        }
        let dt = self.target.dist_to(x);
        &dc / (dt + &dc)
    }

    /// 2 / dist(f^p(Ī) enclosure, M∖I).
    pub fn lipschitz_bound(&self) -> Rational {
        let gap = self
            .target
            .pieces
            .iter()
            .flat_map(|p| p.vertices().iter().map(|v| self.core.dist_to_complement(v)))
            .min()
            .unwrap();
        int(2) / gap
    }

    pub fn integrate(&self, mu: &AtomicMeasure) -> Rational {
        mu.integrate(|p| self.value(p.coords()))
    }
}

pub fn psi_value(cert: &ShrinkingCertificate, x: &Point) -> Rational {
    Psi::new(cert).value(x.coords())
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvexCombinationReport {
    #[serde(with = "serde_q")]
    pub lambda: Rational,
    pub period: usize,
    #[serde(with = "serde_q")]
    pub psi_integral: Rational,
    #[serde(with = "serde_q")]
    pub expected: Rational,
    pub identity_holds: bool,
    #[serde(with = "serde_q")]
    pub epsilon: Rational,
    pub samples: usize,
    pub hits: usize,
    /// Samples whose limit estimate has ψ-integral exactly 0 or 1/p.
    pub dichotomy: usize,
}

/// Half the smaller of λ·d and (1−λ)·d with d the lower metric bound between μ₁ and μ₂.
pub fn convex_threshold(mu1: &AtomicMeasure, mu2: &AtomicMeasure, lambda: &Rational, depth: usize) -> Result<Rational> {
    let d = crate::measures::weakstar_distance(mu1, mu2, depth)?;
    Ok(min_r(lambda, &(one() - lambda)) * d.lo * rat(1, 2))
}

/// Limit estimate of one sampled orbit: its tail signature and the ψ-integral
/// of its tail measure.
#[derive(Clone, Debug)]
pub struct SampleTail {
    pub signature: Signature,
    pub psi: Rational,
}

/// Traces every Monte Carlo sample once; the result can be reused for any ν.
pub fn sample_tails(cert: &ShrinkingCertificate, map: &CompositeMap, mc: &MonteCarlo) -> Result<Vec<SampleTail>> {
    let basis = TestFunctionFamily::new(map.dim())?.basis(mc.depth);
    let psi = Psi::new(cert);
    Ok(par::map_indexed(mc.samples, |i| {
        let x = sample_point(mc.seed, i as u64, map.dim());
        let orbit = trace_orbit(map, &x, mc.horizon, mc.policy);
        SampleTail {
            signature: tail_signature(&basis, &orbit, mc.horizon),
            psi: psi.integrate(&tail_measure(&orbit, mc.horizon)),
        }
    }))
}

/// Checks the hypotheses on (μ₁, μ₂), the exact identity ∫ψ dν = λ/p for
/// ν = λμ₁ + (1−λ)μ₂, and counts sampled limit estimates within ε of ν.
pub fn convex_combination_check(
    cert: &ShrinkingCertificate,
    map: &CompositeMap,
    mu1: &AtomicMeasure,
    mu2: &AtomicMeasure,
    lambda: &Rational,
    mc: &MonteCarlo,
    eps: &Rational,
) -> Result<ConvexCombinationReport> {
    let tails = sample_tails(cert, map, mc)?;
    convex_combination_from_tails(cert, map, mu1, mu2, lambda, &tails, mc.depth, eps)
}

#[allow(clippy::too_many_arguments)]
pub fn convex_combination_from_tails(
    cert: &ShrinkingCertificate,
    map: &CompositeMap,
    mu1: &AtomicMeasure,
    mu2: &AtomicMeasure,
    lambda: &Rational,
    tails: &[SampleTail],
    depth: usize,
    eps: &Rational,
) -> Result<ConvexCombinationReport> {
    if !lambda.is_positive() || lambda >= &one() {
        return Err(Error::invalid("λ must lie in (0,1)"));
    }
    let prof1 = orbit_measure_profile(cert, map, mu1, true)?;
    if !prof1.invariant {
        return Err(Error::invalid("μ₁ is not invariant"));
    }
    let prof2 = orbit_measure_profile(cert, map, mu2, false)?;
    if !prof2.invariant || !prof2.total.is_zero() {
        return Err(Error::invalid("μ₂ must be invariant with μ₂(K) = 0"));
    }
    let nu = AtomicMeasure::convex(lambda, mu1, mu2)?;
    let psi_integral = Psi::new(cert).integrate(&nu);
    let expected = lambda / int(cert.period as i64);
    let target = TestFunctionFamily::new(map.dim())?.basis(depth).signature(&nu);
    let p_inv = rat(1, cert.period as i64);
    Ok(ConvexCombinationReport {
        lambda: lambda.clone(),
        period: cert.period,
        identity_holds: psi_integral == expected,
        psi_integral,
        expected,
        epsilon: eps.clone(),
        samples: tails.len(),
        hits: tails.iter().filter(|t| signature_distance(&t.signature, &target).lo < *eps).count(),
        dichotomy: tails.iter().filter(|t| t.psi.is_zero() || t.psi == p_inv).count(),
    })
}

/// Candidate cores of diameter < 1/q around a point: the centered interval (1D)
/// or the mesh cell recentered at the point (2D).
fn cores_around(y: &Point, q: u64) -> Vec<Simplex> {
    let mut out = Vec::new();
    let r = rat(1, 2 * q as i64 + 2);
    if y.dim() == 1 {
        let lo = max_r(&zero(), &(y.x() - &r));
        let hi = min_r(&one(), &(y.x() + &r));
        if let Ok(s) = Simplex::interval_centered(lo, hi, y.x().clone()) {
            out.push(s);
        }
        return out;
    }
    if let Ok(t) = triangulate_mesh(crate::geometry::Domain::Square, &rat(1, q as i64)) {
        if let Some(i) = t.locate_interior(y.coords()) {
            if let Ok(s) = t.simplexes()[i].recenter(y.clone()) {
                out.push(s);
            }
        }
    }
    out
}

/// For each q, looks for a periodic shrinking set of diameter < 1/q holding the
/// orbit tail of x. Missing q values are simply absent from the result.
pub fn infinitely_shrinked_check(
    map: &CompositeMap,
    x: &Point,
    q_list: &[u64],
    max_period: usize,
    tol: &Rational,
) -> Result<Vec<(u64, ShrinkingCertificate)>> {
    const TAIL: usize = 256;
    let orbit = trace_orbit(map, x, TAIL, OrbitPolicy::default());
    let tail: Vec<Point> = (TAIL - max_period.max(1)..TAIL).map(|t| orbit.point_at(t).clone()).collect();
    let found = par::map_slice(q_list, |&q| -> Result<Option<ShrinkingCertificate>> {
        for y in &tail {
            for core in cores_around(y, q) {
                if core.diameter() * int(q as i64) >= one() {
                    continue;
                }
                for p in 1..=max_period {
                    if let Some(c) = certify_periodic_shrinking(map, &core, p, tol)?.into_certificate() {
                        return Ok(Some(c));
                    }
                }
            }
        }
        Ok(None)
    });
    let mut out = Vec::new();
    for (q, r) in q_list.iter().zip(found) {
        if let Some(c) = r? {
            out.push((*q, c));
        }
    }
    Ok(out)
}

/// Orbit of sets K as closed polytopes, for external re-verification.
pub fn orbit_of_sets(cert: &ShrinkingCertificate) -> Vec<Polytope> {
    cert.orbit_sets().iter().flat_map(|e| e.pieces.clone()).collect()
}
