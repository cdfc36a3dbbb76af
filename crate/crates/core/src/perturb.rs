//! The two genericity perturbations: radial contraction on every simplex of a
//! fine triangulation (sqk), and radial contraction on small balls around the
//! periodic orbits of a given period (pqr). Reports are only returned after
//! every claimed condition has been rechecked on the built map.

use num_traits::{Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{
    lebesgue_of_union, triangulate_grid, triangulate_mesh, Domain, Point, RadialChart, Simplex, Triangulation,
    TriangulationDoc,
};
use crate::maps::{
    c0_distance, compose, image_enclosure, CompositeMap, DistanceBound, DistanceMode, Layer, MapDoc,
    PiecewiseAffineLayer, RadialContractionLayer,
};
use crate::numeric::{fmt_rational, int, max_r, min_r, one, pow, pow2_neg, rat, serde_q, zero, Rational};
use crate::par;
use crate::shadowing::{enumerate_periodic_orbits, periodic_points, DEFAULT_BUDGET};
use crate::shrinking::{certify_guided, verify_certificate, Certification, ShrinkingCertificate};

const SCHEDULE: u32 = 48;

/// Radial contraction (s, θ) ↦ (sⁿ, θ) on every simplex about its centroid.
pub fn radial_homeomorphism(tri: &Triangulation, n: u32) -> Result<RadialContractionLayer> {
    let charts = tri
        .simplexes()
        .iter()
        .map(|s| Ok((RadialChart::new(s.clone())?, n)))
        .collect::<Result<Vec<_>>>()?;
    RadialContractionLayer::new(charts)
}

/// x ↦ min(x + t, 1) in every coordinate.
pub fn translation_layer(domain: Domain, t: &Rational) -> Result<PiecewiseAffineLayer> {
    if t.is_negative() || t >= &one() {
        return Err(Error::invalid("translation must lie in [0,1)"));
    }
    let f = |x: &Rational| min_r(&(x + t), &one());
    let mut cuts = vec![zero()];
    if t.is_positive() {
        cuts.push(one() - t);
    }
    cuts.push(one());
    let mut domains = Vec::new();
    let mut images = Vec::new();
    match domain {
        Domain::Interval => {
            for w in cuts.windows(2) {
                domains.push(Simplex::interval(w[0].clone(), w[1].clone())?);
                images.push(vec![vec![f(&w[0])], vec![f(&w[1])]]);
            }
        }
        Domain::Square => {
            for xs in cuts.windows(2) {
                for ys in cuts.windows(2) {
                    let (a, b) = ((xs[0].clone(), ys[0].clone()), (xs[1].clone(), ys[1].clone()));
                    for tri in [[a.clone(), (b.0.clone(), a.1.clone()), b.clone()], [a.clone(), b.clone(), (a.0.clone(), b.1.clone())]] {
                        images.push(tri.iter().map(|(x, y)| vec![f(x), f(y)]).collect());
                        let [p, q, r] = tri;
                        domains.push(Simplex::triangle(p, q, r)?);
                    }
                }
            }
        }
    }
    PiecewiseAffineLayer::from_images(domains, images)
}

#[derive(Clone, Debug, Serialize)]
pub struct SqkReport {
    pub g: MapDoc,
    pub triangulation: TriangulationDoc,
    /// "centroid" or "shifted" (interior points other than the centroid).
    pub centroid_convention: String,
    #[serde(with = "serde_q")]
    pub translation: Rational,
    #[serde(with = "serde_q")]
    pub lambda1: Rational,
    #[serde(with = "serde_q")]
    pub lambda2: Rational,
    pub exponent: u32,
    /// Index of the simplex whose scaled copy receives the image of simplex i.
    pub successor: Vec<usize>,
    pub certificates: Vec<ShrinkingCertificate>,
    #[serde(with = "serde_q")]
    pub covering_defect: Rational,
    pub distance: DistanceBound,
    pub homeo_distance: Option<DistanceBound>,
    pub bound: usize,
    #[serde(skip)]
    pub map: CompositeMap,
}

impl SqkReport {
    /// The scaled simplexes λ₁T_i that carry the certificates.
    pub fn shrinking_sets(&self) -> Vec<&Simplex> {
        self.certificates.iter().map(|c| &c.set).collect()
    }
}

/// Interior points of a simplex: its centroid, then points pulled toward each vertex.
fn centroid_candidates(s: &Simplex) -> Vec<Point> {
    let c = s.centroid().coords().to_vec();
    let mut out = vec![s.centroid().clone()];
    for j in 2..12u32 {
        let w = pow2_neg(j);
        for v in s.vertices() {
            let p: Vec<Rational> = c.iter().zip(v.coords()).map(|(ci, vi)| ci + &w * (vi - ci)).collect();
            out.push(Point::new(p).expect("inside the simplex"));
        }
    }
    out
}

struct Setup {
    tri: Triangulation,
    f1: CompositeMap,
    t: Rational,
    convention: &'static str,
    successor: Vec<usize>,
}

fn successors(f1: &CompositeMap, tri: &Triangulation) -> Option<Vec<usize>> {
    tri.simplexes().iter().map(|s| tri.locate_interior(f1.eval(s.centroid()).coords())).collect()
}

fn choose_setup(f: &CompositeMap, base: &Triangulation, eps: &Rational, homeo: bool) -> Result<Setup> {
    if !homeo {
        let mut ts = vec![zero()];
        ts.extend((0..12).map(|j| eps / int(24) * pow2_neg(j)));
        for t in ts {
            let f1 = if t.is_zero() {
                f.clone()
            } else {
                compose(&CompositeMap::affine(translation_layer(f.domain(), &t)?), f)
            };
            if let Some(successor) = successors(&f1, base) {
                return Ok(Setup { tri: base.clone(), f1, t, convention: "centroid", successor });
            }
        }
    }
    // per-simplex interior points whose image avoids the skeleton
    let centroids: Vec<Point> = base
        .simplexes()
        .iter()
        .map(|s| {
            centroid_candidates(s)
                .into_iter()
                .find(|c| base.locate_interior(f.eval(c).coords()).is_some())
                .ok_or_else(|| Error::construction("no interior point of a simplex maps off the skeleton"))
        })
        .collect::<Result<_>>()?;
    let convention = if centroids.iter().zip(base.simplexes()).all(|(c, s)| c == s.centroid()) { "centroid" } else { "shifted" };
    let tri = base.with_centroids(centroids)?;
    let successor = successors(f, &tri).ok_or_else(|| Error::construction("centroid image on the skeleton"))?;
    Ok(Setup { tri, f1: f.clone(), t: zero(), convention, successor })
}

/// Steps to reach the cycle and the cycle length, for each node of i ↦ succ[i].
fn itinerary_shape(succ: &[usize]) -> Vec<(usize, usize)> {
    let l = succ.len();
    (0..l)
        .map(|i| {
            let mut seen = vec![usize::MAX; l];
            let mut x = i;
            let mut t = 0;
            while seen[x] == usize::MAX {
                seen[x] = t;
                x = succ[x];
                t += 1;
            }
            (seen[x], t - seen[x])
        })
        .collect()
}

fn walk(succ: &[usize], i: usize, n: usize) -> usize {
    (0..n).fold(i, |x, _| succ[x])
}

/// Builds g = f₁ ∘ h with h the radial contraction of exponent n on a fine
/// triangulation, and certifies every λ₁T_i as a (eventually) periodic
/// shrinking set for g.
pub fn build_sqk_perturbation(f: &CompositeMap, q: u64, k: u64, eps: &Rational, homeo: bool) -> Result<SqkReport> {
    if q == 0 || k == 0 || !eps.is_positive() {
        return Err(Error::invalid("q, k ≥ 1 and ε > 0 required"));
    }
    if homeo && !f.is_invertible() {
        return Err(Error::NotInvertible("homeo mode needs an invertible map".into()));
    }
    let lip = max_r(f.lipschitz(), &one());
    let mesh_cap = min_r(&min_r(eps, &rat(1, q as i64)), &(eps / (int(3) * &lip)));
    let base = triangulate_mesh(f.domain(), &mesh_cap)?;
    let Setup { tri, f1, t, convention, successor } = choose_setup(f, &base, eps, homeo)?;
    let simplexes = tri.simplexes();
    let m = tri.dim() as u32;
    let tol = tri.mesh() / int(256);
    let inv_k = rat(1, k as i64);

    // λ₁ = 1 − 2^{−j}: covering defect and centroid images inside the scaled targets
    let lambda1 = (1..SCHEDULE)
        .map(|j| one() - pow2_neg(j))
        .find(|l1| {
            one() - pow(l1, m) < inv_k
                && simplexes.iter().zip(&successor).all(|(s, &j)| {
                    simplexes[j].scale(l1).is_ok_and(|t| t.contains_interior(f1.eval(s.centroid()).coords()))
                })
        })
        .ok_or_else(|| Error::construction("no λ₁ in the schedule meets the covering and centroid conditions"))?;
    let scaled1: Vec<Simplex> = simplexes.iter().map(|s| s.scale(&lambda1)).collect::<Result<_>>()?;
    let min_diam = scaled1.iter().map(Simplex::diameter).min().unwrap();

    // λ₂ = λ₁·2^{−j}: f₁(λ₂T̄_i) strictly inside λ₁T_{j(i)} and smaller than every λ₁T
    let lambda2 = (1..SCHEDULE)
        .map(|j| &lambda1 * pow2_neg(j))
        .find(|l2| {
            par::map_indexed(simplexes.len(), |i| -> bool {
                let Ok(s2) = simplexes[i].scale(l2) else { return false };
                let Ok(e) = image_enclosure(&f1, &s2, &tol) else { return false };
                e.interior_margin_in(&scaled1[successor[i]]).is_some() && e.diameter() < min_diam
            })
            .into_iter()
            .all(|ok| ok)
        })
        .ok_or_else(|| Error::construction("no λ₂ in the schedule maps into the successor simplexes"))?;

    // n minimal with λ₁ⁿ < λ₂: doubling then bisection
    let below = |n: u32| pow(&lambda1, n) < lambda2;
    let mut hi = 1u32;
    while !below(hi) {
        hi *= 2;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if below(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let exponent = hi;

    let h = radial_homeomorphism(&tri, exponent)?;
    let g = compose(&f1, &CompositeMap::radial(h));
    let l = simplexes.len();
    let shape = itinerary_shape(&successor);
    let certs = par::map_indexed(l, |i| -> Result<ShrinkingCertificate> {
        let (n, p) = shape[i];
        let core_idx = walk(&successor, i, n);
        let chain = |from: usize, len: usize| -> Vec<Simplex> {
            (1..len).map(|s| scaled1[walk(&successor, from, s)].clone()).collect()
        };
        let entry_guides = chain(i, n);
        let orbit_guides = chain(core_idx, p);
        let outcome = certify_guided(
            &g,
            &scaled1[i],
            &scaled1[core_idx],
            n,
            p,
            Some(&entry_guides),
            Some(&orbit_guides),
            &tol,
        )?;
        match outcome {
            Certification::Certified(c) => {
                let mut c = *c;
                c.bound = Some(l);
                Ok(c)
            }
            Certification::Refused(r) => Err(Error::construction(format!(
                "simplex {i}: {} fails at step {}",
                r.condition, r.step
            ))),
            Certification::Undecided { reason } => Err(Error::construction(format!("simplex {i}: {reason}"))),
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    // recheck everything on g
    for (i, c) in certs.iter().enumerate() {
        verify_certificate(c, &g, &tol)?;
        if &c.diameter * int(q as i64) >= one() {
            return Err(Error::Verification(format!("certificate {i} has diameter ≥ 1/q")));
        }
        if c.transience + c.period > l {
            return Err(Error::Verification(format!("certificate {i} exceeds the bound l = {l}")));
        }
    }
    let covered = lebesgue_of_union(&scaled1)?;
    let covering_defect = one() - covered;
    if covering_defect >= inv_k {
        return Err(Error::Verification(format!("covering defect {} ≥ 1/k", fmt_rational(&covering_defect))));
    }
    let dtol = eps / int(8);
    let distance = c0_distance(f, &g, DistanceMode::Map, &dtol)?;
    if distance.hi >= *eps {
        return Err(Error::Verification(format!("ρ(f,g) bound {} not below ε", fmt_rational(&distance.hi))));
    }
    let homeo_distance = if homeo {
        let d = c0_distance(f, &g, DistanceMode::Homeo, &dtol)?;
        if d.hi >= *eps {
            return Err(Error::Verification(format!("ρ_H(f,g) bound {} not below ε", fmt_rational(&d.hi))));
        }
        Some(d)
    } else {
        None
    };
    Ok(SqkReport {
        g: g.to_doc(),
        triangulation: tri.to_doc(),
        centroid_convention: convention.to_string(),
        translation: t,
        lambda1,
        lambda2,
        exponent,
        successor,
        certificates: certs,
        covering_defect,
        distance,
        homeo_distance,
        bound: l,
        map: g,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PqrReport {
    pub g: MapDoc,
    pub q_prime: u64,
    #[serde(with = "serde_q")]
    pub delta: Rational,
    /// One periodic point per grid cell meeting Per(f, r).
    pub representatives: Vec<Point>,
    /// Union of the orbits of the representatives.
    pub orbit_points: Vec<Point>,
    pub balls: Vec<Simplex>,
    #[serde(with = "serde_q")]
    pub eta: Rational,
    #[serde(with = "serde_q")]
    pub eta1: Rational,
    #[serde(with = "serde_q")]
    pub eta2: Rational,
    pub exponent: u32,
    pub certificates: Vec<ShrinkingCertificate>,
    /// Sampled periodic points of g with period dividing r and their distance
    /// to the nearest certified set.
    pub per_g: Vec<(Point, String)>,
    pub distance: DistanceBound,
    #[serde(skip)]
    pub map: CompositeMap,
}

fn ball(x: &Point, r: &Rational) -> Result<Simplex> {
    let lo = max_r(&zero(), &(x.x() - r));
    let hi = min_r(&one(), &(x.x() + r));
    Simplex::interval_centered(lo, hi, x.x().clone())
}

fn dist_to_interval(x: &Rational, s: &Simplex) -> Rational {
    let (lo, hi) = s.bbox();
    max_r(&zero(), &max_r(&(&lo[0] - x), &(x - &hi[0])))
}

/// Radial contraction on small balls around one periodic orbit per cell of
/// Per(f, r), certified as periodic shrinking sets of g = f ∘ h.
pub fn build_pqr_perturbation(f: &CompositeMap, q: u64, r: usize, eps: &Rational) -> Result<PqrReport> {
    if q == 0 || r == 0 || !eps.is_positive() {
        return Err(Error::invalid("q, r ≥ 1 and ε > 0 required"));
    }
    if f.dim() != 1 {
        return Err(Error::Unsupported("the pqr construction is implemented on the interval only".into()));
    }
    let lip = max_r(f.lipschitz(), &one());
    let cap = min_r(&rat(1, q as i64), &(eps / int(2)));
    let mut q_prime = 1u64;
    while rat(1, q_prime as i64) >= cap || &lip / int(q_prime as i64) >= *eps {
        q_prime *= 2;
    }
    let delta = rat(1, q_prime as i64);
    let per = periodic_points(f, r, DEFAULT_BUDGET)?;
    let orbits = enumerate_periodic_orbits(f, r, DEFAULT_BUDGET)?;

    // cells of width ≤ δ/3, shifted until no periodic point sits on a cell boundary
    let cells = 4 * q_prime;
    let grid = [zero(), rat(1, 3), rat(1, 5), rat(2, 7), rat(3, 11)]
        .iter()
        .map(|o| triangulate_grid(Domain::Interval, cells, o))
        .find(|g| g.as_ref().is_ok_and(|g| per.iter().all(|(x, _)| !g.on_skeleton(x.coords()))))
        .ok_or_else(|| Error::construction("every grid offset puts a periodic point on the skeleton"))??;
    let mut reps: Vec<Point> = Vec::new();
    let mut used = std::collections::BTreeSet::new();
    for (x, _) in &per {
        let cell = grid.locate_interior(x.coords()).expect("off the skeleton");
        if used.insert(cell) {
            reps.push(x.clone());
        }
    }
    let mut orbit_points: Vec<Point> = Vec::new();
    let mut chains: Vec<Vec<Point>> = Vec::new();
    for x in &reps {
        if orbit_points.contains(x) {
            continue;
        }
        let o = orbits.iter().find(|o| o.orbit.contains(x)).expect("every periodic point is on an enumerated orbit");
        let start = o.orbit.iter().position(|z| z == x).unwrap();
        let mut chain = o.orbit.clone();
        chain.rotate_left(start);
        for z in &chain {
            if !orbit_points.contains(z) {
                orbit_points.push(z.clone());
            }
        }
        chains.push(chain);
    }
    orbit_points.sort();

    // η = δ·2^{−j}/2 with pairwise separated balls and Lip·η < ε
    let eta = (0..SCHEDULE)
        .map(|j| &delta * pow2_neg(j) / int(2))
        .find(|eta| {
            &lip * eta < *eps && orbit_points.windows(2).all(|w| w[0].dist(&w[1]) > int(2) * eta)
        })
        .ok_or_else(|| Error::construction("no η separates the balls around F^r"))?;
    let balls: Vec<Simplex> = orbit_points.iter().map(|y| ball(y, &eta)).collect::<Result<_>>()?;
    let index_of = |y: &Point| orbit_points.iter().position(|z| z == y).unwrap();
    let sigma1 = rat(1, 2);
    let scaled1: Vec<Simplex> = balls.iter().map(|b| b.scale(&sigma1)).collect::<Result<_>>()?;
    let tol = &eta / int(256);
    let sigma2 = (1..SCHEDULE)
        .map(|j| &sigma1 * pow2_neg(j))
        .find(|s2| {
            orbit_points.iter().enumerate().all(|(i, y)| {
                let target = index_of(&f.eval(y));
                balls[i]
                    .scale(s2)
                    .and_then(|b| image_enclosure(f, &b, &tol))
                    .is_ok_and(|e| e.interior_margin_in(&scaled1[target]).is_some())
            })
        })
        .ok_or_else(|| Error::construction("no η₂ maps the inner balls into the next ball"))?;
    let mut exponent = 2u32;
    while pow(&sigma1, exponent) >= sigma2 {
        exponent += 1;
    }
    let charts = balls.iter().map(|b| Ok((RadialChart::new(b.clone())?, exponent))).collect::<Result<Vec<_>>>()?;
    let h = RadialContractionLayer::new(charts)?;
    let g = compose(f, &CompositeMap::radial(h));

    let mut certificates = Vec::new();
    for chain in &chains {
        let p = chain.len();
        if r % p != 0 {
            return Err(Error::Verification(format!("orbit period {p} does not divide {r}")));
        }
        let core = scaled1[index_of(&chain[0])].clone();
        let guides: Vec<Simplex> = chain[1..].iter().map(|y| scaled1[index_of(y)].clone()).collect();
        match certify_guided(&g, &core, &core, 0, p, None, Some(&guides), &tol)? {
            Certification::Certified(c) => {
                verify_certificate(&c, &g, &tol)?;
                certificates.push(*c);
            }
            other => {
                return Err(Error::Verification(format!("orbit of {} not certified: {other:?}", chain[0])));
            }
        }
    }
    let eta1 = &sigma1 * &eta;
    let eta2 = &sigma2 * &eta;

    let inv_q = rat(1, q as i64);
    let mut per_g = Vec::new();
    for (x, _) in periodic_points(&g, r, DEFAULT_BUDGET)? {
        let d = scaled1.iter().map(|s| dist_to_interval(x.x(), s)).min().unwrap_or_else(one);
        if d >= inv_q {
            return Err(Error::Verification(format!("periodic point {x} of g lies {} from every certified set", fmt_rational(&d))));
        }
        per_g.push((x, fmt_rational(&d)));
    }
    let distance = c0_distance(f, &g, DistanceMode::Map, &(eps / int(8)))?;
    if distance.hi >= *eps {
        return Err(Error::Verification(format!("ρ(f,g) bound {} not below ε", fmt_rational(&distance.hi))));
    }
    Ok(PqrReport {
        g: g.to_doc(),
        q_prime,
        delta,
        representatives: reps,
        orbit_points,
        balls,
        eta,
        eta1,
        eta2,
        exponent,
        certificates,
        per_g,
        distance,
        map: g,
    })
}

/// Layers of g other than the final radial contraction.
pub fn outer_layers(g: &CompositeMap) -> Vec<&Layer> {
    g.layers().iter().filter(|l| matches!(l, Layer::Affine(_))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::preset;

    #[test]
    fn radial_examples() {
        let tri = triangulate_grid(Domain::Interval, 1, &zero()).unwrap();
        let h = CompositeMap::radial(radial_homeomorphism(&tri, 2).unwrap());
        let p = |a, b| Point::on_line(rat(a, b)).unwrap();
        assert_eq!(h.eval(&p(3, 4)), p(5, 8));
        assert_eq!(h.eval(&p(0, 1)), p(0, 1));
        assert_eq!(h.eval(&p(1, 1)), p(1, 1));
        assert_eq!(h.eval(&p(1, 2)), p(1, 2));
        let id = CompositeMap::radial(radial_homeomorphism(&tri, 1).unwrap());
        assert_eq!(id.eval(&p(1, 3)), p(1, 3));
    }

    #[test]
    fn translation() {
        let t = CompositeMap::affine(translation_layer(Domain::Interval, &rat(1, 96)).unwrap());
        assert_eq!(t.eval(&Point::on_line(rat(1, 2)).unwrap()).x(), &(rat(1, 2) + rat(1, 96)));
        assert_eq!(t.eval(&Point::on_line(one()).unwrap()).x(), &one());
    }

    #[test]
    fn sqk_identity() {
        let id = preset("identity").unwrap();
        let rep = build_sqk_perturbation(&id, 4, 4, &rat(1, 2), false).unwrap();
        assert_eq!(rep.certificates.len(), 8);
        assert!(rep.certificates.iter().all(|c| c.period == 1 && c.transience == 0));
        assert_eq!((rep.lambda1.clone(), rep.lambda2.clone(), rep.exponent), (rat(7, 8), rat(7, 16), 7));
        assert_eq!(rep.covering_defect, rat(1, 8));
        assert!(rep.distance.hi < rat(1, 2));
        let h = build_sqk_perturbation(&id, 4, 4, &rat(1, 2), true).unwrap();
        assert!(h.homeo_distance.unwrap().hi < rat(1, 2));
    }

    #[test]
    fn sqk_tent() {
        let tent = preset("tent").unwrap();
        let rep = build_sqk_perturbation(&tent, 8, 8, &rat(1, 4), false).unwrap();
        assert_eq!(rep.translation, rat(1, 96));
        assert_eq!(rep.certificates.len(), 32);
        assert!(rep.certificates.iter().any(|c| c.transience > 0));
        assert!(rep.certificates.iter().all(|c| c.transience + c.period <= 32));
    }

    #[test]
    fn pqr_examples() {
        let tent = preset("tent").unwrap();
        let rep = build_pqr_perturbation(&tent, 4, 2, &rat(1, 4)).unwrap();
        let pts: Vec<Rational> = rep.orbit_points.iter().map(|p| p.x().clone()).collect();
        assert_eq!(pts, vec![zero(), rat(2, 5), rat(2, 3), rat(4, 5)]);
        let mut periods: Vec<usize> = rep.certificates.iter().map(|c| c.period).collect();
        periods.sort();
        assert_eq!(periods, vec![1, 1, 2]);
        let cd = preset("clamp-doubling").unwrap();
        let rep = build_pqr_perturbation(&cd, 4, 1, &rat(1, 4)).unwrap();
        assert!(rep.certificates.iter().any(|c| c.core.contains_interior(&[rat(1, 3)]) && c.period == 1));
    }
}
