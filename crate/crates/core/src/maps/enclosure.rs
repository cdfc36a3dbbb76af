use std::collections::VecDeque;

use num_traits::Zero;
use serde::Serialize;

use super::{affine_layer_image, CompositeMap, Layer, RadialContractionLayer};
use crate::error::{Error, Result};
use crate::geometry::{dist_inf, lerp_from, Point, Polytope, Simplex, Vector};
use crate::numeric::{fmt_rational, max_r, min_r, one, pow, rat, zero, Rational};

/// Cells per enclosure before pieces are merged into their hull.
const MERGE_LIMIT: usize = 48;
const DEPTH_CAP: u32 = 9;

/// Outer enclosure of an image set, with inner witness points that are exact images.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Enclosure {
    pub pieces: Vec<Polytope>,
    pub witnesses: Vec<Point>,
}

impl Enclosure {
    pub fn single(p: Polytope) -> Self {
        Enclosure { pieces: vec![p], witnesses: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.pieces[0].dim()
    }

    /// Diameter of the union (max-norm, convex pieces).
    pub fn diameter(&self) -> Rational {
        let verts: Vec<&Vector> = self.pieces.iter().flat_map(|p| p.vertices()).collect();
        let mut best = zero();
        for (i, a) in verts.iter().enumerate() {
            for b in &verts[i + 1..] {
                best = max_r(&best, &dist_inf(a, b));
            }
        }
        best
    }

    pub fn hull(&self) -> Polytope {
        Polytope::hull(self.dim(), self.pieces.iter().flat_map(|p| p.vertices().iter().cloned()).collect())
    }

    pub fn contains(&self, x: &[Rational]) -> bool {
        self.pieces.iter().any(|p| p.contains(x))
    }

    pub fn dist_to(&self, x: &[Rational]) -> Rational {
        self.pieces.iter().map(|p| p.dist_to(x)).min().unwrap()
    }

    /// Positive barycentric margin when every piece lies in the interior of `s`.
    pub fn interior_margin_in(&self, s: &Simplex) -> Option<Rational> {
        let mut best: Option<Rational> = None;
        for p in &self.pieces {
            let m = p.interior_margin_in(s)?;
            best = Some(best.map_or(m.clone(), |b| min_r(&b, &m)));
        }
        best
    }

    pub fn intersects(&self, other: &Enclosure) -> bool {
        self.pieces.iter().any(|a| other.pieces.iter().any(|b| a.intersects(b)))
    }

    fn merged(mut self) -> Self {
        if self.dim() == 1 {
            // overlapping intervals collapse to their union
            let mut ivs: Vec<(Rational, Rational)> = self.pieces.iter().map(Polytope::range).collect();
            ivs.sort();
            let mut out: Vec<(Rational, Rational)> = Vec::new();
            for (a, b) in ivs {
                match out.last_mut() {
                    Some(last) if a <= last.1 => last.1 = max_r(&last.1, &b),
                    _ => out.push((a, b)),
                }
            }
            self.pieces = out.into_iter().map(|(a, b)| Polytope::interval(a, b)).collect();
        } else if self.pieces.len() > MERGE_LIMIT {
            self.pieces = vec![self.hull()];
        }
        self.witnesses.truncate(64);
        self
    }
}

fn radial_layer_image(layer: &RadialContractionLayer, p: &Polytope) -> (Vec<Vector>, bool) {
    let (lo, hi) = p.bbox();
    let mut pts = Vec::new();
    let mut covered = false;
    let mut exact = true;
    let mut touched = 0;
    for (chart, n) in layer.candidates(&lo, &hi) {
        let Some(q) = p.clip(chart.base()) else { continue };
        let svals: Vec<Rational> = q.vertices().iter().map(|v| chart.s_of(v)).collect();
        if svals.iter().all(|s| s == &one()) && chart.s_lower(q.vertices()) == one() {
            // q lies on the chart boundary, which h fixes
            pts.extend(q.vertices().iter().cloned());
            continue;
        }
        touched += 1;
        if q == *p {
            covered = true;
        }
        let s_hi = svals.into_iter().max().unwrap();
        let c = chart.centroid().coords();
        let s_lo = if chart.base().contains_closed(c) && q.contains(c) { zero() } else { chart.s_lower(q.vertices()) };
        let a = pow(&s_lo, n - 1);
        let b = pow(&s_hi, n - 1);
        // h(Q) = {c + t(x − c)} with t ∈ [a, b] lies in the hull of both scalings
        for v in q.vertices() {
            pts.push(lerp_from(c, v, &a));
            if b != a {
                pts.push(lerp_from(c, v, &b));
            }
        }
        let scaled_copy = s_lo.is_zero() && {
            let t = chart.base().scale(&s_hi).ok();
            t.map_or(false, |t| t.to_polytope() == q)
        };
        if !(scaled_copy || *n == 1 || (s_hi == one() && s_lo == one())) {
            exact = false;
        }
    }
    if !covered {
        // parts outside the charts are fixed
        pts.extend(p.vertices().iter().cloned());
        if touched > 0 {
            exact = false;
        }
    } else if touched > 1 {
        exact = false;
    }
    (pts, exact)
}

fn propagate(map: &CompositeMap, start: Polytope) -> (Polytope, bool) {
    let dim = start.dim();
    let mut p = start;
    let mut exact = true;
    for layer in map.layers() {
        let (pts, ex) = match layer {
            Layer::Affine(l) => affine_layer_image(l, &p),
            Layer::Radial(l) => radial_layer_image(l, &p),
        };
        exact &= ex;
        p = Polytope::hull(dim, pts);
    }
    (p, exact)
}

/// Exact image of an interval: monotone radial layers and breakpoint scans.
fn interval_image(map: &CompositeMap, lo: &Rational, hi: &Rational) -> (Rational, Rational) {
    let (mut a, mut b) = (lo.clone(), hi.clone());
    for layer in map.layers() {
        match layer {
            Layer::Radial(l) => {
                a = l.apply(&[a])[0].clone();
                b = l.apply(&[b])[0].clone();
            }
            Layer::Affine(l) => {
                let mut vals = vec![l.apply(&[a.clone()])[0].clone(), l.apply(&[b.clone()])[0].clone()];
                for piece in l.candidates(&[a.clone()], &[b.clone()]) {
                    for v in piece.domain().vertices() {
                        let x = v.x();
                        if x > &a && x < &b {
                            vals.push(piece.apply(v.coords())[0].clone());
                        }
                    }
                }
                a = vals.iter().min().unwrap().clone();
                b = vals.iter().max().unwrap().clone();
            }
        }
    }
    (a, b)
}

/// Outer enclosure of f(S) whose pieces are each within `tol` of f(S).
pub fn image_enclosure(map: &CompositeMap, s: &Simplex, tol: &Rational) -> Result<Enclosure> {
    image_of_polytope(map, &s.to_polytope(), tol)
}

pub fn image_of_polytope(map: &CompositeMap, p: &Polytope, tol: &Rational) -> Result<Enclosure> {
    if tol <= &zero() {
        return Err(Error::invalid("enclosure tolerance must be positive"));
    }
    if p.dim() == 1 {
        let (lo, hi) = p.range();
        let (a, b) = interval_image(map, &lo, &hi);
        let mid = (&lo + &hi) * rat(1, 2);
        let witnesses = [lo, mid, hi].iter().map(|x| Point::trusted(map.apply(&[x.clone()]))).collect();
        return Ok(Enclosure { pieces: vec![Polytope::interval(a, b)], witnesses });
    }
    let (img, exact) = propagate(map, p.clone());
    if exact || img.diameter() <= *tol {
        let witnesses = p.vertices().iter().map(|v| Point::trusted(map.apply(v))).collect();
        return Ok(Enclosure { pieces: vec![img], witnesses });
    }
    let mut queue: VecDeque<(Simplex, u32)> = p.simplexes().into_iter().map(|s| (s, 0)).collect();
    if queue.is_empty() {
        return Err(Error::Geometry(format!("cannot subdivide degenerate set of diameter {}", fmt_rational(&p.diameter()))));
    }
    let mut pieces = Vec::new();
    let mut witnesses = Vec::new();
    while let Some((cell, depth)) = queue.pop_front() {
        let (img, exact) = propagate(map, cell.to_polytope());
        if exact || img.diameter() <= *tol {
            witnesses.push(Point::trusted(map.apply(cell.centroid().coords())));
            pieces.push(img);
            continue;
        }
        if depth >= DEPTH_CAP {
            return Err(Error::NonConvergence { depth: DEPTH_CAP, best: fmt_rational(&img.diameter()) });
        }
        for child in cell.subdivide() {
            queue.push_back((child, depth + 1));
        }
    }
    Ok(Enclosure { pieces, witnesses }.merged())
}

/// Enclosure of the image of every piece of `e`.
pub(crate) fn push_forward(map: &CompositeMap, e: &Enclosure, tol: &Rational) -> Result<Enclosure> {
    let mut pieces = Vec::new();
    let mut witnesses = Vec::new();
    for p in &e.pieces {
        let img = if p.dim() == 2 && p.vertices().len() < 3 {
            // segments cannot be subdivided into triangles; the hull image is still sound
            let (img, _) = propagate(map, p.clone());
            Enclosure { pieces: vec![img], witnesses: vec![Point::trusted(map.apply(&p.vertices()[0]))] }
        } else {
            image_of_polytope(map, p, tol)?
        };
        pieces.extend(img.pieces);
        witnesses.extend(img.witnesses);
    }
    Ok(Enclosure { pieces, witnesses }.merged())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{RadialChart, Simplex};
    use crate::maps::{compose, preset, CompositeMap, RadialContractionLayer};

    #[test]
    fn identity_is_exact() {
        let id = CompositeMap::identity(crate::geometry::Domain::Interval);
        let s = Simplex::interval(rat(1, 8), rat(3, 8)).unwrap();
        let e = image_enclosure(&id, &s, &rat(1, 100)).unwrap();
        assert_eq!(e.pieces, vec![s.to_polytope()]);
    }

    #[test]
    fn tent_split_at_half() {
        let tent = preset("tent").unwrap();
        let s = Simplex::interval(rat(3, 8), rat(5, 8)).unwrap();
        let e = image_enclosure(&tent, &s, &rat(1, 100)).unwrap();
        assert_eq!(e.pieces, vec![Polytope::interval(rat(3, 4), one())]);
    }

    #[test]
    fn radial_interval_image() {
        let chart = RadialChart::new(Simplex::interval(zero(), one()).unwrap()).unwrap();
        let h = CompositeMap::radial(RadialContractionLayer::new(vec![(chart, 2)]).unwrap());
        let s = Simplex::interval(rat(1, 4), rat(3, 4)).unwrap();
        let e = image_enclosure(&h, &s, &rat(1, 100)).unwrap();
        assert_eq!(e.pieces, vec![Polytope::interval(rat(3, 8), rat(5, 8))]);
    }

    #[test]
    fn square_affine_image_exact() {
        let sq = preset("tent-square").unwrap();
        let s = Simplex::triangle((zero(), zero()), (rat(1, 4), zero()), (zero(), rat(1, 4))).unwrap();
        let e = image_enclosure(&sq, &s, &rat(1, 100)).unwrap();
        assert_eq!(e.pieces.len(), 1);
        assert_eq!(e.pieces[0].vertices().len(), 3);
        assert_eq!(e.diameter(), rat(1, 2));
    }

    #[test]
    fn square_radial_scaled_copy_exact() {
        let tri = Simplex::triangle((zero(), zero()), (rat(1, 2), zero()), (rat(1, 2), rat(1, 2))).unwrap();
        let chart = RadialChart::new(tri.clone()).unwrap();
        let h = CompositeMap::radial(RadialContractionLayer::new(vec![(chart, 3)]).unwrap());
        let small = tri.scale(&rat(1, 2)).unwrap();
        let e = image_enclosure(&h, &small, &rat(1, 1000)).unwrap();
        assert_eq!(e.pieces, vec![tri.scale(&rat(1, 8)).unwrap().to_polytope()]);
        let g = compose(&preset("tent-square").unwrap(), &h);
        let e = image_enclosure(&g, &small, &rat(1, 1000)).unwrap();
        assert_eq!(e.diameter(), rat(1, 8));
    }
}
