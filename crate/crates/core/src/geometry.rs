//! Points, simplexes, triangulations and radial coordinates on [0,1] and [0,1]².
//!
//! Distances use the max-norm throughout so every quantity stays rational.
//! Interiors are taken relative to M: a facet lying on ∂M does not bound the
//! interior, which lets charts sit flush against the boundary of M.

use std::collections::BTreeSet;
use std::fmt;

use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{fmt_rational, int, max_r, min_r, one, rat, serde_q, zero, Rational};

pub type Vector = Vec<Rational>;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Point(Vector);

impl Point {
    pub fn new(coords: Vector) -> Result<Self> {
        if coords.is_empty() || coords.len() > 2 {
            return Err(Error::Geometry(format!("point dimension {} not in {{1,2}}", coords.len())));
        }
        for c in &coords {
            if c.is_negative() || c > &one() {
                return Err(Error::Geometry(format!("coordinate {} outside [0,1]", fmt_rational(c))));
            }
        }
        Ok(Point(coords))
    }

    pub fn on_line(x: Rational) -> Result<Self> {
        Point::new(vec![x])
    }

    pub fn on_square(x: Rational, y: Rational) -> Result<Self> {
        Point::new(vec![x, y])
    }

    /// Skips the [0,1] check; callers guarantee membership.
    pub(crate) fn trusted(coords: Vector) -> Self {
        debug_assert!(coords.iter().all(|c| !c.is_negative() && c <= &one()));
        Point(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[Rational] {
        &self.0
    }

    pub fn x(&self) -> &Rational {
        &self.0[0]
    }

    pub fn into_coords(self) -> Vector {
        self.0
    }

    pub fn dist(&self, other: &Point) -> Rational {
        dist_inf(&self.0, &other.0)
    }
}

impl TryFrom<Vec<String>> for Point {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        let coords = v.iter().map(|s| crate::numeric::parse_rational(s)).collect::<Result<Vec<_>>>()?;
        Point::new(coords)
    }
}

impl From<Point> for Vec<String> {
    fn from(p: Point) -> Self {
        p.0.iter().map(fmt_rational).collect()
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(fmt_rational).collect();
        write!(f, "({})", parts.join(", "))
    }
}

pub fn dist_inf(a: &[Rational], b: &[Rational]) -> Rational {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).max().unwrap_or_else(zero)
}

pub fn sub(a: &[Rational], b: &[Rational]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[Rational], b: &[Rational]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[Rational], t: &Rational) -> Vector {
    a.iter().map(|x| x * t).collect()
}

/// c + t·(v − c)
pub fn lerp_from(c: &[Rational], v: &[Rational], t: &Rational) -> Vector {
    c.iter().zip(v).map(|(ci, vi)| ci + t * (vi - ci)).collect()
}

fn in_unit_cube(v: &[Rational]) -> bool {
    v.iter().all(|c| !c.is_negative() && c <= &one())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Interval,
    Square,
}

impl Domain {
    pub fn dim(self) -> usize {
        match self {
            Domain::Interval => 1,
            Domain::Square => 2,
        }
    }

    pub fn from_dim(dim: usize) -> Result<Self> {
        match dim {
            1 => Ok(Domain::Interval),
            2 => Ok(Domain::Square),
            d => Err(Error::Geometry(format!("dimension {d} unsupported"))),
        }
    }
}

/// An m-simplex (m ∈ {1,2}) with a chosen centroid.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Simplex {
    vertices: Vec<Point>,
    centroid: Point,
    // inverse of the edge matrix [v1−v0 | v2−v0], row-major
    inv: Vec<Rational>,
    // facet i (opposite vertex i) lies on ∂M
    on_boundary: Vec<bool>,
}

impl Simplex {
    /// Simplex with the barycenter as centroid.
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        let dim = vertices.first().map(Point::dim).unwrap_or(0);
        let k = int(vertices.len() as i64);
        let mut c = vec![zero(); dim];
        for v in &vertices {
            for (ci, vi) in c.iter_mut().zip(v.coords()) {
                *ci += vi;
            }
        }
        let c = c.into_iter().map(|x| x / &k).collect();
        Self::build(vertices, Point::trusted(c))
    }

    /// Simplex with a prescribed centroid in its interior relative to M.
    pub fn with_centroid(vertices: Vec<Point>, centroid: Point) -> Result<Self> {
        let s = Self::build(vertices, centroid)?;
        if !s.contains_interior(s.centroid.coords()) {
            return Err(Error::Geometry(format!("centroid {} not interior", s.centroid)));
        }
        Ok(s)
    }

    pub fn interval(a: Rational, b: Rational) -> Result<Self> {
        Simplex::new(vec![Point::on_line(a)?, Point::on_line(b)?])
    }

    pub fn interval_centered(a: Rational, b: Rational, c: Rational) -> Result<Self> {
        Simplex::with_centroid(vec![Point::on_line(a)?, Point::on_line(b)?], Point::on_line(c)?)
    }

    pub fn triangle(a: (Rational, Rational), b: (Rational, Rational), c: (Rational, Rational)) -> Result<Self> {
        Simplex::new(vec![
            Point::on_square(a.0, a.1)?,
            Point::on_square(b.0, b.1)?,
            Point::on_square(c.0, c.1)?,
        ])
    }

    fn build(vertices: Vec<Point>, centroid: Point) -> Result<Self> {
        let m = centroid.dim();
        if vertices.len() != m + 1 || vertices.iter().any(|v| v.dim() != m) {
            return Err(Error::Geometry(format!("a {m}-simplex needs {} vertices of dimension {m}", m + 1)));
        }
        let v0 = vertices[0].coords();
        let edges: Vec<Vector> = vertices[1..].iter().map(|v| sub(v.coords(), v0)).collect();
        let inv = match m {
            1 => {
                if edges[0][0].is_zero() {
                    return Err(Error::Geometry("degenerate interval".into()));
                }
                vec![one() / &edges[0][0]]
            }
            2 => {
                // columns e1, e2
                let (a, b, c, d) = (&edges[0][0], &edges[1][0], &edges[0][1], &edges[1][1]);
                let det = a * d - b * c;
                if det.is_zero() {
                    return Err(Error::Geometry("degenerate triangle".into()));
                }
                vec![d / &det, -(b / &det), -(c / &det), a / &det]
            }
            _ => return Err(Error::Geometry(format!("dimension {m} unsupported"))),
        };
        let mut on_boundary = Vec::with_capacity(m + 1);
        for i in 0..=m {
            let facet: Vec<&Point> = vertices.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).collect();
            let flat = (0..m).any(|axis| {
                let val = &facet[0].coords()[axis];
                (val.is_zero() || val.is_one()) && facet.iter().all(|p| &p.coords()[axis] == val)
            });
            on_boundary.push(flat);
        }
        Ok(Simplex { vertices, centroid, inv, on_boundary })
    }

    pub fn dim(&self) -> usize {
        self.centroid.dim()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn centroid(&self) -> &Point {
        &self.centroid
    }

    /// Facet i (opposite vertex i) is contained in ∂M.
    pub fn facet_on_boundary(&self, i: usize) -> bool {
        self.on_boundary[i]
    }

    pub fn recenter(&self, centroid: Point) -> Result<Self> {
        Simplex::with_centroid(self.vertices.clone(), centroid)
    }

    pub fn barycentric(&self, x: &[Rational]) -> Vector {
        let d = sub(x, self.vertices[0].coords());
        match self.dim() {
            1 => {
                let b1 = &d[0] * &self.inv[0];
                vec![one() - &b1, b1]
            }
            _ => {
                let b1 = &self.inv[0] * &d[0] + &self.inv[1] * &d[1];
                let b2 = &self.inv[2] * &d[0] + &self.inv[3] * &d[1];
                vec![one() - &b1 - &b2, b1, b2]
            }
        }
    }

    pub fn from_barycentric(&self, beta: &[Rational]) -> Vector {
        let mut out = vec![zero(); self.dim()];
        for (b, v) in beta.iter().zip(&self.vertices) {
            for (o, c) in out.iter_mut().zip(v.coords()) {
                *o += b * c;
            }
        }
        out
    }

    pub fn contains_closed(&self, x: &[Rational]) -> bool {
        self.barycentric(x).iter().all(|b| !b.is_negative())
    }

    /// Interior relative to M.
    pub fn contains_interior(&self, x: &[Rational]) -> bool {
        self.interior_margin(x).map_or(false, |m| m.is_positive() || self.all_facets_on_boundary())
    }

    fn all_facets_on_boundary(&self) -> bool {
        self.on_boundary.iter().all(|b| *b)
    }

    /// Smallest barycentric coordinate over facets not on ∂M, when x is in the
    /// closed simplex. Positive exactly for points of the relative interior.
    pub fn interior_margin(&self, x: &[Rational]) -> Option<Rational> {
        let beta = self.barycentric(x);
        if beta.iter().any(|b| b.is_negative()) {
            return None;
        }
        let m = beta
            .iter()
            .zip(&self.on_boundary)
            .filter(|(_, on)| !**on)
            .map(|(b, _)| b.clone())
            .min();
        Some(m.unwrap_or_else(one))
    }

    pub fn diameter(&self) -> Rational {
        let mut best = zero();
        for (i, a) in self.vertices.iter().enumerate() {
            for b in &self.vertices[i + 1..] {
                best = max_r(&best, &a.dist(b));
            }
        }
        best
    }

    pub fn volume(&self) -> Rational {
        let v0 = self.vertices[0].coords();
        match self.dim() {
            1 => (&self.vertices[1].coords()[0] - &v0[0]).abs(),
            _ => {
                let e1 = sub(self.vertices[1].coords(), v0);
                let e2 = sub(self.vertices[2].coords(), v0);
                ((&e1[0] * &e2[1] - &e1[1] * &e2[0]) / int(2)).abs()
            }
        }
    }

    /// λ-scaling about the centroid: vertices c + λ(v − c).
    pub fn scale(&self, lambda: &Rational) -> Result<Simplex> {
        if !lambda.is_positive() {
            return Err(Error::Geometry(format!("scale {} not positive", fmt_rational(lambda))));
        }
        let c = self.centroid.coords();
        let mut verts = Vec::with_capacity(self.vertices.len());
        for v in &self.vertices {
            let w = lerp_from(c, v.coords(), lambda);
            if !in_unit_cube(&w) {
                return Err(Error::Geometry(format!("scale {} leaves M", fmt_rational(lambda))));
            }
            verts.push(Point::trusted(w));
        }
        Simplex::with_centroid(verts, self.centroid.clone())
    }

    pub fn bbox(&self) -> (Vector, Vector) {
        bbox_of(self.vertices.iter().map(|p| p.coords()))
    }

    /// Midpoint subdivision: 2 halves of an interval, 4 corner triangles of a triangle.
    pub fn subdivide(&self) -> Vec<Simplex> {
        let v: Vec<&[Rational]> = self.vertices.iter().map(|p| p.coords()).collect();
        let half = rat(1, 2);
        let mid = |a: &[Rational], b: &[Rational]| Point::trusted(lerp_from(a, b, &half));
        let mk = |pts: Vec<Point>| Simplex::new(pts).expect("subdivision of a valid simplex");
        match self.dim() {
            1 => {
                let m = mid(v[0], v[1]);
                vec![mk(vec![self.vertices[0].clone(), m.clone()]), mk(vec![m, self.vertices[1].clone()])]
            }
            _ => {
                let m01 = mid(v[0], v[1]);
                let m12 = mid(v[1], v[2]);
                let m02 = mid(v[0], v[2]);
                vec![
                    mk(vec![self.vertices[0].clone(), m01.clone(), m02.clone()]),
                    mk(vec![m01.clone(), self.vertices[1].clone(), m12.clone()]),
                    mk(vec![m02.clone(), m12.clone(), self.vertices[2].clone()]),
                    mk(vec![m01, m12, m02]),
                ]
            }
        }
    }

    /// Closed segments (or endpoints in 1D) of facets not on ∂M.
    pub fn inner_facets(&self) -> Vec<Vec<Vector>> {
        (0..self.vertices.len())
            .filter(|i| !self.on_boundary[*i])
            .map(|i| {
                self.vertices
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, v)| v.coords().to_vec())
                    .collect()
            })
            .collect()
    }

    /// Max-norm distance from x to M ∖ (interior of this simplex).
    pub fn dist_to_complement(&self, x: &[Rational]) -> Rational {
        if !self.contains_interior(x) {
            return zero();
        }
        self.inner_facets()
            .iter()
            .map(|f| if f.len() == 1 { dist_inf(x, &f[0]) } else { dist_to_segment(x, &f[0], &f[1]) })
            .min()
            .unwrap_or_else(one)
    }

    pub fn to_polytope(&self) -> Polytope {
        Polytope::hull(self.dim(), self.vertices.iter().map(|p| p.coords().to_vec()).collect())
    }

    /// Open interiors intersect.
    pub fn interiors_overlap(&self, other: &Simplex) -> bool {
        let a: Vec<Vector> = self.vertices.iter().map(|p| p.coords().to_vec()).collect();
        let b: Vec<Vector> = other.vertices.iter().map(|p| p.coords().to_vec()).collect();
        match self.dim() {
            1 => {
                let (alo, ahi) = (min_r(&a[0][0], &a[1][0]), max_r(&a[0][0], &a[1][0]));
                let (blo, bhi) = (min_r(&b[0][0], &b[1][0]), max_r(&b[0][0], &b[1][0]));
                alo < bhi && blo < ahi
            }
            _ => !separated(&a, &b, false),
        }
    }
}

impl fmt::Display for Simplex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.vertices.iter().map(|p| p.to_string()).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

#[derive(Serialize, Deserialize)]
struct SimplexDoc {
    vertices: Vec<Point>,
    centroid: Point,
}

impl Serialize for Simplex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SimplexDoc { vertices: self.vertices.clone(), centroid: self.centroid.clone() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Simplex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = SimplexDoc::deserialize(d)?;
        Simplex::with_centroid(doc.vertices, doc.centroid).map_err(serde::de::Error::custom)
    }
}

pub fn bbox_of<'a>(mut pts: impl Iterator<Item = &'a [Rational]>) -> (Vector, Vector) {
    let first = pts.next().expect("nonempty point set").to_vec();
    let (mut lo, mut hi) = (first.clone(), first);
    for p in pts {
        for k in 0..p.len() {
            if p[k] < lo[k] {
                lo[k] = p[k].clone();
            }
            if p[k] > hi[k] {
                hi[k] = p[k].clone();
            }
        }
    }
    (lo, hi)
}

fn dot(a: &[Rational], b: &[Rational]) -> Rational {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axes_of(poly: &[Vector]) -> Vec<Vector> {
    let n = poly.len();
    let mut axes = Vec::new();
    if n == 1 {
        return axes;
    }
    for i in 0..n {
        let a = &poly[i];
        let b = &poly[(i + 1) % n];
        let d = sub(b, a);
        if d.iter().all(Zero::is_zero) {
            continue;
        }
        axes.push(vec![-d[1].clone(), d[0].clone()]);
        if n == 2 {
            axes.push(d);
            break;
        }
    }
    axes
}

/// Separating-axis test for 2D convex polygons (vertex lists, any order for
/// n ≤ 2, convex order otherwise). `strict` asks for a gap between closed sets;
/// otherwise touching counts as separated (interiors disjoint).
fn separated(a: &[Vector], b: &[Vector], strict: bool) -> bool {
    let mut axes = axes_of(a);
    axes.extend(axes_of(b));
    axes.push(vec![one(), zero()]);
    axes.push(vec![zero(), one()]);
    for ax in &axes {
        let pa: Vec<Rational> = a.iter().map(|p| dot(p, ax)).collect();
        let pb: Vec<Rational> = b.iter().map(|p| dot(p, ax)).collect();
        let (amin, amax) = (pa.iter().min().unwrap(), pa.iter().max().unwrap());
        let (bmin, bmax) = (pb.iter().min().unwrap(), pb.iter().max().unwrap());
        let gap = if strict { amax < bmin || bmax < amin } else { amax <= bmin || bmax <= amin };
        if gap {
            return true;
        }
    }
    false
}

/// Max-norm distance from x to the closed segment [a,b] in the plane.
pub fn dist_to_segment(x: &[Rational], a: &[Rational], b: &[Rational]) -> Rational {
    if x.len() == 1 {
        let (lo, hi) = (min_r(&a[0], &b[0]), max_r(&a[0], &b[0]));
        return if x[0] < lo { &lo - &x[0] } else if x[0] > hi { &x[0] - &hi } else { zero() };
    }
    let d = sub(b, a);
    let r = sub(a, x);
    // g(t) = max_k |r_k + t d_k| is convex piecewise linear; its minimum sits at
    // an endpoint, a zero of one component, or a crossing |r_0+t d_0| = |r_1+t d_1|.
    let mut ts = vec![zero(), one()];
    for k in 0..2 {
        if !d[k].is_zero() {
            ts.push(-(&r[k] / &d[k]));
        }
    }
    for sign in [one(), -one()] {
        let den = &d[0] - &sign * &d[1];
        if !den.is_zero() {
            ts.push((&sign * &r[1] - &r[0]) / den);
        }
    }
    ts.into_iter()
        .filter(|t| !t.is_negative() && t <= &one())
        .map(|t| (&r[0] + &t * &d[0]).abs().max((&r[1] + &t * &d[1]).abs()))
        .min()
        .unwrap()
}

/// Convex hull of finitely many points; intervals in 1D, polygons in 2D.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Polytope {
    dim: usize,
    verts: Vec<Vector>,
}

impl Polytope {
    pub fn hull(dim: usize, pts: Vec<Vector>) -> Polytope {
        assert!(!pts.is_empty(), "hull of empty set");
        if dim == 1 {
            let lo = pts.iter().map(|p| p[0].clone()).min().unwrap();
            let hi = pts.iter().map(|p| p[0].clone()).max().unwrap();
            let verts = if lo == hi { vec![vec![lo]] } else { vec![vec![lo], vec![hi]] };
            return Polytope { dim, verts };
        }
        let mut pts = pts;
        pts.sort();
        pts.dedup();
        if pts.len() <= 2 {
            return Polytope { dim, verts: pts };
        }
        let cross = |o: &Vector, a: &Vector, b: &Vector| {
            (&a[0] - &o[0]) * (&b[1] - &o[1]) - (&a[1] - &o[1]) * (&b[0] - &o[0])
        };
        let mut lower: Vec<Vector> = Vec::new();
        for p in &pts {
            while lower.len() >= 2 && !cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p).is_positive() {
                lower.pop();
            }
            lower.push(p.clone());
        }
        let mut upper: Vec<Vector> = Vec::new();
        for p in pts.iter().rev() {
            while upper.len() >= 2 && !cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p).is_positive() {
                upper.pop();
            }
            upper.push(p.clone());
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        if lower.len() < 2 {
            // all points collinear: keep the two extremes
            lower = vec![pts[0].clone(), pts[pts.len() - 1].clone()];
        }
        Polytope { dim, verts: lower }
    }

    pub fn interval(lo: Rational, hi: Rational) -> Polytope {
        Polytope::hull(1, vec![vec![lo], vec![hi]])
    }

    pub fn point(x: Vector) -> Polytope {
        let dim = x.len();
        Polytope { dim, verts: vec![x] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[Vector] {
        &self.verts
    }

    /// (lo, hi) of a 1D polytope.
    pub fn range(&self) -> (Rational, Rational) {
        let lo = self.verts.iter().map(|p| p[0].clone()).min().unwrap();
        let hi = self.verts.iter().map(|p| p[0].clone()).max().unwrap();
        (lo, hi)
    }

    pub fn diameter(&self) -> Rational {
        let mut best = zero();
        for (i, a) in self.verts.iter().enumerate() {
            for b in &self.verts[i + 1..] {
                best = max_r(&best, &dist_inf(a, b));
            }
        }
        best
    }

    pub fn bbox(&self) -> (Vector, Vector) {
        bbox_of(self.verts.iter().map(|v| v.as_slice()))
    }

    pub fn contains(&self, x: &[Rational]) -> bool {
        self.dist_to(x).is_zero()
    }

    /// Max-norm distance from x to the polytope.
    pub fn dist_to(&self, x: &[Rational]) -> Rational {
        if self.dim == 1 {
            let (lo, hi) = self.range();
            return dist_to_segment(x, &[lo], &[hi]);
        }
        let n = self.verts.len();
        if n == 1 {
            return dist_inf(x, &self.verts[0]);
        }
        if n == 2 {
            return dist_to_segment(x, &self.verts[0], &self.verts[1]);
        }
        let inside = (0..n).all(|i| {
            let a = &self.verts[i];
            let b = &self.verts[(i + 1) % n];
            let cr = (&b[0] - &a[0]) * (&x[1] - &a[1]) - (&b[1] - &a[1]) * (&x[0] - &a[0]);
            !cr.is_negative()
        });
        if inside {
            return zero();
        }
        (0..n).map(|i| dist_to_segment(x, &self.verts[i], &self.verts[(i + 1) % n])).min().unwrap()
    }

    /// Closed sets intersect.
    pub fn intersects(&self, other: &Polytope) -> bool {
        if self.dim == 1 {
            let (alo, ahi) = self.range();
            let (blo, bhi) = other.range();
            return alo <= bhi && blo <= ahi;
        }
        !separated(&self.verts, &other.verts, true)
    }

    /// Smallest positive margin by which the polytope sits inside the interior
    /// of `s` (relative to M), or None if it does not.
    pub fn interior_margin_in(&self, s: &Simplex) -> Option<Rational> {
        let mut best: Option<Rational> = None;
        for v in &self.verts {
            let m = s.interior_margin(v)?;
            if !m.is_positive() && !s.all_facets_on_boundary() {
                return None;
            }
            best = Some(match best {
                Some(b) => min_r(&b, &m),
                None => m,
            });
        }
        best
    }

    pub fn inside_interior_of(&self, s: &Simplex) -> bool {
        self.interior_margin_in(s).is_some()
    }

    pub fn inside_closed(&self, s: &Simplex) -> bool {
        self.verts.iter().all(|v| s.contains_closed(v))
    }

    /// Intersection with a closed simplex.
    pub fn clip(&self, s: &Simplex) -> Option<Polytope> {
        if self.dim == 1 {
            let (lo, hi) = self.range();
            let (slo, shi) = s.bbox();
            let a = max_r(&lo, &slo[0]);
            let b = min_r(&hi, &shi[0]);
            return if a <= b { Some(Polytope::interval(a, b)) } else { None };
        }
        let mut poly = self.verts.clone();
        for i in 0..3 {
            if poly.is_empty() {
                return None;
            }
            let f = |p: &Vector| s.barycentric(p)[i].clone();
            let n = poly.len();
            let mut out = Vec::new();
            for k in 0..n {
                let a = &poly[k];
                let b = &poly[(k + 1) % n];
                let (fa, fb) = (f(a), f(b));
                if !fa.is_negative() {
                    out.push(a.clone());
                }
                if (fa.is_negative() && fb.is_positive()) || (fa.is_positive() && fb.is_negative()) {
                    let t = &fa / (&fa - &fb);
                    out.push(lerp_from(a, b, &t));
                }
                if n == 1 {
                    break;
                }
            }
            poly = out;
        }
        if poly.is_empty() {
            None
        } else {
            Some(Polytope::hull(2, poly))
        }
    }

    /// Fan triangulation into vertex lists (segments or points when degenerate).
    pub fn pieces(&self) -> Vec<Vec<Vector>> {
        if self.dim == 1 || self.verts.len() <= 3 {
            return vec![self.verts.clone()];
        }
        (1..self.verts.len() - 1)
            .map(|i| vec![self.verts[0].clone(), self.verts[i].clone(), self.verts[i + 1].clone()])
            .collect()
    }

    /// Split into simplexes for further subdivision; degenerate pieces yield none.
    pub fn simplexes(&self) -> Vec<Simplex> {
        self.pieces()
            .into_iter()
            .filter_map(|vs| Simplex::new(vs.into_iter().map(Point::trusted).collect()).ok())
            .collect()
    }
}

#[derive(Serialize)]
pub struct PolytopeDoc {
    pub vertices: Vec<Vec<String>>,
}

impl Serialize for Polytope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PolytopeDoc { vertices: self.verts.iter().map(|v| v.iter().map(fmt_rational).collect()).collect() }
            .serialize(s)
    }
}

/// Direction on a radial chart: the facet hit by the ray from the centroid and
/// barycentric coordinates of the hit point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Direction {
    pub facet: usize,
    pub boundary: Vector,
}

/// Normalized radial coordinates s ∈ [0,1] about the centroid of a simplex.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RadialChart {
    base: Simplex,
    centroid_bary: Vector,
    // coefficient vectors of the affine functions ℓ_i(x) = 1 − β_i(x)/β_i(c)
    lipschitz_s: Rational,
    reach: Rational,
}

impl RadialChart {
    pub fn new(base: Simplex) -> Result<Self> {
        let c = base.centroid().coords().to_vec();
        let cb = base.barycentric(&c);
        for (i, b) in cb.iter().enumerate() {
            if b.is_negative() || (b.is_zero() && !base.facet_on_boundary(i)) {
                return Err(Error::Geometry(format!("centroid {} not interior to chart {}", base.centroid(), base)));
            }
        }
        // Lipschitz constant of s in max-norm: max over active facets of the ℓ1
        // norm of the gradient of β_i / β_i(c).
        let mut lip = zero();
        let m = base.dim();
        let zero_v = vec![zero(); m];
        let b0 = base.barycentric(&zero_v);
        for (i, bc) in cb.iter().enumerate() {
            if bc.is_zero() {
                continue;
            }
            let mut norm = zero();
            for k in 0..m {
                let mut e = zero_v.clone();
                e[k] = one();
                let g = &base.barycentric(&e)[i] - &b0[i];
                norm += g.abs();
            }
            lip = max_r(&lip, &(norm / bc));
        }
        let reach = base.vertices().iter().map(|v| dist_inf(v.coords(), &c)).max().unwrap();
        Ok(RadialChart { base, centroid_bary: cb, lipschitz_s: lip, reach })
    }

    pub fn base(&self) -> &Simplex {
        &self.base
    }

    pub fn centroid(&self) -> &Point {
        self.base.centroid()
    }

    /// Lipschitz constant of x ↦ s(x).
    pub fn lipschitz_s(&self) -> &Rational {
        &self.lipschitz_s
    }

    /// max ‖v − c‖ over vertices.
    pub fn reach(&self) -> &Rational {
        &self.reach
    }

    /// s(x) for x in the closed simplex (caller checks membership).
    pub fn s_of(&self, x: &[Rational]) -> Rational {
        let beta = self.base.barycentric(x);
        self.s_from_bary(&beta).0
    }

    fn s_from_bary(&self, beta: &[Rational]) -> (Rational, usize) {
        let mut best: Option<(Rational, usize)> = None;
        for (i, (b, bc)) in beta.iter().zip(&self.centroid_bary).enumerate() {
            if bc.is_zero() {
                continue;
            }
            let v = one() - b / bc;
            if best.as_ref().map_or(true, |(s, _)| v > *s) {
                best = Some((v, i));
            }
        }
        let (s, i) = best.expect("some facet avoids the centroid");
        (if s.is_negative() { zero() } else { s }, i)
    }

    /// Lower bound for s over a convex set given by its vertices: at least the
    /// largest per-facet minimum of the affine functions ℓ_i.
    pub fn s_lower(&self, verts: &[Vector]) -> Rational {
        let mut best = zero();
        for (i, bc) in self.centroid_bary.iter().enumerate() {
            if bc.is_zero() {
                continue;
            }
            let m = verts.iter().map(|v| one() - &self.base.barycentric(v)[i] / bc).min().unwrap();
            best = max_r(&best, &m);
        }
        best
    }

    pub fn radial_coordinates(&self, x: &Point) -> Result<(Rational, Option<Direction>)> {
        if !self.base.contains_closed(x.coords()) {
            return Err(Error::Geometry(format!("{x} outside chart {}", self.base)));
        }
        let beta = self.base.barycentric(x.coords());
        let (s, facet) = self.s_from_bary(&beta);
        if s.is_zero() {
            return Ok((s, None));
        }
        let b: Vector = beta.iter().zip(&self.centroid_bary).map(|(bx, bc)| bc + (bx - bc) / &s).collect();
        Ok((s, Some(Direction { facet, boundary: b })))
    }

    pub fn from_radial(&self, s: &Rational, theta: Option<&Direction>) -> Result<Point> {
        let c = self.centroid().coords();
        match theta {
            None => {
                if s.is_zero() {
                    Ok(self.centroid().clone())
                } else {
                    Err(Error::Geometry("direction required for s > 0".into()))
                }
            }
            Some(dir) => {
                let b = self.base.from_barycentric(&dir.boundary);
                Point::new(lerp_from(c, &b, s))
            }
        }
    }
}

/// A finite triangulation of M.
#[derive(Clone, Debug)]
pub struct Triangulation {
    domain: Domain,
    simplexes: Vec<Simplex>,
    mesh: Rational,
}

impl Triangulation {
    pub fn new(domain: Domain, simplexes: Vec<Simplex>) -> Result<Self> {
        if simplexes.is_empty() || simplexes.iter().any(|s| s.dim() != domain.dim()) {
            return Err(Error::Geometry("triangulation needs simplexes of the domain dimension".into()));
        }
        let total = lebesgue_of_union(&simplexes)?;
        if total != one() {
            return Err(Error::Geometry(format!("simplexes cover volume {}", fmt_rational(&total))));
        }
        let mesh = simplexes.iter().map(Simplex::diameter).max().unwrap();
        Ok(Triangulation { domain, simplexes, mesh })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn simplexes(&self) -> &[Simplex] {
        &self.simplexes
    }

    pub fn mesh(&self) -> &Rational {
        &self.mesh
    }

    pub fn len(&self) -> usize {
        self.simplexes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.simplexes.is_empty()
    }

    pub fn with_centroids(&self, centroids: Vec<Point>) -> Result<Triangulation> {
        if centroids.len() != self.simplexes.len() {
            return Err(Error::Geometry("one centroid per simplex required".into()));
        }
        let simplexes = self.simplexes.iter().zip(centroids).map(|(s, c)| s.recenter(c)).collect::<Result<_>>()?;
        Ok(Triangulation { domain: self.domain, simplexes, mesh: self.mesh.clone() })
    }

    /// Point lies on the skeleton: in some closed simplex but in no relative interior.
    pub fn on_skeleton(&self, x: &[Rational]) -> bool {
        !self.simplexes.iter().any(|s| s.contains_interior(x))
    }

    /// Index of the simplex whose relative interior holds x.
    pub fn locate_interior(&self, x: &[Rational]) -> Option<usize> {
        self.simplexes.iter().position(|s| s.contains_interior(x))
    }

    pub fn to_doc(&self) -> TriangulationDoc {
        TriangulationDoc {
            dimension: self.dim(),
            simplexes: self
                .simplexes
                .iter()
                .map(|s| s.vertices().iter().map(|v| v.coords().iter().map(fmt_rational).collect()).collect())
                .collect(),
            centroids: self.simplexes.iter().map(|s| s.centroid().coords().iter().map(fmt_rational).collect()).collect(),
            mesh: self.mesh.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TriangulationDoc {
    pub dimension: usize,
    pub simplexes: Vec<Vec<Vec<String>>>,
    pub centroids: Vec<Vec<String>>,
    #[serde(with = "serde_q")]
    pub mesh: Rational,
}

/// Breakpoints 0 < o + k/n < 1 together with the endpoints.
fn axis_breaks(n: u64, offset: &Rational) -> Vec<Rational> {
    let mut set = BTreeSet::new();
    set.insert(zero());
    set.insert(one());
    let step = rat(1, n as i64);
    let mut k = -1i64;
    loop {
        let b = offset + &step * int(k);
        if b >= one() {
            break;
        }
        if b.is_positive() {
            set.insert(b);
        }
        k += 1;
    }
    set.into_iter().collect()
}

/// Uniform grid with `n` cells per side, shifted by `offset` (a fraction of a cell).
pub fn triangulate_grid(domain: Domain, n: u64, offset: &Rational) -> Result<Triangulation> {
    if n == 0 {
        return Err(Error::Geometry("grid needs at least one cell".into()));
    }
    let breaks = axis_breaks(n, offset);
    let mut simplexes = Vec::new();
    match domain {
        Domain::Interval => {
            for w in breaks.windows(2) {
                simplexes.push(Simplex::interval(w[0].clone(), w[1].clone())?);
            }
        }
        Domain::Square => {
            for xs in breaks.windows(2) {
                for ys in breaks.windows(2) {
                    let (xa, xb, ya, yb) = (&xs[0], &xs[1], &ys[0], &ys[1]);
                    simplexes.push(Simplex::triangle(
                        (xa.clone(), ya.clone()),
                        (xb.clone(), ya.clone()),
                        (xb.clone(), yb.clone()),
                    )?);
                    simplexes.push(Simplex::triangle(
                        (xa.clone(), ya.clone()),
                        (xb.clone(), yb.clone()),
                        (xa.clone(), yb.clone()),
                    )?);
                }
            }
        }
    }
    Triangulation::new(domain, simplexes)
}

/// Power-of-two grid: the coarsest 2^j cells per side with mesh < max_diam.
pub fn triangulate_mesh(domain: Domain, max_diam: &Rational) -> Result<Triangulation> {
    if !max_diam.is_positive() {
        return Err(Error::Geometry(format!("max_diam {} must be positive", fmt_rational(max_diam))));
    }
    triangulate_grid(domain, cells_below(max_diam), &zero())
}

/// Smallest power of two n with 1/n < d.
pub fn cells_below(d: &Rational) -> u64 {
    let mut n = 1u64;
    while rat(1, n as i64) >= *d {
        n *= 2;
    }
    n
}

pub fn scale_simplex(t: &Simplex, lambda: &Rational) -> Result<Simplex> {
    t.scale(lambda)
}

pub fn simplex_diameter(t: &Simplex) -> Rational {
    t.diameter()
}

pub fn radial_coordinates(chart: &RadialChart, x: &Point) -> Result<(Rational, Option<Direction>)> {
    chart.radial_coordinates(x)
}

/// Exact total volume of simplexes with pairwise disjoint interiors.
pub fn lebesgue_of_union(sets: &[Simplex]) -> Result<Rational> {
    let index = SimplexIndex::new(sets);
    for (i, s) in sets.iter().enumerate() {
        let (lo, hi) = s.bbox();
        for j in index.query_box(&lo, &hi) {
            if j > i && s.interiors_overlap(&sets[j]) {
                return Err(Error::Geometry(format!("simplexes {i} and {j} overlap")));
            }
        }
    }
    Ok(sets.iter().map(Simplex::volume).sum())
}

/// Bucket grid over bounding boxes for point and box location.
#[derive(Clone, Debug)]
pub struct SimplexIndex {
    dim: usize,
    buckets: usize,
    cells: Vec<Vec<usize>>,
}

impl SimplexIndex {
    pub fn new(simplexes: &[Simplex]) -> Self {
        let dim = simplexes.first().map(Simplex::dim).unwrap_or(1);
        let buckets = if dim == 1 { 256 } else { 32 };
        let total = if dim == 1 { buckets } else { buckets * buckets };
        let mut cells = vec![Vec::new(); total];
        let mut idx = SimplexIndex { dim, buckets, cells: Vec::new() };
        for (i, s) in simplexes.iter().enumerate() {
            let (lo, hi) = s.bbox();
            for c in idx.cells_for_box(&lo, &hi) {
                cells[c].push(i);
            }
        }
        idx.cells = cells;
        idx
    }

    fn bucket(&self, x: &Rational) -> usize {
        let b = (x * int(self.buckets as i64)).floor().to_integer().to_i64().unwrap_or(0);
        b.clamp(0, self.buckets as i64 - 1) as usize
    }

    fn cells_for_box(&self, lo: &[Rational], hi: &[Rational]) -> Vec<usize> {
        let ranges: Vec<(usize, usize)> = (0..self.dim).map(|k| (self.bucket(&lo[k]), self.bucket(&hi[k]))).collect();
        let mut out = Vec::new();
        if self.dim == 1 {
            out.extend(ranges[0].0..=ranges[0].1);
        } else {
            for a in ranges[0].0..=ranges[0].1 {
                for b in ranges[1].0..=ranges[1].1 {
                    out.push(a * self.buckets + b);
                }
            }
        }
        out
    }

    pub fn query_point(&self, x: &[Rational]) -> Vec<usize> {
        self.query_box(x, x)
    }

    /// Candidate simplexes whose bounding box may meet the box [lo, hi].
    pub fn query_box(&self, lo: &[Rational], hi: &[Rational]) -> Vec<usize> {
        let mut out: Vec<usize> = self.cells_for_box(lo, hi).into_iter().flat_map(|c| self.cells[c].iter().copied()).collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p1(x: Rational) -> Point {
        Point::on_line(x).unwrap()
    }

    #[test]
    fn scale_examples() {
        let t = Simplex::interval(zero(), one()).unwrap();
        let s = t.scale(&rat(1, 2)).unwrap();
        assert_eq!(s.vertices()[0], p1(rat(1, 4)));
        assert_eq!(s.vertices()[1], p1(rat(3, 4)));
        assert_eq!(t.scale(&one()).unwrap(), t);
        let tri = Simplex::triangle((zero(), zero()), (one(), zero()), (zero(), one())).unwrap();
        assert_eq!(tri.centroid().coords(), &[rat(1, 3), rat(1, 3)]);
        let half = tri.scale(&rat(1, 2)).unwrap();
        let want = [(rat(1, 6), rat(1, 6)), (rat(2, 3), rat(1, 6)), (rat(1, 6), rat(2, 3))];
        for (v, w) in half.vertices().iter().zip(want) {
            assert_eq!(v.coords(), &[w.0, w.1]);
        }
        assert!(t.scale(&int(2)).is_err());
        assert!(t.scale(&zero()).is_err());
    }

    #[test]
    fn diameters_and_volumes() {
        assert_eq!(Simplex::interval(rat(1, 4), rat(3, 4)).unwrap().diameter(), rat(1, 2));
        let tri = Simplex::triangle((zero(), zero()), (one(), zero()), (zero(), one())).unwrap();
        assert_eq!(tri.diameter(), one());
        assert_eq!(tri.volume(), rat(1, 2));
        assert!(Simplex::interval(rat(1, 2), rat(1, 2)).is_err());
    }

    #[test]
    fn mesh_examples() {
        let t = triangulate_mesh(Domain::Interval, &rat(1, 2)).unwrap();
        assert!(t.len() > 2);
        assert!(t.simplexes().iter().all(|s| s.diameter() < rat(1, 2)));
        let sq = triangulate_mesh(Domain::Square, &rat(1, 2)).unwrap();
        assert_eq!(sq.len(), 32);
        assert!(sq.simplexes().iter().all(|s| s.diameter() == rat(1, 4)));
        assert_eq!(lebesgue_of_union(sq.simplexes()).unwrap(), one());
        assert!(triangulate_mesh(Domain::Interval, &zero()).is_err());
    }

    #[test]
    fn lebesgue_examples() {
        let a = Simplex::interval(zero(), rat(1, 2)).unwrap();
        let b = Simplex::interval(rat(1, 2), one()).unwrap();
        assert_eq!(lebesgue_of_union(&[a.clone(), b]).unwrap(), one());
        assert_eq!(lebesgue_of_union(&[Simplex::interval(rat(1, 8), rat(3, 8)).unwrap()]).unwrap(), rat(1, 4));
        let c = Simplex::interval(rat(1, 4), rat(3, 4)).unwrap();
        assert!(lebesgue_of_union(&[a, c]).is_err());
    }

    #[test]
    fn radial_examples() {
        let chart = RadialChart::new(Simplex::interval(zero(), one()).unwrap()).unwrap();
        let (s, th) = chart.radial_coordinates(&p1(rat(3, 4))).unwrap();
        assert_eq!(s, rat(1, 2));
        let th = th.unwrap();
        assert_eq!(chart.from_radial(&s, Some(&th)).unwrap(), p1(rat(3, 4)));
        assert_eq!(chart.radial_coordinates(&p1(rat(1, 2))).unwrap().0, zero());
        assert_eq!(chart.radial_coordinates(&p1(zero())).unwrap().0, one());
        assert_eq!(chart.radial_coordinates(&p1(one())).unwrap().0, one());
        assert_eq!(chart.lipschitz_s(), &int(2));
    }

    #[test]
    fn boundary_centroid_chart() {
        let s = Simplex::interval_centered(zero(), rat(1, 4), zero()).unwrap();
        let chart = RadialChart::new(s).unwrap();
        assert_eq!(chart.s_of(&[rat(1, 8)]), rat(1, 2));
        assert!(Simplex::interval_centered(rat(1, 4), rat(1, 2), rat(1, 4)).is_err());
    }

    #[test]
    fn offset_grid_covers() {
        let t = triangulate_grid(Domain::Square, 4, &rat(1, 12)).unwrap();
        assert_eq!(lebesgue_of_union(t.simplexes()).unwrap(), one());
        assert!(t.mesh() <= &rat(1, 4));
    }

    #[test]
    fn polygon_clip_and_distance() {
        let sq = Polytope::hull(2, vec![vec![zero(), zero()], vec![one(), zero()], vec![one(), one()], vec![zero(), one()]]);
        let tri = Simplex::triangle((zero(), zero()), (one(), zero()), (zero(), one())).unwrap();
        let c = sq.clip(&tri).unwrap();
        assert_eq!(c.vertices().len(), 3);
        assert_eq!(c.dist_to(&[one(), one()]), rat(1, 2));
        assert_eq!(dist_to_segment(&[zero(), zero()], &[one(), zero()], &[zero(), one()]), rat(1, 2));
    }
}
