//! Self-maps of M built from piecewise-affine and radial-contraction layers.

mod distance;
pub(crate) mod enclosure;

pub use distance::{c0_distance, DistanceBound, DistanceMode};
pub use enclosure::{image_enclosure, image_of_polytope, Enclosure};

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    dist_inf, lebesgue_of_union, lerp_from, sub, Domain, Point, Polytope, RadialChart, Simplex, SimplexIndex, Vector,
};
use crate::numeric::{bit_size, fmt_rational, int, max_r, one, parse_rational, pow, pow2_neg, rat, serde_q, snap, zero, Rational};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AffinePiece {
    domain: Simplex,
    matrix: Vec<Vector>,
    offset: Vector,
}

impl AffinePiece {
    pub fn new(domain: Simplex, matrix: Vec<Vector>, offset: Vector) -> Result<Self> {
        let m = domain.dim();
        if matrix.len() != m || matrix.iter().any(|r| r.len() != m) || offset.len() != m {
            return Err(Error::invalid("affine piece shape mismatch"));
        }
        let piece = AffinePiece { domain, matrix, offset };
        for v in piece.domain.vertices() {
            let y = piece.apply(v.coords());
            if y.iter().any(|c| c.is_negative() || c > &one()) {
                return Err(Error::invalid(format!("affine piece maps vertex {v} outside M")));
            }
        }
        Ok(piece)
    }

    /// The affine map sending each vertex of `domain` to the matching image.
    pub fn from_vertex_images(domain: Simplex, images: &[Vector]) -> Result<Self> {
        let m = domain.dim();
        if images.len() != m + 1 {
            return Err(Error::invalid("one image per vertex required"));
        }
        let v0 = domain.vertices()[0].coords().to_vec();
        let mut matrix = vec![vec![zero(); m]; m];
        // column k of A is the image of the unit vector e_k minus the image of 0
        for k in 0..m {
            let mut e = vec![zero(); m];
            e[k] = one();
            let x = crate::geometry::add(&v0, &e);
            let beta = domain.barycentric(&x);
            let y = combine(&beta, images);
            for (row, yi) in matrix.iter_mut().zip(sub(&y, &images[0])) {
                row[k] = yi;
            }
        }
        let av0: Vector = matrix.iter().map(|row| row.iter().zip(&v0).map(|(a, x)| a * x).sum()).collect();
        let offset = sub(&images[0], &av0);
        AffinePiece::new(domain, matrix, offset)
    }

    pub fn domain(&self) -> &Simplex {
        &self.domain
    }

    pub fn matrix(&self) -> &[Vector] {
        &self.matrix
    }

    pub fn offset(&self) -> &[Rational] {
        &self.offset
    }

    pub fn apply(&self, x: &[Rational]) -> Vector {
        self.matrix
            .iter()
            .zip(&self.offset)
            .map(|(row, b)| row.iter().zip(x).map(|(a, xi)| a * xi).sum::<Rational>() + b)
            .collect()
    }

    /// Operator norm for the max-norm: largest absolute row sum.
    pub fn norm(&self) -> Rational {
        self.matrix.iter().map(|r| r.iter().map(|a| a.abs()).sum::<Rational>()).max().unwrap()
    }

    fn determinant(&self) -> Rational {
        match self.matrix.len() {
            1 => self.matrix[0][0].clone(),
            _ => &self.matrix[0][0] * &self.matrix[1][1] - &self.matrix[0][1] * &self.matrix[1][0],
        }
    }

    fn image_simplex(&self) -> Result<Simplex> {
        let pts = self.domain.vertices().iter().map(|v| Point::new(self.apply(v.coords()))).collect::<Result<_>>()?;
        Simplex::new(pts)
    }
}

fn combine(beta: &[Rational], images: &[Vector]) -> Vector {
    let m = images[0].len();
    let mut out = vec![zero(); m];
    for (b, y) in beta.iter().zip(images) {
        for (o, yi) in out.iter_mut().zip(y) {
            *o += b * yi;
        }
    }
    out
}

/// Continuous piecewise-affine self-map of M.
#[derive(Clone, Debug)]
pub struct PiecewiseAffineLayer {
    dim: usize,
    pieces: Vec<AffinePiece>,
    index: SimplexIndex,
    lipschitz: Rational,
    inverse: Option<Box<PiecewiseAffineLayer>>,
}

impl PartialEq for PiecewiseAffineLayer {
    fn eq(&self, other: &Self) -> bool {
        self.pieces == other.pieces
    }
}

impl PiecewiseAffineLayer {
    pub fn new(pieces: Vec<AffinePiece>) -> Result<Self> {
        let mut layer = Self::unchecked(pieces)?;
        layer.inverse = layer.try_inverse().map(Box::new);
        Ok(layer)
    }

    fn unchecked(pieces: Vec<AffinePiece>) -> Result<Self> {
        let dim = pieces.first().map(|p| p.domain.dim()).ok_or_else(|| Error::invalid("layer without pieces"))?;
        let domains: Vec<Simplex> = pieces.iter().map(|p| p.domain.clone()).collect();
        let total = lebesgue_of_union(&domains)?;
        if total != one() {
            return Err(Error::invalid(format!("piece domains cover volume {}", fmt_rational(&total))));
        }
        let index = SimplexIndex::new(&domains);
        // continuity: every vertex gets one image from every piece holding it
        for p in &pieces {
            for v in p.domain.vertices() {
                let y = p.apply(v.coords());
                for j in index.query_point(v.coords()) {
                    let q = &pieces[j];
                    if q.domain.contains_closed(v.coords()) && q.apply(v.coords()) != y {
                        return Err(Error::invalid(format!("layer discontinuous at {v}")));
                    }
                }
            }
        }
        let lipschitz = pieces.iter().map(AffinePiece::norm).max().unwrap();
        Ok(PiecewiseAffineLayer { dim, pieces, index, lipschitz, inverse: None })
    }

    /// From vertex images on a triangulation, e.g. node values of an interval map.
    pub fn from_images(domains: Vec<Simplex>, images: Vec<Vec<Vector>>) -> Result<Self> {
        let pieces = domains
            .into_iter()
            .zip(images)
            .map(|(d, ys)| AffinePiece::from_vertex_images(d, &ys))
            .collect::<Result<_>>()?;
        Self::new(pieces)
    }

    /// Interval map interpolating (x_k, y_k) nodes with x_0 = 0 and x_last = 1.
    pub fn interval_nodes(nodes: &[(Rational, Rational)]) -> Result<Self> {
        if nodes.len() < 2 || !nodes[0].0.is_zero() || nodes[nodes.len() - 1].0 != one() {
            return Err(Error::invalid("nodes must start at 0 and end at 1"));
        }
        let mut domains = Vec::new();
        let mut images = Vec::new();
        for w in nodes.windows(2) {
            domains.push(Simplex::interval(w[0].0.clone(), w[1].0.clone())?);
            images.push(vec![vec![w[0].1.clone()], vec![w[1].1.clone()]]);
        }
        Self::from_images(domains, images)
    }

    /// Inverse layer when the pieces map onto M bijectively.
    fn try_inverse(&self) -> Option<PiecewiseAffineLayer> {
        let mut inv_pieces = Vec::with_capacity(self.pieces.len());
        for p in &self.pieces {
            if p.determinant().is_zero() {
                return None;
            }
            let img = p.image_simplex().ok()?;
            let images: Vec<Vector> = p.domain.vertices().iter().map(|v| v.coords().to_vec()).collect();
            inv_pieces.push(AffinePiece::from_vertex_images(img, &images).ok()?);
        }
        Self::unchecked(inv_pieces).ok()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pieces(&self) -> &[AffinePiece] {
        &self.pieces
    }

    pub fn lipschitz(&self) -> &Rational {
        &self.lipschitz
    }

    pub fn inverse(&self) -> Option<&PiecewiseAffineLayer> {
        self.inverse.as_deref()
    }

    pub fn piece_at(&self, x: &[Rational]) -> &AffinePiece {
        self.index
            .query_point(x)
            .into_iter()
            .map(|j| &self.pieces[j])
            .find(|p| p.domain.contains_closed(x))
            .expect("pieces cover M")
    }

    pub fn apply(&self, x: &[Rational]) -> Vector {
        self.piece_at(x).apply(x)
    }

    pub(crate) fn candidates(&self, lo: &[Rational], hi: &[Rational]) -> Vec<&AffinePiece> {
        self.index.query_box(lo, hi).into_iter().map(|j| &self.pieces[j]).collect()
    }
}

/// h(s,θ) = (s^n, θ) on each chart, identity elsewhere.
#[derive(Clone, Debug)]
pub struct RadialContractionLayer {
    dim: usize,
    charts: Vec<(RadialChart, u32)>,
    index: SimplexIndex,
    lipschitz: Rational,
}

impl PartialEq for RadialContractionLayer {
    fn eq(&self, other: &Self) -> bool {
        self.charts == other.charts
    }
}

impl RadialContractionLayer {
    pub fn new(charts: Vec<(RadialChart, u32)>) -> Result<Self> {
        let dim = charts.first().map(|c| c.0.base().dim()).ok_or_else(|| Error::invalid("radial layer without charts"))?;
        if charts.iter().any(|(c, n)| *n == 0 || c.base().dim() != dim) {
            return Err(Error::invalid("radial exponents must be ≥ 1 and dimensions agree"));
        }
        let bases: Vec<Simplex> = charts.iter().map(|c| c.0.base().clone()).collect();
        lebesgue_of_union(&bases)?;
        let index = SimplexIndex::new(&bases);
        let mut lipschitz = one();
        for (c, n) in &charts {
            let l = one() + int(*n as i64 - 1) * c.reach() * c.lipschitz_s();
            lipschitz = max_r(&lipschitz, &l);
        }
        Ok(RadialContractionLayer { dim, charts, index, lipschitz })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn charts(&self) -> &[(RadialChart, u32)] {
        &self.charts
    }

    pub fn lipschitz(&self) -> &Rational {
        &self.lipschitz
    }

    pub(crate) fn chart_at(&self, x: &[Rational]) -> Option<&(RadialChart, u32)> {
        self.index
            .query_point(x)
            .into_iter()
            .map(|j| &self.charts[j])
            .find(|(c, _)| c.base().contains_closed(x))
    }

    pub(crate) fn candidates(&self, lo: &[Rational], hi: &[Rational]) -> Vec<&(RadialChart, u32)> {
        self.index.query_box(lo, hi).into_iter().map(|j| &self.charts[j]).collect()
    }

    pub fn apply(&self, x: &[Rational]) -> Vector {
        match self.chart_at(x) {
            None => x.to_vec(),
            Some((chart, n)) => {
                let s = chart.s_of(x);
                let t = pow(&s, n - 1);
                lerp_from(chart.centroid().coords(), x, &t)
            }
        }
    }

    /// As `apply`, with s^{n−1} computed by squaring on a 2^{−grid_bits−16}
    /// grid once operands outgrow `max_bits`.
    fn apply_snapped(&self, x: &[Rational], max_bits: u64, grid_bits: u32) -> (Vector, Rational) {
        match self.chart_at(x) {
            None => (x.to_vec(), zero()),
            Some((chart, n)) => {
                let fine = grid_bits + 16;
                let mut snaps = 0i64;
                let mut round = |r: Rational| {
                    if bit_size(&r) > max_bits {
                        snaps += 1;
                        snap(&r, fine)
                    } else {
                        r
                    }
                };
                let mut base = round(chart.s_of(x));
                let mut t = one();
                let mut e = n - 1;
                while e > 0 {
                    if e & 1 == 1 {
                        t = round(&t * &base);
                    }
                    e >>= 1;
                    if e > 0 {
                        base = round(&base * &base);
                    }
                }
                // factors lie in [0, 1], so each rounding adds at most one grid half-step
                let t_err = int(snaps) * pow2_neg(fine + 1);
                (lerp_from(chart.centroid().coords(), x, &t), t_err * chart.reach())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Affine(PiecewiseAffineLayer),
    Radial(RadialContractionLayer),
}

impl Layer {
    pub fn dim(&self) -> usize {
        match self {
            Layer::Affine(l) => l.dim(),
            Layer::Radial(l) => l.dim(),
        }
    }

    pub fn lipschitz(&self) -> &Rational {
        match self {
            Layer::Affine(l) => l.lipschitz(),
            Layer::Radial(l) => l.lipschitz(),
        }
    }

    pub fn apply(&self, x: &[Rational]) -> Vector {
        match self {
            Layer::Affine(l) => l.apply(x),
            Layer::Radial(l) => l.apply(x),
        }
    }

    pub fn is_invertible(&self) -> bool {
        match self {
            Layer::Affine(l) => l.inverse().is_some(),
            Layer::Radial(_) => true,
        }
    }
}

/// Composition of layers, applied in list order.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeMap {
    dim: usize,
    layers: Vec<Layer>,
    lipschitz: Rational,
}

impl CompositeMap {
    pub fn identity(domain: Domain) -> Self {
        CompositeMap { dim: domain.dim(), layers: Vec::new(), lipschitz: one() }
    }

    pub fn from_layers(domain: Domain, layers: Vec<Layer>) -> Result<Self> {
        if layers.iter().any(|l| l.dim() != domain.dim()) {
            return Err(Error::invalid("layer dimension differs from the domain"));
        }
        let lipschitz = layers.iter().map(|l| l.lipschitz().clone()).product();
        Ok(CompositeMap { dim: domain.dim(), layers, lipschitz })
    }

    pub fn affine(layer: PiecewiseAffineLayer) -> Self {
        let dim = layer.dim();
        CompositeMap { dim, lipschitz: layer.lipschitz().clone(), layers: vec![Layer::Affine(layer)] }
    }

    pub fn radial(layer: RadialContractionLayer) -> Self {
        let dim = layer.dim();
        CompositeMap { dim, lipschitz: layer.lipschitz().clone(), layers: vec![Layer::Radial(layer)] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> Domain {
        Domain::from_dim(self.dim).expect("valid dimension")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn lipschitz(&self) -> &Rational {
        &self.lipschitz
    }

    pub fn is_identity(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn is_affine_only(&self) -> bool {
        self.layers.iter().all(|l| matches!(l, Layer::Affine(_)))
    }

    pub fn is_invertible(&self) -> bool {
        self.layers.iter().all(Layer::is_invertible)
    }

    pub fn apply(&self, x: &[Rational]) -> Vector {
        let mut y = x.to_vec();
        for l in &self.layers {
            y = l.apply(&y);
        }
        y
    }

    pub fn eval(&self, x: &Point) -> Point {
        Point::trusted(self.apply(x.coords()))
    }

    /// Approximate image: after each layer, coordinates longer than `max_bits`
    /// are snapped to the 2^{−grid_bits} grid. Returns the image and a bound on
    /// its distance to the exact image.
    pub fn apply_snapped(&self, x: &[Rational], max_bits: u64, grid_bits: u32) -> (Vector, Rational) {
        let mut y = x.to_vec();
        let mut err = zero();
        for l in &self.layers {
            let mut local = zero();
            y = match l {
                Layer::Affine(a) => a.apply(&y),
                Layer::Radial(r) => {
                    let (z, e) = r.apply_snapped(&y, max_bits, grid_bits);
                    local = e;
                    z
                }
            };
            if y.iter().any(|c| bit_size(c) > max_bits) {
                let z: Vector = y.iter().map(|c| snap(c, grid_bits)).collect();
                local += dist_inf(&y, &z);
                y = z;
            }
            err = err * l.lipschitz() + local;
        }
        (y, err)
    }

    /// Orbit segment (x, f(x), …, f^n(x)).
    pub fn evaluate(&self, x: &Point, iterates: usize) -> Vec<Point> {
        let mut out = Vec::with_capacity(iterates + 1);
        out.push(x.clone());
        for _ in 0..iterates {
            let next = self.eval(out.last().unwrap());
            out.push(next);
        }
        out
    }

    pub fn iterate(&self, x: &Point, n: usize) -> Point {
        let mut y = x.clone();
        for _ in 0..n {
            y = self.eval(&y);
        }
        y
    }

    /// Exact inverse of an affine-only composite.
    pub fn inverse(&self) -> Result<CompositeMap> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in self.layers.iter().rev() {
            match l {
                Layer::Affine(a) => match a.inverse() {
                    Some(inv) => layers.push(Layer::Affine(inv.clone())),
                    None => return Err(Error::NotInvertible("affine layer is not bijective".into())),
                },
                Layer::Radial(_) => {
                    return Err(Error::NotInvertible("radial layers have no exact rational inverse".into()))
                }
            }
        }
        CompositeMap::from_layers(self.domain(), layers)
    }

    pub fn to_doc(&self) -> MapDoc {
        MapDoc {
            schema: MAP_SCHEMA.to_string(),
            dimension: self.dim,
            layers: self.layers.iter().map(LayerDoc::from).collect(),
            lipschitz: self.lipschitz.clone(),
        }
    }

    pub fn from_doc(doc: &MapDoc) -> Result<Self> {
        let domain = Domain::from_dim(doc.dimension)?;
        let layers = doc.layers.iter().map(LayerDoc::to_layer).collect::<Result<Vec<_>>>()?;
        let map = CompositeMap::from_layers(domain, layers)?;
        if doc.lipschitz < map.lipschitz {
            return Err(Error::invalid(format!(
                "declared Lipschitz bound {} below the certified {}",
                fmt_rational(&doc.lipschitz),
                fmt_rational(&map.lipschitz)
            )));
        }
        Ok(map)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("map serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MapDoc = serde_json::from_str(text)?;
        Self::from_doc(&doc)
    }
}

/// f ∘ g: apply g, then f.
pub fn compose(f: &CompositeMap, g: &CompositeMap) -> CompositeMap {
    assert_eq!(f.dim, g.dim, "composing maps on different domains");
    let mut layers = g.layers.clone();
    layers.extend(f.layers.iter().cloned());
    CompositeMap { dim: f.dim, layers, lipschitz: &f.lipschitz * &g.lipschitz }
}

pub fn lipschitz_bound(map: &CompositeMap) -> Rational {
    map.lipschitz.clone()
}

pub fn evaluate(map: &CompositeMap, x: &Point, iterates: usize) -> Vec<Point> {
    map.evaluate(x, iterates)
}

pub const MAP_SCHEMA: &str = "shrinklab.map/1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MapDoc {
    pub schema: String,
    pub dimension: usize,
    pub layers: Vec<LayerDoc>,
    #[serde(with = "serde_q")]
    pub lipschitz: Rational,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PieceDoc {
    pub domain: Simplex,
    pub matrix: Vec<Vec<String>>,
    pub offset: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChartDoc {
    pub chart: Simplex,
    pub exponent: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerDoc {
    Affine { pieces: Vec<PieceDoc> },
    Radial { charts: Vec<ChartDoc> },
}

fn strings(v: &[Rational]) -> Vec<String> {
    v.iter().map(fmt_rational).collect()
}

fn parse_all(v: &[String]) -> Result<Vector> {
    v.iter().map(|s| parse_rational(s)).collect()
}

impl From<&Layer> for LayerDoc {
    fn from(l: &Layer) -> Self {
        match l {
            Layer::Affine(a) => LayerDoc::Affine {
                pieces: a
                    .pieces
                    .iter()
                    .map(|p| PieceDoc {
                        domain: p.domain.clone(),
                        matrix: p.matrix.iter().map(|r| strings(r)).collect(),
                        offset: strings(&p.offset),
                    })
                    .collect(),
            },
            Layer::Radial(r) => LayerDoc::Radial {
                charts: r.charts.iter().map(|(c, n)| ChartDoc { chart: c.base().clone(), exponent: *n }).collect(),
            },
        }
    }
}

impl LayerDoc {
    fn to_layer(&self) -> Result<Layer> {
        match self {
            LayerDoc::Affine { pieces } => {
                let ps = pieces
                    .iter()
                    .map(|p| {
                        let matrix = p.matrix.iter().map(|r| parse_all(r)).collect::<Result<Vec<_>>>()?;
                        AffinePiece::new(p.domain.clone(), matrix, parse_all(&p.offset)?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Layer::Affine(PiecewiseAffineLayer::new(ps)?))
            }
            LayerDoc::Radial { charts } => {
                let cs = charts
                    .iter()
                    .map(|c| Ok((RadialChart::new(c.chart.clone())?, c.exponent)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Layer::Radial(RadialContractionLayer::new(cs)?))
            }
        }
    }
}

pub const PRESETS: &[&str] = &[
    "tent",
    "identity",
    "logistic-pw",
    "clamp-doubling",
    "swap-pw",
    "half",
    "contract-mid",
    "identity-square",
    "tent-square",
];

/// Named example maps.
pub fn preset(name: &str) -> Result<CompositeMap> {
    let nodes = |pts: &[(i64, i64, i64, i64)]| {
        let v: Vec<(Rational, Rational)> = pts.iter().map(|&(a, b, c, d)| (rat(a, b), rat(c, d))).collect();
        PiecewiseAffineLayer::interval_nodes(&v).map(CompositeMap::affine)
    };
    match name {
        "tent" => nodes(&[(0, 1, 0, 1), (1, 2, 1, 1), (1, 1, 0, 1)]),
        "identity" => Ok(CompositeMap::identity(Domain::Interval)),
        "identity-square" => Ok(CompositeMap::identity(Domain::Square)),
        // 4x(1−x) interpolated at the nodes k/8
        "logistic-pw" => {
            let v: Vec<(Rational, Rational)> = (0..=8)
                .map(|k| {
                    let x = rat(k, 8);
                    let y = int(4) * &x * (one() - &x);
                    (x, y)
                })
                .collect();
            PiecewiseAffineLayer::interval_nodes(&v).map(CompositeMap::affine)
        }
        // max(0, min(1, 2x − 1/3)), hyperbolic fixed point at 1/3
        "clamp-doubling" => nodes(&[(0, 1, 0, 1), (1, 6, 0, 1), (2, 3, 1, 1), (1, 1, 1, 1)]),
        // contracting swap of [0,1/4] and [3/4,1] around the 2-cycle {1/8, 7/8}
        "swap-pw" => nodes(&[(0, 1, 27, 32), (1, 4, 29, 32), (3, 4, 3, 32), (1, 1, 5, 32)]),
        "half" => nodes(&[(0, 1, 0, 1), (1, 1, 1, 2)]),
        "contract-mid" => nodes(&[(0, 1, 1, 4), (1, 1, 3, 4)]),
        "tent-square" => {
            let tent = |x: &Rational| if x <= &rat(1, 2) { int(2) * x } else { int(2) - int(2) * x };
            let grid = crate::geometry::triangulate_grid(Domain::Square, 2, &zero())?;
            let domains: Vec<Simplex> = grid.simplexes().to_vec();
            let images = domains
                .iter()
                .map(|s| s.vertices().iter().map(|v| vec![tent(&v.coords()[0]), tent(&v.coords()[1])]).collect())
                .collect();
            PiecewiseAffineLayer::from_images(domains, images).map(CompositeMap::affine)
        }
        other => Err(Error::Config(format!("unknown map preset {other:?}; known: {}", PRESETS.join(", ")))),
    }
}

/// Image of a polytope under one affine layer, split along pieces. The flag
/// reports whether the hull of the returned points is the exact image.
pub(crate) fn affine_layer_image(layer: &PiecewiseAffineLayer, p: &Polytope) -> (Vec<Vector>, bool) {
    let (lo, hi) = p.bbox();
    let mut clips = Vec::new();
    for piece in layer.candidates(&lo, &hi) {
        if let Some(q) = p.clip(piece.domain()) {
            if q == *p {
                return (p.vertices().iter().map(|v| piece.apply(v)).collect(), true);
            }
            clips.push((piece, q));
        }
    }
    let pts = clips.iter().flat_map(|(piece, q)| q.vertices().iter().map(|v| piece.apply(v)).collect::<Vec<_>>()).collect();
    (pts, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Simplex;

    fn p(x: Rational) -> Point {
        Point::on_line(x).unwrap()
    }

    pub(crate) fn half_radial(n: u32) -> CompositeMap {
        let chart = RadialChart::new(Simplex::interval(zero(), one()).unwrap()).unwrap();
        CompositeMap::radial(RadialContractionLayer::new(vec![(chart, n)]).unwrap())
    }

    #[test]
    fn tent_orbit_and_lipschitz() {
        let tent = preset("tent").unwrap();
        let orbit = tent.evaluate(&p(rat(2, 5)), 2);
        assert_eq!(orbit, vec![p(rat(2, 5)), p(rat(4, 5)), p(rat(2, 5))]);
        assert_eq!(tent.lipschitz(), &int(2));
        let tt = compose(&tent, &tent);
        assert!(tt.lipschitz() <= &int(4));
        assert_eq!(tt.eval(&p(rat(2, 5))), p(rat(2, 5)));
        assert!(!tent.is_invertible());
    }

    #[test]
    fn identity_and_compose() {
        let id = CompositeMap::identity(Domain::Interval);
        assert_eq!(id.lipschitz(), &one());
        assert_eq!(id.evaluate(&p(rat(1, 3)), 4), vec![p(rat(1, 3)); 5]);
        let tent = preset("tent").unwrap();
        assert_eq!(compose(&tent, &id), tent);
        let h = half_radial(2);
        assert!(compose(&h, &id).is_invertible());
        assert_eq!(compose(&h, &tent).is_invertible(), false);
    }

    #[test]
    fn radial_layer_values() {
        let h = half_radial(2);
        assert_eq!(h.eval(&p(rat(3, 4))), p(rat(5, 8)));
        assert_eq!(h.eval(&p(zero())), p(zero()));
        assert_eq!(h.eval(&p(one())), p(one()));
        assert_eq!(h.eval(&p(rat(1, 2))), p(rat(1, 2)));
        assert_eq!(h.lipschitz(), &int(2));
        assert_eq!(half_radial(1).eval(&p(rat(1, 3))), p(rat(1, 3)));
    }

    #[test]
    fn affine_inverse_round_trip() {
        assert!(!preset("contract-mid").unwrap().is_invertible());
        let g = CompositeMap::affine(
            PiecewiseAffineLayer::interval_nodes(&[(zero(), zero()), (rat(1, 2), rat(1, 4)), (one(), one())]).unwrap(),
        );
        let inv = g.inverse().unwrap();
        for k in 0..=16 {
            let x = p(rat(k, 16));
            assert_eq!(inv.eval(&g.eval(&x)), x);
            assert_eq!(g.eval(&inv.eval(&x)), x);
        }
        let sq = preset("tent-square").unwrap();
        assert!(sq.inverse().is_err());
    }

    #[test]
    fn json_round_trip() {
        let g = compose(&preset("tent").unwrap(), &half_radial(3));
        let back = CompositeMap::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
        let sq = preset("tent-square").unwrap();
        assert_eq!(CompositeMap::from_json(&sq.to_json()).unwrap(), sq);
    }

    #[test]
    fn discontinuous_layer_rejected() {
        let a = AffinePiece::from_vertex_images(Simplex::interval(zero(), rat(1, 2)).unwrap(), &[vec![zero()], vec![rat(1, 2)]]);
        let b = AffinePiece::from_vertex_images(Simplex::interval(rat(1, 2), one()).unwrap(), &[vec![rat(1, 4)], vec![one()]]);
        assert!(PiecewiseAffineLayer::new(vec![a.unwrap(), b.unwrap()]).is_err());
    }

    #[test]
    fn presets_load() {
        for name in PRESETS {
            preset(name).unwrap();
        }
        assert!(preset("nope").is_err());
        let lp = preset("logistic-pw").unwrap();
        assert_eq!(lp.eval(&p(rat(1, 2))), p(one()));
    }
}
