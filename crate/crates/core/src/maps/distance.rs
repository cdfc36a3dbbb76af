use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::Serialize;

use super::{compose, CompositeMap};
use crate::error::{Error, Result};
use crate::geometry::{dist_inf, Vector};
use crate::numeric::{fmt_rational, min_r, one, rat, serde_q, zero, Rational};

const CELL_BUDGET: usize = 1 << 21;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistanceMode {
    /// ρ(f,g) = max dist(f(x), g(x))
    Map,
    /// max{ρ(f,g), ρ(f⁻¹,g⁻¹)}
    Homeo,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DistanceBound {
    #[serde(with = "serde_q")]
    pub lo: Rational,
    #[serde(with = "serde_q")]
    pub hi: Rational,
}

impl DistanceBound {
    pub fn zero() -> Self {
        DistanceBound { lo: zero(), hi: zero() }
    }
}

impl std::fmt::Display for DistanceBound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}]", fmt_rational(&self.lo), fmt_rational(&self.hi))
    }
}

/// sup over M of ‖a(x) − b(x)‖ by branch and bound on boxes with Lipschitz padding.
fn sup_gap(a: &CompositeMap, b: &CompositeMap, tol: &Rational) -> Result<DistanceBound> {
    if a.layers() == b.layers() {
        return Ok(DistanceBound::zero());
    }
    let dim = a.dim();
    let lip = a.lipschitz() + b.lipschitz();
    let gap = |x: &Vector| dist_inf(&a.apply(x), &b.apply(x));
    // heap of (upper bound, tie-break counter) → cell (center, half-width)
    let mut heap: BinaryHeap<(Rational, Reverse<u64>, Vector, Rational)> = BinaryHeap::new();
    let mut counter = 0u64;
    let center = vec![rat(1, 2); dim];
    let half = rat(1, 2);
    let g0 = gap(&center);
    let mut lo = g0.clone();
    heap.push((min_r(&(&g0 + &lip * &half), &one()), Reverse(counter), center, half));
    let mut popped = 0usize;
    while let Some((ub, _, c, r)) = heap.pop() {
        if &ub - &lo <= *tol {
            return Ok(DistanceBound { lo, hi: ub });
        }
        popped += 1;
        if popped > CELL_BUDGET {
            return Err(Error::Budget(format!("C0 distance needs more than {CELL_BUDGET} cells")));
        }
        let r2 = &r * rat(1, 2);
        let offsets: Vec<Vector> = match dim {
            1 => vec![vec![-r2.clone()], vec![r2.clone()]],
            _ => vec![
                vec![-r2.clone(), -r2.clone()],
                vec![-r2.clone(), r2.clone()],
                vec![r2.clone(), -r2.clone()],
                vec![r2.clone(), r2.clone()],
            ],
        };
        for off in offsets {
            let cc: Vector = c.iter().zip(&off).map(|(x, d)| x + d).collect();
            let g = gap(&cc);
            if g > lo {
                lo = g.clone();
            }
            counter += 1;
            heap.push((min_r(&(&g + &lip * &r2), &one()), Reverse(counter), cc, r2.clone()));
        }
    }
    unreachable!("heap never empties")
}

/// Certified enclosure [lo, hi] of the C⁰ distance with hi − lo ≤ tol.
pub fn c0_distance(f: &CompositeMap, g: &CompositeMap, mode: DistanceMode, tol: &Rational) -> Result<DistanceBound> {
    if f.dim() != g.dim() {
        return Err(Error::invalid("maps act on different domains"));
    }
    if tol <= &zero() {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let direct = sup_gap(f, g, tol)?;
    if mode == DistanceMode::Map {
        return Ok(direct);
    }
    if !f.is_invertible() || !g.is_invertible() {
        return Err(Error::NotInvertible("homeo distance needs two homeomorphisms".into()));
    }
    if f.layers() == g.layers() {
        return Ok(direct);
    }
    // ρ(f⁻¹, g⁻¹) = sup_w ‖f⁻¹(g(w)) − w‖ whenever g is onto
    let inverse_gap = if let Ok(fi) = f.inverse() {
        sup_gap(&compose(&fi, g), &CompositeMap::identity(f.domain()), tol)?
    } else if let Ok(gi) = g.inverse() {
        sup_gap(&compose(&gi, f), &CompositeMap::identity(f.domain()), tol)?
    } else {
        return Err(Error::NotInvertible("neither map has an exact rational inverse".into()));
    };
    Ok(DistanceBound {
        lo: crate::numeric::max_r(&direct.lo, &inverse_gap.lo),
        hi: crate::numeric::max_r(&direct.hi, &inverse_gap.hi),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Domain, RadialChart, Simplex};
    use crate::maps::{preset, RadialContractionLayer};

    #[test]
    fn examples() {
        let tent = preset("tent").unwrap();
        assert_eq!(c0_distance(&tent, &tent, DistanceMode::Map, &rat(1, 100)).unwrap(), DistanceBound::zero());
        let id = CompositeMap::identity(Domain::Interval);
        let d = c0_distance(&tent, &id, DistanceMode::Map, &rat(1, 100)).unwrap();
        assert!(d.lo <= one() && d.hi >= one());
        let chart = RadialChart::new(Simplex::interval(zero(), one()).unwrap()).unwrap();
        let h = CompositeMap::radial(RadialContractionLayer::new(vec![(chart, 2)]).unwrap());
        let d = c0_distance(&id, &h, DistanceMode::Map, &rat(1, 100)).unwrap();
        assert!(d.lo <= rat(1, 8) && rat(1, 8) <= d.hi && &d.hi - &d.lo <= rat(1, 100));
        let dh = c0_distance(&id, &h, DistanceMode::Homeo, &rat(1, 100)).unwrap();
        assert!(dh.hi >= d.lo);
        assert!(c0_distance(&tent, &id, DistanceMode::Homeo, &rat(1, 100)).is_err());
        let back = c0_distance(&h, &id, DistanceMode::Map, &rat(1, 100)).unwrap();
        assert!(back.lo <= d.hi && d.lo <= back.hi);
    }
}
