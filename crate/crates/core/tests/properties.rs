use std::sync::OnceLock;

use num_traits::{Signed, Zero};
use proptest::prelude::*;

use shrinklab::geometry::{scale_simplex, triangulate_grid, Domain, Point, RadialChart, Simplex};
use shrinklab::lab::{birkhoff_convergence_report, ExperimentConfig};
use shrinklab::maps::{
    c0_distance, compose, image_enclosure, preset, CompositeMap, DistanceMode, PiecewiseAffineLayer,
};
use shrinklab::measures::{empirical_measure, weakstar_distance, AtomicMeasure};
use shrinklab::numeric::{int, one, pow, pow2_neg, rat, zero, Rational};
use shrinklab::perturb::{build_sqk_perturbation, radial_homeomorphism, SqkReport};
use shrinklab::shadowing::{enumerate_periodic_orbits, PeriodicOrbit};
use shrinklab::shrinking::{
    certify_periodic_shrinking, orbit_measure_profile, periodic_measure, periodic_point_witness, soundness_violations,
    Psi,
};

fn unit(den: i64) -> impl Strategy<Value = Rational> {
    (0..=den).prop_map(move |a| rat(a, den))
}

fn open_unit(den: i64) -> impl Strategy<Value = Rational> {
    (1..den).prop_map(move |a| rat(a, den))
}

fn p1(x: Rational) -> Point {
    Point::on_line(x).unwrap()
}

fn atomic(max_atoms: usize) -> impl Strategy<Value = AtomicMeasure> {
    prop::collection::vec((0i64..=64, 1i64..=8), 1..=max_atoms).prop_map(|atoms| {
        let mut pts: Vec<(i64, i64)> = Vec::new();
        for (x, w) in atoms {
            match pts.iter_mut().find(|p| p.0 == x) {
                Some(p) => p.1 += w,
                None => pts.push((x, w)),
            }
        }
        let total: i64 = pts.iter().map(|p| p.1).sum();
        AtomicMeasure::new(pts.into_iter().map(|(x, w)| (p1(rat(x, 64)), rat(w, total))).collect()).unwrap()
    })
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

fn sqk_identity() -> &'static SqkReport {
    static R: OnceLock<SqkReport> = OnceLock::new();
    R.get_or_init(|| build_sqk_perturbation(&preset("identity").unwrap(), 4, 4, &rat(1, 2), false).unwrap())
}

fn fixed_points() -> &'static [PeriodicOrbit] {
    static F: OnceLock<Vec<PeriodicOrbit>> = OnceLock::new();
    F.get_or_init(|| enumerate_periodic_orbits(&sqk_identity().map, 1, 1 << 16).unwrap())
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn triangulation_volume_and_mesh(n in 1u64..6, square in any::<bool>(), off in 0i64..4) {
        let domain = if square { Domain::Square } else { Domain::Interval };
        let offset = rat(off, 8 * n as i64);
        let t = triangulate_grid(domain, n, &offset).unwrap();
        let total: Rational = t.simplexes().iter().map(Simplex::volume).sum();
        prop_assert_eq!(total, one());
        prop_assert!(t.simplexes().iter().all(|s| &s.diameter() <= t.mesh()));
    }

    #[test]
    fn scaling_is_linear_in_diameter(a in unit(32), len in 1i64..16, lam in 1i64..16) {
        let b = (&a + rat(len, 32)).min(one());
        prop_assume!(b > a);
        let s = Simplex::interval(a, b).unwrap();
        let l = rat(lam, 16);
        let t = scale_simplex(&s, &l).unwrap();
        prop_assert_eq!(t.diameter(), &l * s.diameter());
        if lam < 16 {
            prop_assert!(t.vertices().iter().all(|v| s.contains_interior(v.coords())));
        }
    }

    #[test]
    fn radial_round_trip(x in unit(97), y in unit(89), tri in 0usize..8) {
        let grid = triangulate_grid(Domain::Square, 2, &zero()).unwrap();
        let chart = RadialChart::new(grid.simplexes()[tri].clone()).unwrap();
        let p = Point::on_square(x, y).unwrap();
        prop_assume!(chart.base().contains_closed(p.coords()));
        let (s, theta) = chart.radial_coordinates(&p).unwrap();
        prop_assert!(!s.is_negative() && s <= one());
        prop_assert_eq!(chart.from_radial(&s, theta.as_ref()).unwrap(), p);
    }

    #[test]
    fn radial_layer_moves_points_at_most_mesh(x in unit(1000), n in 1u32..6, cells in 1u64..5) {
        let tri = triangulate_grid(Domain::Interval, cells, &zero()).unwrap();
        let h = CompositeMap::radial(radial_homeomorphism(&tri, n).unwrap());
        let p = p1(x);
        prop_assert!(h.eval(&p).dist(&p) <= *tri.mesh());
        for v in tri.simplexes().iter().flat_map(|s| s.vertices().iter().chain([s.centroid()])) {
            prop_assert_eq!(&h.eval(v), v);
        }
    }

    #[test]
    fn weakstar_symmetric_and_triangle(mu in atomic(5), nu in atomic(5), ka in atomic(5)) {
        let d = |a: &AtomicMeasure, b: &AtomicMeasure| weakstar_distance(a, b, 12).unwrap();
        let (mn, nm) = (d(&mu, &nu), d(&nu, &mu));
        prop_assert_eq!(&mn, &nm);
        prop_assert!(mn.lo <= mn.hi && mn.hi <= one() && &mn.hi - &mn.lo <= pow2_neg(12));
        prop_assert!(d(&mu, &ka).lo <= &mn.hi + &d(&nu, &ka).hi);
    }

    #[test]
    fn weakstar_refines_monotonically(mu in atomic(4), nu in atomic(4), n in 2usize..10, extra in 1usize..6) {
        let coarse = weakstar_distance(&mu, &nu, n).unwrap();
        let fine = weakstar_distance(&mu, &nu, n + extra).unwrap();
        prop_assert!(coarse.lo <= fine.lo && fine.hi <= coarse.hi);
        prop_assert!(&fine.hi - &fine.lo <= pow2_neg((n + extra) as u32));
    }

    #[test]
    fn empirical_weights_sum_to_one(x in open_unit(1009), n in 1usize..200) {
        let mu = empirical_measure(&preset("tent").unwrap(), &p1(x), n).unwrap();
        prop_assert_eq!(mu.total(), one());
    }

    #[test]
    fn enclosures_contain_images(a in unit(64), len in 1i64..16, xs in prop::collection::vec(0i64..=100, 1..20)) {
        let f = compose(&preset("tent").unwrap(), &sqk_identity().map);
        let b = (&a + rat(len, 64)).min(one());
        prop_assume!(b > a);
        let s = Simplex::interval(a.clone(), b.clone()).unwrap();
        let e = image_enclosure(&f, &s, &pow2_neg(20)).unwrap();
        for k in xs {
            let x = &a + (&b - &a) * rat(k, 100);
            prop_assert!(e.contains(f.eval(&p1(x)).coords()));
        }
    }

    #[test]
    fn affine_inverse_round_trip(x in unit(1000), y in unit(1000), cut in 1i64..8) {
        let c = rat(cut, 8);
        let f = PiecewiseAffineLayer::interval_nodes(&[(zero(), zero()), (c.clone(), rat(1, 3)), (one(), one())]).unwrap();
        let f = CompositeMap::affine(f);
        let inv = f.inverse().unwrap();
        prop_assert_eq!(inv.eval(&f.eval(&p1(x.clone()))), p1(x));
        let sq = preset("identity-square").unwrap().inverse().unwrap();
        let q = Point::on_square(y.clone(), y).unwrap();
        prop_assert_eq!(sq.eval(&q), q);
    }

    #[test]
    fn c0_distance_symmetric(a in 1i64..8, b in 1i64..8) {
        let m = |k: i64| CompositeMap::affine(
            PiecewiseAffineLayer::interval_nodes(&[(zero(), zero()), (rat(k, 8), rat(1, 2)), (one(), one())]).unwrap(),
        );
        let tol = pow2_neg(8);
        let (f, g) = (m(a), m(b));
        let fg = c0_distance(&f, &g, DistanceMode::Map, &tol).unwrap();
        let gf = c0_distance(&g, &f, DistanceMode::Map, &tol).unwrap();
        prop_assert_eq!(&fg, &gf);
        let ff = c0_distance(&f, &f, DistanceMode::Homeo, &tol).unwrap();
        prop_assert!(ff.lo.is_zero() && ff.hi.is_zero());
    }

    #[test]
    fn certificates_are_sound(k in 0usize..16, xs in prop::collection::vec(0i64..=1000, 1..40)) {
        let r = sqk_identity();
        let c = &r.certificates[k % r.certificates.len()];
        let (lo, hi) = (c.set.vertices()[0].x().clone(), c.set.vertices()[1].x().clone());
        let pts: Vec<Point> = xs.iter().map(|&t| p1(&lo + (&hi - &lo) * rat(t, 1000))).collect();
        prop_assert_eq!(soundness_violations(c, &r.map, &pts), 0);
    }

    #[test]
    fn psi_stays_in_unit_interval(x in unit(4096)) {
        let r = sqk_identity();
        let c = &r.certificates[0];
        let psi = Psi::new(c);
        let v = psi.value(&[x.clone()]);
        prop_assert!(!v.is_negative() && v <= one());
        let y = (&x + rat(1, 4096)).min(one());
        prop_assert!((psi.value(&[y.clone()]) - v).abs() <= psi.lipschitz_bound() * (y - x));
    }

    #[test]
    fn exponent_search_can_overshoot(l1 in 1i64..64, l2 in 1i64..64, n in 1u32..40, more in 1u32..20) {
        let (lambda1, lambda2) = (rat(l1, 64), rat(l2, 64));
        if pow(&lambda1, n) < lambda2 {
            prop_assert!(pow(&lambda1, n + more) < lambda2);
        }
    }

    #[test]
    fn witness_residuals_decrease(a in 1i64..8, b in 0i64..8) {
        prop_assume!(2 * a + b <= 16);
        // x ↦ a/8·x + b/16 is a contraction of [0,1] into itself
        let f = CompositeMap::affine(
            PiecewiseAffineLayer::interval_nodes(&[(zero(), rat(b, 16)), (one(), rat(a, 8) + rat(b, 16))]).unwrap(),
        );
        let tol = pow2_neg(30);
        let c = certify_periodic_shrinking(&f, &Simplex::interval(zero(), one()).unwrap(), 1, &tol).unwrap();
        let c = c.into_certificate().unwrap();
        let w = periodic_point_witness(&c, &f, &tol, 200).unwrap();
        prop_assert!(w.history.windows(2).all(|h| h[1] <= h[0]));
        prop_assert!(f.eval(&w.point).dist(&w.point) <= w.residual);
    }
}

proptest! {
    #![proptest_config(config(24))]

    /// Invariant measures on a certified periodic orbit put mass 1/p on each piece.
    #[test]
    fn periodic_profile_is_uniform(x in open_unit(97)) {
        let swap = preset("swap-pw").unwrap();
        let tol = pow2_neg(30);
        let core = Simplex::interval(zero(), rat(1, 4)).unwrap();
        let c = certify_periodic_shrinking(&swap, &core, 2, &tol).unwrap().into_certificate().unwrap();
        let start = p1(x * rat(1, 4));
        let w = periodic_point_witness(&c, &swap, &tol, 200).unwrap();
        let mu = periodic_measure(&swap, &w.point, 2).unwrap();
        let prof = orbit_measure_profile(&c, &swap, &mu, true).unwrap();
        prop_assert_eq!(prof.masses, vec![rat(1, 2), rat(1, 2)]);
        prop_assert!(c.orbit_sets()[0].contains(start.coords()));
    }

    /// A certified attracting Dirac mass only decomposes trivially.
    #[test]
    fn shrinked_dirac_is_extremal(k in 0usize..8, lam in 1i64..16, mix in prop::collection::vec((0usize..33, 1i64..5), 1..4)) {
        let r = sqk_identity();
        let periodic: Vec<_> = r.certificates.iter().filter(|c| c.transience == 0).collect();
        let c = periodic[k % periodic.len()];
        let x = periodic_point_witness(c, &r.map, &zero(), 50).unwrap().point;
        let mu = AtomicMeasure::dirac(x);
        let fixed = fixed_points();
        let total: i64 = mix.iter().map(|m| m.1).sum();
        let mut atoms: Vec<(Point, Rational)> = Vec::new();
        for (i, w) in &mix {
            let p = fixed[i % fixed.len()].point.clone();
            match atoms.iter_mut().find(|a| a.0 == p) {
                Some(a) => a.1 += rat(*w, total),
                None => atoms.push((p, rat(*w, total))),
            }
        }
        let mu1 = AtomicMeasure::new(atoms).unwrap();
        prop_assert!(mu1.is_invariant(&r.map));
        let lambda = rat(lam, 16);
        // μ₂ = (μ − λμ₁)/(1 − λ) must be a probability measure for a decomposition
        let rest: Vec<(Point, Rational)> = mu
            .atoms()
            .iter()
            .chain(mu1.atoms())
            .map(|(p, _)| p.clone())
            .fold(Vec::<Point>::new(), |mut v, p| { if !v.contains(&p) { v.push(p) } v })
            .into_iter()
            .map(|p| {
                let m = mu.mass_where(|q| *q == p) - &lambda * mu1.mass_where(|q| *q == p);
                (p, m / (one() - &lambda))
            })
            .filter(|(_, m)| !m.is_zero())
            .collect();
        if let Ok(mu2) = AtomicMeasure::new(rest) {
            prop_assert!(mu2.is_invariant(&r.map));
            let d = weakstar_distance(&mu1, &mu, 20).unwrap();
            prop_assert!(d.hi <= pow2_neg(20));
        }
    }
}

#[test]
fn sample_reports_are_consistent() {
    let cfg = ExperimentConfig::parse("seed = 4\nsamples = 200\nhorizon = 100").unwrap();
    let r = sqk_identity();
    let rep = birkhoff_convergence_report(&r.map, &r.certificates, &cfg).unwrap();
    let cov = rep.coverage.as_ref().unwrap();
    assert!((0.0..=1.0).contains(&cov.fraction));
    assert_eq!(cov.count, rep.rows.iter().filter(|row| row.certificate.is_some()).count());
    assert_eq!(rep.aa.count, rep.rows.iter().filter(|row| row.converged).count());
    assert_eq!(cov.samples, 200);
    // coverage of the perturbed identity is at least 1 − 1/k up to a 3σ margin
    assert!(cov.fraction >= 1.0 - 1.0 / 4.0 - rep.coverage_margin.unwrap());
    let _ = int(0);
}
