//! Monte Carlo experiments over sampled initial points and the artifact bundle
//! written by `run`.

pub mod config;

use std::path::Path;

use num_traits::Zero;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub use config::{load_map, parse_measure, BuiltMap, ExperimentConfig, PerturbKind, EXPERIMENTS};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::maps::CompositeMap;
use crate::measures::{
    directed_hausdorff, orbit_signature, signature_distance, tail_measure, tail_signature, trace_orbit,
    weakstar_distance, AtomicMeasure, OrbitPolicy, Basis, HausdorffBound, MeasureDoc, MetricResult, Signature,
    TestFunctionFamily,
};
use crate::numeric::{fmt_rational, int, max_r, pow2_neg, rat, serde_q, zero, Rational};
use crate::par;
use crate::sampling::sample_point;
use crate::shadowing::{enumerate_periodic_orbits, ergodic_to_periodic_measure, DEFAULT_BUDGET};
use crate::shrinking::{
    convex_combination_from_tails, convex_threshold, periodic_measure, periodic_point_witness, sample_tails,
    ConvexCombinationReport, Psi, ShrinkingCertificate,
};

pub const REPORT_SCHEMA: &str = "shrinklab.report/1";
pub const MANIFEST_SCHEMA: &str = "shrinklab.manifest/1";
/// Tail measures with more atoms than this are summarized by their signature only.
const KEEP_ATOMS: usize = 64;
/// Distinct limit signatures entering single-linkage clustering.
const CLUSTER_CAP: usize = 2048;

fn fraction(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

/// One traced sample: its limit estimate and how stable it was.
#[derive(Clone, Debug)]
struct SampleTrace {
    start: Point,
    tail: Signature,
    tail_measure: Option<AtomicMeasure>,
    dispersion: MetricResult,
    /// (certificate index, time) of the first visit to a certified set within l steps.
    entered: Option<(usize, usize)>,
}

fn late_checkpoints(horizon: usize) -> Vec<usize> {
    let mut v = vec![horizon / 2, 3 * horizon / 4, horizon];
    v.dedup();
    v
}

fn trace_samples(map: &CompositeMap, certs: &[ShrinkingCertificate], cfg: &ExperimentConfig, basis: &Basis) -> Vec<SampleTrace> {
    let mc = cfg.monte_carlo();
    let l = certs.len();
    let checkpoints = late_checkpoints(mc.horizon);
    par::map_indexed(mc.samples, |i| {
        let start = sample_point(mc.seed, i as u64, map.dim());
        let orbit = trace_orbit(map, &start, mc.horizon, mc.policy);
        let sigs: Vec<Signature> = checkpoints.iter().map(|&t| tail_signature(basis, &orbit, t)).collect();
        let mut dispersion = MetricResult { lo: zero(), hi: pow2_neg(mc.depth as u32), depth: mc.depth };
        for (a, sa) in sigs.iter().enumerate() {
            for sb in &sigs[a + 1..] {
                let d = signature_distance(sa, sb);
                dispersion.lo = max_r(&dispersion.lo, &d.lo);
                dispersion.hi = max_r(&dispersion.hi, &d.hi);
            }
        }
        let entered = (0..=l.min(mc.horizon - 1)).find_map(|t| {
            let y = orbit.point_at(t);
            certs.iter().position(|c| c.set.contains_closed(y.coords())).map(|c| (c, t))
        });
        let tm = tail_measure(&orbit, mc.horizon);
        SampleTrace {
            start,
            tail: sigs.last().unwrap().clone(),
            tail_measure: (tm.len() <= KEEP_ATOMS).then_some(tm),
            dispersion,
            entered,
        }
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SampleRow {
    pub index: usize,
    pub start: Point,
    #[serde(with = "serde_q")]
    pub dispersion_lo: Rational,
    #[serde(with = "serde_q")]
    pub dispersion_hi: Rational,
    pub converged: bool,
    pub certificate: Option<usize>,
    pub entry_time: Option<usize>,
    #[serde(with = "serde_q::opt")]
    pub periodic_distance_hi: Option<Rational>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Fraction {
    pub count: usize,
    pub samples: usize,
    pub fraction: f64,
}

impl Fraction {
    fn new(count: usize, samples: usize) -> Self {
        Fraction { count, samples, fraction: fraction(count, samples) }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundCheck {
    pub q: u64,
    #[serde(with = "serde_q")]
    pub epsilon_q: Rational,
    pub checked: usize,
    pub violations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SampleReport {
    pub samples: usize,
    pub horizon: usize,
    pub depth: usize,
    pub checkpoints: Vec<usize>,
    #[serde(with = "serde_q")]
    pub aa_threshold: Rational,
    /// Samples whose limit estimate is stable across the late checkpoints.
    pub aa: Fraction,
    /// Samples whose orbit meets a certified shrinking set within l steps.
    pub coverage: Option<Fraction>,
    /// Binomial 3σ margin for the coverage fraction.
    pub coverage_margin: Option<f64>,
    pub bound: Option<BoundCheck>,
    #[serde(with = "serde_q")]
    pub alpha: Rational,
    /// Samples lying in a certified shrinking set of diameter < α.
    pub nonexpansive: Fraction,
    pub rows: Vec<SampleRow>,
}

/// Periodic measure of each periodic core, from an exact or converged witness.
fn core_measures(map: &CompositeMap, certs: &[ShrinkingCertificate]) -> Vec<Option<AtomicMeasure>> {
    let tol = pow2_neg(40);
    par::map_slice(certs, |c| {
        let w = periodic_point_witness(c, map, &tol, 400).ok()?;
        if w.exact {
            return periodic_measure(map, &w.point, c.period).ok();
        }
        // approximate witness: snapped orbit, whose measure is within the residual scale
        let orbit = trace_orbit(map, &w.point, c.period, OrbitPolicy::default());
        AtomicMeasure::uniform(&(0..c.period).map(|t| orbit.point_at(t).clone()).collect::<Vec<_>>()).ok()
    })
}

/// Stability of empirical limits per sample, with the explicit convergence
/// bound checked for samples that enter a certified shrinking set.
pub fn birkhoff_convergence_report(
    map: &CompositeMap,
    certs: &[ShrinkingCertificate],
    cfg: &ExperimentConfig,
) -> Result<SampleReport> {
    let basis = TestFunctionFamily::new(map.dim())?.basis(cfg.depth);
    let traces = trace_samples(map, certs, cfg, &basis);
    let aa_threshold = pow2_neg(cfg.depth as u32) * int(2);
    let q = if certs.is_empty() { cfg.q } else { cfg.perturb_q };
    let eps_q = basis.epsilon_for_q(q);
    // the periodic measure carried by each certificate's core
    let cores: Vec<Option<AtomicMeasure>> = {
        let mut uniq: Vec<ShrinkingCertificate> = Vec::new();
        let mut idx = Vec::new();
        for c in certs {
            let pos = uniq.iter().position(|u| u.core == c.core && u.transience == 0);
            let pos = pos.unwrap_or_else(|| {
                let mut core_cert = c.clone();
                core_cert.set = c.core.clone();
                core_cert.transience = 0;
                core_cert.entry.clear();
                uniq.push(core_cert);
                uniq.len() - 1
            });
            idx.push(pos);
        }
        let ms = core_measures(map, &uniq);
        idx.into_iter().map(|i| ms[i].clone()).collect()
    };
    let core_sigs: Vec<Option<Signature>> = cores.iter().map(|m| m.as_ref().map(|m| basis.signature(m))).collect();
    let rows: Vec<SampleRow> = traces
        .iter()
        .enumerate()
        .map(|(index, t)| {
            let periodic_distance_hi = t
                .entered
                .and_then(|(c, _)| core_sigs[c].as_ref())
                .map(|s| signature_distance(&t.tail, s).hi);
            SampleRow {
                index,
                start: t.start.clone(),
                dispersion_lo: t.dispersion.lo.clone(),
                dispersion_hi: t.dispersion.hi.clone(),
                converged: t.dispersion.hi <= aa_threshold,
                certificate: t.entered.map(|e| e.0),
                entry_time: t.entered.map(|e| e.1),
                periodic_distance_hi,
            }
        })
        .collect();
    let n = rows.len();
    let aa = Fraction::new(rows.iter().filter(|r| r.converged).count(), n);
    let (coverage, coverage_margin, bound) = if certs.is_empty() {
        (None, None, None)
    } else {
        let cov = Fraction::new(rows.iter().filter(|r| r.certificate.is_some()).count(), n);
        let p = cov.fraction;
        let margin = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
        let bound_limit = &eps_q * int(2);
        let checked: Vec<&Rational> = rows.iter().filter_map(|r| r.periodic_distance_hi.as_ref()).collect();
        let violations = checked.iter().filter(|d| ***d >= bound_limit).count();
        (Some(cov), Some(margin), Some(BoundCheck { q, epsilon_q: eps_q.clone(), checked: checked.len(), violations }))
    };
    let small = |x: &Point| certs.iter().any(|c| c.diameter < cfg.alpha && c.set.contains_interior(x.coords()));
    let nonexpansive = Fraction::new(traces.iter().filter(|t| small(&t.start)).count(), n);
    Ok(SampleReport {
        samples: n,
        horizon: cfg.horizon,
        depth: cfg.depth,
        checkpoints: late_checkpoints(cfg.horizon),
        aa_threshold,
        aa,
        coverage,
        coverage_margin,
        bound,
        alpha: cfg.alpha.clone(),
        nonexpansive,
        rows,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EpsFraction {
    #[serde(with = "serde_q")]
    pub eps: Rational,
    /// Limit estimates whose distance interval lies below ε.
    pub certain: Fraction,
    /// Limit estimates whose distance interval reaches below ε.
    pub possible: Fraction,
    /// Certain and converged (dispersion at metric resolution).
    pub physical: Fraction,
}

#[derive(Clone, Debug, Serialize)]
pub struct PseudoPhysicalReport {
    pub measure: MeasureDoc,
    pub grid: Vec<EpsFraction>,
    pub verdict: String,
}

fn pseudo_physical_from(
    traces: &[SampleTrace],
    target: &Signature,
    mu: &AtomicMeasure,
    grid: &[Rational],
    threshold: &Rational,
) -> PseudoPhysicalReport {
    let n = traces.len();
    let dists: Vec<MetricResult> = traces.iter().map(|t| signature_distance(&t.tail, target)).collect();
    let rows: Vec<EpsFraction> = grid
        .iter()
        .map(|eps| EpsFraction {
            eps: eps.clone(),
            certain: Fraction::new(dists.iter().filter(|d| d.hi < *eps).count(), n),
            possible: Fraction::new(dists.iter().filter(|d| d.lo < *eps).count(), n),
            physical: Fraction::new(
                dists.iter().zip(traces).filter(|(d, t)| d.hi < *eps && t.dispersion.hi <= *threshold).count(),
                n,
            ),
        })
        .collect();
    let verdict = match rows.iter().find(|r| r.certain.count == 0) {
        None => format!("positive-fraction evidence at every ε in the grid ({n} samples)"),
        Some(r) => format!("no positive-fraction evidence at ε = {} ({n} samples)", fmt_rational(&r.eps)),
    };
    PseudoPhysicalReport { measure: mu.to_doc(), grid: rows, verdict }
}

/// Monte Carlo estimate of Leb{x : the limit estimate of x is ε-close to μ}.
pub fn pseudo_physical_fraction(map: &CompositeMap, mu: &AtomicMeasure, cfg: &ExperimentConfig) -> Result<PseudoPhysicalReport> {
    if mu.dim() != map.dim() {
        return Err(Error::invalid("measure and map live on different domains"));
    }
    let basis = TestFunctionFamily::new(map.dim())?.basis(cfg.depth);
    let traces = trace_samples(map, &[], cfg, &basis);
    let threshold = pow2_neg(cfg.depth as u32) * int(2);
    Ok(pseudo_physical_from(&traces, &basis.signature(mu), mu, &cfg.eps_grid, &threshold))
}

/// A candidate invariant measure: exact when it comes from enumeration.
#[derive(Clone, Debug, Serialize)]
pub struct Candidate {
    pub label: String,
    pub measure: Option<MeasureDoc>,
    pub period: Option<usize>,
    pub points: Vec<Point>,
    #[serde(skip)]
    pub signature: Signature,
    pub weight: usize,
}

fn periodic_candidates(map: &CompositeMap, max_period: usize, basis: &Basis) -> Result<Vec<Candidate>> {
    let mut out: Vec<Candidate> = Vec::new();
    for p in 1..=max_period {
        for o in enumerate_periodic_orbits(map, p, DEFAULT_BUDGET)? {
            if out.iter().any(|c| c.points.contains(&o.point)) {
                continue;
            }
            let m = o.measure();
            out.push(Candidate {
                label: format!("periodic orbit of {} (period {})", o.point, o.period),
                signature: basis.signature(&m),
                measure: Some(m.to_doc()),
                period: Some(o.period),
                points: o.orbit,
                weight: 1,
            });
        }
    }
    Ok(out)
}

/// Single-linkage clusters of limit signatures at radius r; one candidate per cluster.
fn cluster_limits(traces: &[SampleTrace], radius: &Rational) -> (Vec<Candidate>, usize) {
    let mut distinct: Vec<(Signature, usize, usize)> = Vec::new(); // signature, first sample, count
    let mut index: std::collections::HashMap<Signature, usize> = std::collections::HashMap::new();
    let mut skipped = 0;
    for (i, t) in traces.iter().enumerate() {
        if let Some(&k) = index.get(&t.tail) {
            distinct[k].2 += 1;
        } else if distinct.len() < CLUSTER_CAP {
            index.insert(t.tail.clone(), distinct.len());
            distinct.push((t.tail.clone(), i, 1));
        } else {
            skipped += 1;
        }
    }
    let n = distinct.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let close: Vec<Vec<usize>> = par::map_indexed(n, |a| {
        (a + 1..n).filter(|&b| signature_distance(&distinct[a].0, &distinct[b].0).lo <= *radius).collect()
    });
    for (a, bs) in close.iter().enumerate() {
        for &b in bs {
            let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut out: Vec<Candidate> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for a in 0..n {
        let r = root(&mut parent, a);
        if slot[r] == usize::MAX {
            let (sig, first, _) = &distinct[a];
            let t = &traces[*first];
            slot[r] = out.len();
            out.push(Candidate {
                label: format!("limit of sample {first}"),
                measure: t.tail_measure.as_ref().map(AtomicMeasure::to_doc),
                period: None,
                points: t.tail_measure.as_ref().map(|m| m.atoms().iter().map(|a| a.0.clone()).collect()).unwrap_or_default(),
                signature: sig.clone(),
                weight: 0,
            });
        }
        out[slot[r]].weight += distinct[a].2;
    }
    (out, skipped)
}

#[derive(Clone, Debug, Serialize)]
pub struct UniqueErgodicityReport {
    pub verdict: String,
    pub source: String,
    pub candidates: Vec<Candidate>,
    pub witness: Option<(usize, usize)>,
    pub distance: Option<MetricResult>,
    #[serde(with = "serde_q")]
    pub threshold: Rational,
}

/// Looks for two invariant measures at distance > 3·2^{−N}.
pub fn unique_ergodicity_probe(map: &CompositeMap, cfg: &ExperimentConfig) -> Result<UniqueErgodicityReport> {
    let basis = TestFunctionFamily::new(map.dim())?.basis(cfg.depth);
    let threshold = pow2_neg(cfg.depth as u32) * int(3);
    let (source, candidates) = match periodic_candidates(map, cfg.max_period, &basis) {
        Ok(c) => ("enumeration".to_string(), c),
        Err(Error::NonIsolated(_) | Error::Unsupported(_) | Error::Budget(_)) => {
            let traces = trace_samples(map, &[], cfg, &basis);
            let (c, _) = cluster_limits(&traces, &(pow2_neg(cfg.depth as u32) * int(2)));
            ("sampling".to_string(), c)
        }
        Err(e) => return Err(e),
    };
    let mut witness = None;
    'outer: for a in 0..candidates.len() {
        for b in a + 1..candidates.len() {
            let d = signature_distance(&candidates[a].signature, &candidates[b].signature);
            if d.lo > threshold {
                witness = Some((a, b, d));
                break 'outer;
            }
        }
    }
    let verdict = match &witness {
        Some(_) => "not uniquely ergodic: two invariant measures at positive distance".to_string(),
        None => "inconclusive".to_string(),
    };
    Ok(UniqueErgodicityReport {
        verdict,
        source,
        candidates,
        witness: witness.as_ref().map(|w| (w.0, w.1)),
        distance: witness.map(|w| w.2),
        threshold,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct NearestRow {
    pub cluster: usize,
    pub nearest: Option<usize>,
    pub distance: Option<MetricResult>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MeasureSetComparison {
    pub per_set: Vec<Candidate>,
    /// Per-set entries supported on a certified periodic shrinking orbit of diameter < 1/q.
    pub q_shrinked: Vec<bool>,
    pub o_set: Vec<Candidate>,
    pub o_set_samples: usize,
    pub unclustered: usize,
    pub q: u64,
    #[serde(with = "serde_q")]
    pub epsilon_q: Rational,
    /// From the O-set to the q-shrinked periodic measures.
    pub o_to_shrinked: Option<HausdorffBound>,
    pub o_to_per: Option<HausdorffBound>,
    pub per_to_o: Option<HausdorffBound>,
    pub nearest: Vec<NearestRow>,
    pub eps_grid: Vec<String>,
}

/// Periodic measures against sampled empirical limits.
pub fn closure_comparison(
    map: &CompositeMap,
    certs: &[ShrinkingCertificate],
    cfg: &ExperimentConfig,
) -> Result<MeasureSetComparison> {
    let basis = TestFunctionFamily::new(map.dim())?.basis(cfg.depth);
    let per_set = periodic_candidates(map, cfg.max_period, &basis)?;
    let inv_q = rat(1, cfg.q as i64);
    let q_shrinked: Vec<bool> = per_set
        .iter()
        .map(|c| {
            certs.iter().any(|k| {
                k.transience == 0
                    && k.core_diameter < inv_q
                    && c.points.iter().all(|p| k.orbit_sets().iter().any(|e| e.contains(p.coords())))
                    && c.points.iter().any(|p| k.core.contains_interior(p.coords()))
            })
        })
        .collect();
    let traces = trace_samples(map, &[], cfg, &basis);
    let (o_set, unclustered) = cluster_limits(&traces, &(pow2_neg(cfg.depth as u32) * int(2)));
    let sig = |v: &[&Candidate]| v.iter().map(|c| c.signature.clone()).collect::<Vec<_>>();
    let o_sigs = sig(&o_set.iter().collect::<Vec<_>>());
    let per_sigs = sig(&per_set.iter().collect::<Vec<_>>());
    let shr_sigs = sig(&per_set.iter().zip(&q_shrinked).filter(|(_, s)| **s).map(|(c, _)| c).collect::<Vec<_>>());
    let nonempty = |a: &[Signature], b: &[Signature]| (!a.is_empty() && !b.is_empty()).then(|| directed_hausdorff(a, b));
    let nearest = o_sigs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let best = per_sigs.iter().enumerate().map(|(j, p)| (j, signature_distance(s, p))).min_by(|a, b| a.1.lo.cmp(&b.1.lo));
            NearestRow { cluster: i, nearest: best.as_ref().map(|b| b.0), distance: best.map(|b| b.1) }
        })
        .collect();
    Ok(MeasureSetComparison {
        q_shrinked,
        o_set_samples: traces.len(),
        unclustered,
        q: cfg.q,
        epsilon_q: basis.epsilon_for_q(cfg.q),
        o_to_shrinked: nonempty(&o_sigs, &shr_sigs).transpose()?,
        o_to_per: nonempty(&o_sigs, &per_sigs).transpose()?,
        per_to_o: nonempty(&per_sigs, &o_sigs).transpose()?,
        nearest,
        per_set,
        o_set,
        eps_grid: cfg.eps_grid.iter().map(fmt_rational).collect(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EmptyInteriorRow {
    pub check: ConvexCombinationReport,
    pub distance_to_mu1: MetricResult,
}

#[derive(Clone, Debug, Serialize)]
pub struct EmptyInteriorReport {
    pub certificate: usize,
    pub period: usize,
    pub mu1: MeasureDoc,
    pub mu2: MeasureDoc,
    pub rows: Vec<EmptyInteriorRow>,
    /// λ = 1: evidence for μ₁ itself.
    pub mu1_evidence: PseudoPhysicalReport,
    /// λ = 0: ∫ψ dμ₂.
    #[serde(with = "serde_q")]
    pub psi_mu2: Rational,
    pub verified: bool,
}

/// Convex combinations λμ₁ + (1−λ)μ₂ of a certified periodic measure and an
/// invariant measure off its orbit, for λ → 1.
pub fn empty_interior_probe(
    map: &CompositeMap,
    certs: &[ShrinkingCertificate],
    cfg: &ExperimentConfig,
) -> Result<EmptyInteriorReport> {
    let periodic: Vec<usize> = (0..certs.len()).filter(|&i| certs[i].transience == 0).collect();
    let exact = |i: usize| -> Option<AtomicMeasure> {
        let c = &certs[i];
        let w = periodic_point_witness(c, map, &zero(), 200).ok()?;
        let m = periodic_measure(map, &w.point, c.period).ok()?;
        m.is_invariant(map).then_some(m)
    };
    let (a, mu1) = periodic
        .iter()
        .find_map(|&i| exact(i).map(|m| (i, m)))
        .ok_or_else(|| Error::construction("no certified periodic orbit with an exact invariant measure"))?;
    let ka = &certs[a];
    let sets_a = ka.orbit_sets();
    let mu2 = periodic
        .iter()
        .filter(|&&j| j != a && certs[j].orbit_sets().iter().all(|e| sets_a.iter().all(|s| !s.intersects(e))))
        .find_map(|&j| exact(j))
        .ok_or_else(|| Error::construction("no invariant measure disjoint from the certified orbit"))?;
    let mc = cfg.monte_carlo();
    let tails = sample_tails(ka, map, &mc)?;
    let basis = TestFunctionFamily::new(map.dim())?.basis(cfg.depth);
    let mut rows = Vec::new();
    for lambda in &cfg.lambdas {
        let eps = convex_threshold(&mu1, &mu2, lambda, cfg.depth)?;
        let check = convex_combination_from_tails(ka, map, &mu1, &mu2, lambda, &tails, cfg.depth, &eps)?;
        let nu = AtomicMeasure::convex(lambda, &mu1, &mu2)?;
        rows.push(EmptyInteriorRow { check, distance_to_mu1: weakstar_distance(&nu, &mu1, cfg.depth)? });
    }
    let pseudo_traces: Vec<SampleTrace> = tails
        .iter()
        .map(|t| SampleTrace {
            start: Point::on_line(zero()).unwrap_or_else(|_| unreachable!()),
            tail: t.signature.clone(),
            tail_measure: None,
            dispersion: MetricResult { lo: zero(), hi: zero(), depth: cfg.depth },
            entered: None,
        })
        .collect();
    let threshold = pow2_neg(cfg.depth as u32) * int(2);
    let grid: Vec<Rational> = rows.iter().map(|r| r.check.epsilon.clone()).collect();
    let mu1_evidence = pseudo_physical_from(&pseudo_traces, &basis.signature(&mu1), &mu1, &grid, &threshold);
    let psi_mu2 = Psi::new(ka).integrate(&mu2);
    let shrinking = match (rows.first(), rows.last()) {
        (Some(f), Some(l)) if rows.len() > 1 => l.distance_to_mu1.hi < f.distance_to_mu1.hi,
        _ => true,
    };
    let verified = rows.iter().all(|r| r.check.identity_holds && r.check.hits == 0)
        && mu1_evidence.grid.iter().all(|g| g.certain.count > 0)
        && psi_mu2.is_zero()
        && shrinking;
    Ok(EmptyInteriorReport {
        certificate: a,
        period: ka.period,
        mu1: mu1.to_doc(),
        mu2: mu2.to_doc(),
        rows,
        mu1_evidence,
        psi_mu2,
        verified,
    })
}

/// Output of one `run`: report, table and manifest, all as final bytes.
#[derive(Clone, Debug)]
pub struct Bundle {
    pub report: String,
    pub table: String,
    pub manifest: String,
    pub verified: bool,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn convergence_table(map: &CompositeMap, cfg: &ExperimentConfig) -> Result<String> {
    let basis = TestFunctionFamily::new(map.dim())?.basis(cfg.depth);
    let x = sample_point(cfg.seed, 0, map.dim());
    let orbit = trace_orbit(map, &x, cfg.horizon, cfg.monte_carlo().policy);
    let limit = tail_signature(&basis, &orbit, cfg.horizon);
    let stride = (cfg.horizon / 20).max(1);
    let mut out = String::from("time,distance_lo,distance_hi\n");
    for t in (stride..=cfg.horizon).step_by(stride) {
        let d = signature_distance(&orbit_signature(&basis, &orbit, t), &limit);
        out.push_str(&format!("{t},{},{}\n", fmt_rational(&d.lo), fmt_rational(&d.hi)));
    }
    Ok(out)
}

fn run_inner(cfg: &ExperimentConfig) -> Result<(Value, String, bool, String)> {
    let built = cfg.build_map()?;
    let map = &built.map;
    let certs = &built.certificates;
    let map_json = map.to_json();
    let (result, table, verified) = match cfg.experiment.as_str() {
        "birkhoff" => {
            let r = birkhoff_convergence_report(map, certs, cfg)?;
            let ok = r.bound.as_ref().is_none_or(|b| b.violations == 0);
            (serde_json::to_value(&r)?, convergence_table(map, cfg)?, ok)
        }
        "pseudo-physical" => {
            let mu = cfg.target_measure()?.ok_or_else(|| Error::Config("pseudo-physical needs `measure`".into()))?;
            let r = pseudo_physical_fraction(map, &mu, cfg)?;
            (serde_json::to_value(&r)?, convergence_table(map, cfg)?, true)
        }
        "unique-ergodicity" => {
            let r = unique_ergodicity_probe(map, cfg)?;
            (serde_json::to_value(&r)?, convergence_table(map, cfg)?, true)
        }
        "closure-compare" => {
            let r = closure_comparison(map, certs, cfg)?;
            let mut table = String::from("cluster,distance_lo,distance_hi\n");
            for row in &r.nearest {
                if let Some(d) = &row.distance {
                    table.push_str(&format!("{},{},{}\n", row.cluster, fmt_rational(&d.lo), fmt_rational(&d.hi)));
                }
            }
            (serde_json::to_value(&r)?, table, true)
        }
        "empty-interior" => {
            let r = empty_interior_probe(map, certs, cfg)?;
            let mut table = String::from("lambda,distance_lo,distance_hi\n");
            for row in &r.rows {
                table.push_str(&format!(
                    "{},{},{}\n",
                    fmt_rational(&row.check.lambda),
                    fmt_rational(&row.distance_to_mu1.lo),
                    fmt_rational(&row.distance_to_mu1.hi)
                ));
            }
            let ok = r.verified;
            (serde_json::to_value(&r)?, table, ok)
        }
        "shadow" => {
            let r = ergodic_to_periodic_measure(map, &cfg.start_point()?, &cfg.eps0, cfg.horizon)?;
            let mut table = String::from("time,distance_lo,distance_hi\n");
            for (n, (y, z)) in r.pseudo_orbit.points.iter().zip(r.shadow_orbit.iter().cycle()).enumerate() {
                let d = fmt_rational(&y.dist(z));
                table.push_str(&format!("{n},{d},{d}\n"));
            }
            let ok = !r.thresholds_met || r.bound.hi < &cfg.eps0 * int(2);
            (serde_json::to_value(&r)?, table, ok)
        }
        "perturb" => {
            let report = built.report.clone().ok_or_else(|| Error::Config("perturb needs perturb = sqk or pqr".into()))?;
            let d = &report["distance"];
            let table = format!(
                "time,distance_lo,distance_hi\n0,{},{}\n",
                d["lo"].as_str().unwrap_or(""),
                d["hi"].as_str().unwrap_or("")
            );
            (report, table, true)
        }
        other => return Err(Error::Config(format!("unknown experiment {other:?}"))),
    };
    let report = json!({
        "schema": REPORT_SCHEMA,
        "experiment": cfg.experiment,
        "config": cfg,
        "verified": verified,
        "perturbation": if cfg.experiment == "perturb" { Value::Null } else { built.report.clone().unwrap_or(Value::Null) },
        "result": result,
    });
    Ok((report, table, verified, map_json))
}

/// Runs the configured experiment on `workers` threads (0 = default pool).
pub fn run_experiment(cfg: &ExperimentConfig, config_text: &str, workers: usize) -> Result<Bundle> {
    let (report, table, verified, map_json) = par::with_workers(workers, || run_inner(cfg))??;
    let report = serde_json::to_string_pretty(&report)? + "\n";
    let manifest = json!({
        "schema": MANIFEST_SCHEMA,
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "samples": cfg.samples,
        "horizon": cfg.horizon,
        "depth": cfg.depth,
        "eps_grid": cfg.eps_grid.iter().map(fmt_rational).collect::<Vec<_>>(),
        "versions": { "shrinklab": env!("CARGO_PKG_VERSION") },
        "inputs": {
            "config_sha256": sha256_hex(config_text.as_bytes()),
            "map_sha256": sha256_hex(map_json.as_bytes()),
        },
        "outputs": {
            "report.json": sha256_hex(report.as_bytes()),
            "table.csv": sha256_hex(table.as_bytes()),
        },
        "verified": verified,
    });
    let manifest = serde_json::to_string_pretty(&manifest)? + "\n";
    Ok(Bundle { report, table, manifest, verified })
}

impl Bundle {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), &self.report)?;
        std::fs::write(dir.join("table.csv"), &self.table)?;
        std::fs::write(dir.join("manifest.json"), &self.manifest)?;
        Ok(())
    }
}

/// Loads a config file, runs it and writes the bundle to `output` (or the
/// config's own `output`, or `out/` next to the config).
pub fn run_config_file(path: &Path, output: Option<&Path>, workers: usize) -> Result<Bundle> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let bundle = run_experiment(&cfg, &text, workers)?;
    let dir = match (output, &cfg.output) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(o)) => cfg.base_dir.join(o),
        (None, None) => cfg.base_dir.join("out"),
    };
    bundle.write(&dir)?;
    if !bundle.verified {
        return Err(Error::Verification(format!("report in {} failed its checks", dir.display())));
    }
    Ok(bundle)
}
