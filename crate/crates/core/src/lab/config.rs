//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::maps::{preset, CompositeMap, PRESETS};
use crate::measures::{AtomicMeasure, OrbitPolicy, DEFAULT_DEPTH};
use crate::numeric::{fmt_rational, parse_rational, rat, Rational};
use crate::perturb::{build_pqr_perturbation, build_sqk_perturbation};
use crate::sampling::MonteCarlo;
use crate::shrinking::ShrinkingCertificate;

const KEYS: &[&str] = &[
    "experiment",
    "map",
    "samples",
    "horizon",
    "depth",
    "eps",
    "seed",
    "output",
    "perturb",
    "perturb_q",
    "perturb_k",
    "perturb_r",
    "perturb_eps",
    "homeo",
    "q",
    "alpha",
    "max_period",
    "x",
    "eps0",
    "measure",
    "lambdas",
];

pub const EXPERIMENTS: &[&str] = &[
    "birkhoff",
    "pseudo-physical",
    "unique-ergodicity",
    "closure-compare",
    "empty-interior",
    "shadow",
    "perturb",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbKind {
    None,
    Sqk,
    Pqr,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub map: String,
    pub samples: usize,
    pub horizon: usize,
    pub depth: usize,
    #[serde(with = "crate::numeric::serde_q::vec")]
    pub eps_grid: Vec<Rational>,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub perturb: PerturbKind,
    pub perturb_q: u64,
    pub perturb_k: u64,
    pub perturb_r: usize,
    #[serde(with = "crate::numeric::serde_q")]
    pub perturb_eps: Rational,
    pub homeo: bool,
    pub q: u64,
    #[serde(with = "crate::numeric::serde_q")]
    pub alpha: Rational,
    pub max_period: usize,
    #[serde(with = "crate::numeric::serde_q::opt")]
    pub x: Option<Rational>,
    #[serde(with = "crate::numeric::serde_q")]
    pub eps0: Rational,
    pub measure: Option<String>,
    #[serde(with = "crate::numeric::serde_q::vec")]
    pub lambdas: Vec<Rational>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: "birkhoff".into(),
            map: "tent".into(),
            samples: 10_000,
            horizon: 1_000,
            depth: DEFAULT_DEPTH,
            eps_grid: vec![rat(1, 4), rat(1, 8), rat(1, 16)],
            seed: 0,
            output: None,
            perturb: PerturbKind::None,
            perturb_q: 4,
            perturb_k: 4,
            perturb_r: 1,
            perturb_eps: rat(1, 2),
            homeo: false,
            q: 8,
            alpha: rat(1, 8),
            max_period: 4,
            x: None,
            eps0: rat(1, 4),
            measure: None,
            lambdas: (1..=6).map(|n| rat((1 << n) - 1, 1 << n)).collect(),
            base_dir: PathBuf::from("."),
        }
    }
}

fn positive(key: &str, v: &str) -> Result<u64> {
    let n: u64 = v.parse().map_err(|_| Error::Config(format!("{key}: expected a natural number, got {v:?}")))?;
    if n == 0 {
        return Err(Error::Config(format!("{key} must be at least 1")));
    }
    Ok(n)
}

fn rational(key: &str, v: &str) -> Result<Rational> {
    parse_rational(v).map_err(|e| Error::Config(format!("{key}: {e}")))
}

fn rational_list(key: &str, v: &str) -> Result<Vec<Rational>> {
    v.split(',').map(|s| rational(key, s.trim())).collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", ln + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("line {}: unknown key {k:?}", ln + 1)));
            }
            if seen.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", ln + 1)));
            }
        }
        let mut c = ExperimentConfig::default();
        if !seen.contains_key("seed") {
            return Err(Error::Config("seed is mandatory".into()));
        }
        for (k, v) in &seen {
            let v = v.as_str();
            match k.as_str() {
                "experiment" => {
                    if !EXPERIMENTS.contains(&v) {
                        return Err(Error::Config(format!("unknown experiment {v:?}; known: {}", EXPERIMENTS.join(", "))));
                    }
                    c.experiment = v.into();
                }
                "map" => c.map = v.into(),
                "samples" => c.samples = positive(k, v)? as usize,
                "horizon" => {
                    c.horizon = positive(k, v)? as usize;
                    if c.horizon < 4 {
                        return Err(Error::Config("horizon must be at least 4".into()));
                    }
                }
                "depth" => c.depth = positive(k, v)? as usize,
                "eps" => c.eps_grid = rational_list(k, v)?,
                "seed" => c.seed = v.parse().map_err(|_| Error::Config(format!("seed: bad value {v:?}")))?,
                "output" => c.output = Some(PathBuf::from(v)),
                "perturb" => {
                    c.perturb = match v {
                        "none" => PerturbKind::None,
                        "sqk" => PerturbKind::Sqk,
                        "pqr" => PerturbKind::Pqr,
                        _ => return Err(Error::Config(format!("perturb must be none, sqk or pqr, got {v:?}"))),
                    }
                }
                "perturb_q" => c.perturb_q = positive(k, v)?,
                "perturb_k" => c.perturb_k = positive(k, v)?,
                "perturb_r" => c.perturb_r = positive(k, v)? as usize,
                "perturb_eps" => c.perturb_eps = rational(k, v)?,
                "homeo" => {
                    c.homeo = v.parse().map_err(|_| Error::Config(format!("homeo: expected true or false, got {v:?}")))?
                }
                "q" => c.q = positive(k, v)?,
                "alpha" => c.alpha = rational(k, v)?,
                "max_period" => c.max_period = positive(k, v)? as usize,
                "x" => c.x = Some(rational(k, v)?),
                "eps0" => c.eps0 = rational(k, v)?,
                "measure" => c.measure = Some(v.into()),
                "lambdas" => c.lambdas = rational_list(k, v)?,
                _ => unreachable!("key list checked above"),
            }
        }
        let positive_r = |r: &Rational| r > &rat(0, 1);
        if !c.eps_grid.iter().all(positive_r) || c.eps_grid.is_empty() {
            return Err(Error::Config("every ε in the grid must be positive".into()));
        }
        if !positive_r(&c.perturb_eps) || !positive_r(&c.eps0) || !positive_r(&c.alpha) {
            return Err(Error::Config("perturb_eps, eps0 and alpha must be positive".into()));
        }
        if c.lambdas.iter().any(|l| !positive_r(l) || l >= &rat(1, 1)) {
            return Err(Error::Config("every λ must lie in (0,1)".into()));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut c = Self::parse(&text)?;
        c.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Ok(c)
    }

    pub fn monte_carlo(&self) -> MonteCarlo {
        MonteCarlo {
            samples: self.samples,
            horizon: self.horizon,
            seed: self.seed,
            depth: self.depth,
            policy: OrbitPolicy::default(),
        }
    }

    /// The map named by `map`, with the requested perturbation applied.
    pub fn build_map(&self) -> Result<BuiltMap> {
        let base = load_map(&self.map, &self.base_dir)?;
        match self.perturb {
            PerturbKind::None => Ok(BuiltMap { map: base, certificates: Vec::new(), report: None }),
            PerturbKind::Sqk => {
                let r = build_sqk_perturbation(&base, self.perturb_q, self.perturb_k, &self.perturb_eps, self.homeo)?;
                let report = serde_json::to_value(&r)?;
                Ok(BuiltMap { map: r.map, certificates: r.certificates, report: Some(report) })
            }
            PerturbKind::Pqr => {
                let r = build_pqr_perturbation(&base, self.perturb_q, self.perturb_r, &self.perturb_eps)?;
                let report = serde_json::to_value(&r)?;
                Ok(BuiltMap { map: r.map, certificates: r.certificates, report: Some(report) })
            }
        }
    }

    pub fn start_point(&self) -> Result<Point> {
        let x = self.x.clone().ok_or_else(|| Error::Config("x is required for this experiment".into()))?;
        Point::on_line(x).map_err(|e| Error::Config(e.to_string()))
    }

    /// `measure = x:mass, x:mass` (1D) or `x;y:mass, …` (2D).
    pub fn target_measure(&self) -> Result<Option<AtomicMeasure>> {
        let Some(text) = &self.measure else { return Ok(None) };
        parse_measure(text).map(Some)
    }
}

pub fn parse_measure(text: &str) -> Result<AtomicMeasure> {
    let atoms = text
        .split(',')
        .map(|atom| {
            let (pt, m) = atom
                .trim()
                .rsplit_once(':')
                .ok_or_else(|| Error::Config(format!("measure atom {atom:?} needs point:mass")))?;
            let coords = pt.split(';').map(|c| rational("measure", c.trim())).collect::<Result<Vec<_>>>()?;
            Ok((Point::new(coords).map_err(|e| Error::Config(e.to_string()))?, rational("measure", m.trim())?))
        })
        .collect::<Result<Vec<_>>>()?;
    AtomicMeasure::new(atoms).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_map(name: &str, base_dir: &Path) -> Result<CompositeMap> {
    if PRESETS.contains(&name) {
        return preset(name);
    }
    let path = base_dir.join(name);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("map {name:?} is neither a preset nor a readable file: {e}")))?;
    CompositeMap::from_json(&text)
}

/// A map together with the certificates its construction produced.
#[derive(Clone, Debug)]
pub struct BuiltMap {
    pub map: CompositeMap,
    pub certificates: Vec<ShrinkingCertificate>,
    pub report: Option<serde_json::Value>,
}

pub fn describe_grid(grid: &[Rational]) -> String {
    grid.iter().map(fmt_rational).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_examples() {
        let c = ExperimentConfig::parse("experiment = birkhoff\nmap = tent # preset\nsamples = 20\nseed = 3\n").unwrap();
        assert_eq!((c.samples, c.seed, c.map.as_str()), (20, 3, "tent"));
        for bad in ["seed = 1\nsamples = 0", "samples = 5", "seed = 1\nfoo = 2", "seed = 1\nexperiment = nope"] {
            assert!(matches!(ExperimentConfig::parse(bad), Err(Error::Config(_))), "{bad}");
        }
        let m = parse_measure("1/16:1/2, 3/16:1/2").unwrap();
        assert_eq!(m.len(), 2);
    }
}
