use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use shrinklab::error::{Error, Result};
use shrinklab::geometry::{Point, Simplex};
use shrinklab::lab::{self, load_map, parse_measure, ExperimentConfig};
use shrinklab::measures::{empirical_measure_with, weakstar_distance, OrbitPolicy, DEFAULT_DEPTH};
use shrinklab::numeric::{parse_rational, pow2_neg, Rational};
use shrinklab::par;
use shrinklab::perturb::{build_pqr_perturbation, build_sqk_perturbation};
use shrinklab::shadowing::ergodic_to_periodic_measure;
use shrinklab::shrinking::{certify_eventually_periodic, certify_periodic_shrinking, periodic_point_witness};

#[derive(Parser)]
#[command(name = "shrinklab", version, about = "Shrinking sets, empirical measures and shadowing in exact arithmetic")]
struct Cli {
    /// Worker threads (0 = one per core). Never changes the output.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a perturbation g of f with certified shrinking sets.
    Perturb {
        #[command(subcommand)]
        kind: PerturbCmd,
    },
    /// Decide whether a simplex is a (eventually) periodic shrinking set.
    Certify {
        #[arg(long)]
        map: String,
        /// Simplex vertices: `a,b` on [0,1] or `x;y|x;y|x;y` on the square.
        #[arg(long)]
        set: String,
        /// Periodic core when the set is only eventually periodic.
        #[arg(long)]
        core: Option<String>,
        #[arg(long)]
        period: usize,
        #[arg(long, default_value_t = 0)]
        transience: usize,
        /// Also look for the periodic point inside the core.
        #[arg(long)]
        witness: bool,
    },
    /// Empirical measure of x over n iterates.
    Empirical {
        #[arg(long)]
        map: String,
        /// `x` or `x;y`
        #[arg(long)]
        x: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_DEPTH)]
        depth: usize,
        /// Report the weak* distance to this measure (`x:mass, …`).
        #[arg(long)]
        compare: Option<String>,
    },
    /// Fraction of sampled points whose limit estimate is ε-close to a measure.
    PseudoPhysical {
        #[arg(long)]
        measure: String,
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Approximate the empirical measure along x by a periodic measure.
    Shadow {
        #[arg(long)]
        map: String,
        #[arg(long)]
        x: String,
        #[arg(long)]
        eps0: String,
        #[arg(long, default_value_t = 1000)]
        horizon: usize,
    },
    /// Periodic measures against sampled empirical limits.
    ClosureCompare {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Convex combinations of a certified periodic measure with λ → 1.
    EmptyInterior {
        /// Comma-separated λ values in (0,1).
        #[arg(long)]
        lambdas: Option<String>,
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Run a key = value config file and write report.json, table.csv, manifest.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's `output`, else `out/` beside it).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PerturbCmd {
    Sqk {
        #[arg(long)]
        map: String,
        #[arg(long)]
        q: u64,
        #[arg(long)]
        k: u64,
        #[arg(long)]
        eps: String,
        #[arg(long)]
        homeo: bool,
        /// Also write the serialized g here.
        #[arg(long)]
        out_map: Option<PathBuf>,
    },
    Pqr {
        #[arg(long)]
        map: String,
        #[arg(long)]
        q: u64,
        #[arg(long)]
        r: usize,
        #[arg(long)]
        eps: String,
        #[arg(long)]
        out_map: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    map: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    /// Comma-separated ε grid.
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    q: Option<u64>,
    #[arg(long)]
    max_period: Option<usize>,
    /// none, sqk or pqr
    #[arg(long)]
    perturb: Option<String>,
    #[arg(long)]
    perturb_q: Option<u64>,
    #[arg(long)]
    perturb_k: Option<u64>,
    #[arg(long)]
    perturb_r: Option<usize>,
    #[arg(long)]
    perturb_eps: Option<String>,
    #[arg(long)]
    homeo: bool,
}

impl ExperimentArgs {
    /// Renders the flags as config text so they go through the same validation as `run`.
    fn config(&self, experiment: &str, extra: &[(&str, String)]) -> Result<ExperimentConfig> {
        let mut lines = vec![format!("experiment = {experiment}"), format!("map = {}", self.map), format!("seed = {}", self.seed)];
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                lines.push(format!("{k} = {v}"));
            }
        };
        push("samples", self.samples.map(|v| v.to_string()));
        push("horizon", self.horizon.map(|v| v.to_string()));
        push("depth", self.depth.map(|v| v.to_string()));
        push("eps", self.eps.clone());
        push("q", self.q.map(|v| v.to_string()));
        push("max_period", self.max_period.map(|v| v.to_string()));
        push("perturb", self.perturb.clone());
        push("perturb_q", self.perturb_q.map(|v| v.to_string()));
        push("perturb_k", self.perturb_k.map(|v| v.to_string()));
        push("perturb_r", self.perturb_r.map(|v| v.to_string()));
        push("perturb_eps", self.perturb_eps.clone());
        push("homeo", self.homeo.then(|| "true".to_string()));
        for (k, v) in extra {
            push(k, Some(v.clone()));
        }
        let mut cfg = ExperimentConfig::parse(&lines.join("\n"))?;
        cfg.base_dir = PathBuf::from(".");
        Ok(cfg)
    }
}

fn rational(flag: &str, text: &str) -> Result<Rational> {
    parse_rational(text).map_err(|e| Error::Config(format!("--{flag}: {e}")))
}

fn point(flag: &str, text: &str) -> Result<Point> {
    let coords = text.split(';').map(|c| rational(flag, c.trim())).collect::<Result<Vec<_>>>()?;
    Point::new(coords).map_err(|e| Error::Config(format!("--{flag}: {e}")))
}

fn simplex(flag: &str, text: &str) -> Result<Simplex> {
    let verts = if text.contains('|') || text.contains(';') {
        text.split('|').map(|v| point(flag, v)).collect::<Result<Vec<_>>>()?
    } else {
        text.split(',').map(|v| point(flag, v)).collect::<Result<Vec<_>>>()?
    };
    Simplex::new(verts).map_err(|e| Error::Config(format!("--{flag}: {e}")))
}

fn map(name: &str) -> Result<shrinklab::maps::CompositeMap> {
    load_map(name, &PathBuf::from("."))
}

fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print(v: &Value) -> Result<()> {
    emit(&(serde_json::to_string_pretty(v)? + "\n"))
}

fn write_map(path: &Option<PathBuf>, g: &shrinklab::maps::CompositeMap) -> Result<()> {
    if let Some(p) = path {
        std::fs::write(p, g.to_json())?;
    }
    Ok(())
}

fn execute(cmd: Command, workers: usize) -> Result<()> {
    match cmd {
        Command::Perturb { kind } => match kind {
            PerturbCmd::Sqk { map: m, q, k, eps, homeo, out_map } => {
                let f = map(&m)?;
                let r = par::with_workers(workers, || build_sqk_perturbation(&f, q, k, &rational("eps", &eps)?, homeo))??;
                write_map(&out_map, &r.map)?;
                print(&serde_json::to_value(&r)?)
            }
            PerturbCmd::Pqr { map: m, q, r, eps, out_map } => {
                let f = map(&m)?;
                let rep = par::with_workers(workers, || build_pqr_perturbation(&f, q, r, &rational("eps", &eps)?))??;
                write_map(&out_map, &rep.map)?;
                print(&serde_json::to_value(&rep)?)
            }
        },
        Command::Certify { map: m, set, core, period, transience, witness } => {
            let f = map(&m)?;
            let tol = pow2_neg(40);
            let set = simplex("set", &set)?;
            let out = match core {
                None if transience == 0 => certify_periodic_shrinking(&f, &set, period, &tol)?,
                None => return Err(Error::Config("--transience > 0 needs --core".into())),
                Some(c) => certify_eventually_periodic(&f, &set, &simplex("core", &c)?, transience, period, &tol)?,
            };
            let mut v = json!({ "certification": out });
            if let (true, Some(c)) = (witness, out.certificate()) {
                v["witness"] = match periodic_point_witness(c, &f, &tol, 400) {
                    Ok(w) => serde_json::to_value(&w)?,
                    Err(e) => json!({ "error": e.to_string() }),
                };
            }
            print(&v)
        }
        Command::Empirical { map: m, x, n, depth, compare } => {
            let f = map(&m)?;
            let x = point("x", &x)?;
            let mu = empirical_measure_with(&f, &x, n, OrbitPolicy::default())?;
            let mut v = json!({ "n": n, "atoms": mu.len(), "measure": mu.to_doc() });
            if let Some(c) = compare {
                let nu = parse_measure(&c)?;
                v["distance"] = serde_json::to_value(weakstar_distance(&mu, &nu, depth)?)?;
            }
            print(&v)
        }
        Command::PseudoPhysical { measure, exp } => {
            let cfg = exp.config("pseudo-physical", &[("measure", measure.clone())])?;
            let built = cfg.build_map()?;
            let mu = parse_measure(&measure)?;
            let r = par::with_workers(workers, || lab::pseudo_physical_fraction(&built.map, &mu, &cfg))??;
            print(&serde_json::to_value(&r)?)
        }
        Command::Shadow { map: m, x, eps0, horizon } => {
            let f = map(&m)?;
            let x = point("x", &x)?;
            let eps0 = rational("eps0", &eps0)?;
            let r = ergodic_to_periodic_measure(&f, &x, &eps0, horizon)?;
            print(&serde_json::to_value(&r)?)
        }
        Command::ClosureCompare { exp } => {
            let cfg = exp.config("closure-compare", &[])?;
            let r = par::with_workers(workers, || {
                let built = cfg.build_map()?;
                lab::closure_comparison(&built.map, &built.certificates, &cfg)
            })??;
            print(&serde_json::to_value(&r)?)
        }
        Command::EmptyInterior { lambdas, exp } => {
            let extra: Vec<(&str, String)> = lambdas.map(|l| ("lambdas", l)).into_iter().collect();
            let cfg = exp.config("empty-interior", &extra)?;
            let r = par::with_workers(workers, || {
                let built = cfg.build_map()?;
                lab::empty_interior_probe(&built.map, &built.certificates, &cfg)
            })??;
            let verified = r.verified;
            print(&serde_json::to_value(&r)?)?;
            if !verified {
                return Err(Error::Verification("empty-interior checks failed".into()));
            }
            Ok(())
        }
        Command::Run { config, output } => {
            let bundle = lab::run_config_file(&config, output.as_deref(), workers)?;
            emit(&bundle.manifest)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command, cli.workers) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
