//! `fraccap`: command-line front end for the fractional capillarity toolkit.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical
//! non-convergence, 4 identity violation.

mod config;

use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fraccap_core::energies::{capillarity_energy, fractional_perimeter, verify_identities};
use fraccap_core::extension::{default_levels, extend, phi_profile, weighted_dirichlet, Domain, Trace};
use fraccap_core::interaction::SetRef;
use fraccap_core::minimizer::{blowup, find_contact_point, minimize};
use fraccap_core::younglaw::{contact_angle, young_table};
use fraccap_core::{Error, GridSet, Region};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use config::RunConfig;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_IDENTITY: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure { code: EXIT_CONFIG, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NoBracket(_) => EXIT_NUMERICAL,
            _ => EXIT_CONFIG,
        };
        Failure { code, message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "fraccap", version, about = "Fractional capillarity energies, extension monotonicity and Young's law")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand; they override the config file.
#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    sigma: Option<f64>,
    /// Dimension of the ambient space.
    #[arg(long)]
    n: Option<usize>,
    /// Cells per axis when rasterizing analytic sets.
    #[arg(long)]
    res: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rel_tol: Option<f64>,
    /// Manifest path when the primary output goes to stdout.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Capillarity energy of a set inside a container, term by term.
    Energy {
        #[arg(long)]
        set: PathBuf,
        #[arg(long)]
        container: PathBuf,
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Fractional perimeter of a set relative to a region.
    Perimeter {
        #[arg(long)]
        set: PathBuf,
        #[arg(long)]
        omega: PathBuf,
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Extension of a planar trace to the upper half-space.
    Extend {
        #[arg(long)]
        set: PathBuf,
        /// Highest sampled height.
        #[arg(long, default_value_t = 1.0)]
        top: f64,
        #[arg(long)]
        levels: Option<usize>,
        /// Also report the weighted Dirichlet energy in this half-ball.
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Monotone boundary quantity over a list of radii, as CSV.
    Phi {
        #[arg(long)]
        set: PathBuf,
        /// `a:b:k` for k equally spaced radii, or a comma-separated list.
        #[arg(long)]
        radii: String,
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Contact angle from the fractional Young law.
    Young {
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Contact angles over a grid of adhesion coefficients and orders, as CSV.
    YoungTable {
        #[arg(long, allow_hyphen_values = true)]
        sigmas: String,
        /// Orders, `a:b:k` or comma-separated.
        #[arg(long = "s")]
        s_values: String,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Anneals a droplet of fixed volume in a container.
    Minimize {
        #[arg(long)]
        container: PathBuf,
        /// Fraction of the container's cells.
        #[arg(long, conflicts_with = "volume_cells")]
        volume: Option<f64>,
        #[arg(long)]
        volume_cells: Option<usize>,
        #[arg(long)]
        s: Option<f64>,
        /// Final set, in the binary grid format.
        #[arg(long)]
        out: PathBuf,
        /// Per-sweep energy log, CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Blow-up of a set at a contact point on the wall.
    Blowup {
        #[arg(long)]
        set: PathBuf,
        /// Container used to locate the contact point; the upper half of
        /// the window if absent.
        #[arg(long)]
        container: Option<PathBuf>,
        /// Wall abscissa of the contact point; located automatically if absent.
        #[arg(long, allow_hyphen_values = true)]
        contact: Option<f64>,
        /// Decreasing radii, comma-separated or `a:b:k`.
        #[arg(long)]
        radii: String,
        /// Also compute the monotone quantity over the radii.
        #[arg(long)]
        phi: bool,
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Checks the energy identities on seeded random sets.
    VerifyIdentities {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1e-10)]
        tolerance: f64,
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut out, b| {
        let _ = write!(out, "{b:02x}");
        out
    })
}

/// Inputs read and outputs written by one run, for the manifest.
struct Run {
    command: &'static str,
    config: RunConfig,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    stdout: Option<Vec<u8>>,
}

impl Run {
    fn new(command: &'static str, common: &Common, s: Option<f64>) -> Result<Run, Failure> {
        let mut config = RunConfig::load(common.config.as_deref())?;
        if let Some(s) = s {
            config.kernel.s = s;
        }
        if let Some(n) = common.n {
            config.kernel.n = n;
        }
        if let Some(sigma) = common.sigma {
            config.sigma = sigma;
        }
        if let Some(res) = common.res {
            config.grid.resolution = res;
        }
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        if let Some(rel) = common.rel_tol {
            config.quadrature.rel_tol = rel;
        }
        config.anneal.seed = config.seed;
        config.validate()?;
        Ok(Run { command, config, inputs: Vec::new(), outputs: Vec::new(), stdout: None })
    }

    fn read(&mut self, path: &Path) -> Result<Vec<u8>, Failure> {
        let bytes = std::fs::read(path).map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.push(FileDigest { path: path.display().to_string(), sha256: digest(&bytes) });
        Ok(bytes)
    }

    fn load(&mut self, path: &Path) -> Result<Input, Failure> {
        let bytes = self.read(path)?;
        match GridSet::read_from(&mut BufReader::new(&bytes[..])) {
            Ok(g) => Ok(Input::Grid(g)),
            Err(Error::Format(_)) | Err(Error::Json(_)) => serde_json::from_slice::<Region>(&bytes)
                .map(Input::Region)
                .map_err(|e| Failure::config(format!("{} is neither a grid set nor a region: {e}", path.display()))),
            Err(e) => Err(e.into()),
        }
    }

    fn grid(&self, input: Input) -> Result<GridSet, Failure> {
        match input {
            Input::Grid(g) => Ok(g),
            Input::Region(r) => {
                let window = self.config.grid.window(self.config.kernel.n)?;
                Ok(GridSet::rasterize(&r, window, self.config.grid.resolution)?)
            }
        }
    }

    fn trace(&self, input: Input) -> Result<Trace, Failure> {
        match input {
            Input::Grid(g) => Ok(Trace::new(g)),
            Input::Region(r) => {
                let window = self.config.grid.window(2)?;
                Ok(Trace::from_region(&r, window, self.config.grid.resolution)?)
            }
        }
    }

    /// Writes to `path`, or keeps the bytes for stdout.
    fn emit(&mut self, path: Option<&Path>, bytes: Vec<u8>) -> Result<(), Failure> {
        match path {
            Some(p) => {
                std::fs::write(p, &bytes).map_err(|e| Failure::config(format!("cannot write {}: {e}", p.display())))?;
                self.outputs.push(FileDigest { path: p.display().to_string(), sha256: digest(&bytes) });
            }
            None => self.stdout.get_or_insert_with(Vec::new).extend_from_slice(&bytes),
        }
        Ok(())
    }

    fn emit_json(&mut self, path: Option<&Path>, value: &impl Serialize) -> Result<(), Failure> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::config(e.to_string()))?;
        bytes.push(b'\n');
        self.emit(path, bytes)
    }

    fn finish(self, manifest: Option<&Path>, status: u8) -> Result<(), Failure> {
        use std::io::Write;
        if let Some(bytes) = &self.stdout {
            std::io::stdout().write_all(bytes).map_err(|e| Failure::config(e.to_string()))?;
        }
        let path = match (manifest, self.outputs.first()) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(first)) => PathBuf::from(format!("{}.manifest.json", first.path)),
            (None, None) => return Ok(()),
        };
        let config_json = serde_json::to_vec(&json!({ "command": self.command, "config": &self.config }))
            .map_err(|e| Failure::config(e.to_string()))?;
        let arguments: Vec<String> = std::env::args().skip(1).collect();
        let manifest = json!({
            "tool": "fraccap",
            "versions": { "fraccap": env!("CARGO_PKG_VERSION") },
            "command": self.command,
            "arguments": arguments,
            "config": &self.config,
            "config_hash": digest(&config_json),
            "seed": self.config.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "exit_code": status,
        });
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Failure::config(e.to_string()))?;
        bytes.push(b'\n');
        std::fs::write(&path, bytes).map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))
    }
}

enum Input {
    Grid(GridSet),
    Region(Region),
}

/// `a:b:k` as k equally spaced values from a to b, or a comma-separated list.
fn parse_list(text: &str) -> Result<Vec<f64>, Failure> {
    let bad = |what: &str| Failure::config(format!("cannot parse {what} in {text:?}"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let a: f64 = parts[0].trim().parse().map_err(|_| bad("start"))?;
        let b: f64 = parts[1].trim().parse().map_err(|_| bad("end"))?;
        let k: usize = parts[2].trim().parse().map_err(|_| bad("count"))?;
        return match k {
            0 => Err(bad("count")),
            1 => Ok(vec![a]),
            _ => Ok((0..k).map(|i| (a * (k - 1 - i) as f64 + b * i as f64) / (k - 1) as f64).collect()),
        };
    }
    text.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad("value"))).collect()
}

fn csv_number(v: f64) -> String {
    format!("{v:.15e}")
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let mut status = 0u8;
    let (run, manifest) = match cli.command {
        Command::Energy { set, container, s, out, common } => {
            let mut run = Run::new("energy", &common, s)?;
            let e = run.load(&set)?;
            let e = run.grid(e)?;
            let c = run.load(&container)?;
            let cfg = &run.config;
            let breakdown = match &c {
                Input::Grid(g) => capillarity_energy(&e, SetRef::Grid(g), cfg.sigma, &cfg.kernel, &cfg.quadrature)?,
                Input::Region(r) => capillarity_energy(&e, SetRef::Region(r), cfg.sigma, &cfg.kernel, &cfg.quadrature)?,
            };
            if !breakdown.total.converged {
                status = EXIT_NUMERICAL;
            }
            run.emit_json(out.as_deref(), &breakdown)?;
            (run, common.manifest)
        }
        Command::Perimeter { set, omega, s, out, common } => {
            let mut run = Run::new("perimeter", &common, s)?;
            let f = run.load(&set)?;
            let f = run.grid(f)?;
            let w = run.load(&omega)?;
            let cfg = &run.config;
            let breakdown = match &w {
                Input::Grid(g) => fractional_perimeter(&f, SetRef::Grid(g), &cfg.kernel, &cfg.quadrature)?,
                Input::Region(r) => fractional_perimeter(&f, SetRef::Region(r), &cfg.kernel, &cfg.quadrature)?,
            };
            if !breakdown.total.converged {
                status = EXIT_NUMERICAL;
            }
            run.emit_json(out.as_deref(), &breakdown)?;
            (run, common.manifest)
        }
        Command::Extend { set, top, levels, radius, s, out, common } => {
            let mut run = Run::new("extend", &common, s)?;
            let input = run.load(&set)?;
            let trace = run.trace(input)?;
            let cfg = &run.config;
            let levels = levels.unwrap_or_else(|| default_levels(trace.grid.h(), top));
            let u = extend(&trace, top, levels, &cfg.kernel, &cfg.quadrature)?;
            let dirichlet = radius.map(|r| weighted_dirichlet(&u, &Domain::HalfBall { radius: r })).transpose()?;
            let body = json!({
                "s": u.s(),
                "xs": u.xs(),
                "ys": u.ys(),
                "heights": u.heights(),
                "values": u.values(),
                "clamped_excess": u.clamped_excess,
                "quadrature_error": u.quadrature_error,
                "dirichlet": dirichlet,
            });
            run.emit_json(out.as_deref(), &body)?;
            (run, common.manifest)
        }
        Command::Phi { set, radii, s, out, common } => {
            let mut run = Run::new("phi", &common, s)?;
            let radii = parse_list(&radii)?;
            let input = run.load(&set)?;
            let trace = run.trace(input)?;
            let cfg = &run.config;
            let profile = phi_profile(&trace, &radii, cfg.sigma, &cfg.kernel, &cfg.quadrature, &cfg.phi)?;
            let mut csv = String::from("r,phi,G,J,err\n");
            for k in 0..profile.radii.len() {
                let row = [profile.radii[k], profile.phi[k], profile.dirichlet_part[k], profile.wetting_part[k], profile.errors[k]];
                csv.push_str(&row.map(csv_number).join(","));
                csv.push('\n');
            }
            run.emit(out.as_deref(), csv.into_bytes())?;
            (run, common.manifest)
        }
        Command::Young { s, tol, out, common } => {
            let mut run = Run::new("young", &common, s)?;
            if let Some(t) = tol {
                run.config.young_tol = t;
            }
            let cfg = &run.config;
            let solution = contact_angle(cfg.sigma, cfg.kernel.s, cfg.young_tol)?;
            if solution.residual > cfg.young_tol {
                status = EXIT_NUMERICAL;
            }
            run.emit_json(out.as_deref(), &solution)?;
            (run, common.manifest)
        }
        Command::YoungTable { sigmas, s_values, tol, out, common } => {
            let mut run = Run::new("young-table", &common, None)?;
            if let Some(t) = tol {
                run.config.young_tol = t;
            }
            let table = young_table(&parse_list(&sigmas)?, &parse_list(&s_values)?, run.config.young_tol);
            if table.theta.iter().flatten().any(|v| v.is_err()) {
                status = EXIT_NUMERICAL;
            }
            run.emit(out.as_deref(), table.to_csv().into_bytes())?;
            (run, common.manifest)
        }
        Command::Minimize { container, volume, volume_cells, s, out, trace, common } => {
            let mut run = Run::new("minimize", &common, s)?;
            let c = run.load(&container)?;
            let c = run.grid(c)?;
            let cells = match (volume, volume_cells) {
                (_, Some(v)) => v,
                (Some(f), None) if (0.0..=1.0).contains(&f) => (f * c.count() as f64).round() as usize,
                (Some(_), None) => return Err(Failure::config("volume fraction must lie in [0, 1]")),
                (None, None) => return Err(Failure::config("give --volume or --volume-cells")),
            };
            run.config.anneal.volume_cells = cells;
            let cfg = run.config.clone();
            let outcome = minimize(&c, cfg.sigma, &cfg.kernel, &cfg.anneal, &cfg.quadrature)?;
            run.emit(Some(&out), outcome.set.to_bytes())?;
            if let Some(t) = &trace {
                run.emit(Some(t), outcome.trace_csv().into_bytes())?;
            }
            let summary = json!({
                "volume_cells": cells,
                "energy": outcome.energy,
                "initial_temperature": outcome.initial_temperature,
                "proposals": outcome.proposals,
                "accepted": outcome.accepted,
                "polish_swaps": outcome.polish_swaps,
            });
            run.emit_json(None, &summary)?;
            (run, common.manifest)
        }
        Command::Blowup { set, container, contact, radii, phi, s, out, common } => {
            let mut run = Run::new("blowup", &common, s)?;
            let radii = parse_list(&radii)?;
            let e = run.load(&set)?;
            let e = run.grid(e)?;
            let container = match &container {
                Some(p) => {
                    let c = run.load(p)?;
                    run.grid(c)?
                }
                None => GridSet::rasterize(&Region::HalfSpace, e.window().clone(), e.resolution())?,
            };
            let point = match contact {
                Some(x) => [x, 0.0],
                None => find_contact_point(&e, &container)?.0,
            };
            let cfg = &run.config;
            let mut opts = cfg.blowup;
            if phi {
                opts.phi_sigma = Some(cfg.sigma);
            }
            let report = blowup(&e, point, &radii, &cfg.kernel, &cfg.quadrature, &opts)?;
            let mut body = serde_json::to_value(&report).map_err(|e| Failure::config(e.to_string()))?;
            body["fitted_angle_degrees"] = json!(report.fitted_angle.to_degrees());
            body["consecutive_decreasing"] = json!(report.consecutive_decreasing());
            run.emit_json(out.as_deref(), &body)?;
            (run, common.manifest)
        }
        Command::VerifyIdentities { trials, tolerance, s, out, common } => {
            let resolution = common.res.unwrap_or(64);
            let mut run = Run::new("verify-identities", &common, s)?;
            let cfg = &run.config;
            let reports = verify_identities(&cfg.kernel, &cfg.quadrature, resolution, trials, cfg.seed, tolerance)?;
            if reports.iter().any(|r| !r.passed) {
                status = EXIT_IDENTITY;
            }
            run.emit_json(out.as_deref(), &reports)?;
            (run, common.manifest)
        }
    };
    run.finish(manifest.as_deref(), status)?;
    Ok(status)
}

fn configure_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("FRACCAP_THREADS") {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| Failure::config(format!("FRACCAP_THREADS={v:?} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::config(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match configure_threads().and_then(|_| run(cli)) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("fraccap: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
