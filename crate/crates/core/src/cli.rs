//! Command-line front end. Every output file carries the fully resolved
//! configuration; values come from flags, then a `key=value` config file,
//! then built-in defaults.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::ensemble::{evolve_ensemble, histogram, mean_displacement, normal_cloud, points_csv, FailurePolicy, GridSpec};
use crate::error::{Error, Result};
use crate::experiments::{bisect_bifurcation, convergence_study, scan_lambda};
use crate::integrators::{be_step, StepConfig, DEFAULT_NEWTON_MAX_ITER, DEFAULT_NEWTON_TOL};
use crate::lyapunov::{analyze, Horizon, DEFAULT_BURN_IN_FRACTION};
use crate::model::{ModelParams, Vec2};
use crate::noise::{derive_seed, domain, CounterStream, NoisePath};
use crate::rds::{CocycleContext, Direction};
use crate::selftest;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "HOPF_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_ACCEPTANCE: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "hopf",
    version,
    about = "Backward Euler experiments for the stochastic Hopf normal form with shear"
)]
pub struct Cli {
    /// Flat `key=value` configuration file (flags take precedence).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default: $HOPF_OUT, else the current directory).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Also write gnuplot scripts next to the data files.
    #[arg(long, global = true)]
    pub gnuplot: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// Linear growth rate.
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// Frequency.
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Cubic damping coefficient.
    #[arg(long)]
    pub a: Option<f64>,
    /// Shear strength.
    #[arg(long, allow_negative_numbers = true)]
    pub b: Option<f64>,
    /// Noise intensity.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Step size.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Seed, decimal or 0x-prefixed hexadecimal.
    #[arg(long)]
    pub seed: Option<String>,
    /// Newton residual tolerance.
    #[arg(long)]
    pub newton_tol: Option<f64>,
    /// Newton iteration cap.
    #[arg(long)]
    pub newton_max_iter: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Tangent and Furstenberg-Khasminskii Lyapunov estimates on one path.
    Lyap {
        #[command(flatten)]
        model: ModelArgs,
        /// Final time.
        #[arg(long = "T")]
        t_final: Option<f64>,
        /// Discarded initial time (default: 10% of T).
        #[arg(long)]
        burn_in: Option<f64>,
    },
    /// Lyapunov exponent over an alpha x b grid.
    Scan {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "T")]
        t_final: Option<f64>,
        #[arg(long)]
        burn_in: Option<f64>,
        /// `min:max:count` or a comma-separated list.
        #[arg(long, allow_hyphen_values = true)]
        alpha_grid: Option<String>,
        /// `min:max:count` or a comma-separated list.
        #[arg(long, allow_hyphen_values = true)]
        b_grid: Option<String>,
        /// Also write a 16-bit PGM heatmap of the exponents.
        #[arg(long)]
        pgm: bool,
    },
    /// Bisection for the shear value where the exponent changes sign.
    Bisect {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "T")]
        t_final: Option<f64>,
        #[arg(long)]
        burn_in: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        b_lo: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        b_hi: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        /// Number of noise seeds averaged per evaluation.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Push a point cloud forward and rasterise it at snapshot times.
    Attractor {
        #[command(flatten)]
        model: ModelArgs,
        /// Number of initial points (standard normal cloud).
        #[arg(long)]
        n: Option<usize>,
        /// Comma-separated snapshot times.
        #[arg(long)]
        snapshots: Option<String>,
        /// Cells per axis.
        #[arg(long)]
        grid: Option<usize>,
        /// Half-width of the square raster, or `auto` to fit each snapshot.
        #[arg(long)]
        bounds: Option<String>,
        /// `abort` or `drop` on a failed point.
        #[arg(long)]
        policy: Option<String>,
        /// Also export each snapshot as x,y CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Diameter of a point cloud over time.
    Sync {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long = "T")]
        t_final: Option<f64>,
        /// Time between samples.
        #[arg(long)]
        every: Option<f64>,
    },
    /// Strong convergence study against a fine Euler-Maruyama reference.
    Converge {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "T")]
        t_final: Option<f64>,
        /// Comma-separated step sizes.
        #[arg(long)]
        taus: Option<String>,
        #[arg(long)]
        refinement: Option<usize>,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Residual table for the cocycle and conjugacy identities.
    Verify {
        #[command(flatten)]
        model: ModelArgs,
        /// Largest step count checked.
        #[arg(long)]
        k: Option<usize>,
        /// Number of random initial states.
        #[arg(long)]
        samples: Option<usize>,
        /// Ornstein-Uhlenbeck rate.
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Runs the acceptance suite.
    Selftest {
        /// Comma-separated criterion numbers (default: all).
        #[arg(long)]
        only: Option<String>,
    },
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_VALIDATION
            }
        }
    }
}

fn execute(cli: Cli) -> Result<i32> {
    let file = match &cli.config {
        Some(path) => parse_config(&fs::read_to_string(path)?)?,
        None => BTreeMap::new(),
    };
    let res = Resolver { file };
    let out = match &cli.out {
        Some(p) => p.clone(),
        None => match res.file.get("out") {
            Some(s) => PathBuf::from(s),
            None => std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")),
        },
    };
    let threads = match cli.threads {
        Some(t) => Some(t),
        None => res.opt_parse::<usize>("threads")?,
    };
    let ctx = RunContext {
        res,
        out,
        gnuplot: cli.gnuplot,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::InvalidParameter("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;
    pool.install(|| dispatch(&ctx, cli.command))
}

/// Parses a flat `key=value` file. Blank lines and lines starting with `#`
/// are ignored.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::InvalidParameter(format!("config line {}: expected key=value, got '{line}'", lineno + 1))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Decimal or `0x`-prefixed hexadecimal.
pub fn parse_seed(s: &str) -> Result<u64> {
    let s = s.trim();
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|_| Error::InvalidParameter(format!("invalid seed '{s}'")))
}

/// `min:max:count` (inclusive, evenly spaced) or `v1,v2,...`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidParameter(format!("invalid grid '{s}'"));
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        return match n {
            0 => Err(bad()),
            1 => Ok(vec![lo]),
            _ => Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()),
        };
    }
    parse_list(s)
}

pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("invalid number '{v}' in '{s}'")))
        })
        .collect()
}

struct Resolver {
    file: BTreeMap<String, String>,
}

impl Resolver {
    fn opt_parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidParameter(format!("config key {key}: cannot parse '{v}'"))),
        }
    }

    fn value<T: std::str::FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.opt_parse(key)?.unwrap_or(default)),
        }
    }

    fn text(&self, flag: Option<&String>, key: &str) -> Option<String> {
        flag.cloned().or_else(|| self.file.get(key).cloned())
    }

    fn model(&self, m: &ModelArgs, default_b: f64) -> Result<(ModelParams, f64, u64)> {
        let p = ModelParams::new(
            self.value(m.alpha, "alpha", 1.0)?,
            self.value(m.beta, "beta", 1.0)?,
            self.value(m.a, "a", 1.0)?,
            self.value(m.b, "b", default_b)?,
            self.value(m.sigma, "sigma", 1.0)?,
        )?;
        let tau = self.value(m.tau, "tau", 1e-3)?;
        let seed = match self.text(m.seed.as_ref(), "seed") {
            Some(s) => parse_seed(&s)?,
            None => 1,
        };
        Ok((p, tau, seed))
    }
}

impl Resolver {
    fn step_config(&self, m: &ModelArgs, p: &ModelParams, tau: f64) -> Result<StepConfig> {
        StepConfig::new(p, tau)?.with_newton(
            self.value(m.newton_tol, "newton_tol", DEFAULT_NEWTON_TOL)?,
            self.value(m.newton_max_iter, "newton_max_iter", DEFAULT_NEWTON_MAX_ITER)?,
        )
    }
}

fn newton_json(cfg: &StepConfig) -> Value {
    json!({"tol": cfg.newton_tol(), "max_iter": cfg.newton_max_iter()})
}

struct RunContext {
    res: Resolver,
    out: PathBuf,
    gnuplot: bool,
}

impl RunContext {
    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        fs::write(&path, bytes)?;
        Ok(path)
    }

    fn write_json(&self, name: &str, value: &Value) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
        self.write(name, format!("{text}\n").as_bytes())
    }

    fn write_gnuplot(&self, name: &str, script: &str) -> Result<()> {
        if self.gnuplot {
            self.write(name, script.as_bytes())?;
        }
        Ok(())
    }
}

fn csv_header(config: &Value) -> String {
    format!("# hopf {}\n# config {}\n", env!("CARGO_PKG_VERSION"), config)
}

fn params_json(p: &ModelParams) -> Value {
    serde_json::to_value(p).unwrap_or(Value::Null)
}

fn horizon(res: &Resolver, t_flag: Option<f64>, burn_flag: Option<f64>, default_t: f64) -> Result<Horizon> {
    let t = res.value(t_flag, "T", default_t)?;
    let burn = res.value(burn_flag, "burn_in", DEFAULT_BURN_IN_FRACTION * t)?;
    Horizon::new(t, burn)
}

fn dispatch(ctx: &RunContext, command: Command) -> Result<i32> {
    let res = &ctx.res;
    match command {
        Command::Lyap { model, t_final, burn_in } => {
            let (p, tau, seed) = res.model(&model, 10.0)?;
            let h = horizon(res, t_final, burn_in, 500.0)?;
            let cfg = res.step_config(&model, &p, tau)?;
            let path = NoisePath::new(seed, tau)?;
            let e1 = Vec2::new(1.0, 0.0);
            let r = analyze(&p, &cfg, &path, e1, e1, &h)?;
            let config = json!({"command": "lyap", "params": params_json(&p), "tau": tau,
                "T": h.t_final, "burn_in": h.burn_in, "seed": seed, "x0": [1.0, 0.0], "u0": [1.0, 0.0],
                "newton": newton_json(&cfg)});
            let mut csv = csv_header(&config);
            csv.push_str("alpha,beta,a,b,sigma,tau,T,seed,method,lambda_hat,std_error,gap_estimate\n");
            for est in [&r.tangent, &r.fk] {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                    p.alpha,
                    p.beta,
                    p.a,
                    p.b,
                    p.sigma,
                    tau,
                    h.t_final,
                    seed,
                    est.method.name(),
                    est.lambda_hat,
                    est.std_error,
                    r.gap
                ));
            }
            ctx.write("lyap.csv", csv.as_bytes())?;
            print!("{csv}");
            Ok(EXIT_OK)
        }
        Command::Scan {
            model,
            t_final,
            burn_in,
            alpha_grid,
            b_grid,
            pgm,
        } => {
            let (p, tau, seed) = res.model(&model, 10.0)?;
            let h = horizon(res, t_final, burn_in, 500.0)?;
            let ag = parse_grid(&res.text(alpha_grid.as_ref(), "alpha_grid").unwrap_or("-1:3:9".into()))?;
            let bg = parse_grid(&res.text(b_grid.as_ref(), "b_grid").unwrap_or("0:15:16".into()))?;
            let e1 = Vec2::new(1.0, 0.0);
            let sweep = scan_lambda(&p, &ag, &bg, tau, &h, seed, e1, e1)?;
            let config = json!({"command": "scan", "params": params_json(&p), "tau": tau, "T": h.t_final,
                "burn_in": h.burn_in, "seed": seed, "alpha_grid": ag, "b_grid": bg});
            let mut csv = csv_header(&config);
            csv.push_str("alpha\\b");
            for b in &bg {
                csv.push_str(&format!(",{b}"));
            }
            csv.push('\n');
            let mut cells = csv_header(&config);
            cells.push_str("alpha,b,lambda_hat,std_error\n");
            for (i, a) in ag.iter().enumerate() {
                csv.push_str(&a.to_string());
                for (j, b) in bg.iter().enumerate() {
                    csv.push_str(&format!(",{}", sweep.lambda_matrix[i][j]));
                    cells.push_str(&format!("{a},{b},{},{}\n", sweep.lambda_matrix[i][j], sweep.std_errors[i][j]));
                }
                csv.push('\n');
            }
            ctx.write("scan.csv", csv.as_bytes())?;
            ctx.write("scan_cells.csv", cells.as_bytes())?;
            ctx.write_json("scan.json", &json!({"config": config, "result": sweep}))?;
            if pgm {
                ctx.write("scan.pgm", &heatmap_pgm(&sweep.lambda_matrix))?;
            }
            ctx.write_gnuplot(
                "scan.gp",
                "set datafile separator ','\nset xlabel 'b'\nset ylabel 'alpha'\nset palette defined (-1 'blue', 0 'white', 1 'red')\n\
                 plot 'scan_cells.csv' using 2:1:3 with image notitle, \
                 'scan_cells.csv' using 2:1:($3 > 0 ? 1 : 0) with points pt 0 notitle\npause -1\n",
            )?;
            for (i, j, msg) in &sweep.failures {
                eprintln!("cell ({i}, {j}) failed: {msg}");
            }
            println!(
                "{} cells, {} failed, {} contour points",
                ag.len() * bg.len(),
                sweep.failures.len(),
                sweep.zero_contour.len()
            );
            Ok(EXIT_OK)
        }
        Command::Bisect {
            model,
            t_final,
            burn_in,
            b_lo,
            b_hi,
            tol,
            seeds,
        } => {
            let (p, tau, seed) = res.model(&model, 2.0)?;
            let h = horizon(res, t_final, burn_in, 500.0)?;
            let lo = res.value(b_lo, "b_lo", 4.0)?;
            let hi = res.value(b_hi, "b_hi", 7.0)?;
            let tol = res.value(tol, "tol", 0.25)?;
            let n = res.value(seeds, "seeds", 3)?;
            let seed_list: Vec<u64> = (0..n as u64).map(|s| derive_seed(seed, &[s])).collect();
            let e1 = Vec2::new(1.0, 0.0);
            let bis = bisect_bifurcation(&p, lo, hi, tau, &h, tol, &seed_list, e1, e1)?;
            let config = json!({"command": "bisect", "params": params_json(&p), "tau": tau, "T": h.t_final,
                "burn_in": h.burn_in, "seed": seed, "seeds": seed_list, "b_lo": lo, "b_hi": hi, "tol": tol});
            ctx.write_json("bisect.json", &json!({"config": config, "result": bis}))?;
            println!("b* = {}", bis.b_star);
            Ok(EXIT_OK)
        }
        Command::Attractor {
            model,
            n,
            snapshots,
            grid,
            bounds,
            policy,
            csv,
        } => {
            let (p, tau, seed) = res.model(&model, 15.0)?;
            let n = res.value(n, "n", 10_000)?;
            let times = parse_list(&res.text(snapshots.as_ref(), "snapshots").unwrap_or("0,10,20".into()))?;
            let cells = res.value(grid, "grid", 512)?;
            let bounds = res.text(bounds.as_ref(), "bounds").unwrap_or("3".into());
            let policy = match res.text(policy.as_ref(), "policy").as_deref() {
                None | Some("abort") => FailurePolicy::Abort,
                Some("drop") => FailurePolicy::Drop,
                Some(other) => return Err(Error::InvalidParameter(format!("unknown policy '{other}'"))),
            };
            let fixed = match bounds.as_str() {
                "auto" => None,
                w => Some(GridSpec::square(
                    w.parse()
                        .map_err(|_| Error::InvalidParameter(format!("invalid bounds '{w}'")))?,
                    cells,
                )?),
            };
            let t_final = times.iter().copied().fold(0.0, f64::max);
            let cfg = res.step_config(&model, &p, tau)?;
            let path = NoisePath::new(seed, tau)?;
            let cloud = normal_cloud(seed, n);
            let run = evolve_ensemble(&p, &cfg, &path, &cloud, t_final, &times, policy)?;
            let config = json!({"command": "attractor", "params": params_json(&p), "tau": tau, "seed": seed,
                "n": n, "snapshots": times, "grid": cells, "bounds": bounds,
                "policy": format!("{policy:?}").to_lowercase(), "initial_cloud": "standard normal",
                "newton": newton_json(&cfg)});
            for snap in &run.snapshots {
                let spec = match fixed {
                    Some(s) => s,
                    None => GridSpec::fit(&snap.points, cells, cells)?,
                };
                let hist = histogram(&snap.points, &spec);
                let stem = format!("attractor_t{}", snap.time);
                ctx.write(&format!("{stem}.pgm"), &hist.to_pgm())?;
                let (lo, hi) = hist.log_range();
                ctx.write_json(
                    &format!("{stem}.json"),
                    &json!({"params": params_json(&p), "seed": seed, "tau": tau, "time": snap.time,
                        "bounds": [spec.x_min, spec.x_max, spec.y_min, spec.y_max], "nx": spec.nx, "ny": spec.ny,
                        "total": hist.total, "out_of_bounds": hist.out_of_bounds,
                        "occupied_cells": hist.occupied_cells(), "diameter": snap.diameter,
                        "log10_density_range": [lo, hi], "config": config}),
                )?;
                if csv {
                    let mut text = csv_header(&config);
                    text.push_str(&points_csv(&snap.points));
                    ctx.write(&format!("{stem}.csv"), text.as_bytes())?;
                    ctx.write_gnuplot(
                        &format!("{stem}.gp"),
                        &format!("set datafile separator ','\nset size square\nplot '{stem}.csv' using 1:2 with dots notitle\npause -1\n"),
                    )?;
                }
                println!(
                    "t = {}: {} points, {} occupied cells, diameter {:.4e}",
                    snap.time,
                    snap.points.len(),
                    hist.occupied_cells(),
                    snap.diameter
                );
            }
            if !run.dropped.is_empty() {
                eprintln!("dropped {} points", run.dropped.len());
            }
            Ok(EXIT_OK)
        }
        Command::Sync { model, n, t_final, every } => {
            let (p, tau, seed) = res.model(&model, 2.0)?;
            let n = res.value(n, "n", 1000)?;
            let t_final = res.value(t_final, "T", 40.0)?;
            let every = res.value(every, "every", 1.0)?;
            if !(every > 0.0) {
                return Err(Error::InvalidParameter("--every must be positive".into()));
            }
            let count = (t_final / every).round() as usize;
            let times: Vec<f64> = (0..=count).map(|i| (i as f64 * every).min(t_final)).collect();
            let cfg = res.step_config(&model, &p, tau)?;
            let path = NoisePath::new(seed, tau)?;
            let cloud = normal_cloud(seed, n);
            let run = evolve_ensemble(&p, &cfg, &path, &cloud, t_final, &times, FailurePolicy::Abort)?;
            let config = json!({"command": "sync", "params": params_json(&p), "tau": tau, "seed": seed,
                "n": n, "T": t_final, "every": every, "newton": newton_json(&cfg)});
            let mut csv = csv_header(&config);
            csv.push_str("time,diameter,mean_x,mean_y,mean_displacement\n");
            for (i, s) in run.snapshots.iter().enumerate() {
                let disp = if i == 0 {
                    0.0
                } else {
                    mean_displacement(s, &run.snapshots[i - 1])
                };
                csv.push_str(&format!("{},{},{},{},{}\n", s.time, s.diameter, s.mean.x, s.mean.y, disp));
            }
            ctx.write("sync.csv", csv.as_bytes())?;
            ctx.write_gnuplot(
                "sync.gp",
                "set datafile separator ','\nset logscale y\nset xlabel 't'\nset ylabel 'diameter'\n\
                 plot 'sync.csv' using 1:2 with lines notitle\npause -1\n",
            )?;
            if let Some(last) = run.snapshots.last() {
                println!("diameter at t = {}: {:.6e}", last.time, last.diameter);
            }
            Ok(EXIT_OK)
        }
        Command::Converge {
            model,
            t_final,
            taus,
            refinement,
            seeds,
        } => {
            let (p, _, seed) = res.model(&model, 2.0)?;
            let t_final = res.value(t_final, "T", 1.0)?;
            let taus = match res.text(taus.as_ref(), "taus") {
                Some(s) => parse_list(&s)?,
                None => (5..=9).map(|e| 0.2 / f64::powi(2.0, e)).collect(),
            };
            let refinement = res.value(refinement, "refinement", 256)?;
            let n_seeds = res.value(seeds, "seeds", 256)?;
            let e1 = Vec2::new(1.0, 0.0);
            let r = convergence_study(&p, &taus, refinement, t_final, n_seeds, seed, e1, e1)?;
            let config = json!({"command": "converge", "params": params_json(&p), "T": t_final, "seed": seed,
                "taus": taus, "refinement": refinement, "seeds": n_seeds});
            let mut csv = csv_header(&config);
            csv.push_str("tau,err_state,err_dir,se_state,se_dir\n");
            for i in 0..r.tau_list.len() {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.tau_list[i], r.rms_errors_state[i], r.rms_errors_direction[i], r.se_state[i], r.se_direction[i]
                ));
            }
            ctx.write("converge.csv", csv.as_bytes())?;
            ctx.write_json("converge.json", &json!({"config": config, "result": r}))?;
            ctx.write_gnuplot(
                "converge.gp",
                "set datafile separator ','\nset logscale xy\nset xlabel 'tau'\nset ylabel 'RMS sup error'\n\
                 plot 'converge.csv' using 1:2 with linespoints title 'state', \
                 '' using 1:3 with linespoints title 'direction'\npause -1\n",
            )?;
            println!(
                "order(state) = {:.4}, order(direction) = {:.4}",
                r.fitted_order_state, r.fitted_order_direction
            );
            Ok(EXIT_OK)
        }
        Command::Verify { model, k, samples, gamma } => {
            let (p, tau, seed) = res.model(&model, 10.0)?;
            let k = res.value(k, "k", 10)?;
            let samples = res.value(samples, "samples", 20)?;
            let gamma = res.value(gamma, "gamma", 1.0)?;
            let table = verify_table(p, tau, seed, gamma, k, samples)?;
            let config = json!({"command": "verify", "params": params_json(&p), "tau": tau, "seed": seed,
                "k": k, "samples": samples, "gamma": gamma});
            let mut csv = csv_header(&config);
            csv.push_str("identity,max_residual,samples,threshold,pass\n");
            println!("{:<12} {:>14} {:>8} {:>12} {:>6}", "identity", "max residual", "samples", "threshold", "pass");
            let mut all = true;
            for row in &table {
                all &= row.pass;
                println!(
                    "{:<12} {:>14.3e} {:>8} {:>12} {:>6}",
                    row.identity, row.max_residual, row.samples, row.threshold, row.pass
                );
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    row.identity, row.max_residual, row.samples, row.threshold, row.pass
                ));
            }
            ctx.write("verify.csv", csv.as_bytes())?;
            Ok(if all { EXIT_OK } else { EXIT_ACCEPTANCE })
        }
        Command::Selftest { only } => {
            let ids: Vec<u8> = match res.text(only.as_ref(), "only") {
                Some(s) => s
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse()
                            .map_err(|_| Error::InvalidParameter(format!("invalid criterion '{v}'")))
                    })
                    .collect::<Result<_>>()?,
                None => selftest::CRITERIA.iter().map(|c| c.0).collect(),
            };
            let mut outcomes = Vec::new();
            for id in ids {
                let o = selftest::run_criterion(id);
                println!("{o}");
                outcomes.push(o);
            }
            ctx.write_json("selftest.json", &json!({"criteria": outcomes}))?;
            Ok(if outcomes.iter().all(|o| o.passed) {
                EXIT_OK
            } else {
                EXIT_ACCEPTANCE
            })
        }
    }
}

/// Linear 16-bit grey map of a matrix (NaN cells black), first row at the
/// bottom.
fn heatmap_pgm(m: &[Vec<f64>]) -> Vec<u8> {
    let ny = m.len();
    let nx = m.first().map_or(0, Vec::len);
    let finite = m.iter().flatten().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    let mut out = format!("P5\n{nx} {ny}\n65535\n").into_bytes();
    for row in m.iter().rev() {
        for &v in row {
            let g = if v.is_finite() && hi > lo {
                ((v - lo) / (hi - lo) * 65535.0).round() as u16
            } else {
                0
            };
            out.extend_from_slice(&g.to_be_bytes());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyRow {
    pub identity: &'static str,
    pub max_residual: f64,
    pub samples: usize,
    pub threshold: &'static str,
    pub pass: bool,
}

/// Worst scaled residuals of the cocycle identity over `k, l <= k_max` and
/// of the conjugacy relation over `k <= k_max`.
pub fn verify_table(p: ModelParams, tau: f64, seed: u64, gamma: f64, k_max: usize, samples: usize) -> Result<Vec<VerifyRow>> {
    let ctx = CocycleContext::from_seed(p, tau, seed, gamma)?;
    let cfg = *ctx.cfg();
    let stream = CounterStream::new(seed, domain::SAMPLING);
    let mut worst_cocycle = 0.0_f64;
    let mut worst_conj = 0.0_f64;
    let mut n_cocycle = 0;
    let mut n_conj = 0;
    for i in 0..samples {
        let mut u = [0.0; 2];
        stream.uniforms(i as i64, &mut u);
        let r = 3.0 * u[0];
        let t = std::f64::consts::TAU * u[1];
        let x = Vec2::new(r * t.cos(), r * t.sin());
        let scale = 1.0 + x.norm();
        let mut whole = vec![x];
        for j in 1..=(2 * k_max) as i64 {
            let last = whole[whole.len() - 1];
            whole.push(be_step(&p, &cfg, last, ctx.path().increment(j)).map_err(|e| e.at_step(j))?);
        }
        for l in 0..=k_max {
            let shifted = ctx.shift(l as i64);
            let mut y = whole[l];
            for k in 1..=k_max {
                y = be_step(&p, &cfg, y, shifted.path().increment(k as i64))?;
                worst_cocycle = worst_cocycle.max((whole[k + l] - y).norm() / scale);
                n_cocycle += 1;
            }
        }
        let mut hat = ctx.transform(0, x, Direction::Forward)?;
        for k in 1..=k_max {
            hat = ctx.hat_step(k as i64 - 1, hat)?;
            let back = ctx.transform(k as i64, hat, Direction::Inverse)?;
            worst_conj = worst_conj.max((whole[k] - back).norm() / scale);
            n_conj += 1;
        }
    }
    Ok(vec![
        VerifyRow {
            identity: "cocycle",
            max_residual: worst_cocycle,
            samples: n_cocycle,
            threshold: "1e-10(1+|x|)",
            pass: worst_cocycle < 1e-10,
        },
        VerifyRow {
            identity: "conjugacy",
            max_residual: worst_conj,
            samples: n_conj,
            threshold: "1e-8(1+|x|)",
            pass: worst_conj < 1e-8,
        },
    ])
}
