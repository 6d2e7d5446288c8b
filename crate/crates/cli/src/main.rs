use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use knotgauge::concentration::{default_epsilon, pipeline, PipelineOptions};
use knotgauge::curve::{load_curve, save_curve};
use knotgauge::distortion::{
    certify_with, distortion_profile, find_admissible_scale, g3, g_infinity, CertifyOptions, DEFAULT_MARGIN,
};
use knotgauge::flowfield::{flow, FlowDirection};
use knotgauge::mobius::{minimize_symmetric, torus_symmetry, Initializer, MinimizeConfig, StopReason};
use knotgauge::sobolev::{fractional_admissible_scale, SeminormGrid, DEFAULT_BAND};
use knotgauge::substitution::{substitute, SubstituteOptions};
use knotgauge::{Curve, KnotError, ParamPoint, Point};

#[derive(Parser)]
#[command(name = "knotgauge", version, about = "Distortion, seminorm, flow and energy analysis of sampled closed space curves")]
struct Cli {
    /// Seed for every randomized verification step.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Global and scale-resolved distortion of a curve.
    Analyze {
        curve: PathBuf,
        /// CSV `r,delta,i,j` over the scale ladder.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Add the tangent seminorm and the fractional scale to the report.
        #[arg(long)]
        seminorm: bool,
        /// CSV `i,j,value` with the nonzero seminorm density entries.
        #[arg(long)]
        density: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sufficient check that two curves carry the same knot type.
    Certify {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value = "g3")]
        threshold: Threshold,
        #[arg(long, default_value_t = DEFAULT_MARGIN)]
        margin: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Straighten the curve around the given centers.
    Substitute {
        curve: PathBuf,
        /// Comma-separated parameters in [0, 1).
        #[arg(long, value_delimiter = ',', required = true)]
        center: Vec<f64>,
        #[arg(long)]
        r: f64,
        /// `auto` or a number.
        #[arg(long, default_value = "auto")]
        theta: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Integrate the distance-increasing or decreasing flow from one point.
    Flow {
        curve: PathBuf,
        /// Start point `x,y,z`.
        #[arg(long = "seed", value_parser = parse_point, allow_hyphen_values = true)]
        start: Point,
        #[arg(long)]
        dir: Dir,
        #[arg(long = "rM")]
        r_m: f64,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 256)]
        steps: usize,
        /// CSV `t,x,y,z,dist`.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Symmetric energy descent from a torus knot or an ellipse.
    Minimize {
        /// Torus knot parameters `a,b`.
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true, conflicts_with = "ellipse")]
        torus: Option<(i64, i64)>,
        /// Ellipse semi-axes `a,b` (an unknot).
        #[arg(long, value_delimiter = ',')]
        ellipse: Option<Vec<f64>>,
        #[arg(long)]
        p: usize,
        /// Rotation multiplier; defaults to `a mod b` for a torus knot with `p = |b|`, else 1.
        #[arg(long)]
        m: Option<usize>,
        /// Sample count, rounded up to a multiple of p.
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        /// Certificate against the previous checkpoint every this many steps; 0 disables.
        #[arg(long, default_value_t = 5)]
        cadence: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// CSV `iter,energy,residual,bilip,step`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Detect seminorm concentrations and substitute them away.
    Concentrate {
        curve: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        p: usize,
        /// Mass threshold; the default is 2/3 - 6/pi^2 and other values are experimental.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Threshold {
    G3,
    Ginf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dir {
    Inc,
    Dec,
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| format!("{v:?} is not a number"))).collect()
}

fn parse_point(s: &str) -> std::result::Result<Point, String> {
    match parse_list(s)?.as_slice() {
        [x, y, z] => Ok(Point::new(*x, *y, *z)),
        v => Err(format!("expected three coordinates, got {}", v.len())),
    }
}

fn parse_pair(s: &str) -> std::result::Result<(i64, i64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [a, b] => Ok((
            a.trim().parse().map_err(|_| format!("{a:?} is not an integer"))?,
            b.trim().parse().map_err(|_| format!("{b:?} is not an integer"))?,
        )),
        _ => Err("expected two integers a,b".into()),
    }
}

#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Envelope<T: Serialize> {
    command: Vec<String>,
    version: &'static str,
    seed: u64,
    inputs: Vec<InputDigest>,
    pass: bool,
    result: T,
}

enum Outcome {
    Success,
    Inconclusive,
    Failed(String),
}

struct Ctx {
    argv: Vec<String>,
    seed: u64,
    inputs: Vec<InputDigest>,
}

impl Ctx {
    fn load(&mut self, path: &Path) -> Result<Curve> {
        let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.inputs.push(InputDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) });
        load_curve(path).with_context(|| format!("{}", path.display()))
    }

    fn write<T: Serialize>(&self, path: &Path, pass: bool, result: &T) -> Result<()> {
        let env = Envelope {
            command: self.argv.clone(),
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            inputs: self.inputs.iter().map(|d| InputDigest { path: d.path.clone(), sha256: d.sha256.clone() }).collect(),
            pass,
            result,
        };
        let text = serde_json::to_string_pretty(&env)?;
        fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn save(c: &Curve, path: &Path) -> Result<()> {
    save_curve(c, path).with_context(|| format!("cannot write {}", path.display()))
}

fn opt_csv(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct AnalyzeReport {
    n: usize,
    length: f64,
    min_edge: f64,
    max_edge: f64,
    delta_global: f64,
    argmax: Option<(usize, usize)>,
    admissible_r: Option<f64>,
    admissible_delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seminorm_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seminorm_note: Option<String>,
}

fn analyze(ctx: &mut Ctx, curve: &Path, profile: Option<&Path>, seminorm: bool, density: Option<&Path>, out: Option<&Path>) -> Result<Outcome> {
    let c = ctx.load(curve)?;
    let prof = distortion_profile(&c);
    let global = knotgauge::distortion::global_distortion(&c);
    let adm = find_admissible_scale(&c, g3() - DEFAULT_MARGIN);
    let mut rep = AnalyzeReport {
        n: c.n(),
        length: c.length(),
        min_edge: c.min_edge(),
        max_edge: c.max_edge(),
        delta_global: global.0,
        argmax: global.1,
        admissible_r: adm.map(|a| a.r),
        admissible_delta: adm.map(|a| a.delta),
        seminorm_sq: None,
        rho: None,
        r_gamma: None,
        seminorm_note: None,
    };
    if let Some(path) = profile {
        let mut csv = String::from("r,delta,i,j\n");
        for ((r, d), am) in prof.scales.iter().zip(&prof.values).zip(&prof.argmax) {
            writeln!(csv, "{r},{d},{},{}", opt_csv(am.map(|p| p.0)), opt_csv(am.map(|p| p.1)))?;
        }
        write_text(path, &csv)?;
    }
    if seminorm || density.is_some() {
        let unit = c.unit_length()?;
        let grid = SeminormGrid::new(&unit, DEFAULT_BAND);
        if seminorm {
            rep.seminorm_sq = Some(grid.total());
            match fractional_admissible_scale(&unit) {
                Ok(f) => {
                    rep.rho = Some(f.rho);
                    rep.r_gamma = Some(f.r_gamma);
                }
                Err(e) => rep.seminorm_note = Some(e.to_string()),
            }
        }
        if let Some(path) = density {
            let mut csv = String::from("i,j,value\n");
            for i in 0..grid.n() {
                for j in 0..grid.n() {
                    let v = grid.entry(i, j);
                    if v != 0.0 {
                        writeln!(csv, "{i},{j},{v}")?;
                    }
                }
            }
            write_text(path, &csv)?;
        }
    }
    println!("n = {}, length = {:.6}, global distortion = {:.6}", rep.n, rep.length, rep.delta_global);
    match adm {
        Some(a) => println!("admissible scale r = {:.6} (local distortion {:.6})", a.r, a.delta),
        None => println!("no admissible scale on the ladder"),
    }
    if let Some(s) = rep.seminorm_sq {
        println!("seminorm^2 = {s:.6}, r_gamma = {:?}", rep.r_gamma);
    }
    if let Some(path) = out {
        ctx.write(path, true, &rep)?;
    }
    Ok(Outcome::Success)
}

fn certify(ctx: &mut Ctx, a: &Path, b: &Path, threshold: Threshold, margin: f64, out: Option<&Path>) -> Result<Outcome> {
    let ca = ctx.load(a)?;
    let cb = ctx.load(b)?;
    let threshold = match threshold {
        Threshold::G3 => g3(),
        Threshold::Ginf => g_infinity(),
    };
    let cert = certify_with(&ca, &cb, CertifyOptions { threshold, margin });
    println!("{}", serde_json::to_string_pretty(&cert)?);
    if let Some(path) = out {
        ctx.write(path, cert.pass, &cert)?;
    }
    Ok(if cert.pass { Outcome::Success } else { Outcome::Inconclusive })
}

#[allow(clippy::too_many_arguments)]
fn substitute_cmd(ctx: &mut Ctx, curve: &Path, centers: &[f64], r: f64, theta: &str, out: Option<&Path>, report: Option<&Path>) -> Result<Outcome> {
    let c = ctx.load(curve)?;
    let theta = match theta {
        "auto" => None,
        v => Some(v.parse::<f64>().map_err(|_| anyhow!("--theta: {v:?} is neither auto nor a number"))?),
    };
    let centers: Vec<ParamPoint> = centers.iter().map(|&t| ParamPoint::new(t)).collect();
    let opts = SubstituteOptions { theta, seed: ctx.seed, ..SubstituteOptions::default() };
    let rep = substitute(&c, &centers, r, opts)?;
    println!(
        "theta = {:.3e}, sup distance = {:.3e} (bound {:.3e}), modified length ratio = {:.6}, all flags {}",
        rep.theta, rep.linf_distance, rep.linf_bound, rep.length_modified, rep.all_pass
    );
    if let Some(path) = out {
        save(&rep.modified, path)?;
    }
    if let Some(path) = report {
        ctx.write(path, rep.all_pass, &rep)?;
    }
    Ok(if rep.all_pass { Outcome::Success } else { Outcome::Failed(format!("verification flags failed: {:?}", rep.flags)) })
}

#[allow(clippy::too_many_arguments)]
fn flow_cmd(
    ctx: &mut Ctx,
    curve: &Path,
    start: Point,
    dir: Dir,
    r_m: f64,
    rho: f64,
    delta: Option<f64>,
    steps: usize,
    trace: Option<&Path>,
    report: Option<&Path>,
) -> Result<Outcome> {
    let m = ctx.load(curve)?;
    let direction = match dir {
        Dir::Inc => FlowDirection::Increasing,
        Dir::Dec => FlowDirection::Decreasing { delta: delta.ok_or_else(|| anyhow!("--delta is required with --dir dec"))? },
    };
    let t = flow(&m, start, direction, r_m, rho, steps)?;
    if let Some(path) = trace {
        let mut csv = String::from("t,x,y,z,dist\n");
        for ((time, p), d) in t.times.iter().zip(&t.states).zip(&t.distances) {
            writeln!(csv, "{time},{},{},{},{d}", p.x, p.y, p.z)?;
        }
        write_text(path, &csv)?;
    }
    let pass = t.monotone && t.final_bound_holds != Some(false);
    println!(
        "distance {:.6} -> {:.6}, monotone {}, final bound {:?}",
        t.distances[0],
        t.distances.last().expect("trace is nonempty"),
        t.monotone,
        t.final_bound_holds
    );
    if let Some(path) = report {
        ctx.write(path, pass, &t)?;
    }
    Ok(if pass { Outcome::Success } else { Outcome::Failed("flow verification failed".into()) })
}

#[derive(Serialize)]
struct MinimizeReport<'a> {
    config: MinimizeConfig,
    stop: StopReason,
    initial_energy: f64,
    final_energy: f64,
    strictly_decreasing: bool,
    max_residual: f64,
    certificates: usize,
    certificates_pass: bool,
    states: &'a [knotgauge::mobius::EnergyState],
}

#[allow(clippy::too_many_arguments)]
fn minimize_cmd(
    ctx: &mut Ctx,
    torus: Option<(i64, i64)>,
    ellipse: Option<Vec<f64>>,
    p: usize,
    m: Option<usize>,
    n: usize,
    steps: usize,
    cadence: usize,
    out: Option<&Path>,
    log: Option<&Path>,
    report: Option<&Path>,
) -> Result<Outcome> {
    let (init, default_m) = match (torus, ellipse) {
        (Some((a, b)), None) => {
            let m = torus_symmetry(a, b).filter(|s| s.p == p).map(|s| s.m).unwrap_or(1);
            (Initializer::Torus { a, b, big_r: 2.0, small_r: 0.5 }, m)
        }
        (None, Some(v)) if v.len() == 2 => (Initializer::Ellipse { semi_x: v[0], semi_y: v[1] }, 1),
        (None, Some(_)) => bail!("--ellipse expects two semi-axes a,b"),
        _ => bail!("one of --torus or --ellipse is required"),
    };
    if p == 0 {
        bail!("--p must be at least 2");
    }
    let n_used = n.div_ceil(p) * p;
    if n_used != n {
        eprintln!("note: --n {n} rounded up to {n_used}, a multiple of p = {p}");
    }
    let cfg = MinimizeConfig {
        init,
        p,
        m: m.unwrap_or(default_m),
        n: n_used,
        max_iter: steps,
        certificate_cadence: cadence,
        ..MinimizeConfig::torus(2, 3, p, 1, n_used, steps)
    };
    let run = minimize_symmetric(&cfg)?;
    let first = &run.states[0];
    let last = run.last();
    println!("initial energy = {:.10}", first.energy);
    println!("final energy = {:.10} after {} iterations ({:?})", last.energy, last.iteration, run.stop);
    if let Some(path) = log {
        let mut csv = String::from("iter,energy,residual,bilip,step\n");
        for s in &run.states {
            writeln!(csv, "{},{},{},{},{}", s.iteration, s.energy, s.residual, s.bilip, s.step)?;
        }
        write_text(path, &csv)?;
    }
    if let Some(path) = out {
        save(&last.curve, path)?;
    }
    let pass = run.stop != StopReason::Stalled;
    if let Some(path) = report {
        let rep = MinimizeReport {
            config: cfg,
            stop: run.stop,
            initial_energy: first.energy,
            final_energy: last.energy,
            strictly_decreasing: run.strictly_decreasing(),
            max_residual: run.max_residual(),
            certificates: run.certificates.len(),
            certificates_pass: run.certificates.iter().all(|(_, c)| c.pass),
            states: &run.states,
        };
        ctx.write(path, pass, &rep)?;
    }
    Ok(if pass { Outcome::Success } else { Outcome::Failed("stalled: line search failed after 40 halvings".into()) })
}

#[allow(clippy::too_many_arguments)]
fn concentrate_cmd(
    ctx: &mut Ctx,
    curve: &Path,
    reference: Option<&Path>,
    p: usize,
    epsilon: Option<f64>,
    out: Option<&Path>,
    report: Option<&Path>,
) -> Result<Outcome> {
    let c = ctx.load(curve)?;
    let reference = reference.map(|r| ctx.load(r)).transpose()?;
    if epsilon.is_some() {
        eprintln!("note: epsilon overridden; results are experimental");
    }
    let opts = PipelineOptions { epsilon: epsilon.unwrap_or_else(default_epsilon), p, seed: ctx.seed };
    let rep = pipeline(&c, reference.as_ref(), opts)?;
    println!(
        "detected {} concentration point(s) {:?} (bound {}), r_bar = {:?}, distortion at certificate scale = {:?}",
        rep.detection.indices.len(),
        rep.detection.points,
        rep.detection.cardinality_bound,
        rep.scale.map(|s| s.r_bar),
        rep.distortion_at_certificate_scale
    );
    for w in &rep.detection.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(path) = out {
        save(&rep.modified, path)?;
    }
    if let Some(path) = report {
        ctx.write(path, rep.all_pass, &rep)?;
    }
    let certificate_failed = rep.reference.as_ref().is_some_and(|r| !r.certificate.pass);
    Ok(if rep.all_pass {
        Outcome::Success
    } else if certificate_failed && rep.distortion_ok && rep.substitution.as_ref().is_none_or(|s| s.all_pass) {
        Outcome::Inconclusive
    } else {
        Outcome::Failed("pipeline checks failed".into())
    })
}

fn run(cli: Cli, argv: Vec<String>) -> Result<Outcome> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global().context("--threads")?;
    }
    let mut ctx = Ctx { argv, seed: cli.seed, inputs: Vec::new() };
    match cli.command {
        Command::Analyze { curve, profile, seminorm, density, out } => {
            analyze(&mut ctx, &curve, profile.as_deref(), seminorm, density.as_deref(), out.as_deref())
        }
        Command::Certify { a, b, threshold, margin, out } => certify(&mut ctx, &a, &b, threshold, margin, out.as_deref()),
        Command::Substitute { curve, center, r, theta, out, report } => {
            let centers: Vec<f64> = center.into_iter().collect();
            substitute_cmd(&mut ctx, &curve, &centers, r, &theta, out.as_deref(), report.as_deref())
        }
        Command::Flow { curve, start, dir, r_m, rho, delta, steps, trace, report } => {
            flow_cmd(&mut ctx, &curve, start, dir, r_m, rho, delta, steps, trace.as_deref(), report.as_deref())
        }
        Command::Minimize { torus, ellipse, p, m, n, steps, cadence, out, log, report } => {
            minimize_cmd(&mut ctx, torus, ellipse, p, m, n, steps, cadence, out.as_deref(), log.as_deref(), report.as_deref())
        }
        Command::Concentrate { curve, reference, p, epsilon, out, report } => {
            concentrate_cmd(&mut ctx, &curve, reference.as_deref(), p, epsilon, out.as_deref(), report.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, argv) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Inconclusive) => {
            eprintln!("inconclusive");
            ExitCode::from(2)
        }
        Ok(Outcome::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            let hint = match e.downcast_ref::<KnotError>() {
                Some(KnotError::TooFewSamples(_)) => " (curves need at least 8 samples)",
                _ => "",
            };
            eprintln!("error: {e:#}{hint}");
            ExitCode::from(1)
        }
    }
}
