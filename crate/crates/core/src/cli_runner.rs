//! Command-line runner: resolves a sectioned TOML config plus flags, dispatches
//! the computations and writes CSV/JSON files that embed the resolved config.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::anosov_criterion::{run_criterion, sample_thetas, CriterionSettings, Side, NONPERIODIC_HALF_WIDTH};
use crate::error::{Error, Result};
use crate::geodesic_flow::{flip, integrate_geodesic, UnitTangent};
use crate::jacobi_fields::{green_stable, solve_boundary, solve_jacobi_ivp, GreenOptions};
use crate::scenarios::Scenario;
use crate::warped_geometry::{sectional_curvature_frame, WarpSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarpSection {
    pub scenario: String,
    pub a: f64,
    pub n: usize,
    pub k: f64,
}

impl Default for WarpSection {
    fn default() -> Self {
        WarpSection { scenario: "anosov-warped-torus".into(), a: 3.0, n: 2, k: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSection {
    pub step: f64,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        IntegratorSection { step: crate::geodesic_flow::DEFAULT_STEP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub seed: u64,
    pub count: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        SampleSection { seed: 1, count: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriterionSection {
    pub t_min: f64,
    pub horizon: f64,
    pub grid_dt: f64,
    pub lambda_margin: f64,
    pub b_window_end: Option<f64>,
    pub green_tol: f64,
    pub r0: f64,
    pub max_rungs: usize,
    pub r_max: Option<f64>,
    /// Convergence window of the `green` subcommand.
    pub t_obs: f64,
}

impl Default for CriterionSection {
    fn default() -> Self {
        let c = CriterionSettings::default();
        let g = GreenOptions::default();
        CriterionSection {
            t_min: c.t_min,
            horizon: c.horizon,
            grid_dt: c.grid_dt,
            lambda_margin: c.lambda_margin,
            b_window_end: None,
            green_tol: g.tol,
            r0: g.r0,
            max_rungs: g.max_rungs,
            r_max: None,
            t_obs: g.t_obs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SideArg {
    Stable,
    Unstable,
}

/// Initial vector of the single-geodesic subcommands, in frame components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThetaSection {
    pub x0: f64,
    /// Empty means `y = 0`.
    pub y0: Vec<f64>,
    pub b0: f64,
    /// Empty means `w = 0`.
    pub w: Vec<f64>,
    pub t_end: f64,
    /// Boundary time of the `jacobi` subcommand; absent means `Y(0) = 0, Y'(0) = I`.
    pub r: Option<f64>,
    pub side: SideArg,
}

impl Default for ThetaSection {
    fn default() -> Self {
        ThetaSection { x0: 0.0, y0: Vec::new(), b0: 1.0, w: Vec::new(), t_end: 10.0, r: None, side: SideArg::Stable }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Row stride of trajectory and matrix CSVs.
    pub stride: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out"), stride: 100 }
    }
}

/// Fully resolved run configuration. The worker count is not part of it since
/// it never changes results.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub warp: WarpSection,
    pub integrator: IntegratorSection,
    pub sample: SampleSection,
    pub criterion: CriterionSection,
    pub theta: ThetaSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.criterion;
        let positive = [
            ("step", self.integrator.step),
            ("t_min", c.t_min),
            ("horizon", c.horizon),
            ("grid_dt", c.grid_dt),
            ("lambda_margin", c.lambda_margin),
            ("green_tol", c.green_tol),
            ("r0", c.r0),
            ("t_obs", c.t_obs),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if c.horizon <= c.t_min {
            return Err(Error::Config(format!("horizon {} must exceed t_min {}", c.horizon, c.t_min)));
        }
        if self.warp.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.sample.count == 0 {
            return Err(Error::Config("samples must be at least 1".into()));
        }
        let n = self.warp.n;
        for (name, v) in [("y0", &self.theta.y0), ("w", &self.theta.w)] {
            if !v.is_empty() && v.len() != n {
                return Err(Error::Config(format!("{name} needs {n} components, got {}", v.len())));
            }
        }
        Ok(())
    }

    pub fn scenario(&self) -> Result<Scenario> {
        Scenario::from_name(&self.warp.scenario, self.warp.a, self.warp.k)
    }

    pub fn spec(&self) -> Result<WarpSpec> {
        self.scenario()?.build(self.warp.n)
    }

    pub fn green_options(&self, t_obs: f64) -> GreenOptions {
        let c = &self.criterion;
        GreenOptions { r0: c.r0, tol: c.green_tol, max_rungs: c.max_rungs, t_obs, r_max: c.r_max }
    }

    pub fn criterion_settings(&self) -> CriterionSettings {
        let c = &self.criterion;
        CriterionSettings {
            step: self.integrator.step,
            t_min: c.t_min,
            horizon: c.horizon,
            grid_dt: c.grid_dt,
            green: self.green_options(c.horizon),
            lambda_margin: c.lambda_margin,
            b_window_end: c.b_window_end,
        }
    }

    pub fn theta(&self, spec: &WarpSpec) -> Result<UnitTangent> {
        let n = spec.n;
        let y = if self.theta.y0.is_empty() { vec![0.0; n] } else { self.theta.y0.clone() };
        let w = if self.theta.w.is_empty() { vec![0.0; n] } else { self.theta.w.clone() };
        UnitTangent::normalized(spec, self.theta.x0, y, self.theta.b0, &w)
    }
}

#[derive(Debug, Parser)]
#[command(name = "warpflow", version, about = "Geodesic flows and Green bundles on warped products R x_f T^n")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Sectional curvatures of random planes.
    Curvature,
    /// Trajectory of one geodesic.
    Geodesic,
    /// Matrix Jacobi solution along one geodesic.
    Jacobi,
    /// Green stable or unstable solution along one geodesic.
    Green,
    /// Averaged-curvature criterion over a sample of unit vectors.
    AnosovCheck,
    /// Condition report and closed-form case bounds of a scenario.
    ScenarioBounds,
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct Flags {
    /// TOML config with sections [warp], [integrator], [sample], [criterion], [theta], [output].
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub scenario: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub a: Option<f64>,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub k: Option<f64>,
    #[arg(long, global = true)]
    pub step: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true)]
    pub tmin: Option<f64>,
    #[arg(long, global = true)]
    pub horizon: Option<f64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub x0: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true, value_delimiter = ',')]
    pub y0: Option<Vec<f64>>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub b0: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true, value_delimiter = ',')]
    pub w: Option<Vec<f64>>,
    #[arg(long = "t-end", global = true, allow_negative_numbers = true)]
    pub t_end: Option<f64>,
    #[arg(long, global = true)]
    pub r: Option<f64>,
    #[arg(long, global = true)]
    pub side: Option<SideArg>,
    #[arg(long, global = true)]
    pub t_obs: Option<f64>,
    #[arg(long, global = true)]
    pub green_tol: Option<f64>,
    #[arg(long, global = true)]
    pub r_max: Option<f64>,
    #[arg(long, global = true)]
    pub stride: Option<usize>,
}

impl Flags {
    /// Config file (or defaults) overridden by the flags that were given.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:expr, $slot:expr) => {
                if let Some(v) = $flag.clone() {
                    $slot = v;
                }
            };
        }
        set!(self.scenario, c.warp.scenario);
        set!(self.a, c.warp.a);
        set!(self.n, c.warp.n);
        set!(self.k, c.warp.k);
        set!(self.step, c.integrator.step);
        set!(self.seed, c.sample.seed);
        set!(self.samples, c.sample.count);
        set!(self.tmin, c.criterion.t_min);
        set!(self.horizon, c.criterion.horizon);
        set!(self.out, c.output.dir);
        set!(self.x0, c.theta.x0);
        set!(self.y0, c.theta.y0);
        set!(self.b0, c.theta.b0);
        set!(self.w, c.theta.w);
        set!(self.t_end, c.theta.t_end);
        set!(self.side, c.theta.side);
        set!(self.t_obs, c.criterion.t_obs);
        set!(self.green_tol, c.criterion.green_tol);
        set!(self.stride, c.output.stride);
        if self.r.is_some() {
            c.theta.r = self.r;
        }
        if self.r_max.is_some() {
            c.criterion.r_max = self.r_max;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn workers(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }
}

fn csv_header(cfg: &RunConfig, command: &str) -> String {
    let mut s = format!("# warpflow {command}\n");
    for line in cfg.to_toml().lines() {
        s.push_str("# ");
        s.push_str(line);
        s.push('\n');
    }
    s
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<fs::File>)> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    Ok((path.clone(), BufWriter::new(fs::File::create(&path)?)))
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<PathBuf> {
    let (path, mut out) = create(dir, name)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Config(format!("json: {e}")))?;
    writeln!(out)?;
    out.flush()?;
    Ok(path)
}

fn config_json(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Sample range of `x` for a spec.
fn x_range(spec: &WarpSpec) -> (f64, f64) {
    match spec.period {
        Some(t) => (0.0, t),
        None => (-NONPERIODIC_HALF_WIDTH, 2.0 * NONPERIODIC_HALF_WIDTH),
    }
}

pub fn cmd_curvature(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let spec = cfg.spec()?;
    let n = spec.n;
    let (lo, span) = x_range(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sample.seed);
    let (path, mut out) = create(&cfg.output.dir, "curvature.csv")?;
    out.write_all(csv_header(cfg, "curvature").as_bytes())?;
    let mut header = vec!["x".to_string()];
    for name in ["u", "v"] {
        header.extend((0..=n).map(|i| format!("{name}{i}")));
    }
    header.push("K".into());
    writeln!(out, "{}", header.join(","))?;
    let mut written = 0;
    while written < cfg.sample.count {
        let x = lo + span * rng.random::<f64>();
        let u: Vec<f64> = (0..=n).map(|_| rng.sample(StandardNormal)).collect();
        let v: Vec<f64> = (0..=n).map(|_| rng.sample(StandardNormal)).collect();
        let k = match sectional_curvature_frame(&spec.jet(x), &u, &v) {
            Ok(k) => k,
            Err(Error::DegeneratePlane { .. }) => continue,
            Err(e) => return Err(e),
        };
        let mut row = vec![x];
        row.extend(&u);
        row.extend(&v);
        row.push(k);
        writeln!(out, "{}", row.iter().map(|v| fmt(*v)).collect::<Vec<_>>().join(","))?;
        written += 1;
    }
    out.flush()?;
    Ok(vec![path])
}

pub fn cmd_geodesic(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let spec = cfg.spec()?;
    let theta = cfg.theta(&spec)?;
    let geo = integrate_geodesic(&spec, &theta, cfg.theta.t_end, cfg.integrator.step)?;
    let (path, mut out) = create(&cfg.output.dir, "geodesic.csv")?;
    out.write_all(csv_header(cfg, "geodesic").as_bytes())?;
    let d = geo.diagnostics();
    writeln!(
        out,
        "# diagnostics: max_unit_defect = {}, max_momentum_defect = {}, step_doubling_error = {}",
        fmt(d.max_unit_defect),
        fmt(d.max_momentum_defect),
        fmt(d.step_doubling_error)
    )?;
    let mut buf = Vec::new();
    geo.write_csv(&mut buf)?;
    let text = String::from_utf8(buf).expect("csv is utf-8");
    let stride = cfg.output.stride.max(1);
    let mut lines = text.lines();
    writeln!(out, "{}", lines.next().unwrap_or(""))?;
    let rows: Vec<&str> = lines.collect();
    for (k, row) in rows.iter().enumerate() {
        if k % stride == 0 || k + 1 == rows.len() {
            writeln!(out, "{row}")?;
        }
    }
    out.flush()?;
    Ok(vec![path])
}

pub fn cmd_jacobi(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let spec = cfg.spec()?;
    let theta = cfg.theta(&spec)?;
    let n = spec.n;
    let sol = match cfg.theta.r {
        Some(r) => {
            if !(r > 0.0) {
                return Err(Error::Config(format!("boundary time r must be positive, got {r}")));
            }
            let mut geo = integrate_geodesic(&spec, &theta, r, cfg.integrator.step)?;
            solve_boundary(&mut geo, r)?
        }
        None => {
            if !(cfg.theta.t_end > 0.0) {
                return Err(Error::Config("jacobi needs t_end > 0".into()));
            }
            let geo = integrate_geodesic(&spec, &theta, cfg.theta.t_end, cfg.integrator.step)?;
            solve_jacobi_ivp(&geo, &DMatrix::zeros(n, n), &DMatrix::identity(n, n))?
        }
    };
    let (path, mut out) = create(&cfg.output.dir, "jacobi.csv")?;
    out.write_all(csv_header(cfg, "jacobi").as_bytes())?;
    if let Some(res) = sol.boundary_residual() {
        writeln!(out, "# boundary_residual = {}", fmt(res))?;
    }
    sol.write_csv(&mut out, cfg.output.stride)?;
    out.flush()?;
    Ok(vec![path])
}

pub fn cmd_green(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let spec = cfg.spec()?;
    let theta = cfg.theta(&spec)?;
    let opts = cfg.green_options(cfg.criterion.t_obs);
    let start = match cfg.theta.side {
        SideArg::Stable => theta.clone(),
        SideArg::Unstable => flip(&theta),
    };
    let mut geo = integrate_geodesic(&spec, &start, opts.t_obs, cfg.integrator.step)?;
    let g = green_stable(&mut geo, &opts)?;
    let (sol, u0) = match cfg.theta.side {
        SideArg::Stable => (g.solution.clone(), g.u0.clone()),
        SideArg::Unstable => (g.solution.time_reversed(), -g.u0.clone()),
    };
    let (csv_path, mut out) = create(&cfg.output.dir, "green.csv")?;
    out.write_all(csv_header(cfg, "green").as_bytes())?;
    sol.write_csv(&mut out, cfg.output.stride)?;
    out.flush()?;
    let report = json!({
        "config": config_json(cfg),
        "scenario": cfg.warp.scenario,
        "theta": theta,
        "kind": sol.kind,
        "t_obs": opts.t_obs,
        "r_ladder": g.r_ladder,
        "gaps": g.gaps,
        "final_gap": g.final_gap(),
        "extrapolated": g.extrapolated,
        "u0": matrix_rows(&u0),
        "wronskian_drift": sol.wronskian_drift(),
        "path": geo.diagnostics(),
    });
    let json_path = write_json(&cfg.output.dir, "green.json", &report)?;
    Ok(vec![json_path, csv_path])
}

/// Verdict of the last `anosov-check` together with the written files.
pub struct AnosovOutcome {
    pub files: Vec<PathBuf>,
    pub verdict: crate::anosov_criterion::Verdict,
}

pub fn cmd_anosov_check(cfg: &RunConfig, workers: usize) -> Result<AnosovOutcome> {
    let spec = cfg.spec()?;
    let settings = cfg.criterion_settings();
    let thetas = sample_thetas(&spec, cfg.sample.count, cfg.sample.seed);
    let (report, results) = run_criterion(&spec, &thetas, &settings, workers)?;

    let (series_path, mut out) = create(&cfg.output.dir, "anosov_series.csv")?;
    out.write_all(csv_header(cfg, "anosov-check").as_bytes())?;
    writeln!(out, "theta,x0,b0,side,direction,t,average,log_norm")?;
    for (i, r) in results.iter().enumerate() {
        for side in [&r.stable, &r.unstable].into_iter().flatten() {
            let label = match side.side {
                Side::Stable => "stable",
                Side::Unstable => "unstable",
            };
            for (s, ln) in side.series.iter().zip(&side.log_norms) {
                for ((t, v), l) in s.t.iter().zip(&s.value).zip(ln) {
                    writeln!(
                        out,
                        "{i},{},{},{label},{},{},{},{}",
                        fmt(r.theta.x),
                        fmt(r.b0),
                        s.direction,
                        fmt(*t),
                        fmt(*v),
                        fmt(*l)
                    )?;
                }
            }
        }
    }
    out.flush()?;

    let (dphi_path, mut out) = create(&cfg.output.dir, "anosov_dphi.csv")?;
    out.write_all(csv_header(cfg, "anosov-check").as_bytes())?;
    writeln!(out, "theta,side,t,log_dphi")?;
    for (i, r) in results.iter().enumerate() {
        for side in [&r.stable, &r.unstable].into_iter().flatten() {
            let label = if side.side == Side::Stable { "stable" } else { "unstable" };
            for (k, l) in side.log_dphi.iter().enumerate() {
                writeln!(out, "{i},{label},{},{}", fmt(k as f64 * settings.grid_dt), fmt(*l))?;
            }
        }
    }
    out.flush()?;

    let env = |e: Option<crate::anosov_criterion::Envelope>| e.map(|e| (e.c, e.lambda));
    let (cs, ls) = env(report.stable_envelope).unzip();
    let (cu, lu) = env(report.unstable_envelope).unzip();
    let value = json!({
        "config": config_json(cfg),
        "scenario": cfg.warp.scenario,
        "sample": {
            "seed": cfg.sample.seed,
            "count": cfg.sample.count,
            "t_min": settings.t_min,
            "horizon": settings.horizon,
            "step": settings.step,
        },
        "B_est": report.b_est,
        "t0_est": report.t0_est,
        "envelope": { "C_s": cs, "lambda_s": ls, "C_u": cu, "lambda_u": lu },
        "verdict": report.verdict,
        "reasons": report.reasons,
        "failures": report.failures,
        "details": report,
    });
    let json_path = write_json(&cfg.output.dir, "anosov_report.json", &value)?;
    Ok(AnosovOutcome { files: vec![json_path, series_path, dphi_path], verdict: report.verdict })
}

pub fn cmd_scenario_bounds(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let scenario = cfg.scenario()?;
    let spec = scenario.build(cfg.warp.n)?;
    let conditions = spec.check_conditions();
    let bounds = scenario.bounds(cfg.warp.n)?;
    let value = json!({
        "config": config_json(cfg),
        "scenario": scenario,
        "n": spec.n,
        "period": spec.period,
        "bounds_c1_c2": spec.bounds,
        "curvature_floor": spec.curvature_floor,
        "c": spec.curvature_bound_c(),
        "conditions": conditions,
        "conditions_hold": conditions.all_claimed_hold(),
        "case_bounds": bounds,
    });
    Ok(vec![write_json(&cfg.output.dir, "scenario_bounds.json", &value)?])
}

/// Executes one parsed command line and returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let cfg = cli.flags.resolve()?;
    match cli.command {
        Command::Curvature => cmd_curvature(&cfg),
        Command::Geodesic => cmd_geodesic(&cfg),
        Command::Jacobi => cmd_jacobi(&cfg),
        Command::Green => cmd_green(&cfg),
        Command::AnosovCheck => {
            let outcome = cmd_anosov_check(&cfg, cli.flags.workers())?;
            println!("verdict: {}", serde_json::to_value(outcome.verdict).expect("verdict serializes"));
            Ok(outcome.files)
        }
        Command::ScenarioBounds => cmd_scenario_bounds(&cfg),
    }
}

/// Entry point of the binary.
pub fn main_with_args<I, T>(args: I) -> std::process::ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return std::process::ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            std::process::ExitCode::SUCCESS
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("usage error: {e}");
            std::process::ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let cfg = RunConfig::from_toml("[warp]\nscenario = \"constant-curvature\"\nk = 2.0\n[integrator]\nstep = 0.01\n").unwrap();
        assert_eq!(cfg.warp.k, 2.0);
        assert_eq!(cfg.warp.n, 2);
        let dir = std::env::temp_dir().join(format!("warpflow-cfg-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("c.toml");
        fs::write(&p, cfg.to_toml()).unwrap();
        let cli = Cli::try_parse_from(["warpflow", "curvature", "--config", p.to_str().unwrap(), "--k", "3"]).unwrap();
        let resolved = cli.flags.resolve().unwrap();
        assert_eq!(resolved.warp.k, 3.0);
        assert_eq!(resolved.integrator.step, 0.01);
        assert_eq!(RunConfig::from_toml(&resolved.to_toml()).unwrap(), resolved);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(matches!(RunConfig::from_toml("[warp]\nbogus = 1\n"), Err(Error::Config(_))));
        let mut c = RunConfig::default();
        c.criterion.horizon = 100.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = RunConfig::default();
        c.criterion.green_tol = 0.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.warp.scenario = "torus".into();
        assert!(c.spec().is_err());
    }
}
