//! Experiment configuration, the end-to-end run and plot-data export.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::blowup::{self, BlowupReport, DiagnosticsConfig};
use crate::error::{KwError, Result};
use crate::fixtures;
use crate::functional::{self, FunctionalContext, RobinSample, ThresholdReport};
use crate::io;
use crate::solver::{self, CoherenceReport, SolverOptions, Stage, StageMetrics, StateSummary, TrajectoryStatus};
use crate::surface::{FourierMode, GridSpec, Node, ScalarField, SurfaceGrid};
use crate::testfn::{self, UpperBoundResult};

/// Weight description: a catalog name, a Fourier sum plus offset, or a
/// binary field file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Fixture {
        fixture: String,
    },
    Fourier {
        fourier: Vec<FourierMode>,
        #[serde(default)]
        offset: f64,
    },
    File {
        file: PathBuf,
    },
}

impl WeightSpec {
    pub fn label(&self) -> String {
        match self {
            WeightSpec::Fixture { fixture } => fixture.clone(),
            WeightSpec::Fourier { fourier, .. } => format!("fourier[{}]", fourier.len()),
            WeightSpec::File { file } => file.display().to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            WeightSpec::Fixture { fixture } => fixtures::fixture(fixture).map(|_| ()),
            WeightSpec::Fourier { fourier, offset } => {
                if fourier.is_empty() && *offset <= 0.0 {
                    return Err(KwError::InvalidWeight("weight has no positive part".into()));
                }
                Ok(())
            }
            WeightSpec::File { file } => {
                if file.exists() {
                    Ok(())
                } else {
                    Err(KwError::InvalidWeight(format!("no such file {}", file.display())))
                }
            }
        }
    }

    pub fn build(&self, grid: Arc<SurfaceGrid>) -> Result<ScalarField> {
        match self {
            WeightSpec::Fixture { fixture } => Ok(fixtures::fixture(fixture)?.weight(grid)),
            WeightSpec::Fourier { fourier, offset } => {
                Ok(ScalarField::from_fn(grid, |x, y| offset + fourier.iter().map(|m| m.eval(x, y)).sum::<f64>()))
            }
            WeightSpec::File { file } => {
                let (n, values) = io::read_field(file)?;
                if n != grid.n() {
                    return Err(KwError::InvalidWeight(format!("weight file has N = {n}, grid has {}", grid.n())));
                }
                ScalarField::new(grid, values)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitSpec {
    Zero,
    /// band-limited random field drawn from the run seed
    Random { kmax: i64, amplitude: f64 },
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::Zero
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpperBoundConfig {
    pub enabled: bool,
    pub eps_list: Vec<f64>,
    pub r_match: f64,
    pub margin: f64,
    pub min_core_cells: f64,
}

impl Default for UpperBoundConfig {
    fn default() -> Self {
        UpperBoundConfig {
            enabled: true,
            eps_list: vec![0.1, 0.05, 0.02, 0.01],
            r_match: 2.0,
            margin: testfn::DEFAULT_MARGIN,
            min_core_cells: testfn::DEFAULT_MIN_CORE_CELLS,
        }
    }
}

fn default_schedule() -> String {
    "geometric:12".into()
}

fn default_lattice() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    pub weight: WeightSpec,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default = "default_schedule")]
    pub schedule: String,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: InitSpec,
    /// Robin landscape lattice size per axis
    #[serde(default = "default_lattice")]
    pub lattice: usize,
    #[serde(default)]
    pub upper_bound: UpperBoundConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| KwError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Cheap checks only; nothing is computed.
    pub fn validate(&self) -> Result<Vec<f64>> {
        self.grid.validate()?;
        self.weight.validate()?;
        self.diagnostics.validate()?;
        let o = &self.solver;
        if !(o.tol > 0.0 && o.armijo_c1 > 0.0 && o.armijo_c1 < 1.0 && o.backtrack > 0.0 && o.backtrack < 1.0) {
            return Err(KwError::InvalidConfig("solver options out of range".into()));
        }
        if self.lattice == 0 || self.lattice > self.grid.n {
            return Err(KwError::InvalidConfig(format!("lattice {} outside 1..=N", self.lattice)));
        }
        if let InitSpec::Random { kmax, amplitude } = self.init {
            if kmax < 1 || kmax as usize >= self.grid.n / 2 || !amplitude.is_finite() {
                return Err(KwError::InvalidConfig("random init needs 1 <= kmax < N/2 and finite amplitude".into()));
            }
        }
        let ub = &self.upper_bound;
        if ub.enabled
            && (ub.eps_list.is_empty()
                || ub.eps_list.iter().any(|&e| !(e > 0.0))
                || ub.eps_list.windows(2).any(|w| w[1] >= w[0])
                || !(ub.r_match > 0.0))
        {
            return Err(KwError::InvalidConfig("upper_bound needs a decreasing positive eps_list".into()));
        }
        solver::parse_schedule(&self.schedule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub state: StateSummary,
    pub metrics: StageMetrics,
    pub concentration_set: Vec<Node>,
    pub blowup_flagged: bool,
}

/// Run verdict; only deterministic quantities, no timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub weight: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub schedule: Vec<f64>,
    pub djlw_satisfied: Option<bool>,
    pub djlw_value: Option<f64>,
    #[serde(rename = "C0")]
    pub c0: Option<f64>,
    pub p0: Option<Node>,
    pub converged: bool,
    pub status: Option<TrajectoryStatus>,
    pub stages_completed: usize,
    pub residual: Option<f64>,
    #[serde(rename = "J_final")]
    pub j_final: Option<f64>,
    pub lambda_final: Option<f64>,
    pub lambda_max: Option<f64>,
    pub int_monitor_ok: bool,
    pub coherence: Option<CoherenceReport>,
    pub upper_bound_passed: Option<bool>,
    pub errors: Vec<String>,
    pub exit_code: i32,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub summary: Summary,
    pub dir: PathBuf,
}

impl PipelineOutcome {
    pub fn exit_code(&self) -> i32 {
        self.summary.exit_code
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(KwError::MissingArtifacts(path.display().to_string()));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn stage_name(index: usize) -> String {
    format!("stage_{index:02}")
}

pub fn initial_field(config: &ExperimentConfig, grid: Arc<SurfaceGrid>) -> ScalarField {
    match config.init {
        InitSpec::Zero => ScalarField::constant(grid, 0.0),
        InitSpec::Random { kmax, amplitude } => ScalarField::random_band_limited(grid, config.seed, kmax, amplitude),
    }
}

/// Thresholds, continuation, per-stage diagnostics and the upper-bound
/// check, written under `config.output_dir`.
///
/// Configuration problems are returned as errors before anything runs.
/// Failures inside a phase are recorded in the summary, which then carries
/// a nonzero exit code.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<PipelineOutcome> {
    let schedule = config.validate()?;
    let dir = config.output_dir.clone();
    fs::create_dir_all(dir.join("stages"))?;
    fs::create_dir_all(dir.join("reports"))?;
    write_json(&dir.join("config.json"), config)?;
    let mut log = String::new();
    let started = Instant::now();

    let grid = config.grid.build()?;
    let h = config.weight.build(grid.clone())?;
    let ctx = FunctionalContext::new(h, schedule[0])?;
    let mut errors = Vec::new();

    let t = Instant::now();
    let thresholds = match functional::thresholds(&ctx, config.lattice) {
        Ok((report, samples)) => {
            write_json(&dir.join("thresholds.json"), &report)?;
            write_json(&dir.join("landscape.json"), &samples)?;
            Some(report)
        }
        Err(e) => {
            errors.push(format!("thresholds: {e}"));
            None
        }
    };
    let _ = writeln!(log, "thresholds {:.3}s", t.elapsed().as_secs_f64());

    let init = initial_field(config, grid.clone());
    let (traj, failure) =
        solver::continue_recording(&ctx, &schedule, Some(&init), &config.solver, &config.diagnostics)?;
    if let Some(e) = failure {
        errors.push(format!("continuation: {e}"));
    }
    solver::write_trajectory_csv(&traj, &dir.join("trajectory.csv"))?;
    let c0 = thresholds.as_ref().map(|r| r.c0);
    for stage in &traj.stages {
        let name = stage_name(stage.index);
        let sctx = ctx.with_eps(stage.state.eps)?;
        write_stage(&dir.join("stages"), &sctx, stage)?;
        let t = Instant::now();
        match blowup::analyze(&sctx, &stage.state.u, c0, &config.diagnostics) {
            Ok(report) => write_json(&dir.join("reports").join(format!("{name}.json")), &report)?,
            Err(e) => errors.push(format!("analyze {name}: {e}")),
        }
        let _ = writeln!(
            log,
            "{name} eps={:.6e} iters={} solve {:.3}s analyze {:.3}s",
            stage.state.eps,
            stage.state.iter,
            stage.elapsed_secs,
            t.elapsed().as_secs_f64()
        );
    }

    let mut upper_bound_passed = None;
    if let (true, Some(report)) = (config.upper_bound.enabled, thresholds.as_ref()) {
        let t = Instant::now();
        match upper_bound(&ctx, report, config) {
            Ok(ub) => {
                upper_bound_passed = Some(ub.passed);
                write_json(&dir.join("upper_bound.json"), &ub)?;
            }
            Err(e) => errors.push(format!("upper bound: {e}")),
        }
        let _ = writeln!(log, "upper bound {:.3}s", t.elapsed().as_secs_f64());
    }

    let metrics = traj.metrics();
    let last = traj.stages.last();
    let residual = last.map(|s| s.metrics.residual);
    let summary = Summary {
        weight: config.weight.label(),
        n: grid.n(),
        seed: config.seed,
        schedule: schedule.clone(),
        djlw_satisfied: thresholds.as_ref().map(|r| r.djlw_satisfied),
        djlw_value: thresholds.as_ref().map(|r| r.djlw_value),
        c0,
        p0: thresholds.as_ref().map(|r| r.argmax_p0),
        converged: errors.is_empty() && traj.converged(),
        status: if traj.stages.is_empty() { None } else { Some(traj.status.clone()) },
        stages_completed: traj.stages.len(),
        residual,
        j_final: last.map(|s| s.metrics.j_value),
        lambda_final: last.map(|s| s.metrics.lambda),
        lambda_max: metrics.iter().map(|m| m.lambda).reduce(f64::max),
        int_monitor_ok: traj.monitor().int_violations == 0,
        coherence: if metrics.is_empty() { None } else { Some(solver::coherence(&metrics)) },
        upper_bound_passed,
        exit_code: if errors.is_empty() { 0 } else { 1 },
        errors,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    let _ = writeln!(log, "total {:.3}s", started.elapsed().as_secs_f64());
    fs::write(dir.join("run.log"), log)?;
    Ok(PipelineOutcome { summary, dir })
}

/// `<name>.json` record plus `<name>.bin` field for one continuation stage;
/// `ctx` must carry the stage epsilon.
pub fn write_stage(dir: &Path, ctx: &FunctionalContext, stage: &Stage) -> Result<()> {
    let name = stage_name(stage.index);
    let record = StageRecord {
        state: stage.state.summary(ctx)?,
        metrics: stage.metrics,
        concentration_set: stage.concentration_set.clone(),
        blowup_flagged: stage.blowup_flagged,
    };
    write_json(&dir.join(format!("{name}.json")), &record)?;
    io::write_field(&dir.join(format!("{name}.bin")), ctx.grid().n(), stage.state.u.values(), "u")
}

/// Builds the test family at the threshold argmax and checks the bound.
pub fn upper_bound(ctx: &FunctionalContext, report: &ThresholdReport, config: &ExperimentConfig) -> Result<UpperBoundResult> {
    let ub = &config.upper_bound;
    let family = testfn::build_family(ctx, report, &ub.eps_list, ub.r_match)?;
    Ok(testfn::verify_upper_bound(&family, ub.margin, ub.min_core_cells))
}

const PROFILE_SAMPLES: usize = 101;
const PROFILE_ANGLES: usize = 16;
const PROFILE_CHART: f64 = 0.25;

fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn stage_files(dir: &Path, sub: &str) -> Result<Vec<PathBuf>> {
    let d = dir.join(sub);
    if !d.is_dir() {
        return Err(KwError::MissingArtifacts(d.display().to_string()));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&d)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_record(p))
        .collect();
    files.sort();
    Ok(files)
}

/// Stage and report JSON files, not the sidecars of binary fields.
pub fn is_record(path: &Path) -> bool {
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("");
    name.ends_with(".json") && !name.ends_with(".bin.json")
}

/// Writes trajectory, profile, energy, landscape and monitor CSVs into
/// `<dir>/plot` and returns their paths.
pub fn emit_plot_data(dir: &Path) -> Result<Vec<PathBuf>> {
    let config: ExperimentConfig = read_json(&dir.join("config.json"))?;
    let _: Summary = read_json(&dir.join("summary.json"))?;
    let landscape: Vec<RobinSample> = read_json(&dir.join("landscape.json"))?;
    let records: Vec<StageRecord> =
        stage_files(dir, "stages")?.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
    let reports: Vec<BlowupReport> =
        stage_files(dir, "reports")?.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
    if records.is_empty() || reports.len() != records.len() {
        return Err(KwError::MissingArtifacts(format!("{}: stage records or reports", dir.display())));
    }
    let out = dir.join("plot");
    fs::create_dir_all(&out)?;
    let grid = config.grid.build()?;
    let mut written = Vec::new();

    let path = out.join("trajectory.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["eps", "J", "lambda", "grad_l2", "mean_u"])?;
    for r in &records {
        let m = &r.metrics;
        w.write_record([fmt(m.eps), fmt(m.j_value), fmt(m.lambda), fmt(m.grad_l2), fmt(m.mean_u)])?;
    }
    w.flush()?;
    written.push(path);

    let last = records.len() - 1;
    let report = &reports[last];
    let bin = dir.join("stages").join(format!("{}.bin", stage_name(last)));
    if !bin.exists() {
        return Err(KwError::MissingArtifacts(bin.display().to_string()));
    }
    let (n, u) = io::read_field(&bin)?;
    if n != grid.n() {
        return Err(KwError::Format(format!("{} holds N = {n}", bin.display())));
    }
    // H₁ representative up to the constant fixed by its maximum λ
    let umax = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let v: Vec<f64> = u.iter().map(|x| x - umax + report.lambda).collect();
    let path = out.join("profile.csv");
    write_profile(&path, &grid, &v, report, config.diagnostics.neck_inner_multiplier)?;
    written.push(path);

    let path = out.join("energy.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["stage", "eps", "inner", "neck", "outer", "total"])?;
    for (i, (r, rep)) in records.iter().zip(&reports).enumerate() {
        w.write_record([
            i.to_string(),
            fmt(r.metrics.eps),
            fmt_opt(rep.energy_inner),
            fmt_opt(rep.energy_neck),
            fmt_opt(rep.energy_outer),
            fmt(rep.energy_total),
        ])?;
    }
    w.flush()?;
    written.push(path);

    let path = out.join("landscape.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["x", "y", "A", "log_h", "score"])?;
    let mut sorted = landscape.clone();
    sorted.sort_by_key(|s| (s.node.iy, s.node.ix));
    for s in &sorted {
        let (x, y) = grid.position(s.node);
        w.write_record([fmt(x), fmt(y), fmt(s.robin_a), fmt(s.log_h), fmt(s.score)])?;
    }
    w.flush()?;
    written.push(path);

    let path = out.join("monitors.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "stage",
        "eps",
        "lambda_plus_mean",
        "lambda_plus_alpha_mean",
        "int_min_margin",
        "int_violations",
        "local_mass_max",
        "lq_grad_norm",
    ])?;
    for (i, r) in records.iter().enumerate() {
        let m = &r.metrics;
        w.write_record([
            i.to_string(),
            fmt(m.eps),
            fmt(m.lambda_plus_mean),
            fmt(m.lambda_plus_alpha_mean),
            fmt(r.state.monitor.int_min_margin),
            r.state.monitor.int_violations.to_string(),
            fmt(m.local_mass_max),
            fmt(m.lq_grad_norm),
        ])?;
    }
    w.flush()?;
    written.push(path);
    Ok(written)
}

/// Angular mean of v(x* + r t) − λ against −2 log(1 + π h(x*) t²).
fn write_profile(path: &Path, grid: &SurfaceGrid, v: &[f64], report: &BlowupReport, r_max: f64) -> Result<()> {
    let r = report.scale;
    let peak = report.peak;
    let (px, py) = grid.position(peak);
    let to_flat = (-grid.conformal_factor()[grid.index(peak)]).exp();
    let t_max = r_max.min(0.9 * PROFILE_CHART / (r * to_flat));
    let hp = report.h_at_peak;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["radius", "u_rescaled", "phi0", "difference"])?;
    for k in 0..PROFILE_SAMPLES {
        let t = t_max * k as f64 / (PROFILE_SAMPLES - 1) as f64;
        let rho = r * t * to_flat;
        let mut acc = 0.0;
        for a in 0..PROFILE_ANGLES {
            let th = 2.0 * std::f64::consts::PI * a as f64 / PROFILE_ANGLES as f64;
            acc += grid.sample_bilinear(v, px + rho * th.cos(), py + rho * th.sin());
        }
        let u_rescaled = acc / PROFILE_ANGLES as f64 - report.lambda;
        let phi0 = if hp > 0.0 { functional::phi0(hp, t * t) } else { f64::NAN };
        w.write_record([fmt(t), fmt(u_rescaled), fmt(phi0), fmt(u_rescaled - phi0)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_weight_rejected() {
        let text = r#"{"grid": {"N": 64, "w": "zero"}, "output_dir": "/tmp/x"}"#;
        assert!(matches!(ExperimentConfig::from_json(text), Err(KwError::InvalidConfig(_))));
    }

    #[test]
    fn unknown_fixture_rejected() {
        let text = r#"{"grid": {"N": 64, "w": "zero"}, "weight": {"fixture": "sphere"}, "output_dir": "/tmp/x"}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert!(matches!(cfg.validate(), Err(KwError::UnknownFixture(_))));
        assert!(matches!(run_pipeline(&cfg), Err(KwError::UnknownFixture(_))));
    }

    #[test]
    fn fourier_weight() {
        let text = r#"{"grid": {"N": 32, "w": "zero"},
            "weight": {"fourier": [{"kx": 1, "ky": 0, "re": 1.0, "im": 0.0}], "offset": 0.8},
            "output_dir": "/tmp/y", "schedule": "geometric:3"}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg.validate().unwrap().len(), 3);
        let grid = cfg.grid.build().unwrap();
        let h = cfg.weight.build(grid).unwrap();
        assert!((h.at(Node::new(0, 0)) - 1.8).abs() < 1e-15);
        assert!((h.at(Node::new(16, 0)) + 0.2).abs() < 1e-12);
    }
}
