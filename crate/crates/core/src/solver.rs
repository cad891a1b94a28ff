//! Preconditioned descent for J_ε and continuation in ε.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blowup::{self, DiagnosticsConfig};
use crate::error::{KwError, Result};
use crate::functional::{self, FunctionalContext, EIGHT_PI};
use crate::spectral::Spectral;
use crate::surface::{Node, ScalarField, SurfaceGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Steepest,
    ConjugateGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub initial_step: f64,
    pub min_step: f64,
    pub mass_floor: f64,
    pub method: Method,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 20_000,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            initial_step: 1.0,
            min_step: 1e-14,
            mass_floor: 1e-8,
            method: Method::Steepest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearchStats {
    pub accepted: usize,
    pub trials: usize,
    pub mass_rejections: usize,
    #[serde(with = "crate::io::finite_or_null")]
    pub min_step: f64,
    #[serde(with = "crate::io::finite_or_null")]
    pub max_step: f64,
}

impl Default for LineSearchStats {
    fn default() -> Self {
        LineSearchStats { accepted: 0, trials: 0, mass_rejections: 0, min_step: f64::INFINITY, max_step: 0.0 }
    }
}

/// Per-iterate monitors over accepted iterates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterateMonitor {
    /// min of ∫e^u dv_g − 1/max h on H₁ representatives
    #[serde(with = "crate::io::finite_or_null")]
    pub int_min_margin: f64,
    pub int_violations: usize,
    /// max of ∫e^u dv_g on H₁ representatives
    #[serde(with = "crate::io::finite_or_null")]
    pub int_max: f64,
    pub checked: usize,
}

impl Default for IterateMonitor {
    fn default() -> Self {
        IterateMonitor { int_min_margin: f64::INFINITY, int_violations: 0, int_max: 0.0, checked: 0 }
    }
}

impl IterateMonitor {
    fn record(&mut self, m: functional::IntegralMonitor) {
        self.checked += 1;
        self.int_min_margin = self.int_min_margin.min(m.integral - m.lower);
        self.int_max = self.int_max.max(m.integral);
        if !m.holds() {
            self.int_violations += 1;
        }
    }

    pub fn merge(&mut self, other: &IterateMonitor) {
        self.checked += other.checked;
        self.int_min_margin = self.int_min_margin.min(other.int_min_margin);
        self.int_max = self.int_max.max(other.int_max);
        self.int_violations += other.int_violations;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct SolverState {
    /// iterate in the mean-zero gauge
    pub u: ScalarField,
    pub eps: f64,
    pub iter: usize,
    pub j_value: f64,
    pub grad_norm: f64,
    pub mass: f64,
    pub status: SolveStatus,
    pub line_search: LineSearchStats,
    pub j_history: Vec<f64>,
    pub monitor: IterateMonitor,
}

/// JSON view of a [`SolverState`]; the field itself goes to a binary file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    #[serde(rename = "N")]
    pub n: usize,
    pub eps: f64,
    pub iter: usize,
    #[serde(rename = "J")]
    pub j_value: f64,
    pub grad_norm: f64,
    pub mass: f64,
    pub residual: f64,
    pub status: SolveStatus,
    pub line_search: LineSearchStats,
    pub monitor: IterateMonitor,
}

impl SolverState {
    pub fn summary(&self, ctx: &FunctionalContext) -> Result<StateSummary> {
        Ok(StateSummary {
            n: self.u.grid().n(),
            eps: self.eps,
            iter: self.iter,
            j_value: self.j_value,
            grad_norm: self.grad_norm,
            mass: self.mass,
            residual: functional::residual_kw(&ctx.with_eps(self.eps)?, &self.u)?,
            status: self.status,
            line_search: self.line_search,
            monitor: self.monitor,
        })
    }

    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

fn gauge_fix(u: &ScalarField) -> ScalarField {
    u.add_constant(-u.mean())
}

/// (−Δ_flat + I)^{-1}(e^{2w} g).
pub fn precondition(grid: &SurfaceGrid, g: &[f64]) -> Vec<f64> {
    let weighted: Vec<f64> = g.iter().zip(grid.area_element()).map(|(a, b)| a * b).collect();
    grid.spectral()
        .apply_symbol(&weighted, |kx, ky| 1.0 / (1.0 - Spectral::laplace_symbol(kx, ky)))
}

/// Sobolev-preconditioned steepest descent direction, metric mean zero.
/// The shift does not change the slope since ∫ grad dv_g = 0.
pub fn descent_direction(ctx: &FunctionalContext, u: &ScalarField) -> Result<ScalarField> {
    let g = functional::grad_j(ctx, u)?;
    let s = precondition(ctx.grid(), g.values());
    Ok(gauge_fix(&u.with_values(s.into_iter().map(|v| -v).collect())))
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub step: f64,
    pub u: ScalarField,
    pub j_value: f64,
    pub trials: usize,
    pub mass_rejections: usize,
}

/// Armijo backtracking along `d` from `u`, keeping the mass above the floor.
pub fn line_search(
    ctx: &FunctionalContext,
    u: &ScalarField,
    d: &ScalarField,
    opts: &SolverOptions,
) -> Result<LineSearchOutcome> {
    let j0 = functional::eval_j(ctx, u)?;
    let g = functional::grad_j(ctx, u)?;
    let slope = ctx.grid().inner_g(g.values(), d.values());
    search(ctx, u, j0, slope, d, opts).ok_or_else(|| {
        let state = SolverState {
            u: u.clone(),
            eps: ctx.eps(),
            iter: 0,
            j_value: j0,
            grad_norm: ctx.grid().inner_g(g.values(), g.values()).sqrt(),
            mass: functional::mass(ctx, u),
            status: SolveStatus::MaxIterations,
            line_search: LineSearchStats::default(),
            j_history: vec![j0],
            monitor: IterateMonitor::default(),
        };
        KwError::LineSearchStall { state: Box::new(state) }
    })
}

fn search(
    ctx: &FunctionalContext,
    u: &ScalarField,
    j0: f64,
    slope: f64,
    d: &ScalarField,
    opts: &SolverOptions,
) -> Option<LineSearchOutcome> {
    let slack = 1e-12 * j0.abs().max(1.0);
    let mut t = opts.initial_step;
    let mut trials = 0;
    let mut mass_rejections = 0;
    while t >= opts.min_step {
        trials += 1;
        let cand = u.with_values(u.values().iter().zip(d.values()).map(|(a, b)| a + t * b).collect());
        let m = functional::mass(ctx, &cand);
        if m > opts.mass_floor && m.is_finite() {
            if let Ok(j) = functional::eval_j(ctx, &cand) {
                if j <= j0 + opts.armijo_c1 * t * slope + slack {
                    return Some(LineSearchOutcome { step: t, u: cand, j_value: j, trials, mass_rejections });
                }
            }
        } else {
            mass_rejections += 1;
        }
        t *= opts.backtrack;
    }
    None
}

/// Minimizes J_ε from `init`; ε is taken from the context.
pub fn minimize_at_eps(ctx: &FunctionalContext, init: &ScalarField, opts: &SolverOptions) -> Result<SolverState> {
    let eps = ctx.eps();
    if !(eps > 0.0 && eps < EIGHT_PI) {
        return Err(KwError::InvalidEpsilon { eps });
    }
    let m0 = functional::mass(ctx, init);
    if !(m0 > 0.0) {
        return Err(KwError::InadmissibleInit { mass: m0 });
    }
    let grid = ctx.grid().clone();
    let mut u = gauge_fix(init);
    let mut j = functional::eval_j(ctx, &u)?;
    let mut g = functional::grad_j(ctx, &u)?;
    let mut stats = LineSearchStats::default();
    let mut monitor = IterateMonitor::default();
    monitor.record(functional::integral_monitor(ctx, &u)?);
    let mut history = vec![j];
    let mut prev: Option<(Vec<f64>, Vec<f64>, f64)> = None; // (direction, preconditioned grad, ⟨g,s⟩)
    let mut iter = 0;
    loop {
        let grad_norm = grid.inner_g(g.values(), g.values()).sqrt();
        let make_state = |u: &ScalarField, status, stats, monitor, history: &Vec<f64>, iter| SolverState {
            u: u.clone(),
            eps,
            iter,
            j_value: j,
            grad_norm,
            mass: functional::mass(ctx, u),
            status,
            line_search: stats,
            j_history: history.clone(),
            monitor,
        };
        if grad_norm < opts.tol {
            return Ok(make_state(&u, SolveStatus::Converged, stats, monitor, &history, iter));
        }
        if iter >= opts.max_iter {
            return Ok(make_state(&u, SolveStatus::MaxIterations, stats, monitor, &history, iter));
        }
        let s = precondition(&grid, g.values());
        let gs = grid.inner_g(g.values(), &s);
        let mut d: Vec<f64> = s.iter().map(|v| -v).collect();
        if opts.method == Method::ConjugateGradient {
            if let Some((dp, sp, gsp)) = &prev {
                let num = gs - grid.inner_g(g.values(), sp);
                let beta = (num / gsp).max(0.0);
                let cand: Vec<f64> = d.iter().zip(dp).map(|(a, b)| a + beta * b).collect();
                if grid.inner_g(g.values(), &cand) < 0.0 {
                    d = cand;
                }
            }
        }
        let slope = grid.inner_g(g.values(), &d);
        let dfield = u.with_values(d.clone());
        let out = match search(ctx, &u, j, slope, &dfield, opts) {
            Some(o) => o,
            None if opts.method == Method::ConjugateGradient && prev.is_some() => {
                // retry once along the steepest direction
                let steep = u.with_values(s.iter().map(|v| -v).collect());
                match search(ctx, &u, j, -gs, &steep, opts) {
                    Some(o) => {
                        d = steep.into_values();
                        o
                    }
                    None => {
                        let st = make_state(&u, SolveStatus::MaxIterations, stats, monitor, &history, iter);
                        return Err(KwError::LineSearchStall { state: Box::new(st) });
                    }
                }
            }
            None => {
                let st = make_state(&u, SolveStatus::MaxIterations, stats, monitor, &history, iter);
                return Err(KwError::LineSearchStall { state: Box::new(st) });
            }
        };
        stats.accepted += 1;
        stats.trials += out.trials;
        stats.mass_rejections += out.mass_rejections;
        stats.min_step = stats.min_step.min(out.step);
        stats.max_step = stats.max_step.max(out.step);
        u = gauge_fix(&out.u);
        j = out.j_value;
        history.push(j);
        g = functional::grad_j(ctx, &u)?;
        monitor.record(functional::integral_monitor(ctx, &u)?);
        prev = Some((d, s, gs));
        iter += 1;
    }
}

/// 8π·2^{−k}, k = 1..K.
pub fn geometric_schedule(k: usize) -> Vec<f64> {
    (1..=k).map(|i| EIGHT_PI * 0.5f64.powi(i as i32)).collect()
}

/// `geometric:K` or a comma-separated list of ε values.
pub fn parse_schedule(spec: &str) -> Result<Vec<f64>> {
    let spec = spec.trim();
    let eps = if let Some(k) = spec.strip_prefix("geometric:") {
        let k: usize = k
            .trim()
            .parse()
            .map_err(|_| KwError::InvalidConfig(format!("bad schedule `{spec}`")))?;
        if k == 0 {
            return Err(KwError::InvalidConfig("geometric schedule needs K >= 1".into()));
        }
        geometric_schedule(k)
    } else {
        spec.split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| KwError::InvalidConfig(format!("bad schedule `{spec}`")))?
    };
    check_schedule(&eps)?;
    Ok(eps)
}

fn check_schedule(eps: &[f64]) -> Result<()> {
    if eps.is_empty()
        || eps.iter().any(|&e| !(e > 0.0 && e < EIGHT_PI))
        || eps.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(KwError::ScheduleNotDecreasing);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub eps: f64,
    #[serde(rename = "J")]
    pub j_value: f64,
    /// max of the H₁ representative
    pub lambda: f64,
    pub peak: Node,
    /// ‖∇u‖₂
    pub grad_l2: f64,
    /// mean of the H₁ representative
    pub mean_u: f64,
    pub mass: f64,
    pub iters: usize,
    pub residual: f64,
    pub local_mass_max: f64,
    /// λ + ū
    #[serde(with = "crate::io::finite_or_null")]
    pub lambda_plus_mean: f64,
    /// λ + 2ū
    #[serde(with = "crate::io::finite_or_null")]
    pub lambda_plus_alpha_mean: f64,
    #[serde(with = "crate::io::finite_or_null")]
    pub lq_grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub index: usize,
    pub state: SolverState,
    pub metrics: StageMetrics,
    pub concentration_set: Vec<Node>,
    pub blowup_flagged: bool,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TrajectoryStatus {
    Completed,
    Blowup { stage: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub schedule: Vec<f64>,
    pub stages: Vec<Stage>,
    pub status: TrajectoryStatus,
}

impl Trajectory {
    pub fn converged(&self) -> bool {
        self.status == TrajectoryStatus::Completed
            && self.stages.len() == self.schedule.len()
            && self.stages.iter().all(|s| s.state.converged())
    }

    pub fn metrics(&self) -> Vec<StageMetrics> {
        self.stages.iter().map(|s| s.metrics).collect()
    }

    pub fn monitor(&self) -> IterateMonitor {
        let mut m = IterateMonitor::default();
        for s in &self.stages {
            m.merge(&s.state.monitor);
        }
        m
    }
}

pub fn stage_metrics(
    ctx: &FunctionalContext,
    state: &SolverState,
    cfg: &DiagnosticsConfig,
) -> Result<(StageMetrics, Vec<Node>)> {
    let v = functional::normalize_h1(ctx, &state.u)?;
    let lambda = v.max();
    let mean_u = v.mean();
    let local = blowup::local_mass_field(ctx, &v, cfg.concentration_radius);
    let local_mass_max = local.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let set = blowup::concentration_set(ctx, &v, cfg)?;
    Ok((
        StageMetrics {
            eps: state.eps,
            j_value: state.j_value,
            lambda,
            peak: v.argmax(),
            grad_l2: state.u.grad_norm_sq().sqrt(),
            mean_u,
            mass: functional::mass(ctx, &v),
            iters: state.iter,
            residual: functional::residual_kw(ctx, &v)?,
            local_mass_max,
            lambda_plus_mean: lambda + mean_u,
            lambda_plus_alpha_mean: lambda + 2.0 * mean_u,
            lq_grad_norm: functional::lq_gradient_norm(&v, 1.5),
        },
        set,
    ))
}

/// Warm-started minimization over a strictly decreasing ε schedule; stops
/// early when the blow-up detector fires.
pub fn continue_to_zero(
    ctx: &FunctionalContext,
    schedule: &[f64],
    init: Option<&ScalarField>,
    opts: &SolverOptions,
    cfg: &DiagnosticsConfig,
) -> Result<Trajectory> {
    match continue_recording(ctx, schedule, init, opts, cfg)? {
        (traj, None) => Ok(traj),
        (_, Some(e)) => Err(e),
    }
}

/// Like [`continue_to_zero`] but keeps the stages finished before a failing
/// one; the stage error comes back alongside the partial trajectory.
pub fn continue_recording(
    ctx: &FunctionalContext,
    schedule: &[f64],
    init: Option<&ScalarField>,
    opts: &SolverOptions,
    cfg: &DiagnosticsConfig,
) -> Result<(Trajectory, Option<KwError>)> {
    check_schedule(schedule)?;
    let mut u = match init {
        Some(f) => f.clone(),
        None => ScalarField::constant(ctx.grid().clone(), 0.0),
    };
    let mut stages = Vec::new();
    let mut status = TrajectoryStatus::Completed;
    let mut failure = None;
    for (index, &eps) in schedule.iter().enumerate() {
        let run = || -> Result<(SolverState, StageMetrics, Vec<Node>)> {
            let sctx = ctx.with_eps(eps)?;
            let state = minimize_at_eps(&sctx, &u, opts)?;
            let (metrics, set) = stage_metrics(&sctx, &state, cfg)?;
            Ok((state, metrics, set))
        };
        let started = std::time::Instant::now();
        let (state, metrics, set) = match run() {
            Ok(r) => r,
            Err(e) => {
                failure = Some(KwError::Stage { index, source: Box::new(e) });
                break;
            }
        };
        log::info!(
            "stage {index} eps={eps:.6e} iters={} J={:.10} lambda={:.4}",
            state.iter,
            state.j_value,
            metrics.lambda
        );
        let by_lambda = metrics.lambda > cfg.lambda_cap;
        let by_mass = metrics.local_mass_max >= cfg.concentration_threshold;
        u = state.u.clone();
        stages.push(Stage {
            index,
            state,
            metrics,
            concentration_set: set,
            blowup_flagged: by_lambda || by_mass,
            elapsed_secs: started.elapsed().as_secs_f64(),
        });
        if by_lambda || by_mass {
            let reason = if by_lambda {
                format!("lambda {:.4} above cap {}", metrics.lambda, cfg.lambda_cap)
            } else {
                format!("local mass {:.4} reached {}", metrics.local_mass_max, cfg.concentration_threshold)
            };
            status = TrajectoryStatus::Blowup { stage: index, reason };
            break;
        }
    }
    Ok((Trajectory { schedule: schedule.to_vec(), stages, status }, failure))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation.
pub fn rank_correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in ra.iter().zip(rb.iter()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return f64::NAN;
    }
    sab / (saa * sbb).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    /// true when one of λ, ‖∇u‖₂, −ū increases by more than 2 overall
    pub applies: bool,
    pub lambda_range: f64,
    #[serde(with = "crate::io::finite_or_null")]
    pub min_rank_correlation: f64,
}

impl CoherenceReport {
    pub fn passes(&self, threshold: f64) -> bool {
        !self.applies || self.min_rank_correlation > threshold
    }
}

/// Pairwise rank correlations between λ, ‖∇u‖₂ and −ū across stages.
pub fn coherence(metrics: &[StageMetrics]) -> CoherenceReport {
    let lam: Vec<f64> = metrics.iter().map(|m| m.lambda).collect();
    let grad: Vec<f64> = metrics.iter().map(|m| m.grad_l2).collect();
    let neg_mean: Vec<f64> = metrics.iter().map(|m| -m.mean_u).collect();
    let rise = |v: &[f64]| match (v.first(), v.last()) {
        (Some(a), Some(b)) => b - a,
        _ => 0.0,
    };
    let range = |v: &[f64]| {
        v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let applies = metrics.len() >= 3 && [rise(&lam), rise(&grad), rise(&neg_mean)].iter().any(|&r| r > 2.0);
    let min_rank_correlation = if metrics.len() >= 2 {
        [
            rank_correlation(&lam, &grad),
            rank_correlation(&lam, &neg_mean),
            rank_correlation(&grad, &neg_mean),
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
    } else {
        f64::NAN
    };
    CoherenceReport { applies, lambda_range: if lam.is_empty() { 0.0 } else { range(&lam) }, min_rank_correlation }
}

/// Run-level CSV: eps, J, lambda, grad_l2, mean_u, mass, iters.
pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["eps", "J", "lambda", "grad_l2", "mean_u", "mass", "iters"])?;
    for m in traj.metrics() {
        w.write_record([
            format!("{:.17e}", m.eps),
            format!("{:.17e}", m.j_value),
            format!("{:.17e}", m.lambda),
            format!("{:.17e}", m.grad_l2),
            format!("{:.17e}", m.mean_u),
            format!("{:.17e}", m.mass),
            m.iters.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::SurfaceGrid;
    use std::f64::consts::PI;

    fn ctx_with(h: impl Fn(f64, f64) -> f64, n: usize, eps: f64) -> FunctionalContext {
        let g = SurfaceGrid::flat(n).unwrap();
        FunctionalContext::new(ScalarField::from_fn(g, h), eps).unwrap()
    }

    #[test]
    fn exact_critical_point() {
        let ctx = ctx_with(|_, _| 1.0, 32, 0.1 * EIGHT_PI);
        let u0 = ScalarField::constant(ctx.grid().clone(), 0.0);
        let st = minimize_at_eps(&ctx, &u0, &SolverOptions::default()).unwrap();
        assert!(st.iter <= 1);
        assert!(st.grad_norm < 1e-12);
        assert!(st.converged());
    }

    #[test]
    fn preconditioner_on_mode() {
        let g = SurfaceGrid::flat(64).unwrap();
        let s = ScalarField::from_fn(g.clone(), |x, _| (2.0 * PI * x).sin());
        let d = precondition(&g, s.values());
        for (a, b) in s.values().iter().zip(d.iter()) {
            assert!((b - a / (4.0 * PI * PI + 1.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn direction_zero_at_critical_point() {
        let ctx = ctx_with(|_, _| 1.0, 32, 0.5);
        let u = ScalarField::constant(ctx.grid().clone(), 0.0);
        let d = descent_direction(&ctx, &u).unwrap();
        assert!(d.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn multistart_agreement() {
        let ctx = ctx_with(|x, _| 1.0 + 0.5 * (2.0 * PI * x).sin(), 64, 0.5);
        let opts = SolverOptions::default();
        let a = minimize_at_eps(&ctx, &ScalarField::constant(ctx.grid().clone(), 0.0), &opts).unwrap();
        let init = ScalarField::random_band_limited(ctx.grid().clone(), 7, 3, 1.0);
        let b = minimize_at_eps(&ctx, &init, &opts).unwrap();
        assert!(a.converged() && b.converged());
        assert!((a.j_value - b.j_value).abs() < 1e-8);
        assert!(functional::residual_kw(&ctx, &a.u).unwrap() < 1e-7);
    }

    #[test]
    fn sign_changing_keeps_mass_positive() {
        let ctx = ctx_with(|x, _| (2.0 * PI * x).sin() + 0.1, 64, 4.0 * PI);
        let u0 = ScalarField::constant(ctx.grid().clone(), 0.0);
        let st = minimize_at_eps(&ctx, &u0, &SolverOptions::default()).unwrap();
        assert!(st.converged());
        assert!(st.mass > 0.0);
        for w in st.j_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn inadmissible_init() {
        let ctx = ctx_with(|x, _| (2.0 * PI * x).sin(), 32, 1.0);
        let u0 = ScalarField::constant(ctx.grid().clone(), 0.0);
        assert!(matches!(
            minimize_at_eps(&ctx, &u0, &SolverOptions::default()),
            Err(KwError::InadmissibleInit { .. })
        ));
    }

    #[test]
    fn schedules() {
        assert_eq!(parse_schedule("geometric:3").unwrap().len(), 3);
        assert!((parse_schedule("geometric:1").unwrap()[0] - 4.0 * PI).abs() < 1e-15);
        assert_eq!(parse_schedule("1.0, 0.5,0.1").unwrap(), vec![1.0, 0.5, 0.1]);
        assert!(matches!(parse_schedule("0.5,1.0"), Err(KwError::ScheduleNotDecreasing)));
        assert!(parse_schedule("geometric:x").is_err());
    }

    #[test]
    fn rank_correlation_basics() {
        assert!((rank_correlation(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((rank_correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn armijo_accepts_full_step_near_minimum() {
        let ctx = ctx_with(|_, _| 1.0, 32, 1.0);
        let u = ScalarField::from_fn(ctx.grid().clone(), |x, _| 1e-3 * (2.0 * PI * x).cos());
        let d = descent_direction(&ctx, &u).unwrap();
        let out = line_search(&ctx, &u, &d, &SolverOptions::default()).unwrap();
        assert_eq!(out.step, 1.0);
        assert_eq!(out.trials, 1);
    }

    #[test]
    fn mass_guard_halves_step() {
        let ctx = ctx_with(|x, _| (2.0 * PI * x).sin() + 0.05, 32, 1.0);
        let u = ScalarField::constant(ctx.grid().clone(), 0.0);
        // pushes e^u toward the negative part of h
        let d = ScalarField::from_fn(ctx.grid().clone(), |x, _| -40.0 * (2.0 * PI * x).sin());
        let opts = SolverOptions { armijo_c1: 0.0, ..Default::default() };
        let j0 = functional::eval_j(&ctx, &u).unwrap();
        let out = search(&ctx, &u, j0, 0.0, &d, &opts);
        if let Some(o) = out {
            assert!(o.mass_rejections > 0);
            assert!(functional::mass(&ctx, &o.u) > opts.mass_floor);
        }
    }
}
