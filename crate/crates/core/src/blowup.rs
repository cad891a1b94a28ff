//! Concentration, bubble and Green-limit diagnostics, plus the glued
//! synthetic blow-up family used to exercise them.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{KwError, Result};
use crate::functional::{self, phi0, FunctionalContext};
use crate::greens::{self, GreenData};
use crate::surface::{Node, ScalarField, SurfaceGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsConfig {
    /// r_c, radius of the local-mass balls
    pub concentration_radius: f64,
    /// fixed at ½
    pub concentration_threshold: f64,
    /// γ in the ½ − γ small-mass regime
    pub gamma: f64,
    /// δ, outer radius of the neck
    pub neck_outer: f64,
    /// R, inner neck radius in units of r = e^{−λ/2}
    pub neck_inner_multiplier: f64,
    pub lambda_cap: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            concentration_radius: 0.05,
            concentration_threshold: 0.5,
            gamma: 0.1,
            neck_outer: 0.1,
            neck_inner_multiplier: 10.0,
            lambda_cap: 14.0,
        }
    }
}

impl DiagnosticsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(KwError::InvalidConfig(m.to_string()));
        if !(0.0 < self.concentration_radius
            && self.concentration_radius < self.neck_outer
            && self.neck_outer < 0.25)
        {
            return bad("need 0 < r_c < delta < 1/4");
        }
        if self.neck_inner_multiplier < 1.0 {
            return bad("need R >= 1");
        }
        if self.concentration_threshold != 0.5 {
            return bad("concentration threshold is fixed at 1/2");
        }
        if !(self.gamma > 0.0 && self.gamma < 0.5) {
            return bad("need 0 < gamma < 1/2");
        }
        Ok(())
    }
}

/// Local mass ∫_{B_r(x)} |h| e^v dv_g at every node, flat balls, by FFT
/// convolution with the disk indicator.
pub fn local_mass_field(ctx: &FunctionalContext, v: &ScalarField, radius: f64) -> Vec<f64> {
    let grid = ctx.grid();
    let n = grid.n();
    let sp = grid.spectral();
    let density: Vec<f64> = ctx
        .h()
        .values()
        .iter()
        .zip(v.values())
        .zip(grid.area_element())
        .map(|((h, x), a)| h.abs() * x.exp() * a)
        .collect();
    let origin = Node::new(0, 0);
    let kernel: Vec<f64> = (0..grid.len())
        .map(|i| {
            let (dx, dy) = grid.displacement(origin, i);
            if dx.hypot(dy) <= radius {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let a = sp.forward(&density);
    let b = sp.forward(&kernel);
    let prod: Vec<Complex64> = a.iter().zip(b.iter()).map(|(x, y)| x * y).collect();
    let scale = 1.0 / (n * n) as f64;
    sp.inverse(prod).into_iter().map(|m| (m * scale).max(0.0)).collect()
}

/// Nodes whose local mass reaches the threshold, one representative (the
/// density maximum) per connected cluster, clusters merged within r_c.
pub fn concentration_set(ctx: &FunctionalContext, u: &ScalarField, cfg: &DiagnosticsConfig) -> Result<Vec<Node>> {
    let v = functional::normalize_h1(ctx, u)?;
    let grid = ctx.grid();
    let n = grid.n();
    let local = local_mass_field(ctx, &v, cfg.concentration_radius);
    let density: Vec<f64> = ctx.h().values().iter().zip(v.values()).map(|(h, x)| h.abs() * x.exp()).collect();
    let hot: Vec<bool> = local.iter().map(|&m| m >= cfg.concentration_threshold).collect();
    let mut seen = vec![false; grid.len()];
    let mut reps: Vec<usize> = Vec::new();
    for start in 0..grid.len() {
        if !hot[start] || seen[start] {
            continue;
        }
        let mut best = start;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            if density[i] > density[best] || (density[i] == density[best] && i < best) {
                best = i;
            }
            let (ix, iy) = (i % n, i / n);
            for (dx, dy) in [(1, 0), (n - 1, 0), (0, 1), (0, n - 1)] {
                let j = ((iy + dy) % n) * n + (ix + dx) % n;
                if hot[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        reps.push(best);
    }
    // merge representatives closer than r_c, keeping the denser one
    let mut keep = vec![true; reps.len()];
    for a in 0..reps.len() {
        for b in (a + 1)..reps.len() {
            if !keep[a] || !keep[b] {
                continue;
            }
            let d = grid.flat_distance(grid.node(reps[a]), grid.node(reps[b]));
            if d < cfg.concentration_radius {
                if density[reps[b]] > density[reps[a]] {
                    keep[a] = false;
                } else {
                    keep[b] = false;
                }
            }
        }
    }
    let mut out: Vec<usize> = reps.into_iter().zip(keep).filter(|(_, k)| *k).map(|(r, _)| r).collect();
    out.sort_unstable();
    Ok(out.into_iter().map(|i| grid.node(i)).collect())
}

/// RMS over |y| ≤ R of u(x* + r y) − λ − φ₀(y), r = e^{−λ/2}, bilinear
/// sampling.
pub fn rescale_fit_bubble(
    u: &ScalarField,
    peak: Node,
    lambda: f64,
    hp: f64,
    big_r: f64,
    chart: f64,
) -> Result<f64> {
    if !(hp > 0.0) {
        return Err(KwError::NonpositiveWeightAtPoint { value: hp });
    }
    let r = (-0.5 * lambda).exp();
    if r * big_r >= chart {
        return Err(KwError::WindowTooLarge { window: r * big_r, limit: chart });
    }
    let grid = u.grid();
    let (px, py) = grid.position(peak);
    let to_flat = r * (-grid.conformal_factor()[grid.index(peak)]).exp();
    let m = 24;
    let step = big_r / m as f64;
    let mut sum = 0.0;
    let mut count = 0usize;
    for j in -m..=m {
        for i in -m..=m {
            let (y1, y2) = (i as f64 * step, j as f64 * step);
            let y2n = y1 * y1 + y2 * y2;
            if y2n > big_r * big_r {
                continue;
            }
            let val = grid.sample_bilinear(u.values(), px + to_flat * y1, py + to_flat * y2);
            let d = val - lambda - phi0(hp, y2n);
            sum += d * d;
            count += 1;
        }
    }
    Ok((sum / count as f64).sqrt())
}

/// RMS of (u − ū) − G_p over nodes farther than `exclusion` from the pole.
pub fn green_limit_fit(u_h1: &ScalarField, green: &GreenData, exclusion: f64) -> f64 {
    let grid = u_h1.grid();
    let mean = u_h1.mean();
    let mut s = 0.0;
    let mut wsum = 0.0;
    for i in 0..grid.len() {
        if grid.local_radius(green.pole, i) > exclusion {
            let a = grid.area_element()[i];
            let d = u_h1.values()[i] - mean - green.g.values()[i];
            s += a * d * d;
            wsum += a;
        }
    }
    if wsum == 0.0 {
        return 0.0;
    }
    (s / wsum).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierResult {
    /// min over the neck of u − (G − λ − C₄)
    pub margin: f64,
    /// max over the two boundary rings of G − λ − u
    pub c4: f64,
}

/// Comparison of u with G_{x*} − λ − C₄ on the neck B_δ ∖ B_{Rr}; the pole
/// of `green` is the peak.
pub fn neck_barrier_check(
    ctx: &FunctionalContext,
    u: &ScalarField,
    green: &GreenData,
    lambda: f64,
    cfg: &DiagnosticsConfig,
) -> Result<BarrierResult> {
    let grid = u.grid();
    let p = green.pole;
    let inner = cfg.neck_inner_multiplier * (-0.5 * lambda).exp();
    let outer = cfg.neck_outer;
    if inner >= outer {
        return Err(KwError::NeckEmpty { inner, outer });
    }
    let radii: Vec<f64> = (0..grid.len()).map(|i| grid.local_radius(p, i)).collect();
    let min_h = radii
        .iter()
        .zip(ctx.h().values())
        .filter(|(r, _)| **r <= outer)
        .map(|(_, h)| *h)
        .fold(f64::INFINITY, f64::min);
    if min_h <= 0.0 {
        return Err(KwError::PositivityViolated { min_h });
    }
    let half = 0.5 * grid.conformal_factor()[grid.index(p)].exp() / grid.n() as f64;
    let uv = u.values();
    let gv = green.g.values();
    let mut c4 = f64::NEG_INFINITY;
    for (i, &r) in radii.iter().enumerate() {
        if (r - inner).abs() <= half || (r - outer).abs() <= half {
            c4 = c4.max(gv[i] - lambda - uv[i]);
        }
    }
    let mut margin = f64::INFINITY;
    for (i, &r) in radii.iter().enumerate() {
        if r >= inner && r <= outer {
            margin = margin.min(uv[i] - (gv[i] - lambda - c4));
        }
    }
    Ok(BarrierResult { margin, c4 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySplit {
    pub inner: f64,
    pub neck: f64,
    pub outer: f64,
    pub total: f64,
}

/// Pointwise Dirichlet density ½Δ(u²) − uΔu; its node sum is the Parseval
/// energy.
pub fn energy_density(u: &ScalarField) -> Vec<f64> {
    let grid = u.grid();
    let sq: Vec<f64> = u.values().iter().map(|v| v * v).collect();
    let lsq = grid.laplacian_flat(&sq);
    let lu = grid.laplacian_flat(u.values());
    let scale = 1.0 / grid.len() as f64;
    lsq.iter()
        .zip(lu.iter())
        .zip(u.values())
        .map(|((a, b), v)| (0.5 * a - v * b) * scale)
        .collect()
}

/// Dirichlet energy over B_{Rr}(x*), B_δ ∖ B_{Rr}, and the complement.
pub fn energy_decomposition(u: &ScalarField, peak: Node, lambda: f64, cfg: &DiagnosticsConfig) -> Result<EnergySplit> {
    let grid = u.grid();
    let inner_r = cfg.neck_inner_multiplier * (-0.5 * lambda).exp();
    if inner_r >= cfg.neck_outer {
        return Err(KwError::NeckEmpty { inner: inner_r, outer: cfg.neck_outer });
    }
    let dens = energy_density(u);
    let (mut inner, mut neck, mut outer) = (0.0, 0.0, 0.0);
    for (i, e) in dens.iter().enumerate() {
        let r = grid.local_radius(peak, i);
        if r < inner_r {
            inner += e;
        } else if r < cfg.neck_outer {
            neck += e;
        } else {
            outer += e;
        }
    }
    Ok(EnergySplit { inner, neck, outer, total: u.grad_norm_sq() })
}

pub fn lower_bound_gap(j_value: f64, c0: f64) -> f64 {
    j_value - c0
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

/// Bubble λ + φ₀(ρ/r) inside B_{Rr}, G_p + c outside B_{2Rr}, quintic blend
/// in between; c matches the closed forms at ρ = Rr.
pub fn synthesize_family(
    grid: &Arc<SurfaceGrid>,
    green: &GreenData,
    hp: f64,
    lambda: f64,
    cfg: &DiagnosticsConfig,
) -> Result<ScalarField> {
    if !(hp > 0.0) {
        return Err(KwError::NonpositiveWeightAtPoint { value: hp });
    }
    if !green.robin_a.is_finite() {
        return Err(KwError::InvalidConfig("Green data carries no Robin constant".into()));
    }
    let r = (-0.5 * lambda).exp();
    let big_r = cfg.neck_inner_multiplier;
    if r * big_r >= cfg.neck_outer {
        return Err(KwError::WindowTooLarge { window: r * big_r, limit: cfg.neck_outer });
    }
    let c = -lambda - 2.0 * ((1.0 + PI * hp * big_r * big_r) / (big_r * big_r)).ln() - green.robin_a;
    let glue = big_r * r;
    let vals = (0..grid.len())
        .map(|i| {
            let rho = grid.local_radius(green.pole, i);
            let s = smoothstep((rho - glue) / glue);
            let inner = lambda + phi0(hp, (rho / r) * (rho / r));
            let outer = green.g.values()[i] + c;
            (1.0 - s) * inner + s * outer
        })
        .collect();
    ScalarField::new(grid.clone(), vals)
}

/// ∫ over nodes with ρ > radius of |h| e^v dv_g.
pub fn mass_outside(ctx: &FunctionalContext, v: &ScalarField, center: Node, radius: f64) -> f64 {
    let grid = ctx.grid();
    let mut s = 0.0;
    for i in 0..grid.len() {
        if grid.local_radius(center, i) > radius {
            s += ctx.h().values()[i].abs() * v.values()[i].exp() * grid.area_element()[i];
        }
    }
    s / grid.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    pub lambda: f64,
    pub peak: Node,
    pub peak_position: (f64, f64),
    pub scale: f64,
    pub h_at_peak: f64,
    pub h_positive_at_peak: bool,
    pub concentration_set: Vec<Node>,
    #[serde(with = "crate::io::finite_or_null")]
    pub local_mass_max: f64,
    #[serde(with = "crate::io::finite_or_null")]
    pub mass_outside_delta: f64,
    /// absent when the rescaled window leaves the chart
    pub profile_fit_rms: Option<f64>,
    #[serde(with = "crate::io::finite_or_null")]
    pub green_fit_rms: f64,
    #[serde(rename = "A_peak")]
    #[serde(with = "crate::io::finite_or_null")]
    pub robin_a_peak: f64,
    pub barrier_margin: Option<f64>,
    pub barrier_constant: Option<f64>,
    /// ok, neck-empty or positivity-violated
    pub barrier_status: String,
    pub energy_inner: Option<f64>,
    pub energy_neck: Option<f64>,
    pub energy_outer: Option<f64>,
    pub energy_total: f64,
    pub mt_ratio: Option<f64>,
    #[serde(rename = "J_value")]
    pub j_value: f64,
    #[serde(rename = "C0")]
    pub c0: Option<f64>,
    #[serde(rename = "J_minus_C0")]
    pub j_minus_c0: Option<f64>,
}

/// Full diagnostic report for a field; the Green function is solved at the
/// peak of the H₁ representative.
pub fn analyze(ctx: &FunctionalContext, u: &ScalarField, c0: Option<f64>, cfg: &DiagnosticsConfig) -> Result<BlowupReport> {
    cfg.validate()?;
    let v = functional::normalize_h1(ctx, u)?;
    let grid = ctx.grid();
    let lambda = v.max();
    let peak = v.argmax();
    let hp = ctx.h().at(peak);
    let green = greens::solve_green(grid, peak);
    let local = local_mass_field(ctx, &v, cfg.concentration_radius);
    let profile_fit_rms = if hp > 0.0 {
        rescale_fit_bubble(&v, peak, lambda, hp, cfg.neck_inner_multiplier, cfg.neck_outer).ok()
    } else {
        None
    };
    let (barrier_margin, barrier_constant, barrier_status) = match neck_barrier_check(ctx, &v, &green, lambda, cfg) {
        Ok(b) => (Some(b.margin), Some(b.c4), "ok".to_string()),
        Err(KwError::NeckEmpty { .. }) => (None, None, "neck-empty".to_string()),
        Err(KwError::PositivityViolated { .. }) => (None, None, "positivity-violated".to_string()),
        Err(e) => return Err(e),
    };
    let split = energy_decomposition(&v, peak, lambda, cfg).ok();
    let j_value = functional::eval_j(ctx, &v)?;
    Ok(BlowupReport {
        lambda,
        peak,
        peak_position: grid.position(peak),
        scale: (-0.5 * lambda).exp(),
        h_at_peak: hp,
        h_positive_at_peak: hp > 0.0,
        concentration_set: concentration_set(ctx, &v, cfg)?,
        local_mass_max: local.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        mass_outside_delta: mass_outside(ctx, &v, peak, cfg.neck_outer),
        profile_fit_rms,
        green_fit_rms: green_limit_fit(&v, &green, cfg.neck_outer),
        robin_a_peak: green.robin_a,
        barrier_margin,
        barrier_constant,
        barrier_status,
        energy_inner: split.map(|s| s.inner),
        energy_neck: split.map(|s| s.neck),
        energy_outer: split.map(|s| s.outer),
        energy_total: v.grad_norm_sq(),
        mt_ratio: functional::mt_ratio(&v).ok(),
        j_value,
        c0,
        j_minus_c0: c0.map(|c| lower_bound_gap(j_value, c)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::SurfaceGrid;

    fn flat_ctx(n: usize) -> FunctionalContext {
        let g = SurfaceGrid::flat(n).unwrap();
        FunctionalContext::new(ScalarField::constant(g, 1.0), 0.0).unwrap()
    }

    #[test]
    fn uniform_mass_has_empty_set() {
        let ctx = flat_ctx(64);
        let u = ScalarField::constant(ctx.grid().clone(), 0.0);
        let cfg = DiagnosticsConfig::default();
        let local = local_mass_field(&ctx, &u, cfg.concentration_radius);
        let disk = local[0];
        assert!((disk - PI * 0.05 * 0.05).abs() < 2e-3, "{disk}");
        assert!(concentration_set(&ctx, &u, &cfg).unwrap().is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(DiagnosticsConfig::default().validate().is_ok());
        let bad = DiagnosticsConfig { neck_outer: 0.3, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DiagnosticsConfig { concentration_threshold: 0.4, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn two_bubble_mass_split() {
        // density 0.6·bubble_a + 0.4·bubble_b, each bubble of unit mass
        let ctx = flat_ctx(256);
        let grid = ctx.grid().clone();
        let (pa, pb) = (Node::new(64, 64), Node::new(192, 160));
        let eps2 = 0.01f64.powi(2);
        let bump = |p: Node, i: usize| {
            let (dx, dy) = grid.displacement(p, i);
            let r2 = dx * dx + dy * dy;
            (1.0 / (PI * eps2)) / (1.0 + r2 / eps2).powi(2)
        };
        let vals: Vec<f64> = (0..grid.len())
            .map(|i| (0.6 * bump(pa, i) + 0.4 * bump(pb, i) + 1e-6).ln())
            .collect();
        let u = ScalarField::new(grid.clone(), vals).unwrap();
        let set = concentration_set(&ctx, &u, &DiagnosticsConfig::default()).unwrap();
        assert_eq!(set, vec![pa]);
    }

    #[test]
    fn exact_bubble_profile() {
        let grid = SurfaceGrid::flat(512).unwrap();
        let p = Node::new(256, 256);
        let lambda = 6.0;
        let r = (-0.5f64 * lambda).exp();
        let vals = (0..grid.len())
            .map(|i| {
                let rho = grid.local_radius(p, i) / r;
                lambda + phi0(1.0, rho * rho)
            })
            .collect();
        let u = ScalarField::new(grid.clone(), vals).unwrap();
        let rms = rescale_fit_bubble(&u, p, lambda, 1.0, 4.0, 0.25).unwrap();
        assert!(rms < 1e-3, "{rms}");
        assert!(matches!(
            rescale_fit_bubble(&u, p, lambda, 1.0, 4.0, 0.15),
            Err(KwError::WindowTooLarge { .. })
        ));
        let zero = ScalarField::constant(grid, 0.0);
        assert!(rescale_fit_bubble(&zero, p, 0.0, 1.0, 0.2, 0.25).unwrap() > 0.0);
    }

    #[test]
    fn constant_field_has_no_energy() {
        let grid = SurfaceGrid::flat(64).unwrap();
        let u = ScalarField::constant(grid, 1.7);
        let s = energy_decomposition(&u, Node::new(3, 3), 12.0, &DiagnosticsConfig::default()).unwrap();
        assert!(s.inner.abs() < 1e-12 && s.neck.abs() < 1e-12 && s.outer.abs() < 1e-12);
    }

    #[test]
    fn green_plus_constant_fits_exactly() {
        let grid = SurfaceGrid::flat(64).unwrap();
        let gd = greens::solve_green(&grid, Node::new(5, 5));
        let u = gd.g.add_constant(3.0);
        assert!(green_limit_fit(&u, &gd, 0.1) < 1e-12);
        let zero = ScalarField::constant(grid, 0.0);
        assert!(green_limit_fit(&zero, &gd, 0.1) > 0.1);
    }

    #[test]
    fn barrier_of_green_against_itself() {
        let ctx = flat_ctx(128);
        let gd = greens::solve_green(ctx.grid(), Node::new(0, 0));
        let lambda = 12.0;
        let u = gd.g.add_constant(-lambda - 2.0);
        let b = neck_barrier_check(&ctx, &u, &gd, lambda, &DiagnosticsConfig::default()).unwrap();
        assert!(b.margin.abs() < 1e-12);
        assert!((b.c4 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn barrier_rejects_sign_change() {
        let grid = SurfaceGrid::flat(128).unwrap();
        let h = ScalarField::from_fn(grid.clone(), |x, _| -0.5 + (2.0 * PI * x).cos());
        let ctx = FunctionalContext::new(h, 0.0).unwrap();
        let gd = greens::solve_green(&grid, Node::new(0, 0));
        let cfg = DiagnosticsConfig { neck_outer: 0.2, ..Default::default() };
        assert!(matches!(
            neck_barrier_check(&ctx, &gd.g, &gd, 12.0, &cfg),
            Err(KwError::PositivityViolated { .. })
        ));
        let cfg = DiagnosticsConfig { neck_inner_multiplier: 1e4, ..Default::default() };
        assert!(matches!(neck_barrier_check(&ctx, &gd.g, &gd, 12.0, &cfg), Err(KwError::NeckEmpty { .. })));
    }

    #[test]
    fn synthetic_peak_value() {
        let grid = SurfaceGrid::flat(256).unwrap();
        let gd = greens::solve_green(&grid, Node::new(0, 0));
        let cfg = DiagnosticsConfig::default();
        let u = synthesize_family(&grid, &gd, 1.0, 12.0, &cfg).unwrap();
        assert!((u.max() - 12.0).abs() < 1e-3);
        assert_eq!(u.argmax(), Node::new(0, 0));
        assert!(matches!(
            synthesize_family(&grid, &gd, 1.0, 4.0, &cfg),
            Err(KwError::WindowTooLarge { .. })
        ));
    }
}
