//! The free functional J_ε, its gradient, H₁ normalization, bubble closed
//! forms, the C₀ threshold and the solvability value at its argmax.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{KwError, Result};
use crate::greens;
use crate::surface::{Node, ScalarField, SurfaceGrid};

pub const EIGHT_PI: f64 = 8.0 * PI;

#[derive(Debug, Clone)]
pub struct FunctionalContext {
    grid: Arc<SurfaceGrid>,
    h: ScalarField,
    eps: f64,
    positive_mask: Vec<bool>,
}

impl FunctionalContext {
    pub fn new(h: ScalarField, eps: f64) -> Result<Self> {
        if h.values().iter().any(|v| !v.is_finite()) {
            return Err(KwError::InvalidWeight("weight has non-finite values".into()));
        }
        if h.max() <= 0.0 {
            return Err(KwError::InvalidWeight("max h must be positive".into()));
        }
        if !(0.0..EIGHT_PI).contains(&eps) {
            return Err(KwError::InvalidEpsilon { eps });
        }
        let positive_mask = h.values().iter().map(|&v| v > 0.0).collect();
        Ok(FunctionalContext { grid: h.grid().clone(), h, eps, positive_mask })
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        if !(0.0..EIGHT_PI).contains(&eps) {
            return Err(KwError::InvalidEpsilon { eps });
        }
        let mut c = self.clone();
        c.eps = eps;
        Ok(c)
    }

    pub fn grid(&self) -> &Arc<SurfaceGrid> {
        &self.grid
    }

    pub fn h(&self) -> &ScalarField {
        &self.h
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// 8π − ε.
    pub fn coupling(&self) -> f64 {
        EIGHT_PI - self.eps
    }

    pub fn positive_mask(&self) -> &[bool] {
        &self.positive_mask
    }
}

/// log ∫ h e^u dv_g, computed with a max shift.
pub fn log_mass(ctx: &FunctionalContext, u: &ScalarField) -> Result<f64> {
    let top = u.max();
    let s = shifted_mass(ctx, u, top);
    if !(s > 0.0) {
        return Err(KwError::NonpositiveMass { mass: s * top.exp() });
    }
    Ok(top + s.ln())
}

/// ∫ h e^{u − shift} dv_g; sums that cancel to roundoff count as zero.
fn shifted_mass(ctx: &FunctionalContext, u: &ScalarField, shift: f64) -> f64 {
    let mut s = 0.0;
    let mut total = 0.0;
    for ((h, v), a) in ctx.h.values().iter().zip(u.values()).zip(ctx.grid.area_element()) {
        let t = h * (v - shift).exp() * a;
        s += t;
        total += t.abs();
    }
    if s.abs() <= 1e-13 * total {
        return 0.0;
    }
    s / ctx.grid.len() as f64
}

/// ∫ h e^u dv_g; may be nonpositive.
pub fn mass(ctx: &FunctionalContext, u: &ScalarField) -> f64 {
    shifted_mass(ctx, u, 0.0)
}

pub fn eval_j(ctx: &FunctionalContext, u: &ScalarField) -> Result<f64> {
    let lm = log_mass(ctx, u)?;
    Ok(0.5 * u.grad_norm_sq() + ctx.coupling() * (u.mean() - lm))
}

/// L²(dv_g) gradient −Δ_g u + (8π−ε)(1 − h e^u / ∫h e^u dv_g).
pub fn grad_j(ctx: &FunctionalContext, u: &ScalarField) -> Result<ScalarField> {
    let lm = log_mass(ctx, u)?;
    Ok(grad_with_log_mass(ctx, u, lm))
}

pub(crate) fn grad_with_log_mass(ctx: &FunctionalContext, u: &ScalarField, lm: f64) -> ScalarField {
    let lap = u.laplacian();
    let c = ctx.coupling();
    let v = lap
        .values()
        .iter()
        .zip(u.values())
        .zip(ctx.h.values())
        .map(|((l, x), h)| -l + c * (1.0 - h * (x - lm).exp()))
        .collect();
    u.with_values(v)
}

/// u − log ∫h e^u dv_g, which satisfies ∫h e^u dv_g = 1.
pub fn normalize_h1(ctx: &FunctionalContext, u: &ScalarField) -> Result<ScalarField> {
    let lm = log_mass(ctx, u)?;
    Ok(u.add_constant(-lm))
}

/// L²(dv_g) norm of Δ_g u − (8π−ε) + (8π−ε) h e^u on the H₁ representative.
pub fn residual_kw(ctx: &FunctionalContext, u: &ScalarField) -> Result<f64> {
    let v = normalize_h1(ctx, u)?;
    let lap = v.laplacian();
    let c = ctx.coupling();
    let r: Vec<f64> = lap
        .values()
        .iter()
        .zip(v.values())
        .zip(ctx.h.values())
        .map(|((l, x), h)| {
            let e = l - c + c * h * x.exp();
            e * e
        })
        .collect();
    Ok(ctx.grid.integral_g(&r).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BubbleProfile {
    pub hp: f64,
    pub center: Node,
    pub scale: f64,
}

impl BubbleProfile {
    pub fn new(hp: f64, center: Node, scale: f64) -> Result<Self> {
        if !(hp > 0.0) {
            return Err(KwError::NonpositiveWeightAtPoint { value: hp });
        }
        if !(scale > 0.0) {
            return Err(KwError::InvalidConfig(format!("bubble scale {scale} must be positive")));
        }
        Ok(BubbleProfile { hp, center, scale })
    }

    /// Scale e^{−λ/2} tied to a peak value λ.
    pub fn from_peak(hp: f64, center: Node, lambda: f64) -> Result<Self> {
        Self::new(hp, center, (-0.5 * lambda).exp())
    }
}

/// −2 log(1 + π hp |x|²) at a point of the rescaled plane.
pub fn bubble_value(profile: &BubbleProfile, x: (f64, f64)) -> f64 {
    phi0(profile.hp, x.0 * x.0 + x.1 * x.1)
}

pub(crate) fn phi0(hp: f64, r2: f64) -> f64 {
    -2.0 * (PI * hp * r2).ln_1p()
}

/// Composite Simpson rule for a radial integrand g(t)·2πt over [0, R] on a
/// geometrically graded mesh.
fn radial_quadrature<F: Fn(f64) -> f64>(g: F, r_max: f64) -> f64 {
    let mut edges = vec![0.0];
    let mut r = (1e-3f64).min(r_max);
    while r < r_max {
        edges.push(r);
        r *= 1.25;
    }
    edges.push(r_max);
    let f = |t: f64| 2.0 * PI * t * g(t);
    let mut total = 0.0;
    for e in edges.windows(2) {
        let (a, b) = (e[0], e[1]);
        let m = 16;
        let h = (b - a) / m as f64;
        let mut s = f(a) + f(b);
        for k in 1..m {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + k as f64 * h);
        }
        total += s * h / 3.0;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BubbleEnergy {
    /// 16π log(1 + π hp R²) − 16π
    pub closed_form: f64,
    /// ∫_{B_R} |∇φ₀|² dx by radial quadrature
    pub quadrature: f64,
    /// closed_form − quadrature
    pub gap: f64,
}

pub fn bubble_energy(hp: f64, r: f64) -> Result<BubbleEnergy> {
    if !(hp > 0.0) {
        return Err(KwError::NonpositiveWeightAtPoint { value: hp });
    }
    if !(r > 0.0) {
        return Err(KwError::InvalidConfig(format!("radius {r} must be positive")));
    }
    let closed_form = 16.0 * PI * (PI * hp * r * r).ln_1p() - 16.0 * PI;
    let quadrature = radial_quadrature(
        |t| {
            let d = 4.0 * PI * hp * t / (1.0 + PI * hp * t * t);
            d * d
        },
        r,
    );
    Ok(BubbleEnergy { closed_form, quadrature, gap: closed_form - quadrature })
}

/// ∫_{B_R} hp e^{φ₀} dx by radial quadrature; tends to 1.
pub fn bubble_mass_quadrature(hp: f64, r: f64) -> Result<f64> {
    if !(hp > 0.0) {
        return Err(KwError::NonpositiveWeightAtPoint { value: hp });
    }
    Ok(radial_quadrature(|t| hp * phi0(hp, t * t).exp(), r))
}

/// ∫_{R²} e^{αφ₀} dx = 1/((2α − 1) hp).
pub fn bubble_alpha_mass(hp: f64, alpha: f64) -> Result<f64> {
    if !(hp > 0.0) {
        return Err(KwError::NonpositiveWeightAtPoint { value: hp });
    }
    if alpha <= 0.5 {
        return Err(KwError::AlphaTooSmall { alpha });
    }
    Ok(1.0 / ((2.0 * alpha - 1.0) * hp))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobinSample {
    pub node: Node,
    #[serde(with = "crate::io::finite_or_null")]
    pub robin_a: f64,
    #[serde(with = "crate::io::finite_or_null")]
    pub log_h: f64,
    /// A_p + 2 log h(p)
    #[serde(with = "crate::io::finite_or_null")]
    pub score: f64,
}

/// A_p + 2 log h(p) on a lattice of M₊ (spacing N/lattice nodes), plus one
/// bisection level around the coarse argmax.
pub fn robin_landscape(ctx: &FunctionalContext, lattice: usize, annulus: (f64, f64)) -> Result<Vec<RobinSample>> {
    let grid = ctx.grid();
    let n = grid.n();
    let step = (n / lattice.max(1)).max(1);
    let mut coarse = Vec::new();
    for iy in (0..n).step_by(step) {
        for ix in (0..n).step_by(step) {
            let p = Node::new(ix, iy);
            if ctx.positive_mask[grid.index(p)] {
                coarse.push(p);
            }
        }
    }
    if coarse.is_empty() {
        return Err(KwError::EmptyPositiveSet);
    }
    let to_samples = |pairs: Vec<(Node, f64)>| -> Vec<RobinSample> {
        pairs
            .into_iter()
            .map(|(node, a)| {
                let log_h = ctx.h.at(node).ln();
                RobinSample { node, robin_a: a, log_h, score: a + 2.0 * log_h }
            })
            .collect()
    };
    let mut samples = to_samples(greens::robin_map(grid, &coarse, annulus)?);
    let half = step / 2;
    if half >= 1 {
        let best = argmax_sample(&samples).expect("nonempty").node;
        let mut fine = Vec::new();
        for dy in [-1i64, 0, 1] {
            for dx in [-1i64, 0, 1] {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let ix = (best.ix as i64 + dx * half as i64).rem_euclid(n as i64) as usize;
                let iy = (best.iy as i64 + dy * half as i64).rem_euclid(n as i64) as usize;
                let p = Node::new(ix, iy);
                if ctx.positive_mask[grid.index(p)] && !samples.iter().any(|s| s.node == p) {
                    fine.push(p);
                }
            }
        }
        samples.extend(to_samples(greens::robin_map(grid, &fine, annulus)?));
    }
    Ok(samples)
}

/// Largest score; values within 1e−9 of each other count as ties and the
/// lowest row-major index wins.
fn argmax_sample(samples: &[RobinSample]) -> Option<RobinSample> {
    let mut sorted: Vec<&RobinSample> = samples.iter().collect();
    sorted.sort_by_key(|s| (s.node.iy, s.node.ix));
    let mut best: Option<&RobinSample> = None;
    for s in sorted {
        match best {
            None => best = Some(s),
            Some(b) if s.score > b.score + 1e-9 * b.score.abs().max(1.0) => best = Some(s),
            _ => {}
        }
    }
    best.copied()
}

pub const DEFAULT_DJLW_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    #[serde(rename = "C0")]
    pub c0: f64,
    pub argmax_p0: Node,
    pub p0_position: (f64, f64),
    #[serde(rename = "A_p0")]
    pub a_p0: f64,
    pub h_p0: f64,
    pub djlw_value: f64,
    pub djlw_satisfied: bool,
    pub djlw_margin: f64,
}

/// −8π − 8π log π − 4π m, m = max over the samples of A_p + 2 log h(p).
pub fn c0_from_score(score: f64) -> f64 {
    -EIGHT_PI - EIGHT_PI * PI.ln() - 4.0 * PI * score
}

pub fn compute_c0(ctx: &FunctionalContext, robin: &[RobinSample], margin: f64) -> Result<ThresholdReport> {
    let positive: Vec<RobinSample> = robin
        .iter()
        .filter(|s| ctx.positive_mask[ctx.grid.index(s.node)])
        .copied()
        .collect();
    let best = argmax_sample(&positive).ok_or(KwError::EmptyPositiveSet)?;
    let djlw_value = djlw_check(ctx, best.node)?;
    Ok(ThresholdReport {
        c0: c0_from_score(best.score),
        argmax_p0: best.node,
        p0_position: ctx.grid.position(best.node),
        a_p0: best.robin_a,
        h_p0: ctx.h.at(best.node),
        djlw_value,
        djlw_satisfied: djlw_value > margin,
        djlw_margin: margin,
    })
}

/// Landscape plus threshold report with default annulus and margin.
pub fn thresholds(ctx: &FunctionalContext, lattice: usize) -> Result<(ThresholdReport, Vec<RobinSample>)> {
    let annulus = greens::default_annulus(ctx.grid.n());
    let samples = robin_landscape(ctx, lattice, annulus)?;
    let report = compute_c0(ctx, &samples, DEFAULT_DJLW_MARGIN)?;
    Ok((report, samples))
}

/// Δ_g log h(p₀) + 8π − 2K(p₀), with the Laplacian of log h from
/// fourth-order central differences.
pub fn djlw_check(ctx: &FunctionalContext, p0: Node) -> Result<f64> {
    let grid = ctx.grid();
    let n = grid.n() as i64;
    let hv = |dx: i64, dy: i64| -> f64 {
        let ix = (p0.ix as i64 + dx).rem_euclid(n) as usize;
        let iy = (p0.iy as i64 + dy).rem_euclid(n) as usize;
        ctx.h.at(Node::new(ix, iy))
    };
    let centre = hv(0, 0);
    if centre <= 0.0 {
        return Err(KwError::NonpositiveWeightAtPoint { value: centre });
    }
    let mut stencil = [[0.0; 5]; 2];
    for (k, off) in (-2i64..=2).enumerate() {
        for (axis, value) in [hv(off, 0), hv(0, off)].into_iter().enumerate() {
            if value <= 0.0 {
                return Err(KwError::NonpositiveWeightAtPoint { value });
            }
            stencil[axis][k] = value.ln();
        }
    }
    let h = 1.0 / n as f64;
    let d2 = |s: &[f64; 5]| (-s[0] + 16.0 * s[1] - 30.0 * s[2] + 16.0 * s[3] - s[4]) / (12.0 * h * h);
    let i = grid.index(p0);
    let lap = (d2(&stencil[0]) + d2(&stencil[1])) / grid.area_element()[i];
    Ok(lap + EIGHT_PI - 2.0 * grid.gauss_curvature()[i])
}

/// (log ∫e^u dv_g − ū) / (∫|∇u|² / 16π).
pub fn mt_ratio(u: &ScalarField) -> Result<f64> {
    if u.is_constant() {
        return Err(KwError::ConstantField);
    }
    let top = u.max();
    let e: Vec<f64> = u.values().iter().map(|v| (v - top).exp()).collect();
    let log_int = top + u.grid().integral_g(&e).ln();
    Ok((log_int - u.mean()) / (u.grad_norm_sq() / (16.0 * PI)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegralMonitor {
    /// ∫ e^u dv_g for the H₁ representative
    pub integral: f64,
    /// 1 / max h
    pub lower: f64,
}

impl IntegralMonitor {
    pub fn holds(&self) -> bool {
        self.integral >= self.lower * (1.0 - 1e-12)
    }
}

pub fn integral_monitor(ctx: &FunctionalContext, u: &ScalarField) -> Result<IntegralMonitor> {
    let lm = log_mass(ctx, u)?;
    let e: Vec<f64> = u.values().iter().map(|v| (v - lm).exp()).collect();
    Ok(IntegralMonitor { integral: ctx.grid.integral_g(&e), lower: 1.0 / ctx.h.max() })
}

/// (∫ |∇_g u|^q dv_g)^{1/q}.
pub fn lq_gradient_norm(u: &ScalarField, q: f64) -> f64 {
    let grid = u.grid();
    let (gx, gy) = grid.spectral().gradient(u.values());
    let s: f64 = gx
        .iter()
        .zip(gy.iter())
        .zip(grid.conformal_factor())
        .map(|((a, b), w)| ((2.0 - q) * w).exp() * (a * a + b * b).powf(0.5 * q))
        .sum::<f64>()
        / grid.len() as f64;
    s.powf(1.0 / q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::SurfaceGrid;

    fn flat_ctx(n: usize, eps: f64) -> FunctionalContext {
        let g = SurfaceGrid::flat(n).unwrap();
        FunctionalContext::new(ScalarField::constant(g, 1.0), eps).unwrap()
    }

    #[test]
    fn trivial_values() {
        let ctx = flat_ctx(32, 0.0);
        let u = ScalarField::constant(ctx.grid().clone(), 0.0);
        assert!(eval_j(&ctx, &u).unwrap().abs() < 1e-14);
        assert!(grad_j(&ctx, &u).unwrap().values().iter().all(|v| v.abs() < 1e-12));
        assert!(residual_kw(&ctx, &u).unwrap() < 1e-12);
        let three = ScalarField::constant(ctx.grid().clone(), 3.0);
        assert!(normalize_h1(&ctx, &three).unwrap().values().iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn zero_mean_weight_rejected() {
        let g = SurfaceGrid::flat(32).unwrap();
        let h = ScalarField::from_fn(g.clone(), |x, _| (2.0 * PI * x).sin());
        let ctx = FunctionalContext::new(h, 0.0).unwrap();
        let u = ScalarField::constant(g, 0.0);
        assert!(matches!(eval_j(&ctx, &u), Err(KwError::NonpositiveMass { .. })));
    }

    #[test]
    fn context_invariants() {
        let g = SurfaceGrid::flat(32).unwrap();
        assert!(FunctionalContext::new(ScalarField::constant(g.clone(), -1.0), 0.0).is_err());
        assert!(FunctionalContext::new(ScalarField::constant(g.clone(), 1.0), EIGHT_PI).is_err());
        assert!(FunctionalContext::new(ScalarField::constant(g, 1.0), -0.1).is_err());
    }

    #[test]
    fn bubble_closed_forms() {
        let b = BubbleProfile::new(1.0 / PI, Node::new(0, 0), 1.0).unwrap();
        assert_eq!(bubble_value(&b, (0.0, 0.0)), 0.0);
        assert!((bubble_value(&b, (1.0, 0.0)) + 2.0 * 2f64.ln()).abs() < 1e-15);
        assert_eq!(bubble_alpha_mass(1.0, 1.0).unwrap(), 1.0);
        assert!((bubble_alpha_mass(1.0, 2.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(bubble_alpha_mass(1.0, 0.5), Err(KwError::AlphaTooSmall { .. })));
        for hp in [0.3, 1.0, 2.5] {
            assert!((bubble_alpha_mass(hp, 1.0).unwrap() * hp - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bubble_energy_small_radius_gap() {
        let e = bubble_energy(1.0, 1e-4).unwrap();
        assert!((e.closed_form + 16.0 * PI).abs() < 1e-5);
        assert!(e.quadrature.abs() < 1e-5);
        assert!((e.gap + 16.0 * PI).abs() < 1e-4);
    }

    #[test]
    fn bubble_energy_rescaling() {
        for (hp, r) in [(2.0, 3.0), (0.5, 10.0)] {
            let a = bubble_energy(hp, r).unwrap();
            let b = bubble_energy(1.0, hp.sqrt() * r).unwrap();
            assert!((a.closed_form - b.closed_form).abs() < 1e-12);
        }
    }

    #[test]
    fn djlw_flat_constant() {
        let ctx = flat_ctx(64, 0.0);
        let v = djlw_check(&ctx, Node::new(5, 9)).unwrap();
        assert!((v - EIGHT_PI).abs() < 1e-12);
    }

    #[test]
    fn djlw_nonpositive_point() {
        let g = SurfaceGrid::flat(64).unwrap();
        let h = ScalarField::from_fn(g, |x, _| if x < 0.5 { 1.0 } else { -0.1 });
        let ctx = FunctionalContext::new(h, 0.0).unwrap();
        assert!(matches!(
            djlw_check(&ctx, Node::new(40, 0)),
            Err(KwError::NonpositiveWeightAtPoint { .. })
        ));
    }

    #[test]
    fn mt_ratio_small_mode() {
        let g = SurfaceGrid::flat(64).unwrap();
        let u = ScalarField::from_fn(g.clone(), |x, _| 0.1 * (2.0 * PI * x).sin());
        let r = mt_ratio(&u).unwrap();
        // small-amplitude limit is 2/π
        assert!((r - 2.0 / PI).abs() < 2e-3, "{r}");
        assert!(matches!(mt_ratio(&ScalarField::constant(g, 1.0)), Err(KwError::ConstantField)));
    }

    #[test]
    fn c0_shift_linearity() {
        // h → e^{2t} h shifts the score by 2t and C0 by −8πt
        let t = 0.37;
        assert!((c0_from_score(-5.0 + 2.0 * t) - (c0_from_score(-5.0) - EIGHT_PI * t)).abs() < 1e-12);
    }
}
