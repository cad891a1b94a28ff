//! Glued bubble test functions and the strict upper-bound check.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KwError, Result};
use crate::functional::{self, FunctionalContext, ThresholdReport};
use crate::greens::{self, GreenData};
use crate::surface::{Node, ScalarField};

pub const DEFAULT_CHART: f64 = 0.25;
pub const DEFAULT_MARGIN: f64 = 1e-4;
/// bubble core ε must span at least this many grid cells to count
pub const DEFAULT_MIN_CORE_CELLS: f64 = 4.0;

fn inner_closed(hp: f64, eps: f64, rho: f64) -> f64 {
    -2.0 * (PI * hp * rho * rho / (eps * eps)).ln_1p() - 2.0 * eps.ln()
}

/// −4 log ρ + A + ½(c1 + c3)ρ², the circle average of the local expansion.
fn outer_closed(green: &GreenData, rho: f64) -> f64 {
    -4.0 * rho.ln() + green.robin_a + 0.5 * (green.expansion.c1 + green.expansion.c3) * rho * rho
}

/// Constant added to G outside B_{Rε}.
pub fn matching_constant(green: &GreenData, hp: f64, eps: f64, r_match: f64) -> f64 {
    let rho = r_match * eps;
    inner_closed(hp, eps, rho) - outer_closed(green, rho)
}

/// Difference of the two closed forms at ρ = Rε after matching.
pub fn matching_gap(green: &GreenData, hp: f64, eps: f64, r_match: f64) -> f64 {
    let rho = r_match * eps;
    let c = matching_constant(green, hp, eps, r_match);
    inner_closed(hp, eps, rho) - (outer_closed(green, rho) + c)
}

/// φ_ε: −2 log(1 + π h(p₀) ρ²/ε²) − 2 log ε on B_{Rε}(p₀), G_{p₀} + c outside.
pub fn build_test_function(
    ctx: &FunctionalContext,
    green: &GreenData,
    eps: f64,
    r_match: f64,
    chart: f64,
) -> Result<ScalarField> {
    let grid = ctx.grid();
    let p0 = green.pole;
    let hp = ctx.h().at(p0);
    if !(hp > 0.0) {
        return Err(KwError::NonpositiveWeightAtPoint { value: hp });
    }
    if !(eps > 0.0 && r_match > 0.0) || r_match * eps >= chart {
        return Err(KwError::ScaleTooLarge { radius: r_match * eps, limit: chart });
    }
    if !green.robin_a.is_finite() {
        return Err(KwError::InvalidConfig("Green data carries no Robin constant".into()));
    }
    let c = matching_constant(green, hp, eps, r_match);
    let cut = r_match * eps;
    let vals = (0..grid.len())
        .map(|i| {
            let rho = grid.local_radius(p0, i);
            if rho < cut {
                inner_closed(hp, eps, rho)
            } else {
                green.g.values()[i] + c
            }
        })
        .collect();
    let phi = ScalarField::new(grid.clone(), vals)?;
    let m = functional::mass(ctx, &phi);
    if !(m > 0.0) {
        return Err(KwError::NonpositiveMass { mass: m });
    }
    Ok(phi)
}

#[derive(Debug, Clone)]
pub struct TestFamily {
    pub p0: Node,
    pub eps_list: Vec<f64>,
    pub r_match: f64,
    /// H₁-normalized members
    pub fields: Vec<ScalarField>,
    pub j_values: Vec<f64>,
    pub c0: f64,
    pub djlw_value: f64,
    /// ε measured in grid cells at p₀
    pub core_cells: Vec<f64>,
}

pub fn build_family(
    ctx: &FunctionalContext,
    report: &ThresholdReport,
    eps_list: &[f64],
    r_match: f64,
) -> Result<TestFamily> {
    if eps_list.is_empty() || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(KwError::InvalidConfig("eps list must be nonempty and decreasing".into()));
    }
    let grid = ctx.grid();
    let p0 = report.argmax_p0;
    let green = greens::solve_green(grid, p0);
    let members: Vec<(ScalarField, f64)> = eps_list
        .par_iter()
        .map(|&eps| {
            let phi = build_test_function(ctx, &green, eps, r_match, DEFAULT_CHART)?;
            let v = functional::normalize_h1(ctx, &phi)?;
            let j = functional::eval_j(ctx, &v)?;
            Ok((v, j))
        })
        .collect::<Result<_>>()?;
    let cells_per_unit = grid.n() as f64 * (-grid.conformal_factor()[grid.index(p0)]).exp();
    let (fields, j_values) = members.into_iter().unzip();
    Ok(TestFamily {
        p0,
        eps_list: eps_list.to_vec(),
        r_match,
        fields,
        j_values,
        c0: report.c0,
        djlw_value: report.djlw_value,
        core_cells: eps_list.iter().map(|e| e * cells_per_unit).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberResult {
    pub eps: f64,
    #[serde(rename = "J")]
    pub j_value: f64,
    #[serde(rename = "J_minus_C0")]
    pub j_minus_c0: f64,
    pub core_cells: f64,
    pub resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperBoundResult {
    #[serde(rename = "C0")]
    pub c0: f64,
    pub p0: Node,
    pub djlw_value: f64,
    pub margin: f64,
    pub r_match: f64,
    /// minimum J over resolved members
    pub min_j: Option<f64>,
    pub eps_star: Option<f64>,
    pub passed: bool,
    /// the claim is only made when the solvability value is positive
    pub asserted: bool,
    pub members: Vec<MemberResult>,
}

/// passed ⇔ some resolved member has J < C₀ − margin.
pub fn verify_upper_bound(family: &TestFamily, margin: f64, min_core_cells: f64) -> UpperBoundResult {
    let members: Vec<MemberResult> = family
        .eps_list
        .iter()
        .zip(&family.j_values)
        .zip(&family.core_cells)
        .map(|((&eps, &j), &cells)| MemberResult {
            eps,
            j_value: j,
            j_minus_c0: j - family.c0,
            core_cells: cells,
            resolved: cells >= min_core_cells,
        })
        .collect();
    let best = members
        .iter()
        .filter(|m| m.resolved)
        .min_by(|a, b| a.j_value.partial_cmp(&b.j_value).unwrap_or(std::cmp::Ordering::Equal));
    UpperBoundResult {
        c0: family.c0,
        p0: family.p0,
        djlw_value: family.djlw_value,
        margin,
        r_match: family.r_match,
        min_j: best.map(|m| m.j_value),
        eps_star: best.map(|m| m.eps),
        passed: best.is_some_and(|m| m.j_value < family.c0 - margin),
        asserted: family.djlw_value > 0.0,
        members,
    }
}
