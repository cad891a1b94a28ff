//! Green function of Δ_g with source 8π − 8πδ_p and its Robin constant.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{KwError, Result};
use crate::spectral::Spectral;
use crate::surface::{Node, ScalarField, SurfaceGrid};

/// Default fitting annulus [r1, r2].
pub const DEFAULT_ANNULUS: (f64, f64) = (0.05, 0.15);

/// Linear and quadratic coefficients of
/// G = −4 log r + A + b1 x1 + b2 x2 + c1 x1² + 2 c2 x1 x2 + c3 x2² + …
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Expansion {
    pub b1: f64,
    pub b2: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobinFit {
    pub robin_a: f64,
    pub expansion: Expansion,
    pub fit_residual: f64,
    pub annulus: (f64, f64),
    pub nodes_used: usize,
}

#[derive(Debug, Clone)]
pub struct GreenData {
    pub pole: Node,
    pub g: ScalarField,
    /// NaN when the grid is too coarse for the default annulus.
    pub robin_a: f64,
    pub expansion: Expansion,
    pub fit_residual: f64,
}

/// Serializable view of a [`GreenData`] without the field values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenSummary {
    pub pole: Node,
    pub pole_position: (f64, f64),
    #[serde(rename = "A_p")]
    pub robin_a: f64,
    pub expansion: Expansion,
    pub residual: f64,
}

impl GreenData {
    pub fn summary(&self) -> GreenSummary {
        GreenSummary {
            pole: self.pole,
            pole_position: self.g.grid().position(self.pole),
            robin_a: self.robin_a,
            expansion: self.expansion,
            residual: self.fit_residual,
        }
    }
}

/// Annulus used by [`solve_green`]: the default where it clears the core,
/// otherwise pushed outward for coarse grids.
pub fn default_annulus(n: usize) -> (f64, f64) {
    let r1 = DEFAULT_ANNULUS.0.max(9.0 / n as f64);
    let r2 = DEFAULT_ANNULUS.1.max(r1 + 0.05).min(0.24);
    (r1, r2)
}

/// Reusable solver; caches the transform of the area element.
pub struct GreenSolver {
    grid: Arc<SurfaceGrid>,
    area_hat: Vec<Complex64>,
}

impl GreenSolver {
    pub fn new(grid: Arc<SurfaceGrid>) -> Self {
        let area_hat = grid.spectral().forward(grid.area_element());
        GreenSolver { grid, area_hat }
    }

    /// Raw Green field with ∫G dv_g = 0, no fit.
    pub fn field(&self, p: Node) -> ScalarField {
        let grid = &self.grid;
        let n = grid.n();
        let sp = grid.spectral();
        let nn = (n * n) as f64;
        let (px, py) = grid.position(p);
        let mut c = vec![Complex64::new(0.0, 0.0); n * n];
        for iy in 0..n {
            let ky = sp.wavenumber(iy);
            for ix in 0..n {
                let kx = sp.wavenumber(ix);
                if ix == 0 && iy == 0 {
                    continue;
                }
                let i = iy * n + ix;
                let th = -2.0 * PI * (kx * px + ky * py);
                let delta = Complex64::new(th.cos(), th.sin()) * nn;
                let rhs = (self.area_hat[i] - delta) * (8.0 * PI);
                c[i] = rhs / Spectral::laplace_symbol(kx, ky);
            }
        }
        let mut g = sp.inverse(c);
        let shift = grid.integral_g(&g);
        for v in g.iter_mut() {
            *v -= shift;
        }
        ScalarField::new(grid.clone(), g).expect("grid-sized field")
    }

    pub fn solve(&self, p: Node) -> GreenData {
        let g = self.field(p);
        let (r1, r2) = default_annulus(self.grid.n());
        let mut data = GreenData {
            pole: p,
            g,
            robin_a: f64::NAN,
            expansion: Expansion::default(),
            fit_residual: f64::NAN,
        };
        if let Ok(fit) = fit_robin(&data, r1, r2) {
            data.robin_a = fit.robin_a;
            data.expansion = fit.expansion;
            data.fit_residual = fit.fit_residual;
        }
        data
    }

    /// Robin constant fitted on a custom annulus.
    pub fn robin(&self, p: Node, annulus: (f64, f64)) -> Result<f64> {
        let data = GreenData {
            pole: p,
            g: self.field(p),
            robin_a: f64::NAN,
            expansion: Expansion::default(),
            fit_residual: f64::NAN,
        };
        Ok(fit_robin(&data, annulus.0, annulus.1)?.robin_a)
    }
}

/// Solves ΔG = 8π − 8πδ_p with ∫G dv_g = 0; the pole is band-limited.
pub fn solve_green(grid: &Arc<SurfaceGrid>, p: Node) -> GreenData {
    GreenSolver::new(grid.clone()).solve(p)
}

fn annulus_rows(green: &GreenData, r1: f64, r2: f64) -> Result<Vec<(f64, f64, f64, f64)>> {
    let grid = green.g.grid();
    let n = grid.n();
    if !(r1 > 0.0 && r1 < r2 && r2 < 0.25) {
        return Err(KwError::InvalidAnnulus { r1, r2 });
    }
    let core = 8.0 / n as f64;
    if r1 <= core {
        return Err(KwError::CoreContamination { r1, min: core });
    }
    let scale = grid.conformal_factor()[grid.index(green.pole)].exp();
    let mut rows = Vec::new();
    for i in 0..grid.len() {
        let (dx, dy) = grid.displacement(green.pole, i);
        let (x1, x2) = (scale * dx, scale * dy);
        let rho = x1.hypot(x2);
        if rho >= r1 && rho <= r2 {
            rows.push((x1, x2, rho, green.g.values()[i]));
        }
    }
    if rows.len() < 50 {
        return Err(KwError::AnnulusTooThin { count: rows.len() });
    }
    Ok(rows)
}

fn least_squares(a: DMatrix<f64>, b: DVector<f64>) -> (DVector<f64>, f64) {
    let m = a.nrows();
    let qr = a.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let qtb = q.transpose() * &b;
    let x = r.solve_upper_triangular(&qtb).expect("full-rank annulus basis");
    let resid = b - a * &x;
    (x, (resid.norm_squared() / m as f64).sqrt())
}

/// Least-squares fit of G + 4 log ρ on r1 ≤ ρ ≤ r2 against
/// {1, x1, x2, x1², x1x2, x2²}, ρ the conformal distance to the pole.
pub fn fit_robin(green: &GreenData, r1: f64, r2: f64) -> Result<RobinFit> {
    let rows = annulus_rows(green, r1, r2)?;
    let m = rows.len();
    let s = r2;
    let mut a = DMatrix::zeros(m, 6);
    let mut b = DVector::zeros(m);
    for (k, &(x1, x2, rho, g)) in rows.iter().enumerate() {
        let (u, v) = (x1 / s, x2 / s);
        let basis = [1.0, u, v, u * u, u * v, v * v];
        for (j, val) in basis.iter().enumerate() {
            a[(k, j)] = *val;
        }
        b[k] = g + 4.0 * rho.ln();
    }
    let (x, rms) = least_squares(a, b);
    Ok(RobinFit {
        robin_a: x[0],
        expansion: Expansion {
            b1: x[1] / s,
            b2: x[2] / s,
            c1: x[3] / (s * s),
            c2: x[4] / (2.0 * s * s),
            c3: x[5] / (s * s),
        },
        fit_residual: rms,
        annulus: (r1, r2),
        nodes_used: m,
    })
}

/// Coefficient of log ρ when it is fitted freely together with the
/// quadratic basis.
pub fn fit_log_slope(green: &GreenData, r1: f64, r2: f64) -> Result<f64> {
    let rows = annulus_rows(green, r1, r2)?;
    let m = rows.len();
    let s = r2;
    let mut a = DMatrix::zeros(m, 7);
    let mut b = DVector::zeros(m);
    for (k, &(x1, x2, rho, g)) in rows.iter().enumerate() {
        let (u, v) = (x1 / s, x2 / s);
        let basis = [(rho / s).ln(), 1.0, u, v, u * u, u * v, v * v];
        for (j, val) in basis.iter().enumerate() {
            a[(k, j)] = *val;
        }
        b[k] = g;
    }
    Ok(least_squares(a, b).0[0])
}

/// Robin constants over a set of poles, in the order given.
pub fn robin_map(grid: &Arc<SurfaceGrid>, poles: &[Node], annulus: (f64, f64)) -> Result<Vec<(Node, f64)>> {
    let solver = GreenSolver::new(grid.clone());
    poles
        .par_iter()
        .map(|&p| solver.robin(p, annulus).map(|a| (p, a)))
        .collect()
}
