//! Periodic N×N grid on the unit-area torus with conformal factor e^{2w}.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{KwError, Result};
use crate::spectral::Spectral;

/// Grid node, column `ix` and row `iy`; position (ix/N, iy/N).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Node {
    pub ix: usize,
    pub iy: usize,
}

impl Node {
    pub fn new(ix: usize, iy: usize) -> Self {
        Node { ix, iy }
    }
}

/// One Fourier term re·cos(2π(kx x + ky y)) − im·sin(2π(kx x + ky y)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierMode {
    pub kx: i64,
    pub ky: i64,
    pub re: f64,
    pub im: f64,
}

impl FourierMode {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let th = 2.0 * PI * (self.kx as f64 * x + self.ky as f64 * y);
        self.re * th.cos() - self.im * th.sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConformalSpec {
    Tag(String),
    Modes(Vec<FourierMode>),
}

/// JSON grid description `{ "N": 256, "w": "zero" | [ {kx, ky, re, im}, ... ] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(rename = "N")]
    pub n: usize,
    pub w: ConformalSpec,
}

impl GridSpec {
    pub fn flat(n: usize) -> Self {
        GridSpec { n, w: ConformalSpec::Tag("zero".into()) }
    }

    /// Checks N and the conformal tag without building anything.
    pub fn validate(&self) -> Result<()> {
        check_resolution(self.n)?;
        match &self.w {
            ConformalSpec::Tag(t) if t != "zero" => Err(KwError::InvalidGrid(format!("unknown conformal tag `{t}`"))),
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Arc<SurfaceGrid>> {
        match &self.w {
            ConformalSpec::Tag(t) if t == "zero" => SurfaceGrid::flat(self.n),
            ConformalSpec::Tag(t) => Err(KwError::InvalidGrid(format!("unknown conformal tag `{t}`"))),
            ConformalSpec::Modes(modes) => {
                let n = self.n;
                check_resolution(n)?;
                let w = (0..n * n)
                    .map(|i| {
                        let (x, y) = ((i % n) as f64 / n as f64, (i / n) as f64 / n as f64);
                        modes.iter().map(|m| m.eval(x, y)).sum()
                    })
                    .collect();
                SurfaceGrid::new(n, w)
            }
        }
    }
}

fn check_resolution(n: usize) -> Result<()> {
    if n < 32 || !n.is_power_of_two() {
        return Err(KwError::InvalidGrid(format!("N = {n} must be a power of two >= 32")));
    }
    Ok(())
}

#[derive(Debug)]
pub struct SurfaceGrid {
    n: usize,
    w: Vec<f64>,
    area: Vec<f64>,
    curvature: Vec<f64>,
    spectral: Spectral,
}

impl SurfaceGrid {
    /// Builds the grid; `w` is shifted by a constant so the total area is 1.
    pub fn new(n: usize, mut w: Vec<f64>) -> Result<Arc<Self>> {
        check_resolution(n)?;
        if w.len() != n * n || w.iter().any(|v| !v.is_finite()) {
            return Err(KwError::InvalidGrid("conformal factor must hold N² finite values".into()));
        }
        let mean_area = w.iter().map(|v| (2.0 * v).exp()).sum::<f64>() / (n * n) as f64;
        let shift = -0.5 * mean_area.ln();
        for v in w.iter_mut() {
            *v += shift;
        }
        let spectral = Spectral::new(n);
        let area: Vec<f64> = w.iter().map(|v| (2.0 * v).exp()).collect();
        let lap = spectral.laplacian(&w);
        let curvature = lap.iter().zip(area.iter()).map(|(l, a)| -l / a).collect();
        Ok(Arc::new(SurfaceGrid { n, w, area, curvature, spectral }))
    }

    pub fn flat(n: usize) -> Result<Arc<Self>> {
        Self::new(n, vec![0.0; n * n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn conformal_factor(&self) -> &[f64] {
        &self.w
    }

    pub fn area_element(&self) -> &[f64] {
        &self.area
    }

    pub fn gauss_curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    pub fn is_flat(&self) -> bool {
        self.w.iter().all(|&v| v == 0.0)
    }

    pub fn index(&self, p: Node) -> usize {
        p.iy * self.n + p.ix
    }

    pub fn node(&self, index: usize) -> Node {
        Node { ix: index % self.n, iy: index / self.n }
    }

    pub fn position(&self, p: Node) -> (f64, f64) {
        (p.ix as f64 / self.n as f64, p.iy as f64 / self.n as f64)
    }

    pub fn nearest_node(&self, x: f64, y: f64) -> Node {
        let n = self.n as f64;
        let ix = ((x.rem_euclid(1.0) * n).round() as usize) % self.n;
        let iy = ((y.rem_euclid(1.0) * n).round() as usize) % self.n;
        Node { ix, iy }
    }

    /// Minimal-image flat displacement from `p` to the node with index `i`.
    pub fn displacement(&self, p: Node, i: usize) -> (f64, f64) {
        let n = self.n as i64;
        let wrap = |d: i64| {
            let d = d.rem_euclid(n);
            if 2 * d >= n { d - n } else { d }
        };
        let dx = wrap((i % self.n) as i64 - p.ix as i64);
        let dy = wrap((i / self.n) as i64 - p.iy as i64);
        (dx as f64 / self.n as f64, dy as f64 / self.n as f64)
    }

    pub fn flat_distance(&self, p: Node, x: Node) -> f64 {
        let (dx, dy) = self.displacement(p, self.index(x));
        dx.hypot(dy)
    }

    /// e^{w(p)}·|x − p|, the conformal distance near `p` (no range check).
    pub fn local_radius(&self, p: Node, i: usize) -> f64 {
        let (dx, dy) = self.displacement(p, i);
        self.w[self.index(p)].exp() * dx.hypot(dy)
    }

    /// Local approximation e^{w(p)}|x − p| of the geodesic distance.
    pub fn geodesic_distance_approx(&self, p: Node, x: Node) -> Result<f64> {
        let d = self.flat_distance(p, x);
        if d >= 0.25 {
            return Err(KwError::DistanceTooLarge { dist: d });
        }
        Ok(self.w[self.index(p)].exp() * d)
    }

    pub fn laplacian_flat(&self, f: &[f64]) -> Vec<f64> {
        self.spectral.laplacian(f)
    }

    /// Δ_g f = e^{−2w} Δ_flat f.
    pub fn laplacian_g(&self, f: &ScalarField) -> ScalarField {
        let mut v = self.spectral.laplacian(&f.values);
        for (x, a) in v.iter_mut().zip(self.area.iter()) {
            *x /= a;
        }
        ScalarField { grid: f.grid.clone(), values: v }
    }

    /// ∫ f dv_g with weight e^{2w}/N² per node.
    pub fn integral_g(&self, f: &[f64]) -> f64 {
        let s: f64 = f.iter().zip(self.area.iter()).map(|(a, b)| a * b).sum();
        s / self.len() as f64
    }

    /// ∫|∇f|² dv_g, which equals the flat Dirichlet energy.
    pub fn grad_norm_sq_g(&self, f: &[f64]) -> f64 {
        self.spectral.dirichlet_energy(f)
    }

    /// ⟨f, q⟩ in L²(dv_g).
    pub fn inner_g(&self, f: &[f64], q: &[f64]) -> f64 {
        let s: f64 = f
            .iter()
            .zip(q.iter())
            .zip(self.area.iter())
            .map(|((a, b), c)| a * b * c)
            .sum();
        s / self.len() as f64
    }

    /// Bilinear interpolation of a periodic grid field at (x, y).
    pub fn sample_bilinear(&self, f: &[f64], x: f64, y: f64) -> f64 {
        let n = self.n;
        let gx = x.rem_euclid(1.0) * n as f64;
        let gy = y.rem_euclid(1.0) * n as f64;
        let (x0, y0) = (gx.floor(), gy.floor());
        let (tx, ty) = (gx - x0, gy - y0);
        let (i0, j0) = (x0 as usize % n, y0 as usize % n);
        let (i1, j1) = ((i0 + 1) % n, (j0 + 1) % n);
        let f00 = f[j0 * n + i0];
        let f10 = f[j0 * n + i1];
        let f01 = f[j1 * n + i0];
        let f11 = f[j1 * n + i1];
        (1.0 - ty) * ((1.0 - tx) * f00 + tx * f10) + ty * ((1.0 - tx) * f01 + tx * f11)
    }
}

/// Real values on the grid nodes.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<SurfaceGrid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<SurfaceGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(KwError::InvalidGrid(format!(
                "field has {} values, grid expects {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn constant(grid: Arc<SurfaceGrid>, c: f64) -> Self {
        let values = vec![c; grid.len()];
        ScalarField { grid, values }
    }

    pub fn from_fn<F: Fn(f64, f64) -> f64>(grid: Arc<SurfaceGrid>, f: F) -> Self {
        let n = grid.n();
        let values = (0..n * n)
            .map(|i| f((i % n) as f64 / n as f64, (i / n) as f64 / n as f64))
            .collect();
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &Arc<SurfaceGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, p: Node) -> f64 {
        self.values[self.grid.index(p)]
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        ScalarField { grid: self.grid.clone(), values }
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Self {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn add_constant(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    pub fn integral(&self) -> f64 {
        self.grid.integral_g(&self.values)
    }

    /// Metric mean; equals the integral because the area is 1.
    pub fn mean(&self) -> f64 {
        self.integral()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Node of the maximum, lowest row-major index on ties.
    pub fn argmax(&self) -> Node {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        self.grid.node(best)
    }

    pub fn laplacian(&self) -> ScalarField {
        self.grid.laplacian_g(self)
    }

    pub fn grad_norm_sq(&self) -> f64 {
        self.grid.grad_norm_sq_g(&self.values)
    }

    /// Random trigonometric polynomial with modes |kx|, |ky| ≤ kmax and
    /// coefficients uniform in [−amplitude, amplitude]; zero mean.
    pub fn random_band_limited(grid: Arc<SurfaceGrid>, seed: u64, kmax: i64, amplitude: f64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut modes = Vec::new();
        for ky in -kmax..=kmax {
            for kx in -kmax..=kmax {
                if kx == 0 && ky == 0 {
                    continue;
                }
                let re = rng.gen_range(-amplitude..=amplitude);
                let im = rng.gen_range(-amplitude..=amplitude);
                modes.push(FourierMode { kx, ky, re, im });
            }
        }
        let scale = 1.0 / (modes.len() as f64).sqrt();
        // synthesize through the inverse transform; needs kmax < N/2
        let n = grid.n();
        assert!((kmax as usize) < n / 2, "kmax must stay below N/2");
        let mut c = vec![rustfft::num_complex::Complex64::new(0.0, 0.0); n * n];
        let wrap = |k: i64| k.rem_euclid(n as i64) as usize;
        let half = 0.5 * scale * (n * n) as f64;
        for m in &modes {
            let z = rustfft::num_complex::Complex64::new(m.re, m.im) * half;
            c[wrap(m.ky) * n + wrap(m.kx)] += z;
            c[wrap(-m.ky) * n + wrap(-m.kx)] += z.conj();
        }
        let values = grid.spectral().inverse(c);
        ScalarField { grid, values }
    }

    pub fn is_constant(&self) -> bool {
        let v0 = self.values[0];
        let scale = v0.abs().max(1.0);
        self.values.iter().all(|&v| (v - v0).abs() <= 1e-14 * scale)
    }
}
