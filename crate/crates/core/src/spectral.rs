//! Two-dimensional real transforms on the periodic unit square.
//!
//! Storage is row-major, `values[iy * n + ix]` at (ix/n, iy/n).

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Spectral {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// signed integer wavenumber per index, Nyquist kept as +n/2
    k: Vec<f64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("n", &self.n).finish()
    }
}

fn transpose(n: usize, a: &[Complex64], out: &mut [Complex64]) {
    const B: usize = 32;
    for by in (0..n).step_by(B) {
        for bx in (0..n).step_by(B) {
            for y in by..(by + B).min(n) {
                for x in bx..(bx + B).min(n) {
                    out[x * n + y] = a[y * n + x];
                }
            }
        }
    }
}

impl Spectral {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let k = (0..n)
            .map(|i| if i <= n / 2 { i as f64 } else { i as f64 - n as f64 })
            .collect();
        Spectral { n, fwd, inv, k }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Signed wavenumber for index `i`; the Nyquist index maps to +n/2.
    pub fn wavenumber(&self, i: usize) -> f64 {
        self.k[i]
    }

    fn rows(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let chunk_rows = (n / rayon::current_num_threads().max(1)).clamp(1, 64);
        data.par_chunks_mut(n * chunk_rows).for_each(|chunk| {
            let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            plan.process_with_scratch(chunk, &mut scratch);
        });
    }

    fn apply2(&self, data: &mut Vec<Complex64>, plan: &Arc<dyn Fft<f64>>) {
        let mut tmp = vec![Complex64::new(0.0, 0.0); data.len()];
        self.rows(data, plan);
        transpose(self.n, data, &mut tmp);
        self.rows(&mut tmp, plan);
        transpose(self.n, &tmp, data);
    }

    /// Unnormalized forward DFT.
    pub fn forward(&self, f: &[f64]) -> Vec<Complex64> {
        assert_eq!(f.len(), self.n * self.n);
        let mut data: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.apply2(&mut data, &self.fwd);
        data
    }

    /// Inverse DFT divided by n², real part.
    pub fn inverse(&self, mut c: Vec<Complex64>) -> Vec<f64> {
        self.apply2(&mut c, &self.inv);
        let s = 1.0 / (self.n * self.n) as f64;
        c.iter().map(|z| z.re * s).collect()
    }

    /// Multiply coefficients by a real symbol of (kx, ky).
    pub fn apply_symbol<F>(&self, f: &[f64], symbol: F) -> Vec<f64>
    where
        F: Fn(f64, f64) -> f64 + Sync,
    {
        let mut c = self.forward(f);
        self.scale_by(&mut c, symbol);
        self.inverse(c)
    }

    pub fn scale_by<F>(&self, c: &mut [Complex64], symbol: F)
    where
        F: Fn(f64, f64) -> f64 + Sync,
    {
        let n = self.n;
        c.par_chunks_mut(n).enumerate().for_each(|(iy, row)| {
            let ky = self.k[iy];
            for (ix, z) in row.iter_mut().enumerate() {
                *z *= symbol(self.k[ix], ky);
            }
        });
    }

    /// Symbol of the flat Laplacian, −4π²|k|².
    pub fn laplace_symbol(kx: f64, ky: f64) -> f64 {
        -4.0 * std::f64::consts::PI.powi(2) * (kx * kx + ky * ky)
    }

    /// Flat Laplacian.
    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        self.apply_symbol(f, Self::laplace_symbol)
    }

    /// Flat gradient (∂x f, ∂y f); the Nyquist mode is dropped.
    pub fn gradient(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let nyq = (n / 2) as f64;
        let c = self.forward(f);
        let tp = 2.0 * std::f64::consts::PI;
        let mut cx = c.clone();
        let mut cy = c;
        for iy in 0..n {
            let ky = self.k[iy];
            for ix in 0..n {
                let kx = self.k[ix];
                let i = iy * n + ix;
                let zx = if kx == nyq { 0.0 } else { tp * kx };
                let zy = if ky == nyq { 0.0 } else { tp * ky };
                cx[i] *= Complex64::new(0.0, zx);
                cy[i] *= Complex64::new(0.0, zy);
            }
        }
        (self.inverse(cx), self.inverse(cy))
    }

    /// ∫ f(−Δf) dx over the unit square, by Parseval.
    pub fn dirichlet_energy(&self, f: &[f64]) -> f64 {
        let c = self.forward(f);
        let n = self.n;
        let norm = 1.0 / ((n * n) as f64).powi(2);
        let mut s = 0.0;
        for iy in 0..n {
            let ky = self.k[iy];
            for ix in 0..n {
                s += -Self::laplace_symbol(self.k[ix], ky) * c[iy * n + ix].norm_sqr();
            }
        }
        s * norm
    }
}
