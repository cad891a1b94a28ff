//! Reference computations kept apart from the main crate. Nothing here
//! shares code with `kwlab`; tests compare the two routes.

use std::f64::consts::PI;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Exponential integral E1(x) for x > 0.
pub fn exp_int_e1(x: f64) -> f64 {
    assert!(x > 0.0);
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..200 {
            term *= -x / k as f64;
            let add = term / k as f64;
            sum += add;
            if add.abs() < 1e-18 * sum.abs().max(1e-300) {
                break;
            }
        }
        -EULER_GAMMA - x.ln() - sum
    } else {
        // modified Lentz on the continued fraction
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

/// Robin constant of the unit flat torus for the Green function with
/// ΔG = 8π − 8πδ, ∫G = 0, i.e. the constant in G = −4 log r + A + O(r).
/// Heat-kernel split: short times summed over lattice images, long times
/// over Fourier modes.
pub fn torus_robin_ewald(tau: f64) -> f64 {
    let mut real = 0.0;
    let m = 12i64;
    for a in -m..=m {
        for b in -m..=m {
            if a == 0 && b == 0 {
                continue;
            }
            let n2 = (a * a + b * b) as f64;
            real += exp_int_e1(n2 / (4.0 * tau)) / (4.0 * PI);
        }
    }
    let mut recip = 0.0;
    for a in -m..=m {
        for b in -m..=m {
            if a == 0 && b == 0 {
                continue;
            }
            let k2 = 4.0 * PI * PI * (a * a + b * b) as f64;
            recip += (-k2 * tau).exp() / k2;
        }
    }
    let gamma_reg = -tau + (-EULER_GAMMA + (4.0 * tau).ln()) / (4.0 * PI) + real + recip;
    8.0 * PI * gamma_reg
}

/// Same constant from the lattice closed form −4 log(2π η(i)²),
/// η(i) = Γ(¼) / (2 π^{3/4}).
pub fn torus_robin_closed_form() -> f64 {
    let gamma_quarter = 3.625_609_908_221_908_3;
    let eta = gamma_quarter / (2.0 * PI.powf(0.75));
    -4.0 * (2.0 * PI * eta * eta).ln()
}

/// Second-order five-point Laplacian on a periodic N×N grid of the unit
/// torus, divided by e^{2w}. Row-major, index iy*N + ix.
pub fn fd_laplacian(n: usize, f: &[f64], w: &[f64]) -> Vec<f64> {
    let h2 = 1.0 / (n * n) as f64;
    let mut out = vec![0.0; n * n];
    for iy in 0..n {
        for ix in 0..n {
            let c = f[iy * n + ix];
            let l = f[iy * n + (ix + n - 1) % n];
            let r = f[iy * n + (ix + 1) % n];
            let d = f[((iy + n - 1) % n) * n + ix];
            let u = f[((iy + 1) % n) * n + ix];
            out[iy * n + ix] = (l + r + d + u - 4.0 * c) / h2 * (-2.0 * w[iy * n + ix]).exp();
        }
    }
    out
}

/// Composite Gauss–Legendre (5-point) quadrature of g on [a, b] with
/// `panels` equal panels.
pub fn gauss_legendre<F: Fn(f64) -> f64>(g: F, a: f64, b: f64, panels: usize) -> f64 {
    let nodes = [
        0.0,
        -0.538_469_310_105_683_1,
        0.538_469_310_105_683_1,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    let weights = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let hw = (b - a) / panels as f64;
    let mut s = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * hw;
        for (x, wt) in nodes.iter().zip(weights.iter()) {
            s += wt * g(mid + 0.5 * hw * x);
        }
    }
    s * 0.5 * hw
}

/// ∫_{|x|<R} F(|x|) dx for a radial integrand, on a log-graded radial mesh.
pub fn radial_integral<F: Fn(f64) -> f64>(g: F, r_max: f64) -> f64 {
    // split [0, r_max] at geometric breakpoints so steep cores are resolved
    let mut edges = vec![0.0];
    let mut r = 1e-3_f64.min(r_max);
    while r < r_max {
        edges.push(r);
        r *= 1.5;
    }
    edges.push(r_max);
    let mut s = 0.0;
    for win in edges.windows(2) {
        s += gauss_legendre(|t| 2.0 * PI * t * g(t), win[0], win[1], 8);
    }
    s
}

/// Periodic cubic (Catmull–Rom style Lagrange) interpolation of a grid
/// field at a point in [0,1)².
pub fn periodic_cubic(n: usize, f: &[f64], x: f64, y: f64) -> f64 {
    let gx = x * n as f64;
    let gy = y * n as f64;
    let ix = gx.floor();
    let iy = gy.floor();
    let tx = gx - ix;
    let ty = gy - iy;
    let wts = |t: f64| {
        [
            -t * (t - 1.0) * (t - 2.0) / 6.0,
            (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
            -(t + 1.0) * t * (t - 2.0) / 2.0,
            (t + 1.0) * t * (t - 1.0) / 6.0,
        ]
    };
    let wx = wts(tx);
    let wy = wts(ty);
    let ni = n as i64;
    let mut s = 0.0;
    for (a, wya) in wy.iter().enumerate() {
        let row = (iy as i64 - 1 + a as i64).rem_euclid(ni) as usize;
        for (b, wxb) in wx.iter().enumerate() {
            let col = (ix as i64 - 1 + b as i64).rem_euclid(ni) as usize;
            s += wya * wxb * f[row * n + col];
        }
    }
    s
}

/// Fourth-order centered differences of a periodic grid field, (∂x, ∂y).
pub fn fd_gradient(n: usize, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let h = 1.0 / n as f64;
    let mut gx = vec![0.0; n * n];
    let mut gy = vec![0.0; n * n];
    let at = |iy: usize, ix: i64| f[iy * n + ix.rem_euclid(n as i64) as usize];
    for iy in 0..n {
        for ix in 0..n {
            let i = ix as i64;
            gx[iy * n + ix] =
                (-at(iy, i + 2) + 8.0 * at(iy, i + 1) - 8.0 * at(iy, i - 1) + at(iy, i - 2)) / (12.0 * h);
            let row = |d: i64| f[((iy as i64 + d).rem_euclid(n as i64) as usize) * n + ix];
            gy[iy * n + ix] = (-row(2) + 8.0 * row(1) - 8.0 * row(-1) + row(-2)) / (12.0 * h);
        }
    }
    (gx, gy)
}

/// −∮_{∂B_δ(p)} G ∂G/∂n ds on the flat torus, by trapezoid quadrature on
/// `m` points of the circle with cubic interpolation of G and of its
/// fourth-order difference gradient. The normal points away from p.
pub fn boundary_flux_energy(n: usize, g: &[f64], p: (f64, f64), delta: f64, m: usize) -> f64 {
    let (gx, gy) = fd_gradient(n, g);
    let mut s = 0.0;
    for k in 0..m {
        let th = 2.0 * PI * k as f64 / m as f64;
        let (c, sn) = (th.cos(), th.sin());
        let x = (p.0 + delta * c).rem_euclid(1.0);
        let y = (p.1 + delta * sn).rem_euclid(1.0);
        let gv = periodic_cubic(n, g, x, y);
        let dn = c * periodic_cubic(n, &gx, x, y) + sn * periodic_cubic(n, &gy, x, y);
        s += gv * dn;
    }
    -s * 2.0 * PI * delta / m as f64
}

/// ∫_{B_δ(p)} G dx on the flat torus from the exact circle mean
/// −4 log r + A + 2πr² (valid for δ < ½).
pub fn disk_green_integral(delta: f64, robin_a: f64) -> f64 {
    let d2 = delta * delta;
    -8.0 * PI * (0.5 * d2 * delta.ln() - 0.25 * d2) + robin_a * PI * d2 + PI * PI * d2 * d2
}

/// Dirichlet energy of G outside B_δ(p) on the flat torus by Green's
/// identity: boundary flux plus 8π∫_{B_δ} G.
pub fn outer_green_energy(n: usize, g: &[f64], p: (f64, f64), delta: f64, m: usize, robin_a: f64) -> f64 {
    boundary_flux_energy(n, g, p, delta, m) + 8.0 * PI * disk_green_integral(delta, robin_a)
}
