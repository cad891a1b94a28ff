//! Named weights used by tests, the CLI and the pipeline.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{KwError, Result};
use crate::surface::{ScalarField, SurfaceGrid};

/// Smooth periodic stand-in for the squared distance to (½, ½).
pub fn periodic_dist2(x: f64, y: f64) -> f64 {
    ((PI * (x - 0.5)).sin().powi(2) + (PI * (y - 0.5)).sin().powi(2)) / (PI * PI)
}

#[derive(Debug, Clone, Copy)]
pub struct Fixture {
    pub name: &'static str,
    pub description: &'static str,
    pub sign_changing: bool,
    /// sign of Δlog h(p₀) + 8π − 2K(p₀) on the flat torus
    pub djlw_positive: bool,
    /// value of that expression on the flat torus, from the closed form
    pub djlw_flat: f64,
    eval: fn(f64, f64) -> f64,
}

impl Fixture {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.eval)(x, y)
    }

    pub fn weight(&self, grid: Arc<SurfaceGrid>) -> ScalarField {
        ScalarField::from_fn(grid, self.eval)
    }
}

fn constant(_: f64, _: f64) -> f64 {
    1.0
}

fn single_bump(x: f64, y: f64) -> f64 {
    (0.3 * (-periodic_dist2(x, y) / 0.02).exp()).exp()
}

fn sign_changing_disk(x: f64, y: f64) -> f64 {
    let d = periodic_dist2(x, y) / (0.35 * 0.35);
    -0.3 + 1.3 * (-d * d).exp()
}

fn sign_changing_stripe(x: f64, _: f64) -> f64 {
    0.8 + (2.0 * PI * x).cos()
}

fn sign_changing_peak(x: f64, y: f64) -> f64 {
    (0.5 + (2.0 * PI * x).cos() + (2.0 * PI * y).cos()) / 2.5
}

const EIGHT_PI: f64 = 8.0 * PI;

static CATALOG: [Fixture; 5] = [
    Fixture {
        name: "constant",
        description: "h = 1",
        sign_changing: false,
        djlw_positive: true,
        djlw_flat: EIGHT_PI,
        eval: constant,
    },
    Fixture {
        name: "single-bump",
        description: "h = exp(0.3 exp(-d^2/0.02)), d the periodic distance to (1/2, 1/2); positive",
        sign_changing: false,
        djlw_positive: false,
        // Δ log h(centre) = 0.3 · (−4/0.02)
        djlw_flat: EIGHT_PI - 60.0,
        eval: single_bump,
    },
    Fixture {
        name: "sign-changing-disk",
        description: "h = -0.3 + 1.3 exp(-(d^2/0.35^2)^2); positive on a disk around (1/2, 1/2)",
        sign_changing: true,
        djlw_positive: true,
        // flat top: Δ log h vanishes at the centre
        djlw_flat: EIGHT_PI,
        eval: sign_changing_disk,
    },
    Fixture {
        name: "sign-changing-stripe",
        description: "h = 0.8 + cos(2 pi x); positive on a stripe around x = 0",
        sign_changing: true,
        djlw_positive: true,
        // Δ log h on x = 0 is −4π²/1.8
        djlw_flat: EIGHT_PI - 4.0 * PI * PI / 1.8,
        eval: sign_changing_stripe,
    },
    Fixture {
        name: "sign-changing-peak",
        description: "h = (0.5 + cos(2 pi x) + cos(2 pi y)) / 2.5; h(0,0) = 1",
        sign_changing: true,
        djlw_positive: false,
        // Δ log h at the origin is −8π²/2.5
        djlw_flat: EIGHT_PI - 8.0 * PI * PI / 2.5,
        eval: sign_changing_peak,
    },
];

pub fn catalog() -> &'static [Fixture] {
    &CATALOG
}

pub fn fixture(name: &str) -> Result<&'static Fixture> {
    CATALOG
        .iter()
        .find(|f| f.name == name)
        .ok_or_else(|| KwError::UnknownFixture(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_resolve() {
        for f in catalog() {
            assert_eq!(fixture(f.name).unwrap().name, f.name);
            assert_eq!(f.djlw_positive, f.djlw_flat > 0.0);
        }
        assert!(matches!(fixture("round-sphere"), Err(KwError::UnknownFixture(_))));
    }

    #[test]
    fn sign_structure() {
        let g = SurfaceGrid::flat(64).unwrap();
        for f in catalog() {
            let h = f.weight(g.clone());
            assert!(h.max() > 0.0);
            assert_eq!(h.min() < 0.0, f.sign_changing, "{}", f.name);
        }
    }
}
