//! AH constants and eta-transversality of a section measured on grids at
//! scale `g_k`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fields::{ComplexMap, SectionField};
use crate::grid::{GridLayout, GridSpec};
use crate::point::{Gradient, Point};

/// Largest admissible cell diameter in `g_k` units.
pub const MAX_CELL_GK: f64 = 0.2;
/// Finite-difference step for second derivatives, in `g_k` units.
pub const HESSIAN_STEP_GK: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AhReport {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub cbar: f64,
    pub grid: GridSpec,
}

impl AhReport {
    pub fn record(&self) -> Vec<(&'static str, String)> {
        vec![
            ("c0", format!("{:.6e}", self.c0)),
            ("c1", format!("{:.6e}", self.c1)),
            ("c2", format!("{:.6e}", self.c2)),
            ("cbar", format!("{:.6e}", self.cbar)),
            ("cell_gk", format!("{:.4}", self.grid.cell_diameter_gk())),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransversalityReport {
    pub epsilon: f64,
    /// Grid minimum of `|grad s| / sqrt k` over `{|s| <= epsilon}`; infinite if empty.
    pub eta: f64,
    pub witness: Option<Point>,
    pub restricted_real: bool,
    /// `C2 * cell diameter` in `g_k`: how far the grid minimum may overstate eta.
    pub correction: f64,
    /// Lower bound valid off the grid: minimum of `|grad s| / sqrt k - C2 r`
    /// over samples whose cell ball (radius `r` = half cell in `g_k`) may
    /// meet `{|s| <= epsilon}`.
    pub eta_lower: f64,
}

impl TransversalityReport {
    pub fn record(&self) -> Vec<(&'static str, String)> {
        vec![
            ("epsilon", format!("{:.6e}", self.epsilon)),
            ("eta", format!("{:.6e}", self.eta)),
            ("eta_lower", format!("{:.6e}", self.eta_lower)),
            ("correction", format!("{:.6e}", self.correction)),
            ("restricted_real", self.restricted_real.to_string()),
        ]
    }
}

/// Norm of the real Hessian normalized like `Gradient::norm`, so that a
/// holomorphic function has `|hess| = |s''|`.
pub fn hessian_norm(s: &dyn ComplexMap, z: &Point, h: f64) -> f64 {
    let n = s.dim();
    let mut total = 0.0;
    for a in 0..2 * n {
        let mut e = [0.0; 6];
        e[a] = h;
        let e = Point::from_interleaved(&e);
        let gp = s.eval_grad(&(*z + e)).1;
        let gm = s.eval_grad(&(*z - e)).1;
        let d = (gp + gm * num_complex::Complex64::new(-1.0, 0.0)) * num_complex::Complex64::new(0.5 / h, 0.0);
        total += d.norm().powi(2);
    }
    (0.5 * total).sqrt()
}

fn max_reduce(a: f64, b: f64) -> f64 {
    a.max(b)
}

pub fn ah_report(s: &SectionField, grid: &GridSpec) -> Result<AhReport> {
    grid.require_cell_gk(MAX_CELL_GK)?;
    let n = s.n();
    let sk = s.frame().sqrt_k();
    let k = s.frame().kf();
    let h = HESSIAN_STEP_GK / sk;
    let (c0, c1, c2, cbar) = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let z = grid.point(i);
            let (v, g) = s.eval_grad(&z);
            let hess = hessian_norm(s, &z, h);
            (v.norm(), g.norm() / sk, hess / k, g.antiholo_norm(n))
        })
        .reduce(
            || (0.0, 0.0, 0.0, 0.0),
            |a, b| {
                (
                    max_reduce(a.0, b.0),
                    max_reduce(a.1, b.1),
                    max_reduce(a.2, b.2),
                    max_reduce(a.3, b.3),
                )
            },
        );
    Ok(AhReport {
        c0,
        c1,
        c2,
        cbar,
        grid: *grid,
    })
}

/// Smallest `(value, index)` with ties broken by index, so the witness does
/// not depend on the thread schedule.
fn min_indexed(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Less => a,
        std::cmp::Ordering::Greater => b,
        std::cmp::Ordering::Equal => {
            if a.1 <= b.1 {
                a
            } else {
                b
            }
        }
    }
}

pub fn eta_transversality(
    s: &SectionField,
    grid: &GridSpec,
    epsilon: f64,
    restrict_real: bool,
) -> Result<TransversalityReport> {
    grid.require_cell_gk(MAX_CELL_GK)?;
    let samples: Vec<(f64, Gradient)> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let (v, g) = s.eval_grad(&grid.point(i));
            (v.norm(), g)
        })
        .collect();
    let sk = s.frame().sqrt_k();
    let k = s.frame().kf();
    let h = HESSIAN_STEP_GK / sk;
    let c2 = (0..grid.len())
        .into_par_iter()
        .map(|i| hessian_norm(s, &grid.point(i), h) / k)
        .reduce(|| 0.0, f64::max);
    Ok(eta_from_samples(grid, &samples, sk, epsilon, restrict_real, c2))
}

/// Eta from precomputed `(|s|, grad s)` samples and the Hessian bound `C2`.
pub fn eta_from_samples(
    grid: &GridSpec,
    samples: &[(f64, Gradient)],
    sqrt_k: f64,
    epsilon: f64,
    restrict_real: bool,
    c2: f64,
) -> TransversalityReport {
    let cell = grid.cell_diameter_gk();
    let r = 0.5 * cell;
    let none = (f64::INFINITY, usize::MAX);
    let (eta, wi) = samples
        .par_iter()
        .enumerate()
        .filter(|(_, (v, _))| *v <= epsilon)
        .map(|(i, (_, g))| (g.norm() / sqrt_k, i))
        .reduce(|| none, min_indexed);
    // every point within r of a sample: |s| drops by at most (|ds| + C2 r) r
    let (lower, _) = samples
        .par_iter()
        .enumerate()
        .filter(|(_, (v, g))| {
            let lip = std::f64::consts::SQRT_2 * g.norm() / sqrt_k + c2 * r;
            *v - lip * r <= epsilon
        })
        .map(|(i, (_, g))| ((g.norm() / sqrt_k - c2 * r).max(0.0), i))
        .reduce(|| none, min_indexed);
    TransversalityReport {
        epsilon,
        eta,
        witness: (wi != usize::MAX).then(|| grid.point(wi)),
        restricted_real: restrict_real || grid.layout == GridLayout::Real,
        correction: c2 * cell,
        eta_lower: lower,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{tau_bump, Bump, BumpModel};
    use crate::model::{ModelManifold, ScaledFrame};
    use num_complex::Complex64;

    fn one() -> Complex64 {
        Complex64::new(1.0, 0.0)
    }

    #[test]
    fn unit_bump_c0() {
        let m = ModelManifold::flat_ball(1, 1.0).unwrap();
        let f = ScaledFrame::new(100).unwrap();
        let s = SectionField::new(m, f, vec![Bump::new(Point::ORIGIN, one(), BumpModel::Unit, 1.0, f64::INFINITY)]);
        let g = GridSpec::local_ball(1, &Point::ORIGIN, 3.0, &f, 0.1);
        let r = ah_report(&s, &g).unwrap();
        assert!((r.c0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn coarse_grid_is_refused() {
        let m = ModelManifold::torus(1).unwrap();
        let f = ScaledFrame::new(100).unwrap();
        let s = SectionField::zero(m, f);
        let g = GridSpec::ambient_with_count(&m, &f, 10);
        assert!(ah_report(&s, &g).is_err());
    }

    #[test]
    fn constant_and_zero_fields() {
        let m = ModelManifold::flat_ball(1, 1.0).unwrap();
        let f = ScaledFrame::new(25).unwrap();
        let g = GridSpec::local_ball(1, &Point::ORIGIN, 2.0, &f, 0.1);
        let zero = SectionField::zero(m, f);
        let r = eta_transversality(&zero, &g, 0.1, false).unwrap();
        assert_eq!(r.eta, 0.0);
        assert!(r.witness.is_some());

        // constant 1 on the sampled box: a bump with a huge plateau
        let flat = SectionField::new(m, f, vec![Bump::new(Point::ORIGIN, one(), BumpModel::Unit, 0.0, 100.0)]);
        let r = eta_transversality(&flat, &g, 0.5, false).unwrap();
        assert!(r.eta.is_infinite() && r.witness.is_none());
    }

    #[test]
    fn tau_eta_floor() {
        let m = ModelManifold::flat_ball(1, 1.0).unwrap();
        for k in [25, 100, 400] {
            let f = ScaledFrame::new(k).unwrap();
            let s = SectionField::new(m, f, vec![tau_bump(&Point::ORIGIN, one(), f64::INFINITY)]);
            let g = GridSpec::local_ball(1, &Point::ORIGIN, 1.0, &f, 0.02);
            let r = eta_transversality(&s, &g, 0.05, false).unwrap();
            assert!(r.eta >= 0.1, "k={k} eta={}", r.eta);
        }
    }
}
