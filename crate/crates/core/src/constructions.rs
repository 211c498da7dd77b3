//! Section builders: many real pseudo-spheres from a lattice of quadric
//! bumps, a symmetric section without real zeros, and the colored symmetric
//! transversalization recursion.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{
    concentrated_sigma, tau_bump, Bump, BumpModel, ComplexMap, SectionField, CONCENTRATED_WIDTH,
};
use crate::grid::{GridLayout, GridSpec};
use crate::model::{ModelManifold, ScaledFrame};
use crate::point::{Gradient, Point, MAX_DIM};
use crate::sard::{pick_real_w, sample_grid, FnMap, SardParams};
use crate::transversality::{eta_from_samples, hessian_norm, HESSIAN_STEP_GK};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    /// Lattice mesh on the real locus, in `g_k`.
    pub mesh: f64,
    /// Plateau radius of the bumps in `g_k`; infinite for plain Gaussians.
    pub cutoff: f64,
}

impl LatticeConfig {
    pub fn new(mesh: f64) -> Result<Self> {
        if !(mesh > 0.0) {
            return Err(Error::Parameter(format!("mesh {mesh} must be positive")));
        }
        Ok(Self {
            mesh,
            cutoff: f64::INFINITY,
        })
    }
}

/// Value and derivative of the other sites' bumps at one site.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interference {
    pub site: Point,
    pub value: f64,
    /// `|grad| / sqrt k`.
    pub derivative: f64,
}

#[derive(Clone, Debug)]
pub struct SpheresSection {
    pub field: SectionField,
    pub sites: Vec<Point>,
    pub interference: Vec<Interference>,
}

impl SpheresSection {
    pub fn max_value_interference(&self) -> f64 {
        self.interference.iter().map(|i| i.value).fold(0.0, f64::max)
    }

    pub fn max_derivative_interference(&self) -> f64 {
        self.interference.iter().map(|i| i.derivative).fold(0.0, f64::max)
    }
}

/// Sum of quadric bumps over the real lattice of mesh `D`.
pub fn build_spheres_section(
    model: &ModelManifold,
    frame: &ScaledFrame,
    cfg: &LatticeConfig,
) -> Result<SpheresSection> {
    let lattice = model.real_lattice(frame, cfg.mesh)?;
    let one = Complex64::new(1.0, 0.0);
    let bumps: Vec<Bump> = lattice
        .points
        .iter()
        .map(|x| tau_bump(x, one, cfg.cutoff))
        .collect();
    let field = SectionField::new(*model, *frame, bumps.clone());
    let sk = frame.sqrt_k();
    let interference = (0..bumps.len())
        .into_par_iter()
        .map(|i| {
            let others: Vec<Bump> = bumps
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| b.clone())
                .collect();
            let rest = SectionField::new(*model, *frame, others);
            let (v, g) = rest.eval_grad(&lattice.points[i]);
            Interference {
                site: lattice.points[i],
                value: v.norm(),
                derivative: g.norm() / sk,
            }
        })
        .collect();
    Ok(SpheresSection {
        field,
        sites: lattice.points,
        interference,
    })
}

/// Sites `((i + 1/2) / m)` in all `2n` real directions of the torus with
/// spacing at least `mesh` in `g_k`. The set is invariant under conjugation.
pub fn full_lattice_sites(model: &ModelManifold, frame: &ScaledFrame, mesh: f64) -> Result<Vec<Point>> {
    if !model.is_torus() {
        return Err(Error::Parameter("full lattices live on the torus".into()));
    }
    let m = ((frame.sqrt_k() / mesh).floor() as usize).max(1);
    let dims = 2 * model.n;
    let total = m.pow(dims as u32);
    Ok((0..total)
        .map(|mut f| {
            let mut r = [0.0; 2 * MAX_DIM];
            for a in (0..dims).rev() {
                r[a] = ((f % m) as f64 + 0.5) / m as f64;
                f /= m;
            }
            Point::from_interleaved(&r)
        })
        .collect())
}

/// Quadric bumps with unit coefficient over the full torus lattice.
pub fn build_full_lattice_section(model: &ModelManifold, frame: &ScaledFrame, mesh: f64) -> Result<SectionField> {
    let one = Complex64::new(1.0, 0.0);
    let bumps = full_lattice_sites(model, frame, mesh)?
        .iter()
        .map(|x| tau_bump(x, one, f64::INFINITY))
        .collect();
    Ok(SectionField::new(*model, *frame, bumps))
}

/// Sum of concentrated unit bumps over a lattice of mesh 1 on the real locus.
pub fn build_nonvanishing_section(model: &ModelManifold, frame: &ScaledFrame) -> Result<SectionField> {
    let lattice = model.real_lattice(frame, 1.0)?;
    let cutoff = frame.kf().powf(1.0 / 6.0);
    let bumps = lattice
        .points
        .iter()
        .map(|x| Bump::new(*x, Complex64::new(1.0, 0.0), BumpModel::Unit, CONCENTRATED_WIDTH, cutoff))
        .collect();
    Ok(SectionField::new(*model, *frame, bumps))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransversalizeParams {
    /// Threshold of the transversality condition.
    pub epsilon: f64,
    /// Balls whose local certified eta reaches this are left alone.
    pub eta_target: f64,
    pub sard: SardParams,
    /// Separation of same-color balls, in `g_k`.
    pub separation: f64,
    /// Allowed sum over colors of the largest `|w|`, as a multiple of `C0(s)`.
    pub budget_factor: f64,
    /// Cell of the global measuring grid, in `g_k`.
    pub cell_gk: f64,
    /// Cell of the grid certifying the output; coarser grids lose the
    /// certificate to the off-grid correction.
    pub certify_cell_gk: f64,
}

impl Default for TransversalizeParams {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            eta_target: 0.05,
            sard: SardParams::with_default_p(0.09).expect("default Sard parameters"),
            separation: 3.0,
            budget_factor: 10.0,
            cell_gk: 0.1,
            certify_cell_gk: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallPerturbation {
    pub unit: usize,
    pub center: Point,
    pub w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorLog {
    pub color: usize,
    pub balls: usize,
    pub perturbed: Vec<BallPerturbation>,
    pub eta_before: f64,
    pub eta_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransversalizationTrace {
    pub colors: Vec<ColorLog>,
    pub num_colors: usize,
    /// Certified global eta of the output (grid lower bound).
    pub final_eta: f64,
    /// Grid minimum of the output, without the off-grid correction.
    pub final_eta_grid: f64,
    /// `sum |w|` over all perturbations.
    pub total_w: f64,
    /// Sum over colors of the largest `|w|`.
    pub spent: f64,
    pub budget: f64,
}

impl TransversalizationTrace {
    pub fn perturbation_count(&self) -> usize {
        self.colors.iter().map(|c| c.perturbed.len()).sum()
    }

    /// One line per perturbed ball, then a summary line.
    pub fn log_lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.colors {
            for p in &c.perturbed {
                let r = p.center.interleaved();
                out.push(format!(
                    "color={} unit={} center={:.6},{:.6} w={:+.6e} eta_before={:.4e} eta_after={:.4e}",
                    c.color, p.unit, r[0], r[1], p.w, c.eta_before, c.eta_after
                ));
            }
        }
        out.push(format!(
            "colors={} perturbations={} total_w={:.4e} final_eta={:.4e}",
            self.num_colors,
            self.perturbation_count(),
            self.total_w,
            self.final_eta
        ));
        out
    }
}

/// Global certified eta on an ambient grid of the model.
pub fn measure_eta(s: &SectionField, epsilon: f64, cell_gk: f64) -> Result<(f64, f64)> {
    let grid = match s.model().kind {
        crate::model::ModelKind::Torus => GridSpec::ambient(s.model(), s.frame(), cell_gk)?,
        crate::model::ModelKind::FlatBall { .. } => GridSpec::ambient(s.model(), s.frame(), cell_gk)?,
    };
    let r = eta_on(s, &grid, epsilon)?;
    Ok((r.eta_lower, r.eta))
}

fn eta_on(s: &SectionField, grid: &GridSpec, epsilon: f64) -> Result<crate::transversality::TransversalityReport> {
    let sk = s.frame().sqrt_k();
    let k = s.frame().kf();
    let h = HESSIAN_STEP_GK / sk;
    let model = *s.model();
    let inside: Vec<usize> = (0..grid.len())
        .filter(|&i| model.contains(&grid.point(i)))
        .collect();
    let samples: Vec<(f64, Gradient)> = inside
        .par_iter()
        .map(|&i| {
            let (v, g) = s.eval_grad(&grid.point(i));
            (v.norm(), g)
        })
        .collect();
    let c2 = inside
        .par_iter()
        .map(|&i| hessian_norm(s, &grid.point(i), h) / k)
        .reduce(|| 0.0, f64::max);
    let mut report = eta_from_samples(grid, &samples, sk, epsilon, grid.layout == GridLayout::Real, c2);
    // witness indices refer to the filtered list
    if report.witness.is_some() {
        let (_, wi) = samples
            .iter()
            .enumerate()
            .filter(|(_, (v, _))| *v <= epsilon)
            .map(|(i, (_, g))| (g.norm(), i))
            .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a });
        report.witness = Some(grid.point(inside[wi]));
    }
    Ok(report)
}

/// Local certified eta of `s` on the unit `g_k` ball at `x`.
fn local_eta(s: &SectionField, x: &Point, epsilon: f64) -> Result<f64> {
    let grid = GridSpec::local_ball(s.n(), x, 1.0, s.frame(), 0.1);
    let r = eta_on_ball(s, &grid, x, epsilon);
    Ok(r)
}

fn eta_on_ball(s: &SectionField, grid: &GridSpec, x: &Point, epsilon: f64) -> f64 {
    let sk = s.frame().sqrt_k();
    let k = s.frame().kf();
    let h = HESSIAN_STEP_GK / sk;
    let pts: Vec<Point> = grid
        .points()
        .filter(|z| (*z - *x).norm() * sk <= 1.0 + grid.cell_diameter_gk())
        .collect();
    let samples: Vec<(f64, Gradient, f64)> = pts
        .par_iter()
        .map(|z| {
            let (v, g) = s.eval_grad(z);
            (v.norm(), g, hessian_norm(s, z, h) / k)
        })
        .collect();
    let c2 = samples.iter().map(|x| x.2).fold(0.0, f64::max);
    let r = 0.5 * grid.cell_diameter_gk();
    samples
        .iter()
        .filter(|(v, g, _)| *v - (std::f64::consts::SQRT_2 * g.norm() / sk + c2 * r) * r <= epsilon)
        .map(|(_, g, _)| (g.norm() / sk - c2 * r).max(0.0))
        .fold(f64::INFINITY, f64::min)
}

/// `s / sigma_hat` in the chart `u = (z - x) sqrt k` around `x`.
fn local_quotient<'a>(
    s: &'a SectionField,
    hat: &'a SectionField,
    x: Point,
    scale: f64,
) -> FnMap<impl Fn(&Point) -> (Complex64, Gradient) + Sync + 'a> {
    let sk = s.frame().sqrt_k();
    FnMap {
        n: s.n(),
        f: move |u: &Point| {
            let z = x + u.scale(1.0 / sk);
            let (a, ga) = s.eval_grad(&z);
            let (b, gb) = hat.eval_grad(&z);
            let q = a / b;
            // (a' b - a b') / b^2, then d/du = d/dz / sqrt k
            let inv = Complex64::new(1.0 / sk, 0.0) / (b * b) / scale;
            let g = (ga * b + gb * (-a)) * inv;
            (q / scale, g)
        },
    }
}

/// Largest `|s / sigma_hat|` over the chart ball of radius 1.1.
fn quotient_scale(s: &SectionField, hat: &SectionField, x: &Point) -> f64 {
    let grid = GridSpec::local_ball(s.n(), x, 1.1, s.frame(), 0.05);
    let sk = s.frame().sqrt_k();
    grid.points()
        .filter(|z| (*z - *x).norm() * sk <= 1.1 + 1e-9)
        .map(|z| (s.evaluate(&z) / hat.evaluate(&z)).norm())
        .fold(0.0, f64::max)
}

/// Symmetrized concentrated section at `x`, moved off deep overlaps with
/// its conjugate.
fn centered_hat(model: &ModelManifold, frame: &ScaledFrame, x: &Point) -> Result<(Point, SectionField)> {
    let mut center = *x;
    for _ in 0..5 {
        let hat = concentrated_sigma(model, frame, &center)?.symmetrize();
        if hat.evaluate(&center).norm() >= 0.4 {
            return Ok((center, hat));
        }
        // step away from the nearest fixed level
        let mut r = center.interleaved();
        for j in 0..model.n {
            let y = r[2 * j + 1];
            r[2 * j + 1] = y + 0.25 / frame.sqrt_k() * if y.rem_euclid(0.5) < 0.25 { 1.0 } else { -1.0 };
        }
        center = Point::from_interleaved(&r);
    }
    Err(Error::Certificate(format!(
        "no symmetric concentrated section with |value| >= 0.4 near {:?}",
        x.interleaved()
    )))
}

/// Colored Donaldson recursion with real Sard constants.
pub fn transversalize_symmetric(
    s: &SectionField,
    params: &TransversalizeParams,
) -> Result<(SectionField, TransversalizationTrace)> {
    if !s.is_structurally_symmetric() {
        return Err(Error::NotSymmetric(f64::NAN));
    }
    let model = *s.model();
    let frame = *s.frame();
    let net = model.colored_ball_net(&frame, params.separation)?;
    let grid = GridSpec::ambient(&model, &frame, params.cell_gk)?;
    let initial = eta_on(s, &grid, params.epsilon)?;
    let c0 = (0..grid.len())
        .into_par_iter()
        .map(|i| s.evaluate(&grid.point(i)).norm())
        .reduce(|| 0.0, f64::max);
    let budget = params.budget_factor * c0;
    let mut current = s.clone();
    let mut eta_now = initial.eta_lower;
    let mut logs = Vec::new();
    let mut spent = 0.0;
    let mut total_w = 0.0;
    let mut unit_id = 0usize;
    for (ci, color) in net.colors.iter().enumerate() {
        let snapshot = current.clone();
        let mut picks: Vec<(usize, Point, f64, SectionField)> = Vec::new();
        for unit in color {
            let uid = unit_id;
            unit_id += 1;
            let x = unit.center();
            let le = local_eta(&snapshot, &x, params.epsilon)?;
            if le >= params.eta_target {
                continue;
            }
            let (center, hat) = centered_hat(&model, &frame, &x)?;
            let scale = quotient_scale(&snapshot, &hat, &center).max(1.0);
            let f = local_quotient(&snapshot, &hat, center, scale);
            let g = sample_grid(model.n, params.sard.sigma);
            if g.len() > MAX_SARD_SAMPLES {
                return Err(Error::BallPerturbation {
                    ball: uid,
                    source: Box::new(Error::GridTooCoarse {
                        actual: g.cell_diameter_g(),
                        limit: params.sard.sigma / 4.0,
                        hint: g.count,
                    }),
                });
            }
            let pick = pick_real_w(&f, &params.sard).map_err(|e| Error::BallPerturbation {
                ball: uid,
                source: Box::new(e),
            })?;
            drop(f);
            picks.push((uid, center, pick.w * scale, hat));
        }
        let balls = color.len();
        if picks.is_empty() {
            logs.push(ColorLog {
                color: ci,
                balls,
                perturbed: Vec::new(),
                eta_before: eta_now,
                eta_after: eta_now,
            });
            continue;
        }
        let largest = picks.iter().map(|p| p.2.abs()).fold(0.0, f64::max);
        spent += largest;
        total_w += picks.iter().map(|p| p.2.abs()).sum::<f64>();
        if spent > budget {
            return Err(Error::BudgetExhausted { spent, budget });
        }
        let mut extra: Vec<Bump> = Vec::new();
        for (_, _, w, hat) in &picks {
            for b in hat.bumps() {
                let mut b = b.clone();
                b.coeff *= -w;
                extra.push(b);
            }
        }
        current = snapshot.with_bumps(extra);
        let eta_before = eta_now;
        eta_now = eta_on(&current, &grid, params.epsilon)?.eta_lower;
        logs.push(ColorLog {
            color: ci,
            balls,
            perturbed: picks
                .iter()
                .map(|(u, c, w, _)| BallPerturbation {
                    unit: *u,
                    center: *c,
                    w: *w,
                })
                .collect(),
            eta_before,
            eta_after: eta_now,
        });
    }
    let fine = GridSpec::ambient(&model, &frame, params.certify_cell_gk)?;
    let fin = if fine.len() <= MAX_CERTIFY_POINTS {
        eta_on(&current, &fine, params.epsilon)?
    } else {
        eta_on(&current, &grid, params.epsilon)?
    };
    Ok((
        current,
        TransversalizationTrace {
            num_colors: net.num_colors(),
            colors: logs,
            final_eta: fin.eta_lower,
            final_eta_grid: fin.eta,
            total_w,
            spent,
            budget,
        },
    ))
}

/// Largest grid used for the final certificate.
pub const MAX_CERTIFY_POINTS: usize = 8_000_000;

/// Largest Sard sampling grid attempted per ball.
pub const MAX_SARD_SAMPLES: usize = 4_000_000;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zerolocus::real_components;

    #[test]
    fn spheres_n1_counts() {
        let m = ModelManifold::torus(1).unwrap();
        let f = ScaledFrame::new(100).unwrap();
        let sp = build_spheres_section(&m, &f, &LatticeConfig::new(2.0).unwrap()).unwrap();
        assert_eq!(sp.sites.len(), 5);
        let g = GridSpec::real(&m, &f, 0.1).unwrap();
        assert_eq!(real_components(&sp.field, &g).unwrap().count, 10);
    }

    #[test]
    fn interference_decays() {
        let m = ModelManifold::torus(1).unwrap();
        let f = ScaledFrame::new(400).unwrap();
        let sp = build_spheres_section(&m, &f, &LatticeConfig::new(6.0).unwrap()).unwrap();
        assert!(sp.max_value_interference() < 10.0 * (-6f64).exp());
        assert!(sp.max_derivative_interference() < 10.0 * (-6f64).exp());
    }

    #[test]
    fn nonvanishing_floor() {
        let m = ModelManifold::torus(2).unwrap();
        let f = ScaledFrame::new(25).unwrap();
        let s = build_nonvanishing_section(&m, &f).unwrap();
        let g = GridSpec::real(&m, &f, 0.1).unwrap();
        let min = g.points().map(|z| s.evaluate(&z).norm()).fold(f64::INFINITY, f64::min);
        assert!(min >= 0.25);
    }

    #[test]
    fn full_lattice_is_symmetric() {
        let m = ModelManifold::torus(1).unwrap();
        let f = ScaledFrame::new(100).unwrap();
        let s = build_full_lattice_section(&m, &f, 2.0).unwrap();
        assert_eq!(s.bumps().len(), 25);
        assert!(s.is_structurally_symmetric());
    }
}

#[cfg(test)]
mod recursion_tests {
    use super::*;
    use crate::zerolocus::real_components;

    fn degenerate_spheres(k: u32) -> (SectionField, SectionField) {
        let m = ModelManifold::torus(1).unwrap();
        let f = ScaledFrame::new(k).unwrap();
        let sp = build_spheres_section(&m, &f, &LatticeConfig::new(4.0).unwrap()).unwrap();
        // cancel the value midway between two sites: a tangency on the real line
        let mid = Point::from_real(&[0.5]);
        let a = sp.field.evaluate(&mid).re;
        let bump = Bump::new(mid, Complex64::new(-a, 0.0), BumpModel::Unit, 1.0, f64::INFINITY);
        (sp.field.clone(), sp.field.with_bumps([bump]))
    }

    #[test]
    fn recursion_keeps_spheres_and_certifies() {
        let (plain, s) = degenerate_spheres(100);
        let (out, trace) = transversalize_symmetric(&s, &TransversalizeParams::default()).unwrap();
        assert!(trace.final_eta > 0.0, "{}", trace.final_eta);
        assert!(out.is_structurally_symmetric());
        let g = GridSpec::real(s.model(), s.frame(), 0.05).unwrap();
        let before = real_components(&plain, &g).unwrap();
        let after = real_components(&out, &g).unwrap();
        // every original pseudo-sphere survives near its old position
        for c in &before.components {
            let p = c.crossings[0][0];
            let near = after.components.iter().any(|d| {
                d.crossings.iter().any(|q| (q[0] - p).abs() < 0.02)
            });
            assert!(near, "lost component at {p}");
        }
        assert!(after.count >= before.count);
    }
}
