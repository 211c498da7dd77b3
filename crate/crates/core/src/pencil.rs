//! Real pencils `F = s1 / s0`: base locus, critical set, Morse data and the
//! reality identity `F(c(z)) = conj F(z)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{
    Bump, BumpModel, ComplexMap, SectionField, CONCENTRATED_WIDTH, TAU_WIDTH,
};
use crate::grid::GridSpec;
use crate::model::{ModelManifold, ScaledFrame};
use crate::point::{Gradient, Point, MAX_DIM};
use crate::sard::{pick_real_w, sample_grid, FnMap, SardParams};
use crate::transversality::{eta_from_samples, hessian_norm, HESSIAN_STEP_GK};

/// Newton iterations per seed.
const NEWTON_STEPS: usize = 40;
/// Relative finite-difference step for second derivatives, in `g_k`.
pub const JET_STEP_GK: f64 = 1e-5;
/// Newton may not travel farther than this from its seed, in `g_k`.
const NEWTON_REACH_GK: f64 = 1.5;
/// Critical points closer than this in `g_k` are the same point.
const CRIT_DEDUP_GK: f64 = 1e-4;
/// Base points closer than this in `g_k` are the same point.
const BASE_DEDUP_GK: f64 = 0.5;
/// Least admissible `|zeta|` on a ball during `transversalize_df`.
pub const ZETA_FLOOR: f64 = 0.1;
/// Plateau cutoff of the lattice pair bumps, in `g_k`.
pub const PAIR_CUTOFF_GK: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PencilParams {
    /// Threshold of `Z = {|s0| >= epsilon}` and of the small-value sets.
    pub epsilon: f64,
    /// `Omega = {|s0| >= chi}`.
    pub chi: f64,
    /// Transversality level required of `s0`, of the pair and of `dF`.
    pub eta: f64,
    /// Cell diameter of the certification grid in `g_k`.
    pub cell_gk: f64,
}

impl PencilParams {
    /// `chi = 0.2 sup|s0|`, `epsilon = chi / 2`.
    pub fn defaults_for(s0: &SectionField, cell_gk: f64) -> Result<Self> {
        // the sup only sets scales: twice the cell is enough
        let grid = GridSpec::ambient(s0.model(), s0.frame(), 2.0 * cell_gk)?;
        let c0 = (0..grid.len())
            .into_par_iter()
            .map(|i| s0.evaluate(&grid.point(i)).norm())
            .reduce(|| 0.0, f64::max);
        let chi = 0.2 * c0;
        Ok(Self {
            epsilon: 0.5 * chi,
            chi,
            eta: 0.01,
            cell_gk,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasePoint {
    pub point: Point,
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub point: Point,
    pub value: Complex64,
    /// Least singular value of the complex Hessian, in `g_k` units.
    pub hessian_min_sv: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GammaStats {
    /// Fraction of grid points of `Omega` lying in `Gamma`.
    pub fraction: f64,
    /// Largest `g_k` distance from a `Gamma` grid point to the critical set.
    pub rho0: f64,
    /// Smallest pairwise `g_k` distance inside the critical set.
    pub separation: f64,
}

/// One numbered certificate of the pencil.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemCheck {
    pub item: u8,
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct PencilData {
    pub s0: SectionField,
    pub s1: SectionField,
    pub params: PencilParams,
    pub grid: GridSpec,
    /// One sample per grid point.
    pub cache: Vec<GridSample>,
    pub base_locus: Vec<BasePoint>,
    pub crit_set: Vec<CriticalPoint>,
    pub gamma_stats: GammaStats,
    pub reality_sup: f64,
    /// Least singular value of `d(s0, s1) / sqrt k` on the small set.
    pub pair_sigma_min: f64,
    /// Certified transversality of `s0` alone.
    pub s0_eta: f64,
    /// Seeds dropped by Newton (base locus, critical set).
    pub dropped: (usize, usize),
}

/// `F = s1 / s0` as a map with real gradient.
#[derive(Clone, Copy)]
pub struct Quotient<'a> {
    pub s0: &'a SectionField,
    pub s1: &'a SectionField,
}

impl ComplexMap for Quotient<'_> {
    fn dim(&self) -> usize {
        self.s0.n()
    }

    fn eval_grad(&self, z: &Point) -> (Complex64, Gradient) {
        let (a, ga) = self.s1.eval_grad(z);
        let (b, gb) = self.s0.eval_grad(z);
        let inv = Complex64::new(1.0, 0.0) / (b * b);
        (a / b, (ga * b + gb * (-a)) * inv)
    }
}

/// Holomorphic and antiholomorphic second derivatives of `f` at `z`:
/// `hol[j][l] = d_l d_j f`, `anti[j][l] = dbar_l d_j f`.
pub fn second_jet(f: &dyn ComplexMap, z: &Point, h: f64) -> ([[Complex64; MAX_DIM]; MAX_DIM], [[Complex64; MAX_DIM]; MAX_DIM]) {
    let n = f.dim();
    let zero = Complex64::new(0.0, 0.0);
    let mut hol = [[zero; MAX_DIM]; MAX_DIM];
    let mut anti = [[zero; MAX_DIM]; MAX_DIM];
    for l in 0..n {
        let mut dxy = [[zero; MAX_DIM]; 2];
        for (part, row) in dxy.iter_mut().enumerate() {
            let mut e = [0.0; 2 * MAX_DIM];
            e[2 * l + part] = h;
            let e = Point::from_interleaved(&e);
            let gp = f.eval_grad(&(*z + e)).1;
            let gm = f.eval_grad(&(*z - e)).1;
            for j in 0..n {
                row[j] = (gp.holo(j) - gm.holo(j)) / (2.0 * h);
            }
        }
        for j in 0..n {
            hol[j][l] = (dxy[0][j] - Complex64::i() * dxy[1][j]) * 0.5;
            anti[j][l] = (dxy[0][j] + Complex64::i() * dxy[1][j]) * 0.5;
        }
    }
    (hol, anti)
}

fn singular_values_complex(m: &[[Complex64; MAX_DIM]; MAX_DIM], n: usize) -> Vec<f64> {
    let mat = DMatrix::from_fn(n, n, |i, j| m[i][j]);
    let mut sv: Vec<f64> = mat.singular_values().iter().copied().collect();
    sv.sort_by(f64::total_cmp);
    sv
}

fn singular_values_real(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(f64::total_cmp);
    sv
}

/// Real Jacobian of `z -> (d_j f)_j` in interleaved coordinates, from the jet.
fn df_jacobian(hol: &[[Complex64; MAX_DIM]; MAX_DIM], anti: &[[Complex64; MAX_DIM]; MAX_DIM], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for j in 0..n {
        for l in 0..n {
            let dx = hol[j][l] + anti[j][l];
            let dy = Complex64::i() * (hol[j][l] - anti[j][l]);
            m[(2 * j, 2 * l)] = dx.re;
            m[(2 * j + 1, 2 * l)] = dx.im;
            m[(2 * j, 2 * l + 1)] = dy.re;
            m[(2 * j + 1, 2 * l + 1)] = dy.im;
        }
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorseReport {
    pub min_sv: f64,
    pub max_sv: f64,
    /// `|dbar d F| / |d d F|` in Frobenius norm.
    pub residue: f64,
    pub degenerate: bool,
}

/// Complex Hessian data of `f` at `q`, scaled by `scale`.
pub fn morse_report(f: &dyn ComplexMap, q: &Point, h: f64, scale: f64) -> MorseReport {
    let n = f.dim();
    let (hol, anti) = second_jet(f, q, h);
    let sv = singular_values_complex(&hol, n);
    let fro = |m: &[[Complex64; MAX_DIM]; MAX_DIM]| {
        m.iter().flatten().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    };
    let (min_sv, max_sv) = (sv[0] * scale, sv[n - 1] * scale);
    MorseReport {
        min_sv,
        max_sv,
        residue: fro(&anti) / fro(&hol).max(f64::MIN_POSITIVE),
        degenerate: !(min_sv >= 1e-6 * max_sv) || max_sv == 0.0,
    }
}

/// Complex Hessian matrix of `f` at `q` (for symmetry checks).
pub fn complex_hessian(f: &dyn ComplexMap, q: &Point, h: f64) -> [[Complex64; MAX_DIM]; MAX_DIM] {
    second_jet(f, q, h).0
}

fn check_pair_shapes(s0: &SectionField, s1: &SectionField) -> Result<()> {
    if s0.model() != s1.model() || s0.frame() != s1.frame() {
        return Err(Error::Parameter("pencil sections live on different models".into()));
    }
    if s0.n() > 2 {
        return Err(Error::Dimension(s0.n()));
    }
    for s in [s0, s1] {
        if !s.is_structurally_symmetric() {
            return Err(Error::NotSymmetric(f64::NAN));
        }
    }
    Ok(())
}

fn interleaved6(p: &Point) -> [f64; 6] {
    p.interleaved()
}

/// Values at one grid point, shared by the certification passes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSample {
    pub s0: Complex64,
    pub s1: Complex64,
    /// `|dF| / sqrt k` and `|dbar F| / sqrt k`.
    pub holo: f64,
    pub anti: f64,
    pub inside: bool,
}

/// Flat index of the grid point `c(z)` when it is a grid point.
fn conj_index(grid: &GridSpec, idx: &[usize; 2 * MAX_DIM]) -> Option<usize> {
    if grid.layout != crate::grid::GridLayout::Ambient {
        return Some(grid.flat_index(idx));
    }
    let mut out = *idx;
    for j in 0..grid.n {
        let a = 2 * j + 1;
        let y = grid.lo[a] + idx[a] as f64 * grid.step;
        let t = (-y - grid.lo[a]) / grid.step;
        let r = t.round();
        if (t - r).abs() > 1e-9 {
            return None;
        }
        let c = grid.count as i64;
        let r = r as i64;
        out[a] = if grid.periodic {
            r.rem_euclid(c) as usize
        } else if (0..c).contains(&r) {
            r as usize
        } else {
            return None;
        };
    }
    Some(grid.flat_index(&out))
}

/// Checks the pair, `s0` alone and the reality identity; the base locus and
/// critical set are filled by [`base_locus`] and [`critical_set`].
pub fn make_pencil(s0: &SectionField, s1: &SectionField, params: &PencilParams) -> Result<PencilData> {
    check_pair_shapes(s0, s1)?;
    if !(params.epsilon > 0.0 && params.chi > 0.0 && params.eta > 0.0) {
        return Err(Error::Parameter("pencil thresholds must be positive".into()));
    }
    let model = *s0.model();
    let grid = GridSpec::ambient(&model, s0.frame(), params.cell_gk)?;
    let sk = s0.frame().sqrt_k();
    let k = s0.frame().kf();
    let n = model.n;
    let h = HESSIAN_STEP_GK / sk;
    let eps2 = params.epsilon * params.epsilon;
    let r_cell = grid.cell_diameter_gk();

    struct Pass {
        sample: GridSample,
        wedge: f64,
        pair_sv: f64,
        c2: f64,
        grad0: Gradient,
    }
    let passes: Vec<Pass> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let z = grid.point(i);
            if !model.contains(&z) {
                return Pass {
                    sample: GridSample {
                        s0: Complex64::new(0.0, 0.0),
                        s1: Complex64::new(0.0, 0.0),
                        holo: f64::INFINITY,
                        anti: 0.0,
                        inside: false,
                    },
                    wedge: 0.0,
                    pair_sv: f64::INFINITY,
                    c2: 0.0,
                    grad0: Gradient::ZERO,
                };
            }
            let (a, ga) = s0.eval_grad(&z);
            let (b, gb) = s1.eval_grad(&z);
            // d(s1/s0) s0^2
            let num = gb * a + ga * (-b);
            let wedge = num.norm() / sk / (a.norm_sqr() + b.norm_sqr()).max(f64::MIN_POSITIVE);
            let df = num * (Complex64::new(1.0, 0.0) / (a * a));
            let pair_sv = if a.norm_sqr() + b.norm_sqr() > eps2 {
                f64::INFINITY
            } else if 2 * n < 4 {
                // fewer than four real directions cannot be onto C^2
                0.0
            } else {
                let mut m = DMatrix::zeros(4, 2 * n);
                for l in 0..n {
                    for (row, g) in [ga, gb].iter().enumerate() {
                        m[(2 * row, 2 * l)] = g.dx[l].re / sk;
                        m[(2 * row + 1, 2 * l)] = g.dx[l].im / sk;
                        m[(2 * row, 2 * l + 1)] = g.dy[l].re / sk;
                        m[(2 * row + 1, 2 * l + 1)] = g.dy[l].im / sk;
                    }
                }
                singular_values_real(&m)[0]
            };
            let near = a.norm() <= params.epsilon + 2.0 * ga.norm() / sk * r_cell;
            let c2 = if near { hessian_norm(s0, &z, h) / k } else { 0.0 };
            Pass {
                sample: GridSample {
                    s0: a,
                    s1: b,
                    holo: df.holo_norm(n) / sk,
                    anti: df.antiholo_norm(n) / sk,
                    inside: true,
                },
                wedge,
                pair_sv,
                c2,
                grad0: ga,
            }
        })
        .collect();

    let wedge = passes.iter().filter(|p| p.sample.inside).map(|p| p.wedge).fold(0.0, f64::max);
    if wedge < 1e-9 {
        return Err(Error::PairNotTransverse {
            witness: interleaved6(&grid.point(0)),
            sigma_min: wedge,
        });
    }
    let (pair_sigma_min, wi) = passes
        .iter()
        .enumerate()
        .map(|(i, p)| (p.pair_sv, i))
        .fold((f64::INFINITY, usize::MAX), |x, y| if y.0 < x.0 { y } else { x });
    if pair_sigma_min < params.eta {
        return Err(Error::PairNotTransverse {
            witness: interleaved6(&grid.point(wi)),
            sigma_min: pair_sigma_min,
        });
    }

    let c2 = passes.iter().map(|p| p.c2).fold(0.0, f64::max);
    let s0_samples: Vec<(f64, Gradient)> = passes
        .iter()
        .filter(|p| p.sample.inside)
        .map(|p| (p.sample.s0.norm(), p.grad0))
        .collect();
    let s0_eta = eta_from_samples(&grid, &s0_samples, sk, params.epsilon, false, c2).eta_lower;
    drop(s0_samples);
    let cache: Vec<GridSample> = passes.into_iter().map(|p| p.sample).collect();

    let reality_sup = (0..grid.len())
        .into_par_iter()
        .filter(|&i| cache[i].inside && cache[i].s0.norm() >= 0.5 * params.epsilon)
        .map(|i| {
            let f = cache[i].s1 / cache[i].s0;
            let idx = grid.multi_index(i);
            let fc = match conj_index(&grid, &idx) {
                Some(j) if cache[j].inside => cache[j].s1 / cache[j].s0,
                _ => {
                    let cz = model.conj(&grid.point(i));
                    s1.evaluate(&cz) / s0.evaluate(&cz)
                }
            };
            (fc - f.conj()).norm()
        })
        .reduce(|| 0.0, f64::max);

    Ok(PencilData {
        s0: s0.clone(),
        s1: s1.clone(),
        params: *params,
        grid,
        cache,
        base_locus: Vec::new(),
        crit_set: Vec::new(),
        gamma_stats: GammaStats::default(),
        reality_sup,
        pair_sigma_min,
        s0_eta,
        dropped: (0, 0),
    })
}

/// Grid indices whose value is no larger than at any axis neighbor.
fn local_minima(grid: &GridSpec, values: &[f64], keep: impl Fn(usize) -> bool + Sync) -> Vec<usize> {
    let dims = grid.dims();
    let c = grid.count as i64;
    (0..grid.len())
        .into_par_iter()
        .filter(|&i| keep(i) && values[i].is_finite())
        .filter(|&i| {
            let idx = grid.multi_index(i);
            (0..dims).all(|a| {
                [-1i64, 1].iter().all(|&d| {
                    let mut j = idx;
                    let v = idx[a] as i64 + d;
                    let v = if grid.periodic {
                        v.rem_euclid(c)
                    } else if v < 0 || v >= c {
                        return true;
                    } else {
                        v
                    };
                    j[a] = v as usize;
                    values[i] <= values[grid.flat_index(&j)]
                })
            })
        })
        .collect()
}

/// Solves `G(r) = 0` for `G: R^m -> R^m` from `seed`; returns the root and
/// the last Jacobian.
fn newton(
    seed: &Point,
    m: usize,
    reach: f64,
    system: impl Fn(&Point) -> (DVector<f64>, DMatrix<f64>),
) -> Option<(Point, DMatrix<f64>, f64)> {
    let mut z = *seed;
    for _ in 0..NEWTON_STEPS {
        let (g, jac) = system(&z);
        let res = g.norm();
        if !res.is_finite() {
            return None;
        }
        let step = jac.clone().lu().solve(&(-&g))?;
        let mut r = z.interleaved();
        for a in 0..m {
            r[a] += step[a];
        }
        z = Point::from_interleaved(&r[..m]);
        if (z - *seed).norm() > reach {
            return None;
        }
        if step.norm() < 1e-14 * (1.0 + z.norm()) {
            let (g, jac) = system(&z);
            return Some((z, jac, g.norm()));
        }
    }
    let (g, jac) = system(&z);
    Some((z, jac, g.norm()))
}

fn dedup_points<T: Copy>(model: &ModelManifold, sk: f64, items: Vec<(Point, T)>, tol_gk: f64) -> Vec<(Point, T)> {
    let mut out: Vec<(Point, T)> = Vec::new();
    for (p, t) in items {
        let p = model.reduce(&p);
        let dup = out.iter().any(|(q, _)| {
            model.displacement(q, &p).norm() * sk < tol_gk
        });
        if !dup {
            out.push((p, t));
        }
    }
    out
}

/// A singular Jacobian whose null direction stays critical over `0.05` in
/// `g_k` means Newton landed on a curve rather than a point.
fn on_critical_curve(
    system: &impl Fn(&Point) -> (DVector<f64>, DMatrix<f64>),
    z: &Point,
    jac: &DMatrix<f64>,
    n: usize,
    sk: f64,
) -> bool {
    let svd = jac.clone().svd(false, true);
    let sv = &svd.singular_values;
    let (imin, smin) = sv.iter().enumerate().fold((0, f64::INFINITY), |a, (i, &v)| if v < a.1 { (i, v) } else { a });
    let smax = sv.max();
    if smin > 1e-6 * smax && smax > 0.0 {
        return false;
    }
    let Some(vt) = svd.v_t else { return true };
    let t = 0.05 / sk;
    [-1.0, 1.0].iter().all(|sign| {
        let mut r = z.interleaved();
        for a in 0..2 * n {
            r[a] += sign * t * vt[(imin, a)];
        }
        system(&Point::from_interleaved(&r[..2 * n])).0.norm() < 1e-6
    })
}

/// Common zeros of `s0` and `s1` refined by Newton on the four real equations.
pub fn base_locus(p: &mut PencilData) -> Result<Vec<BasePoint>> {
    let n = p.s0.n();
    if n < 2 {
        return Err(Error::Parameter(
            "not applicable: base locus has real codimension 4 > dimension".into(),
        ));
    }
    let grid = p.grid;
    let model = *p.s0.model();
    let sk = p.s0.frame().sqrt_k();
    let values: Vec<f64> = p
        .cache
        .iter()
        .map(|c| if c.inside { c.s0.norm() + c.s1.norm() } else { f64::INFINITY })
        .collect();
    let threshold = 2.0 * p.params.epsilon;
    let seeds = local_minima(&grid, &values, |i| values[i] <= threshold);
    let (s0, s1) = (&p.s0, &p.s1);
    let system = |z: &Point| {
        let (a, ga) = s0.eval_grad(z);
        let (b, gb) = s1.eval_grad(z);
        let g = DVector::from_vec(vec![a.re, a.im, b.re, b.im]);
        let mut m = DMatrix::zeros(4, 2 * n);
        for l in 0..n {
            for (row, gr) in [ga, gb].iter().enumerate() {
                m[(2 * row, 2 * l)] = gr.dx[l].re;
                m[(2 * row + 1, 2 * l)] = gr.dx[l].im;
                m[(2 * row, 2 * l + 1)] = gr.dy[l].re;
                m[(2 * row + 1, 2 * l + 1)] = gr.dy[l].im;
            }
        }
        (g, m)
    };
    let solved: Vec<Option<(Point, f64)>> = seeds
        .par_iter()
        .map(|&i| {
            let seed = grid.point(i);
            newton(&seed, 2 * n, NEWTON_REACH_GK / sk, system)
                .filter(|(z, _, res)| *res < 1e-10 && model.contains(&model.reduce(z)))
                .map(|(z, _, res)| (z, res))
        })
        .collect();
    let dropped = solved.iter().filter(|s| s.is_none()).count();
    let found: Vec<(Point, f64)> = solved.into_iter().flatten().collect();
    let pts = dedup_points(&model, sk, found, BASE_DEDUP_GK);
    p.dropped.0 = dropped;
    p.base_locus = pts
        .into_iter()
        .map(|(point, residual)| BasePoint { point, residual })
        .collect();
    Ok(p.base_locus.clone())
}

/// Critical points of `F` in `Omega = {|s0| >= chi}` and `Gamma` statistics.
pub fn critical_set(p: &mut PencilData) -> Result<(Vec<CriticalPoint>, GammaStats)> {
    let n = p.s0.n();
    let grid = p.grid;
    let model = *p.s0.model();
    let sk = p.s0.frame().sqrt_k();
    let k = p.s0.frame().kf();
    let chi = p.params.chi;
    let f = Quotient { s0: &p.s0, s1: &p.s1 };
    let h = JET_STEP_GK / sk;

    let data: Vec<(bool, f64, bool)> = p
        .cache
        .iter()
        .map(|c| {
            if !c.inside || c.s0.norm() < chi {
                return (false, f64::INFINITY, false);
            }
            (true, c.holo, c.holo <= c.anti)
        })
        .collect();
    let holo: Vec<f64> = data.iter().map(|d| d.1).collect();
    let seeds = local_minima(&grid, &holo, |i| data[i].0);
    let system = |z: &Point| {
        let g = f.eval_grad(z).1;
        let mut v = DVector::zeros(2 * n);
        for j in 0..n {
            let d = g.holo(j) / sk;
            v[2 * j] = d.re;
            v[2 * j + 1] = d.im;
        }
        let (hol, anti) = second_jet(&f, z, h);
        (v, df_jacobian(&hol, &anti, n) / sk)
    };
    let solved: Vec<Option<(Point, DMatrix<f64>)>> = seeds
        .par_iter()
        .map(|&i| {
            let seed = grid.point(i);
            newton(&seed, 2 * n, NEWTON_REACH_GK / sk, system)
                .filter(|(z, _, res)| {
                    *res < 1e-9 && model.contains(&model.reduce(z)) && p.s0.evaluate(z).norm() >= chi
                })
                .map(|(z, jac, _)| (z, jac))
        })
        .collect();
    let dropped = solved.iter().filter(|s| s.is_none()).count();
    let mut found = Vec::new();
    for (z, jac) in solved.into_iter().flatten() {
        if on_critical_curve(&system, &z, &jac, n, sk) {
            return Err(Error::NonIsolatedCritical(interleaved6(&z)));
        }
        found.push((z, ()));
    }
    let pts = dedup_points(&model, sk, found, CRIT_DEDUP_GK);
    let crit: Vec<CriticalPoint> = pts
        .iter()
        .map(|(q, _)| {
            let rep = morse_report(&f, q, h, 1.0 / k);
            CriticalPoint {
                point: *q,
                value: f.value(q),
                hessian_min_sv: rep.min_sv,
            }
        })
        .collect();

    let mut separation = f64::INFINITY;
    for (a, x) in crit.iter().enumerate() {
        for y in &crit[a + 1..] {
            separation = separation.min(model.displacement(&x.point, &y.point).norm() * sk);
        }
    }
    let omega = data.iter().filter(|d| d.0).count();
    let gamma_idx: Vec<usize> = (0..grid.len()).filter(|&i| data[i].0 && data[i].2).collect();
    let rho0 = gamma_idx
        .par_iter()
        .map(|&i| {
            let z = grid.point(i);
            crit.iter()
                .map(|c| model.displacement(&c.point, &z).norm() * sk)
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| 0.0, f64::max);
    let stats = GammaStats {
        fraction: if omega > 0 { gamma_idx.len() as f64 / omega as f64 } else { 0.0 },
        rho0,
        separation,
    };
    p.dropped.1 = dropped;
    p.crit_set = crit.clone();
    p.gamma_stats = stats;
    Ok((crit, stats))
}

impl PencilData {
    pub fn quotient(&self) -> Quotient<'_> {
        Quotient {
            s0: &self.s0,
            s1: &self.s1,
        }
    }

    /// Morse data of `F` at `q` in `g_k` units.
    pub fn model_v_certificate(&self, q: &Point) -> MorseReport {
        let sk = self.s0.frame().sqrt_k();
        morse_report(&self.quotient(), q, JET_STEP_GK / sk, 1.0 / self.s0.frame().kf())
    }

    /// Least singular value of `d(dF) / k` over grid points of
    /// `Z = {|s0| >= epsilon}` where `|dF| / sqrt k <= epsilon`.
    pub fn df_transversality(&self) -> f64 {
        let eps = self.params.epsilon;
        let sk = self.s0.frame().sqrt_k();
        let k = self.s0.frame().kf();
        let n = self.s0.model().n;
        let f = self.quotient();
        let h = JET_STEP_GK / sk;
        (0..self.grid.len())
            .into_par_iter()
            .filter(|&i| {
                let c = &self.cache[i];
                c.inside && c.s0.norm() >= eps && c.holo <= eps
            })
            .map(|i| {
                let (hol, anti) = second_jet(&f, &self.grid.point(i), h);
                singular_values_real(&(df_jacobian(&hol, &anti, n) / k))[0]
            })
            .reduce(|| f64::INFINITY, f64::min)
    }

    /// The four numbered certificates.
    pub fn items(&self) -> Vec<ItemCheck> {
        let eta = self.params.eta;
        let df = self.df_transversality();
        vec![
            ItemCheck {
                item: 1,
                name: "s0 transverse".into(),
                measured: self.s0_eta,
                threshold: eta,
                pass: self.s0_eta >= eta,
            },
            ItemCheck {
                item: 2,
                name: "pair transverse".into(),
                measured: self.pair_sigma_min,
                threshold: eta,
                pass: self.pair_sigma_min >= eta,
            },
            ItemCheck {
                item: 3,
                name: "dF transverse on Z".into(),
                measured: df,
                threshold: eta,
                pass: df >= eta,
            },
            ItemCheck {
                item: 4,
                name: "reality".into(),
                measured: self.reality_sup,
                threshold: 1e-9,
                pass: self.reality_sup < 1e-9,
            },
        ]
    }
}

fn df_transversality_on(
    s0: &SectionField,
    s1: &SectionField,
    grid: &GridSpec,
    epsilon: f64,
    ball: Option<(Point, f64)>,
) -> f64 {
    let model = *s0.model();
    let n = model.n;
    let sk = s0.frame().sqrt_k();
    let k = s0.frame().kf();
    let f = Quotient { s0, s1 };
    let h = JET_STEP_GK / sk;
    (0..grid.len())
        .into_par_iter()
        .filter_map(|i| {
            let z = grid.point(i);
            if let Some((x, r)) = ball {
                if (z - x).norm() * sk > r {
                    return None;
                }
            } else if !model.contains(&z) {
                return None;
            }
            if s0.evaluate(&z).norm() < epsilon {
                return None;
            }
            let g = f.eval_grad(&z).1;
            let small = (0..n).map(|j| g.holo(j).norm_sqr()).sum::<f64>().sqrt() / sk <= epsilon;
            if !small {
                return None;
            }
            let (hol, anti) = second_jet(&f, &z, h);
            Some(singular_values_real(&(df_jacobian(&hol, &anti, n) / k))[0])
        })
        .reduce(|| f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DfTrace {
    pub perturbed: Vec<(usize, f64)>,
    /// Balls skipped because `|zeta|` fell below the floor.
    pub skipped: Vec<usize>,
    pub before: f64,
    pub after: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DfParams {
    pub target: f64,
    pub sard: SardParams,
    pub separation: f64,
}

impl Default for DfParams {
    fn default() -> Self {
        Self {
            target: 0.05,
            sard: SardParams::with_default_p(0.09).expect("valid"),
            separation: 3.0,
        }
    }
}

/// Symmetrized `u_r sigma_x` with the given Gaussian width and the
/// concentrated cutoff.
fn coordinate_hat(model: &ModelManifold, frame: &ScaledFrame, x: &Point, r: usize, width: f64) -> SectionField {
    let mut e = [0u8; MAX_DIM];
    e[r] = 1;
    let cutoff = frame.kf().powf(1.0 / 6.0);
    let bump = Bump::new(
        *x,
        Complex64::new(1.0, 0.0),
        BumpModel::monomial(Complex64::new(1.0, 0.0), e),
        width,
        cutoff,
    );
    SectionField::new(*model, *frame, vec![bump]).symmetrize()
}

/// Perturbs `s1` by real multiples of `u_r sigma_x` until `dF` is transverse
/// on `Z`.
pub fn transversalize_df(p: &PencilData, params: &DfParams) -> Result<(SectionField, DfTrace)> {
    let model = *p.s0.model();
    let frame = *p.s0.frame();
    let n = model.n;
    let sk = frame.sqrt_k();
    let eps = p.params.epsilon;
    let before = p.df_transversality();
    let mut trace = DfTrace {
        before,
        after: before,
        ..Default::default()
    };
    if before >= params.target {
        return Ok((p.s1.clone(), trace));
    }
    let sg = sample_grid(n, params.sard.sigma);
    if sg.len() > crate::constructions::MAX_SARD_SAMPLES {
        return Err(Error::GridTooCoarse {
            actual: sg.cell_diameter_g(),
            limit: params.sard.sigma / 4.0,
            hint: sg.count,
        });
    }
    let net = model.colored_ball_net(&frame, params.separation)?;
    // match the width of s0 so that u_r sigma_x / s0 stays close to holomorphic
    let width = match p.s0.bumps() {
        [] => CONCENTRATED_WIDTH,
        bs => bs.iter().map(|b| b.width).sum::<f64>() / bs.len() as f64,
    };
    let mut s1 = p.s1.clone();
    let mut uid = 0usize;
    for color in &net.colors {
        for r in 0..n {
            let snapshot = s1.clone();
            let mut adds: Vec<SectionField> = Vec::new();
            for unit in color {
                let id = uid;
                uid += 1;
                let x = unit.center();
                let local = GridSpec::local_ball(n, &x, 1.0, &frame, 0.1);
                if df_transversality_on(&p.s0, &snapshot, &local, eps, Some((x, 1.0))) >= params.target {
                    continue;
                }
                let hat = coordinate_hat(&model, &frame, &x, r, width);
                let zeta_at = |z: &Point| -> Complex64 {
                    Quotient { s0: &p.s0, s1: &hat }.eval_grad(z).1.holo(r) / sk
                };
                let zmin = local
                    .points()
                    .filter(|z| (*z - x).norm() * sk <= 1.1)
                    .map(|z| zeta_at(&z).norm())
                    .fold(f64::INFINITY, f64::min);
                if !(zmin >= ZETA_FLOOR) {
                    trace.skipped.push(id);
                    continue;
                }
                let fq = Quotient { s0: &p.s0, s1: &snapshot };
                let raw = |u: &Point| -> Complex64 {
                    let z = x + u.scale(1.0 / sk);
                    fq.eval_grad(&z).1.holo(r) / sk / zeta_at(&z)
                };
                let scale = local
                    .points()
                    .filter(|z| (*z - x).norm() * sk <= 1.1)
                    .map(|z| raw(&(z - x).scale(sk)).norm())
                    .fold(0.0, f64::max)
                    .max(1.0);
                let hu = 1e-5;
                let fmap = FnMap {
                    n,
                    f: |u: &Point| {
                        let v = raw(u) / scale;
                        let mut g = Gradient::ZERO;
                        for l in 0..n {
                            for part in 0..2 {
                                let mut e = [0.0; 2 * MAX_DIM];
                                e[2 * l + part] = hu;
                                let e = Point::from_interleaved(&e);
                                let d = (raw(&(*u + e)) - raw(&(*u - e))) / (2.0 * hu * scale);
                                if part == 0 {
                                    g.dx[l] = d;
                                } else {
                                    g.dy[l] = d;
                                }
                            }
                        }
                        (v, g)
                    },
                };
                let pick = pick_real_w(&fmap, &params.sard).map_err(|e| Error::BallPerturbation {
                    ball: id,
                    source: Box::new(e),
                })?;
                let w = -pick.w * scale;
                trace.perturbed.push((id, w));
                adds.push(hat.scaled(Complex64::new(w, 0.0)));
            }
            for a in adds {
                s1 = s1.add(&a)?;
            }
        }
    }
    trace.after = df_transversality_on(&p.s0, &s1, &p.grid, eps, None);
    Ok((s1, trace))
}

/// Symmetric pair on the torus: unit bumps for `s0` and quadric bumps for
/// `s1` over the full lattice, with real coefficients in `[0.8, 1.2]` shared
/// by conjugate sites.
pub fn lattice_pair(model: &ModelManifold, frame: &ScaledFrame, mesh: f64, seed: u64) -> Result<(SectionField, SectionField)> {
    let sites = crate::constructions::full_lattice_sites(model, frame, mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coeffs: Vec<Option<(f64, f64)>> = vec![None; sites.len()];
    let mut b0 = Vec::with_capacity(sites.len());
    let mut b1 = Vec::with_capacity(sites.len());
    for (i, x) in sites.iter().enumerate() {
        let (a, b) = match coeffs[i] {
            Some(c) => c,
            None => {
                let c = (rng.gen_range(0.8..=1.2), rng.gen_range(0.8..=1.2));
                let cx = model.reduce(&model.conj(x));
                if let Some(j) = sites
                    .iter()
                    .position(|y| model.displacement(y, &cx).norm() < 1e-12)
                {
                    coeffs[j] = Some(c);
                }
                c
            }
        };
        b0.push(Bump::new(*x, Complex64::new(a, 0.0), BumpModel::Unit, TAU_WIDTH, PAIR_CUTOFF_GK));
        b1.push(Bump::new(*x, Complex64::new(b, 0.0), BumpModel::Quadric, TAU_WIDTH, PAIR_CUTOFF_GK));
    }
    Ok((
        SectionField::new(*model, *frame, b0),
        SectionField::new(*model, *frame, b1),
    ))
}

/// Full certification: pair checks, base locus (n >= 2), critical set.
pub fn certify(s0: &SectionField, s1: &SectionField, params: &PencilParams) -> Result<PencilData> {
    let mut p = make_pencil(s0, s1, params)?;
    if p.s0.n() >= 2 {
        base_locus(&mut p)?;
    }
    critical_set(&mut p)?;
    Ok(p)
}
