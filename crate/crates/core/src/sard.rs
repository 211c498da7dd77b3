//! Quantitative Sard: forbidden values of a sampled function on `B(0, 1.1)`
//! and the choice of a real constant `w` (or a path `w_t`) making `f - w`
//! sigma-transverse.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::ComplexMap;
use crate::grid::GridSpec;
use crate::model::ScaledFrame;
use crate::point::{Gradient, Point};

/// Upper end of the admissible perturbation sizes.
pub const DELTA_0: f64 = 0.1;
/// Radius of the sampled ball.
pub const SAMPLE_RADIUS: f64 = 1.1;
/// Side of the square `w`-grid used by the path search.
pub const PATH_W_GRID: usize = 21;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SardParams {
    pub delta: f64,
    pub p: f64,
    pub sigma: f64,
}

impl SardParams {
    pub fn new(delta: f64, p: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < DELTA_0) {
            return Err(Error::Parameter(format!("delta = {delta} outside (0, {DELTA_0})")));
        }
        if !(p > 0.0) {
            return Err(Error::Parameter(format!("p = {p} must be positive")));
        }
        let sigma = delta * (1.0 / delta).ln().powf(-p);
        if sigma >= delta {
            return Err(Error::Parameter(format!("sigma = {sigma} not below delta = {delta}")));
        }
        Ok(Self { delta, p, sigma })
    }

    pub fn with_default_p(delta: f64) -> Result<Self> {
        Self::new(delta, 2.0)
    }
}

/// Forbidden real values as sorted disjoint closed intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForbiddenTrace {
    pub intervals: Vec<[f64; 2]>,
    pub total_length: f64,
    /// Cell diameter of the sampling grid.
    pub resolution: f64,
    /// Intervals are clipped to `[-window, window]`.
    pub window: f64,
}

impl ForbiddenTrace {
    pub fn contains(&self, w: f64) -> bool {
        self.intervals.iter().any(|[a, b]| *a <= w && w <= *b)
    }

    /// Distance from `w` to the nearest interval (infinite when empty).
    pub fn clearance(&self, w: f64) -> f64 {
        self.intervals
            .iter()
            .map(|[a, b]| {
                if w < *a {
                    a - w
                } else if w > *b {
                    w - b
                } else {
                    0.0
                }
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Default sampling grid for scale `sigma`: cell diameter `sigma / 4` on the
/// box around `B(0, 1.1)`.
pub fn sample_grid(n: usize, sigma: f64) -> GridSpec {
    let unit = ScaledFrame { k: 1 };
    GridSpec::local_ball(n, &Point::ORIGIN, SAMPLE_RADIUS, &unit, sigma / 4.0)
}

/// Samples of a map on the grid points inside `B(0, 1.1)` with Lipschitz data.
#[derive(Clone, Debug)]
pub struct Samples {
    pub grid: GridSpec,
    pub points: Vec<Point>,
    pub values: Vec<(Complex64, Gradient)>,
    /// Every point of the ball is within `reach` of a sample.
    pub reach: f64,
    /// Upper bound for the Lipschitz constant of the real Jacobian.
    pub hessian: f64,
}

impl Samples {
    pub fn collect(f: &dyn ComplexMap, grid: &GridSpec) -> Self {
        let n = f.dim();
        let dims = grid.dims();
        let inside = |z: &Point| z.norm() <= SAMPLE_RADIUS + grid.cell_diameter_g();
        let all: Vec<(Complex64, Gradient)> = (0..grid.len())
            .into_par_iter()
            .map(|i| f.eval_grad(&grid.point(i)))
            .collect();
        let hessian = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let idx = grid.multi_index(i);
                let mut worst: f64 = 0.0;
                if !inside(&grid.point_at(&idx)) {
                    return worst;
                }
                for a in 0..dims {
                    if let Some(j) = grid.step_index(&idx, a) {
                        if !inside(&grid.point_at(&j)) {
                            continue;
                        }
                        let jf = grid.flat_index(&j);
                        let d = jacobian_distance(&all[i].1, &all[jf].1, n);
                        worst = worst.max(d / grid.step);
                    }
                }
                worst
            })
            .reduce(|| 0.0, f64::max);
        let mut points = Vec::new();
        let mut values = Vec::new();
        for (i, v) in all.into_iter().enumerate() {
            let z = grid.point(i);
            if inside(&z) {
                points.push(z);
                values.push(v);
            }
        }
        Self {
            grid: *grid,
            points,
            values,
            reach: 0.5 * grid.cell_diameter_g(),
            hessian: 1.25 * (dims as f64).sqrt() * hessian,
        }
    }
}

/// Frobenius distance between real Jacobians.
fn jacobian_distance(a: &Gradient, b: &Gradient, n: usize) -> f64 {
    (0..n)
        .map(|j| (a.dx[j] - b.dx[j]).norm_sqr() + (a.dy[j] - b.dy[j]).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

fn frobenius(g: &Gradient, n: usize) -> f64 {
    (0..n)
        .map(|j| g.dx[j].norm_sqr() + g.dy[j].norm_sqr())
        .sum::<f64>()
        .sqrt()
}

fn check_resolution(grid: &GridSpec, sigma: f64) -> Result<()> {
    let actual = grid.cell_diameter_g();
    let limit = sigma / 4.0;
    if actual > limit * (1.0 + 1e-12) {
        let extent = grid.step * grid.count as f64;
        return Err(Error::GridTooCoarse {
            actual,
            limit,
            hint: (extent * (grid.dims() as f64).sqrt() / limit).ceil() as usize,
        });
    }
    Ok(())
}

/// Merges disks `(center, radius)` intersected with the real line.
fn real_trace(disks: impl Iterator<Item = (Complex64, f64)>, window: f64, resolution: f64) -> ForbiddenTrace {
    let mut raw: Vec<[f64; 2]> = disks
        .filter_map(|(c, r)| {
            let h2 = r * r - c.im * c.im;
            if h2 < 0.0 {
                return None;
            }
            let h = h2.sqrt();
            let (a, b) = ((c.re - h).max(-window), (c.re + h).min(window));
            (a <= b).then_some([a, b])
        })
        .collect();
    raw.sort_by(|x, y| x[0].total_cmp(&y[0]));
    let mut intervals: Vec<[f64; 2]> = Vec::new();
    for iv in raw {
        match intervals.last_mut() {
            Some(last) if iv[0] <= last[1] => last[1] = last[1].max(iv[1]),
            _ => intervals.push(iv),
        }
    }
    let total_length = intervals.iter().map(|[a, b]| b - a).sum();
    ForbiddenTrace {
        intervals,
        total_length,
        resolution,
        window,
    }
}

/// Disks around `f(Y)` where `Y = {|df| <= sigma}`, enlarged so that every
/// point of the ball (not only samples) is covered.
fn critical_disks<'a>(s: &'a Samples, sigma: f64) -> impl Iterator<Item = (Complex64, f64)> + 'a {
    let n = s.grid.n;
    let r = s.reach;
    s.values.iter().filter_map(move |(v, g)| {
        if g.norm() > sigma + s.hessian * r {
            return None;
        }
        let lip = frobenius(g, n) + s.hessian * r;
        Some((*v, sigma + lip * r))
    })
}

/// Forbidden real values for `f` at scale `sigma`, clipped to `[-window, window]`.
pub fn forbidden_trace(f: &dyn ComplexMap, grid: &GridSpec, sigma: f64, window: f64) -> Result<ForbiddenTrace> {
    check_resolution(grid, sigma)?;
    let s = Samples::collect(f, grid);
    Ok(forbidden_trace_from(&s, sigma, window))
}

pub fn forbidden_trace_from(s: &Samples, sigma: f64, window: f64) -> ForbiddenTrace {
    real_trace(critical_disks(s, sigma), window, s.grid.cell_diameter_g())
}

/// Outcome of a grid transversality check of `f - w` (or `f - w - conj(w) h`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransverseCheck {
    pub ok: bool,
    /// Worst `max(|g| - L1 r, sigma_min(dg) - L2 r) - sigma` over samples in the unit ball.
    pub margin: f64,
    pub witness: Point,
}

/// Certified check that `g = f - w - conj(w) h` is sigma-transverse on the unit ball.
fn check_affine(f: &Samples, h: Option<&Samples>, w: Complex64, sigma: f64) -> TransverseCheck {
    let n = f.grid.n;
    let r = f.reach;
    let (l2, hess_h) = (f.hessian, h.map_or(0.0, |h| h.hessian));
    let l2 = l2 + w.norm() * hess_h;
    let eval = |i: usize| -> (Complex64, Gradient) {
        let (fv, fg) = f.values[i];
        match h {
            Some(h) => {
                let (hv, hg) = h.values[i];
                (fv - w - w.conj() * hv, fg + hg * (-w.conj()))
            }
            None => (fv - w, fg),
        }
    };
    let (margin, witness) = (0..f.points.len())
        .into_par_iter()
        .filter(|&i| f.points[i].norm() <= 1.0 + r)
        .map(|i| {
            let (v, g) = eval(i);
            let lip = frobenius(&g, n) + l2 * r;
            let m = (v.norm() - lip * r).max(g.norm() - l2 * r) - sigma;
            (m, i)
        })
        .reduce(
            || (f64::INFINITY, usize::MAX),
            |a, b| match a.0.total_cmp(&b.0) {
                Ordering::Less => a,
                Ordering::Greater => b,
                Ordering::Equal => (a.0, a.1.min(b.1)),
            },
        );
    let witness = if witness == usize::MAX { Point::ORIGIN } else { f.points[witness] };
    TransverseCheck {
        ok: margin > 0.0,
        margin,
        witness,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealPick {
    pub w: f64,
    pub clearance: f64,
    pub trace: ForbiddenTrace,
    pub check: TransverseCheck,
}

/// Real `|w| <= delta` off the forbidden trace, maximizing the distance to it.
pub fn pick_real_w(f: &dyn ComplexMap, params: &SardParams) -> Result<RealPick> {
    let grid = sample_grid(f.dim(), params.sigma);
    pick_real_w_on(f, &grid, params)
}

pub fn pick_real_w_on(f: &dyn ComplexMap, grid: &GridSpec, params: &SardParams) -> Result<RealPick> {
    check_resolution(grid, params.sigma)?;
    let s = Samples::collect(f, grid);
    let delta = params.delta;
    let trace = forbidden_trace_from(&s, params.sigma, delta);
    let (w, clearance) = best_gap(&trace, delta).ok_or_else(|| Error::NoAdmissibleW {
        delta,
        trace: trace.clone(),
    })?;
    let check = check_affine(&s, None, Complex64::new(w, 0.0), params.sigma);
    if !check.ok {
        return Err(Error::Certificate(format!(
            "f - w not sigma-transverse at {:?} (margin {:.3e})",
            check.witness.interleaved(),
            check.margin
        )));
    }
    Ok(RealPick {
        w,
        clearance,
        trace,
        check,
    })
}

/// Point of `[-delta, delta]` farthest from the trace.
fn best_gap(trace: &ForbiddenTrace, delta: f64) -> Option<(f64, f64)> {
    if trace.intervals.is_empty() {
        return Some((0.0, f64::INFINITY));
    }
    let mut best: Option<(f64, f64)> = None;
    let mut consider = |w: f64, c: f64| {
        if c > 0.0 && best.is_none_or(|(_, b)| c > b) {
            best = Some((w, c));
        }
    };
    let ivs = &trace.intervals;
    consider(-delta, ivs[0][0] + delta);
    for pair in ivs.windows(2) {
        let (a, b) = (pair[0][1], pair[1][0]);
        consider(0.5 * (a + b), 0.5 * (b - a));
    }
    let last = ivs[ivs.len() - 1][1];
    consider(delta, delta - last);
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathPick {
    pub t: Vec<f64>,
    pub w: Vec<Complex64>,
    pub margins: Vec<f64>,
    /// Largest `|f_{i+1} - f_i|` over the samples.
    pub modulus: f64,
}

/// Path `w_t` in the `delta`-disk with `f_t - w_t - conj(w_t) h_t`
/// sigma-transverse at every slice, found by a shortest-path search over
/// the (slice, `w`-grid) admissibility graph.
pub fn pick_path_w(
    f: &[&dyn ComplexMap],
    h: &[&dyn ComplexMap],
    params: &SardParams,
) -> Result<PathPick> {
    if f.is_empty() || f.len() != h.len() {
        return Err(Error::Parameter("f_t and h_t need the same nonzero number of slices".into()));
    }
    let n = f[0].dim();
    let grid = sample_grid(n, params.sigma);
    let slices = f.len();
    let ts: Vec<f64> = (0..slices)
        .map(|i| if slices == 1 { 0.0 } else { i as f64 / (slices - 1) as f64 })
        .collect();
    let fs: Vec<Samples> = f.iter().map(|m| Samples::collect(*m, &grid)).collect();
    let hs: Vec<Samples> = h.iter().map(|m| Samples::collect(*m, &grid)).collect();
    let modulus = fs
        .windows(2)
        .map(|p| {
            p[0].values
                .iter()
                .zip(&p[1].values)
                .map(|(a, b)| (a.0 - b.0).norm())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);

    let m = PATH_W_GRID;
    let delta = params.delta;
    let spacing = 2.0 * delta / (m - 1) as f64;
    let wgrid: Vec<Option<Complex64>> = (0..m * m)
        .map(|i| {
            let w = Complex64::new(-delta + spacing * (i % m) as f64, -delta + spacing * (i / m) as f64);
            (w.norm() <= delta * (1.0 + 1e-12)).then_some(w)
        })
        .collect();
    // per-slice margins
    let margins: Vec<Vec<f64>> = (0..slices)
        .map(|t| {
            wgrid
                .par_iter()
                .map(|w| match w {
                    Some(w) => check_affine(&fs[t], Some(&hs[t]), *w, params.sigma).margin,
                    None => f64::NEG_INFINITY,
                })
                .collect()
        })
        .collect();

    // Dijkstra over layers; moves to w-grid neighbours within one step.
    #[derive(PartialEq)]
    struct Node(f64, usize, usize);
    impl Eq for Node {}
    impl PartialOrd for Node {
        fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for Node {
        fn cmp(&self, o: &Self) -> Ordering {
            o.0.total_cmp(&self.0).then(o.1.cmp(&self.1)).then(o.2.cmp(&self.2))
        }
    }
    let node_cost = |t: usize, i: usize| 1e-3 * (delta - margins[t][i].min(delta));
    let mut dist = vec![vec![f64::INFINITY; m * m]; slices];
    let mut prev = vec![vec![usize::MAX; m * m]; slices];
    let mut heap = BinaryHeap::new();
    for i in 0..m * m {
        if margins[0][i] > 0.0 {
            dist[0][i] = node_cost(0, i);
            heap.push(Node(dist[0][i], 0, i));
        }
    }
    let mut deepest = if heap.is_empty() { None } else { Some(0) };
    while let Some(Node(d, t, i)) = heap.pop() {
        if d > dist[t][i] || t + 1 == slices {
            continue;
        }
        let (x, y) = ((i % m) as i64, (i / m) as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= m as i64 || ny >= m as i64 {
                    continue;
                }
                let j = (ny as usize) * m + nx as usize;
                if margins[t + 1][j] <= 0.0 {
                    continue;
                }
                let step = spacing * ((dx * dx + dy * dy) as f64).sqrt();
                let nd = d + step + node_cost(t + 1, j);
                if nd < dist[t + 1][j] {
                    dist[t + 1][j] = nd;
                    prev[t + 1][j] = i;
                    deepest = Some(deepest.map_or(t + 1, |b: usize| b.max(t + 1)));
                    heap.push(Node(nd, t + 1, j));
                }
            }
        }
    }
    let last = slices - 1;
    let end = (0..m * m)
        .filter(|&i| dist[last][i].is_finite())
        .min_by(|&a, &b| dist[last][a].total_cmp(&dist[last][b]));
    let Some(mut cur) = end else {
        let stuck = deepest.map_or(0, |d| d + 1).min(last);
        return Err(Error::NoAdmissiblePath {
            bottleneck_t: ts[stuck],
        });
    };
    let mut idx = vec![0usize; slices];
    for t in (0..slices).rev() {
        idx[t] = cur;
        if t > 0 {
            cur = prev[t][cur];
        }
    }
    Ok(PathPick {
        t: ts,
        w: idx.iter().map(|&i| wgrid[i].unwrap()).collect(),
        margins: idx.iter().enumerate().map(|(t, &i)| margins[t][i]).collect(),
        modulus,
    })
}

/// A map given by closures for value and gradient.
pub struct FnMap<F>
where
    F: Fn(&Point) -> (Complex64, Gradient) + Sync,
{
    pub n: usize,
    pub f: F,
}

impl<F> ComplexMap for FnMap<F>
where
    F: Fn(&Point) -> (Complex64, Gradient) + Sync,
{
    fn dim(&self) -> usize {
        self.n
    }

    fn eval_grad(&self, z: &Point) -> (Complex64, Gradient) {
        (self.f)(z)
    }
}

/// Holomorphic polynomial in `z_1` with the given coefficients (lowest first).
pub fn poly_z1(coeffs: Vec<Complex64>) -> FnMap<impl Fn(&Point) -> (Complex64, Gradient) + Sync> {
    FnMap {
        n: 1,
        f: move |z: &Point| {
            let x = z.0[0];
            let mut v = Complex64::new(0.0, 0.0);
            let mut d = Complex64::new(0.0, 0.0);
            for c in coeffs.iter().rev() {
                d = d * x + v;
                v = v * x + c;
            }
            (v, Gradient::holo_only(&[d]))
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn sigma_formula_and_bounds() {
        let p = SardParams::new(0.05, 2.0).unwrap();
        let expected = 0.05 / (20f64.ln() * 20f64.ln());
        assert!((p.sigma - expected).abs() < 1e-15);
        assert!(SardParams::new(0.2, 2.0).is_err());
        assert!(SardParams::new(0.0, 2.0).is_err());
    }

    #[test]
    fn identity_has_empty_trace() {
        let sigma = 0.02;
        let f = poly_z1(vec![c(0.0), c(1.0)]);
        let t = forbidden_trace(&f, &sample_grid(1, sigma), sigma, 0.1).unwrap();
        assert!(t.intervals.is_empty());
    }

    #[test]
    fn constant_trace_is_sigma_interval() {
        let sigma = 0.02;
        let f = poly_z1(vec![c(0.3)]);
        let t = forbidden_trace(&f, &sample_grid(1, sigma), sigma, 1.0).unwrap();
        assert_eq!(t.intervals.len(), 1);
        assert!((t.intervals[0][0] - 0.28).abs() < 1e-12);
        assert!((t.intervals[0][1] - 0.32).abs() < 1e-12);
    }

    #[test]
    fn coarse_grid_refused() {
        let f = poly_z1(vec![c(0.3)]);
        let g = sample_grid(1, 0.1);
        assert!(matches!(forbidden_trace(&f, &g, 0.01, 1.0), Err(Error::GridTooCoarse { .. })));
    }

    #[test]
    fn best_gap_prefers_largest_clearance() {
        let t = ForbiddenTrace {
            intervals: vec![[-0.02, 0.02]],
            total_length: 0.04,
            resolution: 0.0,
            window: 0.1,
        };
        let (w, c) = best_gap(&t, 0.1).unwrap();
        assert!((w.abs() - 0.1).abs() < 1e-15 && (c - 0.08).abs() < 1e-15);
    }
}
