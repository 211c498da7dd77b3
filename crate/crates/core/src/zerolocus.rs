//! Real zero loci on the real locus: sign-change marching, component
//! inventory with packing data, winding-number zero counts (n = 1) and the
//! per-cell zero-measure statistic.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{ComplexMap, SectionField};
use crate::grid::{GridLayout, GridSpec};
use crate::model::{ModelManifold, ScaledFrame};
use crate::point::{Point, MAX_DIM};
use crate::unionfind::UnionFind;

/// Grid vertices with `|s|` below this times the variation of `s` across a
/// cell are treated as degenerate.
pub const VERTEX_TOLERANCE: f64 = 1e-12;
/// Jittered re-runs before giving up on a degenerate vertex.
pub const JITTER_ATTEMPTS: usize = 6;
/// Imaginary part tolerated on the real locus, relative to `max(1, |s|)`.
pub const REALITY_TOLERANCE: f64 = 1e-9;
/// Largest admissible real-grid cell in `g_k` units.
pub const MAX_REAL_CELL_GK: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub id: usize,
    /// Sign-change edges as `(vertex, axis)` pairs.
    pub edges: Vec<(usize, usize)>,
    /// Interpolated zero crossings (g coordinates, real parts).
    pub crossings: Vec<[f64; MAX_DIM]>,
    /// `g_k` inradius proxy: half the distance to the nearest other component.
    pub inradius_gk: f64,
    pub bbox: [[f64; MAX_DIM]; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub component: usize,
    pub a: [f64; MAX_DIM],
    pub b: [f64; MAX_DIM],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentInventory {
    pub count: usize,
    pub components: Vec<Component>,
    /// Marching segments (faces of the real grid), for plotting.
    pub segments: Vec<Segment>,
    pub grid: GridSpec,
    /// Jittered re-runs needed to avoid degenerate vertices.
    pub jitter_attempts: usize,
}

fn jitter_fractions(attempt: usize) -> [f64; 2 * MAX_DIM] {
    // low-discrepancy offsets, deterministic
    let g = 0.618_033_988_749_894_9_f64;
    std::array::from_fn(|a| ((attempt * (2 * MAX_DIM) + a + 1) as f64 * g).fract() * 0.5 - 0.25)
}

/// Axis direction of a grid in interleaved coordinates.
fn axis_slot(grid: &GridSpec, axis: usize) -> usize {
    match grid.layout {
        GridLayout::Ambient => axis,
        GridLayout::Real => 2 * axis,
    }
}

pub fn real_components(s: &SectionField, grid: &GridSpec) -> Result<ComponentInventory> {
    if grid.layout != GridLayout::Real || grid.n != s.n() {
        return Err(Error::Parameter("real_components needs a real-locus grid of matching dimension".into()));
    }
    grid.require_cell_gk(MAX_REAL_CELL_GK)?;
    let mut worst = 0.0;
    for attempt in 0..=JITTER_ATTEMPTS {
        let g = if attempt == 0 {
            *grid
        } else {
            grid.jittered(&jitter_fractions(attempt))
        };
        let samples: Vec<(Complex64, f64)> = (0..g.len())
            .into_par_iter()
            .map(|i| {
                let (v, gr) = s.eval_grad(&g.point(i));
                (v, gr.norm() * g.step)
            })
            .collect();
        let inside: Vec<bool> = (0..g.len()).map(|i| s.model().contains(&g.point(i))).collect();
        for (v, _) in &samples {
            if v.im.abs() > REALITY_TOLERANCE * v.norm().max(1.0) {
                return Err(Error::NotSymmetric(v.im.abs()));
            }
        }
        // a vertex is degenerate when a zero could sit on it: |s| tiny
        // against the variation of s across one cell
        let degenerate = samples
            .iter()
            .zip(&inside)
            .filter(|&(_, &ins)| ins)
            .map(|(x, _)| x)
            .filter(|(v, var)| v.re == 0.0 || v.re.abs() < VERTEX_TOLERANCE * var)
            .map(|(v, _)| v.re.abs())
            .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.min(x))));
        if let Some(smallest) = degenerate {
            worst = smallest;
            continue;
        }
        let values: Vec<Complex64> = samples.iter().map(|x| x.0).collect();
        let re: Vec<f64> = values.iter().map(|v| v.re).collect();
        let mut inv = march(s.model(), &g, &re);
        inv.jitter_attempts = attempt;
        return Ok(inv);
    }
    Err(Error::DegenerateVertex {
        value: worst,
        attempts: JITTER_ATTEMPTS,
    })
}

/// Components of `{v = 0}` from vertex values on a real grid.
pub fn march(model: &ModelManifold, grid: &GridSpec, v: &[f64]) -> ComponentInventory {
    let dims = grid.dims();
    let len = grid.len();
    let node = |vertex: usize, axis: usize| vertex * dims + axis;
    let neighbor = |idx: &[usize; 2 * MAX_DIM], axis: usize| grid.step_index(idx, axis).map(|j| grid.flat_index(&j));
    let crossing = |i: usize, j: usize| (v[i] > 0.0) != (v[j] > 0.0);

    let mut uf = UnionFind::new(len * dims);
    let mut is_node = vec![false; len * dims];
    for i in 0..len {
        let idx = grid.multi_index(i);
        for a in 0..dims {
            if let Some(j) = neighbor(&idx, a) {
                if crossing(i, j) {
                    is_node[node(i, a)] = true;
                }
            }
        }
    }
    let position = |i: usize, a: usize| -> Point {
        let j = neighbor(&grid.multi_index(i), a).unwrap();
        let t = v[i] / (v[i] - v[j]);
        let mut p = grid.point(i).interleaved();
        p[axis_slot(grid, a)] += t * grid.step;
        model.reduce(&Point::from_interleaved(&p))
    };

    let mut segs: Vec<(usize, usize)> = Vec::new();
    for i in 0..len {
        let idx = grid.multi_index(i);
        for a in 0..dims {
            for b in a + 1..dims {
                let (Some(i10), Some(i01)) = (neighbor(&idx, a), neighbor(&idx, b)) else {
                    continue;
                };
                let Some(i11) = neighbor(&grid.multi_index(i10), b) else {
                    continue;
                };
                let bottom = node(i, a);
                let top = node(i01, a);
                let left = node(i, b);
                let right = node(i10, b);
                let present: Vec<usize> = [bottom, top, left, right]
                    .into_iter()
                    .filter(|&e| is_node[e])
                    .collect();
                match present.len() {
                    2 => segs.push((present[0], present[1])),
                    4 => {
                        let (v00, v10, v01, v11) = (v[i], v[i10], v[i01], v[i11]);
                        let den = v00 + v11 - v10 - v01;
                        let center = if den != 0.0 {
                            (v00 * v11 - v10 * v01) / den
                        } else {
                            0.25 * (v00 + v10 + v01 + v11)
                        };
                        if (center > 0.0) == (v00 > 0.0) {
                            // the v00-v11 diagonal is connected: cut off v10 and v01
                            segs.push((bottom, right));
                            segs.push((top, left));
                        } else {
                            segs.push((bottom, left));
                            segs.push((top, right));
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    for &(x, y) in &segs {
        uf.union(x, y);
    }

    let mut root_to_comp: std::collections::BTreeMap<usize, usize> = Default::default();
    let mut components: Vec<Component> = Vec::new();
    for e in 0..len * dims {
        if !is_node[e] {
            continue;
        }
        let r = uf.find(e);
        let id = *root_to_comp.entry(r).or_insert_with(|| {
            components.push(Component {
                id: components.len(),
                edges: Vec::new(),
                crossings: Vec::new(),
                inradius_gk: f64::INFINITY,
                bbox: [[f64::INFINITY; MAX_DIM], [f64::NEG_INFINITY; MAX_DIM]],
            });
            components.len() - 1
        });
        let (vi, a) = (e / dims, e % dims);
        let p = position(vi, a);
        let mut x = [0.0; MAX_DIM];
        for (j, c) in x.iter_mut().enumerate().take(grid.n) {
            *c = p.0[j].re;
        }
        let comp = &mut components[id];
        comp.edges.push((vi, a));
        comp.crossings.push(x);
        for j in 0..grid.n {
            comp.bbox[0][j] = comp.bbox[0][j].min(x[j]);
            comp.bbox[1][j] = comp.bbox[1][j].max(x[j]);
        }
    }

    let segments: Vec<Segment> = segs
        .iter()
        .map(|&(x, y)| {
            let comp = root_to_comp[&uf.find(x)];
            let (px, py) = (position(x / dims, x % dims), position(y / dims, y % dims));
            Segment {
                component: comp,
                a: px.0.map(|c| c.re),
                b: py.0.map(|c| c.re),
            }
        })
        .collect();

    fill_inradius(model, grid, &mut components);
    ComponentInventory {
        count: components.len(),
        components,
        segments,
        grid: *grid,
        jitter_attempts: 0,
    }
}

fn fill_inradius(model: &ModelManifold, grid: &GridSpec, components: &mut [Component]) {
    let sk = grid.sqrt_k;
    let cap = match model.kind {
        crate::model::ModelKind::Torus => 0.5,
        crate::model::ModelKind::FlatBall { radius } => radius,
    } * sk;
    let to_point = |x: &[f64; MAX_DIM]| Point::from_real(&x[..grid.n]);
    let pts: Vec<Vec<Point>> = components
        .iter()
        .map(|c| c.crossings.iter().map(to_point).collect())
        .collect();
    let radii: Vec<f64> = (0..components.len())
        .into_par_iter()
        .map(|i| {
            let mut best = f64::INFINITY;
            for (j, other) in pts.iter().enumerate() {
                if i == j {
                    continue;
                }
                for p in &pts[i] {
                    for q in other {
                        best = best.min(model.displacement(p, q).norm());
                    }
                }
            }
            (0.5 * best * sk).min(cap)
        })
        .collect();
    for (c, r) in components.iter_mut().zip(radii) {
        c.inradius_gk = r;
    }
}

impl ComponentInventory {
    pub fn min_inradius_gk(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.inradius_gk)
            .fold(f64::INFINITY, f64::min)
    }

    /// Whitespace-separated table: id, size, inradius, bbox.
    pub fn write_table(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "# id size inradius_gk bbox_lo bbox_hi")?;
        let n = self.grid.n;
        for c in &self.components {
            let fmt = |v: &[f64; MAX_DIM]| v[..n].iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(",");
            writeln!(
                out,
                "{} {} {:.6} {} {}",
                c.id,
                c.edges.len(),
                c.inradius_gk,
                fmt(&c.bbox[0]),
                fmt(&c.bbox[1])
            )?;
        }
        Ok(())
    }

    /// One line per marching segment: component id then both endpoints.
    /// For `n = 1` the zero points are written instead.
    pub fn write_polylines(&self, mut out: impl Write) -> Result<()> {
        let n = self.grid.n;
        let fmt = |v: &[f64; MAX_DIM]| v[..n].iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ");
        if n == 1 {
            for c in &self.components {
                for p in &c.crossings {
                    writeln!(out, "{} {}", c.id, fmt(p))?;
                }
            }
        } else {
            for s in &self.segments {
                writeln!(out, "{} {} {}", s.component, fmt(&s.a), fmt(&s.b))?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackingCertificate {
    pub count: usize,
    pub min_inradius_g: f64,
    /// `N (min inradius in g)^n`.
    pub packed_volume: f64,
    pub real_volume: f64,
    pub ok: bool,
    /// `N / k^{n/2}`.
    pub implied_c: f64,
    /// Whether every inradius is at least `eta / (2 sqrt k)` in g.
    pub inradius_vs_eta: bool,
}

pub fn packing_check(
    inv: &ComponentInventory,
    model: &ModelManifold,
    frame: &ScaledFrame,
    eta: f64,
) -> PackingCertificate {
    let n = model.n as i32;
    let sk = frame.sqrt_k();
    let count = inv.count;
    let implied_c = count as f64 / frame.kf().powf(n as f64 / 2.0);
    if count == 0 {
        return PackingCertificate {
            count,
            min_inradius_g: f64::INFINITY,
            packed_volume: 0.0,
            real_volume: model.real_volume(),
            ok: true,
            implied_c,
            inradius_vs_eta: true,
        };
    }
    let r = inv.min_inradius_gk() / sk;
    let packed = count as f64 * r.powi(n);
    PackingCertificate {
        count,
        min_inradius_g: r,
        packed_volume: packed,
        real_volume: model.real_volume(),
        ok: packed <= model.real_volume(),
        implied_c,
        inradius_vs_eta: r >= 0.5 * eta / sk,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroCount {
    /// Zeros of positive winding, with multiplicity.
    pub positive: i64,
    pub negative: i64,
    pub signed: i64,
}

/// Substeps per grid edge when integrating the argument.
pub const WINDING_SUBSTEPS: usize = 8;

/// Sum of per-cell winding numbers of `s` on an ambient n = 1 grid.
pub fn complex_zero_count(s: &SectionField, grid: &GridSpec) -> Result<ZeroCount> {
    if s.n() != 1 || grid.layout != GridLayout::Ambient || grid.n != 1 {
        return Err(Error::Dimension(s.n()));
    }
    let mut worst = 0.0;
    for attempt in 0..=JITTER_ATTEMPTS {
        let g = if attempt == 0 {
            *grid
        } else {
            grid.jittered(&jitter_fractions(attempt))
        };
        match winding_cells(s, &g)? {
            Ok(c) => return Ok(c),
            Err(v) => worst = v,
        }
    }
    Err(Error::DegenerateVertex {
        value: worst,
        attempts: JITTER_ATTEMPTS,
    })
}

/// Inner result is `Err(min |s|)` when a contour sample is degenerate.
fn winding_cells(s: &SectionField, g: &GridSpec) -> Result<std::result::Result<ZeroCount, f64>> {
    let len = g.len();
    // argument increment along each edge (vertex, axis)
    let incr: Vec<[Option<(f64, f64)>; 2]> = (0..len)
        .into_par_iter()
        .map(|i| {
            let idx = g.multi_index(i);
            let p = g.point(i);
            std::array::from_fn(|a| {
                g.step_index(&idx, a)?;
                let mut total = 0.0;
                let mut smallest = f64::INFINITY;
                let mut prev = s.evaluate(&p);
                smallest = smallest.min(prev.norm());
                for t in 1..=WINDING_SUBSTEPS {
                    let mut r = p.interleaved();
                    r[a] += g.step * t as f64 / WINDING_SUBSTEPS as f64;
                    let cur = s.evaluate(&Point::from_interleaved(&r));
                    smallest = smallest.min(cur.norm());
                    total += (cur / prev).arg();
                    prev = cur;
                }
                Some((total, smallest))
            })
        })
        .collect();
    let smallest = incr
        .iter()
        .flat_map(|e| e.iter().flatten().map(|x| x.1))
        .fold(f64::INFINITY, f64::min);
    if smallest < VERTEX_TOLERANCE {
        return Ok(Err(smallest));
    }
    let mut count = ZeroCount {
        positive: 0,
        negative: 0,
        signed: 0,
    };
    for i in 0..len {
        let idx = g.multi_index(i);
        let (Some(i10), Some(i01)) = (g.step_index(&idx, 0), g.step_index(&idx, 1)) else {
            continue;
        };
        let (i10, i01) = (g.flat_index(&i10), g.flat_index(&i01));
        let (Some(bottom), Some(right), Some(top), Some(left)) =
            (incr[i][0], incr[i10][1], incr[i01][0], incr[i][1])
        else {
            continue;
        };
        let w = (bottom.0 + right.0 - top.0 - left.0) / (2.0 * PI);
        let r = w.round();
        if (w - r).abs() > 0.1 {
            return Err(Error::Resolution { value: w });
        }
        let r = r as i64;
        count.signed += r;
        if r > 0 {
            count.positive += r;
        } else {
            count.negative -= r;
        }
    }
    Ok(Ok(count))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquidistributionStat {
    pub cells_per_axis: usize,
    /// Per-cell zero measure divided by `k`.
    pub measures: Vec<f64>,
    pub mean: f64,
    pub cv: f64,
    pub epsilon: f64,
}

/// Per-cell measure of `Z(s)` by the coarea tube proxy
/// `(1 / (pi eps^2)) * integral over {|s| < eps} of the 2-Jacobian`, scaled by `1/k`.
pub fn equidistribution(
    s: &SectionField,
    grid: &GridSpec,
    cells: usize,
    epsilon: f64,
) -> Result<EquidistributionStat> {
    let n = s.n();
    if grid.layout != GridLayout::Ambient || !s.model().is_torus() {
        return Err(Error::Parameter("equidistribution needs an ambient torus grid".into()));
    }
    let dims = 2 * n;
    let per_axis = (cells as f64).powf(1.0 / dims as f64).round() as usize;
    if per_axis.pow(dims as u32) != cells || per_axis == 0 {
        return Err(Error::Parameter(format!(
            "{cells} cells do not form a cubic partition in {dims} real dimensions"
        )));
    }
    let vol = grid.step.powi(dims as i32);
    let k = s.frame().kf();
    let contributions: Vec<(usize, f64)> = (0..grid.len())
        .into_par_iter()
        .filter_map(|i| {
            let z = grid.point(i);
            let (v, gr) = s.eval_grad(&z);
            if v.norm() >= epsilon {
                return None;
            }
            let jac = two_jacobian(&gr.real_jacobian(n), dims);
            let r = s.model().reduce(&z).interleaved();
            let mut cell = 0;
            for a in 0..dims {
                let c = ((r[a] * per_axis as f64).floor() as usize).min(per_axis - 1);
                cell = cell * per_axis + c;
            }
            Some((cell, jac * vol / (PI * epsilon * epsilon) / k))
        })
        .collect();
    let mut measures = vec![0.0; cells];
    for (c, m) in contributions {
        measures[c] += m;
    }
    let mean = measures.iter().sum::<f64>() / cells as f64;
    let var = measures.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / cells as f64;
    let cv = if mean > 0.0 { var.sqrt() / mean } else { f64::INFINITY };
    Ok(EquidistributionStat {
        cells_per_axis: per_axis,
        measures,
        mean,
        cv,
        epsilon,
    })
}

/// `sqrt(det(J J^T))` for a real 2 x m Jacobian.
fn two_jacobian(j: &[[f64; 2 * MAX_DIM]; 2], m: usize) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a[..m].iter().zip(&b[..m]).map(|(x, y)| x * y).sum::<f64>();
    let (aa, bb, ab) = (dot(&j[0], &j[0]), dot(&j[1], &j[1]), dot(&j[0], &j[1]));
    (aa * bb - ab * ab).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{tau_bump, Bump, BumpModel};

    fn one() -> Complex64 {
        Complex64::new(1.0, 0.0)
    }

    #[test]
    fn nonvanishing_has_no_components() {
        let m = ModelManifold::torus(2).unwrap();
        let f = ScaledFrame::new(16).unwrap();
        let s = SectionField::new(m, f, vec![Bump::new(Point::ORIGIN, one(), BumpModel::Unit, 0.05, f64::INFINITY)]);
        let g = GridSpec::real(&m, &f, 0.2).unwrap();
        assert_eq!(real_components(&s, &g).unwrap().count, 0);
    }

    #[test]
    fn single_quadric_circle() {
        let m = ModelManifold::flat_ball(2, 0.5).unwrap();
        let f = ScaledFrame::new(100).unwrap();
        let s = SectionField::new(m, f, vec![tau_bump(&Point::ORIGIN, one(), f64::INFINITY)]);
        let g = GridSpec::real(&m, &f, 0.1).unwrap();
        let inv = real_components(&s, &g).unwrap();
        assert_eq!(inv.count, 1);
        // crossings lie near g_k radius 1/sqrt 2
        for p in &inv.components[0].crossings {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt() * 10.0;
            assert!((r - 0.5f64.sqrt()).abs() < 0.02, "{r}");
        }
    }

    #[test]
    fn saddle_decider() {
        // v = x y on a 3x3 patch: two crossing lines, one component
        let m = ModelManifold::flat_ball(2, 1.0).unwrap();
        let f = ScaledFrame::new(1).unwrap();
        let g = GridSpec::real_with_count(&m, &f, 4);
        let v: Vec<f64> = (0..g.len())
            .map(|i| {
                let p = g.point(i);
                (p.0[0].re - 0.1) * (p.0[1].re + 0.05)
            })
            .collect();
        let inv = march(&m, &g, &v);
        assert!(inv.count >= 1 && inv.count <= 2);
    }

    #[test]
    fn quadric_winding_is_two() {
        let m = ModelManifold::flat_ball(1, 1.0).unwrap();
        let f = ScaledFrame::new(100).unwrap();
        let s = SectionField::new(m, f, vec![tau_bump(&Point::ORIGIN, one(), f64::INFINITY)]);
        let g = GridSpec::local_ball(1, &Point::from_complex(&[Complex64::new(0.003, 0.002)]), 1.5, &f, 0.1);
        let c = complex_zero_count(&s, &g).unwrap();
        assert_eq!(c.signed, 2);
        assert_eq!(c.positive, 2);
    }

    #[test]
    fn constant_winding_is_zero() {
        let m = ModelManifold::flat_ball(1, 1.0).unwrap();
        let f = ScaledFrame::new(25).unwrap();
        let s = SectionField::new(m, f, vec![Bump::new(Point::ORIGIN, one(), BumpModel::Unit, 0.0, f64::INFINITY)]);
        let g = GridSpec::ambient(&m, &f, 0.2).unwrap();
        assert_eq!(complex_zero_count(&s, &g).unwrap().signed, 0);
    }
}
