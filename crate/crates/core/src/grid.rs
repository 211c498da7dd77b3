//! Uniform sampling grids over the fundamental domain, the real locus, or a
//! local ball. All axes share one step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelManifold, ScaledFrame};
use crate::point::{Point, MAX_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridLayout {
    /// Axes are the interleaved real coordinates `(x1, y1, ..., xn, yn)`.
    Ambient,
    /// Axes are `(x1, ..., xn)` with all imaginary parts zero.
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub layout: GridLayout,
    pub lo: [f64; 2 * MAX_DIM],
    pub step: f64,
    pub count: usize,
    pub periodic: bool,
    pub sqrt_k: f64,
}

impl GridSpec {
    pub fn ambient(model: &ModelManifold, frame: &ScaledFrame, cell_gk: f64) -> Result<Self> {
        Self::over_domain(model, frame, cell_gk, GridLayout::Ambient)
    }

    pub fn real(model: &ModelManifold, frame: &ScaledFrame, cell_gk: f64) -> Result<Self> {
        Self::over_domain(model, frame, cell_gk, GridLayout::Real)
    }

    /// Grid over the real locus with exactly `count` points per axis.
    pub fn real_with_count(model: &ModelManifold, frame: &ScaledFrame, count: usize) -> Self {
        Self::with_count(model, frame, count, GridLayout::Real)
    }

    pub fn ambient_with_count(model: &ModelManifold, frame: &ScaledFrame, count: usize) -> Self {
        Self::with_count(model, frame, count, GridLayout::Ambient)
    }

    fn with_count(
        model: &ModelManifold,
        frame: &ScaledFrame,
        count: usize,
        layout: GridLayout,
    ) -> Self {
        let count = count.max(2);
        match model.kind {
            ModelKind::Torus => Self {
                n: model.n,
                layout,
                lo: [0.0; 2 * MAX_DIM],
                step: 1.0 / count as f64,
                count,
                periodic: true,
                sqrt_k: frame.sqrt_k(),
            },
            ModelKind::FlatBall { radius } => Self {
                n: model.n,
                layout,
                lo: [-radius; 2 * MAX_DIM],
                step: 2.0 * radius / (count - 1) as f64,
                count,
                periodic: false,
                sqrt_k: frame.sqrt_k(),
            },
        }
    }

    fn over_domain(
        model: &ModelManifold,
        frame: &ScaledFrame,
        cell_gk: f64,
        layout: GridLayout,
    ) -> Result<Self> {
        if !(cell_gk > 0.0) {
            return Err(Error::Parameter(format!("cell size {cell_gk} must be positive")));
        }
        let dims = match layout {
            GridLayout::Ambient => 2 * model.n,
            GridLayout::Real => model.n,
        } as f64;
        let step_max = cell_gk / (dims.sqrt() * frame.sqrt_k());
        let count = match model.kind {
            ModelKind::Torus => (1.0 / step_max).ceil() as usize,
            ModelKind::FlatBall { radius } => (2.0 * radius / step_max).ceil() as usize + 1,
        };
        Ok(Self::with_count(model, frame, count, layout))
    }

    /// Non-periodic ambient box around `center` of half-width `radius_gk`.
    pub fn local_ball(
        n: usize,
        center: &Point,
        radius_gk: f64,
        frame: &ScaledFrame,
        cell_gk: f64,
    ) -> Self {
        let dims = (2 * n) as f64;
        let half = radius_gk / frame.sqrt_k();
        let step_max = cell_gk / (dims.sqrt() * frame.sqrt_k());
        // odd count so the center is a grid point
        let count = ((2.0 * half / step_max).ceil() as usize / 2) * 2 + 3;
        let mut lo = center.interleaved();
        for v in lo.iter_mut() {
            *v -= half;
        }
        Self {
            n,
            layout: GridLayout::Ambient,
            lo,
            step: 2.0 * half / (count - 1) as f64,
            count,
            periodic: false,
            sqrt_k: frame.sqrt_k(),
        }
    }

    pub fn dims(&self) -> usize {
        match self.layout {
            GridLayout::Ambient => 2 * self.n,
            GridLayout::Real => self.n,
        }
    }

    pub fn len(&self) -> usize {
        self.count.pow(self.dims() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_diameter_g(&self) -> f64 {
        self.step * (self.dims() as f64).sqrt()
    }

    pub fn cell_diameter_gk(&self) -> f64 {
        self.cell_diameter_g() * self.sqrt_k
    }

    pub fn require_cell_gk(&self, limit: f64) -> Result<()> {
        let actual = self.cell_diameter_gk();
        if actual > limit * (1.0 + 1e-12) {
            let extent = self.step * self.count as f64;
            let hint = (extent * (self.dims() as f64).sqrt() * self.sqrt_k / limit).ceil() as usize;
            return Err(Error::GridTooCoarse {
                actual,
                limit,
                hint,
            });
        }
        Ok(())
    }

    pub fn multi_index(&self, mut flat: usize) -> [usize; 2 * MAX_DIM] {
        let mut idx = [0; 2 * MAX_DIM];
        for a in (0..self.dims()).rev() {
            idx[a] = flat % self.count;
            flat /= self.count;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .take(self.dims())
            .fold(0, |acc, &i| acc * self.count + i)
    }

    /// Neighbor along `axis` by `+1`; wraps when periodic.
    pub fn step_index(&self, idx: &[usize; 2 * MAX_DIM], axis: usize) -> Option<[usize; 2 * MAX_DIM]> {
        let mut out = *idx;
        if idx[axis] + 1 < self.count {
            out[axis] += 1;
            Some(out)
        } else if self.periodic {
            out[axis] = 0;
            Some(out)
        } else {
            None
        }
    }

    pub fn point_at(&self, idx: &[usize; 2 * MAX_DIM]) -> Point {
        let mut reals = [0.0; 2 * MAX_DIM];
        match self.layout {
            GridLayout::Ambient => {
                for a in 0..2 * self.n {
                    reals[a] = self.lo[a] + idx[a] as f64 * self.step;
                }
            }
            GridLayout::Real => {
                for a in 0..self.n {
                    reals[2 * a] = self.lo[a] + idx[a] as f64 * self.step;
                }
            }
        }
        Point::from_interleaved(&reals)
    }

    pub fn point(&self, flat: usize) -> Point {
        self.point_at(&self.multi_index(flat))
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    /// Same resolution, origin shifted by `fraction` of a step on every axis.
    pub fn jittered(&self, fraction: &[f64]) -> Self {
        let mut out = *self;
        for (a, f) in fraction.iter().enumerate().take(2 * MAX_DIM) {
            out.lo[a] += f * self.step;
        }
        out
    }

    /// Halved step over the same box.
    pub fn refined(&self) -> Self {
        let mut out = *self;
        if self.periodic {
            out.count = 2 * self.count;
        } else {
            out.count = 2 * (self.count - 1) + 1;
        }
        out.step = self.step / 2.0;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ambient_torus_grid_respects_cell_bound() {
        let m = ModelManifold::torus(1).unwrap();
        let f = ScaledFrame::new(100).unwrap();
        let g = GridSpec::ambient(&m, &f, 0.2).unwrap();
        assert!(g.cell_diameter_gk() <= 0.2 + 1e-12);
        assert!(g.require_cell_gk(0.2).is_ok());
        assert!(g.refined().cell_diameter_gk() <= 0.1 + 1e-12);
        let coarse = GridSpec::ambient_with_count(&m, &f, 10);
        assert!(matches!(coarse.require_cell_gk(0.2), Err(Error::GridTooCoarse { .. })));
    }

    #[test]
    fn index_roundtrip() {
        let m = ModelManifold::torus(2).unwrap();
        let f = ScaledFrame::new(16).unwrap();
        let g = GridSpec::ambient_with_count(&m, &f, 5);
        for flat in [0, 7, 123, g.len() - 1] {
            assert_eq!(g.flat_index(&g.multi_index(flat)), flat);
        }
    }
}
