//! Ambient models: a flat ball in C^n and the torus C^n / (Z^n + iZ^n),
//! both carrying the standard symplectic form and the involution
//! `c(z) = conj(z)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::{Point, MAX_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    FlatBall { radius: f64 },
    Torus,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifold {
    pub kind: ModelKind,
    pub n: usize,
}

/// Tensor power `k`; lengths in `g_k` are `sqrt(k)` times lengths in `g`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaledFrame {
    pub k: u32,
}

impl ScaledFrame {
    pub fn new(k: u32) -> Result<Self> {
        if k == 0 {
            return Err(Error::Parameter("k must be positive".into()));
        }
        Ok(Self { k })
    }

    pub fn sqrt_k(&self) -> f64 {
        (self.k as f64).sqrt()
    }

    pub fn kf(&self) -> f64 {
        self.k as f64
    }
}

fn wrap_centered(t: f64) -> f64 {
    t - t.round()
}

impl ModelManifold {
    pub fn flat_ball(n: usize, radius: f64) -> Result<Self> {
        check_dim(n)?;
        if !(radius > 0.0) {
            return Err(Error::Parameter(format!("ball radius {radius} must be positive")));
        }
        Ok(Self {
            kind: ModelKind::FlatBall { radius },
            n,
        })
    }

    pub fn torus(n: usize) -> Result<Self> {
        check_dim(n)?;
        Ok(Self {
            kind: ModelKind::Torus,
            n,
        })
    }

    pub fn is_torus(&self) -> bool {
        matches!(self.kind, ModelKind::Torus)
    }

    /// Canonical representative: the torus wraps into `[0, 1)` per real axis.
    pub fn reduce(&self, z: &Point) -> Point {
        match self.kind {
            ModelKind::FlatBall { .. } => *z,
            ModelKind::Torus => {
                let mut out = *z;
                for c in out.0.iter_mut().take(self.n) {
                    *c = Complex64::new(c.re.rem_euclid(1.0), c.im.rem_euclid(1.0));
                }
                out
            }
        }
    }

    pub fn conj(&self, z: &Point) -> Point {
        self.reduce(&z.conj())
    }

    pub fn contains(&self, z: &Point) -> bool {
        match self.kind {
            ModelKind::FlatBall { radius } => z.norm() <= radius * (1.0 + 1e-12),
            ModelKind::Torus => true,
        }
    }

    pub fn check_domain(&self, z: &Point) -> Result<()> {
        match self.kind {
            ModelKind::FlatBall { radius } if !self.contains(z) => Err(Error::Domain {
                norm: z.norm(),
                radius,
            }),
            _ => Ok(()),
        }
    }

    /// `y - x`, taken as the shortest period translate on the torus.
    pub fn displacement(&self, x: &Point, y: &Point) -> Point {
        let mut d = *y - *x;
        if self.is_torus() {
            for c in d.0.iter_mut().take(self.n) {
                *c = Complex64::new(wrap_centered(c.re), wrap_centered(c.im));
            }
        }
        d
    }

    pub fn g_distance(&self, x: &Point, y: &Point) -> Result<f64> {
        self.check_domain(x)?;
        self.check_domain(y)?;
        Ok(self.displacement(x, y).norm())
    }

    pub fn gk_distance(&self, frame: &ScaledFrame, x: &Point, y: &Point) -> Result<f64> {
        Ok(frame.sqrt_k() * self.g_distance(x, y)?)
    }

    /// g-distance from `z` to the real locus `{Im z = 0}`.
    pub fn distance_to_real(&self, z: &Point) -> f64 {
        let mut s = 0.0;
        for c in z.0.iter().take(self.n) {
            let y = if self.is_torus() { wrap_centered(c.im) } else { c.im };
            s += y * y;
        }
        s.sqrt()
    }

    /// g-distance to the full fixed set of `c`. On the torus this set also
    /// contains the half-period levels `Im z_j = 1/2`.
    pub fn distance_to_fixed(&self, z: &Point) -> f64 {
        if !self.is_torus() {
            return self.distance_to_real(z);
        }
        let mut s = 0.0;
        for c in z.0.iter().take(self.n) {
            let y = wrap_centered(c.im).abs().min(wrap_centered(c.im - 0.5).abs());
            s += y * y;
        }
        s.sqrt()
    }

    /// g-volume of the real locus.
    pub fn real_volume(&self) -> f64 {
        match self.kind {
            ModelKind::Torus => 1.0,
            ModelKind::FlatBall { radius } => unit_ball_volume(self.n) * radius.powi(self.n as i32),
        }
    }

    /// Points of the real locus pairwise at least `mesh` apart in `g_k`.
    pub fn real_lattice(&self, frame: &ScaledFrame, mesh: f64) -> Result<RealLattice> {
        if !(mesh > 0.0) {
            return Err(Error::Parameter(format!("lattice mesh {mesh} must be positive")));
        }
        let sk = frame.sqrt_k();
        let n = self.n;
        match self.kind {
            ModelKind::Torus => {
                let degenerate = mesh > sk;
                let per_axis = ((sk / mesh).floor() as usize).max(1);
                let spacing = 1.0 / per_axis as f64;
                let points = product_indices(n, 0, per_axis as i64)
                    .into_iter()
                    .map(|idx| {
                        let coords: Vec<f64> =
                            idx.iter().map(|&i| (i as f64 + 0.5) * spacing).collect();
                        Point::from_real(&coords)
                    })
                    .collect();
                Ok(RealLattice {
                    points,
                    per_axis,
                    spacing_g: spacing,
                    degenerate,
                })
            }
            ModelKind::FlatBall { radius } => {
                if mesh > sk * radius {
                    return Ok(RealLattice {
                        points: vec![Point::ORIGIN],
                        per_axis: 1,
                        spacing_g: radius,
                        degenerate: true,
                    });
                }
                let spacing = mesh / sk;
                let half = (radius / spacing).floor() as i64;
                let points: Vec<Point> = product_indices(n, -half, half + 1)
                    .into_iter()
                    .map(|idx| {
                        let coords: Vec<f64> = idx.iter().map(|&i| i as f64 * spacing).collect();
                        Point::from_real(&coords)
                    })
                    .filter(|p| p.norm() <= radius)
                    .collect();
                Ok(RealLattice {
                    points,
                    per_axis: (2 * half + 1) as usize,
                    spacing_g: spacing,
                    degenerate: false,
                })
            }
        }
    }

    /// c-invariant covering by unit `g_k` balls, grouped into colors whose
    /// units are pairwise at least `separation` apart.
    pub fn colored_ball_net(&self, frame: &ScaledFrame, separation: f64) -> Result<BallNet> {
        if !(separation > 0.0) {
            return Err(Error::Parameter(format!(
                "net separation {separation} must be positive"
            )));
        }
        let n = self.n;
        let sk = frame.sqrt_k();
        // Cube cells of side (ax, ay) have covering radius sqrt(n (ax^2 + ay^2)) / 2;
        // keep it at 0.95 so unit balls cover with margin.
        let cover = 0.95_f64;
        let (ay, y_levels): (f64, Vec<i64>) = match self.kind {
            ModelKind::Torus => {
                let mut my = (sk.floor() as i64) & !1;
                if my < 2 {
                    my = 2;
                }
                if sk / my as f64 > AY_CAP {
                    return Err(Error::Parameter(format!(
                        "k = {} too small for a c-invariant unit-ball net",
                        frame.k
                    )));
                }
                (sk / my as f64, (0..my).collect())
            }
            ModelKind::FlatBall { radius } => {
                let j = (sk * radius + 1.0).ceil() as i64;
                (1.0, (-j..=j).collect())
            }
        };
        let ax_sq = 4.0 * cover * cover / n as f64 - ay * ay;
        if n > 2 || ax_sq < 0.01 {
            return Err(Error::Parameter(format!(
                "k = {} too small to build a c-invariant unit-ball net in dimension {n}",
                frame.k
            )));
        }
        let ax_max = ax_sq.sqrt();
        let (ax, x_levels): (f64, Vec<i64>) = match self.kind {
            ModelKind::Torus => {
                let mx = (sk / ax_max).ceil() as i64;
                (sk / mx as f64, (0..mx).collect())
            }
            ModelKind::FlatBall { radius } => {
                let i = ((sk * radius + 1.0) / ax_max).ceil() as i64;
                (ax_max, (-i..=i).collect())
            }
        };
        let my = y_levels.len() as i64;
        let to_point = |idx: &[i64]| -> Point {
            let mut coords = [Complex64::new(0.0, 0.0); MAX_DIM];
            for j in 0..n {
                coords[j] = Complex64::new(idx[j] as f64 * ax / sk, idx[n + j] as f64 * ay / sk);
            }
            Point(coords)
        };
        let conj_idx = |idx: &[i64]| -> Vec<i64> {
            let mut out = idx.to_vec();
            for j in 0..n {
                out[n + j] = if self.is_torus() {
                    (my - idx[n + j]).rem_euclid(my)
                } else {
                    -idx[n + j]
                };
            }
            out
        };

        let mut units: Vec<(Vec<i64>, Vec<Point>)> = Vec::new();
        let mut all = vec![Vec::new()];
        for axis in 0..2 * n {
            let levels = if axis < n { &x_levels } else { &y_levels };
            all = all
                .into_iter()
                .flat_map(|prefix: Vec<i64>| {
                    levels.iter().map(move |&l| {
                        let mut v = prefix.clone();
                        v.push(l);
                        v
                    })
                })
                .collect();
        }
        for idx in all {
            let cidx = conj_idx(&idx);
            if cidx < idx {
                continue;
            }
            let p = to_point(&idx);
            if let ModelKind::FlatBall { radius } = self.kind {
                if p.norm() * sk > sk * radius + 1.0 {
                    continue;
                }
            }
            let members = if cidx == idx {
                vec![p]
            } else {
                vec![p, to_point(&cidx)]
            };
            units.push((idx, members));
        }

        // Colors are residue classes of the unit's canonical index. On the
        // torus the last partial period of each axis gets its own classes.
        // The palette size only depends on (n, separation).
        let ax_floor = 0.5 * (4.0 * cover * cover / n as f64 - AY_CAP * AY_CAP).sqrt();
        let qx = (separation / ax_floor).ceil().max(1.0) as i64;
        let qy = separation.ceil().max(1.0) as i64;
        let mx = x_levels.len() as i64;
        let torus = self.is_torus();
        let axis_class = |i: i64, q: i64, m: i64| -> (i64, i64) {
            if torus {
                let full = (m / q) * q;
                if i < full {
                    (i.rem_euclid(q), 2 * q)
                } else {
                    (q + (i - full), 2 * q)
                }
            } else {
                (i.rem_euclid(q), q)
            }
        };
        let fold = |j: i64| -> i64 {
            if torus {
                j.min(my - j)
            } else {
                j.abs()
            }
        };
        let class_of = |idx: &[i64]| -> (usize, usize) {
            let mut id = 0usize;
            let mut size = 1usize;
            for &i in idx.iter().take(n) {
                let (c, r) = axis_class(i, qx, mx);
                id = id * r as usize + c as usize;
                size *= r as usize;
            }
            if n == 1 {
                // the quotient of a circle (or line) by reflection is a segment
                let c = fold(idx[1]).rem_euclid(qy);
                id = id * qy as usize + c as usize;
                size *= qy as usize;
            } else {
                for &j in idx.iter().skip(n).take(n) {
                    let (c, r) = axis_class(j, qy, my);
                    id = id * r as usize + c as usize;
                    size *= r as usize;
                }
            }
            (id, size)
        };
        let palette = class_of(&vec![0; 2 * n]).1;
        let mut colors: Vec<Vec<BallUnit>> = vec![Vec::new(); palette];
        let mut overflow: Vec<BallUnit> = Vec::new();
        for (idx, members) in units {
            let unit = BallUnit {
                fixed: members.len() == 1,
                centers: members,
            };
            let (c, _) = class_of(&idx);
            let clash = colors[c]
                .iter()
                .any(|other| self.unit_distance(frame, &unit, other) < separation - 1e-9);
            if clash {
                overflow.push(unit);
            } else {
                colors[c].push(unit);
            }
        }
        // Classes are provably separated for n = 1; near the fixed levels
        // in higher dimension a few units may need extra colors.
        for unit in overflow {
            let slot = colors[palette..].iter().position(|color| {
                color
                    .iter()
                    .all(|other| self.unit_distance(frame, &unit, other) >= separation - 1e-9)
            });
            match slot {
                Some(i) => colors[palette + i].push(unit),
                None => colors.push(vec![unit]),
            }
        }
        Ok(BallNet {
            colors,
            spacing_real: ax,
            spacing_imag: ay,
        })
    }

    fn unit_distance(&self, frame: &ScaledFrame, a: &BallUnit, b: &BallUnit) -> f64 {
        let mut best = f64::INFINITY;
        for x in &a.centers {
            for y in &b.centers {
                best = best.min(self.displacement(x, y).norm() * frame.sqrt_k());
            }
        }
        best
    }
}

fn check_dim(n: usize) -> Result<()> {
    if (1..=MAX_DIM).contains(&n) {
        Ok(())
    } else {
        Err(Error::Dimension(n))
    }
}

/// Largest imaginary lattice spacing accepted by the colored net.
pub const AY_CAP: f64 = 1.25;

pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => std::f64::consts::PI,
        3 => 4.0 / 3.0 * std::f64::consts::PI,
        _ => f64::NAN,
    }
}

fn product_indices(n: usize, lo: i64, hi: i64) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p: Vec<i64>| {
                (lo..hi).map(move |i| {
                    let mut v = p.clone();
                    v.push(i);
                    v
                })
            })
            .collect();
    }
    out
}

#[derive(Clone, Debug)]
pub struct RealLattice {
    pub points: Vec<Point>,
    pub per_axis: usize,
    pub spacing_g: f64,
    /// Mesh larger than the domain: only a single center was produced.
    pub degenerate: bool,
}

/// One perturbation unit of the net: a c-fixed center, or a pair `{x, c(x)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct BallUnit {
    pub centers: Vec<Point>,
    pub fixed: bool,
}

impl BallUnit {
    pub fn center(&self) -> Point {
        self.centers[0]
    }
}

#[derive(Clone, Debug)]
pub struct BallNet {
    pub colors: Vec<Vec<BallUnit>>,
    pub spacing_real: f64,
    pub spacing_imag: f64,
}

impl BallNet {
    pub fn num_colors(&self) -> usize {
        self.colors.len()
    }

    pub fn centers(&self) -> impl Iterator<Item = &Point> {
        self.colors.iter().flatten().flat_map(|u| u.centers.iter())
    }
}
