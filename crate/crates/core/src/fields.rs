//! Sections as finite sums of Gaussian-weighted holomorphic bumps,
//!
//! `s(z) = sum_i w_i f_i((z - x_i) sqrt k) exp(-a_i k |z - x_i|^2) beta(d_k(z, x_i))`,
//!
//! with closed-form value and gradient, the real-structure action `kappa`
//! and symmetrization. On the torus every bump is summed over its period
//! translates.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::model::{ModelKind, ModelManifold, ScaledFrame};
use crate::point::{Gradient, Point, MAX_DIM};

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

/// Gaussian width of the concentrated sections: `|sigma| >= 1/2` on the unit
/// `g_k`-ball needs a weight no narrower than `exp(-ln 2 d^2)`.
pub const CONCENTRATED_WIDTH: f64 = 0.5;
/// Gaussian width of the quadric bumps `tau_k`.
pub const TAU_WIDTH: f64 = 1.0;
/// Values below this are dropped when truncating Gaussian tails.
pub const TAIL_TOLERANCE: f64 = 1e-16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: Complex64,
    pub exponents: [u8; MAX_DIM],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BumpModel {
    /// `f = 1`.
    Unit,
    /// `f(u) = u_1^2 + ... + u_n^2 - 1/2`.
    Quadric,
    Polynomial { terms: Vec<Monomial> },
}

impl BumpModel {
    pub fn monomial(coeff: Complex64, exponents: [u8; MAX_DIM]) -> Self {
        BumpModel::Polynomial {
            terms: vec![Monomial { coeff, exponents }],
        }
    }

    /// Value and holomorphic partials `df/du_j`.
    pub fn eval(&self, u: &[Complex64; MAX_DIM]) -> (Complex64, [Complex64; MAX_DIM]) {
        match self {
            BumpModel::Unit => (C1, [C0; MAX_DIM]),
            BumpModel::Quadric => {
                let v = u.iter().map(|c| c * c).sum::<Complex64>() - 0.5;
                (v, u.map(|c| c * 2.0))
            }
            BumpModel::Polynomial { terms } => {
                let mut v = C0;
                let mut d = [C0; MAX_DIM];
                for t in terms {
                    let pows: [Complex64; MAX_DIM] =
                        std::array::from_fn(|j| u[j].powu(t.exponents[j] as u32));
                    v += t.coeff * pows.iter().product::<Complex64>();
                    for j in 0..MAX_DIM {
                        let e = t.exponents[j];
                        if e == 0 {
                            continue;
                        }
                        let mut prod = t.coeff * e as f64 * u[j].powu(e as u32 - 1);
                        for (l, p) in pows.iter().enumerate() {
                            if l != j {
                                prod *= p;
                            }
                        }
                        d[j] += prod;
                    }
                }
                (v, d)
            }
        }
    }

    /// The model `u -> conj(f(conj u))`.
    pub fn conjugate(&self) -> Self {
        match self {
            BumpModel::Polynomial { terms } => BumpModel::Polynomial {
                terms: terms
                    .iter()
                    .map(|t| Monomial {
                        coeff: t.coeff.conj(),
                        exponents: t.exponents,
                    })
                    .collect(),
            },
            other => other.clone(),
        }
    }

    /// Upper bound `A (1 + d)^m` for `|f(u)|` at `|u| = d`.
    fn growth(&self) -> (f64, i32) {
        match self {
            BumpModel::Unit => (1.0, 0),
            BumpModel::Quadric => (1.0, 2),
            BumpModel::Polynomial { terms } => {
                let a = terms.iter().map(|t| t.coeff.norm()).sum::<f64>();
                let m = terms
                    .iter()
                    .map(|t| t.exponents.iter().map(|&e| e as i32).sum::<i32>())
                    .max()
                    .unwrap_or(0);
                (a.max(f64::MIN_POSITIVE), m)
            }
        }
    }
}

/// C^2 quintic plateau: 1 on `[0, r/2]`, 0 beyond `r`. Returns value and
/// derivative in `d`.
pub fn plateau(d: f64, r: f64) -> (f64, f64) {
    if !r.is_finite() || d <= 0.5 * r {
        return (1.0, 0.0);
    }
    if d >= r {
        return (0.0, 0.0);
    }
    let half = 0.5 * r;
    let t = (d - half) / half;
    let t2 = t * t;
    let t3 = t2 * t;
    let v = 1.0 - t3 * (10.0 - 15.0 * t + 6.0 * t2);
    let dv = -30.0 * t2 * (1.0 - t) * (1.0 - t) / half;
    (v, dv)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Point,
    pub coeff: Complex64,
    pub model: BumpModel,
    /// Gaussian width `a` in `exp(-a d_k^2)`.
    pub width: f64,
    /// Plateau radius in `g_k`; infinite for no cutoff.
    pub cutoff: f64,
}

impl Bump {
    pub fn new(center: Point, coeff: Complex64, model: BumpModel, width: f64, cutoff: f64) -> Self {
        Self {
            center,
            coeff,
            model,
            width,
            cutoff,
        }
    }

    /// `g_k` radius past which the bump is below `TAIL_TOLERANCE` or cut off.
    pub fn support_radius_gk(&self) -> f64 {
        let (a, m) = self.model.growth();
        let amp = a * self.coeff.norm().max(f64::MIN_POSITIVE);
        if self.width <= 0.0 {
            return self.cutoff;
        }
        let mut d = ((amp / TAIL_TOLERANCE).ln().max(1.0) / self.width).sqrt();
        while amp * (1.0 + d).powi(m) * (-self.width * d * d).exp() > TAIL_TOLERANCE {
            d += 0.25;
        }
        d.min(self.cutoff)
    }

    /// Value and gradient (in g coordinates) at displacement `dz = z - center`.
    #[inline]
    pub fn eval_at(&self, dz: &Point, sqrt_k: f64) -> (Complex64, Gradient) {
        let u: [Complex64; MAX_DIM] = dz.0.map(|c| c * sqrt_k);
        let d2: f64 = u.iter().map(|c| c.norm_sqr()).sum();
        if self.cutoff.is_finite() && d2 >= self.cutoff * self.cutoff {
            return (C0, Gradient::ZERO);
        }
        let d = d2.sqrt();
        let g = (-self.width * d2).exp();
        let (p, dp) = self.model.eval(&u);
        let (b, db) = plateau(d, self.cutoff);
        let amp = self.coeff * g;
        let value = amp * p * b;
        let radial = if d > 0.0 { db / d } else { 0.0 };
        let mut grad = Gradient::ZERO;
        for j in 0..MAX_DIM {
            let (ur, ui) = (u[j].re, u[j].im);
            let common = p * (b * (-2.0 * self.width) + radial);
            let gx = dp[j] * b + common * ur;
            let gy = Complex64::i() * dp[j] * b + common * ui;
            grad.dx[j] = amp * gx * sqrt_k;
            grad.dy[j] = amp * gy * sqrt_k;
        }
        (value, grad)
    }
}

/// Bump images binned on a dense grid for local summation.
#[derive(Clone, Debug)]
struct BumpIndex {
    centers: Vec<Point>,
    owner: Vec<u32>,
    /// Squared support radius of each image, in `g`.
    reach2: Vec<f64>,
    dims: usize,
    /// Bins scanned on each side.
    depth: i64,
    lo: [f64; 2 * MAX_DIM],
    bin: f64,
    nb: [usize; 2 * MAX_DIM],
    starts: Vec<u32>,
    items: Vec<u32>,
}

impl BumpIndex {
    fn build(model: &ModelManifold, frame: &ScaledFrame, bumps: &[Bump]) -> Self {
        let n = model.n;
        let dims = 2 * n;
        let sk = frame.sqrt_k();
        let mut centers = Vec::new();
        let mut owner = Vec::new();
        let mut reach2 = Vec::new();
        let mut rmax: f64 = 0.0;
        for (i, b) in bumps.iter().enumerate() {
            let mut r = b.support_radius_gk() / sk;
            if let ModelKind::FlatBall { radius } = model.kind {
                // reach every vertex of a grid box around the ball
                r = r.max(radius * (1.0 + (dims as f64).sqrt()));
            }
            assert!(
                r.is_finite() || !model.is_torus(),
                "torus bumps need a positive width or a finite cutoff"
            );
            rmax = rmax.max(r);
            if model.is_torus() {
                let base = b.center.interleaved();
                let mut offsets = vec![[0i64; 2 * MAX_DIM]];
                for a in 0..dims {
                    let x = base[a].rem_euclid(1.0);
                    let lo = (-r - x).floor() as i64;
                    let hi = (1.0 + r - x).ceil() as i64;
                    offsets = offsets
                        .into_iter()
                        .flat_map(|o| {
                            (lo..=hi).filter_map(move |m| {
                                let c = x + m as f64;
                                (c > -r && c < 1.0 + r).then(|| {
                                    let mut v = o;
                                    v[a] = m;
                                    v
                                })
                            })
                        })
                        .collect();
                }
                for o in offsets {
                    let mut reals = [0.0; 2 * MAX_DIM];
                    for a in 0..dims {
                        reals[a] = base[a].rem_euclid(1.0) + o[a] as f64;
                    }
                    centers.push(Point::from_interleaved(&reals));
                    owner.push(i as u32);
                    reach2.push(r * r);
                }
            } else {
                centers.push(b.center);
                owner.push(i as u32);
                reach2.push(r * r);
            }
        }
        let mut lo = [f64::INFINITY; 2 * MAX_DIM];
        let mut hi = [f64::NEG_INFINITY; 2 * MAX_DIM];
        for c in &centers {
            let r = c.interleaved();
            for a in 0..dims {
                lo[a] = lo[a].min(r[a]);
                hi[a] = hi[a].max(r[a]);
            }
        }
        // in low dimension, half-radius bins scanned two deep
        let depth: i64 = if dims >= 4 { 1 } else { 2 };
        let mut bin = (rmax / depth as f64).max(1e-12);
        for a in 0..dims {
            if centers.is_empty() {
                lo[a] = 0.0;
                hi[a] = 0.0;
            }
            bin = bin.max((hi[a] - lo[a]) / 48.0);
        }
        let mut nb = [1usize; 2 * MAX_DIM];
        for a in 0..dims {
            nb[a] = ((hi[a] - lo[a]) / bin).floor() as usize + 1;
        }
        let total: usize = nb[..dims].iter().product();
        let mut counts = vec![0u32; total + 1];
        let keys: Vec<usize> = centers
            .iter()
            .map(|c| {
                let r = c.interleaved();
                let mut key = 0;
                for a in 0..dims {
                    let i = (((r[a] - lo[a]) / bin).floor() as usize).min(nb[a] - 1);
                    key = key * nb[a] + i;
                }
                key
            })
            .collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 0..total {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; centers.len()];
        for (i, &k) in keys.iter().enumerate() {
            items[fill[k] as usize] = i as u32;
            fill[k] += 1;
        }
        Self {
            centers,
            owner,
            reach2,
            dims,
            depth,
            lo,
            bin,
            nb,
            starts: counts,
            items,
        }
    }

    /// Calls `f(image index)` for every image whose bin neighbors `z`.
    #[inline]
    fn for_each_near(&self, z: &[f64; 2 * MAX_DIM], mut f: impl FnMut(usize)) {
        if self.centers.is_empty() {
            return;
        }
        let dims = self.dims;
        let d = self.depth;
        let mut base = [0i64; 2 * MAX_DIM];
        for a in 0..dims {
            let i = ((z[a] - self.lo[a]) / self.bin).floor() as i64;
            if i < -d || i >= self.nb[a] as i64 + d {
                return;
            }
            base[a] = i;
        }
        let span = 2 * d as usize + 1;
        let combos = span.pow(dims as u32);
        'outer: for mut c in 0..combos {
            let mut key = 0usize;
            for a in 0..dims {
                let i = base[a] + (c % span) as i64 - d;
                c /= span;
                if i < 0 || i >= self.nb[a] as i64 {
                    continue 'outer;
                }
                key = key * self.nb[a] + i as usize;
            }
            for &it in &self.items[self.starts[key] as usize..self.starts[key + 1] as usize] {
                f(it as usize);
            }
        }
    }
}

/// Anything with a complex value and real gradient on C^n.
pub trait ComplexMap: Sync {
    fn dim(&self) -> usize;
    fn eval_grad(&self, z: &Point) -> (Complex64, Gradient);

    fn value(&self, z: &Point) -> Complex64 {
        self.eval_grad(z).0
    }
}

/// A section of the trivialized `L^k` as a finite bump sum.
#[derive(Clone, Debug)]
pub struct SectionField {
    model: ModelManifold,
    frame: ScaledFrame,
    bumps: Vec<Bump>,
    index: BumpIndex,
}

impl PartialEq for SectionField {
    fn eq(&self, other: &Self) -> bool {
        self.model == other.model && self.frame == other.frame && self.bumps == other.bumps
    }
}

/// Serialized form of a section: model, tensor power and flat bump records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionRecord {
    pub model: ModelManifold,
    pub k: u32,
    pub bumps: Vec<Bump>,
}

/// Representative of a torus center with coordinates in `[-1/2, 1/2)`, on
/// which conjugation is exact.
fn canonical_center(model: &ModelManifold, x: &Point) -> Point {
    if !model.is_torus() {
        return *x;
    }
    let w = |t: f64| t - (t + 0.5).floor();
    let mut out = *x;
    for c in out.0.iter_mut().take(model.n) {
        *c = Complex64::new(w(c.re), w(c.im));
    }
    out
}

impl SectionField {
    pub fn new(model: ModelManifold, frame: ScaledFrame, mut bumps: Vec<Bump>) -> Self {
        for b in bumps.iter_mut() {
            b.center = canonical_center(&model, &b.center);
        }
        let index = BumpIndex::build(&model, &frame, &bumps);
        Self {
            model,
            frame,
            bumps,
            index,
        }
    }

    pub fn zero(model: ModelManifold, frame: ScaledFrame) -> Self {
        Self::new(model, frame, Vec::new())
    }

    pub fn model(&self) -> &ModelManifold {
        &self.model
    }

    pub fn frame(&self) -> &ScaledFrame {
        &self.frame
    }

    pub fn bumps(&self) -> &[Bump] {
        &self.bumps
    }

    pub fn n(&self) -> usize {
        self.model.n
    }

    pub fn evaluate(&self, z: &Point) -> Complex64 {
        self.eval_grad(z).0
    }

    pub fn gradient(&self, z: &Point) -> Gradient {
        self.eval_grad(z).1
    }

    pub fn eval_grid(&self, grid: &GridSpec) -> Vec<(Complex64, Gradient)> {
        (0..grid.len())
            .into_par_iter()
            .map(|i| self.eval_grad(&grid.point(i)))
            .collect()
    }

    fn check_compatible(&self, other: &SectionField) -> Result<()> {
        if self.model != other.model || self.frame != other.frame {
            return Err(Error::Parameter(
                "sections live on different models or tensor powers".into(),
            ));
        }
        Ok(())
    }

    /// Structural sum: the bump lists are concatenated, then merged.
    pub fn add(&self, other: &SectionField) -> Result<SectionField> {
        self.check_compatible(other)?;
        let mut bumps = self.bumps.clone();
        bumps.extend(other.bumps.iter().cloned());
        Ok(Self::new(self.model, self.frame, merge_bumps(bumps)))
    }

    pub fn scaled(&self, a: Complex64) -> SectionField {
        let bumps = self
            .bumps
            .iter()
            .map(|b| Bump {
                coeff: b.coeff * a,
                ..b.clone()
            })
            .collect();
        Self::new(self.model, self.frame, bumps)
    }

    pub fn with_bumps(&self, extra: impl IntoIterator<Item = Bump>) -> SectionField {
        let mut bumps = self.bumps.clone();
        bumps.extend(extra);
        Self::new(self.model, self.frame, merge_bumps(bumps))
    }

    /// `kappa(s)(z) = conj(s(c(z)))`, realized on the bump data.
    pub fn kappa(&self) -> SectionField {
        let bumps = self
            .bumps
            .iter()
            .map(|b| Bump {
                center: canonical_center(&self.model, &b.center.conj()),
                coeff: b.coeff.conj(),
                model: b.model.conjugate(),
                width: b.width,
                cutoff: b.cutoff,
            })
            .collect();
        Self::new(self.model, self.frame, bumps)
    }

    /// `(s + kappa(s)) / 2`.
    pub fn symmetrize(&self) -> SectionField {
        let half = Complex64::new(0.5, 0.0);
        let mut bumps: Vec<Bump> = self.scaled(half).bumps;
        bumps.extend(self.kappa().scaled(half).bumps);
        Self::new(self.model, self.frame, merge_bumps(bumps))
    }

    /// Whether the bump list is closed under `(x, w, f) -> (c(x), conj w, conj f)`.
    pub fn is_structurally_symmetric(&self) -> bool {
        let k = self.kappa();
        let a = merge_bumps(self.bumps.clone());
        let b = merge_bumps(k.bumps.clone());
        a.len() == b.len() && a.iter().all(|x| b.iter().any(|y| bumps_close(x, y)))
    }

    pub fn symmetry_certificate(&self, grid: &GridSpec) -> SymmetryCertificate {
        let sup = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let z = grid.point(i);
                let cz = self.model.conj(&z);
                (self.evaluate(&z) - self.evaluate(&cz).conj()).norm()
            })
            .reduce(|| 0.0, f64::max);
        SymmetryCertificate { sup, grid: *grid }
    }

    pub fn record(&self) -> SectionRecord {
        SectionRecord {
            model: self.model,
            k: self.frame.k,
            bumps: self.bumps.clone(),
        }
    }

    pub fn from_record(rec: SectionRecord) -> Result<Self> {
        let frame = ScaledFrame::new(rec.k)?;
        Ok(Self::new(rec.model, frame, rec.bumps))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.record()).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let rec: SectionRecord = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_record(rec)
    }
}

impl ComplexMap for SectionField {
    fn dim(&self) -> usize {
        self.model.n
    }

    fn eval_grad(&self, z: &Point) -> (Complex64, Gradient) {
        let sk = self.frame.sqrt_k();
        let zr = self.model.reduce(z);
        let zi = zr.interleaved();
        let mut value = C0;
        let mut grad = Gradient::ZERO;
        self.index.for_each_near(&zi, |it| {
            let dz = zr - self.index.centers[it];
            if dz.norm_sq() >= self.index.reach2[it] {
                return;
            }
            let b = &self.bumps[self.index.owner[it] as usize];
            let (v, g) = b.eval_at(&dz, sk);
            value += v;
            grad = grad + g;
        });
        (value, grad)
    }
}

fn bumps_close(a: &Bump, b: &Bump) -> bool {
    a.model == b.model
        && a.width == b.width
        && a.cutoff == b.cutoff
        && (a.center - b.center).norm() < 1e-14
        && (a.coeff - b.coeff).norm() < 1e-14 * (1.0 + a.coeff.norm())
}

/// Combines bumps sharing center, model, width and cutoff; drops zeros.
fn merge_bumps(bumps: Vec<Bump>) -> Vec<Bump> {
    let mut out: Vec<Bump> = Vec::with_capacity(bumps.len());
    for b in bumps {
        if let Some(existing) = out.iter_mut().find(|e| {
            e.center == b.center && e.model == b.model && e.width == b.width && e.cutoff == b.cutoff
        }) {
            existing.coeff += b.coeff;
        } else {
            out.push(b);
        }
    }
    out.retain(|b| b.coeff != C0);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryCertificate {
    pub sup: f64,
    pub grid: GridSpec,
}

/// Polynomial envelope of the concentrated sections: `|sigma| <= p(d) e^{-d^2}`.
pub fn sigma_envelope(d: f64) -> f64 {
    (2.0 + 12.0 * d * d) * (-d * d).exp()
}

/// Concentrated section at `x`: a unit bump with cutoff `k^{1/6}`.
pub fn concentrated_sigma(model: &ModelManifold, frame: &ScaledFrame, x: &Point) -> Result<SectionField> {
    model.check_domain(x)?;
    let cutoff = frame.kf().powf(1.0 / 6.0);
    Ok(SectionField::new(
        *model,
        *frame,
        vec![Bump::new(*x, C1, BumpModel::Unit, CONCENTRATED_WIDTH, cutoff)],
    ))
}

/// The quadric bump `tau_k` centered at `x` with coefficient `w`.
pub fn tau_bump(x: &Point, w: Complex64, cutoff: f64) -> Bump {
    Bump::new(*x, w, BumpModel::Quadric, TAU_WIDTH, cutoff)
}
