use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Largest complex dimension handled by the models.
pub const MAX_DIM: usize = 3;

/// A point of C^n stored in a fixed array; coordinates past `n` are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point(pub [Complex64; MAX_DIM]);

impl Point {
    pub const ORIGIN: Point = Point([Complex64::new(0.0, 0.0); MAX_DIM]);

    pub fn from_complex(coords: &[Complex64]) -> Self {
        let mut p = Self::ORIGIN;
        p.0[..coords.len()].copy_from_slice(coords);
        p
    }

    pub fn from_real(coords: &[f64]) -> Self {
        let mut p = Self::ORIGIN;
        for (c, &x) in p.0.iter_mut().zip(coords) {
            *c = Complex64::new(x, 0.0);
        }
        p
    }

    /// Interleaved real coordinates `(x1, y1, x2, y2, ...)`.
    pub fn from_interleaved(reals: &[f64]) -> Self {
        let mut p = Self::ORIGIN;
        for (j, pair) in reals.chunks(2).enumerate() {
            p.0[j] = Complex64::new(pair[0], pair.get(1).copied().unwrap_or(0.0));
        }
        p
    }

    pub fn interleaved(&self) -> [f64; 2 * MAX_DIM] {
        let mut out = [0.0; 2 * MAX_DIM];
        for (j, c) in self.0.iter().enumerate() {
            out[2 * j] = c.re;
            out[2 * j + 1] = c.im;
        }
        out
    }

    pub fn conj(&self) -> Self {
        Point(self.0.map(|c| c.conj()))
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, a: f64) -> Self {
        Point(self.0.map(|c| c * a))
    }

    pub fn max_imag_abs(&self) -> f64 {
        self.0.iter().map(|c| c.im.abs()).fold(0.0, f64::max)
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        let mut out = self;
        for (a, b) in out.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
        out
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        let mut out = self;
        for (a, b) in out.0.iter_mut().zip(rhs.0) {
            *a -= b;
        }
        out
    }
}

/// Real partial derivatives of a complex scalar: `dx[j] = ds/dRe z_j`, `dy[j] = ds/dIm z_j`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Gradient {
    pub dx: [Complex64; MAX_DIM],
    pub dy: [Complex64; MAX_DIM],
}

impl Gradient {
    pub const ZERO: Gradient = Gradient {
        dx: [Complex64::new(0.0, 0.0); MAX_DIM],
        dy: [Complex64::new(0.0, 0.0); MAX_DIM],
    };

    /// Gradient of a holomorphic function with complex partials `d`.
    pub fn holo_only(d: &[Complex64]) -> Gradient {
        let mut g = Gradient::ZERO;
        for (j, v) in d.iter().enumerate().take(MAX_DIM) {
            g.dx[j] = *v;
            g.dy[j] = Complex64::i() * v;
        }
        g
    }

    /// Holomorphic part `(d/dx - i d/dy) / 2` per coordinate.
    pub fn holo(&self, j: usize) -> Complex64 {
        (self.dx[j] - Complex64::i() * self.dy[j]) * 0.5
    }

    /// Antiholomorphic part `(d/dx + i d/dy) / 2` per coordinate.
    pub fn antiholo(&self, j: usize) -> Complex64 {
        (self.dx[j] + Complex64::i() * self.dy[j]) * 0.5
    }

    /// Norm of the real differential, normalized so that a holomorphic
    /// function has `|grad| = |ds/dz|`.
    pub fn norm(&self) -> f64 {
        let s: f64 = self
            .dx
            .iter()
            .chain(self.dy.iter())
            .map(|c| c.norm_sqr())
            .sum();
        (0.5 * s).sqrt()
    }

    pub fn holo_norm(&self, n: usize) -> f64 {
        (0..n).map(|j| self.holo(j).norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn antiholo_norm(&self, n: usize) -> f64 {
        (0..n).map(|j| self.antiholo(j).norm_sqr()).sum::<f64>().sqrt()
    }

    /// Real 2 x 2n Jacobian rows `(Re, Im)` against interleaved coordinates.
    pub fn real_jacobian(&self, n: usize) -> [[f64; 2 * MAX_DIM]; 2] {
        let mut out = [[0.0; 2 * MAX_DIM]; 2];
        for j in 0..n {
            out[0][2 * j] = self.dx[j].re;
            out[1][2 * j] = self.dx[j].im;
            out[0][2 * j + 1] = self.dy[j].re;
            out[1][2 * j + 1] = self.dy[j].im;
        }
        out
    }

    /// Smaller singular value of the real 2 x 2n differential.
    pub fn min_singular(&self, n: usize) -> f64 {
        let jac = self.real_jacobian(n);
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for i in 0..2 * n {
            a += jac[0][i] * jac[0][i];
            b += jac[0][i] * jac[1][i];
            c += jac[1][i] * jac[1][i];
        }
        let tr = a + c;
        let det = a * c - b * b;
        let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
        (0.5 * tr - disc).max(0.0).sqrt()
    }
}

impl Add for Gradient {
    type Output = Gradient;
    fn add(self, rhs: Gradient) -> Gradient {
        let mut out = self;
        for j in 0..MAX_DIM {
            out.dx[j] += rhs.dx[j];
            out.dy[j] += rhs.dy[j];
        }
        out
    }
}

impl Mul<Complex64> for Gradient {
    type Output = Gradient;
    fn mul(self, a: Complex64) -> Gradient {
        Gradient {
            dx: self.dx.map(|c| c * a),
            dy: self.dy.map(|c| c * a),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holomorphic_gradient_norm() {
        // s = 3z at any point: dx = 3, dy = 3i
        let mut g = Gradient::ZERO;
        g.dx[0] = Complex64::new(3.0, 0.0);
        g.dy[0] = Complex64::new(0.0, 3.0);
        assert!((g.norm() - 3.0).abs() < 1e-15);
        assert!((g.holo(0) - Complex64::new(3.0, 0.0)).norm() < 1e-15);
        assert!(g.antiholo(0).norm() < 1e-15);
        assert!((g.min_singular(1) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn interleave_roundtrip() {
        let p = Point::from_interleaved(&[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(Point::from_interleaved(&p.interleaved()), p);
        assert_eq!(p.conj().conj(), p);
    }
}
