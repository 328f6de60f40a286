//! Dense 2x2 complex matrices.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Row-major 2x2 complex matrix `[[a, b], [c, d]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub a: C64,
    pub b: C64,
    pub c: C64,
    pub d: C64,
}

impl Default for Mat2 {
    fn default() -> Self {
        Mat2::zero()
    }
}

impl Mat2 {
    pub const fn new(a: C64, b: C64, c: C64, d: C64) -> Self {
        Mat2 { a, b, c, d }
    }
    pub const fn zero() -> Self {
        Mat2::new(ZERO, ZERO, ZERO, ZERO)
    }
    pub const fn identity() -> Self {
        Mat2::new(ONE, ZERO, ZERO, ONE)
    }
    pub fn diag(u: C64, v: C64) -> Self {
        Mat2::new(u, ZERO, ZERO, v)
    }
    /// `off[u, v] = [[0, u], [v, 0]]`.
    pub fn off(u: C64, v: C64) -> Self {
        Mat2::new(ZERO, u, v, ZERO)
    }
    /// `off[1, 1]`.
    pub fn a_mat() -> Self {
        Mat2::off(ONE, ONE)
    }
    pub fn sigma1() -> Self {
        Mat2::off(ONE, ONE)
    }
    pub fn sigma2() -> Self {
        Mat2::off(-I, I)
    }
    pub fn sigma3() -> Self {
        Mat2::diag(ONE, -ONE)
    }
    pub fn scalar(s: C64) -> Self {
        Mat2::diag(s, s)
    }

    pub fn det(&self) -> C64 {
        self.a * self.d - self.b * self.c
    }
    pub fn trace(&self) -> C64 {
        self.a + self.d
    }
    pub fn scale(&self, s: C64) -> Self {
        Mat2::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }
    pub fn scale_re(&self, s: f64) -> Self {
        Mat2::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }
    /// Adjugate: `inv = adj / det`.
    pub fn adj(&self) -> Self {
        Mat2::new(self.d, -self.b, -self.c, self.a)
    }
    pub fn inv(&self) -> Option<Self> {
        let det = self.det();
        if det.norm() == 0.0 || !det.is_finite() {
            return None;
        }
        Some(self.adj().scale(det.inv()))
    }
    /// Conjugate transpose.
    pub fn h(&self) -> Self {
        Mat2::new(self.a.conj(), self.c.conj(), self.b.conj(), self.d.conj())
    }
    pub fn transpose(&self) -> Self {
        Mat2::new(self.a, self.c, self.b, self.d)
    }
    pub fn conj(&self) -> Self {
        Mat2::new(self.a.conj(), self.b.conj(), self.c.conj(), self.d.conj())
    }
    pub fn entries(&self) -> [C64; 4] {
        [self.a, self.b, self.c, self.d]
    }
    pub fn from_entries(e: [C64; 4]) -> Self {
        Mat2::new(e[0], e[1], e[2], e[3])
    }
    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.entries().iter().fold(0.0, |m, z| m.max(z.norm()))
    }
    pub fn frob(&self) -> f64 {
        self.entries().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
    pub fn is_finite(&self) -> bool {
        self.entries().iter().all(|z| z.is_finite())
    }
    pub fn commutator(&self, other: &Mat2) -> Mat2 {
        *self * *other - *other * *self
    }
    pub fn mul_vec(&self, v: [C64; 2]) -> [C64; 2] {
        [self.a * v[0] + self.b * v[1], self.c * v[0] + self.d * v[1]]
    }
    /// Trace-free part.
    pub fn trace_free(&self) -> Mat2 {
        let t = self.trace() * 0.5;
        *self - Mat2::scalar(t)
    }

    /// Matrix exponential via the Cayley-Hamilton closed form.
    pub fn exp(&self) -> Mat2 {
        let t = self.trace() * 0.5;
        let y = *self - Mat2::scalar(t);
        let mu2 = -y.det();
        let (ch, shc) = cosh_sinhc(mu2);
        (Mat2::scalar(ch) + y.scale(shc)).scale(t.exp())
    }

    /// Principal logarithm of a matrix with distinct or equal eigenvalues away from the
    /// negative real axis.
    pub fn log(&self) -> Option<Mat2> {
        let t = self.trace() * 0.5;
        let y = *self - Mat2::scalar(t);
        let disc = -y.det();
        let s = disc.sqrt();
        let (l1, l2) = (t + s, t - s);
        if l1.norm() == 0.0 || l2.norm() == 0.0 {
            return None;
        }
        if s.norm() < 1e-8 * t.norm().max(1.0) {
            // near-scalar: log(t) Id + y / t - y^2 / (2 t^2)
            let yt = y.scale(t.inv());
            return Some(Mat2::scalar(t.ln()) + yt - (yt * yt).scale_re(0.5));
        }
        let (g1, g2) = (l1.ln(), l2.ln());
        let a = (g1 + g2) * 0.5;
        let b = (g1 - g2) / (l1 - l2);
        Some(Mat2::scalar(a - b * t) + self.scale(b))
    }
}

/// `(cosh(sqrt(z)), sinh(sqrt(z))/sqrt(z))`, even in the root so no branch is needed.
pub fn cosh_sinhc(z: C64) -> (C64, C64) {
    if z.norm() < 1e-6 {
        let ch = ONE + z * 0.5 + z * z / 24.0 + z * z * z / 720.0;
        let sh = ONE + z / 6.0 + z * z / 120.0 + z * z * z / 5040.0;
        (ch, sh)
    } else {
        let m = z.sqrt();
        (m.cosh(), m.sinh() / m)
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)
    }
}
impl AddAssign for Mat2 {
    fn add_assign(&mut self, o: Mat2) {
        *self = *self + o;
    }
}
impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
    }
}
impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        Mat2::new(-self.a, -self.b, -self.c, -self.d)
    }
}
impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }
}
impl Mul<C64> for Mat2 {
    type Output = Mat2;
    fn mul(self, s: C64) -> Mat2 {
        self.scale(s)
    }
}
impl Mul<f64> for Mat2 {
    type Output = Mat2;
    fn mul(self, s: f64) -> Mat2 {
        self.scale_re(s)
    }
}

/// QR of a 2x2 matrix with `R` upper triangular and positive real diagonal.
pub fn qr_positive(m: &Mat2) -> Option<(Mat2, Mat2)> {
    let n1 = (m.a.norm_sqr() + m.c.norm_sqr()).sqrt();
    if n1 == 0.0 {
        return None;
    }
    let q1 = [m.a / n1, m.c / n1];
    let r12 = q1[0].conj() * m.b + q1[1].conj() * m.d;
    let v = [m.b - q1[0] * r12, m.d - q1[1] * r12];
    let n2 = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    if n2 == 0.0 {
        return None;
    }
    let q = Mat2::new(q1[0], v[0] / n2, q1[1], v[1] / n2);
    let r = Mat2::new(C64::new(n1, 0.0), r12, ZERO, C64::new(n2, 0.0));
    Some((q, r))
}

/// Cholesky factor `R` (upper triangular, positive diagonal) with `P = R^H R`.
pub fn cholesky_upper(p: &Mat2) -> Option<Mat2> {
    let r11 = p.a.re;
    if r11 <= 0.0 {
        return None;
    }
    let r11 = r11.sqrt();
    let r12 = p.b / r11;
    let r22 = p.d.re - r12.norm_sqr();
    if r22 <= 0.0 {
        return None;
    }
    Some(Mat2::new(C64::new(r11, 0.0), r12, ZERO, C64::new(r22.sqrt(), 0.0)))
}

/// Hermitian projection onto the line spanned by `(a, b)`.
pub fn projection(a: C64, b: C64) -> Mat2 {
    let n = a.norm_sqr() + b.norm_sqr();
    Mat2::new(
        C64::new(a.norm_sqr() / n, 0.0),
        a * b.conj() / n,
        a.conj() * b / n,
        C64::new(b.norm_sqr() / n, 0.0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(x: &Mat2, y: &Mat2, tol: f64) -> bool {
        (*x - *y).max_abs() <= tol
    }

    #[test]
    fn exp_of_i_pi_a_is_minus_identity() {
        let m = Mat2::a_mat().scale(c(0.0, std::f64::consts::PI)).exp();
        assert!(close(&m, &(-Mat2::identity()), 1e-14));
    }

    #[test]
    fn exp_matches_taylor() {
        let x = Mat2::new(c(0.3, 0.1), c(-0.2, 0.7), c(0.5, -0.4), c(-0.1, 0.2));
        let mut term = Mat2::identity();
        let mut sum = Mat2::identity();
        for k in 1..30 {
            term = (term * x).scale_re(1.0 / k as f64);
            sum += term;
        }
        assert!(close(&x.exp(), &sum, 1e-14));
    }

    #[test]
    fn log_inverts_exp() {
        let x = Mat2::new(c(0.3, 0.1), c(-0.2, 0.7), c(0.5, -0.4), c(-0.1, 0.2));
        let l = x.exp().log().unwrap();
        assert!(close(&l, &x, 1e-12));
    }

    #[test]
    fn qr_and_cholesky() {
        let m = Mat2::new(c(1.0, 2.0), c(0.5, -0.3), c(-0.7, 0.1), c(2.0, 0.4));
        let (q, r) = qr_positive(&m).unwrap();
        assert!(close(&(q * r), &m, 1e-14));
        assert!(close(&(q.h() * q), &Mat2::identity(), 1e-14));
        assert_eq!(r.c, ZERO);
        let p = m.h() * m;
        let rc = cholesky_upper(&p).unwrap();
        assert!(close(&(rc.h() * rc), &p, 1e-13));
    }

    #[test]
    fn projection_is_idempotent() {
        let p = projection(c(1.0, 0.0), c(1.0, 0.0));
        assert!(close(&p, &Mat2::new(c(0.5, 0.), c(0.5, 0.), c(0.5, 0.), c(0.5, 0.)), 1e-15));
        let q = projection(c(0.3, -0.2), c(1.1, 0.4));
        assert!(close(&(q * q), &q, 1e-14));
    }
}
