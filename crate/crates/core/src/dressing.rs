//! Dressing action: generic positive-loop dressing, simple factors and their closed-form
//! dressing, invariance of monodromies, Delaunay and Blaschke dressing matrices, flows.

use crate::dpw::FrameField;
use crate::error::{Error, Result};
use crate::factorization::{iwasawa_twisted, r_iwasawa_twisted, IwasawaOptions, RIwasawaOptions};
use crate::loopcore::{Annulus, CircleGrid, Loop};
use crate::mat2::{c, projection, qr_positive, Mat2, I, ONE, ZERO};
use crate::monodromy::spectral_set;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A complex line `[a : b]` in `C^2`, stored with unit norm and first nonzero entry real positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line {
    pub a: C64,
    pub b: C64,
}

impl Line {
    pub fn new(a: C64, b: C64) -> Result<Line> {
        let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Domain("a line needs a nonzero vector".into()));
        }
        let lead = if a.norm() > 1e-300 { a } else { b };
        let phase = lead.conj() / lead.norm();
        Ok(Line { a: a * phase / n, b: b * phase / n })
    }
    pub fn canonical() -> Line {
        Line { a: ONE, b: ZERO }
    }
    /// `[e^{i theta} : 1]`.
    pub fn balanced(theta: f64) -> Line {
        Line::new(C64::from_polar(1.0, theta), ONE).expect("nonzero")
    }
    pub fn projection(&self) -> Mat2 {
        projection(self.a, self.b)
    }
    /// Image of the line under a matrix.
    pub fn apply(&self, m: &Mat2) -> Result<Line> {
        let v = m.mul_vec([self.a, self.b]);
        Line::new(v[0], v[1])
    }
    /// Chordal distance `sqrt(1 - |<u, v>|^2)` on `CP^1`.
    pub fn distance(&self, o: &Line) -> f64 {
        // |u ^ v| equals sqrt(1 - |<u, v>|^2) for unit vectors, without the cancellation
        (self.a * o.b - self.b * o.a).norm()
    }
}

pub fn hermitian_projection(l: &Line) -> Mat2 {
    l.projection()
}

/// Blaschke factor `(alpha - lambda) / (1 - conj(alpha) lambda)`.
pub fn moebius(alpha: C64, lambda: C64) -> C64 {
    (alpha - lambda) / (ONE - alpha.conj() * lambda)
}

/// `pi_L + tau_alpha pi_L^perp`.
pub fn psi(alpha: C64, line: &Line, lambda: C64) -> Mat2 {
    let p = line.projection();
    p + (Mat2::identity() - p).scale(moebius(alpha, lambda))
}

pub fn psi_inv(alpha: C64, line: &Line, lambda: C64) -> Mat2 {
    let p = line.projection();
    p + (Mat2::identity() - p).scale(moebius(alpha, lambda).inv())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Untwisted,
    TwistedDiagonal,
    TwistedOffdiagonal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimpleFactor {
    pub kind: FactorKind,
    pub alpha: C64,
    /// Defining line of the untwisted factor.
    pub line: Line,
    /// Angle of the line `[e^{i theta} : 1]` for the off-diagonal twisted kind.
    pub theta: f64,
}

/// Config record for a simple factor.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SimpleFactorRecord {
    pub kind: FactorKind,
    pub alpha: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<[f64; 4]>,
}

fn check_alpha(alpha: C64) -> Result<()> {
    let m = alpha.norm();
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::Domain(format!("|alpha| = {m} must lie in (0, 1)")));
    }
    Ok(())
}

impl SimpleFactor {
    pub fn untwisted(alpha: C64, line: Line) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(SimpleFactor { kind: FactorKind::Untwisted, alpha, line, theta: 0.0 })
    }
    pub fn twisted_diagonal(alpha: C64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(SimpleFactor { kind: FactorKind::TwistedDiagonal, alpha, line: Line::canonical(), theta: 0.0 })
    }
    pub fn twisted_offdiagonal(alpha: C64, theta: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(SimpleFactor { kind: FactorKind::TwistedOffdiagonal, alpha, line: Line::balanced(theta), theta })
    }
    pub fn from_record(r: &SimpleFactorRecord) -> Result<Self> {
        let alpha = c(r.alpha[0], r.alpha[1]);
        match r.kind {
            FactorKind::Untwisted => {
                let l = r.line.ok_or_else(|| Error::Domain("untwisted factor needs a line".into()))?;
                SimpleFactor::untwisted(alpha, Line::new(c(l[0], l[1]), c(l[2], l[3]))?)
            }
            FactorKind::TwistedDiagonal => SimpleFactor::twisted_diagonal(alpha),
            FactorKind::TwistedOffdiagonal => SimpleFactor::twisted_offdiagonal(alpha, r.theta.unwrap_or(0.0)),
        }
    }
    pub fn to_record(&self) -> SimpleFactorRecord {
        let alpha = [self.alpha.re, self.alpha.im];
        match self.kind {
            FactorKind::Untwisted => SimpleFactorRecord {
                kind: self.kind,
                alpha,
                theta: None,
                line: Some([self.line.a.re, self.line.a.im, self.line.b.re, self.line.b.im]),
            },
            FactorKind::TwistedDiagonal => SimpleFactorRecord { kind: self.kind, alpha, theta: None, line: None },
            FactorKind::TwistedOffdiagonal => SimpleFactorRecord { kind: self.kind, alpha, theta: Some(self.theta), line: None },
        }
    }
    pub fn is_twisted(&self) -> bool {
        self.kind != FactorKind::Untwisted
    }
    /// Default radius for positive-loop use.
    pub fn working_radius(&self) -> f64 {
        0.8 * self.alpha.norm()
    }

    /// Value at `lambda`. Twisted kinds are `s (sigma psi) psi` with
    /// `s^2 = (1 - conj(alpha)^2 lambda^2) / (alpha^2 - lambda^2)`; the branch of `s`
    /// is `1/alpha` at `0` inside `|alpha|` and `i/lambda` near infinity outside.
    pub fn eval(&self, lambda: C64) -> Result<Mat2> {
        match self.kind {
            FactorKind::Untwisted => Ok(psi(self.alpha, &self.line, lambda)),
            _ => {
                let s = twisted_scalar(self.alpha, lambda)?;
                let sigma_psi = Mat2::sigma3() * psi(self.alpha, &self.line, -lambda) * Mat2::sigma3();
                Ok((sigma_psi * psi(self.alpha, &self.line, lambda)).scale(s))
            }
        }
    }

    /// Samples on a circle; the circle must avoid `|alpha|` (and `1/|alpha|`).
    pub fn on_grid(&self, grid: CircleGrid) -> Result<Loop> {
        let r = grid.radius;
        let m = self.alpha.norm();
        if (r - m).abs() < 1e-9 || (r - 1.0 / m).abs() < 1e-9 {
            return Err(Error::Domain(format!("circle of radius {r} passes through a singularity")));
        }
        let annulus = if r < m { Annulus::new(0.0, m) } else { Annulus::new(m, 1.0 / m) };
        let samples = grid.points().into_iter().map(|l| self.eval(l)).collect::<Result<Vec<_>>>()?;
        Loop::from_samples(grid, annulus, samples)
    }
}

/// `sqrt((1 - conj(a)^2 l^2) / (a^2 - l^2))` on the region containing `lambda`.
fn twisted_scalar(alpha: C64, lambda: C64) -> Result<C64> {
    let m = alpha.norm();
    let r = lambda.norm();
    let ab = alpha.conj();
    if (r - m).abs() < 1e-12 || (r * m - 1.0).abs() < 1e-12 {
        return Err(Error::Domain(format!("lambda = {lambda} on a branch circle")));
    }
    if r < m {
        Ok((ONE - ab * ab * lambda * lambda).sqrt() / (ONE - lambda * lambda / (alpha * alpha)).sqrt() / alpha)
    } else if r * m < 1.0 {
        Ok(I / lambda * (ONE - ab * ab * lambda * lambda).sqrt() / (ONE - alpha * alpha / (lambda * lambda)).sqrt())
    } else {
        // |lambda| > 1/|alpha|: both factors expanded at infinity
        let v = (ONE - ONE / (ab * ab * lambda * lambda)).sqrt() / (ONE - alpha * alpha / (lambda * lambda)).sqrt();
        Ok(-ab * v)
    }
}

pub fn simple_factor(sf: &SimpleFactor, grid: CircleGrid) -> Result<Loop> {
    sf.on_grid(grid)
}

/// Unitary frame of a single loop with `B(0)` upper triangular and positive on the diagonal.
fn normalize_right(u: Loop, p0: &Mat2) -> Result<Loop> {
    let (q, _) = qr_positive(p0).ok_or_else(|| Error::Numeric("singular positive factor at 0".into()))?;
    Ok(u.map(|x| *x * q))
}

/// Closed-form dressing of one unitary loop (given on the unit circle and analytic on an
/// annulus containing `|alpha|`) by a simple factor. The result is the unitary Iwasawa
/// factor of `g F` with the standard normalization of the positive factor.
pub fn simple_dress_loop(sf: &SimpleFactor, f: &Loop) -> Result<Loop> {
    let alpha = sf.alpha;
    if !f.annulus().contains(alpha.norm()) {
        return Err(Error::Domain(format!("alpha = {alpha} outside the frame's annulus")));
    }
    let grid = *f.grid();
    let fa = f.eval(alpha)?;
    let l = sf.line;
    let l1 = l.apply(&fa.h())?;
    match sf.kind {
        FactorKind::Untwisted => {
            let u = Loop::from_samples(
                grid,
                f.annulus(),
                grid.points()
                    .iter()
                    .zip(f.samples())
                    .map(|(lam, x)| psi(alpha, &l, *lam) * *x * psi_inv(alpha, &l1, *lam))
                    .collect(),
            )?;
            let p0 = psi(alpha, &l1, ZERO);
            normalize_right(u, &p0)
        }
        _ => {
            let lt = l.apply(&Mat2::sigma3())?;
            let pt = lt.projection();
            let refl = pt - (Mat2::identity() - pt);
            let w_at = |lam: C64, x: &Mat2| refl * psi(alpha, &l, lam) * *x * psi_inv(alpha, &l1, lam);
            let fm = f.eval(-alpha)?;
            let l2 = lt.apply(&w_at(-alpha, &fm).h())?;
            let u = Loop::from_samples(
                grid,
                f.annulus(),
                grid.points()
                    .iter()
                    .zip(f.samples())
                    .map(|(lam, x)| (psi(-alpha, &lt, *lam) * w_at(*lam, x) * psi_inv(-alpha, &l2, *lam)).scale(I))
                    .collect(),
            )?;
            // positive factor -i s psi_{-alpha, L2} psi_{alpha, L1} at lambda = 0
            let p0 = (psi(-alpha, &l2, ZERO) * psi(alpha, &l1, ZERO)).scale(-I / alpha);
            normalize_right(u, &p0)
        }
    }
}

/// Positive factor of the closed-form dressing on a circle inside `|alpha|`.
pub fn simple_dress_positive(sf: &SimpleFactor, f: &Loop, grid: CircleGrid) -> Result<Loop> {
    let alpha = sf.alpha;
    let fa = f.eval(alpha)?;
    let l1 = sf.line.apply(&fa.h())?;
    let vals: Vec<Mat2> = match sf.kind {
        FactorKind::Untwisted => grid.points().iter().map(|lam| psi(alpha, &l1, *lam)).collect(),
        _ => {
            let lt = sf.line.apply(&Mat2::sigma3())?;
            let pt = lt.projection();
            let refl = pt - (Mat2::identity() - pt);
            let fm = f.eval(-alpha)?;
            let w = refl * psi(alpha, &sf.line, -alpha) * fm * psi_inv(alpha, &l1, -alpha);
            let l2 = lt.apply(&w.h())?;
            grid.points()
                .iter()
                .map(|lam| Ok((psi(-alpha, &l2, *lam) * psi(alpha, &l1, *lam)).scale(-I * twisted_scalar(alpha, *lam)?)))
                .collect::<Result<_>>()?
        }
    };
    let p0 = match sf.kind {
        FactorKind::Untwisted => psi(alpha, &l1, ZERO),
        _ => {
            let lt = sf.line.apply(&Mat2::sigma3())?;
            let pt = lt.projection();
            let refl = pt - (Mat2::identity() - pt);
            let fm = f.eval(-alpha)?;
            let w = refl * psi(alpha, &sf.line, -alpha) * fm * psi_inv(alpha, &l1, -alpha);
            let l2 = lt.apply(&w.h())?;
            (psi(-alpha, &l2, ZERO) * psi(alpha, &l1, ZERO)).scale(-I / alpha)
        }
    };
    let (q, _) = qr_positive(&p0).ok_or_else(|| Error::Numeric("singular positive factor at 0".into()))?;
    let qh = q.h();
    Loop::from_samples(grid, Annulus::new(0.0, alpha.norm()), vals.iter().map(|x| qh * *x).collect())
}

fn renormalize(unitary: Vec<Loop>, base: usize) -> Result<Vec<Loop>> {
    let inv = unitary[base].inv()?;
    unitary.iter().map(|u| inv.mul(u)).collect()
}

/// Closed-form simple-factor dressing of a frame field, renormalized at the base point.
pub fn simple_dress(sf: &SimpleFactor, frames: &FrameField) -> Result<FrameField> {
    let raw = frames.unitary.par_iter().map(|f| simple_dress_loop(sf, f)).collect::<Result<Vec<_>>>()?;
    let base = frames.grid.index(frames.base.0, frames.base.1);
    let unitary = renormalize(raw, base)?;
    let count = frames.unitary[0].grid().count;
    let pgrid = CircleGrid::new(sf.working_radius(), count)?;
    let positive =
        frames.unitary.par_iter().map(|f| simple_dress_positive(sf, f, pgrid)).collect::<Result<Vec<_>>>()?;
    let residual = unitary.iter().fold(0.0f64, |m, u| m.max(u.unitarity_residual()));
    Ok(FrameField { grid: frames.grid, base: frames.base, phi: frames.phi.clone(), unitary, positive, residual })
}

/// Tolerance of the pointwise factorizations in [`dress`]. Moving unit-circle data onto an
/// inner circle loses the coefficients below the rounding floor, so this sits above the
/// factorization default.
pub const TOL_DRESS: f64 = 1e-6;

/// Numerical dressing of one unitary loop: Iwasawa factor of `h F`, with `h` given on its
/// own circle (inside the unit circle for positive loops). Returns the factors and the
/// factorization residual.
pub fn dress_loop(h: &Loop, f: &Loop) -> Result<(Loop, Loop, f64)> {
    let hg = *h.grid();
    if (hg.radius - 1.0).abs() < 1e-15 {
        let p = iwasawa_twisted(&h.mul(f)?, &IwasawaOptions { tol: TOL_DRESS, ..Default::default() })?;
        return Ok((p.unitary, p.positive, p.residual));
    }
    let fr = f.resample(hg)?;
    let (p, _) = r_iwasawa_twisted(&h.mul(&fr)?, &RIwasawaOptions { tol: TOL_DRESS, ..Default::default() })?;
    Ok((p.unitary, p.positive, p.residual))
}

/// `h # F`: pointwise Iwasawa of `h F` with `F(base) = Id` restored afterwards.
#[derive(Clone, Debug)]
pub struct Dressed {
    pub frames: FrameField,
    /// `|B(base) - h| / |h|` on the circle of `h`.
    pub base_residual: f64,
    /// Largest pointwise factorization residual.
    pub factor_residual: f64,
}

pub fn dress(h: &Loop, frames: &FrameField) -> Result<Dressed> {
    if !h.annulus().contains(h.grid().radius) {
        return Err(Error::Domain("h is not analytic on its circle".into()));
    }
    let parts = frames.unitary.par_iter().map(|f| dress_loop(h, f)).collect::<Result<Vec<_>>>()?;
    let base = frames.grid.index(frames.base.0, frames.base.1);
    let base_residual = parts[base].1.resample(*h.grid()).map(|b| b.max_dist(h) / h.max_abs().max(1.0)).unwrap_or(f64::NAN);
    let factor_residual = parts.iter().fold(0.0f64, |m, p| m.max(p.2));
    let (raw, positive): (Vec<Loop>, Vec<Loop>) = parts.into_iter().map(|(u, p, _)| (u, p)).unzip();
    let unitary = renormalize(raw, base)?;
    let residual = unitary.iter().fold(factor_residual, |m, u| m.max(u.unitarity_residual()));
    Ok(Dressed {
        frames: FrameField { grid: frames.grid, base: frames.base, phi: frames.phi.clone(), unitary, positive, residual },
        base_residual,
        factor_residual,
    })
}

/// `psi_{alpha, L(lambda)} U psi^{-1}_{alpha, conj(U(alpha))^t L(alpha)}` for a holomorphic
/// line family given by an unnormalized vector `(a(lambda), b(lambda))`.
pub fn generalized_simple_dress(alpha: C64, line: impl Fn(C64) -> (C64, C64), u: &Loop) -> Result<Loop> {
    check_alpha(alpha)?;
    let grid = *u.grid();
    let (a0, b0) = line(alpha);
    let la = Line::new(a0, b0)?;
    let l1 = la.apply(&u.eval(alpha)?.h())?;
    let samples = grid
        .points()
        .iter()
        .zip(u.samples())
        .map(|(lam, x)| {
            let (a, b) = line(*lam);
            let l = Line::new(a, b)?;
            Ok(psi(alpha, &l, *lam) * *x * psi_inv(alpha, &l1, *lam))
        })
        .collect::<Result<Vec<_>>>()?;
    Loop::from_samples(grid, u.annulus(), samples)
}

/// Projective distance between `conj(chi(alpha))^t L` and `L`.
pub fn invariance_check(chi: &Loop, alpha: C64, line: &Line) -> Result<f64> {
    let m = chi.eval(alpha)?;
    Ok(line.apply(&m.h())?.distance(line))
}

/// Diagonal dressing matrix taking the vacuum to a Delaunay surface.
#[derive(Clone, Debug)]
pub struct DelaunayDress {
    pub h: Loop,
    pub q: C64,
    /// `|p_q h A h^{-1} - 2 pi i D|` relative, on the working circle.
    pub identity_residual: f64,
    /// Largest admissible working radius.
    pub rho: f64,
}

/// `N = wA + wB lambda^2`, `D = wB + wA lambda^2`; principal roots, valid for `|lambda| < rho`.
fn delaunay_roots(wa: f64, wb: f64, lambda: C64) -> (C64, C64) {
    let l2 = lambda * lambda;
    ((c(wa, 0.0) + l2 * wb).sqrt(), (c(wb, 0.0) + l2 * wa).sqrt())
}

pub fn delaunay_residue(wa: f64, wb: f64, lambda: C64) -> Mat2 {
    Mat2::off(lambda.inv() * wa + lambda * wb, lambda.inv() * wb + lambda * wa)
}

/// `p_q = 2 pi i sqrt((wA + wB l^2)(wB + wA l^2)) / l` on the working circle.
pub fn delaunay_p(wa: f64, wb: f64, lambda: C64) -> C64 {
    let (sn, sd) = delaunay_roots(wa, wb, lambda);
    c(0.0, 2.0 * std::f64::consts::PI) * sn * sd / lambda
}

pub fn delaunay_dress_matrix(wa: f64, wb: f64, grid: CircleGrid) -> Result<DelaunayDress> {
    if !(wa > 0.0 && wb > 0.0) {
        return Err(Error::Domain(format!("weights must be positive, got ({wa}, {wb})")));
    }
    if (wa + wb - 0.5).abs() > 1e-12 {
        return Err(Error::Domain(format!("weights must sum to 1/2, got {}", wa + wb)));
    }
    let rho = (wa / wb).sqrt().min((wb / wa).sqrt());
    if grid.radius >= rho {
        return Err(Error::Domain(format!("working radius {} must be below {rho}", grid.radius)));
    }
    let h = Loop::from_fn(grid, Annulus::new(0.0, rho), |l| {
        let (sn, sd) = delaunay_roots(wa, wb, l);
        let a = sn.sqrt() / sd.sqrt();
        Mat2::diag(a, a.inv())
    });
    let q = c(0.0, 2.0 * std::f64::consts::PI * (wa * wb).sqrt());
    let mut worst = 0.0f64;
    for (l, hv) in grid.points().iter().zip(h.samples()) {
        let hah = *hv * Mat2::a_mat() * hv.inv().expect("det 1");
        let lhs = hah.scale(delaunay_p(wa, wb, *l));
        let rhs = delaunay_residue(wa, wb, *l).scale(c(0.0, 2.0 * std::f64::consts::PI));
        worst = worst.max((lhs - rhs).max_abs() / rhs.max_abs().max(1.0));
    }
    Ok(DelaunayDress { h, q, identity_residual: worst, rho })
}

/// Diagonal twisted dressing matrix `diag(a, 1/a)` with `a^2` the Blaschke product
/// `prod (alpha_j^2 - l^2) / (1 - conj(alpha_j)^2 l^2)`.
#[derive(Clone, Debug)]
pub struct BlaschkeDress {
    pub h: Loop,
    /// False when some `alpha_j` is not in the spectral set of `q` (within `1e-9`).
    pub spectral: bool,
    pub offenders: Vec<C64>,
}

/// `a^2(lambda)` for the Blaschke dressing.
pub fn blaschke_a2(alphas: &[C64], lambda: C64) -> C64 {
    alphas.iter().fold(ONE, |acc, a| {
        let l2 = lambda * lambda;
        acc * (a * a - l2) / (ONE - a.conj() * a.conj() * l2)
    })
}

pub fn blaschke_dressing(alphas: &[C64], q: C64, grid: CircleGrid) -> Result<BlaschkeDress> {
    for a in alphas {
        check_alpha(*a)?;
    }
    let r = grid.radius;
    let rmin = alphas.iter().fold(1.0f64, |m, a| m.min(a.norm()));
    if !alphas.is_empty() && r >= rmin {
        return Err(Error::Domain(format!("working radius {r} must be below min |alpha_j| = {rmin}")));
    }
    let set = spectral_set(q, r.min(rmin).max(1e-6))?;
    let offenders: Vec<C64> = alphas.iter().copied().filter(|a| !set.iter().any(|s| (s - a).norm() < 1e-9)).collect();
    // a = prod of the per-factor roots, each continuous for |lambda| < |alpha_j|
    let h = Loop::from_fn(grid, Annulus::new(0.0, rmin), |l| {
        let a = alphas.iter().fold(ONE, |acc, al| {
            let l2 = l * l;
            acc * al * (ONE - l2 / (al * al)).sqrt() / (ONE - al.conj() * al.conj() * l2).sqrt()
        });
        Mat2::diag(a, a.inv())
    });
    Ok(BlaschkeDress { h, spectral: offenders.is_empty(), offenders })
}

/// `zeta(lambda) = sum_j (phi_j l^{-j} - conj(phi_j) l^j)` over odd `j = 1, 3, 5, ...`.
pub fn flow_exponent(phi: &[C64], lambda: C64) -> C64 {
    phi.iter().enumerate().fold(ZERO, |acc, (k, p)| {
        let j = 2 * k as i32 + 1;
        acc + p * lambda.powi(-j) - p.conj() * lambda.powi(j)
    })
}

/// Dressing by the unitary loop `exp(t zeta A)`; optionally renormalized at the base point.
pub fn flow(frames: &FrameField, phi: &[C64], t: f64, renormalize_base: bool) -> Result<FrameField> {
    let grid = *frames.unitary[0].grid();
    let e = Loop::from_fn(grid, Annulus::punctured(), |l| Mat2::a_mat().scale(flow_exponent(phi, l) * t).exp());
    let raw = frames.unitary.iter().map(|f| e.mul(f)).collect::<Result<Vec<_>>>()?;
    let base = frames.grid.index(frames.base.0, frames.base.1);
    let unitary = if renormalize_base { renormalize(raw, base)? } else { raw };
    let residual = unitary.iter().fold(0.0f64, |m, u| m.max(u.unitarity_residual()));
    Ok(FrameField {
        grid: frames.grid,
        base: frames.base,
        phi: frames.phi.clone(),
        unitary,
        positive: frames.positive.clone(),
        residual,
    })
}

/// Residual of `X` being an element of the loop group of `C^*` with unitary values on the
/// unit circle: Laurent series on neighbouring circles of radii between `r` and `1/r` must
/// agree (no singularities in between) and `X^* X = Id` on the unit circle.
pub fn loop_group_membership(x: impl Fn(C64) -> Mat2 + Sync, r: f64, rings: usize, count: usize) -> Result<f64> {
    if !(r > 0.0 && r < 1.0) || rings < 2 {
        return Err(Error::Domain("need 0 < r < 1 and at least two rings".into()));
    }
    let radii: Vec<f64> = (0..=rings).map(|k| r * (1.0 / (r * r)).powf(k as f64 / rings as f64)).collect();
    let loops: Vec<Loop> = radii
        .iter()
        .map(|rad| Ok(Loop::from_fn(CircleGrid::new(*rad, count)?, Annulus::punctured(), &x)))
        .collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    for k in 0..rings {
        // both series continued to the middle circle
        let mid = CircleGrid::new((radii[k] * radii[k + 1]).sqrt(), count)?;
        let (a, b) = (loops[k].resample(mid)?, loops[k + 1].resample(mid)?);
        worst = worst.max(a.max_dist(&b) / a.max_abs().max(b.max_abs()).max(1.0));
    }
    let unit = Loop::from_fn(CircleGrid::unit(count)?, Annulus::punctured(), &x);
    Ok(worst.max(unit.unitarity_residual()))
}
