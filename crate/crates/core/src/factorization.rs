//! Scalar Birkhoff splitting, square roots on circles, and Iwasawa factorizations.
//!
//! [`iwasawa`] works on the unit circle with Bauer's block-Toeplitz Cholesky method.
//! [`r_iwasawa`] handles loops known only on a circle `C_rho` with `rho < 1`: the unitary
//! factor is sought as a Laurent series on the annulus `rho < |lambda| < 1/rho`, which
//! turns the factorization into a linear least-squares problem on the two circles
//! `C_rho` and `C_{1/rho}`.

use crate::error::{Error, Result};
use crate::loopcore::{dft_coefficients, synthesize, Annulus, CircleGrid, Loop, ScalarLoop};
use crate::mat2::{cholesky_upper, qr_positive, Mat2, ZERO};
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use std::f64::consts::PI;

pub const TOL_FAC: f64 = 1e-9;
const TOL_ZERO: f64 = 1e-12;

/// Number of turns of a nonvanishing scalar loop around the origin.
pub fn winding_number(f: &ScalarLoop) -> Result<i32> {
    let s = f.samples();
    let scale = f.max_abs();
    let min = f.min_abs();
    if !(min > TOL_ZERO * scale.max(1e-300)) {
        return Err(Error::IllConditioned(format!("loop nearly vanishes (min |f| = {min:e})")));
    }
    let mut total = 0.0;
    for m in 0..s.len() {
        let r = s[(m + 1) % s.len()] / s[m];
        let step = r.arg();
        if step.abs() > 0.9 * PI {
            return Err(Error::IllConditioned("phase jump too large for the sampling".into()));
        }
        total += step;
    }
    Ok((total / (2.0 * PI)).round() as i32)
}

/// Continuous logarithm of `f(lambda) lambda^{-n}` along the sampled circle.
pub fn continuous_log(f: &ScalarLoop, n: i32) -> Vec<C64> {
    let pts = f.grid().points();
    let mut out = Vec::with_capacity(pts.len());
    let mut prev_arg = 0.0;
    for (m, (z, l)) in f.samples().iter().zip(&pts).enumerate() {
        let h = z * l.powi(-n);
        let mut a = h.arg();
        if m > 0 {
            while a - prev_arg > PI {
                a -= 2.0 * PI;
            }
            while a - prev_arg < -PI {
                a += 2.0 * PI;
            }
        }
        prev_arg = a;
        out.push(C64::new(h.norm().ln(), a));
    }
    out
}

/// `f = c0 * minus * lambda^N * plus` with `minus(inf) = 1` and `plus(0) = 1`.
#[derive(Clone, Debug)]
pub struct BirkhoffSplit {
    pub c0: C64,
    pub minus: ScalarLoop,
    pub winding: i32,
    pub plus: ScalarLoop,
}

impl BirkhoffSplit {
    pub fn reconstruct(&self) -> ScalarLoop {
        let grid = *self.minus.grid();
        let n = self.winding;
        let pts = grid.points();
        let samples = (0..grid.count)
            .map(|m| self.c0 * self.minus.samples()[m] * pts[m].powi(n) * self.plus.samples()[m])
            .collect();
        ScalarLoop::from_samples(grid, self.minus.annulus(), samples).expect("same grid")
    }
}

pub fn scalar_birkhoff(f: &ScalarLoop) -> Result<BirkhoffSplit> {
    let n = winding_number(f)?;
    let grid = *f.grid();
    let logs = continuous_log(f, n);
    let band = grid.max_band();
    let lc = dft_coefficients(&logs, grid.radius, band);
    let k = band as isize;
    let mut neg = vec![ZERO; lc.len()];
    let mut pos = vec![ZERO; lc.len()];
    for j in 1..=k {
        neg[(k - j) as usize] = lc[(k - j) as usize];
        pos[(k + j) as usize] = lc[(k + j) as usize];
    }
    let c0 = lc[k as usize].exp();
    let minus = ScalarLoop::from_samples(grid, f.annulus(), synthesize(&neg, &grid).iter().map(|z| z.exp()).collect())?;
    let plus = ScalarLoop::from_samples(grid, f.annulus(), synthesize(&pos, &grid).iter().map(|z| z.exp()).collect())?;
    Ok(BirkhoffSplit { c0, minus, winding: n, plus })
}

/// Square root continued along the circle from the principal root at angle 0.
pub fn sqrt_cut(f: &ScalarLoop) -> Result<ScalarLoop> {
    let n = winding_number(f)?;
    if n % 2 != 0 {
        return Err(Error::Domain(format!("square root needs even winding, got {n}")));
    }
    let s = f.samples();
    let mut out = Vec::with_capacity(s.len());
    let mut prev = s[0].sqrt();
    out.push(prev);
    for z in &s[1..] {
        let r = z.sqrt();
        prev = if (r - prev).norm() <= (r + prev).norm() { r } else { -r };
        out.push(prev);
    }
    ScalarLoop::from_samples(*f.grid(), f.annulus(), out)
}

/// `g = F B` with `F` unitary on the unit circle and `B` extending into the disk.
#[derive(Clone, Debug)]
pub struct IwasawaPair {
    pub unitary: Loop,
    pub positive: Loop,
    /// Block order of the Toeplitz section, or the Laurent band of the two-circle solve.
    pub order: usize,
    pub residual: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct IwasawaOptions {
    pub tol: f64,
    pub m_start: usize,
    pub m_max: usize,
}

impl Default for IwasawaOptions {
    fn default() -> Self {
        IwasawaOptions { tol: TOL_FAC, m_start: 64, m_max: 1024 }
    }
}

fn check_det_one(g: &Loop) -> Result<()> {
    let scale = g.max_abs().max(1.0);
    let worst = g.samples().iter().fold(0.0f64, |m, s| m.max((s.det() - 1.0).norm()));
    if worst > 1e-8 * scale * scale {
        return Err(Error::Contract(format!("Iwasawa input must have det 1 (defect {worst:e})")));
    }
    Ok(())
}

/// Spectral factor `G = B^* B` of a positive Hermitian symbol on the unit circle,
/// read off the last block row of the Cholesky factor of a block-Toeplitz section.
fn bauer_factor(gcoef: &[Mat2], band: usize, m: usize) -> Result<Vec<Mat2>> {
    let k = band as isize;
    let at = |j: isize| if j.abs() <= k { gcoef[(j + k) as usize] } else { Mat2::zero() };
    let n = 2 * m;
    let mut t = DMatrix::<C64>::zeros(n, n);
    for bi in 0..m {
        for bj in 0..m {
            let blk = at(bj as isize - bi as isize);
            t[(2 * bi, 2 * bj)] = blk.a;
            t[(2 * bi, 2 * bj + 1)] = blk.b;
            t[(2 * bi + 1, 2 * bj)] = blk.c;
            t[(2 * bi + 1, 2 * bj + 1)] = blk.d;
        }
    }
    let chol = t
        .cholesky()
        .ok_or_else(|| Error::IllConditioned("block Toeplitz section is not positive definite".into()))?;
    let l = chol.l();
    let last = m - 1;
    Ok((0..m)
        .map(|j| {
            let col = last - j;
            Mat2::new(
                l[(2 * last, 2 * col)],
                l[(2 * last, 2 * col + 1)],
                l[(2 * last + 1, 2 * col)],
                l[(2 * last + 1, 2 * col + 1)],
            )
            .h()
        })
        .collect())
}

/// Iwasawa factorization with respect to the unit circle, normalized so that `B(0)` is
/// upper triangular with positive diagonal.
pub fn iwasawa(g: &Loop, opts: &IwasawaOptions) -> Result<IwasawaPair> {
    let g = if (g.grid().radius - 1.0).abs() > 1e-15 {
        g.resample(CircleGrid::unit(g.grid().count)?)?
    } else {
        g.clone()
    };
    if !g.annulus().contains(1.0) {
        return Err(Error::Domain("Iwasawa input must be analytic on the unit circle".into()));
    }
    check_det_one(&g)?;
    let grid = *g.grid();
    let gram = g.star().mul(&g)?.with_band(grid.max_band())?;
    let gcoef = gram.coefficients().to_vec();
    let gscale = gram.max_abs().max(1.0);
    let annulus_f = g.annulus().intersect(&g.annulus().reflect());
    let annulus_b = Annulus::new(0.0, annulus_f.outer);

    let mut m = opts.m_start.max(2);
    loop {
        let bk = bauer_factor(&gcoef, grid.max_band(), m)?;
        let kb = (m - 1).min(grid.max_band());
        let mut values = vec![Mat2::zero(); 2 * kb + 1];
        for j in 0..=kb {
            values[kb + j] = bk[j];
        }
        let b = Loop::from_coefficients(grid, annulus_b, values)?;
        let residual = b.star().mul(&b)?.max_dist(&gram) / gscale;
        if residual <= opts.tol || m >= opts.m_max {
            if residual > opts.tol {
                return Err(Error::NonConvergence(format!(
                    "Toeplitz order {m}: residual {residual:e} > {:e}",
                    opts.tol
                )));
            }
            let (q, _) = qr_positive(&b.coeff(0)).ok_or_else(|| Error::Numeric("singular B(0)".into()))?;
            let f = g.mul(&b.inv()?)?.map(|x| *x * q).with_annulus(annulus_f);
            let qh = q.h();
            let bvals: Vec<Mat2> = b.coefficients().iter().map(|x| qh * *x).collect();
            let b = Loop::from_coefficients(grid, annulus_b, bvals)?;
            return Ok(IwasawaPair { unitary: f, positive: b, order: m, residual });
        }
        m *= 2;
    }
}

/// Iwasawa factorization of a twisted loop: untwist, factor, retwist.
pub fn iwasawa_twisted(g: &Loop, opts: &IwasawaOptions) -> Result<IwasawaPair> {
    let gu = g.untwist()?;
    let pair = iwasawa(&gu, opts)?;
    let (q, _) = qr_positive(&pair.positive.coeff(0)).ok_or_else(|| Error::Numeric("singular B(0)".into()))?;
    let f = pair.unitary.map(|x| *x * q);
    let b = pair.positive.map(|x| q.h() * *x);
    Ok(IwasawaPair { unitary: f.twist()?, positive: b.twist()?, order: pair.order, residual: pair.residual })
}

#[derive(Clone, Debug)]
pub struct RIwasawaOptions {
    pub tol: f64,
    /// Laurent bands tried in order for the unitary factor.
    pub bands: Vec<usize>,
}

impl Default for RIwasawaOptions {
    fn default() -> Self {
        RIwasawaOptions { tol: 1e-8, bands: vec![40, 63, 127, 255] }
    }
}

/// Normalized coefficients `c_j rho^j` and their nonzero index range.
fn normalized_coefficients(samples: &[C64], band: usize) -> Vec<C64> {
    dft_coefficients(samples, 1.0, band)
}

fn trimmed_range(c: &[Mat2]) -> (isize, isize) {
    let k = (c.len() / 2) as isize;
    let scale = c.iter().fold(0.0f64, |m, x| m.max(x.max_abs()));
    let floor = 1e-17 * scale;
    let mut lo = 0;
    let mut hi = 0;
    for j in -k..=k {
        if c[(j + k) as usize].max_abs() > floor {
            lo = lo.min(j);
            hi = hi.max(j);
        }
    }
    (lo, hi)
}

fn matrix_coefficients(l: &Loop, band: usize) -> Vec<Mat2> {
    let mut parts: [Vec<C64>; 4] = Default::default();
    for m in l.samples() {
        for (i, z) in m.entries().iter().enumerate() {
            parts[i].push(*z);
        }
    }
    let c: Vec<Vec<C64>> = parts.iter().map(|p| normalized_coefficients(p, band)).collect();
    (0..c[0].len()).map(|i| Mat2::new(c[0][i], c[1][i], c[2][i], c[3][i])).collect()
}

/// Solve for the inverse unitary factor `V = F^{-1}` as a Laurent series of band `kv`.
fn two_circle_solve(gn: &[Mat2], en: &[Mat2], jb: isize, rho: f64, kv: isize) -> Result<Vec<Mat2>> {
    let (glo, ghi) = trimmed_range(gn);
    let (elo, ehi) = trimmed_range(en);
    let gat = |j: isize| if j >= glo && j <= ghi { gn[(j + jb) as usize] } else { Mat2::zero() };
    // Coefficient of (g^{-1})^* normalized on the outer circle: conj-transpose of e_{-j}.
    let eat = |j: isize| if -j >= elo && -j <= ehi { en[(-j + jb) as usize].h() } else { Mat2::zero() };
    let wa = |k: isize| rho.powi((k.abs() + k) as i32);
    let wb = |k: isize| rho.powi((k.abs() - k) as i32);

    let ncol = 2 * (2 * kv + 1) as usize;
    let mut rows: Vec<(Vec<(usize, C64)>, [C64; 2])> = Vec::new();
    let push = |rows: &mut Vec<(Vec<(usize, C64)>, [C64; 2])>, m: isize, inner: bool, rhs: [[C64; 2]; 2]| {
        for c in 0..2 {
            let mut entries = Vec::new();
            for k in -kv..=kv {
                let (w, blk) = if inner { (wa(k), gat(m - k)) } else { (wb(k), eat(m - k)) };
                if w == 0.0 {
                    continue;
                }
                let e = blk.entries();
                for i in 0..2 {
                    let v = e[2 * i + c] * w;
                    if v != ZERO {
                        entries.push((2 * (k + kv) as usize + i, v));
                    }
                }
            }
            rows.push((entries, [rhs[0][c], rhs[1][c]]));
        }
    };
    let zero = [[ZERO; 2]; 2];
    for m in (-kv + glo).min(-1)..=-1 {
        push(&mut rows, m, true, zero);
    }
    for m in 1..=(kv - elo).max(1) {
        push(&mut rows, m, false, zero);
    }
    let id = [[C64::new(1.0, 0.0), ZERO], [ZERO, C64::new(1.0, 0.0)]];
    push(&mut rows, 0, true, id);

    let nrow = rows.len();
    let mut a = DMatrix::<C64>::zeros(nrow, ncol);
    let mut b = DMatrix::<C64>::zeros(nrow, 2);
    for (r, (entries, rhs)) in rows.iter().enumerate() {
        for (col, v) in entries {
            a[(r, *col)] = *v;
        }
        b[(r, 0)] = rhs[0];
        b[(r, 1)] = rhs[1];
    }
    let qr = a.qr();
    let q = qr.q();
    let rr = qr.r();
    let qtb = q.adjoint() * b;
    let x = rr
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::IllConditioned("two-circle system is rank deficient".into()))?;
    Ok((-kv..=kv)
        .map(|k| {
            let base = 2 * (k + kv) as usize;
            let w = rho.powi(k.abs() as i32);
            Mat2::new(x[(base, 0)] * w, x[(base + 1, 0)] * w, x[(base, 1)] * w, x[(base + 1, 1)] * w)
        })
        .collect())
}

/// Residual report for [`r_iwasawa`].
#[derive(Clone, Copy, Debug, Default)]
pub struct RIwasawaResiduals {
    pub reconstruction: f64,
    pub unitarity: f64,
    pub negative_mass: f64,
}

/// Iwasawa factorization for a loop known on `C_rho`, `rho < 1`: `g = F B` with `F`
/// analytic on `rho < |lambda| < 1/rho` and unitary on the unit circle, `B` holomorphic
/// inside `C_rho`. The unitary factor is returned on the unit circle with an exact
/// Laurent expansion; the positive factor on `C_rho`.
pub fn r_iwasawa(g: &Loop, opts: &RIwasawaOptions) -> Result<(IwasawaPair, RIwasawaResiduals)> {
    let rho = g.grid().radius;
    if rho >= 1.0 {
        let p = iwasawa(g, &IwasawaOptions { tol: opts.tol, ..Default::default() })?;
        let res = RIwasawaResiduals { reconstruction: 0.0, unitarity: p.unitary.unitarity_residual(), negative_mass: 0.0 };
        return Ok((p, res));
    }
    check_det_one(g)?;
    let grid = *g.grid();
    let jb = grid.max_band() as isize;
    let gn = matrix_coefficients(g, jb as usize);
    let ginv = g.inv()?;
    let en = matrix_coefficients(&ginv, jb as usize);
    let scale = g.max_abs().max(1.0);
    let unit = CircleGrid::unit(grid.count)?;

    let mut best: Option<(IwasawaPair, RIwasawaResiduals)> = None;
    for &kv in opts.bands.iter() {
        let kv = kv.min(grid.max_band());
        let v = two_circle_solve(&gn, &en, jb, rho, kv as isize)?;
        // det V is constant; average it on the unit circle.
        let vloop = Loop::from_coefficients(unit, Annulus::symmetric(rho), v.clone())?;
        let det_avg = vloop.samples().iter().map(|m| m.det()).sum::<C64>() / unit.count as f64;
        if det_avg.norm() < 1e-300 {
            continue;
        }
        let ftilde: Vec<Mat2> = v.iter().map(|m| m.adj().scale(det_avg.inv())).collect();
        let floop = Loop::from_coefficients(unit, Annulus::symmetric(rho), ftilde.clone())?;
        let p_avg = floop
            .samples()
            .iter()
            .fold(Mat2::zero(), |acc, m| acc + m.h() * *m)
            .scale_re(1.0 / unit.count as f64);
        let p_avg = (p_avg + p_avg.h()).scale_re(0.5);
        let r = match cholesky_upper(&p_avg) {
            Some(r) => r,
            None => continue,
        };
        let rinv = r.inv().expect("positive diagonal");
        let fcoef: Vec<Mat2> = ftilde.iter().map(|m| *m * rinv).collect();
        let unitary = Loop::from_coefficients(unit, Annulus::symmetric(rho), fcoef.clone())?;
        // Positive factor on C_rho: R V g.
        let v_on = Loop::from_coefficients(grid, Annulus::symmetric(rho), v)?;
        let positive = v_on.mul(g)?.map(|m| r * *m).with_annulus(Annulus::new(0.0, rho));
        let f_on = Loop::from_coefficients(grid, Annulus::symmetric(rho), fcoef)?;
        let reconstruction = f_on.mul(&positive)?.max_dist(g) / scale;
        let unitarity = unitary.unitarity_residual();
        let pscale = positive.max_abs().max(1.0);
        let negative_mass = positive.clone().with_band(grid.max_band())?.negative_mass() / pscale;
        let res = RIwasawaResiduals { reconstruction, unitarity, negative_mass };
        let worst = reconstruction.max(unitarity).max(negative_mass);
        let pair = IwasawaPair { unitary, positive, order: kv, residual: worst };
        let better = best.as_ref().map(|(p, _)| worst < p.residual).unwrap_or(true);
        if better {
            best = Some((pair, res));
        }
        if worst <= opts.tol {
            break;
        }
        if kv == grid.max_band() {
            break;
        }
    }
    match best {
        Some((p, r)) if p.residual <= opts.tol => Ok((p, r)),
        Some((p, _)) => Err(Error::NonConvergence(format!(
            "two-circle Iwasawa residual {:e} > {:e}",
            p.residual, opts.tol
        ))),
        None => Err(Error::Numeric("two-circle Iwasawa failed".into())),
    }
}

/// [`r_iwasawa`] for twisted loops, carried out in the untwisted picture.
pub fn r_iwasawa_twisted(g: &Loop, opts: &RIwasawaOptions) -> Result<(IwasawaPair, RIwasawaResiduals)> {
    let gu = g.untwist()?;
    let (p, res) = r_iwasawa(&gu, opts)?;
    let unitary = p.unitary.twist()?;
    let positive = p.positive.twist()?;
    Ok((IwasawaPair { unitary, positive, order: p.order, residual: p.residual }, res))
}
