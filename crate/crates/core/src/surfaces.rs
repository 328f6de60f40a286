//! Example pipelines: vacuum, Delaunay, perturbed cylinders from the regular-singular
//! series, bubbletons. Plus mesh diagnostics and file output.

use crate::dpw::{
    solve_frame, sym_bobenko, unitary_frame, vacuum_holomorphic, vacuum_positive, vacuum_unitary, DomainGrid, FrameField, OdeOptions,
    PhiField, Potential, SurfaceMesh,
};
use crate::dressing::{simple_dress, simple_dress_loop, SimpleFactor};
use crate::error::{Error, Result};
use crate::factorization::{iwasawa_twisted, r_iwasawa_twisted, IwasawaOptions, RIwasawaOptions};
use crate::loopcore::{Annulus, CircleGrid, Loop};
use crate::mat2::{c, Mat2, ONE, ZERO};
use crate::monodromy::{monodromy, MonodromyReport};
use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

/// Threshold on `min |chi(alpha) -+ Id|` for an admissible bubbleton singularity.
pub const TOL_ADMISSIBLE: f64 = 1e-6;
/// Operator condition number above which the series recursion is called resonant.
pub const MAX_SERIES_COND: f64 = 1e8;

// ---------------------------------------------------------------------------
// vacuum

/// `exp((a/lambda + b lambda) A)` from its Laurent series, so that evaluation off the
/// sampling circle stays accurate.
pub fn exp_a_laurent(a: C64, b: C64, grid: CircleGrid) -> Result<Loop> {
    let k = grid.max_band().min(96) as isize;
    // coefficient n of exp(s (a/l + b l)), s = +-1
    let coeff = |n: isize, s: f64| -> C64 {
        let (a, b) = (a * s, b * s);
        let m0 = (-n).max(0);
        let mut term = ONE;
        // a^m0 b^(n+m0) / (m0! (n+m0)!)
        for j in 1..=m0 {
            term *= a / j as f64;
        }
        for j in 1..=(n + m0) {
            term *= b / j as f64;
        }
        let mut sum = term;
        let mut m = m0;
        while term.norm() > 1e-18 * sum.norm().max(1e-300) || m < m0 + 4 {
            m += 1;
            term *= a * b / (m as f64 * (n + m) as f64);
            sum += term;
            if m > m0 + 400 {
                break;
            }
        }
        sum
    };
    let coeffs = (-k..=k)
        .map(|n| {
            let (p, q) = (coeff(n, 1.0), coeff(n, -1.0));
            let (ch, sh) = ((p + q) * 0.5, (p - q) * 0.5);
            Mat2::new(ch, sh, sh, ch)
        })
        .collect();
    Loop::from_coefficients(grid, Annulus::punctured(), coeffs)
}

/// Closed-form vacuum frames on a domain grid, left-normalized at `base`. Loops carry
/// their exact Laurent coefficients.
pub fn vacuum(grid: &DomainGrid, base: (usize, usize), lg: CircleGrid) -> Result<FrameField> {
    let w0 = grid.point(base.0, base.1);
    let pts: Vec<C64> = (0..grid.len()).map(|k| grid.point(k % grid.nu, k / grid.nu)).collect();
    let unitary = pts.par_iter().map(|w| exp_a_laurent(*w - w0, -(*w - w0).conj(), lg)).collect::<Result<Vec<_>>>()?;
    let positive = pts.par_iter().map(|w| exp_a_laurent(ZERO, *w + w.conj(), lg)).collect::<Result<Vec<_>>>()?;
    let phi = pts.par_iter().map(|w| exp_a_laurent(*w - w0, *w + w0.conj(), lg)).collect::<Result<Vec<_>>>()?;
    Ok(FrameField { grid: *grid, base, phi, unitary, positive, residual: 0.0 })
}

/// Numerical twisted Iwasawa of `Phi_c(w)` against the closed forms; returns the worst
/// sup-norm error over both factors.
pub fn vacuum_iwasawa_error(points: &[C64], lg: CircleGrid, opts: &IwasawaOptions) -> Result<f64> {
    let errs = points
        .par_iter()
        .map(|w| -> Result<f64> {
            let p = iwasawa_twisted(&vacuum_holomorphic(*w, lg), opts)?;
            let e1 = p.unitary.max_dist(&vacuum_unitary(*w, lg));
            let e2 = p.positive.max_dist(&vacuum_positive(*w, lg));
            Ok(e1.max(e2))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(errs.into_iter().fold(0.0, f64::max))
}

// ---------------------------------------------------------------------------
// Delaunay residue

/// Residue `off(wA/l + wB l, wB/l + wA l)` with `wA + wB = 1/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelaunayResidue {
    pub wa: f64,
    pub wb: f64,
}

impl DelaunayResidue {
    pub fn new(wa: f64, wb: f64) -> Result<Self> {
        if !(wa > 0.0 && wb > 0.0) {
            return Err(Error::Domain(format!("Delaunay weights must be positive, got ({wa}, {wb})")));
        }
        if (wa + wb - 0.5).abs() > 1e-12 {
            return Err(Error::Domain(format!("Delaunay weights must sum to 1/2, got {}", wa + wb)));
        }
        Ok(DelaunayResidue { wa, wb })
    }
    pub fn round() -> Self {
        DelaunayResidue { wa: 0.25, wb: 0.25 }
    }
    pub fn at(&self, l: C64) -> Mat2 {
        Mat2::off(l.inv() * self.wa + l * self.wb, l.inv() * self.wb + l * self.wa)
    }
    /// `mu^2 = -det D`.
    pub fn mu_squared(&self, l: C64) -> C64 {
        (l.inv() * self.wa + l * self.wb) * (l.inv() * self.wb + l * self.wa)
    }
    pub fn mu(&self, l: C64) -> C64 {
        self.mu_squared(l).sqrt()
    }
    /// `n` with `mu(1) = n/2`.
    pub fn winding(&self) -> i32 {
        (2.0 * self.mu(ONE).re).round() as i32
    }
    pub fn loop_on(&self, grid: CircleGrid) -> Loop {
        let d = *self;
        Loop::from_fn(grid, Annulus::punctured(), move |l| d.at(l))
    }
    /// `exp(2 pi i D)`, the monodromy around the puncture.
    pub fn monodromy(&self, grid: CircleGrid) -> Loop {
        let d = *self;
        Loop::from_fn(grid, Annulus::punctured(), move |l| d.at(l).scale(c(0.0, 2.0 * PI)).exp())
    }
    pub fn neck_radius(&self, h: f64) -> f64 {
        (1.0 - (1.0 - 16.0 * self.wa * self.wb).sqrt()) / (2.0 * h)
    }
    /// `D dw` in the coordinate `w = log z`.
    pub fn potential(&self) -> Potential {
        let d = *self;
        Potential::new(move |_, l| d.at(l))
    }
}

/// `z^D = exp(log(z) D)` for a chosen value of `log z`.
pub fn zpow(log_z: C64, res: &DelaunayResidue, grid: CircleGrid) -> Loop {
    let d = *res;
    Loop::from_fn(grid, Annulus::punctured(), move |l| d.at(l).scale(log_z).exp())
}

/// Delaunay surface generated by `D dz/z` with initial value `Id` at `z = 1`.
#[derive(Clone, Debug)]
pub struct DelaunaySurface {
    pub frames: FrameField,
    pub mesh: SurfaceMesh,
    pub monodromy: MonodromyReport,
    /// Smallest vertex distance to the fitted axis.
    pub neck: f64,
    /// False when the smallest profile value sits on the grid boundary, i.e. the
    /// `u`-range missed the neck.
    pub neck_interior: bool,
    pub omega: f64,
}

impl DelaunaySurface {
    pub fn neck_error(&self) -> f64 {
        (self.neck - self.omega).abs() / self.omega
    }
}

/// The grid lives in `w = log z`; its imaginary side must span `[0, 2 pi]` for the
/// monodromy and contain `w = 0`.
pub fn delaunay(res: &DelaunayResidue, grid: &DomainGrid, lg: CircleGrid, h: f64) -> Result<DelaunaySurface> {
    let base = base_at_origin(grid)?;
    let phi = solve_frame(&res.potential(), &Loop::identity(lg), base, grid, &OdeOptions::default())?;
    let frames = unitary_frame(&phi, &IwasawaOptions::default())?;
    let mesh = sym_bobenko(&frames, ONE, h)?;
    let mono = monodromy(&frames, c(0.0, 2.0 * PI), ONE)?;
    let (neck, neck_interior) = neck_of(&mesh, grid.nu, grid.nv);
    Ok(DelaunaySurface { frames, mesh, monodromy: mono, neck, neck_interior, omega: res.neck_radius(h) })
}

/// Profile `p(u) = min_v dist(axis)`; minimum refined by a parabola through the three
/// smallest neighbouring columns.
fn neck_of(mesh: &SurfaceMesh, nu: usize, nv: usize) -> (f64, bool) {
    let (_, dists) = axis_fit(&mesh.vertices);
    let profile: Vec<f64> = (0..nu).map(|i| (0..nv).map(|j| dists[j * nu + i]).fold(f64::INFINITY, f64::min)).collect();
    let (k, &pk) = profile.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty grid");
    if k == 0 || k + 1 == nu {
        return (pk, false);
    }
    let (a, b) = (profile[k - 1], profile[k + 1]);
    let curv = a - 2.0 * pk + b;
    if curv <= 0.0 {
        return (pk, true);
    }
    (pk - (b - a) * (b - a) / (8.0 * curv), true)
}

fn base_at_origin(grid: &DomainGrid) -> Result<(usize, usize)> {
    let base = grid.nearest(ZERO);
    if grid.point(base.0, base.1).norm() > 1e-12 {
        return Err(Error::Domain("the grid must contain w = 0".into()));
    }
    Ok(base)
}

// ---------------------------------------------------------------------------
// regular-singular series

type EtaFn = Arc<dyn Fn(C64) -> Mat2 + Send + Sync>;

/// `xi = D dz/z + eta(z) dz` with `eta = sum_s eta_s(lambda) z^s` holomorphic at `0`.
#[derive(Clone)]
pub struct SingularPotential {
    pub residue: DelaunayResidue,
    pub eta: Vec<EtaFn>,
}

impl std::fmt::Debug for SingularPotential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SingularPotential").field("residue", &self.residue).field("eta_terms", &self.eta.len()).finish()
    }
}

impl SingularPotential {
    pub fn delaunay(residue: DelaunayResidue) -> Self {
        SingularPotential { residue, eta: Vec::new() }
    }
    /// `eta = eps off(z, z) dz`.
    pub fn off_diagonal(residue: DelaunayResidue, eps: f64) -> Self {
        let zero: EtaFn = Arc::new(|_| Mat2::zero());
        let one: EtaFn = Arc::new(move |_| Mat2::a_mat().scale_re(eps));
        SingularPotential { residue, eta: vec![zero, one] }
    }
    /// `eta = eps off(z / lambda, lambda z) dz`, the twisted counterpart.
    pub fn off_diagonal_twisted(residue: DelaunayResidue, eps: f64) -> Self {
        let zero: EtaFn = Arc::new(|_| Mat2::zero());
        let one: EtaFn = Arc::new(move |l: C64| Mat2::off(l.inv() * eps, l * eps));
        SingularPotential { residue, eta: vec![zero, one] }
    }
    pub fn eta_at(&self, z: C64, l: C64) -> Mat2 {
        self.eta.iter().rev().fold(Mat2::zero(), |acc, e| acc.scale(z) + e(l))
    }
    /// The potential in `w = log z`: `(D + z eta(z)) dw`.
    pub fn potential_w(&self) -> Potential {
        let sp = self.clone();
        Potential::new(move |w, l| {
            let z = w.exp();
            sp.residue.at(l) + sp.eta_at(z, l).scale(z)
        })
    }
}

/// Coefficients `P_0..P_N` of `P = sum P_k z^k` per spectral sample, with `Psi = z^D P`.
#[derive(Clone, Debug)]
pub struct PSeries {
    pub grid: CircleGrid,
    /// `coeffs[k][m]` is `P_k` at the `m`-th sample.
    pub coeffs: Vec<Vec<Mat2>>,
    /// Largest condition number of `k Id + ad_D` met in the recursion.
    pub max_cond: f64,
}

fn mat_to_vec(m: &Mat2) -> Vector4<C64> {
    Vector4::new(m.a, m.b, m.c, m.d)
}

/// `k X + D X - X D` as a 4x4 matrix acting on `(x11, x12, x21, x22)`.
fn series_operator(k: f64, d: &Mat2) -> Matrix4<C64> {
    let mut op = Matrix4::<C64>::zeros();
    for col in 0..4 {
        let mut e = [ZERO; 4];
        e[col] = ONE;
        let x = Mat2::new(e[0], e[1], e[2], e[3]);
        let y = x.scale_re(k) + *d * x - x * *d;
        op.set_column(col, &mat_to_vec(&y));
    }
    op
}

fn condition(op: &Matrix4<C64>) -> f64 {
    let sv = op.singular_values();
    let (mx, mn) = sv.iter().fold((0.0f64, f64::INFINITY), |(a, b), s| (a.max(*s), b.min(*s)));
    if mn == 0.0 {
        f64::INFINITY
    } else {
        mx / mn
    }
}

/// Solve `k P_k + [D, P_k] = sum_{r+s=k-1} P_r eta_s` with `P_0 = Id` on every sample.
pub fn solve_p_series(sp: &SingularPotential, n_max: usize, grid: CircleGrid) -> Result<PSeries> {
    let pts = grid.points();
    let per_sample = pts
        .par_iter()
        .map(|&l| -> Result<(Vec<Mat2>, f64)> {
            let d = sp.residue.at(l);
            let etas: Vec<Mat2> = sp.eta.iter().map(|e| e(l)).collect();
            let mut ps = vec![Mat2::identity()];
            let mut worst = 1.0f64;
            for k in 1..=n_max {
                let mut rhs = Mat2::zero();
                for (s, e) in etas.iter().enumerate() {
                    if s + 1 <= k {
                        rhs = rhs + ps[k - 1 - s] * *e;
                    }
                }
                let op = series_operator(k as f64, &d);
                let cond = condition(&op);
                if !(cond <= MAX_SERIES_COND) {
                    return Err(Error::Resonance { lambda: format!("{l}"), order: k, cond });
                }
                worst = worst.max(cond);
                let x = op.lu().solve(&mat_to_vec(&rhs)).ok_or_else(|| Error::Numeric("singular series operator".into()))?;
                ps.push(Mat2::new(x[0], x[1], x[2], x[3]));
            }
            Ok((ps, worst))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_cond = per_sample.iter().fold(1.0f64, |m, (_, c)| m.max(*c));
    let coeffs = (0..=n_max).map(|k| per_sample.iter().map(|(ps, _)| ps[k]).collect()).collect();
    Ok(PSeries { grid, coeffs, max_cond })
}

impl PSeries {
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }
    fn horner(&self, z: C64, m: usize) -> Mat2 {
        self.coeffs.iter().rev().fold(Mat2::zero(), |acc, ck| acc.scale(z) + ck[m])
    }
    fn horner_d(&self, z: C64, m: usize) -> Mat2 {
        let n = self.order();
        (1..=n).rev().fold(Mat2::zero(), |acc, k| acc.scale(z) + self.coeffs[k][m].scale_re(k as f64))
    }
    /// `P(z)` on the spectral grid. The annulus is just the working circle.
    pub fn p_at(&self, z: C64) -> Result<Loop> {
        let r = self.grid.radius;
        Loop::from_samples(self.grid, Annulus::new(r, r), (0..self.grid.count).map(|m| self.horner(z, m)).collect())
    }
    /// `Psi = z^D P(z)` for a chosen `log z`.
    pub fn psi_at(&self, sp: &SingularPotential, log_z: C64) -> Vec<Mat2> {
        let z = log_z.exp();
        self.grid
            .points()
            .iter()
            .enumerate()
            .map(|(m, l)| sp.residue.at(*l).scale(log_z).exp() * self.horner(z, m))
            .collect()
    }
    /// `max |dPsi/dz - Psi xi| / (|Psi| |xi|)` over `samples` points of `|z| = radius`
    /// and all spectral samples.
    pub fn defect(&self, sp: &SingularPotential, radius: f64, samples: usize) -> f64 {
        let pts = self.grid.points();
        let mut worst = 0.0f64;
        for j in 0..samples {
            let log_z = c(radius.ln(), 2.0 * PI * j as f64 / samples as f64);
            let z = log_z.exp();
            for (m, l) in pts.iter().enumerate() {
                let d = sp.residue.at(*l);
                let zd = d.scale(log_z).exp();
                let p = self.horner(z, m);
                let dp = self.horner_d(z, m);
                let xi = d.scale(z.inv()) + sp.eta_at(z, *l);
                let psi = zd * p;
                // d(z^D P)/dz = z^D (D P / z + P')
                let lhs = zd * (d * p).scale(z.inv()) + zd * dp;
                let rhs = psi * xi;
                let scale = (psi.max_abs() * xi.max_abs()).max(1e-300);
                worst = worst.max((lhs - rhs).max_abs() / scale);
            }
        }
        worst
    }
}

/// Monodromy by transporting `Psi` once around `|z| = radius`; returns the left factor
/// `Y_end Y_0^{-1}` and its relative distance to `exp(2 pi i D)`.
pub fn transport_monodromy(sp: &SingularPotential, series: &PSeries, radius: f64) -> Result<(Loop, f64)> {
    let xi = sp.potential_w();
    let w0 = c(radius.ln(), 0.0);
    let w1 = w0 + c(0.0, 2.0 * PI);
    let y0 = series.psi_at(sp, w0);
    let pts = series.grid.points();
    let ends = pts
        .par_iter()
        .zip(y0.par_iter())
        .map(|(l, y)| -> Result<Mat2> {
            // RK4 with step doubling until the end value settles
            let mut steps = 64;
            let mut prev = crate::dpw::transport(&xi, *y, w0, w1, steps, *l)?;
            loop {
                steps *= 2;
                let next = crate::dpw::transport(&xi, *y, w0, w1, steps, *l)?;
                let est = (next - prev).max_abs() / next.max_abs().max(1.0);
                if est < 1e-12 || steps >= 1 << 15 {
                    return Ok(next + (next - prev) * (1.0 / 15.0));
                }
                prev = next;
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let samples = ends
        .iter()
        .zip(&y0)
        .map(|(e, y)| y.inv().map(|yi| *e * yi).ok_or_else(|| Error::Numeric("singular Psi".into())))
        .collect::<Result<Vec<_>>>()?;
    let m = Loop::from_samples(series.grid, Annulus::punctured(), samples)?;
    let want = sp.residue.monodromy(series.grid);
    let res = m.max_dist(&want) / want.max_abs().max(1.0);
    Ok((m, res))
}

/// Working radius for the series construction.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RadiusChoice {
    pub r: f64,
    /// `mu(+-r)`, real for real `r`.
    pub mu: f64,
    /// Distance of `mu(r)` from the half-integers.
    pub distance: f64,
    /// First values of `(k^2 - n^2) / (4 wA wB) + 2`, the excluded `r^{-2} + r^2`.
    pub excluded: Vec<f64>,
}

/// Dyadic candidates: `6/8, 5/8, ..., 1/8`, then the new points at `1/16`, `1/32`, ...,
/// each level in descending order.
fn radius_candidates() -> Vec<f64> {
    let mut out: Vec<f64> = (1..=6).rev().map(|j| j as f64 / 8.0).collect();
    for m in 4..=12u32 {
        let den = (1u64 << m) as f64;
        let top = (0.75 * den) as u64;
        for j in (1..top).rev().filter(|j| j % 2 == 1) {
            out.push(j as f64 / den);
        }
    }
    out
}

/// First dyadic `r < r_max` such that `r^{-2} + r^2` keeps `margin` from every excluded
/// value and `mu(+-r)` keeps `margin` from the half-integers.
pub fn choose_radius(res: &DelaunayResidue, n: i32, r_max: f64, margin: f64) -> Result<RadiusChoice> {
    if !(margin > 0.0) {
        return Err(Error::Domain(format!("margin must be positive, got {margin}")));
    }
    let ab = res.wa * res.wb;
    let n2 = (n * n) as f64;
    let excluded: Vec<f64> = (1..=10).map(|k| ((k * k) as f64 - n2) / (4.0 * ab) + 2.0).collect();
    for r in radius_candidates() {
        if r >= r_max {
            continue;
        }
        let s = r.powi(-2) + r * r;
        let mut ok = true;
        let mut k = 1usize;
        loop {
            let kk = (k * k) as f64;
            let plus = (kk - n2) / (4.0 * ab) + 2.0;
            let minus = -(kk - n2) / (4.0 * ab) + 2.0;
            if (s - plus).abs() < margin || (s - minus).abs() < margin {
                ok = false;
                break;
            }
            if plus > s + margin && minus < s - margin {
                break;
            }
            k += 1;
        }
        if !ok {
            continue;
        }
        let mu = res.mu(c(r, 0.0)).re;
        let mu_neg = res.mu(c(-r, 0.0)).re;
        let dist = |m: f64| (m - (2.0 * m).round() / 2.0).abs();
        let distance = dist(mu).min(dist(mu_neg));
        if distance < margin {
            continue;
        }
        return Ok(RadiusChoice { r, mu, distance, excluded });
    }
    Err(Error::Domain(format!("no admissible radius below {r_max} with margin {margin}")))
}

/// Pointwise two-circle Iwasawa of a holomorphic frame sampled inside the unit circle,
/// left-normalized at the base point. Unitary factors are returned on the unit circle.
pub fn unitary_frame_inner(phi: &PhiField, opts: &RIwasawaOptions) -> Result<FrameField> {
    let pairs = phi.phi.par_iter().map(|p| r_iwasawa_twisted(p, opts)).collect::<Result<Vec<_>>>()?;
    let residual = pairs.iter().fold(0.0f64, |m, (p, _)| m.max(p.residual));
    let base = phi.grid.index(phi.base.0, phi.base.1);
    // F0 is unitary on S^1, so F0^{-1} = star(F0); keeping the Laurent data exact lets the
    // frames be evaluated anywhere in the annulus of analyticity.
    let f0inv = pairs[base].0.unitary.star_series()?;
    let unitary = pairs.par_iter().map(|(p, _)| f0inv.mul_series(&p.unitary)).collect::<Result<Vec<_>>>()?;
    let positive = pairs.into_iter().map(|(p, _)| p.positive).collect();
    Ok(FrameField { grid: phi.grid, base: phi.base, phi: phi.phi.clone(), unitary, positive, residual })
}

/// Cylinder generated by `(xi, P(1), 1)`.
#[derive(Clone, Debug)]
pub struct PerturbedCylinder {
    pub series: PSeries,
    pub radius: RadiusChoice,
    pub frames: FrameField,
    pub mesh: SurfaceMesh,
    pub monodromy: MonodromyReport,
}

#[derive(Clone, Debug)]
pub struct PerturbedOptions {
    pub n_max: usize,
    pub r_max: f64,
    pub margin: f64,
    pub count: usize,
    pub h: f64,
}

impl Default for PerturbedOptions {
    fn default() -> Self {
        PerturbedOptions { n_max: 12, r_max: 1.0, margin: 1e-3, count: 512, h: 0.5 }
    }
}

/// The grid is in `w = log z` with `w = 0` on it; the imaginary side spans one turn.
pub fn perturbed_cylinder(sp: &SingularPotential, grid: &DomainGrid, opts: &PerturbedOptions) -> Result<PerturbedCylinder> {
    let base = base_at_origin(grid)?;
    let radius = choose_radius(&sp.residue, sp.residue.winding(), opts.r_max, opts.margin)?;
    let lg = CircleGrid::new(radius.r, opts.count)?;
    let series = solve_p_series(sp, opts.n_max, lg)?;
    let p1 = series.p_at(ONE)?;
    let phi = solve_frame(&sp.potential_w(), &p1, base, grid, &OdeOptions::default())?;
    let frames = unitary_frame_inner(&phi, &RIwasawaOptions::default())?;
    let mesh = sym_bobenko(&frames, ONE, opts.h)?;
    let mono = monodromy(&frames, c(0.0, 2.0 * PI), ONE)?;
    Ok(PerturbedCylinder { series, radius, frames, mesh, monodromy: mono })
}

// ---------------------------------------------------------------------------
// bubbletons

/// The literal determinant reading of the admissibility condition, reported next to the
/// eigenvalue form that is enforced.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct DetCondition {
    pub det_d: [f64; 2],
    /// Distance of `-det D(alpha)` from `n^2/4`.
    pub squares: f64,
    /// Distance of `det D(alpha)` from `n/4`.
    pub literal: f64,
}

pub fn det_condition(res: &DelaunayResidue, alpha: C64) -> DetCondition {
    let det = -res.mu_squared(alpha);
    let mu = (-det).sqrt();
    let n = (2.0 * mu.re).round();
    let squares = (-det - n * n / 4.0).norm();
    let m = (4.0 * det.re).round();
    let literal = (det - m / 4.0).norm();
    DetCondition { det_d: [det.re, det.im], squares, literal }
}

#[derive(Clone, Debug)]
pub struct Bubbleton {
    pub frames: FrameField,
    pub mesh: SurfaceMesh,
    pub monodromy: MonodromyReport,
    /// `min |chi(alpha) -+ Id|`.
    pub admissibility: f64,
    /// Distance of the measured dressed monodromy from `g chi g^{-1}`, after the base
    /// renormalization.
    pub conjugation: f64,
}

/// Dress `base` (with monodromy `chi` for the translation `q`) by a twisted simple factor.
/// Refuses when `chi(alpha) != +-Id`.
pub fn bubbleton(
    base: &FrameField,
    chi: &(dyn Fn(C64) -> Mat2 + Sync),
    sf: &SimpleFactor,
    q: C64,
    lambda0: C64,
    h: f64,
) -> Result<Bubbleton> {
    let ca = chi(sf.alpha);
    let admissibility = (ca - Mat2::identity()).max_abs().min((ca + Mat2::identity()).max_abs());
    if !(admissibility <= TOL_ADMISSIBLE) {
        return Err(Error::Residual { name: "chi(alpha) -+ Id".into(), value: admissibility, tol: TOL_ADMISSIBLE });
    }
    let frames = simple_dress(sf, base)?;
    let mesh = sym_bobenko(&frames, lambda0, h)?;
    let mono = monodromy(&frames, q, lambda0)?;
    // expected: U0^{-1} g chi_base g^{-1} U0 with U0 the raw dressed base frame
    let base_mono = monodromy(base, q, lambda0)?;
    let lg = *base.unitary[0].grid();
    let u0 = simple_dress_loop(sf, base.base_frame())?;
    let g = sf.on_grid(lg)?;
    let want = u0.inv()?.mul(&g.mul(&base_mono.chi)?.mul(&g.inv()?)?)?.mul(&u0)?;
    let conjugation = mono.chi.max_dist(&want) / want.max_abs().max(1.0);
    Ok(Bubbleton { frames, mesh, monodromy: mono, admissibility, conjugation })
}

// ---------------------------------------------------------------------------
// mesh diagnostics and output

/// Total-least-squares axis through the centroid: `(point, direction)` and the vertex
/// distances to it.
/// Coincident vertices (closed seams) count once in the fit.
pub fn axis_fit(pts: &[[f64; 3]]) -> (([f64; 3], [f64; 3]), Vec<f64>) {
    let mut uniq: Vec<[f64; 3]> = Vec::with_capacity(pts.len());
    let mut sorted: Vec<[f64; 3]> = pts.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    for p in sorted {
        let dup = uniq.iter().rev().take(64).any(|u| (0..3).all(|k| (u[k] - p[k]).abs() < 1e-9));
        if !dup {
            uniq.push(p);
        }
    }
    let n = uniq.len().max(1) as f64;
    let mut cen = Vector3::zeros();
    for p in &uniq {
        cen += Vector3::new(p[0], p[1], p[2]) / n;
    }
    let mut cov = Matrix3::zeros();
    for p in &uniq {
        let d = Vector3::new(p[0], p[1], p[2]) - cen;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let axis = eig.eigenvectors.column(eig.eigenvalues.imax()).into_owned();
    let dists = pts
        .iter()
        .map(|p| {
            let d = Vector3::new(p[0], p[1], p[2]) - cen;
            (d - axis * axis.dot(&d)).norm()
        })
        .collect();
    (([cen[0], cen[1], cen[2]], [axis[0], axis[1], axis[2]]), dists)
}

/// Mean curvature at interior vertices from a quadric fit to the 3x3 stencil, in the
/// frame of the central-difference normal. Returns `|H|` values.
pub fn mean_curvature(mesh: &SurfaceMesh) -> Vec<f64> {
    let v = |i: usize, j: usize| {
        let p = mesh.vertex(i, j);
        Vector3::new(p[0], p[1], p[2])
    };
    let mut out = Vec::new();
    for j in 1..mesh.nv.saturating_sub(1) {
        for i in 1..mesh.nu.saturating_sub(1) {
            let p0 = v(i, j);
            let tu = v(i + 1, j) - v(i - 1, j);
            let tv = v(i, j + 1) - v(i, j - 1);
            let nrm = tu.cross(&tv);
            if nrm.norm() == 0.0 {
                continue;
            }
            let n = nrm.normalize();
            let e1 = tu.normalize();
            let e2 = n.cross(&e1);
            // least squares for z = a x^2 + b x y + c y^2 + d x + e y
            let mut ata = nalgebra::Matrix5::<f64>::zeros();
            let mut atb = nalgebra::Vector5::<f64>::zeros();
            for dj in -1i32..=1 {
                for di in -1i32..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let q = v((i as i32 + di) as usize, (j as i32 + dj) as usize) - p0;
                    let (x, y, z) = (q.dot(&e1), q.dot(&e2), q.dot(&n));
                    let row = nalgebra::Vector5::new(x * x, x * y, y * y, x, y);
                    ata += row * row.transpose();
                    atb += row * z;
                }
            }
            if let Some(s) = ata.lu().solve(&atb) {
                let (a, b, cc, d, e) = (s[0], s[1], s[2], s[3], s[4]);
                let g = 1.0 + d * d + e * e;
                let hh = ((1.0 + e * e) * 2.0 * a - 2.0 * d * e * b + (1.0 + d * d) * 2.0 * cc) / (2.0 * g.powf(1.5));
                out.push(hh.abs());
            }
        }
    }
    out
}

pub fn export_mesh(mesh: &SurfaceMesh, path: &Path) -> Result<()> {
    std::fs::write(path, mesh.to_obj()).map_err(|e| Error::Domain(format!("writing {}: {e}", path.display())))
}

pub fn import_mesh(path: &Path) -> Result<SurfaceMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Domain(format!("reading {}: {e}", path.display())))?;
    SurfaceMesh::from_obj(&text)
}

/// Pretty JSON with sorted keys and a trailing newline.
pub fn write_report(report: &serde_json::Value, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(report).map_err(|e| Error::Numeric(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::Domain(format!("writing {}: {e}", path.display())))
}

pub fn read_report(path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Domain(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Domain(format!("{}: {e}", path.display())))
}
