//! DPW pipeline: holomorphic frame by ODE, pointwise Iwasawa, Sym-Bobenko immersion.
//!
//! Surfaces live on a rectangular grid in a coordinate `w` (the universal cover of the
//! domain). Potentials are functions of `(w, lambda)` returning the coefficient of `dw`.

use crate::error::{Error, Result};
use crate::factorization::{iwasawa_twisted, IwasawaOptions};
use crate::loopcore::{Annulus, CircleGrid, Loop};
use crate::mat2::{c, Mat2, I, ONE};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::sync::Arc;

pub const TOL_ODE: f64 = 1e-8;
pub const DEFAULT_H: f64 = 0.5;

type PotentialFn = dyn Fn(C64, C64) -> Mat2 + Send + Sync;

/// Holomorphic potential `xi(w, lambda) dw`.
#[derive(Clone)]
pub struct Potential {
    func: Arc<PotentialFn>,
    /// Points of the coordinate plane where the potential is singular.
    pub poles: Vec<C64>,
    /// Region of the spectral plane where the potential is analytic.
    pub annulus: Annulus,
}

impl std::fmt::Debug for Potential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Potential").field("poles", &self.poles).field("annulus", &self.annulus).finish()
    }
}

impl Potential {
    pub fn new(f: impl Fn(C64, C64) -> Mat2 + Send + Sync + 'static) -> Self {
        Potential { func: Arc::new(f), poles: Vec::new(), annulus: Annulus::punctured() }
    }
    /// Sum of `coefficient_j(w) lambda^j` over the given degrees.
    pub fn from_terms(terms: Vec<(i32, Arc<dyn Fn(C64) -> Mat2 + Send + Sync>)>) -> Self {
        Potential::new(move |w, l| terms.iter().fold(Mat2::zero(), |acc, (j, f)| acc + f(w).scale(l.powi(*j))))
    }
    pub fn zero() -> Self {
        Potential::new(|_, _| Mat2::zero())
    }
    /// Vacuum potential `(lambda^{-1} + lambda) A dw`.
    pub fn vacuum() -> Self {
        Potential::new(|_, l| Mat2::a_mat().scale(l.inv() + l))
    }
    pub fn with_poles(mut self, poles: Vec<C64>) -> Self {
        self.poles = poles;
        self
    }
    pub fn with_annulus(mut self, annulus: Annulus) -> Self {
        self.annulus = annulus;
        self
    }
    pub fn eval(&self, w: C64, lambda: C64) -> Mat2 {
        (self.func)(w, lambda)
    }
    pub fn loop_at(&self, w: C64, grid: CircleGrid) -> Loop {
        Loop::from_fn(grid, self.annulus, |l| self.eval(w, l))
    }
    /// Twist defect of `xi(w, .)` at a point.
    pub fn twist_defect(&self, w: C64, grid: CircleGrid) -> f64 {
        self.loop_at(w, grid).twist_defect()
    }
    /// Whether the `lambda^{-1}` coefficient has nonzero determinant at `w`.
    pub fn leading_nondegenerate(&self, w: C64, grid: CircleGrid) -> bool {
        let l = self.loop_at(w, grid);
        l.coeff(-1).det().norm() > 1e-14
    }
}

/// Rectangle `origin + u + i v` sampled on an `nu x nv` grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainGrid {
    pub origin: C64,
    pub du: f64,
    pub dv: f64,
    pub nu: usize,
    pub nv: usize,
}

impl DomainGrid {
    pub fn rect(u: (f64, f64), v: (f64, f64), nu: usize, nv: usize) -> Result<Self> {
        if nu < 2 || nv < 2 {
            return Err(Error::Domain("domain grid needs at least 2x2 points".into()));
        }
        Ok(DomainGrid {
            origin: c(u.0, v.0),
            du: (u.1 - u.0) / (nu - 1) as f64,
            dv: (v.1 - v.0) / (nv - 1) as f64,
            nu,
            nv,
        })
    }
    pub fn len(&self) -> usize {
        self.nu * self.nv
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nu + i
    }
    pub fn point(&self, i: usize, j: usize) -> C64 {
        self.origin + c(i as f64 * self.du, j as f64 * self.dv)
    }
    /// Grid index closest to `w`.
    pub fn nearest(&self, w: C64) -> (usize, usize) {
        let d = w - self.origin;
        let i = (d.re / self.du).round().clamp(0.0, (self.nu - 1) as f64) as usize;
        let j = (d.im / self.dv).round().clamp(0.0, (self.nv - 1) as f64) as usize;
        (i, j)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    /// Minimum RK4 steps per grid cell.
    pub substeps: usize,
    /// Initial bound for `|h| * |xi|` per step.
    pub max_step_norm: f64,
    /// Per-cell acceptance threshold for the step-doubling estimate (relative).
    pub cell_tol: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { substeps: 2, max_step_norm: 0.05, cell_tol: 1e-12 }
    }
}

impl OdeOptions {
    fn steps_for(&self, xi: &Potential, w0: C64, w1: C64, lambda: C64) -> usize {
        let size = xi.eval(w0, lambda).max_abs().max(xi.eval((w0 + w1) * 0.5, lambda).max_abs()).max(xi.eval(w1, lambda).max_abs());
        let need = ((w1 - w0).norm() * size / self.max_step_norm).ceil();
        if need.is_finite() {
            (need as usize).clamp(self.substeps.max(1), 1 << 16)
        } else {
            self.substeps.max(1)
        }
    }

    /// One grid cell with step doubling; returns the extrapolated value and the estimate.
    fn cell(&self, xi: &Potential, y: Mat2, w0: C64, w1: C64, lambda: C64) -> Result<(Mat2, f64)> {
        let mut k = self.steps_for(xi, w0, w1, lambda);
        let mut coarse = transport(xi, y, w0, w1, k, lambda)?;
        loop {
            let fine = transport(xi, y, w0, w1, 2 * k, lambda)?;
            let est = (fine - coarse).max_abs() / fine.max_abs().max(1.0);
            if est <= self.cell_tol || k >= 1 << 14 {
                return Ok((fine + (fine - coarse) * (1.0 / 15.0), est));
            }
            coarse = fine;
            k *= 2;
        }
    }
}

/// Holomorphic frame `Phi` on a domain grid.
#[derive(Clone, Debug)]
pub struct PhiField {
    pub grid: DomainGrid,
    pub base: (usize, usize),
    pub phi: Vec<Loop>,
    /// Largest per-cell step-doubling estimate.
    pub ode_defect: f64,
}

fn rk4_step(xi: &Potential, y: Mat2, w: C64, h: C64, lambda: C64) -> Mat2 {
    let f = |y: Mat2, w: C64| y * xi.eval(w, lambda) * h;
    let k1 = f(y, w);
    let k2 = f(y + k1 * 0.5, w + h * 0.5);
    let k3 = f(y + k2 * 0.5, w + h * 0.5);
    let k4 = f(y + k3, w + h);
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (1.0 / 6.0)
}

/// Integrate `dY = Y xi` along the straight segment from `w0` to `w1`.
pub fn transport(xi: &Potential, y0: Mat2, w0: C64, w1: C64, steps: usize, lambda: C64) -> Result<Mat2> {
    let h = (w1 - w0) / steps.max(1) as f64;
    let mut y = y0;
    for s in 0..steps.max(1) {
        let w = w0 + h * s as f64;
        for p in &xi.poles {
            let dist = segment_distance(*p, w, w + h);
            if dist < 1e-8 * (1.0 + p.norm()) {
                return Err(Error::Numeric(format!("integration path passes through pole {p}")));
            }
        }
        y = rk4_step(xi, y, w, h, lambda);
    }
    if !y.is_finite() {
        return Err(Error::Numeric("non-finite frame value".into()));
    }
    Ok(y)
}

fn segment_distance(p: C64, a: C64, b: C64) -> f64 {
    let d = b - a;
    let t = if d.norm_sqr() == 0.0 { 0.0 } else { (((p - a) * d.conj()).re / d.norm_sqr()).clamp(0.0, 1.0) };
    (a + d * t - p).norm()
}

/// Solve `d Phi = Phi xi` with `Phi(base) = phi0`, first along the base column, then
/// along every row.
pub fn solve_frame(xi: &Potential, phi0: &Loop, base: (usize, usize), grid: &DomainGrid, opts: &OdeOptions) -> Result<PhiField> {
    let lg = *phi0.grid();
    let pts = lg.points();
    let n = grid.len();
    let per_lambda: Vec<(Vec<Mat2>, f64)> = pts
        .par_iter()
        .enumerate()
        .map(|(m, &lambda)| -> Result<(Vec<Mat2>, f64)> {
            let mut defect: f64 = 0.0;
            let mut step = |y: Mat2, a: C64, b: C64| -> Result<Mat2> {
                let (v, est) = opts.cell(xi, y, a, b, lambda)?;
                defect = defect.max(est);
                Ok(v)
            };
            let mut out = vec![Mat2::zero(); n];
            let (i0, j0) = base;
            out[grid.index(i0, j0)] = phi0.samples()[m];
            for j in (j0 + 1)..grid.nv {
                let y = out[grid.index(i0, j - 1)];
                out[grid.index(i0, j)] = step(y, grid.point(i0, j - 1), grid.point(i0, j))?;
            }
            for j in (0..j0).rev() {
                let y = out[grid.index(i0, j + 1)];
                out[grid.index(i0, j)] = step(y, grid.point(i0, j + 1), grid.point(i0, j))?;
            }
            for j in 0..grid.nv {
                for i in (i0 + 1)..grid.nu {
                    let y = out[grid.index(i - 1, j)];
                    out[grid.index(i, j)] = step(y, grid.point(i - 1, j), grid.point(i, j))?;
                }
                for i in (0..i0).rev() {
                    let y = out[grid.index(i + 1, j)];
                    out[grid.index(i, j)] = step(y, grid.point(i + 1, j), grid.point(i, j))?;
                }
            }
            Ok((out, defect))
        })
        .collect::<Result<Vec<_>>>()?;
    let annulus = phi0.annulus().intersect(&xi.annulus);
    let ode_defect = per_lambda.iter().fold(0.0f64, |m, (_, d)| m.max(*d));
    let phi = (0..n)
        .map(|p| {
            let samples = per_lambda.iter().map(|(v, _)| v[p]).collect();
            Loop::from_samples(lg, annulus, samples)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PhiField { grid: *grid, base, phi, ode_defect })
}

/// Extended frames on a grid: `Phi = F B` per point, `F(base) = Id`.
#[derive(Clone, Debug)]
pub struct FrameField {
    pub grid: DomainGrid,
    pub base: (usize, usize),
    pub phi: Vec<Loop>,
    pub unitary: Vec<Loop>,
    pub positive: Vec<Loop>,
    /// Largest factorization residual over the grid.
    pub residual: f64,
}

impl FrameField {
    pub fn at(&self, i: usize, j: usize) -> &Loop {
        &self.unitary[self.grid.index(i, j)]
    }
    pub fn base_frame(&self) -> &Loop {
        self.at(self.base.0, self.base.1)
    }
    /// Largest `|F^* F - Id|` over all frames.
    pub fn unitarity_residual(&self) -> f64 {
        self.unitary.iter().fold(0.0, |m, f| m.max(f.unitarity_residual()))
    }
    /// Frame field from explicit unitary and positive parts (`phi = F B`).
    pub fn from_parts(grid: DomainGrid, base: (usize, usize), unitary: Vec<Loop>, positive: Vec<Loop>) -> Result<Self> {
        let phi = unitary.iter().zip(&positive).map(|(f, b)| f.mul(b)).collect::<Result<Vec<_>>>()?;
        Ok(FrameField { grid, base, phi, unitary, positive, residual: 0.0 })
    }
}

/// Pointwise twisted Iwasawa of a holomorphic frame, normalized so that `F(base) = Id`.
pub fn unitary_frame(phi: &PhiField, opts: &IwasawaOptions) -> Result<FrameField> {
    let pairs = phi
        .phi
        .par_iter()
        .map(|p| iwasawa_twisted(p, opts))
        .collect::<Result<Vec<_>>>()?;
    let residual = pairs.iter().fold(0.0f64, |m, p| m.max(p.residual));
    let base_index = phi.grid.index(phi.base.0, phi.base.1);
    let f0inv = pairs[base_index].unitary.inv()?;
    let mut unitary = Vec::with_capacity(pairs.len());
    let mut positive = Vec::with_capacity(pairs.len());
    for p in pairs {
        unitary.push(f0inv.mul(&p.unitary)?);
        positive.push(p.positive);
    }
    Ok(FrameField { grid: phi.grid, base: phi.base, phi: phi.phi.clone(), unitary, positive, residual })
}

/// Map a trace-free anti-Hermitian matrix `(i/2)(x s1 + y s2 + z s3)` to `(x, y, z)`.
pub fn su2_to_r3(f: &Mat2) -> [f64; 3] {
    let s = f.c * c(0.0, -2.0);
    let t = f.b * c(0.0, -2.0);
    let x = (s + t) * 0.5;
    let y = (s - t) / c(0.0, 2.0);
    let z = f.a * c(0.0, -2.0);
    [x.re, y.re, z.re]
}

/// Sym-Bobenko immersion of one frame at `lambda0` on the unit circle.
pub fn sym_bobenko_point(f: &Loop, lambda0: C64, h: f64) -> Result<[f64; 3]> {
    if (lambda0.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!("Sym-Bobenko needs |lambda0| = 1, got {}", lambda0.norm())));
    }
    if h == 0.0 {
        return Err(Error::Domain("mean curvature must be nonzero".into()));
    }
    let fv = f.eval(lambda0)?;
    let dv = f.d_lambda().eval(lambda0)?;
    let finv = fv.inv().ok_or_else(|| Error::Numeric("singular frame".into()))?;
    let m = (dv * finv).scale(I * lambda0) + (fv * Mat2::sigma3() * finv).scale(c(0.0, 0.5));
    Ok(su2_to_r3(&m.scale_re(-1.0 / (2.0 * h))))
}

/// Quad mesh on a domain grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceMesh {
    pub nu: usize,
    pub nv: usize,
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 4]>,
    pub lambda0: C64,
    pub h: f64,
}

pub fn grid_faces(nu: usize, nv: usize) -> Vec<[usize; 4]> {
    let mut faces = Vec::new();
    for j in 0..nv.saturating_sub(1) {
        for i in 0..nu.saturating_sub(1) {
            let a = j * nu + i;
            faces.push([a, a + 1, a + 1 + nu, a + nu]);
        }
    }
    faces
}

pub fn sym_bobenko(frames: &FrameField, lambda0: C64, h: f64) -> Result<SurfaceMesh> {
    let vertices = frames
        .unitary
        .par_iter()
        .map(|f| sym_bobenko_point(f, lambda0, h))
        .collect::<Result<Vec<_>>>()?;
    if vertices.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::Numeric("non-finite vertex".into()));
    }
    Ok(SurfaceMesh {
        nu: frames.grid.nu,
        nv: frames.grid.nv,
        vertices,
        faces: grid_faces(frames.grid.nu, frames.grid.nv),
        lambda0,
        h,
    })
}

impl SurfaceMesh {
    /// Wavefront OBJ with 17 significant digits (exact round trip); faces are 1-based.
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# loopforge mesh {}x{} lambda0=({:.9e},{:.9e}) H={:.9e}", self.nu, self.nv, self.lambda0.re, self.lambda0.im, self.h);
        for v in &self.vertices {
            let _ = writeln!(s, "v {:.16e} {:.16e} {:.16e}", v[0], v[1], v[2]);
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1, f[3] + 1);
        }
        s
    }

    pub fn from_obj(text: &str) -> Result<SurfaceMesh> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let (mut nu, mut nv, mut lambda0, mut h) = (0, 0, ONE, DEFAULT_H);
        let bad = |line: usize| Error::Domain(format!("malformed OBJ at line {}", line + 1));
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let v: Vec<f64> = it.map(|x| x.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad(ln))?;
                    if v.len() != 3 {
                        return Err(bad(ln));
                    }
                    vertices.push([v[0], v[1], v[2]]);
                }
                Some("f") => {
                    let f: Vec<usize> = it.map(|x| x.parse::<usize>()).collect::<std::result::Result<_, _>>().map_err(|_| bad(ln))?;
                    if f.len() != 4 || f.iter().any(|&k| k == 0) {
                        return Err(bad(ln));
                    }
                    faces.push([f[0] - 1, f[1] - 1, f[2] - 1, f[3] - 1]);
                }
                Some("#") => {
                    let rest: Vec<&str> = it.collect();
                    if rest.len() >= 5 && rest[0] == "loopforge" {
                        let dims: Vec<usize> = rest[2].split('x').filter_map(|x| x.parse().ok()).collect();
                        if dims.len() == 2 {
                            nu = dims[0];
                            nv = dims[1];
                        }
                        let l = rest[3].trim_start_matches("lambda0=(").trim_end_matches(')');
                        let parts: Vec<f64> = l.split(',').filter_map(|x| x.parse().ok()).collect();
                        if parts.len() == 2 {
                            lambda0 = c(parts[0], parts[1]);
                        }
                        if let Some(x) = rest[4].strip_prefix("H=").and_then(|x| x.parse().ok()) {
                            h = x;
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(SurfaceMesh { nu, nv, vertices, faces, lambda0, h })
    }

    pub fn vertex(&self, i: usize, j: usize) -> [f64; 3] {
        self.vertices[j * self.nu + i]
    }
}

/// Gauge a potential by a map into positive loops: `G^{-1} xi G + G^{-1} dG`.
/// Without an analytic derivative, `dG` is a centered complex difference.
pub fn gauge(
    xi: &Potential,
    g: Arc<dyn Fn(C64, C64) -> Mat2 + Send + Sync>,
    dg: Option<Arc<dyn Fn(C64, C64) -> Mat2 + Send + Sync>>,
) -> Potential {
    let xi2 = xi.clone();
    let step = 1e-5;
    let out = Potential::new(move |w, l| {
        let gv = g(w, l);
        let ginv = gv.inv().unwrap_or_else(Mat2::zero);
        let d = match &dg {
            Some(d) => d(w, l),
            None => (g(w + step, l) - g(w - step, l)).scale_re(0.5 / step),
        };
        ginv * xi2.eval(w, l) * gv + ginv * d
    });
    out.with_poles(xi.poles.clone()).with_annulus(xi.annulus)
}

/// Checks that a gauge map takes values in positive loops at `w`.
pub fn check_positive_gauge(g: &dyn Fn(C64, C64) -> Mat2, w: C64, grid: CircleGrid) -> Result<()> {
    let l = Loop::from_fn(grid, Annulus::punctured(), |x| g(w, x));
    let scale = l.max_abs().max(1.0);
    if l.negative_mass() > 1e-9 * scale {
        return Err(Error::Contract("gauge is not positive-loop valued".into()));
    }
    Ok(())
}

/// Maurer-Cartan form diagnostics at one grid point.
#[derive(Clone, Copy, Debug, Default)]
pub struct McRecord {
    /// `lambda^{-1}` coefficient of the `dw` part.
    pub alpha_p_minus: Mat2,
    /// `lambda^0` coefficients of the `dw` and `dw-bar` parts.
    pub alpha_k_dw: Mat2,
    pub alpha_k_dwbar: Mat2,
    /// `lambda^{1}` coefficient of the `dw-bar` part.
    pub alpha_p_plus: Mat2,
    pub residual: f64,
}

fn degree_mass(l: &Loop, keep: &[isize]) -> f64 {
    let b = l.band() as isize;
    (-b..=b).filter(|k| !keep.contains(k)).map(|k| l.coeff(k).max_abs()).sum()
}

/// `F^{-1} dF` by centered grid differences at interior points.
pub fn mc_form(frames: &FrameField) -> Result<Vec<((usize, usize), McRecord)>> {
    let g = frames.grid;
    if g.nu < 3 || g.nv < 3 {
        return Err(Error::Domain("mc_form needs a 3x3 grid at least".into()));
    }
    let mut idx = Vec::new();
    for j in 1..g.nv - 1 {
        for i in 1..g.nu - 1 {
            idx.push((i, j));
        }
    }
    idx.par_iter()
        .map(|&(i, j)| -> Result<((usize, usize), McRecord)> {
            let f = frames.at(i, j);
            let finv = f.inv()?;
            let fu = frames.at(i + 1, j).sub(frames.at(i - 1, j))?;
            let fv = frames.at(i, j + 1).sub(frames.at(i, j - 1))?;
            let au = finv.mul(&fu)?.map(|m| m.scale_re(0.5 / g.du));
            let av = finv.mul(&fv)?.map(|m| m.scale_re(0.5 / g.dv));
            // alpha = P dw + Q dw-bar
            let p = au.zip(&av, |a, b| (*a - b.scale(I)).scale_re(0.5))?;
            let q = au.zip(&av, |a, b| (*a + b.scale(I)).scale_re(0.5))?;
            let diag = |m: Mat2| Mat2::diag(m.a, m.d);
            let off = |m: Mat2| Mat2::off(m.b, m.c);
            let (pm, p0, q0, q1) = (p.coeff(-1), p.coeff(0), q.coeff(0), q.coeff(1));
            let residual = degree_mass(&p, &[-1, 0])
                + degree_mass(&q, &[0, 1])
                + diag(pm).max_abs()
                + diag(q1).max_abs()
                + off(p0).max_abs()
                + off(q0).max_abs();
            Ok((
                (i, j),
                McRecord { alpha_p_minus: pm, alpha_k_dw: p0, alpha_k_dwbar: q0, alpha_p_plus: q1, residual },
            ))
        })
        .collect()
}

/// Vacuum unitary frame `exp((w lambda^{-1} - conj(w) lambda) A)`.
pub fn vacuum_unitary(w: C64, grid: CircleGrid) -> Loop {
    Loop::from_fn(grid, Annulus::punctured(), move |l| Mat2::a_mat().scale(w / l - w.conj() * l).exp())
}

/// Vacuum positive factor `exp((w + conj(w)) lambda A)`.
pub fn vacuum_positive(w: C64, grid: CircleGrid) -> Loop {
    Loop::from_fn(grid, Annulus::punctured(), move |l| Mat2::a_mat().scale(l * (w + w.conj())).exp())
}

/// Vacuum holomorphic frame `exp((lambda^{-1} + lambda) w A)`.
pub fn vacuum_holomorphic(w: C64, grid: CircleGrid) -> Loop {
    Loop::from_fn(grid, Annulus::punctured(), move |l| Mat2::a_mat().scale((l.inv() + l) * w).exp())
}
