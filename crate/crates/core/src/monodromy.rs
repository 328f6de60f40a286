//! Monodromy extraction, closing conditions, eigenvalue data and the `h = M C` splittings.

use crate::dpw::{DomainGrid, FrameField};
use crate::error::{Error, Result};
use crate::factorization::{continuous_log, scalar_birkhoff, sqrt_cut, winding_number};
use crate::loopcore::{Annulus, Loop, ScalarLoop};
use crate::mat2::{c, Mat2, I, ONE, ZERO};
use num_complex::Complex64 as C64;
use serde::Serialize;
use std::f64::consts::PI;

pub const TOL_MONO: f64 = 1e-7;

/// Monodromy of a frame field with respect to a translation `w -> w + q`.
#[derive(Clone, Debug)]
pub struct MonodromyReport {
    pub chi: Loop,
    pub q: C64,
    /// Largest deviation of the pointwise monodromies from their mean.
    pub z_independence: f64,
    /// Distance up to sign between the means over two disjoint sample sets.
    pub sign_consistency: f64,
    pub closing_value: f64,
    pub closing_derivative: f64,
    pub unitarity: f64,
    pub det_residual: f64,
}

#[derive(Serialize)]
struct RootRecord {
    lambda: [f64; 2],
    order: usize,
}

impl MonodromyReport {
    pub fn to_json(&self, eigen: Option<&EigenData>) -> serde_json::Value {
        let eig = eigen.map(|e| {
            serde_json::json!({
                "N": e.n,
                "roots": e.roots.iter().map(|(l, o)| RootRecord { lambda: [l.re, l.im], order: *o }).collect::<Vec<_>>(),
            })
        });
        serde_json::json!({
            "q": [self.q.re, self.q.im],
            "residuals": {
                "z_independence": self.z_independence,
                "sign_consistency": self.sign_consistency,
                "unitarity": self.unitarity,
                "det": self.det_residual,
            },
            "closing": {"value": self.closing_value, "derivative": self.closing_derivative},
            "eigen": eig,
        })
    }
}

fn mean(loops: &[Loop]) -> Result<Loop> {
    let n = loops.len() as f64;
    let mut acc = loops[0].clone();
    for l in &loops[1..] {
        acc = acc.add(l)?;
    }
    Ok(acc.map(|m| m.scale_re(1.0 / n)))
}

/// `chi = X(w + q) X(w)^{-1}` over all pairs of the grid related by the translation.
pub fn monodromy_of_field(grid: &DomainGrid, frames: &[Loop], q: C64, lambda0: C64) -> Result<MonodromyReport> {
    let si = q.re / grid.du;
    let sj = if grid.dv != 0.0 { q.im / grid.dv } else { 0.0 };
    if (si - si.round()).abs() > 1e-9 || (sj - sj.round()).abs() > 1e-9 {
        return Err(Error::Domain(format!("translation {q} is not a grid vector")));
    }
    let (si, sj) = (si.round() as isize, sj.round() as isize);
    let mut pairs = Vec::new();
    for j in 0..grid.nv as isize {
        for i in 0..grid.nu as isize {
            let (i2, j2) = (i + si, j + sj);
            if i2 >= 0 && j2 >= 0 && (i2 as usize) < grid.nu && (j2 as usize) < grid.nv {
                pairs.push((grid.index(i as usize, j as usize), grid.index(i2 as usize, j2 as usize)));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Domain(format!("no grid point w with w + {q} on the grid")));
    }
    let chis = pairs.iter().map(|(a, b)| frames[*b].mul(&frames[*a].inv()?)).collect::<Result<Vec<_>>>()?;
    monodromy_from_samples(&chis, q, lambda0)
}

/// Monodromy of the unitary frames; the U(1) ambiguity is taken trivial.
pub fn monodromy(frames: &FrameField, q: C64, lambda0: C64) -> Result<MonodromyReport> {
    monodromy_of_field(&frames.grid, &frames.unitary, q, lambda0)
}

/// Summarize pointwise monodromies `X(w + q) X(w)^{-1}`.
pub fn monodromy_from_samples(chis: &[Loop], q: C64, lambda0: C64) -> Result<MonodromyReport> {
    if chis.is_empty() {
        return Err(Error::Domain("no monodromy samples".into()));
    }
    let chi = mean(chis)?;
    let scale = chi.max_abs().max(1.0);
    let z_independence = chis.iter().fold(0.0f64, |m, x| m.max(x.max_dist(&chi))) / scale;
    let sign_consistency = if chis.len() >= 2 {
        let h = chis.len() / 2;
        let a = mean(&chis[..h])?;
        let b = mean(&chis[h..])?;
        let neg = b.map(|m| -*m);
        a.max_dist(&b).min(a.max_dist(&neg)) / scale
    } else {
        0.0
    };
    let (closing_value, closing_derivative) = closing_residuals(&chi, lambda0)?;
    let unitarity = if (chi.grid().radius - 1.0).abs() < 1e-15 { chi.unitarity_residual() } else { f64::NAN };
    let det_residual = chi.samples().iter().fold(0.0f64, |m, x| m.max((x.det() - 1.0).norm()));
    Ok(MonodromyReport { chi, q, z_independence, sign_consistency, closing_value, closing_derivative, unitarity, det_residual })
}

/// `(min |chi(l0) -+ Id|, |d chi / d lambda (l0)|)`.
pub fn closing_residuals(chi: &Loop, lambda0: C64) -> Result<(f64, f64)> {
    let v = chi.eval(lambda0)?;
    let r1 = (v - Mat2::identity()).max_abs().min((v + Mat2::identity()).max_abs());
    let r2 = chi.d_lambda().eval(lambda0)?.max_abs();
    Ok((r1, r2))
}

/// Roots of a scalar loop in an annulus, with orders.
pub fn find_roots(f: &ScalarLoop, inner: f64, outer: f64, circles: usize) -> Result<Vec<(C64, usize)>> {
    let df = f.d_lambda();
    let ddf = df.d_lambda();
    let scale = f.max_abs().max(1e-300);
    let n = f.grid().count;
    let mut seeds = Vec::new();
    let radii: Vec<f64> = if circles <= 1 || (outer - inner).abs() < 1e-15 {
        vec![inner]
    } else {
        (0..circles).map(|k| inner * (outer / inner).powf(k as f64 / (circles - 1) as f64)).collect()
    };
    let mut all_radii = radii.clone();
    all_radii.push(f.grid().radius);
    for &r in &all_radii {
        // skip circles where the Laurent series cannot resolve roots
        if f.eval_noise(r) > 1e-8 * scale {
            continue;
        }
        let vals: Vec<(C64, f64)> = (0..n)
            .map(|m| {
                let l = C64::from_polar(r, 2.0 * PI * m as f64 / n as f64);
                (l, f.eval(l).map(|v| v.norm()).unwrap_or(f64::INFINITY))
            })
            .collect();
        for m in 0..n {
            let (l, v) = vals[m];
            if v <= vals[(m + 1) % n].1 && v <= vals[(m + n - 1) % n].1 {
                seeds.push(l);
            }
        }
    }
    let mut roots: Vec<(C64, usize)> = Vec::new();
    for s in seeds {
        let mut l = s;
        let mut ok = false;
        for _ in 0..60 {
            let (fv, d1, d2) = match (f.eval(l), df.eval(l), ddf.eval(l)) {
                (Ok(a), Ok(b), Ok(c)) => (a, b, c),
                _ => break,
            };
            if fv.norm() <= 1e-13 * scale {
                ok = true;
                break;
            }
            // Newton on f / f', insensitive to the root multiplicity
            let den = d1 * d1 - fv * d2;
            let step = fv * d1 / den;
            if !step.is_finite() {
                ok = fv.norm() <= 1e-10 * scale;
                break;
            }
            l -= step;
            if step.norm() < 1e-14 * l.norm().max(1.0) {
                ok = true;
                break;
            }
        }
        if !ok || l.norm() < inner.min(f.grid().radius) * (1.0 - 1e-9) || l.norm() > outer.max(f.grid().radius) * (1.0 + 1e-9) {
            continue;
        }
        let val = f.eval(l).map(|v| v.norm()).unwrap_or(f64::INFINITY);
        if val > (1e-13 * scale).max(100.0 * f.eval_noise(l.norm())) || f.eval_noise(l.norm()) > 1e-8 * scale {
            continue;
        }
        if roots.iter().any(|(r, _)| (r - l).norm() < 1e-4) {
            continue;
        }
        let order = local_order(f, l)?;
        if order > 0 {
            let l = polish_multiple(f, l, order);
            if !roots.iter().any(|(r, _)| (r - l).norm() < 1e-6) {
                roots.push((l, order));
            }
        }
    }
    roots.sort_by(|a, b| a.0.norm().partial_cmp(&b.0.norm()).unwrap().then(a.0.arg().partial_cmp(&b.0.arg()).unwrap()));
    Ok(roots)
}

/// A root of order `k` is a simple root of the `(k-1)`-th derivative.
fn polish_multiple(f: &ScalarLoop, l0: C64, order: usize) -> C64 {
    let mut g = f.clone();
    for _ in 1..order {
        g = g.d_lambda();
    }
    let dg = g.d_lambda();
    let mut l = l0;
    for _ in 0..20 {
        let step = match (g.eval(l), dg.eval(l)) {
            (Ok(a), Ok(b)) => a / b,
            _ => return l0,
        };
        if !step.is_finite() || step.norm() > 1e-3 {
            return l0;
        }
        l -= step;
        if step.norm() < 1e-16 {
            break;
        }
    }
    l
}

/// Winding of `f` on a small circle around `center`.
fn local_order(f: &ScalarLoop, center: C64) -> Result<usize> {
    let eps = 1e-3 * center.norm().max(1e-3);
    let n = 128;
    let mut total = 0.0;
    let mut prev = f.eval(center + eps)?;
    for m in 1..=n {
        let l = center + C64::from_polar(eps, 2.0 * PI * m as f64 / n as f64);
        let v = f.eval(l)?;
        total += (v / prev).arg();
        prev = v;
    }
    Ok((total / (2.0 * PI)).round().max(0.0) as usize)
}

/// Eigenvalue data of an `SL(2)` loop: `mu = u +- i v` with `v^2 = 1 - u^2 = lambda^N vhat^2`.
#[derive(Clone, Debug)]
pub struct EigenData {
    pub u: ScalarLoop,
    pub v: ScalarLoop,
    pub v2: ScalarLoop,
    pub mu_plus: ScalarLoop,
    pub mu_minus: ScalarLoop,
    pub n: i32,
    /// Roots of `v^2` on the working circle with their orders (`2 K_j`).
    pub circle_roots: Vec<(C64, usize)>,
    /// Roots of `tr^2 - 4` found in the scanned annulus.
    pub roots: Vec<(C64, usize)>,
    /// Square root of the nonvanishing factor of `v^2` on the working circle.
    pub sqrt_part: ScalarLoop,
    pub product_residual: f64,
}

impl EigenData {
    /// `v` evaluated off the sample points via the deflated factorization.
    pub fn v_at(&self, lambda: C64) -> Result<C64> {
        let mut v = self.sqrt_part.eval(lambda)? * lambda.powi(self.n / 2);
        for (r, o) in &self.circle_roots {
            v *= (lambda - r).powi((*o / 2) as i32);
        }
        Ok(v)
    }
}

/// Eigenvalue data on the loop's circle; roots of `tr^2 - 4` are searched in `scan`.
pub fn eigen_data(h: &Loop, scan: Annulus) -> Result<EigenData> {
    let grid = *h.grid();
    let u = h.trace().map(|t| t * 0.5);
    let spread = u.samples().iter().fold(0.0f64, |m, x| m.max((x - u.samples()[0]).norm()));
    if spread < 1e-12 * u.max_abs().max(1.0) {
        return Err(Error::Degenerate("trace is constant in lambda".into()));
    }
    let v2 = u.map(|x| ONE - x * x);
    // roots on the working circle
    let circle_roots: Vec<(C64, usize)> = find_roots(&v2, grid.radius, grid.radius, 1)?
        .into_iter()
        .filter(|(l, _)| (l.norm() - grid.radius).abs() < 1e-9)
        .collect();
    let is_unit = (grid.radius - 1.0).abs() < 1e-15;
    if is_unit {
        if let Some((l, o)) = circle_roots.iter().find(|(_, o)| o % 2 == 1) {
            return Err(Error::Contract(format!("odd root of order {o} at {l} on the unit circle")));
        }
    }
    let pts = grid.points();
    let deflate = |l: C64| circle_roots.iter().fold(ONE, |acc, (r, o)| acc * (l - r).powi(*o as i32));
    let s = ScalarLoop::from_samples(
        grid,
        h.annulus(),
        pts.iter()
            .zip(v2.samples())
            .map(|(l, x)| {
                let d = deflate(*l);
                if d.norm() < 1e-300 {
                    ZERO
                } else {
                    x / d
                }
            })
            .collect(),
    )?;
    // samples that hit a root exactly: fill by symmetric averaging
    let s = repair_samples(&s, &circle_roots)?;
    let split = scalar_birkhoff(&s)?;
    let n_val = split.winding;
    let rest = ScalarLoop::from_samples(
        grid,
        h.annulus(),
        // pointwise, so that repaired samples do not leak into the others
        (0..grid.count).map(|m| s.samples()[m] * pts[m].powi(-n_val)).collect(),
    )?;
    let n_half_total: i32 = n_val + circle_roots.iter().map(|(_, o)| *o as i32).sum::<i32>();
    let sqrt_part = sqrt_cut(&rest)?;
    if n_val % 2 != 0 {
        return Err(Error::Contract(format!("odd exponent N = {n_val} (total degree {n_half_total})")));
    }
    let v_samples: Vec<C64> = pts
        .iter()
        .enumerate()
        .map(|(m, l)| {
            let mut v = sqrt_part.samples()[m] * l.powi(n_val / 2);
            for (r, o) in &circle_roots {
                v *= (l - r).powi((*o / 2) as i32);
            }
            v
        })
        .collect();
    let v = ScalarLoop::from_samples(grid, h.annulus(), v_samples)?;
    let iv = v.map(|x| x * I);
    let mu_plus = u.zip(&iv, |a, b| a + b)?;
    let mu_minus = u.zip(&iv, |a, b| a - b)?;
    let product_residual = mu_plus.zip(&mu_minus, |a, b| a * b - 1.0)?.max_abs();
    let t2m4 = h.trace().map(|t| t * t - 4.0);
    let inner = scan.inner.max(1e-3);
    let outer = if scan.outer.is_finite() { scan.outer } else { 1.0 / inner };
    let roots = find_roots(&t2m4, inner, outer, 16)?;
    Ok(EigenData { u, v, v2, mu_plus, mu_minus, n: n_val, circle_roots, roots, sqrt_part, product_residual })
}

/// Replace samples sitting on removed roots by interpolation from clean neighbours.
fn repair_samples(s: &ScalarLoop, roots: &[(C64, usize)]) -> Result<ScalarLoop> {
    if roots.is_empty() {
        return Ok(s.clone());
    }
    let grid = *s.grid();
    let bad: Vec<bool> = grid.points().iter().map(|l| roots.iter().any(|(r, _)| (l - r).norm() < 1e-6)).collect();
    ScalarLoop::from_samples(grid, s.annulus(), fill_by_interpolation(s.samples(), &bad))
}

/// Lagrange interpolation in the angle from the four nearest clean samples on each side.
fn fill_by_interpolation(values: &[C64], bad: &[bool]) -> Vec<C64> {
    let n = values.len() as isize;
    let mut out = values.to_vec();
    for m in 0..n {
        if !bad[m as usize] {
            continue;
        }
        let mut nodes: Vec<(f64, C64)> = Vec::new();
        for side in [-1isize, 1] {
            let mut k = side;
            let mut taken = 0;
            while taken < 4 && k.abs() < n / 2 {
                let idx = (m + k).rem_euclid(n) as usize;
                if !bad[idx] {
                    nodes.push((k as f64, values[idx]));
                    taken += 1;
                }
                k += side;
            }
        }
        let mut acc = ZERO;
        for (i, (xi, yi)) in nodes.iter().enumerate() {
            let w = nodes.iter().enumerate().filter(|(j, _)| *j != i).fold(1.0, |w, (_, (xj, _))| w * (0.0 - xj) / (xi - xj));
            acc += yi * w;
        }
        out[m as usize] = acc;
    }
    out
}

/// Solutions of `conj(q) lambda^2 + pi i k lambda - q = 0` in `r <= |lambda| <= 1/r`,
/// closed under `lambda -> conj(lambda), 1/lambda, 1/conj(lambda)`.
pub fn spectral_set(q: C64, r: f64) -> Result<Vec<C64>> {
    if q.norm() == 0.0 {
        return Err(Error::Domain("q must be nonzero".into()));
    }
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::Domain(format!("radius {r} must lie in (0, 1]")));
    }
    let kmax = (q.norm() / (PI * r)).ceil() as i64 + 2;
    let qb = q.conj();
    let mut out: Vec<C64> = Vec::new();
    let inside = |l: C64| l.norm() >= r * (1.0 - 1e-12) && l.norm() <= (1.0 / r) * (1.0 + 1e-12);
    let push = |l: C64, out: &mut Vec<C64>| {
        if inside(l) && !out.iter().any(|x| (x - l).norm() < 1e-10) {
            out.push(l);
        }
    };
    for k in -kmax..=kmax {
        let b = c(0.0, PI * k as f64);
        let disc = (b * b + qb * q * 4.0).sqrt();
        for root in [(-b + disc) / (qb * 2.0), (-b - disc) / (qb * 2.0)] {
            for l in [root, root.conj(), root.inv(), root.conj().inv()] {
                push(l, &mut out);
            }
        }
    }
    out.sort_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap().then(a.arg().partial_cmp(&b.arg()).unwrap()));
    Ok(out)
}

/// Data extracted from positive factors at `w = 0` and `w = q`.
#[derive(Clone, Debug)]
pub struct PqData {
    pub f_q: ScalarLoop,
    pub p_q: ScalarLoop,
    pub alpha: ScalarLoop,
    pub beta: ScalarLoop,
    /// Off-diagonal size of `T B(q)^{-1} B(0) T^{-1}`.
    pub diagonal_residual: f64,
    /// `|cosh(p) Id + sinh(p) h A h^{-1} - chi|` when a measured monodromy is given.
    pub reconstruction: Option<f64>,
}

fn t_matrix() -> Mat2 {
    let s = 1.0 / 2f64.sqrt();
    Mat2::new(c(s, 0.0), c(s, 0.0), c(-s, 0.0), c(s, 0.0))
}

pub fn extract_pq(h: &Loop, b0: &Loop, bq: &Loop, q: C64, chi: Option<&Loop>) -> Result<PqData> {
    let grid = *b0.grid();
    let t = t_matrix();
    let tinv = t.inv().unwrap();
    let x = bq.inv()?.mul(b0)?.map(|m| t * *m * tinv);
    let scale = x.max_abs().max(1.0);
    let diagonal_residual = x.samples().iter().fold(0.0f64, |m, v| m.max(v.b.norm().max(v.c.norm()))) / scale;
    if diagonal_residual > 1e-6 {
        return Err(Error::Contract(format!("not in the vacuum orbit (off-diagonal {diagonal_residual:e})")));
    }
    let s = x.entry(0, 0);
    let n = winding_number(&s)?;
    if n != 0 {
        return Err(Error::Contract(format!("s_q has winding {n}")));
    }
    let f_q = ScalarLoop::from_samples(grid, b0.annulus(), continuous_log(&s, 0))?;
    let pts = grid.points();
    let p_q = ScalarLoop::from_samples(
        grid,
        b0.annulus(),
        pts.iter().zip(f_q.samples()).map(|(l, f)| q / l - q.conj() * l + f).collect(),
    )?;
    let alpha = p_q.map(|p| p.cosh());
    let beta = p_q.map(|p| p.sinh());
    let reconstruction = match chi {
        Some(chi) => {
            let hah = h.mul(&Loop::constant(grid, Mat2::a_mat()))?.mul(&h.inv()?)?;
            let rec = Loop::from_samples(
                grid,
                h.annulus(),
                (0..grid.count)
                    .map(|m| Mat2::scalar(alpha.samples()[m]) + hah.samples()[m].scale(beta.samples()[m]))
                    .collect(),
            )?;
            Some(rec.max_dist(chi) / chi.max_abs().max(1.0))
        }
        None => None,
    };
    Ok(PqData { f_q, p_q, alpha, beta, diagonal_residual, reconstruction })
}

/// Twisted `M(a^2)` with off-diagonal entries carrying `lambda^{+-1}`.
pub fn mc_from_a2(a2: &ScalarLoop) -> Loop {
    let grid = *a2.grid();
    let pts = grid.points();
    let samples = pts
        .iter()
        .zip(a2.samples())
        .map(|(l, a)| {
            let ai = a.inv();
            Mat2::new((ONE + a) * 0.5, l * (ONE - a) * 0.5, (ai - 1.0) * 0.5 / l, (ONE + ai) * 0.5)
        })
        .collect();
    Loop::from_samples(grid, a2.annulus(), samples).expect("same grid")
}

/// Result of an `h = M C` splitting with residuals.
#[derive(Clone, Debug)]
pub struct McSplit {
    pub m: Loop,
    pub c: Loop,
    pub reconstruction: f64,
    pub commutation: f64,
}

/// Split a diagonal twisted `h = diag(a, 1/a)` as `h = M C` with `C` commuting with the
/// twisted `A`.
pub fn split_diagonal_mc(h: &Loop) -> Result<McSplit> {
    let scale = h.max_abs().max(1.0);
    let offd = h.samples().iter().fold(0.0f64, |m, x| m.max(x.b.norm().max(x.c.norm())));
    if offd > 1e-12 * scale {
        return Err(Error::Contract("h must be diagonal".into()));
    }
    let a2 = h.entry(0, 0).map(|a| a * a);
    let m = mc_from_a2(&a2);
    let cm = m.inv()?.mul(h)?;
    let reconstruction = m.mul(&cm)?.max_dist(h) / scale;
    let grid = *h.grid();
    let at = Loop::from_fn(grid, Annulus::punctured(), |l| Mat2::off(l, l.inv()));
    let commutation = cm.mul(&at)?.max_dist(&at.mul(&cm)?) / cm.max_abs().max(1.0);
    Ok(McSplit { m, c: cm, reconstruction, commutation })
}

/// Diagonalizer `Y` with `Y H Y^{-1} = diag(mu+, mu-)`.
fn diagonalizer(hm: &Mat2, u: C64, v: C64) -> Option<Mat2> {
    let iv = I * v;
    let den = u - iv - hm.a;
    if den.norm() < 1e-12 || iv.norm() < 1e-12 {
        return None;
    }
    Some(Mat2::new(ONE, -hm.b / den, -hm.c / (iv * 2.0), (u + iv - hm.d) / (iv * 2.0)))
}

/// `h = M C` with `[C, H] = 0`, optionally followed by unitarization on the unit circle.
#[derive(Clone, Debug)]
pub struct CommutingSplit {
    pub m: Loop,
    pub c: Loop,
    pub reconstruction: f64,
    pub commutation: f64,
    /// `"d"` when the `(1/d, d)` branch was used, `"c"` for `(c, 1/c)`.
    pub branch: &'static str,
    pub unitarized: Option<(Loop, Loop, f64)>,
}

pub fn factorize_commuting(h: &Loop, hh: &Loop, unitarize: bool) -> Result<CommutingSplit> {
    let grid = *h.grid();
    let offd = hh.entry(0, 1).max_abs().max(hh.entry(1, 0).max_abs());
    if offd < 1e-14 {
        return Err(Error::Degenerate("H is diagonal; use the diagonal splitting".into()));
    }
    let eig = eigen_data(hh, Annulus::new(grid.radius, grid.radius))?;
    if eig.v.max_abs() < 1e-12 {
        return Err(Error::Degenerate("v vanishes identically on the circle".into()));
    }
    let vscale = eig.v.max_abs();
    let mut ys: Vec<Mat2> = Vec::with_capacity(grid.count);
    let mut bad = vec![false; grid.count];
    for m in 0..grid.count {
        let v = eig.v.samples()[m];
        match diagonalizer(&hh.samples()[m], eig.u.samples()[m], v) {
            Some(y) if v.norm() > 1e-7 * vscale => ys.push(y),
            _ => {
                bad[m] = true;
                ys.push(Mat2::zero());
            }
        }
    }
    // removable singularities where v vanishes
    if bad.iter().any(|b| *b) {
        if bad.iter().all(|b| *b) {
            return Err(Error::Numeric("diagonalizer singular on the whole circle".into()));
        }
        let mut entries: [Vec<C64>; 4] = Default::default();
        for y in &ys {
            for (k, e) in y.entries().iter().enumerate() {
                entries[k].push(*e);
            }
        }
        let filled: Vec<Vec<C64>> = entries.iter().map(|e| fill_by_interpolation(e, &bad)).collect();
        for m in 0..grid.count {
            ys[m] = Mat2::new(filled[0][m], filled[1][m], filled[2][m], filled[3][m]);
        }
    }
    let yinv: Vec<Mat2> = ys.iter().map(|y| y.inv().ok_or_else(|| Error::Numeric("singular Y".into()))).collect::<Result<_>>()?;
    let hy: Vec<Mat2> = (0..grid.count).map(|m| h.samples()[m] * yinv[m]).collect();
    let dmin = hy.iter().fold(f64::INFINITY, |m, x| m.min(x.d.norm()));
    let cmin = hy.iter().fold(f64::INFINITY, |m, x| m.min(x.c.norm()));
    let hscale = h.max_abs().max(1.0);
    let (branch, ms, cs): (&'static str, Vec<Mat2>, Vec<Mat2>) = if dmin > 1e-8 * hscale {
        let ms = (0..grid.count)
            .map(|m| {
                let x = hy[m];
                Mat2::new(x.a * x.d, x.b / x.d, x.c * x.d, ONE) * ys[m]
            })
            .collect();
        let cs = (0..grid.count).map(|m| yinv[m] * Mat2::diag(hy[m].d.inv(), hy[m].d) * ys[m]).collect();
        ("d", ms, cs)
    } else if cmin > 1e-8 * hscale {
        let ms = (0..grid.count)
            .map(|m| {
                let x = hy[m];
                Mat2::new(x.a / x.c, x.b * x.c, ONE, x.c * x.d) * ys[m]
            })
            .collect();
        let cs = (0..grid.count).map(|m| yinv[m] * Mat2::diag(hy[m].c, hy[m].c.inv()) * ys[m]).collect();
        ("c", ms, cs)
    } else {
        return Err(Error::Degenerate("both d and c vanish somewhere on the circle".into()));
    };
    let m = Loop::from_samples(grid, h.annulus(), ms)?;
    let cl = Loop::from_samples(grid, h.annulus(), cs)?;
    let reconstruction = m.mul(&cl)?.max_dist(h) / hscale;
    let commutation = cl.mul(hh)?.max_dist(&hh.mul(&cl)?) / (cl.max_abs() * hh.max_abs()).max(1.0);
    let unitarized = if unitarize { Some(unitarize_split(&m, &cl)?) } else { None };
    Ok(CommutingSplit { m, c: cl, reconstruction, commutation, branch, unitarized })
}

/// `g^2 = 1 / (2 + tr P)`, `L = g (Id + P)` with `P = M^* M`; returns `(M L^{-1}, L C, unitarity)`.
pub fn unitarize_split(m: &Loop, cl: &Loop) -> Result<(Loop, Loop, f64)> {
    let grid = *m.grid();
    if (grid.radius - 1.0).abs() > 1e-15 {
        return Err(Error::Domain("unitarization is defined on the unit circle".into()));
    }
    let p = m.star().mul(m)?;
    let t = p.trace().map(|x| (x + 2.0).inv());
    let g = sqrt_cut(&t)?;
    let l = Loop::from_samples(
        grid,
        m.annulus(),
        (0..grid.count).map(|k| (Mat2::identity() + p.samples()[k]).scale(g.samples()[k])).collect(),
    )?;
    let mu = m.mul(&l.inv()?)?;
    let cu = l.mul(cl)?;
    let unitarity = mu.unitarity_residual();
    Ok((mu, cu, unitarity))
}
