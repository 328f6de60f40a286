//! 2x2 matrix loops sampled on a circle, with a Laurent-coefficient view.
//!
//! A [`Loop`] stores samples on a [`CircleGrid`] of radius `rho`. Coefficients are
//! computed lazily by FFT and rescaled, `c_k = rho^{-k} * DFT_k / n`, and truncated to
//! the band `K <= n/2 - 1`. Loops built from an explicit Laurent expansion keep that
//! expansion as their coefficient view and are evaluated off the circle without
//! noise trimming.

use crate::error::{Error, Result};
use crate::mat2::{Mat2, ONE, ZERO};
use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Default representation tolerance.
pub const TOL_REP: f64 = 1e-11;
pub const DEFAULT_COUNT: usize = 256;
pub const DEFAULT_BAND: usize = 100;

/// Uniform samples on the circle `|lambda| = radius`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleGrid {
    pub radius: f64,
    pub count: usize,
}

impl CircleGrid {
    pub fn new(radius: f64, count: usize) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Domain(format!("grid radius must be positive, got {radius}")));
        }
        if count < 8 || !count.is_power_of_two() {
            return Err(Error::Domain(format!("grid count must be a power of two >= 8, got {count}")));
        }
        Ok(CircleGrid { radius, count })
    }
    pub fn unit(count: usize) -> Result<Self> {
        CircleGrid::new(1.0, count)
    }
    pub fn point(&self, m: usize) -> C64 {
        C64::from_polar(self.radius, 2.0 * PI * m as f64 / self.count as f64)
    }
    pub fn points(&self) -> Vec<C64> {
        (0..self.count).map(|m| self.point(m)).collect()
    }
    pub fn max_band(&self) -> usize {
        self.count / 2 - 1
    }
    /// Band used when none is requested: 100 for 256 samples, scaled with the count.
    pub fn default_band(&self) -> usize {
        (DEFAULT_BAND * self.count / DEFAULT_COUNT).min(self.max_band())
    }
    fn same_as(&self, o: &CircleGrid) -> bool {
        self.count == o.count && (self.radius - o.radius).abs() <= 1e-14 * self.radius
    }
}

/// Closed annulus `inner <= |lambda| <= outer`; `outer` may be infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annulus {
    pub inner: f64,
    pub outer: f64,
}

impl Annulus {
    pub fn new(inner: f64, outer: f64) -> Self {
        Annulus { inner, outer }
    }
    /// The punctured plane.
    pub fn punctured() -> Self {
        Annulus { inner: 0.0, outer: f64::INFINITY }
    }
    pub fn symmetric(r: f64) -> Self {
        Annulus { inner: r, outer: 1.0 / r }
    }
    pub fn contains(&self, r: f64) -> bool {
        let slack = 1e-12 * r.max(1e-300);
        r >= self.inner - slack && r <= self.outer + slack
    }
    pub fn intersect(&self, o: &Annulus) -> Annulus {
        Annulus { inner: self.inner.max(o.inner), outer: self.outer.min(o.outer) }
    }
    /// Image under `lambda -> 1/conj(lambda)`.
    pub fn reflect(&self) -> Annulus {
        let inner = if self.outer.is_infinite() { 0.0 } else { 1.0 / self.outer };
        let outer = if self.inner == 0.0 { f64::INFINITY } else { 1.0 / self.inner };
        Annulus { inner, outer }
    }
    fn sqrt(&self) -> Annulus {
        Annulus { inner: self.inner.sqrt(), outer: self.outer.sqrt() }
    }
    fn square(&self) -> Annulus {
        Annulus { inner: self.inner * self.inner, outer: self.outer * self.outer }
    }
}

/// Forward DFT of samples on radius `rho`, returning `c_{-K..=K}`.
pub fn dft_coefficients(samples: &[C64], radius: f64, band: usize) -> Vec<C64> {
    let n = samples.len();
    let mut buf = samples.to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let k = band as isize;
    (-k..=k)
        .map(|j| {
            let idx = j.rem_euclid(n as isize) as usize;
            let w = radius.powi(-(j as i32));
            // degrees whose weight overflows are far below the representable floor
            if w.is_finite() { buf[idx] / n as f64 * w } else { ZERO }
        })
        .collect()
}

/// Samples on `grid` of the Laurent polynomial with coefficients `c_{-K..=K}`.
pub fn synthesize(coeffs: &[C64], grid: &CircleGrid) -> Vec<C64> {
    let n = grid.count;
    let k = (coeffs.len() / 2) as isize;
    let mut buf = vec![ZERO; n];
    for (i, cf) in coeffs.iter().enumerate() {
        let j = i as isize - k;
        if *cf != ZERO {
            buf[j.rem_euclid(n as isize) as usize] += cf * grid.radius.powi(j as i32);
        }
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    buf
}

fn laurent_sum(coeffs: &[C64], lo: isize, hi: isize, lambda: C64) -> C64 {
    let k = (coeffs.len() / 2) as isize;
    // Horner on each side of zero.
    let mut pos = ZERO;
    for j in (1..=hi).rev() {
        pos = (pos + coeffs[(j + k) as usize]) * lambda;
    }
    let inv = lambda.inv();
    let mut neg = ZERO;
    for j in (1..=(-lo)).rev() {
        neg = (neg + coeffs[(k - j) as usize]) * inv;
    }
    coeffs[k as usize] + pos + neg
}

/// `x r^p`, with zero coefficients staying zero when the weight overflows.
fn weigh(x: f64, r: f64, p: i32) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * r.powi(p)
    }
}

/// Indices beyond which normalized coefficients sit at the rounding floor.
fn effective_range(norms: &[f64]) -> (isize, isize) {
    let k = (norms.len() / 2) as isize;
    let scale = norms.iter().cloned().fold(0.0, f64::max);
    let floor = 64.0 * f64::EPSILON * scale;
    let mut hi = 0;
    for j in (1..=k).rev() {
        if norms[(j + k) as usize] > floor {
            hi = j;
            break;
        }
    }
    let mut lo = 0;
    for j in (1..=k).rev() {
        if norms[(k - j) as usize] > floor {
            lo = -j;
            break;
        }
    }
    (lo, hi)
}

#[derive(Clone, Debug)]
struct Coeffs<T> {
    values: Vec<T>,
    lo: isize,
    hi: isize,
}

/// Scalar loop on a circle.
#[derive(Clone, Debug)]
pub struct ScalarLoop {
    grid: CircleGrid,
    band: usize,
    annulus: Annulus,
    samples: Vec<C64>,
    exact: bool,
    coeffs: OnceLock<Coeffs<C64>>,
}

impl ScalarLoop {
    pub fn from_samples(grid: CircleGrid, annulus: Annulus, samples: Vec<C64>) -> Result<Self> {
        if samples.len() != grid.count {
            return Err(Error::GridMismatch(format!(
                "{} samples for a grid of {}",
                samples.len(),
                grid.count
            )));
        }
        Ok(ScalarLoop { grid, band: grid.default_band(), annulus, samples, exact: false, coeffs: OnceLock::new() })
    }
    pub fn from_fn(grid: CircleGrid, annulus: Annulus, f: impl Fn(C64) -> C64) -> Self {
        let samples = grid.points().into_iter().map(f).collect();
        ScalarLoop { grid, band: grid.default_band(), annulus, samples, exact: false, coeffs: OnceLock::new() }
    }
    /// Loop given by an explicit Laurent expansion `c_{-K..=K}`.
    pub fn from_coefficients(grid: CircleGrid, annulus: Annulus, coeffs: Vec<C64>) -> Result<Self> {
        let band = coeffs.len() / 2;
        if band > grid.max_band() {
            return Err(Error::Domain(format!("band {band} exceeds count/2 - 1 = {}", grid.max_band())));
        }
        let samples = synthesize(&coeffs, &grid);
        let cell = OnceLock::new();
        let _ = cell.set(Coeffs { values: coeffs, lo: -(band as isize), hi: band as isize });
        Ok(ScalarLoop { grid, band, annulus, samples, exact: true, coeffs: cell })
    }
    pub fn constant(grid: CircleGrid, value: C64) -> Self {
        ScalarLoop::from_fn(grid, Annulus::punctured(), |_| value)
    }
    /// `lambda^power`.
    pub fn monomial(grid: CircleGrid, power: i32) -> Self {
        ScalarLoop::from_fn(grid, Annulus::punctured(), move |l| l.powi(power))
    }
    pub fn grid(&self) -> &CircleGrid {
        &self.grid
    }
    pub fn band(&self) -> usize {
        self.band
    }
    pub fn annulus(&self) -> Annulus {
        self.annulus
    }
    pub fn samples(&self) -> &[C64] {
        &self.samples
    }
    pub fn with_annulus(mut self, annulus: Annulus) -> Self {
        self.annulus = annulus;
        self
    }
    fn coeff_data(&self) -> &Coeffs<C64> {
        self.coeffs.get_or_init(|| {
            let values = dft_coefficients(&self.samples, self.grid.radius, self.band);
            let k = self.band as isize;
            let norms: Vec<f64> = values
                .iter()
                .enumerate()
                .map(|(i, z)| weigh(z.norm(), self.grid.radius, (i as isize - k) as i32))
                .collect();
            let (lo, hi) = effective_range(&norms);
            Coeffs { values, lo, hi }
        })
    }
    pub fn coefficients(&self) -> &[C64] {
        &self.coeff_data().values
    }
    /// Lowest and highest coefficient index above the rounding floor.
    pub fn effective_range(&self) -> (isize, isize) {
        let cd = self.coeff_data();
        (cd.lo, cd.hi)
    }
    /// Rough size of the rounding error of `eval` at modulus `r`.
    pub fn eval_noise(&self, r: f64) -> f64 {
        let cd = self.coeff_data();
        let b = self.band as isize;
        let scale = self.max_abs();
        (cd.lo..=cd.hi).map(|k| (r / self.grid.radius).powi(k as i32)).fold(0.0, f64::max) * 64.0 * f64::EPSILON * scale
            + (cd.lo..=cd.hi).map(|k| cd.values[(k + b) as usize].norm() * r.powi(k as i32)).sum::<f64>() * f64::EPSILON
    }
    pub fn coeff(&self, k: isize) -> C64 {
        let b = self.band as isize;
        if k.abs() > b {
            ZERO
        } else {
            self.coefficients()[(k + b) as usize]
        }
    }
    pub fn eval(&self, lambda: C64) -> Result<C64> {
        if !self.annulus.contains(lambda.norm()) {
            return Err(Error::Domain(format!(
                "|lambda| = {} outside annulus [{}, {}]",
                lambda.norm(),
                self.annulus.inner,
                self.annulus.outer
            )));
        }
        let cd = self.coeff_data();
        Ok(laurent_sum(&cd.values, cd.lo, cd.hi, lambda))
    }
    pub fn map(&self, f: impl Fn(C64) -> C64) -> ScalarLoop {
        let samples = self.samples.iter().map(|z| f(*z)).collect();
        ScalarLoop { grid: self.grid, band: self.band, annulus: self.annulus, samples, exact: false, coeffs: OnceLock::new() }
    }
    pub fn zip(&self, o: &ScalarLoop, f: impl Fn(C64, C64) -> C64) -> Result<ScalarLoop> {
        if !self.grid.same_as(&o.grid) {
            return Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, o.grid)));
        }
        let samples = self.samples.iter().zip(&o.samples).map(|(a, b)| f(*a, *b)).collect();
        Ok(ScalarLoop {
            grid: self.grid,
            band: self.band.max(o.band),
            annulus: self.annulus.intersect(&o.annulus),
            samples,
            exact: false,
            coeffs: OnceLock::new(),
        })
    }
    pub fn mul(&self, o: &ScalarLoop) -> Result<ScalarLoop> {
        self.zip(o, |a, b| a * b)
    }
    pub fn min_abs(&self) -> f64 {
        self.samples.iter().fold(f64::INFINITY, |m, z| m.min(z.norm()))
    }
    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, z| m.max(z.norm()))
    }
    pub fn max_dist(&self, o: &ScalarLoop) -> f64 {
        self.samples.iter().zip(&o.samples).fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }
    pub fn d_lambda(&self) -> ScalarLoop {
        let b = self.band as isize;
        let cf = self.coefficients();
        let values: Vec<C64> =
            (-b..=b).map(|k| if k + 1 > b { ZERO } else { cf[(k + 1 + b) as usize] * (k + 1) as f64 }).collect();
        let mut out = ScalarLoop::from_coefficients(self.grid, self.annulus, values).expect("band already valid");
        if !self.exact {
            out.exact = false;
            let cd = out.coeffs.get_mut().unwrap();
            let (lo, hi) = (self.coeff_data().lo, self.coeff_data().hi);
            cd.lo = (lo - 1).max(-b);
            cd.hi = (hi - 1).max(0);
        }
        out
    }
}

/// A 2x2 matrix loop.
#[derive(Clone, Debug)]
pub struct Loop {
    grid: CircleGrid,
    band: usize,
    annulus: Annulus,
    samples: Vec<Mat2>,
    exact: bool,
    coeffs: OnceLock<Coeffs<Mat2>>,
}

fn split_entries(samples: &[Mat2]) -> [Vec<C64>; 4] {
    let mut out: [Vec<C64>; 4] = Default::default();
    for m in samples {
        for (i, z) in m.entries().iter().enumerate() {
            out[i].push(*z);
        }
    }
    out
}

impl Loop {
    pub fn from_samples(grid: CircleGrid, annulus: Annulus, samples: Vec<Mat2>) -> Result<Self> {
        if samples.len() != grid.count {
            return Err(Error::GridMismatch(format!(
                "{} samples for a grid of {}",
                samples.len(),
                grid.count
            )));
        }
        Ok(Loop { grid, band: grid.default_band(), annulus, samples, exact: false, coeffs: OnceLock::new() })
    }
    pub fn from_fn(grid: CircleGrid, annulus: Annulus, f: impl Fn(C64) -> Mat2) -> Self {
        let samples = grid.points().into_iter().map(f).collect();
        Loop { grid, band: grid.default_band(), annulus, samples, exact: false, coeffs: OnceLock::new() }
    }
    /// Loop given by an explicit Laurent expansion `c_{-K..=K}`.
    pub fn from_coefficients(grid: CircleGrid, annulus: Annulus, coeffs: Vec<Mat2>) -> Result<Self> {
        let band = coeffs.len() / 2;
        if band > grid.max_band() {
            return Err(Error::Domain(format!("band {band} exceeds count/2 - 1 = {}", grid.max_band())));
        }
        let mut parts: [Vec<C64>; 4] = Default::default();
        for m in &coeffs {
            for (i, z) in m.entries().iter().enumerate() {
                parts[i].push(*z);
            }
        }
        let s: Vec<Vec<C64>> = parts.iter().map(|p| synthesize(p, &grid)).collect();
        let samples = (0..grid.count).map(|m| Mat2::new(s[0][m], s[1][m], s[2][m], s[3][m])).collect();
        let cell = OnceLock::new();
        let _ = cell.set(Coeffs { values: coeffs, lo: -(band as isize), hi: band as isize });
        Ok(Loop { grid, band, annulus, samples, exact: true, coeffs: cell })
    }
    pub fn constant(grid: CircleGrid, m: Mat2) -> Self {
        Loop::from_fn(grid, Annulus::punctured(), move |_| m)
    }
    pub fn identity(grid: CircleGrid) -> Self {
        Loop::constant(grid, Mat2::identity())
    }
    /// Change the retained band, enforcing the aliasing rule.
    pub fn with_band(mut self, band: usize) -> Result<Self> {
        if band > self.grid.max_band() {
            return Err(Error::Domain(format!("band {band} exceeds count/2 - 1 = {}", self.grid.max_band())));
        }
        if band != self.band {
            self.band = band;
            self.exact = false;
            self.coeffs = OnceLock::new();
        }
        Ok(self)
    }
    pub fn with_annulus(mut self, annulus: Annulus) -> Self {
        self.annulus = annulus;
        self
    }
    pub fn grid(&self) -> &CircleGrid {
        &self.grid
    }
    pub fn band(&self) -> usize {
        self.band
    }
    pub fn annulus(&self) -> Annulus {
        self.annulus
    }
    pub fn samples(&self) -> &[Mat2] {
        &self.samples
    }
    pub fn is_exact(&self) -> bool {
        self.exact
    }

    fn coeff_data(&self) -> &Coeffs<Mat2> {
        self.coeffs.get_or_init(|| {
            let parts = split_entries(&self.samples);
            let c: Vec<Vec<C64>> = parts.iter().map(|p| dft_coefficients(p, self.grid.radius, self.band)).collect();
            let values: Vec<Mat2> =
                (0..c[0].len()).map(|i| Mat2::new(c[0][i], c[1][i], c[2][i], c[3][i])).collect();
            let k = self.band as isize;
            let norms: Vec<f64> = values
                .iter()
                .enumerate()
                .map(|(i, m)| weigh(m.max_abs(), self.grid.radius, (i as isize - k) as i32))
                .collect();
            let (lo, hi) = effective_range(&norms);
            Coeffs { values, lo, hi }
        })
    }
    /// Laurent coefficients `c_{-K..=K}`.
    pub fn coefficients(&self) -> &[Mat2] {
        &self.coeff_data().values
    }
    pub fn coeff(&self, k: isize) -> Mat2 {
        let b = self.band as isize;
        if k.abs() > b {
            Mat2::zero()
        } else {
            self.coefficients()[(k + b) as usize]
        }
    }

    pub fn eval(&self, lambda: C64) -> Result<Mat2> {
        if !self.annulus.contains(lambda.norm()) {
            return Err(Error::Domain(format!(
                "|lambda| = {} outside annulus [{}, {}]",
                lambda.norm(),
                self.annulus.inner,
                self.annulus.outer
            )));
        }
        let cd = self.coeff_data();
        let k = self.band as isize;
        let inv = lambda.inv();
        let mut pos = Mat2::zero();
        for j in (1..=cd.hi).rev() {
            pos = (pos + cd.values[(j + k) as usize]).scale(lambda);
        }
        let mut neg = Mat2::zero();
        for j in (1..=(-cd.lo)).rev() {
            neg = (neg + cd.values[(k - j) as usize]).scale(inv);
        }
        Ok(cd.values[k as usize] + pos + neg)
    }

    pub fn entry(&self, i: usize, j: usize) -> ScalarLoop {
        let idx = 2 * i + j;
        let samples = self.samples.iter().map(|m| m.entries()[idx]).collect();
        ScalarLoop { grid: self.grid, band: self.band, annulus: self.annulus, samples, exact: false, coeffs: OnceLock::new() }
    }
    pub fn det(&self) -> ScalarLoop {
        let samples = self.samples.iter().map(|m| m.det()).collect();
        ScalarLoop { grid: self.grid, band: self.band, annulus: self.annulus, samples, exact: false, coeffs: OnceLock::new() }
    }
    pub fn trace(&self) -> ScalarLoop {
        let samples = self.samples.iter().map(|m| m.trace()).collect();
        ScalarLoop { grid: self.grid, band: self.band, annulus: self.annulus, samples, exact: false, coeffs: OnceLock::new() }
    }
    pub fn map(&self, f: impl Fn(&Mat2) -> Mat2) -> Loop {
        let samples = self.samples.iter().map(f).collect();
        Loop { grid: self.grid, band: self.band, annulus: self.annulus, samples, exact: false, coeffs: OnceLock::new() }
    }
    /// Pointwise map that also receives the sample point.
    pub fn map_with_point(&self, f: impl Fn(C64, &Mat2) -> Mat2) -> Loop {
        let pts = self.grid.points();
        let samples = self.samples.iter().zip(pts).map(|(m, l)| f(l, m)).collect();
        Loop { grid: self.grid, band: self.band, annulus: self.annulus, samples, exact: false, coeffs: OnceLock::new() }
    }
    pub fn scale_by(&self, s: &ScalarLoop) -> Result<Loop> {
        if !self.grid.same_as(&s.grid) {
            return Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, s.grid)));
        }
        let samples = self.samples.iter().zip(&s.samples).map(|(m, z)| m.scale(*z)).collect();
        Ok(Loop {
            grid: self.grid,
            band: self.band.max(s.band),
            annulus: self.annulus.intersect(&s.annulus),
            samples,
            exact: false,
            coeffs: OnceLock::new(),
        })
    }

    fn check_grid(&self, o: &Loop) -> Result<()> {
        if !self.grid.same_as(&o.grid) {
            return Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, o.grid)));
        }
        Ok(())
    }
    pub fn zip(&self, o: &Loop, f: impl Fn(&Mat2, &Mat2) -> Mat2) -> Result<Loop> {
        self.check_grid(o)?;
        let samples = self.samples.iter().zip(&o.samples).map(|(a, b)| f(a, b)).collect();
        Ok(Loop {
            grid: self.grid,
            band: (self.band + o.band).min(self.grid.max_band()),
            annulus: self.annulus.intersect(&o.annulus),
            samples,
            exact: false,
            coeffs: OnceLock::new(),
        })
    }
    /// Pointwise product.
    pub fn mul(&self, o: &Loop) -> Result<Loop> {
        self.zip(o, |a, b| *a * *b)
    }
    pub fn add(&self, o: &Loop) -> Result<Loop> {
        let mut out = self.zip(o, |a, b| *a + *b)?;
        out.band = self.band.max(o.band);
        Ok(out)
    }
    pub fn sub(&self, o: &Loop) -> Result<Loop> {
        let mut out = self.zip(o, |a, b| *a - *b)?;
        out.band = self.band.max(o.band);
        Ok(out)
    }
    /// Pointwise inverse.
    pub fn inv(&self) -> Result<Loop> {
        let scale = self.max_abs().max(1.0);
        let mut samples = Vec::with_capacity(self.samples.len());
        for (index, m) in self.samples.iter().enumerate() {
            let det = m.det();
            if det.norm() <= 1e-14 * scale * scale || !det.is_finite() {
                return Err(Error::Singular { index, det: det.norm() });
            }
            samples.push(m.adj().scale(det.inv()));
        }
        Ok(Loop { grid: self.grid, band: self.band, annulus: self.annulus, samples, exact: false, coeffs: OnceLock::new() })
    }

    /// `(g*)(lambda) = conj(g(1/conj(lambda)))^T`, kept on the same circle.
    pub fn star(&self) -> Loop {
        let annulus = self.annulus.reflect();
        if (self.grid.radius - 1.0).abs() < 1e-15 {
            let samples = self.samples.iter().map(|m| m.h()).collect();
            return Loop { grid: self.grid, band: self.band, annulus, samples, exact: false, coeffs: OnceLock::new() };
        }
        // Coefficients below the noise floor would be amplified by rho^{-2k}; drop them.
        let cd = self.coeff_data();
        let k = self.band as isize;
        let values: Vec<Mat2> = (-k..=k)
            .rev()
            .map(|j| if j < cd.lo || j > cd.hi { Mat2::zero() } else { cd.values[(j + k) as usize].h() })
            .collect();
        let mut out = Loop::from_coefficients(self.grid, annulus, values).expect("band already valid");
        out.exact = self.exact;
        out
    }

    /// Product by Laurent convolution when both factors carry exact coefficients, so the
    /// result stays exact (truncated to the grid's band). Otherwise the sample product.
    pub fn mul_series(&self, o: &Loop) -> Result<Loop> {
        if !(self.exact && o.exact) {
            return self.mul(o);
        }
        if !self.grid.same_as(&o.grid) {
            return Err(Error::GridMismatch("product of loops on different grids".into()));
        }
        let (ka, kb) = (self.band as isize, o.band as isize);
        let k = (ka + kb).min(self.grid.max_band() as isize);
        let (ca, cb) = (self.coefficients(), o.coefficients());
        let mut values = vec![Mat2::zero(); (2 * k + 1) as usize];
        for i in -ka..=ka {
            let a = ca[(i + ka) as usize];
            for j in (-kb).max(-k - i)..=kb.min(k - i) {
                values[(i + j + k) as usize] = values[(i + j + k) as usize] + a * cb[(j + kb) as usize];
            }
        }
        Loop::from_coefficients(self.grid, self.annulus.intersect(&o.annulus), values)
    }

    /// `g(1/conj(lambda))^H` for an exact loop, coefficient by coefficient.
    pub fn star_series(&self) -> Result<Loop> {
        if !self.exact {
            return Ok(self.star());
        }
        let values = self.coefficients().iter().rev().map(|m| m.h()).collect();
        Loop::from_coefficients(self.grid, self.annulus.reflect(), values)
    }

    /// `sigma3 g(-lambda) sigma3^{-1}`.
    pub fn sigma(&self) -> Loop {
        let n = self.grid.count;
        let samples = (0..n)
            .map(|m| {
                let g = self.samples[(m + n / 2) % n];
                Mat2::new(g.a, -g.b, -g.c, g.d)
            })
            .collect();
        Loop { grid: self.grid, band: self.band, annulus: self.annulus, samples, exact: false, coeffs: OnceLock::new() }
    }
    pub fn twist_defect(&self) -> f64 {
        let s = self.sigma();
        self.max_dist(&s) / self.max_abs().max(1.0)
    }
    pub fn is_twisted(&self) -> bool {
        self.twist_defect() <= TOL_REP
    }

    /// `(a, b; c, d)(lambda) -> (a(l^2), l b(l^2); l^{-1} c(l^2), d(l^2))` on radius `sqrt(rho)`.
    pub fn twist(&self) -> Result<Loop> {
        let n = self.grid.count;
        let grid = CircleGrid::new(self.grid.radius.sqrt(), 2 * n)?;
        let annulus = self.annulus.sqrt();
        if self.exact {
            let ku = self.band as isize;
            let kt = 2 * ku + 1;
            let mut values = vec![Mat2::zero(); (2 * kt + 1) as usize];
            for j in -ku..=ku {
                let m = self.coefficients()[(j + ku) as usize];
                values[(2 * j + kt) as usize].a = m.a;
                values[(2 * j + kt) as usize].d = m.d;
                values[(2 * j + 1 + kt) as usize].b = m.b;
                values[(2 * j - 1 + kt) as usize].c = m.c;
            }
            return Loop::from_coefficients(grid, annulus, values);
        }
        let samples = (0..2 * n)
            .map(|m| {
                let l = grid.point(m);
                let g = self.samples[m % n];
                Mat2::new(g.a, l * g.b, g.c / l, g.d)
            })
            .collect();
        let band = (2 * self.band + 1).min(grid.max_band());
        Ok(Loop { grid, band, annulus, samples, exact: false, coeffs: OnceLock::new() })
    }

    /// Inverse of [`Loop::twist`]; radius `rho -> rho^2`, count halves.
    pub fn untwist(&self) -> Result<Loop> {
        let defect = self.twist_defect();
        if defect > TOL_REP {
            return Err(Error::Contract(format!("untwist needs a twisted loop (defect {defect:e})")));
        }
        let n = self.grid.count;
        let grid = CircleGrid::new(self.grid.radius * self.grid.radius, n / 2)?;
        let annulus = self.annulus.square();
        if self.exact {
            let kt = self.band as isize;
            let ku = ((kt - 1) / 2).max(0).min(grid.max_band() as isize);
            let cf = self.coefficients();
            let at = |j: isize| if j.abs() <= kt { cf[(j + kt) as usize] } else { Mat2::zero() };
            let values = (-ku..=ku)
                .map(|j| Mat2::new(at(2 * j).a, at(2 * j + 1).b, at(2 * j - 1).c, at(2 * j).d))
                .collect();
            return Loop::from_coefficients(grid, annulus, values);
        }
        let samples = (0..n / 2)
            .map(|m| {
                let l = self.grid.point(m);
                let g = self.samples[m];
                Mat2::new(g.a, g.b / l, g.c * l, g.d)
            })
            .collect();
        let band = (self.band / 2).min(grid.max_band());
        Ok(Loop { grid, band, annulus, samples, exact: false, coeffs: OnceLock::new() })
    }

    /// Exact lambda-derivative from coefficients: `(dg)_k = (k+1) c_{k+1}`.
    pub fn d_lambda(&self) -> Loop {
        let b = self.band as isize;
        let cf = self.coefficients();
        let values: Vec<Mat2> = (-b..=b)
            .map(|k| if k + 1 > b { Mat2::zero() } else { cf[(k + 1 + b) as usize].scale_re((k + 1) as f64) })
            .collect();
        let mut out = Loop::from_coefficients(self.grid, self.annulus, values).expect("band already valid");
        if !self.exact {
            out.exact = false;
            let (lo, hi) = (self.coeff_data().lo, self.coeff_data().hi);
            let cd = out.coeffs.get_mut().unwrap();
            cd.lo = (lo - 1).max(-b);
            cd.hi = (hi - 1).max(0);
        }
        out
    }

    /// Re-sample on another circle inside the annulus.
    pub fn resample(&self, grid: CircleGrid) -> Result<Loop> {
        if !self.annulus.contains(grid.radius) {
            return Err(Error::Domain(format!("radius {} outside annulus", grid.radius)));
        }
        if grid.same_as(&self.grid) {
            return Ok(self.clone());
        }
        if self.exact && self.band <= grid.max_band() {
            let mut out = Loop::from_coefficients(grid, self.annulus, self.coefficients().to_vec())?;
            out.band = self.band;
            return Ok(out);
        }
        let samples = grid.points().into_iter().map(|l| self.eval(l)).collect::<Result<Vec<_>>>()?;
        let mut out = Loop::from_samples(grid, self.annulus, samples)?;
        out.band = self.band.min(grid.max_band());
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.max_abs()))
    }
    /// Sup-norm distance over samples.
    pub fn max_dist(&self, o: &Loop) -> f64 {
        self.samples.iter().zip(&o.samples).fold(0.0, |m, (a, b)| m.max((*a - *b).max_abs()))
    }
    pub fn dist_to_identity(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, a| m.max((*a - Mat2::identity()).max_abs()))
    }
    /// `max |g^H g - Id|` over samples (meaningful on the unit circle).
    pub fn unitarity_residual(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, a| m.max((a.h() * *a - Mat2::identity()).max_abs()))
    }
    /// Sum of normalized coefficient moduli at negative degrees.
    pub fn negative_mass(&self) -> f64 {
        let b = self.band as isize;
        let cf = self.coefficients();
        (1..=b).map(|j| weigh(cf[(b - j) as usize].max_abs(), self.grid.radius, -(j as i32))).sum()
    }
    /// Largest coefficient modulus at degrees `k` with `k` odd (diagonal) or even (off-diagonal).
    pub fn twisted_parity_defect(&self) -> f64 {
        let b = self.band as isize;
        let cf = self.coefficients();
        let mut worst: f64 = 0.0;
        for k in -b..=b {
            let m = cf[(k + b) as usize];
            let v = if k % 2 == 0 { m.b.norm().max(m.c.norm()) } else { m.a.norm().max(m.d.norm()) };
            worst = worst.max(weigh(v, self.grid.radius, k as i32));
        }
        worst
    }
}

/// `exp(p B)` for a scalar loop `p` and constant `B = off[a, b]`.
pub fn exp_offdiag(p: &ScalarLoop, a: C64, b: C64) -> Loop {
    let bm = Mat2::off(a, b);
    let ab = a * b;
    let samples = p
        .samples()
        .iter()
        .map(|&pv| {
            let (ch, shc) = crate::mat2::cosh_sinhc(pv * pv * ab);
            Mat2::scalar(ch) + bm.scale(shc * pv)
        })
        .collect();
    Loop::from_samples(*p.grid(), p.annulus(), samples).expect("same grid")
}

/// Scalar `lambda` on a grid.
pub fn lambda_loop(grid: CircleGrid) -> ScalarLoop {
    ScalarLoop::monomial(grid, 1)
}

/// JSON record of a loop's coefficients.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LoopRecord {
    pub radius: f64,
    pub count: usize,
    pub band: usize,
    #[serde(default)]
    pub annulus: Option<(f64, Option<f64>)>,
    /// Rows `[k, re11, im11, re12, im12, re21, im21, re22, im22]`.
    pub coefficients: Vec<[f64; 9]>,
}

impl Loop {
    pub fn to_record(&self) -> LoopRecord {
        let b = self.band as isize;
        let coefficients = self
            .coefficients()
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let e = m.entries();
                [(i as isize - b) as f64, e[0].re, e[0].im, e[1].re, e[1].im, e[2].re, e[2].im, e[3].re, e[3].im]
            })
            .collect();
        let outer = if self.annulus.outer.is_finite() { Some(self.annulus.outer) } else { None };
        LoopRecord {
            radius: self.grid.radius,
            count: self.grid.count,
            band: self.band,
            annulus: Some((self.annulus.inner, outer)),
            coefficients,
        }
    }
    pub fn from_record(rec: &LoopRecord) -> Result<Loop> {
        let grid = CircleGrid::new(rec.radius, rec.count)?;
        if rec.band > grid.max_band() {
            return Err(Error::Domain(format!("band {} exceeds count/2 - 1", rec.band)));
        }
        let b = rec.band as isize;
        let mut values = vec![Mat2::zero(); (2 * b + 1) as usize];
        for row in &rec.coefficients {
            let k = row[0].round() as isize;
            if k.abs() > b {
                return Err(Error::Domain(format!("coefficient index {k} outside band {b}")));
            }
            values[(k + b) as usize] = Mat2::new(
                C64::new(row[1], row[2]),
                C64::new(row[3], row[4]),
                C64::new(row[5], row[6]),
                C64::new(row[7], row[8]),
            );
        }
        let annulus = match rec.annulus {
            Some((i, o)) => Annulus::new(i, o.unwrap_or(f64::INFINITY)),
            None => Annulus::punctured(),
        };
        Loop::from_coefficients(grid, annulus, values)
    }
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("serializable")
    }
    pub fn from_json(s: &str) -> Result<Loop> {
        let rec: LoopRecord = serde_json::from_str(s).map_err(|e| Error::Domain(e.to_string()))?;
        Loop::from_record(&rec)
    }
}

/// Identity helper used by callers needing `1` as a scalar loop.
pub fn one_loop(grid: CircleGrid) -> ScalarLoop {
    ScalarLoop::constant(grid, ONE)
}
