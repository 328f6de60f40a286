use loopforge::dpw::{vacuum_unitary, DomainGrid, FrameField};
use loopforge::dressing::*;
use loopforge::factorization::{r_iwasawa_twisted, RIwasawaOptions};
use loopforge::loopcore::{Annulus, CircleGrid, Loop};
use loopforge::mat2::{c, Mat2};
use loopforge::monodromy::spectral_set;
use loopforge::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// `exp` of a random twisted su(2)-valued Laurent polynomial.
fn random_twisted_unitary(rng: &mut ChaCha8Rng, degree: usize, amp: f64) -> impl Fn(CircleGrid) -> Loop {
    let mut terms: Vec<Mat2> = Vec::new();
    for k in 1..=degree {
        let (a, b) = (c(rng.gen_range(-amp..amp), rng.gen_range(-amp..amp)), c(rng.gen_range(-amp..amp), rng.gen_range(-amp..amp)));
        terms.push(if k % 2 == 1 { Mat2::off(a, b) } else { Mat2::diag(a, -a) });
    }
    let d0 = rng.gen_range(-0.5..0.5);
    move |grid| {
        Loop::from_fn(grid, Annulus::punctured(), |l| {
            let mut x = Mat2::diag(c(0.0, d0), c(0.0, -d0));
            for (k, t) in terms.iter().enumerate() {
                let p = l.powi(k as i32 + 1);
                x = x + t.scale(p) - t.h().scale(p.inv());
            }
            x.exp()
        })
    }
}

fn factors(alpha: C64) -> Vec<SimpleFactor> {
    vec![SimpleFactor::twisted_diagonal(alpha).unwrap(), SimpleFactor::twisted_offdiagonal(alpha, 0.7).unwrap()]
}

#[test]
fn closed_form_dressing_agrees_with_numerical_iwasawa() {
    let lg = CircleGrid::unit(256).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for trial in 0..10 {
        let gen = random_twisted_unitary(&mut rng, 3, 0.1);
        let f = gen(lg);
        let m = if trial % 2 == 0 { 0.5 } else { 0.7 };
        let alpha = C64::from_polar(m, rng.gen_range(0.0..2.0 * PI));
        for sf in factors(alpha) {
            let closed = simple_dress_loop(&sf, &f).unwrap();
            let pg = CircleGrid::new(sf.working_radius(), 256).unwrap();
            let g = sf.on_grid(pg).unwrap().mul(&gen(pg)).unwrap();
            let (p, _) = r_iwasawa_twisted(&g, &RIwasawaOptions::default()).unwrap();
            let d = closed.max_dist(&p.unitary) / closed.max_abs();
            worst = worst.max(d);
            // positive factor agrees as well
            let pos = simple_dress_positive(&sf, &f, pg).unwrap();
            let dp = pos.max_dist(&p.positive) / pos.max_abs();
            assert!(dp < 1e-6, "{trial} {:?} unitary {d} positive {dp}", sf.kind);
            assert!(closed.unitarity_residual() < 1e-9);
        }
    }
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn untwisted_dressing_is_an_iwasawa_split() {
    // U = psi F psi1^{-1} must be unitary on the circle and continue analytically across |alpha|
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let gen = random_twisted_unitary(&mut rng, 1, 0.2);
    let lg = CircleGrid::unit(256).unwrap();
    let f = gen(lg);
    let alpha = c(0.3, 0.4);
    let l = Line::new(c(1.0, 0.0), c(0.2, -0.5)).unwrap();
    let sf = SimpleFactor::untwisted(alpha, l).unwrap();
    let u = simple_dress_loop(&sf, &f).unwrap();
    assert!(u.unitarity_residual() < 1e-10);
    // direct values inside |alpha| versus the continued series
    let inner = CircleGrid::new(0.7 * alpha.norm(), 256).unwrap();
    let l1 = l.apply(&f.eval(alpha).unwrap().h()).unwrap();
    let (q, _) = loopforge::mat2::qr_positive(&psi(alpha, &l1, c(0.0, 0.0))).unwrap();
    let fi = gen(inner);
    let direct = Loop::from_samples(
        inner,
        Annulus::punctured(),
        inner.points().iter().zip(fi.samples()).map(|(x, m)| psi(alpha, &l, *x) * *m * psi_inv(alpha, &l1, *x) * q).collect(),
    )
    .unwrap();
    let cont = u.with_annulus(Annulus::punctured()).resample(inner).unwrap();
    let d = cont.max_dist(&direct) / direct.max_abs();
    assert!(d < 1e-8, "{d}");
}

#[test]
fn simple_factor_values() {
    for m in [0.5, 0.7] {
        let alpha = C64::from_polar(m, 0.9);
        for sf in factors(alpha) {
            for l in [c(0.0, 0.0), c(0.1, 0.2), c(0.0, 0.8), C64::from_polar(1.0, 0.4), c(1.5, 0.3)] {
                if (l.norm() - m).abs() < 0.05 || l.norm() * m > 1.0 {
                    continue;
                }
                let g = sf.eval(l).unwrap();
                assert!((g.det() - 1.0).norm() < 1e-12, "{l} {}", g.det());
            }
            // unitary on the unit circle, twisted up to sign
            let u = sf.on_grid(CircleGrid::unit(64).unwrap()).unwrap();
            assert!(u.unitarity_residual() < 1e-12);
            let pg = CircleGrid::new(0.5 * m, 64).unwrap();
            let p = sf.on_grid(pg).unwrap();
            assert!(p.twist_defect() < 1e-12);
            assert!(p.negative_mass() < 1e-12 * p.max_abs());
        }
        let g0 = SimpleFactor::twisted_diagonal(alpha).unwrap().eval(c(0.0, 0.0)).unwrap();
        assert!((g0 - Mat2::diag(alpha.inv(), alpha)).max_abs() < 1e-14);
        let g0 = SimpleFactor::twisted_offdiagonal(alpha, 0.3).unwrap().eval(c(0.0, 0.0)).unwrap();
        assert!((g0 - Mat2::identity()).max_abs() < 1e-14);
    }
    assert!(SimpleFactor::twisted_diagonal(c(1.0, 0.0)).is_err());
    assert!(SimpleFactor::twisted_diagonal(c(0.5, 0.0)).unwrap().on_grid(CircleGrid::new(0.5, 32).unwrap()).is_err());
}

#[test]
fn record_round_trip() {
    for sf in [
        SimpleFactor::twisted_offdiagonal(c(0.3, 0.2), 1.1).unwrap(),
        SimpleFactor::twisted_diagonal(c(-0.4, 0.0)).unwrap(),
        SimpleFactor::untwisted(c(0.1, 0.5), Line::new(c(0.0, 0.0), c(0.0, 2.0)).unwrap()).unwrap(),
    ] {
        let js = serde_json::to_string(&sf.to_record()).unwrap();
        let back = SimpleFactor::from_record(&serde_json::from_str(&js).unwrap()).unwrap();
        assert_eq!(back.kind, sf.kind);
        assert!((back.alpha - sf.alpha).norm() < 1e-15 && back.line.distance(&sf.line) < 1e-7);
    }
}

fn vacuum_frames(lg: CircleGrid) -> FrameField {
    let grid = DomainGrid::rect((0.0, 0.5), (0.0, 0.5), 3, 3).unwrap();
    let unitary: Vec<Loop> = (0..grid.len()).map(|k| vacuum_unitary(grid.point(k % 3, k / 3), lg)).collect();
    let positive = (0..grid.len()).map(|_| Loop::identity(lg)).collect();
    FrameField::from_parts(grid, (0, 0), unitary, positive).unwrap()
}

#[test]
fn field_dressing_two_ways() {
    let lg = CircleGrid::unit(512).unwrap();
    let frames = vacuum_frames(lg);
    let sf = SimpleFactor::twisted_offdiagonal(c(0.45, 0.2), 0.4).unwrap();
    let a = simple_dress(&sf, &frames).unwrap();
    let h = sf.on_grid(CircleGrid::new(sf.working_radius(), 512).unwrap()).unwrap();
    let b = dress(&h, &frames).unwrap();
    assert!(a.base_frame().dist_to_identity() < 1e-12);
    for k in 0..frames.unitary.len() {
        assert!(a.unitary[k].max_dist(&b.frames.unitary[k]) < 1e-6);
    }
    // B(base) = h when the base frame is the identity
    let id = vacuum_frames(lg);
    let mut idf = id.clone();
    for u in idf.unitary.iter_mut() {
        *u = Loop::identity(lg);
    }
    assert!(dress(&h, &idf).unwrap().base_residual < 1e-8);
}

#[test]
fn invariance_of_monodromy_lines() {
    let lg = CircleGrid::new(0.4, 256).unwrap();
    let q = c(0.0, PI);
    let chi = Loop::from_fn(lg, Annulus::punctured(), move |l| Mat2::a_mat().scale(q / l - q.conj() * l).exp());
    // chi(alpha) = +-Id at spectral points: every line is invariant
    let alpha = spectral_set(q, 0.3).unwrap().into_iter().find(|a| a.norm() < 0.99).unwrap();
    let chiu = chi.with_annulus(Annulus::punctured());
    let inv = invariance_check(&chiu, alpha, &Line::balanced(0.3)).unwrap();
    assert!(inv < 1e-8, "{alpha} {inv} {}", chiu.eval(alpha).unwrap().max_abs());
    assert!(invariance_check(&chiu, c(0.5, 0.1), &Line::balanced(0.3)).unwrap() > 1e-3);
    // generalized dressing with a constant line equals the plain one
    let f = vacuum_unitary(c(0.2, 0.1), CircleGrid::unit(256).unwrap());
    let l = Line::new(c(1.0, 0.0), c(0.3, 0.2)).unwrap();
    let sf = SimpleFactor::untwisted(c(0.4, 0.0), l).unwrap();
    let g = generalized_simple_dress(sf.alpha, |_| (l.a, l.b), &f).unwrap();
    let plain = simple_dress_loop(&sf, &f).unwrap();
    let (p0, _) = loopforge::mat2::qr_positive(&psi(sf.alpha, &l.apply(&f.eval(sf.alpha).unwrap().h()).unwrap(), c(0.0, 0.0))).unwrap();
    assert!(g.map(|m| *m * p0).max_dist(&plain) < 1e-12);
    assert!(g.unitarity_residual() < 1e-9);
}

#[test]
fn flow_identity_and_additivity() {
    let lg = CircleGrid::unit(128).unwrap();
    let frames = vacuum_frames(lg);
    let phi = [c(0.3, 0.1), c(0.05, -0.02)];
    let z = flow(&frames, &phi, 0.0, false).unwrap();
    for (a, b) in z.unitary.iter().zip(&frames.unitary) {
        assert!(a.max_dist(b) < 1e-12);
    }
    let ab = flow(&flow(&frames, &phi, 0.4, false).unwrap(), &phi, 0.7, false).unwrap();
    let one = flow(&frames, &phi, 1.1, false).unwrap();
    for (a, b) in ab.unitary.iter().zip(&one.unitary) {
        assert!(a.max_dist(b) < 1e-8);
    }
    // first-order flow of the vacuum is a translation of the base point
    let t = 0.25;
    let only = [c(0.2, 0.0)];
    let moved = flow(&frames, &only, t, false).unwrap();
    let w = frames.grid.point(1, 1);
    let want = vacuum_unitary(w + only[0] * t, lg);
    assert!(moved.at(1, 1).max_dist(&want) < 1e-10);
    let ren = flow(&frames, &phi, 0.5, true).unwrap();
    assert!(ren.base_frame().dist_to_identity() < 1e-12);
}

#[test]
fn delaunay_dressing_identities() {
    for (wa, wb) in [(0.3f64, 0.2f64), (0.45, 0.05)] {
        let rho = (wa / wb).sqrt().min((wb / wa).sqrt());
        let grid = CircleGrid::new(0.5 * rho, 256).unwrap();
        let d = delaunay_dress_matrix(wa, wb, grid).unwrap();
        assert!(d.identity_residual < 1e-12, "{}", d.identity_residual);
        assert!((d.q - c(0.0, 2.0 * PI * (wa * wb).sqrt())).norm() < 1e-15);
        assert!(d.h.samples().iter().all(|m| (m.det() - 1.0).norm() < 1e-12));
        assert!(d.h.negative_mass() < 1e-10 * d.h.max_abs());
        // exp(p_q hAh^{-1}) = exp(2 pi i D)
        for (l, hv) in grid.points().iter().zip(d.h.samples()).step_by(17) {
            let lhs = (*hv * Mat2::a_mat() * hv.inv().unwrap()).scale(delaunay_p(wa, wb, *l)).exp();
            let rhs = delaunay_residue(wa, wb, *l).scale(c(0.0, 2.0 * PI)).exp();
            assert!((lhs - rhs).max_abs() < 1e-9 * rhs.max_abs());
        }
    }
    assert!(delaunay_dress_matrix(0.3, 0.3, CircleGrid::new(0.2, 32).unwrap()).is_err());
    assert!(delaunay_dress_matrix(0.3, 0.2, CircleGrid::new(0.95, 32).unwrap()).is_err());
}

#[test]
fn blaschke_membership() {
    let q = c(0.0, PI);
    let set: Vec<C64> = spectral_set(q, 0.2).unwrap().into_iter().filter(|a| a.norm() < 0.99).collect();
    let alpha = set[0];
    let b = blaschke_dressing(&[alpha], q, CircleGrid::new(0.5 * alpha.norm(), 64).unwrap()).unwrap();
    assert!(b.spectral);
    assert!(b.h.samples().iter().all(|m| (m.det() - 1.0).norm() < 1e-12));
    let ok = |al: C64| {
        move |l: C64| {
            let a2 = blaschke_a2(&[al], l);
            let m = Mat2::a_mat().scale(q / l - q.conj() * l);
            // h exp(p A) h^{-1} with h = diag(a, 1/a)
            let e = m.exp();
            Mat2::new(e.entries()[0], e.entries()[1] * a2, e.entries()[2] / a2, e.entries()[3])
        }
    };
    let r = 0.5 * alpha.norm();
    let good = loop_group_membership(ok(alpha), r, 32, 256).unwrap();
    assert!(good < 1e-8, "{good}");
    let bad_alpha = c(0.6, 0.1);
    let bad = loop_group_membership(ok(bad_alpha), r, 32, 256).unwrap();
    assert!(bad > 1e-2, "{bad}");
    let nb = blaschke_dressing(&[bad_alpha], q, CircleGrid::new(0.3, 64).unwrap()).unwrap();
    assert!(!nb.spectral && nb.offenders.len() == 1);
}
