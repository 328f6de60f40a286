use loopforge::dpw::{sym_bobenko, vacuum_holomorphic, vacuum_positive, vacuum_unitary, DomainGrid, SurfaceMesh};
use loopforge::dressing::{delaunay_dress_matrix, dress, SimpleFactor};
use loopforge::factorization::IwasawaOptions;
use loopforge::loopcore::{Annulus, CircleGrid, Loop};
use loopforge::mat2::{c, Mat2};
use loopforge::surfaces::*;
use loopforge::{Error, C64};
use nalgebra::{Matrix3, Vector3};
use std::f64::consts::PI;

fn taylor_exp(m: Mat2, terms: usize) -> Mat2 {
    let mut sum = Mat2::identity();
    let mut term = Mat2::identity();
    for k in 1..terms {
        term = (term * m).scale_re(1.0 / k as f64);
        sum = sum + term;
    }
    sum
}

#[test]
fn laurent_vacuum_matches_samples() {
    let lg = CircleGrid::unit(128).unwrap();
    for w in [c(0.0, 0.0), c(0.7, -0.4), c(-1.0, 1.0)] {
        let f = exp_a_laurent(w, -w.conj(), lg).unwrap();
        assert!(f.max_dist(&vacuum_unitary(w, lg)) < 1e-13);
        let b = exp_a_laurent(c(0.0, 0.0), w + w.conj(), lg).unwrap();
        assert!(b.max_dist(&vacuum_positive(w, lg)) < 1e-13);
        let p = exp_a_laurent(w, w, lg).unwrap();
        assert!(p.max_dist(&vacuum_holomorphic(w, lg)) < 1e-12);
        // off the circle the series agrees with the closed form
        let l = c(0.3, 0.1);
        let want = Mat2::a_mat().scale(w / l - w.conj() * l).exp();
        assert!((f.eval(l).unwrap() - want).max_abs() < 1e-10 * want.max_abs());
    }
}

#[test]
fn vacuum_fields_and_cylinder() {
    let lg = CircleGrid::unit(128).unwrap();
    let grid = DomainGrid::rect((-1.0, 1.0), (-1.0, 1.0), 5, 5).unwrap();
    let frames = vacuum(&grid, (2, 2), lg).unwrap();
    assert!(frames.base_frame().dist_to_identity() < 1e-14);
    let pts: Vec<C64> = (0..grid.len()).map(|k| grid.point(k % 5, k / 5)).collect();
    let err = vacuum_iwasawa_error(&pts[..5], lg, &IwasawaOptions::default()).unwrap();
    assert!(err < 1e-8, "{err}");

    let cyl = DomainGrid::rect((-1.0, 1.0), (0.0, PI), 16, 16).unwrap();
    let frames = vacuum(&cyl, (0, 0), lg).unwrap();
    let mesh = sym_bobenko(&frames, c(1.0, 0.0), 0.5).unwrap();
    assert_eq!(mesh.vertices.len(), cyl.len());
    let (_, d) = axis_fit(&mesh.vertices);
    for x in d {
        assert!((x - 1.0).abs() < 1e-9, "{x}");
    }
}

#[test]
fn zpow_monodromy_and_taylor() {
    let lg = CircleGrid::unit(64).unwrap();
    let res = DelaunayResidue::new(0.3, 0.2).unwrap();
    assert!(zpow(c(0.0, 0.0), &res, lg).dist_to_identity() < 1e-15);
    let lz = c(-0.2, 0.3);
    let a = zpow(lz, &res, lg);
    let b = zpow(lz + c(0.0, 2.0 * PI), &res, lg);
    let left = b.mul(&a.inv().unwrap()).unwrap();
    assert!(left.max_dist(&res.monodromy(lg)) < 1e-9);
    let pts = lg.points();
    for (m, l) in pts.iter().enumerate() {
        let t = taylor_exp(res.at(*l).scale(lz), 20);
        assert!((a.samples()[m] - t).max_abs() < 1e-10);
    }
}

#[test]
fn residue_basics() {
    let res = DelaunayResidue::new(0.35, 0.15).unwrap();
    assert!((res.neck_radius(0.5) - 0.6).abs() < 1e-12);
    assert!((DelaunayResidue::new(0.3, 0.2).unwrap().neck_radius(0.5) - 0.8).abs() < 1e-12);
    assert!((DelaunayResidue::round().neck_radius(0.5) - 1.0).abs() < 1e-12);
    assert_eq!(res.winding(), 1);
    for l in CircleGrid::unit(16).unwrap().points() {
        assert!(res.at(l).trace().norm() < 1e-15);
    }
    assert!(DelaunayResidue::new(0.3, 0.3).is_err());
    assert!(DelaunayResidue::new(0.6, -0.1).is_err());
}

#[test]
fn series_without_perturbation_is_identity() {
    let lg = CircleGrid::new(0.75, 64).unwrap();
    let sp = SingularPotential::delaunay(DelaunayResidue::new(0.3, 0.2).unwrap());
    let s = solve_p_series(&sp, 6, lg).unwrap();
    assert!(s.p_at(c(0.5, 0.2)).unwrap().dist_to_identity() < 1e-15);
    assert!(s.defect(&sp, 0.5, 8) < 1e-14);
}

#[test]
fn first_order_term_solves_its_equation() {
    let res = DelaunayResidue::new(0.3, 0.2).unwrap();
    let eta0 = Mat2::new(c(0.1, 0.0), c(0.2, -0.1), c(0.0, 0.3), c(-0.1, 0.0));
    let e: std::sync::Arc<dyn Fn(C64) -> Mat2 + Send + Sync> = std::sync::Arc::new(move |_| eta0);
    let sp = SingularPotential { residue: res, eta: vec![e] };
    let lg = CircleGrid::new(0.75, 32).unwrap();
    let s = solve_p_series(&sp, 1, lg).unwrap();
    for (m, l) in lg.points().iter().enumerate() {
        let p1 = s.coeffs[1][m];
        let d = res.at(*l);
        assert!((p1 + d * p1 - p1 * d - eta0).max_abs() < 1e-14);
    }
}

#[test]
fn series_defect_and_transported_monodromy() {
    let res = DelaunayResidue::new(0.3, 0.2).unwrap();
    let sp = SingularPotential::off_diagonal(res, 0.1);
    let rc = choose_radius(&res, res.winding(), 1.0, 1e-3).unwrap();
    let lg = CircleGrid::new(rc.r, 128).unwrap();
    let mut prev = f64::INFINITY;
    for n in [2, 4, 6, 8, 10, 12] {
        let s = solve_p_series(&sp, n, lg).unwrap();
        let d = s.defect(&sp, 0.5, 16);
        assert!(d <= prev / 4.0 || d < 1e-8, "order {n}: {d} after {prev}");
        prev = d;
    }
    assert!(prev < 1e-6);
    let s = solve_p_series(&sp, 12, lg).unwrap();
    let (_, err) = transport_monodromy(&sp, &s, 0.5).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn resonance_is_reported() {
    // mu = 1 at lambda = 2 - sqrt(3) for the round residue: order 2 is resonant there
    let sp = SingularPotential::off_diagonal_twisted(DelaunayResidue::round(), 0.1);
    let lg = CircleGrid::new(2.0 - 3f64.sqrt(), 8).unwrap();
    match solve_p_series(&sp, 4, lg) {
        Err(Error::Resonance { order, cond, .. }) => {
            assert_eq!(order, 2);
            assert!(cond > 1e8);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn radius_choice() {
    let res = DelaunayResidue::round();
    let rc = choose_radius(&res, 1, 1.0, 1e-3).unwrap();
    assert!(rc.r > 0.0 && rc.r < 1.0);
    // independent check of both conditions
    let ab = 1.0 / 16.0;
    let s = rc.r.powi(-2) + rc.r.powi(2);
    for k in 1..200 {
        let a = ((k * k) as f64 - 1.0) / (4.0 * ab);
        assert!((s - a - 2.0).abs() >= 1e-3 && (s + a - 2.0).abs() >= 1e-3);
    }
    for x in [rc.r, -rc.r] {
        let mu = ((c(x, 0.0).inv() * 0.25 + c(x, 0.0) * 0.25) * (c(x, 0.0).inv() * 0.25 + c(x, 0.0) * 0.25)).sqrt();
        let half = (2.0 * mu.re).round() / 2.0;
        assert!((mu - half).norm() >= 1e-3);
    }
    assert_eq!(rc.excluded.len(), 10);
    assert!((rc.excluded[0] - 2.0).abs() < 1e-15);
    assert!(rc.excluded.windows(2).all(|w| w[0] < w[1]));
    assert!(choose_radius(&res, 1, 1.0, 0.0).is_err());
    let alpha = 2.0 - 3f64.sqrt();
    let small = choose_radius(&res, 1, 0.75 * alpha, 0.1).unwrap();
    assert!(small.r < 0.75 * alpha && small.distance >= 0.1);
}

#[test]
fn delaunay_necks_and_closing() {
    let lg = CircleGrid::unit(128).unwrap();
    let grid = DomainGrid::rect((-4.0, 4.0), (0.0, 2.0 * PI), 33, 9).unwrap();
    for (wa, wb) in [(0.3, 0.2), (0.35, 0.15)] {
        let res = DelaunayResidue::new(wa, wb).unwrap();
        let d = delaunay(&res, &grid, lg, 0.5).unwrap();
        assert!(d.neck_interior);
        assert!(d.neck_error() < 0.02, "{} vs {}", d.neck, d.omega);
        assert!(d.monodromy.closing_value < 1e-9 && d.monodromy.closing_derivative < 1e-7);
        let e = d.monodromy.chi.max_dist(&res.monodromy(lg));
        assert!(e < 1e-8, "{e}");
    }
    // a u-range without a neck is flagged
    let short = DomainGrid::rect((-2.0, 2.0), (0.0, 2.0 * PI), 9, 9).unwrap();
    let d = delaunay(&DelaunayResidue::new(0.3, 0.2).unwrap(), &short, lg, 0.5).unwrap();
    assert!(!d.neck_interior);
}

fn rigid_distance(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let n = a.len() as f64;
    let ca = a.iter().fold(Vector3::zeros(), |s, p| s + Vector3::from(*p) / n);
    let cb = b.iter().fold(Vector3::zeros(), |s, p| s + Vector3::from(*p) / n);
    let mut cov = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        cov += (Vector3::from(*q) - cb) * (Vector3::from(*p) - ca).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    d[(2, 2)] = (u * vt).determinant().signum();
    let rot = u * d * vt;
    a.iter().zip(b).map(|(p, q)| (rot * (Vector3::from(*p) - ca) - (Vector3::from(*q) - cb)).norm()).fold(0.0, f64::max)
}

#[test]
fn delaunay_by_dressing_the_vacuum_is_congruent() {
    let (wa, wb) = (0.3, 0.2);
    let res = DelaunayResidue::new(wa, wb).unwrap();
    let unit = CircleGrid::unit(256).unwrap();
    let grid = DomainGrid::rect((-1.0, 1.0), (0.0, 2.0 * PI), 5, 5).unwrap();
    let direct = delaunay(&res, &grid, unit, 0.5).unwrap();
    // the vacuum at scaled coordinate sqrt(wA wB) w, dressed by h on an inner circle
    let s = (wa * wb).sqrt();
    let rho = (wb / wa).sqrt();
    let inner = CircleGrid::new(0.5 * rho, 256).unwrap();
    let dd = delaunay_dress_matrix(wa, wb, inner).unwrap();
    let vgrid = DomainGrid::rect((-s, s), (0.0, 2.0 * PI * s), 5, 5).unwrap();
    let vac = vacuum(&vgrid, (2, 0), inner).unwrap();
    let dressed = dress(&dd.h, &vac).unwrap();
    let mesh = sym_bobenko(&dressed.frames, c(1.0, 0.0), 0.5).unwrap();
    let dist = rigid_distance(&mesh.vertices, &direct.mesh.vertices);
    assert!(dist < 1e-4, "{dist}");
}

#[test]
fn mean_curvature_of_delaunay_meshes() {
    let lg = CircleGrid::unit(128).unwrap();
    let res = DelaunayResidue::new(0.35, 0.15).unwrap();
    let mut prev = f64::INFINITY;
    for (nu, nv) in [(17, 17), (33, 33)] {
        let grid = DomainGrid::rect((-2.0, 2.0), (0.0, 2.0 * PI), nu, nv).unwrap();
        let d = delaunay(&res, &grid, lg, 0.5).unwrap();
        let hs = mean_curvature(&d.mesh);
        let worst = hs.iter().map(|h| (h - 0.5).abs() / 0.5).fold(0.0, f64::max);
        assert!(worst < 0.05, "{nu}x{nv}: {worst}");
        assert!(worst < prev);
        prev = worst;
    }
}

#[test]
fn associated_family_is_isometric() {
    let lg = CircleGrid::unit(128).unwrap();
    let res = DelaunayResidue::new(0.3, 0.2).unwrap();
    let grid = DomainGrid::rect((-1.0, 1.0), (0.0, 2.0 * PI), 17, 33).unwrap();
    let d = delaunay(&res, &grid, lg, 0.5).unwrap();
    let other = sym_bobenko(&d.frames, c(0.6, 0.8), 0.5).unwrap();
    let metric = |m: &SurfaceMesh, i: usize, j: usize| {
        let v = |i, j| Vector3::from(m.vertex(i, j));
        let xu = (v(i + 1, j) - v(i - 1, j)) / 2.0;
        let xv = (v(i, j + 1) - v(i, j - 1)) / 2.0;
        [xu.dot(&xu), xu.dot(&xv), xv.dot(&xv)]
    };
    let mut worst: f64 = 0.0;
    for j in 1..32 {
        for i in 1..16 {
            let (g1, g2) = (metric(&d.mesh, i, j), metric(&other, i, j));
            let scale = g1[0].max(g1[2]);
            for k in 0..3 {
                worst = worst.max((g1[k] - g2[k]).abs() / scale);
            }
        }
    }
    assert!(worst < 2e-2, "{worst}");
}

fn chi_vacuum(q: C64) -> impl Fn(C64) -> Mat2 + Sync {
    move |l: C64| Mat2::a_mat().scale(q / l - q.conj() * l).exp()
}

#[test]
fn vacuum_bubbleton() {
    let lg = CircleGrid::unit(256).unwrap();
    let grid = DomainGrid::rect((-1.0, 1.0), (0.0, PI), 5, 5).unwrap();
    let base = vacuum(&grid, (2, 0), lg).unwrap();
    let q = c(0.0, PI);
    let chi = chi_vacuum(q);
    let a = (3.0 - 5f64.sqrt()) / 2.0;
    for sf in [SimpleFactor::twisted_diagonal(c(a, 0.0)).unwrap(), SimpleFactor::twisted_offdiagonal(c(a, 0.0), 0.7).unwrap()] {
        let b = bubbleton(&base, &chi, &sf, q, c(1.0, 0.0), 0.5).unwrap();
        assert!(b.admissibility < 1e-12);
        assert!(b.monodromy.closing_value < 1e-6 && b.monodromy.closing_derivative < 1e-6);
        assert!(b.conjugation < 1e-6, "{}", b.conjugation);
        assert_eq!(b.mesh.vertices.len(), grid.len());
    }
    let bad = SimpleFactor::twisted_diagonal(c(0.45, 0.0)).unwrap();
    match bubbleton(&base, &chi, &bad, q, c(1.0, 0.0), 0.5) {
        Err(Error::Residual { value, .. }) => assert!(value >= 0.1, "{value}"),
        other => panic!("{:?}", other.map(|b| b.admissibility)),
    }
}

#[test]
fn bubbleton_on_a_perturbed_cylinder() {
    let res = DelaunayResidue::round();
    let sp = SingularPotential::off_diagonal_twisted(res, 0.1);
    let alpha = 2.0 - 3f64.sqrt();
    let opts = PerturbedOptions { r_max: 0.75 * alpha, margin: 0.1, count: 512, ..Default::default() };
    let grid = DomainGrid::rect((-0.5, 0.5), (-PI, PI), 3, 5).unwrap();
    let pc = perturbed_cylinder(&sp, &grid, &opts).unwrap();
    assert!(pc.monodromy.closing_value < 1e-6 && pc.monodromy.closing_derivative < 1e-6);
    let chi = move |l: C64| res.at(l).scale(c(0.0, 2.0 * PI)).exp();
    let dc = det_condition(&res, c(alpha, 0.0));
    assert!(dc.squares < 1e-12 && dc.literal < 1e-12);
    // mu = sqrt(3)/2 meets the n/4 reading of the determinant but not chi = +-Id
    let weak = 3f64.sqrt() - 2f64.sqrt();
    let dw = det_condition(&res, c(weak, 0.0));
    assert!(dw.literal < 1e-12 && dw.squares > 0.1);
    let sw = SimpleFactor::twisted_diagonal(c(weak, 0.0)).unwrap();
    assert!(matches!(bubbleton(&pc.frames, &chi, &sw, c(0.0, 2.0 * PI), c(1.0, 0.0), 0.5), Err(Error::Residual { .. })));
    let sf = SimpleFactor::twisted_offdiagonal(c(alpha, 0.0), 0.3).unwrap();
    let b = bubbleton(&pc.frames, &chi, &sf, c(0.0, 2.0 * PI), c(1.0, 0.0), 0.5).unwrap();
    assert!(b.monodromy.closing_value < 1e-6 && b.monodromy.closing_derivative < 1e-6);
    assert!(b.conjugation < 1e-6);
    let bad = SimpleFactor::twisted_diagonal(c(0.22, 0.0)).unwrap();
    match bubbleton(&pc.frames, &chi, &bad, c(0.0, 2.0 * PI), c(1.0, 0.0), 0.5) {
        Err(Error::Residual { value, .. }) => assert!(value >= 0.1),
        other => panic!("{:?}", other.map(|b| b.admissibility)),
    }
}

#[test]
fn mesh_and_report_files() {
    let dir = std::env::temp_dir().join(format!("loopforge-surfaces-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let lg = CircleGrid::unit(64).unwrap();
    let grid = DomainGrid::rect((0.0, 0.5), (0.0, 0.5), 2, 2).unwrap();
    let mesh = sym_bobenko(&vacuum(&grid, (0, 0), lg).unwrap(), c(1.0, 0.0), 0.5).unwrap();
    assert_eq!((mesh.vertices.len(), mesh.faces.len()), (4, 1));
    let path = dir.join("m.obj");
    export_mesh(&mesh, &path).unwrap();
    let back = import_mesh(&path).unwrap();
    for (a, b) in mesh.vertices.iter().zip(&back.vertices) {
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-9);
        }
    }
    assert_eq!(back.faces, mesh.faces);
    let rep = serde_json::json!({"b": 1, "a": [1.5, 2.0]});
    let rp = dir.join("r.json");
    write_report(&rep, &rp).unwrap();
    assert_eq!(read_report(&rp).unwrap(), rep);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn perturbed_loop_evaluates_inside_its_annulus() {
    // exact Laurent products keep the frames accurate off the unit circle
    let lg = CircleGrid::unit(128).unwrap();
    let f = exp_a_laurent(c(0.3, 0.2), -c(0.3, -0.2), lg).unwrap();
    let g = f.star_series().unwrap().mul_series(&f).unwrap();
    assert!(g.is_exact());
    assert!((g.eval(c(0.25, 0.0)).unwrap() - Mat2::identity()).max_abs() < 1e-10);
    let _ = Loop::identity(lg).with_annulus(Annulus::punctured());
}
