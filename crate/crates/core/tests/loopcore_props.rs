use loopforge::loopcore::*;
use loopforge::mat2::{c, Mat2};
use loopforge::C64;
use proptest::prelude::*;

fn mat() -> impl Strategy<Value = Mat2> {
    prop::array::uniform8(-1.0f64..1.0).prop_map(|x| Mat2::new(c(x[0], x[1]), c(x[2], x[3]), c(x[4], x[5]), c(x[6], x[7])))
}

/// Laurent polynomial loop of band 3 with random coefficients.
fn poly_loop() -> impl Strategy<Value = Vec<Mat2>> {
    prop::collection::vec(mat(), 7)
}

fn eval_poly(cf: &[Mat2], l: C64) -> Mat2 {
    let k = (cf.len() / 2) as i32;
    cf.iter().enumerate().fold(Mat2::zero(), |acc, (i, m)| acc + m.scale(l.powi(i as i32 - k)))
}

fn grid() -> CircleGrid {
    CircleGrid::unit(64).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sample_coefficient_round_trip(cf in poly_loop(), rho in 0.5f64..1.5) {
        let g = CircleGrid::new(rho, 64).unwrap();
        let cfc = cf.clone();
        let l = Loop::from_fn(g, Annulus::punctured(), move |z| eval_poly(&cfc, z));
        for k in -3isize..=3 {
            let d = (l.coeff(k) - cf[(k + 3) as usize]).max_abs();
            prop_assert!(d < 1e-12 * rho.powi(-(k.abs() as i32)).max(1.0) * 10.0);
        }
        let back = Loop::from_coefficients(g, Annulus::punctured(), l.coefficients().to_vec()).unwrap();
        prop_assert!(back.max_dist(&l) < 1e-12);
    }

    #[test]
    fn det_is_multiplicative(a in poly_loop(), b in poly_loop()) {
        let la = Loop::from_fn(grid(), Annulus::punctured(), move |z| eval_poly(&a, z));
        let lb = Loop::from_fn(grid(), Annulus::punctured(), move |z| eval_poly(&b, z));
        let lhs = la.mul(&lb).unwrap().det();
        let rhs = la.det().mul(&lb.det()).unwrap();
        prop_assert!(lhs.max_dist(&rhs) < 1e-9 * lhs.max_abs().max(1.0));
    }

    #[test]
    fn star_reverses_products(a in poly_loop(), b in poly_loop(), rho in 0.7f64..1.3) {
        let g = CircleGrid::new(rho, 64).unwrap();
        let la = Loop::from_fn(g, Annulus::punctured(), move |z| eval_poly(&a, z));
        let lb = Loop::from_fn(g, Annulus::punctured(), move |z| eval_poly(&b, z));
        let lhs = la.mul(&lb).unwrap().star();
        let rhs = lb.star().mul(&la.star()).unwrap();
        prop_assert!(lhs.max_dist(&rhs) < 1e-10 * lhs.max_abs().max(1.0));
        prop_assert!(la.star().star().max_dist(&la) < 1e-10 * la.max_abs().max(1.0));
    }

    #[test]
    fn sigma_is_an_involution(a in poly_loop()) {
        let la = Loop::from_fn(grid(), Annulus::punctured(), move |z| eval_poly(&a, z));
        prop_assert!(la.sigma().sigma().max_dist(&la) == 0.0);
    }

    #[test]
    fn twist_produces_twisted_loops(a in poly_loop()) {
        let la = Loop::from_fn(grid(), Annulus::punctured(), move |z| eval_poly(&a, z));
        let t = la.twist().unwrap();
        prop_assert!(t.is_twisted());
        prop_assert!(t.twisted_parity_defect() < 1e-12);
        let back = t.untwist().unwrap();
        prop_assert!(back.max_dist(&la) < 1e-13);
    }
}

#[test]
fn grid_validation() {
    assert!(CircleGrid::new(1.0, 100).is_err());
    assert!(CircleGrid::new(1.0, 4).is_err());
    assert!(CircleGrid::new(-1.0, 64).is_err());
    assert_eq!(CircleGrid::unit(256).unwrap().default_band(), 100);
}

#[test]
fn untwist_refuses_untwisted_input() {
    let l = Loop::from_fn(grid(), Annulus::punctured(), |z| Mat2::new(z, c(0.0, 0.0), c(0.0, 0.0), z.inv()));
    assert!(matches!(l.untwist(), Err(loopforge::Error::Contract(_))));
}

#[test]
fn eval_off_circle_uses_laurent_series() {
    let cf: Vec<Mat2> = (0..7).map(|i| Mat2::scalar(c(1.0 / (1.0 + i as f64), 0.3))).collect();
    let cf2 = cf.clone();
    let l = Loop::from_fn(grid(), Annulus::new(0.2, 5.0), move |z| eval_poly(&cf2, z));
    let p = c(0.3, 1.7);
    assert!((l.eval(p).unwrap() - eval_poly(&cf, p)).max_abs() < 1e-11);
    assert!(l.eval(c(10.0, 0.0)).is_err());
}

#[test]
fn d_lambda_and_exp_offdiag() {
    let g = CircleGrid::unit(64).unwrap();
    let l = Loop::from_fn(g, Annulus::punctured(), |z| Mat2::new(z * z, z.inv(), c(2.0, 0.0), z));
    let d = l.d_lambda();
    let want = Loop::from_fn(g, Annulus::punctured(), |z| Mat2::new(z * 2.0, -(z * z).inv(), c(0.0, 0.0), c(1.0, 0.0)));
    assert!(d.max_dist(&want) < 1e-12);

    let p = ScalarLoop::from_fn(g, Annulus::punctured(), |z| z * 0.7 + 0.2);
    let e = exp_offdiag(&p, c(1.0, 0.5), c(-0.3, 2.0));
    let direct = Loop::from_fn(g, Annulus::punctured(), |z| Mat2::off(c(1.0, 0.5), c(-0.3, 2.0)).scale(z * 0.7 + 0.2).exp());
    assert!(e.max_dist(&direct) < 1e-13);
}

#[test]
fn json_round_trip() {
    let g = CircleGrid::new(0.8, 32).unwrap();
    let l = Loop::from_fn(g, Annulus::new(0.5, 2.0), |z| Mat2::new(z, c(0.1, 0.0), z.inv(), c(1.0, -1.0)));
    let back = Loop::from_json(&l.to_json()).unwrap();
    assert!(back.max_dist(&l) < 1e-13);
    assert_eq!(back.grid().count, 32);
}
