use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsym_core::sard::{forbidden_trace, pick_path_w, pick_real_w, poly_z1, sample_grid, SardParams};
use rsym_core::{Complex64, ComplexMap};

fn re(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

fn with_sigma(delta: f64, sigma: f64) -> SardParams {
    SardParams { delta, p: 2.0, sigma }
}

#[test]
fn square_trace_stays_near_zero() {
    let f = poly_z1(vec![re(0.0), re(0.0), re(1.0)]);
    let sigma = 0.01;
    let t = forbidden_trace(&f, &sample_grid(1, sigma), sigma, 0.1).unwrap();
    assert!(!t.intervals.is_empty());
    for [a, b] in &t.intervals {
        assert!(*a >= -0.03 && *b <= 0.03, "[{a}, {b}]");
    }
}

#[test]
fn zero_map_pick_clears_the_tube() {
    let f = poly_z1(vec![re(0.0)]);
    let params = with_sigma(0.1, 0.01);
    let pick = pick_real_w(&f, &params).unwrap();
    assert!(pick.w.abs() > params.sigma && pick.w.abs() <= params.delta);
    assert!(pick.check.ok);
}

#[test]
fn shifted_square_avoids_its_critical_value() {
    let f = poly_z1(vec![re(-0.05), re(0.0), re(1.0)]);
    let params = SardParams::with_default_p(0.099).unwrap();
    let pick = pick_real_w(&f, &params).unwrap();
    assert!(pick.trace.contains(-0.05));
    assert!((pick.w + 0.05).abs() > params.sigma);
    assert!(pick.check.ok);
}

#[test]
fn random_polynomials_up_to_degree_five() {
    let params = SardParams::with_default_p(0.09).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..50 {
        let deg = rng.gen_range(1..=5);
        let mut c: Vec<f64> = (0..=deg).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // sum |c_i| bounds |f| on the unit disk
        let l1: f64 = c.iter().map(|v| v.abs()).sum();
        c.iter_mut().for_each(|v| *v /= l1.max(1.0));
        let f = poly_z1(c.into_iter().map(re).collect());
        let pick = pick_real_w(&f, &params).unwrap();
        assert!(pick.check.ok && !pick.trace.contains(pick.w));
    }
}

#[test]
fn path_through_sign_flip_verifies_on_every_slice() {
    let params = SardParams::with_default_p(0.09).unwrap();
    let fs: Vec<_> = (0..11)
        .map(|i| {
            let t = i as f64 / 10.0;
            poly_z1(vec![re(0.0), re(0.0), re(0.5 * t - 0.5 * (1.0 - t))])
        })
        .collect();
    let hs: Vec<_> = (0..11).map(|_| poly_z1(vec![re(0.0)])).collect();
    let f: Vec<&dyn ComplexMap> = fs.iter().map(|m| m as &dyn ComplexMap).collect();
    let h: Vec<&dyn ComplexMap> = hs.iter().map(|m| m as &dyn ComplexMap).collect();
    let path = pick_path_w(&f, &h, &params).unwrap();
    assert_eq!(path.w.len(), 11);
    assert!(path.margins.iter().all(|m| *m >= 0.0), "{:?}", path.margins);
    assert!(path.w.iter().all(|w| w.norm() <= params.delta + 1e-12));
}

#[test]
fn constant_path_with_conjugate_term() {
    let params = SardParams::with_default_p(0.09).unwrap();
    let fs = [poly_z1(vec![re(0.2)]), poly_z1(vec![re(0.2)])];
    let hs = [poly_z1(vec![re(0.5)]), poly_z1(vec![re(0.5)])];
    let f: Vec<&dyn ComplexMap> = fs.iter().map(|m| m as &dyn ComplexMap).collect();
    let h: Vec<&dyn ComplexMap> = hs.iter().map(|m| m as &dyn ComplexMap).collect();
    let path = pick_path_w(&f, &h, &params).unwrap();
    for w in &path.w {
        // the map is constant, so it must stay sigma away from zero
        assert!((re(0.2) - w - w.conj() * 0.5).norm() > params.sigma, "{w}");
    }
}
