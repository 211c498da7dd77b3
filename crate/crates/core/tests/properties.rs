use proptest::prelude::*;
use rsym_core::experiment::{Construction, ExperimentConfig};
use rsym_core::sard::{pick_real_w, poly_z1, SardParams};
use rsym_core::{Bump, BumpModel, Complex64, ComplexMap, ModelKind, ModelManifold, Point, ScaledFrame, SectionField};

fn coords(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.5f64..0.5, 2 * n)
}

fn bump(n: usize) -> impl Strategy<Value = Bump> {
    (coords(n), -1.0f64..1.0, -1.0f64..1.0, any::<bool>(), 0.5f64..1.5).prop_map(|(r, a, b, quad, w)| {
        let m = if quad { BumpModel::Quadric } else { BumpModel::Unit };
        Bump::new(Point::from_interleaved(&r), Complex64::new(a, b), m, w, f64::INFINITY)
    })
}

fn field() -> impl Strategy<Value = SectionField> {
    (1usize..=2, 4u32..200, any::<bool>()).prop_flat_map(|(n, k, torus)| {
        prop::collection::vec(bump(n), 1..6).prop_map(move |bumps| {
            let model = if torus {
                ModelManifold::torus(n).unwrap()
            } else {
                ModelManifold::flat_ball(n, 1.0).unwrap()
            };
            SectionField::new(model, ScaledFrame::new(k).unwrap(), bumps)
        })
    })
}

fn config() -> impl Strategy<Value = ExperimentConfig> {
    (
        1usize..=3,
        prop::collection::vec(1u32..10_000, 1..5),
        0.5f64..8.0,
        0.01f64..0.1,
        1.0f64..4.0,
        any::<u64>(),
        prop::option::of(0.01f64..1.0),
        prop_oneof![Just(Construction::Spheres), Just(Construction::Nonvanishing), Just(Construction::FullLattice)],
        any::<bool>(),
    )
        .prop_map(|(n, k_list, mesh, delta, p, seed, chi, construction, torus)| ExperimentConfig {
            n,
            k_list,
            mesh,
            sard_delta: delta,
            sard_p: p,
            seed,
            pencil_chi: chi,
            construction,
            model: if torus { ModelKind::Torus } else { ModelKind::FlatBall { radius: 1.0 } },
            ..Default::default()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn config_round_trips_bit_exactly(cfg in config()) {
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn kappa_is_an_involution(s in field(), r in coords(2)) {
        let n = s.n();
        let z = Point::from_interleaved(&r[..2 * n]);
        let kk = s.kappa().kappa();
        prop_assert!((kk.evaluate(&z) - s.evaluate(&z)).norm() <= 1e-12 * (1.0 + s.evaluate(&z).norm()));
    }

    #[test]
    fn kappa_conjugates_values_and_gradient_norms(s in field(), r in coords(2)) {
        let n = s.n();
        let z = Point::from_interleaved(&r[..2 * n]);
        let (v, g) = s.kappa().eval_grad(&z);
        let (vc, gc) = s.eval_grad(&z.conj());
        prop_assert!((v - vc.conj()).norm() <= 1e-12 * (1.0 + v.norm()));
        prop_assert!((g.norm() - gc.norm()).abs() <= 1e-12 * (1.0 + g.norm()));
    }

    #[test]
    fn symmetrized_fields_are_real_on_the_real_locus(s in field(), x in prop::collection::vec(-0.5f64..0.5, 2)) {
        let n = s.n();
        let sym = s.symmetrize();
        prop_assert!(sym.is_structurally_symmetric());
        let v = sym.evaluate(&Point::from_real(&x[..n]));
        prop_assert!(v.im.abs() <= 1e-12 * (1.0 + v.norm()));
    }

    #[test]
    fn torus_fields_are_periodic(s in field(), r in coords(2), shift in 0usize..4) {
        prop_assume!(s.model().is_torus());
        let n = s.n();
        let z = Point::from_interleaved(&r[..2 * n]);
        let mut t = r[..2 * n].to_vec();
        t[shift % (2 * n)] += 1.0;
        let w = Point::from_interleaved(&t);
        prop_assert!((s.evaluate(&z) - s.evaluate(&w)).norm() <= 1e-10 * (1.0 + s.evaluate(&z).norm()));
    }

    #[test]
    fn conjugation_is_an_involutive_isometry(n in 1usize..=3, a in coords(3), b in coords(3)) {
        let m = ModelManifold::torus(n).unwrap();
        let x = Point::from_interleaved(&a[..2 * n]);
        let y = Point::from_interleaved(&b[..2 * n]);
        let cc = m.conj(&m.conj(&x));
        prop_assert!(m.displacement(&x, &cc).norm() < 1e-15);
        let d = m.g_distance(&x, &y).unwrap();
        let dc = m.g_distance(&m.conj(&x), &m.conj(&y)).unwrap();
        prop_assert!((d - dc).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_central_differences(s in field(), r in coords(2)) {
        let n = s.n();
        let z = Point::from_interleaved(&r[..2 * n]);
        let g = s.gradient(&z);
        let h = 1e-6 / s.frame().sqrt_k();
        let scale = g.norm() * 2f64.sqrt() + 1e-3 * s.frame().sqrt_k();
        for a in 0..2 * n {
            let mut p = r[..2 * n].to_vec();
            let mut q = p.clone();
            p[a] += h;
            q[a] -= h;
            let fd = (s.evaluate(&Point::from_interleaved(&p)) - s.evaluate(&Point::from_interleaved(&q))) / (2.0 * h);
            let an = if a % 2 == 0 { g.dx[a / 2] } else { g.dy[a / 2] };
            prop_assert!((fd - an).norm() / scale < 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn real_pick_is_real_admissible_and_transverse(c0 in -1.0f64..1.0, c1 in -1.0f64..1.0, c2 in -1.0f64..1.0) {
        let params = SardParams::with_default_p(0.09).unwrap();
        let f = poly_z1(vec![Complex64::new(c0, 0.0), Complex64::new(c1, 0.0), Complex64::new(c2, 0.0)]);
        let pick = pick_real_w(&f, &params).unwrap();
        prop_assert!(pick.w.abs() <= params.delta);
        prop_assert!(!pick.trace.contains(pick.w));
        prop_assert!(pick.check.ok);
        prop_assert_eq!(f.dim(), 1);
    }
}
