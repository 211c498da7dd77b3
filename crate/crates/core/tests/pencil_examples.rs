use rsym_core::experiment::{pencil_pair, run_pencil_report, run_pencil_report_on, ExperimentConfig};
use rsym_core::pencil::{complex_hessian, JET_STEP_GK};
use rsym_core::{Bump, BumpModel, Complex64, ModelKind};

#[test]
fn broken_symmetry_fails_item_four() {
    let cfg = ExperimentConfig {
        pencil_k: 36,
        ..Default::default()
    };
    let (s0, s1) = pencil_pair(&cfg).unwrap();
    // one bump without its conjugate partner
    let extra = Bump::new(
        rsym_core::Point::from_interleaved(&[0.1, 0.2]),
        Complex64::new(0.3, 0.0),
        BumpModel::Unit,
        1.0,
        4.0,
    );
    let broken = s1.with_bumps([extra]);
    let report = run_pencil_report_on(&cfg, &s0, &broken).unwrap();
    assert!(!report.passed());
    assert_eq!(report.failing_items(), vec![4]);
}

#[test]
fn flat_line_has_no_base_locus_section() {
    let cfg = ExperimentConfig {
        model: ModelKind::FlatBall { radius: 0.5 },
        n: 1,
        pencil_k: 100,
        pencil_cell_gk: 0.1,
        ..Default::default()
    };
    let report = run_pencil_report(&cfg).unwrap();
    assert_eq!(report.base_note.as_deref(), Some("not applicable (codim 4 > dim)"));
    let data = report.data.expect("certified data");
    assert!(data.base_locus.is_empty());
}

#[test]
fn surface_pencil_is_real_and_morse() {
    let cfg = ExperimentConfig {
        n: 2,
        pencil_k: 36,
        ..Default::default()
    };
    let report = run_pencil_report(&cfg).unwrap();
    assert!(report.passed(), "{:?}", report.items);
    let p = report.data.unwrap();
    assert!(p.reality_sup < 1e-9);
    let model = *p.s0.model();
    let k = p.s0.frame().kf();
    let h = JET_STEP_GK / p.s0.frame().sqrt_k();
    let f = p.quotient();
    for q in p.crit_set.iter().take(40) {
        let m = p.model_v_certificate(&q.point);
        assert!(m.min_sv > 0.0 && !m.degenerate, "{m:?}");
        let a = complex_hessian(&f, &q.point, h);
        let b = complex_hessian(&f, &model.conj(&q.point), h);
        for j in 0..2 {
            for l in 0..2 {
                assert!((b[j][l] - a[j][l].conj()).norm() / k < 1e-8, "{j}{l}: {} vs {}", a[j][l], b[j][l]);
            }
        }
    }
}
