//! One pass/fail line per acceptance criterion. The run fails when the set of
//! red criteria differs from `KNOWN_RED`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsym_core::constructions::{build_nonvanishing_section, transversalize_symmetric, TransversalizeParams};
use rsym_core::experiment::{run_pencil_report, run_scaling_study, Construction, ExperimentConfig, ScalingStudy};
use rsym_core::fields::concentrated_sigma;
use rsym_core::pencil::PencilData;
use rsym_core::sard::{pick_real_w, FnMap, SardParams};
use rsym_core::zerolocus::{complex_zero_count, real_components};
use rsym_core::{
    Bump, BumpModel, Complex64, ComplexMap, Gradient, GridSpec, ModelManifold, Point, ScaledFrame,
    SectionField,
};

/// Criteria that cannot be met as stated (see the README).
const KNOWN_RED: &[u8] = &[2, 3];

// tolerances
const SLOPE_TOL_N1: f64 = 0.05;
const SLOPE_TOL_N2: f64 = 0.1;
const RUNTIME_N1_S: f64 = 30.0;
const RUNTIME_N2_S: f64 = 300.0;
const IMPLIED_C_SPREAD: f64 = 0.15;
const SIGMA_FLOOR: f64 = 0.5 - 1e-3;
const EQUIVARIANCE_TOL: f64 = 1e-12;
const SARD_INSTANCES: usize = 50;
const SARD_RUNTIME_S: f64 = 60.0;
const NONVANISHING_FLOOR: f64 = 0.25;
const REALITY_TOL: f64 = 1e-9;
const RHO_STABILITY: f64 = 0.25;
const FD_REL_TOL: f64 = 1e-6;

struct Line {
    id: u8,
    pass: bool,
    detail: String,
}

fn line(id: u8, pass: bool, detail: String) -> Line {
    Line { id, pass, detail }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_secs_f64())
}

fn scaling(n: usize, mesh: f64, k_list: &[u32], resolution: Option<usize>) -> (ScalingStudy, f64) {
    let cfg = ExperimentConfig {
        n,
        mesh,
        k_list: k_list.to_vec(),
        resolution,
        ..Default::default()
    };
    timed(|| run_scaling_study(&cfg).expect("scaling study"))
}

/// Expected number of spheres: the real lattice has `floor(sqrt k / D)` sites per axis,
/// and each site carries one sphere (two points when n = 1).
fn expected_count(n: usize, k: u32, mesh: f64) -> usize {
    let per_axis = ((k as f64).sqrt() / mesh + 1e-9).floor() as usize;
    let spheres = per_axis.pow(n as u32);
    if n == 1 {
        2 * spheres
    } else {
        spheres
    }
}

/// Least-squares slope of ln y on ln x, written out independently.
fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn counts_match(study: &ScalingStudy, n: usize, mesh: f64) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in &study.rows {
        let want = expected_count(n, r.k, mesh);
        ok &= r.n_measured == want;
        parts.push(format!("k={} N={} (want {want})", r.k, r.n_measured));
    }
    (ok, parts.join(", "))
}

fn slope_of(study: &ScalingStudy) -> f64 {
    let k: Vec<f64> = study.rows.iter().map(|r| r.k as f64).collect();
    let nn: Vec<f64> = study.rows.iter().map(|r| r.n_measured as f64).collect();
    loglog_slope(&k, &nn)
}

fn criterion_1() -> (Line, ScalingStudy) {
    let (study, secs) = scaling(1, 2.0, &[100, 400, 1600, 6400], None);
    let (counts, detail) = counts_match(&study, 1, 2.0);
    let slope = slope_of(&study);
    let pass = counts && (slope - 0.5).abs() <= SLOPE_TOL_N1 && secs < RUNTIME_N1_S;
    (
        line(1, pass, format!("{detail}; slope {slope:.4}; {secs:.1} s")),
        study,
    )
}

fn criterion_2() -> (Line, ScalingStudy) {
    let (study, secs) = scaling(2, 4.0, &[36, 64, 144, 256], Some(256));
    let (counts, detail) = counts_match(&study, 2, 4.0);
    let slope = slope_of(&study);
    let pass = counts && (slope - 1.0).abs() <= SLOPE_TOL_N2 && secs < RUNTIME_N2_S;
    (
        line(2, pass, format!("{detail}; slope {slope:.4} (want 1.0 +- {SLOPE_TOL_N2}); {secs:.1} s")),
        study,
    )
}

fn criterion_3(studies: &[(usize, &ScalingStudy)]) -> Line {
    let mut pass = true;
    let mut parts = Vec::new();
    for (n, s) in studies {
        let packed_ok = s
            .rows
            .iter()
            .all(|r| r.n_measured as f64 * (r.min_inradius_sqrt_k / (r.k as f64).sqrt()).powi(*n as i32) <= 1.0);
        let c: Vec<f64> = s.rows.iter().map(|r| r.n_measured as f64 / (r.k as f64).powf(*n as f64 / 2.0)).collect();
        let hi = c.iter().cloned().fold(f64::MIN, f64::max);
        let lo = c.iter().cloned().fold(f64::MAX, f64::min);
        let spread = (hi - lo) / hi;
        pass &= packed_ok && spread < IMPLIED_C_SPREAD;
        parts.push(format!("n={n}: packing {packed_ok}, C spread {:.1}%", 100.0 * spread));
    }
    line(3, pass, parts.join("; "))
}

fn criterion_4() -> Line {
    let mut worst = f64::INFINITY;
    for k in [25u32, 100, 400] {
        let frame = ScaledFrame::new(k).unwrap();
        for n in [1usize, 2] {
            let model = ModelManifold::torus(n).unwrap();
            let x = Point::from_interleaved(&[0.31, 0.12, -0.27, 0.05][..2 * n]);
            let s = concentrated_sigma(&model, &frame, &x).unwrap();
            let steps = if n == 1 { 80 } else { 20 };
            let dims = 2 * n;
            let total = (steps + 1usize).pow(dims as u32);
            for flat in 0..total {
                let mut u = [0.0; 4];
                let mut f = flat;
                for v in u.iter_mut().take(dims) {
                    *v = -1.0 + 2.0 * (f % (steps + 1)) as f64 / steps as f64;
                    f /= steps + 1;
                }
                if u.iter().map(|v| v * v).sum::<f64>() > 1.0 {
                    continue;
                }
                let mut r = x.interleaved();
                for a in 0..dims {
                    r[a] += u[a] / frame.sqrt_k();
                }
                worst = worst.min(s.evaluate(&Point::from_interleaved(&r[..dims])).norm());
            }
        }
    }
    line(4, worst >= SIGMA_FLOOR, format!("min |sigma| on unit g_k balls = {worst:.6}"))
}

fn random_field(rng: &mut ChaCha8Rng, model: ModelManifold, frame: ScaledFrame) -> SectionField {
    let n = model.n;
    let bumps = (0..8)
        .map(|_| {
            let r: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let m = if rng.gen_bool(0.5) { BumpModel::Quadric } else { BumpModel::Unit };
            Bump::new(Point::from_interleaved(&r), c, m, rng.gen_range(0.5..1.5), f64::INFINITY)
        })
        .collect();
    SectionField::new(model, frame, bumps)
}

fn criterion_5() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let n = 1 + i % 2;
        let model = if i % 3 == 0 {
            ModelManifold::flat_ball(n, 1.0).unwrap()
        } else {
            ModelManifold::torus(n).unwrap()
        };
        let frame = ScaledFrame::new(rng.gen_range(4..200)).unwrap();
        let s = random_field(&mut rng, model, frame);
        let ks = s.kappa();
        for _ in 0..100 {
            let r: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-0.4..0.4)).collect();
            let z = Point::from_interleaved(&r);
            let cz = z.conj();
            let (v, g) = ks.eval_grad(&z);
            let (vc, gc) = s.eval_grad(&cz);
            let scale = 1.0 + g.norm() + v.norm();
            worst = worst.max((v.norm() - vc.norm()).abs() / scale);
            worst = worst.max((g.norm() - gc.norm()).abs() / scale);
        }
    }
    line(5, worst <= EQUIVARIANCE_TOL, format!("max relative deviation {worst:.2e}"))
}

fn real_poly(coeffs: Vec<f64>) -> impl ComplexMap {
    FnMap {
        n: 1,
        f: move |z: &Point| {
            let x = z.0[0];
            let mut v = Complex64::new(0.0, 0.0);
            let mut d = Complex64::new(0.0, 0.0);
            for c in coeffs.iter().rev() {
                d = d * x + v;
                v = v * x + *c;
            }
            (v, Gradient::holo_only(&[d]))
        },
    }
}

fn criterion_6() -> Line {
    let params = SardParams::with_default_p(0.09).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (res, secs) = timed(|| {
        let mut ok = 0;
        let mut errors = 0;
        for _ in 0..SARD_INSTANCES {
            let deg = rng.gen_range(1..=5);
            let mut coeffs: Vec<f64> = (0..=deg).map(|_| rng.gen_range(-1.0..1.0)).collect();
            // sum |c_i| bounds |f| on the unit disk
            let l1: f64 = coeffs.iter().map(|v| v.abs()).sum();
            coeffs.iter_mut().for_each(|v| *v /= l1.max(1.0));
            let f = real_poly(coeffs);
            match pick_real_w(&f, &params) {
                Ok(p) if p.check.ok && p.w.abs() <= params.delta => ok += 1,
                Ok(_) => {}
                Err(_) => errors += 1,
            }
        }
        (ok, errors)
    });
    let (ok, errors) = res;
    let pass = ok == SARD_INSTANCES && errors == 0 && secs < SARD_RUNTIME_S;
    line(6, pass, format!("{ok}/{SARD_INSTANCES} certified, {errors} errors, {secs:.1} s"))
}

fn criterion_7() -> Line {
    let mut pass = true;
    let mut parts = Vec::new();
    for k in [25u32, 100, 400] {
        let model = ModelManifold::torus(1).unwrap();
        let frame = ScaledFrame::new(k).unwrap();
        let s = build_nonvanishing_section(&model, &frame).unwrap();
        let m = 4000;
        let floor = (0..m)
            .map(|i| s.evaluate(&Point::from_real(&[i as f64 / m as f64])).norm())
            .fold(f64::INFINITY, f64::min);
        let grid = GridSpec::real(&model, &frame, 0.05).unwrap();
        let count = real_components(&s, &grid).unwrap().count;
        pass &= floor >= NONVANISHING_FLOOR && count == 0;
        parts.push(format!("k={k}: min|s|={floor:.3} N={count}"));
    }
    line(7, pass, parts.join(", "))
}

fn criterion_8() -> Line {
    let cfg = ExperimentConfig {
        k_list: vec![100],
        construction: Construction::Spheres,
        ..Default::default()
    };
    let model = cfg.manifold().unwrap();
    let frame = ScaledFrame::new(100).unwrap();
    let (s, _) = rsym_core::experiment::build_section(&cfg, &model, &frame).unwrap();
    let grid = GridSpec::real(&model, &frame, 0.05).unwrap();
    let before = real_components(&s, &grid).unwrap().count;
    let ((t, trace), secs) = timed(|| transversalize_symmetric(&s, &TransversalizeParams::default()).unwrap());
    let after = real_components(&t, &grid).unwrap().count;
    line(
        8,
        before == after,
        format!(
            "{before} -> {after} components, {} perturbations, certified eta {:.4}, {secs:.1} s",
            trace.perturbation_count(),
            trace.final_eta
        ),
    )
}

fn pencil_at(k: u32) -> PencilData {
    let cfg = ExperimentConfig {
        n: 2,
        pencil_k: k,
        ..Default::default()
    };
    let report = run_pencil_report(&cfg).expect("pencil report");
    assert!(report.passed(), "pencil items at k = {k}: {:?}", report.items);
    report.data.expect("pencil data")
}

fn criterion_9(pencils: &[PencilData]) -> Line {
    let mut pass = true;
    let mut parts = Vec::new();
    for p in pencils {
        let model = *p.s0.model();
        let sk = p.s0.frame().sqrt_k();
        let f = p.quotient();
        // independent reality sup on a shifted sample set
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut reality: f64 = 0.0;
        for _ in 0..2000 {
            let r: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let z = Point::from_interleaved(&r);
            if p.s0.evaluate(&z).norm() < p.params.epsilon {
                continue;
            }
            reality = reality.max((f.value(&model.conj(&z)) - f.value(&z).conj()).norm());
        }
        reality = reality.max(p.reality_sup);
        let mut unpaired = 0;
        let mut real_im: f64 = 0.0;
        for q in &p.crit_set {
            let cq = model.conj(&q.point);
            let partner = p
                .crit_set
                .iter()
                .filter(|o| model.displacement(&cq, &o.point).norm() * sk < 1e-3)
                .any(|o| (o.value - q.value.conj()).norm() < REALITY_TOL);
            if !partner {
                unpaired += 1;
            }
            if model.distance_to_fixed(&q.point) * sk < 1e-6 {
                real_im = real_im.max(q.value.im.abs());
            }
        }
        pass &= reality < REALITY_TOL && unpaired == 0 && real_im < REALITY_TOL && !p.crit_set.is_empty();
        parts.push(format!(
            "k={}: sup {:.1e}, {} critical, {unpaired} unpaired, max|Im F| real {:.1e}",
            p.s0.frame().k,
            reality,
            p.crit_set.len(),
            real_im
        ));
    }
    line(9, pass, parts.join("; "))
}

fn criterion_10(pencils: &[PencilData]) -> Line {
    let mut rhos = Vec::new();
    let mut covered = true;
    for p in pencils {
        let model = *p.s0.model();
        let sk = p.s0.frame().sqrt_k();
        let chi = p.params.chi;
        let mut far: f64 = 0.0;
        for (i, c) in p.cache.iter().enumerate() {
            if !c.inside || c.s0.norm() < chi || c.holo > c.anti {
                continue;
            }
            let z = p.grid.point(i);
            let d = p
                .crit_set
                .iter()
                .map(|q| model.displacement(&z, &q.point).norm() * sk)
                .fold(f64::INFINITY, f64::min);
            far = far.max(d);
        }
        covered &= far <= p.gamma_stats.rho0 + 1e-9;
        rhos.push(p.gamma_stats.rho0);
    }
    let lo = rhos.iter().cloned().fold(f64::MAX, f64::min);
    let hi = rhos.iter().cloned().fold(f64::MIN, f64::max);
    let drift = (hi - lo) / lo;
    line(
        10,
        covered && drift <= RHO_STABILITY,
        format!("rho0 = {rhos:.4?}, drift {:.1}%, containment {covered}", 100.0 * drift),
    )
}

fn criterion_11() -> Line {
    let cfg = ExperimentConfig {
        construction: Construction::FullLattice,
        k_list: vec![100, 400, 1600],
        ..Default::default()
    };
    let study = run_scaling_study(&cfg).unwrap();
    let cv: Vec<f64> = study.rows.iter().map(|r| r.equi_cv).collect();
    let pass = cv.windows(2).all(|w| w[1] < w[0]);
    line(11, pass, format!("CV over k = 100, 400, 1600: {cv:.4?}"))
}

fn criterion_12() -> Line {
    // gradient against central differences
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut fd_err: f64 = 0.0;
    for i in 0..10 {
        let n = 1 + i % 2;
        let model = ModelManifold::torus(n).unwrap();
        let frame = ScaledFrame::new(rng.gen_range(4..100)).unwrap();
        let s = random_field(&mut rng, model, frame);
        let h = 1e-6 / frame.sqrt_k();
        for _ in 0..50 {
            let r: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let z = Point::from_interleaved(&r);
            let g = s.gradient(&z);
            let scale = g.norm() * 2f64.sqrt() + 1e-3 * frame.sqrt_k();
            for a in 0..2 * n {
                let mut p = r.clone();
                let mut m = r.clone();
                p[a] += h;
                m[a] -= h;
                let fd = (s.evaluate(&Point::from_interleaved(&p)) - s.evaluate(&Point::from_interleaved(&m))) / (2.0 * h);
                let an = if a % 2 == 0 { g.dx[a / 2] } else { g.dy[a / 2] };
                fd_err = fd_err.max((fd - an).norm() / scale);
            }
        }
    }
    // component counts under grid doubling
    let mut stable = true;
    let mut counts = Vec::new();
    for (n, k, mesh, cell) in [(1usize, 400u32, 2.0, 0.1), (2, 144, 4.0, 0.2)] {
        let cfg = ExperimentConfig {
            n,
            mesh,
            ..Default::default()
        };
        let model = cfg.manifold().unwrap();
        let frame = ScaledFrame::new(k).unwrap();
        let (s, _) = rsym_core::experiment::build_section(&cfg, &model, &frame).unwrap();
        let a = real_components(&s, &GridSpec::real(&model, &frame, cell).unwrap()).unwrap().count;
        let b = real_components(&s, &GridSpec::real(&model, &frame, cell / 2.0).unwrap()).unwrap().count;
        stable &= a == b;
        counts.push((a, b));
    }
    // winding counts: integer and refinement stable
    let model = ModelManifold::flat_ball(1, 1.0).unwrap();
    let frame = ScaledFrame::new(16).unwrap();
    // (u - a)(u - b)(u - c) in g_k coordinates, roots inside the ball
    let roots = [Complex64::new(1.2, 0.4), Complex64::new(-1.0, -1.4), Complex64::new(0.4, -2.0)];
    let mut coeffs = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); coeffs.len() + 1];
        for (i, c) in coeffs.iter().enumerate() {
            next[i + 1] += c;
            next[i] -= c * r;
        }
        coeffs = next;
    }
    let poly = SectionField::new(
        model,
        frame,
        coeffs
            .iter()
            .enumerate()
            .map(|(d, c)| Bump::new(Point::ORIGIN, *c, BumpModel::monomial(Complex64::new(1.0, 0.0), [d as u8, 0, 0]), 0.0, f64::INFINITY))
            .collect(),
    );
    let mut windings = Vec::new();
    for cell in [0.2, 0.1] {
        let g = GridSpec::ambient(&model, &frame, cell).unwrap();
        windings.push(complex_zero_count(&poly, &g).map(|z| z.signed));
    }
    let winding_ok = windings.iter().all(|w| matches!(w, Ok(3)));
    let pass = fd_err < FD_REL_TOL && stable && winding_ok;
    line(
        12,
        pass,
        format!("FD rel err {fd_err:.2e}; counts {counts:?}; windings {windings:?}"),
    )
}

fn main() {
    // `cargo test -- --list` and filters from the harness
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut lines = Vec::new();
    let (l1, s1) = criterion_1();
    lines.push(l1);
    let (l2, s2) = criterion_2();
    lines.push(l2);
    lines.push(criterion_3(&[(1, &s1), (2, &s2)]));
    lines.push(criterion_4());
    lines.push(criterion_5());
    lines.push(criterion_6());
    lines.push(criterion_7());
    lines.push(criterion_8());
    let pencils = vec![pencil_at(36), pencil_at(64)];
    lines.push(criterion_9(&pencils));
    lines.push(criterion_10(&pencils));
    lines.push(criterion_11());
    lines.push(criterion_12());

    let mut red = Vec::new();
    for l in &lines {
        println!("criterion {:>2}: {}  {}", l.id, if l.pass { "PASS" } else { "FAIL" }, l.detail);
        if !l.pass {
            red.push(l.id);
        }
    }
    println!("red: {red:?}; expected red: {KNOWN_RED:?}");
    assert_eq!(red, KNOWN_RED, "acceptance outcome changed");
}
