//! Experiment configuration and the scaling, pencil and invariant runs
//! behind the command line.

use std::io::Write;
use std::path::PathBuf;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::constructions::{
    build_full_lattice_section, build_nonvanishing_section, build_spheres_section, LatticeConfig,
};
use crate::error::{Error, Result};
use crate::fields::{Bump, BumpModel, ComplexMap, SectionField};
use crate::grid::GridSpec;
use crate::model::{ModelKind, ModelManifold, ScaledFrame};
use crate::pencil::{self, PencilData, PencilParams};
use crate::point::Point;
use crate::sard::{self, SardParams, DELTA_0};
use crate::transversality::eta_transversality;
use crate::zerolocus::{equidistribution, packing_check, real_components};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    /// Quadric bumps on the real lattice of mesh `D`.
    Spheres,
    /// Unit bumps on the real lattice: no real zeros.
    Nonvanishing,
    /// Quadric bumps on the full torus lattice.
    FullLattice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub n: usize,
    pub k_list: Vec<u32>,
    /// Lattice mesh `D` in `g_k`.
    pub mesh: f64,
    pub construction: Construction,
    /// Real marching grid: points per axis; when absent, `real_cell_gk` decides.
    pub resolution: Option<usize>,
    pub real_cell_gk: f64,
    /// Cell of the grid measuring eta on the real locus, in `g_k`.
    pub eta_cell_gk: f64,
    pub eta_epsilon: f64,
    /// Cells of the equidistribution partition (a perfect power of `2n`).
    pub equi_cells: usize,
    pub equi_cell_gk: f64,
    pub equi_epsilon: f64,
    pub sard_delta: f64,
    pub sard_p: f64,
    pub pencil_k: u32,
    pub pencil_mesh: f64,
    /// `chi`; derived from `s0` when absent.
    pub pencil_chi: Option<f64>,
    /// `epsilon`; `chi / 2` when absent.
    pub pencil_epsilon: Option<f64>,
    pub pencil_eta: f64,
    pub pencil_cell_gk: f64,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Torus,
            n: 1,
            k_list: vec![100, 400, 1600, 6400],
            mesh: 2.0,
            construction: Construction::Spheres,
            resolution: None,
            real_cell_gk: 0.05,
            eta_cell_gk: 0.1,
            eta_epsilon: 0.05,
            equi_cells: 16,
            equi_cell_gk: 0.1,
            equi_epsilon: 0.05,
            sard_delta: 0.09,
            sard_p: 2.0,
            pencil_k: 64,
            pencil_mesh: 2.0,
            pencil_chi: None,
            pencil_epsilon: None,
            pencil_eta: 0.01,
            pencil_cell_gk: 0.5,
            out_dir: PathBuf::from("out"),
            seed: 1,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.n) {
            return Err(config_err(format!("n = {} outside 1..=3", self.n)));
        }
        if let ModelKind::FlatBall { radius } = self.model {
            if !(radius > 0.0 && radius.is_finite()) {
                return Err(config_err(format!("ball radius {radius} must be positive")));
            }
        }
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return Err(config_err("k_list must be non-empty with positive entries"));
        }
        let positive = [
            ("mesh", self.mesh),
            ("real_cell_gk", self.real_cell_gk),
            ("eta_cell_gk", self.eta_cell_gk),
            ("eta_epsilon", self.eta_epsilon),
            ("equi_cell_gk", self.equi_cell_gk),
            ("equi_epsilon", self.equi_epsilon),
            ("sard_p", self.sard_p),
            ("pencil_mesh", self.pencil_mesh),
            ("pencil_eta", self.pencil_eta),
            ("pencil_cell_gk", self.pencil_cell_gk),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(format!("{name} = {v} must be positive and finite")));
            }
        }
        if self.real_cell_gk > crate::zerolocus::MAX_REAL_CELL_GK {
            return Err(config_err(format!(
                "real_cell_gk = {} above {}",
                self.real_cell_gk,
                crate::zerolocus::MAX_REAL_CELL_GK
            )));
        }
        if !(self.sard_delta > 0.0 && self.sard_delta < DELTA_0) {
            return Err(config_err(format!(
                "sard_delta = {} outside (0, {DELTA_0})",
                self.sard_delta
            )));
        }
        if let Some(r) = self.resolution {
            if r < 4 {
                return Err(config_err(format!("resolution {r} below 4")));
            }
        }
        for (name, v) in [("pencil_chi", self.pencil_chi), ("pencil_epsilon", self.pencil_epsilon)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(config_err(format!("{name} = {v} must be positive")));
                }
            }
        }
        if self.pencil_k == 0 {
            return Err(config_err("pencil_k must be positive"));
        }
        if self.equi_cells == 0 {
            return Err(config_err("equi_cells must be positive"));
        }
        Ok(())
    }

    pub fn sard(&self) -> Result<SardParams> {
        SardParams::new(self.sard_delta, self.sard_p).map_err(|e| config_err(e.to_string()))
    }

    pub fn manifold(&self) -> Result<ModelManifold> {
        match self.model {
            ModelKind::Torus => ModelManifold::torus(self.n),
            ModelKind::FlatBall { radius } => ModelManifold::flat_ball(self.n, radius),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// First 16 hex digits of the SHA-256 of the serialized config.
    /// Digest of every field except the output directory.
    pub fn hash(&self) -> String {
        let scrubbed = Self {
            out_dir: PathBuf::new(),
            ..self.clone()
        };
        let text = scrubbed.to_toml().unwrap_or_default();
        let digest = Sha256::digest(text.as_bytes());
        hex::encode(&digest[..8])
    }
}

pub fn build_section(cfg: &ExperimentConfig, model: &ModelManifold, frame: &ScaledFrame) -> Result<(SectionField, usize)> {
    match cfg.construction {
        Construction::Spheres => {
            let sp = build_spheres_section(model, frame, &LatticeConfig::new(cfg.mesh)?)?;
            let sites = sp.sites.len();
            Ok((sp.field, sites))
        }
        Construction::Nonvanishing => {
            let s = build_nonvanishing_section(model, frame)?;
            let sites = s.bumps().len();
            Ok((s, sites))
        }
        Construction::FullLattice => {
            let s = build_full_lattice_section(model, frame, cfg.mesh)?;
            let sites = s.bumps().len();
            Ok((s, sites))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub run_id: usize,
    pub k: u32,
    pub sites: usize,
    pub n_measured: usize,
    pub n_over_k: f64,
    /// Smallest inradius in `g`, times `sqrt k`.
    pub min_inradius_sqrt_k: f64,
    pub packed_volume: f64,
    /// Grid eta on the real locus.
    pub eta: f64,
    /// Coefficient of variation of the per-cell zero measure; NaN when the
    /// ambient grid is too large.
    pub equi_cv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `ln N` against `ln k` (NaN with fewer than two
    /// positive counts).
    pub slope: f64,
    /// Half-width of the 95% confidence band of the slope.
    pub slope_band: f64,
    pub config_hash: String,
}

/// Largest ambient grid used for the equidistribution column.
pub const MAX_EQUI_POINTS: usize = 4_000_000;

fn scaling_row(cfg: &ExperimentConfig, run_id: usize, k: u32) -> Result<ScalingRow> {
    let model = cfg.manifold()?;
    let frame = ScaledFrame::new(k)?;
    let (s, sites) = build_section(cfg, &model, &frame)?;
    let grid = match cfg.resolution {
        Some(r) => GridSpec::real_with_count(&model, &frame, r),
        None => GridSpec::real(&model, &frame, cfg.real_cell_gk)?,
    };
    let inv = real_components(&s, &grid)?;
    let pack = packing_check(&inv, &model, &frame, 0.0);
    let eta_grid = GridSpec::real(&model, &frame, cfg.eta_cell_gk)?;
    let eta = eta_transversality(&s, &eta_grid, cfg.eta_epsilon, true)?.eta;
    let equi_cv = if model.is_torus() {
        let g = GridSpec::ambient(&model, &frame, cfg.equi_cell_gk)?;
        if g.len() <= MAX_EQUI_POINTS {
            equidistribution(&s, &g, cfg.equi_cells, cfg.equi_epsilon)?.cv
        } else {
            f64::NAN
        }
    } else {
        f64::NAN
    };
    let sk = frame.sqrt_k();
    Ok(ScalingRow {
        run_id,
        k,
        sites,
        n_measured: inv.count,
        n_over_k: pack.implied_c,
        min_inradius_sqrt_k: if inv.count == 0 { f64::NAN } else { pack.min_inradius_g * sk },
        packed_volume: pack.packed_volume,
        eta,
        equi_cv,
    })
}

/// Least-squares slope of `y` on `x` and the 95% half-width of its band.
pub fn fit_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let m = x.len();
    if m < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mf = m as f64;
    let (mx, my) = (x.iter().sum::<f64>() / mf, y.iter().sum::<f64>() / mf);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    if m < 3 {
        return (slope, f64::NAN);
    }
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - my - slope * (a - mx)).powi(2))
        .sum();
    let se = (rss / (mf - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, mf - 2.0)
        .map(|d| d.inverse_cdf(0.975))
        .unwrap_or(f64::NAN);
    (slope, t * se)
}

pub fn run_scaling_study(cfg: &ExperimentConfig) -> Result<ScalingStudy> {
    cfg.validate()?;
    let rows: Vec<ScalingRow> = cfg
        .k_list
        .par_iter()
        .enumerate()
        .map(|(id, &k)| {
            scaling_row(cfg, id, k).map_err(|e| Error::Certificate(format!("run {id} (k = {k}): {e}")))
        })
        .collect::<Result<_>>()?;
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.n_measured > 0)
        .map(|r| ((r.k as f64).ln(), (r.n_measured as f64).ln()))
        .unzip();
    let (slope, slope_band) = fit_slope(&x, &y);
    Ok(ScalingStudy {
        rows,
        slope,
        slope_band,
        config_hash: cfg.hash(),
    })
}

fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.9e}")
    }
}

impl ScalingStudy {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "run_id",
            "k",
            "sites",
            "n_measured",
            "n_over_k_n2",
            "min_inradius_sqrt_k",
            "packed_volume",
            "eta",
            "equi_cv",
            "slope",
            "slope_band",
            "config_hash",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.run_id.to_string(),
                r.k.to_string(),
                r.sites.to_string(),
                r.n_measured.to_string(),
                fmt_f(r.n_over_k),
                fmt_f(r.min_inradius_sqrt_k),
                fmt_f(r.packed_volume),
                fmt_f(r.eta),
                fmt_f(r.equi_cv),
                fmt_f(self.slope),
                fmt_f(self.slope_band),
                self.config_hash.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PencilReport {
    pub k: u32,
    pub items: Vec<pencil::ItemCheck>,
    pub data: Option<PencilData>,
    /// Why the base locus is not listed, when it is not.
    pub base_note: Option<String>,
    pub config_hash: String,
}

impl PencilReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.pass)
    }

    pub fn failing_items(&self) -> Vec<u8> {
        self.items.iter().filter(|i| !i.pass).map(|i| i.item).collect()
    }

    pub fn write_summary(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "config_hash = {}", self.config_hash)?;
        writeln!(out, "k = {}", self.k)?;
        for i in &self.items {
            writeln!(
                out,
                "item{} {} measured = {:.6e} threshold = {:.3e} {}",
                i.item,
                i.name.replace(' ', "_"),
                i.measured,
                i.threshold,
                if i.pass { "pass" } else { "FAIL" }
            )?;
        }
        if let Some(p) = &self.data {
            writeln!(out, "reality_sup = {:.3e}", p.reality_sup)?;
            writeln!(out, "critical_points = {}", p.crit_set.len())?;
            writeln!(out, "gamma_fraction = {:.6}", p.gamma_stats.fraction)?;
            writeln!(out, "rho0 = {:.6}", p.gamma_stats.rho0)?;
            writeln!(out, "separation = {:.6}", p.gamma_stats.separation)?;
            writeln!(out, "dropped_seeds = {} {}", p.dropped.0, p.dropped.1)?;
        }
        match &self.base_note {
            Some(note) => writeln!(out, "base_locus = {note}")?,
            None => writeln!(
                out,
                "base_points = {}",
                self.data.as_ref().map_or(0, |p| p.base_locus.len())
            )?,
        }
        Ok(())
    }

    pub fn write_critical_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x1", "y1", "x2", "y2", "re_f", "im_f", "hessian_min_sv", "config_hash"])?;
        if let Some(p) = &self.data {
            for c in &p.crit_set {
                let r = c.point.interleaved();
                w.write_record([
                    fmt_f(r[0]),
                    fmt_f(r[1]),
                    fmt_f(r[2]),
                    fmt_f(r[3]),
                    fmt_f(c.value.re),
                    fmt_f(c.value.im),
                    fmt_f(c.hessian_min_sv),
                    self.config_hash.clone(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_base_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x1", "y1", "x2", "y2", "residual", "config_hash"])?;
        if let Some(p) = &self.data {
            for b in &p.base_locus {
                let r = b.point.interleaved();
                w.write_record([
                    fmt_f(r[0]),
                    fmt_f(r[1]),
                    fmt_f(r[2]),
                    fmt_f(r[3]),
                    fmt_f(b.residual),
                    self.config_hash.clone(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Pencil sections for a config: the lattice pair on the torus, a broad
/// unit bump over a quadric bump on the ball.
pub fn pencil_pair(cfg: &ExperimentConfig) -> Result<(SectionField, SectionField)> {
    let model = cfg.manifold()?;
    let frame = ScaledFrame::new(cfg.pencil_k)?;
    match model.kind {
        ModelKind::Torus => pencil::lattice_pair(&model, &frame, cfg.pencil_mesh, cfg.seed),
        ModelKind::FlatBall { .. } => {
            let one = Complex64::new(1.0, 0.0);
            let s0 = SectionField::new(model, frame, vec![Bump::new(Point::ORIGIN, one, BumpModel::Unit, 0.01, f64::INFINITY)]);
            let s1 = SectionField::new(model, frame, vec![Bump::new(Point::ORIGIN, one, BumpModel::Quadric, 1.0, f64::INFINITY)]);
            Ok((s0, s1))
        }
    }
}

fn pencil_params(cfg: &ExperimentConfig, s0: &SectionField) -> Result<PencilParams> {
    let mut p = PencilParams::defaults_for(s0, cfg.pencil_cell_gk)?;
    if let Some(chi) = cfg.pencil_chi {
        p.chi = chi;
        p.epsilon = 0.5 * chi;
    }
    if let Some(eps) = cfg.pencil_epsilon {
        p.epsilon = eps;
    }
    p.eta = cfg.pencil_eta;
    Ok(p)
}

/// Certifies the pencil of `(s0, s1)`; failures of the symmetry gate or of
/// the pair check become failing items rather than errors.
pub fn run_pencil_report_on(cfg: &ExperimentConfig, s0: &SectionField, s1: &SectionField) -> Result<PencilReport> {
    let params = pencil_params(cfg, s0)?;
    let k = s0.frame().k;
    let item = |item: u8, name: &str, measured: f64, threshold: f64, pass: bool| pencil::ItemCheck {
        item,
        name: name.into(),
        measured,
        threshold,
        pass,
    };
    let base_note = (s0.n() < 2).then(|| "not applicable (codim 4 > dim)".to_string());
    match pencil::certify(s0, s1, &params) {
        Ok(p) => Ok(PencilReport {
            k,
            items: p.items(),
            data: Some(p),
            base_note,
            config_hash: cfg.hash(),
        }),
        Err(Error::NotSymmetric(_)) => {
            let grid = GridSpec::ambient(s0.model(), s0.frame(), params.cell_gk)?;
            let sup = s0
                .symmetry_certificate(&grid)
                .sup
                .max(s1.symmetry_certificate(&grid).sup);
            Ok(PencilReport {
                k,
                items: vec![item(4, "reality", sup, 1e-9, false)],
                data: None,
                base_note,
                config_hash: cfg.hash(),
            })
        }
        Err(Error::PairNotTransverse { sigma_min, .. }) => Ok(PencilReport {
            k,
            items: vec![item(2, "pair transverse", sigma_min, params.eta, false)],
            data: None,
            base_note,
            config_hash: cfg.hash(),
        }),
        Err(e) => Err(e),
    }
}

pub fn run_pencil_report(cfg: &ExperimentConfig) -> Result<PencilReport> {
    cfg.validate()?;
    if cfg.n > 2 {
        return Err(config_err("pencils need n in 1..=2"));
    }
    let (s0, s1) = pencil_pair(cfg)?;
    run_pencil_report_on(cfg, &s0, &s1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub module: String,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantSummary {
    pub config_hash: String,
    pub checks: Vec<InvariantCheck>,
}

impl InvariantSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }
}

fn check(module: &str, name: &str, pass: bool, detail: String) -> InvariantCheck {
    InvariantCheck {
        module: module.into(),
        name: name.into(),
        pass,
        detail,
    }
}

fn random_symmetric_field(model: &ModelManifold, frame: &ScaledFrame, rng: &mut ChaCha8Rng) -> SectionField {
    let n = model.n;
    let bumps = (0..6)
        .map(|_| {
            let mut r = [0.0; 6];
            for v in r.iter_mut().take(2 * n) {
                *v = rng.gen_range(-0.5..0.5);
            }
            let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let model_b = if rng.gen_bool(0.5) { BumpModel::Quadric } else { BumpModel::Unit };
            Bump::new(Point::from_interleaved(&r[..2 * n]), c, model_b, 1.0, f64::INFINITY)
        })
        .collect();
    SectionField::new(*model, *frame, bumps).symmetrize()
}

/// Runs the invariants of every module on small instances derived from `cfg`.
pub fn run_invariant_suite(cfg: &ExperimentConfig) -> Result<InvariantSummary> {
    cfg.validate()?;
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = cfg.manifold()?;
    let k = *cfg.k_list.first().expect("validated");
    let frame = ScaledFrame::new(k)?;
    let n = model.n;

    // model: c is an involution and an isometry
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let r: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-0.45..0.45)).collect();
        let s: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-0.45..0.45)).collect();
        let (x, y) = (Point::from_interleaved(&r), Point::from_interleaved(&s));
        let back = model.conj(&model.conj(&x));
        worst = worst.max(model.displacement(&back, &x).norm());
        let d1 = model.g_distance(&x, &y)?;
        let d2 = model.g_distance(&model.conj(&x), &model.conj(&y))?;
        worst = worst.max((d1 - d2).abs());
    }
    checks.push(check("model", "conjugation involutive isometry", worst < 1e-12, format!("{worst:.3e}")));

    // fields: kappa equivariance and structural involution
    let mut worst: f64 = 0.0;
    let mut structural = true;
    for _ in 0..5 {
        let s = random_symmetric_field(&model, &frame, &mut rng);
        structural &= s.is_structurally_symmetric();
        let raw = SectionField::new(model, frame, s.bumps()[..1].to_vec());
        let kk = raw.kappa().kappa();
        structural &= kk.bumps() == raw.bumps();
        let ks = raw.kappa();
        for _ in 0..20 {
            let r: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-0.45..0.45)).collect();
            let z = Point::from_interleaved(&r);
            let cz = model.conj(&z);
            let (a, ga) = ks.eval_grad(&z);
            let (b, gb) = raw.eval_grad(&cz);
            worst = worst.max((a - b.conj()).norm());
            worst = worst.max((ga.norm() - gb.norm()).abs());
        }
    }
    checks.push(check("fields", "kappa equivariance", worst < 1e-12, format!("{worst:.3e}")));
    checks.push(check("fields", "kappa structural involution", structural, String::new()));

    // transversality: eta of the configured section is finite and nonnegative
    let (s, _) = build_section(cfg, &model, &frame)?;
    let eta_grid = GridSpec::real(&model, &frame, cfg.eta_cell_gk)?;
    let rep = eta_transversality(&s, &eta_grid, cfg.eta_epsilon, true)?;
    checks.push(check(
        "transversality",
        "eta well defined",
        rep.eta >= 0.0 && rep.eta_lower <= rep.eta,
        format!("eta = {:.4e}, lower = {:.4e}", rep.eta, rep.eta_lower),
    ));

    // sard: the picked w is real, within delta and certified
    let sp = cfg.sard()?;
    let mut ok = true;
    for _ in 0..5 {
        let c: Vec<Complex64> = (0..3)
            .map(|_| Complex64::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)))
            .collect();
        let f = sard::poly_z1(c);
        match sard::pick_real_w(&f, &sp) {
            Ok(p) => ok &= p.w.abs() <= sp.delta && p.check.ok,
            Err(_) => ok = false,
        }
    }
    checks.push(check("sard", "real pick certified", ok, String::new()));

    // zerolocus: counts stable under grid doubling
    let grid = match cfg.resolution {
        Some(r) => GridSpec::real_with_count(&model, &frame, r),
        None => GridSpec::real(&model, &frame, cfg.real_cell_gk)?,
    };
    let a = real_components(&s, &grid)?.count;
    let b = real_components(&s, &grid.refined())?.count;
    checks.push(check("zerolocus", "count stable under refinement", a == b, format!("{a} vs {b}")));
    let pack = packing_check(&real_components(&s, &grid)?, &model, &frame, 0.0);
    checks.push(check(
        "zerolocus",
        "packing bound",
        pack.ok,
        format!("packed volume {:.4}", pack.packed_volume),
    ));

    // constructions: the section is symmetric
    let cert = s.symmetry_certificate(&GridSpec::ambient_with_count(&model, &frame, 16));
    checks.push(check(
        "constructions",
        "symmetric output",
        s.is_structurally_symmetric() && cert.sup < 1e-9,
        format!("{:.3e}", cert.sup),
    ));

    // pencil: reality of a small lattice pencil
    if n <= 2 && model.is_torus() {
        let m1 = ModelManifold::torus(1)?;
        let f1 = ScaledFrame::new(100)?;
        let (s0, s1) = pencil::lattice_pair(&m1, &f1, 2.0, cfg.seed)?;
        let params = PencilParams::defaults_for(&s0, 0.2)?;
        let p = pencil::certify(&s0, &s1, &params)?;
        let paired = p.crit_set.iter().all(|c| {
            let cq = m1.reduce(&m1.conj(&c.point));
            p.crit_set.iter().any(|d| {
                m1.displacement(&d.point, &cq).norm() * 10.0 < 1e-6 && (d.value - c.value.conj()).norm() < 1e-9
            })
        });
        checks.push(check(
            "pencil",
            "reality and conjugate critical values",
            p.reality_sup < 1e-9 && paired,
            format!("{:.3e}", p.reality_sup),
        ));
    }

    // cli: config round trip
    let text = cfg.to_toml()?;
    let back = ExperimentConfig::from_toml(&text)?;
    checks.push(check("cli", "config round trip", &back == cfg, String::new()));

    Ok(InvariantSummary {
        config_hash: cfg.hash(),
        checks,
    })
}

/// One row per forbidden interval, carrying the pick and the config hash.
pub fn write_sard_csv(pick: &sard::RealPick, config_hash: &str, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lo", "hi", "w", "clearance", "config_hash"])?;
    for [a, b] in &pick.trace.intervals {
        w.write_record([fmt_f(*a), fmt_f(*b), fmt_f(pick.w), fmt_f(pick.clearance), config_hash.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Forbidden trace and pick for `f(z) = z^2 - c` on the unit ball.
pub fn run_sard_demo(cfg: &ExperimentConfig, c: f64) -> Result<sard::RealPick> {
    cfg.validate()?;
    let f = sard::poly_z1(vec![Complex64::new(-c, 0.0), Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]);
    sard::pick_real_w(&f, &cfg.sard()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn delta_above_limit_is_a_config_error() {
        let cfg = ExperimentConfig {
            sard_delta: 0.2,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn slope_of_exact_power() {
        let x: Vec<f64> = [100.0f64, 400.0, 1600.0].iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = [10.0f64, 20.0, 40.0].iter().map(|v| v.ln()).collect();
        let (s, band) = fit_slope(&x, &y);
        assert!((s - 0.5).abs() < 1e-12);
        assert!(band < 1e-9);
    }
}
