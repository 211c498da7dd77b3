//! Fixtures shared by the benchmarks.

use rsym_core::constructions::{build_spheres_section, LatticeConfig};
use rsym_core::{ModelManifold, ScaledFrame, SectionField};

/// Spheres section on the n-torus at tensor power `k`, mesh 2.
pub fn spheres(n: usize, k: u32) -> SectionField {
    let model = ModelManifold::torus(n).expect("torus");
    let frame = ScaledFrame::new(k).expect("frame");
    let cfg = LatticeConfig::new(2.0).expect("mesh");
    build_spheres_section(&model, &frame, &cfg).expect("section").field
}
