//! Numerical models of symmetric approximately-holomorphic sections on flat
//! and toric models with the involution `c(z) = conj(z)`: construction,
//! symmetric transversalization, real zero loci and real Lefschetz pencils.

pub mod constructions;
pub mod error;
pub mod experiment;
pub mod fields;
pub mod grid;
pub mod model;
pub mod pencil;
pub mod point;
pub mod sard;
pub mod transversality;
pub mod unionfind;
pub mod zerolocus;

pub use error::{Error, Result};
pub use fields::{Bump, BumpModel, ComplexMap, SectionField};
pub use grid::{GridLayout, GridSpec};
pub use model::{ModelKind, ModelManifold, ScaledFrame};
pub use num_complex::Complex64;
pub use point::{Gradient, Point};
