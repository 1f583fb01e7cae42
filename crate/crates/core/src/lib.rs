//! Linear-optics receivers for unambiguous discrimination of multimode
//! coherent states, global USD bounds, and channel-level metrics.

pub mod constellation;
pub mod error;
pub mod numerics;
pub mod bounds;
pub mod lop;
pub mod info;
mod optim;
pub mod montecarlo;
pub mod receiver;

pub use constellation::{
    builtin_code, classify_default, classify_degeneracy, hilbert_gram, phase_space_gram,
    ppm_reduction, sample_random_code, AmplitudeVector, BuiltinCode, Constellation,
    ConstellationJson, DegeneracyClass, DegeneracyReport, PpmReduction,
};
pub use error::{Result, UsdError};
pub use numerics::{CMatrix, CVector, RngStream, C64};
