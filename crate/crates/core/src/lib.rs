//! Taylor and sum-of-squares approximations of past and future energy
//! functions for polynomial control-affine systems.

pub mod bench;
pub mod collocation;
pub mod error;
pub mod experiments;
pub mod hjb;
pub mod linalg;
pub mod poly;
pub mod simulate;
pub mod sos;
pub mod system;
pub mod tensor;

pub use error::{Error, Result};
pub use hjb::EnergyCandidate;
pub use linalg::EnergyKind;
pub use poly::PolyEnergy;
pub use sos::{SosEnergy, SquaredPolyEnergy};
pub use system::SystemModel;
