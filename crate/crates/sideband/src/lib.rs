//! Stroboscopic weak measurement of a thermal mechanical mode by a two-level
//! probe: truncated-Fock quantum engine, semiclassical engine, spectral
//! estimation, and the circuit/device calculators that set the physical scales.

pub mod constants;
pub mod device;
pub mod fluxonium;
pub mod fock;
pub mod lindblad;
pub mod measurement;
pub mod protocol;
pub mod rng;
pub mod spectral;

pub use num_complex::Complex64 as C64;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Dense complex matrix used for operators, states and superoperators.
pub type CMat = nalgebra::DMatrix<C64>;
/// Dense complex vector (pure states, vectorized density matrices).
pub type CVec = nalgebra::DVector<C64>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Fock(#[from] fock::FockError),
    #[error(transparent)]
    Lindblad(#[from] lindblad::LindbladError),
    #[error(transparent)]
    Measurement(#[from] measurement::MeasurementError),
    #[error(transparent)]
    Protocol(#[from] protocol::ProtocolError),
    #[error(transparent)]
    Spectral(#[from] spectral::SpectralError),
    #[error(transparent)]
    Fluxonium(#[from] fluxonium::FluxoniumError),
    #[error(transparent)]
    Device(#[from] device::DeviceError),
}
