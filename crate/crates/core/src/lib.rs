//! Time-domain scattering of N photons on a two-level atom coupled to a
//! one-dimensional waveguide.
//!
//! All routines are generic over the real scalar (`f32` or `f64`); the
//! aliases at the crate root fix the common double-precision choice.

pub mod amplitudes;
pub mod error;
pub mod kernel;
pub mod model;
pub mod observables;
pub mod quadrature;
pub mod scalar;
pub mod spectral;

pub use error::{Result, ScatterError};
pub use model::{
    Bandwidth, CorrelatedPair, Direction, InitialState, Photon, PulseProfile, SeparableWavepacket, TimePoint,
    Wavepacket, WavepacketDesc,
};
pub use quadrature::{QuadratureRule, QuadratureSpec};
pub use scalar::Real;

pub type PulseProfile64 = PulseProfile<f64>;
pub type Wavepacket64 = Wavepacket<f64>;
pub type InitialState64 = InitialState<f64>;
pub type PulseProfile32 = PulseProfile<f32>;
pub type Wavepacket32 = Wavepacket<f32>;
