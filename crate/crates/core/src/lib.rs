//! Transmit-power minimization for RIS-assisted MISO wiretap links.
//!
//! The crate covers the full pipeline for one multi-antenna transmitter
//! (Alice), one legitimate single-antenna receiver (Bob), one single-antenna
//! eavesdropper (Eve) and a reconfigurable intelligent surface that is either
//! active (per-element amplification, aggregate power budget, thermal noise)
//! or passive (unit-modulus phase shifts):
//!
//! * [`channel`]: seeded path-loss × Rician channel realizations.
//! * [`rates`]: achievable/secrecy rates and power accounting for a `(w, Q)` pair.
//! * [`sdp`]: dense Hermitian SDP solver (log-barrier Newton) used by both subproblems.
//! * [`beamformer`]: penalty-based SCA for the transmit beamformer given `Q`.
//! * [`reflector`]: penalty-based SCA for the reflection coefficients given `w`.
//! * [`altmin`]: the alternating outer loop and batch statistics.
//! * [`scenario`]: TOML scenario configs, sweeps and CSV output.

pub mod altmin;
pub mod beamformer;
pub mod channel;
pub mod rates;
pub mod reflector;
pub mod scenario;
pub mod sdp;

pub use num_complex::Complex64;

/// Dense complex column vector.
pub type CVector = nalgebra::DVector<Complex64>;
/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<Complex64>;
