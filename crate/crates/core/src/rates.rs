//! Achievable rates, secrecy rate and power accounting for a fixed
//! beamformer / reflection pair. Rates are in nats.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSet, NoiseConfig};
use crate::{CVector, Complex64};

/// Transmit beamformer `w` (length `M`).
#[derive(Debug, Clone, PartialEq)]
pub struct Beamformer {
    pub w: CVector,
}

impl Beamformer {
    pub fn new(w: CVector) -> Self {
        Self { w }
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            w: CVector::zeros(m),
        }
    }

    /// Transmit power `‖w‖²`.
    pub fn power(&self) -> f64 {
        self.w.norm_squared()
    }
}

/// Diagonal reflection matrix `Q = diag(q)`; `q_n = β_n e^{jθ_n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectMatrix {
    pub q: CVector,
}

impl ReflectMatrix {
    pub fn new(q: CVector) -> Self {
        Self { q }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            q: CVector::from_element(n, Complex64::new(1.0, 0.0)),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            q: CVector::zeros(n),
        }
    }

    /// Amplitudes `β_n`.
    pub fn amplitudes(&self) -> Vec<f64> {
        self.q.iter().map(|z| z.norm()).collect()
    }

    /// `true` when every element has unit modulus within `tol`.
    pub fn is_passive(&self, tol: f64) -> bool {
        self.q.iter().all(|z| (z.norm() - 1.0).abs() <= tol)
    }

    /// `‖Q‖_F²`.
    pub fn frobenius_sq(&self) -> f64 {
        self.q.norm_squared()
    }
}

/// How the surface is modeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RisMode {
    /// Amplifying surface with an aggregate power budget and thermal noise.
    Active,
    /// Unit-modulus elements with optimized phases.
    PassiveOptimized,
    /// Unit-modulus elements fixed at `Q = I`.
    PassiveIdentity,
}

impl RisMode {
    pub fn is_active(self) -> bool {
        matches!(self, RisMode::Active)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RisMode::Active => "active",
            RisMode::PassiveOptimized => "passive_optimized",
            RisMode::PassiveIdentity => "passive_identity",
        }
    }
}

fn check_dims(w: &Beamformer, q: &ReflectMatrix, ch: &ChannelSet) {
    assert_eq!(w.w.len(), ch.num_tx_antennas(), "beamformer length != M");
    assert_eq!(q.q.len(), ch.num_ris_elements(), "reflection length != N");
}

/// Received amplitude `(h_A^H + h_I^H Q H_AI) w`, with `Q = diag(q)`.
fn cascade(h_a: &CVector, h_i: &CVector, w: &Beamformer, q: &ReflectMatrix, ch: &ChannelSet) -> Complex64 {
    let hw = &ch.h_ai * &w.w;
    let ris: Complex64 = h_i
        .iter()
        .zip(q.q.iter())
        .zip(hw.iter())
        .map(|((h, qn), x)| h.conj() * qn * x)
        .sum();
    h_a.dotc(&w.w) + ris
}

/// `‖h_I^H Q‖² = Σ |h_I,n|² |q_n|²`.
fn reflected_noise_gain(h_i: &CVector, q: &ReflectMatrix) -> f64 {
    h_i.iter()
        .zip(q.q.iter())
        .map(|(h, qn)| h.norm_sqr() * qn.norm_sqr())
        .sum()
}

fn rate(
    h_a: &CVector,
    h_i: &CVector,
    sigma2: f64,
    w: &Beamformer,
    q: &ReflectMatrix,
    ch: &ChannelSet,
    noise: &NoiseConfig,
) -> f64 {
    check_dims(w, q, ch);
    assert!(sigma2 > 0.0, "receiver noise must be positive");
    let signal = cascade(h_a, h_i, w, q, ch).norm_sqr();
    let denom = sigma2 + reflected_noise_gain(h_i, q) * noise.sigma2_i;
    (signal / denom).ln_1p()
}

/// Bob's achievable rate.
pub fn rate_bob(w: &Beamformer, q: &ReflectMatrix, ch: &ChannelSet, noise: &NoiseConfig) -> f64 {
    rate(&ch.h_ab, &ch.h_ib, noise.sigma2_b, w, q, ch, noise)
}

/// Eve's achievable rate.
pub fn rate_eve(w: &Beamformer, q: &ReflectMatrix, ch: &ChannelSet, noise: &NoiseConfig) -> f64 {
    rate(&ch.h_ae, &ch.h_ie, noise.sigma2_e, w, q, ch, noise)
}

/// `[R_B − R_E]⁺`.
pub fn secrecy_rate(w: &Beamformer, q: &ReflectMatrix, ch: &ChannelSet, noise: &NoiseConfig) -> f64 {
    (rate_bob(w, q, ch, noise) - rate_eve(w, q, ch, noise)).max(0.0)
}

/// Power drawn by the surface amplifiers: `‖Q H_AI w‖² + ‖Q‖_F² σ_I²`.
pub fn ris_power(w: &Beamformer, q: &ReflectMatrix, ch: &ChannelSet, noise: &NoiseConfig) -> f64 {
    check_dims(w, q, ch);
    let hw = &ch.h_ai * &w.w;
    let amplified: f64 = q
        .q
        .iter()
        .zip(hw.iter())
        .map(|(qn, x)| qn.norm_sqr() * x.norm_sqr())
        .sum();
    amplified + q.frobenius_sq() * noise.sigma2_i
}

/// `‖w‖² + ris_power` for an active surface, `‖w‖²` for a passive one.
pub fn total_power(
    w: &Beamformer,
    q: &ReflectMatrix,
    ch: &ChannelSet,
    noise: &NoiseConfig,
    mode: RisMode,
) -> f64 {
    if mode.is_active() {
        w.power() + ris_power(w, q, ch, noise)
    } else {
        check_dims(w, q, ch);
        w.power()
    }
}

/// Nats → bits.
pub fn nats_to_bits(r: f64) -> f64 {
    r / std::f64::consts::LN_2
}
