//! Seeded channel realizations: large-scale path loss times small-scale
//! Rician fading.
//!
//! Randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! the realization seed through `seed_from_u64`. Each link draws from its own
//! ChaCha stream (`set_stream`), numbered in the order
//! `h_AB = 0, h_AE = 1, H_AI = 2, h_IB = 3, h_IE = 4`, so changing the number of
//! RIS elements never perturbs the direct links of the same seed. Complex
//! Gaussians are `(x + iy)/√2` with `x, y` from `rand_distr::StandardNormal`;
//! matrices are filled column-major.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{CMatrix, CVector, Complex64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("distance must be strictly positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("nodes {0} and {1} coincide")]
    CoincidentNodes(&'static str, &'static str),
    #[error("invalid channel parameter: {0}")]
    InvalidParam(String),
}

/// 2-D position in meters.
pub type Point = [f64; 2];

fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Positions of the four nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeLayout {
    pub alice: Point,
    pub ris: Point,
    pub bob: Point,
    pub eve: Point,
}

impl NodeLayout {
    /// Geometry of the convergence / power-vs-rate / power-vs-N experiments.
    pub fn reference() -> Self {
        Self {
            alice: [0.0, 0.0],
            ris: [60.0, 30.0],
            bob: [70.0, 20.0],
            eve: [100.0, 20.0],
        }
    }

    /// Collinear geometry with the RIS at `(ds, 0)`.
    pub fn collinear(ds: f64) -> Self {
        Self {
            alice: [0.0, 0.0],
            ris: [ds, 0.0],
            bob: [70.0, 0.0],
            eve: [100.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let nodes = [
            ("alice", self.alice),
            ("ris", self.ris),
            ("bob", self.bob),
            ("eve", self.eve),
        ];
        for (i, (na, pa)) in nodes.iter().enumerate() {
            for (nb, pb) in &nodes[i + 1..] {
                let d = distance(*pa, *pb);
                if !(d > 0.0) || !d.is_finite() {
                    return Err(ChannelError::CoincidentNodes(na, nb));
                }
            }
        }
        Ok(())
    }

    /// Distances `(alice-bob, alice-eve, alice-ris, ris-bob, ris-eve)`.
    pub fn link_distances(&self) -> [f64; 5] {
        [
            distance(self.alice, self.bob),
            distance(self.alice, self.eve),
            distance(self.alice, self.ris),
            distance(self.ris, self.bob),
            distance(self.ris, self.eve),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub num_tx_antennas: usize,
    pub num_ris_elements: usize,
    /// Path loss at the 1 m reference distance, in dB.
    pub path_loss_ref_db: f64,
    /// Exponent for the Alice-Bob and Alice-Eve links.
    pub exponent_direct: f64,
    /// Exponent for every link touching the RIS.
    pub exponent_ris: f64,
    pub rician_k_db: f64,
    pub seed: u64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            num_tx_antennas: 4,
            num_ris_elements: 8,
            path_loss_ref_db: 30.0,
            exponent_direct: 3.5,
            exponent_ris: 2.2,
            rician_k_db: 3.0,
            seed: 0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.num_tx_antennas == 0 || self.num_ris_elements == 0 {
            return Err(ChannelError::InvalidParam(
                "antenna and element counts must be at least 1".into(),
            ));
        }
        if !(self.exponent_direct >= 2.0) || !(self.exponent_ris >= 2.0) {
            return Err(ChannelError::InvalidParam(
                "path-loss exponents must be >= 2".into(),
            ));
        }
        // ±∞ dB for K is allowed: pure Rayleigh or pure line-of-sight
        if !self.path_loss_ref_db.is_finite() || self.rician_k_db.is_nan() {
            return Err(ChannelError::InvalidParam("non-finite dB value".into()));
        }
        Ok(())
    }

    pub fn rician_k_linear(&self) -> f64 {
        10f64.powf(self.rician_k_db / 10.0)
    }
}

/// The five channel blocks of one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// Alice → Bob, `M`.
    pub h_ab: CVector,
    /// Alice → Eve, `M`.
    pub h_ae: CVector,
    /// Alice → RIS, `N × M`.
    pub h_ai: CMatrix,
    /// RIS → Bob, `N`.
    pub h_ib: CVector,
    /// RIS → Eve, `N`.
    pub h_ie: CVector,
}

impl ChannelSet {
    pub fn num_tx_antennas(&self) -> usize {
        self.h_ab.len()
    }

    pub fn num_ris_elements(&self) -> usize {
        self.h_ib.len()
    }

    pub fn is_finite(&self) -> bool {
        let ok = |m: &[Complex64]| m.iter().all(|z| z.re.is_finite() && z.im.is_finite());
        ok(self.h_ab.as_slice())
            && ok(self.h_ae.as_slice())
            && ok(self.h_ai.as_slice())
            && ok(self.h_ib.as_slice())
            && ok(self.h_ie.as_slice())
    }
}

/// Noise variances in watts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma2_b: f64,
    pub sigma2_e: f64,
    pub sigma2_i: f64,
}

impl NoiseConfig {
    pub fn from_dbm(bob_dbm: f64, eve_dbm: f64, ris_dbm: f64) -> Self {
        Self {
            sigma2_b: dbm_to_watts(bob_dbm),
            sigma2_e: dbm_to_watts(eve_dbm),
            sigma2_i: dbm_to_watts(ris_dbm),
        }
    }

    /// Same receiver noise, no RIS thermal noise.
    pub fn without_ris_noise(self) -> Self {
        Self {
            sigma2_i: 0.0,
            ..self
        }
    }
}

pub fn dbm_to_watts(p_dbm: f64) -> f64 {
    10f64.powf(p_dbm / 10.0) * 1e-3
}

/// Linear power gain `10^(-ref_db/10) · dist^(-exponent)`.
pub fn path_loss_gain(dist: f64, exponent: f64, ref_db: f64) -> Result<f64, ChannelError> {
    if !(dist > 0.0) {
        return Err(ChannelError::NonPositiveDistance(dist));
    }
    Ok(10f64.powf(-ref_db / 10.0) * dist.powf(-exponent))
}

fn complex_gaussian(rng: &mut ChaCha20Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Unit-second-moment Rician block `√(k/(1+k))·1 + √(1/(1+k))·G`.
///
/// The line-of-sight part is the all-ones matrix. `k_linear = ∞` yields the
/// pure line-of-sight block without consuming randomness.
pub fn rician_sample(rng: &mut ChaCha20Rng, rows: usize, cols: usize, k_linear: f64) -> CMatrix {
    assert!(k_linear >= 0.0, "Rician K must be non-negative");
    if k_linear.is_infinite() {
        return DMatrix::from_element(rows, cols, Complex64::new(1.0, 0.0));
    }
    let los = (k_linear / (1.0 + k_linear)).sqrt();
    let nlos = (1.0 / (1.0 + k_linear)).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| {
        Complex64::new(los, 0.0) + complex_gaussian(rng) * nlos
    })
}

/// One realization for `(layout, params)`; a pure function of its inputs.
pub fn generate_channels(
    layout: &NodeLayout,
    params: &ChannelParams,
) -> Result<ChannelSet, ChannelError> {
    layout.validate()?;
    params.validate()?;
    let m = params.num_tx_antennas;
    let n = params.num_ris_elements;
    let k = params.rician_k_linear();
    let [d_ab, d_ae, d_ai, d_ib, d_ie] = layout.link_distances();

    let block = |stream: u64, rows: usize, cols: usize, dist: f64, exponent: f64| {
        let gain = path_loss_gain(dist, exponent, params.path_loss_ref_db)?;
        let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
        rng.set_stream(stream);
        Ok::<_, ChannelError>(rician_sample(&mut rng, rows, cols, k) * Complex64::new(gain.sqrt(), 0.0))
    };

    let h_ab = block(0, m, 1, d_ab, params.exponent_direct)?;
    let h_ae = block(1, m, 1, d_ae, params.exponent_direct)?;
    let h_ai = block(2, n, m, d_ai, params.exponent_ris)?;
    let h_ib = block(3, n, 1, d_ib, params.exponent_ris)?;
    let h_ie = block(4, n, 1, d_ie, params.exponent_ris)?;

    Ok(ChannelSet {
        h_ab: h_ab.column(0).into_owned(),
        h_ae: h_ae.column(0).into_owned(),
        h_ai,
        h_ib: h_ib.column(0).into_owned(),
        h_ie: h_ie.column(0).into_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dbm_conversions() {
        assert_relative_eq!(dbm_to_watts(0.0), 1.0e-3, max_relative = 1e-15);
        assert_relative_eq!(dbm_to_watts(30.0), 1.0, max_relative = 1e-15);
        assert_relative_eq!(dbm_to_watts(-90.0), 1.0e-12, max_relative = 1e-14);
    }

    #[test]
    fn path_loss_examples() {
        assert_relative_eq!(path_loss_gain(1.0, 2.2, 30.0).unwrap(), 1.0e-3, max_relative = 1e-15);
        assert_relative_eq!(path_loss_gain(10.0, 2.0, 0.0).unwrap(), 1.0e-2, max_relative = 1e-15);
        // 1e-3 * 50^-2.2 evaluated independently
        assert_relative_eq!(
            path_loss_gain(50.0, 2.2, 30.0).unwrap(),
            1.8292202077093042e-07,
            max_relative = 1e-12
        );
        assert!(matches!(
            path_loss_gain(0.0, 2.0, 0.0),
            Err(ChannelError::NonPositiveDistance(_))
        ));
        assert!(path_loss_gain(-3.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn rician_pure_los_is_unit_modulus() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let s = rician_sample(&mut rng, 4, 3, f64::INFINITY);
        assert!(s.iter().all(|z| (z.norm() - 1.0).abs() < 1e-15));
        // large but finite K approaches the same limit
        let s = rician_sample(&mut rng, 4, 3, 1e12);
        assert!(s.iter().all(|z| (z.norm() - 1.0).abs() < 1e-4));
    }

    #[test]
    fn rician_rayleigh_second_moment() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let s = rician_sample(&mut rng, 100_000, 1, 0.0);
        let mean = s.iter().map(|z| z.norm_sqr()).sum::<f64>() / s.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean |h|^2 = {mean}");
    }

    #[test]
    fn rician_deterministic() {
        let mut a = ChaCha20Rng::seed_from_u64(5);
        let mut b = ChaCha20Rng::seed_from_u64(5);
        assert_eq!(rician_sample(&mut a, 3, 2, 2.0), rician_sample(&mut b, 3, 2, 2.0));
    }

    #[test]
    fn degenerate_unit_geometry() {
        // every one of the five links is 1 m long (Bob-Eve is not a link)
        let layout = NodeLayout {
            alice: [0.0, 0.0],
            ris: [1.0, 0.0],
            bob: [0.5, 3f64.sqrt() / 2.0],
            eve: [0.5, -(3f64.sqrt()) / 2.0],
        };
        for d in layout.link_distances() {
            assert_relative_eq!(d, 1.0, max_relative = 1e-15);
        }
        let params = ChannelParams {
            num_tx_antennas: 1,
            num_ris_elements: 1,
            path_loss_ref_db: 0.0,
            rician_k_db: f64::INFINITY,
            ..Default::default()
        };
        let ch = generate_channels(&layout, &params).unwrap();
        for z in [ch.h_ab[0], ch.h_ae[0], ch.h_ai[(0, 0)], ch.h_ib[0], ch.h_ie[0]] {
            assert_relative_eq!(z.norm(), 1.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn coincident_nodes_rejected() {
        let mut layout = NodeLayout::reference();
        layout.eve = layout.bob;
        let err = generate_channels(&layout, &ChannelParams::default()).unwrap_err();
        assert_eq!(err, ChannelError::CoincidentNodes("bob", "eve"));
    }

    #[test]
    fn same_seed_bit_identical() {
        let p = ChannelParams {
            seed: 42,
            ..Default::default()
        };
        let a = generate_channels(&NodeLayout::reference(), &p).unwrap();
        let b = generate_channels(&NodeLayout::reference(), &p).unwrap();
        assert_eq!(a, b);
        assert!(a.is_finite());
        assert_eq!(a.h_ai.shape(), (8, 4));
    }

    #[test]
    fn direct_links_independent_of_element_count() {
        let p8 = ChannelParams::default();
        let p16 = ChannelParams {
            num_ris_elements: 16,
            ..p8
        };
        let a = generate_channels(&NodeLayout::reference(), &p8).unwrap();
        let b = generate_channels(&NodeLayout::reference(), &p16).unwrap();
        assert_eq!(a.h_ab, b.h_ab);
        assert_eq!(a.h_ae, b.h_ae);
    }

    #[test]
    fn doubling_distances_quarters_power() {
        let p = ChannelParams {
            exponent_direct: 2.0,
            exponent_ris: 2.0,
            ..Default::default()
        };
        let near = NodeLayout::reference();
        let far = NodeLayout {
            alice: [0.0, 0.0],
            ris: [120.0, 60.0],
            bob: [140.0, 40.0],
            eve: [200.0, 40.0],
        };
        let a = generate_channels(&near, &p).unwrap();
        let b = generate_channels(&far, &p).unwrap();
        // same seed ⇒ same fading, so the ratio is exact per entry
        for (x, y) in a.h_ai.iter().zip(b.h_ai.iter()) {
            assert_relative_eq!(y.norm_sqr() * 4.0, x.norm_sqr(), max_relative = 1e-12);
        }
        for (x, y) in a.h_ab.iter().zip(b.h_ab.iter()) {
            assert_relative_eq!(y.norm_sqr() * 4.0, x.norm_sqr(), max_relative = 1e-12);
        }
    }
}
