mod common;

use common::*;
use ris_secrecy::beamformer::{algorithm1, effective_channels, solve_p3, BeamformerConfig};
use ris_secrecy::rates::ReflectMatrix;
use ris_secrecy::{CVector, Complex64};

#[test]
fn single_antenna_matches_closed_form() {
    let mut r = rng(11);
    let mut checked = 0;
    for _ in 0..40 {
        let (ch, noise) = unit_instance(&mut r, 1, 3);
        let q = ReflectMatrix::new(cvec(&mut r, 3, 0.7));
        let rbar = 0.5;
        let (gb, ge) = scalar_gains(&ch, &q, &noise);
        let Some(p) = scalar_min_power(gb, ge, rbar) else {
            assert!(algorithm1(&q, &ch, &noise, rbar, None, &BeamformerConfig::default()).is_err());
            continue;
        };
        let out = algorithm1(&q, &ch, &noise, rbar, None, &BeamformerConfig::default()).unwrap();
        let got = out.beamformer.power();
        assert!((got - p).abs() <= 1e-6 * p, "{got} vs {p}");
        checked += 1;
    }
    assert!(checked >= 10);
}

#[test]
fn not_worse_than_gaussian_randomization() {
    let mut r = rng(5);
    for k in 0..5 {
        let (ch, noise) = unit_instance(&mut r, 4, 8);
        let q = ReflectMatrix::new(cvec(&mut r, 8, 0.5));
        let rbar = 1.0;
        let p_i = Some(20.0);
        let cfg = BeamformerConfig::default();
        let out = algorithm1(&q, &ch, &noise, rbar, p_i, &cfg).unwrap();
        let sdr = solve_p3(&effective_channels(&q, &ch, &noise), &q, &ch, &noise, rbar, p_i, cfg.sdp_tol).unwrap();
        let oracle = randomization_oracle(&sdr.w, &ch, &q, &noise, rbar, p_i, 2000, k).unwrap();
        let got = out.beamformer.power();
        // The relaxation bounds every rank-one point from below.
        assert!(got >= sdr.w.trace().re * (1.0 - 1e-6));
        assert!(got <= oracle + 1e-6, "instance {k}: {got} > {oracle}");
        recheck(&out.beamformer, &q, &ch, &noise, rbar, p_i).unwrap();
    }
}

#[test]
fn scales_with_noise_power() {
    // Multiplying every noise variance by c multiplies the least power by c.
    let mut r = rng(3);
    let (ch, noise) = unit_instance(&mut r, 3, 4);
    let q = ReflectMatrix::new(CVector::from_element(4, Complex64::new(0.8, 0.0)));
    let scaled = ris_secrecy::channel::NoiseConfig {
        sigma2_b: noise.sigma2_b * 4.0,
        sigma2_e: noise.sigma2_e * 4.0,
        sigma2_i: noise.sigma2_i * 4.0,
    };
    let cfg = BeamformerConfig::default();
    let a = algorithm1(&q, &ch, &noise, 1.5, None, &cfg).unwrap().beamformer.power();
    let b = algorithm1(&q, &ch, &scaled, 1.5, None, &cfg).unwrap().beamformer.power();
    assert!((b / a - 4.0).abs() < 1e-6, "{}", b / a);
}
