//! Independent oracles and instance generators shared by the integration
//! tests. Nothing here calls the optimizers; they only use `rates`.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use ris_secrecy::channel::{ChannelSet, NoiseConfig};
use ris_secrecy::rates::{ris_power, secrecy_rate, Beamformer, ReflectMatrix};
use ris_secrecy::{CMatrix, CVector, Complex64};

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn cn(rng: &mut ChaCha20Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) / 2f64.sqrt()
}

pub fn cvec(rng: &mut ChaCha20Rng, n: usize, scale: f64) -> CVector {
    CVector::from_fn(n, |_, _| cn(rng) * scale)
}

pub fn cmat(rng: &mut ChaCha20Rng, r: usize, c: usize, scale: f64) -> CMatrix {
    CMatrix::from_fn(r, c, |_, _| cn(rng) * scale)
}

/// `B Bᴴ` for a random `n × k` factor `B`.
pub fn random_psd(rng: &mut ChaCha20Rng, n: usize, k: usize) -> CMatrix {
    let b = cmat(rng, n, k, 1.0);
    &b * b.adjoint()
}

/// Channels with unit-scale entries and noise of order one, so that every
/// quantity is well away from the floating point floor.
pub fn unit_instance(rng: &mut ChaCha20Rng, m: usize, n: usize) -> (ChannelSet, NoiseConfig) {
    let ch = ChannelSet {
        h_ab: cvec(rng, m, 1.0),
        h_ae: cvec(rng, m, 0.5),
        h_ai: cmat(rng, n, m, 1.0),
        h_ib: cvec(rng, n, 1.0),
        h_ie: cvec(rng, n, 0.5),
    };
    let noise = NoiseConfig {
        sigma2_b: 0.1,
        sigma2_e: 0.1,
        sigma2_i: 0.05,
    };
    (ch, noise)
}

/// SNR gains `|h_xᴴ w|²/(σ_x² + σ_I² Σ|h_I,n|²|q_n|²)` per unit `|w|²` for a
/// single transmit antenna.
pub fn scalar_gains(ch: &ChannelSet, q: &ReflectMatrix, noise: &NoiseConfig) -> (f64, f64) {
    assert_eq!(ch.h_ab.len(), 1);
    let gain = |h_a: &CVector, h_i: &CVector, s2: f64| {
        let mut amp = h_a[0].conj();
        let mut refl = 0.0;
        for k in 0..q.q.len() {
            amp += h_i[k].conj() * q.q[k] * ch.h_ai[(k, 0)];
            refl += h_i[k].norm_sqr() * q.q[k].norm_sqr();
        }
        amp.norm_sqr() / (s2 + noise.sigma2_i * refl)
    };
    (
        gain(&ch.h_ab, &ch.h_ib, noise.sigma2_b),
        gain(&ch.h_ae, &ch.h_ie, noise.sigma2_e),
    )
}

/// Smallest `|w|²` meeting `ln(1+g_B p) − ln(1+g_E p) ≥ rbar` for one
/// antenna, or `None` when unreachable.
pub fn scalar_min_power(g_b: f64, g_e: f64, rbar: f64) -> Option<f64> {
    let gamma = rbar.exp();
    let margin = g_b - gamma * g_e;
    (margin > 0.0).then(|| (gamma - 1.0) / margin)
}

/// Rescales `w` to the least power meeting the secrecy target exactly, using
/// the quadratic forms of the rate expressions. `None` when no scaling helps.
pub fn rescale_to_target(w: &CVector, ch: &ChannelSet, q: &ReflectMatrix, noise: &NoiseConfig, rbar: f64) -> Option<CVector> {
    let norm = w.norm();
    if norm == 0.0 {
        return None;
    }
    let unit = w / Complex64::new(norm, 0.0);
    // SNRs are quadratic in the scale: snr(α u) = α² snr(u).
    let b = Beamformer::new(unit.clone());
    let snr = |r: f64| r.exp_m1();
    let sb = snr(ris_secrecy::rates::rate_bob(&b, q, ch, noise));
    let se = snr(ris_secrecy::rates::rate_eve(&b, q, ch, noise));
    let p = scalar_min_power(sb, se, rbar)?;
    Some(unit * Complex64::new(p.sqrt(), 0.0))
}

/// Gaussian randomization around a relaxed solution `w_sdr`: draws
/// `w ~ CN(0, W)`, rescales each draw to the secrecy target and keeps the
/// cheapest one inside the RIS budget.
pub fn randomization_oracle(
    w_sdr: &CMatrix,
    ch: &ChannelSet,
    q: &ReflectMatrix,
    noise: &NoiseConfig,
    rbar: f64,
    p_i: Option<f64>,
    draws: usize,
    seed: u64,
) -> Option<f64> {
    let m = w_sdr.nrows();
    let eig = nalgebra::SymmetricEigen::new(w_sdr.clone());
    let root = CMatrix::from_fn(m, m, |i, j| eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt());
    let mut r = rng(seed);
    let mut best: Option<f64> = None;
    let mut consider = |w: CVector| {
        if let Some(w) = rescale_to_target(&w, ch, q, noise, rbar) {
            let b = Beamformer::new(w);
            let ok = p_i.is_none_or(|p| ris_power(&b, q, ch, noise) <= p);
            if ok && secrecy_rate(&b, q, ch, noise) >= rbar - 1e-9 {
                let p = b.power();
                best = Some(best.map_or(p, |x: f64| x.min(p)));
            }
        }
    };
    let top = eig.eigenvalues.imax();
    consider(eig.eigenvectors.column(top).into_owned());
    for _ in 0..draws {
        consider(&root * cvec(&mut r, m, 1.0));
    }
    best
}

/// Grid maximum of the secrecy rate over one reflection coefficient
/// `β e^{jθ}`, `β ∈ [0, β_max]` (or `β = 1` when `beta_max` is `None`),
/// followed by a local refinement around the best cell.
pub fn single_element_max_secrecy(w: &Beamformer, ch: &ChannelSet, noise: &NoiseConfig, beta_max: Option<f64>) -> f64 {
    let eval = |beta: f64, theta: f64| {
        let q = ReflectMatrix::new(CVector::from_element(1, Complex64::from_polar(beta, theta)));
        secrecy_rate(w, &q, ch, noise)
    };
    let (b_hi, nb) = match beta_max {
        Some(b) => (b, 400),
        None => (1.0, 1),
    };
    let nt = 720;
    let beta_at = |i: usize, lo: f64, hi: f64, n: usize| if n == 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
    let tau = std::f64::consts::TAU;
    let (mut best, mut bi, mut ti) = (f64::NEG_INFINITY, 0, 0);
    for i in 0..nb {
        for j in 0..nt {
            let v = eval(beta_at(i, 0.0, b_hi, nb), tau * j as f64 / nt as f64);
            if v > best {
                (best, bi, ti) = (v, i, j);
            }
        }
    }
    let db = if nb == 1 { 0.0 } else { b_hi / (nb - 1) as f64 };
    let (b0, t0) = (beta_at(bi, 0.0, b_hi, nb), tau * ti as f64 / nt as f64);
    let dt = tau / nt as f64;
    for i in 0..=100 {
        for j in 0..=100 {
            let beta = if nb == 1 { b_hi } else { (b0 - db + 2.0 * db * i as f64 / 100.0).clamp(0.0, b_hi) };
            let theta = t0 - dt + 2.0 * dt * j as f64 / 100.0;
            best = best.max(eval(beta, theta));
        }
    }
    best
}

/// Largest amplitude of a single active element that keeps the RIS power
/// within `p_i` for the beam `w`.
pub fn single_element_beta_max(w: &Beamformer, ch: &ChannelSet, noise: &NoiseConfig, p_i: f64) -> f64 {
    let hw = (&ch.h_ai * &w.w)[0].norm_sqr();
    (p_i / (hw + noise.sigma2_i)).sqrt()
}

/// Brute force for `M = N = 1`: a `grid × grid` sweep over `(β, θ)` with the
/// closed-form least `|w|²` at each point, then a finer sweep around the
/// best cell. Returns `(transmit power, total power)` of the minimizer.
pub fn joint_brute_force(ch: &ChannelSet, noise: &NoiseConfig, rbar: f64, p_i: Option<f64>, grid: usize) -> Option<(f64, f64)> {
    let tau = std::f64::consts::TAU;
    // Largest β with the budget met at zero transmit power.
    let beta_cap = match p_i {
        Some(p) => (p / noise.sigma2_i).sqrt(),
        None => 1.0,
    };
    let hai = ch.h_ai[(0, 0)].norm_sqr();
    let eval = |beta: f64, theta: f64| -> Option<(f64, f64)> {
        let q = ReflectMatrix::new(CVector::from_element(1, Complex64::from_polar(beta, theta)));
        let (gb, ge) = scalar_gains(ch, &q, noise);
        let p = scalar_min_power(gb, ge, rbar)?;
        let ris = match p_i {
            Some(budget) => {
                let r = beta * beta * (hai * p + noise.sigma2_i);
                if r > budget {
                    return None;
                }
                r
            }
            None => 0.0,
        };
        Some((p, p + ris))
    };
    let sweep = |b_lo: f64, b_hi: f64, t_lo: f64, t_hi: f64, n: usize| {
        let mut best: Option<(f64, f64, f64, f64)> = None;
        let nb = if p_i.is_some() { n } else { 1 };
        for i in 0..nb {
            let beta = if nb == 1 { 1.0 } else { b_lo + (b_hi - b_lo) * i as f64 / (nb - 1) as f64 };
            for j in 0..n {
                let theta = t_lo + (t_hi - t_lo) * j as f64 / n as f64;
                if let Some((p, tot)) = eval(beta, theta) {
                    if best.is_none_or(|b| p < b.0) {
                        best = Some((p, tot, beta, theta));
                    }
                }
            }
        }
        best
    };
    let (_, _, b0, t0) = sweep(0.0, beta_cap, 0.0, tau, grid)?;
    let db = 2.0 * beta_cap / grid as f64;
    let dt = 2.0 * tau / grid as f64;
    let (p, tot, _, _) = sweep((b0 - db).max(0.0), (b0 + db).min(beta_cap), t0 - dt, t0 + dt, grid)?;
    Some((p, tot))
}

/// Fails with a message naming the first violated check.
pub fn recheck(
    w: &Beamformer,
    q: &ReflectMatrix,
    ch: &ChannelSet,
    noise: &NoiseConfig,
    rbar: f64,
    p_i: Option<f64>,
) -> Result<(), String> {
    let rs = secrecy_rate(w, q, ch, noise);
    if rs < rbar - 1e-3 {
        return Err(format!("secrecy {rs} below target {rbar}"));
    }
    if let Some(p) = p_i {
        let r = ris_power(w, q, ch, noise);
        if r > p + 1e-9 {
            return Err(format!("RIS power {r:e} above budget {p:e}"));
        }
    }
    Ok(())
}

/// Transmit power never rises by more than `1e-9` W between iterations.
pub fn monotone(powers: &[f64]) -> bool {
    powers.windows(2).all(|w| w[1] <= w[0] + 1e-9)
}
