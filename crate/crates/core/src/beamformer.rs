//! Transmit beamformer for a fixed reflection matrix.
//!
//! With `W = w wᴴ` the secrecy constraint `R_B − R_E ≥ R̄` becomes the
//! linear matrix inequality
//!
//! ```text
//! tr(h_B h_Bᴴ W)/d_B − Γ·tr(h_E h_Eᴴ W)/d_E ≥ Γ − 1,   Γ = e^R̄,
//! ```
//!
//! which is exact: `(1 + a)/(1 + b) ≥ Γ ⇔ a − Γ b ≥ Γ − 1`. The rank-one
//! requirement is handled by the penalty `tr W − λ_max(W)` linearized at the
//! previous iterate and the iteration is started from the semidefinite
//! relaxation optimum.

use thiserror::Error;

use crate::channel::{ChannelSet, NoiseConfig};
use crate::rates::{ris_power, Beamformer, ReflectMatrix};
use crate::sdp::{self, max_eig_pair, HermOp, SdpProblem, SdpStatus, Sense};
use crate::{CMatrix, CVector, Complex64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeamformerError {
    #[error("secrecy target unreachable for this reflection matrix")]
    Infeasible,
    #[error("RIS noise alone exhausts the amplification budget")]
    BudgetExhausted,
    #[error("penalty iteration did not reach a rank-one point in {0} iterations")]
    MaxIter(usize),
    #[error("SDP solver failed: {0:?}")]
    Solver(SdpStatus),
}

/// `h_B`, `h_E` and the noise-plus-reflected-noise denominators.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannels {
    pub h_b: CVector,
    pub h_e: CVector,
    pub denom_b: f64,
    pub denom_e: f64,
}

/// Lifted beamformer `W` together with its rank-one residual.
#[derive(Debug, Clone)]
pub struct BeamformerLift {
    pub w: CMatrix,
    pub rank_residual: f64,
}

impl BeamformerLift {
    pub fn new(w: CMatrix) -> Self {
        let rank_residual = rank_one_residual(&w);
        Self { w, rank_residual }
    }

    pub fn from_vector(w: &CVector) -> Self {
        Self::new(sdp::outer(w))
    }

    pub fn trace(&self) -> f64 {
        self.w.trace().re
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamformerConfig {
    /// Penalty factor `η`.
    pub eta: f64,
    /// Rank-one tolerance, relative to `tr W`.
    pub eps1: f64,
    pub max_iter: usize,
    pub sdp_tol: f64,
}

impl Default for BeamformerConfig {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            eps1: 1e-3,
            max_iter: 50,
            sdp_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BeamformerOutcome {
    pub beamformer: Beamformer,
    pub lift: BeamformerLift,
    /// Penalized objective after each penalty subproblem.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

pub fn effective_channels(q: &ReflectMatrix, ch: &ChannelSet, noise: &NoiseConfig) -> EffectiveChannels {
    let eff = |h_a: &CVector, h_i: &CVector, sigma2: f64| {
        let weighted = CVector::from_fn(h_i.len(), |n, _| q.q[n].conj() * h_i[n]);
        let h = h_a + ch.h_ai.adjoint() * weighted;
        let reflected: f64 = h_i.iter().zip(q.q.iter()).map(|(h, c)| h.norm_sqr() * c.norm_sqr()).sum();
        (h, sigma2 + reflected * noise.sigma2_i)
    };
    let (h_b, denom_b) = eff(&ch.h_ab, &ch.h_ib, noise.sigma2_b);
    let (h_e, denom_e) = eff(&ch.h_ae, &ch.h_ie, noise.sigma2_e);
    EffectiveChannels {
        h_b,
        h_e,
        denom_b,
        denom_e,
    }
}

/// `tr W − λ_max(W)`, clamped at zero against rounding.
pub fn rank_one_residual(w: &CMatrix) -> f64 {
    let (l, _) = max_eig_pair(w);
    (w.trace().re - l).max(0.0)
}

/// Transmit-side budget of the RIS power constraint,
/// `P_I − ‖Q‖_F² σ_I²`, and the operator `H_AIᴴ Qᴴ Q H_AI`.
fn budget_operator(q: &ReflectMatrix, ch: &ChannelSet, noise: &NoiseConfig, p_i: f64) -> (CMatrix, f64) {
    let amp = CMatrix::from_diagonal(&CVector::from_fn(q.q.len(), |n, _| Complex64::new(q.q[n].norm_sqr(), 0.0)));
    let op = ch.h_ai.adjoint() * amp * &ch.h_ai;
    (op, p_i - q.frobenius_sq() * noise.sigma2_i)
}

/// Shared constraint data of the relaxed and penalized problems, expressed in
/// the scaled variable `Ŵ = W / scale`.
struct Scaled {
    m: usize,
    scale: f64,
    secrecy: HermOp,
    budget: Option<(HermOp, f64)>,
}

const BUDGET_MARGIN: f64 = 1e-6;

fn scaled_constraints(
    eff: &EffectiveChannels,
    q: &ReflectMatrix,
    ch: &ChannelSet,
    noise: &NoiseConfig,
    rbar: f64,
    p_i: Option<f64>,
) -> Result<Scaled, BeamformerError> {
    let m = eff.h_b.len();
    let gamma = rbar.exp();
    let gain_b = eff.h_b.norm_squared() / eff.denom_b;
    if !(gain_b > 0.0) {
        return Err(BeamformerError::Infeasible);
    }
    let scale = (gamma - 1.0) / gain_b;
    // Secrecy LMI divided by Γ − 1 after substituting W = scale·Ŵ.
    let secrecy = HermOp::rank_one(1.0 / eff.h_b.norm_squared(), eff.h_b.clone()).plus(
        HermOp::rank_one(-gamma * scale / (eff.denom_e * (gamma - 1.0)), eff.h_e.clone()),
        m,
    );
    let budget = match p_i {
        None => None,
        Some(p_i) => {
            let (op, room) = budget_operator(q, ch, noise, p_i);
            if !(room > 0.0) {
                return Err(BeamformerError::BudgetExhausted);
            }
            let room = room * (1.0 - BUDGET_MARGIN);
            Some((HermOp::dense(op * Complex64::new(scale / room, 0.0)), 1.0))
        }
    };
    Ok(Scaled {
        m,
        scale,
        secrecy,
        budget,
    })
}

fn with_constraints(mut p: SdpProblem, s: &Scaled) -> SdpProblem {
    p = p.constrain(s.secrecy.clone(), vec![], Sense::Ge, 1.0);
    if let Some((op, rhs)) = &s.budget {
        p = p.constrain(op.clone(), vec![], Sense::Le, *rhs);
    }
    p
}

fn run(p: &SdpProblem, tol: f64) -> Result<CMatrix, BeamformerError> {
    let sol = sdp::solve(p, tol).map_err(|_| BeamformerError::Solver(SdpStatus::Infeasible))?;
    match sol.status {
        SdpStatus::Optimal => Ok(sol.x),
        SdpStatus::Infeasible => Err(BeamformerError::Infeasible),
        other => Err(BeamformerError::Solver(other)),
    }
}

/// Largest eigenvalue of the secrecy operator; nonpositive means no beam can
/// reach any positive secrecy rate.
fn secrecy_gain(eff: &EffectiveChannels, rbar: f64) -> (f64, CVector) {
    let gamma = rbar.exp();
    let a = sdp::outer(&eff.h_b) * Complex64::new(1.0 / eff.denom_b, 0.0)
        - sdp::outer(&eff.h_e) * Complex64::new(gamma / eff.denom_e, 0.0);
    max_eig_pair(&a)
}

/// Semidefinite relaxation: minimize `tr W` under the secrecy LMI and, when
/// given, the RIS power budget.
pub fn solve_p3(
    eff: &EffectiveChannels,
    q: &ReflectMatrix,
    ch: &ChannelSet,
    noise: &NoiseConfig,
    rbar: f64,
    p_i: Option<f64>,
    sdp_tol: f64,
) -> Result<BeamformerLift, BeamformerError> {
    assert!(rbar > 0.0, "secrecy target must be positive");
    let (lmax, v) = secrecy_gain(eff, rbar);
    if !(lmax > 0.0) {
        return Err(BeamformerError::Infeasible);
    }
    let gamma = rbar.exp();
    if p_i.is_none() {
        // Single constraint: the relaxation is solved by the top eigenvector.
        let w = &v * Complex64::new(((gamma - 1.0) / lmax).sqrt(), 0.0);
        return Ok(BeamformerLift::from_vector(&w));
    }
    let s = scaled_constraints(eff, q, ch, noise, rbar, p_i)?;
    let p = with_constraints(SdpProblem::new(s.m, 0).minimize(HermOp::identity(s.m), vec![]), &s);
    let w_hat = run(&p, sdp_tol)?;
    Ok(BeamformerLift::new(w_hat * Complex64::new(s.scale, 0.0)))
}

/// Penalized objective `tr W + (tr W − λ_max(W_t) − ν_tᴴ (W − W_t) ν_t)/η`.
pub fn p5_objective(w: &CMatrix, w_t: &CMatrix, eta: f64) -> f64 {
    let (l_t, v_t) = max_eig_pair(w_t);
    let lin = v_t.dotc(&((w - w_t) * &v_t)).re;
    w.trace().re + (w.trace().re - l_t - lin) / eta
}

/// One penalty subproblem around `w_t`.
#[allow(clippy::too_many_arguments)]
pub fn solve_p5(
    eff: &EffectiveChannels,
    q: &ReflectMatrix,
    w_t: &BeamformerLift,
    eta: f64,
    rbar: f64,
    p_i: Option<f64>,
    ch: &ChannelSet,
    noise: &NoiseConfig,
    sdp_tol: f64,
) -> Result<BeamformerLift, BeamformerError> {
    assert!(eta > 0.0, "penalty factor must be positive");
    let s = scaled_constraints(eff, q, ch, noise, rbar, p_i)?;
    let (_, v_t) = max_eig_pair(&w_t.w);
    let objective = HermOp::identity(s.m)
        .scaled(1.0 + 1.0 / eta)
        .plus(HermOp::rank_one(-1.0 / eta, v_t), s.m);
    let p = with_constraints(SdpProblem::new(s.m, 0).minimize(objective, vec![]), &s);
    let w_hat = run(&p, sdp_tol)?;
    Ok(BeamformerLift::new(w_hat * Complex64::new(s.scale, 0.0)))
}

/// Scales `w` so the secrecy constraint holds with equality.
fn meet_target(w: &CVector, eff: &EffectiveChannels, rbar: f64) -> Option<CVector> {
    let gamma = rbar.exp();
    let a = eff.h_b.dotc(w).norm_sqr() / eff.denom_b;
    let b = eff.h_e.dotc(w).norm_sqr() / eff.denom_e;
    let margin = a - gamma * b;
    if !(margin > 0.0) {
        return None;
    }
    let alpha = ((gamma - 1.0) / margin).sqrt();
    Some(w * Complex64::new(alpha, 0.0))
}

/// Penalty-based iteration for a rank-one transmit beamformer.
///
/// `p_i = None` drops the RIS power budget (passive surfaces). A target of
/// zero is met by the zero beam.
pub fn algorithm1(
    q: &ReflectMatrix,
    ch: &ChannelSet,
    noise: &NoiseConfig,
    rbar: f64,
    p_i: Option<f64>,
    cfg: &BeamformerConfig,
) -> Result<BeamformerOutcome, BeamformerError> {
    let m = ch.num_tx_antennas();
    if rbar <= 0.0 {
        return Ok(BeamformerOutcome {
            beamformer: Beamformer::zeros(m),
            lift: BeamformerLift::new(CMatrix::zeros(m, m)),
            objective_trace: Vec::new(),
            iterations: 0,
        });
    }
    let eff = effective_channels(q, ch, noise);
    let mut lift = solve_p3(&eff, q, ch, noise, rbar, p_i, cfg.sdp_tol)?;
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        if iterations >= cfg.max_iter {
            return Err(BeamformerError::MaxIter(iterations));
        }
        let next = solve_p5(&eff, q, &lift, cfg.eta, rbar, p_i, ch, noise, cfg.sdp_tol)?;
        trace.push(p5_objective(&next.w, &lift.w, cfg.eta));
        lift = next;
        iterations += 1;
        if lift.rank_residual < cfg.eps1 * lift.trace() {
            break;
        }
    }
    let (l, v) = max_eig_pair(&lift.w);
    let w = &v * Complex64::new(l.max(0.0).sqrt(), 0.0);
    let w = meet_target(&w, &eff, rbar).ok_or(BeamformerError::Infeasible)?;
    let beamformer = Beamformer::new(w);
    if let Some(p_i) = p_i {
        // Rescaling moves the beam by O(rank residual); reject a budget breach.
        if ris_power(&beamformer, q, ch, noise) > p_i * (1.0 + 1e-9) {
            return Err(BeamformerError::Infeasible);
        }
    }
    Ok(BeamformerOutcome {
        beamformer,
        lift,
        objective_trace: trace,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_channels, ChannelParams, NodeLayout};
    use crate::rates::{rate_bob, secrecy_rate};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn paper_instance(seed: u64) -> (ChannelSet, NoiseConfig) {
        let params = ChannelParams {
            seed,
            ..Default::default()
        };
        let ch = generate_channels(&NodeLayout::reference(), &params).unwrap();
        (ch, NoiseConfig::from_dbm(-90.0, -90.0, -90.0))
    }

    fn scalar_instance(hab: Complex64, hae: Complex64) -> (ChannelSet, NoiseConfig) {
        let ch = ChannelSet {
            h_ab: CVector::from_vec(vec![hab]),
            h_ae: CVector::from_vec(vec![hae]),
            h_ai: CMatrix::from_element(1, 1, c(0.5, 0.5)),
            h_ib: CVector::from_vec(vec![c(0.3, -0.1)]),
            h_ie: CVector::from_vec(vec![c(0.1, 0.2)]),
        };
        (
            ch,
            NoiseConfig {
                sigma2_b: 0.1,
                sigma2_e: 0.2,
                sigma2_i: 0.05,
            },
        )
    }

    #[test]
    fn effective_channels_without_reflection() {
        let (ch, noise) = paper_instance(1);
        let eff = effective_channels(&ReflectMatrix::zeros(8), &ch, &noise);
        assert_eq!(eff.h_b, ch.h_ab);
        assert_eq!(eff.h_e, ch.h_ae);
        assert_eq!(eff.denom_b, noise.sigma2_b);
        assert_eq!(eff.denom_e, noise.sigma2_e);
    }

    #[test]
    fn effective_channels_scalar_case() {
        let (ch, noise) = scalar_instance(c(1.0, 0.5), c(0.2, -0.1));
        let q = ReflectMatrix::new(CVector::from_vec(vec![Complex64::from_polar(1.5, 0.3)]));
        let eff = effective_channels(&q, &ch, &noise);
        // h_B = h_AB + conj(H_AI)·conj(q)·h_IB, written out for N = M = 1.
        let qv = Complex64::from_polar(1.5, 0.3);
        let hb = c(1.0, 0.5) + c(0.5, 0.5).conj() * qv.conj() * c(0.3, -0.1);
        assert!((eff.h_b[0] - hb).norm() < 1e-12);
        assert!((eff.denom_b - (0.1 + 0.1 * 2.25 * 0.05)).abs() < 1e-12);
        assert!((eff.denom_e - (0.2 + 0.05 * 2.25 * 0.05)).abs() < 1e-12);
        let w = Beamformer::new(CVector::from_vec(vec![c(0.7, -0.4)]));
        let direct = rate_bob(&w, &q, &ch, &noise);
        let via_eff = (eff.h_b.dotc(&w.w).norm_sqr() / eff.denom_b).ln_1p();
        assert!((direct - via_eff).abs() < 1e-12);
    }

    #[test]
    fn effective_channels_ignore_reflection_without_ris_noise() {
        let (ch, noise) = paper_instance(2);
        let noise = noise.without_ris_noise();
        let q = ReflectMatrix::new(CVector::from_element(8, c(3.0, -1.0)));
        let eff = effective_channels(&q, &ch, &noise);
        assert_eq!(eff.denom_b, noise.sigma2_b);
        assert_eq!(eff.denom_e, noise.sigma2_e);
    }

    #[test]
    fn rank_one_residual_examples() {
        let v = CVector::from_vec(vec![c(1.0, 2.0), c(-0.5, 0.1), c(0.0, 1.0)]);
        assert!(rank_one_residual(&sdp::outer(&v)) < 1e-12);
        assert!((rank_one_residual(&CMatrix::identity(2, 2)) - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = CMatrix::from_fn(4, 2, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let w = &g * g.adjoint();
        let ev = sdp::hermitian_eigenvalues(&w);
        let want = ev.iter().sum::<f64>() - ev[3];
        assert!((rank_one_residual(&w) - want).abs() < 1e-10);
    }

    #[test]
    fn scalar_closed_form() {
        let (ch, noise) = scalar_instance(c(1.0, 0.5), c(0.2, -0.1));
        let q = ReflectMatrix::zeros(1);
        let rbar = 0.8;
        let out = algorithm1(&q, &ch, &noise, rbar, None, &BeamformerConfig::default()).unwrap();
        let gain = 1.25 / 0.1 - 0.05 / 0.2;
        // With a single antenna the exact constraint gives
        // |w|² = (Γ − 1)/(g_B − Γ g_E).
        let gamma = rbar.exp();
        let exact = (gamma - 1.0) / (1.25 / 0.1 - gamma * 0.05 / 0.2);
        assert!(gain > 0.0);
        assert!((out.beamformer.power() - exact).abs() < 1e-6 * exact);
        assert!((secrecy_rate(&out.beamformer, &q, &ch, &noise) - rbar).abs() < 1e-9);
    }

    #[test]
    fn identical_legs_are_infeasible() {
        let (ch, noise) = scalar_instance(c(1.0, 0.5), c(1.0, 0.5));
        let noise = NoiseConfig {
            sigma2_e: noise.sigma2_b,
            ..noise
        };
        let ch = ChannelSet {
            h_ie: ch.h_ib.clone(),
            ..ch
        };
        let q = ReflectMatrix::identity(1);
        let err = algorithm1(&q, &ch, &noise, 0.5, Some(1.0), &BeamformerConfig::default()).unwrap_err();
        assert_eq!(err, BeamformerError::Infeasible);
    }

    #[test]
    fn zero_target_gives_zero_beam() {
        let (ch, noise) = paper_instance(3);
        let out = algorithm1(&ReflectMatrix::identity(8), &ch, &noise, 0.0, Some(0.01), &Default::default()).unwrap();
        assert_eq!(out.beamformer.power(), 0.0);
    }

    #[test]
    fn paper_instance_meets_constraints() {
        let (ch, noise) = paper_instance(4);
        let q = ReflectMatrix::identity(8);
        let rbar = 2.0;
        let p_i = 0.01;
        let out = algorithm1(&q, &ch, &noise, rbar, Some(p_i), &BeamformerConfig::default()).unwrap();
        let rs = secrecy_rate(&out.beamformer, &q, &ch, &noise);
        assert!(rs >= rbar - 1e-6, "{rs}");
        assert!(ris_power(&out.beamformer, &q, &ch, &noise) <= p_i + 1e-9);
        assert!(out.lift.rank_residual < 1e-3 * out.lift.trace());
        for pair in out.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-6));
        }
    }

    #[test]
    fn penalty_step_is_tight_at_rank_one_optimum() {
        let (ch, noise) = paper_instance(5);
        let q = ReflectMatrix::identity(8);
        let eff = effective_channels(&q, &ch, &noise);
        let p3 = solve_p3(&eff, &q, &ch, &noise, 1.0, None, 1e-9).unwrap();
        // Without a budget the relaxation is rank one, so the penalized step
        // returns to it.
        assert!(p3.rank_residual < 1e-12 * p3.trace());
        let p5 = solve_p5(&eff, &q, &p3, 1e-3, 1.0, None, &ch, &noise, 1e-9).unwrap();
        let obj = p5_objective(&p5.w, &p3.w, 1e-3);
        assert!((obj - p3.trace()).abs() < 1e-6 * p3.trace(), "{obj} vs {}", p3.trace());
    }

    #[test]
    fn surrogate_is_tight_at_anchor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = CMatrix::from_fn(3, 3, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let w = &g * g.adjoint();
        let eta = 0.1;
        let want = w.trace().re + (w.trace().re - max_eig_pair(&w).0) / eta;
        assert!((p5_objective(&w, &w, eta) - want).abs() < 1e-10);
    }
}
