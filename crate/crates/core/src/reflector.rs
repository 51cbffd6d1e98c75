//! Reflection coefficients for a fixed beamformer.
//!
//! With `u = conj(q)` (so that `h_Iᴴ Q H_AI w = uᴴ G w`) the lifted variable
//! is `U = [u; 1][u; 1]ᴴ` and each rate is a log-ratio of traces,
//! `R̃_i = ln tr(G_Ai U) − ln tr(G_Ii U)`. The concave parts are kept exact and
//! the two subtracted logs are linearized at the previous iterate, giving a
//! convex subproblem with a log constraint on two trace scalars. The rank-one
//! requirement is handled by the linearized `tr U − λ_max(U)` penalty, with a
//! penalty weight that tightens over the iterations.

use thiserror::Error;

use crate::channel::{ChannelSet, NoiseConfig};
use crate::rates::{ris_power, secrecy_rate, Beamformer, ReflectMatrix};
use crate::sdp::{self, max_eig_pair, HermOp, SdpProblem, SdpStatus, Sense, SolverOptions};
use crate::{CMatrix, CVector, Complex64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReflectorError {
    #[error("secrecy target unreachable for this beamformer")]
    Infeasible,
    #[error("non-positive trace in a lifted rate")]
    Domain,
    #[error("SDP solver failed: {0:?}")]
    Solver(SdpStatus),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Bob,
    Eve,
}

/// Lifted reflection matrix and secrecy slack.
#[derive(Debug, Clone)]
pub struct LiftedReflect {
    pub u: CMatrix,
    pub delta: f64,
}

impl LiftedReflect {
    /// Rank-one lift of reflection coefficients `q`.
    pub fn from_reflect(q: &ReflectMatrix) -> Self {
        Self {
            u: sdp::outer(&lift_vector(q)),
            delta: 0.0,
        }
    }

    pub fn rank_residual(&self) -> f64 {
        (self.u.trace().re - max_eig_pair(&self.u).0).max(0.0)
    }

    /// Rank-one read-out: the top eigenvector normalized to a unit last entry.
    pub fn recover(&self) -> ReflectMatrix {
        let n = self.u.nrows() - 1;
        let (_, v) = max_eig_pair(&self.u);
        let last = v[n];
        if last.norm() < 1e-300 {
            return ReflectMatrix::zeros(n);
        }
        ReflectMatrix::new(CVector::from_fn(n, |i, _| (v[i] / last).conj()))
    }
}

/// `[conj(q); 1]`.
pub fn lift_vector(q: &ReflectMatrix) -> CVector {
    let n = q.q.len();
    CVector::from_fn(n + 1, |i, _| if i < n { q.q[i].conj() } else { Complex64::new(1.0, 0.0) })
}

/// Block matrices of the lifted rate and power expressions for a fixed `w`.
#[derive(Debug, Clone)]
pub struct GMatrices {
    /// `diag(h_IBᴴ) H_AI`.
    pub g_b: CMatrix,
    /// `diag(h_IEᴴ) H_AI`.
    pub g_e: CMatrix,
    pub g_ib: CMatrix,
    pub g_ie: CMatrix,
    pub g_ab: CMatrix,
    pub g_ae: CMatrix,
    /// RIS power operator.
    pub g: CMatrix,
    pub mu_b: f64,
    pub mu_e: f64,
    pub gbar_b: CMatrix,
    pub gbar_e: CMatrix,
    ops: StructuredOps,
}

/// The same matrices as rank-one plus diagonal terms.
#[derive(Debug, Clone)]
struct StructuredOps {
    z_b: CVector,
    z_e: CVector,
    /// Diagonals of `G_IB`, `G_IE` and `G`.
    d_ib: Vec<f64>,
    d_ie: Vec<f64>,
    d_g: Vec<f64>,
}

impl StructuredOps {
    fn interference(&self, side: Side) -> HermOp {
        HermOp::diagonal(match side {
            Side::Bob => &self.d_ib,
            Side::Eve => &self.d_ie,
        })
    }

    fn received(&self, side: Side) -> HermOp {
        let (z, n) = match side {
            Side::Bob => (&self.z_b, self.d_ib.len()),
            Side::Eve => (&self.z_e, self.d_ie.len()),
        };
        HermOp::rank_one(1.0, z.clone()).plus(self.interference(side), n)
    }

    fn power(&self) -> HermOp {
        HermOp::diagonal(&self.d_g)
    }
}

pub fn build_g_matrices(w: &Beamformer, ch: &ChannelSet, noise: &NoiseConfig) -> GMatrices {
    let n = ch.num_ris_elements();
    let s_i = noise.sigma2_i;
    let hw = &ch.h_ai * &w.w;
    let g_of = |h_i: &CVector| CMatrix::from_fn(n, ch.num_tx_antennas(), |r, c| h_i[r].conj() * ch.h_ai[(r, c)]);
    let g_b = g_of(&ch.h_ib);
    let g_e = g_of(&ch.h_ie);
    let gbar = |h_i: &CVector| {
        CMatrix::from_diagonal(&CVector::from_fn(n, |r, _| Complex64::new(s_i * h_i[r].norm_sqr(), 0.0)))
    };
    let gbar_b = gbar(&ch.h_ib);
    let gbar_e = gbar(&ch.h_ie);
    let z = |g: &CMatrix, h_a: &CVector| {
        let gw = g * &w.w;
        let tail = h_a.dotc(&w.w);
        CVector::from_fn(n + 1, |r, _| if r < n { gw[r] } else { tail })
    };
    let z_b = z(&g_b, &ch.h_ab);
    let z_e = z(&g_e, &ch.h_ae);
    let mu_b = noise.sigma2_b + z_b[n].norm_sqr();
    let mu_e = noise.sigma2_e + z_e[n].norm_sqr();
    let d_i = |h_i: &CVector, sigma2: f64| -> Vec<f64> {
        (0..=n).map(|r| if r < n { s_i * h_i[r].norm_sqr() } else { sigma2 }).collect()
    };
    let ops = StructuredOps {
        d_ib: d_i(&ch.h_ib, noise.sigma2_b),
        d_ie: d_i(&ch.h_ie, noise.sigma2_e),
        d_g: (0..=n).map(|r| if r < n { hw[r].norm_sqr() + s_i } else { 0.0 }).collect(),
        z_b,
        z_e,
    };
    let m1 = n + 1;
    GMatrices {
        g_ib: ops.interference(Side::Bob).to_dense(m1),
        g_ie: ops.interference(Side::Eve).to_dense(m1),
        g_ab: ops.received(Side::Bob).to_dense(m1),
        g_ae: ops.received(Side::Eve).to_dense(m1),
        g: ops.power().to_dense(m1),
        g_b,
        g_e,
        mu_b,
        mu_e,
        gbar_b,
        gbar_e,
        ops,
    }
}

fn tr(a: &CMatrix, u: &CMatrix) -> f64 {
    HermOp::Dense(a.clone()).inner(u)
}

fn positive(v: f64) -> Result<f64, ReflectorError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(ReflectorError::Domain)
    }
}

/// `ln tr(G_Ai U) − ln tr(G_Ii U)`.
pub fn lifted_rate(u: &CMatrix, g: &GMatrices, side: Side) -> Result<f64, ReflectorError> {
    let (ga, gi) = match side {
        Side::Bob => (&g.g_ab, &g.g_ib),
        Side::Eve => (&g.g_ae, &g.g_ie),
    };
    Ok(positive(tr(ga, u))?.ln() - positive(tr(gi, u))?.ln())
}

/// `R̃_B − R̃_E`.
pub fn lifted_secrecy(u: &CMatrix, g: &GMatrices) -> Result<f64, ReflectorError> {
    Ok(lifted_rate(u, g, Side::Bob)? - lifted_rate(u, g, Side::Eve)?)
}

/// Lower bound of the lifted secrecy rate around `u_t`: the two subtracted
/// logs are replaced by their tangents at `u_t`.
pub fn lemma2_surrogate(u: &CMatrix, u_t: &CMatrix, g: &GMatrices) -> Result<f64, ReflectorError> {
    let t_ib = positive(tr(&g.g_ib, u_t))?;
    let t_ae = positive(tr(&g.g_ae, u_t))?;
    let diff = u - u_t;
    Ok(positive(tr(&g.g_ab, u))?.ln() + positive(tr(&g.g_ie, u))?.ln()
        - t_ib.ln()
        - t_ae.ln()
        - tr(&g.g_ib, &diff) / t_ib
        - tr(&g.g_ae, &diff) / t_ae)
}

/// `max δ − κ (tr U − ν_tᴴ U ν_t)` under the linearized secrecy constraint,
/// `U_{N+1,N+1} = 1`, and either the RIS power budget (`p_i = Some`) or unit
/// diagonal (`p_i = None`, passive surface).
///
/// The penalty weight is `κ = 1/(η·tr U_t)`, which makes `η` independent of
/// the amplitude scale of the surface.
pub fn solve_p9(
    u_t: &LiftedReflect,
    g: &GMatrices,
    eta: f64,
    rbar: f64,
    p_i: Option<f64>,
    sdp_tol: f64,
) -> Result<LiftedReflect, ReflectorError> {
    assert!(eta > 0.0, "penalty factor must be positive");
    let m1 = u_t.u.nrows();
    let n = m1 - 1;
    let ops = &g.ops;

    // U = D Ũ D gives the reflection block of U_t unit average diagonal.
    let mean_diag = (0..n).map(|i| u_t.u[(i, i)].re).sum::<f64>() / n as f64;
    let rho = match p_i {
        Some(_) if mean_diag > 0.0 && mean_diag.is_finite() => mean_diag.sqrt(),
        Some(p_i) if ops.d_g.iter().sum::<f64>() > 0.0 => (p_i / ops.d_g.iter().sum::<f64>()).sqrt(),
        _ => 1.0,
    };
    let d: Vec<f64> = (0..m1).map(|i| if i < n { rho } else { 1.0 }).collect();
    let scaled = |op: HermOp| op.congruence_diag(&d);
    let u_t_scaled = CMatrix::from_fn(m1, m1, |i, j| u_t.u[(i, j)] / (d[i] * d[j]));

    let t_ib = positive(tr(&g.g_ib, &u_t.u))?;
    let t_ae = positive(tr(&g.g_ae, &u_t.u))?;
    let sigma2_e = ops.d_ie[n];
    let gamma = rbar - g.mu_b.ln() - sigma2_e.ln() + t_ib.ln() + t_ae.ln() - 2.0;

    let lin = ops
        .interference(Side::Bob)
        .scaled(1.0 / t_ib)
        .plus(ops.received(Side::Eve).scaled(1.0 / t_ae), m1);

    let (_, v_t) = max_eig_pair(&u_t_scaled);
    let kappa = 1.0 / (eta * u_t_scaled.trace().re);
    let objective = HermOp::identity(m1)
        .scaled(kappa)
        .plus(HermOp::rank_one(-kappa, v_t), m1);

    // Scalars: a, b, e, δ.
    let (a, b, e, delta) = (0, 1, 2, 3);
    let row_a = scaled(ops.received(Side::Bob).scaled(1.0 / g.mu_b));
    let row_b = scaled(ops.interference(Side::Eve).scaled(1.0 / sigma2_e));
    let row_e = scaled(lin);
    let row_p = p_i.map(|p_i| scaled(ops.power().scaled(1.0 / p_i)));
    let start = interior_start(&u_t_scaled, |u| {
        let (va, vb, ve) = (row_a.inner(u), row_b.inner(u), row_e.inner(u));
        let h = va.ln() + vb.ln() - ve - gamma;
        let fits = row_p.as_ref().is_none_or(|r| r.inner(u) < 1.0 - 1e-9);
        (va > 0.0 && vb > 0.0 && ve > 0.0 && h > 0.0 && fits).then(|| vec![va, vb, ve, 0.5 * h])
    });

    let mut p = SdpProblem::new(m1, 4)
        .minimize(objective, vec![0.0, 0.0, 0.0, -1.0])
        .constrain(row_a, vec![(a, -1.0)], Sense::Eq, 0.0)
        .constrain(row_b, vec![(b, -1.0)], Sense::Eq, 0.0)
        .constrain(row_e, vec![(e, -1.0)], Sense::Eq, 0.0)
        .constrain(HermOp::entry(n, 1.0), vec![], Sense::Eq, 1.0)
        .log_constrain(vec![(a, 1.0), (b, 1.0)], vec![(e, 1.0), (delta, 1.0)], gamma);
    match row_p {
        Some(row) => {
            p = p.constrain(row, vec![], Sense::Le, 1.0 - 1e-9);
        }
        None => {
            for i in 0..n {
                p = p.constrain(HermOp::entry(i, 1.0), vec![], Sense::Eq, 1.0);
            }
        }
    }
    let opts = SolverOptions {
        tol: sdp_tol,
        max_iter: 600,
    };
    let sol = match &start {
        Some((u0, s0)) => sdp::solve_from(&p, &opts, u0, s0),
        None => sdp::solve_with(&p, &opts),
    }
    .map_err(|_| ReflectorError::Solver(SdpStatus::Infeasible))?;
    match sol.status {
        SdpStatus::Optimal => {}
        SdpStatus::Infeasible => return Err(ReflectorError::Infeasible),
        other => return Err(ReflectorError::Solver(other)),
    }
    let u = CMatrix::from_fn(m1, m1, |i, j| sol.x[(i, j)] * (d[i] * d[j]));
    Ok(LiftedReflect {
        u,
        delta: sol.scalars[delta],
    })
}

/// Slack below the current rate given to each subproblem so its interior
/// is not degenerate.
const TARGET_MARGIN: f64 = 1e-4;

/// Strictly feasible start `(1−ε) U_t + ε Diag(U_t)`, which keeps every
/// diagonal entry (and so the unit-modulus rows and the power budget).
/// `scalars` returns the matching scalar variables or `None` if the point
/// is not interior.
fn interior_start(u_t: &CMatrix, scalars: impl Fn(&CMatrix) -> Option<Vec<f64>>) -> Option<(CMatrix, Vec<f64>)> {
    let m = u_t.nrows();
    let mean = u_t.trace().re / m as f64;
    let diag = CMatrix::from_fn(m, m, |i, j| {
        if i == j {
            Complex64::new(u_t[(i, i)].re.max(1e-6 * mean), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let mut eps = 0.5;
    for _ in 0..30 {
        let u = u_t * Complex64::new(1.0 - eps, 0.0) + &diag * Complex64::new(eps, 0.0);
        if let Some(s) = scalars(&u) {
            return Some((u, s));
        }
        eps *= 0.25;
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectorConfig {
    /// Final (smallest) penalty factor.
    pub eta: f64,
    /// Penalty factor of the first subproblem.
    pub eta_start: f64,
    /// Applied to the penalty factor after each iterate that is not rank-one.
    pub eta_decay: f64,
    /// Stopping tolerance on the relative change of `tr(G U)` and of `δ`.
    pub eps2: f64,
    /// Rank-one tolerance, relative to `tr U`.
    pub rank_tol: f64,
    pub max_iter: usize,
    pub sdp_tol: f64,
}

impl Default for ReflectorConfig {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            eta_start: 1.0,
            eta_decay: 0.2,
            eps2: 1e-3,
            rank_tol: 1e-3,
            max_iter: 40,
            sdp_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReflectorOutcome {
    pub reflect: ReflectMatrix,
    pub lift: LiftedReflect,
    /// Secrecy rate of the returned coefficients, recomputed from scratch.
    pub secrecy_rate: f64,
    pub delta_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Keeps coefficients admissible: unit modulus without a budget, scaled
/// into the budget otherwise.
fn project(q: ReflectMatrix, w: &Beamformer, ch: &ChannelSet, noise: &NoiseConfig, p_i: Option<f64>) -> ReflectMatrix {
    match p_i {
        None => ReflectMatrix::new(q.q.map(|c| if c.norm() > 0.0 { c / c.norm() } else { Complex64::new(1.0, 0.0) })),
        Some(p_i) => {
            let p = ris_power(w, &q, ch, noise);
            if p > p_i {
                let s = (p_i * (1.0 - 1e-12) / p).sqrt();
                ReflectMatrix::new(q.q * Complex64::new(s, 0.0))
            } else {
                q
            }
        }
    }
}

/// Default start: uniform coefficients at the largest budget-feasible
/// amplitude, unit amplitude for a passive surface.
pub fn default_start(w: &Beamformer, ch: &ChannelSet, noise: &NoiseConfig, p_i: Option<f64>) -> ReflectMatrix {
    let n = ch.num_ris_elements();
    let ones = ReflectMatrix::identity(n);
    match p_i {
        None => ones,
        Some(p_i) => {
            let p = ris_power(w, &ones, ch, noise);
            let s = if p > 0.0 { (p_i * (1.0 - 1e-9) / p).sqrt() } else { 1.0 };
            ReflectMatrix::new(ones.q * Complex64::new(s, 0.0))
        }
    }
}

/// Penalty-based iteration for the reflection coefficients given `w`.
///
/// Maximizes the secrecy rate under the surface constraint; fails with
/// [`ReflectorError::Infeasible`] when the best point found stays below
/// `rbar − 1e-3`.
pub fn algorithm2(
    w: &Beamformer,
    ch: &ChannelSet,
    noise: &NoiseConfig,
    rbar: f64,
    p_i: Option<f64>,
    start: Option<&ReflectMatrix>,
    cfg: &ReflectorConfig,
) -> Result<ReflectorOutcome, ReflectorError> {
    let g = build_g_matrices(w, ch, noise);
    let q0 = match start {
        Some(q) => project(q.clone(), w, ch, noise, p_i),
        None => default_start(w, ch, noise, p_i),
    };
    let mut best_q = q0.clone();
    let mut best_rate = secrecy_rate(w, &q0, ch, noise);
    let mut lift = LiftedReflect::from_reflect(&q0);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut eta = cfg.eta_start.max(cfg.eta);

    while iterations < cfg.max_iter {
        let current = lifted_secrecy(&lift.u, &g)?;
        let target = rbar.min(current) - TARGET_MARGIN;
        let next = match solve_p9(&lift, &g, eta, target, p_i, cfg.sdp_tol) {
            Ok(next) => next,
            Err(e) if iterations == 0 => return Err(e),
            Err(_) => break,
        };
        iterations += 1;

        let q = project(next.recover(), w, ch, noise, p_i);
        let rate = secrecy_rate(w, &q, ch, noise);
        if rate > best_rate {
            best_rate = rate;
            best_q = q;
        }
        let power_old = tr(&g.g, &lift.u);
        let power_new = tr(&g.g, &next.u);
        let delta_new = lifted_secrecy(&next.u, &g).unwrap_or(f64::NEG_INFINITY) - rbar;
        let delta_old = current - rbar;
        trace.push(delta_new);
        let rank_ok = next.rank_residual() <= cfg.rank_tol * next.u.trace().re;
        let power_still = (power_new - power_old).abs() <= cfg.eps2 * power_old.abs().max(1e-300);
        let delta_still = (delta_new - delta_old).abs() <= cfg.eps2 * delta_old.abs().max(1.0);
        lift = next;
        if rank_ok && power_still && delta_still {
            converged = true;
            break;
        }
        if !rank_ok {
            eta = (eta * cfg.eta_decay).max(cfg.eta);
        }
    }

    if best_rate < rbar - 1e-3 {
        return Err(ReflectorError::Infeasible);
    }
    Ok(ReflectorOutcome {
        reflect: best_q,
        lift,
        secrecy_rate: best_rate,
        delta_trace: trace,
        iterations,
        converged,
    })
}
