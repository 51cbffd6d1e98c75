//! Alternating minimization over `(w, Q)` and batch statistics.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::beamformer::{algorithm1, BeamformerConfig, BeamformerOutcome};
use crate::channel::{generate_channels, ChannelError, ChannelParams, ChannelSet, NodeLayout, NoiseConfig};
use crate::rates::{ris_power, secrecy_rate, total_power, Beamformer, ReflectMatrix, RisMode};
use crate::reflector::{algorithm2, ReflectorConfig};
use crate::{CVector, Complex64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AltMinConfig {
    /// Target secrecy rate in nats.
    pub rbar: f64,
    /// RIS amplification budget in watts (active mode only).
    pub p_i: f64,
    pub eta: f64,
    pub eps_outer: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub max_outer: usize,
    /// Gradient steps on the coefficients after each alternation; 0 gives
    /// plain alternation.
    pub refine_steps: usize,
    pub mode: RisMode,
}

impl Default for AltMinConfig {
    fn default() -> Self {
        Self {
            rbar: 2.0,
            p_i: 0.01,
            eta: 1e-3,
            eps_outer: 1e-3,
            eps1: 1e-3,
            eps2: 1e-3,
            max_outer: 30,
            refine_steps: 1,
            mode: RisMode::Active,
        }
    }
}

impl AltMinConfig {
    pub fn validate(&self) -> Result<(), AltMinError> {
        let bad = |m: String| Err(AltMinError::InvalidConfig(m));
        if !(self.rbar >= 0.0 && self.rbar.is_finite()) {
            return bad(format!("rbar must be finite and nonnegative, got {}", self.rbar));
        }
        for (name, v) in [
            ("eta", self.eta),
            ("eps_outer", self.eps_outer),
            ("eps1", self.eps1),
            ("eps2", self.eps2),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if self.mode.is_active() && !(self.p_i > 0.0 && self.p_i.is_finite()) {
            return bad(format!("p_i must be positive in active mode, got {}", self.p_i));
        }
        if self.max_outer == 0 {
            return bad("max_outer must be at least 1".into());
        }
        Ok(())
    }

    fn budget(&self) -> Option<f64> {
        self.mode.is_active().then_some(self.p_i)
    }

    /// Passive surfaces add no thermal noise.
    fn noise(&self, noise: &NoiseConfig) -> NoiseConfig {
        if self.mode.is_active() {
            *noise
        } else {
            noise.without_ris_noise()
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AltMinError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("secrecy target unreachable: {0}")]
    Infeasible(String),
    #[error("transmit power rose from {before:e} to {after:e} at outer iteration {iter}")]
    NonMonotone { iter: usize, before: f64, after: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub transmit_power: f64,
    pub ris_power: f64,
    pub total_power: f64,
    pub secrecy_rate: f64,
    pub rank_residual_w: f64,
    pub rank_residual_u: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxOuter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<IterationRecord>,
    pub status: RunStatus,
}

impl RunRecord {
    pub fn outer_iterations(&self) -> usize {
        self.rows.last().map_or(0, |r| r.iter)
    }
}

/// Increases of `‖w‖²` beyond this relative size are reported as errors;
/// smaller ones end the loop with the previous pair.
const NONMONOTONE_TOL: f64 = 1e-2;

/// Largest multiple of the last coefficient step tried when extrapolating.
const MAX_EXTRAPOLATION: f64 = 64.0;

/// `q + β·step`, mapped back to unit modulus on a passive surface.
fn extrapolate(q: &ReflectMatrix, step: &CVector, beta: f64, mode: RisMode) -> ReflectMatrix {
    let mut c = &q.q + step * Complex64::new(beta, 0.0);
    if !mode.is_active() {
        for (v, old) in c.iter_mut().zip(q.q.iter()) {
            *v = if v.norm() > 0.0 { *v / v.norm() } else { *old };
        }
    }
    ReflectMatrix::new(c)
}

/// Coordinates of `q`: real and imaginary parts (active) or phases (passive).
fn coords(q: &ReflectMatrix, mode: RisMode) -> Vec<f64> {
    if mode.is_active() {
        q.q.iter().flat_map(|c| [c.re, c.im]).collect()
    } else {
        q.q.iter().map(|c| c.arg()).collect()
    }
}

fn from_coords(x: &[f64], mode: RisMode) -> ReflectMatrix {
    if mode.is_active() {
        ReflectMatrix::new(CVector::from_fn(x.len() / 2, |i, _| Complex64::new(x[2 * i], x[2 * i + 1])))
    } else {
        ReflectMatrix::new(CVector::from_fn(x.len(), |i, _| Complex64::from_polar(1.0, x[i])))
    }
}

/// One gradient step on `q ↦ min ‖w‖²` (the value of the beamformer
/// subproblem), with central differences and Armijo backtracking. `None`
/// when no decrease is found.
fn descend(
    q: &ReflectMatrix,
    p0: f64,
    mode: RisMode,
    value: &impl Fn(&ReflectMatrix) -> Option<BeamformerOutcome>,
) -> Option<(ReflectMatrix, BeamformerOutcome)> {
    let x = coords(q, mode);
    let scale = if mode.is_active() {
        x.iter().map(|v| v * v).sum::<f64>().sqrt() / (x.len() as f64).sqrt()
    } else {
        1.0
    };
    let h = 1e-5 * scale.max(1e-300);
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp[i] += h;
        let mut xm = x.clone();
        xm[i] -= h;
        let fp = value(&from_coords(&xp, mode))?.beamformer.power();
        let fm = value(&from_coords(&xm, mode))?.beamformer.power();
        g[i] = (fp - fm) / (2.0 * h);
    }
    let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(gn > 0.0) {
        return None;
    }
    let mut t = 0.1 * scale * (x.len() as f64).sqrt() / gn;
    for _ in 0..30 {
        let xt: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - t * b).collect();
        let qt = from_coords(&xt, mode);
        if let Some(b) = value(&qt) {
            if b.beamformer.power() < p0 - 1e-4 * t * gn * gn {
                return Some((qt, b));
            }
        }
        t *= 0.5;
    }
    None
}

fn record(
    iter: usize,
    w: &Beamformer,
    q: &ReflectMatrix,
    ch: &ChannelSet,
    noise: &NoiseConfig,
    mode: RisMode,
    rank_w: f64,
    rank_u: f64,
    delta: f64,
) -> IterationRecord {
    let ris = if mode.is_active() { ris_power(w, q, ch, noise) } else { 0.0 };
    IterationRecord {
        iter,
        transmit_power: w.power(),
        ris_power: ris,
        total_power: total_power(w, q, ch, noise, mode),
        secrecy_rate: secrecy_rate(w, q, ch, noise),
        rank_residual_w: rank_w,
        rank_residual_u: rank_u,
        delta,
    }
}

/// Alternates the beamformer and reflection subproblems from `Q = I`.
pub fn optimize(
    ch: &ChannelSet,
    noise: &NoiseConfig,
    cfg: &AltMinConfig,
) -> Result<(Beamformer, ReflectMatrix, RunRecord), AltMinError> {
    cfg.validate()?;
    let noise = cfg.noise(noise);
    let m = ch.num_tx_antennas();
    let n = ch.num_ris_elements();
    let mode = cfg.mode;

    if cfg.rbar == 0.0 {
        let w = Beamformer::zeros(m);
        let q = if mode.is_active() {
            ReflectMatrix::zeros(n)
        } else {
            ReflectMatrix::identity(n)
        };
        let row = record(0, &w, &q, ch, &noise, mode, 0.0, 0.0, 0.0);
        return Ok((
            w,
            q,
            RunRecord {
                rows: vec![row],
                status: RunStatus::Converged,
            },
        ));
    }

    let bcfg = BeamformerConfig {
        eta: cfg.eta,
        eps1: cfg.eps1,
        ..Default::default()
    };
    let rcfg = ReflectorConfig {
        eta: cfg.eta,
        eps2: cfg.eps2,
        ..Default::default()
    };
    let budget = cfg.budget();
    let feasible = |w: &Beamformer, q: &ReflectMatrix| {
        secrecy_rate(w, q, ch, &noise) >= cfg.rbar - 1e-6
            && budget.is_none_or(|p| ris_power(w, q, ch, &noise) <= p * (1.0 + 1e-9))
    };

    let mut q = ReflectMatrix::identity(n);
    let first = algorithm1(&q, ch, &noise, cfg.rbar, budget, &bcfg).map_err(|e| AltMinError::Infeasible(e.to_string()))?;
    let mut w = first.beamformer;
    let mut rows = vec![record(0, &w, &q, ch, &noise, mode, first.lift.rank_residual, 0.0, 0.0)];

    if mode == RisMode::PassiveIdentity {
        return Ok((
            w,
            q,
            RunRecord {
                rows,
                status: RunStatus::Converged,
            },
        ));
    }

    let mut status = RunStatus::MaxOuter;
    for iter in 1..=cfg.max_outer {
        let Ok(refl) = algorithm2(&w, ch, &noise, cfg.rbar, budget, Some(&q), &rcfg) else {
            status = RunStatus::Converged;
            break;
        };
        let mut q_new = refl.reflect;
        let mut beam = match algorithm1(&q_new, ch, &noise, cfg.rbar, budget, &bcfg) {
            Ok(b) if feasible(&b.beamformer, &q_new) => b,
            _ => {
                status = RunStatus::Converged;
                break;
            }
        };
        // Alternating steps creep along the coupled budget and secrecy
        // constraints; extrapolating the coefficient sequence skips ahead
        // whenever that lowers the transmit power further.
        let step = &q_new.q - &q.q;
        let mut beta = 1.0;
        while beta <= MAX_EXTRAPOLATION {
            let trial = extrapolate(&q_new, &step, beta, mode);
            match algorithm1(&trial, ch, &noise, cfg.rbar, budget, &bcfg) {
                Ok(b) if feasible(&b.beamformer, &trial) && b.beamformer.power() < beam.beamformer.power() => {
                    beam = b;
                    q_new = trial;
                    beta *= 2.0;
                }
                _ => break,
            }
        }
        let value = |q: &ReflectMatrix| match algorithm1(q, ch, &noise, cfg.rbar, budget, &bcfg) {
            Ok(b) if feasible(&b.beamformer, q) => Some(b),
            _ => None,
        };
        for _ in 0..cfg.refine_steps {
            let Some((q_ref, b_ref)) = descend(&q_new, beam.beamformer.power(), mode, &value) else {
                break;
            };
            q_new = q_ref;
            beam = b_ref;
        }
        let before = w.power();
        let after = beam.beamformer.power();
        if after > before * (1.0 + NONMONOTONE_TOL) {
            return Err(AltMinError::NonMonotone { iter, before, after });
        }
        if after > before {
            status = RunStatus::Converged;
            break;
        }
        w = beam.beamformer;
        q = q_new;
        rows.push(record(
            iter,
            &w,
            &q,
            ch,
            &noise,
            mode,
            beam.lift.rank_residual,
            refl.lift.rank_residual(),
            refl.secrecy_rate - cfg.rbar,
        ));
        if (before - after).abs() / before.max(1e-300) < cfg.eps_outer {
            status = RunStatus::Converged;
            break;
        }
    }
    Ok((w, q, RunRecord { rows, status }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RealizationSummary {
    pub transmit_power: f64,
    pub ris_power: f64,
    pub total_power: f64,
    pub secrecy_rate: f64,
    pub outer_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub outcome: Result<RealizationSummary, AltMinError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanStderr {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub total_power: MeanStderr,
    pub transmit_power: MeanStderr,
    pub ris_power: MeanStderr,
    pub secrecy_rate: MeanStderr,
    pub num_ok: usize,
    pub num_infeasible: usize,
    pub runs: Vec<SeedResult>,
}

impl BatchStats {
    pub fn from_runs(runs: Vec<SeedResult>) -> Self {
        let ok: Vec<&RealizationSummary> = runs.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
        let col = |f: fn(&RealizationSummary) -> f64| MeanStderr::of(&ok.iter().map(|s| f(s)).collect::<Vec<_>>());
        Self {
            total_power: col(|s| s.total_power),
            transmit_power: col(|s| s.transmit_power),
            ris_power: col(|s| s.ris_power),
            secrecy_rate: col(|s| s.secrecy_rate),
            num_ok: ok.len(),
            num_infeasible: runs.len() - ok.len(),
            runs,
        }
    }
}

/// One realization: channels for `seed`, then [`optimize`].
pub fn run_seed(
    layout: &NodeLayout,
    params: &ChannelParams,
    noise: &NoiseConfig,
    cfg: &AltMinConfig,
    seed: u64,
) -> Result<SeedResult, ChannelError> {
    let ch = generate_channels(layout, &ChannelParams { seed, ..*params })?;
    let outcome = optimize(&ch, noise, cfg).map(|(w, q, rec)| {
        let last = rec.rows.last().copied().expect("at least one record row");
        debug_assert_eq!(last.transmit_power, w.power());
        let _ = q;
        RealizationSummary {
            transmit_power: last.transmit_power,
            ris_power: last.ris_power,
            total_power: last.total_power,
            secrecy_rate: last.secrecy_rate,
            outer_iterations: rec.outer_iterations(),
        }
    });
    Ok(SeedResult { seed, outcome })
}

/// Runs seeds `params.seed .. params.seed + num_realizations` in parallel.
/// Results are ordered by seed; infeasible realizations are counted and
/// left out of the means.
pub fn run_batch(
    layout: &NodeLayout,
    params: &ChannelParams,
    noise: &NoiseConfig,
    cfg: &AltMinConfig,
    num_realizations: usize,
) -> Result<BatchStats, ChannelError> {
    assert!(num_realizations >= 1, "need at least one realization");
    layout.validate()?;
    params.validate()?;
    let runs = (0..num_realizations as u64)
        .into_par_iter()
        .map(|i| run_seed(layout, params, noise, cfg, params.seed + i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BatchStats::from_runs(runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(seed: u64) -> (ChannelSet, NoiseConfig) {
        let params = ChannelParams {
            seed,
            ..Default::default()
        };
        (
            generate_channels(&NodeLayout::reference(), &params).unwrap(),
            NoiseConfig::from_dbm(-90.0, -90.0, -90.0),
        )
    }

    #[test]
    fn zero_target() {
        let (ch, noise) = instance(0);
        let cfg = AltMinConfig {
            rbar: 0.0,
            ..Default::default()
        };
        let (w, q, rec) = optimize(&ch, &noise, &cfg).unwrap();
        assert_eq!(w.power(), 0.0);
        assert_eq!(q.frobenius_sq(), 0.0);
        assert_eq!(rec.rows[0].total_power, 0.0);
    }

    #[test]
    fn rejects_bad_config() {
        let (ch, noise) = instance(0);
        for cfg in [
            AltMinConfig {
                rbar: -1.0,
                ..Default::default()
            },
            AltMinConfig {
                eps1: 0.0,
                ..Default::default()
            },
            AltMinConfig {
                p_i: 0.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(optimize(&ch, &noise, &cfg), Err(AltMinError::InvalidConfig(_))));
        }
        let passive = AltMinConfig {
            p_i: 0.0,
            mode: RisMode::PassiveOptimized,
            ..Default::default()
        };
        assert!(passive.validate().is_ok());
    }

    #[test]
    fn transmit_power_is_monotone_and_constraints_hold() {
        let (ch, noise) = instance(7);
        let cfg = AltMinConfig::default();
        let (w, q, rec) = optimize(&ch, &noise, &cfg).unwrap();
        for pair in rec.rows.windows(2) {
            assert!(pair[1].transmit_power <= pair[0].transmit_power + 1e-9 * pair[0].transmit_power);
        }
        assert!(secrecy_rate(&w, &q, &ch, &noise) >= cfg.rbar - 1e-3);
        assert!(ris_power(&w, &q, &ch, &noise) <= cfg.p_i + 1e-9);
    }

    #[test]
    fn mean_stderr() {
        let s = MeanStderr::of(&[1.0, 2.0, 3.0, 4.0]);
        assert!((s.mean - 2.5).abs() < 1e-15);
        assert!((s.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanStderr::of(&[7.0]).stderr, 0.0);
    }
}
