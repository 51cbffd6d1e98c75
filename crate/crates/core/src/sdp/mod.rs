//! Dense Hermitian semidefinite programs.
//!
//! Problems have one Hermitian PSD block `X` (order `n ≤ 256`), `s` scalar
//! variables constrained to be nonnegative, and constraints of the form
//!
//! ```text
//! Re tr(A_k X) + a_kᵀ x  {≤, ≥, =}  b_k
//! ```
//!
//! plus optional concave *log constraints* on the scalars,
//! `Σ α_i ln x_{j_i} − Σ β_j x_j ≥ γ` with `α_i > 0`, which is what the
//! reflection subproblem needs for its `ln tr(G U)` terms. The objective
//! `Re tr(C X) + cᵀ x` is minimized.
//!
//! Internally every Hermitian matrix is mapped to its real symmetric
//! embedding (see [`real_embed`]) and the problem is solved by a primal
//! log-barrier Newton method with a big-M shifted phase 1; see
//! [`barrier`](self) for details. The complex solution is read back from
//! the embedding, so the doubled spectrum of the real form never leaks out.

mod barrier;
mod ops;
pub mod text;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::{CMatrix, CVector, Complex64};

pub use text::{parse_text, to_text, TextError};

/// Largest accepted block order.
pub const MAX_BLOCK_DIM: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("block dimension {0} exceeds the supported maximum of {MAX_BLOCK_DIM}")]
    TooLarge(usize),
    #[error("block dimension must be positive")]
    EmptyBlock,
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("tolerance must lie in (0, 1), got {0}")]
    BadTolerance(f64),
}

/// Hermitian operator in one of two storage forms.
///
/// `Structured` is `Σ s_r v_r v_rᴴ + Σ d_i e_i e_iᵀ`; the solver exploits it to
/// keep each Newton step at a few dense products regardless of the number
/// of constraints.
#[derive(Debug, Clone, PartialEq)]
pub enum HermOp {
    Dense(CMatrix),
    Structured {
        rank_one: Vec<(f64, CVector)>,
        diag: Vec<(usize, f64)>,
    },
}

impl HermOp {
    pub fn zero() -> Self {
        HermOp::Structured {
            rank_one: Vec::new(),
            diag: Vec::new(),
        }
    }

    /// Dense operator; the input is symmetrized to `(M + Mᴴ)/2`.
    pub fn dense(m: CMatrix) -> Self {
        assert!(m.is_square(), "operator must be square");
        let h = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        HermOp::Dense(h)
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        HermOp::Structured {
            rank_one: Vec::new(),
            diag: d
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, *v))
                .collect(),
        }
    }

    /// `value · e_i e_iᵀ`.
    pub fn entry(i: usize, value: f64) -> Self {
        HermOp::Structured {
            rank_one: Vec::new(),
            diag: vec![(i, value)],
        }
    }

    /// `scale · v vᴴ`.
    pub fn rank_one(scale: f64, v: CVector) -> Self {
        HermOp::Structured {
            rank_one: vec![(scale, v)],
            diag: Vec::new(),
        }
    }

    pub fn scaled(mut self, f: f64) -> Self {
        match &mut self {
            HermOp::Dense(m) => *m *= Complex64::new(f, 0.0),
            HermOp::Structured { rank_one, diag } => {
                rank_one.iter_mut().for_each(|(s, _)| *s *= f);
                diag.iter_mut().for_each(|(_, d)| *d *= f);
            }
        }
        self
    }

    /// Sum of two operators of order `n`.
    pub fn plus(self, other: HermOp, n: usize) -> Self {
        match (self, other) {
            (
                HermOp::Structured {
                    mut rank_one,
                    mut diag,
                },
                HermOp::Structured {
                    rank_one: r2,
                    diag: d2,
                },
            ) => {
                rank_one.extend(r2);
                diag.extend(d2);
                HermOp::Structured { rank_one, diag }
            }
            (a, b) => HermOp::Dense(a.to_dense(n) + b.to_dense(n)),
        }
    }

    /// Congruence `D A D` with a real diagonal `D`.
    pub fn congruence_diag(self, d: &[f64]) -> Self {
        match self {
            HermOp::Dense(m) => {
                HermOp::Dense(CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * (d[i] * d[j])))
            }
            HermOp::Structured { rank_one, diag } => HermOp::Structured {
                rank_one: rank_one
                    .into_iter()
                    .map(|(s, v)| (s, CVector::from_fn(v.len(), |i, _| v[i] * d[i])))
                    .collect(),
                diag: diag.into_iter().map(|(i, v)| (i, v * d[i] * d[i])).collect(),
            },
        }
    }

    pub fn to_dense(&self, n: usize) -> CMatrix {
        match self {
            HermOp::Dense(m) => {
                assert_eq!(m.nrows(), n, "operator order mismatch");
                m.clone()
            }
            HermOp::Structured { rank_one, diag } => {
                let mut m = CMatrix::zeros(n, n);
                for (s, v) in rank_one {
                    m += v * v.adjoint() * Complex64::new(*s, 0.0);
                }
                for &(i, d) in diag {
                    m[(i, i)] += Complex64::new(d, 0.0);
                }
                m
            }
        }
    }

    /// `Re tr(A X)`.
    pub fn inner(&self, x: &CMatrix) -> f64 {
        match self {
            HermOp::Dense(a) => a
                .iter()
                .zip(x.transpose().iter())
                .map(|(p, q)| (p * q).re)
                .sum(),
            HermOp::Structured { rank_one, diag } => {
                let r: f64 = rank_one
                    .iter()
                    .map(|(s, v)| s * v.dotc(&(x * v)).re)
                    .sum();
                let d: f64 = diag.iter().map(|&(i, v)| v * x[(i, i)].re).sum();
                r + d
            }
        }
    }

    fn check(&self, n: usize) -> Result<(), SdpError> {
        let bad = |m: &str| Err(SdpError::Malformed(m.to_string()));
        match self {
            HermOp::Dense(m) => {
                if m.shape() != (n, n) {
                    return bad("dense operator has wrong shape");
                }
                if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return bad("non-finite operator entry");
                }
            }
            HermOp::Structured { rank_one, diag } => {
                for (s, v) in rank_one {
                    if v.len() != n || !s.is_finite() || v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                        return bad("rank-one term has wrong length or non-finite data");
                    }
                }
                for &(i, d) in diag {
                    if i >= n || !d.is_finite() {
                        return bad("diagonal index out of range or non-finite");
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub matrix: HermOp,
    /// Sparse scalar coefficients `(index, value)`.
    pub scalars: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `Σ α ln x_j − Σ β x_j ≥ γ`, all `α > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogConstraint {
    pub log_terms: Vec<(usize, f64)>,
    pub linear: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub block_dim: usize,
    pub num_scalars: usize,
    pub objective: HermOp,
    pub objective_scalars: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub log_constraints: Vec<LogConstraint>,
}

impl SdpProblem {
    /// Empty problem (zero objective, no constraints).
    pub fn new(block_dim: usize, num_scalars: usize) -> Self {
        Self {
            block_dim,
            num_scalars,
            objective: HermOp::zero(),
            objective_scalars: vec![0.0; num_scalars],
            constraints: Vec::new(),
            log_constraints: Vec::new(),
        }
    }

    pub fn minimize(mut self, c: HermOp, c_scalars: Vec<f64>) -> Self {
        self.objective = c;
        self.objective_scalars = c_scalars;
        self
    }

    pub fn constrain(mut self, matrix: HermOp, scalars: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> Self {
        self.constraints.push(Constraint {
            matrix,
            scalars,
            sense,
            rhs,
        });
        self
    }

    pub fn log_constrain(mut self, log_terms: Vec<(usize, f64)>, linear: Vec<(usize, f64)>, rhs: f64) -> Self {
        self.log_constraints.push(LogConstraint {
            log_terms,
            linear,
            rhs,
        });
        self
    }

    /// Checks dimensions and finiteness.
    pub fn validate(&self) -> Result<(), SdpError> {
        let n = self.block_dim;
        if n == 0 {
            return Err(SdpError::EmptyBlock);
        }
        if n > MAX_BLOCK_DIM {
            return Err(SdpError::TooLarge(n));
        }
        let bad = |m: String| Err(SdpError::Malformed(m));
        self.objective.check(n)?;
        if self.objective_scalars.len() != self.num_scalars {
            return bad("objective scalar vector has wrong length".into());
        }
        if self.objective_scalars.iter().any(|v| !v.is_finite()) {
            return bad("non-finite objective coefficient".into());
        }
        for (k, c) in self.constraints.iter().enumerate() {
            c.matrix.check(n)?;
            if !c.rhs.is_finite() {
                return bad(format!("constraint {k}: non-finite right-hand side"));
            }
            if c.scalars.iter().any(|&(j, v)| j >= self.num_scalars || !v.is_finite()) {
                return bad(format!("constraint {k}: bad scalar coefficient"));
            }
        }
        for (k, l) in self.log_constraints.iter().enumerate() {
            if l.log_terms.is_empty() {
                return bad(format!("log constraint {k}: no log terms"));
            }
            if l.log_terms.iter().any(|&(j, a)| j >= self.num_scalars || !(a > 0.0) || !a.is_finite()) {
                return bad(format!("log constraint {k}: log weights must be positive"));
            }
            if l.linear.iter().any(|&(j, b)| j >= self.num_scalars || !b.is_finite()) || !l.rhs.is_finite() {
                return bad(format!("log constraint {k}: bad linear part"));
            }
        }
        Ok(())
    }

    /// Objective at a candidate point.
    pub fn objective_at(&self, x: &CMatrix, scalars: &[f64]) -> f64 {
        self.objective.inner(x)
            + self
                .objective_scalars
                .iter()
                .zip(scalars)
                .map(|(c, v)| c * v)
                .sum::<f64>()
    }

    /// Largest constraint violation at a candidate point (0 when feasible).
    pub fn max_violation(&self, x: &CMatrix, scalars: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let lhs = c.matrix.inner(x) + c.scalars.iter().map(|&(j, v)| v * scalars[j]).sum::<f64>();
            let viol = match c.sense {
                Sense::Le => lhs - c.rhs,
                Sense::Ge => c.rhs - lhs,
                Sense::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        for l in &self.log_constraints {
            let h = log_constraint_value(l, scalars);
            worst = worst.max(-h);
        }
        worst
    }
}

pub(crate) fn log_constraint_value(l: &LogConstraint, x: &[f64]) -> f64 {
    let logs: f64 = l
        .log_terms
        .iter()
        .map(|&(j, a)| if x[j] > 0.0 { a * x[j].ln() } else { f64::NEG_INFINITY })
        .sum();
    logs - l.linear.iter().map(|&(j, b)| b * x[j]).sum::<f64>() - l.rhs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: CMatrix,
    pub scalars: Vec<f64>,
    pub status: SdpStatus,
    pub objective_value: f64,
    /// Lower bound on the optimal value implied by the final barrier
    /// parameter (weak duality); equals `objective_value − gap`.
    pub dual_bound: f64,
    /// Constraint multiplier estimates, one per constraint, in the
    /// convention `C − Σ y_k A_k ⪰ 0`.
    pub duals: Vec<f64>,
    /// Largest violation of the original constraints at `x`, `scalars`.
    pub primal_residual: f64,
    /// Newton steps over both phases.
    pub iterations: usize,
}

impl SdpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SdpStatus::Optimal
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.x.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    /// Newton-step cap per phase.
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 200,
        }
    }
}

/// Solve with default options and the given tolerance.
pub fn solve(p: &SdpProblem, tol: f64) -> Result<SdpSolution, SdpError> {
    solve_with(
        p,
        &SolverOptions {
            tol,
            ..Default::default()
        },
    )
}

pub fn solve_with(p: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution, SdpError> {
    if !(opts.tol > 0.0 && opts.tol < 1.0) {
        return Err(SdpError::BadTolerance(opts.tol));
    }
    p.validate()?;
    Ok(barrier::solve(p, opts, None))
}

/// Like [`solve_with`], starting from `(x0, s0)` when that point is strictly
/// feasible. Otherwise the usual phase 1 runs.
pub fn solve_from(p: &SdpProblem, opts: &SolverOptions, x0: &CMatrix, s0: &[f64]) -> Result<SdpSolution, SdpError> {
    if !(opts.tol > 0.0 && opts.tol < 1.0) {
        return Err(SdpError::BadTolerance(opts.tol));
    }
    p.validate()?;
    if x0.nrows() != p.block_dim || x0.ncols() != p.block_dim || s0.len() != p.num_scalars {
        return Err(SdpError::Malformed("start point has the wrong shape".into()));
    }
    Ok(barrier::solve(p, opts, Some((x0, s0))))
}

/// Real symmetric embedding `[[Re H, −Im H], [Im H, Re H]]`.
///
/// `tr(embed(A)·embed(X)) = 2·Re tr(A X)` and `H ⪰ 0 ⇔ embed(H) ⪰ 0`; each
/// eigenvalue of `H` appears twice in the embedding.
pub fn real_embed(h: &CMatrix) -> DMatrix<f64> {
    let n = h.nrows();
    DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let z = h[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// Inverse of [`real_embed`] on its range; averages the two copies so that a
/// symmetric matrix that is only approximately structured maps to the
/// nearest Hermitian matrix.
pub fn complex_from_embed(x: &DMatrix<f64>) -> CMatrix {
    let n = x.nrows() / 2;
    CMatrix::from_fn(n, n, |i, j| {
        let re = 0.5 * (x[(i, j)] + x[(i + n, j + n)]);
        let im = 0.5 * (x[(i + n, j)] - x[(i, j + n)]);
        Complex64::new(re, im)
    })
}

/// Largest eigenvalue of a Hermitian matrix with a unit eigenvector whose
/// first non-negligible entry is real-positive.
pub fn max_eig_pair(h: &CMatrix) -> (f64, CVector) {
    assert!(h.is_square(), "matrix must be square");
    let n = h.nrows();
    let herm = (h + h.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let (imax, lmax) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
    let mut v: CVector = eig.eigenvectors.column(imax).into_owned();
    let norm = v.norm();
    if norm > 0.0 {
        v /= Complex64::new(norm, 0.0);
    }
    let scale = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if let Some(first) = (0..n).find(|&i| v[i].norm() > 1e-8 * scale) {
        let phase = v[first] / v[first].norm();
        v /= phase;
        v[first] = Complex64::new(v[first].norm(), 0.0);
    }
    (lmax, v)
}

/// Hermitian eigenvalues in ascending order.
pub fn hermitian_eigenvalues(h: &CMatrix) -> Vec<f64> {
    let herm = (h + h.adjoint()) * Complex64::new(0.5, 0.0);
    let mut ev: Vec<f64> = SymmetricEigen::new(herm).eigenvalues.iter().cloned().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// `x xᴴ`.
pub fn outer(x: &CVector) -> CMatrix {
    x * x.adjoint()
}

/// Real diagonal as a complex vector helper used by callers building ops.
pub fn real_vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
