//! Primal log-barrier path following.
//!
//! The real problem is
//!
//! ```text
//! minimize ⟨C, X⟩ + cᵀx   s.t.  ⟨A_k, X⟩ + a_kᵀx = b_k,  X ≻ 0,  x > 0,
//!                               h_L(x) = Σ α ln x_j − βᵀx − γ > 0,
//! ```
//!
//! where inequality rows have already received a slack scalar. For a
//! barrier weight `t` each centering step minimizes
//! `t·obj − ln det X − Σ ln x − Σ ln h_L` over the affine set by equality-
//! constrained Newton steps. The Hessian inverse on the block is
//! `E ↦ X E X`, so the Newton system reduces to an `m × m` Schur complement
//! `M_kl = ⟨A_k, X A_l X⟩ + a_kᵀ H_x⁻¹ a_l`.
//!
//! Phase 1 substitutes `X = Y − s̃ I`, `x = y − s̃ 1` and minimizes `s̃`
//! from a least-squares start with a large shift; it stops as soon as
//! `s̃ < 0`, which yields a strictly feasible start for phase 2.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use super::ops::{sandwich, OpCache, RealOp};
use super::{complex_from_embed, SdpProblem, SdpSolution, SdpStatus, Sense, SolverOptions};

const MU: f64 = 20.0;
const CENTER_TOL: f64 = 1e-7;
const SHIFT_FLOOR: f64 = 1.0;
/// Weight of the size penalty in phase 1, relative to the start's size.
const PHASE1_REG: f64 = 1e-2;
const PHASE1_REG_FLOOR: f64 = 1e-12;
const UNBOUNDED: f64 = -1e9;

struct Row {
    a: RealOp,
    s: Vec<(usize, f64)>,
    b: f64,
}

struct LogRow {
    alpha: Vec<(usize, f64)>,
    beta: Vec<(usize, f64)>,
    gamma: f64,
}

impl LogRow {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let mut h = -self.gamma;
        for &(j, a) in &self.alpha {
            if x[j] <= 0.0 {
                return f64::NEG_INFINITY;
            }
            h += a * x[j].ln();
        }
        for &(j, b) in &self.beta {
            h -= b * x[j];
        }
        h
    }

    fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        for &(j, a) in &self.alpha {
            g[j] += a / x[j];
        }
        for &(j, b) in &self.beta {
            g[j] -= b;
        }
        g
    }
}

struct RealProblem {
    d: usize,
    p: usize,
    c: RealOp,
    cvec: DVector<f64>,
    rows: Vec<Row>,
    logs: Vec<LogRow>,
}

#[derive(Clone)]
struct Point {
    x: DMatrix<f64>,
    s: DVector<f64>,
}

struct Step {
    dx: DMatrix<f64>,
    ds: DVector<f64>,
    decrement_sq: f64,
    nu: DVector<f64>,
}

impl RealProblem {
    fn nu_bar(&self) -> f64 {
        (self.d + self.p + self.logs.len()) as f64
    }

    fn objective(&self, pt: &Point) -> f64 {
        self.c.inner(&pt.x) + self.cvec.dot(&pt.s)
    }

    fn row_value(&self, k: usize, pt: &Point) -> f64 {
        let r = &self.rows[k];
        r.a.inner(&pt.x) + r.s.iter().map(|&(j, v)| v * pt.s[j]).sum::<f64>()
    }

    fn residual_inf(&self, pt: &Point) -> f64 {
        (0..self.rows.len())
            .map(|k| (self.rows[k].b - self.row_value(k, pt)).abs())
            .fold(0.0, f64::max)
    }

    /// Barrier objective, `None` outside the domain.
    fn barrier(&self, pt: &Point, t: f64) -> Option<f64> {
        if pt.s.iter().any(|v| !(*v > 0.0)) {
            return None;
        }
        let chol = Cholesky::new(pt.x.clone())?;
        let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let mut f = t * self.objective(pt) - logdet - pt.s.iter().map(|v| v.ln()).sum::<f64>();
        for l in &self.logs {
            let h = l.value(&pt.s);
            if !(h > 0.0) {
                return None;
            }
            f -= h.ln();
        }
        f.is_finite().then_some(f)
    }

    fn newton(&self, pt: &Point, t: f64) -> Option<Step> {
        let d = self.d;
        let p = self.p;
        let m = self.rows.len();
        let x = &pt.x;

        // Scalar gradient and Hessian.
        let mut gs = &self.cvec * t;
        let mut hs = DMatrix::zeros(p, p);
        for j in 0..p {
            gs[j] -= 1.0 / pt.s[j];
            hs[(j, j)] += 1.0 / (pt.s[j] * pt.s[j]);
        }
        for l in &self.logs {
            let h = l.value(&pt.s);
            let gh = l.grad(&pt.s);
            gs -= &gh / h;
            hs.ger(1.0 / (h * h), &gh, &gh, 1.0);
            for &(j, a) in &l.alpha {
                hs[(j, j)] += a / (pt.s[j] * pt.s[j] * h);
            }
        }
        let hs_chol = if p > 0 { Some(Cholesky::new(hs)?) } else { None };
        let hs_solve = |v: &DVector<f64>| -> DVector<f64> {
            match &hs_chol {
                Some(c) => c.solve(v),
                None => DVector::zeros(0),
            }
        };

        let c_cache = self.c.cache(x);
        let caches: Vec<OpCache> = self.rows.iter().map(|r| r.a.cache(x)).collect();
        let svecs: Vec<DVector<f64>> = self
            .rows
            .iter()
            .map(|r| {
                let mut v = DVector::zeros(p);
                for &(j, c) in &r.s {
                    v[j] += c;
                }
                v
            })
            .collect();
        let hinv_s: Vec<DVector<f64>> = svecs.iter().map(&hs_solve).collect();
        let hinv_g = hs_solve(&gs);

        let mut schur = DMatrix::zeros(m, m);
        let mut rhs = DVector::zeros(m);
        for k in 0..m {
            let rk = &self.rows[k];
            for l in k..m {
                let v = sandwich(&rk.a, &caches[k], &self.rows[l].a, &caches[l], x) + svecs[k].dot(&hinv_s[l]);
                schur[(k, l)] = v;
                schur[(l, k)] = v;
            }
            let ax = rk.a.inner(x);
            let res = rk.b - ax - svecs[k].dot(&pt.s);
            let ahg = t * sandwich(&self.c, &c_cache, &rk.a, &caches[k], x) - ax + svecs[k].dot(&hinv_g);
            rhs[k] = -ahg - res;
        }
        let nu = if m > 0 { solve_psd(schur.clone(), &rhs)? } else { DVector::zeros(0) };

        let mut tmat = self.c.to_dense(d) * t;
        for (k, r) in self.rows.iter().enumerate() {
            r.a.add_into(&mut tmat, nu[k]);
        }
        let xt = x * &tmat;
        let mut dx = x - &xt * x;
        dx = (&dx + dx.transpose()) * 0.5;

        let mut rhs_s = gs.clone();
        for k in 0..m {
            rhs_s.axpy(nu[k], &svecs[k], 1.0);
        }
        let mut ds = if p > 0 { -hs_solve(&rhs_s) } else { DVector::zeros(0) };

        // `X T X` cancels against `X` at large `t`; one refinement pass
        // restores the equality residual the step is meant to achieve.
        if m > 0 {
            let miss = DVector::from_fn(m, |k, _| {
                let r = &self.rows[k];
                let target = r.b - r.a.inner(x) - svecs[k].dot(&pt.s);
                target - r.a.inner(&dx) - svecs[k].dot(&ds)
            });
            if let Some(dnu) = solve_psd(schur, &miss) {
                let mut smat = DMatrix::zeros(d, d);
                let mut sv = DVector::zeros(p);
                for k in 0..m {
                    self.rows[k].a.add_into(&mut smat, dnu[k]);
                    sv.axpy(dnu[k], &svecs[k], 1.0);
                }
                let corr = x * smat * x;
                dx += (&corr + corr.transpose()) * 0.5;
                if p > 0 {
                    ds += hs_solve(&sv);
                }
            }
        }

        let g_dot = t * self.c.inner(&dx) - (d as f64 - xt.trace()) + gs.dot(&ds);
        if !g_dot.is_finite() || dx.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(Step {
            dx,
            ds,
            decrement_sq: -g_dot,
            nu,
        })
    }
}

fn solve_psd(mut a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(c) = Cholesky::new(a.clone()) {
        let x = c.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    let scale = a.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    for i in 0..a.nrows() {
        a[(i, i)] += 1e-12 * scale;
    }
    if let Some(c) = Cholesky::new(a.clone()) {
        return Some(c.solve(b));
    }
    a.lu().solve(b)
}

enum PathEnd {
    Converged,
    Stopped,
    Unbounded,
    MaxIter,
}

struct Path {
    t: f64,
    nu: DVector<f64>,
}

/// Follows the central path from `pt` until the duality-gap estimate drops
/// below `gap_tol(obj)` or `stop` fires.
fn follow(
    prob: &RealProblem,
    pt: &mut Point,
    path: &mut Path,
    max_iter: usize,
    iters: &mut usize,
    gap_tol: impl Fn(f64) -> f64,
    mut stop: impl FnMut(&Point) -> bool,
) -> PathEnd {
    let nu_bar = prob.nu_bar();
    let mut steps = 0;
    loop {
        // Centering.
        loop {
            if steps >= max_iter {
                return PathEnd::MaxIter;
            }
            let Some(step) = prob.newton(pt, path.t) else {
                break;
            };
            path.nu = step.nu.clone();
            if step.decrement_sq / 2.0 <= CENTER_TOL {
                break;
            }
            let Some(f0) = prob.barrier(pt, path.t) else {
                break;
            };
            let mut alpha = 1.0;
            let mut accepted = None;
            let mut stalled = false;
            while alpha > 1e-14 {
                let trial = Point {
                    x: &pt.x + &step.dx * alpha,
                    s: &pt.s + &step.ds * alpha,
                };
                if let Some(f) = prob.barrier(&trial, path.t) {
                    if f <= f0 - 0.25 * alpha * step.decrement_sq {
                        // Progress below rounding level of the barrier value.
                        stalled = f0 - f <= 1e-13 * f0.abs().max(1.0);
                        accepted = Some(trial);
                        break;
                    }
                }
                alpha *= 0.5;
            }
            steps += 1;
            *iters += 1;
            let Some(next) = accepted else {
                break;
            };
            *pt = next;
            if stalled {
                break;
            }
            if stop(pt) {
                return PathEnd::Stopped;
            }
            if prob.objective(pt) < UNBOUNDED {
                return PathEnd::Unbounded;
            }
        }
        if stop(pt) {
            return PathEnd::Stopped;
        }
        let obj = prob.objective(pt);
        if obj < UNBOUNDED {
            return PathEnd::Unbounded;
        }
        if nu_bar / path.t <= gap_tol(obj) {
            return PathEnd::Converged;
        }
        path.t *= MU;
    }
}

/// Minimum-norm solution of the equality rows.
fn least_squares_start(prob: &RealProblem) -> Option<Point> {
    let d = prob.d;
    let m = prob.rows.len();
    if m == 0 {
        return Some(Point {
            x: DMatrix::zeros(d, d),
            s: DVector::zeros(prob.p),
        });
    }
    let dense: Vec<DMatrix<f64>> = prob.rows.iter().map(|r| r.a.to_dense(d)).collect();
    let svecs: Vec<DVector<f64>> = prob
        .rows
        .iter()
        .map(|r| {
            let mut v = DVector::zeros(prob.p);
            for &(j, c) in &r.s {
                v[j] += c;
            }
            v
        })
        .collect();
    let mut gram = DMatrix::zeros(m, m);
    for k in 0..m {
        for l in k..m {
            let v = dense[k].dot(&dense[l]) + svecs[k].dot(&svecs[l]);
            gram[(k, l)] = v;
            gram[(l, k)] = v;
        }
    }
    let b = DVector::from_iterator(m, prob.rows.iter().map(|r| r.b));
    let eig = SymmetricEigen::new(gram);
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let qtb = eig.eigenvectors.transpose() * &b;
    let coef = DVector::from_fn(m, |i, _| {
        let l = eig.eigenvalues[i];
        if l.abs() > 1e-12 * lmax {
            qtb[i] / l
        } else {
            0.0
        }
    });
    let lambda = &eig.eigenvectors * coef;
    let mut x = DMatrix::zeros(d, d);
    let mut s = DVector::zeros(prob.p);
    for k in 0..m {
        x += &dense[k] * lambda[k];
        s.axpy(lambda[k], &svecs[k], 1.0);
    }
    let pt = Point { x, s };
    let bnorm = b.amax();
    if prob.residual_inf(&pt) > 1e-8 * (1.0 + bnorm) {
        return None;
    }
    Some(pt)
}

fn min_eig(x: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(x.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Phase 1: returns a strictly feasible point or `None`.
fn phase_one(prob: &RealProblem, opts: &SolverOptions, iters: &mut usize) -> Result<Point, SdpStatus> {
    let d = prob.d;
    let p = prob.p;
    let start = least_squares_start(prob).ok_or(SdpStatus::Infeasible)?;

    let interior = |pt: &Point| prob.barrier(pt, 0.0).is_some();
    if interior(&start) && min_eig(&start.x) > 1e-9 {
        return Ok(start);
    }

    // Shifted problem in (Y, y, s') with s' = s̃ + SHIFT_FLOOR stored last.
    let sp = p;
    let taus: Vec<f64> = prob
        .rows
        .iter()
        .map(|r| r.a.trace() + r.s.iter().map(|(_, v)| v).sum::<f64>())
        .collect();
    let rows = prob
        .rows
        .iter()
        .zip(&taus)
        .map(|(r, &tau)| {
            let mut s = r.s.clone();
            s.push((sp, -tau));
            Row {
                a: r.a.clone(),
                s,
                b: r.b - tau * SHIFT_FLOOR,
            }
        })
        .collect();
    let logs = prob
        .logs
        .iter()
        .map(|l| {
            let bsum: f64 = l.beta.iter().map(|(_, v)| v).sum();
            let mut beta = l.beta.clone();
            beta.push((sp, -(bsum + 1.0)));
            LogRow {
                alpha: l.alpha.clone(),
                beta,
                gamma: l.gamma + (bsum + 1.0) * SHIFT_FLOOR,
            }
        })
        .collect();
    let mut aux = RealProblem {
        d,
        p: p + 1,
        c: RealOp::zero(),
        cvec: DVector::zeros(p + 1),
        rows,
        logs,
    };

    let lo = min_eig(&start.x).min(start.s.iter().cloned().fold(f64::INFINITY, f64::min));
    let mut shift = (-lo).max(0.0) + 1.0;
    let mut pt = None;
    for _ in 0..80 {
        let mut s = DVector::zeros(p + 1);
        for j in 0..p {
            s[j] = start.s[j] + shift;
        }
        s[sp] = shift + SHIFT_FLOOR;
        let cand = Point {
            x: &start.x + DMatrix::identity(d, d) * shift,
            s,
        };
        if aux.barrier(&cand, 0.0).is_some() {
            pt = Some(cand);
            break;
        }
        shift *= 2.0;
    }
    let mut pt = pt.ok_or(SdpStatus::Infeasible)?;
    // A small size penalty keeps the phase-1 centering problem bounded.
    // It is relaxed whenever it alone keeps the shift nonnegative.
    let size = pt.x.trace() + pt.s.iter().take(p).sum::<f64>();
    let mut reg = PHASE1_REG / (1.0 + size);
    let shifted = |pt: &Point| pt.s[sp] - SHIFT_FLOOR;
    let mut budget = opts.max_iter;
    let mut last_shift = None;
    loop {
        aux.c = RealOp::structured(Vec::new(), (0..d).map(|i| (i, reg)));
        aux.cvec = DVector::from_element(p + 1, reg);
        aux.cvec[sp] = 1.0;
        let obj0 = aux.objective(&pt);
        let mut path = Path {
            t: aux.nu_bar() / (1.0 + obj0.abs()),
            nu: DVector::zeros(aux.rows.len()),
        };
        let before = *iters;
        let end = follow(&aux, &mut pt, &mut path, budget, iters, |_| 1e-11, |pt| shifted(pt) < 0.0);
        budget = budget.saturating_sub(*iters - before);
        match end {
            PathEnd::Stopped => break,
            PathEnd::MaxIter if shifted(&pt) < 0.0 => break,
            PathEnd::MaxIter => return Err(SdpStatus::MaxIter),
            // A shift that survives a much weaker penalty is not an
            // artifact of it.
            PathEnd::Converged if last_shift.is_some_and(|s: f64| (s - shifted(&pt)).abs() <= 1e-2 * s) => {
                return Err(SdpStatus::Infeasible)
            }
            PathEnd::Converged if reg > PHASE1_REG_FLOOR && budget > 0 => {
                last_shift = Some(shifted(&pt));
                reg *= 1e-3;
            }
            _ => return Err(SdpStatus::Infeasible),
        }
    }
    let st = shifted(&pt);
    let out = Point {
        x: &pt.x - DMatrix::identity(d, d) * st,
        s: DVector::from_fn(p, |j, _| pt.s[j] - st),
    };
    if prob.barrier(&out, 0.0).is_none() {
        return Err(SdpStatus::Infeasible);
    }
    Ok(out)
}

struct Scaled {
    prob: RealProblem,
    obj_scale: f64,
    row_scale: Vec<f64>,
}

fn build(p: &SdpProblem) -> Scaled {
    let n = p.block_dim;
    let d = 2 * n;
    let num_slack = p.constraints.iter().filter(|c| c.sense != Sense::Eq).count();
    let ptot = p.num_scalars + num_slack;

    let mut c = RealOp::from_herm(&p.objective, n);
    let mut cvec = DVector::zeros(ptot);
    for (j, v) in p.objective_scalars.iter().enumerate() {
        cvec[j] = *v;
    }
    let obj_norm = (c.norm_sq(d) + cvec.norm_squared()).sqrt();
    let obj_scale = if obj_norm > 0.0 { obj_norm } else { 1.0 };
    c.scale(1.0 / obj_scale);
    cvec /= obj_scale;

    let mut rows = Vec::with_capacity(p.constraints.len());
    let mut row_scale = Vec::with_capacity(p.constraints.len());
    let mut next_slack = p.num_scalars;
    for con in &p.constraints {
        let mut a = RealOp::from_herm(&con.matrix, n);
        let mut s = con.scalars.clone();
        let norm = (a.norm_sq(d) + s.iter().map(|(_, v)| v * v).sum::<f64>()).sqrt();
        let scale = if norm > 0.0 { norm } else { 1.0 };
        match con.sense {
            Sense::Eq => {}
            Sense::Le => {
                s.push((next_slack, scale));
                next_slack += 1;
            }
            Sense::Ge => {
                s.push((next_slack, -scale));
                next_slack += 1;
            }
        }
        a.scale(1.0 / scale);
        s.iter_mut().for_each(|(_, v)| *v /= scale);
        rows.push(Row {
            a,
            s,
            b: con.rhs / scale,
        });
        row_scale.push(scale);
    }
    let logs = p
        .log_constraints
        .iter()
        .map(|l| LogRow {
            alpha: l.log_terms.clone(),
            beta: l.linear.clone(),
            gamma: l.rhs,
        })
        .collect();
    Scaled {
        prob: RealProblem {
            d,
            p: ptot,
            c,
            cvec,
            rows,
            logs,
        },
        obj_scale,
        row_scale,
    }
}

/// Embeds a user start point, filling in slacks; `None` unless strictly
/// feasible.
fn embed_start(scaled: &Scaled, p: &SdpProblem, x0: &crate::CMatrix, s0: &[f64]) -> Option<Point> {
    let prob = &scaled.prob;
    let x = super::real_embed(x0);
    let mut s = DVector::zeros(prob.p);
    for (j, v) in s0.iter().enumerate() {
        s[j] = *v;
    }
    for row in &prob.rows {
        let Some(&(j, coef)) = row.s.iter().find(|(j, _)| *j >= p.num_scalars) else {
            continue;
        };
        let rest = row.a.inner(&x)
            + row.s.iter().filter(|(i, _)| *i < p.num_scalars).map(|&(i, c)| c * s[i]).sum::<f64>();
        s[j] = (row.b - rest) / coef;
    }
    let pt = Point { x, s };
    let bnorm = prob.rows.iter().map(|r| r.b.abs()).fold(0.0, f64::max);
    (prob.barrier(&pt, 0.0).is_some() && prob.residual_inf(&pt) <= 1e-9 * (1.0 + bnorm)).then_some(pt)
}

pub(super) fn solve(p: &SdpProblem, opts: &SolverOptions, start: Option<(&crate::CMatrix, &[f64])>) -> SdpSolution {
    let scaled = build(p);
    let prob = &scaled.prob;
    let n = p.block_dim;
    let mut iters = 0;

    let fail = |status: SdpStatus, iters: usize| SdpSolution {
        x: crate::CMatrix::zeros(n, n),
        scalars: vec![0.0; p.num_scalars],
        status,
        objective_value: f64::NAN,
        dual_bound: f64::NAN,
        duals: vec![0.0; p.constraints.len()],
        primal_residual: f64::INFINITY,
        iterations: iters,
    };

    let warm = start.and_then(|(x0, s0)| embed_start(&scaled, p, x0, s0));
    let mut pt = match warm {
        Some(pt) => pt,
        None => match phase_one(prob, opts, &mut iters) {
            Ok(pt) => pt,
            Err(status) => return fail(status, iters),
        },
    };

    let obj0 = prob.objective(&pt);
    let mut path = Path {
        t: prob.nu_bar() / (1.0 + obj0.abs()),
        nu: DVector::zeros(prob.rows.len()),
    };
    let tol = opts.tol;
    let end = follow(
        prob,
        &mut pt,
        &mut path,
        opts.max_iter,
        &mut iters,
        |obj| tol * obj.abs().max(1.0),
        |_| false,
    );
    let status = match end {
        PathEnd::Converged => SdpStatus::Optimal,
        PathEnd::Unbounded => SdpStatus::Unbounded,
        PathEnd::MaxIter => SdpStatus::MaxIter,
        PathEnd::Stopped => unreachable!("phase 2 never stops early"),
    };

    let x = complex_from_embed(&pt.x);
    let scalars: Vec<f64> = pt.s.iter().take(p.num_scalars).cloned().collect();
    let objective_value = p.objective_at(&x, &scalars);
    let gap = prob.nu_bar() / path.t * scaled.obj_scale;
    let duals = (0..p.constraints.len())
        .map(|k| {
            let nu = path.nu.get(k).cloned().unwrap_or(0.0);
            -nu / path.t * scaled.obj_scale / scaled.row_scale[k]
        })
        .collect();
    SdpSolution {
        primal_residual: p.max_violation(&x, &scalars),
        x,
        scalars,
        status,
        objective_value,
        dual_bound: objective_value - gap,
        duals,
        iterations: iters,
    }
}
