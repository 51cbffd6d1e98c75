//! Real symmetric operators acting on the embedded block.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::HermOp;

/// Either a dense symmetric matrix or `Σ s_r u_r u_rᵀ + Σ d_i e_i e_iᵀ`
/// with sorted, de-duplicated diagonal indices.
#[derive(Debug, Clone)]
pub(crate) enum RealOp {
    Dense(DMatrix<f64>),
    Structured {
        factors: Vec<(f64, DVector<f64>)>,
        diag: Vec<(usize, f64)>,
    },
}

/// Per-iterate products with the current `X`.
pub(crate) enum OpCache {
    /// `X A X` for dense operators.
    Sandwich(DMatrix<f64>),
    /// `X u_r` for each factor.
    Factors(Vec<DVector<f64>>),
}

impl RealOp {
    pub fn zero() -> Self {
        RealOp::Structured {
            factors: Vec::new(),
            diag: Vec::new(),
        }
    }

    pub fn structured(factors: Vec<(f64, DVector<f64>)>, diag: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, v) in diag {
            *merged.entry(i).or_insert(0.0) += v;
        }
        RealOp::Structured {
            factors: factors.into_iter().filter(|(s, _)| *s != 0.0).collect(),
            diag: merged.into_iter().filter(|(_, v)| *v != 0.0).collect(),
        }
    }

    /// Embedding of a Hermitian operator, scaled so that
    /// `⟨op, embed(X)⟩ = Re tr(A X)`.
    pub fn from_herm(h: &HermOp, n: usize) -> Self {
        match h {
            HermOp::Dense(m) => RealOp::Dense(super::real_embed(m) * 0.5),
            HermOp::Structured { rank_one, diag } => {
                let mut factors = Vec::with_capacity(2 * rank_one.len());
                for (s, v) in rank_one {
                    let p = DVector::from_fn(2 * n, |i, _| if i < n { v[i].re } else { v[i - n].im });
                    let r = DVector::from_fn(2 * n, |i, _| if i < n { -v[i].im } else { v[i - n].re });
                    factors.push((0.5 * s, p));
                    factors.push((0.5 * s, r));
                }
                let d = diag
                    .iter()
                    .flat_map(|&(i, v)| [(i, 0.5 * v), (i + n, 0.5 * v)]);
                RealOp::structured(factors, d)
            }
        }
    }

    pub fn scale(&mut self, f: f64) {
        match self {
            RealOp::Dense(m) => *m *= f,
            RealOp::Structured { factors, diag } => {
                factors.iter_mut().for_each(|(s, _)| *s *= f);
                diag.iter_mut().for_each(|(_, v)| *v *= f);
            }
        }
    }

    pub fn inner(&self, x: &DMatrix<f64>) -> f64 {
        match self {
            RealOp::Dense(a) => a.dot(x),
            RealOp::Structured { factors, diag } => {
                let f: f64 = factors.iter().map(|(s, u)| s * quad(x, u)).sum();
                f + diag.iter().map(|&(i, v)| v * x[(i, i)]).sum::<f64>()
            }
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            RealOp::Dense(a) => a.trace(),
            RealOp::Structured { factors, diag } => {
                factors.iter().map(|(s, u)| s * u.norm_squared()).sum::<f64>()
                    + diag.iter().map(|(_, v)| v).sum::<f64>()
            }
        }
    }

    pub fn add_into(&self, acc: &mut DMatrix<f64>, coef: f64) {
        match self {
            RealOp::Dense(a) => *acc += a * coef,
            RealOp::Structured { factors, diag } => {
                for (s, u) in factors {
                    acc.ger(coef * s, u, u, 1.0);
                }
                for &(i, v) in diag {
                    acc[(i, i)] += coef * v;
                }
            }
        }
    }

    pub fn to_dense(&self, d: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(d, d);
        self.add_into(&mut m, 1.0);
        m
    }

    pub fn norm_sq(&self, d: usize) -> f64 {
        match self {
            RealOp::Dense(a) => a.norm_squared(),
            RealOp::Structured { factors, diag } => {
                let mut acc = 0.0;
                for (s1, u1) in factors {
                    for (s2, u2) in factors {
                        let c = u1.dot(u2);
                        acc += s1 * s2 * c * c;
                    }
                    for &(i, v) in diag {
                        acc += 2.0 * s1 * v * u1[i] * u1[i];
                    }
                }
                let _ = d;
                acc + diag.iter().map(|(_, v)| v * v).sum::<f64>()
            }
        }
    }

    pub fn cache(&self, x: &DMatrix<f64>) -> OpCache {
        match self {
            RealOp::Dense(a) => OpCache::Sandwich(x * a * x),
            RealOp::Structured { factors, .. } => OpCache::Factors(factors.iter().map(|(_, u)| x * u).collect()),
        }
    }
}

fn quad(x: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
    u.dot(&(x * u))
}

/// `⟨A, X B X⟩` using cached products.
pub(crate) fn sandwich(a: &RealOp, ca: &OpCache, b: &RealOp, cb: &OpCache, x: &DMatrix<f64>) -> f64 {
    if let OpCache::Sandwich(pb) = cb {
        return a.inner(pb);
    }
    if let OpCache::Sandwich(pa) = ca {
        return b.inner(pa);
    }
    let (
        RealOp::Structured {
            factors: fa,
            diag: da,
        },
        OpCache::Factors(xa),
        RealOp::Structured {
            factors: fb,
            diag: db,
        },
        OpCache::Factors(xb),
    ) = (a, ca, b, cb)
    else {
        unreachable!("dense operators always carry a sandwich cache");
    };
    let mut acc = 0.0;
    for ((sb, _), xub) in fb.iter().zip(xb) {
        let mut inner = 0.0;
        for (sa, ua) in fa {
            let c = ua.dot(xub);
            inner += sa * c * c;
        }
        for &(i, w) in da {
            inner += w * xub[i] * xub[i];
        }
        acc += sb * inner;
    }
    for &(j, v) in db {
        let mut inner = 0.0;
        for ((sa, _), xua) in fa.iter().zip(xa) {
            inner += sa * xua[j] * xua[j];
        }
        for &(i, w) in da {
            let e = x[(i, j)];
            inner += w * e * e;
        }
        acc += v * inner;
    }
    acc
}
