//! Plain-text dump of an [`SdpProblem`] for offline cross-checking.
//!
//! ```text
//! sdp-text v1
//! dims <n> <s>
//! objective
//! row <re> <im> ... (n complex entries, n lines)
//! scalars <c_1> ... <c_s>
//! constraint <le|ge|eq> <rhs>
//! row ...
//! scalars <j>:<v> ...
//! log <rhs>
//! terms <j>:<alpha> ...
//! linear <j>:<beta> ...
//! end
//! ```
//!
//! Matrices are written dense and row-major. Blank lines and lines starting
//! with `#` are ignored.

use thiserror::Error;

use super::{Constraint, HermOp, LogConstraint, SdpProblem, Sense, MAX_BLOCK_DIM};
use crate::{CMatrix, Complex64};

const MAGIC: &str = "sdp-text v1";

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {msg}")]
pub struct TextError {
    pub line: usize,
    pub msg: String,
}

pub fn to_text(p: &SdpProblem) -> String {
    let n = p.block_dim;
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("dims {} {}\n", n, p.num_scalars));
    out.push_str("objective\n");
    write_matrix(&mut out, &p.objective.to_dense(n));
    out.push_str("scalars");
    for v in &p.objective_scalars {
        out.push_str(&format!(" {v:e}"));
    }
    out.push('\n');
    for c in &p.constraints {
        let sense = match c.sense {
            Sense::Le => "le",
            Sense::Ge => "ge",
            Sense::Eq => "eq",
        };
        out.push_str(&format!("constraint {sense} {:e}\n", c.rhs));
        write_matrix(&mut out, &c.matrix.to_dense(n));
        write_sparse(&mut out, "scalars", &c.scalars);
    }
    for l in &p.log_constraints {
        out.push_str(&format!("log {:e}\n", l.rhs));
        write_sparse(&mut out, "terms", &l.log_terms);
        write_sparse(&mut out, "linear", &l.linear);
    }
    out.push_str("end\n");
    out
}

fn write_matrix(out: &mut String, m: &CMatrix) {
    for i in 0..m.nrows() {
        out.push_str("row");
        for j in 0..m.ncols() {
            let z = m[(i, j)];
            out.push_str(&format!(" {:e} {:e}", z.re, z.im));
        }
        out.push('\n');
    }
}

fn write_sparse(out: &mut String, tag: &str, entries: &[(usize, f64)]) {
    out.push_str(tag);
    for (j, v) in entries {
        out.push_str(&format!(" {j}:{v:e}"));
    }
    out.push('\n');
}

struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')),
        );
        Self {
            inner: it.peekable(),
            last: 0,
        }
    }

    fn next(&mut self) -> Result<(usize, &'a str), TextError> {
        match self.inner.next() {
            Some((n, l)) => {
                self.last = n;
                Ok((n, l))
            }
            None => Err(TextError {
                line: self.last + 1,
                msg: "unexpected end of input".into(),
            }),
        }
    }

    /// Next line, which must start with `tag`; returns the remaining tokens.
    fn expect(&mut self, tag: &str) -> Result<(usize, Vec<&'a str>), TextError> {
        let (n, line) = self.next()?;
        let mut toks = line.split_whitespace();
        if toks.next() != Some(tag) {
            return Err(err(n, format!("expected `{tag}`")));
        }
        Ok((n, toks.collect()))
    }
}

fn err(line: usize, msg: impl Into<String>) -> TextError {
    TextError { line, msg: msg.into() }
}

fn num(line: usize, tok: &str) -> Result<f64, TextError> {
    let v: f64 = tok.parse().map_err(|_| err(line, format!("bad number `{tok}`")))?;
    if !v.is_finite() {
        return Err(err(line, "non-finite number"));
    }
    Ok(v)
}

fn count(line: usize, tok: &str) -> Result<usize, TextError> {
    tok.parse().map_err(|_| err(line, format!("bad count `{tok}`")))
}

fn read_matrix(lines: &mut Lines, n: usize) -> Result<CMatrix, TextError> {
    let mut m = CMatrix::zeros(n, n);
    for i in 0..n {
        let (ln, toks) = lines.expect("row")?;
        if toks.len() != 2 * n {
            return Err(err(ln, format!("row needs {} numbers, found {}", 2 * n, toks.len())));
        }
        for j in 0..n {
            m[(i, j)] = Complex64::new(num(ln, toks[2 * j])?, num(ln, toks[2 * j + 1])?);
        }
    }
    Ok(m)
}

fn read_sparse(line: usize, toks: &[&str], limit: usize) -> Result<Vec<(usize, f64)>, TextError> {
    toks.iter()
        .map(|t| {
            let (j, v) = t.split_once(':').ok_or_else(|| err(line, format!("expected index:value, got `{t}`")))?;
            let j = count(line, j)?;
            if j >= limit {
                return Err(err(line, format!("scalar index {j} out of range")));
            }
            Ok((j, num(line, v)?))
        })
        .collect()
}

pub fn parse_text(text: &str) -> Result<SdpProblem, TextError> {
    let mut lines = Lines::new(text);
    let (ln, magic) = lines.next()?;
    if magic != MAGIC {
        return Err(err(ln, format!("expected header `{MAGIC}`")));
    }
    let (ln, dims) = lines.expect("dims")?;
    if dims.len() != 2 {
        return Err(err(ln, "dims needs two values"));
    }
    let n = count(ln, dims[0])?;
    let s = count(ln, dims[1])?;
    if n == 0 || n > MAX_BLOCK_DIM {
        return Err(err(ln, format!("block dimension must lie in 1..={MAX_BLOCK_DIM}")));
    }
    if s > 1 << 16 {
        return Err(err(ln, "too many scalars"));
    }
    lines.expect("objective")?;
    let c = read_matrix(&mut lines, n)?;
    let (ln, cs) = lines.expect("scalars")?;
    if cs.len() != s {
        return Err(err(ln, format!("objective needs {s} scalar coefficients")));
    }
    let cvec = cs.iter().map(|t| num(ln, t)).collect::<Result<Vec<_>, _>>()?;
    let mut p = SdpProblem::new(n, s).minimize(HermOp::dense(c), cvec);

    loop {
        let (ln, line) = lines.next()?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "end" => {
                if toks.len() != 1 {
                    return Err(err(ln, "trailing tokens after `end`"));
                }
                break;
            }
            "constraint" => {
                if toks.len() != 3 {
                    return Err(err(ln, "constraint needs a sense and a right-hand side"));
                }
                let sense = match toks[1] {
                    "le" => Sense::Le,
                    "ge" => Sense::Ge,
                    "eq" => Sense::Eq,
                    other => return Err(err(ln, format!("unknown sense `{other}`"))),
                };
                let rhs = num(ln, toks[2])?;
                let a = read_matrix(&mut lines, n)?;
                let (ln2, st) = lines.expect("scalars")?;
                let scalars = read_sparse(ln2, &st, s)?;
                p.constraints.push(Constraint {
                    matrix: HermOp::dense(a),
                    scalars,
                    sense,
                    rhs,
                });
            }
            "log" => {
                if toks.len() != 2 {
                    return Err(err(ln, "log needs a right-hand side"));
                }
                let rhs = num(ln, toks[1])?;
                let (ln2, t) = lines.expect("terms")?;
                let log_terms = read_sparse(ln2, &t, s)?;
                if log_terms.is_empty() || log_terms.iter().any(|(_, a)| !(*a > 0.0)) {
                    return Err(err(ln2, "log weights must be positive and nonempty"));
                }
                let (ln3, t) = lines.expect("linear")?;
                let linear = read_sparse(ln3, &t, s)?;
                p.log_constraints.push(LogConstraint { log_terms, linear, rhs });
            }
            other => return Err(err(ln, format!("unexpected `{other}`"))),
        }
    }
    if let Ok((ln, _)) = lines.next() {
        return Err(err(ln, "content after `end`"));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::CVector;

    fn sample() -> SdpProblem {
        let v = CVector::from_vec(vec![Complex64::new(1.0, -0.5), Complex64::new(0.25, 2.0)]);
        SdpProblem::new(2, 2)
            .minimize(HermOp::identity(2), vec![0.5, 0.0])
            .constrain(HermOp::rank_one(1.5, v), vec![(1, -1.0)], Sense::Ge, 1.0)
            .constrain(HermOp::entry(0, 1.0), vec![], Sense::Eq, 0.3)
            .log_constrain(vec![(0, 1.0), (1, 2.0)], vec![(1, 0.1)], -3.0)
    }

    #[test]
    fn round_trip_preserves_problem() {
        let p = sample();
        let q = parse_text(&to_text(&p)).unwrap();
        assert_eq!(q.block_dim, 2);
        assert_eq!(q.num_scalars, 2);
        assert_eq!(q.objective_scalars, p.objective_scalars);
        assert_eq!(q.log_constraints, p.log_constraints);
        for (a, b) in p.constraints.iter().zip(&q.constraints) {
            assert_eq!(a.sense, b.sense);
            assert_eq!(a.rhs, b.rhs);
            assert_eq!(a.scalars, b.scalars);
            assert!((a.matrix.to_dense(2) - b.matrix.to_dense(2)).norm() < 1e-15);
        }
        assert_eq!(to_text(&q), to_text(&p));
    }

    #[test]
    fn reports_line_numbers() {
        let text = "sdp-text v1\ndims 1 0\nobjective\nrow 1 0\nscalars\nconstraint maybe 1\n";
        let e = parse_text(text).unwrap_err();
        assert_eq!(e.line, 6);
        assert!(parse_text("sdp-text v1\ndims 1 0\nobjective\nrow 1\n").is_err());
        assert!(parse_text("sdp-text v1\ndims 300 0\n").is_err());
        assert!(parse_text("").is_err());
    }

    #[test]
    fn rejects_out_of_range_indices() {
        let text = "sdp-text v1\ndims 1 1\nobjective\nrow 1 0\nscalars 0\nconstraint le 1\nrow 1 0\nscalars 3:1\nend\n";
        assert!(parse_text(text).is_err());
    }
}
