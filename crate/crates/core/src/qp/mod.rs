//! Small convex solver for the per-agent trajectory subproblems.
//!
//! A [`ConvexSubproblem`] is a convex quadratic plus weighted absolute-value
//! and hinge penalties on affine rows, with explicit linear constraints and
//! an infinity-norm trust bound. [`reformulate`] turns it into a standard QP
//! `min 1/2 x'Px + q'x  s.t.  l <= Ax <= u` by adding one epigraph slack per
//! penalty, and [`solve_qp`] solves that with an operator-splitting method
//! followed by an active-set polish.

mod ipm;
mod ldl;
mod solver;
mod sparse;

pub use ldl::{rcm_order, EnvelopeLdl};
pub use solver::{solve_qp, solve_qp_from, QpAlgorithm, QpSettings, QpSolution, QpStatus};
pub use sparse::CsrMatrix;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Sparse coefficient row `a`, so that `a . x = sum coeff * x[index]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
}

impl LinearRow {
    pub fn new(coeffs: Vec<(usize, f64)>) -> Self {
        Self { coeffs }
    }

    pub fn from_dense(a: &[f64]) -> Self {
        Self { coeffs: a.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect() }
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, v)| v * x[j]).sum()
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }
}

/// `weight * phi(a . x + offset)` with `phi` either `|.|` or `max(0, .)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyTerm {
    pub weight: f64,
    pub row: LinearRow,
    pub offset: f64,
}

impl PenaltyTerm {
    pub fn new(weight: f64, row: LinearRow, offset: f64) -> Self {
        Self { weight, row, offset }
    }

    pub fn affine(&self, x: &[f64]) -> f64 {
        self.row.dot(x) + self.offset
    }
}

/// `a . x = rhs`
#[derive(Debug, Clone, PartialEq)]
pub struct EqRow {
    pub row: LinearRow,
    pub rhs: f64,
}

/// `lower <= a . x <= upper`; either side may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct IneqRow {
    pub row: LinearRow,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexSubproblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub l1_terms: Vec<PenaltyTerm>,
    pub hinge_terms: Vec<PenaltyTerm>,
    pub eq_rows: Vec<EqRow>,
    pub ineq_rows: Vec<IneqRow>,
    /// Bound `r` on `|x|_inf`; `f64::INFINITY` disables it.
    pub trust_bound: f64,
}

impl ConvexSubproblem {
    pub fn new(p: DMatrix<f64>, q: DVector<f64>) -> Self {
        Self {
            p,
            q,
            l1_terms: Vec::new(),
            hinge_terms: Vec::new(),
            eq_rows: Vec::new(),
            ineq_rows: Vec::new(),
            trust_bound: f64::INFINITY,
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.p.nrows() != n || self.p.ncols() != n {
            return Err(Error::InvalidInput("P and q dimensions differ".into()));
        }
        if (&self.p - self.p.transpose()).amax() > 1e-8 * (1.0 + self.p.amax()) {
            return Err(Error::InvalidInput("P is not symmetric".into()));
        }
        let bad_weight = self.l1_terms.iter().chain(&self.hinge_terms).any(|t| !(t.weight > 0.0));
        if bad_weight || !(self.trust_bound > 0.0) {
            return Err(Error::InvalidInput("penalty weights and trust bound must be positive".into()));
        }
        let rows = self
            .l1_terms
            .iter()
            .map(|t| &t.row)
            .chain(self.hinge_terms.iter().map(|t| &t.row))
            .chain(self.eq_rows.iter().map(|r| &r.row))
            .chain(self.ineq_rows.iter().map(|r| &r.row));
        for r in rows {
            if r.coeffs.iter().any(|&(j, _)| j >= n) {
                return Err(Error::InvalidInput("constraint row indexes past the variable count".into()));
            }
        }
        Ok(())
    }

    /// Full objective including penalty terms (constraints are not checked).
    pub fn objective(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        let mut f = 0.5 * xv.dot(&(&self.p * &xv)) + self.q.dot(&xv);
        f += self.l1_terms.iter().map(|t| t.weight * t.affine(x).abs()).sum::<f64>();
        f += self.hinge_terms.iter().map(|t| t.weight * t.affine(x).max(0.0)).sum::<f64>();
        f
    }

    /// Largest violation of the explicit constraints and the trust bound.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let eq = self.eq_rows.iter().map(|r| (r.row.dot(x) - r.rhs).abs());
        let ineq = self.ineq_rows.iter().map(|r| {
            let v = r.row.dot(x);
            (r.lower - v).max(v - r.upper).max(0.0)
        });
        let trust = x.iter().map(|v| (v.abs() - self.trust_bound).max(0.0));
        eq.chain(ineq).chain(trust).fold(0.0, f64::max)
    }
}

/// `min 1/2 x'Px + q'x  s.t.  l <= Ax <= u`
#[derive(Debug, Clone, PartialEq)]
pub struct StandardQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: CsrMatrix,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
    /// Number of leading variables that belong to the original subproblem.
    pub n_original: usize,
}

impl StandardQp {
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        0.5 * xv.dot(&(&self.p * &xv)) + self.q.dot(&xv)
    }
}

/// Epigraph encoding of a [`ConvexSubproblem`].
///
/// Variables are `[x, t_1 .. t_k]` with one slack per penalty term. Each
/// penalty row is rescaled to unit norm first, with its weight multiplied by
/// the removed norm, so that `lambda |a.x + b| = lambda |a| |a.x/|a| + b/|a||`.
///
/// * L1 term: `t >= a.x + b`, `t >= -(a.x + b)`, cost `lambda t`.
/// * hinge term: `t >= 0`, `t >= a.x + b`, cost `tau t`.
/// * trust bound: one two-sided row `-r <= x_i <= r` per original variable.
pub fn reformulate(p: &ConvexSubproblem) -> StandardQp {
    let n = p.dim();
    let k = p.l1_terms.len() + p.hinge_terms.len();
    let total = n + k;

    let mut big_p = DMatrix::zeros(total, total);
    big_p.view_mut((0, 0), (n, n)).copy_from(&p.p);
    let mut q = DVector::zeros(total);
    q.rows_mut(0, n).copy_from(&p.q);

    let mut a = CsrMatrix::new(total);
    let mut l = Vec::new();
    let mut u = Vec::new();

    for row in &p.eq_rows {
        a.push_row(row.row.coeffs.iter().copied());
        l.push(row.rhs);
        u.push(row.rhs);
    }
    for row in &p.ineq_rows {
        a.push_row(row.row.coeffs.iter().copied());
        l.push(row.lower);
        u.push(row.upper);
    }

    let normalized = |t: &PenaltyTerm| {
        let norm = t.row.norm();
        let s = if norm > 0.0 { 1.0 / norm } else { 1.0 };
        let coeffs: Vec<(usize, f64)> = t.row.coeffs.iter().map(|&(j, v)| (j, v * s)).collect();
        (t.weight / s, coeffs, t.offset * s)
    };

    let mut slack = n;
    for t in &p.l1_terms {
        let (w, coeffs, b) = normalized(t);
        q[slack] = w;
        // t - a.x >= b
        a.push_row(coeffs.iter().map(|&(j, v)| (j, -v)).chain([(slack, 1.0)]));
        l.push(b);
        u.push(f64::INFINITY);
        // t + a.x >= -b
        a.push_row(coeffs.iter().copied().chain([(slack, 1.0)]));
        l.push(-b);
        u.push(f64::INFINITY);
        slack += 1;
    }
    for t in &p.hinge_terms {
        let (w, coeffs, b) = normalized(t);
        q[slack] = w;
        a.push_row([(slack, 1.0)]);
        l.push(0.0);
        u.push(f64::INFINITY);
        a.push_row(coeffs.iter().map(|&(j, v)| (j, -v)).chain([(slack, 1.0)]));
        l.push(b);
        u.push(f64::INFINITY);
        slack += 1;
    }
    if p.trust_bound.is_finite() {
        for j in 0..n {
            a.push_row([(j, 1.0)]);
            l.push(-p.trust_bound);
            u.push(p.trust_bound);
        }
    }

    StandardQp { p: big_p, q, a, l: DVector::from_vec(l), u: DVector::from_vec(u), n_original: n }
}

/// Reformulates and solves `p`, returning the solution restricted to the
/// original variables and the full penalized objective.
pub fn solve_subproblem(p: &ConvexSubproblem, settings: &QpSettings, x0: Option<&[f64]>) -> Result<QpSolution> {
    p.validate()?;
    let qp = reformulate(p);
    let warm: Option<Vec<f64>> = x0.map(|x| {
        let mut full = x.to_vec();
        full.extend(p.l1_terms.iter().map(|t| t.affine(x).abs()));
        full.extend(p.hinge_terms.iter().map(|t| t.affine(x).max(0.0)));
        full
    });
    let mut sol = solve_qp_from(&qp, settings, warm.as_deref());
    sol.x.truncate(p.dim());
    sol.objective = p.objective(&sol.x);
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn soft_threshold(v: f64, k: f64) -> f64 {
        v.signum() * (v.abs() - k).max(0.0)
    }

    #[test]
    fn empty_encoding_keeps_problem() {
        let mut p = ConvexSubproblem::new(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, -1.0]));
        p.ineq_rows.push(IneqRow { row: LinearRow::from_dense(&[1.0, 1.0]), lower: -1.0, upper: 1.0 });
        p.trust_bound = 2.0;
        let qp = reformulate(&p);
        assert_eq!(qp.dim(), 2);
        assert_eq!(qp.p, p.p);
        assert_eq!(qp.q, p.q);
        assert_eq!(qp.a.nrows, 3);
        assert_eq!(qp.l.as_slice(), &[-1.0, -2.0, -2.0]);
        assert_eq!(qp.u.as_slice(), &[1.0, 2.0, 2.0]);
    }

    #[test]
    fn l1_term_gives_soft_threshold() {
        let rho = 2.0;
        let lambda = 0.5;
        for v in [-3.0, -0.2, 0.0, 0.1, 0.25, 1.7] {
            let mut p = ConvexSubproblem::new(DMatrix::from_element(1, 1, rho), DVector::from_element(1, -rho * v));
            p.l1_terms.push(PenaltyTerm::new(lambda, LinearRow::from_dense(&[1.0]), 0.0));
            let sol = solve_subproblem(&p, &QpSettings::default(), None).unwrap();
            assert_eq!(sol.status, QpStatus::Optimal);
            assert!((sol.x[0] - soft_threshold(v, lambda / rho)).abs() < 1e-6, "v={v}: {}", sol.x[0]);
        }
    }

    #[test]
    fn inactive_hinge_leaves_minimizer() {
        let mut p = ConvexSubproblem::new(DMatrix::identity(1, 1), DVector::zeros(1));
        p.hinge_terms.push(PenaltyTerm::new(3.0, LinearRow::from_dense(&[1.0]), -1.0));
        let sol = solve_subproblem(&p, &QpSettings::default(), None).unwrap();
        assert!(sol.x[0].abs() < 1e-8);
    }

    #[test]
    fn penalty_rows_are_normalized() {
        let mut p = ConvexSubproblem::new(DMatrix::identity(2, 2), DVector::zeros(2));
        p.l1_terms.push(PenaltyTerm::new(2.0, LinearRow::from_dense(&[3.0, 4.0]), 10.0));
        let qp = reformulate(&p);
        assert!((qp.q[2] - 10.0).abs() < 1e-12);
        let row: Vec<_> = qp.a.row(1).collect();
        assert!((row[0].1 - 0.6).abs() < 1e-12 && (row[1].1 - 0.8).abs() < 1e-12);
        assert!((qp.l[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn validate_rejects_bad_inputs() {
        let mut p = ConvexSubproblem::new(DMatrix::identity(2, 2), DVector::zeros(2));
        p.trust_bound = 0.0;
        assert!(p.validate().is_err());
        let mut p = ConvexSubproblem::new(DMatrix::identity(2, 2), DVector::zeros(2));
        p.l1_terms.push(PenaltyTerm::new(-1.0, LinearRow::from_dense(&[1.0]), 0.0));
        assert!(p.validate().is_err());
    }
}
