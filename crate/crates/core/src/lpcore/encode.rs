//! Sparse LP assembly and epigraph encodings of polytopic norms.

use std::ops::Range;

use ndarray::Array2;

use super::{LinearProgram, NormKind};
use crate::scalar::Scalar;

/// `constant + Σ coef·x[var]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr<S> {
    pub terms: Vec<(usize, S)>,
    pub constant: S,
}

impl<S: Scalar> Default for AffineExpr<S> {
    fn default() -> Self {
        Self::constant(S::zero())
    }
}

impl<S: Scalar> AffineExpr<S> {
    pub fn constant(c: S) -> Self {
        AffineExpr {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(j: usize) -> Self {
        Self::term(j, S::one())
    }

    pub fn term(j: usize, coef: S) -> Self {
        AffineExpr {
            terms: vec![(j, coef)],
            constant: S::zero(),
        }
    }

    pub fn add_term(&mut self, j: usize, coef: S) {
        if coef != S::zero() {
            self.terms.push((j, coef));
        }
    }

    pub fn add_scaled(&mut self, other: &AffineExpr<S>, k: S) {
        if k == S::zero() {
            return;
        }
        self.constant += k * other.constant;
        for &(j, c) in &other.terms {
            self.add_term(j, k * c);
        }
    }

    pub fn scaled(&self, k: S) -> Self {
        let mut out = Self::default();
        out.add_scaled(self, k);
        out
    }

    pub fn minus(&self, other: &AffineExpr<S>) -> Self {
        let mut out = self.clone();
        out.add_scaled(other, -S::one());
        out
    }

    /// Merges repeated variables and drops zero coefficients; terms end up
    /// sorted by variable index.
    pub fn normalized(&self) -> Self {
        let mut terms = self.terms.clone();
        terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(usize, S)> = Vec::with_capacity(terms.len());
        for (j, c) in terms {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += c,
                _ => merged.push((j, c)),
            }
        }
        merged.retain(|t| t.1 != S::zero());
        AffineExpr {
            terms: merged,
            constant: self.constant,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|t| t.1 == S::zero())
    }

    pub fn eval(&self, x: &[S]) -> S {
        self.terms
            .iter()
            .fold(self.constant, |acc, &(j, c)| acc + c * x[j])
    }
}

/// Incrementally assembled LP with sparse rows.
#[derive(Debug, Clone, Default)]
pub struct LpBuilder<S> {
    bounds: Vec<(S, S)>,
    objective: Vec<S>,
    ineq: Vec<(Vec<(usize, S)>, S)>,
    eq: Vec<(Vec<(usize, S)>, S)>,
}

/// Rows and auxiliary variables appended by one encoder call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedRows {
    pub aux: Range<usize>,
    pub rows: Range<usize>,
}

impl<S: Scalar> LpBuilder<S> {
    pub fn new() -> Self {
        LpBuilder {
            bounds: Vec::new(),
            objective: Vec::new(),
            ineq: Vec::new(),
            eq: Vec::new(),
        }
    }

    pub fn add_var(&mut self, lower: S, upper: S) -> usize {
        self.bounds.push((lower, upper));
        self.objective.push(S::zero());
        self.bounds.len() - 1
    }

    pub fn add_vars(&mut self, count: usize, lower: S, upper: S) -> Range<usize> {
        let start = self.bounds.len();
        for _ in 0..count {
            self.add_var(lower, upper);
        }
        start..start + count
    }

    pub fn add_free_var(&mut self) -> usize {
        self.add_var(S::neg_infinity(), S::infinity())
    }

    pub fn num_vars(&self) -> usize {
        self.bounds.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq.len()
    }

    pub fn set_bounds(&mut self, j: usize, lower: S, upper: S) {
        self.bounds[j] = (lower, upper);
    }

    /// Sets the objective to the linear part of `expr` (minimised).
    pub fn set_objective(&mut self, expr: &AffineExpr<S>) {
        self.objective.iter_mut().for_each(|c| *c = S::zero());
        for &(j, c) in &expr.terms {
            self.objective[j] += c;
        }
    }

    /// Adds `lhs ≤ rhs`; returns the row index.
    pub fn add_le(&mut self, lhs: &AffineExpr<S>, rhs: &AffineExpr<S>) -> usize {
        let d = lhs.minus(rhs).normalized();
        self.ineq.push((d.terms, -d.constant));
        self.ineq.len() - 1
    }

    pub fn add_eq(&mut self, lhs: &AffineExpr<S>, rhs: &AffineExpr<S>) -> usize {
        let d = lhs.minus(rhs).normalized();
        self.eq.push((d.terms, -d.constant));
        self.eq.len() - 1
    }

    pub fn build(&self) -> LinearProgram<S> {
        let n = self.num_vars();
        let mut gi = Array2::zeros((self.ineq.len(), n));
        for (r, (terms, _)) in self.ineq.iter().enumerate() {
            for &(j, c) in terms {
                gi[[r, j]] += c;
            }
        }
        let mut ge = Array2::zeros((self.eq.len(), n));
        for (r, (terms, _)) in self.eq.iter().enumerate() {
            for &(j, c) in terms {
                ge[[r, j]] += c;
            }
        }
        LinearProgram {
            objective: self.objective.clone(),
            inequality_normals: gi,
            inequality_offsets: self.ineq.iter().map(|r| r.1).collect(),
            equality_normals: ge,
            equality_offsets: self.eq.iter().map(|r| r.1).collect(),
            variable_bounds: self.bounds.clone(),
        }
    }
}

/// Encodes `Σ_i |terms_i| ≤ bound`.
///
/// Constant terms fold into the bound. When at most `max_pattern_terms`
/// non-constant terms remain, every sign pattern becomes one row and no
/// auxiliary variables are added; otherwise each term gets a slack
/// `s_i ≥ ±term_i` and `Σ s_i ≤ bound`.
pub fn encode_abs_sum_bound<S: Scalar>(
    b: &mut LpBuilder<S>,
    terms: &[AffineExpr<S>],
    bound: &AffineExpr<S>,
    max_pattern_terms: usize,
) -> EncodedRows {
    let aux_start = b.num_vars();
    let row_start = b.num_ineq();
    let mut rhs = bound.clone();
    let mut live: Vec<AffineExpr<S>> = Vec::new();
    for t in terms {
        let t = t.normalized();
        if t.is_constant() {
            rhs.constant -= t.constant.abs();
        } else {
            live.push(t);
        }
    }
    if live.is_empty() {
        b.add_le(&AffineExpr::constant(S::zero()), &rhs);
    } else if live.len() <= max_pattern_terms.min(16) {
        for mask in 0..1usize << live.len() {
            let mut lhs = AffineExpr::default();
            for (i, t) in live.iter().enumerate() {
                let s = if mask >> i & 1 == 1 { -S::one() } else { S::one() };
                lhs.add_scaled(t, s);
            }
            b.add_le(&lhs, &rhs);
        }
    } else {
        let mut total = AffineExpr::default();
        for t in &live {
            let s = b.add_var(S::zero(), S::infinity());
            let sv = AffineExpr::var(s);
            b.add_le(t, &sv);
            b.add_le(&t.scaled(-S::one()), &sv);
            total.add_term(s, S::one());
        }
        b.add_le(&total, &rhs);
    }
    EncodedRows {
        aux: aux_start..b.num_vars(),
        rows: row_start..b.num_ineq(),
    }
}

/// Encodes `‖v‖ ≤ bound` for a vector of affine expressions.
pub fn encode_vector_norm_bound<S: Scalar>(
    b: &mut LpBuilder<S>,
    norm: NormKind,
    v: &[AffineExpr<S>],
    bound: &AffineExpr<S>,
) -> EncodedRows {
    let aux_start = b.num_vars();
    let row_start = b.num_ineq();
    match norm {
        NormKind::MaxAbs => {
            if v.is_empty() {
                b.add_le(&AffineExpr::constant(S::zero()), bound);
            }
            for e in v {
                b.add_le(e, bound);
                b.add_le(&e.scaled(-S::one()), bound);
            }
        }
        NormKind::SumAbs => {
            if v.is_empty() {
                b.add_le(&AffineExpr::constant(S::zero()), bound);
            }
            let mut total = AffineExpr::default();
            for e in v {
                let s = b.add_var(S::zero(), S::infinity());
                let sv = AffineExpr::var(s);
                b.add_le(e, &sv);
                b.add_le(&e.scaled(-S::one()), &sv);
                total.add_term(s, S::one());
            }
            if !v.is_empty() {
                b.add_le(&total, bound);
            }
        }
    }
    EncodedRows {
        aux: aux_start..b.num_vars(),
        rows: row_start..b.num_ineq(),
    }
}

/// Encodes the induced norm bound `‖M‖ ≤ bound` for a matrix of affine
/// expressions: every absolute row sum (ℓ∞) or column sum (ℓ1) is bounded,
/// with one slack per entry.
pub fn encode_matrix_norm_bound<S: Scalar>(
    b: &mut LpBuilder<S>,
    norm: NormKind,
    m: &Array2<AffineExpr<S>>,
    bound: &AffineExpr<S>,
) -> EncodedRows {
    let aux_start = b.num_vars();
    let row_start = b.num_ineq();
    let lines: Vec<Vec<AffineExpr<S>>> = match norm {
        NormKind::MaxAbs => m.outer_iter().map(|r| r.to_vec()).collect(),
        NormKind::SumAbs => m.columns().into_iter().map(|c| c.to_vec()).collect(),
    };
    if lines.is_empty() {
        b.add_le(&AffineExpr::constant(S::zero()), bound);
    }
    for line in &lines {
        encode_abs_sum_bound(b, line, bound, 0);
    }
    EncodedRows {
        aux: aux_start..b.num_vars(),
        rows: row_start..b.num_ineq(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lpcore::{solve, LpStatus};
    use ndarray::array;

    fn feasible(b: &LpBuilder<f64>) -> bool {
        solve(&b.build()).unwrap().status == LpStatus::Optimal
    }

    #[test]
    fn max_abs_vector_uses_four_rows() {
        let mut b = LpBuilder::<f64>::new();
        let v0 = b.add_free_var();
        let v1 = b.add_free_var();
        let t = b.add_free_var();
        let enc = encode_vector_norm_bound(
            &mut b,
            NormKind::MaxAbs,
            &[AffineExpr::var(v0), AffineExpr::var(v1)],
            &AffineExpr::var(t),
        );
        assert_eq!(enc.rows.len(), 4);
        assert!(enc.aux.is_empty());
    }

    #[test]
    fn sum_abs_vector_threshold() {
        for (bound, expect) in [(7.0, true), (6.9, false)] {
            let mut b = LpBuilder::<f64>::new();
            let v = [AffineExpr::constant(3.0), AffineExpr::constant(-4.0)];
            encode_vector_norm_bound(&mut b, NormKind::SumAbs, &v, &AffineExpr::constant(bound));
            assert_eq!(feasible(&b), expect);
        }
    }

    #[test]
    fn chebyshev_fit_reaches_zero() {
        let mut b = LpBuilder::<f64>::new();
        let v0 = b.add_free_var();
        let v1 = b.add_free_var();
        let t = b.add_free_var();
        let v = [
            AffineExpr {
                terms: vec![(v0, 1.0)],
                constant: -1.0,
            },
            AffineExpr {
                terms: vec![(v1, 1.0)],
                constant: -2.0,
            },
        ];
        encode_vector_norm_bound(&mut b, NormKind::MaxAbs, &v, &AffineExpr::var(t));
        b.set_objective(&AffineExpr::var(t));
        let sol = solve(&b.build()).unwrap();
        assert!(sol.objective_value.abs() < 1e-12);
        assert!((sol.point[v0] - 1.0).abs() < 1e-12 && (sol.point[v1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn induced_matrix_bounds() {
        let m = array![[1.0, -2.0], [0.0, 0.5]].map(|&v| AffineExpr::constant(v));
        for (norm, value) in [(NormKind::MaxAbs, 3.0), (NormKind::SumAbs, 2.5)] {
            let mut ok = LpBuilder::<f64>::new();
            encode_matrix_norm_bound(&mut ok, norm, &m, &AffineExpr::constant(value));
            assert!(feasible(&ok));
            let mut tight = LpBuilder::<f64>::new();
            encode_matrix_norm_bound(&mut tight, norm, &m, &AffineExpr::constant(value - 0.1));
            assert!(!feasible(&tight));
        }
    }

    #[test]
    fn sign_patterns_match_slacks() {
        let mut b = LpBuilder::<f64>::new();
        let x = b.add_free_var();
        let terms = vec![
            AffineExpr { terms: vec![(x, 1.0)], constant: -1.0 },
            AffineExpr { terms: vec![(x, 2.0)], constant: 1.0 },
            AffineExpr { terms: vec![(x, -1.0)], constant: 0.5 },
        ];
        let mut best = Vec::new();
        for limit in [0, 8] {
            let mut bb = b.clone();
            let t = bb.add_free_var();
            encode_abs_sum_bound(&mut bb, &terms, &AffineExpr::var(t), limit);
            bb.set_objective(&AffineExpr::var(t));
            best.push(solve(&bb.build()).unwrap().objective_value);
        }
        assert!((best[0] - best[1]).abs() < 1e-10);
    }
}
