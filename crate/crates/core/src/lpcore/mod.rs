//! Dense linear programming and norm-epigraph encoders.
//!
//! [`solve`] accepts a general [`LinearProgram`] with inequality rows,
//! equality rows and per-variable bounds. Problems are reduced to standard
//! form and handed to a two-phase revised simplex. Tall problems (many more
//! rows than variables, typical of vertex-enumerated robust constraints) are
//! solved through their dual, whose standard form has one row per primal
//! variable; the primal point is read back from the simplex multipliers.

mod encode;
mod simplex;
mod text;

pub use encode::{
    encode_abs_sum_bound, encode_matrix_norm_bound, encode_vector_norm_bound, AffineExpr,
    EncodedRows, LpBuilder,
};
pub use text::{read_text, write_text};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Scalar, LP_TOL};
use simplex::{EngineStatus, StandardForm};

/// Polytopic norms supported throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormKind {
    /// ℓ∞ on vectors; max absolute row sum on matrices.
    MaxAbs,
    /// ℓ1 on vectors; max absolute column sum on matrices.
    SumAbs,
}

impl NormKind {
    pub fn vector_norm<S: Scalar>(self, v: &[S]) -> S {
        match self {
            NormKind::MaxAbs => v.iter().fold(S::zero(), |acc, x| acc.max(x.abs())),
            NormKind::SumAbs => v.iter().fold(S::zero(), |acc, x| acc + x.abs()),
        }
    }

    /// Operator norm induced by the vector norm.
    pub fn induced_norm<S: Scalar>(self, m: &Array2<S>) -> S {
        let sums = match self {
            NormKind::MaxAbs => m.map(|x| x.abs()).sum_axis(ndarray::Axis(1)),
            NormKind::SumAbs => m.map(|x| x.abs()).sum_axis(ndarray::Axis(0)),
        };
        sums.iter().fold(S::zero(), |acc, x| acc.max(*x))
    }

    /// Vertices of the unit ball of the norm in dimension `n`.
    pub fn unit_ball_vertices(self, n: usize) -> Vec<Vec<f64>> {
        match self {
            NormKind::MaxAbs => (0..1usize << n)
                .map(|mask| {
                    (0..n)
                        .map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 })
                        .collect()
                })
                .collect(),
            NormKind::SumAbs => (0..2 * n)
                .map(|k| {
                    let mut v = vec![0.0; n];
                    v[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
                    v
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram<S> {
    pub objective: Vec<S>,
    pub inequality_normals: Array2<S>,
    pub inequality_offsets: Vec<S>,
    pub equality_normals: Array2<S>,
    pub equality_offsets: Vec<S>,
    /// `(lower, upper)` per variable; infinite values mean unbounded.
    pub variable_bounds: Vec<(S, S)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution<S> {
    pub status: LpStatus,
    pub point: Vec<S>,
    pub objective_value: S,
}

/// Which standard form the simplex engine works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Route {
    #[default]
    Auto,
    Primal,
    Dual,
}

impl<S: Scalar> LinearProgram<S> {
    /// An unconstrained program over `n` free variables with zero objective.
    pub fn new(n: usize) -> Self {
        LinearProgram {
            objective: vec![S::zero(); n],
            inequality_normals: Array2::zeros((0, n)),
            inequality_offsets: Vec::new(),
            equality_normals: Array2::zeros((0, n)),
            equality_offsets: Vec::new(),
            variable_bounds: vec![(S::neg_infinity(), S::infinity()); n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.inequality_offsets.len() + self.equality_offsets.len()
    }

    fn check_dims(&self) -> Result<()> {
        let n = self.num_vars();
        let bad = self.inequality_normals.ncols() != n
            || self.equality_normals.ncols() != n
            || self.inequality_normals.nrows() != self.inequality_offsets.len()
            || self.equality_normals.nrows() != self.equality_offsets.len()
            || self.variable_bounds.len() != n;
        if bad {
            return Err(Error::DimensionMismatch(format!(
                "linear program with {n} variables has inconsistent row or bound shapes"
            )));
        }
        let finite = self.objective.iter().all(|v| v.is_finite())
            && self.inequality_normals.iter().all(|v| v.is_finite())
            && self.equality_normals.iter().all(|v| v.is_finite())
            && self.inequality_offsets.iter().all(|v| v.is_finite())
            && self.equality_offsets.iter().all(|v| v.is_finite())
            && self
                .variable_bounds
                .iter()
                .all(|(l, u)| !l.is_nan() && !u.is_nan() && *l != S::infinity() && *u != S::neg_infinity());
        if !finite {
            return Err(Error::DimensionMismatch(
                "linear program contains non-finite data".into(),
            ));
        }
        Ok(())
    }

    pub fn objective_at(&self, x: &[S]) -> S {
        self.objective
            .iter()
            .zip(x)
            .fold(S::zero(), |acc, (c, v)| acc + *c * *v)
    }

    /// Largest constraint violation of `x`, each row measured relative to
    /// its largest coefficient.
    pub fn max_violation(&self, x: &[S]) -> S {
        let mut worst = S::zero();
        for (row, &b) in self
            .inequality_normals
            .outer_iter()
            .zip(&self.inequality_offsets)
        {
            let (lhs, scale) = row_eval(row.iter(), x);
            worst = worst.max((lhs - b) / scale);
        }
        for (row, &b) in self
            .equality_normals
            .outer_iter()
            .zip(&self.equality_offsets)
        {
            let (lhs, scale) = row_eval(row.iter(), x);
            worst = worst.max((lhs - b).abs() / scale);
        }
        for (&(l, u), &v) in self.variable_bounds.iter().zip(x) {
            worst = worst.max(l - v).max(v - u);
        }
        worst
    }
}

fn row_eval<'a, S: Scalar + 'a>(row: impl Iterator<Item = &'a S>, x: &[S]) -> (S, S) {
    let mut lhs = S::zero();
    let mut scale = S::one();
    for (a, v) in row.zip(x) {
        lhs += *a * *v;
        scale = scale.max(a.abs());
    }
    (lhs, scale)
}

/// Solves `lp` with automatic route selection.
pub fn solve<S: Scalar>(lp: &LinearProgram<S>) -> Result<LpSolution<S>> {
    solve_with(lp, Route::Auto)
}

pub fn solve_with<S: Scalar>(lp: &LinearProgram<S>, route: Route) -> Result<LpSolution<S>> {
    lp.check_dims()?;
    let n = lp.num_vars();
    let bound_rows = lp
        .variable_bounds
        .iter()
        .map(|(l, u)| l.is_finite() as usize + u.is_finite() as usize)
        .sum::<usize>();
    let primal_rows = lp.num_rows() + bound_rows;
    let first = match route {
        Route::Primal => Route::Primal,
        Route::Dual => Route::Dual,
        Route::Auto if 2 * primal_rows > 3 * n => Route::Dual,
        Route::Auto => Route::Primal,
    };
    let second = if first == Route::Dual {
        Route::Primal
    } else {
        Route::Dual
    };
    let tol = S::tol(LP_TOL);
    let mut last_err = None;
    for r in [first, second] {
        let attempt = if r == Route::Dual {
            solve_dual(lp)
        } else {
            solve_primal(lp)
        };
        match attempt {
            Ok(sol) if sol.status != LpStatus::Optimal => return Ok(sol),
            Ok(sol) => {
                let viol = lp.max_violation(&sol.point);
                if viol <= tol {
                    return Ok(sol);
                }
                last_err = Some(Error::NumericalBreakdown(format!(
                    "solution violates constraints by {:e}",
                    viol.to_f64_lossy()
                )));
            }
            Err(e) => last_err = Some(e),
        }
        if route != Route::Auto {
            break;
        }
    }
    Err(last_err.unwrap_or_else(|| Error::NumericalBreakdown("no route succeeded".into())))
}

fn status_only<S: Scalar>(status: LpStatus, n: usize) -> LpSolution<S> {
    LpSolution {
        status,
        point: vec![S::zero(); n],
        objective_value: match status {
            LpStatus::Unbounded => S::neg_infinity(),
            _ => S::infinity(),
        },
    }
}

/// How one original variable is expressed through nonnegative variables.
enum VarMap {
    /// `x = shift + y[idx]`, with an optional bound row `y ≤ width`.
    Lower { idx: usize, shift: f64 },
    /// `x = shift - y[idx]`.
    Upper { idx: usize, shift: f64 },
    /// `x = y[pos] - y[neg]`.
    Free { pos: usize, neg: usize },
}

fn solve_primal<S: Scalar>(lp: &LinearProgram<S>) -> Result<LpSolution<S>> {
    let n = lp.num_vars();
    let mut maps = Vec::with_capacity(n);
    let mut ny = 0usize;
    let mut width_rows: Vec<(usize, S)> = Vec::new();
    let mut x0 = vec![S::zero(); n];
    for (j, &(l, u)) in lp.variable_bounds.iter().enumerate() {
        if l.is_finite() {
            maps.push(VarMap::Lower {
                idx: ny,
                shift: l.to_f64_lossy(),
            });
            x0[j] = l;
            if u.is_finite() {
                width_rows.push((ny, u - l));
            }
            ny += 1;
        } else if u.is_finite() {
            maps.push(VarMap::Upper {
                idx: ny,
                shift: u.to_f64_lossy(),
            });
            x0[j] = u;
            ny += 1;
        } else {
            maps.push(VarMap::Free { pos: ny, neg: ny + 1 });
            ny += 2;
        }
    }
    if width_rows.iter().any(|(_, w)| *w < -S::tol(1e-12)) {
        return Ok(status_only(LpStatus::Infeasible, n));
    }

    let n_ineq = lp.inequality_offsets.len();
    let n_eq = lp.equality_offsets.len();
    let m = n_ineq + n_eq + width_rows.len();
    let n_slack = n_ineq + width_rows.len();
    let cols = ny + n_slack;
    let mut a = vec![S::zero(); cols * m];
    let mut b = vec![S::zero(); m];

    let put_row = |r: usize, row: ndarray::ArrayView1<S>, rhs: S, a: &mut Vec<S>, b: &mut Vec<S>| {
        let mut shifted = rhs;
        for (j, &coef) in row.iter().enumerate() {
            if coef == S::zero() {
                continue;
            }
            shifted -= coef * x0[j];
            match maps[j] {
                VarMap::Lower { idx, .. } => a[idx * m + r] += coef,
                VarMap::Upper { idx, .. } => a[idx * m + r] -= coef,
                VarMap::Free { pos, neg } => {
                    a[pos * m + r] += coef;
                    a[neg * m + r] -= coef;
                }
            }
        }
        b[r] = shifted;
    };
    for (r, row) in lp.inequality_normals.outer_iter().enumerate() {
        put_row(r, row, lp.inequality_offsets[r], &mut a, &mut b);
        a[(ny + r) * m + r] = S::one();
    }
    for (k, row) in lp.equality_normals.outer_iter().enumerate() {
        put_row(n_ineq + k, row, lp.equality_offsets[k], &mut a, &mut b);
    }
    for (k, &(idx, w)) in width_rows.iter().enumerate() {
        let r = n_ineq + n_eq + k;
        a[idx * m + r] = S::one();
        a[(ny + n_ineq + k) * m + r] = S::one();
        b[r] = w.max(S::zero());
    }
    // Normalise rows and make right-hand sides nonnegative.
    for r in 0..m {
        let mut scale = S::zero();
        for c in 0..cols {
            scale = scale.max(a[c * m + r].abs());
        }
        if scale == S::zero() {
            scale = S::one();
        }
        let mut f = S::one() / scale;
        if b[r] < S::zero() {
            f = -f;
        }
        for c in 0..cols {
            a[c * m + r] *= f;
        }
        b[r] *= f;
    }
    let mut cost = vec![S::zero(); cols];
    for (j, &c) in lp.objective.iter().enumerate() {
        match maps[j] {
            VarMap::Lower { idx, .. } => cost[idx] += c,
            VarMap::Upper { idx, .. } => cost[idx] -= c,
            VarMap::Free { pos, neg } => {
                cost[pos] += c;
                cost[neg] -= c;
            }
        }
    }
    let sf = StandardForm {
        rows: m,
        cols,
        a,
        b,
        c: cost,
    };
    let out = simplex::run(&sf)?;
    match out.status {
        EngineStatus::Infeasible => Ok(status_only(LpStatus::Infeasible, n)),
        EngineStatus::Unbounded => Ok(status_only(LpStatus::Unbounded, n)),
        EngineStatus::Optimal => {
            let point: Vec<S> = maps
                .iter()
                .map(|mp| match *mp {
                    VarMap::Lower { idx, shift } => S::lit(shift) + out.x[idx],
                    VarMap::Upper { idx, shift } => S::lit(shift) - out.x[idx],
                    VarMap::Free { pos, neg } => out.x[pos] - out.x[neg],
                })
                .collect();
            Ok(LpSolution {
                status: LpStatus::Optimal,
                objective_value: lp.objective_at(&point),
                point,
            })
        }
    }
}

/// Solves `min cᵀx, Gx ≤ g, Ex = e` (bounds folded into `G`) through the
/// dual `min gᵀy + eᵀz, Gᵀy + Eᵀz = −c, y ≥ 0`.
fn solve_dual<S: Scalar>(lp: &LinearProgram<S>) -> Result<LpSolution<S>> {
    let n = lp.num_vars();
    let first = run_dual(lp, &lp.objective)?;
    match first.0 {
        EngineStatus::Optimal => {
            let point = first.1;
            Ok(LpSolution {
                status: LpStatus::Optimal,
                objective_value: lp.objective_at(&point),
                point,
            })
        }
        EngineStatus::Unbounded => Ok(status_only(LpStatus::Infeasible, n)),
        EngineStatus::Infeasible => {
            // The primal is infeasible or unbounded; a zero objective tells which.
            let zero = vec![S::zero(); n];
            let probe = run_dual(lp, &zero)?;
            Ok(status_only(
                if probe.0 == EngineStatus::Optimal {
                    LpStatus::Unbounded
                } else {
                    LpStatus::Infeasible
                },
                n,
            ))
        }
    }
}

fn run_dual<S: Scalar>(lp: &LinearProgram<S>, objective: &[S]) -> Result<(EngineStatus, Vec<S>)> {
    let n = lp.num_vars();
    let n_ineq = lp.inequality_offsets.len();
    let n_eq = lp.equality_offsets.len();
    let n_bound = lp
        .variable_bounds
        .iter()
        .map(|(l, u)| l.is_finite() as usize + u.is_finite() as usize)
        .sum::<usize>();
    let cols = n_ineq + n_bound + 2 * n_eq;
    let mut a = vec![S::zero(); cols * n];
    let mut cost = vec![S::zero(); cols];
    let mut col = 0usize;
    for (row, &g) in lp
        .inequality_normals
        .outer_iter()
        .zip(&lp.inequality_offsets)
    {
        let scale = row.iter().fold(S::zero(), |acc, v| acc.max(v.abs()));
        let f = if scale > S::zero() { S::one() / scale } else { S::one() };
        for (j, &v) in row.iter().enumerate() {
            a[col * n + j] = v * f;
        }
        cost[col] = g * f;
        col += 1;
    }
    for (j, &(l, u)) in lp.variable_bounds.iter().enumerate() {
        if u.is_finite() {
            a[col * n + j] = S::one();
            cost[col] = u;
            col += 1;
        }
        if l.is_finite() {
            a[col * n + j] = -S::one();
            cost[col] = -l;
            col += 1;
        }
    }
    for (row, &e) in lp.equality_normals.outer_iter().zip(&lp.equality_offsets) {
        let scale = row.iter().fold(S::zero(), |acc, v| acc.max(v.abs()));
        let f = if scale > S::zero() { S::one() / scale } else { S::one() };
        for (j, &v) in row.iter().enumerate() {
            a[col * n + j] = v * f;
            a[(col + 1) * n + j] = -v * f;
        }
        cost[col] = e * f;
        cost[col + 1] = -e * f;
        col += 2;
    }
    debug_assert_eq!(col, cols);
    let mut b: Vec<S> = objective.iter().map(|c| -*c).collect();
    let mut flip = vec![S::one(); n];
    for j in 0..n {
        if b[j] < S::zero() {
            flip[j] = -S::one();
            b[j] = -b[j];
            for c in 0..cols {
                a[c * n + j] = -a[c * n + j];
            }
        }
    }
    let sf = StandardForm {
        rows: n,
        cols,
        a,
        b,
        c: cost,
    };
    let out = simplex::run(&sf)?;
    // Multipliers of the dual rows are the primal point; undo the flips.
    let x = out
        .duals
        .iter()
        .zip(&flip)
        .map(|(p, s)| *p * *s)
        .collect();
    Ok((out.status, x))
}
