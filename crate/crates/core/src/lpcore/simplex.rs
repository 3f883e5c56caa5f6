//! Dense revised simplex for standard-form problems
//! `min cᵀy  s.t.  A y = b,  y ≥ 0,  b ≥ 0`.
//!
//! Two phases with one artificial column per row. Pricing is Dantzig's rule
//! over rotating column windows; after `10·(rows + cols)` degenerate pivots
//! the engine switches to Bland's rule, which cannot cycle.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const REFACTOR_EVERY: usize = 48;

pub(crate) struct StandardForm<S> {
    pub rows: usize,
    pub cols: usize,
    /// Column-major coefficients, `cols * rows` entries.
    pub a: Vec<S>,
    pub b: Vec<S>,
    pub c: Vec<S>,
}

impl<S: Scalar> StandardForm<S> {
    fn column(&self, j: usize) -> &[S] {
        &self.a[j * self.rows..(j + 1) * self.rows]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum EngineStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

pub(crate) struct EngineOutcome<S> {
    pub status: EngineStatus,
    pub x: Vec<S>,
    /// Simplex multipliers of the equality rows at the final basis.
    pub duals: Vec<S>,
}

struct Engine<'a, S> {
    sf: &'a StandardForm<S>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    binv: Vec<S>,
    xb: Vec<S>,
    costs: Vec<S>,
    allow_artificial: bool,
    bland: bool,
    degenerate: usize,
    iterations: usize,
    cursor: usize,
    /// Sparse copy of the structural columns for pricing.
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    vals: Vec<S>,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

impl<'a, S: Scalar> Engine<'a, S> {
    fn new(sf: &'a StandardForm<S>) -> Self {
        let m = sf.rows;
        let n = sf.cols;
        let mut binv = vec![S::zero(); m * m];
        for i in 0..m {
            binv[i * m + i] = S::one();
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut vals = Vec::new();
        col_ptr.push(0);
        for j in 0..n {
            for (i, &v) in sf.column(j).iter().enumerate() {
                if v != S::zero() {
                    row_idx.push(i);
                    vals.push(v);
                }
            }
            col_ptr.push(vals.len());
        }
        let mut in_basis = vec![false; n + m];
        for flag in in_basis.iter_mut().skip(n) {
            *flag = true;
        }
        Engine {
            sf,
            basis: (n..n + m).collect(),
            in_basis,
            binv,
            xb: sf.b.clone(),
            costs: vec![S::zero(); n + m],
            allow_artificial: true,
            bland: false,
            degenerate: 0,
            iterations: 0,
            cursor: 0,
            col_ptr,
            row_idx,
            vals,
        }
    }

    fn m(&self) -> usize {
        self.sf.rows
    }

    fn total_cols(&self) -> usize {
        self.sf.cols + self.sf.rows
    }

    fn ftran(&self, j: usize) -> Vec<S> {
        let m = self.m();
        let mut out = vec![S::zero(); m];
        if j >= self.sf.cols {
            let r = j - self.sf.cols;
            for (i, o) in out.iter_mut().enumerate() {
                *o = self.binv[i * m + r];
            }
        } else {
            let col = self.sf.column(j);
            for (i, o) in out.iter_mut().enumerate() {
                let row = &self.binv[i * m..(i + 1) * m];
                let mut acc = S::zero();
                for (bv, cv) in row.iter().zip(col) {
                    acc += *bv * *cv;
                }
                *o = acc;
            }
        }
        out
    }

    fn multipliers(&self) -> Vec<S> {
        let m = self.m();
        let mut pi = vec![S::zero(); m];
        for (i, &bj) in self.basis.iter().enumerate() {
            let cb = self.costs[bj];
            if cb != S::zero() {
                let row = &self.binv[i * m..(i + 1) * m];
                for (p, bv) in pi.iter_mut().zip(row) {
                    *p += cb * *bv;
                }
            }
        }
        pi
    }

    fn reduced_cost(&self, j: usize, pi: &[S]) -> S {
        if j >= self.sf.cols {
            self.costs[j] - pi[j - self.sf.cols]
        } else {
            let (lo, hi) = (self.col_ptr[j], self.col_ptr[j + 1]);
            let mut acc = S::zero();
            for (&i, &a) in self.row_idx[lo..hi].iter().zip(&self.vals[lo..hi]) {
                acc += pi[i] * a;
            }
            self.costs[j] - acc
        }
    }

    fn eligible(&self, j: usize) -> bool {
        !self.in_basis[j] && (self.allow_artificial || j < self.sf.cols)
    }

    fn choose_entering(&mut self, pi: &[S]) -> Option<usize> {
        let tol = S::tol(1e-9);
        let total = self.total_cols();
        if self.bland {
            return (0..total).find(|&j| self.eligible(j) && self.reduced_cost(j, pi) < -tol);
        }
        let window = (total / 8).max(512).min(total);
        let mut scanned = 0;
        while scanned < total {
            let mut best: Option<(usize, S)> = None;
            let mut k = 0;
            while k < window && scanned < total {
                let j = (self.cursor + k) % total;
                if self.eligible(j) {
                    let d = self.reduced_cost(j, pi);
                    if d < -tol && best.is_none_or(|(_, bd)| d < bd) {
                        best = Some((j, d));
                    }
                }
                k += 1;
                scanned += 1;
            }
            self.cursor = (self.cursor + k) % total;
            if let Some((j, _)) = best {
                return Some(j);
            }
        }
        None
    }

    fn ratio_test(&self, alpha: &[S]) -> Option<usize> {
        let amax = alpha.iter().fold(S::zero(), |acc, a| acc.max(a.abs()));
        let piv_tol = S::tol(1e-9).max(amax * S::lit(1e-11));
        let mut best: Option<(usize, S)> = None;
        for (i, &a) in alpha.iter().enumerate() {
            if a <= piv_tol {
                continue;
            }
            let ratio = self.xb[i].max(S::zero()) / a;
            match best {
                None => best = Some((i, ratio)),
                Some((bi, br)) => {
                    let tie = S::tol(1e-12) * (S::one() + br.abs());
                    if ratio < br - tie {
                        best = Some((i, ratio));
                    } else if (ratio - br).abs() <= tie {
                        let better = if self.bland {
                            self.basis[i] < self.basis[bi]
                        } else {
                            a > alpha[bi]
                        };
                        if better {
                            best = Some((i, ratio));
                        }
                    }
                }
            }
        }
        best.map(|(i, _)| i)
    }

    fn pivot(&mut self, r: usize, q: usize, alpha: &[S]) {
        let m = self.m();
        let theta = self.xb[r].max(S::zero()) / alpha[r];
        if theta <= S::tol(1e-12) {
            self.degenerate += 1;
            if self.degenerate > 10 * (self.sf.rows + self.sf.cols) {
                self.bland = true;
            }
        }
        for (i, x) in self.xb.iter_mut().enumerate() {
            if i != r {
                *x -= theta * alpha[i];
                if *x < S::zero() && *x > -S::tol(1e-11) {
                    *x = S::zero();
                }
            }
        }
        self.xb[r] = theta;
        let inv = S::one() / alpha[r];
        for v in &mut self.binv[r * m..(r + 1) * m] {
            *v *= inv;
        }
        let pivot_row: Vec<S> = self.binv[r * m..(r + 1) * m].to_vec();
        for (i, &ai) in alpha.iter().enumerate() {
            if i == r || ai == S::zero() {
                continue;
            }
            let row = &mut self.binv[i * m..(i + 1) * m];
            for (v, p) in row.iter_mut().zip(&pivot_row) {
                *v -= ai * *p;
            }
        }
        self.in_basis[self.basis[r]] = false;
        self.in_basis[q] = true;
        self.basis[r] = q;
    }

    /// Rebuilds the basis inverse from scratch by Gauss-Jordan elimination.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m();
        let mut mat = vec![S::zero(); m * m];
        for (pos, &j) in self.basis.iter().enumerate() {
            if j >= self.sf.cols {
                mat[(j - self.sf.cols) * m + pos] = S::one();
            } else {
                for (i, &v) in self.sf.column(j).iter().enumerate() {
                    mat[i * m + pos] = v;
                }
            }
        }
        let inv = invert(&mat, m).ok_or_else(|| {
            Error::NumericalBreakdown("singular basis during refactorization".into())
        })?;
        self.binv = inv;
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            let mut acc = S::zero();
            for (bv, b) in row.iter().zip(&self.sf.b) {
                acc += *bv * *b;
            }
            self.xb[i] = if acc < S::zero() && acc > -S::tol(1e-9) {
                S::zero()
            } else {
                acc
            };
        }
        Ok(())
    }

    fn run_phase(&mut self, max_iter: usize) -> Result<PhaseEnd> {
        self.bland = false;
        self.degenerate = 0;
        loop {
            if self.iterations >= max_iter {
                return Err(Error::NumericalBreakdown(format!(
                    "simplex iteration limit {max_iter} reached"
                )));
            }
            if self.iterations > 0 && self.iterations.is_multiple_of(REFACTOR_EVERY) {
                self.refactor()?;
            }
            let pi = self.multipliers();
            let Some(q) = self.choose_entering(&pi) else {
                return Ok(PhaseEnd::Optimal);
            };
            let alpha = self.ftran(q);
            let Some(r) = self.ratio_test(&alpha) else {
                return Ok(PhaseEnd::Unbounded);
            };
            self.pivot(r, q, &alpha);
            self.iterations += 1;
        }
    }

    /// Pivots basic artificials out wherever a structural column can replace
    /// them; rows where none can are linearly redundant and keep their
    /// artificial at zero.
    fn drive_out_artificials(&mut self) {
        let m = self.m();
        let n = self.sf.cols;
        for r in 0..m {
            if self.basis[r] < n {
                continue;
            }
            let row: Vec<S> = self.binv[r * m..(r + 1) * m].to_vec();
            let mut best: Option<(usize, S)> = None;
            for j in 0..n {
                if self.in_basis[j] {
                    continue;
                }
                let mut v = S::zero();
                for (a, b) in row.iter().zip(self.sf.column(j)) {
                    v += *a * *b;
                }
                if v.abs() > S::tol(1e-7) && best.is_none_or(|(_, bv)| v.abs() > bv) {
                    best = Some((j, v.abs()));
                }
            }
            if let Some((j, _)) = best {
                self.xb[r] = S::zero();
                let alpha = self.ftran(j);
                self.pivot(r, j, &alpha);
            }
        }
    }
}

pub(crate) fn run<S: Scalar>(sf: &StandardForm<S>) -> Result<EngineOutcome<S>> {
    let m = sf.rows;
    let n = sf.cols;
    let max_iter = 50 * (m + n) + 1000;
    let mut eng = Engine::new(sf);

    if m == 0 {
        let unbounded = sf.c.iter().any(|&c| c < -S::tol(1e-9));
        return Ok(EngineOutcome {
            status: if unbounded {
                EngineStatus::Unbounded
            } else {
                EngineStatus::Optimal
            },
            x: vec![S::zero(); n],
            duals: Vec::new(),
        });
    }

    // Phase 1: minimise the sum of artificials.
    for j in n..n + m {
        eng.costs[j] = S::one();
    }
    eng.run_phase(max_iter)?;
    eng.refactor()?;
    let infeasibility: S = eng
        .basis
        .iter()
        .zip(&eng.xb)
        .filter(|(&j, _)| j >= n)
        .fold(S::zero(), |acc, (_, &x)| acc + x.max(S::zero()));
    let bscale = sf.b.iter().fold(S::one(), |acc, b| acc.max(b.abs()));
    if infeasibility > S::tol(1e-9) * bscale {
        return Ok(EngineOutcome {
            status: EngineStatus::Infeasible,
            x: vec![S::zero(); n],
            duals: vec![S::zero(); m],
        });
    }
    eng.drive_out_artificials();

    // Phase 2.
    for j in 0..n + m {
        eng.costs[j] = if j < n { sf.c[j] } else { S::zero() };
    }
    eng.allow_artificial = false;
    let end = eng.run_phase(max_iter)?;
    eng.refactor()?;
    let mut x = vec![S::zero(); n];
    for (pos, &j) in eng.basis.iter().enumerate() {
        if j < n {
            x[j] = eng.xb[pos].max(S::zero());
        }
    }
    let duals = eng.multipliers();
    Ok(EngineOutcome {
        status: match end {
            PhaseEnd::Optimal => EngineStatus::Optimal,
            PhaseEnd::Unbounded => EngineStatus::Unbounded,
        },
        x,
        duals,
    })
}

/// Inverts a dense row-major `m×m` matrix with partial pivoting.
pub(crate) fn invert<S: Scalar>(mat: &[S], m: usize) -> Option<Vec<S>> {
    let mut a = mat.to_vec();
    let mut inv = vec![S::zero(); m * m];
    for i in 0..m {
        inv[i * m + i] = S::one();
    }
    let scale = a.iter().fold(S::zero(), |acc, v| acc.max(v.abs()));
    let sing = S::tol(1e-13) * scale.max(S::one());
    for col in 0..m {
        let mut piv = col;
        for r in col + 1..m {
            if a[r * m + col].abs() > a[piv * m + col].abs() {
                piv = r;
            }
        }
        if a[piv * m + col].abs() <= sing {
            return None;
        }
        if piv != col {
            for k in 0..m {
                a.swap(piv * m + k, col * m + k);
                inv.swap(piv * m + k, col * m + k);
            }
        }
        let p = S::one() / a[col * m + col];
        for k in 0..m {
            a[col * m + k] *= p;
            inv[col * m + k] *= p;
        }
        for r in 0..m {
            if r == col {
                continue;
            }
            let f = a[r * m + col];
            if f == S::zero() {
                continue;
            }
            for k in 0..m {
                let av = a[col * m + k];
                let iv = inv[col * m + k];
                a[r * m + k] -= f * av;
                inv[r * m + k] -= f * iv;
            }
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sf(rows: usize, cols_data: Vec<Vec<f64>>, b: Vec<f64>, c: Vec<f64>) -> StandardForm<f64> {
        let cols = cols_data.len();
        StandardForm {
            rows,
            cols,
            a: cols_data.into_iter().flatten().collect(),
            b,
            c,
        }
    }

    #[test]
    fn solves_small_standard_form() {
        // min -x1 - x2  s.t. x1 + s1 = 1, x2 + s2 = 2
        let p = sf(
            2,
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![1.0, 2.0],
            vec![-1.0, -1.0, 0.0, 0.0],
        );
        let out = run(&p).unwrap();
        assert_eq!(out.status, EngineStatus::Optimal);
        assert!((out.x[0] - 1.0).abs() < 1e-12);
        assert!((out.x[1] - 2.0).abs() < 1e-12);
        assert!((out.duals[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible_rows() {
        // x1 = 1 and x1 = 2
        let p = sf(2, vec![vec![1.0, 1.0]], vec![1.0, 2.0], vec![0.0]);
        assert_eq!(run(&p).unwrap().status, EngineStatus::Infeasible);
    }

    #[test]
    fn redundant_rows_keep_artificial() {
        let p = sf(2, vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![1.0, 1.0], vec![1.0, 2.0]);
        let out = run(&p).unwrap();
        assert_eq!(out.status, EngineStatus::Optimal);
        assert!((out.x[0] - 1.0).abs() < 1e-12 && out.x[1].abs() < 1e-12);
    }

    #[test]
    fn invert_roundtrip() {
        let m = vec![4.0, 1.0, 2.0, 0.5, 3.0, 1.0, 1.0, 0.0, 2.0];
        let inv = invert(&m, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| m[i * 3 + k] * inv[k * 3 + j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        assert!(invert(&[1.0, 2.0, 2.0, 4.0], 2).is_none());
    }
}
