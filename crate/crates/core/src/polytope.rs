//! Halfspace polytopes `{α : Hα ≤ h}` over a low-dimensional parameter space.
//!
//! Rows are stored with unit Euclidean normals, so the `1e-9` feasibility
//! slack is a distance. Each polytope carries an optional vertex cache which
//! is maintained incrementally across intersections: a new halfspace keeps the
//! vertices it contains and creates one vertex on every cut edge.

use std::sync::OnceLock;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lpcore::{solve, LinearProgram, LpStatus};
use crate::scalar::{Scalar, FEAS_TOL, VERTEX_DEDUP_TOL};

/// Maximum parameter dimension accepted by vertex enumeration.
pub const MAX_VERTEX_DIM: usize = 12;
/// Number of intersections between redundancy sweeps.
pub const PRUNE_EVERY: u64 = 25;

/// Rows constraining the parameter vector, tagged with where and when they
/// were generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraintSet<S> {
    pub normals: Array2<S>,
    pub offsets: Vec<S>,
    pub origin_node: usize,
    pub origin_time: usize,
}

impl<S: Scalar> LinearConstraintSet<S> {
    pub fn new(normals: Array2<S>, offsets: Vec<S>, origin_node: usize, origin_time: usize) -> Result<Self> {
        if normals.nrows() != offsets.len() || offsets.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "constraint set with {} normals and {} offsets",
                normals.nrows(),
                offsets.len()
            )));
        }
        if !normals.iter().chain(&offsets).all(|v| v.is_finite()) {
            return Err(Error::DimensionMismatch("non-finite constraint row".into()));
        }
        Ok(LinearConstraintSet {
            normals,
            offsets,
            origin_node,
            origin_time,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.offsets.len()
    }

    /// True when `α` satisfies every row up to the feasibility slack.
    pub fn holds_at(&self, alpha: &[S]) -> bool {
        self.normals.outer_iter().zip(&self.offsets).all(|(r, &b)| {
            let norm = row_norm(r);
            dot(r, alpha) <= b + S::tol(FEAS_TOL) * norm.max(S::one())
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HalfspacePolytope<S> {
    normals: Array2<S>,
    offsets: Vec<S>,
    #[serde(skip)]
    vertices: OnceLock<Vec<Vec<S>>>,
    #[serde(skip)]
    stamp: u64,
}

impl<S: Scalar> Clone for HalfspacePolytope<S> {
    fn clone(&self) -> Self {
        let vertices = OnceLock::new();
        if let Some(v) = self.vertices.get() {
            let _ = vertices.set(v.clone());
        }
        HalfspacePolytope {
            normals: self.normals.clone(),
            offsets: self.offsets.clone(),
            vertices,
            stamp: self.stamp,
        }
    }
}

impl<S: Scalar> PartialEq for HalfspacePolytope<S> {
    fn eq(&self, other: &Self) -> bool {
        self.normals == other.normals && self.offsets == other.offsets
    }
}

fn dot<S: Scalar>(row: ArrayView1<S>, x: &[S]) -> S {
    row.iter().zip(x).fold(S::zero(), |acc, (a, b)| acc + *a * *b)
}

fn row_norm<S: Scalar>(row: ArrayView1<S>) -> S {
    row.iter().fold(S::zero(), |acc, a| acc + *a * *a).sqrt()
}

fn dist<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .fold(S::zero(), |acc, (x, y)| acc + (*x - *y) * (*x - *y))
        .sqrt()
}

/// Rank of a set of `p`-vectors by Gaussian elimination.
fn rank<S: Scalar>(rows: &[Vec<S>], p: usize) -> usize {
    let mut m: Vec<Vec<S>> = rows.to_vec();
    let mut r = 0;
    for col in 0..p {
        let Some(piv) = (r..m.len()).max_by(|&i, &j| {
            m[i][col]
                .abs()
                .partial_cmp(&m[j][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        }) else {
            break;
        };
        if m[piv][col].abs() <= S::tol(1e-9) {
            continue;
        }
        m.swap(r, piv);
        for i in r + 1..m.len() {
            let f = m[i][col] / m[r][col];
            if f != S::zero() {
                for k in col..p {
                    let v = m[r][k];
                    m[i][k] -= f * v;
                }
            }
        }
        r += 1;
        if r == m.len() {
            break;
        }
    }
    r
}

/// Solves a `p×p` system; `None` if numerically singular.
fn solve_square<S: Scalar>(mut a: Vec<Vec<S>>, mut b: Vec<S>) -> Option<Vec<S>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[piv][col].abs() <= S::tol(1e-10) {
            return None;
        }
        a.swap(piv, col);
        b.swap(piv, col);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for k in col..n {
                let v = a[col][k];
                a[r][k] -= f * v;
            }
            let bc = b[col];
            b[r] -= f * bc;
        }
    }
    let mut x = vec![S::zero(); n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for k in r + 1..n {
            s -= a[r][k] * x[k];
        }
        x[r] = s / a[r][r];
    }
    Some(x)
}

fn push_unique<S: Scalar>(list: &mut Vec<Vec<S>>, v: Vec<S>) {
    let tol = S::tol(VERTEX_DEDUP_TOL);
    if !list.iter().any(|w| dist(w, &v) <= tol) {
        list.push(v);
    }
}

impl<S: Scalar> HalfspacePolytope<S> {
    /// Builds a polytope from raw rows; rows are rescaled to unit normals.
    /// All-zero rows are dropped when satisfied and rejected otherwise.
    pub fn new(normals: Array2<S>, offsets: Vec<S>) -> Result<Self> {
        if normals.nrows() != offsets.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} normals vs {} offsets",
                normals.nrows(),
                offsets.len()
            )));
        }
        if normals.ncols() == 0 {
            return Err(Error::DimensionMismatch("zero-dimensional polytope".into()));
        }
        let mut p = HalfspacePolytope {
            normals: Array2::zeros((0, normals.ncols())),
            offsets: Vec::new(),
            vertices: OnceLock::new(),
            stamp: 0,
        };
        let (n, o) = p.merge_rows(&normals, &offsets)?;
        p.normals = n;
        p.offsets = o;
        Ok(p)
    }

    /// Axis-aligned box `lower ≤ α ≤ upper`.
    pub fn from_box(lower: &[S], upper: &[S]) -> Result<Self> {
        let p = lower.len();
        if upper.len() != p {
            return Err(Error::DimensionMismatch("box bounds differ in length".into()));
        }
        let mut normals = Array2::zeros((2 * p, p));
        let mut offsets = Vec::with_capacity(2 * p);
        for j in 0..p {
            normals[[2 * j, j]] = S::one();
            offsets.push(upper[j]);
            normals[[2 * j + 1, j]] = -S::one();
            offsets.push(-lower[j]);
        }
        Self::new(normals, offsets)
    }

    /// The single point `α` as a polytope (two opposing rows per coordinate).
    pub fn point(alpha: &[S]) -> Result<Self> {
        Self::from_box(alpha, alpha)
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.offsets.len()
    }

    pub fn normals(&self) -> &Array2<S> {
        &self.normals
    }

    pub fn offsets(&self) -> &[S] {
        &self.offsets
    }

    pub fn stamp(&self) -> u64 {
        self.stamp
    }

    pub fn cached_vertices(&self) -> Option<&[Vec<S>]> {
        self.vertices.get().map(|v| v.as_slice())
    }

    /// Unit-normalises `normals` and merges them into the current rows,
    /// dropping near-duplicates that are not strictly tighter.
    fn merge_rows(&self, normals: &Array2<S>, offsets: &[S]) -> Result<(Array2<S>, Vec<S>)> {
        let p = self.dim();
        if normals.ncols() != p {
            return Err(Error::DimensionMismatch(format!(
                "constraint has {} columns, polytope dimension is {p}",
                normals.ncols()
            )));
        }
        let mut rows: Vec<Vec<S>> = self.normals.outer_iter().map(|r| r.to_vec()).collect();
        let mut offs = self.offsets.clone();
        for (r, &b) in normals.outer_iter().zip(offsets) {
            let nrm = row_norm(r);
            if nrm <= S::tol(1e-14) {
                if b < -S::tol(FEAS_TOL) {
                    // 0 ≤ b < 0: empty set; keep an explicit contradictory row.
                    let mut e = vec![S::zero(); p];
                    e[0] = S::one();
                    rows.push(e.clone());
                    offs.push(-S::one());
                    e[0] = -S::one();
                    rows.push(e);
                    offs.push(-S::one());
                }
                continue;
            }
            let unit: Vec<S> = r.iter().map(|a| *a / nrm).collect();
            let ub = b / nrm;
            let dup = rows.iter().position(|q| {
                q.iter().zip(&unit).fold(S::zero(), |acc, (a, c)| acc + *a * *c)
                    > S::one() - S::tol(1e-8)
            });
            match dup {
                Some(k) if ub < offs[k] - S::tol(FEAS_TOL) => {
                    rows[k] = unit;
                    offs[k] = ub;
                }
                Some(_) => {}
                None => {
                    rows.push(unit);
                    offs.push(ub);
                }
            }
        }
        let m = rows.len();
        let flat: Vec<S> = rows.into_iter().flatten().collect();
        let arr = Array2::from_shape_vec((m, p), flat).expect("row shape");
        Ok((arr, offs))
    }

    /// `{α ∈ self : c holds}`.
    pub fn intersect(&self, c: &LinearConstraintSet<S>) -> Result<Self> {
        if c.normals.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "constraint has {} columns, polytope dimension is {}",
                c.normals.ncols(),
                self.dim()
            )));
        }
        let mut cur = self.clone();
        cur.stamp = self.stamp + 1;
        for (r, &b) in c.normals.outer_iter().zip(&c.offsets) {
            let single = r.to_owned().insert_axis(ndarray::Axis(0));
            cur.add_rows(&single, &[b])?;
        }
        if cur.stamp.is_multiple_of(PRUNE_EVERY) && !cur.is_empty_cached() {
            match cur.remove_redundant() {
                Ok(p) => cur = p,
                Err(Error::Empty) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(cur)
    }

    fn is_empty_cached(&self) -> bool {
        matches!(self.vertices.get(), Some(v) if v.is_empty())
    }

    /// Adds rows in place, updating the vertex cache if one exists.
    fn add_rows(&mut self, normals: &Array2<S>, offsets: &[S]) -> Result<()> {
        let before = self.num_rows();
        let (n, o) = self.merge_rows(normals, offsets)?;
        let changed = n.nrows() != before || o != self.offsets;
        if !changed {
            return Ok(());
        }
        let cached = self.vertices.take();
        let Some(verts) = cached else {
            self.normals = n;
            self.offsets = o;
            return Ok(());
        };
        // Rows satisfied by every vertex of a bounded polytope are redundant.
        let tol = S::tol(FEAS_TOL);
        let incoming: Vec<(Vec<S>, S)> = n
            .outer_iter()
            .zip(&o)
            .enumerate()
            .filter(|(k, (r, b))| *k >= before || self.offsets[*k] != **b || self.normals.row(*k) != *r)
            .map(|(_, (r, b))| (r.to_vec(), *b))
            .collect();
        let mut verts = verts;
        let mut rows_n: Vec<Vec<S>> = self.normals.outer_iter().map(|r| r.to_vec()).collect();
        let mut rows_o = self.offsets.clone();
        for (a, b) in incoming {
            let cut = verts
                .iter()
                .any(|v| a.iter().zip(v).fold(S::zero(), |acc, (x, y)| acc + *x * *y) > b + tol);
            if !cut {
                continue;
            }
            verts = cut_vertices(&rows_n, &rows_o, &verts, &a, b, self.dim());
            // Replace a tightened duplicate or append.
            match rows_n.iter().position(|q| q == &a) {
                Some(k) => rows_o[k] = b,
                None => {
                    rows_n.push(a);
                    rows_o.push(b);
                }
            }
        }
        let m = rows_n.len();
        let p = self.dim();
        self.normals = Array2::from_shape_vec((m, p), rows_n.into_iter().flatten().collect())
            .expect("row shape");
        self.offsets = rows_o;
        let _ = self.vertices.set(verts);
        Ok(())
    }

    /// True iff `normals·α ≤ offsets + 1e-9` row-wise.
    pub fn membership(&self, alpha: &[S]) -> Result<bool> {
        if alpha.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point of length {} for polytope of dimension {}",
                alpha.len(),
                self.dim()
            )));
        }
        let tol = S::tol(FEAS_TOL);
        Ok(self
            .normals
            .outer_iter()
            .zip(&self.offsets)
            .all(|(r, &b)| dot(r, alpha) <= b + tol))
    }

    fn lp_over_rows(&self, skip: Option<usize>, objective: Vec<S>) -> LinearProgram<S> {
        let p = self.dim();
        let keep: Vec<usize> = (0..self.num_rows()).filter(|&i| Some(i) != skip).collect();
        let mut lp = LinearProgram::new(p);
        lp.objective = objective;
        lp.inequality_normals = self.normals.select(ndarray::Axis(0), &keep);
        lp.inequality_offsets = keep.iter().map(|&i| self.offsets[i]).collect();
        lp
    }

    /// Checks boundedness and nonemptiness with `2p` coordinate LPs.
    fn check_bounded(&self) -> Result<()> {
        let p = self.dim();
        for j in 0..p {
            for s in [S::one(), -S::one()] {
                let mut c = vec![S::zero(); p];
                c[j] = s;
                match solve(&self.lp_over_rows(None, c))?.status {
                    LpStatus::Optimal => {}
                    LpStatus::Infeasible => return Err(Error::Empty),
                    LpStatus::Unbounded => return Err(Error::Unbounded(j)),
                }
            }
        }
        Ok(())
    }

    /// All extreme points, by combinatorial basis enumeration. The result is
    /// cached; later intersections update the cache incrementally.
    pub fn enumerate_vertices(&self) -> Result<Vec<Vec<S>>> {
        let p = self.dim();
        if p > MAX_VERTEX_DIM {
            return Err(Error::DimensionTooLarge(p));
        }
        if let Some(v) = self.vertices.get() {
            return if v.is_empty() {
                Err(Error::Empty)
            } else {
                Ok(v.clone())
            };
        }
        match self.check_bounded() {
            Ok(()) => {}
            Err(Error::Empty) => {
                let _ = self.vertices.set(Vec::new());
                return Err(Error::Empty);
            }
            Err(e) => return Err(e),
        }
        let verts = self.enumerate_uncached();
        let _ = self.vertices.set(verts.clone());
        if verts.is_empty() {
            return Err(Error::Empty);
        }
        Ok(verts)
    }

    fn enumerate_uncached(&self) -> Vec<Vec<S>> {
        let p = self.dim();
        let m = self.num_rows();
        let mut out: Vec<Vec<S>> = Vec::new();
        let mut idx: Vec<usize> = (0..p).collect();
        if m < p {
            return out;
        }
        loop {
            let a: Vec<Vec<S>> = idx.iter().map(|&i| self.normals.row(i).to_vec()).collect();
            let b: Vec<S> = idx.iter().map(|&i| self.offsets[i]).collect();
            if let Some(x) = solve_square(a, b) {
                if self.membership(&x).unwrap_or(false) {
                    push_unique(&mut out, x);
                }
            }
            // Next p-subset in lexicographic order.
            let mut k = p;
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                if idx[k] < m - p + k {
                    idx[k] += 1;
                    for t in k + 1..p {
                        idx[t] = idx[t - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    /// Drops every row implied by the others. Rows inactive at all cached
    /// vertices go first; the remainder is checked with one LP per row.
    pub fn remove_redundant(&self) -> Result<Self> {
        let p = self.dim();
        let tol = S::tol(FEAS_TOL);
        let mut keep: Vec<bool> = vec![true; self.num_rows()];
        if let Some(verts) = self.vertices.get() {
            if verts.is_empty() {
                return Err(Error::Empty);
            }
            for (i, k) in keep.iter_mut().enumerate() {
                let r = self.normals.row(i);
                *k = verts.iter().any(|v| dot(r, v) >= self.offsets[i] - tol);
            }
        } else {
            let probe = self.lp_over_rows(None, vec![S::zero(); p]);
            if solve(&probe)?.status == LpStatus::Infeasible {
                return Err(Error::Empty);
            }
        }
        let mut cur = self.select_rows(&keep);
        let mut i = 0;
        while i < cur.num_rows() {
            let obj: Vec<S> = cur.normals.row(i).iter().map(|v| -*v).collect();
            let sol = solve(&cur.lp_over_rows(Some(i), obj))?;
            let redundant = sol.status == LpStatus::Optimal && -sol.objective_value <= cur.offsets[i] + tol;
            if redundant {
                let mut mask = vec![true; cur.num_rows()];
                mask[i] = false;
                cur = cur.select_rows(&mask);
            } else {
                i += 1;
            }
        }
        Ok(cur)
    }

    fn select_rows(&self, keep: &[bool]) -> Self {
        let idx: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
        let out = HalfspacePolytope {
            normals: self.normals.select(ndarray::Axis(0), &idx),
            offsets: idx.iter().map(|&i| self.offsets[i]).collect(),
            vertices: OnceLock::new(),
            stamp: self.stamp,
        };
        if let Some(v) = self.vertices.get() {
            let _ = out.vertices.set(v.clone());
        }
        out
    }

    /// Center of the largest inscribed ball. When the polytope has empty
    /// interior the ball is taken inside its affine hull.
    pub fn chebyshev_center(&self) -> Result<Vec<S>> {
        let p = self.dim();
        self.check_bounded()?;
        let (x, r) = self.inscribed_ball(None)?;
        if r > S::tol(1e-9) {
            return Ok(x);
        }
        // Rows that hold with equality everywhere span the affine hull.
        let mut eq_rows: Vec<usize> = Vec::new();
        for i in 0..self.num_rows() {
            let sol = solve(&self.lp_over_rows(None, self.normals.row(i).to_vec()))?;
            if sol.status == LpStatus::Optimal && sol.objective_value >= self.offsets[i] - S::tol(1e-9) {
                eq_rows.push(i);
            }
        }
        let (x, _) = self.inscribed_ball(Some((&eq_rows, x)))?;
        debug_assert_eq!(x.len(), p);
        Ok(x)
    }

    /// Maximises the radius `r` of a ball around `x`; with `hull`, the ball
    /// lives in the affine hull `{x : a_i·x = b_i, i ∈ eq}` through `x0`.
    fn inscribed_ball(&self, hull: Option<(&[usize], Vec<S>)>) -> Result<(Vec<S>, S)> {
        let p = self.dim();
        // Basis of the directions left free by the hull equalities.
        let basis: Vec<Vec<S>> = match &hull {
            None => (0..p)
                .map(|j| {
                    let mut e = vec![S::zero(); p];
                    e[j] = S::one();
                    e
                })
                .collect(),
            Some((eq, _)) => null_space(&eq.iter().map(|&i| self.normals.row(i).to_vec()).collect::<Vec<_>>(), p),
        };
        let x0 = match &hull {
            None => vec![S::zero(); p],
            Some((_, x)) => x.clone(),
        };
        let q = basis.len();
        if q == 0 {
            return Ok((x0, S::zero()));
        }
        let eq: &[usize] = hull.as_ref().map_or(&[], |h| h.0);
        let mut lp = LinearProgram::new(q + 1);
        lp.objective[q] = -S::one();
        lp.variable_bounds[q] = (S::zero(), S::infinity());
        let mut rows: Vec<Vec<S>> = Vec::new();
        let mut rhs = Vec::new();
        for i in 0..self.num_rows() {
            if eq.contains(&i) {
                continue;
            }
            let a = self.normals.row(i);
            let proj: Vec<S> = basis.iter().map(|bv| dot(a, bv)).collect();
            let pn = proj.iter().fold(S::zero(), |acc, v| acc + *v * *v).sqrt();
            let mut row = proj.clone();
            row.push(pn);
            rows.push(row);
            rhs.push(self.offsets[i] - dot(a, &x0));
        }
        lp.inequality_normals =
            Array2::from_shape_vec((rows.len(), q + 1), rows.into_iter().flatten().collect()).expect("shape");
        lp.inequality_offsets = rhs;
        let sol = solve(&lp)?;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => return Err(Error::Empty),
            LpStatus::Unbounded => return Err(Error::Unbounded(0)),
        }
        let mut x = x0;
        for (k, bv) in basis.iter().enumerate() {
            for (xi, bi) in x.iter_mut().zip(bv) {
                *xi += sol.point[k] * *bi;
            }
        }
        Ok((x, sol.point[q]))
    }
}

/// Orthonormal basis of the null space of `rows` (Gram–Schmidt against the
/// row space).
fn null_space<S: Scalar>(rows: &[Vec<S>], p: usize) -> Vec<Vec<S>> {
    let mut span: Vec<Vec<S>> = Vec::new();
    let push_ortho = |v: &[S], span: &mut Vec<Vec<S>>| -> Option<Vec<S>> {
        let mut w = v.to_vec();
        for s in span.iter() {
            let d = w.iter().zip(s).fold(S::zero(), |acc, (a, b)| acc + *a * *b);
            for (wi, si) in w.iter_mut().zip(s) {
                *wi -= d * *si;
            }
        }
        let n = w.iter().fold(S::zero(), |acc, a| acc + *a * *a).sqrt();
        if n <= S::tol(1e-9) {
            return None;
        }
        w.iter_mut().for_each(|a| *a /= n);
        span.push(w.clone());
        Some(w)
    };
    for r in rows {
        push_ortho(r, &mut span);
    }
    let mut basis = Vec::new();
    for j in 0..p {
        let mut e = vec![S::zero(); p];
        e[j] = S::one();
        if let Some(w) = push_ortho(&e, &mut span) {
            basis.push(w);
        }
    }
    basis
}

/// Vertices of `conv(verts) ∩ {a·x ≤ b}` given the rows defining the
/// original polytope.
fn cut_vertices<S: Scalar>(
    rows: &[Vec<S>],
    offs: &[S],
    verts: &[Vec<S>],
    a: &[S],
    b: S,
    p: usize,
) -> Vec<Vec<S>> {
    let tol = S::tol(FEAS_TOL);
    let side: Vec<S> = verts
        .iter()
        .map(|v| a.iter().zip(v).fold(S::zero(), |acc, (x, y)| acc + *x * *y) - b)
        .collect();
    let active = |v: &[S]| -> Vec<usize> {
        rows.iter()
            .zip(offs)
            .enumerate()
            .filter(|(_, (r, o))| {
                (r.iter().zip(v).fold(S::zero(), |acc, (x, y)| acc + *x * *y) - **o).abs() <= S::tol(1e-8)
            })
            .map(|(i, _)| i)
            .collect()
    };
    let mut out: Vec<Vec<S>> = Vec::new();
    for (v, s) in verts.iter().zip(&side) {
        if *s <= tol {
            push_unique(&mut out, v.clone());
        }
    }
    let inside: Vec<usize> = (0..verts.len()).filter(|&i| side[i] < -tol).collect();
    let outside: Vec<usize> = (0..verts.len()).filter(|&i| side[i] > tol).collect();
    let act_in: Vec<Vec<usize>> = inside.iter().map(|&i| active(&verts[i])).collect();
    let act_out: Vec<Vec<usize>> = outside.iter().map(|&i| active(&verts[i])).collect();
    for (ii, &i) in inside.iter().enumerate() {
        for (oi, &o) in outside.iter().enumerate() {
            let common: Vec<usize> = act_in[ii]
                .iter()
                .filter(|k| act_out[oi].binary_search(k).is_ok())
                .copied()
                .collect();
            if common.len() + 1 < p {
                continue;
            }
            let mut sys: Vec<Vec<S>> = common.iter().map(|&k| rows[k].clone()).collect();
            if rank(&sys, p) + 1 < p {
                continue;
            }
            let t = side[i] / (side[i] - side[o]);
            let x: Vec<S> = verts[i]
                .iter()
                .zip(&verts[o])
                .map(|(vi, vo)| *vi + t * (*vo - *vi))
                .collect();
            sys.push(a.to_vec());
            if rank(&sys, p) == p {
                push_unique(&mut out, x);
            }
        }
    }
    out
}

/// JSON form `{"normals": [[...]], "offsets": [...]}` used in traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolytopeJson {
    pub normals: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
}

impl<S: Scalar> HalfspacePolytope<S> {
    pub fn to_json(&self) -> PolytopeJson {
        PolytopeJson {
            normals: self
                .normals
                .outer_iter()
                .map(|r| r.iter().map(|v| v.to_f64_lossy()).collect())
                .collect(),
            offsets: self.offsets.iter().map(|v| v.to_f64_lossy()).collect(),
        }
    }

    pub fn from_json(j: &PolytopeJson) -> Result<Self> {
        let p = j.normals.first().map_or(0, |r| r.len());
        if j.normals.iter().any(|r| r.len() != p) {
            return Err(Error::DimensionMismatch("ragged polytope normals".into()));
        }
        let flat: Vec<S> = j.normals.iter().flatten().map(|v| S::lit(*v)).collect();
        let normals = Array2::from_shape_vec((j.normals.len(), p), flat)
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        Self::new(normals, j.offsets.iter().map(|v| S::lit(*v)).collect())
    }
}
