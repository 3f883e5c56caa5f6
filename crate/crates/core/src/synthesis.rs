//! Robust synthesis linear programs over the vertices of a parameter
//! polytope, for the central controller and for one node of the
//! distributed controller, plus the two-phase margin/performance solve.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::lpcore::{self, encode_abs_sum_bound, AffineExpr, LinearProgram, LpBuilder, LpStatus, NormKind};
use crate::model::{CostPair, StructuredModel, Topology};
use crate::slscontrol::{self, BlockResponse, ColumnResponse};

/// Sums of at most this many absolute values are expanded over sign
/// patterns; longer sums get one slack per term.
pub const PATTERN_LIMIT: usize = 6;

/// Phase-1 margins within this distance of `λ*` still trigger phase 2.
pub const PHASE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Lambda,
    CostCD,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Phase {
    Robustness,
    Performance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthStatus {
    Feasible,
    Infeasible,
}

/// Linear form over the core decision variables; the last entry is the
/// constant.
type Lin = Vec<f64>;

fn lin_zero(nc: usize) -> Lin {
    vec![0.0; nc + 1]
}

fn lin_const(nc: usize, c: f64) -> Lin {
    let mut l = lin_zero(nc);
    l[nc] = c;
    l
}

fn lin_var(nc: usize, j: usize) -> Lin {
    let mut l = lin_zero(nc);
    l[j] = 1.0;
    l
}

fn axpy(y: &mut Lin, a: f64, x: &Lin) {
    if a != 0.0 {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += a * xi;
        }
    }
}

fn is_zero(l: &Lin) -> bool {
    l.iter().all(|v| *v == 0.0)
}

fn is_const(l: &Lin) -> bool {
    l[..l.len() - 1].iter().all(|v| *v == 0.0)
}

fn to_affine(l: &Lin) -> AffineExpr<f64> {
    let nc = l.len() - 1;
    let mut e = AffineExpr::constant(l[nc]);
    for (j, &c) in l[..nc].iter().enumerate() {
        e.add_term(j, c);
    }
    e
}

/// Lines of a matrix whose induced norm is the largest absolute line sum.
fn matrix_lines(norm: NormKind, m: &Array2<Lin>) -> Vec<Vec<Lin>> {
    match norm {
        NormKind::MaxAbs => m.outer_iter().map(|r| r.to_vec()).collect(),
        NormKind::SumAbs => m.columns().into_iter().map(|c| c.to_vec()).collect(),
    }
}

fn vector_lines(norm: NormKind, v: Vec<Lin>) -> Vec<Vec<Lin>> {
    match norm {
        NormKind::MaxAbs => v.into_iter().map(|e| vec![e]).collect(),
        NormKind::SumAbs => vec![v],
    }
}

/// `Σ_items max_line Σ_entries |e| ≤ bound`, the sum of norms of several
/// matrices or vectors given by their lines.
fn sum_of_norms_le(b: &mut LpBuilder<f64>, items: Vec<Vec<Vec<Lin>>>, bound: &AffineExpr<f64>) {
    let mut rhs = bound.clone();
    let mut direct: Vec<AffineExpr<f64>> = Vec::new();
    for item in items {
        let lines: Vec<Vec<Lin>> = item
            .into_iter()
            .filter(|line| !line.iter().all(is_zero))
            .collect();
        if lines.is_empty() {
            continue;
        }
        if lines.iter().all(|line| line.iter().all(is_const)) {
            let worst = lines
                .iter()
                .map(|line| line.iter().map(|e| e[e.len() - 1].abs()).sum::<f64>())
                .fold(0.0, f64::max);
            rhs.constant -= worst;
        } else if lines.len() == 1 {
            direct.extend(lines[0].iter().map(to_affine));
        } else {
            let tau = b.add_var(0.0, f64::INFINITY);
            let tau_e = AffineExpr::var(tau);
            for line in &lines {
                let terms: Vec<_> = line.iter().map(to_affine).collect();
                encode_abs_sum_bound(b, &terms, &tau_e, PATTERN_LIMIT);
            }
            rhs.add_term(tau, -1.0);
        }
    }
    encode_abs_sum_bound(b, &direct, &rhs, PATTERN_LIMIT);
}

/// Global basis matrices `(𝒜_s, ℬ_s)` for `s = 1..p`.
pub fn global_basis(model: &StructuredModel) -> Result<Vec<(Array2<f64>, Array2<f64>)>> {
    (0..model.p)
        .map(|s| {
            let mut e = vec![0.0; model.p];
            e[s] = 1.0;
            model.global_matrices(&model.assemble(&e)?)
        })
        .collect()
}

/// `(A, B)` at a parameter value, from the global basis.
pub fn combine_basis(basis: &[(Array2<f64>, Array2<f64>)], alpha: &[f64]) -> (Array2<f64>, Array2<f64>) {
    let mut a = Array2::zeros(basis[0].0.dim());
    let mut b = Array2::zeros(basis[0].1.dim());
    for ((bs_a, bs_b), &x) in basis.iter().zip(alpha) {
        if x != 0.0 {
            a.scaled_add(x, bs_a);
            b.scaled_add(x, bs_b);
        }
    }
    (a, b)
}

/// Response entries as linear forms: `r[k-1]` over `lrows × cols`,
/// `m[k-1]` over `linputs × cols`.
struct ResponseExprs {
    nc: usize,
    lrows: Vec<usize>,
    linputs: Vec<usize>,
    r: Vec<Array2<Lin>>,
    m: Vec<Array2<Lin>>,
    r_var: Vec<Array2<Option<usize>>>,
    m_var: Vec<Array2<Option<usize>>>,
}

impl ResponseExprs {
    fn horizon(&self) -> usize {
        self.r.len()
    }

    fn cols(&self) -> usize {
        self.r[0].ncols()
    }

    /// Builds the linear forms after the variable map is fixed.
    fn fill(&mut self, identity: &[(usize, usize)]) {
        let nc = self.nc;
        let t = self.r_var.len();
        let cols = self.r_var[0].ncols();
        self.r = (0..t)
            .map(|k| {
                Array2::from_shape_fn((self.lrows.len(), cols), |(a, c)| match self.r_var[k][[a, c]] {
                    Some(v) => lin_var(nc, v),
                    None if k == 0 && identity.contains(&(a, c)) => lin_const(nc, 1.0),
                    None => lin_zero(nc),
                })
            })
            .collect();
        self.m = (0..t)
            .map(|k| {
                Array2::from_shape_fn((self.linputs.len(), cols), |(a, c)| match self.m_var[k][[a, c]] {
                    Some(v) => lin_var(nc, v),
                    None => lin_zero(nc),
                })
            })
            .collect();
    }

    /// Reads `(R, M)` with global rows from a solution vector.
    fn extract(&self, x: &[f64], n: usize, m: usize, identity: &[(usize, usize)]) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let cols = self.cols();
        let mut r = vec![Array2::zeros((n, cols)); self.horizon()];
        let mut mm = vec![Array2::zeros((m, cols)); self.horizon()];
        for k in 0..self.horizon() {
            for (a, &row) in self.lrows.iter().enumerate() {
                for c in 0..cols {
                    r[k][[row, c]] = match self.r_var[k][[a, c]] {
                        Some(v) => x[v],
                        None if k == 0 && identity.contains(&(a, c)) => 1.0,
                        None => 0.0,
                    };
                }
            }
            for (a, &row) in self.linputs.iter().enumerate() {
                for c in 0..cols {
                    if let Some(v) = self.m_var[k][[a, c]] {
                        mm[k][[row, c]] = x[v];
                    }
                }
            }
        }
        (r, mm)
    }

    /// Writes the free entries of `(R, M)` into a core solution vector.
    fn pack(&self, r: &[Array2<f64>], m: &[Array2<f64>], x: &mut [f64]) {
        for k in 0..self.horizon() {
            for (a, &row) in self.lrows.iter().enumerate() {
                for c in 0..self.cols() {
                    if let Some(v) = self.r_var[k][[a, c]] {
                        x[v] = r[k][[row, c]];
                    }
                }
            }
            for (a, &row) in self.linputs.iter().enumerate() {
                for c in 0..self.cols() {
                    if let Some(v) = self.m_var[k][[a, c]] {
                        x[v] = m[k][[row, c]];
                    }
                }
            }
        }
    }
}

/// Residuals `Δ_k(α)` restricted to `qrows`, linear in `α`:
/// `Δ_k(α) = shift_k − Σ_s α_s P_{s,k}`.
struct ResidualModel {
    shift: Vec<Array2<Lin>>,
    per_param: Vec<Vec<Array2<Lin>>>,
    relevant: Vec<usize>,
}

impl ResidualModel {
    fn new(basis: &[(Array2<f64>, Array2<f64>)], re: &ResponseExprs, qrows: Vec<usize>) -> Self {
        let nc = re.nc;
        let t = re.horizon();
        let cols = re.cols();
        let q = qrows.len();
        let shift = (0..t)
            .map(|k| {
                Array2::from_shape_fn((q, cols), |(a, c)| {
                    if k + 1 < t {
                        match re.lrows.iter().position(|&l| l == qrows[a]) {
                            Some(pos) => re.r[k + 1][[pos, c]].clone(),
                            None => lin_zero(nc),
                        }
                    } else {
                        lin_zero(nc)
                    }
                })
            })
            .collect();
        let mut relevant = Vec::new();
        let per_param = basis
            .iter()
            .enumerate()
            .map(|(s, (a_s, b_s))| {
                let mut touched = false;
                let blocks = (0..t)
                    .map(|k| {
                        Array2::from_shape_fn((q, cols), |(a, c)| {
                            let mut out = lin_zero(nc);
                            for (l, &lrow) in re.lrows.iter().enumerate() {
                                let coef = a_s[[qrows[a], lrow]];
                                if coef != 0.0 {
                                    touched = true;
                                    axpy(&mut out, coef, &re.r[k][[l, c]]);
                                }
                            }
                            for (u, &ucol) in re.linputs.iter().enumerate() {
                                let coef = b_s[[qrows[a], ucol]];
                                if coef != 0.0 {
                                    touched = true;
                                    axpy(&mut out, coef, &re.m[k][[u, c]]);
                                }
                            }
                            out
                        })
                    })
                    .collect::<Vec<_>>();
                if touched {
                    relevant.push(s);
                }
                blocks
            })
            .collect();
        ResidualModel {
            shift,
            per_param,
            relevant,
        }
    }

    fn at(&self, alpha: &[f64]) -> Vec<Array2<Lin>> {
        self.shift
            .iter()
            .enumerate()
            .map(|(k, base)| {
                let mut d = base.clone();
                for &s in &self.relevant {
                    if alpha[s] != 0.0 {
                        for (e, p) in d.iter_mut().zip(self.per_param[s][k].iter()) {
                            axpy(e, -alpha[s], p);
                        }
                    }
                }
                d
            })
            .collect()
    }

    /// Vertices that differ only in parameters the residuals ignore are
    /// merged.
    fn distinct_vertices(&self, vertices: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for v in vertices {
            let mut proj = vec![0.0; v.len()];
            for &s in &self.relevant {
                proj[s] = v[s];
            }
            let dup = out.iter().any(|w| {
                w.iter()
                    .zip(&proj)
                    .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs())))
            });
            if !dup {
                out.push(proj);
            }
        }
        out
    }
}

fn row_slice(qrows: &[usize], model: &StructuredModel, j: usize) -> std::ops::Range<usize> {
    let off = model.state_offset(j);
    let start = qrows.iter().position(|&r| r == off).expect("row of node in set");
    start..start + model.state_dims[j]
}

/// Central synthesis inputs. `deltas[k-1] = δ̂_{t−k}` (zero before the
/// start); only the first `T−1` entries are used.
#[derive(Debug, Clone)]
pub struct CentralRequest<'a> {
    pub model: &'a StructuredModel,
    pub vertices: &'a [Vec<f64>],
    pub previous: Option<&'a BlockResponse>,
    pub deltas: &'a [Array1<f64>],
    pub m_a: f64,
    pub lambda_star: f64,
    pub cost: &'a CostPair,
    pub norm: NormKind,
    pub horizon: usize,
}

/// Node synthesis inputs. `past[s]` and `deltas[s]` are the node's final
/// response and effective disturbance at time `s < t`.
#[derive(Debug, Clone)]
pub struct NodeRequest<'a> {
    pub model: &'a StructuredModel,
    pub topology: &'a Topology,
    pub node: usize,
    pub t: usize,
    pub vertices: &'a [Vec<f64>],
    pub past: &'a [ColumnResponse],
    pub deltas: &'a [Array1<f64>],
    pub rho: f64,
    pub m1: f64,
    pub m2: f64,
    pub lambda_star: f64,
    pub cost: &'a CostPair,
    pub norm: NormKind,
    pub horizon: usize,
}

/// A built program with the map back to controller blocks.
pub struct BuiltLp {
    pub lp: LinearProgram<f64>,
    pub lambda_var: usize,
    pub c_var: Option<usize>,
    pub num_core: usize,
    exprs: ResponseExprs,
    identity: Vec<(usize, usize)>,
    n: usize,
    m: usize,
}

impl BuiltLp {
    pub fn num_vars(&self) -> usize {
        self.lp.num_vars()
    }

    pub fn num_rows(&self) -> usize {
        self.lp.num_rows()
    }

    /// Number of free response entries (excludes `λ`, `c` and epigraph
    /// variables).
    pub fn num_response_vars(&self) -> usize {
        self.num_core - 1 - usize::from(self.c_var.is_some())
    }

    pub fn blocks(&self, x: &[f64]) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        self.exprs.extract(x, self.n, self.m, &self.identity)
    }

    /// Core solution vector for given blocks; auxiliary variables are left
    /// at zero.
    pub fn pack(&self, r: &[Array2<f64>], m: &[Array2<f64>], lambda: f64, c: Option<f64>) -> Vec<f64> {
        let mut x = vec![0.0; self.lp.num_vars()];
        self.exprs.pack(r, m, &mut x);
        x[self.lambda_var] = lambda;
        if let (Some(cv), Some(c)) = (self.c_var, c) {
            x[cv] = c;
        }
        x
    }
}

fn add_cost_objective(
    b: &mut LpBuilder<f64>,
    re: &ResponseExprs,
    cost: &CostPair,
    norm: NormKind,
    lambda: usize,
    lambda_star: f64,
) -> Result<()> {
    let nc = re.nc;
    if cost.c.ncols() <= *re.lrows.iter().max().unwrap_or(&0) || cost.c.nrows() != cost.d.nrows() {
        return Err(Error::DimensionMismatch("cost matrices".into()));
    }
    b.add_le(&AffineExpr::var(lambda), &AffineExpr::constant(lambda_star));
    let q = cost.c.nrows();
    let mut obj = AffineExpr::default();
    for k in 0..re.horizon() {
        let block = Array2::from_shape_fn((q, re.cols()), |(row, c)| {
            let mut e = lin_zero(nc);
            for (l, &lrow) in re.lrows.iter().enumerate() {
                axpy(&mut e, cost.c[[row, lrow]], &re.r[k][[l, c]]);
            }
            for (u, &ucol) in re.linputs.iter().enumerate() {
                axpy(&mut e, cost.d[[row, ucol]], &re.m[k][[u, c]]);
            }
            e
        });
        let sigma = b.add_var(0.0, f64::INFINITY);
        sum_of_norms_le(b, vec![matrix_lines(norm, &block)], &AffineExpr::var(sigma));
        obj.add_term(sigma, 1.0);
    }
    b.set_objective(&obj);
    Ok(())
}

/// The central program: free `R(2..T)`, `M(1..T)` and `λ`, the margin bound
/// at every vertex, the adaptation bound against the previous `R`, and
/// either `min λ` or the cost objective with `λ ≤ λ*`.
pub fn build_central(req: &CentralRequest<'_>, objective: Objective) -> Result<BuiltLp> {
    let model = req.model;
    let (n, m, t) = (model.n_state(), model.n_input(), req.horizon);
    if t < 1 || req.vertices.is_empty() {
        return Err(Error::DimensionMismatch("central synthesis needs T ≥ 1 and at least one vertex".into()));
    }
    if req.vertices.iter().any(|v| v.len() != model.p) {
        return Err(Error::DimensionMismatch("vertex length differs from p".into()));
    }
    let mut next = 0usize;
    let mut alloc = || {
        next += 1;
        Some(next - 1)
    };
    let r_var: Vec<Array2<Option<usize>>> = (0..t)
        .map(|k| Array2::from_shape_fn((n, n), |_| if k == 0 { None } else { alloc() }))
        .collect();
    let m_var: Vec<Array2<Option<usize>>> = (0..t).map(|_| Array2::from_shape_fn((m, n), |_| alloc())).collect();
    let lambda = next;
    let nc = next + 1;
    let identity: Vec<(usize, usize)> = (0..n).map(|a| (a, a)).collect();
    let mut re = ResponseExprs {
        nc,
        lrows: (0..n).collect(),
        linputs: (0..m).collect(),
        r: Vec::new(),
        m: Vec::new(),
        r_var,
        m_var,
    };
    re.fill(&identity);
    let basis = global_basis(model)?;
    let rm = ResidualModel::new(&basis, &re, (0..n).collect());

    let mut b = LpBuilder::<f64>::new();
    b.add_vars(nc, f64::NEG_INFINITY, f64::INFINITY);
    let lam = AffineExpr::var(lambda);
    for v in rm.distinct_vertices(req.vertices) {
        let items = rm.at(&v).iter().map(|d| matrix_lines(req.norm, d)).collect();
        sum_of_norms_le(&mut b, items, &lam);
    }
    if let Some(prev) = req.previous {
        if req.m_a.is_finite() {
            prev.check(n, m)?;
            let mut diff: Vec<Lin> = (0..n).map(|_| lin_zero(nc)).collect();
            for k in 1..t {
                let Some(d) = req.deltas.get(k - 1) else { break };
                let pd = prev.r[k].dot(d);
                for a in 0..n {
                    diff[a][nc] += pd[a];
                    for c in 0..n {
                        axpy(&mut diff[a], -d[c], &re.r[k][[a, c]]);
                    }
                }
            }
            sum_of_norms_le(&mut b, vec![vector_lines(req.norm, diff)], &AffineExpr::constant(req.m_a));
        }
    }
    match objective {
        Objective::Lambda => b.set_objective(&lam),
        Objective::CostCD => add_cost_objective(&mut b, &re, req.cost, req.norm, lambda, req.lambda_star)?,
    }
    Ok(BuiltLp {
        lp: b.build(),
        lambda_var: lambda,
        c_var: None,
        num_core: nc,
        exprs: re,
        identity,
        n,
        m,
    })
}

/// Support of node `i`'s column: `R^{j←i}(k)` is free for `j ∈ 𝓛(i)` and
/// `k > max(1, d_{j←i})`, `M^{j←i}(k)` for actuated `j ∈ 𝓛(i)` and
/// `k > d_{j←i}`.
pub fn node_support(model: &StructuredModel, topo: &Topology, i: usize, horizon: usize) -> (Vec<Array2<bool>>, Vec<Array2<bool>>) {
    let (n, m, ni) = (model.n_state(), model.n_input(), model.state_dims[i]);
    let mut r = vec![Array2::from_elem((n, ni), false); horizon];
    let mut mm = vec![Array2::from_elem((m, ni), false); horizon];
    for &j in &topo.local_regions[i] {
        let d = topo.delay(j, i);
        for k in 1..=horizon {
            if k >= 2 && k > d {
                let off = model.state_offset(j);
                for a in 0..model.state_dims[j] {
                    for c in 0..ni {
                        r[k - 1][[off + a, c]] = true;
                    }
                }
            }
            if k > d {
                let off = model.input_offset(j);
                for a in 0..model.input_dims[j] {
                    for c in 0..ni {
                        mm[k - 1][[off + a, c]] = true;
                    }
                }
            }
        }
    }
    (r, mm)
}

/// The program solved by node `i`: its column blocks on the localised
/// support, `c ≥ 0` and `λ = c(1−ρ^T)/(1−ρ)`, the geometric residual
/// profile at every vertex, the delayed-update and block-change adaptation
/// bounds against stored snapshots, and the chosen objective.
pub fn build_node(req: &NodeRequest<'_>, objective: Objective) -> Result<BuiltLp> {
    let (model, topo, i, t, horizon) = (req.model, req.topology, req.node, req.t, req.horizon);
    model.check_node(i)?;
    topo.validate(model)?;
    if req.vertices.is_empty() || req.vertices.iter().any(|v| v.len() != model.p) {
        return Err(Error::DimensionMismatch("node synthesis needs vertices of length p".into()));
    }
    if req.past.len() < t || req.deltas.len() < t {
        return Err(Error::InsufficientHistory {
            needed: t,
            have: req.past.len().min(req.deltas.len()),
        });
    }
    let (n, m, ni) = (model.n_state(), model.n_input(), model.state_dims[i]);
    let mut local: Vec<usize> = topo.local_regions[i].clone();
    local.sort_unstable();
    let lrows: Vec<usize> = local
        .iter()
        .flat_map(|&j| (0..model.state_dims[j]).map(move |a| model.state_offset(j) + a))
        .collect();
    let linputs: Vec<usize> = local
        .iter()
        .flat_map(|&j| (0..model.input_dims[j]).map(move |a| model.input_offset(j) + a))
        .collect();
    let (rs, ms) = node_support(model, topo, i, horizon);
    let mut next = 0usize;
    let mut r_var = Vec::new();
    let mut m_var = Vec::new();
    for k in 0..horizon {
        r_var.push(Array2::from_shape_fn((lrows.len(), ni), |(a, c)| {
            rs[k][[lrows[a], c]].then(|| {
                next += 1;
                next - 1
            })
        }));
    }
    for k in 0..horizon {
        m_var.push(Array2::from_shape_fn((linputs.len(), ni), |(a, c)| {
            ms[k][[linputs[a], c]].then(|| {
                next += 1;
                next - 1
            })
        }));
    }
    let c_var = next;
    let lambda = next + 1;
    let nc = next + 2;
    let ioff = model.state_offset(i);
    let ipos = lrows.iter().position(|&r| r == ioff).expect("node in its local region");
    let identity: Vec<(usize, usize)> = (0..ni).map(|a| (ipos + a, a)).collect();
    let mut re = ResponseExprs {
        nc,
        lrows,
        linputs,
        r: Vec::new(),
        m: Vec::new(),
        r_var,
        m_var,
    };
    re.fill(&identity);
    let rows = slscontrol::residual_rows(model, topo, i);
    let qrows: Vec<usize> = rows
        .iter()
        .flat_map(|&j| (0..model.state_dims[j]).map(move |a| model.state_offset(j) + a))
        .collect();
    let basis = global_basis(model)?;
    let rm = ResidualModel::new(&basis, &re, qrows.clone());
    let dbar = slscontrol::max_delay(model, topo, i);
    let norm = req.norm;

    let mut b = LpBuilder::<f64>::new();
    b.add_vars(nc, f64::NEG_INFINITY, f64::INFINITY);
    b.set_bounds(c_var, 0.0, f64::INFINITY);
    let gsum = (1.0 - req.rho.powi(horizon as i32)) / (1.0 - req.rho);
    b.add_eq(&AffineExpr::var(lambda), &AffineExpr::term(c_var, gsum));

    let delta_at = |tau: isize| -> Option<&Array1<f64>> { (tau >= 0).then(|| &req.deltas[tau as usize]) };
    for v in rm.distinct_vertices(req.vertices) {
        let res = rm.at(&v);
        for (k, d) in res.iter().enumerate() {
            let items = rows
                .iter()
                .map(|&j| {
                    let sl = row_slice(&qrows, model, j);
                    matrix_lines(norm, &d.slice(ndarray::s![sl, ..]).to_owned())
                })
                .collect();
            sum_of_norms_le(&mut b, items, &AffineExpr::term(c_var, req.rho.powi(k as i32)));
        }
        let (av, bv) = combine_basis(&basis, &v);
        for h in 0..dbar {
            let mut items = Vec::new();
            for &j in &rows {
                let dj = topo.delay(j, i);
                if dj < h + 1 {
                    continue;
                }
                let snap = t as isize + h as isize - dj as isize;
                if snap < 0 {
                    continue;
                }
                let old = &req.past[snap as usize];
                let old_res = slscontrol::delta_residuals(&av, &bv, &old.r, &old.m)?;
                let sl = row_slice(&qrows, model, j);
                let goff = model.state_offset(j);
                let mut acc: Vec<Lin> = (0..model.state_dims[j]).map(|_| lin_zero(nc)).collect();
                for k in dj + 1..=horizon {
                    let Some(del) = delta_at(t as isize + h as isize + 1 - k as isize) else { continue };
                    for (a, row) in sl.clone().enumerate() {
                        for c in 0..ni {
                            axpy(&mut acc[a], del[c], &res[k - 1][[row, c]]);
                            acc[a][nc] -= old_res[k - 1][[goff + a, c]] * del[c];
                        }
                    }
                }
                items.push(vector_lines(norm, acc));
            }
            sum_of_norms_le(&mut b, items, &AffineExpr::constant(req.m1));
        }
    }
    if t > 0 {
        let prev = &req.past[t - 1];
        // change of R^{j←i}(k+1) weighted by δ̂; one group per delay value
        let change_group = |delay: usize, k_from: usize, shift: isize| -> Vec<Vec<Vec<Lin>>> {
            let mut items = Vec::new();
            for &j in &local {
                if topo.delay(j, i) != delay {
                    continue;
                }
                let goff = model.state_offset(j);
                let lpos = re.lrows.iter().position(|&r| r == goff).expect("local row");
                let mut acc: Vec<Lin> = (0..model.state_dims[j]).map(|_| lin_zero(nc)).collect();
                for k in k_from..horizon {
                    let Some(del) = delta_at(t as isize + shift - k as isize) else { continue };
                    for (a, e) in acc.iter_mut().enumerate() {
                        for c in 0..ni {
                            axpy(e, del[c], &re.r[k][[lpos + a, c]]);
                            e[nc] -= prev.r[k][[goff + a, c]] * del[c];
                        }
                    }
                }
                items.push(vector_lines(norm, acc));
            }
            items
        };
        for h in 0..dbar {
            let items = change_group(h + 1, h + 2, h as isize + 1);
            sum_of_norms_le(&mut b, items, &AffineExpr::constant(req.m2));
        }
        let items = change_group(0, 1, 0);
        sum_of_norms_le(&mut b, items, &AffineExpr::constant(req.m2));
    }
    let lam = AffineExpr::var(lambda);
    match objective {
        Objective::Lambda => b.set_objective(&lam),
        Objective::CostCD => add_cost_objective(&mut b, &re, req.cost, norm, lambda, req.lambda_star)?,
    }
    Ok(BuiltLp {
        lp: b.build(),
        lambda_var: lambda,
        c_var: Some(c_var),
        num_core: nc,
        exprs: re,
        identity,
        n,
        m,
    })
}

/// Outcome of the two-phase solve. `lambda` is the phase-1 optimum;
/// `lambda_bound` is the margin certified by the returned blocks.
#[derive(Debug, Clone)]
pub struct SynthesisResult<R> {
    pub status: SynthStatus,
    pub lambda: f64,
    pub lambda_bound: f64,
    pub c: Option<f64>,
    pub response: R,
    pub objective_value: f64,
    pub phase: Phase,
    pub num_vars: usize,
    pub num_rows: usize,
}

fn dump(dir: Option<&Path>, tag: &str, lp: &LinearProgram<f64>) -> Result<()> {
    if let Some(d) = dir {
        std::fs::create_dir_all(d)?;
        std::fs::write(d.join(format!("{tag}.lp")), lpcore::write_text(lp))?;
    }
    Ok(())
}

struct RawOutcome {
    status: SynthStatus,
    lambda: f64,
    lambda_bound: f64,
    c: Option<f64>,
    blocks: (Vec<Array2<f64>>, Vec<Array2<f64>>),
    objective_value: f64,
    phase: Phase,
    num_vars: usize,
    num_rows: usize,
}

fn run_two_phase(
    build: impl Fn(Objective) -> Result<BuiltLp>,
    lambda_star: f64,
    dump_dir: Option<&Path>,
    tag: &str,
) -> Result<RawOutcome> {
    let p1 = build(Objective::Lambda)?;
    dump(dump_dir, &format!("{tag}-p1"), &p1.lp)?;
    let s1 = lpcore::solve(&p1.lp)?;
    match s1.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Ok(RawOutcome {
                status: SynthStatus::Infeasible,
                lambda: f64::INFINITY,
                lambda_bound: f64::INFINITY,
                c: None,
                blocks: p1.blocks(&vec![0.0; p1.num_vars()]),
                objective_value: f64::INFINITY,
                phase: Phase::Robustness,
                num_vars: p1.num_vars(),
                num_rows: p1.num_rows(),
            })
        }
        LpStatus::Unbounded => {
            return Err(Error::NumericalBreakdown("margin program reported unbounded".into()));
        }
    }
    let lambda = s1.point[p1.lambda_var].max(0.0);
    let mut out = RawOutcome {
        status: SynthStatus::Feasible,
        lambda,
        lambda_bound: lambda,
        c: p1.c_var.map(|c| s1.point[c]),
        blocks: p1.blocks(&s1.point),
        objective_value: s1.objective_value,
        phase: Phase::Robustness,
        num_vars: p1.num_vars(),
        num_rows: p1.num_rows(),
    };
    if lambda <= lambda_star + PHASE_TOL {
        let p2 = build(Objective::CostCD)?;
        dump(dump_dir, &format!("{tag}-p2"), &p2.lp)?;
        let s2 = lpcore::solve(&p2.lp)?;
        if s2.status == LpStatus::Optimal {
            out.lambda_bound = s2.point[p2.lambda_var].max(0.0);
            out.c = p2.c_var.map(|c| s2.point[c]);
            out.blocks = p2.blocks(&s2.point);
            out.objective_value = s2.objective_value;
            out.phase = Phase::Performance;
            out.num_vars = p2.num_vars();
            out.num_rows = p2.num_rows();
        }
    }
    Ok(out)
}

/// Phase 1 minimises `λ`; if the optimum is at most `λ*`, phase 2 minimises
/// the cost subject to `λ ≤ λ*`.
pub fn two_phase_central(req: &CentralRequest<'_>, dump_dir: Option<&Path>, tag: &str) -> Result<SynthesisResult<BlockResponse>> {
    let out = run_two_phase(|obj| build_central(req, obj), req.lambda_star, dump_dir, tag)?;
    Ok(SynthesisResult {
        status: out.status,
        lambda: out.lambda,
        lambda_bound: out.lambda_bound,
        c: None,
        response: BlockResponse {
            r: out.blocks.0,
            m: out.blocks.1,
        },
        objective_value: out.objective_value,
        phase: out.phase,
        num_vars: out.num_vars,
        num_rows: out.num_rows,
    })
}

pub fn two_phase_node(req: &NodeRequest<'_>, dump_dir: Option<&Path>, tag: &str) -> Result<SynthesisResult<ColumnResponse>> {
    let out = run_two_phase(|obj| build_node(req, obj), req.lambda_star, dump_dir, tag)?;
    Ok(SynthesisResult {
        status: out.status,
        lambda: out.lambda,
        lambda_bound: out.lambda_bound,
        c: out.c,
        response: ColumnResponse {
            node: req.node,
            r: out.blocks.0,
            m: out.blocks.1,
        },
        objective_value: out.objective_value,
        phase: out.phase,
        num_vars: out.num_vars,
        num_rows: out.num_rows,
    })
}

/// Checks the central conditions for given blocks: the margin at every
/// vertex and the adaptation bound. Returns the smallest slack.
pub fn central_slack(req: &CentralRequest<'_>, resp: &BlockResponse, lambda: f64) -> Result<f64> {
    let basis = global_basis(req.model)?;
    let mut worst = f64::INFINITY;
    for v in req.vertices {
        let (a, b) = combine_basis(&basis, v);
        worst = worst.min(lambda - slscontrol::margin_of(&a, &b, resp, req.norm)?);
    }
    if let (Some(prev), true) = (req.previous, req.m_a.is_finite()) {
        let mut diff = Array1::zeros(req.model.n_state());
        for k in 1..req.horizon {
            if let Some(d) = req.deltas.get(k - 1) {
                diff += &(&prev.r[k] - &resp.r[k]).dot(d);
            }
        }
        worst = worst.min(req.m_a - req.norm.vector_norm(diff.as_slice().expect("contiguous")));
    }
    Ok(worst)
}
