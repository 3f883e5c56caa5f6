//! Finite-horizon system level controllers: the δ̂/u implementation, the
//! residual calculus `Δ_k` and the robustness bounds built on it.

use std::collections::VecDeque;

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lpcore::NormKind;
use crate::model::{StructuredModel, Topology};

/// Global closed-loop maps, `r[k-1] = R(k)` (n×n) and `m[k-1] = M(k)` (m×n).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockResponse {
    pub r: Vec<Array2<f64>>,
    pub m: Vec<Array2<f64>>,
}

impl BlockResponse {
    /// `R(1) = I`, everything else zero.
    pub fn identity(n: usize, m: usize, horizon: usize) -> Self {
        let mut r = vec![Array2::zeros((n, n)); horizon];
        r[0] = Array2::eye(n);
        BlockResponse {
            r,
            m: vec![Array2::zeros((m, n)); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.r.len()
    }

    pub fn n_state(&self) -> usize {
        self.r[0].nrows()
    }

    pub fn n_input(&self) -> usize {
        self.m[0].nrows()
    }

    pub fn check(&self, n: usize, m: usize) -> Result<()> {
        let t = self.r.len();
        if t == 0 || self.m.len() != t {
            return Err(Error::DimensionMismatch("response needs T ≥ 1 blocks of R and M".into()));
        }
        let cols = self.r[0].ncols();
        if self.r.iter().any(|b| b.dim() != (n, cols)) || self.m.iter().any(|b| b.dim() != (m, cols)) {
            return Err(Error::DimensionMismatch(format!(
                "response blocks must be {n}×{cols} (R) and {m}×{cols} (M)"
            )));
        }
        Ok(())
    }

    /// Concatenates per-node column blocks in node order.
    pub fn from_columns(cols: &[&ColumnResponse]) -> Self {
        let t = cols[0].r.len();
        let r = (0..t)
            .map(|k| {
                let views: Vec<_> = cols.iter().map(|c| c.r[k].view()).collect();
                ndarray::concatenate(ndarray::Axis(1), &views).expect("column blocks")
            })
            .collect();
        let m = (0..t)
            .map(|k| {
                let views: Vec<_> = cols.iter().map(|c| c.m[k].view()).collect();
                ndarray::concatenate(ndarray::Axis(1), &views).expect("column blocks")
            })
            .collect();
        BlockResponse { r, m }
    }
}

/// The columns of `R` and `M` owned by one node: `r[k-1]` is n×n_i and
/// holds `R^{j←i}(k)` in the rows of node `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnResponse {
    pub node: usize,
    pub r: Vec<Array2<f64>>,
    pub m: Vec<Array2<f64>>,
}

impl ColumnResponse {
    pub fn identity(model: &StructuredModel, node: usize, horizon: usize) -> Self {
        let (n, m, ni) = (model.n_state(), model.n_input(), model.state_dims[node]);
        let mut r = vec![Array2::zeros((n, ni)); horizon];
        let off = model.state_offset(node);
        for a in 0..ni {
            r[0][[off + a, a]] = 1.0;
        }
        ColumnResponse {
            node,
            r,
            m: vec![Array2::zeros((m, ni)); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.r.len()
    }

    /// `R^{j←i}(k)`.
    pub fn r_block(&self, model: &StructuredModel, j: usize, k: usize) -> Array2<f64> {
        let off = model.state_offset(j);
        self.r[k - 1].slice(s![off..off + model.state_dims[j], ..]).to_owned()
    }

    /// `M^{j←i}(k)`.
    pub fn m_block(&self, model: &StructuredModel, j: usize, k: usize) -> Array2<f64> {
        let off = model.input_offset(j);
        self.m[k - 1].slice(s![off..off + model.input_dims[j], ..]).to_owned()
    }

    pub fn minus(&self, other: &ColumnResponse) -> ColumnResponse {
        ColumnResponse {
            node: self.node,
            r: self.r.iter().zip(&other.r).map(|(a, b)| a - b).collect(),
            m: self.m.iter().zip(&other.m).map(|(a, b)| a - b).collect(),
        }
    }
}

/// `R̂_t`, `M̂_t` of the distributed implementation: block `(j, i)` is taken
/// from node `i`'s response computed `d_{j←i}` steps earlier. `column_at(i, s)`
/// returns node `i`'s response at time `s` (negative times clamp to 0).
pub fn compose_delayed<'a>(
    model: &StructuredModel,
    topo: &Topology,
    t: usize,
    column_at: impl Fn(usize, usize) -> &'a ColumnResponse,
) -> BlockResponse {
    let (n, m) = (model.n_state(), model.n_input());
    let horizon = column_at(0, t).horizon();
    let mut out = BlockResponse {
        r: vec![Array2::zeros((n, n)); horizon],
        m: vec![Array2::zeros((m, n)); horizon],
    };
    for i in 0..model.n_nodes() {
        let (ci, ni) = (model.state_offset(i), model.state_dims[i]);
        for j in 0..model.n_nodes() {
            let src = column_at(i, t.saturating_sub(topo.delay(j, i)));
            let (rj, nj) = (model.state_offset(j), model.state_dims[j]);
            let (uj, mj) = (model.input_offset(j), model.input_dims[j]);
            for k in 0..horizon {
                out.r[k]
                    .slice_mut(s![rj..rj + nj, ci..ci + ni])
                    .assign(&src.r[k].slice(s![rj..rj + nj, ..]));
                out.m[k]
                    .slice_mut(s![uj..uj + mj, ci..ci + ni])
                    .assign(&src.m[k].slice(s![uj..uj + mj, ..]));
            }
        }
    }
    out
}

/// History of effective disturbances, newest first, always exactly `T` long
/// (zero before the start).
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    history: VecDeque<Array1<f64>>,
    steps: usize,
}

impl ControllerState {
    pub fn new(n: usize, horizon: usize) -> Self {
        ControllerState {
            history: std::iter::repeat_n(Array1::zeros(n), horizon).collect(),
            steps: 0,
        }
    }

    pub fn horizon(&self) -> usize {
        self.history.len()
    }

    /// `δ̂_{t−k}` relative to the most recent update (`k = 0` is the newest).
    pub fn delta(&self, k: usize) -> &Array1<f64> {
        &self.history[k]
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `δ̂_t = y_t − Σ_{k=1}^{T−1} R(k+1) δ̂_{t−k}`; rotates the history.
    pub fn delta_update(&mut self, resp: &BlockResponse, y: &Array1<f64>) -> Result<Array1<f64>> {
        let t = self.horizon();
        if resp.horizon() != t || y.len() != self.history[0].len() || resp.n_state() != y.len() {
            return Err(Error::DimensionMismatch("δ̂ update dimensions".into()));
        }
        let mut d = y.clone();
        for k in 1..t {
            d -= &resp.r[k].dot(&self.history[k - 1]);
        }
        self.history.pop_back();
        self.history.push_front(d.clone());
        self.steps += 1;
        Ok(d)
    }

    /// `u_t = Σ_{k=0}^{T−1} M(k+1) δ̂_{t−k}`, using the history after
    /// this step's `delta_update`.
    pub fn control_output(&self, resp: &BlockResponse) -> Result<Array1<f64>> {
        if resp.horizon() != self.horizon() || resp.m[0].ncols() != self.history[0].len() {
            return Err(Error::DimensionMismatch("control output dimensions".into()));
        }
        let mut u = Array1::zeros(resp.n_input());
        for (k, h) in self.history.iter().enumerate() {
            u += &resp.m[k].dot(h);
        }
        Ok(u)
    }
}

/// `Δ_k = R(k+1) − A R(k) − B M(k)` for `k < T` and `Δ_T = −A R(T) − B M(T)`.
/// Works for full responses and for column blocks alike.
pub fn delta_residuals(a: &Array2<f64>, b: &Array2<f64>, r: &[Array2<f64>], m: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
    let t = r.len();
    if t == 0 || m.len() != t {
        return Err(Error::DimensionMismatch("residuals need T ≥ 1 blocks".into()));
    }
    let (n, cols) = r[0].dim();
    if a.dim() != (n, n) || b.nrows() != n || m.iter().any(|x| x.dim() != (b.ncols(), cols)) || r.iter().any(|x| x.dim() != (n, cols)) {
        return Err(Error::DimensionMismatch("residual operands".into()));
    }
    Ok((0..t)
        .map(|k| {
            let mut d = -(a.dot(&r[k]) + b.dot(&m[k]));
            if k + 1 < t {
                d += &r[k + 1];
            }
            d
        })
        .collect())
}

/// `Σ_k ‖Δ_k‖` in the induced norm.
pub fn margin_of(a: &Array2<f64>, b: &Array2<f64>, resp: &BlockResponse, norm: NormKind) -> Result<f64> {
    Ok(delta_residuals(a, b, &resp.r, &resp.m)?
        .iter()
        .map(|d| norm.induced_norm(d))
        .sum())
}

/// `Σ_j ‖Δ^{j←i}_k‖` for `k = 1..T` over the rows of node `j`.
pub fn column_residual_profile(
    model: &StructuredModel,
    a: &Array2<f64>,
    b: &Array2<f64>,
    col: &ColumnResponse,
    norm: NormKind,
) -> Result<Vec<f64>> {
    let res = delta_residuals(a, b, &col.r, &col.m)?;
    Ok(res
        .iter()
        .map(|d| {
            (0..model.n_nodes())
                .map(|j| {
                    let off = model.state_offset(j);
                    norm.induced_norm(&d.slice(s![off..off + model.state_dims[j], ..]).to_owned())
                })
                .sum()
        })
        .collect())
}

/// True margin of the distributed loop, `Σ_k max_i Σ_j ‖Δ^{j←i}_k‖`. For
/// scalar nodes this is `Σ_k ‖Δ_k‖₁` of the assembled response.
pub fn distributed_margin(
    model: &StructuredModel,
    a: &Array2<f64>,
    b: &Array2<f64>,
    cols: &[&ColumnResponse],
    norm: NormKind,
) -> Result<f64> {
    let mut worst: Vec<f64> = Vec::new();
    for c in cols {
        let prof = column_residual_profile(model, a, b, c, norm)?;
        if worst.is_empty() {
            worst = prof;
        } else {
            for (w, p) in worst.iter_mut().zip(prof) {
                *w = w.max(p);
            }
        }
    }
    Ok(worst.iter().sum())
}

/// Solution of `z_t ≤ λ max_{1≤k≤T} z_{t−k} + η` started from `z0`.
pub fn recursion_bound(lambda: f64, horizon: usize, z0: f64, eta: f64, t: usize) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::NonPositiveLambda(lambda));
    }
    if horizon == 0 {
        return Err(Error::Config("horizon must be positive".into()));
    }
    let tf = t as f64;
    let geometric = if (lambda - 1.0).abs() < 1e-12 {
        tf
    } else {
        (1.0 - lambda.powf(tf)) / (1.0 - lambda)
    };
    let decay = if lambda < 1.0 {
        lambda.powf(tf / horizon as f64)
    } else {
        lambda.powf(tf)
    };
    Ok(decay * z0 + geometric * eta)
}

/// Worst-case bound on `ŵ_t = v_t − A v_{t−1} + w_{t−1}`.
pub fn effective_noise_bound(eta: f64, noise_bound: f64, max_a_norm: f64) -> f64 {
    eta + (1.0 + max_a_norm) * noise_bound
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedLoopBounds {
    pub gamma: f64,
    pub x_bound: f64,
    pub u_bound: f64,
}

/// `γ_t` with drive `η̂ + m_a`, and the implied state and input bounds
/// `‖x_t‖ ≤ Σ_k ‖R_t(k)‖ · max γ_τ + noise`, `‖u_t‖ ≤ Σ_k ‖M_t(k)‖ · max γ_τ`
/// where `τ` ranges over the `T` most recent steps including `t`.
#[allow(clippy::too_many_arguments)]
pub fn closed_loop_bounds(
    resp: &BlockResponse,
    norm: NormKind,
    lambda: f64,
    m_a: f64,
    eta_hat: f64,
    noise_bound: f64,
    x0_norm: f64,
    t: usize,
) -> Result<ClosedLoopBounds> {
    let horizon = resp.horizon();
    let drive = eta_hat + m_a;
    let gamma = recursion_bound(lambda, horizon, x0_norm, drive, t)?;
    let mut window = 0.0f64;
    for tau in t.saturating_sub(horizon - 1)..=t {
        window = window.max(recursion_bound(lambda, horizon, x0_norm, drive, tau)?);
    }
    let r_sum: f64 = resp.r.iter().map(|b| norm.induced_norm(b)).sum();
    let m_sum: f64 = resp.m.iter().map(|b| norm.induced_norm(b)).sum();
    Ok(ClosedLoopBounds {
        gamma,
        x_bound: r_sum * window + noise_bound,
        u_bound: m_sum * window,
    })
}

/// Rows of node `i`'s column that can carry nonzero residuals: the local
/// region and its plant out-neighbours.
pub fn residual_rows(model: &StructuredModel, topo: &Topology, i: usize) -> Vec<usize> {
    let mut rows: Vec<usize> = topo.local_regions[i].clone();
    for &l in &topo.local_regions[i] {
        rows.extend(model.out_neighbors(l));
    }
    rows.sort_unstable();
    rows.dedup();
    rows
}

/// Largest delay from node `i` to the rows its column touches.
pub fn max_delay(model: &StructuredModel, topo: &Topology, i: usize) -> usize {
    residual_rows(model, topo, i)
        .into_iter()
        .map(|j| topo.delay(j, i))
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributedCheck {
    pub ok: bool,
    pub worst_slack: f64,
}

/// Inputs of [`verify_distributed_conditions`] for node `i` at time `t`.
pub struct NodeConditionInput<'a> {
    pub node: usize,
    pub t: usize,
    pub current: &'a ColumnResponse,
    /// Final responses of node `i` at times `0..t` (index = time).
    pub past: &'a [ColumnResponse],
    /// `δ̂^i` at times `0..t` (index = time).
    pub deltas: &'a [Array1<f64>],
    /// Global `(A, B)` at the polytope vertices.
    pub vertices: &'a [(Array2<f64>, Array2<f64>)],
    pub rho: f64,
    pub c: f64,
    pub lambda: f64,
    pub m1: f64,
    pub m2: f64,
    pub norm: NormKind,
}

fn block_rows(model: &StructuredModel, x: &Array2<f64>, j: usize) -> Array2<f64> {
    let off = model.state_offset(j);
    x.slice(s![off..off + model.state_dims[j], ..]).to_owned()
}

/// Numerically checks the per-node robustness conditions: the geometric
/// residual profile, the margin identity and both adaptation conditions
/// (including the zero-delay one) at every vertex. Returns the smallest
/// slack over all conditions.
pub fn verify_distributed_conditions(
    model: &StructuredModel,
    topo: &Topology,
    input: &NodeConditionInput<'_>,
    tol: f64,
) -> Result<DistributedCheck> {
    let NodeConditionInput { node: i, t, current, .. } = *input;
    if input.past.len() < t || input.deltas.len() < t {
        return Err(Error::InsufficientHistory {
            needed: t,
            have: input.past.len().min(input.deltas.len()),
        });
    }
    let horizon = current.horizon();
    let norm = input.norm;
    let vnorm = |v: &Array1<f64>| norm.vector_norm(v.as_slice().expect("contiguous"));
    let delta_at = |tau: isize| -> Option<&Array1<f64>> {
        if tau < 0 {
            None
        } else {
            Some(&input.deltas[tau as usize])
        }
    };
    let mut worst = f64::INFINITY;
    let mut note = |bound: f64, value: f64| worst = worst.min(bound - value);

    let gsum = (1.0 - input.rho.powi(horizon as i32)) / (1.0 - input.rho);
    note(tol, (input.lambda - input.c * gsum).abs());

    let rows = residual_rows(model, topo, i);
    let dbar = max_delay(model, topo, i);
    for (a, b) in input.vertices {
        let res = delta_residuals(a, b, &current.r, &current.m)?;
        for (k, d) in res.iter().enumerate() {
            let total: f64 = rows.iter().map(|&j| norm.induced_norm(&block_rows(model, d, j))).sum();
            note(input.c * input.rho.powi(k as i32), total);
        }
        for h in 0..dbar {
            let mut total = 0.0;
            for &j in &rows {
                let d = topo.delay(j, i);
                if d < h + 1 {
                    continue;
                }
                let snap = t as isize + h as isize - d as isize;
                if snap < 0 {
                    continue;
                }
                let diff = current.minus(&input.past[snap as usize]);
                let dres = delta_residuals(a, b, &diff.r, &diff.m)?;
                let mut acc = Array1::zeros(model.state_dims[j]);
                for k in d + 1..=horizon {
                    if let Some(del) = delta_at(t as isize + h as isize + 1 - k as isize) {
                        acc += &block_rows(model, &dres[k - 1], j).dot(del);
                    }
                }
                total += vnorm(&acc);
            }
            note(input.m1, total);
        }
    }
    if t > 0 {
        let prev = &input.past[t - 1];
        let change = current.minus(prev);
        for h in 0..dbar {
            let mut total = 0.0;
            for &j in &rows {
                if topo.delay(j, i) != h + 1 {
                    continue;
                }
                let mut acc = Array1::zeros(model.state_dims[j]);
                for k in h + 2..horizon {
                    if let Some(del) = delta_at(t as isize + h as isize + 1 - k as isize) {
                        acc += &block_rows(model, &change.r[k], j).dot(del);
                    }
                }
                total += vnorm(&acc);
            }
            note(input.m2, total);
        }
        let mut total = 0.0;
        for &j in &rows {
            if topo.delay(j, i) != 0 {
                continue;
            }
            let mut acc = Array1::zeros(model.state_dims[j]);
            for k in 1..horizon {
                if let Some(del) = delta_at(t as isize - k as isize) {
                    acc += &block_rows(model, &change.r[k], j).dot(del);
                }
            }
            total += vnorm(&acc);
        }
        note(input.m2, total);
    }
    Ok(DistributedCheck {
        ok: worst >= -tol,
        worst_slack: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn scalar_deadbeat_residual() {
        let a = array![[0.5]];
        let b = array![[1.0]];
        let resp = BlockResponse {
            r: vec![array![[1.0]]],
            m: vec![array![[-0.5]]],
        };
        let d = delta_residuals(&a, &b, &resp.r, &resp.m).unwrap();
        assert_eq!(d[0][[0, 0]], 0.0);
        let open = BlockResponse {
            r: vec![array![[1.0]]],
            m: vec![array![[0.0]]],
        };
        assert_eq!(margin_of(&a, &b, &open, NormKind::MaxAbs).unwrap(), 0.5);
    }

    #[test]
    fn recursion_bound_values() {
        assert!((recursion_bound(0.5, 2, 2.0, 1.0, 2).unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(recursion_bound(2.0, 2, 1.0, 0.0, 3).unwrap(), 8.0);
        assert!((recursion_bound(1.0, 3, 2.0, 0.5, 4).unwrap() - 4.0).abs() < 1e-12);
        assert!(matches!(recursion_bound(0.0, 2, 1.0, 1.0, 1), Err(Error::NonPositiveLambda(_))));
        let mut prev = f64::INFINITY;
        for t in 0..50 {
            let g = recursion_bound(0.7, 3, 5.0, 0.0, t).unwrap();
            assert!(g <= prev);
            prev = g;
        }
    }

    #[test]
    fn static_feedback() {
        let resp = BlockResponse {
            r: vec![array![[1.0]]],
            m: vec![array![[-0.4]]],
        };
        let mut st = ControllerState::new(1, 1);
        let d = st.delta_update(&resp, &array![2.0]).unwrap();
        assert_eq!(d[0], 2.0);
        assert_eq!(st.control_output(&resp).unwrap()[0], -0.8);
    }
}
