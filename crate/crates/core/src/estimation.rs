//! Set-membership estimation: observations become linear constraints on the
//! parameter vector, which are intersected into consistent polytopes.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::lpcore::NormKind;
use crate::model::StructuredModel;
use crate::polytope::{HalfspacePolytope, LinearConstraintSet};

/// Largest per-node state dimension for which ℓ1 constraints are expanded
/// over sign patterns.
pub const MAX_L1_DIM: usize = 3;

/// The regressors `ŷ_s` of one node for the transition `time → time + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorBundle {
    pub node: usize,
    pub time: usize,
    pub regressors: Vec<Array1<f64>>,
    pub observed_next: Array1<f64>,
}

/// `ŷ_s = Σ_{i∈𝒩(j)} 𝒜_s^{j←i} x^i + ℬ_s^j u^j`, paired with `x^j` at the
/// next step.
pub fn build_regressors(
    model: &StructuredModel,
    x_prev: &[f64],
    u_prev: &[f64],
    x_next: &[f64],
    node: usize,
    time: usize,
) -> Result<RegressorBundle> {
    model.check_node(node)?;
    if x_prev.len() != model.n_state() || x_next.len() != model.n_state() || u_prev.len() != model.n_input() {
        return Err(Error::DimensionMismatch(format!(
            "regressors need state length {} and input length {}",
            model.n_state(),
            model.n_input()
        )));
    }
    let nj = model.state_dims[node];
    let mut regressors = vec![Array1::zeros(nj); model.p];
    for i in model.neighbors(node) {
        let off = model.state_offset(i);
        let xi = &x_prev[off..off + model.state_dims[i]];
        for (s, m) in model.basis_a[&(node, i)].iter().enumerate() {
            regressors[s] += &m.dot(&Array1::from(xi.to_vec()));
        }
    }
    let uoff = model.input_offset(node);
    let uj = Array1::from(u_prev[uoff..uoff + model.input_dims[node]].to_vec());
    if !uj.is_empty() {
        for (s, m) in model.basis_b[node].iter().enumerate() {
            regressors[s] += &m.dot(&uj);
        }
    }
    let off = model.state_offset(node);
    Ok(RegressorBundle {
        node,
        time,
        regressors,
        observed_next: Array1::from(x_next[off..off + nj].to_vec()),
    })
}

/// Rows in `α` encoding `‖x_next − Σ_s α_s ŷ_s‖ ≤ η`. The constraint is
/// tagged with the node and the time of the observed state.
pub fn constraint_from_observation(
    bundle: &RegressorBundle,
    eta: f64,
    norm: NormKind,
) -> Result<LinearConstraintSet<f64>> {
    if !(eta >= 0.0) {
        return Err(Error::Config("eta must be nonnegative".into()));
    }
    let d = bundle.observed_next.len();
    let p = bundle.regressors.len();
    // coefficient of α_s in coordinate a of the residual is −ŷ_s[a]
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut offsets = Vec::new();
    match norm {
        NormKind::MaxAbs => {
            for a in 0..d {
                let y: Vec<f64> = bundle.regressors.iter().map(|r| r[a]).collect();
                let x = bundle.observed_next[a];
                // x − y·α ≤ η  and  −(x − y·α) ≤ η
                rows.push(y.iter().map(|v| -v).collect());
                offsets.push(eta - x);
                rows.push(y);
                offsets.push(eta + x);
            }
        }
        NormKind::SumAbs => {
            if d > MAX_L1_DIM {
                return Err(Error::UnsupportedNormForDim(d));
            }
            for mask in 0..1usize << d {
                let sign = |a: usize| if mask >> a & 1 == 1 { -1.0 } else { 1.0 };
                let mut row = vec![0.0; p];
                let mut sx = 0.0;
                for a in 0..d {
                    sx += sign(a) * bundle.observed_next[a];
                    for (s, r) in bundle.regressors.iter().enumerate() {
                        row[s] -= sign(a) * r[a];
                    }
                }
                rows.push(row);
                offsets.push(eta - sx);
            }
        }
    }
    let normals = Array2::from_shape_fn((rows.len(), p), |(r, c)| rows[r][c]);
    LinearConstraintSet::new(normals, offsets, bundle.node, bundle.time + 1)
}

/// Constraint sets for every node from one observed transition.
pub fn observe_all(
    model: &StructuredModel,
    x_prev: &[f64],
    u_prev: &[f64],
    x_next: &[f64],
    time: usize,
    eta: f64,
    norm: NormKind,
) -> Result<Vec<LinearConstraintSet<f64>>> {
    (0..model.n_nodes())
        .map(|j| {
            let b = build_regressors(model, x_prev, u_prev, x_next, j, time)?;
            constraint_from_observation(&b, eta, norm)
        })
        .collect()
}

fn intersect_all<'a>(
    mut p: HalfspacePolytope<f64>,
    constraints: impl IntoIterator<Item = &'a LinearConstraintSet<f64>>,
    node: Option<usize>,
    step: usize,
) -> Result<HalfspacePolytope<f64>> {
    for c in constraints {
        p = p.intersect(c)?;
    }
    match p.enumerate_vertices() {
        Ok(_) => Ok(p),
        Err(Error::Empty) => Err(Error::EmptyPolytope { node, step }),
        Err(e) => Err(e),
    }
}

/// `𝒫_t = 𝒫_{t−1} ∩ ⋂_j 𝒞^j_t`.
pub fn update_central(
    p: &HalfspacePolytope<f64>,
    constraints: &[LinearConstraintSet<f64>],
    step: usize,
) -> Result<HalfspacePolytope<f64>> {
    intersect_all(p.clone(), constraints, None, step)
}

/// `𝒫^i_t = 𝒫^i_{t−1} ∩ ⋂ Ĉ^{i←j}_t` over the constraint sets delivered to
/// node `i` this step.
pub fn update_node(
    node: usize,
    p_prev: &HalfspacePolytope<f64>,
    mailbox: &[LinearConstraintSet<f64>],
    step: usize,
) -> Result<HalfspacePolytope<f64>> {
    intersect_all(p_prev.clone(), mailbox, Some(node), step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::chain5_scenario;

    #[test]
    fn scalar_interval() {
        let b = RegressorBundle {
            node: 0,
            time: 0,
            regressors: vec![Array1::from(vec![1.0])],
            observed_next: Array1::from(vec![0.5]),
        };
        let c = constraint_from_observation(&b, 0.5, NormKind::MaxAbs).unwrap();
        assert!(c.holds_at(&[0.0]) && c.holds_at(&[1.0]) && c.holds_at(&[0.3]));
        assert!(!c.holds_at(&[1.01]) && !c.holds_at(&[-0.01]));
    }

    #[test]
    fn l1_rejects_large_nodes() {
        let b = RegressorBundle {
            node: 0,
            time: 0,
            regressors: vec![Array1::zeros(4)],
            observed_next: Array1::zeros(4),
        };
        assert!(matches!(
            constraint_from_observation(&b, 1.0, NormKind::SumAbs),
            Err(Error::UnsupportedNormForDim(4))
        ));
    }

    #[test]
    fn zero_data_gives_zero_regressors() {
        let sc = chain5_scenario();
        let b = build_regressors(&sc.model, &[0.0; 5], &[0.0; 2], &[0.0; 5], 2, 0).unwrap();
        assert!(b.regressors.iter().all(|r| r.iter().all(|v| *v == 0.0)));
        assert!(matches!(
            build_regressors(&sc.model, &[0.0; 5], &[0.0; 2], &[0.0; 5], 7, 0),
            Err(Error::UnknownNode(7))
        ));
    }
}
