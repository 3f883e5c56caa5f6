//! Structured networked models, communication topology and scenarios.
//!
//! Node indices are 0-based. A directed edge `(j, i)` means the state of node
//! `i` enters the next state of node `j`; `neighbors(j)` lists those `i`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lpcore::NormKind;
use crate::polytope::{HalfspacePolytope, PolytopeJson};

/// `A^{j←i} = Σ_s α_s·basis_a[(j,i)][s]`, `B^j = Σ_s α_s·basis_b[j][s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredModel {
    pub state_dims: Vec<usize>,
    pub input_dims: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    pub basis_a: BTreeMap<(usize, usize), Vec<Array2<f64>>>,
    pub basis_b: Vec<Vec<Array2<f64>>>,
    pub p: usize,
}

/// Concrete blocks of one parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemBlocks {
    pub a: BTreeMap<(usize, usize), Array2<f64>>,
    pub b: Vec<Array2<f64>>,
}

impl SystemBlocks {
    pub fn a_block(&self, j: usize, i: usize) -> Option<&Array2<f64>> {
        self.a.get(&(j, i))
    }
}

impl StructuredModel {
    pub fn n_nodes(&self) -> usize {
        self.state_dims.len()
    }

    pub fn n_state(&self) -> usize {
        self.state_dims.iter().sum()
    }

    pub fn n_input(&self) -> usize {
        self.input_dims.iter().sum()
    }

    pub fn state_offset(&self, j: usize) -> usize {
        self.state_dims[..j].iter().sum()
    }

    pub fn input_offset(&self, j: usize) -> usize {
        self.input_dims[..j].iter().sum()
    }

    /// Nodes whose state drives node `j`, ascending.
    pub fn neighbors(&self, j: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.edges.iter().filter(|e| e.0 == j).map(|e| e.1).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Nodes driven by the state of node `i`, ascending.
    pub fn out_neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.edges.iter().filter(|e| e.1 == i).map(|e| e.0).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn check_node(&self, j: usize) -> Result<()> {
        if j < self.n_nodes() {
            Ok(())
        } else {
            Err(Error::UnknownNode(j))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        if n == 0 {
            return Err(Error::Config("model has no nodes".into()));
        }
        if self.input_dims.len() != n || self.basis_b.len() != n {
            return Err(Error::DimensionMismatch(
                "state_dims, input_dims and basis_B must have one entry per node".into(),
            ));
        }
        if self.state_dims.contains(&0) {
            return Err(Error::DimensionMismatch("every node needs a positive state dimension".into()));
        }
        let mut declared: Vec<(usize, usize)> = self.edges.clone();
        declared.sort_unstable();
        declared.dedup();
        if declared.len() != self.edges.len() {
            return Err(Error::Config("duplicate edge".into()));
        }
        let keys: Vec<(usize, usize)> = self.basis_a.keys().copied().collect();
        if keys != declared {
            return Err(Error::Config(
                "basis_A entries must exist exactly for the declared edges".into(),
            ));
        }
        for (&(j, i), mats) in &self.basis_a {
            self.check_node(j)?;
            self.check_node(i)?;
            if mats.len() != self.p {
                return Err(Error::DimensionMismatch(format!(
                    "basis_A ({j},{i}) has {} matrices, expected p = {}",
                    mats.len(),
                    self.p
                )));
            }
            for m in mats {
                if m.dim() != (self.state_dims[j], self.state_dims[i]) {
                    return Err(Error::DimensionMismatch(format!(
                        "basis_A ({j},{i}) matrix is {:?}, expected {:?}",
                        m.dim(),
                        (self.state_dims[j], self.state_dims[i])
                    )));
                }
            }
        }
        for (j, mats) in self.basis_b.iter().enumerate() {
            if mats.len() != self.p {
                return Err(Error::DimensionMismatch(format!(
                    "basis_B {j} has {} matrices, expected p = {}",
                    mats.len(),
                    self.p
                )));
            }
            for m in mats {
                if m.dim() != (self.state_dims[j], self.input_dims[j]) {
                    return Err(Error::DimensionMismatch(format!(
                        "basis_B {j} matrix is {:?}, expected {:?}",
                        m.dim(),
                        (self.state_dims[j], self.input_dims[j])
                    )));
                }
            }
        }
        Ok(())
    }

    /// Blocks at parameter `alpha`; linear in `alpha`.
    pub fn assemble(&self, alpha: &[f64]) -> Result<SystemBlocks> {
        if alpha.len() != self.p {
            return Err(Error::DimensionMismatch(format!(
                "parameter of length {} for p = {}",
                alpha.len(),
                self.p
            )));
        }
        let combine = |mats: &[Array2<f64>], rows: usize, cols: usize| {
            let mut out = Array2::zeros((rows, cols));
            for (m, &a) in mats.iter().zip(alpha) {
                if a != 0.0 {
                    out.scaled_add(a, m);
                }
            }
            out
        };
        let a = self
            .basis_a
            .iter()
            .map(|(&(j, i), mats)| ((j, i), combine(mats, self.state_dims[j], self.state_dims[i])))
            .collect();
        let b = self
            .basis_b
            .iter()
            .enumerate()
            .map(|(j, mats)| combine(mats, self.state_dims[j], self.input_dims[j]))
            .collect();
        Ok(SystemBlocks { a, b })
    }

    /// Dense global `(A, B)` with nodes laid out in index order.
    pub fn global_matrices(&self, blocks: &SystemBlocks) -> Result<(Array2<f64>, Array2<f64>)> {
        let n = self.n_state();
        let m = self.n_input();
        let mut a = Array2::zeros((n, n));
        let mut b = Array2::zeros((n, m));
        for (&(j, i), blk) in &blocks.a {
            self.check_node(j)?;
            self.check_node(i)?;
            if blk.dim() != (self.state_dims[j], self.state_dims[i]) {
                return Err(Error::DimensionMismatch(format!("A block ({j},{i})")));
            }
            let (r, c) = (self.state_offset(j), self.state_offset(i));
            a.slice_mut(s![r..r + blk.nrows(), c..c + blk.ncols()]).assign(blk);
        }
        if blocks.b.len() != self.n_nodes() {
            return Err(Error::DimensionMismatch("one B block per node expected".into()));
        }
        for (j, blk) in blocks.b.iter().enumerate() {
            if blk.dim() != (self.state_dims[j], self.input_dims[j]) {
                return Err(Error::DimensionMismatch(format!("B block {j}")));
            }
            let (r, c) = (self.state_offset(j), self.input_offset(j));
            b.slice_mut(s![r..r + blk.nrows(), c..c + blk.ncols()]).assign(blk);
        }
        Ok((a, b))
    }

    /// Node-wise plant step `x⁺_j = Σ_i A^{j←i} x_i + B^j u_j + w_j`.
    pub fn step(&self, blocks: &SystemBlocks, x: &[f64], u: &[f64], w: &[f64]) -> Vec<f64> {
        let mut next = w.to_vec();
        for (&(j, i), blk) in &blocks.a {
            let (r, c) = (self.state_offset(j), self.state_offset(i));
            for a in 0..blk.nrows() {
                for bcol in 0..blk.ncols() {
                    next[r + a] += blk[[a, bcol]] * x[c + bcol];
                }
            }
        }
        for (j, blk) in blocks.b.iter().enumerate() {
            let (r, c) = (self.state_offset(j), self.input_offset(j));
            for a in 0..blk.nrows() {
                for bcol in 0..blk.ncols() {
                    next[r + a] += blk[[a, bcol]] * u[c + bcol];
                }
            }
        }
        next
    }
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &Array2<f64>) -> Result<f64> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::NonSquare(r, c));
    }
    if r == 0 {
        return Ok(0.0);
    }
    let m = DMatrix::from_fn(r, c, |i, j| a[[i, j]]);
    Ok(m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Delays and communication regions. `delays[j][i]` is the number of steps a
/// message from node `i` needs to reach node `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub delays: Vec<Vec<usize>>,
    pub send_regions: Vec<Vec<usize>>,
    pub local_regions: Vec<Vec<usize>>,
}

impl Topology {
    pub fn delay(&self, j: usize, i: usize) -> usize {
        self.delays[j][i]
    }

    /// `ℛ(i) = {j : i ∈ 𝒮(j)}`.
    pub fn receive_regions(&self) -> Vec<Vec<usize>> {
        let n = self.send_regions.len();
        (0..n)
            .map(|i| (0..n).filter(|&j| self.send_regions[j].contains(&i)).collect())
            .collect()
    }

    /// Zero delays, every node sending to and localised over every node.
    pub fn global(n: usize) -> Self {
        let all: Vec<usize> = (0..n).collect();
        Topology {
            delays: vec![vec![0; n]; n],
            send_regions: vec![all.clone(); n],
            local_regions: vec![all; n],
        }
    }

    /// Checks shapes, region containment and the propagation-speed
    /// condition `d_{j←i} ≤ 1 + d_{k←i}` for every `k ∈ 𝒩(j)`.
    pub fn validate(&self, model: &StructuredModel) -> Result<()> {
        let n = model.n_nodes();
        let shape_ok = self.delays.len() == n
            && self.delays.iter().all(|r| r.len() == n)
            && self.send_regions.len() == n
            && self.local_regions.len() == n;
        if !shape_ok {
            return Err(Error::Config(format!(
                "topology must describe exactly {n} nodes (delays {n}x{n}, one region list per node)"
            )));
        }
        for i in 0..n {
            if self.delays[i][i] != 0 {
                return Err(Error::AssumptionViolation(format!("self delay of node {i} must be 0")));
            }
            for &j in self.send_regions[i].iter().chain(&self.local_regions[i]) {
                model.check_node(j)?;
            }
            if !self.local_regions[i].contains(&i) {
                return Err(Error::AssumptionViolation(format!(
                    "local region of node {i} must contain the node itself"
                )));
            }
            if let Some(j) = self.local_regions[i].iter().find(|j| !self.send_regions[i].contains(j)) {
                return Err(Error::AssumptionViolation(format!(
                    "local region of node {i} contains {j}, which is outside its send region"
                )));
            }
        }
        // Observation regressors need the states of the plant neighbours.
        for &(j, i) in &model.edges {
            if i != j && !self.send_regions[i].contains(&j) {
                return Err(Error::AssumptionViolation(format!(
                    "node {i} drives node {j} but does not send to it"
                )));
            }
        }
        for j in 0..n {
            for k in model.neighbors(j) {
                for i in 0..n {
                    if self.delays[j][i] > 1 + self.delays[k][i] {
                        return Err(Error::AssumptionViolation(format!(
                            "communication slower than propagation: d({j}<-{i}) = {} > 1 + d({k}<-{i}) = {}",
                            self.delays[j][i],
                            1 + self.delays[k][i]
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DisturbanceKind {
    UniformBox,
    AdversarialVertex,
    Zero,
}

/// Adaptation margins: `m_a` for the central scheme, `(m1, m2)` per node
/// for the distributed one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Margins {
    pub m_a: f64,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
}

impl Margins {
    pub fn defaults(eta: f64, n: usize) -> Self {
        Margins {
            m_a: 0.1 * eta,
            m1: vec![0.05 * eta; n],
            m2: vec![0.05 * eta; n],
        }
    }
}

/// Performance cost `Σ_k ‖C R(k) + D M(k)‖`; `c` has `n` columns and `d`
/// has `m` columns (global state and input sizes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostPair {
    #[serde(rename = "C")]
    pub c: Array2<f64>,
    #[serde(rename = "D")]
    pub d: Array2<f64>,
}

impl CostPair {
    /// `C = [I; 0]`, `D = [0; I]`.
    pub fn state_and_input(n: usize, m: usize) -> Self {
        let mut c = Array2::zeros((n + m, n));
        let mut d = Array2::zeros((n + m, m));
        for k in 0..n {
            c[[k, k]] = 1.0;
        }
        for k in 0..m {
            d[[n + k, k]] = 1.0;
        }
        CostPair { c, d }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: StructuredModel,
    pub topology: Topology,
    pub prior: HalfspacePolytope<f64>,
    pub eta: f64,
    pub noise_bound: f64,
    pub norm: NormKind,
    pub true_alpha: Vec<f64>,
    pub x0: Vec<f64>,
    pub horizon_t: usize,
    pub rho: f64,
    pub lambda_star: f64,
    pub margins: Margins,
    /// One entry shared by all nodes, or one per node; the central scheme
    /// uses the first.
    pub cost: Vec<CostPair>,
    pub steps: usize,
    pub seed: u64,
    pub disturbance_kind: DisturbanceKind,
    pub resynth_period: usize,
}

impl Scenario {
    pub fn cost_for(&self, node: usize) -> &CostPair {
        if self.cost.len() == 1 {
            &self.cost[0]
        } else {
            &self.cost[node]
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.topology.validate(&self.model)?;
        let n = self.model.n_nodes();
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.prior.dim() != self.model.p {
            return cfg(format!("prior: dimension {} differs from p = {}", self.prior.dim(), self.model.p));
        }
        if self.true_alpha.len() != self.model.p {
            return cfg(format!("true_alpha: length {} differs from p = {}", self.true_alpha.len(), self.model.p));
        }
        if !self.prior.membership(&self.true_alpha)? {
            return cfg("true_alpha: not contained in prior".into());
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return cfg("eta: must be a finite nonnegative number".into());
        }
        if !(self.noise_bound >= 0.0) || !self.noise_bound.is_finite() {
            return cfg("noise_bound: must be a finite nonnegative number".into());
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return cfg("rho: must lie in (0, 1)".into());
        }
        if self.horizon_t < 2 {
            return cfg("horizon_T: must be at least 2".into());
        }
        if !(self.lambda_star >= 0.0 && self.lambda_star.is_finite()) {
            return cfg("lambda_star: must be finite and nonnegative".into());
        }
        if self.x0.len() != self.model.n_state() {
            return cfg(format!("x0: length {} differs from state size {}", self.x0.len(), self.model.n_state()));
        }
        if self.margins.m1.len() != n || self.margins.m2.len() != n {
            return cfg("margins: m1 and m2 need one entry per node".into());
        }
        let all_margins = std::iter::once(&self.margins.m_a)
            .chain(&self.margins.m1)
            .chain(&self.margins.m2);
        for m in all_margins {
            if !(*m >= 0.0) {
                return cfg("margins: must be nonnegative".into());
            }
        }
        if self.cost.len() != 1 && self.cost.len() != n {
            return cfg(format!("cost: expected 1 or {n} entries"));
        }
        for c in &self.cost {
            if c.c.ncols() != self.model.n_state() || c.d.ncols() != self.model.n_input() || c.c.nrows() != c.d.nrows() {
                return cfg("cost: C must have n columns, D m columns, equal row counts".into());
            }
        }
        if self.resynth_period == 0 {
            return cfg("resynth_period: must be at least 1".into());
        }
        if self.norm == NormKind::SumAbs {
            if let Some(d) = self.model.state_dims.iter().find(|&&d| d > 3) {
                return Err(Error::UnsupportedNormForDim(*d));
            }
        }
        Ok(())
    }

    /// Replaces the prior by the single point `true_alpha`.
    pub fn with_point_prior(mut self) -> Result<Self> {
        self.prior = HalfspacePolytope::point(&self.true_alpha)?;
        Ok(self)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        file.into_scenario()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ScenarioFile::from_scenario(self))?)
    }
}

fn chain_matrix(v: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), v)
}

/// The five-node chain: scalar nodes, actuators at both ends, delays equal
/// to hop distance, regions of radius two.
pub fn chain5_scenario() -> Scenario {
    let n = 5;
    let p = 5;
    let unit = |s: usize| {
        (0..p)
            .map(|k| chain_matrix(if k == s { 1.0 } else { 0.0 }))
            .collect::<Vec<_>>()
    };
    let mut basis_a = BTreeMap::new();
    let mut edges = Vec::new();
    for j in 0..n {
        if j > 0 {
            basis_a.insert((j, j - 1), unit(0));
            edges.push((j, j - 1));
        }
        basis_a.insert((j, j), unit(1));
        edges.push((j, j));
        if j + 1 < n {
            basis_a.insert((j, j + 1), unit(2));
            edges.push((j, j + 1));
        }
    }
    edges.sort_unstable();
    let no_input = || (0..p).map(|_| Array2::zeros((1, 0))).collect::<Vec<_>>();
    let mut basis_b: Vec<Vec<Array2<f64>>> = (0..n).map(|_| no_input()).collect();
    basis_b[0] = unit(3);
    basis_b[4] = unit(4);
    let model = StructuredModel {
        state_dims: vec![1; n],
        input_dims: vec![1, 0, 0, 0, 1],
        edges,
        basis_a,
        basis_b,
        p,
    };
    let dist = |a: usize, b: usize| a.abs_diff(b);
    let region = |i: usize| (0..n).filter(|&j| dist(i, j) <= 2).collect::<Vec<_>>();
    let topology = Topology {
        delays: (0..n).map(|j| (0..n).map(|i| dist(i, j)).collect()).collect(),
        send_regions: (0..n).map(region).collect(),
        local_regions: (0..n).map(region).collect(),
    };
    let prior = HalfspacePolytope::from_box(&[0.1, 0.0, 0.1, 0.2, -1.0], &[0.5, 1.0, 0.5, 1.0, -0.2])
        .expect("box prior");
    let eta = 0.5;
    Scenario {
        model,
        topology,
        prior,
        eta,
        noise_bound: 0.0,
        norm: NormKind::MaxAbs,
        true_alpha: vec![0.3, 0.6, 0.2, 1.0, -1.0],
        x0: vec![0.0, 3.0, 3.0, 3.0, 0.0],
        horizon_t: 8,
        rho: 0.7,
        lambda_star: 0.95,
        margins: Margins::defaults(eta, n),
        cost: vec![CostPair::state_and_input(5, 2)],
        steps: 200,
        seed: 0,
        disturbance_kind: DisturbanceKind::UniformBox,
        resynth_period: 1,
    }
}

/// Three scalar nodes coupled all-to-all, each with its own actuator.
/// Parameters: self gain, coupling gain, actuator gain. Zero delays and
/// global regions.
pub fn ring3_scenario() -> Scenario {
    let n = 3;
    let p = 3;
    let unit = |s: usize| {
        (0..p)
            .map(|k| chain_matrix(if k == s { 1.0 } else { 0.0 }))
            .collect::<Vec<_>>()
    };
    let mut basis_a = BTreeMap::new();
    let mut edges = Vec::new();
    for j in 0..n {
        for i in 0..n {
            basis_a.insert((j, i), unit(if i == j { 0 } else { 1 }));
            edges.push((j, i));
        }
    }
    let model = StructuredModel {
        state_dims: vec![1; n],
        input_dims: vec![1; n],
        edges,
        basis_a,
        basis_b: (0..n).map(|_| unit(2)).collect(),
        p,
    };
    let prior = HalfspacePolytope::from_box(&[1.0, 0.2, 1.8], &[1.2, 0.4, 2.2]).expect("box prior");
    let eta = 0.1;
    Scenario {
        model,
        topology: Topology::global(n),
        prior,
        eta,
        noise_bound: 0.0,
        norm: NormKind::MaxAbs,
        true_alpha: vec![1.1, 0.3, 2.0],
        x0: vec![1.0, -1.0, 0.5],
        horizon_t: 4,
        rho: 0.7,
        lambda_star: 0.95,
        margins: Margins::defaults(eta, n),
        cost: vec![CostPair::state_and_input(n, n)],
        steps: 50,
        seed: 0,
        disturbance_kind: DisturbanceKind::UniformBox,
        resynth_period: 1,
    }
}

/// Serialized scenario document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub model: ModelFile,
    pub topology: Topology,
    pub prior: PolytopeJson,
    pub eta: f64,
    #[serde(default)]
    pub noise_bound: f64,
    pub norm: NormKind,
    pub true_alpha: Vec<f64>,
    pub x0: Vec<f64>,
    #[serde(rename = "horizon_T")]
    pub horizon_t: usize,
    pub rho: f64,
    #[serde(default = "default_lambda_star")]
    pub lambda_star: f64,
    #[serde(default)]
    pub margins: Option<Margins>,
    #[serde(default)]
    pub cost: Option<Vec<CostPair>>,
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_disturbance")]
    pub disturbance_kind: DisturbanceKind,
    #[serde(default = "default_period")]
    pub resynth_period: usize,
}

fn default_lambda_star() -> f64 {
    0.95
}

fn default_disturbance() -> DisturbanceKind {
    DisturbanceKind::UniformBox
}

fn default_period() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub state_dims: Vec<usize>,
    pub input_dims: Vec<usize>,
    pub p: usize,
    pub edges: Vec<(usize, usize)>,
    #[serde(rename = "basis_A")]
    pub basis_a: Vec<EdgeBasis>,
    #[serde(rename = "basis_B")]
    pub basis_b: Vec<Vec<Array2<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeBasis {
    pub to: usize,
    pub from: usize,
    pub matrices: Vec<Array2<f64>>,
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Result<Scenario> {
        let mut basis_a = BTreeMap::new();
        for e in self.model.basis_a {
            if basis_a.insert((e.to, e.from), e.matrices).is_some() {
                return Err(Error::Config(format!("model.basis_A: duplicate entry ({}, {})", e.to, e.from)));
            }
        }
        let model = StructuredModel {
            state_dims: self.model.state_dims,
            input_dims: self.model.input_dims,
            edges: self.model.edges,
            basis_a,
            basis_b: self.model.basis_b,
            p: self.model.p,
        };
        model.validate()?;
        let n = model.n_nodes();
        let sc = Scenario {
            prior: HalfspacePolytope::from_json(&self.prior)
                .map_err(|e| Error::Config(format!("prior: {e}")))?,
            topology: self.topology,
            eta: self.eta,
            noise_bound: self.noise_bound,
            norm: self.norm,
            true_alpha: self.true_alpha,
            x0: self.x0,
            horizon_t: self.horizon_t,
            rho: self.rho,
            lambda_star: self.lambda_star,
            margins: self.margins.unwrap_or_else(|| Margins::defaults(self.eta, n)),
            cost: self
                .cost
                .unwrap_or_else(|| vec![CostPair::state_and_input(model.n_state(), model.n_input())]),
            steps: self.steps,
            seed: self.seed,
            disturbance_kind: self.disturbance_kind,
            resynth_period: self.resynth_period,
            model,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn from_scenario(sc: &Scenario) -> Self {
        ScenarioFile {
            model: ModelFile {
                state_dims: sc.model.state_dims.clone(),
                input_dims: sc.model.input_dims.clone(),
                p: sc.model.p,
                edges: sc.model.edges.clone(),
                basis_a: sc
                    .model
                    .basis_a
                    .iter()
                    .map(|(&(to, from), m)| EdgeBasis {
                        to,
                        from,
                        matrices: m.clone(),
                    })
                    .collect(),
                basis_b: sc.model.basis_b.clone(),
            },
            topology: sc.topology.clone(),
            prior: sc.prior.to_json(),
            eta: sc.eta,
            noise_bound: sc.noise_bound,
            norm: sc.norm,
            true_alpha: sc.true_alpha.clone(),
            x0: sc.x0.clone(),
            horizon_t: sc.horizon_t,
            rho: sc.rho,
            lambda_star: sc.lambda_star,
            margins: Some(sc.margins.clone()),
            cost: Some(sc.cost.clone()),
            steps: sc.steps,
            seed: sc.seed,
            disturbance_kind: sc.disturbance_kind,
            resynth_period: sc.resynth_period,
        }
    }
}

/// Column vector helper.
pub fn col(v: &[f64]) -> Array1<f64> {
    Array1::from(v.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_assembly_layout() {
        let sc = chain5_scenario();
        let blocks = sc.model.assemble(&[0.3, 0.6, 0.2, 1.0, -1.0]).unwrap();
        let (a, b) = sc.model.global_matrices(&blocks).unwrap();
        for i in 0..5 {
            assert_eq!(a[[i, i]], 0.6);
            if i > 0 {
                assert_eq!(a[[i, i - 1]], 0.3);
                assert_eq!(a[[i - 1, i]], 0.2);
            }
        }
        assert_eq!(a.iter().filter(|v| **v != 0.0).count(), 13);
        assert_eq!(b.dim(), (5, 2));
        assert_eq!((b[[0, 0]], b[[4, 1]]), (1.0, -1.0));
        assert_eq!(b.iter().filter(|v| **v != 0.0).count(), 2);
    }

    #[test]
    fn chain_defaults() {
        let sc = chain5_scenario();
        sc.validate().unwrap();
        assert!(sc.prior.membership(&sc.true_alpha).unwrap());
        assert_eq!(sc.eta, 0.5);
    }

    #[test]
    fn spectral_radius_closed_form() {
        let sc = chain5_scenario();
        let blocks = sc.model.assemble(&sc.true_alpha).unwrap();
        let (a, _) = sc.model.global_matrices(&blocks).unwrap();
        // Tridiagonal Toeplitz: a + 2 sqrt(bc) cos(π/(n+1)).
        let exact = 0.6 + 2.0 * (0.3f64 * 0.2).sqrt() * (std::f64::consts::PI / 6.0).cos();
        assert!((spectral_radius(&a).unwrap() - exact).abs() < 1e-9);
        assert!((spectral_radius(&Array2::eye(3)).unwrap() - 1.0).abs() < 1e-12);
        let nil = Array2::from_shape_fn((4, 4), |(i, j)| if j > i { 1.0 } else { 0.0 });
        assert!(spectral_radius(&nil).unwrap() < 1e-6);
        assert!(matches!(spectral_radius(&Array2::zeros((2, 3))), Err(Error::NonSquare(2, 3))));
    }
}
