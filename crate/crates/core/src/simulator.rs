//! Deterministic closed-loop simulation of the central and distributed
//! adaptive schemes, with a delay-stamped message bus between nodes.

use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimation;
use crate::lpcore::NormKind;
use crate::model::{DisturbanceKind, Scenario, ScenarioFile, StructuredModel, SystemBlocks};
use crate::polytope::{HalfspacePolytope, LinearConstraintSet, PolytopeJson};
use crate::slscontrol::{self, BlockResponse, ColumnResponse, ControllerState, NodeConditionInput};
use crate::synthesis::{self, CentralRequest, NodeRequest, Phase, SynthStatus};

pub const TRACE_VERSION: u32 = 1;

/// Slack allowed when re-checking the previous solution against the new
/// constraints.
pub const RECURSIVE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    Central,
    Dlar,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Polytope snapshots every this many steps (0 disables; the final
    /// polytopes are always kept).
    pub snapshot_period: usize,
    /// Directory for per-step LP dumps.
    pub dump_lp: Option<PathBuf>,
    /// Re-check each new solution against the node conditions numerically.
    pub verify_synthesis: bool,
    /// Disturbances `(w_t, v_t)` to replay instead of sampling.
    pub replay: Option<Vec<(Vec<f64>, Vec<f64>)>>,
}

/// One row of the trace. Vectors indexed by node have one entry for the
/// central scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub delta: Vec<f64>,
    /// Phase-1 optimum `λ_t` per node.
    pub lambda: Vec<f64>,
    /// Margin certified by the applied blocks.
    pub lambda_bound: Vec<f64>,
    pub phase: Vec<Phase>,
    pub vertices: Vec<usize>,
    /// Smallest slack of the previous solution in the new constraints.
    pub feas_slack: Vec<f64>,
    /// Smallest slack of the new solution in the numerically re-evaluated
    /// conditions (NaN when not verified).
    pub verify_slack: Vec<f64>,
    /// Largest violation of any polytope row at the true parameter.
    pub truth_violation: Vec<f64>,
    pub mu: f64,
    pub r_norm_sum: f64,
    pub m_norm_sum: f64,
    pub synth_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopeSnapshot {
    pub t: usize,
    pub node: Option<usize>,
    pub polytope: PolytopeJson,
    pub vertices: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceMeta {
    pub trace_version: u32,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub config_hash: String,
    pub steps: usize,
    pub n_nodes: usize,
    pub scenario: ScenarioFile,
    /// Number of delayed reads checked by the bus audit.
    pub causality_checks: u64,
}

#[derive(Debug, Clone)]
pub struct SimulationTrace {
    pub meta: TraceMeta,
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<PolytopeSnapshot>,
    /// Composed responses applied at every step (kept in memory only).
    pub responses: Vec<BlockResponse>,
}

/// SHA-256 of the canonical scenario JSON.
pub fn config_hash(sc: &Scenario) -> Result<String> {
    let text = serde_json::to_string(&ScenarioFile::from_scenario(sc))?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

/// `x⁺ = A x + B u + w`, node by node; rejects disturbances outside the
/// per-node bound.
pub fn step_plant(
    model: &StructuredModel,
    blocks: &SystemBlocks,
    x: &[f64],
    u: &[f64],
    w: &[f64],
    eta: f64,
    norm: NormKind,
) -> Result<Vec<f64>> {
    if x.len() != model.n_state() || w.len() != model.n_state() || u.len() != model.n_input() {
        return Err(Error::DimensionMismatch("plant step operands".into()));
    }
    for j in 0..model.n_nodes() {
        let off = model.state_offset(j);
        let wn = norm.vector_norm(&w[off..off + model.state_dims[j]]);
        if wn > eta * (1.0 + 1e-12) + 1e-15 {
            return Err(Error::DisturbanceBoundViolated { node: j, norm: wn, bound: eta });
        }
    }
    Ok(model.step(blocks, x, u, w))
}

/// Seeded disturbance and noise source.
#[derive(Debug, Clone)]
pub struct DisturbanceGen {
    rng: ChaCha8Rng,
    kind: DisturbanceKind,
    eta: f64,
    noise_bound: f64,
    norm: NormKind,
}

impl DisturbanceGen {
    pub fn new(kind: DisturbanceKind, eta: f64, noise_bound: f64, norm: NormKind, seed: u64) -> Self {
        DisturbanceGen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            kind,
            eta,
            noise_bound,
            norm,
        }
    }

    fn ball_sample(&mut self, dim: usize, radius: f64) -> Vec<f64> {
        match self.norm {
            NormKind::MaxAbs => (0..dim).map(|_| self.rng.gen_range(-radius..=radius)).collect(),
            NormKind::SumAbs => {
                // uniform on the ℓ1 ball: normalised exponential spacings
                let e: Vec<f64> = (0..=dim).map(|_| -(1.0 - self.rng.gen::<f64>()).ln()).collect();
                let total: f64 = e.iter().sum();
                (0..dim)
                    .map(|a| {
                        let s = if self.rng.gen::<bool>() { 1.0 } else { -1.0 };
                        s * radius * e[a] / total
                    })
                    .collect()
            }
        }
    }

    /// One disturbance per node; `hint` is the node's latest effective
    /// disturbance, used by the adversarial kind.
    pub fn next_w(&mut self, model: &StructuredModel, hint: &[f64]) -> Vec<f64> {
        let mut w = Vec::with_capacity(model.n_state());
        for j in 0..model.n_nodes() {
            let d = model.state_dims[j];
            let off = model.state_offset(j);
            match self.kind {
                DisturbanceKind::Zero => w.extend(std::iter::repeat_n(0.0, d)),
                DisturbanceKind::UniformBox => {
                    let s = self.ball_sample(d, self.eta);
                    w.extend(s);
                }
                DisturbanceKind::AdversarialVertex => {
                    let h = &hint[off..off + d];
                    match self.norm {
                        NormKind::MaxAbs => {
                            for &hv in h {
                                let s = if hv > 0.0 {
                                    1.0
                                } else if hv < 0.0 {
                                    -1.0
                                } else if self.rng.gen::<bool>() {
                                    1.0
                                } else {
                                    -1.0
                                };
                                w.push(s * self.eta);
                            }
                        }
                        NormKind::SumAbs => {
                            let (best, val) = h
                                .iter()
                                .enumerate()
                                .fold((0, 0.0f64), |acc, (a, v)| if v.abs() > acc.1.abs() { (a, *v) } else { acc });
                            let best = if val == 0.0 { self.rng.gen_range(0..d) } else { best };
                            let s = if val < 0.0 { -1.0 } else { 1.0 };
                            let mut e = vec![0.0; d];
                            e[best] = s * self.eta;
                            w.extend(e);
                        }
                    }
                }
            }
        }
        w
    }

    pub fn next_v(&mut self, model: &StructuredModel) -> Vec<f64> {
        if self.noise_bound == 0.0 {
            return vec![0.0; model.n_state()];
        }
        let mut v = Vec::with_capacity(model.n_state());
        for j in 0..model.n_nodes() {
            let s = self.ball_sample(model.state_dims[j], self.noise_bound);
            v.extend(s);
        }
        v
    }
}

/// Observation bound used for estimation: with measurement noise the
/// residual also contains `v_k − A v_{k−1}`, bounded over the prior.
pub fn observation_bounds(sc: &Scenario) -> Result<Vec<f64>> {
    let model = &sc.model;
    if sc.noise_bound == 0.0 {
        return Ok(vec![sc.eta; model.n_nodes()]);
    }
    let verts = sc.prior.enumerate_vertices()?;
    let mut out = vec![0.0f64; model.n_nodes()];
    for v in &verts {
        let blocks = model.assemble(v)?;
        for (j, o) in out.iter_mut().enumerate() {
            let s: f64 = model
                .neighbors(j)
                .iter()
                .map(|&i| sc.norm.induced_norm(&blocks.a[&(j, i)]))
                .sum();
            *o = o.max(s);
        }
    }
    Ok(out.iter().map(|s| sc.eta + (1.0 + s) * sc.noise_bound).collect())
}

fn truth_violation(p: &HalfspacePolytope<f64>, alpha: &[f64]) -> f64 {
    p.normals()
        .outer_iter()
        .zip(p.offsets())
        .map(|(r, &b)| r.iter().zip(alpha).map(|(a, x)| a * x).sum::<f64>() - b)
        .fold(0.0, f64::max)
}

struct Disturbances {
    gen: DisturbanceGen,
    replay: Option<Vec<(Vec<f64>, Vec<f64>)>>,
}

impl Disturbances {
    fn new(sc: &Scenario, opts: &RunOptions) -> Self {
        Disturbances {
            gen: DisturbanceGen::new(sc.disturbance_kind, sc.eta, sc.noise_bound, sc.norm, sc.seed),
            replay: opts.replay.clone(),
        }
    }

    fn noise(&mut self, model: &StructuredModel, t: usize) -> Result<Vec<f64>> {
        match &self.replay {
            Some(r) => r
                .get(t)
                .map(|p| p.1.clone())
                .ok_or_else(|| Error::Config(format!("replay has no entry for step {t}"))),
            None => Ok(self.gen.next_v(model)),
        }
    }

    fn disturbance(&mut self, model: &StructuredModel, t: usize, hint: &[f64]) -> Result<Vec<f64>> {
        match &self.replay {
            Some(r) => r
                .get(t)
                .map(|p| p.0.clone())
                .ok_or_else(|| Error::Config(format!("replay has no entry for step {t}"))),
            None => Ok(self.gen.next_w(model, hint)),
        }
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn meta(sc: &Scenario, algorithm: Algorithm) -> Result<TraceMeta> {
    Ok(TraceMeta {
        trace_version: TRACE_VERSION,
        algorithm,
        seed: sc.seed,
        config_hash: config_hash(sc)?,
        steps: sc.steps,
        n_nodes: sc.model.n_nodes(),
        scenario: ScenarioFile::from_scenario(sc),
        causality_checks: 0,
    })
}

fn snapshot(p: &HalfspacePolytope<f64>, t: usize, node: Option<usize>) -> Result<PolytopeSnapshot> {
    Ok(PolytopeSnapshot {
        t,
        node,
        polytope: p.to_json(),
        vertices: p.enumerate_vertices()?,
    })
}

fn response_norms(resp: &BlockResponse, norm: NormKind) -> (f64, f64) {
    (
        resp.r.iter().map(|b| norm.induced_norm(b)).sum(),
        resp.m.iter().map(|b| norm.induced_norm(b)).sum(),
    )
}

/// The central adaptive loop: one polytope from all observations, one
/// global synthesis per step.
pub fn run_algorithm1(sc: &Scenario, opts: &RunOptions) -> Result<SimulationTrace> {
    sc.validate()?;
    let model = &sc.model;
    let (n, horizon) = (model.n_state(), sc.horizon_t);
    let true_blocks = model.assemble(&sc.true_alpha)?;
    let (a_true, b_true) = model.global_matrices(&true_blocks)?;
    let obs_eta = observation_bounds(sc)?;
    let mut dist = Disturbances::new(sc, opts);
    let mut trace = SimulationTrace {
        meta: meta(sc, Algorithm::Central)?,
        records: Vec::with_capacity(sc.steps + 1),
        snapshots: Vec::new(),
        responses: Vec::with_capacity(sc.steps + 1),
    };
    let mut poly = sc.prior.clone();
    let mut state = ControllerState::new(n, horizon);
    let mut x = sc.x0.clone();
    let mut prev: Option<(BlockResponse, f64, f64, Phase)> = None;
    let mut last_y: Vec<f64> = Vec::new();
    let mut last_u: Vec<f64> = Vec::new();
    for t in 0..=sc.steps {
        let v = dist.noise(model, t)?;
        let y = add(&x, &v);
        if t > 0 {
            let mut cs = Vec::with_capacity(model.n_nodes());
            for j in 0..model.n_nodes() {
                let b = estimation::build_regressors(model, &last_y, &last_u, &y, j, t - 1)?;
                cs.push(estimation::constraint_from_observation(&b, obs_eta[j], sc.norm)?);
            }
            poly = estimation::update_central(&poly, &cs, t)?;
        }
        let vertices = poly.enumerate_vertices()?;
        let deltas: Vec<Array1<f64>> = (0..horizon).map(|k| state.delta(k).clone()).collect();
        let started = Instant::now();
        let mut feas_slack = f64::NAN;
        let resynth = prev.is_none() || t % sc.resynth_period == 0;
        let (resp, lambda, lambda_bound, phase) = if resynth {
            let req = CentralRequest {
                model,
                vertices: &vertices,
                previous: prev.as_ref().map(|p| &p.0),
                deltas: &deltas,
                m_a: sc.margins.m_a,
                lambda_star: sc.lambda_star,
                cost: sc.cost_for(0),
                norm: sc.norm,
                horizon,
            };
            if let Some((pr, _, pb, _)) = &prev {
                feas_slack = synthesis::central_slack(&req, pr, *pb)?;
            }
            let tag = format!("t{t:05}-central");
            let res = synthesis::two_phase_central(&req, opts.dump_lp.as_deref(), &tag)?;
            if res.status == SynthStatus::Infeasible {
                return Err(if t == 0 {
                    Error::InfeasibleAtStart("central margin program".into())
                } else {
                    Error::RecursiveFeasibility {
                        step: t,
                        detail: format!("central program infeasible; previous solution slack {feas_slack:e}"),
                    }
                });
            }
            (res.response, res.lambda, res.lambda_bound, res.phase)
        } else {
            prev.clone().expect("previous response")
        };
        let synth_ms = started.elapsed().as_secs_f64() * 1e3;
        let delta = state.delta_update(&resp, &Array1::from(y.clone()))?;
        let u = state.control_output(&resp)?.to_vec();
        let w = if t < sc.steps {
            dist.disturbance(model, t, delta.as_slice().expect("contiguous"))?
        } else {
            vec![0.0; n]
        };
        let mu = slscontrol::margin_of(&a_true, &b_true, &resp, sc.norm)?;
        let (r_norm_sum, m_norm_sum) = response_norms(&resp, sc.norm);
        trace.records.push(StepRecord {
            t,
            x: x.clone(),
            u: u.clone(),
            w: w.clone(),
            v: v.clone(),
            delta: delta.to_vec(),
            lambda: vec![lambda],
            lambda_bound: vec![lambda_bound],
            phase: vec![phase],
            vertices: vec![vertices.len()],
            feas_slack: vec![feas_slack],
            verify_slack: vec![f64::NAN],
            truth_violation: vec![truth_violation(&poly, &sc.true_alpha)],
            mu,
            r_norm_sum,
            m_norm_sum,
            synth_ms,
        });
        if opts.snapshot_period > 0 && t % opts.snapshot_period == 0 || t == sc.steps {
            trace.snapshots.push(snapshot(&poly, t, None)?);
        }
        trace.responses.push(resp.clone());
        if t < sc.steps {
            x = step_plant(model, &true_blocks, &x, &u, &w, sc.eta, sc.norm)?;
        }
        last_y = y;
        last_u = u;
        prev = Some((resp, lambda, lambda_bound, phase));
    }
    Ok(trace)
}

/// Payloads exchanged between nodes.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    ConstraintShare(LinearConstraintSet<f64>),
    /// `R^{to←from}`, `M^{to←from}` computed at `time` (rows of the
    /// receiver only).
    BlockShare {
        time: usize,
        r: Vec<Array2<f64>>,
        m: Vec<Array2<f64>>,
    },
    DeltaShare {
        time: usize,
        value: Array1<f64>,
    },
    /// Measured state, needed by plant out-neighbours to form regressors.
    StateShare {
        time: usize,
        value: Array1<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub from: usize,
    pub to: usize,
    pub sent_at: usize,
    pub deliver_at: usize,
    pub msg: Message,
}

/// FIFO queues per directed edge; a message sent at `t` over an edge with
/// delay `d` is handed out exactly at `t + d`.
#[derive(Debug, Default)]
pub struct MessageBus {
    queues: BTreeMap<(usize, usize), VecDeque<Envelope>>,
}

impl MessageBus {
    pub fn send(&mut self, from: usize, to: usize, t: usize, delay: usize, msg: Message) {
        self.queues.entry((from, to)).or_default().push_back(Envelope {
            from,
            to,
            sent_at: t,
            deliver_at: t + delay,
            msg,
        });
    }

    /// Everything due at `t`, in edge order. A message whose time has
    /// passed is a scheduling bug.
    pub fn deliver(&mut self, t: usize) -> Result<Vec<Envelope>> {
        let mut out = Vec::new();
        for q in self.queues.values_mut() {
            while let Some(front) = q.front() {
                if front.deliver_at < t {
                    return Err(Error::NumericalBreakdown(format!(
                        "message {}→{} due at {} still queued at {t}",
                        front.from, front.to, front.deliver_at
                    )));
                }
                if front.deliver_at > t {
                    break;
                }
                out.push(q.pop_front().expect("front"));
            }
        }
        Ok(out)
    }

    pub fn pending(&self) -> usize {
        self.queues.values().map(|q| q.len()).sum()
    }
}

/// What node `j` knows about the others.
#[derive(Debug, Default)]
struct NodeView {
    constraints: Vec<LinearConstraintSet<f64>>,
    blocks: BTreeMap<(usize, usize), (Vec<Array2<f64>>, Vec<Array2<f64>>)>,
    deltas: BTreeMap<(usize, usize), Array1<f64>>,
    states: BTreeMap<(usize, usize), Array1<f64>>,
}

struct NodeRun {
    polytope: HalfspacePolytope<f64>,
    responses: Vec<ColumnResponse>,
    deltas: Vec<Array1<f64>>,
    lambda: f64,
    lambda_bound: f64,
    c: f64,
    phase: Phase,
    view: NodeView,
}

fn route(views: &mut [NodeRun], mail: Vec<Envelope>) {
    for e in mail {
        let view = &mut views[e.to].view;
        match e.msg {
            Message::ConstraintShare(c) => view.constraints.push(c),
            Message::BlockShare { time, r, m } => {
                view.blocks.insert((e.from, time), (r, m));
            }
            Message::DeltaShare { time, value } => {
                view.deltas.insert((e.from, time), value);
            }
            Message::StateShare { time, value } => {
                view.states.insert((e.from, time), value);
            }
        }
    }
}

fn slice_rows(x: &Array2<f64>, off: usize, len: usize) -> Array2<f64> {
    x.slice(ndarray::s![off..off + len, ..]).to_owned()
}

/// The distributed loop: per-node polytopes fed by delayed constraint
/// sharing, per-node synthesis of column blocks, and the delayed
/// implementation of `δ̂` and `u` over the bus.
pub fn run_algorithm2(sc: &Scenario, opts: &RunOptions) -> Result<SimulationTrace> {
    sc.validate()?;
    let model = &sc.model;
    let topo = &sc.topology;
    let nn = model.n_nodes();
    let (n, horizon) = (model.n_state(), sc.horizon_t);
    let true_blocks = model.assemble(&sc.true_alpha)?;
    let (a_true, b_true) = model.global_matrices(&true_blocks)?;
    let basis = synthesis::global_basis(model)?;
    let obs_eta = observation_bounds(sc)?;
    let mut dist = Disturbances::new(sc, opts);
    let mut trace = SimulationTrace {
        meta: meta(sc, Algorithm::Dlar)?,
        records: Vec::with_capacity(sc.steps + 1),
        snapshots: Vec::new(),
        responses: Vec::with_capacity(sc.steps + 1),
    };
    let mut bus = MessageBus::default();
    let mut nodes: Vec<NodeRun> = (0..nn)
        .map(|_| NodeRun {
            polytope: sc.prior.clone(),
            responses: Vec::new(),
            deltas: Vec::new(),
            lambda: f64::NAN,
            lambda_bound: f64::NAN,
            c: f64::NAN,
            phase: Phase::Robustness,
            view: NodeView::default(),
        })
        .collect();
    let mut causality_checks = 0u64;
    let mut x = sc.x0.clone();
    let mut last_u: Vec<f64> = vec![0.0; model.n_input()];
    for t in 0..=sc.steps {
        let v = dist.noise(model, t)?;
        let y = add(&x, &v);
        let mail = bus.deliver(t)?;
        route(&mut nodes, mail);

        // observations, sharing and polytope updates
        if t > 0 {
            let mut own = Vec::with_capacity(nn);
            for j in 0..nn {
                // regressors from the node's own measurement and input and the
                // states its plant neighbours shared one step ago
                let mut x_prev = vec![0.0; n];
                for i in model.neighbors(j) {
                    let val = if i == j {
                        let off = model.state_offset(i);
                        Array1::from(trace.records[t - 1].x[off..off + model.state_dims[i]].to_vec())
                            + Array1::from(trace.records[t - 1].v[off..off + model.state_dims[i]].to_vec())
                    } else {
                        causality_checks += 1;
                        nodes[j].view.states.get(&(i, t - 1)).cloned().ok_or_else(|| {
                            Error::NumericalBreakdown(format!("node {j} lacks the state of {i} at {}", t - 1))
                        })?
                    };
                    let off = model.state_offset(i);
                    x_prev[off..off + model.state_dims[i]].copy_from_slice(val.as_slice().expect("contiguous"));
                }
                let b = estimation::build_regressors(model, &x_prev, &last_u, &y, j, t - 1)?;
                own.push(estimation::constraint_from_observation(&b, obs_eta[j], sc.norm)?);
            }
            for (j, c) in own.iter().enumerate() {
                for &to in &topo.send_regions[j] {
                    if to != j {
                        bus.send(j, to, t, topo.delay(to, j), Message::ConstraintShare(c.clone()));
                    }
                }
            }
            let mail = bus.deliver(t)?;
            route(&mut nodes, mail);
            for (i, c) in own.into_iter().enumerate() {
                let mut inbox = std::mem::take(&mut nodes[i].view.constraints);
                inbox.insert(0, c);
                for cs in &inbox {
                    if cs.origin_time + topo.delay(i, cs.origin_node) != t {
                        return Err(Error::NumericalBreakdown(format!(
                            "constraint from {} generated at {} reached {i} at {t}",
                            cs.origin_node, cs.origin_time
                        )));
                    }
                }
                nodes[i].polytope = estimation::update_node(i, &nodes[i].polytope, &inbox, t)?;
            }
        }

        // synthesis
        let started = Instant::now();
        let mut feas = vec![f64::NAN; nn];
        let mut verify = vec![f64::NAN; nn];
        let mut vcount = vec![0; nn];
        let resynth = t == 0 || t % sc.resynth_period == 0;
        for i in 0..nn {
            let verts = nodes[i].polytope.enumerate_vertices()?;
            vcount[i] = verts.len();
            let node = &nodes[i];
            let vertex_mats: Vec<(Array2<f64>, Array2<f64>)> =
                verts.iter().map(|v| synthesis::combine_basis(&basis, v)).collect();
            let check = |current: &ColumnResponse, c: f64, lambda: f64| {
                slscontrol::verify_distributed_conditions(
                    model,
                    topo,
                    &NodeConditionInput {
                        node: i,
                        t,
                        current,
                        past: &node.responses,
                        deltas: &node.deltas,
                        vertices: &vertex_mats,
                        rho: sc.rho,
                        c,
                        lambda,
                        m1: sc.margins.m1[i],
                        m2: sc.margins.m2[i],
                        norm: sc.norm,
                    },
                    RECURSIVE_TOL,
                )
            };
            if t > 0 {
                let prev = node.responses.last().expect("previous response");
                feas[i] = check(prev, node.c, node.lambda_bound)?.worst_slack;
            }
            let result = if resynth {
                let req = NodeRequest {
                    model,
                    topology: topo,
                    node: i,
                    t,
                    vertices: &verts,
                    past: &node.responses,
                    deltas: &node.deltas,
                    rho: sc.rho,
                    m1: sc.margins.m1[i],
                    m2: sc.margins.m2[i],
                    lambda_star: sc.lambda_star,
                    cost: sc.cost_for(i),
                    norm: sc.norm,
                    horizon,
                };
                let tag = format!("t{t:05}-node{i}");
                let res = synthesis::two_phase_node(&req, opts.dump_lp.as_deref(), &tag)?;
                if res.status == SynthStatus::Infeasible {
                    return Err(if t == 0 {
                        Error::InfeasibleAtStart(format!("node {i} margin program"))
                    } else {
                        Error::RecursiveFeasibility {
                            step: t,
                            detail: format!("node {i} program infeasible; previous solution slack {:e}", feas[i]),
                        }
                    });
                }
                if opts.verify_synthesis {
                    verify[i] = check(&res.response, res.c.unwrap_or(0.0), res.lambda_bound)?.worst_slack;
                }
                Some(res)
            } else {
                None
            };
            let node = &mut nodes[i];
            match result {
                Some(res) => {
                    node.lambda = res.lambda;
                    node.lambda_bound = res.lambda_bound;
                    node.c = res.c.unwrap_or(0.0);
                    node.phase = res.phase;
                    node.responses.push(res.response);
                }
                None => {
                    let last = node.responses.last().expect("previous response").clone();
                    node.responses.push(last);
                }
            }
        }
        let synth_ms = started.elapsed().as_secs_f64() * 1e3;
        for i in 0..nn {
            let col = nodes[i].responses[t].clone();
            for &j in &topo.local_regions[i] {
                let (r, m) = (
                    col.r.iter().map(|b| slice_rows(b, model.state_offset(j), model.state_dims[j])).collect(),
                    col.m.iter().map(|b| slice_rows(b, model.input_offset(j), model.input_dims[j])).collect(),
                );
                bus.send(i, j, t, topo.delay(j, i), Message::BlockShare { time: t, r, m });
            }
        }
        let mail = bus.deliver(t)?;
        route(&mut nodes, mail);

        // effective disturbances, each node from its own view
        let mut delta = vec![0.0; n];
        for j in 0..nn {
            let (off, nj) = (model.state_offset(j), model.state_dims[j]);
            let mut d = Array1::from(y[off..off + nj].to_vec());
            for i in 0..nn {
                let dji = topo.delay(j, i);
                if !topo.local_regions[i].contains(&j) || t < dji {
                    continue;
                }
                causality_checks += 1;
                let (r, _) = nodes[j].view.blocks.get(&(i, t - dji)).ok_or_else(|| {
                    Error::NumericalBreakdown(format!("node {j} lacks blocks of {i} from {}", t - dji))
                })?;
                for k in 1..horizon {
                    if k > t || r[k].iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    if k < dji {
                        return Err(Error::NumericalBreakdown(format!(
                            "block R^({j}<-{i})({}) is nonzero inside the delay",
                            k + 1
                        )));
                    }
                    causality_checks += 1;
                    let di = nodes[j].view.deltas.get(&(i, t - k)).or_else(|| {
                        (i == j).then(|| &nodes[j].deltas[t - k])
                    });
                    let di = di.ok_or_else(|| {
                        Error::NumericalBreakdown(format!("node {j} lacks δ̂ of {i} from {}", t - k))
                    })?;
                    d -= &r[k].dot(di);
                }
            }
            delta[off..off + nj].copy_from_slice(d.as_slice().expect("contiguous"));
        }
        for j in 0..nn {
            let (off, nj) = (model.state_offset(j), model.state_dims[j]);
            let d = Array1::from(delta[off..off + nj].to_vec());
            nodes[j].deltas.push(d.clone());
            for &to in &topo.send_regions[j] {
                if to != j {
                    bus.send(j, to, t, topo.delay(to, j), Message::DeltaShare { time: t, value: d.clone() });
                }
            }
            let ys = Array1::from(y[off..off + nj].to_vec());
            for to in model.out_neighbors(j) {
                if to != j {
                    bus.send(j, to, t, topo.delay(to, j), Message::StateShare { time: t, value: ys.clone() });
                }
            }
        }
        let mail = bus.deliver(t)?;
        route(&mut nodes, mail);

        // control
        let mut u = vec![0.0; model.n_input()];
        for j in 0..nn {
            let (uoff, mj) = (model.input_offset(j), model.input_dims[j]);
            if mj == 0 {
                continue;
            }
            let mut uj = Array1::zeros(mj);
            for i in 0..nn {
                let dji = topo.delay(j, i);
                if !topo.local_regions[i].contains(&j) || t < dji {
                    continue;
                }
                let (_, m) = &nodes[j].view.blocks[&(i, t - dji)];
                for k in 0..horizon {
                    if k > t || m[k].iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    if k < dji {
                        return Err(Error::NumericalBreakdown(format!(
                            "block M^({j}<-{i})({}) uses δ̂ before it arrives",
                            k + 1
                        )));
                    }
                    causality_checks += 1;
                    let di = nodes[j].view.deltas.get(&(i, t - k)).or_else(|| (i == j).then(|| &nodes[j].deltas[t - k]));
                    let di = di.ok_or_else(|| {
                        Error::NumericalBreakdown(format!("node {j} lacks δ̂ of {i} from {}", t - k))
                    })?;
                    uj += &m[k].dot(di);
                }
            }
            u[uoff..uoff + mj].copy_from_slice(uj.as_slice().expect("contiguous"));
        }
        // views only need the last T steps of shared data
        if t > horizon {
            let cutoff = t - horizon - 1;
            let dmax = (0..nn).flat_map(|j| (0..nn).map(move |i| (j, i))).map(|(j, i)| topo.delay(j, i)).max().unwrap_or(0);
            for node in nodes.iter_mut() {
                node.view.deltas.retain(|k, _| k.1 > cutoff);
                node.view.states.retain(|k, _| k.1 > cutoff);
                node.view.blocks.retain(|k, _| k.1 + dmax > cutoff);
            }
        }

        let w = if t < sc.steps {
            dist.disturbance(model, t, &delta)?
        } else {
            vec![0.0; n]
        };
        let cols: Vec<&ColumnResponse> = nodes.iter().map(|s| &s.responses[t]).collect();
        let mu = slscontrol::distributed_margin(model, &a_true, &b_true, &cols, sc.norm)?;
        let composed = slscontrol::compose_delayed(model, topo, t, |i, s| &nodes[i].responses[s]);
        let (r_norm_sum, m_norm_sum) = response_norms(&composed, sc.norm);
        trace.records.push(StepRecord {
            t,
            x: x.clone(),
            u: u.clone(),
            w: w.clone(),
            v: v.clone(),
            delta: delta.clone(),
            lambda: nodes.iter().map(|s| s.lambda).collect(),
            lambda_bound: nodes.iter().map(|s| s.lambda_bound).collect(),
            phase: nodes.iter().map(|s| s.phase).collect(),
            vertices: vcount,
            feas_slack: feas,
            verify_slack: verify,
            truth_violation: nodes.iter().map(|s| truth_violation(&s.polytope, &sc.true_alpha)).collect(),
            mu,
            r_norm_sum,
            m_norm_sum,
            synth_ms,
        });
        if opts.snapshot_period > 0 && t % opts.snapshot_period == 0 || t == sc.steps {
            for (i, s) in nodes.iter().enumerate() {
                trace.snapshots.push(snapshot(&s.polytope, t, Some(i))?);
            }
        }
        trace.responses.push(composed);
        if t < sc.steps {
            x = step_plant(model, &true_blocks, &x, &u, &w, sc.eta, sc.norm)?;
        }
        last_u = u;
    }
    trace.meta.causality_checks = causality_checks;
    Ok(trace)
}

/// Runs the scenario with the chosen scheme.
pub fn run(sc: &Scenario, algorithm: Algorithm, opts: &RunOptions) -> Result<SimulationTrace> {
    match algorithm {
        Algorithm::Central => run_algorithm1(sc, opts),
        Algorithm::Dlar => run_algorithm2(sc, opts),
    }
}

/// Closed loop of a fixed central controller against a plant that jumps to
/// a random vertex of the given set every step; returns `(x_t, δ̂_t)`.
#[allow(clippy::too_many_arguments)]
pub fn run_switching_plant(
    model: &StructuredModel,
    resp: &BlockResponse,
    vertices: &[Vec<f64>],
    x0: &[f64],
    steps: usize,
    eta: f64,
    norm: NormKind,
    kind: DisturbanceKind,
    seed: u64,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut gen = DisturbanceGen::new(kind, eta, 0.0, norm, seed);
    let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let plants: Vec<SystemBlocks> = vertices.iter().map(|v| model.assemble(v)).collect::<Result<_>>()?;
    let mut state = ControllerState::new(model.n_state(), resp.horizon());
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(steps + 1);
    for t in 0..=steps {
        let d = state.delta_update(resp, &Array1::from(x.clone()))?;
        let u = state.control_output(resp)?;
        out.push((x.clone(), d.to_vec()));
        if t < steps {
            let w = gen.next_w(model, d.as_slice().expect("contiguous"));
            let plant = &plants[pick.gen_range(0..plants.len())];
            x = step_plant(model, plant, &x, u.as_slice().expect("contiguous"), &w, eta, norm)?;
        }
    }
    Ok(out)
}

/// Result of a single synthesis at the prior, per node (or one entry for
/// the central scheme).
#[derive(Debug, Clone)]
pub struct SynthReport {
    pub node: Option<usize>,
    pub status: SynthStatus,
    pub lambda: f64,
    pub lambda_bound: f64,
    pub phase: Phase,
    pub vertices: usize,
    pub num_vars: usize,
    pub num_rows: usize,
}

/// Runs the start-up synthesis of either scheme without stepping the plant.
pub fn synthesize_once(sc: &Scenario, alg: Algorithm) -> Result<Vec<SynthReport>> {
    sc.validate()?;
    let model = &sc.model;
    let horizon = sc.horizon_t;
    let vertices = sc.prior.enumerate_vertices()?;
    match alg {
        Algorithm::Central => {
            let deltas = vec![Array1::zeros(model.n_state()); horizon];
            let req = CentralRequest {
                model,
                vertices: &vertices,
                previous: None,
                deltas: &deltas,
                m_a: sc.margins.m_a,
                lambda_star: sc.lambda_star,
                cost: sc.cost_for(0),
                norm: sc.norm,
                horizon,
            };
            let res = synthesis::two_phase_central(&req, None, "central")?;
            Ok(vec![SynthReport {
                node: None,
                status: res.status,
                lambda: res.lambda,
                lambda_bound: res.lambda_bound,
                phase: res.phase,
                vertices: vertices.len(),
                num_vars: res.num_vars,
                num_rows: res.num_rows,
            }])
        }
        Algorithm::Dlar => (0..model.n_nodes())
            .map(|i| {
                let req = NodeRequest {
                    model,
                    topology: &sc.topology,
                    node: i,
                    t: 0,
                    vertices: &vertices,
                    past: &[],
                    deltas: &[],
                    rho: sc.rho,
                    m1: sc.margins.m1[i],
                    m2: sc.margins.m2[i],
                    lambda_star: sc.lambda_star,
                    cost: sc.cost_for(i),
                    norm: sc.norm,
                    horizon,
                };
                let res = synthesis::two_phase_node(&req, None, "node")?;
                Ok(SynthReport {
                    node: Some(i),
                    status: res.status,
                    lambda: res.lambda,
                    lambda_bound: res.lambda_bound,
                    phase: res.phase,
                    vertices: vertices.len(),
                    num_vars: res.num_vars,
                    num_rows: res.num_rows,
                })
            })
            .collect(),
    }
}
