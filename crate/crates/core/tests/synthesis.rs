use std::collections::BTreeMap;

use adaptive_sls::lpcore::{self, NormKind};
use adaptive_sls::model::{chain5_scenario, ring3_scenario, CostPair, Scenario, StructuredModel, Topology};
use adaptive_sls::slscontrol::{margin_of, BlockResponse};
use adaptive_sls::synthesis::{
    build_central, build_node, central_slack, combine_basis, global_basis, node_support, two_phase_central,
    two_phase_node, CentralRequest, NodeRequest, Objective, Phase, SynthStatus,
};
use ndarray::{arr1, arr2, Array1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `x⁺ = α₁ x + α₂ u`.
fn scalar_model() -> StructuredModel {
    let mut basis_a = BTreeMap::new();
    basis_a.insert((0, 0), vec![arr2(&[[1.0]]), arr2(&[[0.0]])]);
    StructuredModel {
        state_dims: vec![1],
        input_dims: vec![1],
        edges: vec![(0, 0)],
        basis_a,
        basis_b: vec![vec![arr2(&[[0.0]]), arr2(&[[1.0]])]],
        p: 2,
    }
}

fn central_req<'a>(
    model: &'a StructuredModel,
    vertices: &'a [Vec<f64>],
    cost: &'a CostPair,
    horizon: usize,
) -> CentralRequest<'a> {
    CentralRequest {
        model,
        vertices,
        previous: None,
        deltas: &[],
        m_a: f64::INFINITY,
        lambda_star: 0.95,
        cost,
        norm: NormKind::MaxAbs,
        horizon,
    }
}

#[test]
fn exact_knowledge_allows_deadbeat() {
    let sc = ring3_scenario();
    let verts = vec![sc.true_alpha.clone()];
    let req = central_req(&sc.model, &verts, sc.cost_for(0), 4);
    let lp = build_central(&req, Objective::Lambda).unwrap();
    let s = lpcore::solve(&lp.lp).unwrap();
    assert!(s.objective_value.abs() < 1e-9);
}

#[test]
fn scalar_interval_matches_grid_search() {
    let model = scalar_model();
    let cost = CostPair::state_and_input(1, 1);
    let verts = vec![vec![0.4, 1.0], vec![0.6, 1.0]];
    let res = two_phase_central(&central_req(&model, &verts, &cost, 2), None, "s").unwrap();
    assert!((res.lambda - 0.1).abs() < 1e-9);
    // margin max_a |R2 − a − M1| + |a R2 + M2| over a grid of the free entries
    let mut best = f64::INFINITY;
    let grid: Vec<f64> = (-40..=40).map(|k| k as f64 * 0.025).collect();
    for &r2 in &grid {
        for &m1 in &grid {
            let m2 = -0.5 * r2; // minimises the second term over both vertices
            let worst = [0.4, 0.6]
                .iter()
                .map(|a| (r2 - a - m1).abs() + (a * r2 + m2).abs())
                .fold(0.0, f64::max);
            best = best.min(worst);
        }
    }
    assert!((best - 0.1).abs() < 1e-9, "grid optimum {best}");
    let lambda_check = verts
        .iter()
        .map(|v| {
            let (a, b) = combine_basis(&global_basis(&model).unwrap(), v);
            let resp = BlockResponse {
                r: res.response.r.clone(),
                m: res.response.m.clone(),
            };
            margin_of(&a, &b, &resp, NormKind::MaxAbs).unwrap()
        })
        .fold(0.0, f64::max);
    assert!(lambda_check <= res.lambda_bound + 1e-9);
}

#[test]
fn frozen_adaptation_keeps_previous_blocks_on_history() {
    let model = scalar_model();
    let cost = CostPair::state_and_input(1, 1);
    let verts = vec![vec![0.4, 1.0], vec![0.6, 1.0]];
    let first = two_phase_central(&central_req(&model, &verts, &cost, 3), None, "a").unwrap();
    let deltas: Vec<Array1<f64>> = vec![arr1(&[0.7]), arr1(&[-0.4]), arr1(&[0.2])];
    let narrower = vec![vec![0.45, 1.0], vec![0.55, 1.0]];
    let mut req = central_req(&model, &narrower, &cost, 3);
    req.previous = Some(&first.response);
    req.deltas = &deltas;
    req.m_a = 0.0;
    let next = two_phase_central(&req, None, "b").unwrap();
    let mut change = 0.0;
    for k in 1..3 {
        change += (next.response.r[k][[0, 0]] - first.response.r[k][[0, 0]]) * deltas[k - 1][0];
    }
    assert!(change.abs() < 1e-9, "{change}");
    assert!(central_slack(&req, &next.response, next.lambda_bound).unwrap() > -1e-7);
}

#[test]
fn single_node_program_matches_central_at_exact_knowledge() {
    let model = scalar_model();
    let cost = CostPair::state_and_input(1, 1);
    let verts = vec![vec![1.3, 0.8]];
    let topo = Topology::global(1);
    let central = two_phase_central(&central_req(&model, &verts, &cost, 3), None, "c").unwrap();
    let node = two_phase_node(
        &NodeRequest {
            model: &model,
            topology: &topo,
            node: 0,
            t: 0,
            vertices: &verts,
            past: &[],
            deltas: &[],
            rho: 0.7,
            m1: 0.1,
            m2: 0.1,
            lambda_star: 0.95,
            cost: &cost,
            norm: NormKind::MaxAbs,
            horizon: 3,
        },
        None,
        "n",
    )
    .unwrap();
    assert!(central.lambda.abs() < 1e-9);
    assert!(node.lambda.abs() < 1e-9);
    assert_eq!((central.phase, node.phase), (Phase::Performance, Phase::Performance));
}

fn node_req<'a>(sc: &'a Scenario, topo: &'a Topology, cost: &'a CostPair, verts: &'a [Vec<f64>], i: usize, horizon: usize) -> NodeRequest<'a> {
    NodeRequest {
        model: &sc.model,
        topology: topo,
        node: i,
        t: 0,
        vertices: verts,
        past: &[],
        deltas: &[],
        rho: sc.rho,
        m1: sc.margins.m1[i],
        m2: sc.margins.m2[i],
        lambda_star: sc.lambda_star,
        cost,
        norm: sc.norm,
        horizon,
    }
}

#[test]
fn node_variables_follow_support_mask() {
    let sc = chain5_scenario();
    let mut topo = sc.topology.clone();
    for i in 0..5 {
        topo.local_regions[i] = (0..5).filter(|j: &usize| j.abs_diff(i) <= 1).collect();
    }
    topo.validate(&sc.model).unwrap();
    let cost = CostPair::state_and_input(5, 2);
    let verts = vec![sc.true_alpha.clone()];
    for i in 0..5 {
        let req = node_req(&sc, &topo, &cost, &verts, i, 8);
        let lp = build_node(&req, Objective::Lambda).unwrap();
        let (r, m) = node_support(&sc.model, &topo, i, 8);
        let count: usize = r.iter().chain(m.iter()).map(|x| x.iter().filter(|b| **b).count()).sum();
        assert_eq!(lp.num_response_vars(), count, "node {i}");
    }
    // middle node: R blocks for nodes 1..3, k = 2..8, skipping k ≤ delay; no actuators in range
    let (r, m) = node_support(&sc.model, &topo, 2, 8);
    assert_eq!(r.iter().map(|x| x.iter().filter(|b| **b).count()).sum::<usize>(), 3 * 7);
    assert_eq!(m.iter().map(|x| x.iter().filter(|b| **b).count()).sum::<usize>(), 0);
}

#[test]
fn node_margin_is_geometric_in_c() {
    let sc = chain5_scenario();
    let cost = CostPair::state_and_input(5, 2);
    let verts = sc.prior.enumerate_vertices().unwrap();
    let res = two_phase_node(&node_req(&sc, &sc.topology, &cost, &verts, 0, sc.horizon_t), None, "g").unwrap();
    let c = res.c.unwrap();
    let expected = c * (1.0 - sc.rho.powi(sc.horizon_t as i32)) / (1.0 - sc.rho);
    assert!((res.lambda_bound - expected).abs() < 1e-9);
}

#[test]
fn wide_prior_stays_in_robustness_phase() {
    let sc = chain5_scenario();
    let cost = CostPair::state_and_input(5, 2);
    let verts = sc.prior.enumerate_vertices().unwrap();
    let res = two_phase_node(&node_req(&sc, &sc.topology, &cost, &verts, 2, sc.horizon_t), None, "w").unwrap();
    assert_eq!(res.status, SynthStatus::Feasible);
    assert!(res.lambda > sc.lambda_star);
    assert_eq!(res.phase, Phase::Robustness);
    assert_eq!(res.lambda, res.lambda_bound);
}

#[test]
fn exact_knowledge_reaches_performance_phase() {
    let sc = chain5_scenario();
    let cost = CostPair::state_and_input(5, 2);
    let verts = vec![sc.true_alpha.clone()];
    for i in 0..5 {
        let res = two_phase_node(&node_req(&sc, &sc.topology, &cost, &verts, i, sc.horizon_t), None, "e").unwrap();
        assert_eq!(res.phase, Phase::Performance);
        assert!(res.lambda_bound <= sc.lambda_star + 1e-9);
    }
}

#[test]
fn vertex_margin_covers_interior() {
    let sc = ring3_scenario();
    let verts = sc.prior.enumerate_vertices().unwrap();
    let req = central_req(&sc.model, &verts, sc.cost_for(0), sc.horizon_t);
    let res = two_phase_central(&req, None, "v").unwrap();
    let basis = global_basis(&sc.model).unwrap();
    let lo = [1.0, 0.2, 1.8];
    let hi = [1.2, 0.4, 2.2];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let alpha: Vec<f64> = (0..3).map(|k| rng.gen_range(lo[k]..hi[k])).collect();
        let (a, b) = combine_basis(&basis, &alpha);
        let mu = margin_of(&a, &b, &res.response, sc.norm).unwrap();
        assert!(mu <= res.lambda_bound + 1e-7, "{mu} > {}", res.lambda_bound);
    }
}

#[test]
fn resolving_is_deterministic() {
    let sc = ring3_scenario();
    let verts = sc.prior.enumerate_vertices().unwrap();
    let req = central_req(&sc.model, &verts, sc.cost_for(0), sc.horizon_t);
    let a = two_phase_central(&req, None, "d").unwrap();
    let b = two_phase_central(&req, None, "d").unwrap();
    assert_eq!(a.objective_value, b.objective_value);
    assert_eq!(a.response, b.response);
}

#[test]
fn lp_dump_writes_both_phases() {
    let sc = ring3_scenario().with_point_prior().unwrap();
    let verts = sc.prior.enumerate_vertices().unwrap();
    let req = central_req(&sc.model, &verts, sc.cost_for(0), sc.horizon_t);
    let dir = tempfile::tempdir().unwrap();
    two_phase_central(&req, Some(dir.path()), "probe").unwrap();
    assert!(dir.path().join("probe-p1.lp").exists());
    assert!(dir.path().join("probe-p2.lp").exists());
}
