use std::collections::BTreeMap;

use adaptive_sls::model::{chain5_scenario, ring3_scenario, spectral_radius, Scenario, StructuredModel, Topology};
use adaptive_sls::Error;
use ndarray::{arr2, Array1, Array2};
use proptest::prelude::*;

fn scalar(v: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), v)
}

/// Two unconnected scalar nodes, `x⁺_j = α_j x_j + α_{2+j} u_j`.
fn two_islands() -> StructuredModel {
    let mut basis_a = BTreeMap::new();
    for j in 0..2 {
        basis_a.insert((j, j), (0..4).map(|s| scalar(if s == j { 1.0 } else { 0.0 })).collect());
    }
    let basis_b = (0..2)
        .map(|j| (0..4).map(|s| scalar(if s == 2 + j { 1.0 } else { 0.0 })).collect())
        .collect();
    StructuredModel {
        state_dims: vec![1, 1],
        input_dims: vec![1, 1],
        edges: vec![(0, 0), (1, 1)],
        basis_a,
        basis_b,
        p: 4,
    }
}

#[test]
fn zero_parameter_gives_zero_blocks() {
    let sc = chain5_scenario();
    let blocks = sc.model.assemble(&[0.0; 5]).unwrap();
    assert!(blocks.a.values().all(|m| m.iter().all(|v| *v == 0.0)));
    assert!(blocks.b.iter().all(|m| m.iter().all(|v| *v == 0.0)));
}

#[test]
fn chain_global_layout() {
    let sc = chain5_scenario();
    let blocks = sc.model.assemble(&[0.3, 0.6, 0.2, 1.0, -1.0]).unwrap();
    let (a, b) = sc.model.global_matrices(&blocks).unwrap();
    let expected_a = Array2::from_shape_fn((5, 5), |(r, c)| match c as isize - r as isize {
        -1 => 0.3,
        0 => 0.6,
        1 => 0.2,
        _ => 0.0,
    });
    assert_eq!(a, expected_a);
    let mut expected_b = Array2::zeros((5, 2));
    expected_b[[0, 0]] = 1.0;
    expected_b[[4, 1]] = -1.0;
    assert_eq!(b, expected_b);
    assert_eq!(sc.model.input_dims, vec![1, 0, 0, 0, 1]);
}

#[test]
fn disconnected_nodes_are_block_diagonal() {
    let m = two_islands();
    let blocks = m.assemble(&[0.5, -2.0, 3.0, 4.0]).unwrap();
    let (a, b) = m.global_matrices(&blocks).unwrap();
    assert_eq!(a, arr2(&[[0.5, 0.0], [0.0, -2.0]]));
    assert_eq!(b, arr2(&[[3.0, 0.0], [0.0, 4.0]]));
}

#[test]
fn single_node_embeds_as_is() {
    let mut basis_a = BTreeMap::new();
    basis_a.insert((0, 0), vec![arr2(&[[1.0, 2.0], [3.0, 4.0]])]);
    let m = StructuredModel {
        state_dims: vec![2],
        input_dims: vec![1],
        edges: vec![(0, 0)],
        basis_a,
        basis_b: vec![vec![arr2(&[[1.0], [0.0]])]],
        p: 1,
    };
    m.validate().unwrap();
    let (a, b) = m.global_matrices(&m.assemble(&[2.0]).unwrap()).unwrap();
    assert_eq!(a, arr2(&[[2.0, 4.0], [6.0, 8.0]]));
    assert_eq!(b, arr2(&[[2.0], [0.0]]));
}

#[test]
fn spectral_radius_references() {
    assert!((spectral_radius(&Array2::eye(3)).unwrap() - 1.0).abs() < 1e-12);
    let nil = arr2(&[[0.0, 1.0, 5.0], [0.0, 0.0, 2.0], [0.0, 0.0, 0.0]]);
    assert!(spectral_radius(&nil).unwrap() < 1e-6);
    // rotation by 90° scaled by 2 has complex eigenvalues ±2i
    let rot = arr2(&[[0.0, -2.0], [2.0, 0.0]]);
    assert!((spectral_radius(&rot).unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn chain_scenario_defaults() {
    let sc = chain5_scenario();
    sc.validate().unwrap();
    assert!(sc.prior.membership(&[0.3, 0.6, 0.2, 1.0, -1.0]).unwrap());
    assert_eq!(sc.eta, 0.5);
    assert_eq!(sc.steps, 200);
    for j in 0..5 {
        for i in 0..5 {
            assert_eq!(sc.topology.delay(j, i), j.abs_diff(i));
        }
    }
}

#[test]
fn ring_scenario_is_valid() {
    let sc = ring3_scenario();
    sc.validate().unwrap();
    assert!(sc.prior.membership(&sc.true_alpha).unwrap());
}

#[test]
fn topology_rejects_slow_communication() {
    let sc = chain5_scenario();
    let mut topo = sc.topology.clone();
    // node 1 hears node 2 after one step; node 0, next to node 1, would hear it after three
    topo.delays[0][2] = 3;
    assert!(matches!(topo.validate(&sc.model), Err(Error::AssumptionViolation(_))));
    topo.delays[0][2] = 2;
    topo.validate(&sc.model).unwrap();
}

#[test]
fn topology_rejects_nonzero_self_delay() {
    let sc = ring3_scenario();
    let mut topo = Topology::global(3);
    topo.delays[1][1] = 1;
    assert!(topo.validate(&sc.model).is_err());
}

#[test]
fn scenario_json_round_trip() {
    let sc = chain5_scenario();
    let text = sc.to_json_string().unwrap();
    let back = Scenario::from_json_str(&text).unwrap();
    assert_eq!(back.model, sc.model);
    assert_eq!(back.topology, sc.topology);
    assert_eq!(back.true_alpha, sc.true_alpha);
    assert_eq!(back.prior.offsets(), sc.prior.offsets());
    assert_eq!(back.to_json_string().unwrap(), text);
}

#[test]
fn scenario_json_reports_unknown_field() {
    let text = chain5_scenario().to_json_string().unwrap().replace("\"rho\"", "\"rh0\"");
    let err = Scenario::from_json_str(&text).unwrap_err().to_string();
    assert!(err.contains("rh0"), "{err}");
    assert!(err.contains("line"), "{err}");
}

#[test]
fn scenario_rejects_truth_outside_prior() {
    let mut sc = chain5_scenario();
    sc.true_alpha[0] = 5.0;
    assert!(matches!(sc.validate(), Err(Error::Config(_))));
}

#[test]
fn assembled_plant_matches_simulator_step() {
    let sc = chain5_scenario();
    let blocks = sc.model.assemble(&sc.true_alpha).unwrap();
    let (a, b) = sc.model.global_matrices(&blocks).unwrap();
    let x = [0.3, -1.0, 2.0, 0.5, -0.25];
    let u = [0.7, -0.1];
    let w = [0.01, 0.02, -0.03, 0.0, 0.4];
    let next = sc.model.step(&blocks, &x, &u, &w);
    let dense = a.dot(&Array1::from(x.to_vec())) + b.dot(&Array1::from(u.to_vec())) + Array1::from(w.to_vec());
    for (p, q) in next.iter().zip(dense.iter()) {
        assert!((p - q).abs() < 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn assembly_is_linear(
        a in prop::collection::vec(-2.0f64..2.0, 5),
        b in prop::collection::vec(-2.0f64..2.0, 5),
    ) {
        let m = chain5_scenario().model;
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let (ga, gba) = m.global_matrices(&m.assemble(&a).unwrap()).unwrap();
        let (gb, gbb) = m.global_matrices(&m.assemble(&b).unwrap()).unwrap();
        let (gs, gbs) = m.global_matrices(&m.assemble(&sum).unwrap()).unwrap();
        for (l, r) in gs.iter().zip((ga + gb).iter()) {
            prop_assert!((l - r).abs() < 1e-12);
        }
        for (l, r) in gbs.iter().zip((gba + gbb).iter()) {
            prop_assert!((l - r).abs() < 1e-12);
        }
    }
}
