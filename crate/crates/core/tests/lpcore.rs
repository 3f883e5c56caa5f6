mod common;

use adaptive_sls::lpcore::{
    encode_matrix_norm_bound, encode_vector_norm_bound, read_text, solve, solve_with, write_text,
    AffineExpr, LinearProgram, LpBuilder, LpStatus, NormKind, Route,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn random_lps_match_basic_solution_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..300 {
        let lp = common::random_lp(&mut rng);
        let (status, value) = common::brute_force(&lp);
        for route in [Route::Primal, Route::Dual] {
            let sol = solve_with(&lp, route).unwrap();
            assert_eq!(sol.status, status, "case {case} route {route:?}\n{}", write_text(&lp));
            if status == LpStatus::Optimal {
                assert!(
                    (sol.objective_value - value).abs() <= 1e-7 * (1.0 + value.abs()),
                    "case {case} {route:?}: {} vs {value}",
                    sol.objective_value
                );
                assert!(lp.max_violation(&sol.point) <= 1e-7);
            }
        }
    }
}

fn klee_minty(n: usize) -> LinearProgram<f64> {
    let mut lp = LinearProgram::<f64>::new(n);
    lp.objective = (0..n).map(|j| -(2f64.powi((n - 1 - j) as i32))).collect();
    lp.inequality_normals = Array2::from_shape_fn((n, n), |(i, j)| {
        if j < i {
            2f64.powi((i - j + 1) as i32)
        } else if i == j {
            1.0
        } else {
            0.0
        }
    });
    lp.inequality_offsets = (0..n).map(|i| 5f64.powi(i as i32 + 1)).collect();
    lp.variable_bounds = vec![(0.0, f64::INFINITY); n];
    lp
}

#[test]
fn klee_minty_terminates_with_known_optimum() {
    for n in 2..=6 {
        let lp = klee_minty(n);
        for route in [Route::Primal, Route::Dual] {
            let sol = solve_with(&lp, route).unwrap();
            assert_eq!(sol.status, LpStatus::Optimal);
            assert!((sol.objective_value + 5f64.powi(n as i32)).abs() < 1e-6);
        }
    }
}

#[test]
fn degenerate_cube_corner_terminates() {
    // Many redundant constraints through the same optimal vertex.
    let n = 4;
    let mut lp = LinearProgram::<f64>::new(n);
    lp.objective = vec![-1.0; n];
    let mut rows = Vec::new();
    for mask in 1..(1usize << n) {
        let row: Vec<f64> = (0..n).map(|j| (mask >> j & 1) as f64).collect();
        let k: f64 = row.iter().sum();
        rows.push((row, k));
    }
    lp.inequality_normals = Array2::from_shape_fn((rows.len(), n), |(r, j)| rows[r].0[j]);
    lp.inequality_offsets = rows.iter().map(|r| r.1).collect();
    lp.variable_bounds = vec![(0.0, f64::INFINITY); n];
    for route in [Route::Primal, Route::Dual] {
        let sol = solve_with(&lp, route).unwrap();
        assert!((sol.objective_value + n as f64).abs() < 1e-9);
    }
}

#[test]
fn identical_input_gives_identical_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let lp = common::random_lp(&mut rng);
        let reparsed: LinearProgram<f64> = read_text(&write_text(&lp)).unwrap();
        let a = solve(&lp).unwrap();
        let b = solve(&reparsed).unwrap();
        assert_eq!(a.status, b.status);
        assert_eq!(a.point.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.point.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn single_precision_instance() {
    let mut lp = LinearProgram::<f32>::new(2);
    lp.objective = vec![1.0, 1.0];
    lp.inequality_normals = ndarray::array![[-1.0, -2.0], [-3.0, -1.0]];
    lp.inequality_offsets = vec![-2.0, -3.0];
    lp.variable_bounds = vec![(0.0, f32::INFINITY); 2];
    let sol = solve(&lp).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    assert!((sol.objective_value - 1.4).abs() < 1e-5);
}

#[test]
fn minimised_matrix_bound_equals_norm_at_optimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..40 {
        let nv = rng.gen_range(1..4);
        let (r, c) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let coefs: Vec<Vec<f64>> = (0..r * c)
            .map(|_| (0..=nv).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        for norm in [NormKind::MaxAbs, NormKind::SumAbs] {
            let mut b = LpBuilder::<f64>::new();
            let xs: Vec<usize> = (0..nv).map(|_| b.add_var(-1.0, 1.0)).collect();
            let t = b.add_free_var();
            let m = Array2::from_shape_fn((r, c), |(i, j)| {
                let k = &coefs[i * c + j];
                let mut e = AffineExpr::constant(k[nv]);
                for (v, x) in xs.iter().enumerate() {
                    e.add_term(*x, k[v]);
                }
                e
            });
            encode_matrix_norm_bound(&mut b, norm, &m, &AffineExpr::var(t));
            b.set_objective(&AffineExpr::var(t));
            let sol = solve(&b.build()).unwrap();
            let at = m.map(|e| e.eval(&sol.point));
            let direct = norm.induced_norm(&at);
            assert!((direct - sol.objective_value).abs() < 1e-7);
        }
    }
}

fn encoded_feasible(norm: NormKind, v: &[f64], bound: f64) -> bool {
    let mut b = LpBuilder::<f64>::new();
    let exprs: Vec<AffineExpr<f64>> = v.iter().map(|&x| AffineExpr::constant(x)).collect();
    encode_vector_norm_bound(&mut b, norm, &exprs, &AffineExpr::constant(bound));
    solve(&b.build()).unwrap().status == LpStatus::Optimal
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]
    #[test]
    fn vector_encoders_are_exact(
        v in prop::collection::vec(-5.0f64..5.0, 1..5),
        bound in 0.0f64..12.0,
        l1 in any::<bool>(),
    ) {
        let norm = if l1 { NormKind::SumAbs } else { NormKind::MaxAbs };
        let value = norm.vector_norm(&v);
        prop_assume!((value - bound).abs() > 1e-9);
        prop_assert_eq!(encoded_feasible(norm, &v, bound), value <= bound);
    }
}
