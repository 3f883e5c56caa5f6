mod common;

use adaptive_sls::error::Error;
use adaptive_sls::polytope::{HalfspacePolytope, LinearConstraintSet};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_unit(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

fn oracle_vertices(rows: &[Vec<f64>], offs: &[f64]) -> Vec<Vec<f64>> {
    let m = rows.len();
    let p = rows[0].len();
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut pick = vec![0usize; p];
    fn rec(
        k: usize,
        start: usize,
        pick: &mut Vec<usize>,
        rows: &[Vec<f64>],
        offs: &[f64],
        out: &mut Vec<Vec<f64>>,
    ) {
        let p = pick.len();
        if k == p {
            let a = pick.iter().map(|&i| rows[i].clone()).collect();
            let b = pick.iter().map(|&i| offs[i]).collect();
            if let Some(x) = common::solve_square(a, b) {
                let feasible = rows.iter().zip(offs).all(|(r, o)| {
                    let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                    r.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() <= o + 1e-9 * n
                });
                let fresh = out.iter().all(|w| {
                    w.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() > 1e-8
                });
                if feasible && fresh {
                    out.push(x);
                }
            }
            return;
        }
        for i in start..rows.len() {
            pick[k] = i;
            rec(k + 1, i + 1, pick, rows, offs, out);
        }
    }
    let _ = m;
    rec(0, 0, &mut pick, rows, offs, &mut out);
    out
}

fn same_sets(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    let close = |x: &Vec<f64>, y: &Vec<f64>| x.iter().zip(y).all(|(u, v)| (u - v).abs() < 1e-7);
    a.len() == b.len() && a.iter().all(|x| b.iter().any(|y| close(x, y)))
}

fn to_arr(rows: &[Vec<f64>]) -> Array2<f64> {
    let p = rows[0].len();
    Array2::from_shape_fn((rows.len(), p), |(i, j)| rows[i][j])
}

#[test]
fn enumeration_matches_subset_oracle_in_3d() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    for _ in 0..40 {
        let rows: Vec<Vec<f64>> = (0..20).map(|_| random_unit(&mut rng, 3)).collect();
        let offs = vec![1.0; 20];
        let p = HalfspacePolytope::new(to_arr(&rows), offs.clone()).unwrap();
        match p.enumerate_vertices() {
            Ok(v) => {
                assert!(same_sets(&v, &oracle_vertices(&rows, &offs)));
                checked += 1;
            }
            Err(Error::Unbounded(_)) => {}
            Err(e) => panic!("{e}"),
        }
    }
    assert!(checked > 20);
}

#[test]
fn enumeration_matches_oracle_small_dims() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..60 {
        let p = rng.gen_range(1..=4);
        let m = rng.gen_range(1..=25 - 2 * p);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut offs = Vec::new();
        for j in 0..p {
            let mut e = vec![0.0; p];
            e[j] = 1.0;
            rows.push(e.clone());
            offs.push(2.0);
            e[j] = -1.0;
            rows.push(e);
            offs.push(2.0);
        }
        for _ in 0..m {
            rows.push(random_unit(&mut rng, p));
            offs.push(rng.gen_range(0.2..1.5));
        }
        let poly = HalfspacePolytope::new(to_arr(&rows), offs.clone()).unwrap();
        let v = poly.enumerate_vertices().unwrap();
        assert!(same_sets(&v, &oracle_vertices(&rows, &offs)));
    }
}

#[test]
fn incremental_cuts_match_fresh_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let p = rng.gen_range(2..=5);
        let mut poly = HalfspacePolytope::from_box(&vec![-1.0; p], &vec![1.0; p]).unwrap();
        poly.enumerate_vertices().unwrap();
        for step in 0..30 {
            let a = random_unit(&mut rng, p);
            let c = LinearConstraintSet::new(to_arr(&[a]), vec![rng.gen_range(0.3..1.2)], 0, step).unwrap();
            let next = poly.intersect(&c).unwrap();
            let inc = next.cached_vertices().unwrap().to_vec();
            let fresh = HalfspacePolytope::new(next.normals().clone(), next.offsets().to_vec()).unwrap();
            assert!(same_sets(&inc, &fresh.enumerate_vertices().unwrap()), "p={p} step={step}");
            for v in &inc {
                assert!(poly.membership(v).unwrap(), "nesting");
            }
            poly = next;
        }
    }
}

#[test]
fn redundancy_removal_preserves_membership() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = 3;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut offs = Vec::new();
    for _ in 0..200 {
        rows.push(random_unit(&mut rng, p));
        offs.push(rng.gen_range(0.5..3.0));
    }
    let poly = HalfspacePolytope::new(to_arr(&rows), offs).unwrap();
    let pruned = poly.remove_redundant().unwrap();
    assert!(pruned.num_rows() < poly.num_rows());
    for _ in 0..1000 {
        let x: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.5..1.5)).collect();
        assert_eq!(poly.membership(&x).unwrap(), pruned.membership(&x).unwrap());
    }
}

#[test]
fn idempotent_intersection() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let poly = HalfspacePolytope::from_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
    let c = LinearConstraintSet::new(poly.normals().clone(), poly.offsets().to_vec(), 0, 0).unwrap();
    let again = poly.intersect(&c).unwrap();
    for _ in 0..100 {
        let x = [rng.gen_range(-0.5..1.5), rng.gen_range(-0.5..1.5)];
        assert_eq!(poly.membership(&x).unwrap(), again.membership(&x).unwrap());
    }
}

#[test]
fn simplex_chebyshev_center_is_equidistant() {
    let poly = HalfspacePolytope::new(
        ndarray::array![[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]],
        vec![0.0, 0.0, 1.0],
    )
    .unwrap();
    let c = poly.chebyshev_center().unwrap();
    // Equidistance: x = y = r and (1 - x - y)/√2 = r.
    let r = 1.0 / (2.0 + 2f64.sqrt());
    assert!((c[0] - r).abs() < 1e-9 && (c[1] - r).abs() < 1e-9);
    assert!(poly.membership(&c).unwrap());
}

#[test]
fn dimension_checks() {
    let poly = HalfspacePolytope::<f64>::from_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
    assert!(matches!(poly.membership(&[0.0]), Err(Error::DimensionMismatch(_))));
    let c = LinearConstraintSet::new(ndarray::array![[1.0]], vec![0.0], 0, 0).unwrap();
    assert!(matches!(poly.intersect(&c), Err(Error::DimensionMismatch(_))));
    let big = HalfspacePolytope::<f64>::from_box(&[0.0; 13], &[1.0; 13]).unwrap();
    assert!(matches!(big.enumerate_vertices(), Err(Error::DimensionTooLarge(13))));
}

#[test]
fn single_precision_box() {
    let poly = HalfspacePolytope::<f32>::from_box(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
    assert_eq!(poly.enumerate_vertices().unwrap().len(), 4);
}
