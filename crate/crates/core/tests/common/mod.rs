#![allow(dead_code)]

use adaptive_sls::lpcore::{LinearProgram, LpStatus};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Solves a dense square system by Gaussian elimination with partial
/// pivoting; `None` when numerically singular.
pub fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(piv, col);
        b.swap(piv, col);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for k in col..n {
                a[r][k] -= f * a[col][k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn combinations(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::with_capacity(k), f);
}

/// Best objective over all basic solutions of `lp` intersected with the box
/// `|x_j| ≤ boxr`; `None` when no basic solution is feasible.
fn best_vertex(lp: &LinearProgram<f64>, boxr: f64) -> Option<f64> {
    let n = lp.num_vars();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for (r, &g) in lp.inequality_normals.outer_iter().zip(&lp.inequality_offsets) {
        rows.push((r.to_vec(), g));
    }
    for (j, &(l, u)) in lp.variable_bounds.iter().enumerate() {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        if u.is_finite() {
            rows.push((e.clone(), u));
        }
        e[j] = -1.0;
        if l.is_finite() {
            rows.push((e.clone(), -l));
        }
        e[j] = 1.0;
        rows.push((e.clone(), boxr));
        e[j] = -1.0;
        rows.push((e, boxr));
    }
    let eqs: Vec<(Vec<f64>, f64)> = lp
        .equality_normals
        .outer_iter()
        .zip(&lp.equality_offsets)
        .map(|(r, &e)| (r.to_vec(), e))
        .collect();
    if eqs.len() > n {
        return None;
    }
    let mut best: Option<f64> = None;
    combinations(rows.len(), n - eqs.len(), &mut |pick| {
        let mut a: Vec<Vec<f64>> = eqs.iter().map(|r| r.0.clone()).collect();
        let mut b: Vec<f64> = eqs.iter().map(|r| r.1).collect();
        for &i in pick {
            a.push(rows[i].0.clone());
            b.push(rows[i].1);
        }
        let Some(x) = solve_square(a, b) else { return };
        let ok_rows = rows.iter().all(|(r, g)| {
            let v: f64 = r.iter().zip(&x).map(|(a, b)| a * b).sum();
            v <= g + 1e-7 * (1.0 + g.abs())
        });
        let ok_eq = eqs.iter().all(|(r, e)| {
            let v: f64 = r.iter().zip(&x).map(|(a, b)| a * b).sum();
            (v - e).abs() <= 1e-7 * (1.0 + e.abs())
        });
        if ok_rows && ok_eq {
            let obj = lp.objective_at(&x);
            if best.is_none_or(|b| obj < b) {
                best = Some(obj);
            }
        }
    });
    best
}

/// Brute-force status and optimum by enumerating basic solutions. Bounded
/// boxes of two sizes reveal unboundedness.
pub fn brute_force(lp: &LinearProgram<f64>) -> (LpStatus, f64) {
    match (best_vertex(lp, 1e7), best_vertex(lp, 1e8)) {
        (None, _) | (_, None) => (LpStatus::Infeasible, f64::INFINITY),
        (Some(a), Some(b)) if b < a - 1e-3 * (1.0 + a.abs()) => (LpStatus::Unbounded, f64::NEG_INFINITY),
        (Some(a), _) => (LpStatus::Optimal, a),
    }
}

/// Random small LP with integer data; some variables bounded, some rows
/// equalities.
pub fn random_lp(rng: &mut ChaCha8Rng) -> LinearProgram<f64> {
    let n = rng.gen_range(1..=6);
    let m = rng.gen_range(1..=14usize);
    let n_eq = if n > 1 && rng.gen_bool(0.3) { rng.gen_range(1..n.min(3)) } else { 0 };
    let n_ineq = m.saturating_sub(n_eq).max(1);
    let mut lp = LinearProgram::<f64>::new(n);
    lp.objective = (0..n).map(|_| rng.gen_range(-3..=3) as f64).collect();
    lp.inequality_normals =
        ndarray::Array2::from_shape_fn((n_ineq, n), |_| rng.gen_range(-3..=3) as f64);
    lp.inequality_offsets = (0..n_ineq).map(|_| rng.gen_range(-2..=6) as f64).collect();
    lp.equality_normals = ndarray::Array2::from_shape_fn((n_eq, n), |_| rng.gen_range(-3..=3) as f64);
    lp.equality_offsets = (0..n_eq).map(|_| rng.gen_range(-3..=3) as f64).collect();
    for j in 0..n {
        lp.variable_bounds[j] = match rng.gen_range(0..4) {
            0 => (f64::NEG_INFINITY, f64::INFINITY),
            1 => (0.0, f64::INFINITY),
            2 => (rng.gen_range(-3..=0) as f64, rng.gen_range(0..=3) as f64),
            _ => (f64::NEG_INFINITY, rng.gen_range(-1..=3) as f64),
        };
    }
    lp
}
