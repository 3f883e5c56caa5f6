//! Offline audit of a recorded trace.

use std::fmt;

use crate::error::Result;
use crate::lpcore::NormKind;
use crate::model::Scenario;
use crate::simulator::{observation_bounds, Algorithm, SimulationTrace, RECURSIVE_TOL};
use crate::slscontrol::{recursion_bound, max_delay};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Info,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Info => "INFO",
        };
        write!(f, "{tag} {:<22} {}", self.name, self.detail)
    }
}

fn report(name: &'static str, failure: Option<String>, ok: String) -> PropertyReport {
    match failure {
        Some(detail) => PropertyReport {
            name,
            status: CheckStatus::Fail,
            detail,
        },
        None => PropertyReport {
            name,
            status: CheckStatus::Pass,
            detail: ok,
        },
    }
}

fn node_norms(sc: &Scenario, v: &[f64]) -> Vec<f64> {
    (0..sc.model.n_nodes())
        .map(|j| {
            let off = sc.model.state_offset(j);
            sc.norm.vector_norm(&v[off..off + sc.model.state_dims[j]])
        })
        .collect()
}

fn global_norm(norm: NormKind, per_node: &[f64]) -> f64 {
    match norm {
        NormKind::MaxAbs => per_node.iter().cloned().fold(0.0, f64::max),
        NormKind::SumAbs => per_node.iter().sum(),
    }
}

/// Per-step quantities shared by the bound checks.
struct BoundData {
    /// Size of `δ̂_t`: sum of node norms (distributed) or the global norm.
    z: Vec<f64>,
    /// Margin certified by the blocks applied at `t`.
    lambda: Vec<f64>,
    /// Constant drive of the recursion.
    drive: f64,
    /// Per-step drive built from the realised disturbance.
    realised: Vec<f64>,
    noise: f64,
}

fn bound_data(sc: &Scenario, trace: &SimulationTrace) -> Result<BoundData> {
    let model = &sc.model;
    let eta_hat = observation_bounds(sc)?;
    let recs = &trace.records;
    let nn = model.n_nodes();
    let central = trace.meta.algorithm == Algorithm::Central;
    let z = recs
        .iter()
        .map(|r| {
            let per = node_norms(sc, &r.delta);
            if central {
                global_norm(sc.norm, &per)
            } else {
                per.iter().sum()
            }
        })
        .collect();
    let lambda = recs
        .iter()
        .map(|r| r.lambda_bound.iter().cloned().fold(0.0, f64::max))
        .collect();
    let adapt: f64 = if central {
        sc.margins.m_a
    } else {
        (0..nn)
            .map(|i| sc.margins.m1[i] + (max_delay(model, &sc.topology, i) + 1) as f64 * sc.margins.m2[i])
            .sum()
    };
    let drive = adapt
        + if central {
            global_norm(sc.norm, &eta_hat)
        } else {
            eta_hat.iter().sum()
        };
    // ŵ_t holds w_{t−1} and, with noise, the noise terms up to their bound
    let realised = recs
        .iter()
        .enumerate()
        .map(|(t, _)| {
            if t == 0 {
                return 0.0;
            }
            let per: Vec<f64> = node_norms(sc, &recs[t - 1].w)
                .iter()
                .zip(&eta_hat)
                .map(|(w, e)| w + (e - sc.eta))
                .collect();
            adapt
                + if central {
                    global_norm(sc.norm, &per)
                } else {
                    per.iter().sum()
                }
        })
        .collect();
    Ok(BoundData {
        z,
        lambda,
        drive,
        realised,
        noise: sc.noise_bound,
    })
}

/// Restarted recursion bound on `z_t`: the smallest bound obtained by
/// starting the recursion at any earlier step from the window maximum there.
pub fn envelope(z: &[f64], lambda: &[f64], horizon: usize, drive: f64) -> Result<Vec<f64>> {
    let n = z.len();
    let window_max: Vec<f64> = (0..n)
        .map(|t| z[t.saturating_sub(horizon - 1)..=t].iter().cloned().fold(0.0, f64::max))
        .collect();
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let mut best = window_max[t];
        let mut lam = 0.0f64;
        for start in (0..t).rev() {
            lam = lam.max(lambda[start]);
            if !lam.is_finite() || !drive.is_finite() {
                break;
            }
            let b = recursion_bound(lam.max(1e-12), horizon, window_max[start], drive, t - start)?;
            best = best.min(b);
        }
        out.push(best);
    }
    Ok(out)
}

/// Runs every property against the trace.
pub fn check_trace(trace: &SimulationTrace) -> Result<Vec<PropertyReport>> {
    let sc = trace.meta.scenario.clone().into_scenario()?;
    let model = &sc.model;
    let recs = &trace.records;
    let horizon = sc.horizon_t;
    let blocks = model.assemble(&sc.true_alpha)?;
    let mut out = Vec::new();

    let mut fail = None;
    if recs.first().map(|r| r.x.as_slice()) != Some(sc.x0.as_slice()) {
        fail = Some("initial state differs from the scenario".to_string());
    }
    for t in 0..recs.len().saturating_sub(1) {
        if fail.is_some() {
            break;
        }
        let r = &recs[t];
        let next = model.step(&blocks, &r.x, &r.u, &r.w);
        for (a, (p, q)) in next.iter().zip(&recs[t + 1].x).enumerate() {
            if (p - q).abs() > 1e-9 * (1.0 + p.abs()) {
                fail = Some(format!("step {}: x[{a}] = {q}, dynamics give {p}", t + 1));
                break;
            }
        }
    }
    out.push(report("plant-recursion", fail, format!("{} steps", recs.len())));

    let mut fail = None;
    'w: for r in recs {
        for (j, wn) in node_norms(&sc, &r.w).iter().enumerate() {
            if *wn > sc.eta * (1.0 + 1e-12) {
                fail = Some(format!("step {}: node {j} disturbance {wn} > {}", r.t, sc.eta));
                break 'w;
            }
        }
    }
    out.push(report("disturbance-bound", fail, format!("all within {}", sc.eta)));

    let worst = recs
        .iter()
        .flat_map(|r| r.truth_violation.iter().map(move |v| (r.t, *v)))
        .fold((0, 0.0f64), |acc, p| if p.1 > acc.1 { p } else { acc });
    out.push(report(
        "ground-truth",
        (worst.1 > 1e-9).then(|| format!("step {}: true parameter outside by {:e}", worst.0, worst.1)),
        format!("max violation {:e}", worst.1),
    ));

    let mut fail = None;
    let mut pairs = 0;
    let mut nodes: Vec<Option<usize>> = trace.snapshots.iter().map(|s| s.node).collect();
    nodes.sort();
    nodes.dedup();
    for node in nodes {
        let snaps: Vec<_> = trace.snapshots.iter().filter(|s| s.node == node).collect();
        for w in snaps.windows(2) {
            pairs += 1;
            let (earlier, later) = (&w[0].polytope, &w[1].polytope);
            for v in &w[1].vertices {
                for (row, b) in earlier.normals.iter().zip(&earlier.offsets) {
                    let lhs: f64 = row.iter().zip(v).map(|(a, x)| a * x).sum();
                    let scale = row.iter().fold(1.0f64, |m, a| m.max(a.abs()));
                    if lhs - b > 1e-9 * scale && fail.is_none() {
                        fail = Some(format!(
                            "node {node:?}: vertex at step {} leaves the polytope of step {}",
                            w[1].t, w[0].t
                        ));
                    }
                }
            }
            if later.normals.is_empty() {
                fail.get_or_insert_with(|| "empty snapshot".into());
            }
        }
    }
    out.push(report("nesting", fail, format!("{pairs} snapshot pairs")));

    let mut fail = None;
    for t in 1..recs.len() {
        for (i, (now, before)) in recs[t].lambda.iter().zip(&recs[t - 1].lambda).enumerate() {
            if *now > before.max(sc.lambda_star) + 1e-6 && fail.is_none() {
                fail = Some(format!("step {t}: node {i} margin {now} after {before}"));
            }
        }
    }
    out.push(report("margin-monotone", fail, "never increases above the target".into()));

    let worst = recs
        .iter()
        .flat_map(|r| r.feas_slack.iter().map(move |v| (r.t, *v)))
        .filter(|p| p.1.is_finite())
        .fold((0, f64::INFINITY), |acc, p| if p.1 < acc.1 { p } else { acc });
    out.push(report(
        "recursive-feasibility",
        (worst.1 < -RECURSIVE_TOL).then(|| format!("step {}: previous solution slack {:e}", worst.0, worst.1)),
        format!("min slack {:e}", worst.1),
    ));

    let mut fail = None;
    for r in recs {
        let bound = r.lambda_bound.iter().cloned().fold(0.0, f64::max);
        if r.mu > bound + 1e-7 && fail.is_none() {
            fail = Some(format!("step {}: true margin {} above certified {}", r.t, r.mu, bound));
        }
    }
    let first_stable = recs.iter().find(|r| r.mu < 1.0).map(|r| r.t);
    out.push(report(
        "true-margin",
        fail,
        match first_stable {
            Some(t) => format!("below certified margin; first step under 1: {t}"),
            None => "below certified margin; never under 1".to_string(),
        },
    ));

    let data = bound_data(&sc, trace)?;
    let env = envelope(&data.z, &data.lambda, horizon, data.drive)?;
    let mut fail = None;
    let mut tight = f64::INFINITY;
    for (t, r) in recs.iter().enumerate() {
        if data.z[t] > env[t] * (1.0 + 1e-9) + 1e-9 && fail.is_none() {
            fail = Some(format!("step {t}: disturbance estimate {} above bound {}", data.z[t], env[t]));
        }
        let e_window = env[t.saturating_sub(horizon - 1)..=t].iter().cloned().fold(0.0, f64::max);
        let x_env = r.r_norm_sum * e_window + data.noise;
        let xn = sc.norm.vector_norm(&r.x);
        if xn > x_env * (1.0 + 1e-9) + 1e-9 && fail.is_none() {
            fail = Some(format!("step {t}: state norm {xn} above envelope {x_env}"));
        }
        tight = tight.min(x_env - xn);
    }
    out.push(report("envelope", fail, format!("min gap {tight:.4}")));

    let mut fail = None;
    for t in 1..recs.len() {
        let past = (1..=horizon)
            .filter(|k| *k <= t)
            .map(|k| data.z[t - k])
            .fold(0.0, f64::max);
        let rhs = data.lambda[t - 1] * past + data.realised[t];
        if data.z[t] > rhs * (1.0 + 1e-9) + 1e-9 && fail.is_none() {
            fail = Some(format!("step {t}: {} > {}", data.z[t], rhs));
        }
    }
    out.push(report("aggregate-bound", fail, "one-step recursion holds".into()));

    out.push(match trace.meta.algorithm {
        Algorithm::Dlar => report(
            "causality",
            (trace.meta.causality_checks == 0 && recs.len() > 1)
                .then(|| "no delayed reads were audited".to_string()),
            format!("{} delayed reads audited", trace.meta.causality_checks),
        ),
        Algorithm::Central => PropertyReport {
            name: "causality",
            status: CheckStatus::Info,
            detail: "central scheme has no delays".into(),
        },
    });

    let tail = &data.z[data.z.len().saturating_sub(horizon)..];
    let eta_hat = observation_bounds(&sc)?;
    let level = if trace.meta.algorithm == Algorithm::Central {
        global_norm(sc.norm, &eta_hat)
    } else {
        eta_hat.iter().sum()
    };
    out.push(PropertyReport {
        name: "delta-settling",
        status: CheckStatus::Info,
        detail: format!(
            "last {} steps max {:.4} against a disturbance level {:.4}",
            tail.len(),
            tail.iter().cloned().fold(0.0, f64::max),
            level
        ),
    });
    Ok(out)
}

pub fn all_pass(reports: &[PropertyReport]) -> bool {
    reports.iter().all(|r| r.status != CheckStatus::Fail)
}
