//! Trace files: one CSV row per step plus a JSON sidecar with metadata and
//! polytope snapshots.
//!
//! CSV columns, in order (`n` states, `m` inputs, `N` nodes, or one
//! "node" for the central scheme):
//!
//! | column            | count | meaning                                   |
//! |-------------------|-------|-------------------------------------------|
//! | `t`               | 1     | step                                      |
//! | `x_a`             | n     | state                                     |
//! | `u_a`             | m     | input                                     |
//! | `w_a`             | n     | disturbance applied after this step       |
//! | `v_a`             | n     | measurement noise                         |
//! | `delta_a`         | n     | effective disturbance estimate            |
//! | `lambda_i`        | N     | phase-1 margin                            |
//! | `lambda_bound_i`  | N     | margin certified by the applied blocks    |
//! | `phase_i`         | N     | `Robustness` or `Performance`             |
//! | `vertices_i`      | N     | polytope vertex count                     |
//! | `feas_slack_i`    | N     | slack of the previous solution            |
//! | `verify_slack_i`  | N     | re-evaluated slack of the new solution    |
//! | `truth_violation_i` | N   | polytope violation at the true parameter  |
//! | `mu`              | 1     | margin of the applied blocks at the truth |
//! | `r_norm_sum`, `m_norm_sum`, `synth_ms` | 1 each |                    |
//!
//! Floats are written in shortest round-trip form, so reading a trace back
//! reproduces every value bit for bit.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::{PolytopeSnapshot, SimulationTrace, StepRecord, TraceMeta, TRACE_VERSION};
use crate::synthesis::Phase;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    #[serde(flatten)]
    meta: TraceMeta,
    snapshots: Vec<PolytopeSnapshot>,
}

/// Paths of the two files making up a trace.
pub fn trace_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stem}.csv")), dir.join(format!("{stem}.json")))
}

fn header(n: usize, m: usize, nodes: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for (name, count) in [("x", n), ("u", m), ("w", n), ("v", n), ("delta", n)] {
        h.extend((0..count).map(|a| format!("{name}_{a}")));
    }
    for name in [
        "lambda",
        "lambda_bound",
        "phase",
        "vertices",
        "feas_slack",
        "verify_slack",
        "truth_violation",
    ] {
        h.extend((0..nodes).map(|i| format!("{name}_{i}")));
    }
    h.extend(["mu", "r_norm_sum", "m_norm_sum", "synth_ms"].map(String::from));
    h
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_trace(trace: &SimulationTrace, csv_path: &Path, json_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path)?;
    let first = trace
        .records
        .first()
        .ok_or_else(|| Error::CorruptTrace("trace has no records".into()))?;
    w.write_record(header(first.x.len(), first.u.len(), first.lambda.len()))?;
    for r in &trace.records {
        let mut row = vec![r.t.to_string()];
        for v in [&r.x, &r.u, &r.w, &r.v, &r.delta, &r.lambda, &r.lambda_bound] {
            row.extend(v.iter().map(|x| fmt(*x)));
        }
        row.extend(r.phase.iter().map(|p| format!("{p:?}")));
        row.extend(r.vertices.iter().map(|c| c.to_string()));
        for v in [&r.feas_slack, &r.verify_slack, &r.truth_violation] {
            row.extend(v.iter().map(|x| fmt(*x)));
        }
        row.extend([r.mu, r.r_norm_sum, r.m_norm_sum, r.synth_ms].map(fmt));
        w.write_record(&row)?;
    }
    w.flush()?;
    let side = Sidecar {
        meta: trace.meta.clone(),
        snapshots: trace.snapshots.clone(),
    };
    std::fs::write(json_path, serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

fn corrupt(line: usize, what: &str) -> Error {
    Error::CorruptTrace(format!("row {line}: {what}"))
}

pub fn read_trace(csv_path: &Path, json_path: &Path) -> Result<SimulationTrace> {
    let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(json_path)?)
        .map_err(|e| Error::CorruptTrace(format!("sidecar: {e}")))?;
    if side.meta.trace_version != TRACE_VERSION {
        return Err(Error::CorruptTrace(format!(
            "unsupported trace version {}",
            side.meta.trace_version
        )));
    }
    let n: usize = side.meta.scenario.model.state_dims.iter().sum();
    let m: usize = side.meta.scenario.model.input_dims.iter().sum();
    let nodes = match side.meta.algorithm {
        crate::simulator::Algorithm::Central => 1,
        crate::simulator::Algorithm::Dlar => side.meta.n_nodes,
    };
    let mut rd = csv::Reader::from_path(csv_path)?;
    let expected = header(n, m, nodes);
    let got: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    if got != expected {
        return Err(Error::CorruptTrace("CSV header does not match the sidecar dimensions".into()));
    }
    let mut records = Vec::new();
    for (line, row) in rd.records().enumerate() {
        let row = row?;
        let mut it = row.iter();
        let take_f = |k: usize, it: &mut csv::StringRecordIter<'_>| -> Result<Vec<f64>> {
            (0..k)
                .map(|_| {
                    it.next()
                        .ok_or_else(|| corrupt(line, "short row"))?
                        .parse::<f64>()
                        .map_err(|_| corrupt(line, "bad number"))
                })
                .collect()
        };
        let t = it
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| corrupt(line, "bad step"))?;
        let x = take_f(n, &mut it)?;
        let u = take_f(m, &mut it)?;
        let w = take_f(n, &mut it)?;
        let v = take_f(n, &mut it)?;
        let delta = take_f(n, &mut it)?;
        let lambda = take_f(nodes, &mut it)?;
        let lambda_bound = take_f(nodes, &mut it)?;
        let phase = (0..nodes)
            .map(|_| match it.next() {
                Some("Robustness") => Ok(Phase::Robustness),
                Some("Performance") => Ok(Phase::Performance),
                _ => Err(corrupt(line, "bad phase")),
            })
            .collect::<Result<Vec<_>>>()?;
        let vertices = (0..nodes)
            .map(|_| {
                it.next()
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| corrupt(line, "bad vertex count"))
            })
            .collect::<Result<Vec<_>>>()?;
        let feas_slack = take_f(nodes, &mut it)?;
        let verify_slack = take_f(nodes, &mut it)?;
        let truth_violation = take_f(nodes, &mut it)?;
        let tail = take_f(4, &mut it)?;
        records.push(StepRecord {
            t,
            x,
            u,
            w,
            v,
            delta,
            lambda,
            lambda_bound,
            phase,
            vertices,
            feas_slack,
            verify_slack,
            truth_violation,
            mu: tail[0],
            r_norm_sum: tail[1],
            m_norm_sum: tail[2],
            synth_ms: tail[3],
        });
    }
    Ok(SimulationTrace {
        meta: side.meta,
        records,
        snapshots: side.snapshots,
        responses: Vec::new(),
    })
}
