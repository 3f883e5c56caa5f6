//! Line-oriented ascii dump of a [`LinearProgram`].
//!
//! ```text
//! lp v1
//! vars <n>
//! obj <c_0> ... <c_{n-1}>
//! bound <j> <lower> <upper>
//! le <rhs> <j>:<coef> ...
//! eq <rhs> <j>:<coef> ...
//! ```
//!
//! Values are printed in shortest round-trip form; `inf` and `-inf` mark
//! missing bounds. Zero coefficients are omitted from rows.

use std::fmt::Write as _;

use ndarray::Array2;

use super::LinearProgram;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn fmt_num<S: Scalar>(v: S) -> String {
    let f = v.to_f64_lossy();
    if f == f64::INFINITY {
        "inf".into()
    } else if f == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{f:?}")
    }
}

pub fn write_text<S: Scalar>(lp: &LinearProgram<S>) -> String {
    let mut out = String::new();
    let n = lp.num_vars();
    let _ = writeln!(out, "lp v1\nvars {n}");
    let obj: Vec<String> = lp.objective.iter().map(|v| fmt_num(*v)).collect();
    let _ = writeln!(out, "obj {}", obj.join(" "));
    for (j, (l, u)) in lp.variable_bounds.iter().enumerate() {
        let _ = writeln!(out, "bound {j} {} {}", fmt_num(*l), fmt_num(*u));
    }
    let rows = |kind: &str, m: &Array2<S>, rhs: &[S], out: &mut String| {
        for (row, b) in m.outer_iter().zip(rhs) {
            let _ = write!(out, "{kind} {}", fmt_num(*b));
            for (j, c) in row.iter().enumerate() {
                if *c != S::zero() {
                    let _ = write!(out, " {j}:{}", fmt_num(*c));
                }
            }
            out.push('\n');
        }
    };
    rows("le", &lp.inequality_normals, &lp.inequality_offsets, &mut out);
    rows("eq", &lp.equality_normals, &lp.equality_offsets, &mut out);
    out
}

pub fn read_text<S: Scalar>(text: &str) -> Result<LinearProgram<S>> {
    let bad = |line: usize, msg: &str| Error::Config(format!("lp text line {}: {msg}", line + 1));
    let num = |s: &str, line: usize| -> Result<S> {
        let f: f64 = match s {
            "inf" => f64::INFINITY,
            "-inf" => f64::NEG_INFINITY,
            _ => s.parse().map_err(|_| bad(line, "bad number"))?,
        };
        S::from_f64(f).ok_or_else(|| bad(line, "number out of range"))
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "lp v1")) => {}
        _ => return Err(bad(0, "missing `lp v1` header")),
    }
    let n: usize = match lines.next() {
        Some((i, l)) => l
            .strip_prefix("vars ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad(i, "expected `vars <n>`"))?,
        None => return Err(bad(1, "missing vars line")),
    };
    let mut lp = LinearProgram::<S>::new(n);
    let mut le: Vec<(Vec<S>, S)> = Vec::new();
    let mut eq: Vec<(Vec<S>, S)> = Vec::new();
    for (i, line) in lines {
        let mut it = line.split_whitespace();
        match it.next() {
            None => continue,
            Some("obj") => {
                let vals: Vec<S> = it.map(|s| num(s, i)).collect::<Result<_>>()?;
                if vals.len() != n {
                    return Err(bad(i, "objective length differs from vars"));
                }
                lp.objective = vals;
            }
            Some("bound") => {
                let parts: Vec<&str> = it.collect();
                if parts.len() != 3 {
                    return Err(bad(i, "expected `bound <j> <lo> <hi>`"));
                }
                let j: usize = parts[0].parse().map_err(|_| bad(i, "bad index"))?;
                if j >= n {
                    return Err(bad(i, "variable index out of range"));
                }
                lp.variable_bounds[j] = (num(parts[1], i)?, num(parts[2], i)?);
            }
            Some(kind @ ("le" | "eq")) => {
                let rhs = num(it.next().ok_or_else(|| bad(i, "missing rhs"))?, i)?;
                let mut row = vec![S::zero(); n];
                for tok in it {
                    let (j, c) = tok.split_once(':').ok_or_else(|| bad(i, "expected j:coef"))?;
                    let j: usize = j.parse().map_err(|_| bad(i, "bad index"))?;
                    if j >= n {
                        return Err(bad(i, "variable index out of range"));
                    }
                    row[j] = num(c, i)?;
                }
                if kind == "le" {
                    le.push((row, rhs));
                } else {
                    eq.push((row, rhs));
                }
            }
            Some(other) => return Err(bad(i, &format!("unknown record `{other}`"))),
        }
    }
    let pack = |rows: &[(Vec<S>, S)]| {
        let mut m = Array2::zeros((rows.len(), n));
        for (r, (row, _)) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                m[[r, j]] = *v;
            }
        }
        (m, rows.iter().map(|r| r.1).collect::<Vec<S>>())
    };
    (lp.inequality_normals, lp.inequality_offsets) = pack(&le);
    (lp.equality_normals, lp.equality_offsets) = pack(&eq);
    Ok(lp)
}
