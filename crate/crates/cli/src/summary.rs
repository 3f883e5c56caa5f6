use serde::Serialize;

use adaptive_sls::simulator::SimulationTrace;

/// Figures reported after a run; computed from the trace alone.
#[derive(Debug, Serialize)]
pub struct Summary {
    pub steps: usize,
    pub final_lambda: Vec<f64>,
    pub final_lambda_bound: Vec<f64>,
    pub first_stable_step: Option<usize>,
    pub stays_stable: bool,
    pub max_state_norm: f64,
    pub final_state_norm: f64,
}

pub fn summarize(trace: &SimulationTrace) -> Summary {
    let norm = trace.meta.scenario.norm;
    let recs = &trace.records;
    let last = recs.last();
    let first_stable_step = recs.iter().find(|r| r.mu < 1.0).map(|r| r.t);
    let stays_stable = first_stable_step
        .map(|t0| recs.iter().filter(|r| r.t >= t0).all(|r| r.mu < 1.0))
        .unwrap_or(false);
    Summary {
        steps: recs.len().saturating_sub(1),
        final_lambda: last.map(|r| r.lambda.clone()).unwrap_or_default(),
        final_lambda_bound: last.map(|r| r.lambda_bound.clone()).unwrap_or_default(),
        first_stable_step,
        stays_stable,
        max_state_norm: recs.iter().map(|r| norm.vector_norm(&r.x)).fold(0.0, f64::max),
        final_state_norm: last.map(|r| norm.vector_norm(&r.x)).unwrap_or(0.0),
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
        writeln!(f, "steps              {}", self.steps)?;
        writeln!(f, "final lambda       {}", list(&self.final_lambda))?;
        writeln!(f, "final lambda bound {}", list(&self.final_lambda_bound))?;
        match self.first_stable_step {
            Some(t) => writeln!(f, "first mu < 1       t = {t}{}", if self.stays_stable { "" } else { " (not sustained)" })?,
            None => writeln!(f, "first mu < 1       never")?,
        }
        writeln!(f, "max |x|            {:.6}", self.max_state_norm)?;
        write!(f, "final |x|          {:.6}", self.final_state_norm)
    }
}
