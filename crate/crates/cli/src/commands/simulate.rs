use driftbench_core::synthetic::{prop1_case, theorem1_trials, Prop1Case};
use serde::Serialize;

use crate::error::CliResult;

#[derive(Clone, Debug, Serialize)]
pub struct SimulateSettings {
    pub trials: usize,
    pub seed: u64,
    pub prop1_sizes: Vec<usize>,
    pub side: usize,
}

#[derive(Debug, Serialize)]
pub struct SimulateReport {
    pub tool_version: String,
    pub config_hash: String,
    pub trials: usize,
    pub seed: u64,
    pub max_abs_gap: f64,
    pub exact_mismatches: usize,
    pub max_marginalization_gap: f64,
    pub prop1_cases: Vec<Prop1Case>,
}

pub fn run_simulate(s: &SimulateSettings, hash: &str) -> CliResult<SimulateReport> {
    let t = theorem1_trials(s.seed, s.trials);
    let prop1_cases = s
        .prop1_sizes
        .iter()
        .map(|&n| prop1_case(n, s.side, s.seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SimulateReport {
        tool_version: driftbench_core::VERSION.to_string(),
        config_hash: hash.to_string(),
        trials: t.trials,
        seed: s.seed,
        max_abs_gap: t.max_abs_gap,
        exact_mismatches: t.exact_mismatches,
        max_marginalization_gap: t.max_marginalization_gap,
        prop1_cases,
    })
}
