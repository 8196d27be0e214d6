//! Solve-time benchmark over states recorded in a closed-loop run.

use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use tunnelpilot_core::nmpc::control_step;
use tunnelpilot_core::sim::{straight_tunnel, ClosedLoop};
use tunnelpilot_core::{Config, NmpcContext};

use crate::report::percentile;

#[derive(Debug, Clone, Serialize)]
pub struct BenchResult {
    pub calls: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

/// Flies the straight tunnel and keeps the controller input of every tick.
pub fn recorded_contexts(config: &Config, seed: u64) -> anyhow::Result<Vec<NmpcContext>> {
    let mut sim = ClosedLoop::new(straight_tunnel(), config, seed)?;
    let mut out = Vec::with_capacity(sim.total_ticks() as usize);
    while !sim.is_finished() {
        out.push(sim.step().context("recording benchmark states")?.context);
    }
    Ok(out)
}

/// Times `calls` independent control steps, cycling through `contexts`.
pub fn time_calls(contexts: &[NmpcContext], config: &Config, calls: usize) -> anyhow::Result<BenchResult> {
    anyhow::ensure!(!contexts.is_empty(), "no recorded states");
    anyhow::ensure!(calls > 0, "calls must be > 0");
    let mut times = Vec::with_capacity(calls);
    for i in 0..calls {
        let mut ctx = contexts[i % contexts.len()].clone();
        let start = Instant::now();
        control_step(&mut ctx, &config.solver)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = times.iter().sum::<f64>() / calls as f64;
    times.sort_by(f64::total_cmp);
    Ok(BenchResult {
        calls,
        mean_ms,
        p50_ms: percentile(&times, 50.0),
        p99_ms: percentile(&times, 99.0),
        max_ms: times[calls - 1],
    })
}

pub fn run(config: &Config, seed: u64, calls: usize) -> anyhow::Result<BenchResult> {
    let contexts = recorded_contexts(config, seed)?;
    time_calls(&contexts, config, calls)
}
