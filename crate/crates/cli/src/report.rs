//! Post-flight summaries and per-plot CSV slices of a run log.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use tunnelpilot_core::sim::{LogRecord, RunMeta};

#[derive(Debug, Clone, Serialize)]
pub struct SolveTimes {
    pub mean_ms: f64,
    pub max_ms: f64,
    pub p99_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub ticks: usize,
    pub duration: f64,
    /// Minimum over the run per axis: `d_xp, d_xm, d_yp, d_ym, d_zp`.
    pub min_distances: [f64; 5],
    pub min_distance: f64,
    pub collision_ticks: usize,
    /// Absent when the log was written without timing.
    pub solve: Option<SolveTimes>,
    pub status_counts: BTreeMap<String, usize>,
    pub final_pose: Option<[f64; 4]>,
    pub fault: Option<String>,
}

/// Nearest-rank percentile of a sorted slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn summarize(records: &[LogRecord], meta: Option<&RunMeta>) -> Summary {
    let mut mins = [f64::INFINITY; 5];
    let mut status_counts = BTreeMap::new();
    let mut times = Vec::new();
    for r in records {
        for (m, d) in mins.iter_mut().zip(r.distances()) {
            *m = m.min(d);
        }
        *status_counts.entry(r.status.as_str().to_string()).or_insert(0) += 1;
        if let Some(ms) = r.solve_ms {
            times.push(ms);
        }
    }
    times.sort_by(f64::total_cmp);
    let solve = (!times.is_empty()).then(|| SolveTimes {
        mean_ms: times.iter().sum::<f64>() / times.len() as f64,
        max_ms: *times.last().unwrap(),
        p99_ms: percentile(&times, 99.0),
    });
    Summary {
        scenario: meta.map(|m| m.scenario.clone()),
        seed: meta.map(|m| m.seed),
        ticks: records.len(),
        duration: records.last().map_or(0.0, |r| r.t),
        min_distances: mins,
        min_distance: mins.iter().copied().fold(f64::INFINITY, f64::min),
        collision_ticks: records.iter().filter(|r| r.collision).count(),
        solve,
        status_counts,
        final_pose: records.last().map(|r| [r.x, r.y, r.z, r.yaw]),
        fault: meta.and_then(|m| m.fault.clone()),
    }
}

pub fn render_text(s: &Summary) -> String {
    let mut out = String::new();
    if let (Some(name), Some(seed)) = (&s.scenario, s.seed) {
        let _ = writeln!(out, "scenario        {name} (seed {seed})");
    }
    let _ = writeln!(out, "ticks           {} ({:.2} s)", s.ticks, s.duration);
    let names = ["d_xp", "d_xm", "d_yp", "d_ym", "d_zp"];
    for (n, d) in names.iter().zip(s.min_distances) {
        let _ = writeln!(out, "min {n:<11} {d:.3} m");
    }
    let _ = writeln!(out, "min distance    {:.3} m", s.min_distance);
    let _ = writeln!(out, "collision ticks {}", s.collision_ticks);
    match &s.solve {
        Some(t) => {
            let _ = writeln!(
                out,
                "solve time      mean {:.3} ms, p99 {:.3} ms, max {:.3} ms",
                t.mean_ms, t.p99_ms, t.max_ms
            );
        }
        None => {
            let _ = writeln!(out, "solve time      not recorded");
        }
    }
    for (k, v) in &s.status_counts {
        let _ = writeln!(out, "status {k:<8} {v}");
    }
    if let Some([x, y, z, yaw]) = s.final_pose {
        let _ = writeln!(out, "final pose      x {x:.3}, y {y:.3}, z {z:.3}, yaw {yaw:.3}");
    }
    if let Some(f) = &s.fault {
        let _ = writeln!(out, "fault           {f}");
    }
    out
}

type Column = fn(&LogRecord) -> String;

fn f(v: f64) -> String {
    v.to_string()
}

/// Column sets for the standard plots.
fn slice_specs() -> Vec<(&'static str, Vec<(&'static str, Column)>)> {
    vec![
        (
            "distances",
            vec![
                ("t", |r| f(r.t)),
                ("d_xp", |r| f(r.d_xp)),
                ("d_xm", |r| f(r.d_xm)),
                ("d_yp", |r| f(r.d_yp)),
                ("d_ym", |r| f(r.d_ym)),
                ("d_zp", |r| f(r.d_zp)),
            ],
        ),
        (
            "velocity",
            vec![
                ("t", |r| f(r.t)),
                ("vx", |r| f(r.vx)),
                ("vy", |r| f(r.vy)),
                ("vz", |r| f(r.vz)),
            ],
        ),
        ("altitude", vec![("t", |r| f(r.t)), ("z", |r| f(r.z))]),
        (
            "attitude",
            vec![("t", |r| f(r.t)), ("phi", |r| f(r.phi)), ("theta", |r| f(r.theta))],
        ),
        (
            "heading",
            vec![("t", |r| f(r.t)), ("yaw", |r| f(r.yaw)), ("psi_dot_r", |r| f(r.psi_dot_r))],
        ),
        (
            "trajectory",
            vec![("x", |r| f(r.x)), ("y", |r| f(r.y)), ("z", |r| f(r.z))],
        ),
        (
            "solver",
            vec![
                ("t", |r| f(r.t)),
                ("solve_ms", |r| r.solve_ms.map(f).unwrap_or_default()),
                ("status", |r| r.status.as_str().to_string()),
            ],
        ),
    ]
}

/// Writes one CSV per plot into `dir` and returns their paths.
pub fn write_slices(records: &[LogRecord], dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut paths = Vec::new();
    for (name, cols) in slice_specs() {
        let mut text = cols.iter().map(|(h, _)| *h).collect::<Vec<_>>().join(",");
        text.push('\n');
        for r in records {
            let row: Vec<String> = cols.iter().map(|(_, c)| c(r)).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        let path = dir.join(format!("{name}.csv"));
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&v, 100.0), 100.0);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&[7.0], 99.0), 7.0);
        assert!(percentile(&[], 50.0).is_nan());
    }
}
