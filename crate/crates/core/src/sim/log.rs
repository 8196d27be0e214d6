//! Per-tick run logs: CSV body plus a JSON sidecar.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solver::SolverStatus;

pub const CSV_HEADER: [&str; 19] = [
    "t", "x", "y", "yaw", "z", "vx", "vy", "vz", "phi", "theta", "d_xp", "d_xm", "d_yp", "d_ym", "d_zp", "psi_dot_r",
    "solve_ms", "status", "collision",
];

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("sidecar: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unexpected CSV header")]
    Header,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LogError + '_ {
    move |source| LogError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One control tick. Distances are the noiseless sector distances of the true pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub z: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub phi: f64,
    pub theta: f64,
    pub d_xp: f64,
    pub d_xm: f64,
    pub d_yp: f64,
    pub d_ym: f64,
    pub d_zp: f64,
    pub psi_dot_r: f64,
    /// Wall-clock solve time; `None` when the log was written without timing.
    pub solve_ms: Option<f64>,
    pub status: SolverStatus,
    pub collision: bool,
}

impl LogRecord {
    pub fn distances(&self) -> [f64; 5] {
        [self.d_xp, self.d_xm, self.d_yp, self.d_ym, self.d_zp]
    }
}

/// Whether wall-clock solve times go into the CSV. Without them two runs with
/// the same seed and commands produce identical files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timing {
    #[default]
    Measured,
    Omitted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub scenario: String,
    pub seed: u64,
    pub param_hash: String,
    pub duration: f64,
    pub ticks: usize,
    pub timing: Timing,
    /// Set when the run aborted on a simulation fault.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub scenario: String,
    pub seed: u64,
    pub param_hash: String,
    pub duration: f64,
    pub records: Vec<LogRecord>,
    pub fault: Option<String>,
}

impl RunLog {
    pub fn new(scenario: &str, seed: u64, param_hash: String, duration: f64) -> Self {
        Self {
            scenario: scenario.to_string(),
            seed,
            param_hash,
            duration,
            records: Vec::new(),
            fault: None,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W, timing: Timing) -> Result<(), LogError> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        out.write_record(CSV_HEADER)?;
        for r in &self.records {
            let r = match timing {
                Timing::Measured => *r,
                Timing::Omitted => LogRecord { solve_ms: None, ..*r },
            };
            out.serialize(r)?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv_string(&self, timing: Timing) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, timing).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }

    pub fn meta(&self, timing: Timing) -> RunMeta {
        RunMeta {
            scenario: self.scenario.clone(),
            seed: self.seed,
            param_hash: self.param_hash.clone(),
            duration: self.duration,
            ticks: self.records.len(),
            timing,
            fault: self.fault.clone(),
        }
    }

    /// Writes `<dir>/<scenario>_seed<seed>.csv` and the `.json` sidecar next to
    /// it. Returns the CSV path.
    pub fn save(&self, dir: &Path, timing: Timing) -> Result<PathBuf, LogError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let csv_path = dir.join(format!("{}_seed{}.csv", self.scenario, self.seed));
        let file = File::create(&csv_path).map_err(io_err(&csv_path))?;
        self.write_csv(BufWriter::new(file), timing)?;
        let side = sidecar_path(&csv_path);
        let mut json = serde_json::to_string_pretty(&self.meta(timing))?;
        json.push('\n');
        std::fs::write(&side, json).map_err(io_err(&side))?;
        Ok(csv_path)
    }
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn read_records<R: Read>(r: R) -> Result<Vec<LogRecord>, LogError> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().ne(CSV_HEADER) {
        return Err(LogError::Header);
    }
    rdr.deserialize().map(|r| r.map_err(LogError::from)).collect()
}

/// Loads a CSV log and its sidecar, if present.
pub fn load_log(csv_path: &Path) -> Result<(Vec<LogRecord>, Option<RunMeta>), LogError> {
    let file = File::open(csv_path).map_err(io_err(csv_path))?;
    let records = read_records(file)?;
    let side = sidecar_path(csv_path);
    let meta = match std::fs::read_to_string(&side) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(io_err(&side)(e)),
    };
    Ok((records, meta))
}
