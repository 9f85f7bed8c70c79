//! Monte Carlo runner and CSV output.
//!
//! Replicate `r` draws from ChaCha8 seeded with the experiment seed on
//! stream `r`. Replicates are processed in fixed-size chunks; chunk results
//! are integer-exact and merged in chunk order, so output is identical for
//! any thread count.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use super::config::ExperimentConfig;
use super::data::{generate_dataset, replicate_rng};
use crate::engine::{run_methods, EngineSettings, Protocol};
use crate::error::{Error, Result};
use crate::metrics::{trajectory_check, MethodAccumulator};

const CHUNK: u64 = 64;

pub const CSV_HEADER: &str = "t,strategy,metric,value,stderr,n_replicates";

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    /// One per method, in config order.
    pub accumulators: Vec<MethodAccumulator>,
}

impl RunOutput {
    pub fn method(&self, label: &str) -> Option<&MethodAccumulator> {
        self.accumulators.iter().find(|a| a.label == label)
    }
}

/// Runs all replicates on a pool of `threads` workers (0 = one per core).
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<RunOutput> {
    cfg.validate()?;
    let methods = cfg.methods();
    let rule = cfg.selection_rule();
    let protocol = cfg.protocol();
    let settings = EngineSettings::new(cfg.alpha).with_protocol(protocol);
    let score_fn = cfg.score_function();
    let n_on = cfg.data.n_on;
    let prefix_time = (protocol == Protocol::Terminal && n_on <= 65).then(|| n_on - 1);
    let alpha = cfg.alpha.value();

    let fresh = || -> Vec<MethodAccumulator> {
        methods
            .iter()
            .map(|m| {
                let acc = MethodAccumulator::new(m.label(), n_on);
                match prefix_time {
                    Some(t) => acc.with_prefix_buckets(t),
                    None => acc,
                }
            })
            .collect()
    };

    let run_chunk = |chunk: u64| -> Result<Vec<MethodAccumulator>> {
        let mut accs = fresh();
        let end = ((chunk + 1) * CHUNK).min(cfg.replicates);
        for r in chunk * CHUNK..end {
            let stream = generate_dataset(&cfg.data, &mut replicate_rng(cfg.seed, r));
            let trajs = run_methods(&stream, &rule, &methods, settings, &score_fn)?;
            for ((acc, traj), m) in accs.iter_mut().zip(&trajs).zip(&methods) {
                acc.push(traj);
                if let Some(ok) = trajectory_check(m, traj, alpha) {
                    acc.record_check(ok);
                }
            }
        }
        Ok(accs)
    };

    let n_chunks = cfg.replicates.div_ceil(CHUNK);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let parts: Vec<Vec<MethodAccumulator>> =
        pool.install(|| (0..n_chunks).into_par_iter().map(run_chunk).collect::<Result<_>>())?;

    let mut accumulators = fresh();
    for part in parts {
        for (acc, p) in accumulators.iter_mut().zip(part) {
            acc.merge(p);
        }
    }
    Ok(RunOutput {
        config: cfg.clone(),
        accumulators,
    })
}

/// File-name form of a method label, e.g. `10-EXPRESS` → `10-express`.
pub fn method_slug(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect()
}

/// Creates `dir` and checks that files can be written there.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".selconf-write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

pub fn write_csv(path: &Path, acc: &MethodAccumulator) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = String::new();
    body.push_str(CSV_HEADER);
    body.push('\n');
    for row in acc.rows() {
        let stderr = row.stderr.map(|s| s.to_string()).unwrap_or_default();
        body.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.t, acc.label, row.metric, row.value, stderr, row.n
        ));
    }
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Writes `<out>/<method>.csv` for every method and a `summary.json` with
/// the resolved config, per-trajectory check counts and decision-prefix
/// buckets.
pub fn write_outputs(out: &Path, run: &RunOutput) -> Result<Vec<PathBuf>> {
    ensure_writable(out)?;
    let mut written = Vec::new();
    let mut methods = Vec::new();
    for acc in &run.accumulators {
        let path = out.join(format!("{}.csv", method_slug(&acc.label)));
        write_csv(&path, acc)?;
        written.push(path);
        let (checks, failures) = acc.checks();
        let buckets: Vec<_> = acc
            .buckets()
            .map(|(key, b)| {
                json!({
                    "prefix": format!("{key:b}"),
                    "count": b.count,
                    "misses": b.misses,
                    "miscoverage": b.estimate.map(|e| e.value),
                    "stderr": b.estimate.and_then(|e| e.stderr),
                    "eligible": b.eligible(),
                })
            })
            .collect();
        methods.push(json!({
            "label": acc.label,
            "replicates": acc.replicates(),
            "trajectory_checks": checks,
            "trajectory_check_failures": failures,
            "prefix_buckets": buckets,
        }));
    }
    let summary = json!({ "config": run.config, "methods": methods });
    let path = out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}
