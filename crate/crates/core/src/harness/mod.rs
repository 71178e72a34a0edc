//! Experiment plans, batch runs and their on-disk outputs.
//!
//! A run directory holds `results.csv`, `reports.json`, `manifest.json` and,
//! when tracing, one `trace-<i>.ndjson` per run. The manifest lists the exact
//! configuration of every run, which is all [`replay`] needs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{ConfigError, HarnessError};
use crate::sim::{run, to_ndjson, RunOptions, RunOutput, RunReport};

/// Column order of `results.csv`. Downstream plotting reads these names.
pub const CSV_COLUMNS: [&str; 15] = [
    "n",
    "alpha",
    "config",
    "tau_s",
    "block_bytes",
    "malicious_frac",
    "seed",
    "slots",
    "throughput_tps",
    "latency_min_s",
    "latency_avg_s",
    "latency_max_s",
    "orphan_rate",
    "avg_round_s",
    "avg_blocks_per_cblock",
];

/// Leading columns that identify a configuration; rows sharing them are
/// averaged into a `mean` row.
const KEY_COLUMNS: usize = 6;

/// Key column values plus slot count.
type GroupKey = ([String; KEY_COLUMNS], u32);

fn one_seed() -> Vec<u64> {
    vec![1]
}

/// A base configuration, a cartesian sweep over some of its keys, and the
/// seeds each point runs with. Sweeping `config` applies that preset's block
/// size and slot length before the other axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default)]
    pub name: String,
    #[serde(default = "one_seed")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub trace: bool,
    #[serde(default)]
    pub base: SimConfig,
    #[serde(default)]
    pub sweep: BTreeMap<String, Vec<toml::Value>>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            name: String::new(),
            seeds: one_seed(),
            trace: false,
            base: SimConfig::default(),
            sweep: BTreeMap::new(),
        }
    }
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Every run of the plan: sweep points in axis order, seeds innermost.
    pub fn expand(&self) -> Result<Vec<SimConfig>, ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("plan has no seeds".into()));
        }
        let mut points: Vec<Vec<(&str, String)>> = vec![Vec::new()];
        for (key, values) in &self.sweep {
            if values.is_empty() {
                return Err(ConfigError::Invalid(format!("sweep axis {key} is empty")));
            }
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push((key.as_str(), value_text(v)));
                        q
                    })
                })
                .collect();
        }
        let mut out = Vec::new();
        for point in points {
            let mut cfg = self.base.clone();
            if let Some((_, v)) = point.iter().find(|(k, _)| *k == "config") {
                let c = v.parse().map_err(|_| ConfigError::Parse(format!("config = {v:?}")))?;
                cfg = cfg.with_preset(c)?;
            }
            for (k, v) in point.iter().filter(|(k, _)| *k != "config") {
                cfg.set(k, v)?;
            }
            for &seed in &self.seeds {
                let c = SimConfig { seed, ..cfg.clone() };
                c.validate()?;
                out.push(c);
            }
        }
        Ok(out)
    }
}

/// Runs each configuration in order.
pub fn run_all(configs: &[SimConfig], opts: &RunOptions) -> Result<Vec<RunOutput>, HarnessError> {
    configs.iter().map(|c| Ok(run(c, opts)?)).collect()
}

fn metrics(r: &RunReport) -> [f64; 7] {
    [
        r.throughput_tps,
        r.latency_min_s,
        r.latency_avg_s,
        r.latency_max_s,
        r.orphan_rate,
        r.avg_round_s,
        r.avg_blocks_per_cblock,
    ]
}

fn key_fields(r: &RunReport) -> [String; KEY_COLUMNS] {
    [
        r.n.to_string(),
        r.alpha.to_string(),
        r.config.to_string(),
        r.tau_s.to_string(),
        r.block_bytes.to_string(),
        r.malicious_frac.to_string(),
    ]
}

fn row(key: &[String; KEY_COLUMNS], seed: &str, slots: u32, m: &[f64; 7]) -> Vec<String> {
    let mut v: Vec<String> = key.to_vec();
    v.push(seed.to_string());
    v.push(slots.to_string());
    v.extend(m.iter().map(|x| x.to_string()));
    v
}

/// The results table: one row per run, and after each group of runs that
/// differ only in seed, a row with seed `mean` averaging the group.
pub fn write_csv<W: Write>(w: W, reports: &[RunReport]) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    let mut groups: Vec<(GroupKey, Vec<&RunReport>)> = Vec::new();
    for r in reports {
        let k = (key_fields(r), r.slots);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(r),
            None => groups.push((k, vec![r])),
        }
    }
    for ((key, slots), rs) in &groups {
        for r in rs {
            out.write_record(row(key, &r.seed.to_string(), *slots, &metrics(r)))?;
        }
        if rs.len() > 1 {
            let mut mean = [0.0; 7];
            for r in rs {
                for (m, x) in mean.iter_mut().zip(metrics(r)) {
                    *m += x / rs.len() as f64;
                }
            }
            out.write_record(row(key, "mean", *slots, &mean))?;
        }
    }
    out.flush().map_err(|e| HarnessError::io("csv", e))?;
    Ok(())
}

pub fn csv_string(reports: &[RunReport]) -> Result<String, HarnessError> {
    let mut buf = Vec::new();
    write_csv(&mut buf, reports)?;
    Ok(String::from_utf8(buf).expect("csv is utf-8"))
}

/// Checks a results header, naming the first column that does not match.
pub fn check_csv_header(header: &str) -> Result<(), String> {
    let got: Vec<&str> = header.trim_end().split(',').collect();
    for (i, want) in CSV_COLUMNS.iter().enumerate() {
        match got.get(i) {
            Some(g) if g == want => {}
            Some(g) => return Err(format!("column {} is {g:?}, expected {want:?}", i + 1)),
            None => return Err(format!("missing column {want:?}")),
        }
    }
    if got.len() > CSV_COLUMNS.len() {
        return Err(format!("unexpected column {:?}", got[CSV_COLUMNS.len()]));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub trace: bool,
    pub runs: Vec<SimConfig>,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

/// Runs a manifest and writes the run directory.
pub fn execute(manifest: &Manifest, dir: &Path) -> Result<Vec<RunOutput>, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let outputs = run_all(&manifest.runs, &RunOptions { trace: manifest.trace })?;
    let reports: Vec<RunReport> = outputs.iter().map(|o| o.report.clone()).collect();
    write(&dir.join("manifest.json"), serde_json::to_string_pretty(manifest)?)?;
    write(&dir.join("reports.json"), serde_json::to_string_pretty(&reports)?)?;
    write(&dir.join("results.csv"), csv_string(&reports)?)?;
    if manifest.trace {
        for (i, o) in outputs.iter().enumerate() {
            write(&dir.join(format!("trace-{i}.ndjson")), to_ndjson(&o.trace))?;
        }
    }
    Ok(outputs)
}

/// What a replay found when comparing against the original directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplayCheck {
    pub csv_identical: bool,
    /// Indices of runs whose trace differs; empty when nothing was traced.
    pub trace_mismatches: Vec<usize>,
}

impl ReplayCheck {
    pub fn is_identical(&self) -> bool {
        self.csv_identical && self.trace_mismatches.is_empty()
    }
}

/// Re-runs the manifest found in `original` into `dir` and compares outputs byte for byte.
pub fn replay(original: &Path, dir: &Path) -> Result<ReplayCheck, HarnessError> {
    let manifest: Manifest = serde_json::from_str(&read(&original.join("manifest.json"))?)?;
    execute(&manifest, dir)?;
    let same = |name: &str| -> Result<bool, HarnessError> {
        let a = fs::read(original.join(name)).map_err(|e| HarnessError::io(original.join(name), e))?;
        let b = fs::read(dir.join(name)).map_err(|e| HarnessError::io(dir.join(name), e))?;
        Ok(a == b)
    };
    let mut trace_mismatches = Vec::new();
    if manifest.trace {
        for i in 0..manifest.runs.len() {
            if !same(&format!("trace-{i}.ndjson"))? {
                trace_mismatches.push(i);
            }
        }
    }
    Ok(ReplayCheck {
        csv_identical: same("results.csv")?,
        trace_mismatches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(seed: u64, tps: f64) -> RunReport {
        let cfg = SimConfig {
            n: 8,
            alpha: 2,
            k: 4,
            slots: 6,
            seed,
            ..SimConfig::default()
        };
        let mut r = run(&cfg, &RunOptions::default()).unwrap().report;
        r.throughput_tps = tps;
        r
    }

    #[test]
    fn plan_expands_cartesian_product() {
        let plan = ExperimentPlan::from_toml(
            r#"
            name = "grid"
            seeds = [1, 2]
            [base]
            n = 32
            alpha = 2
            k = 15
            [sweep]
            config = [1, 3]
            n = [16, 32]
            "#,
        )
        .unwrap();
        let cfgs = plan.expand().unwrap();
        assert_eq!(cfgs.len(), 8);
        let first = &cfgs[0];
        assert_eq!(
            (first.config, first.block_bytes, first.n, first.seed),
            (1, 1_000_000, 16, 1)
        );
        let last = &cfgs[7];
        assert_eq!((last.config, last.tau_s, last.n, last.seed), (3, 10.0, 32, 2));
        assert!(ExperimentPlan::from_toml("[sweep]\nwizard = [1]")
            .unwrap()
            .expand()
            .is_err());
    }

    #[test]
    fn csv_has_fixed_columns_and_mean_rows() {
        let reports = vec![report(1, 10.0), report(2, 20.0)];
        let text = csv_string(&reports).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        check_csv_header(lines[0]).unwrap();
        assert_eq!(lines.len(), 4);
        let mean: Vec<&str> = lines[3].split(',').collect();
        assert_eq!(mean[6], "mean");
        assert_eq!(mean[8], "15");
        assert_eq!(csv_string(&reports[..1]).unwrap().lines().count(), 2);
    }

    #[test]
    fn header_check_names_the_column() {
        let bad = CSV_COLUMNS.join(",").replace("orphan_rate", "orphans");
        let err = check_csv_header(&bad).unwrap_err();
        assert!(err.contains("orphans") && err.contains("orphan_rate"), "{err}");
    }

    #[test]
    fn replay_reproduces_outputs() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = Manifest {
            name: "r".into(),
            trace: true,
            runs: vec![SimConfig {
                n: 8,
                alpha: 2,
                k: 4,
                slots: 6,
                ..SimConfig::default()
            }],
        };
        execute(&manifest, &tmp.path().join("a")).unwrap();
        let check = replay(&tmp.path().join("a"), &tmp.path().join("b")).unwrap();
        assert!(check.is_identical(), "{check:?}");
    }
}
