//! Parameter sweeps: a base experiment plus value lists for selected
//! config fields, expanded into the full cartesian grid, executed on a
//! bounded worker pool, and written as one CSV per point plus an index.
//!
//! Every point is an independent deterministic run, so the produced files
//! are byte-identical for any parallelism level.  Repeats of a point reuse
//! its parameters and offset the seed by the repeat number.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{error_csv_row, metrics_csv, ExperimentConfig};
use crate::engine;
use crate::error::{Error, Result};

/// A sweep: base config, axes (config path → values), repeats per point.
///
/// Paths are dot-separated field names resolved against the config's JSON
/// form; a segment missing at its level is looked up inside that level's
/// `params` object, so `attack.epsilon` reaches the dissensus parameter
/// without spelling out the tag/params nesting.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub axes: BTreeMap<String, Vec<Value>>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn default_repeats() -> usize {
    1
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::InvalidSpec(format!("sweep spec does not parse: {e}")))
    }
}

/// One fully resolved grid point.
#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    /// Position in deterministic expansion order.
    pub index: usize,
    /// The axis assignments that produced this point.
    pub params: BTreeMap<String, Value>,
    /// Repeat number within the point's parameter assignment.
    pub repeat: usize,
    /// Seed actually used (point seed + repeat).
    pub seed: u64,
    /// Short canonical config hash; also the output CSV stem.
    pub run_id: String,
    #[serde(skip)]
    pub config: ExperimentConfig,
}

/// What happened to one executed point.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PointStatus {
    /// Ran to completion; CSV written.
    Ok { rounds: usize },
    /// The requested weighting has no valid solution; skipped, no CSV.
    Infeasible { reason: String },
    /// The run errored; a partial CSV exists only for non-finite aborts.
    Failed { reason: String, partial_csv: bool },
}

/// Index entry: one per expanded point, in expansion order.
#[derive(Clone, Debug, Serialize)]
pub struct IndexEntry {
    pub run_id: String,
    pub file: Option<String>,
    pub params: BTreeMap<String, Value>,
    pub repeat: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub status: PointStatus,
}

pub struct SweepReport {
    pub entries: Vec<IndexEntry>,
    pub index_path: PathBuf,
}

impl SweepReport {
    pub fn counts(&self) -> (usize, usize, usize) {
        let mut ok = 0;
        let mut infeasible = 0;
        let mut failed = 0;
        for e in &self.entries {
            match e.status {
                PointStatus::Ok { .. } => ok += 1,
                PointStatus::Infeasible { .. } => infeasible += 1,
                PointStatus::Failed { .. } => failed += 1,
            }
        }
        (ok, infeasible, failed)
    }
}

// ---------------------------------------------------------------------------
// Path resolution on the config's JSON form
// ---------------------------------------------------------------------------

fn path_error(path: &str, detail: &str) -> Error {
    Error::InvalidSpec(format!("axis path `{path}` is not resolvable: {detail}"))
}

/// Descends one segment, falling back into a `params` object when the key
/// is not found directly (the JSON shape of tagged enum variants).
fn descend_mut<'a>(level: &'a mut Value, key: &str, path: &str) -> Result<&'a mut Value> {
    let map = level
        .as_object_mut()
        .ok_or_else(|| path_error(path, &format!("`{key}` applied to a non-object")))?;
    if map.contains_key(key) {
        return Ok(map.get_mut(key).expect("present"));
    }
    if let Some(params) = map.get_mut("params") {
        if let Some(pmap) = params.as_object_mut() {
            if pmap.contains_key(key) {
                return Ok(pmap.get_mut(key).expect("present"));
            }
        }
    }
    Err(path_error(path, &format!("no field `{key}`")))
}

/// Sets `path` to `value` in the config document.  The final segment may
/// name a field the base config omitted (an unset optional); it is then
/// created at the innermost resolvable level, preferring an existing
/// `params` object.
fn set_path(doc: &mut Value, path: &str, value: &Value) -> Result<()> {
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(path_error(path, "empty segment"));
    }
    let (last, front) = segments.split_last().expect("non-empty split");
    let mut level = doc;
    for key in front {
        level = descend_mut(level, key, path)?;
    }
    let map = level
        .as_object_mut()
        .ok_or_else(|| path_error(path, &format!("`{last}` applied to a non-object")))?;
    if map.contains_key(*last) {
        map.insert((*last).to_string(), value.clone());
        return Ok(());
    }
    if let Some(pmap) = map.get_mut("params").and_then(Value::as_object_mut) {
        pmap.insert((*last).to_string(), value.clone());
        return Ok(());
    }
    map.insert((*last).to_string(), value.clone());
    Ok(())
}

/// Reads `path` with the same descent rule; absent paths yield None.
fn get_path<'a>(doc: &'a Value, path: &str) -> Option<&'a Value> {
    let mut level = doc;
    for key in path.split('.') {
        let map = level.as_object()?;
        level = match map.get(key) {
            Some(v) => v,
            None => map.get("params")?.as_object()?.get(key)?,
        };
    }
    Some(level)
}

/// Checks that everything in the assigned axis value survived the round
/// trip through the typed config: numbers compare as floats (the trip
/// normalizes `1` to `1.0`), objects may gain defaulted fields but must
/// keep every explicitly set one, and `null` means "may be absent".
fn value_covered(set: &Value, found: Option<&Value>) -> bool {
    let Some(found) = found else {
        return set.is_null();
    };
    match (set, found) {
        (Value::Null, _) => found.is_null(),
        (Value::Number(x), Value::Number(y)) => match (x.as_f64(), y.as_f64()) {
            (Some(x), Some(y)) => x == y,
            _ => x == y,
        },
        (Value::Array(xs), Value::Array(ys)) => {
            xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| value_covered(x, Some(y)))
        }
        (Value::Object(xs), Value::Object(ys)) => xs
            .iter()
            .all(|(k, x)| (x.is_null() && !ys.contains_key(k)) || value_covered(x, ys.get(k))),
        _ => set == found,
    }
}

// ---------------------------------------------------------------------------
// Expansion
// ---------------------------------------------------------------------------

/// Expands the cartesian product of all axes times `repeats` into concrete
/// run configs, in a deterministic order: axes iterate in path order, the
/// last axis fastest, repeats innermost.  Seeds are `point seed + repeat`.
pub fn expand_sweep(spec: &SweepSpec) -> Result<Vec<SweepPoint>> {
    if spec.axes.is_empty() {
        return Err(Error::InvalidSpec("sweep needs at least one axis".into()));
    }
    if spec.repeats == 0 {
        return Err(Error::InvalidSpec("repeats must be >= 1".into()));
    }
    for (path, values) in &spec.axes {
        if values.is_empty() {
            return Err(Error::InvalidSpec(format!("axis `{path}` has no values")));
        }
    }
    let base_doc = serde_json::to_value(&spec.base)
        .map_err(|e| Error::InvalidSpec(format!("base config does not serialize: {e}")))?;

    let axes: Vec<(&String, &Vec<Value>)> = spec.axes.iter().collect();
    let combos = axes.iter().map(|(_, vs)| vs.len()).product::<usize>();
    let mut points = Vec::with_capacity(combos * spec.repeats);
    let mut seen = BTreeSet::new();
    let mut cursor = vec![0usize; axes.len()];
    for _ in 0..combos {
        let mut doc = base_doc.clone();
        let mut params = BTreeMap::new();
        for (axis, &vi) in axes.iter().zip(&cursor) {
            set_path(&mut doc, axis.0, &axis.1[vi])?;
            params.insert(axis.0.clone(), axis.1[vi].clone());
        }
        let point_cfg: ExperimentConfig = serde_json::from_value(doc).map_err(|e| {
            Error::InvalidSpec(format!("sweep point {params:?} is not a valid config: {e}"))
        })?;
        // An axis that serde silently dropped (e.g. a typo inside a tagged
        // variant's params) would collapse grid points; verify every
        // assignment survived the round trip through the typed config.
        let canonical: Value =
            serde_json::from_str(&point_cfg.to_canonical_json()).expect("canonical JSON parses");
        for (path, value) in &params {
            if !value_covered(value, get_path(&canonical, path)) {
                return Err(Error::InvalidSpec(format!(
                    "axis `{path}` had no effect on the config (value {value} \
                     did not appear after a round trip); check the field name"
                )));
            }
        }
        for repeat in 0..spec.repeats {
            let mut cfg = point_cfg.clone();
            cfg.seed = point_cfg.seed.wrapping_add(repeat as u64);
            let run_id = cfg.run_id();
            if !seen.insert(run_id.clone()) {
                return Err(Error::InvalidSpec(format!(
                    "sweep points collide: {params:?} repeat {repeat} duplicates \
                     an earlier point (identical resolved config)"
                )));
            }
            points.push(SweepPoint {
                index: points.len(),
                params: params.clone(),
                repeat,
                seed: cfg.seed,
                run_id,
                config: cfg,
            });
        }
        for (slot, (_, values)) in cursor.iter_mut().zip(&axes).rev() {
            *slot += 1;
            if *slot < values.len() {
                break;
            }
            *slot = 0;
        }
    }
    Ok(points)
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

fn io_context(what: &str, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{what}: {e}")))
}

/// Writes `content` to `path` atomically: temp file in the same directory,
/// then rename.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let stem = path.file_name().ok_or_else(|| {
        Error::InvalidSpec(format!("output path {} has no file name", path.display()))
    })?;
    let tmp = dir.join(format!(".{}.tmp", stem.to_string_lossy()));
    fs::write(&tmp, content).map_err(|e| io_context(&format!("write {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| {
        io_context(
            &format!("rename {} -> {}", tmp.display(), path.display()),
            e,
        )
    })
}

fn execute_point(point: &SweepPoint, out_dir: &Path) -> Result<(PointStatus, Option<String>)> {
    let file_name = format!("{}.csv", point.run_id);
    match engine::run(&point.config) {
        Ok(records) => {
            let csv = metrics_csv(&point.run_id, &records);
            write_atomic(&out_dir.join(&file_name), &csv)?;
            Ok((
                PointStatus::Ok {
                    rounds: records.len(),
                },
                Some(file_name),
            ))
        }
        Err(err @ Error::Infeasible { .. }) => Ok((
            PointStatus::Infeasible {
                reason: err.to_string(),
            },
            None,
        )),
        Err(err @ Error::NonFiniteState { .. }) => {
            let Error::NonFiniteState { round, partial, .. } = &err else {
                unreachable!()
            };
            let mut csv = metrics_csv(&point.run_id, partial);
            csv.push_str(&error_csv_row(&point.run_id, *round));
            csv.push('\n');
            write_atomic(&out_dir.join(&file_name), &csv)?;
            Ok((
                PointStatus::Failed {
                    reason: err.to_string(),
                    partial_csv: true,
                },
                Some(file_name),
            ))
        }
        Err(e) => Ok((
            PointStatus::Failed {
                reason: e.to_string(),
                partial_csv: false,
            },
            None,
        )),
    }
}

/// Runs every expanded point on a pool of `parallelism` workers and writes
/// `index.json` plus one CSV per completed point into `out_dir`.
///
/// Infeasible parameter combinations are recorded (with the solver's
/// reason) and skipped; failures of individual points are recorded and do
/// not stop the sweep.  Output is byte-identical for any worker count.
pub fn run_sweep(spec: &SweepSpec, out_dir: &Path, parallelism: usize) -> Result<SweepReport> {
    if parallelism == 0 {
        return Err(Error::InvalidSpec("parallelism must be >= 1".into()));
    }
    let points = expand_sweep(spec)?;
    fs::create_dir_all(out_dir)
        .map_err(|e| io_context(&format!("create {}", out_dir.display()), e))?;

    let results: Vec<Result<(PointStatus, Option<String>)>> = if parallelism == 1 {
        points.iter().map(|p| execute_point(p, out_dir)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| Error::Io(std::io::Error::other(format!("worker pool: {e}"))))?;
        pool.install(|| {
            points
                .par_iter()
                .map(|p| execute_point(p, out_dir))
                .collect()
        })
    };

    let mut entries = Vec::with_capacity(points.len());
    for (point, result) in points.into_iter().zip(results) {
        let (status, file) = result?;
        entries.push(IndexEntry {
            run_id: point.run_id,
            file,
            params: point.params,
            repeat: point.repeat,
            seed: point.seed,
            status,
        });
    }
    let index_path = out_dir.join("index.json");
    let json = serde_json::to_string_pretty(&entries).expect("index serializes");
    write_atomic(&index_path, &format!("{json}\n"))?;
    Ok(SweepReport {
        entries,
        index_path,
    })
}
