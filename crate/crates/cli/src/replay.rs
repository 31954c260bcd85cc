//! Offline isolation from residual files.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use cofd::fdi::{signature_table_for, ColumnMap, EngineConfig, FdiEngine, SignatureTable};
use cofd::matrixlab::MultiIndex;
use cofd::simkit::{
    phase_specs, resolve_policy, warmup_time, DecisionRecord, ScenarioConfig, System,
};
use nalgebra::DVector;

use crate::{CliError, Result};

/// Residual samples merged across the per-observer files.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualLog {
    pub times: Vec<f64>,
    pub banks: Vec<String>,
    /// `[sample][observer]`
    pub indices: Vec<Vec<Vec<usize>>>,
    /// `[sample][observer]`
    pub residuals: Vec<Vec<DVector<f64>>>,
}

impl ResidualLog {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

struct Row {
    time: f64,
    bank: String,
    index: Vec<usize>,
    r: DVector<f64>,
}

fn read_file(path: &Path) -> Result<(usize, Vec<Row>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| CliError::schema(path, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| CliError::schema(path, e.to_string()))?
        .clone();
    let p = header.len().saturating_sub(3);
    let expected: Vec<String> = ["time", "bank", "index"]
        .iter()
        .map(|s| s.to_string())
        .chain((1..=p).map(|i| format!("r{i}")))
        .collect();
    if p == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(CliError::schema(
            path,
            format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        ));
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::schema(path, e.to_string()))?;
        let bad = |what: &str| CliError::schema(path, format!("row {}: bad {what}", line + 1));
        let float = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
        let index = record[2]
            .split(';')
            .map(|v| v.parse::<usize>().map_err(|_| bad("index")))
            .collect::<Result<Vec<_>>>()?;
        let r = (3..3 + p)
            .map(|j| float(&record[j], "residual"))
            .collect::<Result<Vec<_>>>()?;
        rows.push(Row {
            time: float(&record[0], "time")?,
            bank: record[1].to_string(),
            index,
            r: DVector::from_vec(r),
        });
    }
    Ok((p, rows))
}

/// Reads `<prefix>1.csv`, `<prefix>2.csv`, … from `dir` and aligns them on
/// the samples of the first file.
pub fn read_residuals(dir: &Path, prefix: &str) -> Result<ResidualLog> {
    let path = |h: usize| dir.join(format!("{prefix}{h}.csv"));
    let mut files: Vec<(PathBuf, Vec<Row>)> = Vec::new();
    let mut width = None;
    while path(files.len() + 1).is_file() {
        let p = path(files.len() + 1);
        let (w, rows) = read_file(&p)?;
        if *width.get_or_insert(w) != w {
            return Err(CliError::schema(
                &p,
                "residual width differs from the first file",
            ));
        }
        files.push((p, rows));
    }
    let Some(((first_path, first), rest)) = files.split_first() else {
        return Err(CliError::schema(&path(1), "no residual files"));
    };
    let mut cursors = vec![0usize; rest.len()];
    let mut log = ResidualLog {
        times: Vec::with_capacity(first.len()),
        banks: Vec::with_capacity(first.len()),
        indices: Vec::with_capacity(first.len()),
        residuals: Vec::with_capacity(first.len()),
    };
    for (i, row) in first.iter().enumerate() {
        if log
            .times
            .last()
            .is_some_and(|&prev| row.time.partial_cmp(&prev) != Some(Ordering::Greater))
        {
            return Err(CliError::schema(
                first_path,
                format!("row {}: time does not increase", i + 1),
            ));
        }
        let mut indices = vec![row.index.clone()];
        let mut residuals = vec![row.r.clone()];
        for ((p, rows), cursor) in rest.iter().zip(&mut cursors) {
            let Some(other) = rows.get(*cursor) else {
                continue;
            };
            if other.time.to_bits() == row.time.to_bits() {
                if other.bank != row.bank {
                    return Err(CliError::schema(
                        p,
                        format!("bank at t = {} differs from observer 1", row.time),
                    ));
                }
                indices.push(other.index.clone());
                residuals.push(other.r.clone());
                *cursor += 1;
            }
        }
        if log.banks.last() == Some(&row.bank)
            && log.indices.last().map(Vec::len) != Some(indices.len())
        {
            return Err(CliError::schema(
                first_path,
                format!(
                    "observer count changes inside the {} bank at t = {}",
                    row.bank, row.time
                ),
            ));
        }
        log.times.push(row.time);
        log.banks.push(row.bank.clone());
        log.indices.push(indices);
        log.residuals.push(residuals);
    }
    for ((p, rows), cursor) in rest.iter().zip(&cursors) {
        if *cursor != rows.len() {
            return Err(CliError::schema(
                p,
                format!("{} rows not aligned with observer 1", rows.len() - cursor),
            ));
        }
    }
    Ok(log)
}

/// Feeds the logged residuals through the isolation engine, switching tables
/// wherever the bank column changes; matches the online decision log.
pub fn replay(cfg: &ScenarioConfig, log: &ResidualLog) -> Result<Vec<DecisionRecord>> {
    let system = System::from_config(cfg)?;
    let units = &system.units;
    let specs = phase_specs(cfg, units)?;
    let policy = resolve_policy(cfg, &system)?;
    let file = Path::new("residual log");
    if log.is_empty() {
        return Err(CliError::schema(file, "no samples"));
    }
    if log.residuals[0][0].len() != system.plant.p() {
        return Err(CliError::schema(
            file,
            format!("expected {} residual components", system.plant.p()),
        ));
    }
    let grouped = units.sizes().iter().any(|&s| s > 1);
    let setup = |i: usize| -> Result<(usize, SignatureTable)> {
        let phase = specs
            .iter()
            .position(|s| s.label == log.banks[i])
            .ok_or_else(|| CliError::schema(file, format!("unknown bank {:?}", log.banks[i])))?;
        let columns = if phase > 0 && grouped {
            ColumnMap::Units(units.len())
        } else {
            ColumnMap::Inputs(units.clone())
        };
        let domain = match columns {
            ColumnMap::Units(q) => q,
            ColumnMap::Inputs(_) => units.inputs(),
        };
        let indices = log.indices[i]
            .iter()
            .map(|j| MultiIndex::ordered(j.clone(), domain))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CliError::schema(file, format!("t = {}: {e}", log.times[i])))?;
        Ok((
            phase,
            signature_table_for(&indices, &columns, &specs[phase].hypotheses)?,
        ))
    };

    let (phase, table) = setup(0)?;
    let mut engine = FdiEngine::new(
        EngineConfig {
            policy,
            warmup: warmup_time(cfg),
            phases: specs.len(),
            escalate: cfg.bank.escalate,
            dwell: cfg.bank.dwell,
        },
        table,
        phase,
        log.times[0],
    )?;
    let mut out = Vec::new();
    for i in 0..log.len() {
        if i > 0 && log.banks[i] != log.banks[i - 1] {
            let (phase, table) = setup(i)?;
            engine.enter_phase(phase, table, log.times[i - 1]);
        }
        if let Some(outcome) = engine.push(log.times[i], &log.residuals[i])? {
            out.push(DecisionRecord {
                phase: outcome.phase,
                bank: specs[outcome.phase].label.clone(),
                confirmed: engine.confirmed().map(|c| c.status),
                fresh: outcome.confirmed.is_some(),
                decision: outcome.decision,
            });
        }
    }
    Ok(out)
}
