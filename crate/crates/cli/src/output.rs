//! CSV writers. Floats are written with `{:?}`, which round-trips exactly.

use std::path::{Path, PathBuf};

use cofd::simkit::{DecisionRecord, Summary, TraceLog};
use csv::Writer;

use crate::{CliError, DesignReport, Result};

pub const DECISIONS_HEADER: [&str; 6] = [
    "time",
    "bank",
    "status",
    "confirmed",
    "hypotheses",
    "signatures",
];

pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

fn opt_float(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

pub(crate) fn joined(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

fn open(path: &Path) -> Result<Writer<std::fs::File>> {
    Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Runtime(format!("{}: {other:?}", path.display())),
    }
}

fn finish(mut w: Writer<std::fs::File>, path: &Path) -> Result<PathBuf> {
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

/// One row per sample: state, inputs, commanded and delivered effects, bank and confirmed status.
pub fn write_trace(trace: &TraceLog, path: &Path) -> Result<PathBuf> {
    let mut w = open(path)?;
    let (n, m) = (
        trace.states.first().map_or(0, |x| x.len()),
        trace.inputs.first().map_or(0, |u| u.len()),
    );
    let k = trace.commanded.first().map_or(0, |t| t.len());
    let mut header = vec!["time".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.extend((1..=k).map(|i| format!("tau_c{i}")));
    header.extend((1..=k).map(|i| format!("tau{i}")));
    header.extend(["bank".into(), "status".into()]);
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for i in 0..trace.len() {
        let mut row = vec![format_float(trace.times[i])];
        for v in [
            &trace.states[i],
            &trace.inputs[i],
            &trace.commanded[i],
            &trace.delivered[i],
        ] {
            row.extend(v.iter().map(|&x| format_float(x)));
        }
        row.push(trace.segments[trace.segment[i]].label.clone());
        row.push(
            trace.status[i]
                .map_or("pending", |s| s.as_str())
                .to_string(),
        );
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    finish(w, path)
}

/// One row per classification window.
pub fn write_decisions(decisions: &[DecisionRecord], path: &Path) -> Result<PathBuf> {
    let mut w = open(path)?;
    w.write_record(DECISIONS_HEADER)
        .map_err(|e| csv_error(path, e))?;
    for d in decisions {
        w.write_record([
            format_float(d.decision.time),
            d.bank.clone(),
            d.decision.status.to_string(),
            d.confirmed.map_or("pending", |s| s.as_str()).to_string(),
            d.decision.hypothesis_labels(),
            d.decision.signature_bits(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    finish(w, path)
}

/// `<prefix><h>.csv` for every observer slot `h`; a row is written whenever
/// the active bank has an `h`-th observer.
pub fn write_residuals(trace: &TraceLog, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let slots = trace
        .segments
        .iter()
        .map(|s| s.bank.len())
        .max()
        .unwrap_or(0);
    let p = trace.states.first().map_or(0, |x| x.len());
    let mut files = Vec::with_capacity(slots);
    for h in 0..slots {
        let path = dir.join(format!("{prefix}{}.csv", h + 1));
        let mut w = open(&path)?;
        let mut header = vec!["time".to_string(), "bank".into(), "index".into()];
        header.extend((1..=p).map(|i| format!("r{i}")));
        w.write_record(&header).map_err(|e| csv_error(&path, e))?;
        for (i, res) in trace.residuals.iter().enumerate() {
            let Some(r) = res.get(h) else { continue };
            let seg = &trace.segments[trace.segment[i]];
            let mut row = vec![
                format_float(trace.times[i]),
                seg.label.clone(),
                joined(seg.bank.observers[h].index.indices()),
            ];
            row.extend(r.iter().map(|&v| format_float(v)));
            w.write_record(&row).map_err(|e| csv_error(&path, e))?;
        }
        files.push(finish(w, &path)?);
    }
    Ok(files)
}

pub fn write_design(report: &DesignReport, path: &Path) -> Result<PathBuf> {
    let mut w = open(path)?;
    w.write_record([
        "bank",
        "index",
        "pass",
        "eig_re",
        "section_gap",
        "hurwitz_margin",
        "rank_w",
        "rank_cw",
        "r_identity",
        "f_identity",
        "k_identity",
        "eigen_gap",
        "error",
    ])
    .map_err(|e| csv_error(path, e))?;
    for bank in &report.banks {
        for o in &bank.observers {
            let mut re: Vec<f64> = o.spectrum.iter().map(|c| c.re).collect();
            re.sort_by(f64::total_cmp);
            let inv = &o.invariants;
            w.write_record([
                bank.label.clone(),
                joined(&o.index),
                o.passes().to_string(),
                re.iter()
                    .map(|&v| format_float(v))
                    .collect::<Vec<_>>()
                    .join(";"),
                format_float(inv.section),
                format_float(o.hurwitz_margin()),
                o.rank_w.to_string(),
                o.rank_cw.to_string(),
                format_float(inv.r_identity),
                format_float(inv.f_identity),
                format_float(inv.k_identity),
                format_float(inv.eigen),
                String::new(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        for f in &bank.failures {
            let mut row = vec![bank.label.clone(), joined(&f.indices), "false".into()];
            row.extend(std::iter::repeat_n(String::new(), 9));
            row.push(f.error.to_string());
            w.write_record(&row).map_err(|e| csv_error(path, e))?;
        }
    }
    finish(w, path)
}

pub fn write_sweep(rows: &[(u64, Summary)], path: &Path) -> Result<PathBuf> {
    let mut w = open(path)?;
    w.write_record([
        "seed",
        "detection_time",
        "isolation_time",
        "isolated",
        "escalation_time",
        "reconfiguration_time",
        "rms_surge",
        "rms_sway",
    ])
    .map_err(|e| csv_error(path, e))?;
    for (seed, s) in rows {
        let rms = |i: usize| opt_float(s.tracking_rms.as_ref().and_then(|r| r.get(i).copied()));
        w.write_record([
            seed.to_string(),
            opt_float(s.detection_time),
            opt_float(s.isolation_time),
            s.isolated
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            opt_float(s.escalation_time),
            opt_float(s.reconfiguration_time),
            rms(0),
            rms(1),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    finish(w, path)
}
