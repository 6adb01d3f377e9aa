//! Report documents and their CSV/JSON renderings.

use anyhow::{bail, Result};
use clap::ValueEnum;
use dynprec::report::{geomean_rows, Row, GEOMEAN_NETWORK};
use dynprec::{EngineKind, ShifterReach};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub subgroup_size: usize,
    /// `None` when each trace's own width was used.
    pub base_width: Option<u8>,
    pub shifter_reach: ShifterReach,
    pub engines: Vec<EngineKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceInfo {
    pub network: String,
    pub path: String,
    pub sha256: String,
    /// Profile path, or `envelope` for the trace's own per-layer envelope.
    pub profile: String,
    pub msp2_profile: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub settings: RunSettings,
    pub traces: Vec<TraceInfo>,
    pub rows: Vec<Row>,
}

pub const CSV_HEADER: [&str; 7] = [
    "network", "layer", "engine", "cycles", "pallets", "vs_dadn", "vs_str",
];

pub fn render(doc: &ReportDoc, format: Format) -> Result<String> {
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(doc)? + "\n"),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER)?;
            for r in &doc.rows {
                let int = |v: Option<u64>| v.map_or(String::new(), |v| v.to_string());
                let ratio = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.2}"));
                w.write_record([
                    r.network.clone(),
                    r.layer.clone(),
                    r.engine.to_string(),
                    int(r.cycles),
                    int(r.pallets),
                    ratio(r.vs_dadn),
                    ratio(r.vs_str),
                ])?;
            }
            Ok(String::from_utf8(w.into_inner()?)?)
        }
    }
}

/// Concatenates reports made with identical settings and recomputes the
/// geometric-mean rows over all their networks.
pub fn merge(docs: Vec<(&PathBuf, ReportDoc)>) -> Result<ReportDoc> {
    let mut iter = docs.into_iter();
    let Some((_, first)) = iter.next() else {
        bail!("no reports given");
    };
    let mut merged = first;
    merged.rows.retain(|r| r.network != GEOMEAN_NETWORK);
    for (path, doc) in iter {
        if doc.settings != merged.settings {
            bail!(
                "report `{}` was made with different settings ({:?} vs {:?})",
                path.display(),
                doc.settings,
                merged.settings
            );
        }
        for t in &doc.traces {
            if merged.traces.iter().any(|m| m.network == t.network) {
                bail!(
                    "report `{}` repeats network `{}`",
                    path.display(),
                    t.network
                );
            }
        }
        merged.traces.extend(doc.traces);
        merged.rows.extend(
            doc.rows
                .into_iter()
                .filter(|r| r.network != GEOMEAN_NETWORK),
        );
    }
    let means = geomean_rows(&merged.rows);
    merged.rows.extend(means);
    Ok(merged)
}
