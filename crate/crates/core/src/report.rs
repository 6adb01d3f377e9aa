//! Speedup arithmetic and the tabular report rows.

use crate::engine::{total_cycles, EngineKind, LayerReport};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// `baseline / candidate` cycles. A candidate that takes zero cycles on a
/// zero-cycle baseline counts as 1.0.
pub fn speedup(candidate: u64, baseline: u64) -> f64 {
    if candidate == 0 {
        return if baseline == 0 { 1.0 } else { f64::INFINITY };
    }
    baseline as f64 / candidate as f64
}

/// Speedup of one engine's layer reports over another's on the same trace.
pub fn report_speedup(candidate: &[LayerReport], baseline: &[LayerReport]) -> f64 {
    speedup(total_cycles(candidate), total_cycles(baseline))
}

/// Geometric mean of positive ratios; `None` for an empty slice or any
/// non-positive entry.
pub fn geomean(ratios: &[f64]) -> Option<f64> {
    if ratios.is_empty() || ratios.iter().any(|&r| r.is_nan() || r <= 0.0) {
        return None;
    }
    let log_sum: f64 = ratios.iter().map(|r| r.ln()).sum();
    Some((log_sum / ratios.len() as f64).exp())
}

/// Rounds to the two decimals reports are printed with.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub const TOTAL_LAYER: &str = "TOTAL";
pub const GEOMEAN_NETWORK: &str = "GeoMean";

/// One row per (network, layer, engine), plus `TOTAL` rows per network and
/// engine and `GeoMean` rows across networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub network: String,
    pub layer: String,
    pub engine: EngineKind,
    /// Absent on `GeoMean` rows.
    pub cycles: Option<u64>,
    pub pallets: Option<u64>,
    pub vs_dadn: Option<f64>,
    pub vs_str: Option<f64>,
}

/// Results for one trace: layer reports keyed by engine.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetworkRun {
    pub network: String,
    pub engines: BTreeMap<EngineKind, Vec<LayerReport>>,
}

impl NetworkRun {
    pub fn total(&self, engine: EngineKind) -> Option<u64> {
        self.engines.get(&engine).map(|r| total_cycles(r))
    }

    pub fn vs(&self, engine: EngineKind, baseline: EngineKind) -> Option<f64> {
        Some(speedup(self.total(engine)?, self.total(baseline)?))
    }
}

pub fn build_rows(runs: &[NetworkRun]) -> Vec<Row> {
    let mut rows = Vec::new();
    for run in runs {
        for (&engine, reports) in &run.engines {
            for (i, r) in reports.iter().enumerate() {
                let per_engine = |b: EngineKind| {
                    let base = run.engines.get(&b)?.get(i)?;
                    Some(round2(speedup(r.total_cycles, base.total_cycles)))
                };
                rows.push(Row {
                    network: run.network.clone(),
                    layer: r.name.clone(),
                    engine,
                    cycles: Some(r.total_cycles),
                    pallets: Some(r.pallets),
                    vs_dadn: per_engine(EngineKind::BitParallel),
                    vs_str: per_engine(EngineKind::StripesPerLayer),
                });
            }
            rows.push(Row {
                network: run.network.clone(),
                layer: TOTAL_LAYER.into(),
                engine,
                cycles: Some(total_cycles(reports)),
                pallets: Some(reports.iter().map(|r| r.pallets).sum()),
                vs_dadn: run.vs(engine, EngineKind::BitParallel).map(round2),
                vs_str: run.vs(engine, EngineKind::StripesPerLayer).map(round2),
            });
        }
    }
    rows.extend(geomean_rows(&rows));
    rows
}

/// Geometric means of the `TOTAL` rows' speedups, per engine, across
/// networks.
pub fn geomean_rows(rows: &[Row]) -> Vec<Row> {
    let mut by_engine: BTreeMap<EngineKind, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows
        .iter()
        .filter(|r| r.layer == TOTAL_LAYER && r.network != GEOMEAN_NETWORK)
    {
        let e = by_engine.entry(r.engine).or_default();
        if let Some(v) = r.vs_dadn {
            e.0.push(v);
        }
        if let Some(v) = r.vs_str {
            e.1.push(v);
        }
    }
    by_engine
        .into_iter()
        .map(|(engine, (dadn, stripes))| Row {
            network: GEOMEAN_NETWORK.into(),
            layer: TOTAL_LAYER.into(),
            engine,
            cycles: None,
            pallets: None,
            vs_dadn: geomean(&dadn).map(round2),
            vs_str: geomean(&stripes).map(round2),
        })
        .collect()
}
