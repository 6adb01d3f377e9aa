//! Cycle models for the four execution engines.
//!
//! A layer's activations are dispatched in trace order, `pallet_size` at a
//! time. Each pallet is split into subgroups of `subgroup_size` lanes that
//! share one detected precision. All subgroups of a pallet must finish before
//! the next pallet is broadcast, so a pallet costs as much as its slowest
//! subgroup.

mod schedule;
mod sip;

pub use schedule::greedy_limited_schedule;
pub use sip::{sip_reference, SipState};

use crate::fixedpoint::{self, FixedValue, MAX_WIDTH};
use crate::precdetect::{self, GroupPrecision};
use crate::profiler::{LayerPrecision, PrecisionProfile};
use crate::trace::{ActivationTrace, TraceLayer};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("layer `{layer}` needs a {what} profile entry for the {engine} engine")]
    MissingProfile {
        layer: String,
        engine: EngineKind,
        what: &'static str,
    },
    #[error("invalid architecture: {0}")]
    InvalidConfig(String),
    #[error("layer `{layer}` holds value {value} which needs more than {base_width} bits")]
    ValueTooWide {
        layer: String,
        value: u16,
        base_width: u8,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EngineKind {
    /// Full-width bit-parallel baseline.
    BitParallel,
    /// Bit-serial with a per-layer precision from a profile.
    StripesPerLayer,
    /// Bit-serial with precision detected per subgroup at runtime.
    DynamicStripes,
    /// Bit-serial over set bits only.
    EssentialBits,
}

impl EngineKind {
    pub const ALL: [EngineKind; 4] = [
        EngineKind::BitParallel,
        EngineKind::StripesPerLayer,
        EngineKind::DynamicStripes,
        EngineKind::EssentialBits,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            EngineKind::BitParallel => "dadn",
            EngineKind::StripesPerLayer => "stripes",
            EngineKind::DynamicStripes => "dynamic",
            EngineKind::EssentialBits => "essential",
        }
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for EngineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "dadn" | "bit-parallel" | "bitparallel" => Ok(EngineKind::BitParallel),
            "stripes" | "str" | "per-layer" => Ok(EngineKind::StripesPerLayer),
            "dynamic" | "dynamic-stripes" => Ok(EngineKind::DynamicStripes),
            "essential" | "pragmatic" | "essential-bits" => Ok(EngineKind::EssentialBits),
            other => Err(format!(
                "unknown engine `{other}` (expected dadn, stripes, dynamic or essential)"
            )),
        }
    }
}

/// How far each essential-bit lane can shift relative to the shared column
/// offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShifterReach {
    #[default]
    Full,
    /// A `k`-bit shifter covers `2^k` positions below the column offset.
    Limited(u8),
}

impl FromStr for ShifterReach {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(ShifterReach::Full);
        }
        match s.parse::<u8>() {
            Ok(k) if (1..=4).contains(&k) => Ok(ShifterReach::Limited(k)),
            _ => Err(format!(
                "invalid shifter reach `{s}` (expected `full` or 1..=4)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Msp2Source {
    #[default]
    None,
    Profile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub kind: EngineKind,
    pub tiles: usize,
    pub filters_per_tile: usize,
    pub weights_per_filter: usize,
    /// Activations broadcast concurrently.
    pub pallet_size: usize,
    /// Activations sharing one detected precision.
    pub subgroup_size: usize,
    pub base_width: u8,
    pub shifter_reach: ShifterReach,
    pub msp2_budget_source: Msp2Source,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            kind: EngineKind::DynamicStripes,
            tiles: 16,
            filters_per_tile: 16,
            weights_per_filter: 16,
            pallet_size: 256,
            subgroup_size: 16,
            base_width: 16,
            shifter_reach: ShifterReach::Full,
            msp2_budget_source: Msp2Source::None,
        }
    }
}

impl ArchConfig {
    pub fn new(kind: EngineKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn with_kind(mut self, kind: EngineKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::InvalidConfig(m));
        if self.tiles == 0 || self.filters_per_tile == 0 || self.weights_per_filter == 0 {
            return bad("tile geometry must be non-zero".into());
        }
        if self.pallet_size == 0 || self.subgroup_size == 0 {
            return bad("pallet and subgroup sizes must be non-zero".into());
        }
        if !self.pallet_size.is_multiple_of(self.subgroup_size) {
            return bad(format!(
                "subgroup size {} does not divide pallet size {}",
                self.subgroup_size, self.pallet_size
            ));
        }
        if !(1..=MAX_WIDTH).contains(&self.base_width) {
            return bad(format!("base width {} outside 1..=16", self.base_width));
        }
        if let ShifterReach::Limited(k) = self.shifter_reach {
            if !(1..=4).contains(&k) {
                return bad(format!("shifter reach {k} outside 1..=4"));
            }
        }
        Ok(())
    }

    pub fn subgroups_per_pallet(&self) -> usize {
        self.pallet_size / self.subgroup_size
    }
}

/// One broadcast of `pallet_size` activations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pallet {
    pub layer_id: u32,
    pub index: usize,
    pub values: Vec<FixedValue>,
    /// Trailing zero entries added to fill a short final pallet.
    pub padding: usize,
}

impl Pallet {
    pub fn subgroups<'a>(&'a self, cfg: &ArchConfig) -> impl Iterator<Item = &'a [FixedValue]> {
        self.values.chunks(cfg.subgroup_size)
    }
}

/// Splits a layer into pallets in dispatch order, zero-padding the last one.
pub fn pallets<'a>(
    layer: &'a TraceLayer,
    cfg: &'a ArchConfig,
) -> impl Iterator<Item = Pallet> + 'a {
    layer
        .values
        .chunks(cfg.pallet_size)
        .enumerate()
        .map(move |(index, chunk)| {
            let padding = cfg.pallet_size - chunk.len();
            let values = chunk
                .iter()
                .map(|&raw| {
                    FixedValue::new(raw as u32, cfg.base_width)
                        .expect("layer values are validated against the base width")
                })
                .chain(std::iter::repeat_n(
                    FixedValue::zero(cfg.base_width),
                    padding,
                ))
                .collect();
            Pallet {
                layer_id: layer.layer_id,
                index,
                values,
                padding,
            }
        })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleResult {
    pub cycles: u64,
    /// Cycles each subgroup would need on its own.
    pub subgroup_spans: Vec<u32>,
}

impl CycleResult {
    fn from_subgroups(subgroup_spans: Vec<u32>) -> Self {
        let cycles = subgroup_spans.iter().copied().max().unwrap_or(1).max(1) as u64;
        Self {
            cycles,
            subgroup_spans,
        }
    }
}

pub fn pallet_cycles_bitparallel(p: &Pallet, cfg: &ArchConfig) -> CycleResult {
    let n = p.subgroups(cfg).count();
    CycleResult::from_subgroups(vec![cfg.base_width as u32; n])
}

pub fn pallet_cycles_stripes(
    p: &Pallet,
    cfg: &ArchConfig,
    layer_precision: LayerPrecision,
) -> CycleResult {
    let n = p.subgroups(cfg).count();
    CycleResult::from_subgroups(vec![layer_precision.span(); n])
}

pub fn pallet_cycles_dynamic(p: &Pallet, cfg: &ArchConfig) -> CycleResult {
    let spans = p
        .subgroups(cfg)
        .map(|g| precdetect::precision_of_raw(g.iter().map(|v| v.raw())).span())
        .collect();
    CycleResult::from_subgroups(spans)
}

pub fn pallet_cycles_essential(
    p: &Pallet,
    cfg: &ArchConfig,
    msp2_budget: Option<u32>,
) -> CycleResult {
    let mut lanes = Vec::with_capacity(cfg.subgroup_size);
    let spans = p
        .subgroups(cfg)
        .map(|g| {
            lanes.clear();
            lanes.extend(g.iter().map(|&v| match msp2_budget {
                Some(b) => fixedpoint::msp2_truncate(v, b).raw(),
                None => v.raw(),
            }));
            essential_subgroup_cycles(&lanes, cfg.shifter_reach)
        })
        .collect();
    CycleResult::from_subgroups(spans)
}

/// Cycles for one subgroup of lanes on the essential-bit engine.
pub fn essential_subgroup_cycles(lanes: &[u16], reach: ShifterReach) -> u32 {
    match reach {
        ShifterReach::Full => lanes
            .iter()
            .map(|v| v.count_ones())
            .max()
            .unwrap_or(0)
            .max(1),
        ShifterReach::Limited(k) => greedy_limited_schedule(lanes, k),
    }
}

/// Per-layer profile data the engines may need.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LayerInputs {
    /// Per-layer fixed-point window. When present, activations are reduced to
    /// it before any engine sees them.
    pub precision: Option<LayerPrecision>,
    pub msp2_budget: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer_id: u32,
    pub name: String,
    pub engine: EngineKind,
    pub total_cycles: u64,
    pub pallets: u64,
    pub padded_pallets: u64,
    /// `span_histogram[s]` counts subgroups needing `s` cycles.
    pub span_histogram: Vec<u64>,
}

pub fn simulate_layer(
    layer: &TraceLayer,
    cfg: &ArchConfig,
    inputs: LayerInputs,
) -> Result<LayerReport, EngineError> {
    cfg.validate()?;
    let limit = (1u32 << cfg.base_width) - 1;
    if let Some(&value) = layer.values.iter().find(|&&v| v as u32 > limit) {
        return Err(EngineError::ValueTooWide {
            layer: layer.name.clone(),
            value,
            base_width: cfg.base_width,
        });
    }
    let missing = |what| EngineError::MissingProfile {
        layer: layer.name.clone(),
        engine: cfg.kind,
        what,
    };
    let stripes_precision = match cfg.kind {
        EngineKind::StripesPerLayer => {
            Some(inputs.precision.ok_or_else(|| missing("fixed-point"))?)
        }
        _ => None,
    };
    let budget = match (cfg.kind, cfg.msp2_budget_source) {
        (EngineKind::EssentialBits, Msp2Source::Profile) => {
            Some(inputs.msp2_budget.ok_or_else(|| missing("msp2"))?)
        }
        _ => None,
    };

    let reduced;
    let layer = match inputs.precision {
        Some(p) if p.n_high < cfg.base_width => {
            reduced = layer.map_values(|v| {
                fixedpoint::reduce_to_window(
                    FixedValue::new(v as u32, cfg.base_width).expect("checked above"),
                    p.n_high,
                    p.n_low,
                )
                .raw()
            });
            &reduced
        }
        Some(p) => {
            return Err(EngineError::InvalidConfig(format!(
                "layer `{}` precision ({}, {}) exceeds base width {}",
                layer.name, p.n_high, p.n_low, cfg.base_width
            )))
        }
        None => layer,
    };

    let mut report = LayerReport {
        layer_id: layer.layer_id,
        name: layer.name.clone(),
        engine: cfg.kind,
        total_cycles: 0,
        pallets: 0,
        padded_pallets: 0,
        span_histogram: vec![0; cfg.base_width as usize + 1],
    };
    for pallet in pallets(layer, cfg) {
        let result = match cfg.kind {
            EngineKind::BitParallel => pallet_cycles_bitparallel(&pallet, cfg),
            EngineKind::StripesPerLayer => {
                pallet_cycles_stripes(&pallet, cfg, stripes_precision.expect("resolved above"))
            }
            EngineKind::DynamicStripes => pallet_cycles_dynamic(&pallet, cfg),
            EngineKind::EssentialBits => pallet_cycles_essential(&pallet, cfg, budget),
        };
        report.total_cycles += result.cycles;
        report.pallets += 1;
        report.padded_pallets += (pallet.padding > 0) as u64;
        for s in result.subgroup_spans {
            report.span_histogram[s as usize] += 1;
        }
    }
    Ok(report)
}

/// Looks up each layer's profile entries by name and simulates all layers.
pub fn simulate_trace(
    trace: &ActivationTrace,
    cfg: &ArchConfig,
    fixed: Option<&PrecisionProfile>,
    msp2: Option<&PrecisionProfile>,
) -> Result<Vec<LayerReport>, EngineError> {
    trace
        .layers
        .par_iter()
        .map(|layer| {
            let inputs = LayerInputs {
                precision: fixed.and_then(|p| p.precision_for(&layer.name)),
                msp2_budget: msp2.and_then(|p| p.budget_for(&layer.name)),
            };
            simulate_layer(layer, cfg, inputs)
        })
        .collect()
}

pub fn total_cycles(reports: &[LayerReport]) -> u64 {
    reports.iter().map(|r| r.total_cycles).sum()
}

/// Tight per-layer window (max MSB, min LSB) of a layer's values.
pub fn layer_envelope(layer: &TraceLayer) -> GroupPrecision {
    precdetect::precision_of_raw(layer.values.iter().copied())
}
