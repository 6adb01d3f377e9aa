//! Synthetic traces with a controlled per-subgroup precision distribution.
//!
//! Spans are constructed, not sampled and hoped for: each subgroup draws a
//! span and a window position, then one lane gets the window's top bit and
//! another its bottom bit. Remaining lanes hold random bits inside the window,
//! so runtime detection on the emitted trace recovers the drawn span exactly.

use super::{ActivationTrace, TraceLayer};
use crate::fixedpoint::{QuantSpec, Rounding, MAX_WIDTH};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("infeasible synthetic spec: {0}")]
pub struct InfeasibleSpec(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanWeight {
    pub span: u8,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

fn default_subgroup() -> usize {
    16
}

fn default_width() -> u8 {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLayer {
    pub name: String,
    /// `(N, C, H, W)`.
    pub dims: [u32; 4],
    pub spans: Vec<SpanWeight>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(default = "default_width")]
    pub base_width: u8,
    #[serde(default = "default_subgroup")]
    pub subgroup_size: usize,
    #[serde(default)]
    pub seed: u64,
    pub layers: Vec<SyntheticLayer>,
}

impl SyntheticSpec {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// One layer per entry of `spans`, every subgroup of a layer at that span.
    pub fn uniform(spans: &[u8], activations: u32, seed: u64) -> Self {
        Self {
            base_width: 16,
            subgroup_size: 16,
            seed,
            layers: spans
                .iter()
                .enumerate()
                .map(|(i, &s)| SyntheticLayer {
                    name: format!("layer{i}"),
                    dims: [1, 1, 1, activations],
                    spans: vec![SpanWeight {
                        span: s,
                        weight: 1.0,
                    }],
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticTrace {
    pub trace: ActivationTrace,
    /// Per layer, the span constructed for each subgroup in dispatch order.
    pub subgroup_spans: Vec<Vec<u32>>,
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticTrace, InfeasibleSpec> {
    let infeasible = |m: String| Err(InfeasibleSpec(m));
    if !(1..=MAX_WIDTH).contains(&spec.base_width) {
        return infeasible(format!("base width {} outside 1..=16", spec.base_width));
    }
    if spec.subgroup_size == 0 {
        return infeasible("subgroup size must be non-zero".into());
    }
    let quant = QuantSpec::new(spec.base_width, 0, Rounding::Truncate).expect("width checked");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut subgroup_spans = Vec::with_capacity(spec.layers.len());

    for (layer_id, l) in spec.layers.iter().enumerate() {
        if l.spans.is_empty() {
            return infeasible(format!("layer `{}` has no spans", l.name));
        }
        if let Some(s) = l
            .spans
            .iter()
            .find(|s| s.span == 0 || s.span > spec.base_width)
        {
            return infeasible(format!(
                "layer `{}` span {} outside 1..={}",
                l.name, s.span, spec.base_width
            ));
        }
        let picker = WeightedIndex::new(l.spans.iter().map(|s| s.weight))
            .map_err(|e| InfeasibleSpec(format!("layer `{}` weights: {e}", l.name)))?;
        let count = l
            .dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| InfeasibleSpec(format!("layer `{}` is too large", l.name)))?;

        let mut values = Vec::with_capacity(count);
        let mut spans = Vec::with_capacity(count.div_ceil(spec.subgroup_size));
        while values.len() < count {
            let lanes = spec.subgroup_size.min(count - values.len());
            let span = l.spans[picker.sample(&mut rng)].span;
            let low = rng.random_range(0..=spec.base_width - span);
            let high = low + span - 1;
            let window = ((1u32 << (high + 1)) - (1u32 << low)) as u16;
            let start = values.len();
            values.extend((0..lanes).map(|_| rng.random::<u16>() & window));
            let hi_lane = rng.random_range(0..lanes);
            let lo_lane = if lanes > 1 {
                (hi_lane + rng.random_range(1..lanes)) % lanes
            } else {
                hi_lane
            };
            values[start + hi_lane] |= 1 << high;
            values[start + lo_lane] |= 1 << low;
            spans.push(span as u32);
        }
        layers.push(TraceLayer {
            layer_id: layer_id as u32,
            name: l.name.clone(),
            dims: l.dims,
            quant,
            values,
        });
        subgroup_spans.push(spans);
    }

    Ok(SyntheticTrace {
        trace: ActivationTrace {
            base_width: spec.base_width,
            layers,
        },
        subgroup_spans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precdetect::precision_of_raw;

    fn detected(t: &SyntheticTrace, subgroup: usize) -> Vec<Vec<u32>> {
        t.trace
            .layers
            .iter()
            .map(|l| {
                l.values
                    .chunks(subgroup)
                    .map(|g| precision_of_raw(g.iter().copied()).span())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn uniform_span_eight() {
        let t = gen_synthetic(&SyntheticSpec::uniform(&[8], 4096, 3)).unwrap();
        let d = detected(&t, 16);
        assert_eq!(d[0].len(), 256);
        assert!(d[0].iter().all(|&s| s == 8));
        assert_eq!(d, t.subgroup_spans);
    }

    #[test]
    fn mixed_distribution_is_reproduced_exactly() {
        let spec = SyntheticSpec {
            base_width: 12,
            subgroup_size: 16,
            seed: 99,
            layers: vec![SyntheticLayer {
                name: "mix".into(),
                dims: [2, 3, 5, 7],
                spans: vec![
                    SpanWeight {
                        span: 1,
                        weight: 1.0,
                    },
                    SpanWeight {
                        span: 5,
                        weight: 2.0,
                    },
                    SpanWeight {
                        span: 12,
                        weight: 0.5,
                    },
                ],
            }],
        };
        let t = gen_synthetic(&spec).unwrap();
        assert_eq!(t.trace.layers[0].values.len(), 210);
        assert_eq!(detected(&t, 16), t.subgroup_spans);
        assert!(t.trace.validate().is_ok());
        let seen: std::collections::BTreeSet<u32> = t.subgroup_spans[0].iter().copied().collect();
        assert_eq!(seen, [1, 5, 12].into_iter().collect());
    }

    #[test]
    fn single_lane_subgroups() {
        let spec = SyntheticSpec {
            subgroup_size: 1,
            ..SyntheticSpec::uniform(&[3], 64, 1)
        };
        let t = gen_synthetic(&spec).unwrap();
        assert_eq!(detected(&t, 1), t.subgroup_spans);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = gen_synthetic(&SyntheticSpec::uniform(&[4, 9], 1000, 5)).unwrap();
        let b = gen_synthetic(&SyntheticSpec::uniform(&[4, 9], 1000, 5)).unwrap();
        let c = gen_synthetic(&SyntheticSpec::uniform(&[4, 9], 1000, 6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.trace, c.trace);
    }

    #[test]
    fn infeasible_specs() {
        assert!(gen_synthetic(&SyntheticSpec::uniform(&[17], 16, 0)).is_err());
        assert!(gen_synthetic(&SyntheticSpec::uniform(&[0], 16, 0)).is_err());
        let mut s = SyntheticSpec::uniform(&[4], 16, 0);
        s.layers[0].spans[0].weight = 0.0;
        assert!(gen_synthetic(&s).is_err());
        let mut s = SyntheticSpec::uniform(&[4], 16, 0);
        s.subgroup_size = 0;
        assert!(gen_synthetic(&s).is_err());
        let mut s = SyntheticSpec::uniform(&[4], 16, 0);
        s.base_width = 8;
        s.layers[0].spans[0].span = 9;
        assert!(gen_synthetic(&s).is_err());
    }
}
