//! Offline per-layer precision search.
//!
//! Two kinds of profile are produced: a fixed-point window `(n_high, n_low)`
//! per recorded layer, or a per-layer budget of most-significant set bits.
//! Both use the same greedy coordinate descent: sweep layers first to last,
//! tighten each by one step, keep the step if the network's decisions on the
//! eval batch still meet the target, and repeat until a sweep changes
//! nothing.

use crate::fixedpoint::MAX_WIDTH;
use crate::precdetect::precision_of_raw;
use crate::trace::net::{top1, ForwardOutput, NetError, Reduction, Tensor, TinyNet};
use crate::trace::ActivationTrace;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("profile re-evaluation reached accuracy {accuracy} below target {target}")]
    VerificationFailed { accuracy: f64, target: Target },
    #[error("invalid profile: {0}")]
    Invalid(String),
    #[error("cannot parse profile")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize profile")]
    Serialize(#[from] toml::ser::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerPrecision {
    pub n_high: u8,
    pub n_low: u8,
}

impl LayerPrecision {
    pub fn new(n_high: u8, n_low: u8) -> Result<Self, ProfileError> {
        if n_low > n_high || n_high >= MAX_WIDTH {
            return Err(ProfileError::Invalid(format!(
                "precision ({n_high}, {n_low}) is not a window inside 16 bits"
            )));
        }
        Ok(Self { n_high, n_low })
    }

    pub fn span(self) -> u32 {
        (self.n_high - self.n_low) as u32 + 1
    }

    fn reduction(self) -> Reduction {
        Reduction::window(self.n_high, self.n_low)
    }
}

/// What the reduced network must preserve relative to the unreduced one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// Minimum fraction of eval samples whose top-1 class is unchanged.
    Top1(f64),
    /// Every logit of every eval sample is bit-identical.
    ExactOutput,
}

impl Target {
    pub fn met_by(self, m: &Measurement) -> bool {
        match self {
            Target::Top1(r) => m.top1_agreement >= r,
            Target::ExactOutput => m.exact_fraction == 1.0,
        }
    }

    fn score(self, m: &Measurement) -> f64 {
        match self {
            Target::Top1(_) => m.top1_agreement,
            Target::ExactOutput => m.exact_fraction,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Top1(r) => write!(f, "{r}"),
            Target::ExactOutput => f.write_str("exact"),
        }
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("exact") {
            return Ok(Target::ExactOutput);
        }
        match s.parse::<f64>() {
            Ok(r) if (0.0..=1.0).contains(&r) => Ok(Target::Top1(r)),
            _ => Err(format!(
                "invalid target `{s}` (expected `exact` or a fraction in [0, 1])"
            )),
        }
    }
}

impl Serialize for Target {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Target {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub top1_agreement: f64,
    pub exact_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileMode {
    FixedPoint,
    Msp2,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_high: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_low: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub msp2_budget: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionProfile {
    pub mode: ProfileMode,
    pub target: Target,
    pub accuracy: f64,
    pub baseline_accuracy: f64,
    pub layers: Vec<LayerProfile>,
}

impl PrecisionProfile {
    pub fn precision_for(&self, layer: &str) -> Option<LayerPrecision> {
        let l = self.layers.iter().find(|l| l.name == layer)?;
        Some(LayerPrecision {
            n_high: l.n_high?,
            n_low: l.n_low?,
        })
    }

    pub fn budget_for(&self, layer: &str) -> Option<u32> {
        self.layers.iter().find(|l| l.name == layer)?.msp2_budget
    }

    pub fn precisions(&self) -> Vec<LayerPrecision> {
        self.layers
            .iter()
            .filter_map(|l| self.precision_for(&l.name))
            .collect()
    }

    pub fn budgets(&self) -> Vec<u32> {
        self.layers.iter().filter_map(|l| l.msp2_budget).collect()
    }

    /// Tight per-layer windows of a trace: `n_high` is the highest set bit in
    /// the layer, `n_low` the lowest. All-zero layers get `(0, 0)`.
    pub fn envelope(trace: &ActivationTrace) -> Self {
        let layers = trace
            .layers
            .iter()
            .map(|l| {
                let p = precision_of_raw(l.values.iter().copied());
                LayerProfile {
                    name: l.name.clone(),
                    n_high: Some(p.n_high),
                    n_low: Some(p.n_low),
                    msp2_budget: None,
                }
            })
            .collect();
        Self {
            mode: ProfileMode::FixedPoint,
            target: Target::ExactOutput,
            accuracy: 1.0,
            baseline_accuracy: 1.0,
            layers,
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        for l in &self.layers {
            match self.mode {
                ProfileMode::FixedPoint => match (l.n_high, l.n_low) {
                    (Some(h), Some(lo)) => {
                        LayerPrecision::new(h, lo)?;
                    }
                    _ => {
                        return Err(ProfileError::Invalid(format!(
                            "layer `{}` lacks n_high/n_low",
                            l.name
                        )))
                    }
                },
                ProfileMode::Msp2 => {
                    if l.msp2_budget.is_none() {
                        return Err(ProfileError::Invalid(format!(
                            "layer `{}` lacks msp2_budget",
                            l.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, ProfileError> {
        let p: Self = toml::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> Result<String, ProfileError> {
        Ok(toml::to_string(self)?)
    }
}

/// Baseline run of the network plus a way to score reduced runs against it.
struct Evaluator<'a> {
    net: &'a TinyNet,
    inputs: &'a Tensor,
    baseline: ForwardOutput,
    baseline_top1: Vec<usize>,
}

impl<'a> Evaluator<'a> {
    fn new(net: &'a TinyNet, inputs: &'a Tensor) -> Result<Self, NetError> {
        let baseline = net.forward(inputs, true, &[])?;
        let baseline_top1 = baseline.logits.iter().map(|l| top1(l)).collect();
        Ok(Self {
            net,
            inputs,
            baseline,
            baseline_top1,
        })
    }

    fn measure(&self, reductions: &[Reduction]) -> Result<Measurement, NetError> {
        let out = self.net.forward(self.inputs, true, reductions)?;
        let n = out.logits.len().max(1) as f64;
        let agree = out
            .logits
            .iter()
            .zip(&self.baseline_top1)
            .filter(|(l, &b)| top1(l) == b)
            .count();
        let exact = out
            .logits
            .iter()
            .zip(&self.baseline.logits)
            .filter(|(a, b)| a == b)
            .count();
        Ok(Measurement {
            top1_agreement: agree as f64 / n,
            exact_fraction: exact as f64 / n,
        })
    }
}

/// Greedy fixed-point window search.
pub fn profile_fixedpoint(
    net: &TinyNet,
    inputs: &Tensor,
    target: Target,
) -> Result<PrecisionProfile, ProfileError> {
    let eval = Evaluator::new(net, inputs)?;
    // Starting from each layer's envelope on the eval batch leaves every code
    // unchanged, so the start point always meets the target.
    let mut windows: Vec<LayerPrecision> = eval
        .baseline
        .recorded
        .iter()
        .map(|l| {
            let p = precision_of_raw(l.values.iter().copied());
            LayerPrecision {
                n_high: p.n_high,
                n_low: p.n_low,
            }
        })
        .collect();
    let reductions = |w: &[LayerPrecision]| w.iter().map(|p| p.reduction()).collect::<Vec<_>>();

    loop {
        let mut changed = false;
        for i in 0..windows.len() {
            for step in [Step::LowerHigh, Step::RaiseLow] {
                let current = windows[i];
                if current.span() == 1 {
                    break;
                }
                windows[i] = step.apply(current);
                if target.met_by(&eval.measure(&reductions(&windows))?) {
                    changed = true;
                } else {
                    windows[i] = current;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let accuracy = verify(net, inputs, target, &reductions(&windows))?;
    Ok(PrecisionProfile {
        mode: ProfileMode::FixedPoint,
        target,
        accuracy,
        baseline_accuracy: 1.0,
        layers: eval
            .baseline
            .recorded
            .iter()
            .zip(&windows)
            .map(|(l, p)| LayerProfile {
                name: l.name.clone(),
                n_high: Some(p.n_high),
                n_low: Some(p.n_low),
                msp2_budget: None,
            })
            .collect(),
    })
}

/// Greedy per-layer search for the number of most significant set bits to
/// keep. Budgets never drop below 1.
pub fn profile_msp2(
    net: &TinyNet,
    inputs: &Tensor,
    target: Target,
) -> Result<PrecisionProfile, ProfileError> {
    msp2_search(net, inputs, target, None)
}

/// Budget search over activations already reduced by a fixed-point profile,
/// the composition the essential-bit engine simulates when both profiles are
/// supplied. Each budget starts no higher than its layer's window span, since
/// a window-reduced code has at most that many set bits.
pub fn profile_msp2_over(
    net: &TinyNet,
    inputs: &Tensor,
    target: Target,
    base: &PrecisionProfile,
) -> Result<PrecisionProfile, ProfileError> {
    if base.mode != ProfileMode::FixedPoint {
        return Err(ProfileError::Invalid(
            "msp2 search needs a fixed-point base profile".into(),
        ));
    }
    msp2_search(net, inputs, target, Some(base))
}

fn msp2_search(
    net: &TinyNet,
    inputs: &Tensor,
    target: Target,
    base: Option<&PrecisionProfile>,
) -> Result<PrecisionProfile, ProfileError> {
    let windows: Vec<Reduction> = match base {
        Some(b) => reductions_for(net, b),
        None => vec![Reduction::NONE; net.recorded_layers().len()],
    };
    let eval = Evaluator::new(net, inputs)?;
    let start = net.forward(inputs, true, &windows)?;
    let mut budgets: Vec<u32> = start
        .recorded
        .iter()
        .map(|l| {
            l.values
                .iter()
                .map(|v| v.count_ones())
                .max()
                .unwrap_or(0)
                .max(1)
        })
        .collect();
    let reductions = |b: &[u32]| {
        windows
            .iter()
            .zip(b)
            .map(|(w, &n)| Reduction {
                msp2_budget: Some(n),
                ..*w
            })
            .collect::<Vec<_>>()
    };
    if !target.met_by(&eval.measure(&reductions(&budgets))?) {
        return Err(ProfileError::Invalid(format!(
            "base profile does not meet target {target}"
        )));
    }

    loop {
        let mut changed = false;
        for i in 0..budgets.len() {
            if budgets[i] <= 1 {
                continue;
            }
            budgets[i] -= 1;
            if target.met_by(&eval.measure(&reductions(&budgets))?) {
                changed = true;
            } else {
                budgets[i] += 1;
            }
        }
        if !changed {
            break;
        }
    }

    let accuracy = verify(net, inputs, target, &reductions(&budgets))?;
    Ok(PrecisionProfile {
        mode: ProfileMode::Msp2,
        target,
        accuracy,
        baseline_accuracy: 1.0,
        layers: start
            .recorded
            .iter()
            .zip(&budgets)
            .map(|(l, &b)| LayerProfile {
                name: l.name.clone(),
                n_high: None,
                n_low: None,
                msp2_budget: Some(b),
            })
            .collect(),
    })
}

/// Scores a set of per-layer reductions from a fresh baseline run.
pub fn measure(
    net: &TinyNet,
    inputs: &Tensor,
    reductions: &[Reduction],
) -> Result<Measurement, NetError> {
    Evaluator::new(net, inputs)?.measure(reductions)
}

/// Reductions a profile implies, in recorded-layer order.
pub fn reductions_for(net: &TinyNet, profile: &PrecisionProfile) -> Vec<Reduction> {
    match profile.mode {
        ProfileMode::FixedPoint => combined_reductions(net, Some(profile), None),
        ProfileMode::Msp2 => combined_reductions(net, None, Some(profile)),
    }
}

/// Window from `fixed` followed by the budget from `msp2`, per recorded layer.
pub fn combined_reductions(
    net: &TinyNet,
    fixed: Option<&PrecisionProfile>,
    msp2: Option<&PrecisionProfile>,
) -> Vec<Reduction> {
    net.recorded_layers()
        .iter()
        .map(|(name, _)| Reduction {
            window: fixed
                .and_then(|p| p.precision_for(name))
                .map(|p| (p.n_high, p.n_low)),
            msp2_budget: msp2.and_then(|p| p.budget_for(name)),
        })
        .collect()
}

fn verify(
    net: &TinyNet,
    inputs: &Tensor,
    target: Target,
    reductions: &[Reduction],
) -> Result<f64, ProfileError> {
    let m = measure(net, inputs, reductions)?;
    if target.met_by(&m) {
        Ok(target.score(&m))
    } else {
        Err(ProfileError::VerificationFailed {
            accuracy: target.score(&m),
            target,
        })
    }
}

#[derive(Clone, Copy)]
enum Step {
    LowerHigh,
    RaiseLow,
}

impl Step {
    fn apply(self, p: LayerPrecision) -> LayerPrecision {
        match self {
            Step::LowerHigh => LayerPrecision {
                n_high: p.n_high - 1,
                ..p
            },
            Step::RaiseLow => LayerPrecision {
                n_low: p.n_low + 1,
                ..p
            },
        }
    }
}
