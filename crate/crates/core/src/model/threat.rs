use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{Bound, HyperRectangle, Interval};

/// How one feature may be perturbed: add any `δ ∈ [delta_l, delta_r]` at `cost`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureAttack {
    pub delta_l: f64,
    pub delta_r: f64,
    pub cost: u32,
}

impl FeatureAttack {
    pub fn new(delta_l: f64, delta_r: f64, cost: u32) -> Self {
        FeatureAttack {
            delta_l,
            delta_r,
            cost,
        }
    }

    /// `[0,0]`: the feature cannot be manipulated.
    pub fn robust() -> Self {
        FeatureAttack::new(0.0, 0.0, 1)
    }

    /// The perturbation interval; closed at finite ends.
    pub fn interval(&self) -> Interval {
        Interval::new(Bound::closed(self.delta_l), Bound::closed(self.delta_r))
    }
}

/// A budgeted attacker: per-feature perturbation intervals and costs, and a
/// total budget bounding the summed cost of the perturbed features.
#[derive(Clone, Debug, PartialEq)]
pub struct ThreatModel {
    features: Vec<FeatureAttack>,
    budget: u32,
    attack_box: HyperRectangle,
}

impl ThreatModel {
    pub fn new(features: Vec<FeatureAttack>, budget: u32) -> Result<Self> {
        for (f, a) in features.iter().enumerate() {
            if a.delta_l.is_nan() || a.delta_r.is_nan() {
                return Err(Error::InvalidThreat(format!("feature {f}: NaN perturbation bound")));
            }
            if !(a.delta_l <= 0.0 && 0.0 <= a.delta_r) {
                return Err(Error::InvalidThreat(format!(
                    "feature {f}: perturbation interval [{}, {}] must contain 0",
                    a.delta_l, a.delta_r
                )));
            }
            // A free feature would let a crossing keep cost 0, and cost-0
            // attacks are assumed to leave the instance unchanged.
            if a.cost == 0 {
                return Err(Error::InvalidThreat(format!("feature {f}: cost must be at least 1")));
            }
        }
        let attack_box = HyperRectangle::new(features.iter().map(FeatureAttack::interval).collect());
        Ok(ThreatModel {
            features,
            budget,
            attack_box,
        })
    }

    /// Every feature perturbable within `[-delta, +delta]` at cost 1.
    pub fn uniform(d: usize, delta: f64, budget: u32) -> Result<Self> {
        ThreatModel::new(vec![FeatureAttack::new(-delta, delta, 1); d], budget)
    }

    /// `L∞` attacker of radius `delta`: every feature may move, budget `d`.
    pub fn linf(d: usize, delta: f64) -> Result<Self> {
        ThreatModel::uniform(d, delta, d as u32)
    }

    /// `L0` attacker: up to `k` features may take arbitrary values.
    pub fn l0(d: usize, k: u32) -> Result<Self> {
        ThreatModel::new(
            vec![FeatureAttack::new(f64::NEG_INFINITY, f64::INFINITY, 1); d],
            k,
        )
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn budget(&self) -> u32 {
        self.budget
    }

    pub fn features(&self) -> &[FeatureAttack] {
        &self.features
    }

    pub fn feature(&self, f: usize) -> &FeatureAttack {
        &self.features[f]
    }

    /// `⟨I_atk_1, …, I_atk_d⟩`
    pub fn attack_box(&self) -> &HyperRectangle {
        &self.attack_box
    }

    /// Same attacker with a different budget.
    pub fn with_budget(&self, budget: u32) -> Self {
        ThreatModel {
            budget,
            ..self.clone()
        }
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        if self.dim() == d {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: d,
                found: self.dim(),
            })
        }
    }
}

// JSON: {"budget": 1, "features": [{"interval": [-1, 1], "cost": 1}, ...]}.
// Infinite ends are written as the strings "-inf" / "+inf".

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureJson {
    interval: [JsonBound; 2],
    cost: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThreatJson {
    budget: u32,
    features: Vec<FeatureJson>,
}

#[derive(Clone, Copy)]
struct JsonBound(f64);

impl Serialize for JsonBound {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("+inf")
        } else if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for JsonBound {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(JsonBound(v)),
            Raw::Text(t) => match t.as_str() {
                "-inf" => Ok(JsonBound(f64::NEG_INFINITY)),
                "+inf" | "inf" => Ok(JsonBound(f64::INFINITY)),
                _ => Err(serde::de::Error::custom(format!(
                    "expected a number, \"-inf\" or \"+inf\", got {t:?}"
                ))),
            },
        }
    }
}

impl Serialize for ThreatModel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ThreatJson {
            budget: self.budget,
            features: self
                .features
                .iter()
                .map(|a| FeatureJson {
                    interval: [JsonBound(a.delta_l), JsonBound(a.delta_r)],
                    cost: a.cost,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ThreatModel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = ThreatJson::deserialize(d)?;
        let features = raw
            .features
            .into_iter()
            .map(|f| FeatureAttack::new(f.interval[0].0, f.interval[1].0, f.cost))
            .collect();
        ThreatModel::new(features, raw.budget).map_err(serde::de::Error::custom)
    }
}
