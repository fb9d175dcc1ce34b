//! JSON scenario configuration and its translation into the core scenario types.

use std::path::PathBuf;

use imprint_core::defense::{DefenseConfig, Noise};
use imprint_core::imprint::Activation;
use imprint_core::measurement::{DataModel, MeasurementKind};
use imprint_core::model::FrontStage;
use imprint_core::pipeline::{
    AttackSpec, BinSpec, BridgeSpec, EvalSpec, FederationSpec, HeadSpec, Protocol, Scenario,
};
use serde::{Deserialize, Serialize};

use crate::dataio::{DatasetKind, DatasetSpec};

/// A validation failure at a dotted field path.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{path}: {msg}")]
pub struct ConfigError {
    pub path: String,
    pub msg: String,
}

fn fail<T>(path: &str, msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        path: path.into(),
        msg: msg.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FrontConfig {
    Identity,
    AvgPool(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImprintKind {
    Relu,
    HardThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BinsConfig {
    Layout {
        k: usize,
        #[serde(default = "default_p_min")]
        p_min: f64,
    },
    /// Mass of the fused bin; `one_over_n` sizes it for the batch.
    OneShot {
        #[serde(default)]
        mass: Option<f64>,
        #[serde(default)]
        start: Option<f64>,
    },
}

fn default_p_min() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasurementConfig {
    Mean,
    Dct(usize),
    RandomGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataModelConfig {
    Normal { mean: f64, sd: f64 },
    Laplace { location: f64, scale: f64 },
    /// Fit to measurements of `surrogate` fresh draws from the dataset source.
    Empirical { surrogate: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BridgeConfig {
    Sum,
    IdenticalRow(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum HeadConfig {
    Sink { gain: f64, bias: f64 },
    Gaussian { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub front: Vec<FrontConfig>,
    pub imprint: ImprintKind,
    pub bins: BinsConfig,
    #[serde(default)]
    pub decoys: usize,
    pub measurement: MeasurementConfig,
    pub data_model: DataModelConfig,
    pub c0: f64,
    #[serde(default = "default_bridge")]
    pub bridge: BridgeConfig,
    pub head: HeadConfig,
}

fn default_bridge() -> BridgeConfig {
    BridgeConfig::Sum
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolConfig {
    Fedsgd,
    Fedavg { steps: usize, lr: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    #[serde(default = "one")]
    pub users: usize,
    pub protocol: ProtocolConfig,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    None,
    Laplace(f64),
    Gaussian(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseSection {
    #[serde(default)]
    pub clip: Option<f64>,
    #[serde(default = "no_noise")]
    pub noise: NoiseConfig,
}

fn no_noise() -> NoiseConfig {
    NoiseConfig::None
}

impl Default for DefenseSection {
    fn default() -> Self {
        Self {
            clip: None,
            noise: NoiseConfig::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Distractor rows drawn from the dataset source for IIP (synthetic sources only).
    #[serde(default)]
    pub pool_size: usize,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_tau0")]
    pub tau0: f64,
    #[serde(default)]
    pub expected_n: Option<usize>,
}

fn default_rel_tol() -> f64 {
    1e-4
}

fn default_tau0() -> f64 {
    imprint_core::recovery::DEFAULT_TAU0
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            pool_size: 0,
            rel_tol: default_rel_tol(),
            tau0: default_tau0(),
            expected_n: None,
        }
    }
}

/// Pass/fail thresholds evaluated by `check`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    /// Every trial's exactly recovered bins equal its singleton bins.
    #[serde(default)]
    pub exact_equals_singletons: bool,
    #[serde(default)]
    pub min_mean_psnr_exact: Option<f64>,
    #[serde(default)]
    pub min_iip: Option<f64>,
    /// Allowed distance between one-shot success rate and its theoretical value.
    #[serde(default)]
    pub one_shot_tolerance: Option<f64>,
    /// Allowed distance between token accuracy and singleton fraction.
    #[serde(default)]
    pub token_tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    /// Independent repetitions, each on fresh data from the trial's stream.
    #[serde(default = "one")]
    pub trials: usize,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub federation: FederationConfig,
    #[serde(default)]
    pub defense: DefenseSection,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError {
            path: format!("line {} column {}", e.line(), e.column()),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical form: sorted keys, defaults filled in.
    pub fn canonical(&self) -> serde_json::Value {
        let v = serde_json::to_value(self).expect("config serializes");
        // Round trip through text to sort every map.
        serde_json::from_str(&v.to_string()).expect("valid json")
    }

    pub fn batch_size(&self) -> usize {
        match &self.dataset.kind {
            DatasetKind::SyntheticGaussian { n, .. } | DatasetKind::TokenSequences { n, .. } => *n,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.trials == 0 {
            return fail("trials", "must be >= 1");
        }
        if self.dataset.labels == 0 {
            return fail("dataset.labels", "must be >= 1");
        }
        match &self.dataset.kind {
            DatasetKind::SyntheticGaussian { m, n } => {
                if *m == 0 {
                    return fail("dataset.kind.synthetic_gaussian.m", "must be >= 1");
                }
                if *n == 0 {
                    return fail("dataset.kind.synthetic_gaussian.n", "must be >= 1");
                }
            }
            DatasetKind::TokenSequences {
                vocab, dim, seq_len, n, ..
            } => {
                if *vocab < 2 || *dim == 0 || *seq_len == 0 || *n == 0 {
                    return fail("dataset.kind.token_sequences", "vocab >= 2 and dim, seq_len, n >= 1 required");
                }
            }
            _ => {}
        }
        let m = &self.model;
        for (i, f) in m.front.iter().enumerate() {
            if let FrontConfig::AvgPool(0) = f {
                return fail(&format!("model.front[{i}].avg_pool"), "factor must be >= 1");
            }
        }
        if !(m.c0 > 0.0 && m.c0.is_finite()) {
            return fail("model.c0", "must be a positive finite number");
        }
        match m.bins {
            BinsConfig::Layout { k, p_min } => {
                if k < 2 {
                    return fail("model.bins.layout.k", "need at least 2 bins");
                }
                if !(p_min > 0.0 && p_min < 1.0 / k as f64) {
                    return fail("model.bins.layout.p_min", "must lie in (0, 1/k)");
                }
            }
            BinsConfig::OneShot { mass, start } => {
                if m.imprint != ImprintKind::Relu {
                    return fail("model.imprint", "one-shot bins require a relu imprint");
                }
                if let Some(p) = mass {
                    if !(p > 0.0 && p < 1.0) {
                        return fail("model.bins.one_shot.mass", "must lie in (0, 1)");
                    }
                }
                if let Some(s) = start {
                    if !(s > 0.0 && s < 1.0) {
                        return fail("model.bins.one_shot.start", "must lie in (0, 1)");
                    }
                }
            }
        }
        if m.decoys > 0 && m.imprint != ImprintKind::Relu {
            return fail("model.decoys", "decoy rows are only supported for relu imprints");
        }
        match m.data_model {
            DataModelConfig::Normal { sd, .. } if !(sd > 0.0) => return fail("model.data_model.normal.sd", "must be > 0"),
            DataModelConfig::Laplace { scale, .. } if !(scale > 0.0) => {
                return fail("model.data_model.laplace.scale", "must be > 0")
            }
            DataModelConfig::Empirical { surrogate } if surrogate < 2 => {
                return fail("model.data_model.empirical.surrogate", "need at least 2 surrogate rows")
            }
            _ => {}
        }
        if let BridgeConfig::IdenticalRow(0) = m.bridge {
            return fail("model.bridge.identical_row", "output dimension must be >= 1");
        }
        match m.head {
            HeadConfig::Sink { gain, bias } if !(gain.is_finite() && bias.is_finite()) => {
                return fail("model.head.sink", "gain and bias must be finite")
            }
            HeadConfig::Gaussian { scale } if !(scale > 0.0) => return fail("model.head.gaussian.scale", "must be > 0"),
            _ => {}
        }
        let f = &self.federation;
        if f.users == 0 {
            return fail("federation.users", "must be >= 1");
        }
        let n = self.batch_size();
        if n > 0 && n % f.users != 0 {
            return fail("federation.users", format!("{n} datapoints cannot be split evenly over {} users", f.users));
        }
        if let ProtocolConfig::Fedavg { steps, lr } = f.protocol {
            if steps == 0 {
                return fail("federation.protocol.fedavg.steps", "must be >= 1");
            }
            if !(lr > 0.0 && lr.is_finite()) {
                return fail("federation.protocol.fedavg.lr", "must be > 0");
            }
            if n > 0 && n / f.users < steps {
                return fail("federation.protocol.fedavg.steps", "more local steps than datapoints per user");
            }
        }
        if let Some(c) = self.defense.clip {
            if !(c > 0.0) {
                return fail("defense.clip", "must be > 0");
            }
        }
        match self.defense.noise {
            NoiseConfig::Laplace(s) | NoiseConfig::Gaussian(s) if !(s >= 0.0 && s.is_finite()) => {
                return fail("defense.noise", "scale must be >= 0")
            }
            _ => {}
        }
        if !(self.metrics.rel_tol > 0.0) {
            return fail("metrics.rel_tol", "must be > 0");
        }
        if !(self.metrics.tau0 >= 0.0) {
            return fail("metrics.tau0", "must be >= 0");
        }
        Ok(())
    }

    /// Core scenario for a batch of `n` points.
    pub fn scenario(&self, n: usize) -> Scenario {
        let m = &self.model;
        Scenario {
            attack: AttackSpec {
                activation: match m.imprint {
                    ImprintKind::Relu => Activation::Relu,
                    ImprintKind::HardThreshold => Activation::HardThreshold,
                },
                bins: match m.bins {
                    BinsConfig::Layout { k, p_min } => BinSpec::Layout { k, p_min },
                    BinsConfig::OneShot { mass, start } => BinSpec::OneShot {
                        mass: mass.unwrap_or(1.0 / n as f64),
                        start,
                    },
                },
                decoys: m.decoys,
                measurement: match m.measurement {
                    MeasurementConfig::Mean => MeasurementKind::Mean,
                    MeasurementConfig::Dct(freq) => MeasurementKind::Dct { freq },
                    MeasurementConfig::RandomGaussian => MeasurementKind::RandomGaussian,
                },
                data_model: match m.data_model {
                    DataModelConfig::Normal { mean, sd } => DataModel::Normal { mean, sd },
                    DataModelConfig::Laplace { location, scale } => DataModel::Laplace { location, scale },
                    DataModelConfig::Empirical { .. } => DataModel::Empirical,
                },
                c0: m.c0,
                front: m
                    .front
                    .iter()
                    .map(|f| match *f {
                        FrontConfig::Identity => FrontStage::Identity,
                        FrontConfig::AvgPool(k) => FrontStage::AvgPool(k),
                    })
                    .collect(),
                bridge: match m.bridge {
                    BridgeConfig::Sum => BridgeSpec::Sum,
                    BridgeConfig::IdenticalRow(out_dim) => BridgeSpec::IdenticalRow { out_dim },
                },
                head: match m.head {
                    HeadConfig::Sink { gain, bias } => HeadSpec::Sink { gain, bias },
                    HeadConfig::Gaussian { scale } => HeadSpec::Gaussian { scale },
                },
                labels: self.dataset.labels,
            },
            federation: FederationSpec {
                users: self.federation.users,
                protocol: match self.federation.protocol {
                    ProtocolConfig::Fedsgd => Protocol::FedSgd,
                    ProtocolConfig::Fedavg { steps, lr } => Protocol::FedAvg { steps, lr },
                },
            },
            defense: DefenseConfig {
                clip: self.defense.clip,
                noise: match self.defense.noise {
                    NoiseConfig::None => Noise::None,
                    NoiseConfig::Laplace(s) => Noise::Laplace(s),
                    NoiseConfig::Gaussian(s) => Noise::Gaussian(s),
                },
            },
            eval: EvalSpec {
                rel_tol: self.metrics.rel_tol,
                tau0: self.metrics.tau0,
                expected_n: self.metrics.expected_n,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "scenario": "t",
        "dataset": {"kind": {"synthetic_gaussian": {"m": 8, "n": 4}}},
        "model": {
            "imprint": "relu",
            "bins": {"layout": {"k": 8}},
            "measurement": "mean",
            "data_model": {"normal": {"mean": 0.0, "sd": 1.0}},
            "c0": 2.0,
            "head": {"sink": {"gain": 10.0, "bias": 30.0}}
        },
        "federation": {"protocol": "fedsgd"}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ScenarioConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.trials, 1);
        assert_eq!(cfg.federation.users, 1);
        assert_eq!(cfg.precision, Precision::F32);
        assert_eq!(cfg.metrics.rel_tol, 1e-4);
        let again = ScenarioConfig::from_json(&cfg.canonical().to_string()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn validation_reports_field_path() {
        let bad = MINIMAL.replace("\"c0\": 2.0", "\"c0\": -1.0");
        assert_eq!(ScenarioConfig::from_json(&bad).unwrap_err().path, "model.c0");
        let bad = MINIMAL.replace("\"k\": 8", "\"k\": 1");
        assert_eq!(ScenarioConfig::from_json(&bad).unwrap_err().path, "model.bins.layout.k");
        let bad = MINIMAL.replace("\"protocol\": \"fedsgd\"", "\"protocol\": \"fedsgd\", \"users\": 3");
        assert_eq!(ScenarioConfig::from_json(&bad).unwrap_err().path, "federation.users");
        let bad = MINIMAL.replace("\"scenario\"", "\"unknown\": 1, \"scenario\"");
        assert!(ScenarioConfig::from_json(&bad).unwrap_err().path.starts_with("line"));
    }
}
