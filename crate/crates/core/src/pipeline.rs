//! One attack scenario end to end, in memory: plant the imprint, simulate the round,
//! apply the defense, invert, and score against the features the imprint saw.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::defense::{apply_defense, DefenseConfig};
use crate::federation::{even_split, fed_avg, fed_sgd, secure_aggregate, UserState};
use crate::imprint::{build_hard_threshold, build_relu, fuse_one_shot, make_layout, Activation, ImprintModule};
use crate::measurement::{assumed_distribution, DataModel, Measurement, MeasurementKind};
use crate::metrics::{score, ScoreReport};
use crate::model::{forward_features, Batch, Bridge, FrontStage, Head, ModelGraph};
use crate::numerics::{Real, RngStream, Tensor};
use crate::recovery::{recover, select_candidates, AttackMetadata, Normalization, RecoveredCandidate, DEFAULT_TAU0};
use crate::theory::{recovery_expectation, RecoveryExpectation};
use crate::{Error, Result};

/// Fixed stream ids under the master seed.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const LABELS: u64 = 2;
    pub const MEASUREMENT: u64 = 3;
    pub const PERMUTATION: u64 = 4;
    pub const HEAD: u64 = 5;
    pub const BRIDGE: u64 = 6;
    pub const DEFENSE: u64 = 7;
    pub const POOL: u64 = 8;
    pub const EMBEDDING: u64 = 9;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinSpec {
    /// `k` equal-mass bins, the first boundary at probability `p_min`.
    Layout { k: usize, p_min: f64 },
    /// Two fused ReLU rows isolating one interval of the given mass.
    OneShot { mass: f64, start: Option<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BridgeSpec {
    Sum,
    IdenticalRow { out_dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadSpec {
    Sink { gain: f64, bias: f64 },
    Gaussian { scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub activation: Activation,
    pub bins: BinSpec,
    pub decoys: usize,
    pub measurement: MeasurementKind,
    pub data_model: DataModel,
    pub c0: f64,
    pub front: Vec<FrontStage>,
    pub bridge: BridgeSpec,
    pub head: HeadSpec,
    pub labels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Protocol {
    FedSgd,
    /// `steps` local SGD steps over equal consecutive sub-batches.
    FedAvg { steps: usize, lr: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FederationSpec {
    /// Users receive equal consecutive shares of the batch.
    pub users: usize,
    pub protocol: Protocol,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSpec {
    pub rel_tol: f64,
    pub tau0: f64,
    /// Number of candidates kept; defaults to the batch size.
    pub expected_n: Option<usize>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            rel_tol: 1e-4,
            tau0: DEFAULT_TAU0,
            expected_n: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub attack: AttackSpec,
    pub federation: FederationSpec,
    pub defense: DefenseConfig,
    pub eval: EvalSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome<T> {
    pub model: ModelGraph<T>,
    pub module: ImprintModule<T>,
    /// Features seen by the imprint layer, the recovery target.
    pub truth: Tensor<T>,
    pub candidates: Vec<RecoveredCandidate<T>>,
    pub emitted: usize,
    pub score: ScoreReport,
    /// Datapoints per bin by direct binning of the measurement.
    pub occupancy: Vec<usize>,
    pub singleton_bins: Vec<usize>,
    /// Bins whose selected candidate matched a truth row within `rel_tol`.
    pub exact_bins: Vec<usize>,
    pub expectation: RecoveryExpectation,
}

impl<T: Real> Outcome<T> {
    pub fn singleton_fraction(&self) -> f64 {
        self.singleton_bins.len() as f64 / self.truth_rows() as f64
    }

    fn truth_rows(&self) -> usize {
        self.truth.shape().first().copied().unwrap_or(0)
    }
}

/// Build the malicious model for inputs of length `raw_len`.
pub fn build_attack<T: Real>(
    spec: &AttackSpec,
    raw_len: usize,
    surrogate: Option<&Tensor<T>>,
    seed: u64,
) -> Result<(ModelGraph<T>, ImprintModule<T>)> {
    let mut m = raw_len;
    for s in &spec.front {
        m = s.output_len(m)?;
    }
    let h = Measurement::build(spec.measurement, m, spec.c0, RngStream::new(seed, streams::MEASUREMENT))?;
    let surrogate_features = match surrogate {
        Some(x) => {
            let probe = ModelGraph::<T> {
                front: spec.front.clone(),
                imprint: None,
                bridge: Bridge::Sum,
                head: Head::sink(m, 1, 0.0, 0.0),
            };
            Some(forward_features(&probe, &Batch::new(x.clone(), None)?)?)
        }
        None => None,
    };
    let dist = assumed_distribution(&h, &spec.data_model, surrogate_features.as_ref())?;
    let perm_seed = Some(RngStream::new(seed, streams::PERMUTATION).sampler().next_u64());
    let module = match (spec.bins, spec.activation) {
        (BinSpec::Layout { k, p_min }, Activation::Relu) => {
            build_relu(&make_layout(&dist, k, p_min)?, &h, spec.decoys, perm_seed)?
        }
        (BinSpec::Layout { k, p_min }, Activation::HardThreshold) => {
            if spec.decoys > 0 {
                return Err(Error::InvalidArgument("decoy rows are only supported for ReLU imprints".into()));
            }
            build_hard_threshold(&make_layout(&dist, k, p_min)?, &h, perm_seed)?
        }
        (BinSpec::OneShot { mass, start }, Activation::Relu) => fuse_one_shot(&dist, &h, mass, start)?,
        (BinSpec::OneShot { .. }, Activation::HardThreshold) => {
            return Err(Error::InvalidArgument("one-shot fusion uses a ReLU imprint".into()))
        }
    };
    let bridge = match spec.bridge {
        BridgeSpec::Sum => Bridge::Sum,
        BridgeSpec::IdenticalRow { out_dim } => Bridge::identical_row(out_dim, RngStream::new(seed, streams::BRIDGE)),
    };
    let head_in = bridge.out_dim();
    let head = match spec.head {
        HeadSpec::Sink { gain, bias } => Head::sink(head_in, spec.labels, gain, bias),
        HeadSpec::Gaussian { scale } => Head::gaussian(head_in, spec.labels, scale, RngStream::new(seed, streams::HEAD)),
    };
    let model = ModelGraph::new(spec.front.clone(), Some((&module).into()), bridge, head)?;
    Ok((model, module))
}

/// Run the scenario on `data`. `pool` holds distractors in feature space (may have zero
/// rows).
pub fn run_attack<T: Real>(
    scenario: &Scenario,
    data: &Batch<T>,
    surrogate: Option<&Tensor<T>>,
    pool: &Tensor<T>,
    seed: u64,
) -> Result<Outcome<T>> {
    let n = data.len();
    let fed = &scenario.federation;
    if fed.users == 0 || n % fed.users != 0 {
        return Err(Error::InvalidArgument(format!(
            "{n} datapoints cannot be split evenly over {} users",
            fed.users
        )));
    }
    let (model, module) = build_attack(&scenario.attack, data.x.cols(), surrogate, seed)?;
    let share = n / fed.users;
    let defense_stream = RngStream::new(seed, streams::DEFENSE);
    let mut payloads = Vec::with_capacity(fed.users);
    for u in 0..fed.users {
        let local = data.slice(u * share, (u + 1) * share)?;
        let payload = match fed.protocol {
            Protocol::FedSgd => fed_sgd(&model, &UserState::new(local, 1.0, 1)?)?,
            Protocol::FedAvg { steps, lr } => {
                fed_avg(&model, &UserState::new(local, lr, steps)?, &even_split(share, steps))?
            }
        };
        payloads.push(apply_defense(&payload, &scenario.defense, defense_stream.derive(u as u64))?);
    }
    let payload = secure_aggregate(&payloads, false)?.mean_over_users();

    let expected_n = scenario.eval.expected_n.unwrap_or(n);
    let meta = AttackMetadata {
        module: module.clone(),
        expected_n,
        normalization: Normalization::Mean,
        tau0: scenario.eval.tau0,
    };
    let all = recover(&payload, &meta)?;
    let emitted = all.len();
    let candidates = select_candidates(&all, expected_n);

    let truth = forward_features(&model, data)?;
    let h = &module.measurement;
    let bins = match scenario.attack.bins {
        BinSpec::Layout { k, .. } => k,
        BinSpec::OneShot { .. } => 1,
    };
    let mut occupancy = vec![0usize; bins];
    for t in 0..n {
        if let Some(b) = module.bin_of(h.measure_f64(truth.row(t))) {
            occupancy[b] += 1;
        }
    }
    let singleton_bins = (0..bins).filter(|&b| occupancy[b] == 1).collect();

    let vectors: Vec<Tensor<T>> = candidates.iter().map(|c| c.vector.clone()).collect();
    let pool = if pool.is_empty() {
        Tensor::zeros(&[0, truth.cols()])
    } else {
        pool.clone()
    };
    let report = score(&vectors, &truth, &pool, scenario.eval.rel_tol)?;
    let mut exact_bins: Vec<usize> = report
        .per_sample
        .iter()
        .filter(|s| s.exact)
        .map(|s| candidates[s.candidate].bin)
        .collect();
    exact_bins.sort_unstable();
    Ok(Outcome {
        model,
        module,
        truth,
        candidates,
        emitted,
        score: report,
        occupancy,
        singleton_bins,
        exact_bins,
        expectation: recovery_expectation(n, bins),
    })
}
