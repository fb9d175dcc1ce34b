//! Scenario execution: single runs, parameter sweeps, sizing tables and bundled checks.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use imprint_core::model::{forward_features, Batch, Bridge, Head, ModelGraph};
use imprint_core::pipeline::{run_attack, streams, Outcome};
use imprint_core::recovery::{default_decoding_radius, token_lookup};
use imprint_core::theory::{iid_expectation, iid_monte_carlo, one_shot_success, overhead, prop1_closed_form};
use imprint_core::{Real, RngStream, Tensor};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{BinsConfig, DataModelConfig, FrontConfig, NoiseConfig, Precision, ScenarioConfig};
use crate::dataio::{self, Dataset, DatasetKind, DatasetSpec};

/// Stream for the iid Monte Carlo estimate printed next to the theory values.
const THEORY_STREAM: u64 = 10;
const MONTE_CARLO_REPLICATES: usize = 2000;

/// Master seed of trial `t`. Trials are independent runs with consecutive seeds, so a
/// sweep evaluates every point on the same data.
pub fn trial_seed(seed: u64, t: usize) -> u64 {
    seed.wrapping_add(t as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialStats {
    pub trial: usize,
    pub seed: u64,
    pub n: usize,
    pub bins: usize,
    /// Candidates produced before selection.
    pub emitted: usize,
    pub selected: usize,
    pub exact_count: usize,
    pub singleton_count: usize,
    /// Bins whose candidate matched its datapoint within the tolerance.
    pub exact_bins: Vec<usize>,
    pub exact_equals_singletons: bool,
    pub singleton_fraction: f64,
    pub mean_psnr: f64,
    pub mean_psnr_exact: f64,
    pub iip: f64,
    pub max_rel_err_exact: Option<f64>,
    pub token_accuracy: Option<f64>,
    pub occupancy: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub trials: usize,
    pub mean_exact_fraction: f64,
    pub mean_singleton_fraction: f64,
    pub mean_psnr: f64,
    /// Mean over trials that recovered at least one point exactly.
    pub mean_psnr_exact: f64,
    pub mean_iip: f64,
    /// Trials with at least one exact recovery.
    pub success_rate: f64,
    pub all_exact_equal_singletons: bool,
    pub mean_token_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theory {
    pub n: usize,
    pub bins: usize,
    pub closed_form: Option<f64>,
    pub closed_form_error: Option<String>,
    pub iid: f64,
    pub iid_monte_carlo: f64,
    pub iid_monte_carlo_stderr: f64,
    /// Probability that a single bin of the configured mass holds exactly one point.
    pub one_shot_mass: f64,
    pub one_shot_probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub config: ScenarioConfig,
    pub trials: Vec<TrialStats>,
    pub summary: Summary,
    pub theory: Theory,
    pub overhead: Value,
    pub seconds: f64,
}

impl RunResult {
    /// Report as JSON with sorted keys. Only `timing` varies between identical runs.
    pub fn report(&self) -> Value {
        json!({
            "scenario": self.config.scenario,
            "seed": self.config.seed,
            "precision": match self.config.precision { Precision::F32 => "f32", Precision::F64 => "f64" },
            "config": self.config.canonical(),
            "trials": self.trials,
            "summary": self.summary,
            "theory": self.theory,
            "overhead": self.overhead,
            "occupancy": self.trials.iter().map(|t| &t.occupancy).collect::<Vec<_>>(),
            "timing": { "seconds": self.seconds },
        })
    }

    /// One CSV row per trial.
    pub fn trials_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "trial",
            "seed",
            "n",
            "bins",
            "emitted",
            "exact_count",
            "singleton_count",
            "mean_psnr",
            "mean_psnr_exact",
            "iip",
            "token_accuracy",
        ])?;
        for t in &self.trials {
            w.write_record([
                t.trial.to_string(),
                t.seed.to_string(),
                t.n.to_string(),
                t.bins.to_string(),
                t.emitted.to_string(),
                t.exact_count.to_string(),
                t.singleton_count.to_string(),
                t.mean_psnr.to_string(),
                t.mean_psnr_exact.to_string(),
                t.iip.to_string(),
                t.token_accuracy.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }
}

/// Remove volatile fields so two reports can be compared byte for byte.
pub fn strip_timing(mut report: Value) -> Value {
    if let Some(map) = report.as_object_mut() {
        map.remove("timing");
    }
    report
}

fn with_batch_size(spec: &DatasetSpec, n: usize) -> Option<DatasetSpec> {
    let mut s = spec.clone();
    match &mut s.kind {
        DatasetKind::SyntheticGaussian { n: size, .. } | DatasetKind::TokenSequences { n: size, .. } => {
            *size = n;
            Some(s)
        }
        _ => None,
    }
}

fn front_features<T: Real>(cfg: &ScenarioConfig, x: &Tensor<T>) -> Result<Tensor<T>> {
    let front: Vec<_> = crate_front(cfg);
    let mut len = x.cols();
    for f in &front {
        len = f.output_len(len)?;
    }
    let probe = ModelGraph::<T> {
        front,
        imprint: None,
        bridge: Bridge::Sum,
        head: Head::sink(len, 1, 0.0, 0.0),
    };
    Ok(forward_features(&probe, &Batch::new(x.clone(), None)?)?)
}

fn crate_front(cfg: &ScenarioConfig) -> Vec<imprint_core::model::FrontStage> {
    cfg.model
        .front
        .iter()
        .map(|f| match *f {
            FrontConfig::Identity => imprint_core::model::FrontStage::Identity,
            FrontConfig::AvgPool(k) => imprint_core::model::FrontStage::AvgPool(k),
        })
        .collect()
}

/// Structural checks that need the dataset kind.
fn validate_for_run(cfg: &ScenarioConfig) -> Result<()> {
    let synthetic = matches!(
        cfg.dataset.kind,
        DatasetKind::SyntheticGaussian { .. } | DatasetKind::TokenSequences { .. }
    );
    if cfg.metrics.pool_size > 0 && !synthetic {
        bail!("metrics.pool_size: distractor pools need a synthetic dataset source");
    }
    if matches!(cfg.dataset.kind, DatasetKind::TokenSequences { .. }) && !cfg.model.front.is_empty() {
        bail!("model.front: token sequences are decoded in embedding space, so the front chain must be empty");
    }
    Ok(())
}

fn run_trial<T: Real>(cfg: &ScenarioConfig, t: usize) -> Result<(TrialStats, Outcome<T>)> {
    let seed = trial_seed(cfg.seed, t);
    let base = RngStream::new(seed, 0);
    let data: Dataset<T> = dataio::load(&cfg.dataset, base).context("loading dataset")?;
    let n = data.batch.len();
    let aux = RngStream::new(seed, streams::POOL);
    let surrogate = match cfg.model.data_model {
        DataModelConfig::Empirical { surrogate } => Some(match with_batch_size(&cfg.dataset, surrogate) {
            Some(spec) => dataio::load::<T>(&spec, aux.derive(1))?.batch.x,
            None => data.batch.x.clone(),
        }),
        _ => None,
    };
    let pool = match with_batch_size(&cfg.dataset, cfg.metrics.pool_size) {
        Some(spec) if cfg.metrics.pool_size > 0 => {
            let raw = dataio::load::<T>(&spec, aux.derive(0))?.batch.x;
            front_features(cfg, &raw)?
        }
        _ => Tensor::zeros(&[0, front_features(cfg, &data.batch.x.clone())?.cols()]),
    };
    let mut scenario = cfg.scenario(n);
    if matches!(cfg.model.bins, BinsConfig::OneShot { .. }) && scenario.eval.expected_n.is_none() {
        scenario.eval.expected_n = Some(1);
    }
    let out = run_attack(&scenario, &data.batch, surrogate.as_ref(), &pool, seed)
        .with_context(|| format!("scenario '{}', trial {t} (seed {seed})", cfg.scenario))?;

    let token_accuracy = match (&data.tokens, &data.embedding) {
        (Some(tokens), Some(table)) => {
            let seq_len = tokens.first().map_or(0, |s| s.len());
            let vectors: Vec<Tensor<T>> = out.candidates.iter().map(|c| c.vector.clone()).collect();
            let decoded = token_lookup(&vectors, table, seq_len, default_decoding_radius(table))?;
            let correct: usize = out
                .score
                .matching
                .iter()
                .map(|&(c, truth)| {
                    decoded[c]
                        .iter()
                        .zip(&tokens[truth])
                        .filter(|(d, want)| **d == Some(**want))
                        .count()
                })
                .sum();
            Some(correct as f64 / (n * seq_len) as f64)
        }
        _ => None,
    };
    let max_rel_err_exact = out
        .score
        .per_sample
        .iter()
        .filter(|s| s.exact)
        .map(|s| s.rel_err)
        .fold(None, |a: Option<f64>, e| Some(a.map_or(e, |a| a.max(e))));
    let stats = TrialStats {
        trial: t,
        seed,
        n,
        bins: out.occupancy.len(),
        emitted: out.emitted,
        selected: out.candidates.len(),
        exact_count: out.score.exact_count,
        singleton_count: out.singleton_bins.len(),
        exact_bins: out.exact_bins.clone(),
        exact_equals_singletons: out.exact_bins == out.singleton_bins,
        singleton_fraction: out.singleton_fraction(),
        mean_psnr: out.score.mean_psnr,
        mean_psnr_exact: out.score.mean_psnr_exact,
        iip: out.score.iip,
        max_rel_err_exact,
        token_accuracy,
        occupancy: out.occupancy.clone(),
    };
    Ok((stats, out))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if c == 0 {
        0.0
    } else {
        s / c as f64
    }
}

fn summarize(trials: &[TrialStats]) -> Summary {
    let tokens: Vec<f64> = trials.iter().filter_map(|t| t.token_accuracy).collect();
    Summary {
        trials: trials.len(),
        mean_exact_fraction: mean(trials.iter().map(|t| t.exact_count as f64 / t.n as f64)),
        mean_singleton_fraction: mean(trials.iter().map(|t| t.singleton_fraction)),
        mean_psnr: mean(trials.iter().map(|t| t.mean_psnr)),
        mean_psnr_exact: mean(trials.iter().filter(|t| t.exact_count > 0).map(|t| t.mean_psnr_exact)),
        mean_iip: mean(trials.iter().map(|t| t.iip)),
        success_rate: mean(trials.iter().map(|t| if t.exact_count > 0 { 1.0 } else { 0.0 })),
        all_exact_equal_singletons: trials.iter().all(|t| t.exact_equals_singletons),
        mean_token_accuracy: (!tokens.is_empty()).then(|| mean(tokens.iter().copied())),
    }
}

fn theory_for(cfg: &ScenarioConfig, n: usize, bins: usize) -> Theory {
    let (closed_form, closed_form_error) = match prop1_closed_form(n, bins) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let mc = iid_monte_carlo(n, bins, MONTE_CARLO_REPLICATES, RngStream::new(cfg.seed, THEORY_STREAM)).ok();
    let one_shot_mass = match cfg.model.bins {
        BinsConfig::OneShot { mass: Some(p), .. } => p,
        BinsConfig::OneShot { mass: None, .. } => 1.0 / n as f64,
        BinsConfig::Layout { k, .. } => 1.0 / k as f64,
    };
    let iid = iid_expectation(n, bins);
    if let (Some(cf), Some(mc)) = (closed_form, mc) {
        log::info!(
            "{}: composition model {cf:.4}, iid {iid:.4}, iid Monte Carlo {:.4} (gap {:.4})",
            cfg.scenario,
            mc.mean,
            (cf - mc.mean).abs()
        );
    }
    Theory {
        n,
        bins,
        closed_form,
        closed_form_error,
        iid,
        iid_monte_carlo: mc.map_or(f64::NAN, |m| m.mean),
        iid_monte_carlo_stderr: mc.map_or(f64::NAN, |m| m.stderr),
        one_shot_mass,
        one_shot_probability: one_shot_success(n, one_shot_mass).ok(),
    }
}

fn overhead_for<T: Real>(cfg: &ScenarioConfig, out: &Outcome<T>) -> Value {
    let rows = out.module.weight.rows();
    let m = out.module.weight.cols();
    let decoys = out.module.decoy_rows.len();
    let bridge = match out.model.bridge {
        Bridge::Sum => 0,
        Bridge::IdenticalRow { ref scale, ref bias } => scale.len() + bias.len(),
    };
    let o = overhead(m, rows - decoys, decoys, bridge);
    let base = out.model.parameter_count() - o.total;
    json!({
        "imprint_rows": rows - decoys,
        "decoys": decoys,
        "weights": o.weights,
        "biases": o.biases,
        "bridge": o.bridge,
        "total": o.total,
        "base_params": base,
        "relative_to_base": if base > 0 { o.relative_to(base) } else { f64::NAN },
        "scenario": cfg.scenario,
    })
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        b = b.num_threads(j.max(1));
    }
    Ok(b.build()?)
}

fn run_typed<T: Real>(cfg: &ScenarioConfig, jobs: Option<usize>) -> Result<RunResult> {
    validate_for_run(cfg)?;
    let start = Instant::now();
    let pool = thread_pool(jobs)?;
    let results: Vec<(TrialStats, Option<Value>)> = pool.install(|| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let (stats, out) = run_trial::<T>(cfg, t)?;
                Ok((stats, (t == 0).then(|| overhead_for(cfg, &out))))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let overhead = results[0].1.clone().unwrap_or(Value::Null);
    let trials: Vec<TrialStats> = results.into_iter().map(|r| r.0).collect();
    let theory = theory_for(cfg, trials[0].n, trials[0].bins);
    Ok(RunResult {
        config: cfg.clone(),
        summary: summarize(&trials),
        trials,
        theory,
        overhead,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Run every trial of a scenario. Trials run in parallel on `jobs` threads but results are
/// independent of the thread count.
pub fn run(cfg: &ScenarioConfig, jobs: Option<usize>) -> Result<RunResult> {
    match cfg.precision {
        Precision::F32 => run_typed::<f32>(cfg, jobs),
        Precision::F64 => run_typed::<f64>(cfg, jobs),
    }
}

/// Write `<scenario>.report.json` and `<scenario>.trials.csv` into `dir`.
pub fn write_outputs(result: &RunResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = &result.config.scenario;
    dataio::save_report(&result.report(), &dir.join(format!("{name}.report.json")))?;
    let csv_path = dir.join(format!("{name}.trials.csv"));
    std::fs::write(&csv_path, result.trials_csv()?).with_context(|| format!("writing {}", csv_path.display()))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepAxis {
    Bins,
    Batch,
    Sigma,
    /// Number of 2x average-pooling stages before the imprint layer.
    Placement,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Bins => "bins",
            Self::Batch => "batch",
            Self::Sigma => "sigma",
            Self::Placement => "placement",
        })
    }
}

/// The scenario with `axis` set to `value`.
pub fn sweep_point(cfg: &ScenarioConfig, axis: SweepAxis, value: f64) -> Result<ScenarioConfig> {
    let mut c = cfg.clone();
    let as_count = |v: f64| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(anyhow!("{axis} values must be non-negative integers, got {v}"))
        }
    };
    match axis {
        SweepAxis::Bins => match &mut c.model.bins {
            BinsConfig::Layout { k, .. } => *k = as_count(value)?,
            BinsConfig::OneShot { .. } => bail!("model.bins: a bins sweep needs a layout, not one-shot bins"),
        },
        SweepAxis::Batch => {
            let n = as_count(value)?;
            c.dataset = with_batch_size(&c.dataset, n)
                .ok_or_else(|| anyhow!("dataset.kind: a batch sweep needs a synthetic source"))?;
            c.metrics.expected_n = None;
        }
        SweepAxis::Sigma => {
            c.defense.noise = match c.defense.noise {
                NoiseConfig::Gaussian(_) => NoiseConfig::Gaussian(value),
                _ => NoiseConfig::Laplace(value),
            }
        }
        SweepAxis::Placement => {
            if !matches!(c.model.data_model, DataModelConfig::Empirical { .. }) {
                bail!("model.data_model: a placement sweep changes the feature distribution, so it needs an empirical data model");
            }
            c.model.front = vec![FrontConfig::AvgPool(2); as_count(value)?];
        }
    }
    c.validate().map_err(|e| anyhow!(e))?;
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub result: RunResult,
}

/// Run the scenario once per value; points run in parallel.
pub fn sweep(cfg: &ScenarioConfig, axis: SweepAxis, values: &[f64], jobs: Option<usize>) -> Result<Vec<SweepRow>> {
    let points = values
        .iter()
        .map(|&v| sweep_point(cfg, axis, v))
        .collect::<Result<Vec<_>>>()?;
    let pool = thread_pool(jobs)?;
    pool.install(|| {
        points
            .par_iter()
            .zip(values.par_iter())
            .map(|(c, &value)| {
                Ok(SweepRow {
                    value,
                    result: run(c, Some(1))?,
                })
            })
            .collect()
    })
}

/// Predicted and measured recovery per sweep point.
pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "axis",
        "value",
        "n",
        "bins",
        "predicted_closed_form",
        "predicted_iid",
        "iid_monte_carlo",
        "measured_singletons",
        "measured_exact",
        "exact_fraction",
        "mean_psnr",
        "mean_psnr_exact",
        "mean_iip",
    ])?;
    for r in rows {
        let res = &r.result;
        let th = &res.theory;
        let s = &res.summary;
        let per_trial = |f: fn(&TrialStats) -> usize| mean(res.trials.iter().map(|t| f(t) as f64));
        w.write_record([
            axis.to_string(),
            r.value.to_string(),
            th.n.to_string(),
            th.bins.to_string(),
            th.closed_form.map(|v| v.to_string()).unwrap_or_default(),
            th.iid.to_string(),
            th.iid_monte_carlo.to_string(),
            per_trial(|t| t.singleton_count).to_string(),
            per_trial(|t| t.exact_count).to_string(),
            s.mean_exact_fraction.to_string(),
            s.mean_psnr.to_string(),
            s.mean_psnr_exact.to_string(),
            s.mean_iip.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Bin sizing request: either `k` equal-mass bins or one bin of mass `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sizing {
    Bins(usize),
    Mass(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanTable {
    pub n: usize,
    pub sizing: Sizing,
    pub closed_form: std::result::Result<f64, String>,
    pub iid: Option<f64>,
    pub one_shot: std::result::Result<f64, String>,
    pub one_shot_optimum: f64,
    pub overhead: imprint_core::theory::Overhead,
    pub base_params: usize,
}

pub fn plan(n: usize, sizing: Sizing, m: usize, base_params: usize, decoys: usize) -> PlanTable {
    let (closed_form, iid, one_shot, rows) = match sizing {
        Sizing::Bins(k) => (
            prop1_closed_form(n, k).map_err(|e| e.to_string()),
            Some(iid_expectation(n, k)),
            one_shot_success(n, 1.0 / k as f64).map_err(|e| e.to_string()),
            k,
        ),
        Sizing::Mass(p) => (
            Err("the composition model needs an equal-mass layout".to_string()),
            None,
            one_shot_success(n, p).map_err(|e| e.to_string()),
            2,
        ),
    };
    PlanTable {
        n,
        sizing,
        closed_form,
        iid,
        one_shot,
        one_shot_optimum: imprint_core::theory::one_shot_optimum(n).1,
        overhead: overhead(m, rows, decoys, 0),
        base_params,
    }
}

impl fmt::Display for PlanTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sizing = match self.sizing {
            Sizing::Bins(k) => format!("k = {k} bins"),
            Sizing::Mass(p) => format!("one bin of mass p = {p}"),
        };
        writeln!(f, "batch size n              {}", self.n)?;
        writeln!(f, "sizing                    {sizing}")?;
        match &self.closed_form {
            Ok(v) => writeln!(f, "expected (composition)    {v:.4}")?,
            Err(e) => writeln!(f, "expected (composition)    error: {e}")?,
        }
        if let Some(v) = self.iid {
            writeln!(f, "expected (iid)            {v:.4}")?;
        }
        match &self.one_shot {
            Ok(v) => writeln!(f, "single-bin success        {v:.4}")?,
            Err(e) => writeln!(f, "single-bin success        error: {e}")?,
        }
        writeln!(f, "one-shot optimum (p=1/n)  {:.4}", self.one_shot_optimum)?;
        let o = &self.overhead;
        writeln!(
            f,
            "overhead                  {} weights + {} biases = {} parameters",
            o.weights, o.biases, o.total
        )?;
        if self.base_params > 0 {
            writeln!(f, "relative to base          {:.4}", o.relative_to(self.base_params))?;
        }
        Ok(())
    }
}

/// A bundled scenario shipped with the binary.
pub struct Bundled {
    pub name: &'static str,
    pub json: &'static str,
}

pub const BUNDLED: &[Bundled] = &[
    Bundled {
        name: "fullbatch64",
        json: include_str!("../scenarios/fullbatch64.json"),
    },
    Bundled {
        name: "oneshot",
        json: include_str!("../scenarios/oneshot.json"),
    },
    Bundled {
        name: "fedavg8x8",
        json: include_str!("../scenarios/fedavg8x8.json"),
    },
    Bundled {
        name: "text",
        json: include_str!("../scenarios/text.json"),
    },
];

pub fn bundled(name: &str) -> Option<ScenarioConfig> {
    BUNDLED
        .iter()
        .find(|b| b.name == name)
        .map(|b| ScenarioConfig::from_json(b.json).expect("bundled scenarios are valid"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub scenario: String,
    pub what: String,
    pub pass: bool,
}

/// Evaluate the thresholds declared in the scenario's `check` section.
pub fn evaluate(result: &RunResult) -> Vec<CheckLine> {
    let c = &result.config.check;
    let s = &result.summary;
    let mut lines = Vec::new();
    let mut push = |what: String, pass: bool| {
        lines.push(CheckLine {
            scenario: result.config.scenario.clone(),
            what,
            pass,
        })
    };
    if c.exact_equals_singletons {
        let bad = result.trials.iter().filter(|t| !t.exact_equals_singletons).count();
        push(
            format!("exact set equals singleton set in every trial ({bad} of {} differ)", s.trials),
            bad == 0,
        );
    }
    if let Some(min) = c.min_mean_psnr_exact {
        let worst = result
            .trials
            .iter()
            .filter(|t| t.exact_count > 0)
            .map(|t| t.mean_psnr_exact)
            .fold(f64::INFINITY, f64::min);
        push(format!("mean exact PSNR >= {min} dB (worst trial {worst:.2})"), worst >= min);
    }
    if let Some(min) = c.min_iip {
        push(format!("mean IIP >= {min} (got {:.4})", s.mean_iip), s.mean_iip >= min);
    }
    if let Some(tol) = c.one_shot_tolerance {
        let want = result.theory.one_shot_probability.unwrap_or(f64::NAN);
        push(
            format!("success rate {:.4} within {tol} of {want:.4}", s.success_rate),
            (s.success_rate - want).abs() <= tol,
        );
    }
    if let Some(tol) = c.token_tolerance {
        let acc = s.mean_token_accuracy.unwrap_or(f64::NAN);
        let diffs: Vec<f64> = result
            .trials
            .iter()
            .map(|t| (t.token_accuracy.unwrap_or(f64::NAN) - t.singleton_fraction).abs())
            .collect();
        let worst = diffs.iter().copied().fold(0.0, f64::max);
        push(
            format!("token accuracy {acc:.4} tracks singleton fraction {:.4} (worst gap {worst:.4}, tol {tol})", s.mean_singleton_fraction),
            diffs.iter().all(|d| *d <= tol),
        );
    }
    lines
}

/// Run bundled scenarios with their thresholds. `force_f64` overrides each precision.
pub fn check(names: &[String], force_f64: bool, jobs: Option<usize>) -> Result<Vec<CheckLine>> {
    let mut lines = Vec::new();
    for b in BUNDLED {
        if !names.is_empty() && !names.iter().any(|n| n == b.name) {
            continue;
        }
        let mut cfg = ScenarioConfig::from_json(b.json).map_err(|e| anyhow!("bundled scenario {}: {e}", b.name))?;
        if force_f64 {
            cfg.precision = Precision::F64;
        }
        let result = run(&cfg, jobs)?;
        lines.extend(evaluate(&result));
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_examples() {
        let p = plan(64, Sizing::Bins(156), 3072, 0, 0);
        assert!(p.closed_form.clone().unwrap() >= 32.0);
        let p = plan(4096, Sizing::Mass(1.0 / 4096.0), 64, 0, 0);
        assert!((p.one_shot.clone().unwrap() - 0.368).abs() < 1e-3);
        let p = plan(3, Sizing::Bins(2), 8, 0, 0);
        assert!(p.closed_form.is_err());
        assert!((p.iid.unwrap() - 0.75).abs() < 1e-15);
        let text = p.to_string();
        assert!(text.contains("error") && text.contains("0.7500"), "{text}");
    }

    #[test]
    fn bundled_scenarios_parse() {
        for b in BUNDLED {
            let cfg = bundled(b.name).unwrap();
            assert_eq!(cfg.scenario, b.name);
        }
    }

    #[test]
    fn sweep_points_edit_the_right_field() {
        let cfg = bundled("fullbatch64").unwrap();
        let c = sweep_point(&cfg, SweepAxis::Bins, 32.0).unwrap();
        assert_eq!(c.model.bins, BinsConfig::Layout { k: 32, p_min: 1e-6 });
        let c = sweep_point(&cfg, SweepAxis::Sigma, 0.1).unwrap();
        assert_eq!(c.defense.noise, NoiseConfig::Laplace(0.1));
        let c = sweep_point(&cfg, SweepAxis::Batch, 16.0).unwrap();
        assert_eq!(c.batch_size(), 16);
        assert!(sweep_point(&cfg, SweepAxis::Bins, 2.5).is_err());
        assert!(sweep_point(&cfg, SweepAxis::Placement, 1.0).is_err());
    }
}
