//! Experiment orchestration: single runs, the (δ, λ, seed, method) grid with
//! λ selection and plots, coupled-run stability checks, theory reports and
//! the expected-iterate check.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::{FeatureKind, FeatureMap, Hypothesis};
use crate::loss::LossSpec;
use crate::optimizer::{
    default_gamma, stability_coupled_run, train, RateRegime, Replacement, Sample, SampleSource, TraceRow, TrainConfig,
    TrainOutput,
};
use crate::plot::{aggregate, render_svg, Panel, Series};
use crate::rng::{indexed_rng, stream_rng, Stream};
use crate::synthdata::{
    estimate_gradient_variance, g_lambda_oracle, ErrorMode, EvalSet, FiniteStream, FreshStream, SynthDistribution,
    SynthEvaluator,
};
use crate::theory::{ProblemConstants, TheoryReport};
use crate::trace::{read_trace_file, write_trace_file};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sgd,
    Averaged,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sgd => "sgd",
            Method::Averaged => "averaged",
        }
    }

    pub fn regime(self) -> RateRegime {
        match self {
            Method::Sgd => RateRegime::Vanilla,
            Method::Averaged => RateRegime::Averaged,
        }
    }
}

/// Feature map choice; random Fourier maps are drawn per run seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub kind: FeatureKind,
    pub rff_dim: usize,
    pub rff_sigma: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            kind: FeatureKind::LinearWithBias,
            rff_dim: 512,
            rff_sigma: 1.0,
        }
    }
}

impl FeatureConfig {
    pub fn build(&self, dist: &SynthDistribution, seed: u64) -> Result<FeatureMap> {
        match self.kind {
            FeatureKind::LinearWithBias => Ok(dist.linear_map()),
            FeatureKind::RandomFourier => FeatureMap::random_fourier(2, self.rff_dim, self.rff_sigma, seed),
        }
    }
}

/// Everything that determines one training run on the synthetic distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub dist: SynthDistribution,
    pub loss: LossSpec,
    pub features: FeatureConfig,
    pub lambda: f64,
    pub iterations: usize,
    pub seed: u64,
    pub method: Method,
    /// Fixed γ; otherwise tuned over `γ_min · 2^k`, `k = 0..8`.
    pub gamma: Option<f64>,
    pub gamma_tuning_steps: usize,
    pub checkpoint_every: usize,
    pub test_n: usize,
    pub train_monitor_n: usize,
    pub finite_train: Option<usize>,
    pub error_mode: ErrorMode,
    pub trace_last: bool,
}

impl RunSpec {
    pub fn new(dist: SynthDistribution, lambda: f64, iterations: usize, seed: u64, method: Method) -> Self {
        RunSpec {
            dist,
            loss: LossSpec::logistic(),
            features: FeatureConfig::default(),
            lambda,
            iterations,
            seed,
            method,
            gamma: None,
            gamma_tuning_steps: 1000,
            checkpoint_every: 100,
            test_n: 100_000,
            train_monitor_n: 10_000,
            finite_train: None,
            error_mode: ErrorMode::TestSet,
            trace_last: false,
        }
    }

    fn config(&self, gamma: f64, iterations: usize) -> TrainConfig {
        let mut cfg = TrainConfig::new(self.lambda, gamma, iterations).with_seed(self.seed);
        if self.method == Method::Averaged {
            cfg = cfg.averaged();
        }
        cfg.checkpoint_every = self.checkpoint_every;
        cfg.trace_last = self.trace_last;
        cfg
    }

    fn stream(&self, finite: Option<&[Sample]>) -> Result<Box<dyn SampleSource>> {
        Ok(match finite {
            Some(s) => Box::new(FiniteStream::new(s.to_vec(), self.seed)?),
            None => Box::new(FreshStream::new(self.dist, self.seed)),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub gamma: f64,
    pub gamma_min: f64,
    pub output: TrainOutput,
    pub map: FeatureMap,
}

/// Risk of the oracle at `lambda` for the map of `features` at `seed`.
pub fn reference_risk(
    dist: &SynthDistribution,
    loss: &LossSpec,
    features: &FeatureConfig,
    seed: u64,
    lambda: f64,
) -> Result<f64> {
    let map = features.build(dist, seed)?;
    Ok(g_lambda_oracle(dist, &map, loss, lambda)?.risk)
}

/// Train one run. `reference` is the risk the excess risk is measured from.
pub fn execute_run(spec: &RunSpec, reference: f64) -> Result<RunResult> {
    let map = spec.features.build(&spec.dist, spec.seed)?;
    let finite = spec
        .finite_train
        .map(|n| spec.dist.sample_stream(n, spec.seed, Stream::Train));
    let monitor = match &finite {
        Some(s) => s.clone(),
        None => spec
            .dist
            .sample_stream(spec.train_monitor_n, spec.seed, Stream::Monitor),
    };
    let test = spec.dist.sample_stream(spec.test_n, spec.seed, Stream::Test);

    let smoothness = spec
        .loss
        .smoothness(map.kernel_bound())
        .ok_or_else(|| Error::config("smoothness is unbounded without a projection radius"))?;
    let gamma_min = default_gamma(spec.method.regime(), smoothness, spec.lambda);
    let gamma = match spec.gamma {
        Some(g) => g,
        None => tune_gamma(spec, &map, gamma_min, finite.as_deref(), &monitor)?,
    };

    let mut evaluator = SynthEvaluator::new(spec.dist, spec.loss, map.clone(), monitor, test, reference)?;
    evaluator.error_mode = spec.error_mode;
    let cfg = spec.config(gamma, spec.iterations);
    let mut stream = spec.stream(finite.as_deref())?;
    let output = train(&cfg, &spec.loss, &map, stream.as_mut(), Some(&evaluator))?;
    Ok(RunResult {
        gamma,
        gamma_min,
        output,
        map,
    })
}

/// Pick `γ ∈ {γ_min · 2^k : k = 0..8}` with the smallest mean training loss
/// after `gamma_tuning_steps` steps.
fn tune_gamma(
    spec: &RunSpec,
    map: &FeatureMap,
    gamma_min: f64,
    finite: Option<&[Sample]>,
    monitor: &[Sample],
) -> Result<f64> {
    let steps = spec.gamma_tuning_steps;
    if steps == 0 {
        return Ok(gamma_min);
    }
    let set = EvalSet::new(monitor.to_vec(), map)?;
    let mut best = (f64::INFINITY, gamma_min);
    for k in 0..8 {
        let gamma = gamma_min * f64::from(1u32 << k);
        let cfg = spec.config(gamma, steps);
        let mut stream = spec.stream(finite)?;
        let out = match train(&cfg, &spec.loss, map, stream.as_mut(), None) {
            Ok(o) => o,
            Err(e @ Error::Divergence { .. }) => {
                log::warn!("γ = {gamma} diverged during tuning: {e}");
                continue;
            }
            Err(e) => return Err(e),
        };
        let (loss, _) = set.loss_and_error(out.output(), map, &spec.loss)?;
        if loss < best.0 {
            best = (loss, gamma);
        }
    }
    Ok(best.1)
}

/// Grid description; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub deltas: Vec<f64>,
    pub lambdas: Vec<f64>,
    #[serde(alias = "T")]
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub test_n: usize,
    pub loss_name: String,
    pub feature_kind: String,
    pub rff_dim: usize,
    pub rff_sigma: f64,
    pub projection_radius: Option<f64>,
    pub gamma_tuning_steps: usize,
    pub gamma: Option<f64>,
    pub checkpoint_every: usize,
    pub train_monitor_n: usize,
    pub finite_train: Option<usize>,
    pub error_mode: ErrorMode,
    pub reference_lambda: f64,
    pub margin_r: f64,
    pub region_weights: [f64; 2],
    pub trace_last: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            deltas: vec![0.1, 0.25, 0.4],
            lambdas: vec![0.1, 0.01, 0.001, 0.0001],
            iterations: 20_000,
            seeds: vec![1, 2, 3, 4, 5],
            methods: vec![Method::Sgd, Method::Averaged],
            test_n: 100_000,
            loss_name: "logistic".into(),
            feature_kind: "linear".into(),
            rff_dim: 512,
            rff_sigma: 1.0,
            projection_radius: None,
            gamma_tuning_steps: 1000,
            gamma: None,
            checkpoint_every: 100,
            train_monitor_n: 10_000,
            finite_train: None,
            error_mode: ErrorMode::TestSet,
            reference_lambda: 1e-8,
            margin_r: 0.1,
            region_weights: [0.5, 0.5],
            trace_last: false,
        }
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.deltas.is_empty() || self.lambdas.is_empty() || self.seeds.is_empty() || self.methods.is_empty() {
            return Err(Error::config("deltas, lambdas, seeds and methods must be non-empty"));
        }
        if self.iterations == 0 || self.test_n == 0 || self.checkpoint_every == 0 || self.train_monitor_n == 0 {
            return Err(Error::config(
                "iterations, test_n, checkpoint_every and train_monitor_n must be positive",
            ));
        }
        for &d in &self.deltas {
            SynthDistribution::with_geometry(d, self.margin_r, self.region_weights)?;
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l > 0.0)) {
            return Err(Error::config(format!("λ must be positive, got {l}")));
        }
        self.loss()?;
        self.features()?;
        Ok(())
    }

    pub fn loss(&self) -> Result<LossSpec> {
        let loss = LossSpec::new(self.loss_name.parse()?);
        match self.projection_radius {
            Some(r) => loss.with_projection(r),
            None => Ok(loss),
        }
    }

    pub fn features(&self) -> Result<FeatureConfig> {
        Ok(FeatureConfig {
            kind: self.feature_kind.parse()?,
            rff_dim: self.rff_dim,
            rff_sigma: self.rff_sigma,
        })
    }

    pub fn dist(&self, delta: f64) -> Result<SynthDistribution> {
        SynthDistribution::with_geometry(delta, self.margin_r, self.region_weights)
    }

    pub fn run_spec(&self, delta: f64, lambda: f64, seed: u64, method: Method) -> Result<RunSpec> {
        Ok(RunSpec {
            dist: self.dist(delta)?,
            loss: self.loss()?,
            features: self.features()?,
            lambda,
            iterations: self.iterations,
            seed,
            method,
            gamma: self.gamma,
            gamma_tuning_steps: self.gamma_tuning_steps,
            checkpoint_every: self.checkpoint_every,
            test_n: self.test_n,
            train_monitor_n: self.train_monitor_n,
            finite_train: self.finite_train,
            error_mode: self.error_mode,
            trace_last: self.trace_last,
        })
    }
}

/// Summary of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub delta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub method: Method,
    pub gamma: f64,
    pub gamma_min: f64,
    pub trace: String,
    pub final_train_err: f64,
    pub final_test_err: f64,
    pub best_train_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub delta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub method: Method,
    pub error: String,
}

/// λ chosen for one (δ, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub delta: f64,
    pub method: Method,
    /// Best final training accuracy, averaged over seeds.
    pub lambda: f64,
    pub mean_final_train_err: f64,
    pub mean_final_test_err: f64,
    /// Alternative: best accuracy reached at any checkpoint, averaged over seeds.
    pub lambda_anytime: f64,
    pub mean_best_train_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: ExperimentSpec,
    pub cells: Vec<CellSummary>,
    pub selections: Vec<Selection>,
    pub failures: Vec<CellFailure>,
    pub plots: Vec<String>,
}

impl Manifest {
    pub fn selection(&self, delta: f64, method: Method) -> Option<&Selection> {
        self.selections.iter().find(|s| s.delta == delta && s.method == method)
    }
}

pub fn trace_file_name(delta: f64, lambda: f64, seed: u64, method: Method) -> String {
    format!("delta{delta}_lambda{lambda}_seed{seed}_{}.csv", method.name())
}

fn key(delta: f64, lambda: f64, seed: u64, method: Method) -> (u64, u64, u64, Method) {
    (delta.to_bits(), lambda.to_bits(), seed, method)
}

/// Run the whole grid, write traces, the manifest and the plots.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path, jobs: Option<usize>) -> Result<Manifest> {
    spec.validate()?;
    let trace_dir = out_dir.join("traces");
    std::fs::create_dir_all(&trace_dir)?;
    let features = spec.features()?;
    let loss = spec.loss()?;

    let mut cells = Vec::new();
    for &delta in &spec.deltas {
        for &lambda in &spec.lambdas {
            for &seed in &spec.seeds {
                for &method in &spec.methods {
                    cells.push((delta, lambda, seed, method));
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    // The linear map does not depend on the seed, so its reference risk is
    // shared by all seeds of a δ.
    let references: BTreeMap<(u64, u64), Result<f64>> = pool.install(|| {
        let keys: Vec<(f64, u64)> = spec
            .deltas
            .iter()
            .flat_map(|&d| {
                let seeds: Vec<u64> = match features.kind {
                    FeatureKind::LinearWithBias => vec![spec.seeds[0]],
                    FeatureKind::RandomFourier => spec.seeds.clone(),
                };
                seeds.into_iter().map(move |s| (d, s))
            })
            .collect();
        keys.par_iter()
            .map(|&(d, s)| {
                let r = spec
                    .dist(d)
                    .and_then(|dist| reference_risk(&dist, &loss, &features, s, spec.reference_lambda));
                ((d.to_bits(), s), r)
            })
            .collect()
    });
    let reference_for = |delta: f64, seed: u64| -> Result<f64> {
        let s = match features.kind {
            FeatureKind::LinearWithBias => spec.seeds[0],
            FeatureKind::RandomFourier => seed,
        };
        match &references[&(delta.to_bits(), s)] {
            Ok(v) => Ok(*v),
            Err(e) => Err(Error::Config(format!("reference oracle failed: {e}"))),
        }
    };

    let results: Vec<std::result::Result<CellSummary, CellFailure>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(delta, lambda, seed, method)| {
                let fail = |e: Error| CellFailure {
                    delta,
                    lambda,
                    seed,
                    method,
                    error: e.to_string(),
                };
                let run = spec.run_spec(delta, lambda, seed, method).map_err(fail)?;
                let reference = reference_for(delta, seed).map_err(fail)?;
                let result = execute_run(&run, reference).map_err(fail)?;
                let name = trace_file_name(delta, lambda, seed, method);
                write_trace_file(&trace_dir.join(&name), &result.output.trace).map_err(fail)?;
                if spec.trace_last && method == Method::Averaged {
                    let last = name.replace(".csv", "_last.csv");
                    write_trace_file(&trace_dir.join(last), &result.output.last_trace).map_err(fail)?;
                }
                let trace = &result.output.trace;
                let last = trace.last().ok_or_else(|| fail(Error::config("empty trace")))?;
                Ok(CellSummary {
                    delta,
                    lambda,
                    seed,
                    method,
                    gamma: result.gamma,
                    gamma_min: result.gamma_min,
                    trace: format!("traces/{name}"),
                    final_train_err: last.train_err,
                    final_test_err: last.test_err,
                    best_train_err: trace.iter().map(|r| r.train_err).fold(f64::INFINITY, f64::min),
                })
            })
            .collect()
    });

    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(s) => summaries.push(s),
            Err(f) => failures.push(f),
        }
    }
    summaries.sort_by(|a, b| {
        key(a.delta, a.lambda, a.seed, a.method)
            .partial_cmp(&key(b.delta, b.lambda, b.seed, b.method))
            .expect("total order")
    });
    failures.sort_by_key(|f| key(f.delta, f.lambda, f.seed, f.method));

    let selections = select_lambdas(spec, &summaries);
    let mut manifest = Manifest {
        spec: spec.clone(),
        cells: summaries,
        selections,
        failures,
        plots: Vec::new(),
    };
    manifest.plots = write_plots(&manifest, out_dir)?;
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Per (δ, method), the λ whose runs all succeeded with the best mean final
/// training error (ties go to the earlier λ in the spec).
fn select_lambdas(spec: &ExperimentSpec, cells: &[CellSummary]) -> Vec<Selection> {
    let mut out = Vec::new();
    for &delta in &spec.deltas {
        for &method in &spec.methods {
            let mut best: Option<Selection> = None;
            let mut best_any: Option<(f64, f64)> = None;
            for &lambda in &spec.lambdas {
                let runs: Vec<&CellSummary> = cells
                    .iter()
                    .filter(|c| c.delta == delta && c.lambda == lambda && c.method == method)
                    .collect();
                if runs.len() != spec.seeds.len() {
                    continue;
                }
                let train = mean(runs.iter().map(|c| c.final_train_err));
                let test = mean(runs.iter().map(|c| c.final_test_err));
                let anytime = mean(runs.iter().map(|c| c.best_train_err));
                if best.as_ref().is_none_or(|b| train < b.mean_final_train_err) {
                    best = Some(Selection {
                        delta,
                        method,
                        lambda,
                        mean_final_train_err: train,
                        mean_final_test_err: test,
                        lambda_anytime: lambda,
                        mean_best_train_err: anytime,
                    });
                }
                if best_any.is_none_or(|(_, a)| anytime < a) {
                    best_any = Some((lambda, anytime));
                }
            }
            if let (Some(mut b), Some((l, a))) = (best, best_any) {
                b.lambda_anytime = l;
                b.mean_best_train_err = a;
                out.push(b);
            }
        }
    }
    out
}

/// Loss, error and ratio panels per δ for the selected λ of each method,
/// built from the trace files alone.
pub fn write_plots(manifest: &Manifest, out_dir: &Path) -> Result<Vec<String>> {
    let plot_dir = out_dir.join("plots");
    std::fs::create_dir_all(&plot_dir)?;
    let mut written = Vec::new();
    for &delta in &manifest.spec.deltas {
        let mut curves: Vec<(String, Vec<Vec<TraceRow>>)> = Vec::new();
        for &method in &manifest.spec.methods {
            let Some(sel) = manifest.selection(delta, method) else {
                continue;
            };
            let mut traces = Vec::new();
            for c in manifest
                .cells
                .iter()
                .filter(|c| c.delta == delta && c.lambda == sel.lambda && c.method == method)
            {
                traces.push(read_trace_file(&out_dir.join(&c.trace))?);
            }
            curves.push((format!("{} (λ={})", method.name(), sel.lambda), traces));
        }
        type Metric = fn(&TraceRow) -> Option<f64>;
        let panels: [(&str, &str, bool, Metric); 3] = [
            ("loss", "test loss", false, |r| Some(r.test_loss)),
            ("error", "test error", false, |r| Some(r.test_err)),
            ("ratio", "excess error / excess risk", false, |r| r.ratio),
        ];
        for (name, y_label, log_y, metric) in panels {
            let panel = Panel {
                title: format!("δ = {delta}: {y_label}"),
                x_label: "iteration".into(),
                y_label: y_label.into(),
                log_x: true,
                log_y,
                series: curves
                    .iter()
                    .map(|(label, traces)| Series {
                        label: label.clone(),
                        points: aggregate(traces, metric),
                    })
                    .collect(),
            };
            let file = format!("plots/delta{delta}_{name}.svg");
            std::fs::write(out_dir.join(&file), render_svg(&panel))?;
            written.push(file);
        }
    }
    Ok(written)
}

/// Regenerate plots of an experiment directory from its manifest and traces.
pub fn replot(out_dir: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(out_dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    write_plots(&manifest, out_dir)
}

/// Coupled-run harness settings.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilitySpec {
    pub dist: SynthDistribution,
    pub loss: LossSpec,
    pub lambda: f64,
    pub gamma: Option<f64>,
    pub iterations: usize,
    pub replace_indices: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Reuse the original example instead of a fresh one.
    pub identical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCase {
    pub seed: u64,
    pub replace_index: usize,
    pub initial_deviation: f64,
    pub initial_bound: f64,
    pub final_deviation: f64,
    pub final_bound: f64,
    pub max_product_violation: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub gamma: f64,
    pub cases: Vec<StabilityCase>,
}

impl StabilityReport {
    pub fn all_passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }
}

/// Run coupled chains for every (seed, index), check the three bounds and
/// write `seed,replace_index,step,deviation,bound` rows to `out`.
pub fn run_stability(spec: &StabilitySpec, out: &Path) -> Result<StabilityReport> {
    let map = spec.dist.linear_map();
    let smoothness = spec
        .loss
        .smoothness(map.kernel_bound())
        .ok_or_else(|| Error::config("smoothness is unbounded without a projection radius"))?;
    let gamma = spec
        .gamma
        .unwrap_or_else(|| default_gamma(RateRegime::Averaged, smoothness, spec.lambda));
    let mut cfg = TrainConfig::new(spec.lambda, gamma, spec.iterations);
    cfg.regime = RateRegime::Averaged;

    let runs: Vec<(u64, usize)> = spec
        .seeds
        .iter()
        .flat_map(|&s| spec.replace_indices.iter().map(move |&t| (s, t)))
        .collect();
    let traces = runs
        .par_iter()
        .map(|&(seed, t)| {
            let samples = spec.dist.sample_stream(spec.iterations, seed, Stream::Train);
            let replacement = if spec.identical {
                Replacement::Identical
            } else {
                Replacement::Redraw(spec.dist.draw(&mut indexed_rng(seed, Stream::Replacement, t as u64)))
            };
            stability_coupled_run(&cfg, &spec.loss, &map, &samples, t, &replacement)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(out)?;
    w.write_record(["seed", "replace_index", "step", "deviation", "bound"])?;
    let mut cases = Vec::new();
    for (&(seed, t), tr) in runs.iter().zip(&traces) {
        let mut worst: f64 = 0.0;
        for (k, (d, b)) in tr.deviations.iter().zip(&tr.product_bounds).enumerate() {
            worst = worst.max(d - b);
            w.write_record([
                seed.to_string(),
                t.to_string(),
                (t + k).to_string(),
                crate::trace::fmt_f64(*d),
                crate::trace::fmt_f64(*b),
            ])?;
        }
        let initial = tr.deviations[0];
        let last = tr.final_deviation();
        let passed = initial <= tr.initial_bound && worst <= 1e-12 && last <= tr.final_bound + 1e-9;
        if !passed {
            log::error!(
                "seed {seed}, t = {t}: deviation {initial} (bound {}), final {last} (bound {}), product excess {worst}",
                tr.initial_bound,
                tr.final_bound
            );
        }
        cases.push(StabilityCase {
            seed,
            replace_index: t,
            initial_deviation: initial,
            initial_bound: tr.initial_bound,
            final_deviation: last,
            final_bound: tr.final_bound,
            max_product_violation: worst,
            passed,
        });
    }
    w.flush()?;
    Ok(StabilityReport { gamma, cases })
}

/// Build and write the theory report as pretty JSON.
pub fn run_theory_report(
    constants: &ProblemConstants,
    loss: &LossSpec,
    ts: &[u64],
    eps: &[f64],
    out: Option<&Path>,
) -> Result<TheoryReport> {
    let report = TheoryReport::build(constants, loss, ts, eps)?;
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(report)
}

/// Measured `‖mean_seeds g_T - ĝ_λ‖²` against `2ν/(λ(γ+T))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedIterateCheck {
    pub iterations: usize,
    pub measured: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedIterateReport {
    pub gamma: f64,
    pub sigma_sq: f64,
    pub sigma_sq_n: usize,
    pub init_gap: f64,
    pub nu: f64,
    pub checks: Vec<ExpectedIterateCheck>,
}

/// Vanilla SGD from `g_1 = 0` on the linear model, averaged over `seeds`
/// runs, compared with the expected-iterate bound. `σ²` is estimated at
/// `g_1` from `variance_n` draws and the initial gap comes from the oracle.
pub fn expected_iterate_check(
    dist: &SynthDistribution,
    loss: &LossSpec,
    lambda: f64,
    horizons: &[usize],
    seeds: u64,
    variance_n: usize,
) -> Result<ExpectedIterateReport> {
    let map = dist.linear_map();
    let r = map.kernel_bound();
    let smoothness = loss
        .smoothness(r)
        .ok_or_else(|| Error::config("smoothness is unbounded without a projection radius"))?;
    let gamma = default_gamma(RateRegime::Vanilla, smoothness, lambda);
    let oracle = g_lambda_oracle(dist, &map, loss, lambda)?;
    let zero = Hypothesis::zero_weights(map.output_dim());
    let init_gap = (dist.expected_risk(&zero, &map, loss, lambda)? - oracle.regularized_risk).max(0.0);
    let sigma = estimate_gradient_variance(dist, &map, loss, &zero, variance_n, 0)?;
    let grad_bound = loss
        .grad_bound(r)
        .finite()
        .ok_or_else(|| Error::config("unbounded gradient"))?;
    let mut constants = ProblemConstants::new(grad_bound, smoothness, r, dist.delta, lambda, gamma)?;
    constants.sigma_sq = sigma.value;
    constants.init_gap = init_gap;
    let nu = crate::theory::nu(&constants);
    let target = oracle.hypothesis.weights().expect("weights").to_vec();

    let mut checks = Vec::new();
    for &t in horizons {
        let cfg = TrainConfig::new(lambda, gamma, t);
        let finals = (0..seeds)
            .into_par_iter()
            .map(|s| {
                let mut stream = FreshStream::new(*dist, s);
                train(&cfg, loss, &map, &mut stream, None).map(|o| o.last.weights().expect("weights").to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        let mut mean_w = vec![0.0; target.len()];
        for w in &finals {
            for (m, v) in mean_w.iter_mut().zip(w) {
                *m += v / seeds as f64;
            }
        }
        let measured: f64 = mean_w.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum();
        checks.push(ExpectedIterateCheck {
            iterations: t,
            measured,
            bound: crate::theory::expected_iterate_bound(&constants, t as u64, false)?,
        });
    }
    Ok(ExpectedIterateReport {
        gamma,
        sigma_sq: sigma.value,
        sigma_sq_n: sigma.n,
        init_gap,
        nu,
        checks,
    })
}

/// Write `x1,x2,y` samples drawn from the generation stream.
pub fn generate_data(dist: &SynthDistribution, n: usize, seed: u64, out: &Path) -> Result<()> {
    let samples = dist.sample_from(n, &mut stream_rng(seed, Stream::Generate));
    let f = std::fs::File::create(out)?;
    crate::trace::write_samples(std::io::BufWriter::new(f), &samples)
}
