use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use expsgd::experiment::{
    execute_run, generate_data, reference_risk, replot, run_experiment, run_stability, run_theory_report,
    ExperimentSpec, FeatureConfig, Method, RunSpec, StabilitySpec,
};
use expsgd::hypothesis::{Hypothesis, HypothesisDoc};
use expsgd::synthdata::{g_lambda_oracle, ErrorMode, EvalSet};
use expsgd::theory::ProblemConstants;
use expsgd::trace::{read_samples, write_trace_file};
use expsgd::{Error, FeatureKind, LossKind, LossSpec, Result, SynthDistribution};

#[derive(Parser)]
#[command(
    name = "expsgd",
    version,
    about = "Regularized and averaged SGD on a low-noise synthetic problem"
)]
struct Cli {
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a dataset CSV with columns x1,x2,y.
    GenerateData {
        #[command(flatten)]
        dist: DistArgs,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one run and write its trace and hypotheses.
    Train(TrainArgs),
    /// Evaluate a saved hypothesis on the distribution.
    Evaluate {
        #[arg(long)]
        hypothesis: PathBuf,
        #[command(flatten)]
        dist: DistArgs,
        #[arg(long, default_value = "logistic")]
        loss: LossKind,
        /// Evaluate on this CSV instead of a drawn test set.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        test_n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Minimize the regularized risk exactly and write the minimizer.
    Oracle {
        #[command(flatten)]
        dist: DistArgs,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value = "logistic")]
        loss: LossKind,
        #[command(flatten)]
        features: FeatureArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the rate and threshold calculators as a JSON report.
    Theory(TheoryArgs),
    /// Check the coupled-run deviation bounds.
    Stability {
        #[command(flatten)]
        dist: DistArgs,
        #[arg(long, default_value_t = 0.01)]
        lambda: f64,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 2000)]
        iterations: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 10, 100, 500, 1000])]
        replace: Vec<usize>,
        #[arg(long = "seed", value_delimiter = ',', default_values_t = [1u64, 2, 3, 4, 5])]
        seeds: Vec<u64>,
        /// Replace with the original example (deviations must vanish).
        #[arg(long)]
        identical: bool,
        #[arg(long, default_value = "logistic")]
        loss: LossKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the (δ, λ, seed, method) grid with λ selection and plots.
    Experiment {
        /// JSON file with experiment fields; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "delta", value_delimiter = ',')]
        deltas: Vec<f64>,
        #[arg(long = "lambda", value_delimiter = ',')]
        lambdas: Vec<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long = "seed", value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Only run averaged SGD.
        #[arg(long)]
        averaging: bool,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Regenerate the SVG panels of an experiment directory from its traces.
    Plot {
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args, Clone)]
struct DistArgs {
    #[arg(long, default_value_t = 0.4)]
    delta: f64,
    #[arg(long, default_value_t = 0.1)]
    margin_r: f64,
    /// Probability of the left box.
    #[arg(long, default_value_t = 0.5)]
    left_weight: f64,
}

impl DistArgs {
    fn build(&self) -> Result<SynthDistribution> {
        SynthDistribution::with_geometry(self.delta, self.margin_r, [self.left_weight, 1.0 - self.left_weight])
    }
}

#[derive(Args, Clone)]
struct FeatureArgs {
    #[arg(long, default_value = "linear")]
    features: FeatureKind,
    #[arg(long, default_value_t = 512)]
    rff_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    rff_sigma: f64,
}

impl FeatureArgs {
    fn config(&self) -> FeatureConfig {
        FeatureConfig {
            kind: self.features,
            rff_dim: self.rff_dim,
            rff_sigma: self.rff_sigma,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    dist: DistArgs,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 20_000)]
    iterations: usize,
    #[arg(long)]
    averaging: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixed γ; tuned when absent.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    gamma_tuning_steps: usize,
    #[arg(long, default_value = "logistic")]
    loss: LossKind,
    #[arg(long)]
    projection_radius: Option<f64>,
    #[command(flatten)]
    features: FeatureArgs,
    #[arg(long, default_value_t = 100)]
    checkpoint_every: usize,
    #[arg(long, default_value_t = 100_000)]
    test_n: usize,
    #[arg(long, default_value_t = 10_000)]
    train_monitor_n: usize,
    /// Sample with replacement from a fixed training set of this size.
    #[arg(long)]
    finite_train: Option<usize>,
    /// Report the exact population error instead of the test-set error.
    #[arg(long)]
    exact_error: bool,
    /// Also trace the last iterate when averaging.
    #[arg(long)]
    trace_last: bool,
    #[arg(long, default_value_t = 1e-8)]
    reference_lambda: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, default_value = "logistic")]
    loss: LossKind,
    #[arg(long, default_value_t = 0.4)]
    delta: f64,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    gamma: f64,
    /// Kernel bound R.
    #[arg(long = "R", default_value_t = 1.0)]
    kernel_bound: f64,
    /// Gradient bound M; derived from the loss when absent.
    #[arg(long = "M")]
    grad_bound: Option<f64>,
    /// Smoothness L; derived from the loss when absent.
    #[arg(long = "L")]
    smoothness: Option<f64>,
    #[arg(long)]
    projection_radius: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    sigma_sq: f64,
    #[arg(long, default_value_t = 0.0)]
    init_gap: f64,
    #[arg(long, default_value_t = 0.0)]
    init_dist: f64,
    #[arg(long, default_value_t = 0.0)]
    init_norm: f64,
    #[arg(long = "t", value_delimiter = ',', default_values_t = [1000u64, 20_000, 1_000_000])]
    ts: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.01])]
    eps: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn loss_spec(kind: LossKind, radius: Option<f64>) -> Result<LossSpec> {
    let loss = LossSpec::new(kind);
    match radius {
        Some(r) => loss.with_projection(r),
        None => Ok(loss),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let dist = a.dist.build()?;
    let method = if a.averaging { Method::Averaged } else { Method::Sgd };
    let mut spec = RunSpec::new(dist, a.lambda, a.iterations, a.seed, method);
    spec.loss = loss_spec(a.loss, a.projection_radius)?;
    spec.features = a.features.config();
    spec.gamma = a.gamma;
    spec.gamma_tuning_steps = a.gamma_tuning_steps;
    spec.checkpoint_every = a.checkpoint_every;
    spec.test_n = a.test_n;
    spec.train_monitor_n = a.train_monitor_n;
    spec.finite_train = a.finite_train;
    spec.error_mode = if a.exact_error {
        ErrorMode::Exact
    } else {
        ErrorMode::TestSet
    };
    spec.trace_last = a.trace_last;
    let reference = reference_risk(&dist, &spec.loss, &spec.features, a.seed, a.reference_lambda)?;
    let result = execute_run(&spec, reference)?;
    std::fs::create_dir_all(&a.out_dir)?;
    write_trace_file(&a.out_dir.join("trace.csv"), &result.output.trace)?;
    if a.trace_last && a.averaging {
        write_trace_file(&a.out_dir.join("trace_last.csv"), &result.output.last_trace)?;
    }
    write_json(
        &a.out_dir.join("hypothesis.json"),
        &result.output.output().to_doc(&result.map),
    )?;
    write_json(&a.out_dir.join("last.json"), &result.output.last.to_doc(&result.map))?;
    let last = result.output.trace.last();
    print_json(&json!({
        "gamma": result.gamma,
        "gamma_min": result.gamma_min,
        "reference_risk": reference,
        "final": last,
    }))
}

fn cmd_evaluate(
    path: &Path,
    dist: SynthDistribution,
    loss: LossSpec,
    data: Option<&Path>,
    test_n: usize,
    seed: u64,
) -> Result<()> {
    let doc: HypothesisDoc = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let (g, map) = Hypothesis::from_doc(&doc)?;
    let map = map.unwrap_or_else(|| dist.linear_map());
    let samples = match data {
        Some(p) => read_samples(std::fs::File::open(p)?)?,
        None => dist.sample_stream(test_n, seed, expsgd::rng::Stream::Test),
    };
    let set = EvalSet::new(samples, &map)?;
    let (test_loss, test_err) = set.loss_and_error(&g, &map, &loss)?;
    let exact_err = dist.expected_classification_error(&g, &map)?;
    print_json(&json!({
        "test_n": set.len(),
        "test_loss": test_loss,
        "test_err": test_err,
        "expected_error": exact_err,
        "excess_error": exact_err - dist.bayes_error(),
        "bayes_error": dist.bayes_error(),
        "expected_risk": dist.expected_risk(&g, &map, &loss, 0.0)?,
        "bayes_risk": dist.bayes_risk(&loss)?,
        "norm": g.hilbert_norm(),
    }))
}

fn cmd_theory(a: TheoryArgs) -> Result<()> {
    let loss = loss_spec(a.loss, a.projection_radius)?;
    let grad_bound = match a.grad_bound {
        Some(m) => m,
        None => loss
            .grad_bound(a.kernel_bound)
            .finite()
            .ok_or_else(|| Error::Config("M is unbounded for this loss; pass --M or a projection radius".into()))?,
    };
    let smoothness = match a.smoothness {
        Some(l) => l,
        None => loss
            .smoothness(a.kernel_bound)
            .ok_or_else(|| Error::Config("L is unbounded for this loss; pass --L or a projection radius".into()))?,
    };
    let mut c = ProblemConstants::new(grad_bound, smoothness, a.kernel_bound, a.delta, a.lambda, a.gamma)?;
    c.sigma_sq = a.sigma_sq;
    c.init_gap = a.init_gap;
    c.init_dist = a.init_dist;
    c.init_norm = a.init_norm;
    c.validate()?;
    let report = run_theory_report(&c, &loss, &a.ts, &a.eps, a.out.as_deref())?;
    print_json(&report)?;
    if report.max_cross_check_residual > 1e-12 {
        return Err(Error::Assertion(format!(
            "cross-check residual {} exceeds 1e-12",
            report.max_cross_check_residual
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { dist, n, seed, out } => generate_data(&dist.build()?, n, seed, &out),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate {
            hypothesis,
            dist,
            loss,
            data,
            test_n,
            seed,
        } => cmd_evaluate(
            &hypothesis,
            dist.build()?,
            LossSpec::new(loss),
            data.as_deref(),
            test_n,
            seed,
        ),
        Command::Oracle {
            dist,
            lambda,
            loss,
            features,
            seed,
            out,
        } => {
            let dist = dist.build()?;
            let loss = LossSpec::new(loss);
            let map = features.config().build(&dist, seed)?;
            let sol = g_lambda_oracle(&dist, &map, &loss, lambda)?;
            if let Some(p) = out {
                write_json(&p, &sol.hypothesis.to_doc(&map))?;
            }
            print_json(&json!({
                "lambda": lambda,
                "regularized_risk": sol.regularized_risk,
                "risk": sol.risk,
                "norm": sol.norm,
                "iterations": sol.iterations,
                "grad_norm": sol.grad_norm,
                "expected_error": dist.expected_classification_error(&sol.hypothesis, &map)?,
            }))
        }
        Command::Theory(a) => cmd_theory(a),
        Command::Stability {
            dist,
            lambda,
            gamma,
            iterations,
            replace,
            seeds,
            identical,
            loss,
            out,
        } => {
            let spec = StabilitySpec {
                dist: dist.build()?,
                loss: LossSpec::new(loss),
                lambda,
                gamma,
                iterations,
                replace_indices: replace,
                seeds,
                identical,
            };
            let report = run_stability(&spec, &out)?;
            print_json(&report)?;
            if report.all_passed() {
                Ok(())
            } else {
                let failed = report.cases.iter().filter(|c| !c.passed).count();
                Err(Error::Assertion(format!("{failed} coupled runs violate their bounds")))
            }
        }
        Command::Experiment {
            config,
            deltas,
            lambdas,
            iterations,
            seeds,
            averaging,
            jobs,
            out_dir,
        } => {
            let mut spec = match config {
                Some(p) => ExperimentSpec::from_json(&std::fs::read_to_string(p)?)?,
                None => ExperimentSpec::default(),
            };
            if !deltas.is_empty() {
                spec.deltas = deltas;
            }
            if !lambdas.is_empty() {
                spec.lambdas = lambdas;
            }
            if let Some(t) = iterations {
                spec.iterations = t;
            }
            if !seeds.is_empty() {
                spec.seeds = seeds;
            }
            if averaging {
                spec.methods = vec![Method::Averaged];
            }
            let manifest = run_experiment(&spec, &out_dir, jobs)?;
            print_json(&json!({
                "cells": manifest.cells.len(),
                "failures": manifest.failures,
                "selections": manifest.selections,
            }))?;
            if manifest.failures.is_empty() {
                Ok(())
            } else {
                Err(Error::Divergence {
                    iter: 0,
                    what: format!("{} grid cells failed; see manifest.json", manifest.failures.len()),
                })
            }
        }
        Command::Plot { out_dir } => {
            for p in replot(&out_dir)? {
                println!("{p}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
