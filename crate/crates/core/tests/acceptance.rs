//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero when any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use expsgd::experiment::{
    execute_run, expected_iterate_check, reference_risk, run_experiment, run_stability, ExperimentSpec, Method,
    RunSpec, StabilitySpec,
};
use expsgd::optimizer::{averaging_beta, averaging_weight, default_gamma, train, RateRegime};
use expsgd::synthdata::{g_lambda_oracle, ErrorMode, FreshStream};
use expsgd::theory::{concentration_cross_check, martingale_sum_bound, sgd_bound, ProblemConstants};
use expsgd::{Hypothesis, LossSpec, SynthDistribution, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const DELTAS: [f64; 3] = [0.1, 0.25, 0.4];

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("1 bayes attainment", bayes_attainment),
        ("2 ratio decay", ratio_decay),
        ("3 noise ordering", noise_ordering),
        ("4 averaging identities", averaging_identities),
        ("5 iterate ball", iterate_ball),
        ("6 stability bounds", stability_bounds),
        ("7 expected iterate rate", expected_iterate_rate),
        ("8 excess-risk identity", excess_risk_identity),
        ("9 theory calculators", theory_calculators),
        ("10 lambda sweep monotonicity", lambda_sweep),
        ("11 determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        println!(
            "[{}] criterion {name}: {detail} ({:.1} s)",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        if !ok {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: {} failed: {}", failed.len(), failed.join(", "));
        std::process::exit(1);
    }
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn averaged_run(delta: f64, lambda: f64, seed: u64, mode: ErrorMode) -> Result<Vec<expsgd::TraceRow>, String> {
    let dist = SynthDistribution::new(delta).map_err(s)?;
    let mut spec = RunSpec::new(dist, lambda, 20_000, seed, Method::Averaged);
    spec.error_mode = mode;
    let reference = reference_risk(&dist, &spec.loss, &spec.features, seed, 1e-8).map_err(s)?;
    Ok(execute_run(&spec, reference).map_err(s)?.output.trace)
}

fn bayes_attainment() -> Outcome {
    let mut errs = Vec::new();
    let mut slowest: f64 = 0.0;
    for seed in SEEDS {
        let start = Instant::now();
        let trace = averaged_run(0.4, 1e-4, seed, ErrorMode::TestSet)?;
        slowest = slowest.max(start.elapsed().as_secs_f64());
        errs.push(trace.last().ok_or("empty trace")?.test_err);
    }
    let hits = errs.iter().filter(|e| **e <= 0.105).count();
    Ok((
        hits >= 4 && slowest <= 60.0,
        format!("final test_err {errs:.5?}, {hits}/5 ≤ 0.105, slowest run {slowest:.1} s"),
    ))
}

fn ratio_decay() -> Outcome {
    let mut early = Vec::new();
    let mut late = Vec::new();
    for seed in SEEDS {
        let trace = averaged_run(0.4, 1e-4, seed, ErrorMode::Exact)?;
        let at = |iter: usize| -> Result<f64, String> {
            let row = trace
                .iter()
                .find(|r| r.iter == iter)
                .ok_or(format!("no row at {iter}"))?;
            row.ratio.ok_or(format!("undefined ratio at {iter} (seed {seed})"))
        };
        early.push(at(500)?);
        late.push(at(20_000)?);
    }
    let (a, b) = (mean(&early), mean(&late));
    Ok((
        b <= 0.2 * a,
        format!("mean ratio {a:.4e} at 500, {b:.4e} at 20000 (exact error)"),
    ))
}

fn noise_ordering() -> Outcome {
    let dir = tempfile::tempdir().map_err(s)?;
    let spec = ExperimentSpec {
        methods: vec![Method::Averaged],
        ..ExperimentSpec::default()
    };
    let manifest = run_experiment(&spec, dir.path(), None).map_err(s)?;
    if !manifest.failures.is_empty() {
        return Err(format!("{} failed cells", manifest.failures.len()));
    }
    let mut errs = Vec::new();
    for delta in DELTAS {
        let sel = manifest.selection(delta, Method::Averaged).ok_or("missing selection")?;
        errs.push((delta, sel.lambda, sel.mean_final_test_err));
    }
    let ordered = errs[2].2 < errs[1].2 && errs[1].2 < errs[0].2;
    let close = errs.iter().all(|(d, _, e)| (e - (0.5 - d)).abs() <= 0.02);
    let detail = errs
        .iter()
        .map(|(d, l, e)| format!("δ={d}: {e:.5} (λ={l})"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((ordered && close, detail))
}

fn averaging_identities() -> Outcome {
    let mut worst_sum: f64 = 0.0;
    for gamma in [1.0, 52049.0] {
        for t in [1usize, 10, 1_000, 1_000_000] {
            let mut sum = 0.0;
            for k in 1..=t + 1 {
                sum += averaging_weight(gamma, k, t).map_err(s)?;
            }
            worst_sum = worst_sum.max((sum - 1.0).abs());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_rec: f64 = 0.0;
    for _ in 0..20 {
        let t: usize = rng.random_range(1..2000);
        let gamma: f64 = rng.random_range(1.0..1000.0);
        let stream: Vec<Vec<f64>> = (0..=t)
            .map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let mut avg = Hypothesis::Weights(stream[0].clone());
        for (k, w) in stream.iter().enumerate().skip(1) {
            avg.blend(&Hypothesis::Weights(w.clone()), averaging_beta(gamma, k).map_err(s)?)
                .map_err(s)?;
        }
        let mut direct = vec![0.0; 3];
        for (k, w) in stream.iter().enumerate() {
            let a = averaging_weight(gamma, k + 1, t).map_err(s)?;
            for (d, v) in direct.iter_mut().zip(w) {
                *d += a * v;
            }
        }
        let got = avg.weights().ok_or("weights")?;
        for (g, d) in got.iter().zip(&direct) {
            worst_rec = worst_rec.max((g - d).abs());
        }
    }
    Ok((
        worst_sum <= 1e-12 && worst_rec <= 1e-10,
        format!("max |Σα - 1| = {worst_sum:.2e}, max recursion gap {worst_rec:.2e}"),
    ))
}

fn iterate_ball() -> Outcome {
    let dist = SynthDistribution::new(0.4).map_err(s)?;
    let map = dist.linear_map();
    let loss = LossSpec::logistic();
    let smooth = loss.smoothness(map.kernel_bound()).ok_or("smoothness")?;
    let mut worst = f64::NEG_INFINITY;
    let mut steps = 0;
    for lambda in [0.01, 1e-4] {
        let gamma = default_gamma(RateRegime::Vanilla, smooth, lambda);
        let mut cfg = TrainConfig::new(lambda, gamma, 10_000);
        cfg.record_norms = true;
        for seed in 1..=10u64 {
            let mut stream = FreshStream::new(dist, seed);
            let out = train(&cfg, &loss, &map, &mut stream, None).map_err(s)?;
            let ball = out.constants.ball_radius(lambda);
            for n in &out.iterate_norms {
                worst = worst.max(n / ball);
            }
            steps += out.iterate_norms.len();
        }
    }
    Ok((worst <= 1.0, format!("{steps} steps, max ‖g_t‖/radius = {worst:.4e}")))
}

fn stability_bounds() -> Outcome {
    let dir = tempfile::tempdir().map_err(s)?;
    let spec = StabilitySpec {
        dist: SynthDistribution::new(0.4).map_err(s)?,
        loss: LossSpec::logistic(),
        lambda: 0.01,
        gamma: None,
        iterations: 2000,
        replace_indices: vec![1, 10, 100, 1000, 2000],
        seeds: SEEDS.to_vec(),
        identical: false,
    };
    let report = run_stability(&spec, &dir.path().join("stability.csv")).map_err(s)?;
    let initial = report
        .cases
        .iter()
        .map(|c| c.initial_deviation / c.initial_bound)
        .fold(0.0, f64::max);
    let fin = report
        .cases
        .iter()
        .map(|c| c.final_deviation - c.final_bound)
        .fold(f64::NEG_INFINITY, f64::max);
    let ok = report.cases.len() == 25
        && report
            .cases
            .iter()
            .all(|c| c.initial_deviation <= c.initial_bound && c.final_deviation <= c.final_bound + 1e-9);
    Ok((
        ok,
        format!(
            "{} cases, max initial deviation/bound {initial:.3}, max final excess {fin:.3e}, product bound held: {}",
            report.cases.len(),
            report.all_passed()
        ),
    ))
}

fn expected_iterate_rate() -> Outcome {
    let dist = SynthDistribution::new(0.4).map_err(s)?;
    let report = expected_iterate_check(&dist, &LossSpec::logistic(), 0.1, &[100, 1000], 200, 100_000).map_err(s)?;
    let ok = report.checks.iter().all(|c| c.measured <= 1.1 * c.bound);
    let detail = report
        .checks
        .iter()
        .map(|c| format!("T={}: {:.3e} vs bound {:.3e}", c.iterations, c.measured, c.bound))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((
        ok,
        format!("{detail} (σ² = {:.4}, ν = {:.4})", report.sigma_sq, report.nu),
    ))
}

fn excess_risk_identity() -> Outcome {
    let loss = LossSpec::logistic();
    let mut worst: f64 = 0.0;
    let mut worst_exact: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for delta in DELTAS {
        let dist = SynthDistribution::new(delta).map_err(s)?;
        let map = dist.linear_map();
        let quad = dist.quadrature();
        let best = g_lambda_oracle(&dist, &map, &loss, 1e-8).map_err(s)?.risk;
        let bayes = dist.bayes_risk(&loss).map_err(s)?;
        let count = if delta == 0.4 { 18 } else { 16 };
        for _ in 0..count {
            let w: Vec<f64> = (0..map.output_dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let g = Hypothesis::Weights(w);
            let risk = quad.risk(&g, &map, &loss, 0.0).map_err(s)?;
            let bregman = quad.bregman_excess(&g, &map, &loss).map_err(s)?;
            worst = worst.max(((risk - best) - bregman).abs());
            worst_exact = worst_exact.max(((risk - bayes) - bregman).abs());
        }
    }
    Ok((
        worst <= 1e-6,
        format!(
            "50 hypotheses, max |ΔL - E[d]| against the λ=1e-8 oracle {worst:.3e} (tolerance 1e-6); \
             against the exact Bayes risk {worst_exact:.3e}"
        ),
    ))
}

fn theory_calculators() -> Outcome {
    let loss = LossSpec::logistic();
    let unit = ProblemConstants::new(1.0, 0.25, 1.0, 0.4, 1.0, 1.0).map_err(s)?;
    let b = sgd_bound(&unit, &loss, 4607, true).map_err(s)?;
    let expect = 2.0 * (-(9f64.ln().powi(2))).exp();
    let rel = (b - expect).abs() / expect;
    let mart = martingale_sum_bound(&unit, 143, false, true).map_err(s)?;

    let mut residual: f64 = 0.0;
    for delta in [0.05, 0.1, 0.25, 0.4] {
        for lambda in [1.0, 0.1, 0.01] {
            for gamma in [1.0, 10.0, 1000.0] {
                let c = ProblemConstants::new(1.0, 0.25, 1.0, delta, lambda, gamma).map_err(s)?;
                for t in [1u64, 100, 4607, 1_000_000, 1_000_000_000] {
                    for averaged in [false, true] {
                        let x = concentration_cross_check(&c, &loss, t, averaged).map_err(s)?;
                        if x.theorem > 0.0 && x.composed > 0.0 {
                            residual = residual.max(x.residual);
                        }
                    }
                }
            }
        }
    }
    Ok((
        rel <= 1e-12 && mart == 1.0 && residual <= 1e-12,
        format!("sgd_bound rel err {rel:.2e}, martingale bound {mart}, max cross-check residual {residual:.2e}"),
    ))
}

fn lambda_sweep() -> Outcome {
    let loss = LossSpec::logistic();
    let mut ok = true;
    let mut parts = Vec::new();
    for delta in DELTAS {
        let dist = SynthDistribution::new(delta).map_err(s)?;
        let map = dist.linear_map();
        let mut prev: Option<(f64, f64)> = None;
        let mut norms = Vec::new();
        for lambda in [1e-1, 1e-2, 1e-3, 1e-4] {
            let sol = g_lambda_oracle(&dist, &map, &loss, lambda).map_err(s)?;
            if let Some((n, r)) = prev {
                ok &= sol.norm >= n - 1e-12 && sol.risk <= r + 1e-12;
            }
            prev = Some((sol.norm, sol.risk));
            norms.push(format!("{:.3}/{:.5}", sol.norm, sol.risk));
        }
        parts.push(format!("δ={delta}: [{}]", norms.join(", ")));
    }
    Ok((ok, format!("‖ĝ‖/L(ĝ) {}", parts.join("; "))))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_expsgd"))
        .args(args)
        .output()
        .map_err(s)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn csv_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    for entry in walk(dir)? {
        if entry.extension().is_some_and(|e| e == "csv") {
            let rel = entry.strip_prefix(dir).map_err(s)?.display().to_string();
            out.push((rel, std::fs::read(&entry).map_err(s)?));
        }
    }
    out.sort();
    Ok(out)
}

fn walk(dir: &Path) -> Result<Vec<std::path::PathBuf>, String> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).map_err(s)? {
        let p = e.map_err(s)?.path();
        if p.is_dir() {
            out.extend(walk(&p)?);
        } else {
            out.push(p);
        }
    }
    Ok(out)
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(s)?;
    let config = root.path().join("grid.json");
    std::fs::write(
        &config,
        r#"{"deltas": [0.25, 0.4], "lambdas": [0.01, 0.001], "T": 2000, "seeds": [1, 2],
            "test_n": 5000, "train_monitor_n": 1000, "gamma_tuning_steps": 200}"#,
    )
    .map_err(s)?;
    let run = |tag: &str| -> Result<Vec<(String, Vec<u8>)>, String> {
        let d = root.path().join(tag);
        std::fs::create_dir_all(&d).map_err(s)?;
        let p = |name: &str| d.join(name).display().to_string();
        cli(&["generate-data", "--n", "2000", "--seed", "7", "--out", &p("data.csv")])?;
        cli(&[
            "train",
            "--lambda",
            "0.001",
            "--iterations",
            "3000",
            "--averaging",
            "--seed",
            "7",
            "--test-n",
            "5000",
            "--trace-last",
            "--out-dir",
            &p("train"),
        ])?;
        cli(&[
            "train",
            "--lambda",
            "0.01",
            "--iterations",
            "2000",
            "--seed",
            "3",
            "--features",
            "rff",
            "--rff-dim",
            "64",
            "--test-n",
            "2000",
            "--finite-train",
            "500",
            "--reference-lambda",
            "1e-4",
            "--out-dir",
            &p("rff"),
        ])?;
        cli(&[
            "stability",
            "--iterations",
            "500",
            "--replace",
            "1,250",
            "--seed",
            "1,2",
            "--out",
            &p("stab.csv"),
        ])?;
        cli(&[
            "experiment",
            "--config",
            &config.display().to_string(),
            "--jobs",
            "1",
            "--out-dir",
            &p("grid"),
        ])?;
        csv_files(&d)
    };
    let a = run("first")?;
    let b = run("second")?;
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let ok = a.len() == b.len() && a.len() > 4 && differing.is_empty();
    Ok((
        ok,
        format!(
            "{} CSV files compared, {} differ {differing:?}",
            a.len(),
            differing.len()
        ),
    ))
}
