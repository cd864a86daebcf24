//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Failures are reported but do not fail `cargo test` unless
//! `SELBOOST_ACCEPTANCE_STRICT=1` is set.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use selboost::baselearner::BaseLearner;
use selboost::boosting::{boost_fit, BoostConfig, BoostFit};
use selboost::linalg;
use selboost::polyhedron::{
    build_gamma, polyhedron_pvalue, truncation_limits, Alternative, PathCertificate, PathSignOracle,
};
use selboost::sampler::{
    effective_sample_size, proposal_draws, selective_inference, test_vector_linear, Congruency, Proposal,
    SamplerConfig, TestSpec,
};
use selboost::sim::{
    gen_linear, run_study, write_records, Aggregates, Method, MethodSummary, Methods, ScenarioConfig, SimData,
    StoppingSpec,
};
use selboost_cli::ingest::Table;
use selboost_cli::{run, RunConfig, RunOptions};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn learners_for(x: &DMatrix<f64>) -> Vec<BaseLearner> {
    let x = linalg::center_columns(x, &linalg::column_means(x));
    (0..x.ncols()).map(|j| BaseLearner::linear(j, format!("x{j}"), &x.column(j).into_owned()).unwrap()).collect()
}

fn selected_design(fit: &BoostFit, learners: &[BaseLearner]) -> DMatrix<f64> {
    let blocks: Vec<&DMatrix<f64>> = fit.selected_set().iter().map(|&j| learners[j].design()).collect();
    linalg::hstack(&blocks)
}

fn summary(a: &Aggregates, m: Method) -> &MethodSummary {
    a.methods.iter().find(|s| s.method == m).expect("method summary")
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

fn c1_ols_limit() -> Outcome {
    let d = gen_linear(100, 4, &[4.0, -3.0, 2.0, -1.0], 1.0, 101);
    let learners = learners_for(&d.x);
    let fit = boost_fit(&d.y, &learners, &BoostConfig::new(0.1, 5000).unwrap()).unwrap();
    let xa = selected_design(&fit, &learners);
    let beta = linalg::ols(&xa, &d.y).unwrap();
    let boosted: Vec<f64> = fit.selected_set().iter().map(|j| fit.coefficients[j][0]).collect();
    let diff = boosted.iter().zip(beta.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(diff < 1e-6, format!("{} columns selected, max |boosted - OLS| = {diff:.2e} (< 1e-6)", boosted.len()))
}

/// Small seeded instance: n = 10, three covariates.
fn small_instance(seed: u64, m_stop: usize) -> (SimData, Vec<BaseLearner>, BoostFit) {
    let d = gen_linear(10, 2, &[1.5], 1.0, seed);
    let learners = learners_for(&d.x);
    let fit = boost_fit(&d.y, &learners, &BoostConfig::new(0.1, m_stop).unwrap()).unwrap();
    (d, learners, fit)
}

fn line_grid(v: &DVector<f64>, y: &DVector<f64>, points: usize) -> Vec<DVector<f64>> {
    let vv = v.norm_squared();
    let r_obs = v.dot(y);
    let z = y - v * (r_obs / vv);
    let half = 4.0 * y.norm() / (y.len() as f64).sqrt() * vv.sqrt();
    (0..points)
        .map(|k| {
            let r = r_obs - half + 2.0 * half * k as f64 / (points - 1) as f64;
            &z + v * (r / vv)
        })
        .collect()
}

fn c2_rerun_equivalence() -> Outcome {
    let mut discrepancies = 0;
    let mut inside = 0;
    let mut total = 0;
    for (seed, m) in [(1u64, 3usize), (2, 5), (3, 5)] {
        let (d, learners, fit) = small_instance(seed, m);
        let cert = PathCertificate::from_fit(&fit, 0.1, &learners).unwrap();
        let poly = build_gamma(&cert).unwrap();
        let oracle = PathSignOracle::new(&learners, 0.1, &fit);
        let v = test_vector_linear(&selected_design(&fit, &learners), 0).unwrap();
        for y in line_grid(&v, &d.y, 200) {
            let a = poly.contains(&y);
            let b = oracle.is_congruent(&y).unwrap();
            discrepancies += usize::from(a != b);
            inside += usize::from(a);
            total += 1;
        }
    }
    outcome(
        discrepancies == 0,
        format!("{discrepancies} discrepancies over {total} grid points ({inside} inside the polyhedron)"),
    )
}

fn c3_sampler_vs_analytic() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = Vec::new();
    let mut seed = 10u64;
    while cases.len() < 10 {
        seed += 1;
        let m = if seed.is_multiple_of(2) { 3 } else { 5 };
        let (d, learners, fit) = small_instance(seed, m);
        let v = test_vector_linear(&selected_design(&fit, &learners), 0).unwrap();
        let oracle = PathSignOracle::new(&learners, 0.1, &fit);
        // congruent grid points must form one run
        let flags: Vec<bool> = line_grid(&v, &d.y, 200).iter().map(|y| oracle.is_congruent(y).unwrap()).collect();
        let runs = flags.windows(2).filter(|w| !w[0] && w[1]).count() + usize::from(flags[0]);
        if runs != 1 {
            continue;
        }
        let cert = PathCertificate::from_fit(&fit, 0.1, &learners).unwrap();
        let interval = truncation_limits(&build_gamma(&cert).unwrap(), &v, &d.y).unwrap();
        let sigma2 = d.sigma * d.sigma;
        let exact = polyhedron_pvalue(interval, &v, sigma2, &d.y, 0.0, Alternative::TwoSided).unwrap();
        let spec = TestSpec::direction(v, 0.0, sigma2).unwrap();
        let cfg = SamplerConfig { draws: 2000, seed, ..SamplerConfig::default() };
        let est = selective_inference(&oracle, &d.y, &spec, &cfg).unwrap().p_value;
        worst = worst.max((est - exact).abs());
        cases.push(format!("{exact:.3}/{est:.3}"));
    }
    outcome(worst < 0.02, format!("max |sampled - analytic| = {worst:.4} (< 0.02); exact/sampled: {}", cases.join(" ")))
}

fn null_study() -> Aggregates {
    let mut cfg = ScenarioConfig::preset("linear-n25-p8-snr1").unwrap();
    cfg.replications = 200;
    cfg.draws = 600;
    cfg.methods = Methods { sampling: true, polyhedron: false, naive: true };
    run_study(&cfg).unwrap().aggregates
}

fn c4_null_uniformity(a: &Aggregates) -> Outcome {
    let s = summary(a, Method::Sampling);
    let naive = summary(a, Method::Naive);
    let ks = s.ks_noise.unwrap_or(1.0);
    let rej = s.rejection_noise.unwrap_or(1.0);
    outcome(
        ks < 0.12 && (0.02..=0.09).contains(&rej),
        format!(
            "{} admissible of {}, {} noise tests: KS = {ks:.4} (< 0.12), rejection = {rej:.4} (in [0.02, 0.09]); naive KS = {}",
            a.admissible,
            a.replications,
            s.noise_tests,
            fmt(naive.ks_noise)
        ),
    )
}

fn c5_coverage(a: &Aggregates) -> Outcome {
    let s = summary(a, Method::Sampling);
    let noise = s.coverage_noise.unwrap_or(0.0);
    let signal = s.coverage_signal.unwrap_or(0.0);
    outcome(
        (noise - 0.9566).abs() <= 0.03 && (signal - 0.9699).abs() <= 0.03,
        format!("noise coverage = {noise:.4} (0.9566 +/- 0.03), signal coverage = {signal:.4} (0.9699 +/- 0.03)"),
    )
}

fn c6_power_ordering() -> Outcome {
    let mut cfg = ScenarioConfig::linear("linear-n25-p8-snr4", 25, 4, 4.0, 40);
    cfg.replications = 180;
    cfg.methods = Methods { sampling: true, polyhedron: true, naive: false };
    let a = run_study(&cfg).unwrap().aggregates;
    let ms = summary(&a, Method::Sampling).median_p_by_variable.get(&0).copied();
    let mp = summary(&a, Method::Polyhedron).median_p_by_variable.get(&0).copied();
    let pass = match (ms, mp) {
        (Some(s), Some(p)) => s < 0.05 && s < p && a.admissible >= 100,
        _ => false,
    };
    outcome(
        pass,
        format!(
            "{} admissible (>= 100): median p for the beta = 4 coefficient, sampling = {:.3e}, polyhedron = {:.3e}",
            a.admissible,
            ms.unwrap_or(f64::NAN),
            mp.unwrap_or(f64::NAN)
        ),
    )
}

fn c7_cv_validity() -> Outcome {
    let mut cfg = ScenarioConfig::preset("linear-n25-p8-snr1").unwrap();
    cfg.replications = 100;
    cfg.stopping = StoppingSpec::Cv { folds: 5, grid_max: 100 };
    let a = run_study(&cfg).unwrap().aggregates;
    let s = summary(&a, Method::Sampling);
    let ks = s.ks_noise.unwrap_or(1.0);
    outcome(ks < 0.15, format!("{} admissible, {} noise tests: KS = {ks:.4} (< 0.15)", a.admissible, s.noise_tests))
}

fn c8_smooth_function_test() -> Outcome {
    let mut cfg = ScenarioConfig::preset("additive-n300").unwrap();
    cfg.replications = 100;
    cfg.draws = 600;
    let a = run_study(&cfg).unwrap().aggregates;
    let s = summary(&a, Method::Sampling);
    let ks = s.ks_noise.unwrap_or(1.0);
    let power: BTreeMap<usize, f64> =
        [0, 1].iter().map(|j| (*j, s.rejection_by_variable.get(j).copied().unwrap_or(0.0))).collect();
    let ks_ok = ks < 0.15;
    let power_ok = power.values().all(|p| *p >= 0.9);
    outcome(
        ks_ok && power_ok,
        format!(
            "noise KS = {ks:.4} (< 0.15: {}), signal rejection rates = {:.2}, {:.2} (>= 0.90: {})",
            if ks_ok { "ok" } else { "no" },
            power[&0],
            power[&1],
            if power_ok { "ok" } else { "no" }
        ),
    )
}

fn c9_ess_identities() -> Outcome {
    let b = 600;
    let equal = effective_sample_size(&vec![0.7; b]).unwrap();
    let small = effective_sample_size(&[1.0, 2.0, 3.0]).unwrap();
    let spec = TestSpec::direction(DVector::from_vec(vec![1.0, -1.0, 0.5]), 0.0, 2.0).unwrap();
    let (_, lw) = proposal_draws(&spec, 0.0, None, b, 7, Proposal::NormalAtObs).unwrap();
    let unit = lw.iter().all(|w| w.exp() == 1.0);
    let pass = (equal - b as f64).abs() < 1e-9 && (small - 36.0 / 14.0).abs() < 1e-12 && unit;
    outcome(
        pass,
        format!("equal weights ESS = {equal} (B = {b}), (1,2,3) ESS = {small:.12} (36/14), proposal = target gives unit weights: {unit}"),
    )
}

fn cli_report(threads: usize) -> String {
    let d = gen_linear(25, 4, &[4.0, -3.0, 2.0, -1.0], 1.0, 77);
    let mut csv = String::from("y");
    for j in 0..d.x.ncols() {
        csv.push_str(&format!(",x{j}"));
    }
    csv.push('\n');
    for i in 0..d.y.len() {
        csv.push_str(&format!("{}", d.y[i]));
        for j in 0..d.x.ncols() {
            csv.push_str(&format!(",{}", d.x[(i, j)]));
        }
        csv.push('\n');
    }
    let mut toml = String::from(
        "data = \"unused.csv\"\nresponse = \"y\"\n[stopping]\nkind = \"cv\"\nfolds = 5\ngrid_max = 60\nseed = 4\n[inference]\ndraws = 300\nseed = 9\n",
    );
    for j in 0..d.x.ncols() {
        toml.push_str(&format!("[[learner]]\ntype = \"linear\"\ncolumn = \"x{j}\"\n"));
    }
    let cfg = RunConfig::from_toml(&toml).unwrap();
    let table = Table::from_reader(csv.as_bytes()).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| run(&cfg, &table, &RunOptions { fit_only: false, timing: false }).unwrap().to_json().unwrap())
}

fn study_records(threads: usize) -> Vec<u8> {
    let mut cfg = ScenarioConfig::preset("linear-n25-p8-snr1").unwrap();
    cfg.replications = 20;
    cfg.draws = 200;
    cfg.methods = Methods { sampling: true, polyhedron: true, naive: true };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let study = pool.install(|| run_study(&cfg).unwrap());
    let mut buf = Vec::new();
    write_records(&study.records, &mut buf).unwrap();
    buf
}

fn c10_determinism() -> Outcome {
    let (r1, r2) = (cli_report(1), cli_report(3));
    let (s1, s2) = (study_records(1), study_records(3));
    outcome(
        r1 == r2 && s1 == s2,
        format!(
            "report bytes identical: {} ({} bytes); study records identical: {} ({} bytes)",
            r1 == r2,
            r1.len(),
            s1 == s2,
            s1.len()
        ),
    )
}

fn main() {
    let strict = std::env::var("SELBOOST_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut failed = 0;
    let mut report = |id: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id:>2} {name}: {} [{:.1} s]", o.detail, t.elapsed().as_secs_f64());
        failed += usize::from(!o.pass);
    };
    report(1, "boosting converges to least squares", &mut c1_ols_limit);
    report(2, "polyhedron matches path/sign reruns", &mut c2_rerun_equivalence);
    report(3, "sampler matches truncated Gaussian", &mut c3_sampler_vs_analytic);
    let t = Instant::now();
    let null = null_study();
    println!("     (null study shared by 4 and 5: {:.1} s)", t.elapsed().as_secs_f64());
    report(4, "null p-values uniform", &mut || c4_null_uniformity(&null));
    report(5, "coverage of selective intervals", &mut || c5_coverage(&null));
    report(6, "sampling more powerful than polyhedron", &mut c6_power_ordering);
    report(7, "validity with CV stopping", &mut c7_cv_validity);
    report(8, "whole-function test for smooth terms", &mut c8_smooth_function_test);
    report(9, "ESS and weight identities", &mut c9_ess_identities);
    report(10, "reports and records are deterministic", &mut c10_determinism);
    println!("{} of 10 criteria passed", 10 - failed);
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
