//! End-to-end acceptance checks. Runs without the libtest harness so that the
//! one-line verdicts are always printed; exits non-zero if any check fails.

use dbanova::derivatives::{estimate_cross_partial, VariableSubset};
use dbanova::distributions::{sample_matrix, GeneratorKind, Marginal, RandomStream};
use dbanova::emulator::{build, build_with_oracle, correlation, EmulatorConfig};
use dbanova::harness::{
    mse_curve, replicate_means, run_plan, EstimatorSettings, ExperimentPlan, ExperimentResult, DEFAULT_BUDGETS,
};
use dbanova::model::ModelFunction;
use dbanova::perturb::{default_config, PerturbationConfig, PerturbationLaw, ScaleOptions};
use dbanova::schemes::{build_scheme, solve_coefficients, NodeSet, SchemeKind, SchemeParams};
use dbanova::sensitivity::{
    direct_indices, main_kernel, plugin_gradients, plugin_indices, ub_kernel, EstimatorKind, IndexKind,
    InnerSettings, OutputVariance, VarianceSource,
};
use dbanova::testbed::{additive_linear, function_by_name, gfun_type_b, polynomial_suite};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use std::time::{Duration, Instant};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn fmt3(v: &[f64]) -> String {
    let s: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("({})", s.join(", "))
}

fn coefficient_exactness() -> Verdict {
    let first = {
        let nodes = NodeSet::new(vec![1.0, -1.0]).unwrap();
        let s = build_scheme(SchemeKind::RateOptimal, 1, &SchemeParams::rstar(0)).unwrap();
        let c = solve_coefficients(&nodes, &s).unwrap();
        let res = s.exponents.iter().map(|&r| c.residual(r)).fold(0.0, f64::max);
        (c.coefficients, res)
    };
    let second = {
        let nodes = NodeSet::new(vec![0.0, 1.0, -1.0]).unwrap();
        let p = SchemeParams {
            exponents: Some(vec![0, 1, 2]),
            ..SchemeParams::default()
        };
        let s = build_scheme(SchemeKind::Custom, 2, &p).unwrap();
        let c = solve_coefficients(&nodes, &s).unwrap();
        let res = s.exponents.iter().map(|&r| c.residual(r)).fold(0.0, f64::max);
        (c.coefficients, res)
    };
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12);
    let pass = close(&first.0, &[0.5, -0.5])
        && first.1 <= 1e-12
        && close(&second.0, &[-1.0, 0.5, 0.5])
        && second.1 <= 1e-12;
    verdict(
        pass,
        format!(
            "{} res {:.1e}; {} res {:.1e}",
            fmt3(&first.0),
            first.1,
            fmt3(&second.0),
            second.1
        ),
    )
}

fn polynomial_exactness() -> Verdict {
    let root = RandomStream::pseudo(2024);
    let n = 2000;
    let mut cases = 0usize;
    let mut hits = 0usize;
    for m in 0..50u64 {
        let d = 1 + (m % 4) as usize;
        let s = root.substream(m);
        let poly = polynomial_suite(d, 4, 1, &s.substream(0)).unwrap().remove(0);
        let tf = poly.clone().into_test_function("p");
        let x: Vec<f64> = s.substream(1).uniform_matrix(1, d).iter().map(|u| 2.0 * u - 1.0).collect();
        for u in VariableSubset::all_up_to(d, d.min(3)) {
            let order = u.len() as u32;
            let scheme = build_scheme(SchemeKind::RateOptimal, order, &SchemeParams::default()).unwrap();
            let nodes = NodeSet::default_nodes(order as usize + 1).unwrap();
            let coeffs = solve_coefficients(&nodes, &scheme).unwrap();
            let cfg = default_config(d, order, &coeffs, n, &ScaleOptions::default()).unwrap();
            let est = estimate_cross_partial(&tf.model, &x, u, &coeffs, &cfg, n, &s.substream(2 + u.bits())).unwrap();
            let truth = poly.derivative(u).eval(&x);
            let err = (est.value - truth).abs();
            cases += 1;
            if err <= 4.0 * est.std_error || err <= 1e-9 * (1.0 + truth.abs()) {
                hits += 1;
            }
        }
    }
    let rate = hits as f64 / cases as f64;
    verdict(rate >= 0.95, format!("{hits}/{cases} within 4 se ({:.1}%)", 100.0 * rate))
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn rate_check() -> Verdict {
    let f = ModelFunction::new(2, |x| x[0].sin() * x[1]);
    let x = [0.5f64, 1.0];
    let truth = x[0].cos() * x[1];
    let u = VariableSubset::singleton(0);
    let scheme = build_scheme(SchemeKind::RateOptimal, 1, &SchemeParams::rstar(0)).unwrap();
    let coeffs = solve_coefficients(&NodeSet::default_nodes(2).unwrap(), &scheme).unwrap();
    let root = RandomStream::pseudo(17);
    let sizes = [250usize, 1000, 4000];
    let mut mse = Vec::new();
    for &n in &sizes {
        let cfg = default_config(2, 1, &coeffs, n, &ScaleOptions::default()).unwrap();
        let sq: f64 = (0..200u64)
            .map(|r| {
                let e = estimate_cross_partial(&f, &x, u, &coeffs, &cfg, n, &root.substream(n as u64).substream(r))
                    .unwrap();
                (e.value - truth).powi(2)
            })
            .sum();
        mse.push(sq / 200.0);
    }
    let lx: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = mse.iter().map(|m| m.ln()).collect();
    let slope = least_squares_slope(&lx, &ly);
    verdict(
        slope <= -0.8,
        format!("MSE {:.2e} {:.2e} {:.2e}, slope {slope:.2}", mse[0], mse[1], mse[2]),
    )
}

fn table_run(function: &str, budgets: Vec<usize>) -> ExperimentResult {
    let mut plan = ExperimentPlan::new(function, EstimatorSettings::table_protocol());
    plan.budgets = budgets;
    plan.replicates = 30;
    plan.seed = 0;
    run_plan(&plan).unwrap()
}

fn means(r: &ExperimentResult, budget: usize, kind: IndexKind) -> Vec<f64> {
    replicate_means(r, budget, kind).into_iter().map(|(m, _)| m).collect()
}

fn ishigami_table() -> Verdict {
    let r = table_run("ishigami", vec![2000, 20000]);
    let s = means(&r, 2000, IndexKind::Main);
    let ub = means(&r, 2000, IndexKind::UpperBound);
    let late = means(&r, 20000, IndexKind::Main);
    let s_ref = [0.249, 0.318, -0.006];
    let ub_ref = [1.420, 4.872, 0.711];
    let analytic = [0.3139, 0.4424, 0.0];
    let s_ok = s.iter().zip(s_ref).all(|(a, b)| (a - b).abs() <= 0.06);
    let ub_ok = ub.iter().zip(ub_ref).all(|(a, b)| (a - b).abs() <= 0.2 * b);
    let late_ok = late.iter().zip(analytic).all(|(a, b)| (a - b).abs() <= 0.05);
    verdict(
        s_ok && ub_ok && late_ok,
        format!(
            "S {} [{}], UB {} [{}], S@20000 {} [{}]",
            fmt3(&s),
            ok(s_ok),
            fmt3(&ub),
            ok(ub_ok),
            fmt3(&late),
            ok(late_ok)
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "out of band"
    }
}

fn gfunction_table() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["gfun_a", "gfun_b", "gfun_c"] {
        let r = table_run(name, vec![2000]);
        let s = means(&r, 2000, IndexKind::Main);
        let ub = replicate_means(&r, 2000, IndexKind::UpperBound);
        let total = function_by_name(name).unwrap().total.unwrap();
        let s_ok = match name {
            "gfun_a" => s[..2].iter().all(|v| (v - 0.33).abs() <= 0.05),
            "gfun_b" => s.iter().all(|v| (v - 0.085).abs() <= 0.03),
            _ => s.iter().all(|v| (0.0..=0.08).contains(v)),
        };
        let ub_ok = ub.iter().zip(&total).all(|((m, se), t)| *m >= t - 2.0 * se);
        pass &= s_ok && ub_ok;
        let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        parts.push(format!(
            "{name} S in [{lo:.3}, {hi:.3}] [{}], UB ordering [{}]",
            ok(s_ok),
            ok(ub_ok)
        ));
    }
    verdict(pass, parts.join("; "))
}

fn convergence() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["ishigami", "gfun_b"] {
        let curve = |estimator| {
            let mut plan = ExperimentPlan::new(
                name,
                EstimatorSettings {
                    estimator,
                    l: 2,
                    generator: GeneratorKind::SobolScrambled,
                    ..EstimatorSettings::default()
                },
            );
            plan.budgets = DEFAULT_BUDGETS.to_vec();
            plan.replicates = 30;
            plan.seed = 1;
            mse_curve(&run_plan(&plan).unwrap())
        };
        let plug = curve(EstimatorKind::Plugin);
        let direct = curve(EstimatorKind::Direct);
        let wins = plug.iter().zip(&direct).filter(|(p, d)| p.value <= d.value).count();
        let ratio = plug[0].value / plug[plug.len() - 1].value;
        pass &= wins >= 7 && ratio >= 5.0;
        parts.push(format!("{name}: plug-in wins {wins}/9, MSE(500)/MSE(20000) = {ratio:.1}"));
    }
    verdict(pass, parts.join("; "))
}

fn emulator() -> Verdict {
    // g-type B, first-order, rate-optimal stencil on {1,-1}, 300 runs.
    let tf = gfun_type_b();
    let scheme = build_scheme(SchemeKind::RateOptimal, 1, &SchemeParams::rstar(0)).unwrap();
    let coeffs = solve_coefficients(&NodeSet::default_nodes(2).unwrap(), &scheme).unwrap();
    let outer_n = EmulatorConfig::outer_for_budget(300, &coeffs, 1).unwrap();
    let cfg = PerturbationConfig::new(PerturbationLaw::UniformSym { xi: 0.1 }, vec![1.0; 10], 1.5).unwrap();
    let ec = EmulatorConfig::new(1, outer_n, tf.dist.clone(), coeffs, cfg, 1, RandomStream::sobol(5));
    let e = build(&tf.model, &ec).unwrap();
    let preds = e.predict_batch(&e.points).unwrap();
    let truth = tf.model.eval_rows(&e.points).unwrap();
    let rho = correlation(&preds, &truth).unwrap();

    // Additive linear model with exact gradients.
    let lin = additive_linear(&[1.0, -2.0, 0.5]).unwrap();
    let grad = [1.0, -2.0, 0.5];
    let oracle = move |u: VariableSubset, _x: &[f64]| if u.len() == 1 { grad[u.indices()[0]] } else { 0.0 };
    let lc = EmulatorConfig::new(
        1,
        400,
        lin.dist.clone(),
        solve_coefficients(&NodeSet::default_nodes(2).unwrap(), &build_scheme(SchemeKind::RateOptimal, 1, &SchemeParams::rstar(0)).unwrap()).unwrap(),
        PerturbationConfig::new(PerturbationLaw::UniformSym { xi: 0.5 }, vec![0.1; 3], 1.5).unwrap(),
        1,
        RandomStream::sobol(6),
    );
    let le = build_with_oracle(&lin.model, &lc, &oracle).unwrap();
    let probes = sample_matrix(&lin.dist, 25, &RandomStream::pseudo(7));
    let mut worst: f64 = 0.0;
    for row in probes.rows() {
        let x = row.to_vec();
        let (p, se) = le.predict_with_stderr(&x).unwrap();
        worst = worst.max((p - lin.model.eval(&x)).abs() / se);
    }
    let pass = rho >= 0.95 && worst <= 3.0;
    verdict(
        pass,
        format!(
            "g-type B correlation {rho:.3} over {} build points with {} runs (need 0.95); linear oracle worst |error|/se {worst:.2}",
            e.outer_n(),
            e.runs_used
        ),
    )
}

fn properties() -> Verdict {
    let mut failures = Vec::new();
    let mut runner = TestRunner::new(Config {
        failure_persistence: None,
        ..Config::with_cases(64)
    });
    let unit = Marginal::Uniform { a: 0.0, b: 1.0 };

    if let Err(e) = runner.run(&(0.001f64..0.999, 0.001f64..0.999, -4.0f64..4.0), |(x, y, z)| {
        let g = Marginal::Gaussian { mean: 0.3, sd: 1.2 };
        prop_assert!(ub_kernel(&unit, x).unwrap() >= 0.0);
        prop_assert!(ub_kernel(&g, z).unwrap() >= 0.0);
        prop_assert_eq!(main_kernel(&unit, x, y).unwrap(), main_kernel(&unit, y, x).unwrap());
        Ok(())
    }) {
        failures.push(format!("kernel positivity: {e}"));
    }

    let lin = additive_linear(&[1.0, 2.0, -1.0]).unwrap();
    let coeffs = solve_coefficients(
        &NodeSet::default_nodes(2).unwrap(),
        &build_scheme(SchemeKind::RateOptimal, 1, &SchemeParams::rstar(0)).unwrap(),
    )
    .unwrap();
    let cfg = PerturbationConfig::new(PerturbationLaw::UniformSym { xi: 0.5 }, vec![0.1; 3], 1.5).unwrap();

    if let Err(e) = runner.run(&(any::<u64>(), 1usize..23), |(seed, shift)| {
        let inner = InnerSettings {
            coeffs: coeffs.clone(),
            cfg: cfg.clone(),
            n_inner: 2,
        };
        let g = plugin_gradients(&lin.model, &lin.dist, 24, &inner, &RandomStream::sobol(seed)).unwrap();
        let var = OutputVariance {
            value: 1.0,
            runs_used: 0,
        };
        let a = plugin_indices(&g, &lin.dist, &var).unwrap();
        let n = g.len();
        let mut h = g.clone();
        for dst in 0..n {
            let src = (dst * 5 + shift) % n;
            h.points.row_mut(dst).assign(&g.points.row(src));
            h.gradients.row_mut(dst).assign(&g.gradients.row(src));
        }
        let b = plugin_indices(&h, &lin.dist, &var).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.0.raw.to_bits(), y.0.raw.to_bits());
            prop_assert_eq!(x.1.raw.to_bits(), y.1.raw.to_bits());
        }
        Ok(())
    }) {
        failures.push(format!("U-statistic permutation invariance: {e}"));
    }

    if let Err(e) = runner.run(&(2usize..40, any::<u64>()), |(n, seed)| {
        let (counted, counter) = lin.model.counted();
        let out = direct_indices(
            &counted,
            &lin.dist,
            &coeffs,
            &cfg,
            n,
            &RandomStream::sobol(seed),
            VarianceSource::Dedicated(n),
        )
        .unwrap();
        prop_assert_eq!(counter.get() as usize, 3 * 2 * n + n);
        prop_assert_eq!(out[0].0.runs_used, 3 * 2 * n + n);
        Ok(())
    }) {
        failures.push(format!("budget honesty: {e}"));
    }

    let det = |seed| {
        let mut p = ExperimentPlan::new("ishigami", EstimatorSettings::default());
        p.budgets = vec![500];
        p.replicates = 3;
        p.seed = seed;
        run_plan(&p).unwrap().rows
    };
    if det(3) != det(3) {
        failures.push("determinism: repeated run differs".into());
    }

    if failures.is_empty() {
        verdict(true, "kernel positivity, permutation invariance, budget honesty, determinism")
    } else {
        verdict(false, failures.join("; "))
    }
}

fn main() {
    // `cargo test` passes libtest flags; with no harness they are ignored,
    // except that `--list` must not run anything.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let checks: [(&str, fn() -> Verdict, Duration); 8] = [
        ("1 coefficient exactness", coefficient_exactness, Duration::from_secs(1)),
        ("2 polynomial exactness", polynomial_exactness, Duration::from_secs(60)),
        ("3 convergence rate", rate_check, Duration::from_secs(60)),
        ("4 Ishigami table", ishigami_table, Duration::from_secs(120)),
        ("5 g-function table", gfunction_table, Duration::from_secs(300)),
        ("6 convergence curves", convergence, Duration::from_secs(600)),
        ("7 emulator", emulator, Duration::from_secs(60)),
        ("8 property suites", properties, Duration::from_secs(300)),
    ];
    let mut failed = 0;
    for (name, check, limit) in checks {
        let t = Instant::now();
        let mut v = check();
        let took = t.elapsed();
        if took > limit {
            v.pass = false;
            v.detail.push_str(&format!("; took {took:.1?}, limit {limit:?}"));
        }
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {name}: {} ({}) [{took:.2?}]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
