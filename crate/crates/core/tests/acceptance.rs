//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 1-6 and 10 are exact properties and gate the exit code. The
//! MNIST ordering criteria 7-9 are reproduction checks on real data: their
//! verdict is printed but only their software clauses (explicit divergence,
//! finite metrics) gate. Set `RRL_ACCEPTANCE_ONLY=1,2,5` to run a subset.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rrl::analytic;
use rrl::attack::{AttackConfig, AttackKind};
use rrl::certify::{mc_lower_bounds, r2_analytic};
use rrl::data::{self, Dataset};
use rrl::linalg::Vector;
use rrl::oracle::OracleReport;
use rrl::plot;
use rrl::regularize::RegKind;
use rrl::table::write_table;
use rrl::train::{self, AveragedRow, FlowInit, SweepConfig, SweepResult, AVERAGED_HEADER, AVERAGED_SCHEMA};
use rrl::verify::{self, VerifyConfig};

// tolerances and protocol constants
const CLOSED_FORM_BUDGET_S: f64 = 120.0;
const CERTIFICATE_BUDGET_S: f64 = 120.0;
const PROP2_PROBLEMS: u64 = 10;
const PROP2_LAMBDA: f64 = 0.1;
const PROP2_SYMMETRY_TOL: f64 = 1e-3;
const PROP2_REL_TOL: f64 = 1e-4;
const FLOW_DIM: usize = 10;
const FLOW_A: f64 = 0.1;
const FLOW_LAMBDA: f64 = 0.5;
const FLOW_STEPS: usize = 1000;
const FLOW_STEP: f64 = 1e-3;
const FLOW_TOL: f64 = 1e-6;
const SIMILAR_REL: f64 = 0.15;
/// A (kind, λ) cell is stable when no seed diverged and its mean clean
/// accuracy is within this much of the λ = 0 baseline.
const STABLE_ACC_DROP: f64 = 0.05;
const SWEEP_BUDGET_S: f64 = 1800.0;
const PGD_EPS: f64 = 0.1;
const MC_TRAIN_SAMPLES: usize = 2000;
const MC_EVAL_SAMPLES: usize = 200;
const MC_GRID: [f64; 5] = [0.0, 0.01, 0.1, 1.0, 100.0];
const MC_EXTREME_LAMBDA: f64 = 100.0;

struct Verdict {
    id: u32,
    title: &'static str,
    pass: bool,
    gating: bool,
    summary: String,
    details: String,
}

fn verdict(id: u32, title: &'static str, pass: bool, gating: bool, summary: String, details: String) -> Verdict {
    Verdict {
        id,
        title,
        pass,
        gating,
        summary,
        details,
    }
}

fn suite_rows(suites: &[&str], cfg: &VerifyConfig) -> (Vec<OracleReport>, f64) {
    let t = Instant::now();
    let rows = suites.iter().flat_map(|s| verify::run_suite(s, cfg).expect("suite runs")).collect();
    (rows, t.elapsed().as_secs_f64())
}

fn failures(rows: &[OracleReport]) -> String {
    let mut s = String::new();
    for r in rows.iter().filter(|r| !r.pass).take(10) {
        let _ = writeln!(
            s,
            "    {} {} fixture {}: {} vs {} (error {:e} > {:e})",
            r.suite, r.quantity, r.fixture, r.analytic, r.oracle, r.rel_error, r.tolerance
        );
    }
    s
}

fn worst(rows: &[OracleReport], quantity: &str) -> f64 {
    rows.iter()
        .filter(|r| r.quantity == quantity)
        .map(|r| r.rel_error)
        .fold(0.0, f64::max)
}

fn criterion_1() -> Verdict {
    let cfg = VerifyConfig::default();
    let (rows, secs) = suite_rows(&["lemma2", "lemma3"], &cfg);
    let failed = rows.iter().filter(|r| !r.pass).count();
    let nets = 2 * cfg.closed_form_nets;
    let pass = failed == 0 && nets >= 100 && secs < CLOSED_FORM_BUDGET_S;
    verdict(
        1,
        "closed-form gradient/Hessian vs finite differences",
        pass,
        true,
        format!(
            "{nets} nets (K=2,3,10), {} checks, {failed} failed; worst rel err grad {:.1e} (tol 1e-4), Hessian {:.1e} (tol 1e-3), norm identities {:.1e}/{:.1e} (tol 1e-10); {secs:.1}s",
            rows.len(),
            worst(&rows, "gradient_vs_fd"),
            worst(&rows, "hessian_vs_fd"),
            worst(&rows, "gradient_norm_identity"),
            worst(&rows, "hessian_norm_identity"),
        ),
        failures(&rows),
    )
}

fn criterion_2() -> Verdict {
    let cfg = VerifyConfig::default();
    let (rows, secs) = suite_rows(&["binary-certificate"], &cfg);
    let failed = rows.iter().filter(|r| !r.pass).count();
    let pass = failed == 0 && secs < CERTIFICATE_BUDGET_S;
    verdict(
        2,
        "certificate exactness (bracket, l2/l-inf radii, box maximum)",
        pass,
        true,
        format!(
            "{} fixtures, {} checks, {failed} failed; worst rel err bracket {:.1e} (tol 1e-8), l2 oracle {:.1e} / l-inf oracle {:.1e} (tol 1e-6), vertex enumeration {:.1e} (tol 1e-9); {secs:.1}s",
            cfg.certificate_fixtures,
            rows.len(),
            worst(&rows, "lemma1_lower_vs_eq8").max(worst(&rows, "lemma1_upper_vs_eq8")),
            worst(&rows, "eq8_vs_oracle_l2"),
            worst(&rows, "prop11_vs_oracle_linf"),
            worst(&rows, "prop12_vs_enumeration"),
        ),
        failures(&rows),
    )
}

/// Share of binary fixtures on which the multi-class bound would exceed the
/// exact binary radius if it were fed the multi-class ν (= ν_bin/√2 at K=2).
fn nu_mc_binary_violations(n: usize) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xb1);
    let mut violations = 0;
    let mut used = 0;
    while used < n {
        let hidden = rng.random_range(2..=32);
        let net = verify::random_network(&mut rng, &[6, hidden, 2]).unwrap();
        let x = Vector::from_iter((0..6).map(|_| rng.random_range(-2.0..2.0)));
        let map = net.local_linear_map(&x).unwrap();
        let y = net.predict(&x).unwrap();
        let rec = analytic::softmax_ce(&map.evaluate(&x), y).unwrap();
        let (p, xi) = (rec.p_y(), rec.slack);
        if !(p > 0.5 && p < 1.0 - 1e-9 && xi > 0.0) {
            continue;
        }
        used += 1;
        let nu_mc = analytic::cross_lipschitz_sq_multiclass(&map).sqrt();
        let mu = analytic::lipschitz(&map);
        let exact = r2_analytic(p, analytic::cross_lipschitz(&map), xi).unwrap();
        let b = mc_lower_bounds(p, nu_mc, mu, xi, 2).unwrap();
        if b.best() > exact * (1.0 + 1e-9) {
            violations += 1;
        }
    }
    (violations, n)
}

fn criterion_3() -> Verdict {
    let cfg = VerifyConfig::default();
    let (rows, secs) = suite_rows(&["prop5"], &cfg);
    let exceed = |q: &str| rows.iter().filter(|r| r.quantity == q && !r.pass).count();
    let failed = rows.iter().filter(|r| !r.pass).count();
    let pass = failed == 0 && cfg.prop5_fixtures >= 1000;
    let (v, n) = nu_mc_binary_violations(1000);
    verdict(
        3,
        "multi-class lower bounds never exceed the minimal perturbation",
        pass,
        true,
        format!(
            "{} multi-class fixtures: {} exceed the oracle; {} binary fixtures: {} exceed the binary radius; {failed} failed checks; {secs:.1}s",
            cfg.prop5_fixtures,
            exceed("bound_le_oracle"),
            cfg.prop5_binary_fixtures,
            exceed("bound_le_eq8_binary"),
        ),
        format!(
            "{}    info: with the multi-class ν at K=2 the bound would exceed the binary radius on {v}/{n} fixtures\n",
            failures(&rows)
        ),
    )
}

fn criterion_4() -> Verdict {
    let cfg = VerifyConfig::default();
    let (rows, secs) = suite_rows(&["inequalities"], &cfg);
    let failed = rows.iter().filter(|r| !r.pass).count();
    let mut details = String::new();
    for r in &rows {
        let _ = writeln!(details, "    {:<28} {} fixtures, {} violations", r.quantity, r.fixture, r.analytic);
    }
    verdict(
        4,
        "fuzzed inequalities and monotonicity of the binary radius",
        failed == 0,
        true,
        format!(
            "{} fuzz fixtures per inequality, {failed} of {} checks violated; {secs:.1}s",
            cfg.fuzz_fixtures,
            rows.len()
        ),
        details + &failures(&rows),
    )
}

fn criterion_5() -> Verdict {
    let mut pass = true;
    let mut details = String::new();
    let (mut w_sym, mut w_nu, mut w_ce) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..PROP2_PROBLEMS {
        let (features, labels) = train::random_feature_problem(200, 8, 12, seed);
        match train::prop2_experiment(&features, &labels, PROP2_LAMBDA, seed) {
            Ok(r) => {
                let sym = r.jacobian.sum_norm / r.jacobian.diff_norm;
                w_sym = w_sym.max(sym);
                w_nu = w_nu.max(r.nu_rel_diff);
                w_ce = w_ce.max(r.ce_rel_diff);
                if !(sym <= PROP2_SYMMETRY_TOL && r.nu_rel_diff <= PROP2_REL_TOL && r.ce_rel_diff <= PROP2_REL_TOL) {
                    pass = false;
                    let _ = writeln!(
                        details,
                        "    problem {seed}: symmetry {sym:e}, nu {:e}, CE {:e}",
                        r.nu_rel_diff, r.ce_rel_diff
                    );
                }
            }
            Err(e) => {
                pass = false;
                let _ = writeln!(details, "    problem {seed}: {e}");
            }
        }
    }
    verdict(
        5,
        "final-layer optima of the ν²/2 and μ² penalties coincide",
        pass,
        true,
        format!(
            "{PROP2_PROBLEMS} problems at λ={PROP2_LAMBDA}: worst |v₊+v₋|/|v₊-v₋| {w_sym:.1e} (tol {PROP2_SYMMETRY_TOL:e}), ν rel diff {w_nu:.1e}, CE rel diff {w_ce:.1e} (tol {PROP2_REL_TOL:e})"
        ),
        details,
    )
}

fn criterion_6() -> Verdict {
    let run = |init| train::gradient_flow_experiment(FLOW_DIM, FLOW_A, data::TSIPRAS_ETA, FLOW_LAMBDA, FLOW_STEPS, FLOW_STEP, init);
    match (run(FlowInit::Bayes), run(FlowInit::Generic { seed: 0 })) {
        (Ok(b), Ok(g)) => verdict(
            6,
            "population gradient flows of ν²/2 and paired μ² coincide",
            b.max_divergence <= FLOW_TOL,
            true,
            format!(
                "{FLOW_STEPS} steps of {FLOW_STEP}: max divergence {:.1e} (tol {FLOW_TOL:e}); a generic start separates to {:.2e}",
                b.max_divergence, g.max_divergence
            ),
            String::new(),
        ),
        (b, g) => verdict(
            6,
            "population gradient flows of ν²/2 and paired μ² coincide",
            false,
            true,
            format!("error: {:?} / {:?}", b.err(), g.err()),
            String::new(),
        ),
    }
}

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist10k")
}

fn load_mnist() -> Option<Dataset> {
    let dir = mnist_dir();
    data::load_idx(&dir.join("images-idx3-ubyte"), &dir.join("labels-idx1-ubyte")).ok()
}

fn artifacts(name: &str, rows: &[AveragedRow]) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    fs::create_dir_all(&dir).unwrap();
    let mut buf = Vec::new();
    write_table(&mut buf, AVERAGED_SCHEMA, &AVERAGED_HEADER, rows).unwrap();
    fs::write(dir.join("averages.csv"), buf).unwrap();
    for (stem, chart) in plot::sweep_charts(rows) {
        fs::write(dir.join(format!("{stem}.svg")), chart.render()).unwrap();
    }
    dir
}

fn cell<'a>(rows: &'a [AveragedRow], kind: &str, lambda: f64, attack: AttackKind) -> Option<&'a AveragedRow> {
    rows.iter()
        .find(|r| r.reg_kind == kind && r.lambda == lambda && r.attack == attack.as_str())
}

fn baseline<'a>(rows: &'a [AveragedRow], attack: AttackKind) -> &'a AveragedRow {
    rows.iter()
        .find(|r| r.lambda == 0.0 && r.attack == attack.as_str())
        .expect("grid contains λ = 0")
}

fn stable(rows: &[AveragedRow], kind: &str, lambda: f64) -> bool {
    let base = baseline(rows, AttackKind::DeepFool).clean_acc.unwrap_or(0.0);
    match cell(rows, kind, lambda, AttackKind::DeepFool) {
        Some(r) => r.n_divergent == 0 && r.clean_acc.is_some_and(|a| a >= base - STABLE_ACC_DROP),
        None => false,
    }
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.4}"))
}

fn table(rows: &[AveragedRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "    {:<16} {:>7} {:<9} {:>7} {:>7} {:>8} {:>4} {:>4} {}",
        "regularizer", "lambda", "attack", "clean", "robust", "mean l2", "runs", "div", "stable"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "    {:<16} {:>7} {:<9} {:>7} {:>7} {:>8} {:>4} {:>4} {}",
            r.reg_kind,
            r.lambda,
            r.attack,
            fmt_opt(r.clean_acc),
            fmt_opt(r.robust_acc),
            fmt_opt(r.mean_min_l2),
            r.n_runs,
            r.n_divergent,
            if stable(rows, &r.reg_kind, r.lambda) { "yes" } else { "no" }
        );
    }
    s
}

/// λ values at which both kinds are stable, with the relative gaps of the
/// DeepFool mean l2 (and PGD robust accuracy when `with_pgd`).
fn similarity(rows: &[AveragedRow], grid: &[f64], with_pgd: bool) -> (bool, usize, String) {
    let (jac, cl) = (RegKind::Jacobian.as_str(), RegKind::CrossLipschitz.as_str());
    let mut ok = true;
    let mut checked = 0;
    let mut s = String::new();
    for &l in grid.iter().filter(|&&l| l > 0.0) {
        if !(stable(rows, jac, l) && stable(rows, cl, l)) {
            let _ = writeln!(s, "    λ={l}: not mutually stable, skipped");
            continue;
        }
        checked += 1;
        let mut metrics = vec![("DeepFool mean l2", AttackKind::DeepFool, true)];
        if with_pgd {
            metrics.push(("PGD robust acc", AttackKind::Pgd, false));
        }
        for (name, attack, l2) in metrics {
            let get = |k| cell(rows, k, l, attack).and_then(|r| if l2 { r.mean_min_l2 } else { r.robust_acc });
            match (get(jac), get(cl)) {
                (Some(a), Some(b)) => {
                    let g = rel_gap(a, b);
                    let good = g <= SIMILAR_REL;
                    ok &= good;
                    let _ = writeln!(
                        s,
                        "    λ={l}: {name} jacobian {a:.4} vs cross-lipschitz {b:.4}, gap {:.1}% {}",
                        100.0 * g,
                        if good { "ok" } else { "TOO LARGE" }
                    );
                }
                _ => {
                    ok = false;
                    let _ = writeln!(s, "    λ={l}: {name} missing");
                }
            }
        }
    }
    (ok && checked > 0, checked, s)
}

fn binary_sweep() -> Option<(SweepConfig, SweepResult, f64)> {
    let all = load_mnist()?;
    let d = data::binary_subset(&all, 7, 1).ok()?;
    let (tr, te) = data::split(&d, 0.8, 0).ok()?;
    let cfg = SweepConfig {
        hidden: vec![300, 100],
        reg_kinds: vec![
            RegKind::Jacobian,
            RegKind::CrossLipschitz,
            RegKind::InputGradient,
            RegKind::Curvature,
        ],
        lambda_grid: vec![0.0, 0.01, 0.1, 1.0, 10.0],
        seeds: (0..5).collect(),
        attacks: vec![
            AttackConfig::new(AttackKind::DeepFool),
            AttackConfig::new(AttackKind::Pgd).with_epsilon(PGD_EPS),
        ],
        eval_samples: 0,
        ..SweepConfig::default()
    };
    let t = Instant::now();
    let r = train::sweep(&cfg, &tr, &te).ok()?;
    Some((cfg, r, t.elapsed().as_secs_f64()))
}

fn criteria_7_8() -> Vec<Verdict> {
    const T7: &str = "7-vs-1 MNIST: ν²/2 and μ² penalties perform similarly";
    const T8: &str = "7-vs-1 MNIST: curvature penalty is the most robust";
    let Some((cfg, result, secs)) = binary_sweep() else {
        let msg = format!("MNIST subset not found under {}", mnist_dir().display());
        return vec![
            verdict(7, T7, false, true, msg.clone(), String::new()),
            verdict(8, T8, false, false, msg, String::new()),
        ];
    };
    let rows = result.averaged_rows();
    let dir = artifacts("mnist-7v1", &rows);
    let (ok7, checked, sim) = similarity(&rows, &cfg.lambda_grid, false);
    let in_budget = secs <= SWEEP_BUDGET_S;
    let header = format!(
        "    {} seeds, grid {:?}, {} test samples, sweep {secs:.0}s; artifacts in {}\n",
        cfg.seeds.len(),
        cfg.lambda_grid,
        result.metrics_rows().first().map_or(0, |m| m.n_samples),
        dir.display()
    );
    let v7 = verdict(
        7,
        T7,
        ok7 && in_budget,
        false,
        format!(
            "DeepFool mean l2 within {:.0}% at {checked} mutually stable λ>0: {}; runtime {secs:.0}s (budget {SWEEP_BUDGET_S:.0}s)",
            100.0 * SIMILAR_REL,
            if ok7 { "yes" } else { "no" }
        ),
        header + &table(&rows) + &sim,
    );

    let kinds: Vec<&str> = cfg.reg_kinds.iter().map(|k| k.as_str()).collect();
    let mutual: Vec<f64> = cfg
        .lambda_grid
        .iter()
        .copied()
        .filter(|&l| l > 0.0 && kinds.iter().all(|k| stable(&rows, k, l)))
        .collect();
    let mut d8 = String::new();
    let ok8 = match mutual.last() {
        None => {
            d8.push_str("    no λ>0 is stable for every regularizer\n");
            false
        }
        Some(&l) => {
            let df_base = baseline(&rows, AttackKind::DeepFool).mean_min_l2.unwrap_or(f64::NAN);
            let pgd_base = baseline(&rows, AttackKind::Pgd).robust_acc.unwrap_or(f64::NAN);
            let df = |k: &str| {
                cell(&rows, k, l, AttackKind::DeepFool)
                    .and_then(|r| r.mean_min_l2)
                    .unwrap_or(f64::NAN)
            };
            let pgd = |k: &str| cell(&rows, k, l, AttackKind::Pgd).and_then(|r| r.robust_acc).unwrap_or(f64::NAN);
            let curv = RegKind::Curvature.as_str();
            let best_df = kinds.iter().all(|k| df(curv) >= df(k));
            let best_pgd = kinds.iter().all(|k| pgd(curv) >= pgd(k));
            let beats: Vec<(&str, bool, bool)> = kinds.iter().map(|&k| (k, df(k) > df_base, pgd(k) > pgd_base)).collect();
            let _ = writeln!(
                d8,
                "    largest mutually stable λ = {l}; baseline DeepFool l2 {df_base:.4}, PGD robust acc {pgd_base:.4}"
            );
            for &(k, a, b) in &beats {
                let _ = writeln!(
                    d8,
                    "    {k:<16} DeepFool l2 {:.4} ({}), PGD robust acc {:.4} ({})",
                    df(k),
                    if a { "beats baseline" } else { "does NOT beat baseline" },
                    pgd(k),
                    if b { "beats baseline" } else { "does NOT beat baseline" },
                );
            }
            let _ = writeln!(
                d8,
                "    curvature best on DeepFool l2: {best_df}; best on PGD robust acc: {best_pgd}"
            );
            best_df && best_pgd && beats.iter().all(|b| b.1 && b.2)
        }
    };
    let v8 = verdict(
        8,
        T8,
        ok8,
        false,
        format!(
            "curvature best on both metrics and every regularizer above baseline at the largest mutually stable λ: {}",
            if ok8 { "yes" } else { "no" }
        ),
        d8,
    );
    vec![v7, v8]
}

fn criterion_9() -> Verdict {
    const T9: &str = "10-class MNIST: Jacobian vs cross-Lipschitz, explicit divergence";
    let Some(all) = load_mnist() else {
        return verdict(9, T9, false, true, "MNIST subset not found".into(), String::new());
    };
    let (tr, te) = data::split(&all, 0.8, 0).unwrap();
    let tr = tr.head(MC_TRAIN_SAMPLES);
    let cfg = SweepConfig {
        hidden: vec![300, 100],
        reg_kinds: vec![RegKind::Jacobian, RegKind::CrossLipschitz],
        lambda_grid: MC_GRID.to_vec(),
        seeds: vec![0, 1],
        attacks: vec![
            AttackConfig::new(AttackKind::DeepFool),
            AttackConfig::new(AttackKind::Pgd).with_epsilon(PGD_EPS),
        ],
        eval_samples: MC_EVAL_SAMPLES,
        ..SweepConfig::default()
    };
    let t = Instant::now();
    let result = match train::sweep(&cfg, &tr, &te) {
        Ok(r) => r,
        Err(e) => return verdict(9, T9, false, true, format!("sweep failed: {e}"), String::new()),
    };
    let secs = t.elapsed().as_secs_f64();
    let rows = result.averaged_rows();
    let dir = artifacts("mnist-10class", &rows);

    // software clauses: the extreme λ ends in a recorded divergence and no
    // completed run carries a non-finite metric
    let div = result.divergences();
    let extreme_cells = cfg.reg_kinds.len() * cfg.seeds.len();
    let extreme_div = div.iter().filter(|d| d.lambda == MC_EXTREME_LAMBDA).count();
    let finite = result.metrics_rows().iter().all(|m| {
        m.clean_acc.is_finite()
            && m.robust_acc.is_finite()
            && m.mean_min_l2.is_none_or(f64::is_finite)
            && m.median_min_l2.is_none_or(f64::is_finite)
    });
    let explicit = extreme_div == extreme_cells && finite;
    let (similar, checked, sim) = similarity(&rows, &cfg.lambda_grid, true);
    let kinds: BTreeSet<&str> = div.iter().map(|d| d.reg_kind.as_str()).collect();
    let mut details = format!(
        "    {} train / {} eval samples, K=10, {} seeds, grid {:?}, sweep {secs:.0}s; artifacts in {}\n",
        tr.len(),
        MC_EVAL_SAMPLES.min(te.len()),
        cfg.seeds.len(),
        cfg.lambda_grid,
        dir.display()
    );
    details += &table(&rows);
    details += &sim;
    for d in &div {
        let _ = writeln!(details, "    diverged: {} at epoch {} (loss {})", d.model_id, d.epoch, d.loss);
    }
    let mut v = verdict(
        9,
        T9,
        explicit && similar,
        false,
        format!(
            "metrics within {:.0}% at {checked} mutually stable λ>0: {}; λ={MC_EXTREME_LAMBDA} diverged explicitly in {extreme_div}/{extreme_cells} runs ({}), all completed metrics finite: {finite}",
            100.0 * SIMILAR_REL,
            if similar { "yes" } else { "no" },
            kinds.into_iter().collect::<Vec<_>>().join(", ")
        ),
        details,
    );
    // the divergence clause is a software guarantee and gates on its own
    if !explicit {
        v.gating = true;
    }
    v
}

fn criterion_10() -> Verdict {
    let tmp = tempfile::TempDir::new().unwrap();
    let run = |mutation: Option<&str>, out: &str| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_rrl"));
        c.args(["verify", "--out", out]).current_dir(tmp.path()).env_remove("RRL_OUT_DIR");
        match mutation {
            Some(m) => c.env(verify::MUTATION_ENV, m),
            None => c.env_remove(verify::MUTATION_ENV),
        };
        c.output().unwrap().status.code().unwrap_or(-1)
    };
    let t = Instant::now();
    let clean = run(None, "clean");
    let secs = t.elapsed().as_secs_f64();
    let eq8 = run(Some("eq8-sign"), "m1");
    let grad = run(Some("gradient-sign"), "m2");
    let cfg = VerifyConfig::default();
    let expected: usize = verify::SUITES.iter().map(|s| verify::expected_rows(s, &cfg).unwrap()).sum();
    let report = fs::read_to_string(tmp.path().join("clean/oracle_report.csv")).unwrap_or_default();
    let rows = report.lines().count().saturating_sub(2);
    verdict(
        10,
        "`rrl verify` is self-contained and fails on injected errors",
        clean == 0 && eq8 == 1 && grad == 1 && rows == expected,
        true,
        format!(
            "pristine exit {clean} ({rows}/{expected} report rows, {secs:.1}s, empty working directory); sign-flip mutations exit {eq8} and {grad}"
        ),
        String::new(),
    )
}

fn main() {
    let only: Option<BTreeSet<u32>> = std::env::var("RRL_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let want = |id: u32| only.as_ref().is_none_or(|s| s.contains(&id));
    type Job = (Vec<u32>, fn() -> Vec<Verdict>);
    let jobs: Vec<Job> = vec![
        (vec![1], || vec![criterion_1()]),
        (vec![2], || vec![criterion_2()]),
        (vec![3], || vec![criterion_3()]),
        (vec![4], || vec![criterion_4()]),
        (vec![5], || vec![criterion_5()]),
        (vec![6], || vec![criterion_6()]),
        (vec![10], || vec![criterion_10()]),
        (vec![7, 8], criteria_7_8),
        (vec![9], || vec![criterion_9()]),
    ];
    let mut verdicts = Vec::new();
    for (ids, job) in jobs {
        if !ids.iter().any(|&i| want(i)) {
            continue;
        }
        for v in job() {
            println!(
                "{} [{}] {}: {}{}",
                if v.pass { "PASS" } else { "FAIL" },
                v.id,
                v.title,
                v.summary,
                if v.gating { "" } else { " (reported, not gating)" }
            );
            print!("{}", v.details);
            verdicts.push(v);
        }
    }
    let gating_failures: Vec<u32> = verdicts.iter().filter(|v| v.gating && !v.pass).map(|v| v.id).collect();
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!("\nacceptance: {passed}/{} criteria passed", verdicts.len());
    if !gating_failures.is_empty() {
        println!("gating failures: {gating_failures:?}");
        std::process::exit(1);
    }
}
