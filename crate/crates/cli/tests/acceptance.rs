//! Acceptance criteria A1 to A9.
//!
//! Each test prints one `A<n> PASS|FAIL` line with the measured numbers, plus
//! `NOTE` lines for supplementary measurements, and then asserts the verdict.
//! Run with `cargo test -p orbitron-cli --test acceptance -- --nocapture
//! --test-threads 1` for readable output.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, Rotation3, SVector, Vector3};
use orbitron::dynamics::{
    integrate, monte_carlo_sheaf, perturb, sample_rng, Classification, DriftStats, EscapeReason, IntegratorConfig,
    PhaseState, SheafConfig, SheafSummary,
};
use orbitron::equilibrium::{
    solve_equilibrium, BodyParams, Equilibrium, EquilibriumProblem, RelativeEquilibrium,
};
use orbitron::fields::{FieldModel, LinearFieldParams, OrbitronParams};
use orbitron::stability::{
    admissible_basis, analyze, eigenvalue_verdict, reduce, second_variation, sylvester_verdict, Verdict, DA, DP,
    DPI, DX,
};
use orbitron_cli::config::RunConfig;
use orbitron_cli::report::FullReport;
use orbitron_cli::search::{draw_candidate, search, SearchConfig};
use orbitron_cli::{execute, Command};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn verdict(id: &str, title: &str, pass: bool, elapsed: Duration, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("{id} {tag} {title} [{:.2} s]: {detail}", elapsed.as_secs_f64());
    assert!(pass, "{id} failed: {detail}");
}

fn note(id: &str, detail: &str) {
    println!("{id} NOTE {detail}");
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn load(name: &str) -> RunConfig {
    RunConfig::load(&config_path(name), &[]).unwrap()
}

fn orbit(cfg: &RunConfig) -> (EquilibriumProblem, RelativeEquilibrium) {
    let prob = cfg.problem().unwrap();
    match solve_equilibrium(&prob) {
        Ok(Equilibrium::Orbital(eq)) => (prob, eq),
        other => panic!("expected an orbit, got {other:?}"),
    }
}

/// Solvable orbital equilibria drawn from the search space, with `lambda`
/// in `lambdas`.
fn sampled_equilibria(seed: u64, n: usize, lambdas: [f64; 2]) -> Vec<(EquilibriumProblem, RelativeEquilibrium)> {
    let cfg = SearchConfig {
        seed,
        lambda_range: lambdas,
        ..SearchConfig::default()
    };
    let mut out = Vec::new();
    let mut i = 0;
    while out.len() < n {
        let c = draw_candidate(&cfg, i);
        i += 1;
        let prob = c.problem().unwrap();
        if let Ok(Equilibrium::Orbital(eq)) = solve_equilibrium(&prob) {
            if eq.nu1.abs() > 1e-6 && eq.nu3.abs() > 1e-6 {
                out.push((prob, eq));
            }
        }
    }
    out
}

#[test]
fn a1_field_derivatives() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_jac, mut worst_hess, mut worst_maxwell) = (0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..1000 {
        let h = rng.random_range(0.02..0.1);
        let kappa = rng.random_range(1.0..1000.0);
        let model = FieldModel::new(
            OrbitronParams::new(kappa, h).unwrap(),
            LinearFieldParams::new(rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0)).unwrap(),
        );
        let poles_only = FieldModel::new(model.orbitron, LinearFieldParams::new(0.0, 0.0).unwrap());
        // Off-pole: at least h/2 from both poles, within 4h of the axis origin.
        let x = loop {
            let x = Vector3::from_fn(|_, _| rng.random_range(-4.0 * h..4.0 * h));
            let d = [h, -h].map(|z| (x - Vector3::new(0.0, 0.0, z)).norm());
            if d[0].min(d[1]) > 0.5 * h {
                break x;
            }
        };
        let pole_distance = [h, -h]
            .map(|z| (x - Vector3::new(0.0, 0.0, z)).norm())
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let step = f64::EPSILON.cbrt() * pole_distance;
        let s = model.eval(&x).unwrap();
        let jac_scale = s.jac.amax();
        let hess_scale = s.hess.iter().map(|m| m.amax()).fold(0.0, f64::max);
        for k in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += step;
            xm[k] -= step;
            let d_b = (model.value(&xp).unwrap() - model.value(&xm).unwrap()) / (2.0 * step);
            // The linear part has a constant Jacobian, so its difference is zero
            // up to cancellation noise.
            let d_jac = (poles_only.eval(&xp).unwrap().jac - poles_only.eval(&xm).unwrap().jac) / (2.0 * step);
            for i in 0..3 {
                worst_jac = worst_jac.max((s.jac[(i, k)] - d_b[i]).abs() / jac_scale);
                for l in 0..3 {
                    worst_hess = worst_hess.max((s.hess[i][(l, k)] - d_jac[(i, l)]).abs() / hess_scale);
                }
            }
        }
        let (div, curl) = model.maxwell_residual(&x).unwrap().relative();
        worst_maxwell = worst_maxwell.max(div).max(curl);
    }
    let elapsed = start.elapsed();
    let pass = worst_jac < 1e-6 && worst_hess < 1e-6 && worst_maxwell < 1e-12 && elapsed.as_secs_f64() < 5.0;
    verdict(
        "A1",
        "field derivatives vs central differences at 1000 off-pole points",
        pass,
        elapsed,
        &format!("jacobian {worst_jac:.2e}, hessian {worst_hess:.2e} (< 1e-6); maxwell {worst_maxwell:.2e} (< 1e-12)"),
    );
}

#[test]
fn a2_equilibrium_self_consistency() {
    let start = Instant::now();
    let cases = sampled_equilibria(202, 200, [0.8, 0.999]);
    let worst_residual = cases
        .iter()
        .map(|(_, eq)| eq.residuals.max_relative())
        .fold(0.0, f64::max);
    let worst_norm = cases
        .iter()
        .map(|(_, eq)| ((eq.nu1 * eq.nu1 + eq.nu3 * eq.nu3).sqrt() - 1.0).abs())
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let pass = worst_residual < 1e-9 && worst_norm < 1e-12 && elapsed.as_secs_f64() < 10.0;
    verdict(
        "A2",
        "equilibrium residuals at 200 solvable configurations",
        pass,
        elapsed,
        &format!("max residual {worst_residual:.2e} (< 1e-9), max ||nu| - 1| {worst_norm:.2e} (< 1e-12)"),
    );
}

#[test]
fn a3_hover_limit() {
    let start = Instant::now();
    // m B' = M g exactly and no poles.
    let field = FieldModel::new(
        OrbitronParams::new(0.0, 0.05).unwrap(),
        LinearFieldParams::new(0.2, 1.0).unwrap(),
    );
    let body = BodyParams::new(1.0, 9.81, 1e-3, 1.5e-3).unwrap();
    let prob = EquilibriumProblem::new(field, body, 0.07, 9.81).unwrap();
    let eq = solve_equilibrium(&prob).unwrap();
    let pass = match &eq {
        Equilibrium::Static(s) => s.roots.proper() == 0.0 && s.nu1 == 0.0 && s.nu3 == 1.0,
        Equilibrium::Orbital(_) => false,
    };
    verdict(
        "A3",
        "hover limit lambda = 1, sigma = 0",
        pass,
        start.elapsed(),
        &format!("{eq:?}"),
    );
}

/// `h - xi1 J1 + xi2 <pi, nu>` along a curve through the equilibrium.
fn augmented_energy(prob: &EquilibriumProblem, eq: &RelativeEquilibrium, v: &SVector<f64, 12>, e: f64) -> f64 {
    let b = &prob.body;
    let x = eq.x() + v.fixed_rows::<3>(DX) * e;
    let nu = Rotation3::new(v.fixed_rows::<3>(DA).into_owned() * e) * eq.nu();
    let p = eq.p() + v.fixed_rows::<3>(DP) * e;
    let pi = eq.pi() + v.fixed_rows::<3>(DPI) * e;
    let field = prob.field.value(&x).unwrap();
    let pi_nu = pi.dot(&nu);
    p.norm_squared() / (2.0 * b.mass) + 0.5 * b.alpha() * pi.norm_squared() + 0.5 * b.beta() * pi_nu * pi_nu
        - b.moment * field.dot(&nu)
        + b.mass * prob.g * x.z
        - eq.xi1 * (pi.z + x.cross(&p).z)
        + eq.xi2(b) * pi_nu
}

#[test]
fn a4_reduced_form_fidelity() {
    let start = Instant::now();
    let cases = sampled_equilibria(404, 200, [0.8, 0.999]);
    let mut worst_corrected = 0.0_f64;
    let mut worst_original = 0.0_f64;
    let mut worst_cross = 0.0_f64;
    for (prob, eq) in &cases {
        let r = analyze(eq, prob).unwrap();
        worst_corrected = worst_corrected.max(r.deviation_corrected);
        worst_original = worst_original.max(r.deviation_original);
        worst_cross = worst_cross.max(r.cross_block_ratio);
    }
    // Independent oracle: curvature of the augmented energy along admissible
    // directions, by a fourth-order stencil.
    let mut rng = ChaCha8Rng::seed_from_u64(405);
    let mut worst_fd = 0.0_f64;
    for (prob, eq) in cases.iter().take(20) {
        let basis = admissible_basis(eq).unwrap();
        let form = reduce(&second_variation(eq, prob).unwrap(), &basis).unwrap();
        let spin = eq.pi().norm().max(1e-30);
        let scales = [spin, eq.r0, 1.0, spin, eq.r0, eq.r0, 1.0, eq.p0];
        for _ in 0..5 {
            let free = SVector::<f64, 8>::from_fn(|i, _| rng.random_range(-1.0..1.0) * scales[i]);
            let v = basis.embed(&free);
            let f = |e: f64| augmented_energy(prob, eq, &v, e);
            let eps = 1e-3;
            let fd = (-f(2.0 * eps) + 16.0 * f(eps) - 30.0 * f(0.0) + 16.0 * f(-eps) - f(-2.0 * eps)) / (12.0 * eps * eps);
            let analytic = (free.transpose() * form.full * free)[(0, 0)];
            let scale = (free.abs().transpose() * form.full.abs() * free.abs())[(0, 0)];
            worst_fd = worst_fd.max((analytic - fd).abs() / scale);
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_corrected < 1e-10 && worst_cross < 1e-10 && worst_fd < 1e-5;
    verdict(
        "A4",
        "assembled Q1/Q2 vs closed form at 200 equilibria",
        pass,
        elapsed,
        &format!(
            "closed form {worst_corrected:.2e} (< 1e-10), cross blocks {worst_cross:.2e} (< 1e-10), \
             finite-difference curvature {worst_fd:.2e} (< 1e-5)"
        ),
    );
    note(
        "A4",
        &format!(
            "printed closed form deviates by up to {worst_original:.2e} in Q1[1,1] and Q2[3,3]; \
             the finite-difference oracle sides with the corrected entries"
        ),
    );
}

#[test]
fn a5_oracle_equivalences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut random_agree = 0;
    let mut stable_random = 0;
    for n in 0..1000 {
        let dim = 3 + n % 2;
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        let shift = if n % 4 < 2 { rng.random_range(0.0..3.0) } else { 0.0 };
        let m = &a * a.transpose() * 0.5 + (&a + a.transpose()) * 0.25 + DMatrix::identity(dim, dim) * shift;
        let (_, v) = sylvester_verdict(&m);
        random_agree += (v == eigenvalue_verdict(&m)) as usize;
        stable_random += (v == Verdict::Stable) as usize;
    }
    let mut cases = sampled_equilibria(506, 150, [0.8, 0.999]);
    // lambda > 1 tilts the moment away from the field, exercising failed alignment.
    cases.extend(sampled_equilibria(507, 50, [1.0, 2.0]));
    let (mut eigen, mut analytic, mut stable) = (0, 0, 0);
    for (prob, eq) in &cases {
        let r = analyze(eq, prob).unwrap();
        eigen += r.oracle_agreement.eigenvalue as usize;
        analytic += (r.oracle_agreement.analytic_q1 && r.oracle_agreement.analytic_q2) as usize;
        stable += (r.verdict == Verdict::Stable) as usize;
    }
    let pass = random_agree == 1000 && eigen == cases.len() && analytic == cases.len();
    verdict(
        "A5",
        "Sylvester vs eigenvalue verdicts and analytic conditions vs minors",
        pass,
        start.elapsed(),
        &format!(
            "random matrices {random_agree}/1000 ({stable_random} definite); computed forms {eigen}/{n}; \
             analytic signs {analytic}/{n} ({stable} stable equilibria)",
            n = cases.len()
        ),
    );
}

fn state_error(a: &PhaseState, b: &PhaseState) -> f64 {
    [
        (a.x - b.x).norm() / b.x.norm(),
        (a.p - b.p).norm() / b.p.norm(),
        (a.mu - b.mu).norm() / b.mu.norm(),
        (a.pi - b.pi).norm() / b.pi.norm(),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

#[test]
fn a6_conservation_and_order() {
    let start = Instant::now();
    let cfg = load("conservation.toml");
    let (prob, eq) = orbit(&cfg);
    let period = eq.period();
    let s0 = perturb(
        &PhaseState::from_equilibrium(&eq, &prob),
        cfg.integrator.perturbation,
        prob.body.moment,
        &mut sample_rng(cfg.seed, 0),
    );
    let run = |steps: f64, stride: usize| {
        let t0 = Instant::now();
        let icfg = IntegratorConfig {
            stride,
            ..IntegratorConfig::rk4(period / steps)
        };
        let tr = integrate(&s0, &prob, &icfg, 10.0 * period).unwrap();
        (tr, t0.elapsed())
    };
    let steps = [1000.0, 2000.0, 4000.0, 8000.0];
    let runs: Vec<_> = steps.iter().map(|n| run(*n, 1)).collect();
    let slowest = runs.iter().map(|(_, t)| t.as_secs_f64()).fold(0.0, f64::max);
    let drifts: Vec<DriftStats> = runs.iter().map(|(tr, _)| tr.drift).collect();
    let base = drifts[1];
    let drift_ok = base.h < 1e-8 && base.j1 < 1e-8 && base.j2 < 1e-8;
    let ratios: Vec<f64> = drifts.windows(2).map(|w| w[0].h / w[1].h).collect();
    let ratio_ok = ratios.iter().all(|r| (r / 16.0 - 1.0).abs() <= 0.3);

    let reference = run(64000.0, usize::MAX).0;
    let errors: Vec<f64> = steps
        .iter()
        .map(|n| state_error(run(*n, usize::MAX).0.final_state(), reference.final_state()))
        .collect();
    let error_ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let j2_ratios: Vec<f64> = drifts.windows(2).map(|w| w[0].j2 / w[1].j2).collect();

    let pass = drift_ok && ratio_ok && slowest < 30.0;
    note(
        "A6",
        &format!(
            "final-state error against dt = T/64000 halves at ratios {} (fourth order); J2 drift ratios {}; \
             invariant error of RK4 on near-harmonic motion scales as dt^5, so drift ratios sit near 32; \
             slowest trajectory {slowest:.2} s",
            fmt_ratios(&error_ratios),
            fmt_ratios(&j2_ratios)
        ),
    );
    verdict(
        "A6",
        "invariant drift over 10 turns and its step-halving ratio",
        pass,
        start.elapsed(),
        &format!(
            "dt = T/2000 drift h {:.2e}, J1 {:.2e}, J2 {:.2e} (< 1e-8); h drift ratios {} (expected 16 +- 30%)",
            base.h,
            base.j1,
            base.j2,
            fmt_ratios(&ratios)
        ),
    );
}

fn fmt_ratios(r: &[f64]) -> String {
    r.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(", ")
}

fn sheaf_line(s: &SheafSummary) -> String {
    let mut reasons = std::collections::BTreeMap::<String, usize>::new();
    for o in &s.outcomes {
        if let Some(r) = o.reason {
            *reasons.entry(format!("{r:?}")).or_default() += 1;
        }
    }
    format!(
        "{}/{} bounded, {} escaped, {} pole hits, {} lost within 3 turns, reasons {reasons:?}",
        s.bounded,
        s.outcomes.len(),
        s.escaped,
        s.pole_collisions,
        s.lost_within_three_turns
    )
}

#[test]
fn a7_existence_demonstration() {
    let start = Instant::now();
    let strict = SearchConfig {
        max_candidates: 200_000,
        batch: 256,
        ..SearchConfig::default()
    };
    let found = search(&strict);
    let st = &found.stats;
    let pass = found.found.as_ref().is_some_and(|f| {
        f.stability.verdict == Verdict::Stable
            && f.stability.minors().all(|m| m > 0.0)
            && f.sheaf.bounded == f.sheaf.config.n_samples
    }) && start.elapsed().as_secs_f64() < 600.0;
    let best = found
        .best_screen
        .as_ref()
        .map(|(c, n)| format!("best screen {n}/{} bounded at r0 = {:.3} h", strict.screen_samples, c.t))
        .unwrap_or_else(|| "nothing screened".into());

    // Same protocol with the pole-clearance bound switched off.
    let relaxed_start = Instant::now();
    let relaxed_cfg: SearchConfig = toml::from_str(&std::fs::read_to_string(config_path("search/relaxed.toml")).unwrap()).unwrap();
    let relaxed = search(&relaxed_cfg);
    let relaxed_line = match &relaxed.found {
        Some(f) => format!(
            "candidate {} at r0 = {:.3} h: all 7 minors positive = {}, sheaf {} [{:.1} s]",
            f.candidate.index,
            f.candidate.t,
            f.stability.minors().all(|m| m > 0.0),
            sheaf_line(&f.sheaf),
            relaxed_start.elapsed().as_secs_f64()
        ),
        None => format!("no configuration found in {} draws", relaxed.stats.drawn),
    };
    note("A7", &format!("without the 2h pole-clearance bound: {relaxed_line}"));
    verdict(
        "A7",
        "seeded search for a stable set with 100/100 bounded sheaf samples",
        pass,
        start.elapsed(),
        &format!(
            "{} drawn, {} stable inside the bounds and screened, {} passed screening, {}; \
             in-plane stability needs r0 < 2h while 2h pole clearance needs r0 > 1.73h, and 1% kicks \
             in that window exceed the 20% radial bound within one turn",
            st.drawn,
            st.screened,
            st.full_runs,
            best
        ),
    );
}

#[test]
fn a8_negative_control() {
    let start = Instant::now();
    let cfg = load("negative_control.toml");
    let (prob, eq) = orbit(&cfg);
    let r = analyze(&eq, &prob).unwrap();
    let strict_cfg = SheafConfig {
        pole_clearance: 2.0,
        ..cfg.sheaf.to_config(cfg.seed)
    };
    let strict = monte_carlo_sheaf(&eq, &prob, &strict_cfg).unwrap();
    let relaxed = monte_carlo_sheaf(&eq, &prob, &SheafConfig { pole_clearance: 0.0, ..strict_cfg }).unwrap();
    let physical = relaxed
        .outcomes
        .iter()
        .filter(|o| o.classification != Classification::Bounded && o.reason != Some(EscapeReason::PoleApproach))
        .count();
    let half = strict_cfg.n_samples / 2;
    let pass = r.verdict == Verdict::Unstable
        && r.analytic.vertical_curvature < 0.0
        && strict.lost_within_three_turns >= half
        && relaxed.lost_within_three_turns >= half;
    note("A8", &format!("without the pole bound: {}; {physical} physical escapes", sheaf_line(&relaxed)));
    verdict(
        "A8",
        "negative vertical curvature is unstable and escapes",
        pass,
        start.elapsed(),
        &format!(
            "verdict {:?}, -m nu3 B_zzz = {:.3e}; sheaf {}",
            r.verdict,
            r.analytic.vertical_curvature,
            sheaf_line(&strict)
        ),
    );
}

#[test]
fn a9_reproduction_report() {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for name in ["paper_literal.toml", "paper_literal_disk.toml"] {
        let cfg = load(name);
        let dir = tempfile::tempdir().unwrap();
        let outcome = execute(&Command::FullReport, &cfg, dir.path()).unwrap();
        let full: FullReport = serde_json::from_value(outcome.report.clone()).unwrap();
        let Some(d) = full.stability.equilibrium.discrepancy.clone() else {
            pass = false;
            continue;
        };
        let cmp = |k: &str| d.comparison(k).and_then(|c| c.relative_error);
        let populated = d.lambda.is_some()
            && d.sigma.is_some()
            && d.real_root_condition.is_some()
            && cmp("alpha").is_some()
            && cmp("b1").is_some()
            && cmp("b3").is_some();
        pass &= matches!(outcome.exit_code, 2 | 3) && populated;
        lines.push(format!(
            "{name}: exit {}, lambda {:.6}, sigma {:.3e}, real-root condition {:.4e}, alpha error {:.3e}, \
             B1 error {:.3e}, B3 error {:.3e}",
            outcome.exit_code,
            d.lambda.unwrap_or(f64::NAN),
            d.sigma.unwrap_or(f64::NAN),
            d.real_root_condition.unwrap_or(f64::NAN),
            cmp("alpha").unwrap_or(f64::NAN),
            cmp("b1").unwrap_or(f64::NAN),
            cmp("b3").unwrap_or(f64::NAN),
        ));
    }
    verdict(
        "A9",
        "literal published inputs produce a discrepancy report",
        pass,
        start.elapsed(),
        &lines.join("; "),
    );
}
