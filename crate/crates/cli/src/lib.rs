//! Command implementations behind the `orbitron` binary.
//!
//! Every command returns an [`Outcome`] holding a JSON report and an exit
//! code: 0 success, 1 error, 2 no equilibrium, 3 equilibrium not verified
//! stable.

pub mod config;
pub mod disk;
pub mod report;
pub mod search;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nalgebra::Vector3;
use orbitron::dynamics::{
    integrate, monte_carlo_sheaf, perturb, sample_rng, PhaseState, SheafSummary,
};
use orbitron::equilibrium::{
    dimensionless_params, solve_equilibrium, Equilibrium, EquilibriumError, EquilibriumProblem, RelativeEquilibrium,
};
use orbitron::stability::{analyze, Verdict};
use serde::Serialize;

use config::RunConfig;
use disk::derive_body_from_disk;
use report::{
    discrepancy, minor_labels, EquilibriumReport, FieldProbeReport, FullReport, ProbePoint, ProblemSummary,
    SimulateReport, StabilityCommandReport,
};
use search::{SearchConfig, SearchOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NO_EQUILIBRIUM: i32 = 2;
pub const EXIT_NOT_STABLE: i32 = 3;

/// Warn when the disk geometry and a published inertia parameter disagree by
/// more than this factor.
const ALPHA_MISMATCH_FACTOR: f64 = 1.01;

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    FieldProbe { points: Vec<[f64; 3]> },
    Equilibrium,
    Stability,
    Simulate,
    Sheaf,
    FullReport,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::FieldProbe { .. } => "field-probe",
            Command::Equilibrium => "equilibrium",
            Command::Stability => "stability",
            Command::Simulate => "simulate",
            Command::Sheaf => "sheaf",
            Command::FullReport => "full-report",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub command: &'static str,
    pub exit_code: i32,
    pub report: serde_json::Value,
    pub files: Vec<PathBuf>,
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("reports serialize")
}

pub fn probe_field(cfg: &RunConfig, points: &[[f64; 3]]) -> Result<FieldProbeReport> {
    let field = cfg.field_model()?;
    let points = if points.is_empty() {
        vec![[cfg.orbit.r0, 0.0, 0.0]]
    } else {
        points.to_vec()
    };
    let points = points
        .into_iter()
        .map(|x| {
            let v = Vector3::from(x);
            match (field.eval(&v), field.maxwell_residual(&v)) {
                (Ok(s), Ok(m)) => {
                    let (div, curl) = m.relative();
                    let mut jac = [[0.0; 3]; 3];
                    for (i, row) in jac.iter_mut().enumerate() {
                        for (k, e) in row.iter_mut().enumerate() {
                            *e = s.jac[(i, k)];
                        }
                    }
                    ProbePoint {
                        x,
                        b: Some([s.b.x, s.b.y, s.b.z]),
                        jacobian: Some(jac),
                        divergence_relative: Some(div),
                        curl_relative: Some(curl),
                        error: None,
                    }
                }
                (Err(e), _) | (_, Err(e)) => ProbePoint {
                    x,
                    b: None,
                    jacobian: None,
                    divergence_relative: None,
                    curl_relative: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(FieldProbeReport { field, points })
}

/// Solves for the equilibrium; a missing orbit is reported, not raised.
pub fn equilibrium_report(cfg: &RunConfig) -> Result<(EquilibriumReport, EquilibriumProblem)> {
    let prob = cfg.problem()?;
    let disk = cfg.disk.as_ref().map(derive_body_from_disk).transpose()?;
    let mut warnings = Vec::new();
    if let (Some(d), Some(r)) = (&disk, cfg.reference.and_then(|r| r.alpha)) {
        let ratio = d.alpha / r;
        if ratio > ALPHA_MISMATCH_FACTOR || ratio < 1.0 / ALPHA_MISMATCH_FACTOR {
            warnings.push(format!(
                "alpha mismatch: disk geometry gives {:e}, reference gives {r:e} (ratio {ratio:e})",
                d.alpha
            ));
        }
    }
    let dp = dimensionless_params(&prob).ok();
    let (equilibrium, error) = match solve_equilibrium(&prob) {
        Ok(eq) => (Some(eq), None),
        Err(e) => (None, Some(e)),
    };
    if let Some(Equilibrium::Orbital(eq)) = &equilibrium {
        let r = eq.residuals.max_relative();
        if r > 1e-9 {
            warnings.push(format!("necessary-condition residual {r:e} exceeds 1e-9"));
        }
    }
    if let Some(e) = &error {
        if !no_equilibrium(e) {
            return Err(anyhow::Error::new(e.clone()).context("equilibrium solve failed"));
        }
    }
    let discrepancy = cfg
        .reference
        .is_some()
        .then(|| discrepancy(cfg, &prob, equilibrium.as_ref(), disk.as_ref()));
    let report = EquilibriumReport {
        problem: ProblemSummary {
            field: prob.field,
            body: prob.body,
            alpha: prob.body.alpha(),
            beta: prob.body.beta(),
            r0: prob.r0,
            g: prob.g,
            disk,
        },
        dimensionless: dp,
        real_root_condition: dp.map(|d| d.real_root_condition()),
        equilibrium,
        error: error.map(|e| e.to_string()),
        warnings,
        discrepancy,
    };
    Ok((report, prob))
}

fn no_equilibrium(e: &EquilibriumError) -> bool {
    matches!(
        e,
        EquilibriumError::NoRealEquilibrium { .. }
            | EquilibriumError::NoAdmissibleRoot { .. }
            | EquilibriumError::DegenerateAttitude { .. }
            | EquilibriumError::DegenerateField
    )
}

fn equilibrium_exit(r: &EquilibriumReport) -> i32 {
    if r.equilibrium.is_some() {
        EXIT_OK
    } else {
        EXIT_NO_EQUILIBRIUM
    }
}

pub fn stability_report(cfg: &RunConfig) -> Result<(StabilityCommandReport, EquilibriumProblem)> {
    let (eq_report, prob) = equilibrium_report(cfg)?;
    let (stability, note) = match &eq_report.equilibrium {
        Some(Equilibrium::Orbital(eq)) => match analyze(eq, &prob) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(format!("stability analysis failed: {e}"))),
        },
        Some(Equilibrium::Static(_)) => (
            None,
            Some("static hover: the reduced second variation is defined for orbits only".into()),
        ),
        None => (None, None),
    };
    let minors = stability.as_ref().map(minor_labels).unwrap_or_default();
    let all_minors_positive = stability.as_ref().is_some_and(|s| s.minors().all(|m| m > 0.0));
    Ok((
        StabilityCommandReport {
            equilibrium: eq_report,
            stability,
            minors,
            all_minors_positive,
            note,
        },
        prob,
    ))
}

fn stability_exit(r: &StabilityCommandReport) -> i32 {
    if r.equilibrium.equilibrium.is_none() {
        EXIT_NO_EQUILIBRIUM
    } else if r.stability.as_ref().is_some_and(|s| s.verdict == Verdict::Stable) {
        EXIT_OK
    } else {
        EXIT_NOT_STABLE
    }
}

fn require_orbit(r: &EquilibriumReport) -> Result<&RelativeEquilibrium, i32> {
    match &r.equilibrium {
        Some(Equilibrium::Orbital(eq)) => Ok(eq),
        Some(Equilibrium::Static(_)) => Err(EXIT_ERROR),
        None => Err(EXIT_NO_EQUILIBRIUM),
    }
}

/// Integrates from the (optionally perturbed) equilibrium and writes the
/// trajectory CSV into `out`.
pub fn simulate(
    cfg: &RunConfig,
    eq: &RelativeEquilibrium,
    prob: &EquilibriumProblem,
    out: &Path,
) -> Result<SimulateReport> {
    let period = eq.period();
    let icfg = cfg.integrator.to_config(period);
    let reference = PhaseState::from_equilibrium(eq, prob);
    let mut rng = sample_rng(cfg.seed, 0);
    let s0 = perturb(&reference, cfg.integrator.perturbation, prob.body.moment, &mut rng);
    let duration = cfg.integrator.turns * period;
    let traj = integrate(&s0, prob, &icfg, duration)?;
    let path = out.join("trajectory.csv");
    std::fs::write(&path, traj.to_csv(prob)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(SimulateReport {
        integrator: icfg,
        seed: cfg.seed,
        perturbation: cfg.integrator.perturbation,
        period,
        duration,
        initial_state: s0,
        final_state: *traj.final_state(),
        samples: traj.samples.len(),
        drift: traj.drift,
        mu_correction: traj.mu_correction,
        trajectory_file: path.display().to_string(),
    })
}

pub fn sheaf(cfg: &RunConfig, eq: &RelativeEquilibrium, prob: &EquilibriumProblem) -> Result<SheafSummary> {
    Ok(monte_carlo_sheaf(eq, prob, &cfg.sheaf.to_config(cfg.seed))?)
}

fn write_json(out: &Path, name: &str, value: &serde_json::Value) -> Result<PathBuf> {
    let path = out.join(format!("{name}.json"));
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn missing_orbit(name: &'static str, r: &EquilibriumReport, code: i32) -> Outcome {
    let reason = match code {
        EXIT_NO_EQUILIBRIUM => "no equilibrium exists",
        _ => "static hover has no orbital period",
    };
    Outcome {
        command: name,
        exit_code: code,
        report: serde_json::json!({ "error": reason, "equilibrium": r }),
        files: Vec::new(),
    }
}

/// Runs `cmd` and writes `<out>/<command>.json` plus any data files.
pub fn execute(cmd: &Command, cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let name = cmd.name();
    let mut files = Vec::new();
    let (report, exit_code) = match cmd {
        Command::FieldProbe { points } => (to_value(&probe_field(cfg, points)?), EXIT_OK),
        Command::Equilibrium => {
            let (r, _) = equilibrium_report(cfg)?;
            (to_value(&r), equilibrium_exit(&r))
        }
        Command::Stability => {
            let (r, _) = stability_report(cfg)?;
            (to_value(&r), stability_exit(&r))
        }
        Command::Simulate | Command::Sheaf => {
            let (r, prob) = equilibrium_report(cfg)?;
            let eq = match require_orbit(&r) {
                Ok(eq) => eq,
                Err(code) => {
                    let mut o = missing_orbit(name, &r, code);
                    o.files.push(write_json(out, name, &o.report)?);
                    return Ok(o);
                }
            };
            if *cmd == Command::Simulate {
                let s = simulate(cfg, eq, &prob, out)?;
                files.push(PathBuf::from(&s.trajectory_file));
                (to_value(&s), EXIT_OK)
            } else {
                (to_value(&sheaf(cfg, eq, &prob)?), EXIT_OK)
            }
        }
        Command::FullReport => {
            let field_probe = probe_field(cfg, &[])?;
            let (stab, prob) = stability_report(cfg)?;
            let exit = stability_exit(&stab);
            let (simulate_report, sheaf_report) = match &stab.equilibrium.equilibrium {
                Some(Equilibrium::Orbital(eq)) => {
                    let s = simulate(cfg, eq, &prob, out)?;
                    files.push(PathBuf::from(&s.trajectory_file));
                    (Some(s), Some(sheaf(cfg, eq, &prob)?))
                }
                _ => (None, None),
            };
            let full = FullReport {
                config: cfg.clone(),
                field_probe,
                stability: stab,
                simulate: simulate_report,
                sheaf: sheaf_report,
            };
            (to_value(&full), exit)
        }
    };
    files.insert(0, write_json(out, name, &report)?);
    Ok(Outcome {
        command: name,
        exit_code,
        report,
        files,
    })
}

/// Runs the parameter search and writes `search.json`, plus `found.toml`
/// when a configuration passes.
pub fn execute_search(cfg: &SearchConfig, out: &Path) -> Result<(SearchOutcome, Outcome)> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let result = search::search(cfg);
    let report = to_value(&result);
    let mut files = vec![write_json(out, "search", &report)?];
    if let Some(found) = &result.found {
        let path = out.join("found.toml");
        std::fs::write(&path, found.candidate.to_run_config(&cfg.sheaf).to_toml())?;
        files.push(path);
    }
    let exit_code = if result.found.is_some() { EXIT_OK } else { EXIT_NOT_STABLE };
    Ok((
        result,
        Outcome {
            command: "search",
            exit_code,
            report,
            files,
        },
    ))
}
