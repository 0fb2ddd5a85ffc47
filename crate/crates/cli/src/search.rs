//! Seeded search for a configuration whose orbit passes both the
//! second-variation test and the Monte Carlo sheaf.
//!
//! Candidate `i` is drawn from its own generator `(seed, i)`:
//!
//! * `r0 = t h` with `t` uniform in `t_range`,
//! * `B' = 10^u`, `u` uniform in `log10_b_prime`,
//! * `lambda` uniform in `lambda_range`, `sigma` uniform between the
//!   real-root bound `sqrt(1/lambda² - 1)` and `sigma_max`,
//! * `I_perp = 10^u`, `u` uniform in `log10_i_perp`, and `I3 = I_perp * U(0.5, 1.9)`,
//! * `B0 = ±10^u`, `u` uniform in `log10_b0`.
//!
//! `kappa` and `m` are then fixed by `sigma` and `lambda`. Candidates are
//! screened in index order, so the first accepted one depends only on the
//! seed and the configuration.

use std::ops::ControlFlow;

use orbitron::dynamics::{monte_carlo_sheaf, run_sample, Classification, SheafConfig, SheafSummary};
use orbitron::equilibrium::{
    solve_equilibrium, BodyParams, Equilibrium, EquilibriumProblem, RelativeEquilibrium, STANDARD_GRAVITY,
};
use orbitron::fields::{FieldModel, LinearFieldParams, OrbitronParams, MU0};
use orbitron::stability::{analyze, StabilityReport, Verdict};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BodySection, FieldSection, OrbitSection, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub seed: u64,
    pub max_candidates: usize,
    /// Candidates evaluated concurrently per round.
    pub batch: usize,
    /// Full sheaf runs attempted before giving up.
    pub max_full_runs: usize,
    pub screen_samples: usize,
    pub h: f64,
    pub mass: f64,
    pub g: f64,
    pub t_range: [f64; 2],
    pub lambda_range: [f64; 2],
    pub sigma_max: f64,
    pub log10_b_prime: [f64; 2],
    pub log10_i_perp: [f64; 2],
    pub log10_b0: [f64; 2],
    /// Bounds and protocol of the final sheaf; its seed is reused for screening.
    pub sheaf: SheafConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            max_candidates: 20_000,
            batch: 64,
            max_full_runs: 8,
            screen_samples: 20,
            h: 0.05,
            mass: 0.00683,
            g: STANDARD_GRAVITY,
            t_range: [0.85, 3.0],
            lambda_range: [0.8, 0.999],
            sigma_max: 3.0,
            log10_b_prime: [-1.0, 1.0],
            log10_i_perp: [-7.0, 1.0],
            log10_b0: [-2.0, 1.0],
            sheaf: SheafConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: usize,
    pub t: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub field: FieldSection,
    pub body: BodySection,
    pub orbit: OrbitSection,
}

impl Candidate {
    pub fn problem(&self) -> Option<EquilibriumProblem> {
        let f = &self.field;
        let b = &self.body;
        let field = FieldModel::new(
            OrbitronParams::new(f.kappa, f.h).ok()?,
            LinearFieldParams::new(f.b0, f.b_prime).ok()?,
        );
        let body = BodyParams::new(b.mass, b.moment, b.i_perp, b.i_axial).ok()?;
        EquilibriumProblem::new(field, body, self.orbit.r0, self.orbit.g).ok()
    }

    /// Run configuration reproducing this candidate under `sheaf`.
    pub fn to_run_config(&self, sheaf: &SheafConfig) -> RunConfig {
        RunConfig {
            seed: sheaf.seed,
            field: self.field,
            body: Some(self.body),
            disk: None,
            orbit: self.orbit,
            integrator: Default::default(),
            sheaf: crate::config::SheafSection {
                samples: sheaf.n_samples,
                rel_perturbation: sheaf.rel_perturbation,
                turns: sheaf.n_turns,
                steps_per_turn: sheaf.steps_per_turn,
                max_radial_fraction: sheaf.max_radial_fraction,
                max_z_fraction: sheaf.max_z_fraction,
                pole_clearance: sheaf.pole_clearance,
                escape_radius: sheaf.escape_radius,
            },
            output: Default::default(),
            reference: None,
        }
    }
}

/// Pole strength giving `sigma = -B_zr / B'` at radius `r0`.
pub fn kappa_for_sigma(sigma: f64, b_prime: f64, r0: f64, h: f64) -> f64 {
    sigma * b_prime * (r0 * r0 + h * h).powf(2.5) / (3.0 * r0) / (MU0 / (2.0 * std::f64::consts::PI) * h)
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

pub fn draw_candidate(cfg: &SearchConfig, index: usize) -> Candidate {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let h = cfg.h;
    let t = uniform(&mut rng, cfg.t_range);
    let r0 = t * h;
    let b_prime = 10f64.powf(uniform(&mut rng, cfg.log10_b_prime));
    let lambda = uniform(&mut rng, cfg.lambda_range);
    let sigma_min = (1.0 / (lambda * lambda) - 1.0).max(0.0).sqrt();
    let sigma = uniform(&mut rng, [sigma_min, cfg.sigma_max.max(sigma_min)]);
    let i_perp = 10f64.powf(uniform(&mut rng, cfg.log10_i_perp));
    let i_axial = i_perp * rng.random_range(0.5..1.9);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let b0 = sign * 10f64.powf(uniform(&mut rng, cfg.log10_b0));
    Candidate {
        index,
        t,
        lambda,
        sigma,
        field: FieldSection {
            kappa: kappa_for_sigma(sigma, b_prime, r0, h),
            h,
            b0,
            b_prime,
        },
        body: BodySection {
            mass: cfg.mass,
            moment: lambda * cfg.mass * cfg.g / b_prime,
            i_perp,
            i_axial,
        },
        orbit: OrbitSection { r0, g: cfg.g },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    NoEquilibrium,
    /// The orbit itself already violates the sheaf bounds.
    OutOfBounds,
    NotStable,
    Screen,
    Sheaf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub drawn: usize,
    pub no_equilibrium: usize,
    pub out_of_bounds: usize,
    pub not_stable: usize,
    pub screened: usize,
    pub screen_failures: usize,
    pub full_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Found {
    pub candidate: Candidate,
    pub equilibrium: RelativeEquilibrium,
    pub stability: StabilityReport,
    pub sheaf: SheafSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub config: SearchConfig,
    pub stats: SearchStats,
    /// Screened candidate with the longest run of bounded samples.
    pub best_screen: Option<(Candidate, usize)>,
    /// Best full sheaf run, whether or not it reached all samples.
    pub best_full: Option<Found>,
    pub found: Option<Found>,
}

/// Static pre-filter: the orbit must sit inside every sheaf bound with some
/// room to spare.
pub fn orbit_within_bounds(c: &Candidate, sheaf: &SheafConfig) -> bool {
    let clearance = (c.orbit.r0.powi(2) + c.field.h.powi(2)).sqrt();
    clearance > sheaf.pole_clearance * c.field.h * (1.0 + 2.0 * sheaf.rel_perturbation)
}

enum Evaluated {
    Rejected(Rejection),
    Screened {
        eq: Box<RelativeEquilibrium>,
        prob: EquilibriumProblem,
        report: Box<StabilityReport>,
        bounded_prefix: usize,
    },
}

fn evaluate(cfg: &SearchConfig, c: &Candidate) -> Evaluated {
    let Some(prob) = c.problem() else {
        return Evaluated::Rejected(Rejection::NoEquilibrium);
    };
    let Ok(Equilibrium::Orbital(eq)) = solve_equilibrium(&prob) else {
        return Evaluated::Rejected(Rejection::NoEquilibrium);
    };
    if !orbit_within_bounds(c, &cfg.sheaf) {
        return Evaluated::Rejected(Rejection::OutOfBounds);
    }
    let report = match analyze(&eq, &prob) {
        Ok(r) if r.verdict == Verdict::Stable => r,
        _ => return Evaluated::Rejected(Rejection::NotStable),
    };
    let screen = SheafConfig {
        n_samples: cfg.screen_samples,
        ..cfg.sheaf
    };
    let bounded_prefix = match (0..cfg.screen_samples).try_fold(0, |n, i| {
        if run_sample(&eq, &prob, &screen, i).classification == Classification::Bounded {
            ControlFlow::Continue(n + 1)
        } else {
            ControlFlow::Break(n)
        }
    }) {
        ControlFlow::Continue(n) | ControlFlow::Break(n) => n,
    };
    Evaluated::Screened {
        eq: Box::new(eq),
        prob,
        report: Box::new(report),
        bounded_prefix,
    }
}

pub fn search(cfg: &SearchConfig) -> SearchOutcome {
    let mut out = SearchOutcome {
        config: *cfg,
        stats: SearchStats::default(),
        best_screen: None,
        best_full: None,
        found: None,
    };
    let batch = cfg.batch.max(1);
    let mut start = 0;
    while start < cfg.max_candidates && out.stats.full_runs < cfg.max_full_runs {
        let end = (start + batch).min(cfg.max_candidates);
        let evaluated: Vec<(Candidate, Evaluated)> = (start..end)
            .into_par_iter()
            .map(|i| {
                let c = draw_candidate(cfg, i);
                let e = evaluate(cfg, &c);
                (c, e)
            })
            .collect();
        for (c, e) in evaluated {
            out.stats.drawn += 1;
            let (eq, prob, report, prefix) = match e {
                Evaluated::Rejected(r) => {
                    match r {
                        Rejection::NoEquilibrium => out.stats.no_equilibrium += 1,
                        Rejection::OutOfBounds => out.stats.out_of_bounds += 1,
                        _ => out.stats.not_stable += 1,
                    }
                    continue;
                }
                Evaluated::Screened {
                    eq,
                    prob,
                    report,
                    bounded_prefix,
                } => (eq, prob, report, bounded_prefix),
            };
            out.stats.screened += 1;
            if out.best_screen.as_ref().is_none_or(|(_, n)| prefix > *n) {
                out.best_screen = Some((c, prefix));
            }
            if prefix < cfg.screen_samples {
                out.stats.screen_failures += 1;
                continue;
            }
            out.stats.full_runs += 1;
            let sheaf = monte_carlo_sheaf(&eq, &prob, &cfg.sheaf).expect("sheaf config validated");
            let found = Found {
                candidate: c,
                equilibrium: *eq,
                stability: *report,
                sheaf,
            };
            let complete = found.sheaf.bounded == cfg.sheaf.n_samples;
            if out
                .best_full
                .as_ref()
                .is_none_or(|b| found.sheaf.bounded > b.sheaf.bounded)
            {
                out.best_full = Some(found.clone());
            }
            if complete {
                out.found = Some(found);
                return out;
            }
            if out.stats.full_runs >= cfg.max_full_runs {
                break;
            }
        }
        start = end;
    }
    out
}
