//! Serializable reports emitted by the commands.

use orbitron::dynamics::{DriftStats, IntegratorConfig, PhaseState, SheafSummary};
use orbitron::equilibrium::{
    dimensionless_params, BodyParams, DimensionlessParams, Equilibrium, EquilibriumProblem,
};
use orbitron::fields::FieldModel;
use orbitron::stability::{StabilityReport, FREE_VARIATIONS};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::disk::DiskBody;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub x: [f64; 3],
    pub b: Option<[f64; 3]>,
    /// `jacobian[i][k] = dB_i/dx_k`.
    pub jacobian: Option<[[f64; 3]; 3]>,
    pub divergence_relative: Option<f64>,
    pub curl_relative: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldProbeReport {
    pub field: FieldModel,
    pub points: Vec<ProbePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSummary {
    pub field: FieldModel,
    pub body: BodyParams,
    pub alpha: f64,
    pub beta: f64,
    pub r0: f64,
    pub g: f64,
    /// Present when the body was derived from disk geometry.
    pub disk: Option<DiskBody>,
}

/// One computed quantity next to its published counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub computed: Option<f64>,
    pub reference: Option<f64>,
    pub relative_error: Option<f64>,
}

impl Comparison {
    pub fn new(name: &str, computed: Option<f64>, reference: Option<f64>) -> Self {
        let relative_error = match (computed, reference) {
            (Some(c), Some(r)) if r != 0.0 => Some((c - r).abs() / r.abs()),
            (Some(c), Some(_)) => Some(c.abs()),
            _ => None,
        };
        Self {
            name: name.to_string(),
            computed,
            reference,
            relative_error,
        }
    }
}

/// How a run compares with a set of published values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub lambda: Option<f64>,
    pub sigma: Option<f64>,
    /// `lambda² (1 + sigma²) - 1`; negative means no real orbit exists.
    pub real_root_condition: Option<f64>,
    pub solvable: bool,
    pub comparisons: Vec<Comparison>,
    pub notes: Vec<String>,
}

impl DiscrepancyReport {
    pub fn comparison(&self, name: &str) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub problem: ProblemSummary,
    pub dimensionless: Option<DimensionlessParams>,
    pub real_root_condition: Option<f64>,
    pub equilibrium: Option<Equilibrium>,
    pub error: Option<String>,
    pub warnings: Vec<String>,
    pub discrepancy: Option<DiscrepancyReport>,
}

/// Which free variations each leading minor spans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinorLabel {
    pub block: String,
    pub order: usize,
    pub variations: Vec<String>,
    pub value: f64,
}

pub fn minor_labels(report: &StabilityReport) -> Vec<MinorLabel> {
    let q1 = &FREE_VARIATIONS[0..3];
    let q2 = &FREE_VARIATIONS[3..7];
    let mut out = Vec::new();
    for (k, v) in report.q1_minors.iter().enumerate() {
        out.push(MinorLabel {
            block: "Q1".into(),
            order: k + 1,
            variations: q1[..=k].iter().map(|s| s.to_string()).collect(),
            value: *v,
        });
    }
    for (k, v) in report.q2_minors.iter().enumerate() {
        out.push(MinorLabel {
            block: "Q2".into(),
            order: k + 1,
            variations: q2[..=k].iter().map(|s| s.to_string()).collect(),
            value: *v,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCommandReport {
    pub equilibrium: EquilibriumReport,
    pub stability: Option<StabilityReport>,
    pub minors: Vec<MinorLabel>,
    pub all_minors_positive: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub integrator: IntegratorConfig,
    pub seed: u64,
    pub perturbation: f64,
    pub period: f64,
    pub duration: f64,
    pub initial_state: PhaseState,
    pub final_state: PhaseState,
    pub samples: usize,
    pub drift: DriftStats,
    pub mu_correction: f64,
    pub trajectory_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullReport {
    pub config: RunConfig,
    pub field_probe: FieldProbeReport,
    pub stability: StabilityCommandReport,
    pub simulate: Option<SimulateReport>,
    pub sheaf: Option<SheafSummary>,
}

/// Compares the run with its `[reference]` values and, for a disk body, the
/// published inertia parameter with the one implied by the geometry.
pub fn discrepancy(
    cfg: &RunConfig,
    prob: &EquilibriumProblem,
    eq: Option<&Equilibrium>,
    disk: Option<&DiskBody>,
) -> DiscrepancyReport {
    let reference = cfg.reference.unwrap_or_default();
    let dp = dimensionless_params(prob).ok();
    let real_root_condition = dp.map(|d| d.real_root_condition());
    let b = prob.field.value(&prob.orbit_point()).ok();
    let orbit = eq.and_then(|e| e.orbital());
    let mut notes = Vec::new();
    let mut comparisons = vec![Comparison::new("alpha", Some(prob.body.alpha()), reference.alpha)];
    if let Some(d) = disk {
        comparisons.push(Comparison::new("alpha_from_disk", Some(d.alpha), reference.alpha));
    }
    comparisons.extend([
        Comparison::new("b1", b.map(|b| b.x), reference.b1),
        Comparison::new("b3", b.map(|b| b.z), reference.b3),
        Comparison::new("xi1", orbit.map(|o| o.xi1), reference.xi1),
        Comparison::new("xi2_tilde", orbit.map(|o| o.xi2_tilde), reference.xi2_tilde),
        Comparison::new("nu1", orbit.map(|o| o.nu1), reference.nu1),
        Comparison::new("nu3", orbit.map(|o| o.nu3), reference.nu3),
        Comparison::new("pi1", orbit.map(|o| o.pi1), reference.pi1),
        Comparison::new("pi3", orbit.map(|o| o.pi3), reference.pi3),
    ]);
    if let (Some(r1), Some(r3)) = (reference.b1, reference.b3) {
        // The linear field alone gives B1 = -B' r0 / 2 and B3 = B0 on the plane.
        let lin = &prob.field.linear;
        let b1_lin = -0.5 * lin.b_prime * prob.r0;
        notes.push(format!(
            "reference B1 = {r1:e}, B3 = {r3:e}; the linear part alone gives B1 = {b1_lin:e}, B3 = {:e}",
            lin.b0
        ));
    }
    if let Some(c) = real_root_condition {
        if c < 0.0 {
            notes.push(format!(
                "lambda^2 (1 + sigma^2) - 1 = {c:e} < 0: no real orbit exists for these inputs"
            ));
        }
    }
    if let (Some(r), Some(d)) = (reference.alpha, disk) {
        notes.push(format!(
            "published alpha = {r:e} but the disk geometry gives alpha = 1/I_perp = {:e}; \
             the run uses the configured body, neither value is substituted",
            d.alpha
        ));
    }
    DiscrepancyReport {
        lambda: dp.map(|d| d.lambda),
        sigma: dp.map(|d| d.sigma),
        real_root_condition,
        solvable: orbit.is_some() || matches!(eq, Some(Equilibrium::Static(_))),
        comparisons,
        notes,
    }
}
