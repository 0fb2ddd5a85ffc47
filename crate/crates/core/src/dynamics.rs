//! Direct integration of the equations of motion
//!
//! ```text
//! x' = p / M
//! p' = DB(x)^T mu - M g e3
//! mu' = alpha pi × mu
//! pi' = mu × B(x)
//! ```
//!
//! with invariant monitoring and Monte Carlo perturbation sheaves.

use std::ops::ControlFlow;

use nalgebra::{Rotation3, SVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibrium::{EquilibriumProblem, RelativeEquilibrium};
use crate::fields::FieldError;

type Flat = SVector<f64, 12>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("trajectory hit a pole at t = {t}")]
    PoleCollision { t: f64, state: Box<PhaseState> },
    #[error("adaptive step size underflow at t = {t} (step {step:e})")]
    StepFailure { t: f64, step: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("invalid integrator setting {name} = {value}: {reason}")]
    InvalidConfig {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub x: Vector3<f64>,
    pub p: Vector3<f64>,
    pub mu: Vector3<f64>,
    pub pi: Vector3<f64>,
    pub t: f64,
}

impl PhaseState {
    pub fn from_equilibrium(eq: &RelativeEquilibrium, prob: &EquilibriumProblem) -> Self {
        Self {
            x: eq.x(),
            p: eq.p(),
            mu: eq.nu() * prob.body.moment,
            pi: eq.pi(),
            t: 0.0,
        }
    }

    fn flat(&self) -> Flat {
        let mut v = Flat::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.x);
        v.fixed_rows_mut::<3>(3).copy_from(&self.p);
        v.fixed_rows_mut::<3>(6).copy_from(&self.mu);
        v.fixed_rows_mut::<3>(9).copy_from(&self.pi);
        v
    }

    fn from_flat(v: &Flat, t: f64) -> Self {
        Self {
            x: v.fixed_rows::<3>(0).into_owned(),
            p: v.fixed_rows::<3>(3).into_owned(),
            mu: v.fixed_rows::<3>(6).into_owned(),
            pi: v.fixed_rows::<3>(9).into_owned(),
            t,
        }
    }

    /// Rotates every vector about `e3`.
    pub fn rotated(&self, angle: f64) -> Self {
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), angle);
        Self {
            x: r * self.x,
            p: r * self.p,
            mu: r * self.mu,
            pi: r * self.pi,
            t: self.t,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|v| v.is_finite())
    }

    pub fn csv_row(&self, inv: &Invariants) -> String {
        let mut cols = vec![self.t];
        cols.extend(self.flat().iter());
        cols.extend([inv.h, inv.j1, inv.j2]);
        cols.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
    }
}

pub const CSV_HEADER: &str = "t,x1,x2,x3,p1,p2,p3,mu1,mu2,mu3,pi1,pi2,pi3,h,J1,J2";

/// Time derivative; the returned state carries `t = 1`.
pub fn derivative(s: &PhaseState, prob: &EquilibriumProblem) -> Result<PhaseState, FieldError> {
    let (b, jac) = prob.field.value_and_jacobian(&s.x)?;
    let body = &prob.body;
    Ok(PhaseState {
        x: s.p / body.mass,
        p: jac.transpose() * s.mu - Vector3::z() * (body.mass * prob.g),
        mu: s.pi.cross(&s.mu) * body.alpha(),
        pi: s.mu.cross(&b),
        t: 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Invariants {
    /// Total energy, with `nu = mu / m`.
    pub h: f64,
    /// `<pi + x × p, e3>`.
    pub j1: f64,
    /// `-<pi, nu>`.
    pub j2: f64,
    pub mu_norm: f64,
    pub pi_dot_nu: f64,
}

pub fn invariants(s: &PhaseState, prob: &EquilibriumProblem) -> Result<Invariants, FieldError> {
    let body = &prob.body;
    let b = prob.field.value(&s.x)?;
    let nu = s.mu / body.moment;
    let pi_nu = s.pi.dot(&nu);
    let h = s.p.norm_squared() / (2.0 * body.mass)
        + 0.5 * body.alpha() * s.pi.norm_squared()
        + 0.5 * body.beta() * pi_nu * pi_nu
        - s.mu.dot(&b)
        + body.mass * prob.g * s.x.z;
    Ok(Invariants {
        h,
        j1: s.pi.z + s.x.cross(&s.p).z,
        j2: -pi_nu,
        mu_norm: s.mu.norm(),
        pi_dot_nu: pi_nu,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    /// Classical fourth-order Runge-Kutta with fixed step.
    Rk4 { dt: f64 },
    /// Dormand-Prince 5(4) with local error control.
    DormandPrince { rtol: f64, atol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: Method,
    pub renormalize_mu: bool,
    /// Record every `stride`-th accepted step.
    pub stride: usize,
    /// Hard cap on integrated time, s. Serialized as `null` when unbounded.
    #[serde(with = "unbounded")]
    pub max_time: f64,
}

mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl IntegratorConfig {
    pub fn rk4(dt: f64) -> Self {
        Self {
            method: Method::Rk4 { dt },
            renormalize_mu: false,
            stride: 1,
            max_time: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let positive = |name, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(DynamicsError::InvalidConfig {
                    name,
                    value,
                    reason: "must be positive and finite",
                })
            }
        };
        match self.method {
            Method::Rk4 { dt } => positive("dt", dt)?,
            Method::DormandPrince { rtol, atol } => {
                positive("rtol", rtol)?;
                positive("atol", atol)?;
            }
        }
        if self.stride == 0 {
            return Err(DynamicsError::InvalidConfig {
                name: "stride",
                value: 0.0,
                reason: "must be at least 1",
            });
        }
        if !(self.max_time > 0.0) {
            return Err(DynamicsError::InvalidConfig {
                name: "max_time",
                value: self.max_time,
                reason: "must be positive",
            });
        }
        Ok(())
    }
}

fn rhs(v: &Flat, t: f64, prob: &EquilibriumProblem) -> Result<Flat, DynamicsError> {
    let s = PhaseState::from_flat(v, t);
    derivative(&s, prob)
        .map(|d| d.flat())
        .map_err(|_| DynamicsError::PoleCollision { t, state: Box::new(s) })
}

fn rk4_step(v: &Flat, t: f64, dt: f64, prob: &EquilibriumProblem) -> Result<Flat, DynamicsError> {
    let k1 = rhs(v, t, prob)?;
    let k2 = rhs(&(v + k1 * (dt / 2.0)), t + dt / 2.0, prob)?;
    let k3 = rhs(&(v + k2 * (dt / 2.0)), t + dt / 2.0, prob)?;
    let k4 = rhs(&(v + k3 * dt), t + dt, prob)?;
    Ok(v + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One trial step; returns the fifth-order solution and the scaled error norm.
fn dp_step(
    v: &Flat,
    t: f64,
    dt: f64,
    rtol: f64,
    atol: f64,
    prob: &EquilibriumProblem,
) -> Result<(Flat, f64), DynamicsError> {
    let mut k = [Flat::zeros(); 7];
    for i in 0..7 {
        let mut stage = *v;
        for j in 0..i {
            stage += k[j] * (A[i][j] * dt);
        }
        k[i] = rhs(&stage, t + C[i] * dt, prob)?;
    }
    let mut y5 = *v;
    let mut err = Flat::zeros();
    for i in 0..7 {
        y5 += k[i] * (B5[i] * dt);
        err += k[i] * ((B5[i] - B4[i]) * dt);
    }
    let norm = (0..12)
        .map(|i| {
            let sc = atol + rtol * v[i].abs().max(y5[i].abs());
            (err[i] / sc).powi(2)
        })
        .sum::<f64>()
        / 12.0;
    Ok((y5, norm.sqrt()))
}

/// Drives the integration and hands every accepted state to `observe`.
/// Returns the last state and the cumulative `|mu|` correction.
pub fn integrate_with<F>(
    s0: &PhaseState,
    prob: &EquilibriumProblem,
    cfg: &IntegratorConfig,
    duration: f64,
    mut observe: F,
) -> Result<(PhaseState, f64), DynamicsError>
where
    F: FnMut(&PhaseState) -> ControlFlow<()>,
{
    cfg.validate()?;
    let t_end = s0.t + duration.min(cfg.max_time);
    let mut v = s0.flat();
    let mut t = s0.t;
    let mut correction = 0.0;
    let moment = prob.body.moment;
    if observe(s0).is_break() {
        return Ok((*s0, correction));
    }
    let mut trial = match cfg.method {
        Method::Rk4 { dt } => dt,
        Method::DormandPrince { .. } => (t_end - t) / 100.0,
    };
    while t < t_end {
        let dt = trial.min(t_end - t);
        let next = match cfg.method {
            Method::Rk4 { .. } => {
                let next = rk4_step(&v, t, dt, prob)?;
                // Keep the fixed grid exact instead of accumulating round-off.
                let steps = ((t - s0.t) / trial).round() + 1.0;
                t = (s0.t + steps * trial).min(t_end);
                next
            }
            Method::DormandPrince { rtol, atol } => {
                let (next, err) = dp_step(&v, t, dt, rtol, atol, prob)?;
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if err > 1.0 {
                    trial = dt * factor;
                    if trial < 1e-14 * t.abs().max(1.0) {
                        return Err(DynamicsError::StepFailure { t, step: trial });
                    }
                    continue;
                }
                t += dt;
                trial = dt * factor;
                next
            }
        };
        v = next;
        if cfg.renormalize_mu {
            let mut mu = v.fixed_rows_mut::<3>(6);
            let n = mu.norm();
            correction += (1.0 - moment / n).abs();
            mu *= moment / n;
        }
        let s = PhaseState::from_flat(&v, t);
        if !s.is_finite() {
            return Err(DynamicsError::NonFinite { t });
        }
        if observe(&s).is_break() {
            return Ok((s, correction));
        }
    }
    Ok((PhaseState::from_flat(&v, t), correction))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantTrace {
    pub t: Vec<f64>,
    pub h: Vec<f64>,
    pub j1: Vec<f64>,
    pub j2: Vec<f64>,
    pub mu_norm: Vec<f64>,
    pub pi_dot_nu: Vec<f64>,
}

/// Largest deviation from the initial value, relative to its magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftStats {
    pub h: f64,
    pub j1: f64,
    pub j2: f64,
    pub mu_norm: f64,
    pub pi_dot_nu: f64,
}

fn max_drift(series: &[f64]) -> f64 {
    let Some(first) = series.first() else { return 0.0 };
    let scale = if *first != 0.0 { first.abs() } else { 1.0 };
    series.iter().map(|v| (v - first).abs()).fold(0.0, f64::max) / scale
}

impl InvariantTrace {
    fn push(&mut self, t: f64, inv: &Invariants) {
        self.t.push(t);
        self.h.push(inv.h);
        self.j1.push(inv.j1);
        self.j2.push(inv.j2);
        self.mu_norm.push(inv.mu_norm);
        self.pi_dot_nu.push(inv.pi_dot_nu);
    }

    pub fn drift(&self) -> DriftStats {
        DriftStats {
            h: max_drift(&self.h),
            j1: max_drift(&self.j1),
            j2: max_drift(&self.j2),
            mu_norm: max_drift(&self.mu_norm),
            pi_dot_nu: max_drift(&self.pi_dot_nu),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<PhaseState>,
    pub trace: InvariantTrace,
    pub drift: DriftStats,
    /// Sum over steps of `|1 - m/|mu||` when renormalizing, else zero.
    pub mu_correction: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &PhaseState {
        self.samples.last().expect("trajectory holds the initial state")
    }

    pub fn to_csv(&self, prob: &EquilibriumProblem) -> Result<String, FieldError> {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for s in &self.samples {
            out.push_str(&s.csv_row(&invariants(s, prob)?));
            out.push('\n');
        }
        Ok(out)
    }
}

/// Integrates over `duration`, recording every `cfg.stride`-th step and the
/// final state.
pub fn integrate(
    s0: &PhaseState,
    prob: &EquilibriumProblem,
    cfg: &IntegratorConfig,
    duration: f64,
) -> Result<Trajectory, DynamicsError> {
    let mut samples = Vec::new();
    let mut trace = InvariantTrace::default();
    let mut count = 0usize;
    let mut last_recorded = true;
    let mut field_error = None;
    let (last, mu_correction) = integrate_with(s0, prob, cfg, duration, |s| {
        last_recorded = count % cfg.stride == 0;
        if last_recorded {
            match invariants(s, prob) {
                Ok(inv) => {
                    samples.push(*s);
                    trace.push(s.t, &inv);
                }
                Err(e) => {
                    field_error = Some((e, *s));
                    return ControlFlow::Break(());
                }
            }
        }
        count += 1;
        ControlFlow::Continue(())
    })?;
    if let Some((_, s)) = field_error {
        return Err(DynamicsError::PoleCollision { t: s.t, state: Box::new(s) });
    }
    if !last_recorded {
        let inv = invariants(&last, prob).map_err(|_| DynamicsError::PoleCollision {
            t: last.t,
            state: Box::new(last),
        })?;
        samples.push(last);
        trace.push(last.t, &inv);
    }
    let drift = trace.drift();
    Ok(Trajectory {
        samples,
        trace,
        drift,
        mu_correction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SheafConfig {
    pub n_samples: usize,
    pub rel_perturbation: f64,
    pub n_turns: f64,
    pub seed: u64,
    pub steps_per_turn: usize,
    /// Bounded requires `| |x_perp| - r0 | < max_radial_fraction * r0`.
    pub max_radial_fraction: f64,
    /// Bounded requires `|z| < max_z_fraction * r0`.
    pub max_z_fraction: f64,
    /// Bounded requires distance to both poles above this multiple of `h`.
    pub pole_clearance: f64,
    /// Bounded requires `|x| < escape_radius * r0`.
    pub escape_radius: f64,
}

impl Default for SheafConfig {
    fn default() -> Self {
        Self {
            n_samples: 100,
            rel_perturbation: 0.01,
            n_turns: 10.0,
            seed: 0,
            steps_per_turn: 2000,
            max_radial_fraction: 0.2,
            max_z_fraction: 0.2,
            pole_clearance: 2.0,
            escape_radius: 5.0,
        }
    }
}

impl SheafConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |name, value, reason| Err(DynamicsError::InvalidConfig { name, value, reason });
        if self.n_samples == 0 {
            return bad("n_samples", 0.0, "must be at least 1");
        }
        if !(self.rel_perturbation >= 0.0 && self.rel_perturbation < 1.0) {
            return bad("rel_perturbation", self.rel_perturbation, "must lie in [0, 1)");
        }
        if !(self.n_turns > 0.0) {
            return bad("n_turns", self.n_turns, "must be positive");
        }
        if self.steps_per_turn == 0 {
            return bad("steps_per_turn", 0.0, "must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Bounded,
    Escaped,
    /// The integrator reached a pole singularity.
    PoleCollision,
}

/// First bound violated by an escaping trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscapeReason {
    Radial,
    Vertical,
    PoleApproach,
    EscapeRadius,
    /// Integration failed (non-finite state or step underflow).
    Numerical,
}

/// Largest deviation from the equilibrium seen along a trajectory. Vectors
/// are compared after rotating the state back to the equilibrium azimuth, and
/// each is measured relative to the norm of its equilibrium value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    /// `| |x_perp| - r0 | / r0`.
    pub radial: f64,
    /// `|z| / r0`.
    pub vertical: f64,
    pub x: f64,
    pub p: f64,
    pub mu: f64,
    pub pi: f64,
}

impl Deviation {
    fn max_with(&mut self, o: &Deviation) {
        self.radial = self.radial.max(o.radial);
        self.vertical = self.vertical.max(o.vertical);
        self.x = self.x.max(o.x);
        self.p = self.p.max(o.p);
        self.mu = self.mu.max(o.mu);
        self.pi = self.pi.max(o.pi);
    }

    pub fn max_component(&self) -> f64 {
        [self.radial, self.vertical, self.x, self.p, self.mu, self.pi]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

fn rel(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let n = b.norm();
    if n > 0.0 {
        (a - b).norm() / n
    } else {
        a.norm()
    }
}

fn deviation(s: &PhaseState, reference: &PhaseState, r0: f64) -> Deviation {
    let azimuth = s.x.y.atan2(s.x.x);
    let back = s.rotated(-azimuth);
    Deviation {
        radial: (s.x.xy().norm() - r0).abs() / r0,
        vertical: s.x.z.abs() / r0,
        x: rel(&back.x, &reference.x),
        p: rel(&back.p, &reference.p),
        mu: rel(&back.mu, &reference.mu),
        pi: rel(&back.pi, &reference.pi),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOutcome {
    pub index: usize,
    pub classification: Classification,
    pub reason: Option<EscapeReason>,
    /// Orbital periods integrated before the first violation, or all of them.
    pub turns_completed: f64,
    pub max_deviation: Deviation,
    pub initial_state: PhaseState,
    pub final_state: PhaseState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheafSummary {
    pub config: SheafConfig,
    pub period: f64,
    pub bounded: usize,
    pub escaped: usize,
    pub pole_collisions: usize,
    /// Samples that were not bounded and failed within three turns.
    pub lost_within_three_turns: usize,
    /// Largest deviation over all bounded samples.
    pub bounded_max_deviation: Deviation,
    pub outcomes: Vec<TrajectoryOutcome>,
}

/// Perturbs every component by a relative amount drawn uniformly from
/// `[-eps, eps]`; zero components use the vector's dominant component as
/// scale. `mu` is rescaled back to length `m` afterwards.
pub fn perturb(s: &PhaseState, eps: f64, moment: f64, rng: &mut impl Rng) -> PhaseState {
    let mut jitter = |v: &Vector3<f64>| {
        let dominant = v.amax();
        v.map(|c| {
            let u: f64 = if eps > 0.0 { rng.random_range(-eps..=eps) } else { 0.0 };
            if c != 0.0 {
                c * (1.0 + u)
            } else {
                u * dominant
            }
        })
    };
    let x = jitter(&s.x);
    let p = jitter(&s.p);
    let mu = jitter(&s.mu);
    let pi = jitter(&s.pi);
    PhaseState {
        x,
        p,
        mu: mu * (moment / mu.norm()),
        pi,
        t: s.t,
    }
}

/// Independent generator for sample `index`: the seed selects the key, the
/// index selects the stream.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn run_sample(
    eq: &RelativeEquilibrium,
    prob: &EquilibriumProblem,
    cfg: &SheafConfig,
    index: usize,
) -> TrajectoryOutcome {
    let reference = PhaseState::from_equilibrium(eq, prob);
    let mut rng = sample_rng(cfg.seed, index);
    let s0 = perturb(&reference, cfg.rel_perturbation, prob.body.moment, &mut rng);
    let period = eq.period();
    let icfg = IntegratorConfig::rk4(period / cfg.steps_per_turn as f64);
    let r0 = eq.r0;
    let h = prob.field.orbitron.h;
    let poles = [Vector3::new(0.0, 0.0, h), Vector3::new(0.0, 0.0, -h)];

    let mut class = Classification::Bounded;
    let mut reason = None;
    let mut max_dev = Deviation::default();
    let mut last = s0;
    let result = integrate_with(&s0, prob, &icfg, cfg.n_turns * period, |s| {
        last = *s;
        let d = deviation(s, &reference, r0);
        max_dev.max_with(&d);
        let violated = if d.radial >= cfg.max_radial_fraction {
            Some(EscapeReason::Radial)
        } else if d.vertical >= cfg.max_z_fraction {
            Some(EscapeReason::Vertical)
        } else if poles.iter().any(|c| (s.x - c).norm() < cfg.pole_clearance * h) {
            Some(EscapeReason::PoleApproach)
        } else if s.x.norm() >= cfg.escape_radius * r0 {
            Some(EscapeReason::EscapeRadius)
        } else {
            None
        };
        match violated {
            Some(r) => {
                class = Classification::Escaped;
                reason = Some(r);
                ControlFlow::Break(())
            }
            None => ControlFlow::Continue(()),
        }
    });
    match result {
        Ok(_) => {}
        Err(DynamicsError::PoleCollision { state, .. }) => {
            last = *state;
            class = Classification::PoleCollision;
        }
        Err(_) => {
            class = Classification::Escaped;
            reason = Some(EscapeReason::Numerical);
        }
    }
    TrajectoryOutcome {
        index,
        classification: class,
        reason,
        turns_completed: (last.t / period).min(cfg.n_turns),
        max_deviation: max_dev,
        initial_state: s0,
        final_state: last,
    }
}

/// Runs the sheaf concurrently. Results depend only on the seed and config,
/// never on scheduling.
pub fn monte_carlo_sheaf(
    eq: &RelativeEquilibrium,
    prob: &EquilibriumProblem,
    cfg: &SheafConfig,
) -> Result<SheafSummary, DynamicsError> {
    cfg.validate()?;
    let outcomes: Vec<TrajectoryOutcome> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| run_sample(eq, prob, cfg, i))
        .collect();
    let count = |c| outcomes.iter().filter(|o| o.classification == c).count();
    let mut bounded_max_deviation = Deviation::default();
    for o in outcomes.iter().filter(|o| o.classification == Classification::Bounded) {
        bounded_max_deviation.max_with(&o.max_deviation);
    }
    Ok(SheafSummary {
        config: *cfg,
        period: eq.period(),
        bounded: count(Classification::Bounded),
        escaped: count(Classification::Escaped),
        pole_collisions: count(Classification::PoleCollision),
        lost_within_three_turns: outcomes
            .iter()
            .filter(|o| o.classification != Classification::Bounded && o.turns_completed <= 3.0)
            .count(),
        bounded_max_deviation,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{BodyParams, STANDARD_GRAVITY};
    use crate::fields::{FieldModel, LinearFieldParams, OrbitronParams};
    use approx::assert_relative_eq;

    fn problem() -> EquilibriumProblem {
        let field = FieldModel::new(
            OrbitronParams::new(200.0, 0.05).unwrap(),
            LinearFieldParams::new(0.4, 0.5).unwrap(),
        );
        let body = BodyParams::new(0.00683, 0.12, 2e-3, 3e-3).unwrap();
        EquilibriumProblem::new(field, body, 0.15, STANDARD_GRAVITY).unwrap()
    }

    fn state() -> PhaseState {
        PhaseState {
            x: Vector3::new(0.1, 0.03, 0.01),
            p: Vector3::new(-0.002, 0.004, 0.001),
            mu: Vector3::new(0.02, -0.01, 0.1).normalize() * 0.12,
            pi: Vector3::new(0.003, 0.001, 0.01),
            t: 0.0,
        }
    }

    #[test]
    fn moment_derivative_is_orthogonal() {
        let prob = problem();
        let s = state();
        let d = derivative(&s, &prob).unwrap();
        assert!(d.mu.dot(&s.mu).abs() < 1e-15 * d.mu.norm() * s.mu.norm());
    }

    #[test]
    fn aligned_spin_has_no_rotational_motion() {
        let prob = problem();
        let mut s = state();
        let b = prob.field.value(&s.x).unwrap();
        s.mu = b.normalize() * 0.12;
        s.pi = b.normalize() * 0.01;
        let d = derivative(&s, &prob).unwrap();
        assert!(d.mu.norm() < 1e-15);
        assert!(d.pi.norm() < 1e-15);
    }

    #[test]
    fn resting_energy_is_potential_only() {
        let prob = problem();
        let x = Vector3::new(0.01, 0.0, 0.02);
        let b = prob.field.value(&x).unwrap();
        let s = PhaseState {
            x,
            p: Vector3::zeros(),
            mu: b.normalize() * 0.12,
            pi: Vector3::zeros(),
            t: 0.0,
        };
        let inv = invariants(&s, &prob).unwrap();
        assert_relative_eq!(inv.h, -0.12 * b.norm() + 0.00683 * STANDARD_GRAVITY * 0.02, max_relative = 1e-14);
        assert_eq!(inv.j2, -inv.pi_dot_nu);
    }

    #[test]
    fn invariants_are_axially_symmetric() {
        let prob = problem();
        let s = state();
        let base = invariants(&s, &prob).unwrap();
        for k in 0..10 {
            let r = invariants(&s.rotated(0.6 * k as f64 + 0.1), &prob).unwrap();
            assert_relative_eq!(r.h, base.h, max_relative = 1e-12);
            assert_relative_eq!(r.j1, base.j1, max_relative = 1e-12);
            assert_relative_eq!(r.j2, base.j2, max_relative = 1e-12);
        }
    }

    #[test]
    fn stride_records_endpoints() {
        let prob = problem();
        let mut cfg = IntegratorConfig::rk4(1e-4);
        cfg.stride = 7;
        let tr = integrate(&state(), &prob, &cfg, 1e-3).unwrap();
        assert_eq!(tr.samples.first().unwrap().t, 0.0);
        assert_relative_eq!(tr.final_state().t, 1e-3, max_relative = 1e-12);
        assert_eq!(tr.samples.len(), 3);
        assert_eq!(tr.trace.t.len(), 3);
    }

    #[test]
    fn adaptive_agrees_with_fixed_step() {
        let prob = problem();
        let fixed = integrate(&state(), &prob, &IntegratorConfig::rk4(1e-5), 0.01).unwrap();
        let cfg = IntegratorConfig {
            method: Method::DormandPrince { rtol: 1e-11, atol: 1e-14 },
            ..IntegratorConfig::rk4(1.0)
        };
        let adaptive = integrate(&state(), &prob, &cfg, 0.01).unwrap();
        let (a, b) = (fixed.final_state(), adaptive.final_state());
        assert_relative_eq!(a.t, b.t, max_relative = 1e-12);
        assert!((a.x - b.x).norm() < 1e-9 * a.x.norm());
        assert!((a.pi - b.pi).norm() < 1e-8 * a.pi.norm());
    }

    #[test]
    fn renormalization_keeps_moment_length() {
        let prob = problem();
        let mut cfg = IntegratorConfig::rk4(1e-3);
        cfg.renormalize_mu = true;
        let tr = integrate(&state(), &prob, &cfg, 0.05).unwrap();
        for s in &tr.samples {
            assert_relative_eq!(s.mu.norm(), 0.12, max_relative = 1e-14);
        }
        assert!(tr.mu_correction > 0.0);
    }

    #[test]
    fn pole_hit_is_reported() {
        let prob = problem();
        let s = PhaseState {
            x: Vector3::new(0.0, 0.0, 0.05),
            ..state()
        };
        assert!(matches!(
            integrate(&s, &prob, &IntegratorConfig::rk4(1e-4), 1e-3),
            Err(DynamicsError::PoleCollision { .. })
        ));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(IntegratorConfig::rk4(0.0).validate().is_err());
        let cfg = SheafConfig {
            rel_perturbation: 1.0,
            ..SheafConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let s = state();
        let mut rng = sample_rng(1, 0);
        let p = perturb(&s, 0.0, 0.12, &mut rng);
        assert_eq!(p.x, s.x);
        assert_eq!(p.pi, s.pi);
        assert_relative_eq!(p.mu.norm(), 0.12, max_relative = 1e-15);
    }

    #[test]
    fn zero_components_use_dominant_scale() {
        let s = PhaseState {
            x: Vector3::new(0.2, 0.0, 0.0),
            ..state()
        };
        let mut rng = sample_rng(3, 0);
        let p = perturb(&s, 0.01, 0.12, &mut rng);
        assert!(p.x.y != 0.0 && p.x.y.abs() <= 0.01 * 0.2);
        assert!((p.x.x - 0.2).abs() <= 0.01 * 0.2);
    }

    #[test]
    fn sample_streams_differ() {
        let a: f64 = sample_rng(5, 0).random();
        let b: f64 = sample_rng(5, 1).random();
        let c: f64 = sample_rng(5, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
