//! Relative equilibria in the plane `z = 0`.
//!
//! The orbit radius `r0` is prescribed. The force balance together with
//! `|nu| = 1` fixes the attitude `nu` and the orbital rate `xi1`; the spin
//! variables `pi` and the multiplier `xi2_tilde` then follow from the
//! remaining two necessary conditions.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{FieldError, FieldModel};

/// Default gravitational acceleration, m/s².
pub const STANDARD_GRAVITY: f64 = 9.81;

/// `|nu1|` below this is treated as the vertical (hover) attitude.
pub const ATTITUDE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EquilibriumError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("degenerate field: the axial gradient B' vanishes")]
    DegenerateField,
    #[error(
        "no real equilibrium: lambda^2 (1 + sigma^2) - 1 = {real_root_condition:e} < 0 \
         (lambda = {lambda}, sigma = {sigma})"
    )]
    NoRealEquilibrium {
        lambda: f64,
        sigma: f64,
        real_root_condition: f64,
    },
    #[error("both zeta^2 roots are negative ({plus:e}, {minus:e})")]
    NoAdmissibleRoot { plus: f64, minus: f64 },
    #[error("degenerate attitude: {reason}")]
    DegenerateAttitude { reason: &'static str },
}

/// Axially symmetric rigid dipole; the moment points along the symmetry axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    /// Mass, kg.
    pub mass: f64,
    /// Magnitude of the magnetic moment, A·m².
    pub moment: f64,
    /// Transverse moment of inertia `I1 = I2`, kg·m².
    pub i_perp: f64,
    /// Axial moment of inertia `I3`, kg·m².
    pub i_axial: f64,
}

impl BodyParams {
    pub fn new(mass: f64, moment: f64, i_perp: f64, i_axial: f64) -> Result<Self, EquilibriumError> {
        for (name, value) in [
            ("mass", mass),
            ("moment", moment),
            ("i_perp", i_perp),
            ("i_axial", i_axial),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(EquilibriumError::InvalidParameter {
                    name,
                    value,
                    reason: "must be finite and positive",
                });
            }
        }
        if i_axial > 2.0 * i_perp {
            return Err(EquilibriumError::InvalidParameter {
                name: "i_axial",
                value: i_axial,
                reason: "exceeds 2 * i_perp, not a physical rigid body",
            });
        }
        Ok(Self {
            mass,
            moment,
            i_perp,
            i_axial,
        })
    }

    /// `1 / I_perp`.
    pub fn alpha(&self) -> f64 {
        1.0 / self.i_perp
    }

    /// `1 / I3 - 1 / I_perp`.
    pub fn beta(&self) -> f64 {
        1.0 / self.i_axial - 1.0 / self.i_perp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumProblem {
    pub field: FieldModel,
    pub body: BodyParams,
    /// Orbit radius, m.
    pub r0: f64,
    /// Gravitational acceleration, m/s².
    pub g: f64,
}

impl EquilibriumProblem {
    pub fn new(field: FieldModel, body: BodyParams, r0: f64, g: f64) -> Result<Self, EquilibriumError> {
        if !(r0.is_finite() && r0 > 0.0) {
            return Err(EquilibriumError::InvalidParameter {
                name: "r0",
                value: r0,
                reason: "must be finite and positive",
            });
        }
        if !(g.is_finite() && g > 0.0) {
            return Err(EquilibriumError::InvalidParameter {
                name: "g",
                value: g,
                reason: "must be finite and positive",
            });
        }
        Ok(Self { field, body, r0, g })
    }

    pub fn orbit_point(&self) -> Vector3<f64> {
        Vector3::new(self.r0, 0.0, 0.0)
    }
}

/// `lambda = m B' / (M g)` and `sigma = -B_rz / B'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionlessParams {
    pub lambda: f64,
    pub sigma: f64,
}

impl DimensionlessParams {
    /// `lambda^2 (1 + sigma^2) - 1`; real roots exist iff this is non-negative.
    pub fn real_root_condition(&self) -> f64 {
        self.lambda * self.lambda * (1.0 + self.sigma * self.sigma) - 1.0
    }
}

pub fn dimensionless_params(prob: &EquilibriumProblem) -> Result<DimensionlessParams, EquilibriumError> {
    let b_prime = prob.field.linear.b_prime;
    if b_prime == 0.0 {
        return Err(EquilibriumError::DegenerateField);
    }
    let jac = prob.field.midplane_jacobian(prob.r0)?;
    // B_rz = B_zr on a curl-free field; take the z-row entry.
    let b_zr = jac[(2, 0)];
    Ok(DimensionlessParams {
        lambda: prob.body.moment * b_prime / (prob.body.mass * prob.g),
        sigma: -b_zr / b_prime,
    })
}

/// Both branches of the `zeta^2` quadratic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaRoots {
    /// The `+` branch, `[sigma + (2 sigma^2 + 1) sqrt(D)] / (2 (1 + sigma^2))`.
    pub plus: f64,
    /// The `-` branch.
    pub minus: f64,
    /// Real non-negative roots, sorted descending.
    pub admissible: Vec<f64>,
}

impl ZetaRoots {
    /// The designated root: the `+` branch.
    pub fn proper(&self) -> f64 {
        self.plus
    }
}

/// Roots of `(1 + s^2) u^2 - s u + (s^2 + 1/4 - l^2 (s^2 + 1/2)^2) = 0`, the
/// unit-length constraint on `nu` after eliminating it through the force
/// balance.
pub fn solve_zeta_squared(dp: &DimensionlessParams) -> Result<ZetaRoots, EquilibriumError> {
    let s = dp.sigma;
    let cond = dp.real_root_condition();
    if cond < 0.0 {
        return Err(EquilibriumError::NoRealEquilibrium {
            lambda: dp.lambda,
            sigma: s,
            real_root_condition: cond,
        });
    }
    // The discriminant factors as (2 s^2 + 1)^2 * cond.
    let half_width = (2.0 * s * s + 1.0) * cond.sqrt();
    let denom = 2.0 * (1.0 + s * s);
    let plus = (s + half_width) / denom;
    let minus = (s - half_width) / denom;
    if plus < 0.0 {
        return Err(EquilibriumError::NoAdmissibleRoot { plus, minus });
    }
    let admissible = [plus, minus].into_iter().filter(|u| *u >= 0.0).collect();
    Ok(ZetaRoots {
        plus,
        minus,
        admissible,
    })
}

/// Closed form `zeta^2 = s (1 + rho) / (1 + s^2) + (s^2 - rho) sqrt(D) / (1 + s^2)`
/// with a free parameter `rho`; `rho = -1/2` reproduces the `+` branch.
pub fn zeta_squared_closed_form(dp: &DimensionlessParams, rho: f64) -> f64 {
    let s = dp.sigma;
    let root = dp.real_root_condition().sqrt();
    s * (1.0 + rho) / (1.0 + s * s) + (s * s - rho) / (1.0 + s * s) * root
}

/// Attitude `(nu1, nu3)` from the linear force balance at a given `zeta^2`.
pub fn solve_attitude(dp: &DimensionlessParams, zeta_sq: f64) -> Result<(f64, f64), EquilibriumError> {
    if dp.lambda == 0.0 {
        return Err(EquilibriumError::DegenerateField);
    }
    let s = dp.sigma;
    let d = s * s + 0.5;
    let nu1 = (zeta_sq - s) / (dp.lambda * d);
    let nu3 = (s * zeta_sq + 0.5) / (dp.lambda * d);
    Ok((nu1, nu3))
}

/// Residual of the 2×2 force-balance system
/// `[-1/2, -s; -s, 1] [nu1; nu3] = [-zeta^2; 1] / lambda`.
pub fn attitude_residual(dp: &DimensionlessParams, zeta_sq: f64, nu1: f64, nu3: f64) -> [f64; 2] {
    let s = dp.sigma;
    [
        -0.5 * nu1 - s * nu3 + zeta_sq / dp.lambda,
        -s * nu1 + nu3 - 1.0 / dp.lambda,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinSolution {
    pub pi1: f64,
    pub pi3: f64,
    pub xi2_tilde: f64,
}

/// Spin variables from the last two necessary conditions, given the orbit.
pub fn solve_spin(
    prob: &EquilibriumProblem,
    xi1: f64,
    nu1: f64,
    nu3: f64,
) -> Result<SpinSolution, EquilibriumError> {
    if xi1 == 0.0 {
        return Err(EquilibriumError::DegenerateAttitude {
            reason: "orbital rate xi1 is zero",
        });
    }
    if nu1.abs() < ATTITUDE_TOLERANCE {
        return Err(EquilibriumError::DegenerateAttitude {
            reason: "nu1 = 0: the dipole is vertical and pi is parallel to e3",
        });
    }
    let b = prob.field.value(&prob.orbit_point())?;
    let m = prob.body.moment;
    let alpha = prob.body.alpha();
    let torque = m * (nu3 * b.x - nu1 * b.z);
    Ok(SpinSolution {
        pi1: torque / xi1,
        pi3: xi1 / alpha + nu3 / nu1 * torque / xi1,
        xi2_tilde: -alpha * torque / (xi1 * nu1),
    })
}

/// Phase-space point in inertial coordinates, attitude given by `nu = A e3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanicalState {
    pub x: Vector3<f64>,
    pub p: Vector3<f64>,
    pub nu: Vector3<f64>,
    pub pi: Vector3<f64>,
}

/// Left-hand sides of the four necessary conditions
/// (`delta p`, `delta x`, `delta pi`, `delta A` rows).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NecessaryResiduals {
    /// `p / M - xi1 (e3 × x)`.
    pub momentum: [f64; 3],
    /// `xi1 (e3 × p) - m DB^T nu + M g e3`.
    pub force: [f64; 3],
    /// `alpha pi - xi1 e3 + xi2_tilde nu`.
    pub spin: [f64; 3],
    /// `nu × (xi2_tilde pi - m B)`.
    pub torque: [f64; 3],
    /// Each row's max-norm divided by the largest term entering that row.
    pub relative: [f64; 4],
}

impl NecessaryResiduals {
    pub fn max_abs(&self) -> f64 {
        [self.momentum, self.force, self.spin, self.torque]
            .iter()
            .flatten()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn max_relative(&self) -> f64 {
        self.relative.iter().fold(0.0_f64, |acc, v| acc.max(*v))
    }
}

fn arr(v: Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn ratio(residual: Vector3<f64>, scale: f64) -> f64 {
    let r = residual.amax();
    if scale > 0.0 {
        r / scale
    } else {
        r
    }
}

pub fn residual_necessary_conditions(
    state: &MechanicalState,
    prob: &EquilibriumProblem,
    xi1: f64,
    xi2_tilde: f64,
) -> Result<NecessaryResiduals, EquilibriumError> {
    let e3 = Vector3::z();
    let body = &prob.body;
    let (b, jac) = prob.field.value_and_jacobian(&state.x)?;
    let alpha = body.alpha();
    let m = body.moment;

    let p_term = state.p / body.mass;
    let rot_x = e3.cross(&state.x) * xi1;
    let momentum = p_term - rot_x;

    let coriolis = e3.cross(&state.p) * xi1;
    let magnetic = jac.transpose() * state.nu * m;
    let weight = e3 * (body.mass * prob.g);
    let force = coriolis - magnetic + weight;

    let spin_terms = [state.pi * alpha, e3 * xi1, state.nu * xi2_tilde];
    let spin = spin_terms[0] - spin_terms[1] + spin_terms[2];

    let torque_arg = state.pi * xi2_tilde - b * m;
    let torque = state.nu.cross(&torque_arg);

    let max_norm = |vs: &[Vector3<f64>]| vs.iter().fold(0.0_f64, |a, v| a.max(v.amax()));
    let relative = [
        ratio(momentum, max_norm(&[p_term, rot_x])),
        ratio(force, max_norm(&[coriolis, magnetic, weight])),
        ratio(spin, max_norm(&spin_terms)),
        ratio(
            torque,
            max_norm(&[state.pi * xi2_tilde, b * m]) * state.nu.amax(),
        ),
    ];
    Ok(NecessaryResiduals {
        momentum: arr(momentum),
        force: arr(force),
        spin: arr(spin),
        torque: arr(torque),
        relative,
    })
}

/// A steady orbit `x0 = r0 e1`, `p0 = M xi1 r0 e2`, with `nu` and `pi` in the
/// `(e1, e3)` plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeEquilibrium {
    pub r0: f64,
    pub xi1: f64,
    pub xi2_tilde: f64,
    pub nu1: f64,
    pub nu3: f64,
    pub pi1: f64,
    pub pi3: f64,
    pub p0: f64,
    pub zeta_sq: f64,
    pub dimensionless: DimensionlessParams,
    pub roots: ZetaRoots,
    /// Field at the orbit point.
    pub b: [f64; 3],
    pub residuals: NecessaryResiduals,
}

impl RelativeEquilibrium {
    pub fn x(&self) -> Vector3<f64> {
        Vector3::new(self.r0, 0.0, 0.0)
    }

    pub fn p(&self) -> Vector3<f64> {
        Vector3::new(0.0, self.p0, 0.0)
    }

    pub fn nu(&self) -> Vector3<f64> {
        Vector3::new(self.nu1, 0.0, self.nu3)
    }

    pub fn pi(&self) -> Vector3<f64> {
        Vector3::new(self.pi1, 0.0, self.pi3)
    }

    pub fn state(&self) -> MechanicalState {
        MechanicalState {
            x: self.x(),
            p: self.p(),
            nu: self.nu(),
            pi: self.pi(),
        }
    }

    /// Attitude matrix: the rotation about `e2` whose third column is `nu`.
    pub fn attitude(&self) -> Matrix3<f64> {
        let (s, c) = (self.nu1, self.nu3);
        Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
    }

    pub fn pi_dot_nu(&self) -> f64 {
        self.pi1 * self.nu1 + self.pi3 * self.nu3
    }

    /// The bare multiplier `xi2 = xi2_tilde - beta <pi, nu>`.
    pub fn xi2(&self, body: &BodyParams) -> f64 {
        self.xi2_tilde - body.beta() * self.pi_dot_nu()
    }

    /// Orbital period `2 pi / xi1`.
    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.xi1
    }
}

/// Degenerate `zeta^2 = 0` solution: magnetic lift balances gravity with no
/// orbital motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticEquilibrium {
    pub r0: f64,
    pub nu1: f64,
    pub nu3: f64,
    pub dimensionless: DimensionlessParams,
    pub roots: ZetaRoots,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Equilibrium {
    Orbital(RelativeEquilibrium),
    Static(StaticEquilibrium),
}

impl Equilibrium {
    pub fn class(&self) -> &'static str {
        match self {
            Equilibrium::Orbital(_) => "orbital",
            Equilibrium::Static(_) => "static",
        }
    }

    pub fn orbital(&self) -> Option<&RelativeEquilibrium> {
        match self {
            Equilibrium::Orbital(eq) => Some(eq),
            Equilibrium::Static(_) => None,
        }
    }
}

/// Full solve on the `+` branch. A zero root is reported as a static hover.
pub fn solve_equilibrium(prob: &EquilibriumProblem) -> Result<Equilibrium, EquilibriumError> {
    let dp = dimensionless_params(prob)?;
    let roots = solve_zeta_squared(&dp)?;
    let zeta_sq = roots.proper();
    let (nu1, nu3) = solve_attitude(&dp, zeta_sq)?;
    if zeta_sq == 0.0 {
        return Ok(Equilibrium::Static(StaticEquilibrium {
            r0: prob.r0,
            nu1,
            nu3,
            dimensionless: dp,
            roots,
        }));
    }
    if nu3.abs() < ATTITUDE_TOLERANCE {
        return Err(EquilibriumError::DegenerateAttitude {
            reason: "nu3 = 0: the dipole lies in the orbital plane",
        });
    }
    let xi1 = (zeta_sq * prob.g / prob.r0).sqrt();
    let spin = solve_spin(prob, xi1, nu1, nu3)?;
    let b = prob.field.value(&prob.orbit_point())?;
    let p0 = prob.body.mass * xi1 * prob.r0;
    let state = MechanicalState {
        x: prob.orbit_point(),
        p: Vector3::new(0.0, p0, 0.0),
        nu: Vector3::new(nu1, 0.0, nu3),
        pi: Vector3::new(spin.pi1, 0.0, spin.pi3),
    };
    let residuals = residual_necessary_conditions(&state, prob, xi1, spin.xi2_tilde)?;
    Ok(Equilibrium::Orbital(RelativeEquilibrium {
        r0: prob.r0,
        xi1,
        xi2_tilde: spin.xi2_tilde,
        nu1,
        nu3,
        pi1: spin.pi1,
        pi3: spin.pi3,
        p0,
        zeta_sq,
        dimensionless: dp,
        roots,
        b: arr(b),
        residuals,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{LinearFieldParams, OrbitronParams};
    use approx::assert_relative_eq;

    fn problem(kappa: f64, h: f64, b0: f64, bp: f64, mass: f64, moment: f64, r0: f64) -> EquilibriumProblem {
        let field = FieldModel::new(
            OrbitronParams::new(kappa, h).unwrap(),
            LinearFieldParams::new(b0, bp).unwrap(),
        );
        let body = BodyParams::new(mass, moment, 1e-3, 1.5e-3).unwrap();
        EquilibriumProblem::new(field, body, r0, STANDARD_GRAVITY).unwrap()
    }

    #[test]
    fn body_validation() {
        assert!(BodyParams::new(1.0, 1.0, 1.0, 2.0).is_ok());
        assert!(BodyParams::new(1.0, 1.0, 1.0, 2.5).is_err());
        assert!(BodyParams::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(BodyParams::new(1.0, -1.0, 1.0, 1.0).is_err());
        let b = BodyParams::new(1.0, 1.0, 2.0, 1.0).unwrap();
        assert_eq!(b.alpha(), 0.5);
        assert_eq!(b.beta(), 0.5);
    }

    #[test]
    fn sigma_vanishes_without_poles() {
        let prob = problem(0.0, 0.05, 1.0, 0.5, 0.01, 0.2, 0.1);
        let dp = dimensionless_params(&prob).unwrap();
        assert_eq!(dp.sigma, 0.0);
        assert_relative_eq!(dp.lambda, 0.2 * 0.5 / (0.01 * 9.81), max_relative = 1e-15);
    }

    #[test]
    fn lambda_is_one_on_exact_balance() {
        let prob = problem(0.0, 0.05, 1.0, 9.81, 0.5, 0.5, 0.1);
        assert_eq!(dimensionless_params(&prob).unwrap().lambda, 1.0);
    }

    #[test]
    fn zero_gradient_is_degenerate() {
        let prob = problem(10.0, 0.05, 1.0, 0.0, 0.01, 0.2, 0.1);
        assert_eq!(dimensionless_params(&prob), Err(EquilibriumError::DegenerateField));
    }

    #[test]
    fn hover_roots() {
        let dp = DimensionlessParams { lambda: 1.0, sigma: 0.0 };
        let roots = solve_zeta_squared(&dp).unwrap();
        assert_eq!(roots.plus, 0.0);
        assert_eq!(roots.minus, 0.0);
        assert_eq!(solve_attitude(&dp, 0.0).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn no_real_root() {
        let dp = DimensionlessParams { lambda: 0.9, sigma: 1e-5 };
        assert!(matches!(
            solve_zeta_squared(&dp),
            Err(EquilibriumError::NoRealEquilibrium { .. })
        ));
    }

    #[test]
    fn negative_roots_rejected() {
        // sigma < 0 with lambda barely above threshold pushes both roots below zero.
        let dp = DimensionlessParams { lambda: 0.9, sigma: -0.5 };
        let err = solve_zeta_squared(&dp).unwrap_err();
        assert!(matches!(err, EquilibriumError::NoAdmissibleRoot { .. }));
    }

    #[test]
    fn closed_form_matches_plus_branch() {
        for &(lambda, sigma) in &[(0.99, 0.4), (1.2, 0.1), (0.95, 1.7), (2.0, 3.0)] {
            let dp = DimensionlessParams { lambda, sigma };
            let roots = solve_zeta_squared(&dp).unwrap();
            let cf = zeta_squared_closed_form(&dp, -0.5);
            assert_relative_eq!(roots.plus, cf, max_relative = 1e-13);
        }
    }

    #[test]
    fn attitude_sign_follows_lambda() {
        let dp = DimensionlessParams { lambda: -1.3, sigma: 0.2 };
        let (nu1, _) = solve_attitude(&dp, 0.5).unwrap();
        assert!(nu1 < 0.0);
        let dp = DimensionlessParams { lambda: 1.3, sigma: 0.2 };
        let (nu1, _) = solve_attitude(&dp, 0.5).unwrap();
        assert!(nu1 > 0.0);
    }

    #[test]
    fn aligned_moment_has_no_gyroscopic_coupling() {
        // Choose nu parallel to B so that nu3 B1 - nu1 B3 = 0.
        let prob = problem(0.0, 0.05, 1.0, 0.5, 0.01, 0.2, 0.1);
        let b = prob.field.value(&prob.orbit_point()).unwrap();
        let nu = b.normalize();
        let spin = solve_spin(&prob, 3.0, nu.x, nu.z).unwrap();
        assert!(spin.pi1.abs() < 1e-15);
        assert!(spin.xi2_tilde.abs() < 1e-12);
        assert_relative_eq!(spin.pi3, 3.0 / prob.body.alpha(), max_relative = 1e-12);
    }

    #[test]
    fn spin_rejects_vertical_attitude() {
        let prob = problem(0.0, 0.05, 1.0, 0.5, 0.01, 0.2, 0.1);
        assert!(matches!(
            solve_spin(&prob, 2.0, 0.0, 1.0),
            Err(EquilibriumError::DegenerateAttitude { .. })
        ));
        assert!(solve_spin(&prob, 0.0, 0.1, 0.99).is_err());
    }

    #[test]
    fn hover_is_static() {
        // lambda = 1 and sigma = 0.
        let prob = problem(0.0, 0.05, 1.0, 9.81, 0.5, 0.5, 0.1);
        let eq = solve_equilibrium(&prob).unwrap();
        assert_eq!(eq.class(), "static");
        match eq {
            Equilibrium::Static(s) => {
                assert_eq!(s.nu1, 0.0);
                assert_eq!(s.nu3, 1.0);
            }
            Equilibrium::Orbital(_) => unreachable!(),
        }
    }

    #[test]
    fn zero_state_force_residual() {
        let prob = problem(20.0, 0.05, 1.0, 0.5, 0.01, 0.2, 0.1);
        let state = MechanicalState {
            x: Vector3::zeros(),
            p: Vector3::zeros(),
            nu: Vector3::z(),
            pi: Vector3::zeros(),
        };
        let r = residual_necessary_conditions(&state, &prob, 1.3, 0.7).unwrap();
        let jac = prob.field.midplane_jacobian(0.0).unwrap();
        let expected = -(jac.transpose() * Vector3::z()) * 0.2 + Vector3::z() * (0.01 * 9.81);
        for i in 0..3 {
            assert_relative_eq!(r.force[i], expected[i], max_relative = 1e-14);
        }
    }
}
