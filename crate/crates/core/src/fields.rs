//! Closed-form magnetostatics of the two-pole trap plus the linear
//! compensation field.
//!
//! Every quantity here (value, Jacobian, Hessian) is an analytic sum of the
//! per-source derivatives. Finite differences appear only in tests.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Vacuum permeability in T·m/A.
pub const MU0: f64 = 4.0e-7 * PI;

/// Evaluation points closer than this to a pole are rejected.
pub const POLE_GUARD_DISTANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("evaluation point {point:?} lies within {distance:e} m of the pole at z = {pole_z}")]
    PoleSingularity {
        point: [f64; 3],
        pole_z: f64,
        distance: f64,
    },
    #[error("invalid field parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

/// Two unlike poles `+kappa` at `z = -h` and `-kappa` at `z = +h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitronParams {
    /// Pole strength, A·m. Zero switches the poles off.
    pub kappa: f64,
    /// Half separation of the poles, m.
    pub h: f64,
}

impl OrbitronParams {
    pub fn new(kappa: f64, h: f64) -> Result<Self, FieldError> {
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(FieldError::InvalidParameter {
                name: "kappa",
                value: kappa,
                reason: "must be finite and non-negative",
            });
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(FieldError::InvalidParameter {
                name: "h",
                value: h,
                reason: "must be finite and positive",
            });
        }
        Ok(Self { kappa, h })
    }

    /// Pole positions paired with their sign `epsilon`: the pole with sign
    /// `epsilon` sits at `epsilon * h * e_z` and has charge `-epsilon * kappa`.
    fn poles(&self) -> [(f64, Vector3<f64>); 2] {
        [
            (1.0, Vector3::new(0.0, 0.0, self.h)),
            (-1.0, Vector3::new(0.0, 0.0, -self.h)),
        ]
    }
}

/// Axially symmetric field linear in the coordinates:
/// `B = (-B'x/2, -B'y/2, B0 + B'z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFieldParams {
    /// Uniform axial component, T.
    pub b0: f64,
    /// Axial gradient, T/m.
    pub b_prime: f64,
}

impl LinearFieldParams {
    pub fn new(b0: f64, b_prime: f64) -> Result<Self, FieldError> {
        if !b0.is_finite() {
            return Err(FieldError::InvalidParameter {
                name: "b0",
                value: b0,
                reason: "must be finite",
            });
        }
        if !b_prime.is_finite() {
            return Err(FieldError::InvalidParameter {
                name: "b_prime",
                value: b_prime,
                reason: "must be finite",
            });
        }
        Ok(Self { b0, b_prime })
    }

    pub fn jacobian(&self) -> Matrix3<f64> {
        let g = self.b_prime;
        Matrix3::from_diagonal(&Vector3::new(-0.5 * g, -0.5 * g, g))
    }
}

/// Total field `B = B^O + B^L`. Immutable once built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldModel {
    pub orbitron: OrbitronParams,
    pub linear: LinearFieldParams,
}

/// Field value with its first and second spatial derivatives.
///
/// `jac[(i, k)] = dB_i/dx_k` and `hess[i][(k, l)] = d²B_i/dx_k dx_l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub b: Vector3<f64>,
    pub jac: Matrix3<f64>,
    pub hess: [Matrix3<f64>; 3],
}

/// Divergence and curl defects of an analytic Jacobian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxwellResidual {
    /// `trace(jac)`.
    pub divergence: f64,
    /// Frobenius norm of `jac - jac^T`.
    pub curl_norm: f64,
    /// Frobenius norm of `jac`, the natural scale for both residuals.
    pub jac_norm: f64,
}

impl MaxwellResidual {
    pub fn relative(&self) -> (f64, f64) {
        if self.jac_norm == 0.0 {
            (self.divergence.abs(), self.curl_norm)
        } else {
            (
                self.divergence.abs() / self.jac_norm,
                self.curl_norm / self.jac_norm,
            )
        }
    }
}

/// Cylindrical derivatives of the total field on the plane `z = 0`, read off
/// the Cartesian derivatives at `r0 * e_1` where `r` coincides with `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MidplaneDerivatives {
    pub r0: f64,
    /// `(B_1, B_2, B_3)` at `r0 * e_1`.
    pub b: [f64; 3],
    pub b_zr: f64,
    pub b_zz: f64,
    pub b_zrr: f64,
    pub b_zzz: f64,
}

/// Single-pole terms, with `coef = -mu0/(4 pi) * eps * kappa` and `d` the
/// offset from the pole.
fn pole_value(coef: f64, d: &Vector3<f64>) -> Vector3<f64> {
    let r = d.norm();
    d * (coef / (r * r * r))
}

fn pole_jacobian(coef: f64, d: &Vector3<f64>) -> Matrix3<f64> {
    let r2 = d.norm_squared();
    let r = r2.sqrt();
    let inv3 = 1.0 / (r2 * r);
    let inv5 = inv3 / r2;
    (Matrix3::identity() * inv3 - d * d.transpose() * (3.0 * inv5)) * coef
}

fn pole_hessian(coef: f64, d: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let r2 = d.norm_squared();
    let r = r2.sqrt();
    let inv5 = 1.0 / (r2 * r2 * r);
    let inv7 = inv5 / r2;
    let mut out = [Matrix3::zeros(); 3];
    for (i, h) in out.iter_mut().enumerate() {
        for k in 0..3 {
            for l in 0..3 {
                let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
                let v = 15.0 * d[i] * d[k] * d[l] * inv7
                    - 3.0 * (delta(i, k) * d[l] + delta(i, l) * d[k] + delta(k, l) * d[i]) * inv5;
                h[(k, l)] = coef * v;
            }
        }
    }
    out
}

impl OrbitronParams {
    fn offsets(&self, x: &Vector3<f64>) -> Result<[(f64, Vector3<f64>); 2], FieldError> {
        let mut out = [(0.0, Vector3::zeros()); 2];
        for (slot, (eps, center)) in out.iter_mut().zip(self.poles()) {
            let d = x - center;
            let dist = d.norm();
            if dist < POLE_GUARD_DISTANCE {
                return Err(FieldError::PoleSingularity {
                    point: [x.x, x.y, x.z],
                    pole_z: center.z,
                    distance: dist,
                });
            }
            *slot = (-MU0 / (4.0 * PI) * eps * self.kappa, d);
        }
        Ok(out)
    }
}

/// Field of the two poles alone.
pub fn eval_orbitron(p: &OrbitronParams, x: &Vector3<f64>) -> Result<Vector3<f64>, FieldError> {
    Ok(p.offsets(x)?
        .iter()
        .map(|(coef, d)| pole_value(*coef, d))
        .sum())
}

/// Field of the linear compensation part alone.
pub fn eval_linear(p: &LinearFieldParams, x: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(
        -0.5 * p.b_prime * x.x,
        -0.5 * p.b_prime * x.y,
        p.b0 + p.b_prime * x.z,
    )
}

impl FieldModel {
    pub fn new(orbitron: OrbitronParams, linear: LinearFieldParams) -> Self {
        Self { orbitron, linear }
    }

    /// Total field value only.
    pub fn value(&self, x: &Vector3<f64>) -> Result<Vector3<f64>, FieldError> {
        Ok(eval_orbitron(&self.orbitron, x)? + eval_linear(&self.linear, x))
    }

    /// Value and Jacobian, skipping the Hessian. This is what the equations of
    /// motion need.
    pub fn value_and_jacobian(
        &self,
        x: &Vector3<f64>,
    ) -> Result<(Vector3<f64>, Matrix3<f64>), FieldError> {
        let mut b = eval_linear(&self.linear, x);
        let mut jac = self.linear.jacobian();
        for (coef, d) in self.orbitron.offsets(x)? {
            b += pole_value(coef, &d);
            jac += pole_jacobian(coef, &d);
        }
        Ok((b, jac))
    }

    /// Value, Jacobian and Hessian of the total field.
    pub fn eval(&self, x: &Vector3<f64>) -> Result<FieldSample, FieldError> {
        let mut b = eval_linear(&self.linear, x);
        let mut jac = self.linear.jacobian();
        let mut hess = [Matrix3::zeros(); 3];
        for (coef, d) in self.orbitron.offsets(x)? {
            b += pole_value(coef, &d);
            jac += pole_jacobian(coef, &d);
            for (acc, h) in hess.iter_mut().zip(pole_hessian(coef, &d)) {
                *acc += h;
            }
        }
        Ok(FieldSample { b, jac, hess })
    }

    pub fn maxwell_residual(&self, x: &Vector3<f64>) -> Result<MaxwellResidual, FieldError> {
        let (_, jac) = self.value_and_jacobian(x)?;
        Ok(MaxwellResidual {
            divergence: jac.trace(),
            curl_norm: (jac - jac.transpose()).norm(),
            jac_norm: jac.norm(),
        })
    }

    /// Jacobian at `r0 * e_1`. Its pattern is
    /// `[-B'/2, 0, B_zr; 0, -B'/2, 0; B_zr, 0, B']`.
    pub fn midplane_jacobian(&self, r0: f64) -> Result<Matrix3<f64>, FieldError> {
        Ok(self.value_and_jacobian(&Vector3::new(r0, 0.0, 0.0))?.1)
    }

    /// Hessian components `D²B_1, D²B_2, D²B_3` at `r0 * e_1`.
    pub fn midplane_hessian(&self, r0: f64) -> Result<[Matrix3<f64>; 3], FieldError> {
        Ok(self.eval(&Vector3::new(r0, 0.0, 0.0))?.hess)
    }

    pub fn midplane_derivatives(&self, r0: f64) -> Result<MidplaneDerivatives, FieldError> {
        let s = self.eval(&Vector3::new(r0, 0.0, 0.0))?;
        Ok(MidplaneDerivatives {
            r0,
            b: [s.b.x, s.b.y, s.b.z],
            b_zr: s.jac[(2, 0)],
            b_zz: s.jac[(2, 2)],
            b_zrr: s.hess[2][(0, 0)],
            b_zzz: s.hess[2][(2, 2)],
        })
    }

    /// `B_rr + B_zz + B_r / r` at `r0 * e_1`; zero for a source-free field.
    pub fn cylindrical_divergence_residual(&self, r0: f64) -> Result<f64, FieldError> {
        let (b, jac) = self.value_and_jacobian(&Vector3::new(r0, 0.0, 0.0))?;
        Ok(jac[(0, 0)] + jac[(2, 2)] + b.x / r0)
    }
}

impl MidplaneDerivatives {
    /// The three Hessian components rebuilt from `B_zrr` and `B_zr / r0`
    /// alone, using the sparsity the axial and mirror symmetries impose.
    pub fn structured_hessian(&self) -> [Matrix3<f64>; 3] {
        let a = self.b_zrr;
        let c = self.b_zr / self.r0;
        [
            Matrix3::new(0.0, 0.0, a, 0.0, 0.0, 0.0, a, 0.0, 0.0),
            Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, c, 0.0, c, 0.0),
            Matrix3::new(a, 0.0, 0.0, 0.0, c, 0.0, 0.0, 0.0, -(a + c)),
        ]
    }

    /// The Jacobian rebuilt from `B'` and `B_zr`.
    pub fn structured_jacobian(&self, b_prime: f64) -> Matrix3<f64> {
        Matrix3::new(
            -0.5 * b_prime,
            0.0,
            self.b_zr,
            0.0,
            -0.5 * b_prime,
            0.0,
            self.b_zr,
            0.0,
            b_prime,
        )
    }
}
