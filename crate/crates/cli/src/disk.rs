//! Uniformly magnetized cylindrical disk.

use orbitron::equilibrium::{BodyParams, EquilibriumError};
use orbitron::fields::MU0;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiskGeometry {
    /// kg/m³.
    pub density: f64,
    /// m.
    pub diameter: f64,
    /// m.
    pub height: f64,
    /// Residual induction `B_r`, T.
    pub residual_induction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiskBody {
    pub body: BodyParams,
    pub volume: f64,
    /// `1 / I_perp` implied by the geometry.
    pub alpha: f64,
}

/// Mass, inertia and moment of a solid disk magnetized along its axis.
pub fn derive_body_from_disk(d: &DiskGeometry) -> Result<DiskBody, EquilibriumError> {
    for (name, value) in [
        ("density", d.density),
        ("diameter", d.diameter),
        ("height", d.height),
        ("residual_induction", d.residual_induction),
    ] {
        if !(value.is_finite() && value > 0.0) {
            return Err(EquilibriumError::InvalidParameter {
                name,
                value,
                reason: "must be finite and positive",
            });
        }
    }
    let a = 0.5 * d.diameter;
    let volume = std::f64::consts::PI * a * a * d.height;
    let mass = d.density * volume;
    let i_axial = 0.5 * mass * a * a;
    let i_perp = mass * (3.0 * a * a + d.height * d.height) / 12.0;
    let moment = d.residual_induction / MU0 * volume;
    let body = BodyParams::new(mass, moment, i_perp, i_axial)?;
    Ok(DiskBody {
        body,
        volume,
        alpha: body.alpha(),
    })
}
