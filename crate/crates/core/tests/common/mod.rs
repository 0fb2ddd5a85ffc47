#![allow(dead_code)]

use orbitron::equilibrium::{
    solve_equilibrium, BodyParams, Equilibrium, EquilibriumProblem, RelativeEquilibrium, STANDARD_GRAVITY,
};
use orbitron::fields::{FieldModel, LinearFieldParams, OrbitronParams, MU0};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Pole strength giving the requested `sigma` at radius `r0`.
pub fn kappa_for_sigma(sigma: f64, b_prime: f64, r0: f64, h: f64) -> f64 {
    sigma * b_prime * (r0 * r0 + h * h).powf(2.5) / (3.0 * r0) / (MU0 / (2.0 * std::f64::consts::PI) * h)
}

pub struct Case {
    pub prob: EquilibriumProblem,
    pub eq: RelativeEquilibrium,
}

/// Random problem with an orbital equilibrium on the proper branch; retries
/// until one is found.
pub fn random_case(rng: &mut ChaCha8Rng) -> Case {
    random_case_in(rng, 0.8..0.999)
}

pub fn random_case_in(rng: &mut ChaCha8Rng, lambdas: std::ops::Range<f64>) -> Case {
    loop {
        let h = 0.05;
        let r0 = rng.random_range(0.85..3.0) * h;
        let b_prime = 10f64.powf(rng.random_range(-1.0..1.0));
        let lambda = rng.random_range(lambdas.clone());
        let sigma_min = (1.0 / (lambda * lambda) - 1.0_f64).max(0.0).sqrt();
        let sigma = rng.random_range(sigma_min..3.0);
        let kappa = kappa_for_sigma(sigma, b_prime, r0, h);
        let mass = 0.00683;
        let moment = lambda * mass * STANDARD_GRAVITY / b_prime;
        let i_perp = 10f64.powf(rng.random_range(-7.0..1.0));
        let i_axial = i_perp * rng.random_range(0.5..1.9);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let b0 = sign * 10f64.powf(rng.random_range(-2.0..1.0));
        let field = FieldModel::new(
            OrbitronParams::new(kappa, h).unwrap(),
            LinearFieldParams::new(b0, b_prime).unwrap(),
        );
        let body = BodyParams::new(mass, moment, i_perp, i_axial).unwrap();
        let prob = EquilibriumProblem::new(field, body, r0, STANDARD_GRAVITY).unwrap();
        if let Ok(Equilibrium::Orbital(eq)) = solve_equilibrium(&prob) {
            if eq.nu1.abs() > 1e-6 && eq.nu3.abs() > 1e-6 {
                return Case { prob, eq };
            }
        }
    }
}
