//! Energy-momentum test at a relative equilibrium.
//!
//! The second variation of the augmented Hamiltonian
//! `h_xi = h - xi1 J1 - xi2 J2` is assembled as a 12×12 symmetric matrix over
//! right-trivialized variations `(dx, dA, dp, dpi)`, restricted to variations
//! that keep the momentum level and are transverse to the torus orbit, and
//! checked for positivity with leading principal minors.
//!
//! `xi2_tilde = xi2 + beta <pi, nu>` is held constant under variation, which
//! is exact on the momentum level set.

use nalgebra::{DMatrix, Matrix3, Matrix4, SMatrix, SVector, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibrium::{EquilibriumError, EquilibriumProblem, MechanicalState, RelativeEquilibrium};
use crate::fields::FieldError;

/// Offsets of the four variation blocks in the 12-vector.
pub const DX: usize = 0;
pub const DA: usize = 3;
pub const DP: usize = 6;
pub const DPI: usize = 9;

/// Free variations spanning the admissible subspace, in basis order.
pub const FREE_VARIATIONS: [&str; 8] = ["dpi2", "dx2", "dA1", "dpi1", "dx3", "dx1", "dA2", "dp3"];

/// Cross-block entries above this fraction of the diagonal-block scale are
/// reported as a structure violation.
pub const BLOCK_TOLERANCE: f64 = 1e-10;

/// Relative guard band for deciding the sign of a minor or eigenvalue.
pub const SIGN_GUARD: f64 = 1e-8;

/// Residual above which the input is not treated as a critical point.
pub const CRITICAL_POINT_TOLERANCE: f64 = 1e-9;

pub type Form12 = SMatrix<f64, 12, 12>;
pub type Vector12 = SVector<f64, 12>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error("degenerate attitude: |nu3| = {nu3:e} is below 1e-9")]
    DegenerateAttitude { nu3: f64 },
    #[error("reduced form is not block diagonal: cross-block ratio {ratio:e}")]
    BlockStructureViolation { ratio: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StabilityWarning {
    /// The necessary conditions are not satisfied to tolerance, so the form
    /// is not a second variation at a critical point.
    NotACriticalPoint { relative_residual: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondVariation {
    pub matrix: Form12,
    pub warnings: Vec<StabilityWarning>,
}

impl SecondVariation {
    pub fn quadratic(&self, v: &Vector12) -> f64 {
        (v.transpose() * self.matrix * v)[(0, 0)]
    }
}

fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// Matrix of the quadratic form
///
/// ```text
/// alpha |dpi|² + |dp|²/M
///   - m (2 nu_i e_iks B_k,r dx_r dA_s + nu_i B_i,kl dx_k dx_l
///        + B_r nu_s dA_r dA_s - <nu, B> |dA|²)
///   - 2 xi1 <e3, dx × dp>
///   + xi2_tilde (2 <nu, dpi × dA> + <nu, dA><pi, dA> - <pi, nu> |dA|²)
/// ```
///
/// at an arbitrary phase point; only meaningful where the first variation
/// vanishes.
pub fn assemble_second_variation(
    state: &MechanicalState,
    xi1: f64,
    xi2_tilde: f64,
    prob: &EquilibriumProblem,
) -> Result<Form12, FieldError> {
    let sample = prob.field.eval(&state.x)?;
    let (b, jac, hess) = (sample.b, sample.jac, sample.hess);
    let nu = state.nu;
    let pi = state.pi;
    let m = prob.body.moment;
    let alpha = prob.body.alpha();
    let mut q = Form12::zeros();

    for i in 0..3 {
        q[(DP + i, DP + i)] = 1.0 / prob.body.mass;
        q[(DPI + i, DPI + i)] = alpha;
    }

    // Mixed position/attitude term; the factor 2 is split over the two
    // symmetric entries.
    for r in 0..3 {
        for s in 0..3 {
            let mut c = 0.0;
            for i in 0..3 {
                for k in 0..3 {
                    c += nu[i] * levi_civita(i, k, s) * jac[(k, r)];
                }
            }
            q[(DX + r, DA + s)] -= m * c;
            q[(DA + s, DX + r)] -= m * c;
        }
    }

    for k in 0..3 {
        for l in 0..3 {
            let c: f64 = (0..3).map(|i| nu[i] * hess[i][(k, l)]).sum();
            q[(DX + k, DX + l)] -= m * c;
        }
    }

    let nu_b = nu.dot(&b);
    let pi_nu = pi.dot(&nu);
    for r in 0..3 {
        for s in 0..3 {
            let sym_b = 0.5 * (b[r] * nu[s] + b[s] * nu[r]);
            let sym_pi = 0.5 * (nu[r] * pi[s] + nu[s] * pi[r]);
            q[(DA + r, DA + s)] += -m * sym_b + xi2_tilde * sym_pi;
        }
        q[(DA + r, DA + r)] += m * nu_b - xi2_tilde * pi_nu;
    }

    // -2 xi1 (dx1 dp2 - dx2 dp1)
    q[(DX, DP + 1)] -= xi1;
    q[(DP + 1, DX)] -= xi1;
    q[(DX + 1, DP)] += xi1;
    q[(DP, DX + 1)] += xi1;

    // 2 xi2_tilde e_abc nu_a dpi_b dA_c
    for bi in 0..3 {
        for c in 0..3 {
            let e: f64 = (0..3).map(|a| levi_civita(a, bi, c) * nu[a]).sum();
            q[(DPI + bi, DA + c)] += xi2_tilde * e;
            q[(DA + c, DPI + bi)] += xi2_tilde * e;
        }
    }
    Ok(q)
}

/// Second variation at a solved equilibrium, with field derivatives taken at
/// `r0 e1`.
pub fn second_variation(
    eq: &RelativeEquilibrium,
    prob: &EquilibriumProblem,
) -> Result<SecondVariation, StabilityError> {
    let matrix = assemble_second_variation(&eq.state(), eq.xi1, eq.xi2_tilde, prob)?;
    let mut warnings = Vec::new();
    let residual = eq.residuals.max_relative();
    if !(residual < CRITICAL_POINT_TOLERANCE) {
        warnings.push(StabilityWarning::NotACriticalPoint {
            relative_residual: residual,
        });
    }
    Ok(SecondVariation { matrix, warnings })
}

/// Four linear functionals on variations: two keep the momentum level, two
/// exclude the directions tangent to the torus orbit.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub functionals: SMatrix<f64, 4, 12>,
}

impl ConstraintSet {
    pub fn first_type(&self) -> SMatrix<f64, 2, 12> {
        self.functionals.fixed_rows::<2>(0).into_owned()
    }

    pub fn second_type(&self) -> SMatrix<f64, 2, 12> {
        self.functionals.fixed_rows::<2>(2).into_owned()
    }

    pub fn rank(&self) -> usize {
        self.functionals.rank(1e-12 * self.functionals.amax())
    }
}

fn put(row: &mut SMatrix<f64, 4, 12>, r: usize, offset: usize, v: &Vector3<f64>) {
    for i in 0..3 {
        row[(r, offset + i)] += v[i];
    }
}

pub fn constraint_set(eq: &RelativeEquilibrium) -> ConstraintSet {
    let e3 = Vector3::z();
    let (x, p, nu, pi) = (eq.x(), eq.p(), eq.nu(), eq.pi());
    let mut f = SMatrix::<f64, 4, 12>::zeros();
    // <e3, dpi> + <p × e3, dx> - <x × e3, dp>
    put(&mut f, 0, DPI, &e3);
    put(&mut f, 0, DX, &p.cross(&e3));
    put(&mut f, 0, DP, &-x.cross(&e3));
    // <nu, dpi> + <nu × pi, dA>
    put(&mut f, 1, DPI, &nu);
    put(&mut f, 1, DA, &nu.cross(&pi));
    // dp1 - (p0 / r0) dx2
    f[(2, DP)] = 1.0;
    f[(2, DX + 1)] = -eq.p0 / eq.r0;
    // <nu, dA>
    put(&mut f, 3, DA, &nu);
    ConstraintSet { functionals: f }
}

/// Columns span the admissible subspace; column `j` is the variation with
/// free coordinate `FREE_VARIATIONS[j]` set to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleBasis {
    pub vectors: SMatrix<f64, 12, 8>,
}

impl AdmissibleBasis {
    /// Embeds free-coordinate values into a full variation.
    pub fn embed(&self, free: &SVector<f64, 8>) -> Vector12 {
        self.vectors * free
    }
}

pub fn admissible_basis(eq: &RelativeEquilibrium) -> Result<AdmissibleBasis, StabilityError> {
    let (nu1, nu3) = (eq.nu1, eq.nu3);
    if nu3.abs() < 1e-9 {
        return Err(StabilityError::DegenerateAttitude { nu3 });
    }
    let (r0, p0) = (eq.r0, eq.p0);
    let c = nu3 * eq.pi1 - nu1 * eq.pi3;
    let mut b = SMatrix::<f64, 12, 8>::zeros();

    // dpi2
    b[(DPI + 1, 0)] = 1.0;
    // dx2 drags dp1 along
    b[(DX + 1, 1)] = 1.0;
    b[(DP, 1)] = p0 / r0;
    // dA1 with dA3 keeping <nu, dA> = 0
    b[(DA, 2)] = 1.0;
    b[(DA + 2, 2)] = -nu1 / nu3;
    // dpi1, compensated in dpi3 and dp2
    b[(DPI, 3)] = 1.0;
    b[(DPI + 2, 3)] = -nu1 / nu3;
    b[(DP + 1, 3)] = nu1 / (r0 * nu3);
    // dx3
    b[(DX + 2, 4)] = 1.0;
    // dx1, compensated in dp2
    b[(DX, 5)] = 1.0;
    b[(DP + 1, 5)] = -p0 / r0;
    // dA2, compensated in dpi3 and dp2
    b[(DA + 1, 6)] = 1.0;
    b[(DPI + 2, 6)] = -c / nu3;
    b[(DP + 1, 6)] = c / (r0 * nu3);
    // dp3
    b[(DP + 2, 7)] = 1.0;

    Ok(AdmissibleBasis { vectors: b })
}

/// The second variation restricted to the admissible subspace, split into
/// its two decoupled blocks plus the trivial `dp3` direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedForm {
    /// Ordering `(dpi2, dx2, dA1)`.
    pub q1: Matrix3<f64>,
    /// Ordering `(dpi1, dx3, dx1, dA2)`.
    pub q2: Matrix4<f64>,
    /// Coefficient of `dp3²`, equal to `1/M`.
    pub dp3_coeff: f64,
    /// The whole 8×8 restriction, before the block split.
    pub full: SMatrix<f64, 8, 8>,
    /// Largest coupling entry over the largest diagonal-block entry.
    pub cross_block_ratio: f64,
}

impl ReducedForm {
    pub fn from_blocks(q1: Matrix3<f64>, q2: Matrix4<f64>, dp3_coeff: f64) -> Self {
        let mut full = SMatrix::<f64, 8, 8>::zeros();
        full.fixed_view_mut::<3, 3>(0, 0).copy_from(&q1);
        full.fixed_view_mut::<4, 4>(3, 3).copy_from(&q2);
        full[(7, 7)] = dp3_coeff;
        Self {
            q1,
            q2,
            dp3_coeff,
            full,
            cross_block_ratio: 0.0,
        }
    }
}

const BLOCKS: [(usize, usize); 3] = [(0, 3), (3, 7), (7, 8)];

fn block_of(i: usize) -> usize {
    BLOCKS.iter().position(|(lo, hi)| i >= *lo && i < *hi).unwrap()
}

pub fn reduce(sv: &SecondVariation, basis: &AdmissibleBasis) -> Result<ReducedForm, StabilityError> {
    let b = &basis.vectors;
    let full = b.transpose() * sv.matrix * b;
    let full = (full + full.transpose()) * 0.5;

    let mut diag_scale = 0.0_f64;
    let mut cross = 0.0_f64;
    for i in 0..8 {
        for j in 0..8 {
            let v = full[(i, j)].abs();
            if block_of(i) == block_of(j) {
                diag_scale = diag_scale.max(v);
            } else {
                cross = cross.max(v);
            }
        }
    }
    let ratio = if diag_scale > 0.0 { cross / diag_scale } else { cross };
    if ratio > BLOCK_TOLERANCE {
        return Err(StabilityError::BlockStructureViolation { ratio });
    }
    Ok(ReducedForm {
        q1: full.fixed_view::<3, 3>(0, 0).into_owned(),
        q2: full.fixed_view::<4, 4>(3, 3).into_owned(),
        dp3_coeff: full[(7, 7)],
        full,
        cross_block_ratio: ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    Unstable,
    Indeterminate,
}

/// Sign of `value` against a guard band of half-width `guard`.
fn classify(value: f64, guard: f64) -> Verdict {
    if value > guard {
        Verdict::Stable
    } else if value < -guard {
        Verdict::Unstable
    } else {
        Verdict::Indeterminate
    }
}

/// Leading principal minors of a square matrix, smallest first.
pub fn leading_minors(m: &DMatrix<f64>) -> Vec<f64> {
    (1..=m.nrows())
        .map(|k| m.view((0, 0), (k, k)).into_owned().determinant())
        .collect()
}

/// Hadamard bounds `prod_i |row_i|` of each leading block: the natural scale
/// of the corresponding minor.
fn hadamard_bounds(m: &DMatrix<f64>) -> Vec<f64> {
    (1..=m.nrows())
        .map(|k| {
            (0..k)
                .map(|i| m.view((i, 0), (1, k)).norm())
                .product::<f64>()
        })
        .collect()
}

/// Congruence `D^-1/2 m D^-1/2` with `D = |diag m|`; preserves definiteness
/// and brings every diagonal entry to magnitude one.
fn unit_diagonal(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.diagonal().map(|v| if v != 0.0 { 1.0 / v.abs().sqrt() } else { 1.0 });
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * d[i] * d[j])
}

/// Sylvester verdict for a symmetric matrix: walk the leading minors and stop
/// at the first one that is not clearly positive. Signs are judged on the
/// unit-diagonal congruent matrix so that mixed units do not swamp the guard
/// band; the returned minors are those of `m` itself.
pub fn sylvester_verdict(m: &DMatrix<f64>) -> (Vec<f64>, Verdict) {
    let minors = leading_minors(m);
    let scaled = unit_diagonal(m);
    let scaled_minors = leading_minors(&scaled);
    let bounds = hadamard_bounds(&scaled);
    for (d, bound) in scaled_minors.iter().zip(&bounds) {
        match classify(*d, SIGN_GUARD * bound) {
            Verdict::Stable => continue,
            other => return (minors, other),
        }
    }
    (minors, Verdict::Stable)
}

/// Verdict from the sign of the smallest eigenvalue of the unit-diagonal
/// congruent matrix.
pub fn eigenvalue_verdict(m: &DMatrix<f64>) -> Verdict {
    let eig = SymmetricEigen::new(unit_diagonal(m));
    let scale = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    classify(min, SIGN_GUARD * scale)
}

fn combine(a: Verdict, b: Verdict) -> Verdict {
    match (a, b) {
        (Verdict::Stable, Verdict::Stable) => Verdict::Stable,
        (Verdict::Unstable, _) | (_, Verdict::Unstable) => Verdict::Unstable,
        _ => Verdict::Indeterminate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SylvesterReport {
    pub q1_minors: [f64; 3],
    pub q2_minors: [f64; 4],
    pub q1_verdict: Verdict,
    pub q2_verdict: Verdict,
    pub verdict: Verdict,
    /// The weaker necessary condition: every diagonal entry positive.
    pub diagonal_positive: bool,
}

pub fn sylvester(form: &ReducedForm) -> SylvesterReport {
    let q1 = DMatrix::from_iterator(3, 3, form.q1.iter().copied());
    let q2 = DMatrix::from_iterator(4, 4, form.q2.iter().copied());
    let (m1, v1) = sylvester_verdict(&q1);
    let (m2, v2) = sylvester_verdict(&q2);
    let v3 = classify(form.dp3_coeff, 0.0);
    let diagonal_positive = form.q1.diagonal().iter().all(|d| *d > 0.0)
        && form.q2.diagonal().iter().all(|d| *d > 0.0)
        && form.dp3_coeff > 0.0;
    SylvesterReport {
        q1_minors: [m1[0], m1[1], m1[2]],
        q2_minors: [m2[0], m2[1], m2[2], m2[3]],
        q1_verdict: v1,
        q2_verdict: v2,
        verdict: combine(combine(v1, v2), v3),
        diagonal_positive,
    }
}

/// Which set of closed-form block entries to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedForm {
    /// Entries as they appear in the reference derivation, including the
    /// `+ m nu3 B_zr / r0` sign in the `dx2` diagonal and the `dA2` diagonal
    /// without the `-2 xi1 xi2_tilde nu1² / (alpha nu3)` coupling.
    Original,
    /// Entries consistent with the assembled form and its finite-difference
    /// check.
    Corrected,
}

/// Scalars the closed-form blocks and the analytic conditions are built from.
struct Ingredients {
    mass: f64,
    m: f64,
    alpha: f64,
    r0: f64,
    xi1: f64,
    xt2: f64,
    nu1: f64,
    nu3: f64,
    b_prime: f64,
    b_zr: f64,
    b_zz: f64,
    b_zrr: f64,
    b_zzz: f64,
    b1: f64,
    /// `<nu, m B - xi2_tilde pi>`.
    aligned: f64,
}

fn ingredients(eq: &RelativeEquilibrium, prob: &EquilibriumProblem) -> Result<Ingredients, FieldError> {
    let d = prob.field.midplane_derivatives(eq.r0)?;
    let b = Vector3::from(d.b);
    let m = prob.body.moment;
    Ok(Ingredients {
        mass: prob.body.mass,
        m,
        alpha: prob.body.alpha(),
        r0: eq.r0,
        xi1: eq.xi1,
        xt2: eq.xi2_tilde,
        nu1: eq.nu1,
        nu3: eq.nu3,
        b_prime: prob.field.linear.b_prime,
        b_zr: d.b_zr,
        b_zz: d.b_zz,
        b_zrr: d.b_zrr,
        b_zzz: d.b_zzz,
        b1: d.b[0],
        aligned: eq.nu().dot(&(b * m - eq.pi() * eq.xi2_tilde)),
    })
}

/// Closed-form reduced blocks at a solved equilibrium.
pub fn closed_form_blocks(
    eq: &RelativeEquilibrium,
    prob: &EquilibriumProblem,
    variant: ClosedForm,
) -> Result<(Matrix3<f64>, Matrix4<f64>), FieldError> {
    let g = ingredients(eq, prob)?;
    let (mass, m, alpha, r0, xi1, xt2, nu1, nu3) =
        (g.mass, g.m, g.alpha, g.r0, g.xi1, g.xt2, g.nu1, g.nu3);
    let sign = match variant {
        ClosedForm::Original => 1.0,
        ClosedForm::Corrected => -1.0,
    };
    let q1_22 = 3.0 * mass * xi1 * xi1 + sign * m * nu3 * g.b_zr / r0;
    let q1_13 = -xt2 / nu3;
    let q1_23 = -m * g.b_zz / (2.0 * nu3);
    let q1_33 = g.aligned / (nu3 * nu3);
    let q1 = Matrix3::new(
        alpha, 0.0, q1_13, //
        0.0, q1_22, q1_23, //
        q1_13, q1_23, q1_33,
    );

    let inertia_ratio = 1.0 / (alpha * mass * r0 * r0);
    let tilt = nu1 * nu1 / (nu3 * nu3);
    let q44 = (alpha + nu1 * nu1 / (mass * r0 * r0)) / (nu3 * nu3);
    let q46 = -2.0 * xi1 * nu1 / (r0 * nu3);
    let q47 = xt2 / nu3 - xi1 * (1.0 + inertia_ratio) * tilt;
    let q55 = m * nu3 * (g.b_zrr + g.b_zr / r0);
    let q56 = -m * nu1 * g.b_zrr;
    let q57 = m * (-nu3 * g.b_zr + nu1 * g.b_zz);
    let q66 = 3.0 * mass * xi1 * xi1 - m * nu3 * g.b_zrr;
    let q67 = m * (nu1 * g.b_zr + 0.5 * nu3 * g.b_zz) + 2.0 * xi1 * xi1 / (r0 * alpha) * nu1 / nu3;
    let mut q77 = xi1 * xi1 / alpha * (1.0 + inertia_ratio) * tilt + g.aligned;
    if variant == ClosedForm::Corrected {
        q77 -= 2.0 * xi1 * xt2 * nu1 * nu1 / (alpha * nu3);
    }
    let q2 = Matrix4::new(
        q44, 0.0, q46, q47, //
        0.0, q55, q56, q57, //
        q46, q56, q66, q67, //
        q47, q57, q67, q77,
    );
    Ok((q1, q2))
}

/// Closed-form scalar conditions for positivity of the reduced form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticConditions {
    /// `3 M xi1² - m nu3 B_zr / r0`, the second leading minor of `Q1` over `alpha`.
    pub orbital_stiffness: f64,
    /// Same with `+ m nu3 B_zr / r0`.
    pub orbital_stiffness_original: f64,
    /// `<nu, m B - xi2_tilde pi> - xi2_tilde² / alpha`.
    pub alignment_factor: f64,
    /// Same with the bare multiplier `xi2` in place of `xi2_tilde`.
    pub alignment_factor_bare: f64,
    /// `m B1 / nu1`; the moment leans into the field iff this is positive.
    pub alignment: f64,
    /// `3 M xi1² r0 - m nu3 B_zr + m nu1 B' / 2`.
    pub q1_condition: f64,
    /// Same with `+ m nu3 B_zr`.
    pub q1_condition_original: f64,
    /// `-m nu3 B_zzz`: the vertical curvature of the potential.
    pub vertical_curvature: f64,
    /// `3 M xi1² - [(1 + a) / (nu3² (1 - a/3))] (1 + nu1² B_zr / (r0 B_zzz)) m nu3 B_zrr`,
    /// with `a = nu1² / (alpha M r0²)`.
    pub in_plane_condition: f64,
    /// `1 - a / 3`; the in-plane condition is equivalent to the third minor
    /// of `Q2` only while this is positive.
    pub in_plane_denominator: f64,
}

impl AnalyticConditions {
    /// Positive definiteness of `Q1` from the closed-form conditions.
    pub fn q1_positive(&self) -> bool {
        self.alignment > 0.0 && self.q1_condition > 0.0
    }
}

pub fn analytic_conditions(
    eq: &RelativeEquilibrium,
    prob: &EquilibriumProblem,
) -> Result<AnalyticConditions, FieldError> {
    let g = ingredients(eq, prob)?;
    let (mass, m, alpha, r0, xi1, nu1, nu3) = (g.mass, g.m, g.alpha, g.r0, g.xi1, g.nu1, g.nu3);
    let xi2 = eq.xi2(&prob.body);
    let stiff = 3.0 * mass * xi1 * xi1;
    let tilt = m * nu3 * g.b_zr / r0;
    let b = Vector3::from(prob.field.value(&eq.x())?);
    let aligned_bare = eq.nu().dot(&(b * m - eq.pi() * xi2));
    let a = nu1 * nu1 / (alpha * mass * r0 * r0);
    let denom = 1.0 - a / 3.0;
    let in_plane = stiff
        - ((1.0 + a) / (nu3 * nu3 * denom))
            * (1.0 + nu1 * nu1 * g.b_zr / (r0 * g.b_zzz))
            * m
            * nu3
            * g.b_zrr;
    Ok(AnalyticConditions {
        orbital_stiffness: stiff - tilt,
        orbital_stiffness_original: stiff + tilt,
        alignment_factor: g.aligned - g.xt2 * g.xt2 / alpha,
        alignment_factor_bare: aligned_bare - xi2 * xi2 / alpha,
        alignment: m * g.b1 / nu1,
        q1_condition: stiff * r0 - m * nu3 * g.b_zr + 0.5 * m * nu1 * g.b_prime,
        q1_condition_original: stiff * r0 + m * nu3 * g.b_zr + 0.5 * m * nu1 * g.b_prime,
        vertical_curvature: -m * nu3 * g.b_zzz,
        in_plane_condition: in_plane,
        in_plane_denominator: denom,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleAgreement {
    /// Sylvester and smallest-eigenvalue verdicts coincide on both blocks.
    pub eigenvalue: bool,
    /// Closed-form `Q1` conditions agree with the `Q1` minors.
    pub analytic_q1: bool,
    /// Vertical-curvature and in-plane conditions agree in sign with the
    /// second and third `Q2` minors.
    pub analytic_q2: bool,
}

/// Max relative deviation of the assembled blocks from a closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormDeviation {
    pub q1: [[f64; 3]; 3],
    pub q2: [[f64; 4]; 4],
    pub max: f64,
}

fn entry_deviation(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(f64::MIN_POSITIVE)
}

/// Entrywise relative deviation, each entry measured against
/// `max(|a_ij|, sqrt(|a_ii a_jj|))` so that structural zeros stay meaningful.
pub fn closed_form_deviation(form: &ReducedForm, q1: &Matrix3<f64>, q2: &Matrix4<f64>) -> ClosedFormDeviation {
    let mut out = ClosedFormDeviation {
        q1: [[0.0; 3]; 3],
        q2: [[0.0; 4]; 4],
        max: 0.0,
    };
    for i in 0..3 {
        for j in 0..3 {
            let a = form.q1[(i, j)];
            let scale = a.abs().max((form.q1[(i, i)] * form.q1[(j, j)]).abs().sqrt());
            out.q1[i][j] = entry_deviation(a, q1[(i, j)], scale);
            out.max = out.max.max(out.q1[i][j]);
        }
    }
    for i in 0..4 {
        for j in 0..4 {
            let a = form.q2[(i, j)];
            let scale = a.abs().max((form.q2[(i, i)] * form.q2[(j, j)]).abs().sqrt());
            out.q2[i][j] = entry_deviation(a, q2[(i, j)], scale);
            out.max = out.max.max(out.q2[i][j]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub q1: [[f64; 3]; 3],
    pub q2: [[f64; 4]; 4],
    pub dp3_coeff: f64,
    pub q1_minors: [f64; 3],
    pub q2_minors: [f64; 4],
    pub diagonal_positive: bool,
    pub cross_block_ratio: f64,
    pub analytic: AnalyticConditions,
    pub q1_verdict: Verdict,
    pub q2_verdict: Verdict,
    pub verdict: Verdict,
    pub oracle_agreement: OracleAgreement,
    pub deviation_corrected: f64,
    pub deviation_original: f64,
    pub warnings: Vec<StabilityWarning>,
}

impl StabilityReport {
    pub fn minors(&self) -> impl Iterator<Item = f64> + '_ {
        self.q1_minors.iter().chain(self.q2_minors.iter()).copied()
    }
}

fn rows3(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
    }
    out
}

fn rows4(m: &Matrix4<f64>) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
    }
    out
}

fn same_sign(a: f64, b: f64) -> bool {
    (a > 0.0) == (b > 0.0)
}

/// Whole pipeline: second variation, reduction, Sylvester test, closed-form
/// conditions and oracle cross-checks.
pub fn analyze(eq: &RelativeEquilibrium, prob: &EquilibriumProblem) -> Result<StabilityReport, StabilityError> {
    let sv = second_variation(eq, prob)?;
    let basis = admissible_basis(eq)?;
    let form = reduce(&sv, &basis)?;
    let syl = sylvester(&form);
    let analytic = analytic_conditions(eq, prob)?;

    let q1d = DMatrix::from_iterator(3, 3, form.q1.iter().copied());
    let q2d = DMatrix::from_iterator(4, 4, form.q2.iter().copied());
    let eigen = eigenvalue_verdict(&q1d) == syl.q1_verdict && eigenvalue_verdict(&q2d) == syl.q2_verdict;

    let analytic_q1 = analytic.q1_positive() == (syl.q1_verdict == Verdict::Stable)
        && same_sign(analytic.orbital_stiffness, syl.q1_minors[1]);
    let mut analytic_q2 = same_sign(analytic.vertical_curvature, syl.q2_minors[1]);
    if syl.q2_minors[1] > 0.0 && analytic.in_plane_denominator > 0.0 {
        analytic_q2 &= same_sign(analytic.in_plane_condition, syl.q2_minors[2]);
    }

    let (c1, c2) = closed_form_blocks(eq, prob, ClosedForm::Corrected)?;
    let (o1, o2) = closed_form_blocks(eq, prob, ClosedForm::Original)?;

    Ok(StabilityReport {
        q1: rows3(&form.q1),
        q2: rows4(&form.q2),
        dp3_coeff: form.dp3_coeff,
        q1_minors: syl.q1_minors,
        q2_minors: syl.q2_minors,
        diagonal_positive: syl.diagonal_positive,
        cross_block_ratio: form.cross_block_ratio,
        analytic,
        q1_verdict: syl.q1_verdict,
        q2_verdict: syl.q2_verdict,
        verdict: syl.verdict,
        oracle_agreement: OracleAgreement {
            eigenvalue: eigen,
            analytic_q1,
            analytic_q2,
        },
        deviation_corrected: closed_form_deviation(&form, &c1, &c2).max,
        deviation_original: closed_form_deviation(&form, &o1, &o2).max,
        warnings: sv.warnings,
    })
}
