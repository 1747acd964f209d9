//! Near-wall concentration of the sediment-forming substance and the growth
//! rate of the sediment layer inside a circular aperture.
//!
//! Poiseuille flow leaves an almost stagnant annulus at the wall where
//! diffusion dominates. Its inner boundary sits where the diffusive flux
//! `D (c0 - c1)` balances the convective flux `c0 v (R - r)` and the wall
//! reaction consumes `K c1^n`. Two regimes follow:
//!
//! * **Convective** (`v0 > v_stat`): the slow layer is thinner than the
//!   aperture, and `c1` grows with the centreline velocity.
//! * **Diffusion-limited** (`v0 <= v_stat`): the slow layer fills the
//!   aperture and `c1` solves `D (c0 - c1) = K c1^n R`, independent of `v0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Chemistry;
use crate::roots::{find_root, RootError, Tolerance};

/// Avogadro constant, 1/mol.
pub const AVOGADRO: f64 = 6.022_140_76e23;

/// Absolute tolerance on the dimensionless layer coordinate `y`.
/// Relative bracket width for `y`; on (0, 1) this is tighter than 1e-12
/// absolute, and keeps small layers accurate too.
pub const Y_TOLERANCE: f64 = 1e-13;
/// Relative tolerance requested from the `c1` root finder.
pub const C1_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SedimentError {
    #[error("radius {r:e} m lies outside the aperture of radius {radius:e} m")]
    OutsideAperture { r: f64, radius: f64 },
    #[error("`{0}` must be strictly positive")]
    NotPositive(&'static str),
    #[error("slow-layer root finder failed: {0}")]
    Root(#[from] RootError),
    #[error(
        "calibration infeasible: D c0_mass mu2 n2 - s' n rho2 mu0 R = {margin:e} must be > 0 \
         (the growth rate is faster than diffusion can feed)"
    )]
    CalibrationInfeasible { margin: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Convective,
    DiffusionLimited,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlowLayerSolution {
    /// Dimensionless slow-layer thickness `1 - r/R`.
    pub y: f64,
    /// Distance from the axis to the slow-layer boundary, m.
    pub r_boundary: f64,
    /// Near-wall concentration, m^-3.
    pub c1: f64,
    pub regime: Regime,
}

/// Poiseuille profile `v0 (1 - r²/R²)`.
pub fn velocity_profile(v0: f64, r: f64, radius: f64) -> Result<f64, SedimentError> {
    if !(0.0..=radius).contains(&r) {
        return Err(SedimentError::OutsideAperture { r, radius });
    }
    Ok(v0 * (1.0 - (r * r) / (radius * radius)))
}

/// Wall concentration when the slow layer fills the aperture:
/// the root of `D (c0 - c1) = K c1^n R` on `(0, c0)`.
///
/// Orders 1 and 2 use their closed forms; the quadratic one is written in
/// rationalised form to avoid cancellation when `4 K R c0 << D`.
pub fn diffusion_limited_concentration(chem: &Chemistry, radius: f64, c0: f64) -> f64 {
    let (k, d) = (chem.rate_constant, chem.diffusivity);
    match chem.order {
        1 => d * c0 / (k * radius + d),
        2 => 2.0 * d * c0 / (d + (d * d + 4.0 * k * radius * d * c0).sqrt()),
        _ => wall_balance_root(chem, radius, c0).expect("wall balance is monotone on (0, c0)"),
    }
}

/// Numerical root of `K c1^n R + D c1 - D c0 = 0` for any order.
pub fn wall_balance_root(chem: &Chemistry, radius: f64, c0: f64) -> Result<f64, RootError> {
    let (k, d, n) = (chem.rate_constant, chem.diffusivity, chem.order as i32);
    find_root(
        |c1| k * radius * c1.powi(n) + d * (c1 - c0),
        0.0,
        c0,
        Tolerance::relative(C1_TOLERANCE),
    )
}

/// Threshold centreline velocity `K c1^n / c0` separating the two regimes,
/// with `c1` the diffusion-limited wall concentration.
pub fn stationary_velocity(chem: &Chemistry, radius: f64, c0: f64) -> f64 {
    let c1 = diffusion_limited_concentration(chem, radius, c0);
    chem.rate_constant * c1.powi(chem.order as i32) / c0
}

/// `f1 = D (c0 - c1) / (K c1^n R)`, the layer coordinate implied by `c1`.
fn layer_coordinate(chem: &Chemistry, radius: f64, c0: f64, c1: f64) -> f64 {
    chem.diffusivity * (c0 - c1) / (chem.rate_constant * c1.powi(chem.order as i32) * radius)
}

/// Residual of the general-order slow-layer balance at `c1`:
/// `K c1^n - c0 v0 f1 (2 - f1)`.
pub fn slow_layer_residual(chem: &Chemistry, radius: f64, c0: f64, v0: f64, c1: f64) -> f64 {
    let f1 = layer_coordinate(chem, radius, c0, c1);
    chem.rate_constant * c1.powi(chem.order as i32) - c0 * v0 * f1 * (2.0 - f1)
}

/// Residual of the first-order cubic `y (2 - y)(a y + 1) - b`.
pub fn cubic_residual(a: f64, b: f64, y: f64) -> f64 {
    y * (2.0 - y) * (a * y + 1.0) - b
}

/// Solves the slow layer inside an aperture of radius `radius` for entrance
/// concentration `c0` and centreline velocity `v0 >= 0`.
pub fn solve_slow_layer(
    chem: &Chemistry,
    radius: f64,
    c0: f64,
    v0: f64,
) -> Result<SlowLayerSolution, SedimentError> {
    if !(radius > 0.0) {
        return Err(SedimentError::NotPositive("R"));
    }
    if !(c0 > 0.0) {
        return Err(SedimentError::NotPositive("c0"));
    }
    let c1_slow = diffusion_limited_concentration(chem, radius, c0);
    let k = chem.rate_constant;
    let n = chem.order as i32;
    let v_stat = k * c1_slow.powi(n) / c0;

    if !(v0 > v_stat) {
        return Ok(SlowLayerSolution {
            y: 1.0,
            r_boundary: 0.0,
            c1: c1_slow,
            regime: Regime::DiffusionLimited,
        });
    }

    let (y, c1) = if n == 1 {
        let a = k * radius / chem.diffusivity;
        let b = k / v0;
        let y = find_root(|y| cubic_residual(a, b, y), 0.0, 1.0, Tolerance::relative(Y_TOLERANCE))?;
        (y, c0 / (a * y + 1.0))
    } else {
        // f1 runs from 1 at c1_slow down to 0 at c0, so the physical root
        // lies strictly between them.
        let c1 = find_root(
            |c1| slow_layer_residual(chem, radius, c0, v0, c1),
            c1_slow,
            c0,
            Tolerance::relative(C1_TOLERANCE),
        )?;
        (layer_coordinate(chem, radius, c0, c1), c1)
    };

    Ok(SlowLayerSolution {
        y,
        r_boundary: radius * (1.0 - y),
        c1,
        regime: Regime::Convective,
    })
}

/// Sediment thickening rate `ds/dt = K c1^n mu2 n2 / (n rho2 N_A)`, m/s.
pub fn growth_rate(chem: &Chemistry, c1: f64) -> f64 {
    chem.rate_constant * c1.powi(chem.order as i32) * chem.sediment_molar_mass * chem.sediment_per_event as f64
        / (chem.order as f64 * chem.sediment_density * AVOGADRO)
}

/// Known quantities for recovering the rate constant from an observed
/// growth rate under slow (diffusion-limited) flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationInput {
    /// Observed sediment growth rate, m/s.
    pub growth_rate: f64,
    /// Mass concentration of the dissolved substance, kg/m³.
    pub c0_mass: f64,
    pub dissolved_molar_mass: f64,
    pub sediment_molar_mass: f64,
    pub sediment_density: f64,
    pub order: u32,
    pub sediment_per_event: u32,
    pub diffusivity: f64,
    /// Aperture radius the observation refers to, m.
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub chemistry: Chemistry,
    /// Number concentration of the dissolved substance, m^-3.
    pub c0: f64,
    /// Wall concentration under diffusion-limited flow, m^-3.
    pub c1: f64,
}

/// Inverts the growth law for `K`.
///
/// Under diffusion-limited flow the reaction flux equals the diffusive feed,
/// `K c1^n = D (c0 - c1) / R`, so the observed rate fixes `c1` directly and
/// `K` follows for any order. For `n = 1` this is
/// `K = s' n rho2 mu0 D / (D c0_mass mu2 n2 - s' n rho2 mu0 R)`.
pub fn calibrate_rate_constant(input: &CalibrationInput) -> Result<Calibration, SedimentError> {
    let CalibrationInput {
        growth_rate: s,
        c0_mass,
        dissolved_molar_mass: mu0,
        sediment_molar_mass: mu2,
        sediment_density: rho2,
        order,
        sediment_per_event,
        diffusivity: d,
        radius,
    } = *input;
    for (key, v) in [
        ("growth_rate", s),
        ("c0_mass", c0_mass),
        ("mu0", mu0),
        ("mu2", mu2),
        ("rho2", rho2),
        ("D", d),
        ("R", radius),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(SedimentError::NotPositive(key));
        }
    }
    if order == 0 {
        return Err(SedimentError::NotPositive("n"));
    }
    if sediment_per_event == 0 {
        return Err(SedimentError::NotPositive("n2"));
    }
    let (n, n2) = (order as f64, sediment_per_event as f64);

    let margin = d * c0_mass * mu2 * n2 - s * n * rho2 * mu0 * radius;
    if !(margin > 0.0) {
        return Err(SedimentError::CalibrationInfeasible { margin });
    }
    let c0 = c0_mass * AVOGADRO / mu0;
    // Reaction flux required by the observed growth, m^-2 s^-1.
    let flux = s * n * rho2 * AVOGADRO / (mu2 * n2);
    let c1 = AVOGADRO * margin / (mu0 * mu2 * n2 * d);
    let k = flux / c1.powi(order as i32);

    Ok(Calibration {
        chemistry: Chemistry {
            rate_constant: k,
            order,
            diffusivity: d,
            sediment_molar_mass: mu2,
            sediment_per_event,
            sediment_density: rho2,
            dissolved_molar_mass: mu0,
        },
        c0,
        c1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Depletion {
    /// Drop of the bulk concentration over the length, m^-3.
    pub delta_c0: f64,
    /// Cross-section average concentration, m^-3.
    pub c_avg: f64,
    pub negligible: bool,
}

/// Estimates how much the bulk concentration drops along a channel of length
/// `length` and radius `r_cell` (the cell cavity size, where most sediment
/// forms), and whether that drop may be ignored.
///
/// The drop is the wall flux `2 pi R K c1^n L` divided by the volumetric flow
/// `pi R² v0 / 2`, i.e. `4 K c1^n L / (v0 R)`.
pub fn axial_depletion(
    chem: &Chemistry,
    r_cell: f64,
    c0: f64,
    c1: f64,
    v0: f64,
    length: f64,
    threshold: f64,
) -> Depletion {
    let flux = chem.rate_constant * c1.powi(chem.order as i32);
    let delta_c0 = 4.0 * flux * length / (v0 * r_cell);

    let c_avg = if v0 > stationary_velocity(chem, r_cell, c0) {
        let y = layer_coordinate(chem, r_cell, c0, c1).clamp(0.0, 1.0);
        average_concentration(r_cell, r_cell * (1.0 - y), c0, c1)
    } else {
        c0 / 3.0 + 2.0 * c1 / 3.0
    };

    Depletion {
        delta_c0,
        c_avg,
        negligible: delta_c0 / c0 < threshold,
    }
}

/// Cross-section average with a slow layer between `r` and `radius`.
pub fn average_concentration(radius: f64, r: f64, c0: f64, c1: f64) -> f64 {
    let big = radius;
    let r2 = big * big;
    // 2 (R³ - r³) / (3 (R - r)), expanded so r = R needs no division.
    let shape = 2.0 * (big * big + big * r + r * r) / 3.0;
    c0 / r2 * (r * r + big * (big + r) - shape) + c1 / r2 * (-r * (big + r) + shape)
}
