//! Domain types for the filter lattice and its configuration.
//!
//! The filter is an `n_x × n_y × n_z` block of rectangular cells. Every
//! interior facet carries exactly one circular aperture: facets normal to `z`
//! hold filtering apertures (one membrane per pair of adjacent cell layers),
//! facets normal to `x` and `y` hold wide side apertures that let liquid
//! redistribute within a layer. Exterior facets are closed except for the
//! inlet window on the first layer and the outlet window on the last.

use std::f64::consts::PI;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default sediment seal threshold, as a fraction of the initial radius.
pub const DEFAULT_SEAL_FRACTION: f64 = 1e-2;
pub const DEFAULT_SOLVER_MAX_ITER: usize = 100_000;
pub const DEFAULT_FLOW_STOP_FRACTION: f64 = 1e-6;
pub const DEFAULT_DEPLETION_THRESHOLD: f64 = 0.05;
pub const DEFAULT_RELAXATION: f64 = 1.8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("`{key}` must be strictly positive ({unit}), got {value}")]
    NotPositive {
        key: &'static str,
        unit: &'static str,
        value: f64,
    },
    #[error("`{key}` must not be negative ({unit}), got {value}")]
    Negative {
        key: &'static str,
        unit: &'static str,
        value: f64,
    },
    #[error("`n_z` must be at least 2 (cell layers), got {0}")]
    TooFewLayers(usize),
    #[error("`{key}` must be a positive integer (cells), got {value}")]
    BadCount { key: &'static str, value: usize },
    #[error("`{key}` = {value:e} m must be below half the smallest cell size ({limit:e} m)")]
    RadiusTooLarge {
        key: &'static str,
        value: f64,
        limit: f64,
    },
    #[error("`{key}` range {lo}..{hi} on axis {axis} lies outside 1..{n}")]
    BadWindow {
        key: &'static str,
        axis: char,
        lo: usize,
        hi: usize,
        n: usize,
    },
    #[error("`{key}` has {got} entries, expected {expected} (one per membrane)")]
    ScheduleLength {
        key: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("`r_filter` names schedule file {0:?}, which must be resolved before building the grid")]
    UnresolvedSchedule(PathBuf),
    #[error("`c0_entrance` (m^-3) is required when `chemistry` is present")]
    MissingEntranceConcentration,
    #[error("`chemistry.{key}` must be a positive integer, got {value}")]
    BadStoichiometry { key: &'static str, value: u32 },
    #[error("`sor_omega` must lie in (0, 2), got {0}")]
    BadRelaxation(f64),
    #[error("`seal_fraction` must lie in (0, 1), got {0}")]
    BadSealFraction(f64),
}

/// Constants of the sediment-forming surface reaction.
///
/// `rate_constant` has units m^(3n-2)/s so that `K c^n` is a number flux
/// (m^-2 s^-1) for every order `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Chemistry {
    #[serde(rename = "K")]
    pub rate_constant: f64,
    #[serde(rename = "n")]
    pub order: u32,
    #[serde(rename = "D")]
    pub diffusivity: f64,
    #[serde(rename = "mu2")]
    pub sediment_molar_mass: f64,
    #[serde(rename = "n2")]
    pub sediment_per_event: u32,
    #[serde(rename = "rho2")]
    pub sediment_density: f64,
    #[serde(rename = "mu0")]
    pub dissolved_molar_mass: f64,
}

impl Chemistry {
    /// Calcium carbonate scaling from a calcium sulfate solution.
    pub fn calcium_carbonate() -> Self {
        Self {
            rate_constant: 1.658e-4,
            order: 1,
            diffusivity: 1e-9,
            sediment_molar_mass: 0.100,
            sediment_per_event: 1,
            sediment_density: 2710.0,
            dissolved_molar_mass: 0.136,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("chemistry.K", "m^(3n-2)/s", self.rate_constant)?;
        positive("chemistry.D", "m^2/s", self.diffusivity)?;
        positive("chemistry.mu2", "kg/mol", self.sediment_molar_mass)?;
        positive("chemistry.rho2", "kg/m^3", self.sediment_density)?;
        positive("chemistry.mu0", "kg/mol", self.dissolved_molar_mass)?;
        if self.order == 0 {
            return Err(ConfigError::BadStoichiometry {
                key: "n",
                value: self.order,
            });
        }
        if self.sediment_per_event == 0 {
            return Err(ConfigError::BadStoichiometry {
                key: "n2",
                value: self.sediment_per_event,
            });
        }
        Ok(())
    }
}

/// Inclusive, 1-based cell index ranges in `x` and `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub x: [usize; 2],
    pub y: [usize; 2],
}

impl Window {
    pub fn full(n_x: usize, n_y: usize) -> Self {
        Self {
            x: [1, n_x],
            y: [1, n_y],
        }
    }

    /// Whether the 0-based cell column `(i, j)` lies inside the window.
    pub fn contains(&self, i: usize, j: usize) -> bool {
        let (i, j) = (i + 1, j + 1);
        (self.x[0]..=self.x[1]).contains(&i) && (self.y[0]..=self.y[1]).contains(&j)
    }

    pub fn cell_count(&self) -> usize {
        (self.x[1] + 1 - self.x[0]) * (self.y[1] + 1 - self.y[0])
    }

    fn validate(&self, key: &'static str, n_x: usize, n_y: usize) -> Result<(), ConfigError> {
        for (axis, range, n) in [('x', self.x, n_x), ('y', self.y, n_y)] {
            if range[0] < 1 || range[0] > range[1] || range[1] > n {
                return Err(ConfigError::BadWindow {
                    key,
                    axis,
                    lo: range[0],
                    hi: range[1],
                    n,
                });
            }
        }
        Ok(())
    }
}

/// Filtering-aperture radius: one value, one per membrane, or a schedule file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FilterRadius {
    Uniform(f64),
    PerMembrane(Vec<f64>),
    Schedule(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeStep {
    Fixed(f64),
    #[default]
    #[serde(with = "adaptive_marker")]
    Adaptive,
}

mod adaptive_marker {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("adaptive")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "adaptive" {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!(
                "expected a step in seconds or \"adaptive\", got {s:?}"
            )))
        }
    }
}

/// How the per-step blocking probability of an aperture is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockingLaw {
    /// `1 - q^(F Δt N)`.
    Simple,
    /// The simple law rescaled so the layer's expected blocking count matches
    /// the Poisson arrival rate of caught particles.
    #[default]
    Corrected,
}

impl std::str::FromStr for BlockingLaw {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simple" => Ok(Self::Simple),
            "corrected" => Ok(Self::Corrected),
            other => Err(format!("unknown blocking law {other:?} (simple|corrected)")),
        }
    }
}

/// Iterative method for the cell-pressure system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PressureMethod {
    /// Over-relaxed Gauss–Seidel sweeps.
    Seidel,
    /// Conjugate gradients preconditioned with one symmetric Seidel sweep.
    #[default]
    Cg,
}

impl std::str::FromStr for PressureMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "seidel" => Ok(Self::Seidel),
            "cg" => Ok(Self::Cg),
            other => Err(format!("unknown pressure method {other:?} (seidel|cg)")),
        }
    }
}

fn default_seal_fraction() -> f64 {
    DEFAULT_SEAL_FRACTION
}
fn default_max_iter() -> usize {
    DEFAULT_SOLVER_MAX_ITER
}
fn default_flow_stop() -> f64 {
    DEFAULT_FLOW_STOP_FRACTION
}
fn default_depletion() -> f64 {
    DEFAULT_DEPLETION_THRESHOLD
}
fn default_omega() -> f64 {
    DEFAULT_RELAXATION
}

/// Complete physical and numerical description of one filter problem (SI units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(rename = "L_x")]
    pub length_x: f64,
    #[serde(rename = "L_y")]
    pub length_y: f64,
    #[serde(rename = "L_z")]
    pub length_z: f64,
    pub n_x: usize,
    pub n_y: usize,
    pub n_z: usize,
    /// Pressure gradient along `z`, Pa/m; negative drives flow towards +z.
    pub p_grad: f64,
    pub mu: f64,
    pub l_particle: f64,
    #[serde(rename = "N_particles")]
    pub particle_concentration: f64,
    pub r_filter: FilterRadius,
    pub r_side: f64,
    /// Physical apertures per filtering facet, one entry per membrane.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_multiplicity: Option<Vec<u32>>,
    pub inlet_window: Window,
    pub outlet_window: Window,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chemistry: Option<Chemistry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0_entrance: Option<f64>,
    #[serde(default)]
    pub dt: TimeStep,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub blocking_law: BlockingLaw,
    /// Absolute per-cell flow imbalance tolerance, m^3/s. Defaults to
    /// `1e-6` of the clean-filter per-aperture flow.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_tol: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub solver_max_iter: usize,
    #[serde(default)]
    pub solver_method: PressureMethod,
    /// Over-relaxation factor of the Seidel sweeps (1 is plain Gauss–Seidel).
    #[serde(default = "default_omega")]
    pub sor_omega: f64,
    #[serde(default = "default_seal_fraction")]
    pub seal_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_limit: Option<f64>,
    /// Upper bound on an adaptive step, s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_max: Option<f64>,
    #[serde(default = "default_flow_stop")]
    pub flow_stop_fraction: f64,
    #[serde(default = "default_depletion")]
    pub depletion_threshold: f64,
}

impl FilterConfig {
    pub fn cell_size(&self) -> [f64; 3] {
        [
            self.length_x / self.n_x as f64,
            self.length_y / self.n_y as f64,
            self.length_z / self.n_z as f64,
        ]
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.n_x, self.n_y, self.n_z]
    }

    pub fn membrane_count(&self) -> usize {
        self.n_z - 1
    }

    /// Inlet pressure; only differences matter, so the inlet is the zero.
    pub fn inlet_pressure(&self) -> f64 {
        0.0
    }

    pub fn outlet_pressure(&self) -> f64 {
        self.p_grad * self.length_z
    }

    /// Initial radius of filtering apertures in each membrane.
    pub fn membrane_radii(&self) -> Result<Vec<f64>, ConfigError> {
        let m = self.membrane_count();
        match &self.r_filter {
            FilterRadius::Uniform(r) => Ok(vec![*r; m]),
            FilterRadius::PerMembrane(radii) if radii.len() == m => Ok(radii.clone()),
            FilterRadius::PerMembrane(radii) => Err(ConfigError::ScheduleLength {
                key: "r_filter",
                got: radii.len(),
                expected: m,
            }),
            FilterRadius::Schedule(path) => Err(ConfigError::UnresolvedSchedule(path.clone())),
        }
    }

    pub fn membrane_multiplicity(&self) -> Result<Vec<u32>, ConfigError> {
        let m = self.membrane_count();
        match &self.filter_multiplicity {
            None => Ok(vec![1; m]),
            Some(v) if v.len() != m => Err(ConfigError::ScheduleLength {
                key: "filter_multiplicity",
                got: v.len(),
                expected: m,
            }),
            Some(v) => {
                if let Some(&bad) = v.iter().find(|&&k| k == 0) {
                    return Err(ConfigError::BadCount {
                        key: "filter_multiplicity",
                        value: bad as usize,
                    });
                }
                Ok(v.clone())
            }
        }
    }

    /// Sediment-forming concentration at the entrance, when chemistry is on.
    pub fn entrance_concentration(&self) -> Option<f64> {
        self.chemistry.and(self.c0_entrance)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("L_x", "m", self.length_x)?;
        positive("L_y", "m", self.length_y)?;
        positive("L_z", "m", self.length_z)?;
        for (key, n) in [("n_x", self.n_x), ("n_y", self.n_y), ("n_z", self.n_z)] {
            if n == 0 {
                return Err(ConfigError::BadCount { key, value: n });
            }
        }
        if self.n_z < 2 {
            return Err(ConfigError::TooFewLayers(self.n_z));
        }
        if !self.p_grad.is_finite() {
            return Err(ConfigError::NotPositive {
                key: "p_grad",
                unit: "Pa/m",
                value: self.p_grad,
            });
        }
        positive("mu", "Pa s", self.mu)?;
        positive("l_particle", "m", self.l_particle)?;
        non_negative("N_particles", "m^-3", self.particle_concentration)?;
        positive("r_side", "m", self.r_side)?;

        // Side apertures may fill the inscribed circle of the facet, up to
        // rounding of h; filtering apertures must stay strictly inside it.
        let h = self.cell_size();
        let limit = 0.5 * h.iter().cloned().fold(f64::INFINITY, f64::min);
        if self.r_side > limit * (1.0 + 1e-12) {
            return Err(ConfigError::RadiusTooLarge {
                key: "r_side",
                value: self.r_side,
                limit,
            });
        }
        for r in self.membrane_radii()? {
            positive("r_filter", "m", r)?;
            if r >= limit {
                return Err(ConfigError::RadiusTooLarge {
                    key: "r_filter",
                    value: r,
                    limit,
                });
            }
        }
        self.membrane_multiplicity()?;

        self.inlet_window
            .validate("inlet_window", self.n_x, self.n_y)?;
        self.outlet_window
            .validate("outlet_window", self.n_x, self.n_y)?;

        if let Some(chem) = &self.chemistry {
            chem.validate()?;
            let c0 = self
                .c0_entrance
                .ok_or(ConfigError::MissingEntranceConcentration)?;
            positive("c0_entrance", "m^-3", c0)?;
        }
        if let TimeStep::Fixed(dt) = self.dt {
            positive("dt", "s", dt)?;
        }
        if let Some(tol) = self.solver_tol {
            positive("solver_tol", "m^3/s", tol)?;
        }
        if self.solver_max_iter == 0 {
            return Err(ConfigError::BadCount {
                key: "solver_max_iter",
                value: 0,
            });
        }
        if !(self.sor_omega > 0.0 && self.sor_omega < 2.0) {
            return Err(ConfigError::BadRelaxation(self.sor_omega));
        }
        if !(self.seal_fraction > 0.0 && self.seal_fraction < 1.0) {
            return Err(ConfigError::BadSealFraction(self.seal_fraction));
        }
        if let Some(t) = self.time_limit {
            positive("time_limit", "s", t)?;
        }
        if let Some(t) = self.dt_max {
            positive("dt_max", "s", t)?;
        }
        positive("flow_stop_fraction", "1", self.flow_stop_fraction)?;
        positive("depletion_threshold", "1", self.depletion_threshold)?;
        Ok(())
    }
}

fn positive(key: &'static str, unit: &'static str, value: f64) -> Result<(), ConfigError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::NotPositive { key, unit, value })
    }
}

fn non_negative(key: &'static str, unit: &'static str, value: f64) -> Result<(), ConfigError> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Negative { key, unit, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ApertureState {
    Open,
    ParticleBlocked,
    SedimentSealed,
}

impl ApertureState {
    /// Map symbol: `.` open, `#` particle-blocked, `o` sediment-sealed.
    pub fn symbol(self) -> char {
        match self {
            ApertureState::Open => '.',
            ApertureState::ParticleBlocked => '#',
            ApertureState::SedimentSealed => 'o',
        }
    }
}

/// One facet aperture. A facet may hold several identical physical apertures
/// (`multiplicity`); particles block them one at a time and the facet counts
/// as particle-blocked once all of them are caught.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aperture {
    pub axis: Axis,
    pub filtering: bool,
    pub radius_initial: f64,
    pub radius: f64,
    pub sediment: f64,
    pub state: ApertureState,
    pub multiplicity: u32,
    pub caught: u32,
}

impl Aperture {
    pub fn new(axis: Axis, filtering: bool, radius: f64, multiplicity: u32) -> Self {
        Self {
            axis,
            filtering,
            radius_initial: radius,
            radius,
            sediment: 0.0,
            state: ApertureState::Open,
            multiplicity,
            caught: 0,
        }
    }

    pub fn is_open(&self) -> bool {
        self.state == ApertureState::Open
    }

    /// Physical apertures still passing liquid.
    pub fn open_count(&self) -> u32 {
        if self.is_open() {
            self.multiplicity - self.caught
        } else {
            0
        }
    }

    /// Total open cross-section of the facet, m².
    pub fn flow_area(&self) -> f64 {
        PI * self.radius * self.radius * self.open_count() as f64
    }

    /// Adds sediment of thickness `ds` and seals the aperture once the radius
    /// reaches `seal_fraction` of its initial value. Returns true on sealing.
    pub fn grow_sediment(&mut self, ds: f64, seal_fraction: f64) -> bool {
        if !self.is_open() {
            return false;
        }
        self.sediment += ds;
        self.radius = (self.radius_initial - self.sediment).max(0.0);
        if self.radius <= seal_fraction * self.radius_initial {
            self.state = ApertureState::SedimentSealed;
            true
        } else {
            false
        }
    }

    /// Blocks one physical aperture; returns true if the facet is now closed.
    pub fn catch_particle(&mut self) -> bool {
        if !self.is_open() {
            return false;
        }
        self.caught += 1;
        if self.caught >= self.multiplicity {
            self.state = ApertureState::ParticleBlocked;
            true
        } else {
            false
        }
    }
}

/// The cell lattice with one aperture per interior facet.
///
/// Apertures are stored in one flat vector: first the `z` (filtering)
/// apertures, membrane by membrane, then the `x` and `y` side apertures.
/// Because each facet is shared by the two cells it separates, adjacency is
/// symmetric by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub dims: [usize; 3],
    pub cell_size: [f64; 3],
    pub inlet: Window,
    pub outlet: Window,
    pub apertures: Vec<Aperture>,
}

impl CellGrid {
    pub fn cell_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        let [nx, ny, _] = self.dims;
        (k * ny + j) * nx + i
    }

    pub fn cell_coords(&self, cell: usize) -> (usize, usize, usize) {
        let [nx, ny, _] = self.dims;
        (cell % nx, (cell / nx) % ny, cell / (nx * ny))
    }

    pub fn membrane_count(&self) -> usize {
        self.dims[2] - 1
    }

    pub fn apertures_per_membrane(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn filtering_count(&self) -> usize {
        self.apertures_per_membrane() * self.membrane_count()
    }

    fn x_count(&self) -> usize {
        let [nx, ny, nz] = self.dims;
        (nx - 1) * ny * nz
    }

    pub fn side_count(&self) -> usize {
        let [nx, ny, nz] = self.dims;
        self.x_count() + nx * (ny - 1) * nz
    }

    /// Filtering aperture between cells `(i, j, k)` and `(i, j, k + 1)`.
    pub fn z_aperture(&self, i: usize, j: usize, k: usize) -> usize {
        self.cell_index(i, j, k)
    }

    /// Side aperture between cells `(i, j, k)` and `(i + 1, j, k)`.
    pub fn x_aperture(&self, i: usize, j: usize, k: usize) -> usize {
        let [nx, ny, _] = self.dims;
        self.filtering_count() + (k * ny + j) * (nx - 1) + i
    }

    /// Side aperture between cells `(i, j, k)` and `(i, j + 1, k)`.
    pub fn y_aperture(&self, i: usize, j: usize, k: usize) -> usize {
        let [nx, ny, _] = self.dims;
        self.filtering_count() + self.x_count() + (k * (ny - 1) + j) * nx + i
    }

    /// Index range of the filtering apertures of membrane `m` (0-based).
    pub fn membrane(&self, m: usize) -> std::ops::Range<usize> {
        let per = self.apertures_per_membrane();
        m * per..(m + 1) * per
    }

    pub fn filtering(&self) -> &[Aperture] {
        &self.apertures[..self.filtering_count()]
    }

    pub fn is_inlet(&self, cell: usize) -> bool {
        let (i, j, k) = self.cell_coords(cell);
        k == 0 && self.inlet.contains(i, j)
    }

    pub fn is_outlet(&self, cell: usize) -> bool {
        let (i, j, k) = self.cell_coords(cell);
        k + 1 == self.dims[2] && self.outlet.contains(i, j)
    }

    /// The two cells joined by aperture `a`, lower coordinate first.
    pub fn aperture_cells(&self, a: usize) -> (usize, usize) {
        let [nx, ny, _] = self.dims;
        let fz = self.filtering_count();
        let fx = self.x_count();
        if a < fz {
            (a, a + nx * ny)
        } else if a < fz + fx {
            let r = a - fz;
            let i = r % (nx - 1);
            let rest = r / (nx - 1);
            let cell = rest * nx + i;
            (cell, cell + 1)
        } else {
            let r = a - fz - fx;
            let i = r % nx;
            let rest = r / nx;
            let (j, k) = (rest % (ny - 1), rest / (ny - 1));
            let cell = self.cell_index(i, j, k);
            (cell, cell + nx)
        }
    }

    pub fn count_states(&self, range: std::ops::Range<usize>) -> StateCounts {
        let mut counts = StateCounts::default();
        for a in &self.apertures[range] {
            match a.state {
                ApertureState::Open => counts.open += 1,
                ApertureState::ParticleBlocked => counts.blocked += 1,
                ApertureState::SedimentSealed => counts.sealed += 1,
            }
            counts.caught += a.caught as usize;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateCounts {
    pub open: usize,
    pub blocked: usize,
    pub sealed: usize,
    /// Physical apertures holding a particle, including those on facets that
    /// are still partially open or were later sealed.
    pub caught: usize,
}

impl StateCounts {
    pub fn total(&self) -> usize {
        self.open + self.blocked + self.sealed
    }
}

/// Builds the lattice for a validated configuration, all apertures open.
pub fn build_grid(config: &FilterConfig) -> Result<CellGrid, ConfigError> {
    config.validate()?;
    let radii = config.membrane_radii()?;
    let multiplicity = config.membrane_multiplicity()?;
    let [nx, ny, nz] = config.dims();

    let mut apertures = Vec::with_capacity(nx * ny * (nz - 1) + (nx - 1) * ny * nz + nx * (ny - 1) * nz);
    for (m, (&r, &mult)) in radii.iter().zip(&multiplicity).enumerate() {
        debug_assert!(m < nz - 1);
        apertures.extend((0..nx * ny).map(|_| Aperture::new(Axis::Z, true, r, mult)));
    }
    apertures.extend((0..(nx - 1) * ny * nz).map(|_| Aperture::new(Axis::X, false, config.r_side, 1)));
    apertures.extend((0..nx * (ny - 1) * nz).map(|_| Aperture::new(Axis::Y, false, config.r_side, 1)));

    Ok(CellGrid {
        dims: config.dims(),
        cell_size: config.cell_size(),
        inlet: config.inlet_window,
        outlet: config.outlet_window,
        apertures,
    })
}
