//! Cell-pressure network: aperture flow law, assembly and Seidel solution.
//!
//! Each aperture behaves as a linear resistor between the centres of the two
//! cells it joins. Its conductance follows from the cell section `S`
//! perpendicular to the aperture axis, that section's perimeter `P`, and the
//! open aperture area `s`:
//!
//! ```text
//! F = -0.8 p' S² s / (P² mu),   p' = (p_b - p_a) / h
//! ```
//!
//! Inlet and outlet cells carry fixed pressures; mass balance in every other
//! cell gives a sparse symmetric system that is swept with (over-relaxed)
//! Gauss–Seidel iterations, or solved by conjugate gradients with a
//! symmetric Seidel sweep as preconditioner. Both stop on the same
//! max-imbalance criterion.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CellGrid, FilterConfig, PressureMethod};

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("pressure system is degenerate: no open path from inlet to outlet")]
    Degenerate,
    #[error("pressure iteration did not converge in {iterations} iterations (residual {residual:e} m^3/s > tol {tol:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        tol: f64,
    },
}

/// Flow through one aperture, positive from `a` to `b`.
pub fn aperture_flow(
    p_a: f64,
    p_b: f64,
    center_dist: f64,
    section_area: f64,
    perimeter: f64,
    aperture_area: f64,
    mu: f64,
) -> f64 {
    let gradient = (p_b - p_a) / center_dist;
    -0.8 * gradient * section_area * section_area * aperture_area / (perimeter * perimeter * mu)
}

/// Conductance per unit open aperture area along each axis, m/(Pa s).
pub fn axis_factors(cell_size: [f64; 3], mu: f64) -> [f64; 3] {
    let [hx, hy, hz] = cell_size;
    let factor = |a: f64, b: f64, dist: f64| {
        let s = a * b;
        let p = 2.0 * (a + b);
        0.8 * s * s / (p * p * mu * dist)
    };
    [factor(hy, hz, hx), factor(hx, hz, hy), factor(hx, hy, hz)]
}

/// Flow through one clean filtering aperture under the nominal gradient,
/// using the mean configured filtering radius.
pub fn clean_aperture_flow(config: &FilterConfig) -> f64 {
    let radii = config.membrane_radii().unwrap_or_else(|_| vec![0.0]);
    let mean_r2 = radii.iter().map(|r| r * r).sum::<f64>() / radii.len() as f64;
    let [hx, hy, _] = config.cell_size();
    let area = std::f64::consts::PI * mean_r2;
    aperture_flow(0.0, config.p_grad.abs(), 1.0, hx * hy, 2.0 * (hx + hy), area, config.mu).abs()
}

/// Default residual tolerance: `1e-6` of the clean filtering-aperture flow,
/// floored at `1e-12` of the same flow through a side-sized aperture so that
/// tiny filtering radii stay above round-off of the side flows.
pub fn default_tolerance(config: &FilterConfig) -> f64 {
    let [hx, hy, _] = config.cell_size();
    let area = std::f64::consts::PI * config.r_side * config.r_side;
    let side = aperture_flow(0.0, config.p_grad.abs(), 1.0, hx * hy, 2.0 * (hx + hy), area, config.mu).abs();
    (1e-6 * clean_aperture_flow(config)).max(1e-12 * side)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SweepOrder {
    #[default]
    Lexicographic,
    Reverse,
    /// Checkerboard: all cells with even `i + j + k` first.
    RedBlack,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub omega: f64,
    pub order: SweepOrder,
    pub method: PressureMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureField {
    pub pressure: Vec<f64>,
    /// Largest flow imbalance over solved inner cells, m³/s.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowField {
    /// Signed flow per aperture, positive towards the higher cell index.
    pub flow: Vec<f64>,
    pub inlet: f64,
    pub outlet: f64,
}

impl FlowField {
    /// Flow through the filter: mean of inlet and outlet totals.
    pub fn total(&self) -> f64 {
        0.5 * (self.inlet + self.outlet)
    }

    pub fn zero(apertures: usize) -> Self {
        Self {
            flow: vec![0.0; apertures],
            inlet: 0.0,
            outlet: 0.0,
        }
    }
}

/// Cell adjacency of a grid, built once and reused across time steps.
#[derive(Debug, Clone)]
pub struct Network {
    cells: usize,
    /// Six `(neighbour, aperture)` slots per cell.
    links: Vec<(u32, u32)>,
    fixed: Vec<Option<f64>>,
    inlet_cells: Vec<usize>,
    outlet_cells: Vec<usize>,
    order_lex: Vec<u32>,
    order_red_black: Vec<u32>,
    factors: [f64; 3],
}

impl Network {
    pub fn new(grid: &CellGrid, mu: f64, p_in: f64, p_out: f64) -> Self {
        let cells = grid.cell_count();
        let mut links = vec![(NONE, NONE); cells * 6];
        for a in 0..grid.apertures.len() {
            let (lo, hi) = grid.aperture_cells(a);
            let axis = grid.apertures[a].axis.index();
            links[lo * 6 + 2 * axis + 1] = (hi as u32, a as u32);
            links[hi * 6 + 2 * axis] = (lo as u32, a as u32);
        }
        let mut fixed = vec![None; cells];
        let mut inlet_cells = Vec::new();
        let mut outlet_cells = Vec::new();
        for c in 0..cells {
            if grid.is_inlet(c) {
                fixed[c] = Some(p_in);
                inlet_cells.push(c);
            } else if grid.is_outlet(c) {
                fixed[c] = Some(p_out);
                outlet_cells.push(c);
            }
        }
        let order_lex: Vec<u32> = (0..cells as u32).collect();
        let parity = |c: &u32| {
            let (i, j, k) = grid.cell_coords(*c as usize);
            (i + j + k) % 2
        };
        let mut order_red_black: Vec<u32> = order_lex.iter().copied().filter(|c| parity(c) == 0).collect();
        order_red_black.extend(order_lex.iter().copied().filter(|c| parity(c) == 1));

        Self {
            cells,
            links,
            fixed,
            inlet_cells,
            outlet_cells,
            order_lex,
            order_red_black,
            factors: axis_factors(grid.cell_size, mu),
        }
    }

    pub fn cell_count(&self) -> usize {
        self.cells
    }

    /// Current conductance of every aperture, m³/(s Pa). Zero for closed ones.
    pub fn conductances(&self, grid: &CellGrid) -> Vec<f64> {
        grid.apertures
            .iter()
            .map(|a| self.factors[a.axis.index()] * a.flow_area())
            .collect()
    }

    fn neighbours(&self, cell: usize) -> &[(u32, u32)] {
        &self.links[cell * 6..cell * 6 + 6]
    }

    /// Cells reachable from `seeds` through apertures with positive conductance.
    fn reachable(&self, seeds: &[usize], g: &[f64]) -> Vec<bool> {
        let mut seen = vec![false; self.cells];
        let mut queue: VecDeque<usize> = seeds.iter().copied().collect();
        for &s in seeds {
            seen[s] = true;
        }
        while let Some(c) = queue.pop_front() {
            for &(n, a) in self.neighbours(c) {
                if n != NONE && g[a as usize] > 0.0 && !seen[n as usize] {
                    seen[n as usize] = true;
                    queue.push_back(n as usize);
                }
            }
        }
        seen
    }

    /// Whether any outlet cell can be reached from the inlet through open apertures.
    pub fn is_connected(&self, g: &[f64]) -> bool {
        let seen = self.reachable(&self.inlet_cells, g);
        self.outlet_cells.iter().any(|&c| seen[c])
    }

    /// Net inflow into `cell` (the mass-balance residual), m³/s.
    fn imbalance(&self, cell: usize, p: &[f64], g: &[f64]) -> f64 {
        self.neighbours(cell)
            .iter()
            .filter(|(n, _)| *n != NONE)
            .map(|&(n, a)| g[a as usize] * (p[n as usize] - p[cell]))
            .sum()
    }

    /// Solves the mass balance for the given conductances.
    ///
    /// `warm` seeds the iteration (typically the previous step's field).
    /// Cells cut off from both inlet and outlet are excluded and pinned to the
    /// inlet pressure, which leaves no flow through them.
    pub fn solve(
        &self,
        g: &[f64],
        settings: &SolverSettings,
        warm: Option<&[f64]>,
    ) -> Result<PressureField, SolveError> {
        if !self.is_connected(g) {
            return Err(SolveError::Degenerate);
        }
        let boundary: Vec<usize> = self.inlet_cells.iter().chain(&self.outlet_cells).copied().collect();
        let active = self.reachable(&boundary, g);
        let p_in = self.fixed[self.inlet_cells[0]].unwrap_or(0.0);

        let order = match settings.order {
            SweepOrder::Lexicographic | SweepOrder::Reverse => &self.order_lex,
            SweepOrder::RedBlack => &self.order_red_black,
        };
        let mut sweep: Vec<u32> = order
            .iter()
            .copied()
            .filter(|&c| active[c as usize] && self.fixed[c as usize].is_none())
            .collect();
        if settings.order == SweepOrder::Reverse {
            sweep.reverse();
        }

        let mut p: Vec<f64> = match warm {
            Some(w) if w.len() == self.cells => w.to_vec(),
            _ => vec![p_in; self.cells],
        };
        for c in 0..self.cells {
            if let Some(v) = self.fixed[c] {
                p[c] = v;
            } else if !active[c] {
                p[c] = p_in;
            }
        }

        match settings.method {
            PressureMethod::Seidel => self.seidel(&sweep, g, settings, p),
            PressureMethod::Cg => self.conjugate_gradient(&sweep, g, settings, p),
        }
    }

    fn seidel(&self, sweep: &[u32], g: &[f64], settings: &SolverSettings, mut p: Vec<f64>) -> Result<PressureField, SolveError> {
        let omega = settings.omega;
        let mut iterations = 0;
        let mut residual = self.max_imbalance(sweep, &p, g);
        while residual > settings.tol {
            if iterations >= settings.max_iter {
                return Err(SolveError::NotConverged {
                    iterations,
                    residual,
                    tol: settings.tol,
                });
            }
            let mut sweep_residual = 0.0f64;
            for &c in sweep {
                let c = c as usize;
                let mut sum_g = 0.0;
                let mut sum_gp = 0.0;
                for &(n, a) in self.neighbours(c) {
                    if n != NONE {
                        let ga = g[a as usize];
                        sum_g += ga;
                        sum_gp += ga * p[n as usize];
                    }
                }
                if sum_g > 0.0 {
                    let old = p[c];
                    sweep_residual = sweep_residual.max((sum_gp - sum_g * old).abs());
                    p[c] = old + omega * (sum_gp / sum_g - old);
                }
            }
            iterations += 1;
            residual = if sweep_residual <= settings.tol {
                self.max_imbalance(sweep, &p, g)
            } else {
                sweep_residual
            };
        }

        Ok(PressureField {
            pressure: p,
            residual,
            iterations,
        })
    }

    /// Preconditioned conjugate gradients on the unknown cells. The CG
    /// residual of a cell is exactly its flow imbalance; the true imbalance
    /// is recomputed before accepting, and the iteration restarts from the
    /// current field if recurrence drift left it above `tol`.
    fn conjugate_gradient(
        &self,
        sweep: &[u32],
        g: &[f64],
        settings: &SolverSettings,
        mut p: Vec<f64>,
    ) -> Result<PressureField, SolveError> {
        let system = System::assemble(self, sweep, g, &p);
        let n = sweep.len();
        let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

        let mut x: Vec<f64> = sweep.iter().map(|&c| p[c as usize]).collect();
        let mut r = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut ad = vec![0.0; n];
        let mut iterations = 0;
        system.residual(&x, &mut r);
        let mut residual = max_abs(&r);
        'restart: while residual > settings.tol {
            system.precondition(&r, &mut z);
            d.copy_from_slice(&z);
            let mut rz = dot(&r, &z);
            loop {
                if iterations >= settings.max_iter {
                    return Err(SolveError::NotConverged {
                        iterations,
                        residual,
                        tol: settings.tol,
                    });
                }
                iterations += 1;
                system.apply(&d, &mut ad);
                let dad = dot(&d, &ad);
                if !(dad > 0.0) {
                    system.residual(&x, &mut r);
                    residual = max_abs(&r);
                    continue 'restart;
                }
                let alpha = rz / dad;
                for u in 0..n {
                    x[u] += alpha * d[u];
                    r[u] -= alpha * ad[u];
                }
                residual = max_abs(&r);
                if residual <= settings.tol {
                    system.residual(&x, &mut r);
                    residual = max_abs(&r);
                    continue 'restart;
                }
                system.precondition(&r, &mut z);
                let rz_new = dot(&r, &z);
                let beta = rz_new / rz;
                rz = rz_new;
                for u in 0..n {
                    d[u] = z[u] + beta * d[u];
                }
            }
        }
        for (u, &c) in sweep.iter().enumerate() {
            p[c as usize] = x[u];
        }
        let residual = self.max_imbalance(sweep, &p, g);
        Ok(PressureField {
            pressure: p,
            residual,
            iterations,
        })
    }

    fn max_imbalance(&self, cells: &[u32], p: &[f64], g: &[f64]) -> f64 {
        cells
            .iter()
            .map(|&c| self.imbalance(c as usize, p, g).abs())
            .fold(0.0, f64::max)
    }

    /// Per-aperture flows implied by a pressure field.
    pub fn flows(&self, grid: &CellGrid, g: &[f64], field: &PressureField) -> FlowField {
        let p = &field.pressure;
        let flow: Vec<f64> = (0..grid.apertures.len())
            .map(|a| {
                let (lo, hi) = grid.aperture_cells(a);
                g[a] * (p[lo] - p[hi])
            })
            .collect();
        let outflow = |cells: &[usize]| -> f64 {
            cells
                .iter()
                .map(|&c| -self.imbalance(c, p, g))
                .sum()
        };
        FlowField {
            inlet: outflow(&self.inlet_cells),
            outlet: -outflow(&self.outlet_cells),
            flow,
        }
    }
}

/// Mass balance of the unknown cells as `A x = b`, `A = D - L - U`, with the
/// strictly lower and upper couplings stored as separate compressed rows.
struct System {
    diag: Vec<f64>,
    /// Pivots of the modified incomplete Cholesky factor.
    pivot: Vec<f64>,
    b: Vec<f64>,
    lower: Rows,
    upper: Rows,
}

#[derive(Default)]
struct Rows {
    start: Vec<u32>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl Rows {
    fn push(&mut self, col: u32, val: f64) {
        self.cols.push(col);
        self.vals.push(val);
    }

    fn close_row(&mut self) {
        self.start.push(self.cols.len() as u32);
    }

    /// `sum_k vals[k] x[cols[k]]` over row `u`.
    #[inline]
    fn row_dot(&self, u: usize, x: &[f64]) -> f64 {
        let range = self.start[u] as usize..self.start[u + 1] as usize;
        self.cols[range.clone()]
            .iter()
            .zip(&self.vals[range])
            .map(|(&c, &v)| v * x[c as usize])
            .sum()
    }
}

impl System {
    fn assemble(net: &Network, sweep: &[u32], g: &[f64], p: &[f64]) -> Self {
        let n = sweep.len();
        let mut local = vec![NONE; net.cells];
        for (u, &c) in sweep.iter().enumerate() {
            local[c as usize] = u as u32;
        }
        let mut diag = vec![0.0; n];
        let mut b = vec![0.0; n];
        let mut lower = Rows::default();
        let mut upper = Rows::default();
        lower.close_row();
        upper.close_row();
        for (u, &c) in sweep.iter().enumerate() {
            for &(nb, a) in net.neighbours(c as usize) {
                if nb == NONE || g[a as usize] == 0.0 {
                    continue;
                }
                let ga = g[a as usize];
                diag[u] += ga;
                match local[nb as usize] {
                    NONE => b[u] += ga * p[nb as usize],
                    v if (v as usize) < u => lower.push(v, ga),
                    v => upper.push(v, ga),
                }
            }
            lower.close_row();
            upper.close_row();
        }
        let pivot = Self::factor(&diag, &lower, &upper);
        Self {
            diag,
            pivot,
            b,
            lower,
            upper,
        }
    }

    /// Pivots of `M = (P - L) P^-1 (P - U)` with no fill beyond the pattern
    /// of `A`. Dropped fill is moved onto the diagonal (weight `MIC_WEIGHT`)
    /// so that `M` keeps the row sums of `A`.
    fn factor(diag: &[f64], lower: &Rows, upper: &Rows) -> Vec<f64> {
        const MIC_WEIGHT: f64 = 0.97;
        let n = diag.len();
        let upper_sum: Vec<f64> = (0..n)
            .map(|u| upper.vals[upper.start[u] as usize..upper.start[u + 1] as usize].iter().sum())
            .collect();
        let mut pivot = vec![0.0; n];
        for u in 0..n {
            let mut d = diag[u];
            let range = lower.start[u] as usize..lower.start[u + 1] as usize;
            for (&v, &a) in lower.cols[range.clone()].iter().zip(&lower.vals[range]) {
                let v = v as usize;
                let l = a / pivot[v];
                d -= l * a + MIC_WEIGHT * l * (upper_sum[v] - a);
            }
            // Fall back to the plain Seidel pivot if the factor degrades.
            pivot[u] = if d > 1e-3 * diag[u] { d } else { diag[u] };
        }
        pivot
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (u, o) in out.iter_mut().enumerate() {
            *o = self.diag[u] * x[u] - self.lower.row_dot(u, x) - self.upper.row_dot(u, x);
        }
    }

    fn residual(&self, x: &[f64], out: &mut [f64]) {
        for (u, o) in out.iter_mut().enumerate() {
            *o = self.b[u] - self.diag[u] * x[u] + self.lower.row_dot(u, x) + self.upper.row_dot(u, x);
        }
    }

    /// `z = M^-1 r`: a forward and a backward Seidel-type sweep with the
    /// factor pivots in place of the diagonal.
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        for u in 0..r.len() {
            z[u] = (r[u] + self.lower.row_dot(u, z)) / self.pivot[u];
        }
        for u in (0..r.len()).rev() {
            z[u] += self.upper.row_dot(u, z) / self.pivot[u];
        }
    }
}

/// Solves the cell pressures of `grid` from scratch.
pub fn solve_pressures(
    grid: &CellGrid,
    mu: f64,
    p_in: f64,
    p_out: f64,
    settings: &SolverSettings,
) -> Result<PressureField, SolveError> {
    let net = Network::new(grid, mu, p_in, p_out);
    let g = net.conductances(grid);
    net.solve(&g, settings, None)
}

/// Per-aperture flows for a solved field.
pub fn flows_from_pressures(grid: &CellGrid, mu: f64, field: &PressureField) -> FlowField {
    let p_in = 0.0;
    let net = Network::new(grid, mu, p_in, p_in);
    let g = net.conductances(grid);
    net.flows(grid, &g, field)
}
