//! Acceptance criteria 1-8. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Every tolerance is pinned below.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use filtersim::cli::{load_config, parse_config, trace_csv};
use filtersim::design::{
    equal_contamination_penetration, equal_contamination_schedule, quantile_penetration_report, radius_for_catch,
};
use filtersim::engine::{pass_probability, run, SimulationTrace};
use filtersim::hydraulics::{Network, SolveError, SolverSettings, SweepOrder};
use filtersim::model::{build_grid, ApertureState, CellGrid, Chemistry, FilterConfig, PressureMethod};
use filtersim::sediment::{
    calibrate_rate_constant, diffusion_limited_concentration, solve_slow_layer, stationary_velocity,
    CalibrationInput, Regime,
};

const SEEDS: std::ops::RangeInclusive<u64> = 1..=20;
const BATCH_TIME_LIMIT: Duration = Duration::from_secs(300);
const DAY: f64 = 86_400.0;
/// Working time the third scenario was designed for.
const S3_DESIGN_LIFETIME: f64 = 2.5 * DAY;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn scenario(name: &str) -> FilterConfig {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", name].iter().collect();
    load_config(&path).unwrap_or_else(|e| panic!("{e}"))
}

fn criterion_1() -> Outcome {
    let cal = calibrate_rate_constant(&CalibrationInput {
        growth_rate: 1e-4 / (30.0 * DAY),
        c0_mass: 1e-3,
        dissolved_molar_mass: 0.136,
        sediment_molar_mass: 0.100,
        sediment_density: 2710.0,
        order: 1,
        sediment_per_event: 1,
        diffusivity: 1e-9,
        radius: 1e-6,
    })
    .expect("calibration");
    let k = cal.chemistry.rate_constant;
    let v = stationary_velocity(&cal.chemistry, 1e-6, cal.c0);
    let pass = rel(k, 1.66e-4) <= 0.01
        && rel(cal.c0, 4.4e21) <= 0.02
        && rel(cal.c1, 3.8e21) <= 0.03
        && rel(v, 1.4e-4) <= 0.03;
    outcome(
        pass,
        format!("K = {k:.4e} m/s, c0 = {:.4e}, c1 = {:.4e} m^-3, v_stat = {v:.4e} m/s", cal.c0, cal.c1),
    )
}

fn criterion_2() -> Outcome {
    let l = 2.5e-5;
    let purity = pass_probability(1.19e-5, l).powi(19);
    let purity_ok = rel(purity, 1e-3) <= 0.02;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let catch: f64 = rng.random_range(1e-6..1.0 - 1e-6);
        let r = radius_for_catch(catch, l).expect("catch in range");
        worst = worst.max((pass_probability(r, l) - (1.0 - catch)).abs());
    }
    let inverse_ok = worst <= 1e-12;
    outcome(
        purity_ok && inverse_ok,
        format!(
            "q(1.19e-5)^19 = {purity:.4e} ({:+.2}% vs 1e-3, limit 2%); inverse max error {worst:.1e}",
            100.0 * (purity / 1e-3 - 1.0)
        ),
    )
}

/// Bisection on a sign change found by a logarithmic scan of `(lo, hi)`.
fn scan_and_bisect(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let samples = 4000;
    let ratio = (hi / lo).ln();
    let at = |k: usize| lo * (ratio * k as f64 / samples as f64).exp();
    let (mut a, mut b) = (f64::NAN, f64::NAN);
    for k in 0..samples {
        let (x0, x1) = (at(k), at(k + 1));
        if f(x0).signum() != f(x1).signum() {
            a = x0;
            b = x1;
            break;
        }
    }
    assert!(a.is_finite(), "no sign change on ({lo}, {hi})");
    let fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if f(m).signum() == fa.signum() {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn criterion_3() -> Outcome {
    let mut tuples = 0;
    let mut worst = 0.0f64;
    let mut worst_continuity = 0.0f64;
    for order in [1u32, 2] {
        for ir in 0..6 {
            let radius = 1e-7 * 10f64.powf(ir as f64 * 0.6);
            for ic in 0..5 {
                let c0 = 1e20 * 10f64.powf(ic as f64 * 0.5);
                let chem = Chemistry {
                    order,
                    rate_constant: if order == 1 { 1.658e-4 } else { 1e-26 },
                    ..Chemistry::calcium_carbonate()
                };
                let v_stat = stationary_velocity(&chem, radius, c0);
                for iv in 0..10 {
                    let v0 = v_stat * 10f64.powf(0.01 + iv as f64 * 0.5);
                    let sol = solve_slow_layer(&chem, radius, c0, v0).expect("convective solve");
                    assert_eq!(sol.regime, Regime::Convective);
                    let (k, d, n) = (chem.rate_constant, chem.diffusivity, order as i32);
                    // Wall balance with the layer coordinate written out, on (0, c0).
                    let balance = |c1: f64| {
                        let f1 = d * (c0 - c1) / (k * c1.powi(n) * radius);
                        k * c1.powi(n) - c0 * v0 * f1 * (2.0 - f1)
                    };
                    let c1_slow = diffusion_limited_concentration(&chem, radius, c0);
                    let oracle = scan_and_bisect(balance, c1_slow * (1.0 + 1e-15), c0 * (1.0 - 1e-15));
                    worst = worst.max(rel(sol.c1, oracle));
                    if order == 1 {
                        let a = k * radius / d;
                        let b = k / v0;
                        let y = scan_and_bisect(|y| y * (2.0 - y) * (a * y + 1.0) - b, 1e-300, 1.0);
                        worst = worst.max(rel(sol.y, y));
                    }
                    tuples += 1;
                }
                let below = solve_slow_layer(&chem, radius, c0, v_stat).unwrap();
                let above = solve_slow_layer(&chem, radius, c0, v_stat * (1.0 + 1e-12)).unwrap();
                assert_eq!(below.regime, Regime::DiffusionLimited);
                worst_continuity = worst_continuity.max(rel(above.c1, below.c1));
            }
        }
    }
    // Random tuples fill out the grid past a thousand.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    while tuples < 1200 {
        let radius = 10f64.powf(rng.random_range(-7.0..-4.0));
        let c0 = 10f64.powf(rng.random_range(19.0..23.0));
        let chem = Chemistry::calcium_carbonate();
        let v0 = stationary_velocity(&chem, radius, c0) * 10f64.powf(rng.random_range(0.001..6.0));
        let sol = solve_slow_layer(&chem, radius, c0, v0).unwrap();
        let a = chem.rate_constant * radius / chem.diffusivity;
        let b = chem.rate_constant / v0;
        let y = scan_and_bisect(|y| y * (2.0 - y) * (a * y + 1.0) - b, 1e-300, 1.0);
        worst = worst.max(rel(sol.y, y));
        tuples += 1;
    }
    outcome(
        tuples >= 1000 && worst <= 1e-10 && worst_continuity <= 1e-9,
        format!("{tuples} tuples, worst relative error {worst:.1e}; continuity at v_stat {worst_continuity:.1e}"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        for m in 1..=50usize {
            let q1 = rng.random_range(1e-9..1.0 / m as f64 * (1.0 - 1e-9));
            let s = equal_contamination_schedule(q1, m).expect("schedule");
            let direct: f64 = s.catch.iter().map(|q| 1.0 - q).product();
            worst = worst.max((direct - equal_contamination_penetration(q1, m)).abs());
        }
    }
    let report = quantile_penetration_report(12).expect("report");
    let report_ok = rel(report.direct_product, 5.37e-5) <= 1e-3 && rel(report.printed_closed_form, 1.54e-3) <= 3e-3;
    println!("{report}");
    outcome(
        worst <= 1e-12 && report_ok,
        format!(
            "telescoping max error {worst:.1e}; n_z = 12 direct {:.3e} vs printed {:.3e}",
            report.direct_product, report.printed_closed_form
        ),
    )
}

/// Dense LU solve of the same mass balance; cells cut off from every fixed
/// cell take the inlet pressure.
fn dense_pressures(grid: &CellGrid, g: &[f64], p_in: f64, p_out: f64) -> Vec<f64> {
    let cells = grid.cell_count();
    let fixed = |c: usize| {
        if grid.is_inlet(c) {
            Some(p_in)
        } else if grid.is_outlet(c) {
            Some(p_out)
        } else {
            None
        }
    };
    let mut adjacency = vec![Vec::new(); cells];
    for a in 0..grid.apertures.len() {
        if g[a] > 0.0 {
            let (lo, hi) = grid.aperture_cells(a);
            adjacency[lo].push((hi, g[a]));
            adjacency[hi].push((lo, g[a]));
        }
    }
    let mut reached = vec![false; cells];
    let mut queue: VecDeque<usize> = (0..cells).filter(|&c| fixed(c).is_some()).collect();
    for &c in &queue {
        reached[c] = true;
    }
    while let Some(c) = queue.pop_front() {
        for &(n, _) in &adjacency[c] {
            if !reached[n] {
                reached[n] = true;
                queue.push_back(n);
            }
        }
    }
    let unknown: Vec<usize> = (0..cells).filter(|&c| reached[c] && fixed(c).is_none()).collect();
    let mut slot = vec![usize::MAX; cells];
    for (k, &c) in unknown.iter().enumerate() {
        slot[c] = k;
    }
    let n = unknown.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for (k, &c) in unknown.iter().enumerate() {
        for &(nb, ga) in &adjacency[c] {
            a[(k, k)] += ga;
            match fixed(nb) {
                Some(v) => b[k] += ga * v,
                None => a[(k, slot[nb])] -= ga,
            }
        }
    }
    let x = a.lu().solve(&b).expect("nonsingular system");
    (0..cells)
        .map(|c| match fixed(c) {
            Some(v) => v,
            None if slot[c] != usize::MAX => x[slot[c]],
            None => p_in,
        })
        .collect()
}

fn criterion_5() -> Outcome {
    let base = parse_config(
        r#"
        L_x = 2e-4
        L_y = 2e-4
        L_z = 2e-4
        n_x = 4
        n_y = 4
        n_z = 4
        p_grad = -1e4
        mu = 1e-3
        l_particle = 2.5e-5
        N_particles = 0.0
        r_filter = 1.19e-5
        r_side = 2.5e-5
        inlet_window = { x = [1, 4], y = [1, 4] }
        outlet_window = { x = [2, 3], y = [2, 4] }
        "#,
    )
    .expect("grid config");
    let clean = build_grid(&base).unwrap();
    let (p_in, p_out) = (base.inlet_pressure(), base.outlet_pressure());
    let net = Network::new(&clean, base.mu, p_in, p_out);
    let f1 = filtersim::hydraulics::clean_aperture_flow(&base);
    let settings = SolverSettings {
        tol: 1e-12 * f1,
        max_iter: 1_000_000,
        omega: 1.5,
        order: SweepOrder::Lexicographic,
        method: PressureMethod::Seidel,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut patterns, mut worst, mut worst_residual, mut degenerate_ok) = (0, 0.0f64, 0.0f64, true);
    while patterns < 100 {
        let mut grid = clean.clone();
        let closed: f64 = rng.random_range(0.05..0.45);
        for ap in &mut grid.apertures {
            if rng.random::<f64>() < closed {
                ap.state = ApertureState::SedimentSealed;
            } else {
                // Partly grown sediment spreads the conductances.
                ap.radius *= rng.random_range(0.1..1.0);
            }
        }
        let g = net.conductances(&grid);
        if !net.is_connected(&g) {
            continue;
        }
        let field = net.solve(&g, &settings, None).expect("Seidel converges");
        let oracle = dense_pressures(&grid, &g, p_in, p_out);
        let scale = oracle.iter().fold(0.0f64, |m, p| m.max(p.abs()));
        for (p, q) in field.pressure.iter().zip(&oracle) {
            worst = worst.max((p - q).abs() / scale);
        }
        worst_residual = worst_residual.max(field.residual / settings.tol);

        let membrane = rng.random_range(0..grid.membrane_count());
        for a in grid.membrane(membrane) {
            grid.apertures[a].state = ApertureState::ParticleBlocked;
        }
        let g = net.conductances(&grid);
        degenerate_ok &= net.solve(&g, &settings, None) == Err(SolveError::Degenerate);
        patterns += 1;
    }
    outcome(
        worst <= 1e-8 && worst_residual <= 1.0 && degenerate_ok,
        format!(
            "{patterns} patterns, max relative deviation {worst:.1e}, max residual/tol {worst_residual:.2}, \
             closed membranes degenerate: {degenerate_ok}"
        ),
    )
}

struct Batch {
    traces: Vec<SimulationTrace>,
    elapsed: Duration,
}

fn batch(config: &FilterConfig) -> Batch {
    let start = Instant::now();
    let traces = SEEDS
        .map(|seed| run(&FilterConfig { seed, ..config.clone() }).expect("scenario run"))
        .collect();
    Batch {
        traces,
        elapsed: start.elapsed(),
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Catches in each membrane averaged over the batch.
fn mean_catches(b: &Batch) -> Vec<f64> {
    let m = b.traces[0].last().membranes.len();
    (0..m)
        .map(|k| mean(b.traces.iter().map(|t| t.last().membranes[k].caught as f64)))
        .collect()
}

/// Largest deviation of a seed-averaged per-membrane count at time `t` from
/// the pooled mean, in binomial standard errors. A fixed time is used because
/// final counts are conditioned on which membrane closed first.
fn uniformity_sigma(b: &Batch, per_membrane: usize, t: f64) -> f64 {
    let m = b.traces[0].last().membranes.len();
    let at = |trace: &SimulationTrace| {
        let i = trace.snapshots.partition_point(|s| s.time <= t);
        trace.snapshots[i.max(1) - 1].clone()
    };
    let snaps: Vec<_> = b.traces.iter().map(at).collect();
    assert!(snaps.iter().all(|s| s.total_flow > 0.0), "a run stopped before t");
    let catches: Vec<f64> = (0..m)
        .map(|k| mean(snaps.iter().map(|s| s.membranes[k].caught as f64)))
        .collect();
    let pooled = mean(catches.iter().copied());
    let p = pooled / per_membrane as f64;
    let se = (per_membrane as f64 * p * (1.0 - p) / b.traces.len() as f64).sqrt();
    catches.iter().map(|c| (c - pooled).abs() / se).fold(0.0, f64::max)
}

fn criterion_6(s1: &Batch, s2: &Batch, s3: &Batch) -> Outcome {
    let stop = mean(s1.traces.iter().map(|t| t.stop_time() / DAY));
    let blocked1 = mean(s1.traces.iter().map(|t| t.last().totals().blocked as f64));
    let sealed1 = mean(s1.traces.iter().map(|t| t.last().totals().sealed as f64));
    let counts_ok = s1
        .traces
        .iter()
        .chain(&s2.traces)
        .flat_map(|t| &t.snapshots)
        .all(|s| s.totals().total() == 7600);
    let s1_ok = (1.5..=6.0).contains(&stop)
        && (135.0..=540.0).contains(&blocked1)
        && (5100.0..=7600.0).contains(&sealed1)
        && counts_ok;

    let blocked2 = mean(s2.traces.iter().map(|t| t.last().totals().blocked as f64));
    let matched = s1
        .traces
        .iter()
        .zip(&s2.traces)
        .all(|(a, b)| b.last().totals().blocked > a.last().totals().blocked);
    let s2_ok = (350.0..=1380.0).contains(&blocked2) && matched;

    let per = s3.traces[0].final_grid.apertures_per_membrane();
    let total3 = s3.traces[0].final_grid.filtering_count() as f64;
    let caught3 = mean(s3.traces.iter().map(|t| t.last().totals().blocked as f64));
    let sigma = uniformity_sigma(s3, per, S3_DESIGN_LIFETIME);
    let s3_ok = caught3 / total3 >= 0.70 && sigma <= 3.0;

    let slowest = s1.elapsed.max(s2.elapsed).max(s3.elapsed);
    let time_ok = slowest <= BATCH_TIME_LIMIT;
    outcome(
        s1_ok && s2_ok && s3_ok && time_ok,
        format!(
            "S1: stop {stop:.2} d, blocked {blocked1:.0}, sealed {sealed1:.0}, counts {counts_ok}; \
             S2: blocked {blocked2:.0}, above S1 at every seed {matched}; \
             S3: caught {caught3:.0}/{total3:.0} ({:.1}%), max deviation at 2.5 d {sigma:.2} sigma; \
             batches {:.0}/{:.0}/{:.0} s",
            100.0 * caught3 / total3,
            s1.elapsed.as_secs_f64(),
            s2.elapsed.as_secs_f64(),
            s3.elapsed.as_secs_f64()
        ),
    )
}

fn criterion_7(s1: &Batch, s3: &Batch) -> Outcome {
    let mut same = true;
    for (name, b) in [("scenario1.toml", s1), ("scenario3.toml", s3)] {
        let config = FilterConfig {
            seed: *SEEDS.start(),
            ..scenario(name)
        };
        let again = run(&config).expect("rerun");
        same &= trace_csv(&again) == trace_csv(&b.traces[0]) && again == b.traces[0];
    }
    outcome(same, format!("seed {} reruns of scenarios 1 and 3 byte-identical: {same}", SEEDS.start()))
}

fn criterion_8(s1: &Batch, s3: &Batch) -> Outcome {
    let share_from_6 = |b: &Batch| {
        let c = mean_catches(b);
        c[5..].iter().sum::<f64>() / c.iter().sum::<f64>()
    };
    let tail1 = share_from_6(s1);
    let tail3 = share_from_6(s3);
    let c3 = mean_catches(s3);
    let flatness = c3.iter().cloned().fold(f64::INFINITY, f64::min) / c3.iter().cloned().fold(0.0, f64::max);
    // Six of eleven equally loaded membranes would carry 6/11 of the catches.
    outcome(
        tail1 < 0.05 && tail3 >= 0.8 * 6.0 / 11.0 && flatness >= 0.8,
        format!("S1 membranes >= 6 carry {:.2}% of catches; S3 {:.1}%, min/max membrane {flatness:.3}", 100.0 * tail1, 100.0 * tail3),
    )
}

/// Criterion numbers given on the command line select a subset.
fn selected() -> Vec<u32> {
    let picked: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if picked.is_empty() {
        (1..=8).collect()
    } else {
        picked
    }
}

fn main() {
    let want = selected();
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut report = |n: u32, o: Outcome| {
        println!("criterion {n}: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    let quick: [(u32, fn() -> Outcome); 5] =
        [(1, criterion_1), (2, criterion_2), (3, criterion_3), (4, criterion_4), (5, criterion_5)];
    for (n, f) in quick {
        if want.contains(&n) {
            report(n, f());
        }
    }

    if want.iter().any(|n| (6..=8).contains(n)) {
        let s1 = batch(&scenario("scenario1.toml"));
        let s3 = batch(&scenario("scenario3.toml"));
        if want.contains(&6) {
            let s2 = batch(&scenario("scenario2.toml"));
            report(6, criterion_6(&s1, &s2, &s3));
        }
        if want.contains(&7) {
            report(7, criterion_7(&s1, &s3));
        }
        if want.contains(&8) {
            report(8, criterion_8(&s1, &s3));
        }
    }

    let failed: Vec<u32> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
