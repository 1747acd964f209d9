//! Closed-form filter design: per-membrane catch probabilities, the radii that
//! realise them, filtration purity, and rough lifetime estimates.
//!
//! Membranes are indexed `1..=m`; a grid with `n_z` cell layers has
//! `m = n_z - 1` membranes.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::pass_probability;
use crate::model::{FilterConfig, FilterRadius};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesignError {
    #[error("first-membrane catch probability {q1} must lie in (0, 1/{m}) for {m} membranes")]
    FirstCatchOutOfRange { q1: f64, m: usize },
    #[error("membrane count must be at least 1")]
    NoMembranes,
    #[error("catch probability {0} must lie in (0, 1)")]
    CatchOutOfRange(f64),
    #[error("particle length must be positive, got {0}")]
    BadLength(f64),
    #[error("lifetime estimate needs cubic cells, got h = {0:?}")]
    NonCubic([f64; 3]),
    #[error("schedule line {line}: {reason}")]
    ScheduleSyntax { line: usize, reason: String },
    #[error("reading schedule {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    EqualContamination,
    Quantile,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSchedule {
    /// Catch probability `q'_k = 1 - q_k` of each membrane.
    pub catch: Vec<f64>,
    /// Aperture radius of each membrane, m. Empty until `with_radii`.
    pub radii: Vec<f64>,
    pub kind: ScheduleKind,
}

impl LayerSchedule {
    pub fn membranes(&self) -> usize {
        self.catch.len()
    }

    /// Fills in the radii for particles of length `l`.
    pub fn with_radii(mut self, l: f64) -> Result<Self, DesignError> {
        self.radii = self
            .catch
            .iter()
            .map(|&q| radius_for_catch(q, l))
            .collect::<Result<_, _>>()?;
        Ok(self)
    }

    pub fn penetration(&self) -> f64 {
        penetration_probability(&self.catch)
    }

    /// Per-membrane filter radius for a [`FilterConfig`].
    pub fn as_filter_radius(&self) -> FilterRadius {
        FilterRadius::PerMembrane(self.radii.clone())
    }

    /// Schedule file: one `membrane,catch_probability,radius_m` row per membrane.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# kind: {}", serde_json::to_string(&self.kind).unwrap().trim_matches('"'));
        let _ = writeln!(out, "# units: catch_probability dimensionless, radius m");
        let _ = writeln!(out, "# penetration: {:e}", self.penetration());
        out.push_str("membrane,catch_probability,radius_m\n");
        for (k, q) in self.catch.iter().enumerate() {
            let r = self.radii.get(k).copied().unwrap_or(f64::NAN);
            let _ = writeln!(out, "{},{:e},{:e}", k + 1, q, r);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, DesignError> {
        let mut catch = Vec::new();
        let mut radii = Vec::new();
        let mut kind = ScheduleKind::Uniform;
        let mut header_seen = false;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("# kind:") {
                kind = serde_json::from_str(&format!("\"{}\"", rest.trim())).map_err(|e| {
                    DesignError::ScheduleSyntax {
                        line: n + 1,
                        reason: e.to_string(),
                    }
                })?;
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                header_seen = true;
                if line.starts_with("membrane") {
                    continue;
                }
            }
            let bad = |reason: String| DesignError::ScheduleSyntax { line: n + 1, reason };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {}", fields.len())));
            }
            let index: usize = fields[0].parse().map_err(|e| bad(format!("membrane: {e}")))?;
            if index != catch.len() + 1 {
                return Err(bad(format!("membrane {index} out of order")));
            }
            catch.push(fields[1].parse().map_err(|e| bad(format!("catch_probability: {e}")))?);
            radii.push(fields[2].parse().map_err(|e| bad(format!("radius_m: {e}")))?);
        }
        Ok(Self { catch, radii, kind })
    }

    pub fn read(path: &Path) -> Result<Self, DesignError> {
        let text = std::fs::read_to_string(path).map_err(|e| DesignError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_csv(&text)
    }
}

/// Catch probabilities that make every membrane foul at the same rate:
/// `q'_k = q'_1 / (1 - (k - 1) q'_1)`.
pub fn equal_contamination_schedule(q1: f64, m: usize) -> Result<LayerSchedule, DesignError> {
    if m == 0 {
        return Err(DesignError::NoMembranes);
    }
    if !(q1 > 0.0 && q1 * (m as f64) < 1.0) {
        return Err(DesignError::FirstCatchOutOfRange { q1, m });
    }
    let catch = (0..m).map(|k| q1 / (1.0 - k as f64 * q1)).collect();
    Ok(LayerSchedule {
        catch,
        radii: Vec::new(),
        kind: ScheduleKind::EqualContamination,
    })
}

/// Catch probabilities at the quantiles `k / n_z` of the projection-length
/// distribution, `k = 1..=m`.
pub fn quantile_schedule(m: usize, n_z: usize) -> Result<LayerSchedule, DesignError> {
    if m == 0 {
        return Err(DesignError::NoMembranes);
    }
    let catch = (1..=m).map(|k| k as f64 / n_z as f64).collect::<Vec<_>>();
    if let Some(&bad) = catch.iter().find(|&&q| !(q > 0.0 && q < 1.0)) {
        return Err(DesignError::CatchOutOfRange(bad));
    }
    Ok(LayerSchedule {
        catch,
        radii: Vec::new(),
        kind: ScheduleKind::Quantile,
    })
}

pub fn uniform_schedule(catch: f64, m: usize) -> Result<LayerSchedule, DesignError> {
    if m == 0 {
        return Err(DesignError::NoMembranes);
    }
    if !(catch > 0.0 && catch < 1.0) {
        return Err(DesignError::CatchOutOfRange(catch));
    }
    Ok(LayerSchedule {
        catch: vec![catch; m],
        radii: Vec::new(),
        kind: ScheduleKind::Uniform,
    })
}

/// Radius whose pass probability for rods of length `l` is `1 - q'`:
/// `r = (l/2) sqrt(1 - q'²)`.
pub fn radius_for_catch(q_catch: f64, l: f64) -> Result<f64, DesignError> {
    if !(q_catch > 0.0 && q_catch < 1.0) {
        return Err(DesignError::CatchOutOfRange(q_catch));
    }
    if !(l > 0.0) {
        return Err(DesignError::BadLength(l));
    }
    Ok(0.5 * l * (1.0 - q_catch * q_catch).sqrt())
}

/// Probability that a particle crosses every membrane: `Π (1 - q'_k)`.
pub fn penetration_probability(catch: &[f64]) -> f64 {
    catch.iter().map(|q| 1.0 - q).product()
}

/// Penetration of `m` identical membranes with pass probability `q`.
pub fn uniform_penetration(q_pass: f64, m: usize) -> f64 {
    q_pass.powi(m as i32)
}

/// Telescoped penetration of an equal-contamination schedule, `1 - m q'_1`.
pub fn equal_contamination_penetration(q1: f64, m: usize) -> f64 {
    1.0 - m as f64 * q1
}

/// The closed form printed for the quantile schedule, `(n_z-1)! / (n_z-1)^(n_z-2)`.
/// It does not equal the direct product `(n_z-1)! / n_z^(n_z-1)`; both are
/// reported by [`quantile_penetration_report`].
pub fn quantile_penetration_printed(n_z: usize) -> f64 {
    let m = (n_z - 1) as f64;
    // Accumulate the ratio term by term to stay in range for large n_z.
    let mut value = 1.0;
    for k in 1..n_z {
        value *= k as f64;
        if k < n_z - 1 {
            value /= m;
        }
    }
    value
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileReport {
    pub n_z: usize,
    pub direct_product: f64,
    pub printed_closed_form: f64,
}

pub fn quantile_penetration_report(n_z: usize) -> Result<QuantileReport, DesignError> {
    let schedule = quantile_schedule(n_z - 1, n_z)?;
    Ok(QuantileReport {
        n_z,
        direct_product: schedule.penetration(),
        printed_closed_form: quantile_penetration_printed(n_z),
    })
}

impl std::fmt::Display for QuantileReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let m = self.n_z - 1;
        writeln!(f, "quantile schedule, n_z = {}, {m} membranes", self.n_z)?;
        writeln!(
            f,
            "  direct product  prod(1 - k/{}) = {m}!/{}^{m} = {:.4e}",
            self.n_z, self.n_z, self.direct_product
        )?;
        write!(
            f,
            "  printed form    {m}!/{m}^{} = {:.4e}  (ratio {:.3})",
            m - 1,
            self.printed_closed_form,
            self.printed_closed_form / self.direct_product
        )
    }
}

/// Order-of-magnitude lifetime of a clean filter, ignoring sedimentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifetimeEstimate {
    /// Flow through the whole filter, m³/s.
    pub total_flow: f64,
    /// Flow through one central cell of the clean filter, m³/s.
    pub cell_flow: f64,
    /// Concentration-time product `N T`, s/m³.
    pub concentration_time: f64,
    /// Working time at the configured particle concentration, s.
    pub time: f64,
    /// Particles caught before half the apertures are blocked.
    pub capacity: f64,
}

pub fn lifetime_estimates(config: &FilterConfig) -> Result<LifetimeEstimate, DesignError> {
    let h = config.cell_size();
    let scale = h[0].max(h[1]).max(h[2]);
    if (h[0] - h[1]).abs() > 1e-9 * scale || (h[1] - h[2]).abs() > 1e-9 * scale {
        return Err(DesignError::NonCubic(h));
    }
    let h = h[0];
    let radii = config.membrane_radii().map_err(|_| DesignError::NoMembranes)?;
    let mean_r = radii.iter().sum::<f64>() / radii.len() as f64;
    let grad = config.p_grad.abs();
    let pi = std::f64::consts::PI;

    let cell_flow = pi * h * h * mean_r * mean_r * grad / (20.0 * config.mu);
    let total_flow = 0.5 * cell_flow * (config.n_x * config.n_y) as f64;
    let concentration_time = config.n_z as f64 / cell_flow;
    let time = if config.particle_concentration > 0.0 {
        concentration_time / config.particle_concentration
    } else {
        f64::INFINITY
    };
    let capacity = 0.5 * ((config.n_x - 1) * (config.n_y - 1) * (config.n_z - 1)) as f64;
    Ok(LifetimeEstimate {
        total_flow,
        cell_flow,
        concentration_time,
        time,
        capacity,
    })
}

/// Mean pass probability implied by a schedule, for cross-checking radii.
pub fn schedule_pass_probabilities(schedule: &LayerSchedule, l: f64) -> Vec<f64> {
    schedule.radii.iter().map(|&r| pass_probability(r, l)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::scenario_one;

    #[test]
    fn eleven_membrane_design() {
        let s = equal_contamination_schedule(0.09, 11).unwrap();
        assert!((s.penetration() - 0.01).abs() < 1e-12);
        assert!((equal_contamination_penetration(0.09, 11) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn recurrence_by_hand() {
        let s = equal_contamination_schedule(0.1, 9).unwrap();
        assert!((s.catch[1] - 1.0 / 9.0).abs() < 1e-15);
        assert!((s.catch[2] - 1.0 / 8.0).abs() < 1e-15);
        for k in 0..8 {
            let next = s.catch[k] / (1.0 - s.catch[k]);
            assert!((s.catch[k + 1] - next).abs() < 1e-14);
        }
    }

    #[test]
    fn boundary_first_catch_rejected() {
        assert!(matches!(
            equal_contamination_schedule(1.0 / 11.0, 11),
            Err(DesignError::FirstCatchOutOfRange { .. })
        ));
        assert!(equal_contamination_schedule(0.0, 11).is_err());
        assert!(equal_contamination_schedule(0.05, 0).is_err());
    }

    #[test]
    fn quantile_values() {
        let s = quantile_schedule(3, 4).unwrap();
        assert_eq!(s.catch, vec![0.25, 0.5, 0.75]);

        let report = quantile_penetration_report(12).unwrap();
        // 11! / 12^11 and 11! / 11^10.
        let fact11 = 39_916_800.0;
        assert!((report.direct_product - fact11 / 12f64.powi(11)).abs() / report.direct_product < 1e-12);
        assert!((report.direct_product - 5.37e-5).abs() / 5.37e-5 < 1e-3);
        assert!((report.printed_closed_form - fact11 / 11f64.powi(10)).abs() / report.printed_closed_form < 1e-12);
        assert!((report.printed_closed_form - 1.54e-3).abs() / 1.54e-3 < 2e-3);
        assert!(report.to_string().contains("printed form"));
    }

    #[test]
    fn radius_for_catch_values() {
        let l = 2.5e-5;
        assert!((radius_for_catch(1e-9, l).unwrap() - l / 2.0).abs() < 1e-15);
        assert!(radius_for_catch(1.0 - 1e-12, l).unwrap() < 1e-5 * l);
        let r = radius_for_catch(0.305, l).unwrap();
        assert!((r / l - 0.4762).abs() < 1e-4);
        assert!((r - 1.19e-5).abs() / 1.19e-5 < 1e-3);
        assert!(radius_for_catch(1.0, l).is_err());
        assert!(radius_for_catch(0.5, 0.0).is_err());
    }

    #[test]
    fn penetration_values() {
        assert!((uniform_penetration(0.695, 19) - 0.001).abs() / 0.001 < 0.02);
        let s = equal_contamination_schedule(0.05, 10).unwrap();
        assert!((s.penetration() - 0.5).abs() < 1e-12);
        assert_eq!(penetration_probability(&[0.3, 1.0, 0.2]), 0.0);
        let u = uniform_schedule(0.305, 19).unwrap();
        assert!((u.penetration() - uniform_penetration(0.695, 19)).abs() < 1e-15);
    }

    #[test]
    fn lifetime_values() {
        let cfg = scenario_one();
        let est = lifetime_estimates(&cfg).unwrap();
        assert!((est.concentration_time - 3.6e13).abs() / 3.6e13 < 0.01, "{:e}", est.concentration_time);
        assert!((est.time - 2.6e6).abs() / 2.6e6 < 0.01, "{:e}", est.time);
        assert!((est.total_flow - 0.5 * est.cell_flow * 400.0).abs() / est.total_flow < 1e-14);
        assert!((est.concentration_time - cfg.n_z as f64 / est.cell_flow).abs() / est.concentration_time < 1e-14);
        assert_eq!(est.capacity, 0.5 * 19.0 * 19.0 * 19.0);

        let mut doubled = cfg.clone();
        doubled.r_filter = FilterRadius::Uniform(2.0 * 1.19e-5);
        doubled.r_side = 2.5e-5;
        let est2 = lifetime_estimates(&doubled).unwrap();
        assert!((est.concentration_time / est2.concentration_time - 4.0).abs() < 1e-12);

        let mut skew = cfg;
        skew.length_z = 2e-3;
        assert!(matches!(lifetime_estimates(&skew), Err(DesignError::NonCubic(_))));
    }

    #[test]
    fn schedule_csv_roundtrip() {
        let s = equal_contamination_schedule(0.09, 11).unwrap().with_radii(2.5e-5).unwrap();
        let back = LayerSchedule::from_csv(&s.to_csv()).unwrap();
        assert_eq!(back, s);
        let passes = schedule_pass_probabilities(&back, 2.5e-5);
        for (p, q) in passes.iter().zip(&s.catch) {
            assert!((p - (1.0 - q)).abs() < 1e-12);
        }
    }

    #[test]
    fn schedule_csv_errors_name_line() {
        let err = LayerSchedule::from_csv("membrane,catch_probability,radius_m\n1,0.1\n").unwrap_err();
        assert!(matches!(err, DesignError::ScheduleSyntax { line: 2, .. }));
        let err = LayerSchedule::from_csv("1,0.1,1e-5\n3,0.2,1e-5\n").unwrap_err();
        assert!(matches!(err, DesignError::ScheduleSyntax { line: 2, .. }));
    }
}
