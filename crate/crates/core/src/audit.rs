//! Passivity audit over recorded traces.
//!
//! Checks `S(t) − S(0) ≤ ∫₀ᵗ yᵀu ds` at every sample, with the supplied
//! energy integrated by the trapezoidal rule on the sampled powers. For the
//! plant storage `H` the supply port is `u = u_c + u_e`; for the closed-loop
//! storage `𝓗 = H + T` it is the interaction port `(u_e, y_e)` alone.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::trace::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Storage {
    /// Plant Hamiltonian `H`.
    PlantH,
    /// Closed-loop energy `H + T`.
    TotalH,
}

impl Storage {
    pub fn name(self) -> &'static str {
        match self {
            Storage::PlantH => "plant",
            Storage::TotalH => "total",
        }
    }
}

impl std::str::FromStr for Storage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plant" | "planth" | "h" => Ok(Storage::PlantH),
            "total" | "totalh" | "htot" => Ok(Storage::TotalH),
            other => Err(Error::InvalidConfig(format!(
                "unknown storage '{other}' (expected plant or total)"
            ))),
        }
    }
}

/// Default per-unit-time tolerance for a trace sampled every `dt` seconds.
pub fn default_tolerance(dt: f64) -> f64 {
    1e-6 + 10.0 * dt * dt
}

/// Passivity check of the environment itself, from its own stored energy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvironmentAudit {
    pub delta_energy: f64,
    /// `∫ −u_eᵀ y_e`, the energy the environment received from the plant.
    pub absorbed: f64,
    pub worst_violation: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub storage: Storage,
    pub samples: usize,
    pub duration: f64,
    pub nominal_dt: f64,
    /// Tolerance per unit time.
    pub tol: f64,
    /// Violation allowed over the whole trace, `tol · max(duration, 1)`.
    pub allowance: f64,
    pub delta_storage: f64,
    pub supplied: f64,
    /// `E_d`, the passivity margin.
    pub dissipated: f64,
    pub worst_violation: f64,
    pub worst_violation_time: f64,
    pub residual_max: f64,
    pub residual_mean: f64,
    pub gradient_fd: bool,
    pub environment: Option<EnvironmentAudit>,
    pub passed: bool,
}

fn trapezoid_cumulative(times: &[f64], values: impl Iterator<Item = f64>) -> Vec<f64> {
    let values: Vec<f64> = values.collect();
    let mut acc = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    acc.push(0.0);
    for i in 1..values.len() {
        sum += 0.5 * (times[i] - times[i - 1]) * (values[i] + values[i - 1]);
        acc.push(sum);
    }
    acc
}

/// Audit `trace` for passivity with respect to `storage`.
///
/// `tol` is a per-unit-time tolerance; `None` uses [`default_tolerance`] for
/// the trace's sample spacing.
pub fn passivity_audit(trace: &Trace, storage: Storage, tol: Option<f64>) -> Result<AuditReport> {
    if trace.samples.len() < 2 {
        return Err(Error::Trace {
            row: trace.samples.len() + 1,
            message: "an audit needs at least two samples".into(),
        });
    }
    trace.validate()?;
    let times: Vec<f64> = trace.times().collect();
    let nominal_dt = times[1] - times[0];
    // the final interval may be shorter (clipped at t_end or a termination)
    if let Some(i) = times
        .windows(2)
        .position(|w| (w[1] - w[0]) > nominal_dt * (1.0 + 1e-6))
    {
        return Err(Error::Trace {
            row: i + 3,
            message: format!(
                "inconsistent sample spacing {} (nominal {nominal_dt})",
                times[i + 1] - times[i]
            ),
        });
    }
    let tol = tol.unwrap_or_else(|| default_tolerance(nominal_dt));
    if !(tol >= 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be >= 0, got {tol}")));
    }

    let s = &trace.samples;
    let stored = |i: usize| match storage {
        Storage::PlantH => s[i].h,
        Storage::TotalH => s[i].h_total,
    };
    let supply = trapezoid_cumulative(
        &times,
        s.iter().map(|smp| match storage {
            Storage::PlantH => smp.p_c + smp.p_e,
            Storage::TotalH => smp.p_e,
        }),
    );
    let dissipated = trapezoid_cumulative(&times, s.iter().map(|smp| smp.p_d));

    let base = stored(0);
    let mut worst_violation = f64::NEG_INFINITY;
    let mut worst_violation_time = times[0];
    for i in 0..s.len() {
        let v = (stored(i) - base) - supply[i];
        // NaN compares false, so force it to register
        if v > worst_violation || v.is_nan() {
            worst_violation = v;
            worst_violation_time = times[i];
            if v.is_nan() {
                break;
            }
        }
    }

    let residuals: Vec<f64> = s.iter().map(|smp| (smp.p_c + smp.p_t).abs()).collect();
    let residual_max = residuals.iter().cloned().fold(0.0, f64::max);
    let residual_mean = residuals.iter().sum::<f64>() / residuals.len() as f64;

    let duration = times[times.len() - 1] - times[0];
    let allowance = tol * duration.max(1.0);

    let environment = if s.iter().all(|smp| smp.detail.is_some()) {
        let env_energy = |i: usize| s[i].detail.as_ref().map_or(0.0, |d| d.env_energy);
        let absorbed = trapezoid_cumulative(&times, s.iter().map(|smp| -smp.p_e));
        let e0 = env_energy(0);
        let worst = (0..s.len())
            .map(|i| (env_energy(i) - e0) - absorbed[i])
            .fold(f64::NEG_INFINITY, f64::max);
        Some(EnvironmentAudit {
            delta_energy: env_energy(s.len() - 1) - e0,
            absorbed: absorbed[s.len() - 1],
            worst_violation: worst,
            passed: worst <= allowance,
        })
    } else {
        None
    };

    let closed_ok = worst_violation <= allowance;
    let passed = closed_ok && environment.as_ref().is_none_or(|e| e.passed);
    Ok(AuditReport {
        storage,
        samples: s.len(),
        duration,
        nominal_dt,
        tol,
        allowance,
        delta_storage: stored(s.len() - 1) - base,
        supplied: supply[s.len() - 1],
        dissipated: dissipated[s.len() - 1],
        worst_violation,
        worst_violation_time,
        residual_max,
        residual_mean,
        gradient_fd: trace.meta.gradient_fd,
        environment,
        passed,
    })
}

impl AuditReport {
    /// `key = value` lines for scripts.
    pub fn key_values(&self) -> Vec<(&'static str, String)> {
        let mut kv = vec![
            ("storage", self.storage.name().to_string()),
            ("samples", self.samples.to_string()),
            ("duration", format!("{:e}", self.duration)),
            ("nominal_dt", format!("{:e}", self.nominal_dt)),
            ("tol", format!("{:e}", self.tol)),
            ("allowance", format!("{:e}", self.allowance)),
            ("delta_storage", format!("{:e}", self.delta_storage)),
            ("supplied", format!("{:e}", self.supplied)),
            ("dissipated", format!("{:e}", self.dissipated)),
            ("worst_violation", format!("{:e}", self.worst_violation)),
            ("worst_violation_time", format!("{:e}", self.worst_violation_time)),
            ("residual_max", format!("{:e}", self.residual_max)),
            ("residual_mean", format!("{:e}", self.residual_mean)),
            ("gradient_fd", self.gradient_fd.to_string()),
        ];
        if let Some(env) = &self.environment {
            kv.push(("env_delta_energy", format!("{:e}", env.delta_energy)));
            kv.push(("env_absorbed", format!("{:e}", env.absorbed)));
            kv.push(("env_worst_violation", format!("{:e}", env.worst_violation)));
            kv.push(("env_passed", env.passed.to_string()));
        }
        kv.push(("passed", self.passed.to_string()));
        kv
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let storage = match self.storage {
            Storage::PlantH => "H (plant, port u_c + u_e)",
            Storage::TotalH => "H + T (closed loop, port u_e)",
        };
        writeln!(f, "passivity audit: {}", if self.passed { "PASS" } else { "FAIL" })?;
        writeln!(f, "  storage               {storage}")?;
        writeln!(
            f,
            "  samples               {} over {:.6} s (dt {:e})",
            self.samples, self.duration, self.nominal_dt
        )?;
        writeln!(f, "  stored energy change  {:+.9e} J", self.delta_storage)?;
        writeln!(f, "  supplied energy       {:+.9e} J", self.supplied)?;
        writeln!(f, "  dissipated energy     {:+.9e} J", self.dissipated)?;
        writeln!(
            f,
            "  worst violation       {:+.3e} J at t = {:.6} s (allowed {:.3e} J)",
            self.worst_violation, self.worst_violation_time, self.allowance
        )?;
        writeln!(
            f,
            "  |P_c + P_t| residual  max {:.3e} W, mean {:.3e} W",
            self.residual_max, self.residual_mean
        )?;
        if self.gradient_fd {
            writeln!(f, "  note: plant gradient from central differences")?;
        }
        if let Some(env) = &self.environment {
            writeln!(
                f,
                "  environment           {} (stored {:+.3e} J, absorbed {:+.3e} J, violation {:+.3e} J)",
                if env.passed { "passive" } else { "ACTIVE" },
                env.delta_energy,
                env.absorbed,
                env.worst_violation
            )?;
        }
        writeln!(f)?;
        writeln!(f, "[audit]")?;
        for (k, v) in self.key_values() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Sample, TraceMeta};
    use nalgebra::DVector;

    fn flat(t: f64, h: f64) -> Sample {
        Sample {
            t,
            x: DVector::from_element(1, 0.0),
            x_t: 1.0,
            h,
            tank_energy: 0.5,
            h_total: h + 0.5,
            alpha: 1.0,
            p_c: 0.0,
            p_t: 0.0,
            p_e: 0.0,
            p_d: 0.0,
            detail: None,
        }
    }

    fn trace(samples: Vec<Sample>) -> Trace {
        Trace {
            meta: TraceMeta::default(),
            samples,
        }
    }

    #[test]
    fn equilibrium_passes() {
        let tr = trace((0..11).map(|i| flat(i as f64 * 0.1, 0.0)).collect());
        for storage in [Storage::PlantH, Storage::TotalH] {
            let r = passivity_audit(&tr, storage, None).unwrap();
            assert_eq!(r.delta_storage, 0.0);
            assert_eq!(r.supplied, 0.0);
            assert_eq!(r.worst_violation, 0.0);
            assert!(r.passed);
        }
    }

    #[test]
    fn energy_from_nowhere_fails() {
        let tr = trace((0..11).map(|i| flat(i as f64 * 0.1, 0.2 * i as f64)).collect());
        let r = passivity_audit(&tr, Storage::PlantH, None).unwrap();
        assert!(!r.passed);
        assert!((r.worst_violation - 2.0).abs() < 1e-12);
        assert_eq!(r.worst_violation, r.delta_storage);
    }

    #[test]
    fn supplied_power_is_trapezoidal() {
        // P_e = t on [0, 1]: the trapezoid is exact for linear integrands
        let tr = trace(
            (0..=10)
                .map(|i| {
                    let t = i as f64 * 0.1;
                    let mut s = flat(t, 0.5 * t * t);
                    s.p_e = t;
                    s
                })
                .collect(),
        );
        let r = passivity_audit(&tr, Storage::PlantH, None).unwrap();
        assert!((r.supplied - 0.5).abs() < 1e-15);
        assert!(r.worst_violation.abs() < 1e-15);
        assert!(r.passed);
    }

    #[test]
    fn too_short_or_uneven_traces_are_rejected() {
        assert!(passivity_audit(&trace(vec![flat(0.0, 0.0)]), Storage::TotalH, None).is_err());
        let uneven = trace(vec![flat(0.0, 0.0), flat(0.1, 0.0), flat(0.5, 0.0)]);
        assert!(matches!(
            passivity_audit(&uneven, Storage::TotalH, None).unwrap_err(),
            Error::Trace { .. }
        ));
        // a shorter final interval is fine
        let clipped = trace(vec![flat(0.0, 0.0), flat(0.1, 0.0), flat(0.15, 0.0)]);
        assert!(passivity_audit(&clipped, Storage::TotalH, None).is_ok());
    }

    #[test]
    fn negative_tolerance_is_rejected() {
        let tr = trace(vec![flat(0.0, 0.0), flat(0.1, 0.0)]);
        assert!(passivity_audit(&tr, Storage::TotalH, Some(-1.0)).is_err());
    }

    #[test]
    fn report_has_key_value_section() {
        let tr = trace(vec![flat(0.0, 0.0), flat(0.1, 0.0)]);
        let text = passivity_audit(&tr, Storage::TotalH, None).unwrap().to_string();
        assert!(text.contains("[audit]"));
        assert!(text.contains("passed = true"));
        assert!(text.contains("storage = total"));
    }
}
