//! The energy tank and its valves.
//!
//! The tank is the scalar integrator `ẋ_t = u_t`, `y_t = ∂T(x_t)`. It is
//! coupled to the plant's control port through the state-modulated
//! interconnection
//!
//! ```text
//! u_c =  (w / ∂T) y_t
//! u_t = −(wᵀ / ∂T) y_c
//! ```
//!
//! which implements `u_c = w` while routing the power `wᵀy_c` out of the tank.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Energy function of the tank, i.e. the chart in which `x_t` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyLaw {
    /// `T = ½x_t²`
    Quadratic,
    /// `T = e^{x_t}`
    Exponential,
}

impl EnergyLaw {
    pub fn energy(self, x_t: f64) -> f64 {
        match self {
            EnergyLaw::Quadratic => 0.5 * x_t * x_t,
            EnergyLaw::Exponential => x_t.exp(),
        }
    }

    pub fn gradient(self, x_t: f64) -> f64 {
        match self {
            EnergyLaw::Quadratic => x_t,
            EnergyLaw::Exponential => x_t.exp(),
        }
    }

    /// Chart value holding `energy`. The quadratic chart uses the nonnegative root.
    pub fn state_for_energy(self, energy: f64) -> Result<f64> {
        if !(energy >= 0.0) || !energy.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "tank energy must be finite and nonnegative, got {energy}"
            )));
        }
        match self {
            EnergyLaw::Quadratic => Ok((2.0 * energy).sqrt()),
            EnergyLaw::Exponential if energy == 0.0 => Err(Error::InvalidConfig(
                "zero energy has no exponential chart value (ln 0)".into(),
            )),
            EnergyLaw::Exponential => Ok(energy.ln()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnergyLaw::Quadratic => "quadratic",
            EnergyLaw::Exponential => "exponential",
        }
    }
}

impl std::str::FromStr for EnergyLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quadratic" | "parabolic" => Ok(EnergyLaw::Quadratic),
            "exponential" => Ok(EnergyLaw::Exponential),
            other => Err(Error::InvalidConfig(format!(
                "unknown energy law '{other}' (expected quadratic or exponential)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tank {
    pub x_t: f64,
    pub law: EnergyLaw,
}

impl Tank {
    pub fn new(x_t: f64, law: EnergyLaw) -> Self {
        Self { x_t, law }
    }

    /// Tank holding exactly `energy` joules.
    pub fn with_energy(law: EnergyLaw, energy: f64) -> Result<Self> {
        Ok(Self {
            x_t: law.state_for_energy(energy)?,
            law,
        })
    }

    pub fn energy(&self) -> f64 {
        self.law.energy(self.x_t)
    }

    pub fn gradient(&self) -> f64 {
        self.law.gradient(self.x_t)
    }

    /// Same tank with `delta` joules added, read back in the active chart.
    pub fn refilled(&self, delta: f64) -> Result<Self> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "refill amount must be finite and nonnegative, got {delta}"
            )));
        }
        Tank::with_energy(self.law, self.energy() + delta)
    }
}

/// `T(x_t)` and `∂T(x_t)` of a tank.
pub fn tank_energy(tank: &Tank) -> f64 {
    tank.energy()
}

pub fn tank_gradient(tank: &Tank) -> f64 {
    tank.gradient()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ValveMode {
    Hard,
    /// Smoothstep ramp over `[ε, ε + width]`.
    Smooth { width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValveConfig {
    /// Detachment threshold ε (J).
    pub epsilon: f64,
    pub mode: ValveMode,
    /// Overflow ceiling (J).
    pub t_max: Option<f64>,
    /// Limit on power extracted from the tank (W).
    pub p_max: Option<f64>,
    /// Fraction of plant dissipation routed back into the tank.
    pub beta: f64,
    /// Smallest `|∂T|` accepted by the interconnection.
    pub singularity_delta: f64,
}

impl Default for ValveConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-2,
            mode: ValveMode::Hard,
            t_max: None,
            p_max: None,
            beta: 0.0,
            singularity_delta: 1e-9,
        }
    }
}

impl ValveConfig {
    /// ε = 0: the valve never closes and the bare interconnection is used.
    pub fn disabled() -> Self {
        Self {
            epsilon: 0.0,
            ..Self::default()
        }
    }

    pub fn hard(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return bad(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if let ValveMode::Smooth { width } = self.mode {
            if !(width > 0.0) || !width.is_finite() {
                return bad(format!("smooth valve width must be > 0, got {width}"));
            }
        }
        if let Some(t_max) = self.t_max {
            if !(t_max > self.epsilon) {
                return bad(format!(
                    "t_max ({t_max}) must exceed epsilon ({})",
                    self.epsilon
                ));
            }
        }
        if let Some(p_max) = self.p_max {
            if !(p_max > 0.0) {
                return bad(format!("p_max must be > 0, got {p_max}"));
            }
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if !(self.singularity_delta > 0.0) {
            return bad(format!(
                "singularity_delta must be > 0, got {}",
                self.singularity_delta
            ));
        }
        Ok(())
    }
}

/// Port variables produced by the tank interconnection.
#[derive(Debug, Clone, PartialEq)]
pub struct Interconnection {
    pub u_c: DVector<f64>,
    pub u_t: f64,
}

pub fn interconnect(
    w: &DVector<f64>,
    y_c: &DVector<f64>,
    tank: &Tank,
    cfg: &ValveConfig,
) -> Result<Interconnection> {
    if w.len() != y_c.len() {
        return Err(Error::Dimension {
            context: "interconnect",
            expected: y_c.len(),
            got: w.len(),
        });
    }
    let y_t = tank.gradient();
    if !(y_t.abs() >= cfg.singularity_delta) {
        return Err(Error::Singularity {
            x_t: tank.x_t,
            energy: tank.energy(),
        });
    }
    // (w / y_t) · y_t would only reproduce w up to rounding
    Ok(Interconnection {
        u_c: w.clone(),
        u_t: -w.dot(y_c) / y_t,
    })
}

/// `3z² − 2z³` on `[0, 1]`, clamped outside.
pub fn smoothstep(z: f64) -> f64 {
    let z = z.clamp(0.0, 1.0);
    z * z * (3.0 - 2.0 * z)
}

/// Valve opening α ∈ [0, 1] from the tank energy and its rate.
pub fn valve_alpha(energy: f64, energy_rate: f64, cfg: &ValveConfig) -> f64 {
    if energy < cfg.epsilon && energy_rate <= 0.0 {
        return 0.0;
    }
    match cfg.mode {
        ValveMode::Hard => 1.0,
        ValveMode::Smooth { width } => {
            if energy_rate > 0.0 {
                1.0
            } else {
                smoothstep((energy - cfg.epsilon) / width)
            }
        }
    }
}

/// Extra tank input that stores `β · p_diss` watts.
pub fn refill_from_dissipation(p_diss: f64, cfg: &ValveConfig, tank: &Tank) -> f64 {
    if cfg.beta == 0.0 || p_diss <= 0.0 {
        return 0.0;
    }
    let y_t = tank.gradient();
    if !(y_t.abs() >= cfg.singularity_delta) {
        log::warn!(
            "refill skipped: tank gradient {y_t:e} below singularity threshold at x_t = {}",
            tank.x_t
        );
        return 0.0;
    }
    cfg.beta * p_diss / y_t
}

/// Power admitted into the tank once the overflow ceiling is considered.
pub fn overflow_valve(energy: f64, incoming_power: f64, cfg: &ValveConfig) -> f64 {
    match cfg.t_max {
        Some(t_max) if energy >= t_max && incoming_power > 0.0 => 0.0,
        _ => incoming_power,
    }
}

/// Scale in (0, 1] applied to the action so extracted power stays below `p_max`.
pub fn power_limit(extracted_power: f64, cfg: &ValveConfig) -> f64 {
    match cfg.p_max {
        Some(p_max) if extracted_power > p_max => p_max / extracted_power,
        _ => 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn energy_examples() {
        let q = Tank::new(2f64.sqrt(), EnergyLaw::Quadratic);
        assert!((q.energy() - 1.0).abs() < 1e-15);
        assert_eq!(q.gradient(), 2f64.sqrt());
        let e = Tank::new(0.0, EnergyLaw::Exponential);
        assert_eq!((e.energy(), e.gradient()), (1.0, 1.0));
        let z = Tank::new(0.0, EnergyLaw::Quadratic);
        assert_eq!((z.energy(), z.gradient()), (0.0, 0.0));
    }

    #[test]
    fn interconnect_examples() {
        let cfg = ValveConfig::default();
        let ic = interconnect(&v(&[1.0]), &v(&[2.0]), &Tank::new(1.0, EnergyLaw::Quadratic), &cfg)
            .unwrap();
        assert_eq!((ic.u_c[0], ic.u_t), (1.0, -2.0));

        let ic = interconnect(&v(&[0.0]), &v(&[7.5]), &Tank::new(0.3, EnergyLaw::Exponential), &cfg)
            .unwrap();
        assert_eq!(ic.u_c[0], 0.0);
        assert_eq!(ic.u_t, 0.0);

        let tank = Tank::new(0.0, EnergyLaw::Exponential);
        let ic = interconnect(&v(&[1.0]), &v(&[2.0]), &tank, &cfg).unwrap();
        assert_eq!((ic.u_c[0], ic.u_t), (1.0, -2.0));
        assert_eq!(tank.gradient() * ic.u_t, -ic.u_c.dot(&v(&[2.0])));
    }

    #[test]
    fn singular_tank_surfaces_error() {
        let cfg = ValveConfig::default();
        let err = interconnect(&v(&[1.0]), &v(&[2.0]), &Tank::new(0.0, EnergyLaw::Quadratic), &cfg)
            .unwrap_err();
        assert_eq!(
            err,
            Error::Singularity {
                x_t: 0.0,
                energy: 0.0
            }
        );
        // e^{-30} ≈ 9e-14 is analytically nonzero but below the guard
        let err = interconnect(&v(&[1.0]), &v(&[2.0]), &Tank::new(-30.0, EnergyLaw::Exponential), &cfg)
            .unwrap_err();
        assert!(matches!(err, Error::Singularity { .. }));
    }

    #[test]
    fn hard_valve_branches() {
        let cfg = ValveConfig::hard(0.1);
        assert_eq!(valve_alpha(0.5, -1.0, &cfg), 1.0);
        assert_eq!(valve_alpha(0.05, -0.1, &cfg), 0.0);
        assert_eq!(valve_alpha(0.05, 0.1, &cfg), 1.0);
        assert_eq!(valve_alpha(0.05, 0.0, &cfg), 0.0);
        assert_eq!(valve_alpha(0.1, -5.0, &cfg), 1.0);
    }

    #[test]
    fn disabled_valve_never_closes() {
        let cfg = ValveConfig::disabled();
        assert_eq!(valve_alpha(0.0, -1.0, &cfg), 1.0);
        assert_eq!(valve_alpha(1e-300, -1.0, &cfg), 1.0);
    }

    #[test]
    fn smooth_valve_ramp() {
        let cfg = ValveConfig {
            epsilon: 0.1,
            mode: ValveMode::Smooth { width: 0.2 },
            ..ValveConfig::default()
        };
        assert_eq!(valve_alpha(0.2, -1.0, &cfg), 0.5);
        assert_eq!(valve_alpha(0.3, -1.0, &cfg), 1.0);
        assert_eq!(valve_alpha(0.5, -1.0, &cfg), 1.0);
        assert_eq!(valve_alpha(0.05, -1.0, &cfg), 0.0);
        assert_eq!(valve_alpha(0.15, 1.0, &cfg), 1.0);
        assert_eq!(smoothstep(0.5), 0.5);
        assert_eq!(smoothstep(-1.0), 0.0);
        assert_eq!(smoothstep(2.0), 1.0);
    }

    #[test]
    fn refill_examples() {
        let cfg = ValveConfig {
            beta: 0.5,
            ..ValveConfig::default()
        };
        let tank = Tank::new(2.0, EnergyLaw::Quadratic);
        let extra = refill_from_dissipation(2.0, &cfg, &tank);
        assert_eq!(extra, 0.5);
        assert_eq!(tank.gradient() * extra, 1.0);
        assert_eq!(refill_from_dissipation(0.0, &cfg, &tank), 0.0);
        let none = ValveConfig::default();
        assert_eq!(refill_from_dissipation(2.0, &none, &tank), 0.0);
        // singular tank: skipped
        assert_eq!(
            refill_from_dissipation(2.0, &cfg, &Tank::new(0.0, EnergyLaw::Quadratic)),
            0.0
        );
    }

    #[test]
    fn overflow_examples() {
        let cfg = ValveConfig {
            t_max: Some(5.0),
            ..ValveConfig::default()
        };
        assert_eq!(overflow_valve(10.0, 3.0, &cfg), 0.0);
        assert_eq!(overflow_valve(10.0, -3.0, &cfg), -3.0);
        assert_eq!(overflow_valve(4.0, 3.0, &cfg), 3.0);
        assert_eq!(overflow_valve(10.0, 3.0, &ValveConfig::default()), 3.0);
    }

    #[test]
    fn power_limit_examples() {
        let cfg = ValveConfig {
            p_max: Some(2.0),
            ..ValveConfig::default()
        };
        assert_eq!(power_limit(4.0, &cfg), 0.5);
        assert_eq!(power_limit(1.0, &cfg), 1.0);
        assert_eq!(power_limit(0.0, &cfg), 1.0);
        assert_eq!(power_limit(-3.0, &cfg), 1.0);
    }

    #[test]
    fn refill_in_chart() {
        let q = Tank::new(0.0, EnergyLaw::Quadratic).refilled(2.0).unwrap();
        assert_eq!(q.x_t, 2.0);
        let e = Tank::new(0.0, EnergyLaw::Exponential)
            .refilled(std::f64::consts::E - 1.0)
            .unwrap();
        assert!((e.x_t - 1.0).abs() < 1e-15);
        let neg = Tank::new(-1.5, EnergyLaw::Quadratic).refilled(0.0).unwrap();
        assert_eq!(neg.x_t, 1.5);
        assert_eq!(neg.energy(), Tank::new(-1.5, EnergyLaw::Quadratic).energy());
        assert!(Tank::new(0.0, EnergyLaw::Quadratic).refilled(-1.0).is_err());
        assert!(EnergyLaw::Exponential.state_for_energy(0.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ValveConfig::default().validate().is_ok());
        assert!(ValveConfig { beta: 1.5, ..Default::default() }.validate().is_err());
        assert!(ValveConfig { epsilon: -1.0, ..Default::default() }.validate().is_err());
        assert!(ValveConfig {
            mode: ValveMode::Smooth { width: 0.0 },
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ValveConfig { t_max: Some(0.005), ..Default::default() }.validate().is_err());
        assert!(ValveConfig { p_max: Some(0.0), ..Default::default() }.validate().is_err());
    }

    fn law() -> impl Strategy<Value = EnergyLaw> {
        prop_oneof![Just(EnergyLaw::Quadratic), Just(EnergyLaw::Exponential)]
    }

    proptest! {
        #[test]
        fn interconnection_preserves_power(
            w in prop::collection::vec(-10.0f64..10.0, 3),
            y in prop::collection::vec(-10.0f64..10.0, 3),
            x_t in -5.0f64..5.0,
            law in law(),
        ) {
            let tank = Tank::new(x_t, law);
            prop_assume!(tank.gradient().abs() >= 1e-3);
            let (w, y) = (v(&w), v(&y));
            let ic = interconnect(&w, &y, &tank, &ValveConfig::default()).unwrap();
            prop_assert_eq!(&ic.u_c, &w);
            prop_assert!((ic.u_c.dot(&y) + ic.u_t * tank.gradient()).abs() <= 1e-12);
        }

        #[test]
        fn hard_valve_is_limit_of_smooth(
            t in 0.0f64..1.0,
            t_dot in -2.0f64..2.0,
        ) {
            let hard = ValveConfig::hard(0.3);
            let smooth = ValveConfig { mode: ValveMode::Smooth { width: 1e-9 }, ..hard };
            prop_assume!((t - 0.3).abs() > 1e-8);
            prop_assert_eq!(valve_alpha(t, t_dot, &hard), valve_alpha(t, t_dot, &smooth));
        }

        #[test]
        fn smooth_valve_is_bounded(t in -1.0f64..2.0, t_dot in -2.0f64..2.0, width in 1e-3f64..1.0) {
            let cfg = ValveConfig { mode: ValveMode::Smooth { width }, ..ValveConfig::hard(0.2) };
            let a = valve_alpha(t, t_dot, &cfg);
            prop_assert!((0.0..=1.0).contains(&a));
            if t >= 0.2 + width {
                prop_assert_eq!(a, valve_alpha(t, t_dot, &ValveConfig::hard(0.2)));
            }
        }

        #[test]
        fn law_gradient_matches_finite_differences(x in -5.0f64..5.0, law in law()) {
            let h = 1e-5;
            let fd = (law.energy(x + h) - law.energy(x - h)) / (2.0 * h);
            let g = law.gradient(x);
            prop_assert!(law.energy(x) >= 0.0);
            prop_assert!((fd - g).abs() <= 1e-8 * g.abs().max(1.0));
        }
    }
}
