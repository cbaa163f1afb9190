//! Plant, tank, action policy, valve and environment wired into one loop.
//!
//! The plant port is split as `u = u_c + u_e`: the control port `u_c` is
//! driven through the tank interconnection, the interaction port `u_e` by the
//! environment. Both ports share the plant output `y`. The closed loop stores
//! `𝓗 = H + T`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::ph_core::{evaluate, PortHamiltonian, StateVector};
use crate::tank::{
    interconnect, overflow_valve, power_limit, refill_from_dissipation, valve_alpha, Tank,
    ValveConfig,
};
use crate::trace::Trace;

/// The desired task action `w(t, x, x_t)`.
pub trait ActionPolicy: Send + Sync {
    fn action(&self, t: f64, x: &StateVector, x_t: f64) -> DVector<f64>;
}

/// `w ≡ value`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantAction(pub DVector<f64>);

impl ConstantAction {
    pub fn scalar(value: f64) -> Self {
        Self(DVector::from_element(1, value))
    }
}

impl ActionPolicy for ConstantAction {
    fn action(&self, _t: f64, _x: &StateVector, _x_t: f64) -> DVector<f64> {
        self.0.clone()
    }
}

/// Scalar `w(t) = bias + amplitude · sin(ωt + φ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidAction {
    pub bias: f64,
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
}

impl ActionPolicy for SinusoidAction {
    fn action(&self, t: f64, _x: &StateVector, _x_t: f64) -> DVector<f64> {
        DVector::from_element(
            1,
            self.bias + self.amplitude * (self.omega * t + self.phase).sin(),
        )
    }
}

impl<F> ActionPolicy for F
where
    F: Fn(f64, &StateVector, f64) -> DVector<f64> + Send + Sync,
{
    fn action(&self, t: f64, x: &StateVector, x_t: f64) -> DVector<f64> {
        self(t, x, x_t)
    }
}

/// What the plant is touching on its interaction port.
///
/// Environments may carry internal state `z` (e.g. a spring elongation), which
/// is integrated alongside the plant.
pub trait EnvironmentModel: Send + Sync {
    fn port_dim(&self) -> usize;
    fn state_dim(&self) -> usize {
        0
    }
    /// Interaction effort `u_e` applied to the plant.
    fn effort(&self, t: f64, z: &DVector<f64>, y_e: &DVector<f64>) -> DVector<f64>;
    fn state_rate(&self, _z: &DVector<f64>, _y_e: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.state_dim())
    }
    /// Energy stored inside the environment.
    fn energy(&self, _z: &DVector<f64>) -> f64 {
        0.0
    }
    fn declared_passive(&self) -> bool;
}

/// `u_e ≡ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpenPort {
    pub dim: usize,
}

impl EnvironmentModel for OpenPort {
    fn port_dim(&self) -> usize {
        self.dim
    }
    fn effort(&self, _t: f64, _z: &DVector<f64>, _y_e: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.dim)
    }
    fn declared_passive(&self) -> bool {
        true
    }
}

/// Scalar spring-damper anchored where the interaction starts:
/// `ż = y_e`, `u_e = −k z − c y_e`, stored energy `½ k z²`.
///
/// A negative damping turns this into an active environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpringDamper {
    pub stiffness: f64,
    pub damping: f64,
}

impl EnvironmentModel for SpringDamper {
    fn port_dim(&self) -> usize {
        1
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn effort(&self, _t: f64, z: &DVector<f64>, y_e: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, -self.stiffness * z[0] - self.damping * y_e[0])
    }
    fn state_rate(&self, _z: &DVector<f64>, y_e: &DVector<f64>) -> DVector<f64> {
        y_e.clone()
    }
    fn energy(&self, z: &DVector<f64>) -> f64 {
        0.5 * self.stiffness * z[0] * z[0]
    }
    fn declared_passive(&self) -> bool {
        self.stiffness >= 0.0 && self.damping >= 0.0
    }
}

/// Full closed-loop state: plant `x`, tank `x_t`, environment `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopState {
    pub x: StateVector,
    pub x_t: f64,
    pub z: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopDerivative {
    pub x_dot: DVector<f64>,
    pub x_t_dot: f64,
    pub z_dot: DVector<f64>,
}

impl LoopState {
    /// `self + h · d`
    pub fn advanced(&self, h: f64, d: &LoopDerivative) -> LoopState {
        LoopState {
            x: &self.x + &d.x_dot * h,
            x_t: self.x_t + h * d.x_t_dot,
            z: &self.z + &d.z_dot * h,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x_t.is_finite() && self.x.iter().chain(self.z.iter()).all(|v| v.is_finite())
    }
}

/// Valve and limiter decisions taken at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValveDecision {
    pub alpha: f64,
    /// Power-limit scale applied to `w`.
    pub scale: f64,
    /// Tank at or above its overflow ceiling.
    pub at_ceiling: bool,
}

impl ValveDecision {
    pub const DETACHED: ValveDecision = ValveDecision {
        alpha: 0.0,
        scale: 1.0,
        at_ceiling: false,
    };
}

/// Port powers and signals at one evaluation of the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub alpha: f64,
    pub scale: f64,
    /// Raw policy output, before valve and limiter.
    pub w: DVector<f64>,
    pub u_c: DVector<f64>,
    pub u_e: DVector<f64>,
    pub y: DVector<f64>,
    /// `u_cᵀ y_c`
    pub p_c: f64,
    /// `y_t u_t` on the interconnection port
    pub p_t: f64,
    /// `u_eᵀ y_e`
    pub p_e: f64,
    /// `(∂ₓH)ᵀ R (∂ₓH)`
    pub p_d: f64,
    /// Power stored from dissipation refill.
    pub p_refill: f64,
    /// Power dumped by the overflow valve.
    pub p_overflow: f64,
}

pub struct ClosedLoopSystem {
    pub plant: Box<dyn PortHamiltonian>,
    pub tank: Tank,
    pub policy: Box<dyn ActionPolicy>,
    pub valve: ValveConfig,
    pub environment: Box<dyn EnvironmentModel>,
    pub x0: StateVector,
    /// Scenario label carried into trace metadata.
    pub label: String,
    /// Canonical parameter description used for the configuration hash.
    pub params: String,
}

impl ClosedLoopSystem {
    pub fn new(
        plant: Box<dyn PortHamiltonian>,
        tank: Tank,
        policy: Box<dyn ActionPolicy>,
        valve: ValveConfig,
        environment: Box<dyn EnvironmentModel>,
        x0: StateVector,
    ) -> Result<Self> {
        valve.validate()?;
        if x0.len() != plant.state_dim() {
            return Err(Error::Dimension {
                context: "initial state",
                expected: plant.state_dim(),
                got: x0.len(),
            });
        }
        if environment.port_dim() != plant.input_dim() {
            return Err(Error::Dimension {
                context: "environment port",
                expected: plant.input_dim(),
                got: environment.port_dim(),
            });
        }
        if !tank.x_t.is_finite() {
            return Err(Error::InvalidConfig("initial tank state is not finite".into()));
        }
        Ok(Self {
            plant,
            tank,
            policy,
            valve,
            environment,
            x0,
            label: "custom".into(),
            params: String::new(),
        })
    }

    pub fn with_label(mut self, label: impl Into<String>, params: impl Into<String>) -> Self {
        self.label = label.into();
        self.params = params.into();
        self
    }

    pub fn initial_state(&self) -> LoopState {
        LoopState {
            x: self.x0.clone(),
            x_t: self.tank.x_t,
            z: DVector::zeros(self.environment.state_dim()),
        }
    }

    pub fn tank_at(&self, x_t: f64) -> Tank {
        Tank::new(x_t, self.tank.law)
    }

    /// `H(x) + T(x_t)`
    pub fn total_energy(&self, state: &LoopState) -> f64 {
        self.plant.hamiltonian(&state.x) + self.tank.law.energy(state.x_t)
    }

    fn action(&self, t: f64, state: &LoopState) -> Result<DVector<f64>> {
        let w = self.policy.action(t, &state.x, state.x_t);
        if w.len() != self.plant.input_dim() {
            return Err(Error::Dimension {
                context: "action policy",
                expected: self.plant.input_dim(),
                got: w.len(),
            });
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                map: "action_policy",
            });
        }
        Ok(w)
    }

    /// Valve, limiter and overflow decisions at `(t, state)`.
    ///
    /// The candidate tank rate is computed with α = 1 (limiter applied, refill
    /// added, overflow clipped) and α is then read off that rate.
    pub fn decide(&self, t: f64, state: &LoopState) -> Result<ValveDecision> {
        let eval = evaluate(self.plant.as_ref(), &state.x)?;
        let y = eval.output();
        let w = self.action(t, state)?;
        let tank = self.tank_at(state.x_t);
        let energy = tank.energy();

        let extracted = w.dot(&y);
        let scale = power_limit(extracted, &self.valve);
        let refill_power =
            tank.gradient() * refill_from_dissipation(eval.dissipation_rate().max(0.0), &self.valve, &tank);
        let candidate = overflow_valve(energy, -scale * extracted + refill_power, &self.valve);
        Ok(ValveDecision {
            alpha: valve_alpha(energy, candidate, &self.valve),
            scale,
            at_ceiling: self.valve.t_max.is_some_and(|t_max| energy >= t_max),
        })
    }

    /// Closed-loop vector field under a frozen valve decision.
    pub fn assemble_with(
        &self,
        t: f64,
        state: &LoopState,
        decision: &ValveDecision,
    ) -> Result<(LoopDerivative, StepRecord)> {
        self.assemble_inner(t, state, decision, &self.valve)
    }

    /// Like [`Self::assemble_with`] but without the `|∂T| ≥ δ` guard, for
    /// integrator stages whose step already passed the guard at its start.
    /// A vanishing `∂T` then shows up as a non-finite derivative.
    pub fn assemble_stage(
        &self,
        t: f64,
        state: &LoopState,
        decision: &ValveDecision,
    ) -> Result<(LoopDerivative, StepRecord)> {
        let valve = ValveConfig {
            singularity_delta: 0.0,
            ..self.valve
        };
        self.assemble_inner(t, state, decision, &valve)
    }

    fn assemble_inner(
        &self,
        t: f64,
        state: &LoopState,
        decision: &ValveDecision,
        valve: &ValveConfig,
    ) -> Result<(LoopDerivative, StepRecord)> {
        let m = self.plant.input_dim();
        if state.z.len() != self.environment.state_dim() {
            return Err(Error::Dimension {
                context: "environment state",
                expected: self.environment.state_dim(),
                got: state.z.len(),
            });
        }
        let eval = evaluate(self.plant.as_ref(), &state.x)?;
        let y = eval.output();
        let p_d = eval.dissipation_rate();
        if p_d < -1e-12 {
            return Err(Error::Invariant(format!(
                "negative dissipation rate {p_d:e}: R(x) is not positive semi-definite"
            )));
        }
        let p_d = p_d.max(0.0);

        let u_e = self.environment.effort(t, &state.z, &y);
        if u_e.len() != m {
            return Err(Error::Dimension {
                context: "environment effort",
                expected: m,
                got: u_e.len(),
            });
        }
        let w = self.action(t, state)?;
        let tank = self.tank_at(state.x_t);
        let y_t = tank.gradient();

        let (u_c, u_t, x_t_dot, p_refill, p_overflow) = if decision.alpha == 0.0 {
            // detached: neither the controller nor the tank see any power
            (DVector::zeros(m), 0.0, 0.0, 0.0, 0.0)
        } else {
            let w_eff = &w * (decision.alpha * decision.scale);
            let ic = interconnect(&w_eff, &y, &tank, valve)?;
            let u_extra = refill_from_dissipation(p_d, valve, &tank);
            let inflow = y_t * (ic.u_t + u_extra);
            let admitted = if decision.at_ceiling {
                overflow_valve(f64::INFINITY, inflow, valve)
            } else {
                inflow
            };
            let x_t_dot = if admitted == inflow { ic.u_t + u_extra } else { 0.0 };
            (ic.u_c, ic.u_t, x_t_dot, y_t * u_extra, inflow - admitted)
        };

        let u = &u_c + &u_e;
        let x_dot = eval.dynamics(&u);
        let z_dot = self.environment.state_rate(&state.z, &y);
        if !x_t_dot.is_finite() || x_dot.iter().chain(z_dot.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                map: "closed_loop_dynamics",
            });
        }

        let record = StepRecord {
            alpha: decision.alpha,
            scale: decision.scale,
            p_c: u_c.dot(&y),
            p_t: y_t * u_t,
            p_e: u_e.dot(&y),
            p_d,
            p_refill,
            p_overflow,
            w,
            u_c,
            u_e,
            y,
        };
        Ok((
            LoopDerivative {
                x_dot,
                x_t_dot,
                z_dot,
            },
            record,
        ))
    }

    /// Decide the valve at `(t, state)` and evaluate the vector field.
    pub fn assemble_dynamics(&self, t: f64, state: &LoopState) -> Result<(LoopDerivative, StepRecord)> {
        let decision = self.decide(t, state)?;
        self.assemble_with(t, state, &decision)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EscapeReason {
    /// `|x_t|` left the admissible bound.
    StateEscape,
    /// Tank energy fell below the floor.
    EnergyDepletion,
    /// A non-finite value appeared.
    NumericBlowup,
}

impl EscapeReason {
    pub fn name(self) -> &'static str {
        match self {
            EscapeReason::StateEscape => "state-escape",
            EscapeReason::EnergyDepletion => "energy-depletion",
            EscapeReason::NumericBlowup => "numeric-blowup",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscapeEvent {
    pub time: f64,
    pub reason: EscapeReason,
}

pub const DEFAULT_STATE_BOUND: f64 = 1e3;
pub const DEFAULT_ENERGY_FLOOR: f64 = 1e-12;

/// Classify a single sample against the escape thresholds.
pub fn classify_escape(
    x: &[f64],
    x_t: f64,
    tank_energy: f64,
    state_bound: f64,
    energy_floor: f64,
) -> Option<EscapeReason> {
    if !x_t.is_finite() || !tank_energy.is_finite() || x.iter().any(|v| !v.is_finite()) {
        Some(EscapeReason::NumericBlowup)
    } else if x_t.abs() > state_bound {
        Some(EscapeReason::StateEscape)
    } else if tank_energy < energy_floor {
        Some(EscapeReason::EnergyDepletion)
    } else {
        None
    }
}

/// First sample of `trace` at which the tank escapes, depletes or blows up.
pub fn detect_escape(trace: &Trace, state_bound: f64, energy_floor: f64) -> Option<EscapeEvent> {
    trace.samples.iter().find_map(|s| {
        let numeric = !s.h.is_finite() || !s.h_total.is_finite();
        let reason = if numeric {
            Some(EscapeReason::NumericBlowup)
        } else {
            classify_escape(s.x.as_slice(), s.x_t, s.tank_energy, state_bound, energy_floor)
        };
        reason.map(|reason| EscapeEvent { time: s.t, reason })
    })
}
