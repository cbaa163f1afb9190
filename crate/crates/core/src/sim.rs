//! Fixed-step integration of a [`ClosedLoopSystem`].
//!
//! Valve, limiter and overflow decisions are taken once at the start of each
//! step and held for every stage of that step. The same goes for the
//! `|∂T| ≥ δ` singularity guard: a step starting on a singular tank, or whose
//! stages cross the `∂T = 0` surface, halts the run without a new sample. A
//! step that lands on an escaped state (non-finite, `|x_t|` beyond the bound
//! or tank energy below the floor) is recorded and halts the run.

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::closed_loop::{
    classify_escape, ClosedLoopSystem, EscapeReason, LoopDerivative, LoopState, StepRecord,
    ValveDecision, DEFAULT_ENERGY_FLOOR, DEFAULT_STATE_BOUND,
};
use crate::error::{Error, Result};
use crate::ph_core::check_structure;
use crate::trace::{Sample, SampleDetail, Trace, TraceMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rk4,
    #[serde(rename = "euler")]
    ExplicitEuler,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rk4" => Ok(Method::Rk4),
            "euler" | "explicit-euler" => Ok(Method::ExplicitEuler),
            other => Err(Error::InvalidConfig(format!(
                "unknown method '{other}' (expected rk4 or euler)"
            ))),
        }
    }
}

/// How often plant structure checks (skew `J`, PSD `R`, `H ≥ 0`) run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Validation {
    EveryStep,
    /// First step, then every k-th step.
    Sampled(u64),
}

impl Default for Validation {
    fn default() -> Self {
        if cfg!(debug_assertions) {
            Validation::EveryStep
        } else {
            Validation::Sampled(100)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub method: Method,
    pub record_stride: u64,
    pub seed: u64,
    #[serde(skip)]
    pub validation: Validation,
    pub state_bound: f64,
    pub energy_floor: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            t_end: 3.0,
            method: Method::Rk4,
            record_stride: 1,
            seed: 0,
            validation: Validation::default(),
            state_bound: DEFAULT_STATE_BOUND,
            energy_floor: DEFAULT_ENERGY_FLOOR,
        }
    }
}

impl SimConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return bad(format!("t_end must be > 0, got {}", self.t_end));
        }
        if self.dt > self.t_end {
            return bad(format!("dt ({}) exceeds t_end ({})", self.dt, self.t_end));
        }
        if self.record_stride == 0 {
            return bad("record_stride must be >= 1".into());
        }
        if let Validation::Sampled(0) = self.validation {
            return bad("validation interval must be >= 1".into());
        }
        if !(self.state_bound > 0.0) || !(self.energy_floor >= 0.0) {
            return bad("escape thresholds must be positive".into());
        }
        Ok(())
    }

    /// Number of steps; the last one is clipped so the run ends on `t_end`.
    pub fn steps(&self) -> u64 {
        (self.t_end / self.dt - 1e-9).ceil().max(1.0) as u64
    }

    pub fn time_at(&self, step: u64) -> f64 {
        (step as f64 * self.dt).min(self.t_end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TerminationReason {
    Completed,
    Singularity { t: f64 },
    Escape { t: f64, reason: EscapeReason },
}

impl TerminationReason {
    pub fn is_completed(&self) -> bool {
        matches!(self, TerminationReason::Completed)
    }

    pub fn time(&self) -> Option<f64> {
        match *self {
            TerminationReason::Completed => None,
            TerminationReason::Singularity { t } | TerminationReason::Escape { t, .. } => Some(t),
        }
    }
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TerminationReason::Completed => write!(f, "completed"),
            TerminationReason::Singularity { t } => write!(f, "singularity at t = {t:.6}"),
            TerminationReason::Escape { t, reason } => {
                write!(f, "escape ({}) at t = {t:.6}", reason.name())
            }
        }
    }
}

/// Short SHA-256 digest identifying a scenario and integration setup.
pub fn config_hash(sys: &ClosedLoopSystem, cfg: &SimConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(sys.label.as_bytes());
    hasher.update([0]);
    hasher.update(sys.params.as_bytes());
    hasher.update([0]);
    hasher.update(format!("{:?}", sys.valve).as_bytes());
    hasher.update(format!("{:?}", sys.tank).as_bytes());
    hasher.update(
        format!(
            "{:e}|{:e}|{:?}|{}|{}|{:e}|{:e}",
            cfg.dt, cfg.t_end, cfg.method, cfg.record_stride, cfg.seed, cfg.state_bound, cfg.energy_floor
        )
        .as_bytes(),
    );
    hasher
        .finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

enum StepOutcome {
    Advanced(LoopState),
    Singular(f64),
    Blowup(f64),
}

/// Stepwise integrator over one closed loop.
pub struct Simulator<'a> {
    sys: &'a ClosedLoopSystem,
    cfg: SimConfig,
    state: LoopState,
    step: u64,
    trace: Trace,
    termination: Option<TerminationReason>,
}

impl<'a> Simulator<'a> {
    pub fn new(sys: &'a ClosedLoopSystem, cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let state = sys.initial_state();
        check_structure(sys.plant.as_ref(), &state.x)?;
        let meta = TraceMeta {
            scenario: sys.label.clone(),
            config_hash: config_hash(sys, &cfg),
            law: Some(sys.tank.law),
            valve: Some(sys.valve),
            gradient_fd: sys.plant.analytic_gradient(&state.x).is_none(),
        };
        let mut sim = Self {
            sys,
            cfg,
            state,
            step: 0,
            trace: Trace {
                meta,
                samples: Vec::with_capacity((cfg.steps() / cfg.record_stride + 2) as usize),
            },
            termination: None,
        };
        let state = sim.state.clone();
        if let Some(reason) = sim.escape_of(&state) {
            sim.record_detached(0.0, &state)?;
            sim.termination = Some(TerminationReason::Escape { t: 0.0, reason });
        } else {
            sim.record(0.0, &state)?;
        }
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.cfg.time_at(self.step)
    }

    pub fn state(&self) -> &LoopState {
        &self.state
    }

    pub fn termination(&self) -> Option<TerminationReason> {
        self.termination
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    /// Add `delta` joules to the tank before the next step.
    pub fn refill_tank(&mut self, delta: f64) -> Result<()> {
        let tank = self.sys.tank_at(self.state.x_t).refilled(delta)?;
        log::info!(
            "tank refilled by {delta} J at t = {}: x_t {} -> {}",
            self.time(),
            self.state.x_t,
            tank.x_t
        );
        self.state.x_t = tank.x_t;
        Ok(())
    }

    fn escape_of(&self, state: &LoopState) -> Option<EscapeReason> {
        let energy = self.sys.tank.law.energy(state.x_t);
        if !state.is_finite() {
            return Some(EscapeReason::NumericBlowup);
        }
        classify_escape(
            state.x.as_slice(),
            state.x_t,
            energy,
            self.cfg.state_bound,
            self.cfg.energy_floor,
        )
    }

    fn push_sample(&mut self, t: f64, state: &LoopState, rec: StepRecord) {
        let h = self.sys.plant.hamiltonian(&state.x);
        let tank_energy = self.sys.tank.law.energy(state.x_t);
        self.trace.samples.push(Sample {
            t,
            x: state.x.clone(),
            x_t: state.x_t,
            h,
            tank_energy,
            h_total: h + tank_energy,
            alpha: rec.alpha,
            p_c: rec.p_c,
            p_t: rec.p_t,
            p_e: rec.p_e,
            p_d: rec.p_d,
            detail: Some(SampleDetail {
                env_energy: self.sys.environment.energy(&state.z),
                z: state.z.clone(),
                scale: rec.scale,
                p_refill: rec.p_refill,
                p_overflow: rec.p_overflow,
                w: rec.w,
                u_c: rec.u_c,
                u_e: rec.u_e,
                y: rec.y,
            }),
        });
    }

    /// Record a sample with the controller detached (used at halts).
    fn record_detached(&mut self, t: f64, state: &LoopState) -> Result<()> {
        let rec = match self.sys.assemble_with(t, state, &ValveDecision::DETACHED) {
            Ok((_, rec)) => rec,
            Err(Error::NonFinite { .. }) => {
                let m = self.sys.plant.input_dim();
                let nan = DVector::from_element(m, f64::NAN);
                StepRecord {
                    alpha: 0.0,
                    scale: 1.0,
                    w: nan.clone(),
                    u_c: DVector::zeros(m),
                    u_e: nan.clone(),
                    y: nan,
                    p_c: 0.0,
                    p_t: 0.0,
                    p_e: f64::NAN,
                    p_d: f64::NAN,
                    p_refill: 0.0,
                    p_overflow: 0.0,
                }
            }
            Err(e) => return Err(e),
        };
        self.push_sample(t, state, rec);
        Ok(())
    }

    /// Record a regular sample. Returns `false` if the tank is singular here.
    fn record(&mut self, t: f64, state: &LoopState) -> Result<bool> {
        match self.sys.assemble_dynamics(t, state) {
            Ok((_, rec)) => {
                self.push_sample(t, state, rec);
                Ok(true)
            }
            Err(Error::Singularity { .. }) => {
                self.record_detached(t, state)?;
                self.termination = Some(TerminationReason::Singularity { t });
                Ok(false)
            }
            Err(Error::NonFinite { .. }) => {
                self.record_detached(t, state)?;
                self.termination = Some(TerminationReason::Escape {
                    t,
                    reason: EscapeReason::NumericBlowup,
                });
                Ok(false)
            }
            Err(e) => Err(e),
        }
    }

    fn stage(
        &self,
        t: f64,
        state: &LoopState,
        decision: &ValveDecision,
        start_gradient: f64,
        first: bool,
    ) -> Result<std::result::Result<LoopDerivative, StepOutcome>> {
        if decision.alpha != 0.0 {
            let g = self.sys.tank.law.gradient(state.x_t);
            // a sign change means the stage passed through ∂T = 0
            if start_gradient != 0.0 && g.signum() != start_gradient.signum() {
                return Ok(Err(StepOutcome::Singular(t)));
            }
        }
        let eval = if first {
            self.sys.assemble_with(t, state, decision)
        } else {
            self.sys.assemble_stage(t, state, decision)
        };
        match eval {
            Ok((d, _)) => Ok(Ok(d)),
            Err(Error::Singularity { .. }) => Ok(Err(StepOutcome::Singular(t))),
            Err(Error::NonFinite { .. }) => Ok(Err(StepOutcome::Blowup(t))),
            Err(e) => Err(e),
        }
    }

    fn integrate(&self, t: f64, h: f64) -> Result<StepOutcome> {
        let s0 = &self.state;
        let decision = match self.sys.decide(t, s0) {
            Ok(d) => d,
            Err(Error::NonFinite { .. }) => return Ok(StepOutcome::Blowup(t)),
            Err(e) => return Err(e),
        };
        let g0 = self.sys.tank.law.gradient(s0.x_t);
        macro_rules! stage {
            ($t:expr, $s:expr) => {
                stage!($t, $s, false)
            };
            ($t:expr, $s:expr, $first:expr) => {
                match self.stage($t, $s, &decision, g0, $first)? {
                    Ok(d) => d,
                    Err(outcome) => return Ok(outcome),
                }
            };
        }
        let next = match self.cfg.method {
            Method::ExplicitEuler => {
                let k1 = stage!(t, s0, true);
                s0.advanced(h, &k1)
            }
            Method::Rk4 => {
                let k1 = stage!(t, s0, true);
                let k2 = stage!(t + 0.5 * h, &s0.advanced(0.5 * h, &k1));
                let k3 = stage!(t + 0.5 * h, &s0.advanced(0.5 * h, &k2));
                let k4 = stage!(t + h, &s0.advanced(h, &k3));
                LoopState {
                    x: &s0.x + (&k1.x_dot + (&k2.x_dot + &k3.x_dot) * 2.0 + &k4.x_dot) * (h / 6.0),
                    x_t: s0.x_t
                        + h / 6.0 * (k1.x_t_dot + 2.0 * (k2.x_t_dot + k3.x_t_dot) + k4.x_t_dot),
                    z: &s0.z + (&k1.z_dot + (&k2.z_dot + &k3.z_dot) * 2.0 + &k4.z_dot) * (h / 6.0),
                }
            }
        };
        if decision.alpha != 0.0 && g0 != 0.0 {
            let g = self.sys.tank.law.gradient(next.x_t);
            if g.signum() != g0.signum() {
                return Ok(StepOutcome::Singular(t + h));
            }
        }
        Ok(StepOutcome::Advanced(next))
    }

    /// Advance one step. Returns the termination reason once the run is over.
    pub fn step(&mut self) -> Result<Option<TerminationReason>> {
        if self.termination.is_some() {
            return Ok(self.termination);
        }
        let total = self.cfg.steps();
        let t = self.time();
        let t_next = self.cfg.time_at(self.step + 1);
        match self.integrate(t, t_next - t)? {
            StepOutcome::Singular(ts) => {
                self.termination = Some(TerminationReason::Singularity { t: ts });
            }
            StepOutcome::Blowup(ts) => {
                self.termination = Some(TerminationReason::Escape {
                    t: ts,
                    reason: EscapeReason::NumericBlowup,
                });
            }
            StepOutcome::Advanced(next) => {
                self.step += 1;
                let validate = match self.cfg.validation {
                    Validation::EveryStep => true,
                    Validation::Sampled(k) => self.step.is_multiple_of(k),
                };
                if let Some(reason) = self.escape_of(&next) {
                    self.record_detached(t_next, &next)?;
                    self.state = next;
                    self.termination = Some(TerminationReason::Escape { t: t_next, reason });
                    return Ok(self.termination);
                }
                if validate {
                    check_structure(self.sys.plant.as_ref(), &next.x)?;
                }
                self.state = next;
                let last = self.step >= total;
                if last || self.step.is_multiple_of(self.cfg.record_stride) {
                    let state = self.state.clone();
                    self.record(t_next, &state)?;
                }
                if last && self.termination.is_none() {
                    self.termination = Some(TerminationReason::Completed);
                }
            }
        }
        Ok(self.termination)
    }

    pub fn run(mut self) -> Result<(Trace, TerminationReason)> {
        loop {
            if let Some(reason) = self.step()? {
                return Ok((self.trace, reason));
            }
        }
    }
}

/// Integrate `sys` from `t = 0` to `cfg.t_end` or until the tank fails.
pub fn simulate(sys: &ClosedLoopSystem, cfg: &SimConfig) -> Result<(Trace, TerminationReason)> {
    Simulator::new(sys, *cfg)?.run()
}
