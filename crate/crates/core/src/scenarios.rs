//! Built-in closed loops.
//!
//! * `example1`: a free mass pushed by a constant force drawn from the tank.
//!   Starting at rest with `T(0) = T₀`, `v(t) = F̄t/m` and
//!   `T(t) = T₀ − F̄²t²/2m`, so the tank runs dry at `t̄ = √(2mT₀)/F̄`
//!   whatever the energy law.
//! * `free-mass`: the same plant with `w ≡ 0`.
//! * `passive-env` / `active-env`: seeded mass-spring-damper plants touching a
//!   spring-damper environment (negated damping for `active-env`).

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_loop::{
    ClosedLoopSystem, ConstantAction, OpenPort, SinusoidAction, SpringDamper,
};
use crate::error::{Error, Result};
use crate::ph_core::{MassPlant, MassSpringDamper};
use crate::sim::{simulate, SimConfig, TerminationReason};
use crate::tank::{EnergyLaw, Tank, ValveConfig};
use crate::trace::Trace;

pub const SCENARIOS: &[&str] = &["example1", "free-mass", "passive-env", "active-env"];

/// Parameters of the constant-force mass example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Example1Params {
    pub mass: f64,
    pub f_bar: f64,
    pub law: EnergyLaw,
    pub tank_energy: f64,
}

impl Default for Example1Params {
    fn default() -> Self {
        Self {
            mass: 1.0,
            f_bar: 1.0,
            law: EnergyLaw::Exponential,
            tank_energy: 1.0,
        }
    }
}

impl Example1Params {
    /// Time at which the tank is analytically empty.
    pub fn depletion_time(&self) -> f64 {
        (2.0 * self.mass * self.tank_energy).sqrt() / self.f_bar.abs()
    }

    pub fn velocity(&self, t: f64) -> f64 {
        self.f_bar * t / self.mass
    }

    pub fn tank_energy_at(&self, t: f64) -> f64 {
        self.tank_energy - self.f_bar * self.f_bar * t * t / (2.0 * self.mass)
    }
}

/// Constant-force mass example with the valve disabled (ε = 0).
pub fn example1(m: f64, f_bar: f64, law: EnergyLaw, t0_energy: f64) -> Result<ClosedLoopSystem> {
    example1_with_valve(
        Example1Params {
            mass: m,
            f_bar,
            law,
            tank_energy: t0_energy,
        },
        ValveConfig::disabled(),
    )
}

pub fn example1_with_valve(p: Example1Params, valve: ValveConfig) -> Result<ClosedLoopSystem> {
    if !(p.mass > 0.0) || !p.mass.is_finite() {
        return Err(Error::InvalidConfig(format!("mass must be > 0, got {}", p.mass)));
    }
    if !(p.tank_energy > 0.0) || !p.tank_energy.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "initial tank energy must be > 0, got {}",
            p.tank_energy
        )));
    }
    if !p.f_bar.is_finite() {
        return Err(Error::InvalidConfig("force must be finite".into()));
    }
    Ok(ClosedLoopSystem::new(
        Box::new(MassPlant::new(p.mass)),
        Tank::with_energy(p.law, p.tank_energy)?,
        Box::new(ConstantAction::scalar(p.f_bar)),
        valve,
        Box::new(OpenPort { dim: 1 }),
        DVector::from_element(1, 0.0),
    )?
    .with_label("example1", format!("{p:?}")))
}

/// Unforced mass with initial momentum `p0`.
pub fn free_mass(m: f64, p0: f64, law: EnergyLaw, t0_energy: f64) -> Result<ClosedLoopSystem> {
    if !(m > 0.0) {
        return Err(Error::InvalidConfig(format!("mass must be > 0, got {m}")));
    }
    Ok(ClosedLoopSystem::new(
        Box::new(MassPlant::new(m)),
        Tank::with_energy(law, t0_energy)?,
        Box::new(ConstantAction::scalar(0.0)),
        ValveConfig::default(),
        Box::new(OpenPort { dim: 1 }),
        DVector::from_element(1, p0),
    )?
    .with_label("free-mass", format!("m={m:e} p0={p0:e} {law:?} T0={t0_energy:e}")))
}

/// One randomized plant/environment pairing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassiveEnvParams {
    pub mass: f64,
    pub plant_stiffness: f64,
    pub plant_damping: f64,
    pub env_stiffness: f64,
    pub env_damping: f64,
    /// `w(t) = bias + amplitude · sin(ωt + φ)`, `|bias| + amplitude ≤ 5`.
    pub bias: f64,
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
    pub tank_energy: f64,
    pub q0: f64,
}

impl PassiveEnvParams {
    /// Draw one case. Ranges: m ∈ [0.1, 10] kg, k ∈ [0, 100] N/m,
    /// c ∈ [0, 10] N·s/m for both plant and environment, |w| ≤ 5 N,
    /// T₀ ∈ [0.5, 2] J, q₀ ∈ [−0.1, 0.1] m.
    pub fn draw(rng: &mut impl Rng) -> Self {
        let bias = rng.random_range(-2.5..=2.5);
        Self {
            mass: rng.random_range(0.1..=10.0),
            plant_stiffness: rng.random_range(0.0..=100.0),
            plant_damping: rng.random_range(0.0..=10.0),
            env_stiffness: rng.random_range(0.0..=100.0),
            env_damping: rng.random_range(0.0..=10.0),
            bias,
            amplitude: rng.random_range(0.0..=2.5),
            omega: rng.random_range(0.5..=10.0),
            phase: rng.random_range(0.0..=std::f64::consts::TAU),
            tank_energy: rng.random_range(0.5..=2.0),
            q0: rng.random_range(-0.1..=0.1),
        }
    }

    /// Fastest time constant of the loop, in rad/s.
    pub fn fastest_rate(&self) -> f64 {
        let stiffness = (self.plant_stiffness + self.env_stiffness) / self.mass;
        let damping = (self.plant_damping + self.env_damping.abs()) / self.mass;
        stiffness.sqrt().max(damping).max(self.omega).max(1.0)
    }

    /// Integration setup resolving the fastest rate with ~500 steps per radian.
    pub fn sim_config(&self, t_end: f64) -> SimConfig {
        let dt = (2e-3 / self.fastest_rate()).min(1e-4);
        SimConfig::new(dt, t_end)
    }

    pub fn build(&self, label: &str) -> Result<ClosedLoopSystem> {
        Ok(ClosedLoopSystem::new(
            Box::new(MassSpringDamper {
                mass: self.mass,
                stiffness: self.plant_stiffness,
                damping: self.plant_damping,
            }),
            Tank::with_energy(EnergyLaw::Quadratic, self.tank_energy)?,
            Box::new(SinusoidAction {
                bias: self.bias,
                amplitude: self.amplitude,
                omega: self.omega,
                phase: self.phase,
            }),
            ValveConfig::default(),
            Box::new(SpringDamper {
                stiffness: self.env_stiffness,
                damping: self.env_damping,
            }),
            DVector::from_vec(vec![self.q0, 0.0]),
        )?
        .with_label(label, format!("{self:?}")))
    }

    /// Same case with the environment's damping made negative.
    pub fn activated(&self) -> Self {
        Self {
            env_damping: -self.env_damping.abs().max(0.5),
            ..*self
        }
    }
}

/// `n_cases` seeded parameter draws; identical for identical seeds.
pub fn random_passive_params(seed: u64, n_cases: usize) -> Result<Vec<PassiveEnvParams>> {
    if n_cases == 0 {
        return Err(Error::InvalidConfig("n_cases must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_cases).map(|_| PassiveEnvParams::draw(&mut rng)).collect())
}

/// Seeded batch of plants coupled to passive spring-damper environments.
pub fn random_passive_env(seed: u64, n_cases: usize) -> Result<Vec<ClosedLoopSystem>> {
    random_passive_params(seed, n_cases)?
        .iter()
        .enumerate()
        .map(|(i, p)| p.build(&format!("passive-env[{seed}/{i}]")))
        .collect()
}

/// Simulate many independent loops in parallel. Output order follows input order.
pub fn run_batch(
    systems: &[ClosedLoopSystem],
    configs: &[SimConfig],
) -> Result<Vec<(Trace, TerminationReason)>> {
    if systems.len() != configs.len() {
        return Err(Error::Dimension {
            context: "batch configs",
            expected: systems.len(),
            got: configs.len(),
        });
    }
    systems
        .par_iter()
        .zip(configs.par_iter())
        .map(|(sys, cfg)| simulate(sys, cfg))
        .collect()
}

/// A named scenario with every parameter resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub mass: f64,
    pub f_bar: f64,
    pub law: EnergyLaw,
    pub tank_energy: f64,
    pub p0: f64,
    pub valve: ValveConfig,
    pub seed: u64,
    /// Case index within the seeded batch (`passive-env`, `active-env`).
    pub case: usize,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            name: "example1".into(),
            mass: 1.0,
            f_bar: 1.0,
            law: EnergyLaw::Exponential,
            tank_energy: 1.0,
            p0: 1.0,
            valve: ValveConfig::disabled(),
            seed: 0,
            case: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn build(&self) -> Result<ClosedLoopSystem> {
        match self.name.as_str() {
            "example1" => example1_with_valve(
                Example1Params {
                    mass: self.mass,
                    f_bar: self.f_bar,
                    law: self.law,
                    tank_energy: self.tank_energy,
                },
                self.valve,
            ),
            "free-mass" => free_mass(self.mass, self.p0, self.law, self.tank_energy),
            "passive-env" | "active-env" => {
                let params = random_passive_params(self.seed, self.case + 1)?[self.case];
                let params = if self.name == "active-env" {
                    params.activated()
                } else {
                    params
                };
                params.build(&format!("{}[{}/{}]", self.name, self.seed, self.case))
            }
            other => Err(Error::InvalidConfig(format!(
                "unknown scenario '{other}' (available: {})",
                SCENARIOS.join(", ")
            ))),
        }
    }
}

/// Outcome of one simulated run.
#[derive(Debug, Clone)]
pub struct Run {
    pub trace: Trace,
    pub termination: TerminationReason,
}

impl Run {
    /// Samples strictly before the termination time.
    pub fn valid_len(&self) -> usize {
        match self.termination.time() {
            None => self.trace.samples.len(),
            Some(t_stop) => self.trace.samples.iter().take_while(|s| s.t < t_stop).count(),
        }
    }
}

/// Samples this close to a termination are left out of the energy comparison;
/// there the step size no longer resolves the collapse of the tank.
pub const TERMINATION_MARGIN: f64 = 1e-2;

/// Quadratic and exponential tanks run side by side from the same energy.
#[derive(Debug, Clone)]
pub struct TankComparison {
    pub quadratic: Run,
    pub exponential: Run,
    /// `max |T_quad − T_exp|` over the common pre-termination window.
    pub max_energy_diff: f64,
    /// Last time inside that window.
    pub window_end: f64,
    /// Same maximum including the samples within the termination margin.
    pub tail_energy_diff: f64,
}

/// One aligned row: `(t, T_quad, T_exp, x_t quad, x_t exp)`, `None` past a run's end.
pub type ComparisonRow = (f64, Option<f64>, Option<f64>, Option<f64>, Option<f64>);

impl TankComparison {
    pub fn rows(&self) -> Vec<ComparisonRow> {
        let q = &self.quadratic.trace.samples;
        let e = &self.exponential.trace.samples;
        (0..q.len().max(e.len()))
            .map(|i| {
                let t = q.get(i).or(e.get(i)).map(|s| s.t).unwrap_or_default();
                (
                    t,
                    q.get(i).map(|s| s.tank_energy),
                    e.get(i).map(|s| s.tank_energy),
                    q.get(i).map(|s| s.x_t),
                    e.get(i).map(|s| s.x_t),
                )
            })
            .collect()
    }
}

pub fn fig3_compare(cfg: &SimConfig) -> Result<TankComparison> {
    fig3_compare_with(Example1Params::default(), cfg)
}

pub fn fig3_compare_with(params: Example1Params, cfg: &SimConfig) -> Result<TankComparison> {
    let run = |law| -> Result<Run> {
        let sys = example1_with_valve(Example1Params { law, ..params }, ValveConfig::disabled())?;
        let (trace, termination) = simulate(&sys, cfg)?;
        Ok(Run { trace, termination })
    };
    let quadratic = run(EnergyLaw::Quadratic)?;
    let exponential = run(EnergyLaw::Exponential)?;
    let common = quadratic.valid_len().min(exponential.valid_len());
    let stop = [quadratic.termination.time(), exponential.termination.time()]
        .into_iter()
        .flatten()
        .fold(f64::INFINITY, f64::min);
    let diffs: Vec<(f64, f64)> = quadratic.trace.samples[..common]
        .iter()
        .zip(&exponential.trace.samples[..common])
        .map(|(a, b)| (a.t, (a.tank_energy - b.tank_energy).abs()))
        .collect();
    let inside = |&&(t, _): &&(f64, f64)| t <= stop - TERMINATION_MARGIN;
    let max_energy_diff = diffs.iter().filter(inside).map(|d| d.1).fold(0.0, f64::max);
    let window_end = diffs.iter().rev().find(inside).map_or(0.0, |d| d.0);
    let tail_energy_diff = diffs.iter().map(|d| d.1).fold(0.0, f64::max);
    Ok(TankComparison {
        quadratic,
        exponential,
        max_energy_diff,
        window_end,
        tail_energy_diff,
    })
}
