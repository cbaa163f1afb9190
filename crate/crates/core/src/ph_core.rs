//! Port-Hamiltonian plants in input-state-output form.
//!
//! A plant is described by its Hamiltonian `H(x)`, the skew-symmetric
//! interconnection matrix `J(x)`, the positive semi-definite dissipation
//! matrix `R(x)` and the input matrix `g(x)`:
//!
//! ```text
//! ẋ = [J(x) − R(x)] ∂ₓH(x) + g(x) u
//! y = gᵀ(x) ∂ₓH(x)
//! ```
//!
//! The maps are supplied as plain evaluations through [`PortHamiltonian`];
//! nothing here is symbolic.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type StateVector = DVector<f64>;

/// Maximum allowed `|J + Jᵀ|` entry.
pub const SKEW_TOL: f64 = 1e-12;
/// Smallest admissible eigenvalue of `sym(R)`.
pub const PSD_TOL: f64 = -1e-10;
/// Relative step used by the central-difference gradient fallback.
pub const FD_STEP: f64 = 1e-6;

/// A port-Hamiltonian plant given by callable maps.
pub trait PortHamiltonian: Send + Sync {
    /// State dimension `n`.
    fn state_dim(&self) -> usize;
    /// Port dimension `m`.
    fn input_dim(&self) -> usize;
    fn hamiltonian(&self, x: &StateVector) -> f64;
    /// Analytic `∂ₓH`. Plants returning `None` fall back to central differences.
    fn analytic_gradient(&self, x: &StateVector) -> Option<DVector<f64>>;
    fn structure(&self, x: &StateVector) -> DMatrix<f64>;
    fn dissipation(&self, x: &StateVector) -> DMatrix<f64>;
    fn input_map(&self, x: &StateVector) -> DMatrix<f64>;

    /// `∂ₓH`, analytic when available.
    fn gradient(&self, x: &StateVector) -> DVector<f64> {
        self.analytic_gradient(x)
            .unwrap_or_else(|| finite_difference_gradient(|z| self.hamiltonian(z), x))
    }
}

/// Central-difference gradient with step `FD_STEP · max(1, |xᵢ|)`.
pub fn finite_difference_gradient<F>(h: F, x: &StateVector) -> DVector<f64>
where
    F: Fn(&StateVector) -> f64,
{
    let mut grad = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let step = FD_STEP * x[i].abs().max(1.0);
        probe[i] = x[i] + step;
        let up = h(&probe);
        probe[i] = x[i] - step;
        let down = h(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * step);
    }
    grad
}

/// An input/output pair on a power port together with its power `yᵀu`.
#[derive(Debug, Clone, PartialEq)]
pub struct PortSample {
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub power: f64,
}

impl PortSample {
    pub fn new(u: DVector<f64>, y: DVector<f64>) -> Self {
        let power = y.dot(&u);
        Self { u, y, power }
    }
}

/// All plant maps evaluated at one state, dimension- and finiteness-checked.
#[derive(Debug, Clone)]
pub struct PlantEval {
    pub grad: DVector<f64>,
    pub structure: DMatrix<f64>,
    pub dissipation: DMatrix<f64>,
    pub input_map: DMatrix<f64>,
}

impl PlantEval {
    pub fn output(&self) -> DVector<f64> {
        self.input_map.tr_mul(&self.grad)
    }

    /// `(∂ₓH)ᵀ R (∂ₓH)`.
    pub fn dissipation_rate(&self) -> f64 {
        self.grad.dot(&(&self.dissipation * &self.grad))
    }

    pub fn dynamics(&self, u: &DVector<f64>) -> DVector<f64> {
        (&self.structure - &self.dissipation) * &self.grad + &self.input_map * u
    }
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

fn check_shape(map: &'static str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    check_len(map, rows, m.nrows())?;
    check_len(map, cols, m.ncols())?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { map });
    }
    Ok(())
}

/// Evaluate every plant map at `x`.
pub fn evaluate(plant: &dyn PortHamiltonian, x: &StateVector) -> Result<PlantEval> {
    let n = plant.state_dim();
    let m = plant.input_dim();
    check_len("state", n, x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { map: "state" });
    }
    let grad = plant.gradient(x);
    check_len("grad_hamiltonian", n, grad.len())?;
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            map: "grad_hamiltonian",
        });
    }
    let structure = plant.structure(x);
    check_shape("structure_map", &structure, n, n)?;
    let dissipation = plant.dissipation(x);
    check_shape("dissipation_map", &dissipation, n, n)?;
    let input_map = plant.input_map(x);
    check_shape("input_map", &input_map, n, m)?;
    Ok(PlantEval {
        grad,
        structure,
        dissipation,
        input_map,
    })
}

/// `ẋ = [J − R] ∂ₓH + g u`.
pub fn eval_dynamics(
    plant: &dyn PortHamiltonian,
    x: &StateVector,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len("input", plant.input_dim(), u.len())?;
    let eval = evaluate(plant, x)?;
    Ok(eval.dynamics(u))
}

/// `y = gᵀ ∂ₓH`.
pub fn eval_output(plant: &dyn PortHamiltonian, x: &StateVector) -> Result<DVector<f64>> {
    Ok(evaluate(plant, x)?.output())
}

/// Instantaneous power balance of the plant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerBalance {
    /// `Ḣ = −(∂ₓH)ᵀR(∂ₓH) + yᵀu`.
    pub h_dot: f64,
    /// `(∂ₓH)ᵀR(∂ₓH)`, clamped at zero within rounding.
    pub dissipation_rate: f64,
}

pub fn power_balance(
    plant: &dyn PortHamiltonian,
    x: &StateVector,
    u: &DVector<f64>,
) -> Result<PowerBalance> {
    check_len("input", plant.input_dim(), u.len())?;
    let eval = evaluate(plant, x)?;
    let raw = eval.dissipation_rate();
    if raw < -1e-12 {
        return Err(Error::Invariant(format!(
            "negative dissipation rate {raw:e}: R(x) is not positive semi-definite"
        )));
    }
    let dissipation_rate = raw.max(0.0);
    let supplied = eval.output().dot(u);
    Ok(PowerBalance {
        h_dot: supplied - dissipation_rate,
        dissipation_rate,
    })
}

/// Flows produced by the skew-symmetric Dirac map
///
/// ```text
/// ( ẋ  )   ( J   −I  g ) ( e   )
/// ( y_r) = ( I    0  0 ) ( u_r )
/// ( −y )   ( −gᵀ  0  0 ) ( u   )
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct DiracFlows {
    pub x_dot: DVector<f64>,
    pub y_r: DVector<f64>,
    /// The third block, i.e. `−y`.
    pub y_neg: DVector<f64>,
}

impl DiracFlows {
    /// `eᵀẋ + y_rᵀu_r − yᵀu`; identically zero by skew-symmetry.
    pub fn power_sum(&self, effort: &DVector<f64>, u_r: &DVector<f64>, u: &DVector<f64>) -> f64 {
        effort.dot(&self.x_dot) + self.y_r.dot(u_r) + self.y_neg.dot(u)
    }
}

pub fn dirac_apply(
    plant: &dyn PortHamiltonian,
    x: &StateVector,
    effort: &DVector<f64>,
    u_r: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DiracFlows> {
    let n = plant.state_dim();
    check_len("state", n, x.len())?;
    check_len("effort", n, effort.len())?;
    check_len("u_r", n, u_r.len())?;
    check_len("input", plant.input_dim(), u.len())?;
    let structure = plant.structure(x);
    check_shape("structure_map", &structure, n, n)?;
    let g = plant.input_map(x);
    check_shape("input_map", &g, n, plant.input_dim())?;
    Ok(DiracFlows {
        x_dot: &structure * effort - u_r + &g * u,
        y_r: effort.clone(),
        y_neg: -g.tr_mul(effort),
    })
}

/// Check skew-symmetry of `J`, symmetry and semi-definiteness of `R` and `H ≥ 0` at `x`.
pub fn check_structure(plant: &dyn PortHamiltonian, x: &StateVector) -> Result<()> {
    let eval = evaluate(plant, x)?;
    let j = &eval.structure;
    let skew = (j + j.transpose()).amax();
    if skew > SKEW_TOL {
        return Err(Error::Invariant(format!(
            "J(x) is not skew-symmetric: max|J + Jᵀ| = {skew:e}"
        )));
    }
    let r = &eval.dissipation;
    let asym = (r - r.transpose()).amax();
    if asym > SKEW_TOL {
        return Err(Error::Invariant(format!(
            "R(x) is not symmetric: max|R − Rᵀ| = {asym:e}"
        )));
    }
    let sym = (r + r.transpose()) * 0.5;
    let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
    if min_eig < PSD_TOL {
        return Err(Error::Invariant(format!(
            "R(x) is not positive semi-definite: min eigenvalue {min_eig:e}"
        )));
    }
    let h = plant.hamiltonian(x);
    if !h.is_finite() {
        return Err(Error::NonFinite { map: "hamiltonian" });
    }
    if h < 0.0 {
        return Err(Error::Invariant(format!("H(x) = {h:e} is negative")));
    }
    Ok(())
}

/// Largest relative discrepancy between the plant gradient and central differences of `H`.
pub fn gradient_consistency(plant: &dyn PortHamiltonian, x: &StateVector) -> f64 {
    let analytic = plant.gradient(x);
    let numeric = finite_difference_gradient(|z| plant.hamiltonian(z), x);
    let scale = analytic.amax().max(numeric.amax()).max(1.0);
    (analytic - numeric).amax() / scale
}

/// Point mass with optional linear damping: state `p`, `H = p²/2m`, `J = 0`, `R = c`, `g = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassPlant {
    pub mass: f64,
    pub damping: f64,
}

impl MassPlant {
    pub fn new(mass: f64) -> Self {
        Self { mass, damping: 0.0 }
    }

    pub fn damped(mass: f64, damping: f64) -> Self {
        Self { mass, damping }
    }
}

impl PortHamiltonian for MassPlant {
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn hamiltonian(&self, x: &StateVector) -> f64 {
        0.5 * x[0] * x[0] / self.mass
    }
    fn analytic_gradient(&self, x: &StateVector) -> Option<DVector<f64>> {
        Some(DVector::from_element(1, x[0] / self.mass))
    }
    fn structure(&self, _x: &StateVector) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }
    fn dissipation(&self, _x: &StateVector) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.damping)
    }
    fn input_map(&self, _x: &StateVector) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 1.0)
    }
}

/// Mass on a spring with viscous damping, actuated by a force.
///
/// State `(q, p)`, `H = ½kq² + p²/2m`, canonical `J`, `R = diag(0, c)`, `g = (0, 1)ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassSpringDamper {
    pub mass: f64,
    pub stiffness: f64,
    pub damping: f64,
}

impl PortHamiltonian for MassSpringDamper {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn hamiltonian(&self, x: &StateVector) -> f64 {
        0.5 * self.stiffness * x[0] * x[0] + 0.5 * x[1] * x[1] / self.mass
    }
    fn analytic_gradient(&self, x: &StateVector) -> Option<DVector<f64>> {
        Some(DVector::from_vec(vec![self.stiffness * x[0], x[1] / self.mass]))
    }
    fn structure(&self, _x: &StateVector) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
    }
    fn dissipation(&self, _x: &StateVector) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, self.damping])
    }
    fn input_map(&self, _x: &StateVector) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0])
    }
}

/// Linear plant with quadratic energy `H = ½ xᵀQx` and constant `J`, `R`, `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPlant {
    pub energy: DMatrix<f64>,
    pub structure: DMatrix<f64>,
    pub dissipation: DMatrix<f64>,
    pub input_map: DMatrix<f64>,
}

impl PortHamiltonian for QuadraticPlant {
    fn state_dim(&self) -> usize {
        self.energy.nrows()
    }
    fn input_dim(&self) -> usize {
        self.input_map.ncols()
    }
    fn hamiltonian(&self, x: &StateVector) -> f64 {
        0.5 * x.dot(&(&self.energy * x))
    }
    fn analytic_gradient(&self, x: &StateVector) -> Option<DVector<f64>> {
        let sym = (&self.energy + self.energy.transpose()) * 0.5;
        Some(sym * x)
    }
    fn structure(&self, _x: &StateVector) -> DMatrix<f64> {
        self.structure.clone()
    }
    fn dissipation(&self, _x: &StateVector) -> DMatrix<f64> {
        self.dissipation.clone()
    }
    fn input_map(&self, _x: &StateVector) -> DMatrix<f64> {
        self.input_map.clone()
    }
}

type ScalarMap = Box<dyn Fn(&StateVector) -> f64 + Send + Sync>;
type VectorMap = Box<dyn Fn(&StateVector) -> DVector<f64> + Send + Sync>;
type MatrixMap = Box<dyn Fn(&StateVector) -> DMatrix<f64> + Send + Sync>;

/// Plant assembled from closures. Without a gradient closure, `∂ₓH` is
/// obtained by central differences.
pub struct FnPlant {
    n: usize,
    m: usize,
    hamiltonian: ScalarMap,
    gradient: Option<VectorMap>,
    structure: MatrixMap,
    dissipation: MatrixMap,
    input_map: MatrixMap,
}

impl FnPlant {
    pub fn new(
        n: usize,
        m: usize,
        hamiltonian: impl Fn(&StateVector) -> f64 + Send + Sync + 'static,
        structure: impl Fn(&StateVector) -> DMatrix<f64> + Send + Sync + 'static,
        dissipation: impl Fn(&StateVector) -> DMatrix<f64> + Send + Sync + 'static,
        input_map: impl Fn(&StateVector) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            n,
            m,
            hamiltonian: Box::new(hamiltonian),
            gradient: None,
            structure: Box::new(structure),
            dissipation: Box::new(dissipation),
            input_map: Box::new(input_map),
        }
    }

    pub fn with_gradient(
        mut self,
        gradient: impl Fn(&StateVector) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.gradient = Some(Box::new(gradient));
        self
    }
}

impl PortHamiltonian for FnPlant {
    fn state_dim(&self) -> usize {
        self.n
    }
    fn input_dim(&self) -> usize {
        self.m
    }
    fn hamiltonian(&self, x: &StateVector) -> f64 {
        (self.hamiltonian)(x)
    }
    fn analytic_gradient(&self, x: &StateVector) -> Option<DVector<f64>> {
        self.gradient.as_ref().map(|g| g(x))
    }
    fn structure(&self, x: &StateVector) -> DMatrix<f64> {
        (self.structure)(x)
    }
    fn dissipation(&self, x: &StateVector) -> DMatrix<f64> {
        (self.dissipation)(x)
    }
    fn input_map(&self, x: &StateVector) -> DMatrix<f64> {
        (self.input_map)(x)
    }
}
