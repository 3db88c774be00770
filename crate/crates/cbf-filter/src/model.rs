//! Problem data model: control-affine systems, nominal controllers, class-K-infinity
//! functions, weight matrices, and the shared evaluators eta(x) and f_tilde(x).

use crate::barrier::Barrier;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Sign convention for a linear nominal controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    /// u = -K x, closed-loop matrix A - B K.
    NegativeGain,
    /// u = +K x, closed-loop matrix A + B K.
    PositiveFeedback,
}

/// Control-affine system xdot = f(x) + g(x) u. All built-in families are linear:
/// f(x) = A x and g(x) = B.
#[derive(Debug, Clone)]
pub struct SystemDef {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl SystemDef {
    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension("A must be square".into()));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::Dimension(format!(
                "B has {} rows but A is {}x{}",
                b.nrows(),
                a.nrows(),
                a.ncols()
            )));
        }
        let rank = b.clone().svd(false, false).rank(1e-10);
        if rank < b.ncols() {
            return Err(Error::Config(format!(
                "B must have full column rank (rank {} < {})",
                rank,
                b.ncols()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn f(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x
    }

    pub fn g(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.b.clone()
    }
}

/// Nominal linear state feedback with an explicit sign convention.
#[derive(Debug, Clone)]
pub struct ControllerDef {
    pub k: DMatrix<f64>,
    pub convention: Convention,
}

impl ControllerDef {
    pub fn new(k: DMatrix<f64>, convention: Convention) -> Self {
        Self { k, convention }
    }

    /// A zero controller of input dimension `m` acting on states of dimension `n`.
    pub fn zero(m: usize, n: usize) -> Self {
        Self {
            k: DMatrix::zeros(m, n),
            convention: Convention::NegativeGain,
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.convention {
            Convention::NegativeGain => -(&self.k * x),
            Convention::PositiveFeedback => &self.k * x,
        }
    }

    /// Closed-loop matrix A - B K or A + B K, depending on the convention.
    pub fn a_tilde(&self, system: &SystemDef) -> DMatrix<f64> {
        match self.convention {
            Convention::NegativeGain => &system.a - &system.b * &self.k,
            Convention::PositiveFeedback => &system.a + &system.b * &self.k,
        }
    }

    /// All eigenvalues of the closed-loop matrix have real part below -1e-10.
    pub fn is_hurwitz(&self, system: &SystemDef) -> bool {
        is_hurwitz(&self.a_tilde(system))
    }
}

pub fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .all(|l| l.re < -1e-10)
}

/// Extended class-K-infinity function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ClassKInf {
    Linear { slope: f64 },
    /// alpha(s) = c1 s + c3 s^3 with c1 > 0, c3 >= 0.
    CubicOdd { c1: f64, c3: f64 },
}

impl ClassKInf {
    pub fn linear(slope: f64) -> Self {
        ClassKInf::Linear { slope }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            ClassKInf::Linear { slope } => slope * s,
            ClassKInf::CubicOdd { c1, c3 } => c1 * s + c3 * s * s * s,
        }
    }

    /// Derivative at zero; this is the eigenvalue -alpha'(0) that every Jacobian
    /// at an undesired equilibrium carries.
    pub fn deriv_at_zero(&self) -> f64 {
        match *self {
            ClassKInf::Linear { slope } => slope,
            ClassKInf::CubicOdd { c1, .. } => c1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ClassKInf::Linear { slope } => slope > 0.0,
            ClassKInf::CubicOdd { c1, c3 } => c1 > 0.0 && c3 >= 0.0,
        };
        if !ok {
            return Err(Error::Config("class-K function must be strictly increasing".into()));
        }
        // Strict monotonicity on a sampled grid, as a defensive check for future variants.
        let mut prev = f64::NEG_INFINITY;
        for i in 0..100 {
            let s = -10.0 + 20.0 * (i as f64) / 99.0;
            let v = self.eval(s);
            if v <= prev {
                return Err(Error::Config("class-K function is not increasing".into()));
            }
            prev = v;
        }
        Ok(())
    }
}

/// Weight matrix G of the filter objective.
#[derive(Debug, Clone)]
pub enum WeightSpec {
    Identity,
    Constant(DMatrix<f64>),
}

impl WeightSpec {
    pub fn matrix(&self, m: usize) -> DMatrix<f64> {
        match self {
            WeightSpec::Identity => DMatrix::identity(m, m),
            WeightSpec::Constant(g) => g.clone(),
        }
    }

    /// Solves G y = w via Cholesky (G is SPD); never forms an explicit inverse.
    pub fn apply_inv(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            WeightSpec::Identity => Ok(w.clone()),
            WeightSpec::Constant(g) => {
                let chol = g
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::Config("weight matrix G is not positive definite".into()))?;
                Ok(chol.solve(w))
            }
        }
    }

    /// Squared norm ||w||^2 in the G^-1 metric.
    pub fn norm2_inv(&self, w: &DVector<f64>) -> Result<f64> {
        Ok(w.dot(&self.apply_inv(w)?))
    }

    pub fn validate(&self) -> Result<()> {
        if let WeightSpec::Constant(g) = self {
            if !g.is_square() {
                return Err(Error::Dimension("G must be square".into()));
            }
            let sym = (g - g.transpose()).amax();
            if sym > 1e-9 * (1.0 + g.amax()) {
                return Err(Error::Config("G must be symmetric".into()));
            }
            let eig = g.clone().symmetric_eigen();
            if eig.eigenvalues.min() <= 1e-12 {
                return Err(Error::Config("G must be positive definite".into()));
            }
        }
        Ok(())
    }
}

/// The complete closed-loop definition: system, nominal controller, barrier, weight.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub system: SystemDef,
    pub controller: ControllerDef,
    pub barrier: Barrier,
    pub weight: WeightSpec,
}

impl ProblemInstance {
    pub fn new(
        system: SystemDef,
        controller: ControllerDef,
        barrier: Barrier,
        weight: WeightSpec,
    ) -> Result<Self> {
        let n = system.n();
        let m = system.m();
        if controller.k.ncols() != n || controller.k.nrows() != m {
            return Err(Error::Dimension(format!(
                "K must be {}x{}, got {}x{}",
                m,
                n,
                controller.k.nrows(),
                controller.k.ncols()
            )));
        }
        if barrier.dim() != n {
            return Err(Error::Dimension(format!(
                "barrier acts on dimension {}, system has n = {}",
                barrier.dim(),
                n
            )));
        }
        barrier.alpha.validate()?;
        weight.validate()?;
        if let WeightSpec::Constant(g) = &weight {
            if g.nrows() != m {
                return Err(Error::Dimension(format!(
                    "G must be {m}x{m}, got {}x{}",
                    g.nrows(),
                    g.ncols()
                )));
            }
        }
        Ok(Self {
            system,
            controller,
            barrier,
            weight,
        })
    }

    pub fn n(&self) -> usize {
        self.system.n()
    }

    pub fn m(&self) -> usize {
        self.system.m()
    }

    /// Closed-loop nominal matrix (A -/+ B K per the controller convention).
    pub fn a_tilde(&self) -> DMatrix<f64> {
        self.controller.a_tilde(&self.system)
    }

    /// Nominal closed-loop drift f_tilde(x) = f(x) + g(x) k(x).
    pub fn eval_f_tilde(&self, x: &DVector<f64>) -> DVector<f64> {
        self.system.f(x) + self.system.g(x) * self.controller.eval(x)
    }

    /// eta(x) = grad h(x)^T f_tilde(x) + alpha(h(x)).
    pub fn eval_eta(&self, x: &DVector<f64>) -> f64 {
        let grad = self.barrier.grad(x);
        grad.dot(&self.eval_f_tilde(x)) + self.barrier.alpha.eval(self.barrier.h(x))
    }

    /// g(x)^T grad h(x).
    pub fn constraint_vector(&self, x: &DVector<f64>) -> DVector<f64> {
        self.system.g(x).transpose() * self.barrier.grad(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{Barrier, BarrierFamily};
    use nalgebra::{dmatrix, dvector};

    fn convex_bounded() -> ProblemInstance {
        let system = SystemDef::linear(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        let controller = ControllerDef::new(dmatrix![5.0, -8.0; 2.0, -3.0], Convention::NegativeGain);
        let barrier = Barrier {
            family: BarrierFamily::Sphere {
                center: dvector![0.0, 2.0],
                radius: 10f64.sqrt(),
                safe_inside: true,
            },
            alpha: ClassKInf::linear(50.0),
        };
        ProblemInstance::new(system, controller, barrier, WeightSpec::Identity).unwrap()
    }

    fn continuum() -> ProblemInstance {
        let system = SystemDef::linear(dmatrix![0.0, -1.0; 1.0, -2.0], dmatrix![0.0; 1.0]).unwrap();
        let controller = ControllerDef::zero(1, 2);
        let barrier = Barrier {
            family: BarrierFamily::PiecewiseParabolic,
            alpha: ClassKInf::linear(10.0),
        };
        ProblemInstance::new(system, controller, barrier, WeightSpec::Identity).unwrap()
    }

    #[test]
    fn f_tilde_hand_values() {
        let inst = convex_bounded();
        let v = inst.eval_f_tilde(&dvector![3.0, 3.0]);
        assert!((v - dvector![9.0, 3.0]).amax() < 1e-12);
        assert!(inst.eval_f_tilde(&DVector::zeros(2)).amax() == 0.0);
    }

    #[test]
    fn f_tilde_continuum_segment() {
        let inst = continuum();
        for sigma in [-2.0, -1.5, -1.0] {
            let v = inst.eval_f_tilde(&dvector![sigma, 0.0]);
            assert!((v - dvector![0.0, sigma]).amax() < 1e-14);
        }
    }

    #[test]
    fn eta_hand_values() {
        let inst = convex_bounded();
        assert!((inst.eval_eta(&dvector![3.0, 3.0]) - (-60.0)).abs() < 1e-9);

        let inst = continuum();
        for sigma in [-1.9, -1.5, -1.1] {
            assert!((inst.eval_eta(&dvector![sigma, 0.0]) - sigma).abs() < 1e-12);
        }
    }

    #[test]
    fn f_tilde_matches_a_tilde_everywhere() {
        use rand::prelude::*;
        let inst = convex_bounded();
        let at = inst.a_tilde();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x = dvector![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            assert!((inst.eval_f_tilde(&x) - &at * &x).amax() < 1e-13);
        }
    }

    #[test]
    fn hurwitz_flag() {
        let inst = convex_bounded();
        assert!(inst.controller.is_hurwitz(&inst.system));
        let unstable = ControllerDef::new(dmatrix![-1.0, 0.0; 0.0, -1.0], Convention::NegativeGain);
        assert!(!unstable.is_hurwitz(&inst.system));
    }

    #[test]
    fn evaluators_are_pure() {
        let inst = convex_bounded();
        let x = dvector![1.25, -0.75];
        let a = inst.eval_f_tilde(&x);
        let b = inst.eval_f_tilde(&x);
        assert_eq!(a, b);
        assert_eq!(inst.eval_eta(&x).to_bits(), inst.eval_eta(&x).to_bits());
    }

    #[test]
    fn class_k_validation() {
        assert!(ClassKInf::linear(50.0).validate().is_ok());
        assert!(ClassKInf::linear(-1.0).validate().is_err());
        let c = ClassKInf::CubicOdd { c1: 2.0, c3: 0.3 };
        assert!(c.validate().is_ok());
        assert_eq!(c.deriv_at_zero(), 2.0);
        assert_eq!(c.eval(0.0), 0.0);
    }

    #[test]
    fn rank_deficient_b_rejected() {
        let r = SystemDef::linear(DMatrix::zeros(2, 2), dmatrix![1.0, 1.0; 1.0, 1.0]);
        assert!(r.is_err());
    }
}
