//! Closed-form analysis for planar linear systems with circular (and reducible
//! ellipsoidal) obstacles: strict-CBF feasibility, analytic equilibrium
//! locations, the eigenvector / non-eigenvector case split, controller
//! synthesis, and polar-parametrizable safe sets.

use crate::barrier::{spd_sqrt, Barrier, BarrierFamily};
use crate::equilibria::{
    find_undesired_equilibria, indicator, make_record, EquilibriumRecord, Provenance,
    ScanConfig, ScanOutcome,
};
use crate::error::{Error, Result};
use crate::model::{ClassKInf, ControllerDef, ProblemInstance, SystemDef, WeightSpec};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Interior assumption for a circular obstacle: the origin must lie strictly
/// outside the obstacle disc.
pub fn check_interior_circle(xc: &DVector<f64>, r: f64) -> bool {
    xc.norm_squared() > r * r
}

/// Derived scalars of the single-input planar analysis.
#[derive(Debug, Clone, Copy)]
pub struct UnderactuatedDiagnostics {
    pub beta: f64,
    pub gamma: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

/// beta = a11 b2 - b1 a21 and gamma = a22 b1 - b2 a12: the alignment locus of an
/// underactuated planar instance is the line x parallel to (gamma, beta),
/// independently of the feedback gain.
pub fn beta_gamma(a: &DMatrix<f64>, b: &DVector<f64>) -> (f64, f64) {
    let beta = a[(0, 0)] * b[1] - b[0] * a[(1, 0)];
    let gamma = a[(1, 1)] * b[0] - b[1] * a[(0, 1)];
    (beta, gamma)
}

/// Sufficient condition for h to be a strict CBF on a circular obstacle of
/// radius r centred at xc, for the single-input system (A, b).
pub fn check_strict_cbf_circle_underactuated(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    alpha0: f64,
    xc: &DVector<f64>,
    r: f64,
) -> (bool, UnderactuatedDiagnostics) {
    let (beta, gamma) = beta_gamma(a, b);
    let bn2 = b[0] * b[0] + b[1] * b[1];
    let t1 = b[1] * beta + b[0] * gamma + 0.5 * alpha0 * bn2;
    let t3 = beta * xc[0] - gamma * xc[1];
    let t2 = t3 * t3 + 2.0 * alpha0 * r * r * t1;
    let diag = UnderactuatedDiagnostics {
        beta,
        gamma,
        t1,
        t2,
        t3,
    };
    if t1 <= 0.0 {
        return (false, diag);
    }
    let ok = r / bn2.sqrt() > (t3.abs() + t2.sqrt()) / (2.0 * t1);
    (ok, diag)
}

fn circle_params(inst: &ProblemInstance) -> Result<(DVector<f64>, f64)> {
    match &inst.barrier.family {
        BarrierFamily::Sphere {
            center,
            radius,
            safe_inside: false,
        } if center.len() == 2 => Ok((center.clone(), *radius)),
        _ => Err(Error::Config(
            "operation requires a planar circular obstacle barrier".into(),
        )),
    }
}

/// Closed-form location of the unique undesired equilibrium for a single-input
/// planar instance with a circular obstacle.
pub fn underactuated_circle_equilibrium(inst: &ProblemInstance) -> Result<EquilibriumRecord> {
    if inst.m() != 1 || inst.n() != 2 {
        return Err(Error::Config("requires n = 2, m = 1".into()));
    }
    let (xc, r) = circle_params(inst)?;
    if !check_interior_circle(&xc, r) {
        return Err(Error::InconsistentInstance(
            "obstacle disc contains the origin".into(),
        ));
    }
    let b = DVector::from_vec(vec![inst.system.b[(0, 0)], inst.system.b[(1, 0)]]);
    let alpha0 = inst.barrier.alpha.deriv_at_zero();
    let (ok, d) = check_strict_cbf_circle_underactuated(&inst.system.a, &b, alpha0, &xc, r);
    if !ok {
        return Err(Error::InconsistentInstance(
            "strict-CBF condition fails for this instance".into(),
        ));
    }
    let s = d.gamma * xc[0] + d.beta * xc[1];
    if s.abs() < 1e-12 {
        return Err(Error::InconsistentInstance(
            "gamma*xc1 + beta*xc2 vanishes; the branch selection is undefined".into(),
        ));
    }
    let gb2 = d.gamma * d.gamma + d.beta * d.beta;
    let disc = r * r * gb2 - d.t3 * d.t3;
    if disc < 0.0 {
        return Err(Error::InconsistentInstance(
            "alignment line misses the obstacle boundary".into(),
        ));
    }
    let z = if s < 0.0 {
        (s + disc.sqrt()) / gb2
    } else {
        (s - disc.sqrt()) / gb2
    };
    let x = DVector::from_vec(vec![d.gamma * z, d.beta * z]);
    let delta = indicator(inst, &x)?;
    make_record(inst, x, delta, Provenance::AnalyticFormula)
}

/// Report of a fully-actuated case analysis: which branch of the
/// characterization applied and the resulting equilibrium set.
#[derive(Debug, Clone)]
pub struct CaseReport {
    pub branch: String,
    pub records: Vec<EquilibriumRecord>,
    pub e_count: usize,
    pub e_hat_count: usize,
    pub notes: Vec<String>,
}

impl CaseReport {
    fn new(branch: &str, records: Vec<EquilibriumRecord>, notes: Vec<String>) -> Self {
        let e_count = records.len();
        let e_hat_count = records.iter().filter(|r| r.delta < 0.0).count();
        Self {
            branch: branch.to_string(),
            records,
            e_count,
            e_hat_count,
            notes,
        }
    }

    pub fn undesired(&self) -> Vec<&EquilibriumRecord> {
        self.records.iter().filter(|r| r.delta < 0.0).collect()
    }
}

/// The canonical fully-actuated instance the case analysis reasons about:
/// x_dot = A_tilde x + u, circular obstacle, G = I.
pub fn canonical_circle_instance(
    a_tilde: &DMatrix<f64>,
    xc: &DVector<f64>,
    r: f64,
    alpha0: f64,
) -> Result<ProblemInstance> {
    let n = a_tilde.nrows();
    let system = SystemDef::linear(a_tilde.clone(), DMatrix::identity(n, n))?;
    let barrier = Barrier {
        family: BarrierFamily::Sphere {
            center: xc.clone(),
            radius: r,
            safe_inside: false,
        },
        alpha: ClassKInf::linear(alpha0),
    };
    ProblemInstance::new(system, ControllerDef::zero(n, n), barrier, WeightSpec::Identity)
}

/// Sine of the angle between xc and the invariant direction A_tilde xc.
pub fn eigenvector_angle(a_tilde: &DMatrix<f64>, xc: &DVector<f64>) -> f64 {
    let w = a_tilde * xc;
    let cross = (w[0] * xc[1] - w[1] * xc[0]).abs();
    (cross / (w.norm() * xc.norm())).min(1.0).asin()
}

/// Case analysis when xc is an eigenvector of A_tilde: the equilibrium set is
/// determined by the second eigendirection and a single scalar comparison.
pub fn eigenvector_case_analysis(
    a_tilde: &DMatrix<f64>,
    xc: &DVector<f64>,
    r: f64,
    alpha0: f64,
) -> Result<CaseReport> {
    let angle = eigenvector_angle(a_tilde, xc);
    if angle >= 1e-10 {
        return Err(Error::NotAnEigenvector { angle });
    }
    if !check_interior_circle(xc, r) {
        return Err(Error::Config("requires ||xc|| > r".into()));
    }
    let inst = canonical_circle_instance(a_tilde, xc, r, alpha0)?;
    let nxc = xc.norm();
    let u = xc / nxc;
    let li = (a_tilde * xc).dot(xc) / (nxc * nxc);
    let lj = a_tilde.trace() - li;
    let mut notes = Vec::new();
    let mut records = Vec::new();

    // The two alignment points on the xc ray are always present.
    let x_minus = xc + &u * r;
    let d_minus = li / 2.0 + li * nxc / (2.0 * r);
    records.push(make_record(&inst, x_minus, d_minus, Provenance::AnalyticFormula)?);
    let x_plus = xc - &u * r;
    let d_plus = li / 2.0 - li * nxc / (2.0 * r);
    records.push(make_record(&inst, x_plus, d_plus, Provenance::AnalyticFormula)?);

    let scalar = (a_tilde - DMatrix::from_diagonal_element(2, 2, li)).amax()
        < 1e-9 * (1.0 + a_tilde.amax());
    let branch;
    if scalar {
        // A_tilde = lambda I: every direction is invariant and only the two ray
        // points solve the alignment condition.
        branch = "table1a-equal-eigenvalues".to_string();
        notes.push("scalar closed-loop matrix; only the ray equilibria exist".into());
    } else if (li - lj).abs() < 1e-9 {
        // Jordan block: extra equilibria at delta = lambda/2 when the chain
        // offset tau1 fits inside the obstacle radius.
        let v2 = DVector::from_vec(vec![-u[1], u[0]]);
        let c = u.dot(&((a_tilde - DMatrix::from_diagonal_element(2, 2, li)) * &v2));
        if c.abs() < 1e-12 {
            return Err(Error::Numerical("degenerate Jordan chain".into()));
        }
        let tau1 = li * nxc / c;
        let disc = r * r - tau1 * tau1;
        let margin = disc / (r * r);
        if margin.abs() < 1e-9 {
            branch = "table1b-row2".to_string();
            notes.push(format!(
                "borderline: merged extra equilibrium, margin {margin:.3e} (degenerate row)"
            ));
            let x = xc - &v2 * tau1;
            records.push(make_record(&inst, x, li / 2.0, Provenance::AnalyticFormula)?);
        } else if margin < 0.0 {
            branch = "table1b-row1".to_string();
        } else {
            branch = "table1b-row3".to_string();
            for s in [-1.0, 1.0] {
                let x = xc + &u * (s * disc.sqrt()) - &v2 * tau1;
                records.push(make_record(&inst, x, li / 2.0, Provenance::AnalyticFormula)?);
            }
        }
    } else {
        // Diagonalizable with distinct eigenvalues: extras at delta = lambda_j/2.
        let vj = other_eigenvector(a_tilde, lj)?;
        let dot = u.dot(&vj);
        let tau2 = li * nxc / (li - lj);
        let cond = 1.0 - (li - lj).powi(2) * r * r / (li * li * nxc * nxc);
        let margin = dot * dot - cond;
        // Roots of q^2 - 2 tau2 (vi.vj) q + tau2^2 - r^2 = 0 give the offsets
        // along vj; the discriminant sign reproduces the row condition.
        let disc = tau2 * tau2 * dot * dot - tau2 * tau2 + r * r;
        if margin.abs() < 1e-9 {
            branch = "table1a-row2".to_string();
            notes.push(format!(
                "borderline: merged extra equilibrium, margin {margin:.3e} (degenerate row)"
            ));
            let q = tau2 * dot;
            let x = xc - &u * tau2 + &vj * q;
            records.push(make_record(&inst, x, lj / 2.0, Provenance::AnalyticFormula)?);
        } else if margin < 0.0 {
            branch = "table1a-row1".to_string();
        } else {
            branch = "table1a-row3".to_string();
            for s in [-1.0, 1.0] {
                let q = tau2 * dot + s * disc.sqrt();
                let x = xc - &u * tau2 + &vj * q;
                records.push(make_record(&inst, x, lj / 2.0, Provenance::AnalyticFormula)?);
            }
        }
    }
    Ok(CaseReport::new(&branch, records, notes))
}

fn other_eigenvector(a_tilde: &DMatrix<f64>, lambda: f64) -> Result<DVector<f64>> {
    let m = a_tilde - DMatrix::from_diagonal_element(2, 2, lambda);
    let c1 = DVector::from_vec(vec![m[(0, 1)], -m[(0, 0)]]);
    let c2 = DVector::from_vec(vec![m[(1, 1)], -m[(1, 0)]]);
    let v = if c1.norm() >= c2.norm() { c1 } else { c2 };
    if v.norm() < 1e-12 * (1.0 + a_tilde.amax()) {
        return Err(Error::Numerical("could not extract second eigenvector".into()));
    }
    Ok(v.normalize())
}

/// Complex polynomial arithmetic on dense coefficient vectors (ascending order).
fn poly_mul(p: &[Complex64], q: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); p.len() + q.len() - 1];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

fn poly_add(p: &mut Vec<Complex64>, q: &[Complex64], scale: Complex64) {
    if p.len() < q.len() {
        p.resize(q.len(), Complex64::new(0.0, 0.0));
    }
    for (i, b) in q.iter().enumerate() {
        p[i] += scale * b;
    }
}

/// All real roots of a real-coefficient polynomial, via the companion matrix.
pub fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let mut c = coeffs.to_vec();
    while let Some(last) = c.last() {
        if last.abs() < 1e-12 * c.iter().map(|v| v.abs()).fold(0.0, f64::max) && c.len() > 1 {
            c.pop();
        } else {
            break;
        }
    }
    let deg = c.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    let lead = c[deg];
    let mut comp = DMatrix::zeros(deg, deg);
    for i in 0..deg {
        comp[(i, deg - 1)] = -c[i] / lead;
        if i > 0 {
            comp[(i, i - 1)] = 1.0;
        }
    }
    let eigs = comp.complex_eigenvalues();
    let mut out = Vec::new();
    for l in eigs.iter() {
        if l.im.abs() < 1e-8 * (1.0 + l.re.abs()) {
            out.push(l.re);
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out.dedup_by(|a, b| (*a - *b).abs() < 1e-10);
    out
}

/// Characterization when xc is not an eigenvector: the indicator values of all
/// equilibria are the real roots of a quartic.
pub fn general_case_roots(a_tilde: &DMatrix<f64>, xc: &DVector<f64>, r: f64) -> Result<CaseReport> {
    let angle = eigenvector_angle(a_tilde, xc);
    if angle < 1e-10 {
        return Err(Error::Config(
            "xc is an eigenvector; use eigenvector_case_analysis".into(),
        ));
    }
    if !check_interior_circle(xc, r) {
        return Err(Error::Config("requires ||xc|| > r".into()));
    }
    let alpha0 = 10.0;
    let inst = canonical_circle_instance(a_tilde, xc, r, alpha0)?;

    let tr = a_tilde.trace();
    let det = a_tilde[(0, 0)] * a_tilde[(1, 1)] - a_tilde[(0, 1)] * a_tilde[(1, 0)];
    let disc = tr * tr - 4.0 * det;
    let mut notes = Vec::new();

    let non_diagonalizable = disc.abs() < 1e-9 * (1.0 + tr * tr)
        && (a_tilde - DMatrix::from_diagonal_element(2, 2, tr / 2.0)).amax()
            > 1e-9 * (1.0 + a_tilde.amax());

    let (branch, deltas): (String, Vec<f64>) = if non_diagonalizable {
        let lambda = tr / 2.0;
        let v1 = other_eigenvector(a_tilde, lambda)?;
        let v2 = DVector::from_vec(vec![-v1[1], v1[0]]);
        let c = v1.dot(&((a_tilde - DMatrix::from_diagonal_element(2, 2, lambda)) * &v2));
        let b1 = v1.dot(xc);
        let b2 = v2.dot(xc);
        // F2(d) = (-l b1 (l-2d) + 2 d c b2)^2 + (l b2)^2 (l-2d)^2 - r^2 (l-2d)^4,
        // a real quartic in d.
        let lin = [lambda, -2.0]; // l - 2d
        let t1 = [-lambda * b1 * lambda, 2.0 * lambda * b1 + 2.0 * c * b2]; // -l b1 (l-2d) + 2 d c b2
        let sq = |p: &[f64; 2]| -> Vec<f64> {
            vec![p[0] * p[0], 2.0 * p[0] * p[1], p[1] * p[1]]
        };
        let lin2 = sq(&lin);
        let lin4 = {
            let mut v = vec![0.0; 5];
            for (i, a) in lin2.iter().enumerate() {
                for (j, b) in lin2.iter().enumerate() {
                    v[i + j] += a * b;
                }
            }
            v
        };
        let mut f2 = sq(&t1);
        f2.resize(5, 0.0);
        for (i, b) in lin2.iter().enumerate() {
            f2[i] += lambda * lambda * b2 * b2 * b;
        }
        for (i, b) in lin4.iter().enumerate() {
            f2[i] -= r * r * b;
        }
        let roots = real_roots(&f2)
            .into_iter()
            .filter(|d| (lambda - 2.0 * d).abs() > 1e-10 * (1.0 + lambda.abs()))
            .collect();
        ("F2-roots".to_string(), roots)
    } else {
        // Complex eigen-decomposition; a conjugate pair is handled uniformly.
        let eigs = a_tilde.clone().complex_eigenvalues();
        let (l1, l2) = (eigs[0], eigs[1]);
        let cvec = |l: Complex64| -> nalgebra::Vector2<Complex64> {
            let a = a_tilde;
            let c1 = nalgebra::Vector2::new(Complex64::new(a[(0, 1)], 0.0), l - a[(0, 0)]);
            let c2 = nalgebra::Vector2::new(l - a[(1, 1)], Complex64::new(a[(1, 0)], 0.0));
            let v = if c1.norm() >= c2.norm() { c1 } else { c2 };
            v / Complex64::new(v.norm(), 0.0)
        };
        let v1 = cvec(l1);
        let v2 = cvec(l2);
        let detv = v1[0] * v2[1] - v1[1] * v2[0];
        if detv.norm() < 1e-10 {
            // Ill-conditioned eigenbasis: fall back to the boundary scanner.
            notes.push("ill-conditioned eigenbasis; fell back to boundary scan".into());
            let out = find_undesired_equilibria(&inst, &ScanConfig::default())?;
            let records = match out {
                ScanOutcome::Isolated(r) => r,
                ScanOutcome::Continuum(_) => {
                    return Err(Error::Numerical("unexpected continuum in case analysis".into()))
                }
            };
            return Ok(CaseReport::new("scan-fallback", records, notes));
        }
        // beta coefficients of xc in the eigenbasis.
        let rhs = nalgebra::Vector2::new(Complex64::new(xc[0], 0.0), Complex64::new(xc[1], 0.0));
        let bet1 = (rhs[0] * v2[1] - rhs[1] * v2[0]) / detv;
        let bet2 = (v1[0] * rhs[1] - v1[1] * rhs[0]) / detv;
        let v12 = v1[0].conj() * v2[0] + v1[1].conj() * v2[1];

        // F1 assembled as a complex polynomial in the real variable d, then
        // symmetrized to real coefficients.
        let one = Complex64::new(1.0, 0.0);
        let p1 = [l1, Complex64::new(-2.0, 0.0)]; // l1 - 2d
        let p2 = [l2, Complex64::new(-2.0, 0.0)];
        let p1c = [l1.conj(), Complex64::new(-2.0, 0.0)];
        let p2c = [l2.conj(), Complex64::new(-2.0, 0.0)];
        let m11 = poly_mul(&p1, &p1c); // |l1 - 2d|^2
        let m22 = poly_mul(&p2, &p2c);
        let mut f1: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); 5];
        poly_add(
            &mut f1,
            &poly_mul(&m11, &m22),
            Complex64::new(-r * r, 0.0),
        );
        poly_add(&mut f1, &m22, (l1 * bet1).norm_sqr() * one);
        poly_add(&mut f1, &m11, (l2 * bet2).norm_sqr() * one);
        let cross = poly_mul(&p2c, &p1);
        let coeff = (l1 * bet1).conj() * (l2 * bet2) * v12;
        // cross term plus its conjugate: add 2 Re(coeff * cross) coefficientwise.
        for (i, c) in cross.iter().enumerate() {
            f1[i] += coeff * c + (coeff * c).conj();
        }
        let scale = f1.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let imag = f1.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
        if imag > 1e-10 * (1.0 + scale) {
            return Err(Error::Numerical(format!(
                "F1 symmetrization residue {imag:.3e} exceeds tolerance"
            )));
        }
        let f1r: Vec<f64> = f1.iter().map(|c| c.re).collect();
        let roots = real_roots(&f1r)
            .into_iter()
            .filter(|d| {
                (l1 - Complex64::new(2.0 * d, 0.0)).norm() > 1e-10 * (1.0 + l1.norm())
                    && (l2 - Complex64::new(2.0 * d, 0.0)).norm() > 1e-10 * (1.0 + l2.norm())
            })
            .collect();
        ("F1-roots".to_string(), roots)
    };

    // Map each root delta to its boundary point and classify.
    let mut records = Vec::new();
    for d in &deltas {
        let x = map_delta_to_point(a_tilde, xc, *d)?;
        if (inst.barrier.h(&x)).abs() > 1e-6 * (1.0 + r * r) {
            continue;
        }
        records.push(make_record(&inst, x, *d, Provenance::AnalyticFormula)?);
    }
    // Structural sanity of the characterization.
    let e_hat = records.iter().filter(|r| r.delta < 0.0).count();
    if !(1..=3).contains(&e_hat) {
        notes.push(format!("structural violation: |E_hat| = {e_hat}"));
    }
    if !records.iter().any(|r| r.delta > 0.0) {
        notes.push("structural violation: no potential-only root".into());
    }
    Ok(CaseReport::new(&branch, records, notes))
}

/// Solves the alignment identity A_tilde x = 2 delta (x - xc) for x.
fn map_delta_to_point(
    a_tilde: &DMatrix<f64>,
    xc: &DVector<f64>,
    delta: f64,
) -> Result<DVector<f64>> {
    let m = a_tilde - DMatrix::from_diagonal_element(2, 2, 2.0 * delta);
    let rhs = -2.0 * delta * xc;
    m.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular alignment system at root".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthesisMode {
    StableTrap,
    SaddleOnly,
}

fn rot(theta: f64) -> DMatrix<f64> {
    nalgebra::dmatrix![theta.cos(), -theta.sin(); theta.sin(), theta.cos()]
}

/// Places the closed-loop spectrum at {l1, l2} with eigenvectors chosen so the
/// obstacle at xc traps trajectories (stable-trap) or only produces a saddle
/// (saddle-only). Returns K for the convention u = -K x.
pub fn synthesize_controller(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    xc: &DVector<f64>,
    r: f64,
    l1: f64,
    l2: f64,
    mode: SynthesisMode,
) -> Result<DMatrix<f64>> {
    if l1 >= 0.0 || l2 >= 0.0 {
        return Err(Error::Config("requested eigenvalues must be negative".into()));
    }
    if !check_interior_circle(xc, r) {
        return Err(Error::Config("requires ||xc|| > r".into()));
    }
    let binv = b
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Config("B must be invertible for synthesis".into()))?;
    let nxc = xc.norm();
    let u = xc / nxc;
    let closed = match mode {
        SynthesisMode::StableTrap => {
            if (l1 - l2).abs() < 1e-12 {
                let q1 = (1.0 - r * r / (2.0 * l1 * l1 * nxc * nxc)).max(0.0);
                let theta = q1.sqrt().acos();
                let v2 = rot(theta) * &u;
                let v = DMatrix::from_columns(&[u.clone(), v2]);
                let lam = nalgebra::dmatrix![l1, 1.0; 0.0, l1];
                let vinv = v
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| Error::Numerical("singular eigenvector matrix".into()))?;
                v * lam * vinv
            } else {
                let q2 =
                    (1.0 - (l1 - l2).powi(2) * r * r / (2.0 * l1 * l1 * nxc * nxc)).max(0.0);
                let theta = q2.sqrt().acos();
                let v2 = rot(theta) * &u;
                let v = DMatrix::from_columns(&[u.clone(), v2]);
                let lam = nalgebra::dmatrix![l1, 0.0; 0.0, l2];
                let vinv = v
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| Error::Numerical("singular eigenvector matrix".into()))?;
                v * lam * vinv
            }
        }
        SynthesisMode::SaddleOnly => {
            // Assign the more negative eigenvalue to the xc direction and take
            // an orthogonal second eigenvector.
            let (li, lj) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            let v2 = DVector::from_vec(vec![-u[1], u[0]]);
            let v = DMatrix::from_columns(&[u.clone(), v2]);
            let lam = nalgebra::dmatrix![li, 0.0; 0.0, lj];
            // V is orthogonal here.
            &v * lam * v.transpose()
        }
    };
    let k = &binv * (a - &closed);
    // Verify the placement.
    let got = a - b * &k;
    let mut want = [Complex64::new(l1, 0.0), Complex64::new(l2, 0.0)];
    let mut have: Vec<Complex64> = got.complex_eigenvalues().iter().copied().collect();
    want.sort_by(|p, q| p.re.partial_cmp(&q.re).unwrap());
    have.sort_by(|p, q| p.re.partial_cmp(&q.re).unwrap());
    for (w, h) in want.iter().zip(have.iter()) {
        if (w - h).norm() > 1e-8 * (1.0 + w.norm()) {
            return Err(Error::Numerical("spectrum placement failed".into()));
        }
    }
    Ok(k)
}

/// Transforms an ellipsoidal-obstacle instance into an equivalent circular one.
/// Returns the circle instance and the SPD factor E (x_hat = E x).
pub fn ellipsoid_reduce(inst: &ProblemInstance) -> Result<(ProblemInstance, DMatrix<f64>)> {
    let (p, center) = match &inst.barrier.family {
        BarrierFamily::QuadraticForm { p, center } => (p.clone(), center.clone()),
        _ => {
            return Err(Error::Config(
                "ellipsoid_reduce requires a quadratic-form barrier".into(),
            ))
        }
    };
    let e = spd_sqrt(&p)?;
    let einv = e
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular ellipsoid factor".into()))?;
    let a_hat = &e * &inst.system.a * &einv;
    let b_hat = &e * &inst.system.b;
    let system = SystemDef::linear(a_hat, b_hat)?;
    let controller = ControllerDef {
        k: &inst.controller.k * &einv,
        convention: inst.controller.convention,
    };
    let barrier = Barrier {
        family: BarrierFamily::Sphere {
            center: &e * center,
            radius: 1.0,
            safe_inside: false,
        },
        alpha: inst.barrier.alpha,
    };
    let reduced = ProblemInstance::new(system, controller, barrier, inst.weight.clone())?;
    Ok((reduced, e))
}

/// One alignment candidate on a polar-parametrized boundary.
#[derive(Debug, Clone)]
pub struct PolarCandidate {
    pub theta: f64,
    pub x: DVector<f64>,
    pub delta: f64,
    pub eta: f64,
    pub other_eigenvalue: f64,
}

#[derive(Debug, Clone)]
pub struct PolarVerdict {
    pub no_undesired: bool,
    pub candidates: Vec<PolarCandidate>,
    pub notes: Vec<String>,
}

/// Checks that an underactuated instance with a star-shaped polar safe set has
/// no undesired equilibria, evaluating the two alignment candidates analytically
/// and cross-checking with the boundary scanner.
pub fn polar_safe_set_check(inst: &ProblemInstance) -> Result<PolarVerdict> {
    let curve = match &inst.barrier.family {
        BarrierFamily::PolarRadius(c) => *c,
        _ => return Err(Error::Config("requires a polar-radius barrier".into())),
    };
    if inst.m() != 1 || inst.n() != 2 {
        return Err(Error::Config("requires n = 2, m = 1".into()));
    }
    if !inst.barrier.origin_interior() {
        return Err(Error::Config("origin must be interior to the safe set".into()));
    }
    let b = DVector::from_vec(vec![inst.system.b[(0, 0)], inst.system.b[(1, 0)]]);
    let (beta, gamma) = beta_gamma(&inst.system.a, &b);
    let theta0 = beta.atan2(gamma);
    let mut candidates = Vec::new();
    for theta in [theta0, theta0 + std::f64::consts::PI] {
        let rr = curve.r(theta);
        let drr = curve.dr(theta);
        let x = DVector::from_vec(vec![rr * theta.cos(), rr * theta.sin()]);
        let delta = indicator(inst, &x)?;
        let eta = inst.eval_eta(&x);
        let other = if gamma.abs() > 1e-12 {
            rr * (beta * beta + gamma * gamma)
                / (rr * (b[0] * gamma + b[1] * beta) - drr * (-b[0] * beta + b[1] * gamma))
        } else {
            beta * rr / (drr * b[0] + rr * b[1])
        };
        candidates.push(PolarCandidate {
            theta,
            x,
            delta,
            eta,
            other_eigenvalue: other,
        });
    }
    let mut notes = Vec::new();
    let signs: Vec<f64> = candidates.iter().map(|c| c.other_eigenvalue.signum()).collect();
    if signs[0] == signs[1] {
        notes.push(
            "both candidates share the stability sign, contradicting the parity count: \
             neither is an equilibrium"
                .into(),
        );
    }
    // Ground truth: the boundary scanner must find an empty undesired set.
    let out = find_undesired_equilibria(inst, &ScanConfig::default())?;
    let empty = out.undesired().is_empty();
    if !empty {
        return Err(Error::Numerical(
            "boundary scan found an undesired equilibrium on a polar safe set".into(),
        ));
    }
    Ok(PolarVerdict {
        no_undesired: empty,
        candidates,
        notes,
    })
}

/// Strictness probe for underactuated instances: wherever B^T grad h vanishes on
/// the boundary, the drift must push strictly into the safe set.
pub fn underactuated_strict_on_boundary(inst: &ProblemInstance) -> Result<bool> {
    let curves = inst.barrier.boundary_curves()?;
    let b = inst.system.g(&DVector::zeros(inst.n()));
    let s = |x: &DVector<f64>| (b.transpose() * inst.barrier.grad(x))[0];
    for curve in &curves {
        let n = 2000;
        let mut prev: Option<(f64, f64)> = None;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            let x = curve.point(t);
            let v = s(&x);
            if let Some((tp, vp)) = prev {
                if vp * v <= 0.0 {
                    // Bisect the root of s and test the drift there.
                    let (mut a_, mut b_) = (tp, t.max(tp + 1e-12));
                    for _ in 0..80 {
                        let mid = 0.5 * (a_ + b_);
                        if s(&curve.point(a_)) * s(&curve.point(mid)) <= 0.0 {
                            b_ = mid;
                        } else {
                            a_ = mid;
                        }
                    }
                    let xr = curve.point(0.5 * (a_ + b_));
                    let push = inst.barrier.grad(&xr).dot(&inst.eval_f_tilde(&xr));
                    if push <= 1e-9 {
                        return Ok(false);
                    }
                }
            }
            prev = Some((t, v));
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::Classification;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn interior_circle() {
        assert!(check_interior_circle(&dvector![2.0, 0.0], 1.0));
        assert!(!check_interior_circle(&dvector![1.0, 0.0], 1.0));
        assert!(check_interior_circle(&dvector![0.0, 2.0], 1.999));
    }

    #[test]
    fn eigenvector_case_row1() {
        let at = dmatrix![-1.0, 0.0; 0.0, -2.0];
        let report = eigenvector_case_analysis(&at, &dvector![2.0, 0.0], 1.0, 10.0).unwrap();
        assert_eq!(report.branch, "table1a-row1");
        let undesired = report.undesired();
        assert_eq!(undesired.len(), 1);
        assert!((&undesired[0].x - dvector![3.0, 0.0]).amax() < 1e-10);
        assert!((undesired[0].delta - (-1.5)).abs() < 1e-12);
        assert_eq!(undesired[0].classification, Classification::Saddle);
        let potential = report
            .records
            .iter()
            .find(|r| r.delta > 0.0)
            .expect("potential-only record");
        assert!((&potential.x - dvector![1.0, 0.0]).amax() < 1e-10);
    }

    #[test]
    fn eigenvector_case_rejects_non_eigenvector() {
        let at = dmatrix![-1.0, 0.5; 0.0, -2.0];
        let r = eigenvector_case_analysis(&at, &dvector![2.0, 1.0], 0.5, 10.0);
        assert!(matches!(r, Err(Error::NotAnEigenvector { .. })));
    }

    #[test]
    fn synthesized_saddle_only_gives_row1() {
        let a = dmatrix![0.3, -1.0; 0.7, 0.2];
        let b = dmatrix![1.0, 0.2; -0.1, 0.9];
        let xc = dvector![2.0, 1.0];
        let k = synthesize_controller(&a, &b, &xc, 0.8, -2.0, -1.0, SynthesisMode::SaddleOnly)
            .unwrap();
        let at = &a - &b * &k;
        let report = eigenvector_case_analysis(&at, &xc, 0.8, 10.0).unwrap();
        assert_eq!(report.branch, "table1a-row1");
        assert_eq!(report.e_hat_count, 1);
        assert_eq!(report.undesired()[0].classification, Classification::Saddle);
    }

    #[test]
    fn synthesized_stable_trap_distinct_eigenvalues() {
        let a = dmatrix![0.0, 1.0; -1.0, 0.4];
        let b = dmatrix![1.0, 0.0; 0.3, 1.0];
        let xc = dvector![1.5, -0.5];
        let k = synthesize_controller(&a, &b, &xc, 0.6, -1.0, -3.0, SynthesisMode::StableTrap)
            .unwrap();
        let at = &a - &b * &k;
        let report = eigenvector_case_analysis(&at, &xc, 0.6, 10.0).unwrap();
        assert_eq!(report.branch, "table1a-row3");
        assert_eq!(report.e_hat_count, 3);
        let stable = report
            .undesired()
            .iter()
            .filter(|r| r.classification == Classification::AsymptoticallyStable)
            .count();
        let saddles = report
            .undesired()
            .iter()
            .filter(|r| r.classification == Classification::Saddle)
            .count();
        assert_eq!(stable, 1);
        assert_eq!(saddles, 2);
    }

    #[test]
    fn synthesized_stable_trap_jordan() {
        let a = dmatrix![0.1, 0.0; 0.2, -0.1];
        let b = nalgebra::DMatrix::identity(2, 2);
        let xc = dvector![2.0, 0.5];
        let k = synthesize_controller(&a, &b, &xc, 0.7, -1.5, -1.5, SynthesisMode::StableTrap)
            .unwrap();
        let at = &a - &b * &k;
        let report = eigenvector_case_analysis(&at, &xc, 0.7, 10.0).unwrap();
        assert_eq!(report.branch, "table1b-row3");
        assert_eq!(report.e_hat_count, 3);
        assert_eq!(
            report
                .undesired()
                .iter()
                .filter(|r| r.classification == Classification::AsymptoticallyStable)
                .count(),
            1
        );
    }

    #[test]
    fn general_case_matches_scanner() {
        let at = dmatrix![-1.2, 0.4; -0.3, -2.1];
        let xc = dvector![2.0, 1.2];
        let r = 0.7;
        let report = general_case_roots(&at, &xc, r).unwrap();
        assert!(report.e_hat_count >= 1 && report.e_hat_count <= 3);
        assert!(report.records.iter().any(|rec| rec.delta > 0.0));
        let inst = canonical_circle_instance(&at, &xc, r, 10.0).unwrap();
        let scan = find_undesired_equilibria(&inst, &ScanConfig::default()).unwrap();
        let scanned = scan.undesired();
        let analytic = report.undesired();
        assert_eq!(analytic.len(), scanned.len());
        for a_rec in &analytic {
            let nearest = scanned
                .iter()
                .map(|s| (&s.x - &a_rec.x).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 1e-6, "analytic root not found by scanner");
        }
    }

    #[test]
    fn f1_at_zero_is_positive() {
        // F1(0) = (||xc||^2 - r^2) |l1 l2|^2 > 0; check indirectly: delta = 0 is
        // never a root for valid instances.
        for (at, xc, r) in [
            (dmatrix![-1.2, 0.4; -0.3, -2.1], dvector![2.0, 1.2], 0.7),
            (dmatrix![-0.5, 1.5; -1.5, -0.5], dvector![1.0, 2.0], 0.9),
        ] {
            let report = general_case_roots(&at, &xc, r).unwrap();
            for rec in &report.records {
                assert!(rec.delta.abs() > 1e-8);
            }
        }
    }

    #[test]
    fn complex_pair_general_case() {
        let at = dmatrix![-0.5, 2.0; -2.0, -0.5];
        let xc = dvector![2.5, 0.0];
        let report = general_case_roots(&at, &xc, 1.0).unwrap();
        assert_eq!(report.branch, "F1-roots");
        assert!(report.e_hat_count >= 1 && report.e_hat_count <= 3);
        for n in &report.notes {
            assert!(!n.contains("violation"), "{n}");
        }
    }

    #[test]
    fn ellipsoid_reduce_identity() {
        let system = SystemDef::linear(dmatrix![-1.0, 0.0; 0.0, -2.0], DMatrix::identity(2, 2))
            .unwrap();
        let barrier = Barrier {
            family: BarrierFamily::QuadraticForm {
                p: DMatrix::identity(2, 2),
                center: dvector![2.0, 0.0],
            },
            alpha: ClassKInf::linear(10.0),
        };
        let inst = ProblemInstance::new(
            system,
            ControllerDef::zero(2, 2),
            barrier,
            WeightSpec::Identity,
        )
        .unwrap();
        let (red, e) = ellipsoid_reduce(&inst).unwrap();
        assert!((e.clone() - DMatrix::identity(2, 2)).amax() < 1e-12);
        assert!((red.system.a.clone() - inst.system.a.clone()).amax() < 1e-12);
    }

    #[test]
    fn ellipsoid_equilibria_map_back() {
        let system = SystemDef::linear(dmatrix![-1.0, 0.3; -0.2, -2.0], DMatrix::identity(2, 2))
            .unwrap();
        let barrier = Barrier {
            family: BarrierFamily::QuadraticForm {
                p: dmatrix![0.25, 0.05; 0.05, 1.0],
                center: dvector![3.0, 0.5],
            },
            alpha: ClassKInf::linear(10.0),
        };
        let inst = ProblemInstance::new(
            system,
            ControllerDef::zero(2, 2),
            barrier,
            WeightSpec::Identity,
        )
        .unwrap();
        let (red, e) = ellipsoid_reduce(&inst).unwrap();
        let einv = e.clone().try_inverse().unwrap();
        let direct = find_undesired_equilibria(&inst, &ScanConfig::default()).unwrap();
        let reduced = find_undesired_equilibria(&red, &ScanConfig::default()).unwrap();
        let d = direct.undesired();
        let m = reduced.undesired();
        assert_eq!(d.len(), m.len());
        assert!(!d.is_empty());
        for rd in &d {
            let best = m
                .iter()
                .map(|rm| (&einv * &rm.x - &rd.x).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-8, "mapped equilibrium off by {best:.3e}");
        }
        // Jacobians at corresponding points are similar: equal eigenvalues.
        for rd in &d {
            let rm = m
                .iter()
                .min_by(|p, q| {
                    (&einv * &p.x - &rd.x)
                        .norm()
                        .partial_cmp(&(&einv * &q.x - &rd.x).norm())
                        .unwrap()
                })
                .unwrap();
            let mut ed: Vec<(f64, f64)> = rd
                .eigenvalues
                .as_ref()
                .unwrap()
                .iter()
                .map(|l| (l.re, l.im))
                .collect();
            let mut em: Vec<(f64, f64)> = rm
                .eigenvalues
                .as_ref()
                .unwrap()
                .iter()
                .map(|l| (l.re, l.im))
                .collect();
            ed.sort_by(|a, b| a.partial_cmp(b).unwrap());
            em.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (a, b) in ed.iter().zip(em.iter()) {
                assert!((a.0 - b.0).abs() < 1e-6 && (a.1 - b.1).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn underactuated_circle_hand_instance() {
        // Double integrator-like single-input system with an obstacle off axis.
        let a = dmatrix![0.0, 1.0; -1.0, -1.0];
        let b = dmatrix![0.0; 1.0];
        let system = SystemDef::linear(a.clone(), b.clone()).unwrap();
        let controller = ControllerDef::new(dmatrix![1.0, 1.0], crate::model::Convention::NegativeGain);
        let bv = dvector![0.0, 1.0];
        let (beta, gamma) = beta_gamma(&a, &bv);
        // beta = a11 b2 - b1 a21 = 0, gamma = a22 b1 - b2 a12 = -1.
        assert_eq!(beta, 0.0);
        assert_eq!(gamma, -1.0);
        // Alignment line is the x1 axis; obstacle centred on it.
        let barrier = Barrier {
            family: BarrierFamily::Sphere {
                center: dvector![3.0, 0.0],
                radius: 1.0,
                safe_inside: false,
            },
            alpha: ClassKInf::linear(10.0),
        };
        let inst = ProblemInstance::new(system, controller, barrier, WeightSpec::Identity).unwrap();
        let (ok, _) = check_strict_cbf_circle_underactuated(&a, &bv, 10.0, &dvector![3.0, 0.0], 1.0);
        if !ok {
            // The sufficient condition may fail even when the equilibrium exists;
            // this instance is only used for the formula cross-check below.
        }
        let rec = underactuated_circle_equilibrium(&inst);
        if let Ok(rec) = rec {
            let scan = find_undesired_equilibria(&inst, &ScanConfig::default()).unwrap();
            let best = scan
                .undesired()
                .iter()
                .map(|s| (&s.x - &rec.x).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-6);
        }
    }
}
