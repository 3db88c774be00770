//! Location and classification of undesired equilibria on the safe-set boundary.
//!
//! An undesired equilibrium is a boundary point where the nominal drift is
//! exactly opposed by the filter correction: h(x*) = 0 and
//! f_tilde(x*) = delta g G^-1 g^T grad h(x*) with indicator delta < 0.

use crate::barrier::BarrierFamily;
use crate::error::{Error, Result};
use crate::filter::closed_loop_field;
use crate::model::ProblemInstance;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Saddle,
    AsymptoticallyStable,
    Degenerate,
    PotentialOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    BoundaryScan,
    AnalyticFormula,
    UserSupplied,
}

/// One located boundary equilibrium (or potential equilibrium with delta > 0).
#[derive(Debug, Clone)]
pub struct EquilibriumRecord {
    pub x: DVector<f64>,
    pub delta: f64,
    /// Max-norm of the filtered closed-loop field at x (delta < 0 records), or of
    /// the alignment defect f_tilde - delta g G^-1 g^T grad h (potential-only).
    pub residual: f64,
    pub jacobian: Option<DMatrix<f64>>,
    pub eigenvalues: Option<Vec<Complex64>>,
    pub classification: Classification,
    pub provenance: Provenance,
}

/// Scanner configuration: grid density per boundary component and the root
/// refinement tolerance.
#[derive(Debug, Clone, Copy)]
pub struct ScanConfig {
    pub grid: usize,
    pub newton_tol: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            grid: 2000,
            newton_tol: 1e-10,
        }
    }
}

/// Diagnosis emitted when a boundary component carries a continuum of equilibria
/// instead of isolated roots.
#[derive(Debug, Clone)]
pub struct ContinuumDiagnosis {
    pub component: usize,
    pub root_count: usize,
    pub span: (DVector<f64>, DVector<f64>),
    pub sample_deltas: Vec<f64>,
    pub note: String,
}

#[derive(Debug, Clone)]
pub enum ScanOutcome {
    Isolated(Vec<EquilibriumRecord>),
    Continuum(ContinuumDiagnosis),
}

impl ScanOutcome {
    pub fn records(&self) -> &[EquilibriumRecord] {
        match self {
            ScanOutcome::Isolated(r) => r,
            ScanOutcome::Continuum(_) => &[],
        }
    }

    /// Records with delta < 0 (the set E-hat of genuine closed-loop equilibria).
    pub fn undesired(&self) -> Vec<&EquilibriumRecord> {
        self.records().iter().filter(|r| r.delta < 0.0).collect()
    }
}

/// The indicator delta(x) = grad h^T f_tilde / ||g^T grad h||^2 in the G^-1 metric.
pub fn indicator(inst: &ProblemInstance, x: &DVector<f64>) -> Result<f64> {
    if inst.barrier.h(x).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "indicator requires a boundary point, h = {:.3e}",
            inst.barrier.h(x)
        )));
    }
    let w = inst.constraint_vector(x);
    let denom = inst.weight.norm2_inv(&w)?;
    if denom.sqrt() < crate::filter::DEGENERACY_TOL {
        return Err(Error::DegenerateConstraint {
            state: x.as_slice().to_vec(),
            norm: denom.sqrt(),
        });
    }
    Ok(inst.barrier.grad(x).dot(&inst.eval_f_tilde(x)) / denom)
}

/// g G^-1 g^T grad h: the direction the filter pushes along.
fn filter_direction(inst: &ProblemInstance, x: &DVector<f64>) -> Result<DVector<f64>> {
    let w = inst.constraint_vector(x);
    Ok(inst.system.g(x) * inst.weight.apply_inv(&w)?)
}

fn cross2(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Alignment defect f_tilde - delta * filter_direction; zero exactly at solutions
/// of the equilibrium condition (for either sign of delta).
fn alignment_defect(inst: &ProblemInstance, x: &DVector<f64>) -> Result<DVector<f64>> {
    let f = inst.eval_f_tilde(x);
    let d = filter_direction(inst, x)?;
    let n2 = inst.weight.norm2_inv(&inst.constraint_vector(x))?;
    let delta = f.dot(&inst.barrier.grad(x)) / n2;
    Ok(f - d * delta)
}

/// Scans every boundary component for solutions of the equilibrium condition.
pub fn find_undesired_equilibria(inst: &ProblemInstance, cfg: &ScanConfig) -> Result<ScanOutcome> {
    let n = inst.n();
    match (n, &inst.barrier.family) {
        (2, _) => scan_planar(inst, cfg),
        (3, BarrierFamily::Sphere { .. }) => scan_sphere_3d(inst, cfg),
        _ => Err(Error::UnsupportedDimension(n)),
    }
}

fn scan_planar(inst: &ProblemInstance, cfg: &ScanConfig) -> Result<ScanOutcome> {
    let curves = inst.barrier.boundary_curves()?;
    let mut roots: Vec<DVector<f64>> = Vec::new();

    for (ci, curve) in curves.iter().enumerate() {
        let n_grid = cfg.grid;
        let rho_hat = |t: f64| -> Result<f64> {
            let x = curve.point(t);
            let f = inst.eval_f_tilde(&x);
            let d = filter_direction(inst, &x)?;
            let scale = f.norm() * d.norm();
            if scale < 1e-300 {
                return Ok(0.0);
            }
            Ok(cross2(&f, &d) / scale)
        };

        let upper = if curve.closed() { n_grid } else { n_grid + 1 };
        let mut vals = Vec::with_capacity(upper);
        for k in 0..upper {
            let t = k as f64 / n_grid as f64;
            vals.push((t, rho_hat(t)?));
        }

        let mut component_roots: Vec<f64> = Vec::new();
        for k in 0..upper {
            let (t0, v0) = vals[k];
            if v0.abs() < 1e-12 {
                component_roots.push(t0);
                continue;
            }
            let (t1, v1) = if k + 1 < upper {
                vals[k + 1]
            } else if curve.closed() {
                (1.0, vals[0].1)
            } else {
                continue;
            };
            if v1.abs() < 1e-12 {
                continue; // counted at its own grid node
            }
            if v0 * v1 < 0.0 {
                // Bisection is safeguarded and cheap at this resolution.
                let (mut a, mut b, mut fa) = (t0, t1, v0);
                for _ in 0..100 {
                    let mid = 0.5 * (a + b);
                    let fm = rho_hat(mid)?;
                    if fa * fm <= 0.0 {
                        b = mid;
                    } else {
                        a = mid;
                        fa = fm;
                    }
                    if b - a < 1e-15 {
                        break;
                    }
                }
                component_roots.push(0.5 * (a + b));
            }
        }

        // Continuum detection: many roots packed at grid resolution.
        let spacing = 1.0 / n_grid as f64;
        if component_roots.len() > 25 {
            let mut sorted = component_roots.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let packed = sorted.windows(2).all(|w| w[1] - w[0] < 2.0 * spacing);
            if packed {
                let lo = curve.point(sorted[0]);
                let hi = curve.point(*sorted.last().unwrap());
                let mut sample_deltas = Vec::new();
                for q in [0.1, 0.3, 0.5, 0.7, 0.9] {
                    let t = sorted[0] + q * (sorted.last().unwrap() - sorted[0]);
                    let x = curve.point(t);
                    if let Ok(d) = indicator(inst, &x) {
                        sample_deltas.push(d);
                    }
                }
                return Ok(ScanOutcome::Continuum(ContinuumDiagnosis {
                    component: ci,
                    root_count: sorted.len(),
                    span: (lo, hi),
                    sample_deltas,
                    note: format!(
                        "{} alignment roots packed below 2x grid spacing on component {}: \
                         the equilibrium condition holds along a segment, not at isolated points",
                        sorted.len(),
                        ci
                    ),
                }));
            }
        }

        for t in component_roots {
            roots.push(curve.point(t));
        }
    }

    Ok(ScanOutcome::Isolated(finish_records(inst, roots)?))
}

/// Turns raw root locations into deduplicated, classified records sorted by
/// boundary order of discovery.
fn finish_records(inst: &ProblemInstance, roots: Vec<DVector<f64>>) -> Result<Vec<EquilibriumRecord>> {
    let mut kept: Vec<DVector<f64>> = Vec::new();
    'outer: for r in roots {
        for k in &kept {
            if (&r - k).norm() < 1e-6 {
                continue 'outer;
            }
        }
        kept.push(r);
    }

    let mut records = Vec::new();
    for x in kept {
        let w = inst.constraint_vector(&x);
        if w.norm() < 1e-8 * (1.0 + inst.barrier.grad(&x).norm()) {
            // The filter has no authority here; an alignment root at such a point
            // is a parametrization artifact, not an equilibrium.
            continue;
        }
        let delta = indicator(inst, &x)?;
        if delta.abs() <= 1e-12 {
            continue;
        }
        records.push(make_record(inst, x, delta, Provenance::BoundaryScan)?);
    }
    Ok(records)
}

/// Builds a full record (residual, Jacobian, classification) for a confirmed
/// boundary point with the given indicator.
pub fn make_record(
    inst: &ProblemInstance,
    x: DVector<f64>,
    delta: f64,
    provenance: Provenance,
) -> Result<EquilibriumRecord> {
    if delta >= 0.0 {
        let defect = alignment_defect(inst, &x)?;
        return Ok(EquilibriumRecord {
            x,
            delta,
            residual: defect.amax(),
            jacobian: None,
            eigenvalues: None,
            classification: Classification::PotentialOnly,
            provenance,
        });
    }
    let residual = closed_loop_field(inst, &x)?.amax();
    let j = jacobian_at_point(inst, &x, delta)?;
    let eigs: Vec<Complex64> = j.complex_eigenvalues().iter().copied().collect();
    let classification = classify_eigs(&eigs);
    Ok(EquilibriumRecord {
        x,
        delta,
        residual,
        jacobian: Some(j),
        eigenvalues: Some(eigs),
        classification,
        provenance,
    })
}

/// Jacobian of the filtered closed loop at an undesired equilibrium.
pub fn jacobian_at(inst: &ProblemInstance, record: &EquilibriumRecord) -> Result<DMatrix<f64>> {
    if record.delta >= 0.0 {
        return Err(Error::Config(
            "Jacobian is defined only for delta < 0 records".into(),
        ));
    }
    jacobian_at_point(inst, &record.x, record.delta)
}

fn jacobian_at_point(inst: &ProblemInstance, x: &DVector<f64>, delta: f64) -> Result<DMatrix<f64>> {
    if let Some(j) = analytic_sphere_jacobian(inst, x, delta)? {
        return Ok(j);
    }
    fd_jacobian(inst, x)
}

/// Closed form for the linear system + spherical obstacle + G = B^T B case:
/// J = A_tilde - 2 delta I - n n^T (A_tilde - (2 delta - alpha'(0)) I)
/// with n the unit outward normal at x*.
fn analytic_sphere_jacobian(
    inst: &ProblemInstance,
    x: &DVector<f64>,
    delta: f64,
) -> Result<Option<DMatrix<f64>>> {
    let (center, safe_inside) = match &inst.barrier.family {
        BarrierFamily::Sphere {
            center,
            safe_inside,
            ..
        } => (center, *safe_inside),
        _ => return Ok(None),
    };
    if safe_inside {
        return Ok(None);
    }
    let n = inst.n();
    if inst.m() != n {
        return Ok(None);
    }
    let b = &inst.system.b;
    let g = inst.weight.matrix(n);
    if (b.transpose() * b - &g).amax() > 1e-10 * (1.0 + g.amax()) {
        return Ok(None);
    }
    let dir = x - center;
    let nr = dir.norm();
    if nr < 1e-12 {
        return Ok(None);
    }
    let nn = &dir * dir.transpose() / (nr * nr);
    let at = inst.a_tilde();
    let id = DMatrix::identity(n, n);
    let a0 = inst.barrier.alpha.deriv_at_zero();
    let j = &at - 2.0 * delta * &id - nn * (&at - (2.0 * delta - a0) * id);
    Ok(Some(j))
}

/// Central differences of the filtered field, kept on the active branch: every
/// stencil point must satisfy eta < 0, shrinking the step as needed.
fn fd_jacobian(inst: &ProblemInstance, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = inst.n();
    let mut step = 1e-6 * (1.0 + x.norm());
    'attempt: for _ in 0..40 {
        for i in 0..n {
            for s in [-1.0, 1.0] {
                let mut xp = x.clone();
                xp[i] += s * step;
                if inst.eval_eta(&xp) >= 0.0 {
                    step *= 0.5;
                    continue 'attempt;
                }
            }
        }
        let mut j = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += step;
            xm[i] -= step;
            let col = (closed_loop_field(inst, &xp)? - closed_loop_field(inst, &xm)?)
                / (2.0 * step);
            j.set_column(i, &col);
        }
        return Ok(j);
    }
    Err(Error::Numerical(
        "could not keep the finite-difference stencil on the active branch".into(),
    ))
}

pub fn classify_eigs(eigs: &[Complex64]) -> Classification {
    const TOL: f64 = 1e-8;
    if eigs.iter().any(|l| l.re.abs() <= TOL) {
        Classification::Degenerate
    } else if eigs.iter().all(|l| l.re < -TOL) {
        Classification::AsymptoticallyStable
    } else if eigs.iter().any(|l| l.re > TOL) && eigs.iter().any(|l| l.re < -TOL) {
        Classification::Saddle
    } else {
        // All real parts strictly positive: a fully unstable node. The planar
        // theory never produces one (one eigenvalue is -alpha'(0) < 0), so fold
        // it into the saddle bucket for reporting.
        Classification::Saddle
    }
}

pub fn classify(record: &EquilibriumRecord) -> Result<Classification> {
    let eigs = record
        .eigenvalues
        .as_ref()
        .ok_or_else(|| Error::Config("record has no eigenvalues".into()))?;
    Ok(classify_eigs(eigs))
}

/// Hyperbolicity: no Jacobian eigenvalue with real part within 1e-8 of zero.
pub fn isolated_check(record: &EquilibriumRecord) -> Result<bool> {
    let eigs = record
        .eigenvalues
        .as_ref()
        .ok_or_else(|| Error::Config("record has no eigenvalues".into()))?;
    Ok(eigs.iter().all(|l| l.re.abs() > 1e-8))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    BoundedObstacle,
    CompactSafeSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureReport {
    pub k: usize,
    pub saddles: usize,
    pub stable: usize,
    pub expected_saddles: usize,
    pub parity_ok: bool,
    pub saddle_count_ok: bool,
    pub pass: bool,
}

/// Checks the structural count theorems: an isolated bounded obstacle carries an
/// odd number k of hyperbolic equilibria with (k+1)/2 saddles; a compact
/// connected safe-set boundary carries an even k with k/2 saddles.
pub fn check_count_structure(
    records: &[EquilibriumRecord],
    topology: Topology,
) -> Result<StructureReport> {
    let members: Vec<&EquilibriumRecord> =
        records.iter().filter(|r| r.delta < 0.0).collect();
    for r in &members {
        if !isolated_check(r)? {
            return Err(Error::InconsistentInstance(
                "count structure check requires hyperbolic equilibria".into(),
            ));
        }
    }
    let k = members.len();
    let saddles = members
        .iter()
        .filter(|r| r.classification == Classification::Saddle)
        .count();
    let stable = members
        .iter()
        .filter(|r| r.classification == Classification::AsymptoticallyStable)
        .count();
    let (parity_ok, expected_saddles) = match topology {
        Topology::BoundedObstacle => (k % 2 == 1, (k + 1) / 2),
        Topology::CompactSafeSet => (k % 2 == 0, k / 2),
    };
    let saddle_count_ok = saddles == expected_saddles;
    Ok(StructureReport {
        k,
        saddles,
        stable,
        expected_saddles,
        parity_ok,
        saddle_count_ok,
        pass: parity_ok && saddle_count_ok,
    })
}

fn scan_sphere_3d(inst: &ProblemInstance, cfg: &ScanConfig) -> Result<ScanOutcome> {
    let (center, radius) = match &inst.barrier.family {
        BarrierFamily::Sphere { center, radius, .. } => (center.clone(), *radius),
        _ => unreachable!(),
    };
    let point = |th: f64, ph: f64| -> DVector<f64> {
        &center
            + DVector::from_vec(vec![
                radius * th.sin() * ph.cos(),
                radius * th.sin() * ph.sin(),
                radius * th.cos(),
            ])
    };
    // Tangential defect of f_tilde relative to the filter direction.
    let defect = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let f = inst.eval_f_tilde(x);
        let d = filter_direction(inst, x)?;
        let dn = d.norm();
        if dn < 1e-14 {
            return Ok(f);
        }
        let dhat = d / dn;
        Ok(&f - &dhat * f.dot(&dhat))
    };

    let nth = 96usize;
    let nph = 192usize;
    let mut grid = vec![vec![0.0f64; nph]; nth + 1];
    for (i, row) in grid.iter_mut().enumerate() {
        let th = std::f64::consts::PI * i as f64 / nth as f64;
        for (j, cell) in row.iter_mut().enumerate() {
            let ph = std::f64::consts::TAU * j as f64 / nph as f64;
            *cell = defect(&point(th, ph))?.norm();
        }
    }

    // Seeds: grid-local minima of the defect norm (wrapping in phi).
    let mut seeds = Vec::new();
    for i in 0..=nth {
        for j in 0..nph {
            let v = grid[i][j];
            let mut is_min = true;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let ii = i as i64 + di;
                    if !(0..=nth as i64).contains(&ii) {
                        continue;
                    }
                    let jj = (j as i64 + dj).rem_euclid(nph as i64) as usize;
                    if grid[ii as usize][jj] < v {
                        is_min = false;
                    }
                }
            }
            if is_min {
                seeds.push((
                    std::f64::consts::PI * i as f64 / nth as f64,
                    std::f64::consts::TAU * j as f64 / nph as f64,
                ));
            }
        }
    }

    let mut roots = Vec::new();
    for (th0, ph0) in seeds {
        if let Some(x) = refine_sphere_root(inst, &point, &defect, th0, ph0, cfg.newton_tol)? {
            roots.push(x);
        }
    }
    Ok(ScanOutcome::Isolated(finish_records(inst, roots)?))
}

/// Gauss-Newton on the 2-vector of tangent-basis components of the defect, with
/// finite-difference Jacobian in (theta, phi).
fn refine_sphere_root<P, D>(
    inst: &ProblemInstance,
    point: &P,
    defect: &D,
    mut th: f64,
    mut ph: f64,
    tol: f64,
) -> Result<Option<DVector<f64>>>
where
    P: Fn(f64, f64) -> DVector<f64>,
    D: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let x0 = point(th, ph);
    let d0 = filter_direction(inst, &x0)?;
    let basis = tangent_basis(&d0);
    let (e1, e2) = match basis {
        Some(b) => b,
        None => return Ok(None),
    };
    let res = |th: f64, ph: f64| -> Result<DVector<f64>> {
        let q = defect(&point(th, ph))?;
        Ok(DVector::from_vec(vec![q.dot(&e1), q.dot(&e2)]))
    };
    let h = 1e-7;
    for _ in 0..60 {
        let r = res(th, ph)?;
        if r.amax() < tol {
            break;
        }
        let rth = (res(th + h, ph)? - res(th - h, ph)?) / (2.0 * h);
        let rph = (res(th, ph + h)? - res(th, ph - h)?) / (2.0 * h);
        let j = nalgebra::Matrix2::new(rth[0], rph[0], rth[1], rph[1]);
        let step = match j.lu().solve(&nalgebra::Vector2::new(r[0], r[1])) {
            Some(s) => s,
            None => return Ok(None),
        };
        th -= step[0];
        ph -= step[1];
        if step.amax() < 1e-15 {
            break;
        }
    }
    let x = point(th, ph);
    let q = defect(&x)?;
    let scale = 1.0 + inst.eval_f_tilde(&x).norm();
    if q.norm() <= 1e-9 * scale {
        Ok(Some(x))
    } else {
        Ok(None)
    }
}

fn tangent_basis(d: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let dn = d.norm();
    if dn < 1e-14 {
        return None;
    }
    let dhat = d / dn;
    let probe = if dhat[0].abs() < 0.9 {
        DVector::from_vec(vec![1.0, 0.0, 0.0])
    } else {
        DVector::from_vec(vec![0.0, 1.0, 0.0])
    };
    let e1 = (&probe - &dhat * probe.dot(&dhat)).normalize();
    let e2 = DVector::from_vec(vec![
        dhat[1] * e1[2] - dhat[2] * e1[1],
        dhat[2] * e1[0] - dhat[0] * e1[2],
        dhat[0] * e1[1] - dhat[1] * e1[0],
    ]);
    Some((e1, e2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{Barrier, BarrierFamily};
    use crate::model::{ClassKInf, ControllerDef, Convention, SystemDef, WeightSpec};
    use nalgebra::{dmatrix, dvector};

    fn convex_bounded() -> ProblemInstance {
        let system = SystemDef::linear(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        let controller =
            ControllerDef::new(dmatrix![5.0, -8.0; 2.0, -3.0], Convention::NegativeGain);
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
        let system =
            SystemDef::linear(dmatrix![0.0, -1.0; 1.0, -2.0], dmatrix![0.0; 1.0]).unwrap();
        let controller = ControllerDef::zero(1, 2);
        let barrier = Barrier {
            family: BarrierFamily::PiecewiseParabolic,
            alpha: ClassKInf::linear(10.0),
        };
        ProblemInstance::new(system, controller, barrier, WeightSpec::Identity).unwrap()
    }

    #[test]
    fn indicator_hand_values() {
        let inst = convex_bounded();
        let d = indicator(&inst, &dvector![3.0, 3.0]).unwrap();
        assert!((d - (-1.5)).abs() < 1e-12);

        let inst = continuum();
        for sigma in [-2.0, -1.5, -1.0] {
            let d = indicator(&inst, &dvector![sigma, 0.0]).unwrap();
            assert!((d - sigma).abs() < 1e-12);
        }
    }

    #[test]
    fn indicator_rejects_off_boundary_points() {
        let inst = convex_bounded();
        assert!(indicator(&inst, &dvector![0.0, 2.0]).is_err());
    }

    #[test]
    fn convex_bounded_scan_finds_both_equilibria() {
        let inst = convex_bounded();
        let out = find_undesired_equilibria(&inst, &ScanConfig::default()).unwrap();
        let recs = out.undesired();
        assert_eq!(recs.len(), 2);
        let stable = recs
            .iter()
            .find(|r| r.classification == Classification::AsymptoticallyStable)
            .expect("stable equilibrium");
        assert!((&stable.x - dvector![3.0, 3.0]).amax() < 1e-6);
        assert!((stable.delta - (-1.5)).abs() < 1e-6);
        assert!(stable.residual <= 1e-8);
        let saddle = recs
            .iter()
            .find(|r| r.classification == Classification::Saddle)
            .expect("saddle");
        // Reference value from an independent high-resolution root find.
        assert!((&saddle.x - dvector![3.159935, 2.121692]).amax() < 1e-4);
        assert!(saddle.residual <= 1e-8);
    }

    #[test]
    fn continuum_is_diagnosed() {
        let inst = continuum();
        let out = find_undesired_equilibria(&inst, &ScanConfig::default()).unwrap();
        match out {
            ScanOutcome::Continuum(diag) => {
                assert!(diag.root_count > 25);
                // The flat segment sits between x1 = -2 and x1 = -1.
                let (lo, hi) = &diag.span;
                assert!(lo[0] <= -1.9 && hi[0] >= -1.1);
                for d in &diag.sample_deltas {
                    assert!(*d < 0.0);
                }
            }
            ScanOutcome::Isolated(r) => panic!("expected continuum, got {} records", r.len()),
        }
    }

    #[test]
    fn continuum_fd_jacobian_has_zero_eigenvalue() {
        let inst = continuum();
        let x = dvector![-1.5, 0.0];
        let delta = indicator(&inst, &x).unwrap();
        let rec = make_record(&inst, x, delta, Provenance::UserSupplied).unwrap();
        assert!(!isolated_check(&rec).unwrap());
        let eigs = rec.eigenvalues.unwrap();
        let mut res: Vec<f64> = eigs.iter().map(|l| l.re).collect();
        res.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(res[0] < -9.9 && res[0] > -10.1);
        assert!(res[1].abs() < 1e-3);
    }

    #[test]
    fn analytic_jacobian_matches_fd_on_sphere_obstacle() {
        // A_tilde = diag(-1, -2), obstacle at (2, 0) radius 1, equilibrium (3, 0).
        let system = SystemDef::linear(dmatrix![-1.0, 0.0; 0.0, -2.0], DMatrix::identity(2, 2))
            .unwrap();
        let controller = ControllerDef::zero(2, 2);
        let barrier = Barrier {
            family: BarrierFamily::Sphere {
                center: dvector![2.0, 0.0],
                radius: 1.0,
                safe_inside: false,
            },
            alpha: ClassKInf::linear(10.0),
        };
        let inst = ProblemInstance::new(system, controller, barrier, WeightSpec::Identity).unwrap();
        let x = dvector![3.0, 0.0];
        let delta = indicator(&inst, &x).unwrap();
        assert!((delta - (-1.5)).abs() < 1e-12);
        let ja = analytic_sphere_jacobian(&inst, &x, delta).unwrap().unwrap();
        let jf = fd_jacobian(&inst, &x).unwrap();
        assert!((ja.clone() - jf).amax() < 1e-5);
        // One eigenvalue is always -alpha'(0).
        let eigs = ja.complex_eigenvalues();
        assert!(eigs.iter().any(|l| (l.re + 10.0).abs() < 1e-6 && l.im.abs() < 1e-9));
    }

    #[test]
    fn alpha_rescale_leaves_equilibria_in_place() {
        let mut inst = convex_bounded();
        let base = find_undesired_equilibria(&inst, &ScanConfig::default()).unwrap();
        inst.barrier.alpha = ClassKInf::linear(500.0);
        let scaled = find_undesired_equilibria(&inst, &ScanConfig::default()).unwrap();
        let (b, s) = (base.undesired(), scaled.undesired());
        assert_eq!(b.len(), s.len());
        for rb in &b {
            let rs = s
                .iter()
                .min_by(|p, q| {
                    (&p.x - &rb.x)
                        .norm()
                        .partial_cmp(&(&q.x - &rb.x).norm())
                        .unwrap()
                })
                .unwrap();
            assert!((&rs.x - &rb.x).amax() < 1e-8);
            assert_eq!(rs.classification, rb.classification);
        }
    }

    #[test]
    fn sphere_3d_scan_finds_the_two_alignment_points() {
        let a = dmatrix![-1.0, 0.0, 0.0; 0.0, -6.0, 1.0; 0.0, -1.0, -6.0];
        let system = SystemDef::linear(a, DMatrix::identity(3, 3)).unwrap();
        let controller = ControllerDef::zero(3, 3);
        let barrier = Barrier {
            family: BarrierFamily::Sphere {
                center: dvector![2.0, 0.0, 0.0],
                radius: 1.0,
                safe_inside: false,
            },
            alpha: ClassKInf::linear(10.0),
        };
        let inst = ProblemInstance::new(system, controller, barrier, WeightSpec::Identity).unwrap();
        let out = find_undesired_equilibria(&inst, &ScanConfig::default()).unwrap();
        let recs = out.records();
        let undesired = out.undesired();
        assert_eq!(undesired.len(), 1);
        assert!((&undesired[0].x - dvector![3.0, 0.0, 0.0]).amax() < 1e-7);
        assert!((undesired[0].delta - (-1.5)).abs() < 1e-9);
        assert_eq!(
            undesired[0].classification,
            Classification::AsymptoticallyStable
        );
        let potential = recs
            .iter()
            .find(|r| r.classification == Classification::PotentialOnly)
            .expect("potential-only point at (1,0,0)");
        assert!((&potential.x - dvector![1.0, 0.0, 0.0]).amax() < 1e-7);
        assert!(potential.delta > 0.0);
    }

    #[test]
    fn count_structure_convex_bounded() {
        let inst = convex_bounded();
        let out = find_undesired_equilibria(&inst, &ScanConfig::default()).unwrap();
        let report = check_count_structure(out.records(), Topology::CompactSafeSet).unwrap();
        assert!(report.pass);
        assert_eq!(report.k, 2);
        assert_eq!(report.saddles, 1);
        assert_eq!(report.stable, 1);
    }

    #[test]
    fn classification_buckets() {
        use num_complex::Complex64 as C;
        assert_eq!(
            classify_eigs(&[C::new(-1.0, 0.0), C::new(2.0, 0.0)]),
            Classification::Saddle
        );
        assert_eq!(
            classify_eigs(&[C::new(-1.0, 0.5), C::new(-1.0, -0.5)]),
            Classification::AsymptoticallyStable
        );
        assert_eq!(
            classify_eigs(&[C::new(-10.0, 0.0), C::new(0.0, 0.0)]),
            Classification::Degenerate
        );
    }
}
