//! Deterministic trajectory integration of the filtered closed loop, slope
//! tuning for boundedness, unboundedness certificates, and limit-cycle
//! detection and verification.

use crate::barrier::BarrierFamily;
use crate::error::{Error, Result};
use crate::filter::{closed_loop_field, filter_input};
use crate::model::{ClassKInf, ProblemInstance};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorCfg {
    /// Fixed RK4 step.
    pub dt: f64,
    /// Horizon in seconds.
    pub t_final: f64,
    /// Convergence radius on the field norm.
    pub eps_c: f64,
    /// Escape radius proxying unboundedness at desk scale.
    pub r_max: f64,
    /// Recurrence tolerance for cycle detection.
    pub eps_r: f64,
}

impl Default for IntegratorCfg {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 50.0,
            eps_c: 1e-4,
            r_max: 1e4,
            eps_r: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Verdict {
    /// Converged near a known equilibrium (by index) or the origin (index None).
    ConvergedTo {
        point: Vec<f64>,
        equilibrium_index: Option<usize>,
    },
    Diverged {
        radius: f64,
    },
    Cycling {
        period: f64,
    },
    Undetermined,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub h: Vec<f64>,
    pub eta: Vec<f64>,
    pub u_norm: Vec<f64>,
    pub verdict: Verdict,
    pub min_h: f64,
}

/// Fixed-step RK4 integration of the filtered closed loop, with early halts on
/// convergence to a known equilibrium (or the origin) and on escape.
pub fn integrate(
    inst: &ProblemInstance,
    x0: &DVector<f64>,
    cfg: &IntegratorCfg,
    known_equilibria: &[DVector<f64>],
) -> Result<Trajectory> {
    if !(cfg.dt > 0.0 && cfg.t_final > cfg.dt) {
        return Err(Error::Config("integrator requires dt > 0 and T > dt".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("initial state must be finite".into()));
    }
    let field = |x: &DVector<f64>, t: f64| -> Result<DVector<f64>> {
        closed_loop_field(inst, x).map_err(|e| {
            Error::Numerical(format!("filter failure at t = {t:.6}: {e}"))
        })
    };
    let steps = (cfg.t_final / cfg.dt).round() as usize;
    let mut x = x0.clone();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut hs = Vec::with_capacity(steps + 1);
    let mut etas = Vec::with_capacity(steps + 1);
    let mut us = Vec::with_capacity(steps + 1);
    let mut min_h = f64::INFINITY;
    let mut verdict = Verdict::Undetermined;

    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        let h = inst.barrier.h(&x);
        min_h = min_h.min(h);
        times.push(t);
        states.push(x.clone());
        hs.push(h);
        etas.push(inst.eval_eta(&x));
        us.push(filter_input(inst, &x).map(|v| v.norm()).unwrap_or(f64::NAN));

        let xdot = field(&x, t)?;
        if xdot.norm() < cfg.eps_c {
            let mut near: Option<Option<usize>> = None;
            if x.norm() < 10.0 * cfg.eps_c {
                near = Some(None);
            }
            for (i, e) in known_equilibria.iter().enumerate() {
                if (&x - e).norm() < 10.0 * cfg.eps_c {
                    near = Some(Some(i));
                    break;
                }
            }
            if let Some(idx) = near {
                verdict = Verdict::ConvergedTo {
                    point: x.as_slice().to_vec(),
                    equilibrium_index: idx,
                };
                break;
            }
        }
        if x.norm() > cfg.r_max {
            verdict = Verdict::Diverged { radius: x.norm() };
            break;
        }
        if k == steps {
            break;
        }

        let dt = cfg.dt;
        let k1 = xdot;
        let k2 = field(&(&x + &k1 * (dt / 2.0)), t)?;
        let k3 = field(&(&x + &k2 * (dt / 2.0)), t)?;
        let k4 = field(&(&x + &k3 * dt), t)?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }

    Ok(Trajectory {
        times,
        states,
        h: hs,
        eta: etas,
        u_norm: us,
        verdict,
        min_h,
    })
}

/// Region on which tuned trajectories are guaranteed to stay.
#[derive(Debug, Clone)]
pub enum TunedRegion {
    /// C itself is compact; no tuning needed.
    WholeSafeSet,
    /// Sublevel set {x : x^T P x <= c} of the Lyapunov function of A_tilde.
    Sublevel { p: DMatrix<f64>, c: f64 },
}

/// Solves A^T P + P A = -I by the Kronecker-product linearization.
pub fn lyapunov_sym(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut m = DMatrix::zeros(n * n, n * n);
    // vec(A^T P + P A) = (I kron A^T + A^T kron I) vec(P).
    let id: DMatrix<f64> = DMatrix::identity(n, n);
    let at = a.transpose();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    // (I kron A^T): block (j, l) scaled by I[j,l] -> at[(i,k)]
                    m[(j * n + i, l * n + k)] +=
                        id[(j, l)] * at[(i, k)] + at[(j, l)] * id[(i, k)];
                }
            }
        }
    }
    let rhs = DVector::from_fn(n * n, |idx, _| {
        let (col, row) = (idx / n, idx % n);
        if row == col {
            -1.0
        } else {
            0.0
        }
    });
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("Lyapunov equation is singular".into()))?;
    let p = DMatrix::from_fn(n, n, |i, j| sol[j * n + i]);
    // Symmetrize against roundoff.
    Ok((p.clone() + p.transpose()) * 0.5)
}

fn safe_set_is_compact(inst: &ProblemInstance) -> bool {
    match &inst.barrier.family {
        BarrierFamily::Sphere { safe_inside, .. } => *safe_inside,
        BarrierFamily::Cassini { safe_inside, .. } => *safe_inside,
        BarrierFamily::PolarRadius(_) => true,
        _ => false,
    }
}

/// Picks a class-K slope that makes trajectories from the ball of radius
/// `r_phi` stay in a compact region, per the boundedness construction: a
/// Lyapunov sublevel set containing both the ball and the unsafe set, with the
/// slope chosen so eta >= 0 on its boundary.
pub fn tune_alpha_for_boundedness(
    inst: &ProblemInstance,
    r_phi: f64,
) -> Result<(f64, TunedRegion)> {
    if safe_set_is_compact(inst) {
        return Ok((inst.barrier.alpha.deriv_at_zero(), TunedRegion::WholeSafeSet));
    }
    let at = inst.a_tilde();
    if !crate::model::is_hurwitz(&at) {
        return Err(Error::Config(
            "boundedness tuning requires a Hurwitz closed loop".into(),
        ));
    }
    let p = lyapunov_sym(&at)?;
    let eig = p.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    if eig.eigenvalues.min() <= 0.0 {
        return Err(Error::Numerical("Lyapunov solution is not positive definite".into()));
    }

    // Radius of a ball containing the bounded unsafe set, from its boundary.
    let mut r_obs: f64 = 0.0;
    for curve in inst.barrier.boundary_curves()? {
        for k in 0..2000 {
            let t = k as f64 / 2000.0;
            r_obs = r_obs.max(curve.point(t).norm());
        }
    }
    // E^-1 maps the unit circle onto {V = 1}; scale by sqrt(c) for {V = c}.
    let e = crate::barrier::spd_sqrt(&p)?;
    let einv = e
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular Lyapunov factor".into()))?;
    let m_samples = 4000usize;
    // Grows a level until its boundary lies strictly inside the safe set.
    let grow = |mut c: f64| -> Result<f64> {
        let mut grown = 0;
        'grow: loop {
            for k in 0..m_samples {
                let th = std::f64::consts::TAU * k as f64 / m_samples as f64;
                let x = &einv * DVector::from_vec(vec![th.cos(), th.sin()]) * c.sqrt();
                if inst.barrier.h(&x) <= 0.0 {
                    grown += 1;
                    if grown > 20 {
                        return Err(Error::Numerical(
                            "could not fit the sublevel set inside the safe set".into(),
                        ));
                    }
                    c *= 1.5;
                    continue 'grow;
                }
            }
            return Ok(c);
        }
    };

    let r_cover = r_phi.max(1.05 * r_obs);
    let c_min = grow(lmax * (1.05 * r_obs).powi(2))?;
    let c = grow(lmax * r_cover * r_cover)?.max(c_min);

    // Worst constraint ratio over a nested family of level boundaries from the
    // obstacle cover outward; taking the supremum over the family makes the
    // returned slope monotone in r_phi.
    let mut worst: f64 = 0.0;
    let levels = 9usize;
    for li in 0..levels {
        let cl = c_min * (c / c_min).powf(li as f64 / (levels - 1) as f64);
        for k in 0..m_samples {
            let th = std::f64::consts::TAU * k as f64 / m_samples as f64;
            let x = &einv * DVector::from_vec(vec![th.cos(), th.sin()]) * cl.sqrt();
            let h = inst.barrier.h(&x);
            if h <= 0.0 {
                continue;
            }
            let push = inst.barrier.grad(&x).dot(&inst.eval_f_tilde(&x));
            worst = worst.max(-push / h);
        }
    }
    let a = 1.05 * worst.max(0.0);

    // Verification: the filter is inactive on the boundary of the region.
    let mut check = inst.clone();
    check.barrier.alpha = ClassKInf::linear(a.max(1e-9));
    for k in 0..m_samples {
        let th = std::f64::consts::TAU * k as f64 / m_samples as f64;
        let x = &einv * DVector::from_vec(vec![th.cos(), th.sin()]) * c.sqrt();
        if check.eval_eta(&x) < -1e-9 {
            return Err(Error::Numerical(
                "tuned slope fails eta >= 0 on the region boundary".into(),
            ));
        }
    }
    Ok((a, TunedRegion::Sublevel { p, c }))
}

/// Certificate that every locally Lipschitz controller produces unbounded
/// trajectories from the described region of a half-plane-constrained system.
#[derive(Debug, Clone)]
pub struct UnboundednessCertificate {
    pub c: DVector<f64>,
    pub zeta1: f64,
    pub zeta2: f64,
    pub region: String,
}

impl UnboundednessCertificate {
    /// Membership test for the certified region {a^T x >= b, z1 c^T x + z2 b > 0}.
    pub fn contains(&self, a_vec: &DVector<f64>, b: f64, x: &DVector<f64>) -> bool {
        a_vec.dot(x) >= b && self.zeta1 * self.c.dot(x) + self.zeta2 * b > 0.0
    }
}

/// Searches the left null space of B for a direction along which the drift grows
/// regardless of the input, given the half-plane constraint h = a^T x - b.
pub fn unboundedness_certificate(
    a: &DMatrix<f64>,
    b_mat: &DMatrix<f64>,
    a_vec: &DVector<f64>,
    b: f64,
) -> Result<Option<UnboundednessCertificate>> {
    let n = a.nrows();
    // null(B^T) is the kernel of the Gram matrix B B^T.
    let gram = b_mat * b_mat.transpose();
    let scale = gram.amax().max(1.0);
    let eig = gram.symmetric_eigen();
    let null_cols: Vec<usize> = (0..n)
        .filter(|&i| eig.eigenvalues[i].abs() < 1e-10 * scale)
        .collect();
    if null_cols.is_empty() {
        return Ok(None);
    }
    for col in null_cols {
        let base: DVector<f64> = eig.eigenvectors.column(col).into_owned();
        for sign in [1.0, -1.0] {
            let c = &base * sign;
            // Require {c, a_vec} linearly independent.
            let m = DMatrix::from_columns(&[c.clone(), a_vec.clone()]);
            if m.clone().svd(false, false).rank(1e-10) < 2 {
                continue;
            }
            let target = a.transpose() * &c;
            // Least squares for A^T c = z1 c + z2 a_vec.
            let sol = match m.clone().svd(true, true).solve(&target, 1e-12) {
                Ok(s) => s,
                Err(_) => continue,
            };
            let residual = (&m * &sol - &target).norm();
            let (z1, z2) = (sol[0], sol[1]);
            if residual <= 1e-9 && z1 > 1e-12 && z2 >= -1e-12 {
                return Ok(Some(UnboundednessCertificate {
                    c,
                    zeta1: z1,
                    zeta2: z2,
                    region: format!(
                        "{{x : a^T x >= {b}, {z1}*c^T x + {z2}*{b} > 0}}"
                    ),
                }));
            }
        }
    }
    Ok(None)
}

/// Max residual between an analytic orbit's derivative and the closed-loop field
/// over 1000 samples of one period.
pub fn verify_periodic_orbit<F>(inst: &ProblemInstance, orbit: F, period: f64) -> Result<f64>
where
    F: Fn(f64) -> (DVector<f64>, DVector<f64>),
{
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let t = period * k as f64 / 1000.0;
        let (x, xdot) = orbit(t);
        let field = closed_loop_field(inst, &x)?;
        worst = worst.max((xdot - field).amax());
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct CycleDescriptor {
    pub period: f64,
    pub start_index: usize,
    pub samples: Vec<DVector<f64>>,
}

/// Recurrence search: after discarding the first quarter as transient, looks for
/// a later state that returns within eps_r of the reference state without
/// lingering near any known equilibrium.
pub fn detect_limit_cycle(
    traj: &Trajectory,
    known_equilibria: &[DVector<f64>],
    cfg: &IntegratorCfg,
) -> Option<CycleDescriptor> {
    let n = traj.states.len();
    if n < 8 {
        return None;
    }
    let i0 = n / 4;
    let xref = &traj.states[i0];
    let t0 = traj.times[i0];
    let mut best: Option<(usize, f64)> = None;
    let mut prev_d = f64::INFINITY;
    let mut falling = false;
    for j in (i0 + 1)..n {
        let d = (&traj.states[j] - xref).norm();
        if d < prev_d {
            falling = true;
        } else if falling {
            // Local minimum at j - 1.
            let jm = j - 1;
            let dm = (&traj.states[jm] - xref).norm();
            if dm < cfg.eps_r && traj.times[jm] - t0 > 10.0 * cfg.dt {
                let clear = traj.states[i0..=jm].iter().all(|x| {
                    known_equilibria.iter().all(|e| (x - e).norm() > 5.0 * cfg.eps_r)
                });
                if clear {
                    best = Some((jm, traj.times[jm] - t0));
                    break;
                }
            }
            falling = false;
        }
        prev_d = d;
    }
    best.map(|(jm, period)| CycleDescriptor {
        period,
        start_index: i0,
        samples: traj.states[i0..=jm].to_vec(),
    })
}

/// Doubles the class-K slope until no limit cycle is detected from any start in
/// `x0_grid`; the result falsifies, never certifies, the presence of cycles.
pub fn no_limit_cycle_slope(
    inst: &ProblemInstance,
    x0_grid: &[DVector<f64>],
    cfg: &IntegratorCfg,
    known_equilibria: &[DVector<f64>],
) -> Result<f64> {
    let (mut slope, _) = tune_alpha_for_boundedness(inst, 10.0)?;
    slope = slope.max(1.0);
    let cap = (1u64 << 20) as f64;
    loop {
        let mut probe = inst.clone();
        probe.barrier.alpha = ClassKInf::linear(slope);
        let mut found = false;
        for x0 in x0_grid {
            let traj = integrate(&probe, x0, cfg, known_equilibria)?;
            if detect_limit_cycle(&traj, known_equilibria, cfg).is_some() {
                found = true;
                break;
            }
        }
        if !found {
            return Ok(slope);
        }
        slope *= 2.0;
        if slope > cap {
            return Err(Error::Numerical(
                "no cycle-free slope found below the 2^20 cap".into(),
            ));
        }
    }
}
