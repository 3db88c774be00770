//! Seeded random instance generators for the randomized property suites and
//! scenario sampling. All samplers take an explicit RNG so runs are
//! reproducible.

use crate::barrier::{Barrier, BarrierFamily, PolarCurve};
use crate::error::{Error, Result};
use crate::linear_planar::{
    beta_gamma, check_strict_cbf_circle_underactuated, underactuated_strict_on_boundary,
};
use crate::model::{
    is_hurwitz, ClassKInf, ControllerDef, Convention, ProblemInstance, SystemDef, WeightSpec,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Samples K until A - B K is Hurwitz with the given stability margin.
pub fn sample_stabilizing_k<R: Rng>(
    rng: &mut R,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    margin: f64,
    attempts: usize,
) -> Option<DMatrix<f64>> {
    let (m, n) = (b.ncols(), a.nrows());
    for _ in 0..attempts {
        let k = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-4.0..4.0));
        let at = a - b * &k;
        let ok = at
            .clone()
            .complex_eigenvalues()
            .iter()
            .all(|l| l.re < -margin);
        if ok {
            return Some(k);
        }
    }
    None
}

/// Random Hurwitz 2x2 matrix (eigenvalue real parts below -0.05).
pub fn sample_hurwitz_2x2<R: Rng>(rng: &mut R) -> DMatrix<f64> {
    loop {
        let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-2.5..2.5));
        if a.clone().complex_eigenvalues().iter().all(|l| l.re < -0.05) {
            return a;
        }
    }
}

/// Random fully-actuated planar instance with identity input and weight and the
/// given barrier; the nominal loop is a random Hurwitz matrix.
pub fn fully_actuated_instance<R: Rng>(
    rng: &mut R,
    family: BarrierFamily,
    alpha0: f64,
) -> Result<ProblemInstance> {
    let at = sample_hurwitz_2x2(rng);
    let system = SystemDef::linear(at, DMatrix::identity(2, 2))?;
    let barrier = Barrier {
        family,
        alpha: ClassKInf::linear(alpha0),
    };
    ProblemInstance::new(system, ControllerDef::zero(2, 2), barrier, WeightSpec::Identity)
}

/// Strict-CBF single-input instance with a circular obstacle. The obstacle
/// centre is placed on the alignment line (gamma, beta), where the strict
/// condition reduces to b2 beta + b1 gamma > 0, then jittered slightly.
pub fn underactuated_circle_instance<R: Rng>(rng: &mut R) -> Result<ProblemInstance> {
    for _ in 0..500 {
        let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-2.0..2.0));
        let bv = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
        if bv.norm() < 0.3 {
            continue;
        }
        let (beta, gamma) = beta_gamma(&a, &bv);
        if bv[1] * beta + bv[0] * gamma <= 0.05 || (beta * beta + gamma * gamma) < 1e-4 {
            continue;
        }
        let dir = DVector::from_vec(vec![gamma, beta]).normalize();
        let perp = DVector::from_vec(vec![-dir[1], dir[0]]);
        let d = rng.gen_range(1.5..4.0);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let jitter = rng.gen_range(-0.02..0.02) * d;
        let xc = &dir * (sign * d) + &perp * jitter;
        let r = rng.gen_range(0.25 * d..0.6 * d);
        let alpha0 = 10.0;
        let (ok, diag) = check_strict_cbf_circle_underactuated(&a, &bv, alpha0, &xc, r);
        if !ok {
            continue;
        }
        if (diag.gamma * xc[0] + diag.beta * xc[1]).abs() < 1e-6 {
            continue;
        }
        let b = DMatrix::from_column_slice(2, 1, bv.as_slice());
        let k = match sample_stabilizing_k(rng, &a, &b, 0.05, 200) {
            Some(k) => k,
            None => continue,
        };
        let system = SystemDef::linear(a, b)?;
        let controller = ControllerDef::new(k, Convention::NegativeGain);
        let barrier = Barrier {
            family: BarrierFamily::Sphere {
                center: xc,
                radius: r,
                safe_inside: false,
            },
            alpha: ClassKInf::linear(alpha0),
        };
        return ProblemInstance::new(system, controller, barrier, WeightSpec::Identity);
    }
    Err(Error::Numerical(
        "could not sample a strict-CBF underactuated circle instance".into(),
    ))
}

/// Underactuated, stabilizing instance on a polar-radius safe set, filtered so
/// the barrier is a strict CBF on the whole boundary.
pub fn polar_instance<R: Rng>(rng: &mut R, curve: PolarCurve) -> Result<ProblemInstance> {
    for _ in 0..500 {
        let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-2.0..2.0));
        let bv = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
        if bv.norm() < 0.3 {
            continue;
        }
        let b = DMatrix::from_column_slice(2, 1, bv.as_slice());
        let k = match sample_stabilizing_k(rng, &a, &b, 0.05, 200) {
            Some(k) => k,
            None => continue,
        };
        let system = SystemDef::linear(a.clone(), b)?;
        let controller = ControllerDef::new(k, Convention::NegativeGain);
        let barrier = Barrier {
            family: BarrierFamily::PolarRadius(curve),
            alpha: ClassKInf::linear(10.0),
        };
        let inst = ProblemInstance::new(system, controller, barrier, WeightSpec::Identity)?;
        if underactuated_strict_on_boundary(&inst)? {
            return Ok(inst);
        }
    }
    Err(Error::Numerical(
        "could not sample a strict polar-set instance".into(),
    ))
}

/// Eigenvector-case instance targeting a specific Table row.
/// `diagonalizable` selects Table 1a (distinct eigenvalues) vs 1b (Jordan
/// block); `row` is 1, 2 or 3.
pub fn eigenvector_case_instance<R: Rng>(
    rng: &mut R,
    diagonalizable: bool,
    row: u8,
) -> (DMatrix<f64>, DVector<f64>, f64) {
    loop {
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        let nxc = rng.gen_range(1.5..3.5);
        let xc = DVector::from_vec(vec![nxc * phi.cos(), nxc * phi.sin()]);
        let v1 = &xc / nxc;
        let (l1, l2, cond, r) = if diagonalizable {
            let l1: f64 = -rng.gen_range(0.5..3.0);
            let mut l2: f64 = -rng.gen_range(0.5..3.0);
            if (l1 - l2).abs() < 0.2 {
                l2 -= 0.3;
            }
            // Keep cond in (0, 1) so every row is reachable.
            let r = rng.gen_range(0.2..0.9) * l1.abs() * nxc / (l1 - l2).abs();
            if r >= 0.95 * nxc {
                continue;
            }
            let cond = 1.0 - (l1 - l2).powi(2) * r * r / (l1 * l1 * nxc * nxc);
            (l1, l2, cond, r)
        } else {
            let l: f64 = -rng.gen_range(0.5..3.0);
            let r = rng.gen_range(0.2..0.9) * l.abs() * nxc;
            if r >= 0.95 * nxc {
                continue;
            }
            let cond = 1.0 - r * r / (l * l * nxc * nxc);
            (l, l, cond, r)
        };
        if !(0.01..=0.99).contains(&cond) {
            continue;
        }
        let dot2 = match row {
            1 => cond * rng.gen_range(0.05..0.8),
            2 => cond,
            _ => cond + (1.0 - cond) * rng.gen_range(0.2..0.9),
        };
        let theta = dot2.sqrt().acos();
        let rot = nalgebra::dmatrix![theta.cos(), -theta.sin(); theta.sin(), theta.cos()];
        let v2 = &rot * &v1;
        let v = DMatrix::from_columns(&[v1.clone(), v2]);
        let lam = if diagonalizable {
            nalgebra::dmatrix![l1, 0.0; 0.0, l2]
        } else {
            nalgebra::dmatrix![l1, 1.0; 0.0, l1]
        };
        let vinv = match v.clone().try_inverse() {
            Some(vi) => vi,
            None => continue,
        };
        let at = &v * lam * vinv;
        if !is_hurwitz(&at) {
            continue;
        }
        return (at, xc, r);
    }
}

/// Random planar Hurwitz instance where xc is not an eigenvector of the loop.
pub fn non_eigenvector_instance<R: Rng>(rng: &mut R) -> (DMatrix<f64>, DVector<f64>, f64) {
    loop {
        let at = sample_hurwitz_2x2(rng);
        let r = rng.gen_range(0.3..1.2);
        let nxc = rng.gen_range(1.8 * r..4.0);
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        let xc = DVector::from_vec(vec![nxc * phi.cos(), nxc * phi.sin()]);
        if crate::linear_planar::eigenvector_angle(&at, &xc) < 1e-6 {
            continue;
        }
        return (at, xc, r);
    }
}

/// Random bounded-obstacle barrier (circle or connected Cassini oval) with the
/// origin strictly safe.
pub fn bounded_obstacle_family<R: Rng>(rng: &mut R) -> BarrierFamily {
    loop {
        if rng.gen_bool(0.5) {
            let r = rng.gen_range(0.4..1.4);
            let d = rng.gen_range(r + 0.4..r + 3.0);
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            return BarrierFamily::Sphere {
                center: DVector::from_vec(vec![d * phi.cos(), d * phi.sin()]),
                radius: r,
                safe_inside: false,
            };
        }
        let a = rng.gen_range(0.5..1.2);
        let b = a * rng.gen_range(1.02..1.4);
        let c1 = rng.gen_range(-1.0..1.0);
        let c2 = rng.gen_range(1.5..3.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let fam = BarrierFamily::Cassini {
            a,
            b,
            c1,
            c2,
            safe_inside: false,
        };
        let bar = Barrier {
            family: fam.clone(),
            alpha: ClassKInf::linear(10.0),
        };
        if bar.origin_interior() {
            return fam;
        }
    }
}

/// Random compact safe set (disc or connected Cassini interior) containing the
/// origin.
pub fn compact_safe_family<R: Rng>(rng: &mut R) -> BarrierFamily {
    loop {
        if rng.gen_bool(0.5) {
            let r = rng.gen_range(1.5..4.0);
            let d = rng.gen_range(0.0..0.8 * r);
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            return BarrierFamily::Sphere {
                center: DVector::from_vec(vec![d * phi.cos(), d * phi.sin()]),
                radius: r,
                safe_inside: true,
            };
        }
        let a = rng.gen_range(0.8..2.0);
        let b = a * rng.gen_range(1.02..1.5);
        let c1 = rng.gen_range(-0.8..0.8);
        let c2 = rng.gen_range(-0.5..0.5);
        let fam = BarrierFamily::Cassini {
            a,
            b,
            c1,
            c2,
            safe_inside: true,
        };
        let bar = Barrier {
            family: fam.clone(),
            alpha: ClassKInf::linear(10.0),
        };
        if bar.origin_interior() {
            return fam;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn underactuated_sampler_produces_strict_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let inst = underactuated_circle_instance(&mut rng).unwrap();
            assert!(inst.controller.is_hurwitz(&inst.system));
            assert!(inst.barrier.origin_interior());
        }
    }

    #[test]
    fn eigenvector_sampler_hits_requested_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for diag in [true, false] {
            for row in [1u8, 2, 3] {
                let (at, xc, r) = eigenvector_case_instance(&mut rng, diag, row);
                assert!(crate::linear_planar::eigenvector_angle(&at, &xc) < 1e-10);
                assert!(xc.norm() > r);
            }
        }
    }

    #[test]
    fn obstacle_families_keep_origin_safe() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let bar = Barrier {
                family: bounded_obstacle_family(&mut rng),
                alpha: ClassKInf::linear(10.0),
            };
            assert!(bar.origin_interior());
            let bar = Barrier {
                family: compact_safe_family(&mut rng),
                alpha: ClassKInf::linear(10.0),
            };
            assert!(bar.origin_interior());
        }
    }
}
