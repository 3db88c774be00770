//! The safety filter: closed-form minimum-norm correction of the nominal input,
//! the filtered closed-loop vector field, and an independent QP cross-check.

use crate::barrier::spd_sqrt;
use crate::error::{Error, Result};
use crate::model::{ProblemInstance, WeightSpec};
use nalgebra::DVector;

/// Below this constraint-row norm an active filter has no feasible direction.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Minimum-norm (in the G metric) correction v(x) added to the nominal input so
/// that the barrier constraint eta(x) + grad h^T g v >= 0 holds with equality
/// whenever the filter is active.
pub fn filter_input(inst: &ProblemInstance, x: &DVector<f64>) -> Result<DVector<f64>> {
    let eta = inst.eval_eta(x);
    if eta >= 0.0 {
        return Ok(DVector::zeros(inst.m()));
    }
    let w = inst.constraint_vector(x);
    if w.norm() < DEGENERACY_TOL {
        return Err(Error::DegenerateConstraint {
            state: x.as_slice().to_vec(),
            norm: w.norm(),
        });
    }
    let ginv_w = inst.weight.apply_inv(&w)?;
    let denom = w.dot(&ginv_w);
    Ok(ginv_w * (-eta / denom))
}

/// The filtered closed-loop field f_tilde(x) + g(x) v(x).
pub fn closed_loop_field(inst: &ProblemInstance, x: &DVector<f64>) -> Result<DVector<f64>> {
    let v = filter_input(inst, x)?;
    Ok(inst.eval_f_tilde(x) + inst.system.g(x) * v)
}

/// Solves the same program by a different route (halfspace projection in the
/// coordinates theta = G^{1/2} u) and returns the max-norm discrepancy against
/// the closed form.
pub fn qp_oracle_check(inst: &ProblemInstance, x: &DVector<f64>) -> Result<f64> {
    let v = filter_input(inst, x)?;
    let oracle = qp_project(inst, x)?;
    Ok((v - oracle).amax())
}

fn qp_project(inst: &ProblemInstance, x: &DVector<f64>) -> Result<DVector<f64>> {
    let m = inst.m();
    let eta = inst.eval_eta(x);
    if eta >= 0.0 {
        return Ok(DVector::zeros(m));
    }
    let g = match &inst.weight {
        WeightSpec::Identity => nalgebra::DMatrix::identity(m, m),
        WeightSpec::Constant(g) => g.clone(),
    };
    let g_half = spd_sqrt(&g)?;
    let g_half_inv = g_half
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular weight square root".into()))?;
    // Constraint w^T u >= -eta becomes w_tilde^T theta >= -eta with
    // w_tilde = G^{-1/2} w; the minimizer is the projection of the origin.
    let w_tilde = &g_half_inv * inst.constraint_vector(x);
    let n2 = w_tilde.norm_squared();
    if n2 < DEGENERACY_TOL * DEGENERACY_TOL {
        return Err(Error::DegenerateConstraint {
            state: x.as_slice().to_vec(),
            norm: n2.sqrt(),
        });
    }
    let theta = w_tilde * (-eta / n2);
    Ok(g_half_inv * theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{Barrier, BarrierFamily};
    use crate::model::{ClassKInf, ControllerDef, Convention, SystemDef, WeightSpec};
    use nalgebra::{dmatrix, dvector, DMatrix};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

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

    fn weighted_instance() -> ProblemInstance {
        let mut inst = convex_bounded();
        inst.weight = WeightSpec::Constant(dmatrix![2.0, 0.3; 0.3, 1.0]);
        inst
    }

    #[test]
    fn inactive_region_returns_zero() {
        let inst = convex_bounded();
        // Near the origin h is large and the nominal flow points inward.
        let v = filter_input(&inst, &dvector![0.1, 1.9]).unwrap();
        assert_eq!(v.amax(), 0.0);
    }

    #[test]
    fn hand_value_at_stable_equilibrium() {
        let inst = convex_bounded();
        let x = dvector![3.0, 3.0];
        let v = filter_input(&inst, &x).unwrap();
        assert!((v - dvector![-9.0, -3.0]).amax() < 1e-12);
        let xdot = closed_loop_field(&inst, &x).unwrap();
        assert!(xdot.amax() < 1e-12);
    }

    #[test]
    fn matches_projection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for inst in [convex_bounded(), weighted_instance()] {
            for _ in 0..500 {
                let x = inst.barrier.sample_state(&mut rng);
                match qp_oracle_check(&inst, &x) {
                    Ok(d) => assert!(d <= 1e-9, "discrepancy {d:.3e} at {:?}", x.as_slice()),
                    Err(Error::DegenerateConstraint { .. }) => {}
                    Err(e) => panic!("{e}"),
                }
            }
        }
    }

    #[test]
    fn minimality_against_random_feasible_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let inst = weighted_instance();
        let g = inst.weight.matrix(2);
        let mut tried = 0;
        while tried < 100 {
            let x = inst.barrier.sample_state(&mut rng);
            let eta = inst.eval_eta(&x);
            if eta >= 0.0 {
                continue;
            }
            let w = inst.constraint_vector(&x);
            if w.norm() < 1e-6 {
                continue;
            }
            let v = filter_input(&inst, &x).unwrap();
            let vg = v.dot(&(&g * &v));
            // Random feasible candidate: the minimizer plus a perturbation kept
            // on the feasible side of the constraint.
            let mut u = &v + DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            if eta + w.dot(&u) < 0.0 {
                let deficit = -(eta + w.dot(&u));
                u += &w * (deficit / w.norm_squared() + 1e-9);
            }
            let ug = u.dot(&(&g * &u));
            assert!(ug + 1e-9 >= vg, "candidate beat the minimizer");
            tried += 1;
        }
    }

    #[test]
    fn complementarity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let inst = weighted_instance();
        for _ in 0..300 {
            let x = inst.barrier.sample_state(&mut rng);
            let v = match filter_input(&inst, &x) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let slack = inst.eval_eta(&x) + inst.constraint_vector(&x).dot(&v);
            assert!(slack >= -1e-9, "constraint violated: slack {slack:.3e}");
            if v.amax() > 0.0 {
                assert!(slack.abs() < 1e-9, "active filter but inactive constraint");
            }
        }
    }

    #[test]
    fn filtered_input_is_continuous_across_activation() {
        // Probe short segments that cross the eta = 0 surface; the correction
        // must vanish continuously at the crossing.
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let inst = convex_bounded();
        let mut checked = 0;
        while checked < 50 {
            let x0 = inst.barrier.sample_state(&mut rng);
            let x1 = inst.barrier.sample_state(&mut rng);
            let e0 = inst.eval_eta(&x0);
            let e1 = inst.eval_eta(&x1);
            if e0 * e1 >= 0.0 {
                continue;
            }
            // Bisect the crossing, then compare v on both sides.
            let (mut a, mut b) = (0.0f64, 1.0f64);
            let eval = |t: f64| {
                let x = &x0 + (&x1 - &x0) * t;
                inst.eval_eta(&x)
            };
            for _ in 0..80 {
                let mid = 0.5 * (a + b);
                if eval(a) * eval(mid) <= 0.0 {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            let t = 0.5 * (a + b);
            for dt in [-1e-7, 1e-7] {
                let x = &x0 + (&x1 - &x0) * (t + dt);
                if let Ok(v) = filter_input(&inst, &x) {
                    assert!(v.amax() < 1e-4, "jump at activation boundary: {}", v.amax());
                }
            }
            checked += 1;
        }
    }
}
