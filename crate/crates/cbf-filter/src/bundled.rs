//! The bundled example scenarios, with all parameters taken verbatim from the
//! published examples they reproduce.

use crate::equilibria::{Classification, Topology};
use crate::error::{Error, Result};
use crate::linear_planar::underactuated_circle_equilibrium;
use crate::model::{ClassKInf, Convention, ProblemInstance, WeightSpec};
use crate::samplers::{polar_instance, underactuated_circle_instance};
use crate::scenario::{
    Analysis, BarrierSpec, ControllerSampling, ControllerSpec, ExpectedEquilibrium, Expectations,
    InitialConditions, MatrixSpec, Scenario, SystemSpec, WeightSpecSer,
};
use crate::sim::IntegratorCfg;
use nalgebra::DMatrix;

pub const BUNDLED_NAMES: [&str; 12] = [
    "convex-bounded",
    "cassini-underactuated",
    "cassini-obstacle-integrator",
    "cassini-obstacle-underactuated",
    "union-circles",
    "continuum",
    "limit-cycle-3d",
    "polar-ellipse",
    "polar-cassini",
    "polar-flower",
    "circle-underactuated-analytic",
    "halfplane-unbounded",
];

fn mat(rows: &[&[f64]]) -> MatrixSpec {
    rows.iter().map(|r| r.to_vec()).collect()
}

fn from_dmatrix(m: &DMatrix<f64>) -> MatrixSpec {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn scenario_from_instance(name: &str, inst: &ProblemInstance) -> Scenario {
    Scenario {
        name: name.to_string(),
        system: SystemSpec {
            a: from_dmatrix(&inst.system.a),
            b: from_dmatrix(&inst.system.b),
        },
        controller: ControllerSpec {
            k: from_dmatrix(&inst.controller.k),
            convention: inst.controller.convention,
        },
        barrier: BarrierSpec::from_family(&inst.barrier.family),
        alpha: inst.barrier.alpha,
        weight: match &inst.weight {
            WeightSpec::Identity => WeightSpecSer::Identity,
            WeightSpec::Constant(g) => WeightSpecSer::Constant { g: from_dmatrix(g) },
        },
        initial_conditions: InitialConditions::default(),
        analyses: vec![Analysis::Equilibria],
        integrator: None,
        topology: None,
        controller_sampling: None,
        r_phi: None,
        expectations: None,
        notes: Vec::new(),
    }
}

fn expect(points: &[(&[f64], Classification, f64)]) -> Expectations {
    Expectations {
        equilibria: points
            .iter()
            .map(|(x, c, tol)| ExpectedEquilibrium {
                x: x.to_vec(),
                classification: *c,
                tol: *tol,
            })
            .collect(),
        ..Expectations::default()
    }
}

/// Parameters of the union-of-circles example, shared with the preflight check.
pub mod union_circles_params {
    pub const A: [[f64; 2]; 2] = [[-0.169, -3.0], [-1.989, -1.4]];
    pub const B: [f64; 2] = [-2.355, -1.707];
    pub const C1: f64 = 6.1;
    pub const C2: f64 = 10.027;
    pub const R1: f64 = 2.129;
    pub const ALPHA0: f64 = 10.0;
    /// Inner and outer radii of the lower half-annulus.
    pub const R_INNER: f64 = C1 - R1;
    pub const R_OUTER: f64 = C1 + R1;
}

/// Evaluates the published feasibility, active-constraint, and stability
/// conditions of the union-of-circles construction. All must hold for the
/// example to exhibit its controller-independent stable trap.
pub fn union_circles_preflight() -> Vec<(String, bool)> {
    use union_circles_params::*;
    let (b1, b2) = (B[0], B[1]);
    let (a11, a12, a21, a22) = (A[0][0], A[0][1], A[1][0], A[1][1]);
    let beta = a11 * b2 - b1 * a21;
    let gamma = a22 * b1 - b2 * a12;
    let bn = (b1 * b1 + b2 * b2).sqrt();
    let sgn = b1.signum();
    let t1 = b2 * beta + b1 * gamma + 0.5 * ALPHA0 * bn * bn;

    let mut out = Vec::new();
    out.push(("t1 positive".to_string(), t1 > 0.0));

    // Feasibility on the two caps and the two annulus semicircles.
    let cap = |shift: f64| -> bool {
        let s = -gamma * C2 + shift * beta * C1;
        R1 / bn > (sgn * s + (s * s + 2.0 * ALPHA0 * R1 * R1 * t1).sqrt()) / (2.0 * t1)
    };
    out.push(("feasibility on the left cap".to_string(), cap(-1.0)));
    out.push(("feasibility on the right cap".to_string(), cap(1.0)));
    let inner = -R_INNER / bn
        > (sgn * (-gamma * C2)
            - (gamma * gamma * C2 * C2 + 2.0 * ALPHA0 * R_INNER * R_INNER * t1).sqrt())
            / (2.0 * t1);
    out.push(("feasibility on the inner semicircle".to_string(), inner));
    let outer = -R_OUTER / bn
        < (sgn * (-gamma * C2)
            - (gamma * gamma * C2 * C2 + 2.0 * ALPHA0 * R_OUTER * R_OUTER * t1).sqrt())
            / (2.0 * t1);
    out.push(("feasibility on the outer semicircle".to_string(), outer));

    // The equilibrium on the inner semicircle: x = z (gamma, beta).
    let gb2 = gamma * gamma + beta * beta;
    let s = beta * C2;
    let disc = R_INNER * R_INNER * gb2 - gamma * gamma * C2 * C2;
    let z_plus = (s + disc.sqrt()) / gb2;
    let active = z_plus * (b1 * gamma * z_plus + b2 * (beta * z_plus - C2)) > 0.0;
    out.push(("constraint active at the equilibrium".to_string(), active));

    let ase = (-gamma * C2) * (gamma * b2 - beta * b1)
        + (gamma * b1 + beta * b2) * disc.sqrt()
        < 0.0;
    out.push(("equilibrium asymptotically stable".to_string(), ase));
    out
}

pub fn bundled_scenario(name: &str) -> Result<Scenario> {
    match name {
        "convex-bounded" => Ok(convex_bounded()),
        "cassini-underactuated" => Ok(cassini_underactuated()),
        "cassini-obstacle-integrator" => Ok(cassini_obstacle_integrator()),
        "cassini-obstacle-underactuated" => Ok(cassini_obstacle_underactuated()),
        "union-circles" => union_circles(),
        "continuum" => Ok(continuum()),
        "limit-cycle-3d" => Ok(limit_cycle_3d()),
        "polar-ellipse" => polar(
            "polar-ellipse",
            crate::barrier::PolarCurve::Ellipse {
                c_cos2: 3.0,
                c_sin2: 1.0,
            },
            101,
        ),
        "polar-cassini" => polar(
            "polar-cassini",
            crate::barrier::PolarCurve::CassiniOval {
                scale: 3.0,
                ecc: 1.03,
            },
            102,
        ),
        "polar-flower" => polar(
            "polar-flower",
            crate::barrier::PolarCurve::Flower {
                base: 3.0,
                amp: 2.0,
                lobes: 3,
            },
            103,
        ),
        "circle-underactuated-analytic" => circle_underactuated_analytic(),
        "halfplane-unbounded" => Ok(halfplane_unbounded()),
        _ => Err(Error::Config(format!(
            "unknown bundled scenario {name:?}; see list-bundled"
        ))),
    }
}

fn convex_bounded() -> Scenario {
    Scenario {
        name: "convex-bounded".into(),
        system: SystemSpec {
            a: mat(&[&[0.0, 0.0], &[0.0, 0.0]]),
            b: mat(&[&[1.0, 0.0], &[0.0, 1.0]]),
        },
        controller: ControllerSpec {
            k: mat(&[&[5.0, -8.0], &[2.0, -3.0]]),
            convention: Convention::NegativeGain,
        },
        barrier: BarrierSpec::Sphere {
            center: vec![0.0, 2.0],
            radius: 10f64.sqrt(),
            safe_inside: true,
        },
        alpha: ClassKInf::linear(50.0),
        weight: WeightSpecSer::Identity,
        initial_conditions: InitialConditions::Explicit {
            states: vec![vec![3.0, 3.5], vec![-1.0, 2.0], vec![1.0, -0.5]],
        },
        analyses: vec![Analysis::Equilibria, Analysis::Simulate, Analysis::StructureCheck],
        integrator: None,
        topology: Some(Topology::CompactSafeSet),
        controller_sampling: None,
        r_phi: None,
        expectations: Some(expect(&[
            (&[3.0, 3.0], Classification::AsymptoticallyStable, 1e-6),
            (&[3.161, 2.123], Classification::Saddle, 2e-2),
        ])),
        notes: Vec::new(),
    }
}

fn cassini_underactuated() -> Scenario {
    Scenario {
        name: "cassini-underactuated".into(),
        system: SystemSpec {
            a: mat(&[&[1.878, -6.247], &[-3.189, 6.731]]),
            b: mat(&[&[4.166], &[-8.172]]),
        },
        controller: ControllerSpec {
            k: mat(&[&[1.495, -1.515]]),
            convention: Convention::NegativeGain,
        },
        barrier: BarrierSpec::Cassini {
            a: 6.587,
            b: 6.591,
            c1: -5.0,
            c2: 0.0,
            safe_inside: true,
        },
        alpha: ClassKInf::linear(50.0),
        weight: WeightSpecSer::Identity,
        initial_conditions: InitialConditions::default(),
        analyses: vec![Analysis::Equilibria],
        integrator: None,
        topology: None,
        controller_sampling: None,
        r_phi: None,
        expectations: Some(expect(&[
            (&[5.431, 0.487], Classification::AsymptoticallyStable, 2e-2),
            (&[4.651, 0.417], Classification::Saddle, 2e-2),
        ])),
        notes: Vec::new(),
    }
}

fn cassini_obstacle_integrator() -> Scenario {
    let top = (3.15f64 * 3.15 - 9.0).sqrt() + 4.0;
    Scenario {
        name: "cassini-obstacle-integrator".into(),
        system: SystemSpec {
            a: mat(&[&[0.0, 0.0], &[0.0, 0.0]]),
            b: mat(&[&[1.0, 0.0], &[0.0, 1.0]]),
        },
        controller: ControllerSpec {
            k: mat(&[&[-1.0, 0.0], &[0.0, -1.0]]),
            convention: Convention::PositiveFeedback,
        },
        barrier: BarrierSpec::Cassini {
            a: 3.0,
            b: 3.15,
            c1: 0.0,
            c2: 4.0,
            safe_inside: false,
        },
        alpha: ClassKInf::linear(10.0),
        weight: WeightSpecSer::Identity,
        initial_conditions: InitialConditions::Explicit {
            states: vec![vec![0.0, 1.0], vec![2.0, 6.0]],
        },
        analyses: vec![Analysis::Equilibria, Analysis::Simulate],
        integrator: None,
        topology: None,
        controller_sampling: None,
        r_phi: None,
        expectations: Some(expect(&[(
            &[0.0, top],
            Classification::AsymptoticallyStable,
            1e-6,
        )])),
        notes: Vec::new(),
    }
}

fn cassini_obstacle_underactuated() -> Scenario {
    Scenario {
        name: "cassini-obstacle-underactuated".into(),
        system: SystemSpec {
            a: mat(&[&[0.268, 2.866], &[0.151, 1.526]]),
            b: mat(&[&[0.350], &[-0.151]]),
        },
        controller: ControllerSpec {
            k: mat(&[&[-41.72, -174.8]]),
            convention: Convention::NegativeGain,
        },
        barrier: BarrierSpec::Cassini {
            a: 3.684,
            b: 3.785,
            c1: 6.891,
            c2: 1.565,
            safe_inside: false,
        },
        alpha: ClassKInf::linear(10.0),
        weight: WeightSpecSer::Identity,
        initial_conditions: InitialConditions::default(),
        analyses: vec![Analysis::Equilibria],
        integrator: None,
        topology: None,
        controller_sampling: None,
        r_phi: None,
        expectations: Some(expect(&[
            (&[-7.061956, 0.681591], Classification::Saddle, 2e-2),
            (&[-2.197293, 0.212074], Classification::Saddle, 2e-2),
            (
                &[-6.519170, 0.629204],
                Classification::AsymptoticallyStable,
                2e-2,
            ),
        ])),
        notes: Vec::new(),
    }
}

fn union_circles() -> Result<Scenario> {
    use union_circles_params::*;
    // A concrete stabilizing base gain; the sampling block redraws 20 of them.
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let a = DMatrix::from_row_slice(2, 2, &[A[0][0], A[0][1], A[1][0], A[1][1]]);
    let b = DMatrix::from_row_slice(2, 1, &B);
    let k = crate::samplers::sample_stabilizing_k(&mut rng, &a, &b, 0.05, 100_000)
        .ok_or_else(|| Error::Numerical("no stabilizing base gain found".into()))?;
    let notes = union_circles_preflight()
        .into_iter()
        .map(|(label, ok)| format!("preflight: {label}: {}", if ok { "ok" } else { "VIOLATED" }))
        .collect();
    Ok(Scenario {
        name: "union-circles".into(),
        system: SystemSpec {
            a: mat(&[&A[0], &A[1]]),
            b: mat(&[&[B[0]], &[B[1]]]),
        },
        controller: ControllerSpec {
            k: from_dmatrix(&k),
            convention: Convention::NegativeGain,
        },
        barrier: BarrierSpec::UnionCircles {
            c1: C1,
            c2: C2,
            r1: R1,
        },
        alpha: ClassKInf::linear(ALPHA0),
        weight: WeightSpecSer::Identity,
        initial_conditions: InitialConditions::default(),
        analyses: vec![Analysis::Equilibria],
        integrator: None,
        topology: None,
        controller_sampling: Some(ControllerSampling {
            count: 20,
            seed: 2024,
            hurwitz_margin: 0.05,
        }),
        r_phi: None,
        expectations: Some(expect(&[(
            &[3.157, 7.619],
            Classification::AsymptoticallyStable,
            2e-2,
        )])),
        notes,
    })
}

fn continuum() -> Scenario {
    Scenario {
        name: "continuum".into(),
        system: SystemSpec {
            a: mat(&[&[0.0, -1.0], &[1.0, -2.0]]),
            b: mat(&[&[0.0], &[1.0]]),
        },
        controller: ControllerSpec {
            k: mat(&[&[0.0, 0.0]]),
            convention: Convention::NegativeGain,
        },
        barrier: BarrierSpec::PiecewiseParabolic,
        alpha: ClassKInf::linear(10.0),
        weight: WeightSpecSer::Identity,
        initial_conditions: InitialConditions::Explicit {
            states: vec![vec![-1.5, 1.0], vec![0.5, 0.5]],
        },
        analyses: vec![Analysis::Equilibria, Analysis::Simulate],
        integrator: None,
        topology: None,
        controller_sampling: None,
        r_phi: None,
        expectations: Some(Expectations {
            continuum: true,
            ..Expectations::default()
        }),
        notes: Vec::new(),
    }
}

fn limit_cycle_3d() -> Scenario {
    let q = 0.84f64.sqrt();
    Scenario {
        name: "limit-cycle-3d".into(),
        system: SystemSpec {
            a: mat(&[
                &[-1.0, 0.0, 0.0],
                &[0.0, -6.0, 1.0],
                &[0.0, -1.0, -6.0],
            ]),
            b: mat(&[
                &[1.0, 0.0, 0.0],
                &[0.0, 1.0, 0.0],
                &[0.0, 0.0, 1.0],
            ]),
        },
        controller: ControllerSpec {
            k: mat(&[
                &[0.0, 0.0, 0.0],
                &[0.0, 0.0, 0.0],
                &[0.0, 0.0, 0.0],
            ]),
            convention: Convention::NegativeGain,
        },
        barrier: BarrierSpec::Sphere {
            center: vec![2.0, 0.0, 0.0],
            radius: 1.0,
            safe_inside: false,
        },
        alpha: ClassKInf::linear(10.0),
        weight: WeightSpecSer::Identity,
        initial_conditions: InitialConditions::Explicit {
            states: vec![vec![2.4, 0.0, q]],
        },
        analyses: vec![Analysis::Equilibria, Analysis::Simulate, Analysis::LimitCycle],
        integrator: Some(IntegratorCfg {
            dt: 2e-4,
            t_final: 4.0 * std::f64::consts::PI,
            ..IntegratorCfg::default()
        }),
        topology: None,
        controller_sampling: None,
        r_phi: None,
        expectations: Some(Expectations {
            equilibria: vec![
                ExpectedEquilibrium {
                    x: vec![3.0, 0.0, 0.0],
                    classification: Classification::AsymptoticallyStable,
                    tol: 1e-6,
                },
                ExpectedEquilibrium {
                    x: vec![1.0, 0.0, 0.0],
                    classification: Classification::PotentialOnly,
                    tol: 1e-6,
                },
            ],
            cycle_period: Some(std::f64::consts::TAU),
            ..Expectations::default()
        }),
        notes: Vec::new(),
    }
}

fn polar(name: &str, curve: crate::barrier::PolarCurve, seed: u64) -> Result<Scenario> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let inst = polar_instance(&mut rng, curve)?;
    let mut scenario = scenario_from_instance(name, &inst);
    scenario.expectations = Some(Expectations {
        no_undesired: true,
        ..Expectations::default()
    });
    Ok(scenario)
}

fn circle_underactuated_analytic() -> Result<Scenario> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let inst = underactuated_circle_instance(&mut rng)?;
    let record = underactuated_circle_equilibrium(&inst)?;
    let mut scenario = scenario_from_instance("circle-underactuated-analytic", &inst);
    scenario.analyses = vec![Analysis::Equilibria, Analysis::CaseAnalysis];
    scenario.expectations = Some(Expectations {
        equilibria: vec![ExpectedEquilibrium {
            x: record.x.as_slice().to_vec(),
            classification: record.classification,
            tol: 1e-6,
        }],
        ..Expectations::default()
    });
    Ok(scenario)
}

fn halfplane_unbounded() -> Scenario {
    Scenario {
        name: "halfplane-unbounded".into(),
        system: SystemSpec {
            a: mat(&[&[1.0, 1.0], &[0.0, 1.0]]),
            b: mat(&[&[0.0], &[1.0]]),
        },
        controller: ControllerSpec {
            k: mat(&[&[0.0, 0.0]]),
            convention: Convention::NegativeGain,
        },
        barrier: BarrierSpec::Halfplane {
            normal: vec![0.0, 1.0],
            offset: 1.0,
        },
        alpha: ClassKInf::linear(10.0),
        weight: WeightSpecSer::Identity,
        initial_conditions: InitialConditions::Explicit {
            states: vec![vec![2.0, 1.5], vec![5.0, 2.0]],
        },
        analyses: vec![Analysis::Simulate, Analysis::UnboundedCert],
        integrator: Some(IntegratorCfg {
            t_final: 15.0,
            ..IntegratorCfg::default()
        }),
        topology: None,
        controller_sampling: None,
        r_phi: None,
        expectations: Some(Expectations {
            diverges: true,
            ..Expectations::default()
        }),
        notes: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_scenario_builds_and_round_trips() {
        for name in BUNDLED_NAMES {
            let scenario = bundled_scenario(name).unwrap();
            assert_eq!(scenario.name, name);
            let json = scenario.to_json().unwrap();
            let back = Scenario::from_json(&json).unwrap();
            assert_eq!(scenario, back, "round trip changed {name}");
            assert_eq!(json, back.to_json().unwrap());
            scenario.instance().unwrap();
        }
    }

    #[test]
    fn unknown_name_is_a_config_error() {
        assert!(matches!(
            bundled_scenario("nope"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn union_circles_preflight_holds() {
        for (label, ok) in union_circles_preflight() {
            assert!(ok, "condition failed: {label}");
        }
    }
}
