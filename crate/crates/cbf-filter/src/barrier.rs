//! Barrier functions: built-in families with analytic values, gradients, and
//! boundary parametrizations used by the equilibrium scanner.

use crate::error::{Error, Result};
use crate::model::ClassKInf;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Polar boundary description rho = r(theta) for star-shaped safe sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum PolarCurve {
    /// r(theta) = 1 / sqrt(c_cos2 cos^2 + c_sin2 sin^2); an ellipse for positive
    /// coefficients.
    Ellipse { c_cos2: f64, c_sin2: f64 },
    /// r(theta) = scale * sqrt(cos 2theta + sqrt(ecc^4 - sin^2 2theta)), the polar
    /// form of a connected oval of Cassini; requires ecc > 1.
    CassiniOval { scale: f64, ecc: f64 },
    /// r(theta) = base + amp cos(lobes * theta); requires base > |amp|.
    Flower { base: f64, amp: f64, lobes: u32 },
}

impl PolarCurve {
    pub fn r(&self, theta: f64) -> f64 {
        match *self {
            PolarCurve::Ellipse { c_cos2, c_sin2 } => {
                1.0 / (c_cos2 * theta.cos().powi(2) + c_sin2 * theta.sin().powi(2)).sqrt()
            }
            PolarCurve::CassiniOval { scale, ecc } => {
                let s2 = (2.0 * theta).sin();
                scale * ((2.0 * theta).cos() + (ecc.powi(4) - s2 * s2).sqrt()).sqrt()
            }
            PolarCurve::Flower { base, amp, lobes } => base + amp * (lobes as f64 * theta).cos(),
        }
    }

    pub fn dr(&self, theta: f64) -> f64 {
        match *self {
            PolarCurve::Ellipse { c_cos2, c_sin2 } => {
                let r = self.r(theta);
                -0.5 * r.powi(3) * (c_sin2 - c_cos2) * (2.0 * theta).sin()
            }
            PolarCurve::CassiniOval { scale, ecc } => {
                let s2 = (2.0 * theta).sin();
                let root = (ecc.powi(4) - s2 * s2).sqrt();
                let q = (2.0 * theta).cos() + root;
                let dq = -2.0 * s2 - (4.0 * theta).sin() / root;
                scale * dq / (2.0 * q.sqrt())
            }
            PolarCurve::Flower { base: _, amp, lobes } => {
                -amp * lobes as f64 * (lobes as f64 * theta).sin()
            }
        }
    }
}

/// Built-in barrier families. The safe set is C = { x : h(x) >= 0 }.
#[derive(Debug, Clone)]
pub enum BarrierFamily {
    /// h = ||x - center||^2 - radius^2 (obstacle) or its negation (bounded safe
    /// ball) when `safe_inside` is set. Dimension follows `center`.
    Sphere {
        center: DVector<f64>,
        radius: f64,
        safe_inside: bool,
    },
    /// h = (x - center)^T P (x - center) - 1 with P positive definite: an
    /// ellipsoidal obstacle.
    QuadraticForm { p: DMatrix<f64>, center: DVector<f64> },
    /// Quartic with foci (a - c1, c2) and (-(a + c1), c2):
    /// h = prod - b^4 (obstacle) or b^4 - prod (bounded safe oval interior).
    Cassini {
        a: f64,
        b: f64,
        c1: f64,
        c2: f64,
        safe_inside: bool,
    },
    /// h = normal^T x - offset.
    Halfplane { normal: DVector<f64>, offset: f64 },
    /// Safe set inside the polar curve: h = r(theta)^2 - ||x||^2.
    PolarRadius(PolarCurve),
    /// Piecewise C^1 barrier whose zero set contains a flat segment on the x1 axis.
    PiecewiseParabolic,
    /// Union of a lower half-annulus centred at (0, c2) and two upper half-discs
    /// of radius r1 centred at (+-c1, c2); safe everywhere outside.
    UnionCircles { c1: f64, c2: f64, r1: f64 },
}

/// A barrier function plus the extended class-K-infinity function it is used with.
#[derive(Debug, Clone)]
pub struct Barrier {
    pub family: BarrierFamily,
    pub alpha: ClassKInf,
}

impl Barrier {
    pub fn dim(&self) -> usize {
        match &self.family {
            BarrierFamily::Sphere { center, .. } => center.len(),
            BarrierFamily::QuadraticForm { center, .. } => center.len(),
            BarrierFamily::Halfplane { normal, .. } => normal.len(),
            _ => 2,
        }
    }

    pub fn h(&self, x: &DVector<f64>) -> f64 {
        match &self.family {
            BarrierFamily::Sphere {
                center,
                radius,
                safe_inside,
            } => {
                let d2 = (x - center).norm_squared();
                let v = d2 - radius * radius;
                if *safe_inside {
                    -v
                } else {
                    v
                }
            }
            BarrierFamily::QuadraticForm { p, center } => {
                let d = x - center;
                d.dot(&(p * &d)) - 1.0
            }
            BarrierFamily::Cassini {
                a,
                b,
                c1,
                c2,
                safe_inside,
            } => {
                let (pf, qf) = cassini_foci(*a, *c1, *c2);
                let prod = (x - &pf).norm_squared() * (x - &qf).norm_squared();
                let v = prod - b.powi(4);
                if *safe_inside {
                    -v
                } else {
                    v
                }
            }
            BarrierFamily::Halfplane { normal, offset } => normal.dot(x) - offset,
            BarrierFamily::PolarRadius(curve) => {
                let theta = x[1].atan2(x[0]);
                let r = curve.r(theta);
                r * r - x.norm_squared()
            }
            BarrierFamily::PiecewiseParabolic => {
                let (x1, x2) = (x[0], x[1]);
                if x1 >= -1.0 {
                    (x1 + 1.0).powi(2) + x2
                } else if x1 > -2.0 {
                    x2
                } else {
                    (x1 + 2.0).powi(2) + x2
                }
            }
            BarrierFamily::UnionCircles { c1, c2, r1 } => {
                let (r, big_r) = (c1 - r1, c1 + r1);
                if x[1] <= *c2 {
                    let rho2 = x[0] * x[0] + (x[1] - c2).powi(2);
                    (rho2 - r * r) * (rho2 - big_r * big_r)
                } else {
                    let u = (x[0] + c1).powi(2) + (x[1] - c2).powi(2);
                    let v = (x[0] - c1).powi(2) + (x[1] - c2).powi(2);
                    (u - r1 * r1) * (v - r1 * r1)
                }
            }
        }
    }

    pub fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.family {
            BarrierFamily::Sphere {
                center,
                radius: _,
                safe_inside,
            } => {
                let g = 2.0 * (x - center);
                if *safe_inside {
                    -g
                } else {
                    g
                }
            }
            BarrierFamily::QuadraticForm { p, center } => 2.0 * (p * (x - center)),
            BarrierFamily::Cassini {
                a,
                b: _,
                c1,
                c2,
                safe_inside,
            } => {
                let (pf, qf) = cassini_foci(*a, *c1, *c2);
                let dp = x - &pf;
                let dq = x - &qf;
                let g = 2.0 * (&dp * dq.norm_squared() + &dq * dp.norm_squared());
                if *safe_inside {
                    -g
                } else {
                    g
                }
            }
            BarrierFamily::Halfplane { normal, .. } => normal.clone(),
            BarrierFamily::PolarRadius(curve) => {
                let theta = x[1].atan2(x[0]);
                let rho2 = x.norm_squared();
                let r = curve.r(theta);
                let dr = curve.dr(theta);
                DVector::from_vec(vec![
                    -2.0 * x[0] - 2.0 * r * dr * x[1] / rho2,
                    -2.0 * x[1] + 2.0 * r * dr * x[0] / rho2,
                ])
            }
            BarrierFamily::PiecewiseParabolic => {
                let x1 = x[0];
                if x1 >= -1.0 {
                    DVector::from_vec(vec![2.0 * (x1 + 1.0), 1.0])
                } else if x1 > -2.0 {
                    DVector::from_vec(vec![0.0, 1.0])
                } else {
                    DVector::from_vec(vec![2.0 * (x1 + 2.0), 1.0])
                }
            }
            BarrierFamily::UnionCircles { c1, c2, r1 } => {
                let (r, big_r) = (c1 - r1, c1 + r1);
                if x[1] <= *c2 {
                    let d = DVector::from_vec(vec![x[0], x[1] - c2]);
                    let rho2 = d.norm_squared();
                    2.0 * d * (2.0 * rho2 - r * r - big_r * big_r)
                } else {
                    let dl = DVector::from_vec(vec![x[0] + c1, x[1] - c2]);
                    let dr_ = DVector::from_vec(vec![x[0] - c1, x[1] - c2]);
                    let u = dl.norm_squared();
                    let v = dr_.norm_squared();
                    2.0 * (dl * (v - r1 * r1) + dr_ * (u - r1 * r1))
                }
            }
        }
    }

    /// Parametrized components of the boundary, used by the planar scanner.
    pub fn boundary_curves(&self) -> Result<Vec<BoundaryCurve>> {
        match &self.family {
            BarrierFamily::Sphere { center, radius, .. } => {
                if center.len() != 2 {
                    return Err(Error::UnsupportedDimension(center.len()));
                }
                Ok(vec![BoundaryCurve::CircleArc {
                    center: center.clone(),
                    r: *radius,
                    t0: 0.0,
                    t1: std::f64::consts::TAU,
                    closed: true,
                }])
            }
            BarrierFamily::QuadraticForm { p, center } => {
                let e = spd_sqrt(p)?;
                let einv = e
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| Error::Numerical("singular ellipse factor".into()))?;
                Ok(vec![BoundaryCurve::EllipseCurve {
                    center: center.clone(),
                    einv,
                }])
            }
            BarrierFamily::Cassini { a, b, c1, c2, .. } => {
                if b <= a {
                    return Err(Error::Config(
                        "Cassini boundary parametrization requires b > a (connected oval)".into(),
                    ));
                }
                Ok(vec![BoundaryCurve::CassiniPolar {
                    mid: DVector::from_vec(vec![-c1, *c2]),
                    a: *a,
                    b: *b,
                }])
            }
            BarrierFamily::Halfplane { normal, offset } => {
                if normal.len() != 2 {
                    return Err(Error::UnsupportedDimension(normal.len()));
                }
                let n2 = normal.norm_squared();
                let p0 = normal * (offset / n2);
                let dir = DVector::from_vec(vec![-normal[1], normal[0]]) / n2.sqrt();
                Ok(vec![BoundaryCurve::Segment {
                    p0,
                    dir,
                    s0: -50.0,
                    s1: 50.0,
                }])
            }
            BarrierFamily::PolarRadius(curve) => Ok(vec![BoundaryCurve::Polar(*curve)]),
            BarrierFamily::PiecewiseParabolic => Ok(vec![BoundaryCurve::PiecewiseGraph {
                s0: -10.0,
                s1: 10.0,
            }]),
            BarrierFamily::UnionCircles { c1, c2, r1 } => {
                use std::f64::consts::PI;
                let (r, big_r) = (c1 - r1, c1 + r1);
                let low = DVector::from_vec(vec![0.0, *c2]);
                Ok(vec![
                    // Lower inner semicircle of the annulus.
                    BoundaryCurve::CircleArc {
                        center: low.clone(),
                        r,
                        t0: PI,
                        t1: 2.0 * PI,
                        closed: false,
                    },
                    // Lower outer semicircle of the annulus.
                    BoundaryCurve::CircleArc {
                        center: low,
                        r: big_r,
                        t0: PI,
                        t1: 2.0 * PI,
                        closed: false,
                    },
                    // Upper semicircles capping the annulus ends.
                    BoundaryCurve::CircleArc {
                        center: DVector::from_vec(vec![-c1, *c2]),
                        r: *r1,
                        t0: 0.0,
                        t1: PI,
                        closed: false,
                    },
                    BoundaryCurve::CircleArc {
                        center: DVector::from_vec(vec![*c1, *c2]),
                        r: *r1,
                        t0: 0.0,
                        t1: PI,
                        closed: false,
                    },
                ])
            }
        }
    }

    /// True when the origin lies strictly inside the safe set.
    pub fn origin_interior(&self) -> bool {
        self.h(&DVector::zeros(self.dim())) > 0.0
    }

    /// Samples a state in the general vicinity of the boundary, for randomized
    /// gradient checks.
    pub fn sample_state<R: rand::Rng>(&self, rng: &mut R) -> DVector<f64> {
        if let BarrierFamily::Sphere { center, radius, .. } = &self.family {
            if center.len() == 3 {
                let dir = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0)).normalize();
                return center + dir * (radius * rng.gen_range(0.5..1.5));
            }
        }
        let curves = match self.boundary_curves() {
            Ok(c) => c,
            Err(_) => return DVector::from_fn(self.dim(), |_, _| rng.gen_range(-3.0..3.0)),
        };
        let curve = &curves[rng.gen_range(0..curves.len())];
        let p = curve.point(rng.gen_range(0.0..1.0));
        DVector::from_fn(p.len(), |i, _| p[i] + rng.gen_range(-0.3..0.3))
    }

    /// Finite-difference gradient consistency check at 20 random states.
    pub fn check_gradient<R: rand::Rng>(&self, rng: &mut R) -> Result<()> {
        let n = self.dim();
        for _ in 0..20 {
            let x = self.sample_state(rng);
            // Keep clear of the kink lines of the piecewise families so the
            // one-sided difference stays on a single branch.
            let grad = self.grad(&x);
            let mut fd = DVector::zeros(n);
            let step = 1e-6 * (1.0 + x.amax());
            for i in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += step;
                xm[i] -= step;
                fd[i] = (self.h(&xp) - self.h(&xm)) / (2.0 * step);
            }
            let tol = 1e-5 * (1.0 + grad.amax());
            if (grad - fd).amax() > tol {
                return Err(Error::Numerical(format!(
                    "gradient check failed at x = {:?}",
                    x.as_slice()
                )));
            }
        }
        Ok(())
    }
}

fn cassini_foci(a: f64, c1: f64, c2: f64) -> (DVector<f64>, DVector<f64>) {
    (
        DVector::from_vec(vec![a - c1, c2]),
        DVector::from_vec(vec![-(a + c1), c2]),
    )
}

/// Principal (symmetric positive definite) square root.
pub fn spd_sqrt(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = p.clone().symmetric_eigen();
    if eig.eigenvalues.min() <= 0.0 {
        return Err(Error::Config("matrix is not positive definite".into()));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// One parametrized component (or arc) of a safe-set boundary. The parameter `t`
/// always runs over [0, 1].
#[derive(Debug, Clone)]
pub enum BoundaryCurve {
    CircleArc {
        center: DVector<f64>,
        r: f64,
        t0: f64,
        t1: f64,
        closed: bool,
    },
    EllipseCurve {
        center: DVector<f64>,
        einv: DMatrix<f64>,
    },
    CassiniPolar {
        mid: DVector<f64>,
        a: f64,
        b: f64,
    },
    Polar(PolarCurve),
    Segment {
        p0: DVector<f64>,
        dir: DVector<f64>,
        s0: f64,
        s1: f64,
    },
    PiecewiseGraph {
        s0: f64,
        s1: f64,
    },
}

impl BoundaryCurve {
    pub fn closed(&self) -> bool {
        match self {
            BoundaryCurve::CircleArc { closed, .. } => *closed,
            BoundaryCurve::EllipseCurve { .. }
            | BoundaryCurve::CassiniPolar { .. }
            | BoundaryCurve::Polar(_) => true,
            BoundaryCurve::Segment { .. } | BoundaryCurve::PiecewiseGraph { .. } => false,
        }
    }

    pub fn point(&self, t: f64) -> DVector<f64> {
        use std::f64::consts::TAU;
        match self {
            BoundaryCurve::CircleArc {
                center, r, t0, t1, ..
            } => {
                let th = t0 + (t1 - t0) * t;
                center + DVector::from_vec(vec![r * th.cos(), r * th.sin()])
            }
            BoundaryCurve::EllipseCurve { center, einv } => {
                let th = TAU * t;
                center + einv * DVector::from_vec(vec![th.cos(), th.sin()])
            }
            BoundaryCurve::CassiniPolar { mid, a, b } => {
                let th = TAU * t;
                let s2 = (2.0 * th).sin();
                let rho2 = a * a * (2.0 * th).cos() + (b.powi(4) - a.powi(4) * s2 * s2).sqrt();
                let rho = rho2.max(0.0).sqrt();
                mid + DVector::from_vec(vec![rho * th.cos(), rho * th.sin()])
            }
            BoundaryCurve::Polar(curve) => {
                let th = TAU * t;
                let r = curve.r(th);
                DVector::from_vec(vec![r * th.cos(), r * th.sin()])
            }
            BoundaryCurve::Segment { p0, dir, s0, s1 } => p0 + dir * (s0 + (s1 - s0) * t),
            BoundaryCurve::PiecewiseGraph { s0, s1 } => {
                let x1 = s0 + (s1 - s0) * t;
                let x2 = if x1 >= -1.0 {
                    -(x1 + 1.0).powi(2)
                } else if x1 > -2.0 {
                    0.0
                } else {
                    -(x1 + 2.0).powi(2)
                };
                DVector::from_vec(vec![x1, x2])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn families() -> Vec<Barrier> {
        vec![
            Barrier {
                family: BarrierFamily::Sphere {
                    center: dvector![2.0, 0.0],
                    radius: 1.0,
                    safe_inside: false,
                },
                alpha: ClassKInf::linear(10.0),
            },
            Barrier {
                family: BarrierFamily::Sphere {
                    center: dvector![0.0, 2.0],
                    radius: 10f64.sqrt(),
                    safe_inside: true,
                },
                alpha: ClassKInf::linear(50.0),
            },
            Barrier {
                family: BarrierFamily::QuadraticForm {
                    p: nalgebra::dmatrix![0.25, 0.0; 0.0, 1.0],
                    center: dvector![3.0, 1.0],
                },
                alpha: ClassKInf::linear(10.0),
            },
            Barrier {
                family: BarrierFamily::Cassini {
                    a: 3.0,
                    b: 3.15,
                    c1: 0.0,
                    c2: 4.0,
                    safe_inside: false,
                },
                alpha: ClassKInf::linear(10.0),
            },
            Barrier {
                family: BarrierFamily::Cassini {
                    a: 6.587,
                    b: 6.591,
                    c1: -5.0,
                    c2: 0.0,
                    safe_inside: true,
                },
                alpha: ClassKInf::linear(50.0),
            },
            Barrier {
                family: BarrierFamily::Halfplane {
                    normal: dvector![0.0, 1.0],
                    offset: 1.0,
                },
                alpha: ClassKInf::linear(10.0),
            },
            Barrier {
                family: BarrierFamily::PolarRadius(PolarCurve::Ellipse {
                    c_cos2: 3.0,
                    c_sin2: 1.0,
                }),
                alpha: ClassKInf::linear(10.0),
            },
            Barrier {
                family: BarrierFamily::PolarRadius(PolarCurve::CassiniOval {
                    scale: 3.0,
                    ecc: 1.03,
                }),
                alpha: ClassKInf::linear(10.0),
            },
            Barrier {
                family: BarrierFamily::PolarRadius(PolarCurve::Flower {
                    base: 3.0,
                    amp: 2.0,
                    lobes: 3,
                }),
                alpha: ClassKInf::linear(10.0),
            },
            Barrier {
                family: BarrierFamily::UnionCircles {
                    c1: 6.1,
                    c2: 10.027,
                    r1: 2.129,
                },
                alpha: ClassKInf::linear(10.0),
            },
        ]
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for b in families() {
            b.check_gradient(&mut rng).unwrap();
        }
    }

    #[test]
    fn piecewise_gradient_away_from_kinks() {
        let b = Barrier {
            family: BarrierFamily::PiecewiseParabolic,
            alpha: ClassKInf::linear(10.0),
        };
        for x1 in [-3.0, -2.5, -1.7, -1.3, -0.5, 0.5] {
            let x = dvector![x1, 0.3];
            let g = b.grad(&x);
            let step = 1e-6;
            for i in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += step;
                xm[i] -= step;
                let fd = (b.h(&xp) - b.h(&xm)) / (2.0 * step);
                assert!((g[i] - fd).abs() < 1e-5, "x1 = {x1}, i = {i}");
            }
        }
    }

    #[test]
    fn boundary_points_lie_on_zero_level() {
        for b in families() {
            for curve in b.boundary_curves().unwrap() {
                for k in 0..200 {
                    let t = k as f64 / 200.0;
                    let p = curve.point(t);
                    assert!(
                        b.h(&p).abs() < 1e-8 * (1.0 + p.norm_squared().powi(2)),
                        "family {:?} off-boundary at t = {t}: h = {}",
                        b.family,
                        b.h(&p)
                    );
                }
            }
        }
    }

    #[test]
    fn union_circles_is_c1_at_the_seam() {
        let b = Barrier {
            family: BarrierFamily::UnionCircles {
                c1: 6.1,
                c2: 10.027,
                r1: 2.129,
            },
            alpha: ClassKInf::linear(10.0),
        };
        for x1 in [-9.0, -5.0, -2.0, 0.0, 3.0, 6.1, 9.0] {
            let above = b.grad(&dvector![x1, 10.027 + 1e-9]);
            let below = b.grad(&dvector![x1, 10.027 - 1e-9]);
            assert!((above - below).amax() < 1e-5, "seam jump at x1 = {x1}");
        }
    }

    #[test]
    fn origin_interior_flags() {
        let bs = families();
        assert!(!bs[0].origin_interior() == false); // obstacle away from origin
        assert!(bs[1].origin_interior());
        assert!(bs[3].origin_interior()); // Cassini obstacle above origin
        assert!(bs[4].origin_interior()); // bounded Cassini oval contains origin
        let hp = &bs[5];
        assert!(!hp.origin_interior()); // origin on the unsafe side of x2 >= 1
    }

    #[test]
    fn polar_curves_positive_and_periodic() {
        for c in [
            PolarCurve::Ellipse {
                c_cos2: 3.0,
                c_sin2: 1.0,
            },
            PolarCurve::CassiniOval {
                scale: 3.0,
                ecc: 1.03,
            },
            PolarCurve::Flower {
                base: 3.0,
                amp: 2.0,
                lobes: 3,
            },
        ] {
            for k in 0..500 {
                let th = std::f64::consts::TAU * k as f64 / 500.0;
                assert!(c.r(th) > 0.0);
                let fd = (c.r(th + 1e-6) - c.r(th - 1e-6)) / 2e-6;
                assert!((c.dr(th) - fd).abs() < 1e-5 * (1.0 + c.dr(th).abs()));
            }
            assert!((c.r(0.1) - c.r(0.1 + std::f64::consts::TAU)).abs() < 1e-12);
        }
    }
}
