//! Scenario files: a JSON-serializable description of a problem instance plus
//! the analyses to run on it, the analysis driver, and the artifact writers
//! (trajectories.csv, equilibria.json, report.json, phase.svg / phase3d.svg).

use crate::barrier::{Barrier, BarrierFamily, PolarCurve};
use crate::equilibria::{
    check_count_structure, find_undesired_equilibria, ContinuumDiagnosis, EquilibriumRecord,
    ScanConfig, ScanOutcome, StructureReport, Topology,
};
use crate::error::{Error, Result};
use crate::linear_planar::{
    eigenvector_angle, eigenvector_case_analysis, general_case_roots,
    underactuated_circle_equilibrium,
};
use crate::model::{
    ClassKInf, ControllerDef, Convention, ProblemInstance, SystemDef, WeightSpec,
};
use crate::samplers::sample_stabilizing_k;
use crate::sim::{
    detect_limit_cycle, integrate, tune_alpha_for_boundedness, unboundedness_certificate,
    IntegratorCfg, Trajectory, TunedRegion, Verdict,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::Path;

/// Row-major matrix literal used by the on-disk format.
pub type MatrixSpec = Vec<Vec<f64>>;

fn to_matrix(rows: &MatrixSpec, what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::Scenario(format!("{what}: empty matrix")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Scenario(format!("{what}: ragged matrix rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn from_matrix(m: &DMatrix<f64>) -> MatrixSpec {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub a: MatrixSpec,
    pub b: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSpec {
    pub k: MatrixSpec,
    pub convention: Convention,
}

/// Serializable mirror of [`BarrierFamily`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum BarrierSpec {
    Sphere {
        center: Vec<f64>,
        radius: f64,
        safe_inside: bool,
    },
    QuadraticForm {
        p: MatrixSpec,
        center: Vec<f64>,
    },
    Cassini {
        a: f64,
        b: f64,
        c1: f64,
        c2: f64,
        safe_inside: bool,
    },
    Halfplane {
        normal: Vec<f64>,
        offset: f64,
    },
    PolarRadius {
        curve: PolarCurve,
    },
    PiecewiseParabolic,
    UnionCircles {
        c1: f64,
        c2: f64,
        r1: f64,
    },
}

impl BarrierSpec {
    pub fn family(&self) -> Result<BarrierFamily> {
        Ok(match self {
            BarrierSpec::Sphere {
                center,
                radius,
                safe_inside,
            } => BarrierFamily::Sphere {
                center: DVector::from_vec(center.clone()),
                radius: *radius,
                safe_inside: *safe_inside,
            },
            BarrierSpec::QuadraticForm { p, center } => BarrierFamily::QuadraticForm {
                p: to_matrix(p, "barrier.p")?,
                center: DVector::from_vec(center.clone()),
            },
            BarrierSpec::Cassini {
                a,
                b,
                c1,
                c2,
                safe_inside,
            } => BarrierFamily::Cassini {
                a: *a,
                b: *b,
                c1: *c1,
                c2: *c2,
                safe_inside: *safe_inside,
            },
            BarrierSpec::Halfplane { normal, offset } => BarrierFamily::Halfplane {
                normal: DVector::from_vec(normal.clone()),
                offset: *offset,
            },
            BarrierSpec::PolarRadius { curve } => BarrierFamily::PolarRadius(*curve),
            BarrierSpec::PiecewiseParabolic => BarrierFamily::PiecewiseParabolic,
            BarrierSpec::UnionCircles { c1, c2, r1 } => BarrierFamily::UnionCircles {
                c1: *c1,
                c2: *c2,
                r1: *r1,
            },
        })
    }

    pub fn from_family(f: &BarrierFamily) -> Self {
        match f {
            BarrierFamily::Sphere {
                center,
                radius,
                safe_inside,
            } => BarrierSpec::Sphere {
                center: center.as_slice().to_vec(),
                radius: *radius,
                safe_inside: *safe_inside,
            },
            BarrierFamily::QuadraticForm { p, center } => BarrierSpec::QuadraticForm {
                p: from_matrix(p),
                center: center.as_slice().to_vec(),
            },
            BarrierFamily::Cassini {
                a,
                b,
                c1,
                c2,
                safe_inside,
            } => BarrierSpec::Cassini {
                a: *a,
                b: *b,
                c1: *c1,
                c2: *c2,
                safe_inside: *safe_inside,
            },
            BarrierFamily::Halfplane { normal, offset } => BarrierSpec::Halfplane {
                normal: normal.as_slice().to_vec(),
                offset: *offset,
            },
            BarrierFamily::PolarRadius(curve) => BarrierSpec::PolarRadius { curve: *curve },
            BarrierFamily::PiecewiseParabolic => BarrierSpec::PiecewiseParabolic,
            BarrierFamily::UnionCircles { c1, c2, r1 } => BarrierSpec::UnionCircles {
                c1: *c1,
                c2: *c2,
                r1: *r1,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum WeightSpecSer {
    #[default]
    Identity,
    Constant {
        g: MatrixSpec,
    },
}

/// Explicit start states or a seeded sampler drawing from the safe set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum InitialConditions {
    Explicit { states: Vec<Vec<f64>> },
    SafeBall { count: usize, seed: u64, radius: f64 },
}

impl Default for InitialConditions {
    fn default() -> Self {
        InitialConditions::Explicit { states: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Analysis {
    Simulate,
    Equilibria,
    CaseAnalysis,
    BoundedTune,
    UnboundedCert,
    LimitCycle,
    StructureCheck,
}

impl Analysis {
    fn label(&self) -> &'static str {
        match self {
            Analysis::Simulate => "simulate",
            Analysis::Equilibria => "equilibria",
            Analysis::CaseAnalysis => "case-analysis",
            Analysis::BoundedTune => "bounded-tune",
            Analysis::UnboundedCert => "unbounded-cert",
            Analysis::LimitCycle => "limit-cycle",
            Analysis::StructureCheck => "structure-check",
        }
    }
}

/// Seeded random draws of stabilizing gains: the analyses run once per gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerSampling {
    pub count: usize,
    pub seed: u64,
    pub hurwitz_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedEquilibrium {
    pub x: Vec<f64>,
    pub classification: crate::equilibria::Classification,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Expectations {
    #[serde(default)]
    pub equilibria: Vec<ExpectedEquilibrium>,
    /// The boundary carries a continuum of equilibria.
    #[serde(default)]
    pub continuum: bool,
    /// The undesired-equilibrium set is empty.
    #[serde(default)]
    pub no_undesired: bool,
    /// Every simulated trajectory escapes (verdict diverged).
    #[serde(default)]
    pub diverges: bool,
    /// A limit cycle of this period (relative tolerance 1%) is detected.
    #[serde(default)]
    pub cycle_period: Option<f64>,
}

/// One self-contained analysis job: an instance, start states, and requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub system: SystemSpec,
    pub controller: ControllerSpec,
    pub barrier: BarrierSpec,
    pub alpha: ClassKInf,
    #[serde(default)]
    pub weight: WeightSpecSer,
    #[serde(default)]
    pub initial_conditions: InitialConditions,
    pub analyses: Vec<Analysis>,
    #[serde(default)]
    pub integrator: Option<IntegratorCfg>,
    #[serde(default)]
    pub topology: Option<Topology>,
    #[serde(default)]
    pub controller_sampling: Option<ControllerSampling>,
    /// Covering radius for the boundedness tuning analysis.
    #[serde(default)]
    pub r_phi: Option<f64>,
    #[serde(default)]
    pub expectations: Option<Expectations>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl Scenario {
    pub fn instance(&self) -> Result<ProblemInstance> {
        let system = SystemDef::linear(
            to_matrix(&self.system.a, "system.a")?,
            to_matrix(&self.system.b, "system.b")?,
        )?;
        let controller = ControllerDef::new(
            to_matrix(&self.controller.k, "controller.k")?,
            self.controller.convention,
        );
        let barrier = Barrier {
            family: self.barrier.family()?,
            alpha: self.alpha,
        };
        let weight = match &self.weight {
            WeightSpecSer::Identity => WeightSpec::Identity,
            WeightSpecSer::Constant { g } => WeightSpec::Constant(to_matrix(g, "weight.g")?),
        };
        ProblemInstance::new(system, controller, barrier, weight)
    }

    pub fn integrator_cfg(&self) -> IntegratorCfg {
        self.integrator.unwrap_or_default()
    }

    pub fn initial_states(
        &self,
        inst: &ProblemInstance,
        seed_override: Option<u64>,
    ) -> Result<Vec<DVector<f64>>> {
        match &self.initial_conditions {
            InitialConditions::Explicit { states } => states
                .iter()
                .map(|s| {
                    if s.len() != inst.n() {
                        return Err(Error::Scenario(format!(
                            "initial state has dimension {}, system has n = {}",
                            s.len(),
                            inst.n()
                        )));
                    }
                    Ok(DVector::from_vec(s.clone()))
                })
                .collect(),
            InitialConditions::SafeBall {
                count,
                seed,
                radius,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed_override.unwrap_or(*seed));
                let radius = *radius;
                let n = inst.n();
                let mut out = Vec::with_capacity(*count);
                for _ in 0..*count {
                    let mut found = false;
                    for _ in 0..10_000 {
                        let x = DVector::from_fn(n, |_, _| rng.gen_range(-radius..radius));
                        if x.norm() <= radius && inst.barrier.h(&x) > 0.0 {
                            out.push(x);
                            found = true;
                            break;
                        }
                    }
                    if !found {
                        return Err(Error::Scenario(
                            "safe-ball sampler found no safe state".into(),
                        ));
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Scenario> {
        serde_json::from_str(text).map_err(|e| {
            Error::Scenario(format!(
                "parse failure at line {}, column {}: {}",
                e.line(),
                e.column(),
                e
            ))
        })
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path)?;
    Scenario::from_json(&text)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumSummary {
    pub x: Vec<f64>,
    pub delta: f64,
    pub residual: f64,
    pub classification: crate::equilibria::Classification,
    /// Jacobian eigenvalues as (re, im) pairs, when the Jacobian is defined.
    pub eigenvalues: Option<Vec<(f64, f64)>>,
}

impl EquilibriumSummary {
    pub fn from_record(r: &EquilibriumRecord) -> Self {
        Self {
            x: r.x.as_slice().to_vec(),
            delta: r.delta,
            residual: r.residual,
            classification: r.classification,
            eigenvalues: r
                .eigenvalues
                .as_ref()
                .map(|es| es.iter().map(|l| (l.re, l.im)).collect()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuumSummary {
    pub component: usize,
    pub root_count: usize,
    pub span: (Vec<f64>, Vec<f64>),
    pub sample_deltas: Vec<f64>,
    pub note: String,
}

impl ContinuumSummary {
    fn from_diagnosis(d: &ContinuumDiagnosis) -> Self {
        Self {
            component: d.component,
            root_count: d.root_count,
            span: (d.span.0.as_slice().to_vec(), d.span.1.as_slice().to_vec()),
            sample_deltas: d.sample_deltas.clone(),
            note: d.note.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub x0: Vec<f64>,
    pub verdict: Verdict,
    pub t_end: f64,
    pub min_h: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseSummary {
    pub branch: String,
    pub equilibria: Vec<EquilibriumSummary>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundedTuneSummary {
    pub slope: f64,
    pub region: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub c: Vec<f64>,
    pub zeta1: f64,
    pub zeta2: f64,
    pub region: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleSummary {
    pub period: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerRun {
    pub k: MatrixSpec,
    pub equilibria: Vec<EquilibriumSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisError {
    pub analysis: String,
    pub message: String,
}

/// Aggregated outputs of one scenario run; every entry traces to an analysis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub equilibria: Vec<EquilibriumSummary>,
    pub continuum: Option<ContinuumSummary>,
    pub trajectories: Vec<TrajectorySummary>,
    pub case_analysis: Option<CaseSummary>,
    pub bounded_tune: Option<BoundedTuneSummary>,
    pub unbounded_certificate: Option<CertificateSummary>,
    pub limit_cycle: Option<CycleSummary>,
    pub structure: Option<StructureReport>,
    pub controller_runs: Vec<ControllerRun>,
    pub errors: Vec<AnalysisError>,
    pub notes: Vec<String>,
    pub manifest: Vec<String>,
}

/// Command-line overrides applied on top of the scenario file.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOverrides {
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub seed: Option<u64>,
}

pub fn run_scenario(path: &Path, out_dir: &Path) -> Result<Report> {
    let scenario = load_scenario(path)?;
    run_scenario_with(&scenario, out_dir, &RunOverrides::default())
}

/// Computed analysis results kept in memory (full trajectories for the artifact
/// writers, on top of the serializable [`Report`]).
pub struct RunOutput {
    pub report: Report,
    pub trajectories: Vec<Trajectory>,
}

pub fn run_scenario_with(
    scenario: &Scenario,
    out_dir: &Path,
    overrides: &RunOverrides,
) -> Result<Report> {
    let out = execute_scenario(scenario, overrides)?;
    let inst = scenario.instance()?;
    let mut report = out.report;

    fs::create_dir_all(out_dir)?;
    let csv_name = "trajectories.csv";
    write_trajectories_csv(&out_dir.join(csv_name), inst.n(), &out.trajectories)?;
    let eq_name = "equilibria.json";
    write_equilibria_json(&out_dir.join(eq_name), &report)?;
    let svg_name = if inst.n() == 3 { "phase3d.svg" } else { "phase.svg" };
    write_phase_svg(&out_dir.join(svg_name), &inst, &out.trajectories, &report)?;

    report.manifest = vec![
        csv_name.to_string(),
        eq_name.to_string(),
        "report.json".to_string(),
        svg_name.to_string(),
    ];
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(out_dir.join("report.json"), json)?;
    Ok(report)
}

/// Runs the requested analyses without touching the filesystem. Analysis errors
/// are embedded per-request; only configuration errors abort the run.
pub fn execute_scenario(scenario: &Scenario, overrides: &RunOverrides) -> Result<RunOutput> {
    let inst = scenario.instance()?;
    let mut cfg = scenario.integrator_cfg();
    if let Some(dt) = overrides.dt {
        cfg.dt = dt;
    }
    if let Some(t) = overrides.horizon {
        cfg.t_final = t;
    }

    let mut report = Report {
        name: scenario.name.clone(),
        equilibria: Vec::new(),
        continuum: None,
        trajectories: Vec::new(),
        case_analysis: None,
        bounded_tune: None,
        unbounded_certificate: None,
        limit_cycle: None,
        structure: None,
        controller_runs: Vec::new(),
        errors: Vec::new(),
        notes: scenario.notes.clone(),
        manifest: Vec::new(),
    };
    let mut trajectories: Vec<Trajectory> = Vec::new();

    // The scan result feeds several analyses (simulation halts, structure
    // checks, phase-portrait markers), so run it whenever anything needs it.
    let needs_scan = scenario.analyses.iter().any(|a| {
        matches!(
            a,
            Analysis::Equilibria | Analysis::Simulate | Analysis::StructureCheck
        )
    });
    let mut scan: Option<ScanOutcome> = None;
    if needs_scan {
        match find_undesired_equilibria(&inst, &ScanConfig::default()) {
            Ok(outcome) => {
                report.equilibria = outcome
                    .records()
                    .iter()
                    .map(EquilibriumSummary::from_record)
                    .collect();
                if let ScanOutcome::Continuum(d) = &outcome {
                    report.continuum = Some(ContinuumSummary::from_diagnosis(d));
                }
                scan = Some(outcome);
            }
            Err(e) => report.errors.push(AnalysisError {
                analysis: Analysis::Equilibria.label().into(),
                message: e.to_string(),
            }),
        }
    }

    for analysis in &scenario.analyses {
        let result = match analysis {
            // The base scan already ran above; a sampling block repeats it per
            // drawn gain.
            Analysis::Equilibria => match scenario.controller_sampling {
                Some(sampling) => {
                    run_controller_sampling(&inst, sampling, overrides, &mut report)
                }
                None => Ok(()),
            },
            Analysis::Simulate => {
                run_simulate(scenario, &inst, &cfg, overrides, &scan, &mut report, &mut trajectories)
            }
            Analysis::CaseAnalysis => run_case_analysis(&inst, &mut report),
            Analysis::BoundedTune => {
                tune_alpha_for_boundedness(&inst, scenario.r_phi.unwrap_or(10.0)).map(
                    |(slope, region)| {
                        let region = match region {
                            TunedRegion::WholeSafeSet => "whole-safe-set".to_string(),
                            TunedRegion::Sublevel { c, .. } => {
                                format!("lyapunov-sublevel c = {c:.6}")
                            }
                        };
                        report.bounded_tune = Some(BoundedTuneSummary { slope, region });
                    },
                )
            }
            Analysis::UnboundedCert => run_unbounded_cert(&inst, &mut report),
            Analysis::LimitCycle => run_limit_cycle(&cfg, &scan, &trajectories, &mut report),
            Analysis::StructureCheck => {
                let topology = scenario.topology.ok_or_else(|| {
                    Error::Scenario("structure-check requires a topology field".into())
                });
                topology.and_then(|t| match &scan {
                    Some(outcome) => check_count_structure(outcome.records(), t)
                        .map(|r| report.structure = Some(r)),
                    None => Err(Error::Scenario(
                        "structure-check requires the equilibria scan".into(),
                    )),
                })
            }
        };
        if let Err(e) = result {
            report.errors.push(AnalysisError {
                analysis: analysis.label().into(),
                message: e.to_string(),
            });
        }
    }

    Ok(RunOutput {
        report,
        trajectories,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_simulate(
    scenario: &Scenario,
    inst: &ProblemInstance,
    cfg: &IntegratorCfg,
    overrides: &RunOverrides,
    scan: &Option<ScanOutcome>,
    report: &mut Report,
    trajectories: &mut Vec<Trajectory>,
) -> Result<()> {
    let known: Vec<DVector<f64>> = scan
        .as_ref()
        .map(|s| s.undesired().iter().map(|r| r.x.clone()).collect())
        .unwrap_or_default();
    for x0 in scenario.initial_states(inst, overrides.seed)? {
        let traj = integrate(inst, &x0, cfg, &known)?;
        report.trajectories.push(TrajectorySummary {
            x0: x0.as_slice().to_vec(),
            verdict: traj.verdict.clone(),
            t_end: *traj.times.last().unwrap_or(&0.0),
            min_h: traj.min_h,
        });
        trajectories.push(traj);
    }
    Ok(())
}

fn run_case_analysis(inst: &ProblemInstance, report: &mut Report) -> Result<()> {
    if inst.m() == 1 && inst.n() == 2 {
        let record = underactuated_circle_equilibrium(inst)?;
        report.case_analysis = Some(CaseSummary {
            branch: "underactuated-circle".into(),
            equilibria: vec![EquilibriumSummary::from_record(&record)],
            notes: Vec::new(),
        });
        return Ok(());
    }
    let (xc, r) = match &inst.barrier.family {
        BarrierFamily::Sphere {
            center,
            radius,
            safe_inside: false,
        } if center.len() == 2 => (center.clone(), *radius),
        _ => {
            return Err(Error::Config(
                "case analysis requires a planar circular obstacle".into(),
            ))
        }
    };
    let at = inst.a_tilde();
    let alpha0 = inst.barrier.alpha.deriv_at_zero();
    let case = if eigenvector_angle(&at, &xc) < 1e-10 {
        eigenvector_case_analysis(&at, &xc, r, alpha0)?
    } else {
        general_case_roots(&at, &xc, r)?
    };
    report.case_analysis = Some(CaseSummary {
        branch: case.branch.clone(),
        equilibria: case
            .records
            .iter()
            .map(EquilibriumSummary::from_record)
            .collect(),
        notes: case.notes.clone(),
    });
    Ok(())
}

fn run_unbounded_cert(inst: &ProblemInstance, report: &mut Report) -> Result<()> {
    let (a_vec, b) = match &inst.barrier.family {
        BarrierFamily::Halfplane { normal, offset } => (normal.clone(), *offset),
        _ => {
            return Err(Error::Config(
                "unboundedness certificates require a half-plane barrier".into(),
            ))
        }
    };
    match unboundedness_certificate(&inst.system.a, &inst.system.b, &a_vec, b)? {
        Some(cert) => {
            report.unbounded_certificate = Some(CertificateSummary {
                c: cert.c.as_slice().to_vec(),
                zeta1: cert.zeta1,
                zeta2: cert.zeta2,
                region: cert.region,
            });
            Ok(())
        }
        None => Err(Error::InconsistentInstance(
            "no unboundedness certificate exists for this instance".into(),
        )),
    }
}

fn run_limit_cycle(
    cfg: &IntegratorCfg,
    scan: &Option<ScanOutcome>,
    trajectories: &[Trajectory],
    report: &mut Report,
) -> Result<()> {
    let known: Vec<DVector<f64>> = scan
        .as_ref()
        .map(|s| s.undesired().iter().map(|r| r.x.clone()).collect())
        .unwrap_or_default();
    let traj = trajectories.first().ok_or_else(|| {
        Error::Scenario("limit-cycle detection requires a simulated trajectory".into())
    })?;
    match detect_limit_cycle(traj, &known, cfg) {
        Some(cycle) => {
            report.limit_cycle = Some(CycleSummary {
                period: cycle.period,
            });
            Ok(())
        }
        None => Err(Error::Numerical(
            "no recurrence found in the simulated trajectory".into(),
        )),
    }
}

fn run_controller_sampling(
    inst: &ProblemInstance,
    sampling: ControllerSampling,
    overrides: &RunOverrides,
    report: &mut Report,
) -> Result<()> {
    let seed = overrides.seed.unwrap_or(sampling.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for draw in 0..sampling.count {
        let k = sample_stabilizing_k(
            &mut rng,
            &inst.system.a,
            &inst.system.b,
            sampling.hurwitz_margin,
            100_000,
        )
        .ok_or_else(|| {
            Error::Numerical(format!(
                "no stabilizing gain found for controller draw {draw}"
            ))
        })?;
        let variant = ProblemInstance::new(
            inst.system.clone(),
            ControllerDef::new(k.clone(), Convention::NegativeGain),
            inst.barrier.clone(),
            inst.weight.clone(),
        )?;
        let outcome = find_undesired_equilibria(&variant, &ScanConfig::default())?;
        report.controller_runs.push(ControllerRun {
            k: from_matrix(&k),
            equilibria: outcome
                .records()
                .iter()
                .map(EquilibriumSummary::from_record)
                .collect(),
        });
    }
    Ok(())
}

/// Formats with 17 significant digits, enough to reconstruct the exact f64.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_trajectories_csv(path: &Path, n: usize, trajectories: &[Trajectory]) -> Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    let mut header = String::from("t");
    for i in 1..=n {
        header.push_str(&format!(",x{i}"));
    }
    header.push_str(",h,eta,u_norm");
    file.write_all(header.as_bytes())?;
    file.write_all(b"\n")?;
    for traj in trajectories {
        for (idx, t) in traj.times.iter().enumerate() {
            let mut row = fmt17(*t);
            for v in traj.states[idx].iter() {
                row.push(',');
                row.push_str(&fmt17(*v));
            }
            for v in [traj.h[idx], traj.eta[idx], traj.u_norm[idx]] {
                row.push(',');
                row.push_str(&fmt17(v));
            }
            file.write_all(row.as_bytes())?;
            file.write_all(b"\n")?;
        }
    }
    file.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct EquilibriaDocument<'a> {
    records: &'a [EquilibriumSummary],
    continuum: &'a Option<ContinuumSummary>,
}

fn write_equilibria_json(path: &Path, report: &Report) -> Result<()> {
    let doc = EquilibriaDocument {
        records: &report.equilibria,
        continuum: &report.continuum,
    };
    fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

fn classification_color(c: crate::equilibria::Classification) -> &'static str {
    use crate::equilibria::Classification::*;
    match c {
        AsymptoticallyStable => "#d62728",
        Saddle => "#ff7f0e",
        Degenerate => "#7f7f7f",
        PotentialOnly => "#1f77b4",
    }
}

fn classification_key(c: crate::equilibria::Classification) -> &'static str {
    use crate::equilibria::Classification::*;
    match c {
        AsymptoticallyStable => "asymptotically-stable",
        Saddle => "saddle",
        Degenerate => "degenerate",
        PotentialOnly => "potential-only",
    }
}

/// Oblique (cabinet) projection for the 3-D phase portrait.
fn project(p: &DVector<f64>) -> (f64, f64) {
    if p.len() == 2 {
        (p[0], -p[1])
    } else {
        let k = 0.5 * std::f64::consts::FRAC_1_SQRT_2;
        (p[1] + k * p[0], -(p[2] + k * p[0]))
    }
}

/// Closed polylines of the unsafe-set boundary, one per component.
fn boundary_components(inst: &ProblemInstance) -> Result<Vec<Vec<(f64, f64)>>> {
    const SAMPLES: usize = 512;
    if inst.n() == 3 {
        // Silhouette of the spherical obstacle under the same projection.
        if let BarrierFamily::Sphere { center, radius, .. } = &inst.barrier.family {
            let (cx, cy) = project(center);
            let pts = (0..=SAMPLES)
                .map(|k| {
                    let th = std::f64::consts::TAU * k as f64 / SAMPLES as f64;
                    (cx + radius * th.cos(), cy + radius * th.sin())
                })
                .collect();
            return Ok(vec![pts]);
        }
        return Err(Error::UnsupportedDimension(3));
    }
    let curves = inst.barrier.boundary_curves()?;
    if let BarrierFamily::UnionCircles { .. } = &inst.barrier.family {
        // The four arcs chain into a single closed component: outer lower
        // semicircle, right cap, inner lower semicircle (reversed), left cap.
        let mut pts = Vec::new();
        let order: [(usize, bool); 4] = [(1, false), (3, false), (0, true), (2, false)];
        for (idx, reversed) in order {
            for k in 0..=SAMPLES {
                let t = k as f64 / SAMPLES as f64;
                let t = if reversed { 1.0 - t } else { t };
                pts.push(project(&curves[idx].point(t)));
            }
        }
        return Ok(vec![pts]);
    }
    Ok(curves
        .iter()
        .map(|c| {
            (0..=SAMPLES)
                .map(|k| project(&c.point(k as f64 / SAMPLES as f64)))
                .collect()
        })
        .collect())
}

fn path_data(points: &[(f64, f64)], close: bool) -> String {
    let mut d = String::new();
    for (i, (x, y)) in points.iter().enumerate() {
        let cmd = if i == 0 { 'M' } else { 'L' };
        d.push_str(&format!("{cmd}{x:.5} {y:.5} "));
    }
    if close {
        d.push('Z');
    }
    d
}

fn write_phase_svg(
    path: &Path,
    inst: &ProblemInstance,
    trajectories: &[Trajectory],
    report: &Report,
) -> Result<()> {
    let boundary = boundary_components(inst)?;
    let mut traj_lines: Vec<Vec<(f64, f64)>> = Vec::new();
    for traj in trajectories {
        let stride = (traj.states.len() / 1500).max(1);
        let mut pts: Vec<(f64, f64)> = traj
            .states
            .iter()
            .step_by(stride)
            .map(project)
            .collect();
        if let Some(last) = traj.states.last() {
            pts.push(project(last));
        }
        traj_lines.push(pts);
    }
    let markers: Vec<(f64, f64, crate::equilibria::Classification)> = report
        .equilibria
        .iter()
        .map(|e| {
            let (x, y) = project(&DVector::from_vec(e.x.clone()));
            (x, y, e.classification)
        })
        .collect();

    let mut min = (f64::INFINITY, f64::INFINITY);
    let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut grow = |p: &(f64, f64)| {
        min.0 = min.0.min(p.0);
        min.1 = min.1.min(p.1);
        max.0 = max.0.max(p.0);
        max.1 = max.1.max(p.1);
    };
    for comp in &boundary {
        comp.iter().for_each(&mut grow);
    }
    for line in &traj_lines {
        line.iter().for_each(&mut grow);
    }
    for (x, y, _) in &markers {
        grow(&(*x, *y));
    }
    if !min.0.is_finite() {
        min = (-1.0, -1.0);
        max = (1.0, 1.0);
    }
    let span = ((max.0 - min.0).max(1e-6), (max.1 - min.1).max(1e-6));
    let margin = (0.1 * span.0, 0.1 * span.1);
    let view = (
        min.0 - margin.0,
        min.1 - margin.1,
        span.0 + 2.0 * margin.0,
        span.1 + 2.0 * margin.1,
    );
    let stroke = 0.004 * view.2.max(view.3);
    let marker_r = 0.012 * view.2.max(view.3);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"640\" \
         viewBox=\"{:.5} {:.5} {:.5} {:.5}\">\n",
        view.0, view.1, view.2, view.3
    ));
    for comp in &boundary {
        svg.push_str(&format!(
            "  <path class=\"boundary\" d=\"{}\" fill=\"none\" stroke=\"#222222\" \
             stroke-width=\"{stroke:.5}\"/>\n",
            path_data(comp, true)
        ));
    }
    for line in &traj_lines {
        svg.push_str(&format!(
            "  <path class=\"trajectory\" d=\"{}\" fill=\"none\" stroke=\"#4c72b0\" \
             stroke-width=\"{stroke:.5}\"/>\n",
            path_data(line, false)
        ));
    }
    for (x, y, class) in &markers {
        svg.push_str(&format!(
            "  <circle class=\"equilibrium {}\" cx=\"{x:.5}\" cy=\"{y:.5}\" r=\"{marker_r:.5}\" \
             fill=\"{}\"/>\n",
            classification_key(*class),
            classification_color(*class)
        ));
    }
    svg.push_str("</svg>\n");
    fs::write(path, svg)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub label: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub pass: bool,
}

fn match_expectation(
    expected: &ExpectedEquilibrium,
    summaries: &[EquilibriumSummary],
) -> Check {
    let target = DVector::from_vec(expected.x.clone());
    let mut best: Option<(f64, &EquilibriumSummary)> = None;
    for s in summaries {
        let d = (DVector::from_vec(s.x.clone()) - &target).norm();
        if best.as_ref().map_or(true, |(bd, _)| d < *bd) {
            best = Some((d, s));
        }
    }
    let label = format!(
        "equilibrium near ({}) [{}]",
        expected
            .x
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect::<Vec<_>>()
            .join(", "),
        classification_key(expected.classification)
    );
    match best {
        Some((d, s)) if d <= expected.tol && s.classification == expected.classification => Check {
            label,
            pass: true,
            detail: format!("matched at distance {d:.3e}"),
        },
        Some((d, s)) => Check {
            label,
            pass: false,
            detail: format!(
                "nearest found: ({}) [{}] at distance {d:.3e} (tol {:.3e})",
                s.x.iter()
                    .map(|v| format!("{v:.6}"))
                    .collect::<Vec<_>>()
                    .join(", "),
                classification_key(s.classification),
                expected.tol
            ),
        },
        None => Check {
            label,
            pass: false,
            detail: "no equilibria found".into(),
        },
    }
}

/// Compares computed results against the scenario's expected-results block.
pub fn verify_scenario(scenario: &Scenario) -> Result<VerifyReport> {
    let expectations = scenario.expectations.clone().ok_or_else(|| {
        Error::Scenario("scenario has no expectations block to verify".into())
    })?;
    let out = execute_scenario(scenario, &RunOverrides::default())?;
    let report = &out.report;
    let mut checks = Vec::new();

    for expected in &expectations.equilibria {
        if report.controller_runs.is_empty() {
            checks.push(match_expectation(expected, &report.equilibria));
        } else {
            for (i, run) in report.controller_runs.iter().enumerate() {
                let mut check = match_expectation(expected, &run.equilibria);
                check.label = format!("{} (controller draw {i})", check.label);
                checks.push(check);
            }
        }
    }
    if expectations.continuum {
        checks.push(Check {
            label: "continuum diagnosis".into(),
            pass: report.continuum.is_some(),
            detail: report
                .continuum
                .as_ref()
                .map(|c| c.note.clone())
                .unwrap_or_else(|| "no continuum diagnosed".into()),
        });
    }
    if expectations.no_undesired {
        let undesired: Vec<&EquilibriumSummary> = report
            .equilibria
            .iter()
            .filter(|e| e.delta < 0.0)
            .collect();
        checks.push(Check {
            label: "no undesired equilibria".into(),
            pass: undesired.is_empty() && report.continuum.is_none(),
            detail: format!("{} undesired equilibria found", undesired.len()),
        });
    }
    if expectations.diverges {
        let all = !report.trajectories.is_empty()
            && report
                .trajectories
                .iter()
                .all(|t| matches!(t.verdict, Verdict::Diverged { .. }));
        checks.push(Check {
            label: "all trajectories diverge".into(),
            pass: all,
            detail: format!("{} trajectories simulated", report.trajectories.len()),
        });
    }
    if let Some(period) = expectations.cycle_period {
        let (pass, detail) = match &report.limit_cycle {
            Some(c) => (
                (c.period - period).abs() <= 0.01 * period,
                format!("detected period {:.6} (expected {period:.6})", c.period),
            ),
            None => (false, "no limit cycle detected".into()),
        };
        checks.push(Check {
            label: "limit-cycle period".into(),
            pass,
            detail,
        });
    }
    for e in &report.errors {
        checks.push(Check {
            label: format!("analysis {}", e.analysis),
            pass: false,
            detail: e.message.clone(),
        });
    }

    let pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport { checks, pass })
}
