//! Prebuilt control problems, convergence and estimator studies, and the
//! CSV/VTK exporters behind the command line.

use crate::estimators::{
    combine_state_indicators, control_effectivity, eta_control, eta_jumps, eta_volume,
    state_effectivity, zz_recover,
};
use crate::ipdg::{
    dg_error_norm, l2_error, DgNormVariant, EllipticCoeffs, EllipticOperator, IpdgError,
};
use crate::mesh::{MeshError, Rect, TriMesh};
use crate::ocp::{
    kkt_report, pgd_solve, AdmissibleSet, ControlDiscretization, ExactSolution, KktReport,
    OcpError, OcpSolution, PgdOptions, ProblemSpec,
};
use crate::recon::{ReconError, ReconstructionMatrix};
use crate::sparse::SolverKind;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

const PI: f64 = std::f64::consts::PI;

/// Above this many elements the elliptic solves switch from the cached
/// factorization to preconditioned conjugate gradients.
pub const DIRECT_SOLVER_LIMIT: usize = 40_000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("resolution {n} is not admissible for the {rule:?} control rule: {reason}")]
    BadResolution {
        rule: ControlRule,
        n: usize,
        reason: String,
    },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error(transparent)]
    Ipdg(#[from] IpdgError),
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The three built-in control problems on the unit square. All use identity
/// diffusion, zero Dirichlet data, and a tracking state objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleId {
    /// Lower bound 0, linear control cost.
    Ex1,
    /// Box constraint [0, 1], control cost with a cubic growth term.
    Ex2,
    /// Integral lower bound 0.
    Ex3,
}

impl std::str::FromStr for ExampleId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ex1" => Ok(ExampleId::Ex1),
            "ex2" => Ok(ExampleId::Ex2),
            "ex3" => Ok(ExampleId::Ex3),
            other => Err(format!(
                "unknown example '{other}', expected ex1, ex2, or ex3"
            )),
        }
    }
}

pub struct Example {
    pub problem: ProblemSpec,
    pub exact: ExactSolution,
}

fn p_star(x: [f64; 2]) -> f64 {
    (PI * x[0]).sin() * (PI * x[1]).sin()
}

fn grad_p_star(x: [f64; 2]) -> [f64; 2] {
    [
        PI * (PI * x[0]).cos() * (PI * x[1]).sin(),
        PI * (PI * x[0]).sin() * (PI * x[1]).cos(),
    ]
}

/// Inverse of s -> s + 4 s^2 sign(s) evaluated at p / 2; the closed form of
/// the pointwise optimality relation of the second example.
pub fn cubic_cost_inverse(p: f64) -> f64 {
    p.signum() * ((1.0 + 8.0 * p.abs()).sqrt() - 1.0) / 8.0
}

pub fn make_example(id: ExampleId) -> Example {
    let zero: Arc<crate::ocp::Scalar2d> = Arc::new(|_| 0.0);
    let y_star = |x: [f64; 2]| 2.0 * PI * PI * p_star(x);
    let grad_y_star = |x: [f64; 2]| {
        let g = grad_p_star(x);
        [2.0 * PI * PI * g[0], 2.0 * PI * PI * g[1]]
    };
    match id {
        ExampleId::Ex1 => {
            let u_d = |x: [f64; 2]| 1.0 - (0.5 * PI * x[0]).sin() - (0.5 * PI * x[1]).sin();
            let u_star = move |x: [f64; 2]| (u_d(x) - p_star(x)).max(0.0);
            Example {
                problem: ProblemSpec {
                    c_b: 1.0,
                    f: Arc::new(move |x| 4.0 * PI.powi(4) * p_star(x) - u_star(x)),
                    phi: zero,
                    g_val: Arc::new(|y, _| 0.5 * y * y),
                    g_prime: Arc::new(|y, _| y),
                    j_val: Arc::new(move |u, x| 0.5 * (u - u_d(x)) * (u - u_d(x))),
                    j_prime: Arc::new(move |u, x| u - u_d(x)),
                    admissible: AdmissibleSet::LowerBound(0.0),
                },
                exact: ExactSolution {
                    u: Arc::new(u_star),
                    y: Arc::new(y_star),
                    p: Arc::new(p_star),
                    grad_y: Arc::new(grad_y_star),
                    grad_p: Arc::new(grad_p_star),
                },
            }
        }
        ExampleId::Ex2 => {
            let u_d = |x: [f64; 2]| 1.5 - x[0] - x[1];
            let u_star =
                move |x: [f64; 2]| (u_d(x) - cubic_cost_inverse(p_star(x))).clamp(0.0, 1.0);
            Example {
                problem: ProblemSpec {
                    c_b: 0.5,
                    f: Arc::new(move |x| 4.0 * PI.powi(4) * p_star(x) - 0.5 * u_star(x)),
                    phi: zero,
                    g_val: Arc::new(|y, _| 0.5 * y * y),
                    g_prime: Arc::new(|y, _| y),
                    j_val: Arc::new(move |u, x| {
                        let d = u - u_d(x);
                        0.5 * d * d + (4.0 / 3.0) * d.abs().powi(3)
                    }),
                    j_prime: Arc::new(move |u, x| {
                        let d = u - u_d(x);
                        d + 4.0 * d * d * d.signum()
                    }),
                    admissible: AdmissibleSet::Box(0.0, 1.0),
                },
                exact: ExactSolution {
                    u: Arc::new(u_star),
                    y: Arc::new(y_star),
                    p: Arc::new(p_star),
                    grad_y: Arc::new(grad_y_star),
                    grad_p: Arc::new(grad_p_star),
                },
            }
        }
        ExampleId::Ex3 => {
            let u_d = |x: [f64; 2]| 1.0 - 2.0 * x[0] - 2.0 * x[1];
            // Mean of u_d - p* over the square; negative, so the integral
            // constraint is active and shifts the unconstrained minimizer.
            let shift = 1.0 + 4.0 / (PI * PI);
            let u_star = move |x: [f64; 2]| u_d(x) - p_star(x) + shift;
            Example {
                problem: ProblemSpec {
                    c_b: 1.0,
                    f: Arc::new(move |x| 4.0 * PI.powi(4) * p_star(x) - u_star(x)),
                    phi: zero,
                    g_val: Arc::new(|y, _| 0.5 * y * y),
                    g_prime: Arc::new(|y, _| y),
                    j_val: Arc::new(move |u, x| 0.5 * (u - u_d(x)) * (u - u_d(x))),
                    j_prime: Arc::new(move |u, x| u - u_d(x)),
                    admissible: AdmissibleSet::IntegralLowerBound(0.0),
                },
                exact: ExactSolution {
                    u: Arc::new(u_star),
                    y: Arc::new(y_star),
                    p: Arc::new(p_star),
                    grad_y: Arc::new(grad_y_star),
                    grad_p: Arc::new(grad_p_star),
                },
            }
        }
    }
}

/// Coupling between the control resolution and the state resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlRule {
    /// Control mesh equals the state mesh.
    Equal,
    /// Control mesh size 4 h^2, i.e. n_u = n^2 / 4.
    Quad,
    /// Control mesh size 16 h^3, i.e. n_u = n^3 / 16.
    Cubic,
    /// Control values at the volume quadrature points of the state mesh.
    Variational,
}

impl std::str::FromStr for ControlRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "equal" => Ok(ControlRule::Equal),
            "quad" => Ok(ControlRule::Quad),
            "cubic" => Ok(ControlRule::Cubic),
            "variational" => Ok(ControlRule::Variational),
            other => Err(format!(
                "unknown control rule '{other}', expected equal, quad, cubic, or variational"
            )),
        }
    }
}

/// Control mesh resolution for a state resolution, None for the variational
/// rule. Nested rules must divide evenly and stay nested.
pub fn control_resolution(rule: ControlRule, n: usize) -> Result<Option<usize>, HarnessError> {
    let check = |n_u: usize, valid: bool| -> Result<Option<usize>, HarnessError> {
        if !valid || n_u == 0 {
            return Err(HarnessError::BadResolution {
                rule,
                n,
                reason:
                    "the control resolution must be a positive integer nested with the state mesh"
                        .into(),
            });
        }
        if n_u % n != 0 && n % n_u != 0 {
            return Err(HarnessError::BadResolution {
                rule,
                n,
                reason: format!("control resolution {n_u} is not nested with {n}"),
            });
        }
        Ok(Some(n_u))
    };
    match rule {
        ControlRule::Equal => Ok(Some(n)),
        ControlRule::Quad => check(n * n / 4, n * n % 4 == 0),
        ControlRule::Cubic => check(n * n * n / 16, n * n * n % 16 == 0),
        ControlRule::Variational => Ok(None),
    }
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub example: ExampleId,
    pub degree: usize,
    pub resolutions: Vec<usize>,
    pub control: ControlRule,
    /// Penalty override; the default is 3 m^2.
    pub mu: Option<f64>,
    pub pgd: PgdOptions,
    /// Patch size floor override for the reconstruction.
    pub patch_threshold: Option<usize>,
}

/// One study line. Orders are computed against the state mesh size h; the
/// wall time is informational and never serialized.
#[derive(Debug, Clone)]
pub struct StudyRow {
    pub n: usize,
    pub h: f64,
    pub h_u: f64,
    pub err_u: f64,
    pub eoc_u: Option<f64>,
    pub err_y_l2: f64,
    pub eoc_y_l2: Option<f64>,
    pub err_p_l2: f64,
    pub eoc_p_l2: Option<f64>,
    pub err_y_dg: f64,
    pub eoc_y_dg: Option<f64>,
    pub err_p_dg: f64,
    pub eoc_p_dg: Option<f64>,
    /// Recovered-control error; only for the equal rule.
    pub err_u_rec: Option<f64>,
    pub eoc_u_rec: Option<f64>,
    pub iterations: usize,
    pub kkt: KktReport,
    pub wall_time: f64,
}

fn solver_for(mesh: &TriMesh) -> SolverKind {
    if mesh.n_elements() <= DIRECT_SOLVER_LIMIT {
        SolverKind::Direct
    } else {
        SolverKind::Iterative
    }
}

fn eoc(prev_err: f64, prev_h: f64, err: f64, h: f64) -> f64 {
    (prev_err / err).ln() / (prev_h / h).ln()
}

/// Solves one example configuration and returns the solution with its
/// discretization pieces, for the study drivers and the CLI.
pub struct SolvedCase<'a> {
    pub mesh: &'a TriMesh,
    pub recon: ReconstructionMatrix,
    pub disc: ControlDiscretization<'a>,
    pub solution: OcpSolution,
    pub mu: f64,
}

pub fn solve_case<'a>(
    mesh: &'a TriMesh,
    example: &Example,
    degree: usize,
    rule: ControlRule,
    mu: Option<f64>,
    pgd: &PgdOptions,
    patch_threshold: Option<usize>,
) -> Result<SolvedCase<'a>, HarnessError> {
    let n = mesh.grid().ok_or(MeshError::NoGrid)?.n;
    let mu = mu.unwrap_or_else(|| EllipticCoeffs::default_penalty(degree));
    let recon = ReconstructionMatrix::assemble(mesh, degree, patch_threshold)?;
    let disc = match control_resolution(rule, n)? {
        Some(n_u) => {
            let control = TriMesh::uniform_light(n_u, Rect::unit_square())?;
            ControlDiscretization::elementwise(mesh, degree, control)?
        }
        None => ControlDiscretization::quad_sampled(mesh, degree),
    };
    let op = EllipticOperator::new(
        mesh,
        &recon,
        EllipticCoeffs::identity(mu),
        solver_for(mesh),
        1e-12,
    )?;
    let solution = pgd_solve(&op, &disc, &example.problem, pgd)?;
    Ok(SolvedCase {
        mesh,
        recon,
        disc,
        solution,
        mu,
    })
}

pub fn run_convergence_study(config: &StudyConfig) -> Result<Vec<StudyRow>, HarnessError> {
    let example = make_example(config.example);
    let mut rows: Vec<StudyRow> = Vec::new();
    for &n in &config.resolutions {
        let start = Instant::now();
        let mesh = TriMesh::uniform(n, Rect::unit_square())?;
        let case = solve_case(
            &mesh,
            &example,
            config.degree,
            config.control,
            config.mu,
            &config.pgd,
            config.patch_threshold,
        )?;
        let sol = &case.solution;
        let exact = &example.exact;

        let err_u = case.disc.l2_error(&sol.u, exact.u.as_ref());
        let err_y_l2 = l2_error(&sol.y, &mesh, exact.y.as_ref());
        let err_p_l2 = l2_error(&sol.p, &mesh, exact.p.as_ref());
        let err_y_dg = dg_error_norm(
            &sol.y,
            &mesh,
            case.mu,
            DgNormVariant::Full,
            exact.y.as_ref(),
            exact.grad_y.as_ref(),
        );
        let err_p_dg = dg_error_norm(
            &sol.p,
            &mesh,
            case.mu,
            DgNormVariant::Full,
            exact.p.as_ref(),
            exact.grad_p.as_ref(),
        );
        let err_u_rec = match (config.control, case.disc.control_mesh()) {
            (ControlRule::Equal, Some(mesh_u)) => {
                let rec = zz_recover(mesh_u, &sol.u);
                Some(rec.l2_error(mesh_u, &|x| (exact.u)(x)))
            }
            _ => None,
        };
        let kkt = kkt_report(&case.disc, &example.problem, &sol.u, &sol.p);

        let h = 1.0 / n as f64;
        let h_u = match case.disc.control_mesh() {
            Some(mesh_u) => 1.0 / mesh_u.grid().ok_or(MeshError::NoGrid)?.n as f64,
            None => h,
        };
        let prev = rows.last();
        let rate = |prev_err: Option<(f64, f64)>, err: f64| -> Option<f64> {
            prev_err.map(|(pe, ph)| eoc(pe, ph, err, h))
        };
        rows.push(StudyRow {
            n,
            h,
            h_u,
            err_u,
            eoc_u: rate(prev.map(|r| (r.err_u, r.h)), err_u),
            err_y_l2,
            eoc_y_l2: rate(prev.map(|r| (r.err_y_l2, r.h)), err_y_l2),
            err_p_l2,
            eoc_p_l2: rate(prev.map(|r| (r.err_p_l2, r.h)), err_p_l2),
            err_y_dg,
            eoc_y_dg: rate(prev.map(|r| (r.err_y_dg, r.h)), err_y_dg),
            err_p_dg,
            eoc_p_dg: rate(prev.map(|r| (r.err_p_dg, r.h)), err_p_dg),
            err_u_rec,
            eoc_u_rec: match (err_u_rec, prev.and_then(|r| r.err_u_rec.map(|e| (e, r.h)))) {
                (Some(err), Some((pe, ph))) => Some(eoc(pe, ph, err, h)),
                _ => None,
            },
            iterations: sol.iterations,
            kkt,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}

/// Poisson benchmark row: a plain elliptic solve with a manufactured smooth
/// solution, reporting L2 and full DG-norm errors.
#[derive(Debug, Clone)]
pub struct PoissonRow {
    pub n: usize,
    pub h: f64,
    pub err_l2: f64,
    pub eoc_l2: Option<f64>,
    pub err_dg: f64,
    pub eoc_dg: Option<f64>,
}

pub fn run_poisson_study(
    degree: usize,
    resolutions: &[usize],
    mu: Option<f64>,
) -> Result<Vec<PoissonRow>, HarnessError> {
    let mu = mu.unwrap_or_else(|| EllipticCoeffs::default_penalty(degree));
    let exact = |x: [f64; 2]| (PI * x[0]).sin() * (PI * x[1]).sin();
    let exact_grad = |x: [f64; 2]| {
        [
            PI * (PI * x[0]).cos() * (PI * x[1]).sin(),
            PI * (PI * x[0]).sin() * (PI * x[1]).cos(),
        ]
    };
    let mut rows: Vec<PoissonRow> = Vec::new();
    for &n in resolutions {
        let mesh = TriMesh::uniform(n, Rect::unit_square())?;
        let recon = ReconstructionMatrix::assemble(&mesh, degree, None)?;
        let op = EllipticOperator::new(
            &mesh,
            &recon,
            EllipticCoeffs::identity(mu),
            solver_for(&mesh),
            1e-12,
        )?;
        let (field, _) = op.solve(|_, _, x| 2.0 * PI * PI * exact(x), |_| 0.0, None)?;
        let err_l2 = l2_error(&field, &mesh, &exact);
        let err_dg = dg_error_norm(&field, &mesh, mu, DgNormVariant::Full, &exact, &exact_grad);
        let h = 1.0 / n as f64;
        let prev = rows.last();
        rows.push(PoissonRow {
            n,
            h,
            err_l2,
            eoc_l2: prev.map(|r| eoc(r.err_l2, r.h, err_l2, h)),
            err_dg,
            eoc_dg: prev.map(|r| eoc(r.err_dg, r.h, err_dg, h)),
        });
    }
    Ok(rows)
}

/// Indicator quality on one mesh of an estimator study.
#[derive(Debug, Clone)]
pub struct EstimatorRow {
    pub n: usize,
    pub h: f64,
    pub max_eff_y: f64,
    pub min_eff_y: f64,
    pub max_eff_p: f64,
    pub min_eff_p: f64,
    pub max_eff_u: f64,
    pub min_eff_u: f64,
    pub eta_control_total: f64,
    pub eta_control_sharp: f64,
}

pub fn run_estimator_study(config: &StudyConfig) -> Result<Vec<EstimatorRow>, HarnessError> {
    let example = make_example(config.example);
    let mut rows = Vec::new();
    for &n in &config.resolutions {
        let mesh = TriMesh::uniform(n, Rect::unit_square())?;
        let case = solve_case(
            &mesh,
            &example,
            config.degree,
            config.control,
            config.mu,
            &config.pgd,
            config.patch_threshold,
        )?;
        let sol = &case.solution;
        let prob = &example.problem;
        let coeffs = EllipticCoeffs::identity(case.mu);
        let mesh_u = case
            .disc
            .control_mesh()
            .ok_or_else(|| HarnessError::BadResolution {
                rule: config.control,
                n,
                reason: "estimator studies need an elementwise control".into(),
            })?;

        // State residual: the source must carry the control term.
        let u = &sol.u;
        let f = &prob.f;
        let c_b = prob.c_b;
        let eta1_y = eta_volume(&mesh, &sol.y, &coeffs, |_, x| {
            f(x) + c_b * u[mesh_u.locate(x).expect("point inside the domain")]
        });
        let (eta2_y, eta3_y) = eta_jumps(&mesh, &sol.y, &coeffs);
        let combined_y = combine_state_indicators(&mesh, &eta1_y, &eta2_y, &eta3_y);
        let eff_y = state_effectivity(&mesh, &sol.y, &|x| (example.exact.y)(x), &combined_y);

        // Adjoint residual: the source is the state tracking term.
        let y = &sol.y;
        let g_prime = &prob.g_prime;
        let eta1_p = eta_volume(&mesh, &sol.p, &coeffs, |k, x| {
            g_prime(y.value(&mesh, k, x), x)
        });
        let (eta2_p, eta3_p) = eta_jumps(&mesh, &sol.p, &coeffs);
        let combined_p = combine_state_indicators(&mesh, &eta1_p, &eta2_p, &eta3_p);
        let eff_p = state_effectivity(&mesh, &sol.p, &|x| (example.exact.p)(x), &combined_p);

        let est_u = eta_control(&case.disc, prob, u, &sol.p).expect("elementwise control");
        let eff_u = control_effectivity(&case.disc, prob, u, &sol.p, &|x| (example.exact.u)(x))
            .expect("elementwise control");

        rows.push(EstimatorRow {
            n,
            h: 1.0 / n as f64,
            max_eff_y: eff_y.max_ratio,
            min_eff_y: eff_y.min_ratio,
            max_eff_p: eff_p.max_ratio,
            min_eff_p: eff_p.min_ratio,
            max_eff_u: eff_u.max_ratio,
            min_eff_u: eff_u.min_ratio,
            eta_control_total: est_u.total(),
            eta_control_sharp: est_u.sharp_total(),
        });
    }
    Ok(rows)
}

fn sci(x: f64) -> String {
    format!("{x:.5e}")
}

fn opt_sci(x: Option<f64>) -> String {
    x.map(sci).unwrap_or_default()
}

pub fn write_study_csv<W: Write>(rows: &[StudyRow], out: &mut W) -> std::io::Result<()> {
    writeln!(
        out,
        "n,h,h_u,err_u,eoc_u,err_y_l2,eoc_y_l2,err_p_l2,eoc_p_l2,err_y_dg,eoc_y_dg,err_p_dg,eoc_p_dg,err_u_rec,eoc_u_rec,iterations"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.n,
            sci(r.h),
            sci(r.h_u),
            sci(r.err_u),
            opt_sci(r.eoc_u),
            sci(r.err_y_l2),
            opt_sci(r.eoc_y_l2),
            sci(r.err_p_l2),
            opt_sci(r.eoc_p_l2),
            sci(r.err_y_dg),
            opt_sci(r.eoc_y_dg),
            sci(r.err_p_dg),
            opt_sci(r.eoc_p_dg),
            opt_sci(r.err_u_rec),
            opt_sci(r.eoc_u_rec),
            r.iterations,
        )?;
    }
    Ok(())
}

pub fn write_poisson_csv<W: Write>(rows: &[PoissonRow], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "n,h,err_l2,eoc_l2,err_dg,eoc_dg")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.n,
            sci(r.h),
            sci(r.err_l2),
            opt_sci(r.eoc_l2),
            sci(r.err_dg),
            opt_sci(r.eoc_dg),
        )?;
    }
    Ok(())
}

pub fn write_estimator_csv<W: Write>(rows: &[EstimatorRow], out: &mut W) -> std::io::Result<()> {
    writeln!(
        out,
        "n,h,max_eff_y,min_eff_y,max_eff_p,min_eff_p,max_eff_u,min_eff_u,eta_control,eta_control_sharp"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.n,
            sci(r.h),
            sci(r.max_eff_y),
            sci(r.min_eff_y),
            sci(r.max_eff_p),
            sci(r.min_eff_p),
            sci(r.max_eff_u),
            sci(r.min_eff_u),
            sci(r.eta_control_total),
            sci(r.eta_control_sharp),
        )?;
    }
    Ok(())
}

/// Legacy-format VTK export of state and adjoint. Every element is split
/// into four sub-triangles with duplicated points, so the discontinuities
/// of the fields stay visible; cell data holds the field values at the
/// sub-triangle barycenters plus the per-element indicators.
pub fn write_state_vtk<W: Write>(
    mesh: &TriMesh,
    y: &crate::ipdg::DGField,
    p: &crate::ipdg::DGField,
    indicator_y: Option<&[f64]>,
    indicator_p: Option<&[f64]>,
    out: &mut W,
) -> std::io::Result<()> {
    let ne = mesh.n_elements();
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "state and adjoint fields")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", 6 * ne)?;
    for k in 0..ne {
        let [v0, v1, v2] = mesh.vertex_coords(k);
        let mids = [
            [(v0[0] + v1[0]) / 2.0, (v0[1] + v1[1]) / 2.0],
            [(v1[0] + v2[0]) / 2.0, (v1[1] + v2[1]) / 2.0],
            [(v2[0] + v0[0]) / 2.0, (v2[1] + v0[1]) / 2.0],
        ];
        for pt in [v0, v1, v2, mids[0], mids[1], mids[2]] {
            writeln!(out, "{:.6e} {:.6e} 0.0", pt[0], pt[1])?;
        }
    }
    writeln!(out, "CELLS {} {}", 4 * ne, 4 * ne * 4)?;
    for k in 0..ne {
        let b = 6 * k;
        for tri in [[0, 3, 5], [3, 1, 4], [5, 4, 2], [3, 4, 5]] {
            writeln!(out, "3 {} {} {}", b + tri[0], b + tri[1], b + tri[2])?;
        }
    }
    writeln!(out, "CELL_TYPES {}", 4 * ne)?;
    for _ in 0..4 * ne {
        writeln!(out, "5")?;
    }
    writeln!(out, "CELL_DATA {}", 4 * ne)?;
    let subcell_values = |field: &crate::ipdg::DGField, out: &mut W, name: &str| {
        writeln!(out, "SCALARS {name} double 1")?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for k in 0..ne {
            let [v0, v1, v2] = mesh.vertex_coords(k);
            let m01 = [(v0[0] + v1[0]) / 2.0, (v0[1] + v1[1]) / 2.0];
            let m12 = [(v1[0] + v2[0]) / 2.0, (v1[1] + v2[1]) / 2.0];
            let m20 = [(v2[0] + v0[0]) / 2.0, (v2[1] + v0[1]) / 2.0];
            for tri in [
                [v0, m01, m20],
                [m01, v1, m12],
                [m20, m12, v2],
                [m01, m12, m20],
            ] {
                let bc = [
                    (tri[0][0] + tri[1][0] + tri[2][0]) / 3.0,
                    (tri[0][1] + tri[1][1] + tri[2][1]) / 3.0,
                ];
                writeln!(out, "{:.6e}", field.value(mesh, k, bc))?;
            }
        }
        Ok::<(), std::io::Error>(())
    };
    subcell_values(y, out, "y_h")?;
    subcell_values(p, out, "p_h")?;
    let elementwise = |vals: &[f64], out: &mut W, name: &str| {
        writeln!(out, "SCALARS {name} double 1")?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for vk in &vals[..ne] {
            for _ in 0..4 {
                writeln!(out, "{vk:.6e}")?;
            }
        }
        Ok::<(), std::io::Error>(())
    };
    if let Some(vals) = indicator_y {
        elementwise(vals, out, "eta_y")?;
    }
    if let Some(vals) = indicator_p {
        elementwise(vals, out, "eta_p")?;
    }
    Ok(())
}

/// Legacy-format VTK export of an elementwise control with an optional
/// effectivity field clipped at `cap`.
pub fn write_control_vtk<W: Write>(
    mesh_u: &TriMesh,
    u: &[f64],
    effectivity: Option<(&[f64], f64)>,
    out: &mut W,
) -> std::io::Result<()> {
    let ne = mesh_u.n_elements();
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "control field")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", mesh_u.n_vertices())?;
    for v in &mesh_u.vertices {
        writeln!(out, "{:.6e} {:.6e} 0.0", v[0], v[1])?;
    }
    writeln!(out, "CELLS {} {}", ne, 4 * ne)?;
    for tri in &mesh_u.elements {
        writeln!(out, "3 {} {} {}", tri[0], tri[1], tri[2])?;
    }
    writeln!(out, "CELL_TYPES {ne}")?;
    for _ in 0..ne {
        writeln!(out, "5")?;
    }
    writeln!(out, "CELL_DATA {ne}")?;
    writeln!(out, "SCALARS u_h double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for v in u {
        writeln!(out, "{v:.6e}")?;
    }
    if let Some((eff, cap)) = effectivity {
        writeln!(out, "SCALARS effectivity double 1")?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for e in eff {
            writeln!(out, "{:.6e}", e.min(cap))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_resolutions_follow_the_coupling_rules() {
        assert_eq!(control_resolution(ControlRule::Equal, 8).unwrap(), Some(8));
        assert_eq!(control_resolution(ControlRule::Quad, 8).unwrap(), Some(16));
        assert_eq!(
            control_resolution(ControlRule::Quad, 32).unwrap(),
            Some(256)
        );
        assert_eq!(control_resolution(ControlRule::Cubic, 8).unwrap(), Some(32));
        assert_eq!(
            control_resolution(ControlRule::Cubic, 32).unwrap(),
            Some(2048)
        );
        assert_eq!(
            control_resolution(ControlRule::Variational, 8).unwrap(),
            None
        );
        // 6^3 / 16 is not an integer; 6^2 / 4 = 9 is not nested with 6.
        assert!(control_resolution(ControlRule::Cubic, 6).is_err());
        assert!(control_resolution(ControlRule::Quad, 6).is_err());
    }

    #[test]
    fn example_identities_hold_pointwise() {
        let samples: Vec<[f64; 2]> = (1..7)
            .flat_map(|i| (1..7).map(move |j| [i as f64 / 7.0, j as f64 / 7.0]))
            .collect();
        for id in [ExampleId::Ex1, ExampleId::Ex2, ExampleId::Ex3] {
            let ex = make_example(id);
            for &x in &samples {
                // The state equation: -lap(y*) = 4 pi^4 p* must equal
                // f + c_b u* by construction of f.
                let residual = (ex.problem.f)(x) + ex.problem.c_b * (ex.exact.u)(x)
                    - 4.0 * PI.powi(4) * p_star(x);
                assert!(residual.abs() < 1e-10, "{id:?} at {x:?}: {residual}");
                // The adjoint pairs y* = 2 pi^2 p* with -lap(p*) = y*.
                assert!(((ex.exact.y)(x) - 2.0 * PI * PI * (ex.exact.p)(x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cubic_cost_inverse_solves_its_equation() {
        for i in 0..41 {
            let p = -1.0 + i as f64 * 0.05;
            let s = cubic_cost_inverse(p);
            let lhs = s + 4.0 * s * s * s.signum();
            assert!((lhs - 0.5 * p).abs() < 1e-12, "p = {p}: {lhs}");
        }
        let s_half = cubic_cost_inverse(0.5);
        assert!((s_half - (5.0f64.sqrt() - 1.0) / 8.0).abs() < 1e-15);
    }

    #[test]
    fn pointwise_optimality_of_the_box_example() {
        let ex = make_example(ExampleId::Ex2);
        for i in 1..25 {
            for j in 1..25 {
                let x = [i as f64 / 25.0, j as f64 / 25.0];
                let u = (ex.exact.u)(x);
                let grad = (ex.problem.j_prime)(u, x) + 0.5 * (ex.exact.p)(x);
                if u > 1e-9 && u < 1.0 - 1e-9 {
                    assert!(grad.abs() < 1e-9, "interior point {x:?}: {grad}");
                } else if u <= 1e-9 {
                    assert!(grad >= -1e-9, "lower bound at {x:?}: {grad}");
                } else {
                    assert!(grad <= 1e-9, "upper bound at {x:?}: {grad}");
                }
            }
        }
    }

    #[test]
    fn integral_example_has_mean_zero_control() {
        let ex = make_example(ExampleId::Ex3);
        // Gauss sum over a fine grid approximates the mean well enough.
        let n = 400;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64];
                total += (ex.exact.u)(x);
            }
        }
        assert!((total / (n * n) as f64).abs() < 1e-5);
    }

    #[test]
    fn poisson_rates_reach_two_and_one_for_linears() {
        let rows = run_poisson_study(1, &[4, 8, 16], None).unwrap();
        let last = rows.last().unwrap();
        assert!(
            (last.eoc_l2.unwrap() - 2.0).abs() < 0.4,
            "L2 rate {:?}",
            last.eoc_l2
        );
        assert!(
            (last.eoc_dg.unwrap() - 1.0).abs() < 0.4,
            "DG rate {:?}",
            last.eoc_dg
        );
    }

    #[test]
    fn equal_rule_study_produces_first_order_control_and_recovery() {
        let config = StudyConfig {
            example: ExampleId::Ex1,
            degree: 1,
            resolutions: vec![8, 16],
            control: ControlRule::Equal,
            mu: None,
            pgd: PgdOptions::default(),
            patch_threshold: None,
        };
        let rows = run_convergence_study(&config).unwrap();
        assert_eq!(rows.len(), 2);
        let last = &rows[1];
        assert!(
            (last.eoc_u.unwrap() - 1.0).abs() < 0.35,
            "u rate {:?}",
            last.eoc_u
        );
        // The recovered control is more accurate and converges faster.
        assert!(last.err_u_rec.unwrap() < last.err_u);
        assert!(last.eoc_u_rec.unwrap() > last.eoc_u.unwrap() + 0.2);
        assert!(last.kkt.natural_residual < 1e-8);
        assert!(rows[0].eoc_u.is_none());
    }

    #[test]
    fn study_csv_is_deterministic_and_keeps_the_first_eoc_empty() {
        let config = StudyConfig {
            example: ExampleId::Ex1,
            degree: 1,
            resolutions: vec![4, 8],
            control: ControlRule::Equal,
            mu: None,
            pgd: PgdOptions::default(),
            patch_threshold: None,
        };
        let render = || {
            let rows = run_convergence_study(&config).unwrap();
            let mut buf = Vec::new();
            write_study_csv(&rows, &mut buf).unwrap();
            String::from_utf8(buf).unwrap()
        };
        let first = render();
        let second = render();
        assert_eq!(first, second, "CSV output must be reproducible");
        let lines: Vec<&str> = first.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split(',').count(), 16);
        // Row one has empty EOC fields (positions 4, 6, 8, 10, 12, 14).
        let fields: Vec<&str> = lines[1].split(',').collect();
        for idx in [4, 6, 8, 10, 12, 14] {
            assert_eq!(fields[idx], "", "field {idx} of the first row");
        }
        for idx in [4, 6, 8, 10, 12, 14] {
            let fields2: Vec<&str> = lines[2].split(',').collect();
            assert!(!fields2[idx].is_empty());
        }
    }

    #[test]
    fn vtk_files_declare_consistent_counts() {
        let mesh = TriMesh::uniform(2, Rect::unit_square()).unwrap();
        let recon = ReconstructionMatrix::assemble(&mesh, 1, None).unwrap();
        let field = crate::ipdg::DGField::from_elements(vec![1.0; mesh.n_elements()], &recon);
        let indicators = vec![0.5; 8];
        let mut buf = Vec::new();
        write_state_vtk(&mesh, &field, &field, Some(&indicators), None, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("POINTS 48 double"));
        assert!(text.contains("CELLS 32 128"));
        assert!(text.contains("CELL_DATA 32"));
        assert!(text.contains("SCALARS y_h double 1"));
        assert!(text.contains("SCALARS eta_y double 1"));

        let u = vec![1.0; 8];
        let eff = vec![5.0; 8];
        let mut buf2 = Vec::new();
        write_control_vtk(&mesh, &u, Some((&eff, 2.0)), &mut buf2).unwrap();
        let text2 = String::from_utf8(buf2).unwrap();
        assert!(text2.contains("POINTS 9 double"));
        assert!(text2.contains("CELLS 8 32"));
        // The effectivity column is clipped at the cap.
        assert!(text2.contains("2.000000e0"));
        assert!(!text2.contains("5.000000e0"));
    }

    #[test]
    fn estimator_study_reports_bounded_effectivities() {
        let config = StudyConfig {
            example: ExampleId::Ex1,
            degree: 1,
            resolutions: vec![8],
            control: ControlRule::Equal,
            mu: None,
            pgd: PgdOptions::default(),
            patch_threshold: None,
        };
        let rows = run_estimator_study(&config).unwrap();
        let r = &rows[0];
        assert!(r.max_eff_y > r.min_eff_y);
        assert!(
            r.min_eff_y > 0.0,
            "indicators never vanish on solved problems"
        );
        assert!(r.max_eff_y < 100.0);
        assert!(r.eta_control_sharp <= r.eta_control_total);
    }
}
