//! Acceptance suite. Each test covers one numbered criterion, prints exactly
//! one `[PASS]`/`[FAIL]` line with the measured values, and fails when any
//! sub-check misses its pinned band. Run with `--nocapture` to see the lines
//! for passing criteria too.

use std::time::Instant;

use patchdg::harness::{
    make_example, run_convergence_study, run_estimator_study, run_poisson_study, solve_case,
    write_study_csv, ControlRule, ExampleId, StudyConfig,
};
use patchdg::ipdg::{EllipticCoeffs, EllipticOperator};
use patchdg::mesh::{Rect, TriMesh};
use patchdg::ocp::{kkt_report, pgd_solve, ControlDiscretization, PgdOptions};
use patchdg::quad::{exponents, LocalBasis};
use patchdg::recon::ReconstructionMatrix;
use patchdg::sparse::SolverKind;

struct Criterion {
    label: String,
    passed: Vec<String>,
    failed: Vec<String>,
    start: Instant,
}

impl Criterion {
    fn new(number: usize, what: &str) -> Self {
        Criterion {
            label: format!("criterion {number} ({what})"),
            passed: Vec::new(),
            failed: Vec::new(),
            start: Instant::now(),
        }
    }

    fn check(&mut self, ok: bool, desc: String) {
        if ok {
            self.passed.push(desc);
        } else {
            self.failed.push(desc);
        }
    }

    fn within(&mut self, what: &str, value: f64, center: f64, tol: f64) {
        let ok = (value - center).abs() <= tol;
        self.check(ok, format!("{what} = {value:.4} (want {center} +/- {tol})"));
    }

    fn in_range(&mut self, what: &str, value: f64, lo: f64, hi: f64) {
        let ok = (lo..=hi).contains(&value);
        self.check(ok, format!("{what} = {value:.4} (want in [{lo}, {hi}])"));
    }

    fn at_least(&mut self, what: &str, value: f64, floor: f64) {
        self.check(
            value >= floor,
            format!("{what} = {value:.4} (want >= {floor})"),
        );
    }

    fn at_most(&mut self, what: &str, value: f64, cap: f64) {
        self.check(value <= cap, format!("{what} = {value:.4} (want <= {cap})"));
    }

    fn tiny(&mut self, what: &str, value: f64, cap: f64) {
        self.check(
            value <= cap,
            format!("{what} = {value:.2e} (want <= {cap:.0e})"),
        );
    }

    /// Prints the single summary line and panics if any sub-check failed.
    /// `budget` is a wall-time cap in seconds, asserted only when given.
    fn finish(mut self, budget: Option<f64>) {
        let elapsed = self.start.elapsed().as_secs_f64();
        if let Some(cap) = budget {
            self.check(
                elapsed <= cap,
                format!("elapsed {elapsed:.1}s (want <= {cap}s)"),
            );
        }
        let line = if self.failed.is_empty() {
            format!(
                "[PASS] {}: {} ({elapsed:.1}s)",
                self.label,
                self.passed.join(", ")
            )
        } else {
            format!(
                "[FAIL] {}: {} [{} of {} sub-checks failed] ({elapsed:.1}s)",
                self.label,
                self.failed.join("; "),
                self.failed.len(),
                self.failed.len() + self.passed.len(),
            )
        };
        println!("{line}");
        assert!(self.failed.is_empty(), "{line}");
    }
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, t| acc * (n - t) as f64 / (t + 1) as f64)
}

fn study(example: ExampleId, degree: usize, control: ControlRule, ns: &[usize]) -> StudyConfig {
    StudyConfig {
        example,
        degree,
        resolutions: ns.to_vec(),
        control,
        mu: None,
        pgd: PgdOptions::default(),
        patch_threshold: None,
    }
}

#[test]
fn criterion_1_polynomial_reproduction() {
    let mut c = Criterion::new(1, "patch reconstruction reproduces polynomials");
    let mut worst = 0.0f64;
    for n in [4usize, 8] {
        let mesh = TriMesh::uniform(n, Rect::unit_square()).unwrap();
        for m in 1..=3 {
            let recon = ReconstructionMatrix::assemble(&mesh, m, None).unwrap();
            for (a, b) in exponents(m) {
                let w: Vec<f64> = (0..mesh.n_elements())
                    .map(|k| {
                        let x = mesh.center(k);
                        x[0].powi(a as i32) * x[1].powi(b as i32)
                    })
                    .collect();
                let field = patchdg::ipdg::DGField::from_elements(w, &recon);
                for k in 0..mesh.n_elements() {
                    let basis = LocalBasis::for_element(&mesh, k, m);
                    let got = field.coeffs_of(k);
                    for (t, (i, j)) in exponents(m).into_iter().enumerate() {
                        // x^a y^b expanded in the scaled-shifted local basis.
                        let want = if i <= a && j <= b {
                            binom(a, i)
                                * binom(b, j)
                                * basis.center[0].powi((a - i) as i32)
                                * basis.center[1].powi((b - j) as i32)
                                * basis.scale.powi((i + j) as i32)
                        } else {
                            0.0
                        };
                        worst = worst.max((got[t] - want).abs());
                    }
                }
            }
        }
    }
    c.tiny(
        "max lifted-coefficient error, m in 1..=3, n in {4,8}",
        worst,
        1e-10,
    );
    c.finish(Some(1.0));
}

#[test]
fn criterion_2_elliptic_convergence_orders() {
    let mut c = Criterion::new(2, "penalized elliptic solver orders");
    for m in [1usize, 2] {
        let rows = run_poisson_study(m, &[8, 16, 32], None).unwrap();
        let last = rows.last().unwrap();
        c.within(
            &format!("m={m} last l2 eoc"),
            last.eoc_l2.unwrap(),
            (m + 1) as f64,
            0.25,
        );
        c.within(
            &format!("m={m} last dg eoc"),
            last.eoc_dg.unwrap(),
            m as f64,
            0.25,
        );
    }
    c.finish(Some(30.0));
}

#[test]
fn criterion_3_control_approximation_orders() {
    let mut c = Criterion::new(3, "control problem approximation orders");

    let equal = run_convergence_study(&study(
        ExampleId::Ex1,
        1,
        ControlRule::Equal,
        &[8, 16, 32, 64],
    ))
    .unwrap();
    c.within(
        "equal-mesh last u eoc",
        equal.last().unwrap().eoc_u.unwrap(),
        1.0,
        0.25,
    );

    let quad = run_convergence_study(&study(
        ExampleId::Ex1,
        1,
        ControlRule::Quad,
        &[8, 16, 32, 64],
    ))
    .unwrap();
    let last = quad.last().unwrap();
    c.within(
        "quadratic-coupling last u eoc",
        last.eoc_u.unwrap(),
        2.0,
        0.3,
    );
    c.within(
        "quadratic-coupling last y eoc",
        last.eoc_y_l2.unwrap(),
        2.0,
        0.3,
    );
    c.within(
        "quadratic-coupling last p eoc",
        last.eoc_p_l2.unwrap(),
        2.0,
        0.3,
    );

    // The cubic coupling exists to push the control to third order; the
    // state and adjoint must also hold at least the guaranteed order.
    let cubic =
        run_convergence_study(&study(ExampleId::Ex1, 2, ControlRule::Cubic, &[8, 16, 32])).unwrap();
    let last = cubic.last().unwrap();
    c.within("cubic-coupling last u eoc", last.eoc_u.unwrap(), 3.0, 0.4);
    c.at_least("cubic-coupling last y eoc", last.eoc_y_l2.unwrap(), 2.6);
    c.at_least("cubic-coupling last p eoc", last.eoc_p_l2.unwrap(), 2.6);

    c.finish(None);
}

#[test]
fn criterion_4_variational_control_orders() {
    let mut c = Criterion::new(4, "variational control orders");
    // The third-order study needs two extra refinements to leave the
    // preasymptotic superconvergent transient of the uniform-mesh stencils.
    for (m, ns) in [
        (1usize, &[8usize, 16, 32, 64][..]),
        (2, &[8, 16, 32, 64, 128][..]),
    ] {
        let rows =
            run_convergence_study(&study(ExampleId::Ex3, m, ControlRule::Variational, ns)).unwrap();
        c.within(
            &format!("m={m} last u eoc"),
            rows.last().unwrap().eoc_u.unwrap(),
            (m + 1) as f64,
            0.3,
        );
    }
    c.finish(None);
}

#[test]
fn criterion_5_recovery_superconvergence() {
    let mut c = Criterion::new(5, "gradient-recovery superconvergence");
    let rows = run_convergence_study(&study(
        ExampleId::Ex1,
        1,
        ControlRule::Equal,
        &[8, 16, 32, 64, 128],
    ))
    .unwrap();
    let last = rows.last().unwrap();
    c.at_least("last recovered-control eoc", last.eoc_u_rec.unwrap(), 1.5);
    c.check(
        last.err_u_rec.unwrap() < last.err_u,
        format!(
            "recovered error {:.2e} below raw control error {:.2e}",
            last.err_u_rec.unwrap(),
            last.err_u
        ),
    );
    c.finish(None);
}

#[test]
fn criterion_6_gradient_descent_contraction() {
    let mut c = Criterion::new(6, "projected gradient contraction");
    let ex = make_example(ExampleId::Ex1);
    let mesh = TriMesh::uniform(16, Rect::unit_square()).unwrap();
    let recon = ReconstructionMatrix::assemble(&mesh, 1, None).unwrap();
    let mu = EllipticCoeffs::default_penalty(1);
    let op = EllipticOperator::new(
        &mesh,
        &recon,
        EllipticCoeffs::identity(mu),
        SolverKind::Direct,
        1e-12,
    )
    .unwrap();
    let control = TriMesh::uniform(16, Rect::unit_square()).unwrap();
    let disc = ControlDiscretization::elementwise(&mesh, 1, control).unwrap();

    let reference = pgd_solve(
        &op,
        &disc,
        &ex.problem,
        &PgdOptions {
            rho: 0.5,
            tol_u: 1e-13,
            max_iter: 2000,
            keep_iterates: false,
        },
    )
    .unwrap();
    c.check(
        reference.converged,
        format!("reference converged in {} iterations", reference.iterations),
    );

    let measured = pgd_solve(
        &op,
        &disc,
        &ex.problem,
        &PgdOptions {
            rho: 0.5,
            tol_u: 1e-9,
            max_iter: 500,
            keep_iterates: true,
        },
    )
    .unwrap();
    c.check(
        measured.converged,
        format!(
            "measured run converged in {} iterations",
            measured.iterations
        ),
    );

    let errs: Vec<f64> = measured
        .iterates
        .as_ref()
        .unwrap()
        .iter()
        .map(|u| disc.weighted_dist(u, &reference.u))
        .collect();
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[1] / w[0]).collect();
    c.at_least("contraction ratios available", ratios.len() as f64, 10.0);
    let tail = &ratios[ratios.len().saturating_sub(10)..];
    let max = tail.iter().cloned().fold(f64::MIN, f64::max);
    let min = tail.iter().cloned().fold(f64::MAX, f64::min);
    c.at_most("max tail contraction ratio", max, 0.9);
    c.at_most("tail ratio spread", max - min, 0.1);
    c.finish(Some(60.0));
}

#[test]
fn criterion_7_indicator_effectivity_bands() {
    let mut c = Criterion::new(7, "state indicator effectivity bands");
    let rows = run_estimator_study(&study(
        ExampleId::Ex1,
        1,
        ControlRule::Equal,
        &[4, 8, 16, 32, 64],
    ))
    .unwrap();
    for row in &rows {
        c.in_range(
            &format!("n={} max_K state effectivity", row.n),
            row.max_eff_y,
            5.0,
            55.0,
        );
        c.in_range(
            &format!("n={} min_K state effectivity", row.n),
            row.min_eff_y,
            0.8,
            5.0,
        );
    }
    let max_over_h = rows.iter().map(|r| r.max_eff_y).fold(f64::MIN, f64::max);
    let min_over_h = rows.iter().map(|r| r.max_eff_y).fold(f64::MAX, f64::min);
    c.at_most(
        "variation of max_K effectivity across h",
        max_over_h / min_over_h,
        4.0,
    );
    c.finish(None);
}

#[test]
fn criterion_8_optimality_residuals() {
    let mut c = Criterion::new(8, "first-order optimality at the converged control");
    let ex = make_example(ExampleId::Ex1);
    let mesh = TriMesh::uniform(16, Rect::unit_square()).unwrap();
    let case = solve_case(
        &mesh,
        &ex,
        1,
        ControlRule::Equal,
        None,
        &PgdOptions::default(),
        None,
    )
    .unwrap();
    c.check(
        case.solution.converged,
        format!(
            "solver converged in {} iterations",
            case.solution.iterations
        ),
    );
    let report = kkt_report(&case.disc, &ex.problem, &case.solution.u, &case.solution.p);
    c.tiny("complementarity violation", report.complementarity, 1e-8);
    c.tiny("natural residual", report.natural_residual, 1e-8);
    c.finish(Some(60.0));
}

#[test]
fn criterion_9_structural_invariants() {
    let mut c = Criterion::new(9, "structural invariants");
    let ex = make_example(ExampleId::Ex1);

    // System matrix symmetry, relative to its largest entry.
    for (m, n) in [(1usize, 16usize), (2, 8)] {
        let mesh = TriMesh::uniform(n, Rect::unit_square()).unwrap();
        let recon = ReconstructionMatrix::assemble(&mesh, m, None).unwrap();
        let op = EllipticOperator::new(
            &mesh,
            &recon,
            EllipticCoeffs::identity(EllipticCoeffs::default_penalty(m)),
            SolverKind::Direct,
            1e-12,
        )
        .unwrap();
        c.tiny(
            &format!("m={m} n={n} relative stiffness asymmetry"),
            op.matrix.max_asymmetry() / op.matrix.max_abs(),
            1e-12,
        );
    }

    // Control-to-state-to-control composition is self-adjoint, and the
    // moment map and the element-mean map are adjoint to each other.
    let mesh = TriMesh::uniform(8, Rect::unit_square()).unwrap();
    let recon = ReconstructionMatrix::assemble(&mesh, 1, None).unwrap();
    let op = EllipticOperator::new(
        &mesh,
        &recon,
        EllipticCoeffs::identity(EllipticCoeffs::default_penalty(1)),
        SolverKind::Direct,
        1e-12,
    )
    .unwrap();
    let control = TriMesh::uniform(8, Rect::unit_square()).unwrap();
    let disc = ControlDiscretization::elementwise(&mesh, 1, control).unwrap();
    let cm = disc.control_mesh().unwrap();
    let u1: Vec<f64> = (0..disc.n_dofs())
        .map(|t| {
            let x = cm.center(t);
            (3.0 * x[0] + x[1]).sin()
        })
        .collect();
    let u2: Vec<f64> = (0..disc.n_dofs())
        .map(|t| {
            let x = cm.center(t);
            (2.0 * x[0] - x[1]).cos()
        })
        .collect();
    let apply_s = |u: &[f64]| {
        let bu = disc.apply_b(u, ex.problem.c_b);
        op.solve(|_, _, _| 0.0, |_| 0.0, Some(&bu)).unwrap().0
    };
    let pair = |u: &[f64], field| {
        let bsf = disc.apply_b_star(field, ex.problem.c_b);
        (0..u.len())
            .map(|t| cm.area(t) * u[t] * bsf[t])
            .sum::<f64>()
    };
    let s1 = apply_s(&u1);
    let s2 = apply_s(&u2);
    let a12 = pair(&u2, &s1);
    let a21 = pair(&u1, &s2);
    c.tiny(
        "composed-operator asymmetry",
        (a12 - a21).abs() / a12.abs().max(1.0),
        1e-10,
    );

    let lhs: f64 = {
        let bu = disc.apply_b(&u1, ex.problem.c_b);
        let dim = s2.dim();
        (0..mesh.n_elements())
            .map(|k| {
                s2.coeffs_of(k)
                    .iter()
                    .zip(&bu[k * dim..(k + 1) * dim])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .sum()
    };
    let rhs = pair(&u1, &s2);
    c.tiny(
        "moment/mean adjoint defect",
        (lhs - rhs).abs() / lhs.abs().max(1.0),
        1e-12,
    );

    // Admissible-set projection is idempotent and fixes admissible points;
    // the piecewise-constant projection reproduces piecewise constants.
    let mut v: Vec<f64> = (0..disc.n_dofs())
        .map(|t| (t as f64 * 0.37).sin() - 0.3)
        .collect();
    disc.project(&ex.problem.admissible, &mut v);
    let mut w = v.clone();
    disc.project(&ex.problem.admissible, &mut w);
    let drift = v
        .iter()
        .zip(&w)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    c.tiny("projection idempotence drift", drift, 1e-12);

    let u0: Vec<f64> = (0..disc.n_dofs())
        .map(|t| ((t * t + 1) as f64 * 0.13).sin())
        .collect();
    let projected = disc.l2_project(|x| u0[cm.locate(x).unwrap()]);
    let exact_defect = (0..disc.n_dofs())
        .map(|t| (projected[t] - u0[t]).abs())
        .fold(0.0, f64::max);
    c.tiny(
        "piecewise-constant projection exactness",
        exact_defect,
        1e-12,
    );

    // Mesh entity counts on the structured grid.
    let mut euler_ok = true;
    for n in [3usize, 4, 7, 16] {
        let mesh = TriMesh::uniform(n, Rect::unit_square()).unwrap();
        euler_ok &= mesh.n_vertices() == (n + 1) * (n + 1)
            && mesh.n_elements() == 2 * n * n
            && mesh.n_edges() == 3 * n * n + 2 * n
            && mesh.n_vertices() + mesh.n_elements() == mesh.n_edges() + 1;
    }
    c.check(
        euler_ok,
        "entity counts and Euler formula on n in {3,4,7,16}".into(),
    );

    // Two identical studies serialize to identical bytes.
    let cfg = study(ExampleId::Ex1, 1, ControlRule::Equal, &[4, 8]);
    let mut first = Vec::new();
    write_study_csv(&run_convergence_study(&cfg).unwrap(), &mut first).unwrap();
    let mut second = Vec::new();
    write_study_csv(&run_convergence_study(&cfg).unwrap(), &mut second).unwrap();
    c.check(
        first == second,
        format!("study csv deterministic ({} bytes)", first.len()),
    );

    c.finish(Some(60.0));
}
