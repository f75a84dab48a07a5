//! Command line front end. Three subcommands: `solve` reports one
//! configuration, `study` runs a refinement sequence into a CSV table, and
//! `estimate` tabulates indicator effectivities.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for numerical
//! failures. Set `RAYON_NUM_THREADS` to bound the worker pool; results are
//! identical for any thread count.

use crate::estimators::{
    combine_state_indicators, control_effectivity, eta_jumps, eta_volume, zz_recover,
};
use crate::harness::{
    control_resolution, make_example, run_convergence_study, run_estimator_study, solve_case,
    write_control_vtk, write_estimator_csv, write_state_vtk, write_study_csv, ControlRule,
    ExampleId, HarnessError, StudyConfig,
};
use crate::ipdg::{dg_error_norm, l2_error, DgNormVariant, EllipticCoeffs, IpdgError};
use crate::mesh::{Rect, TriMesh};
use crate::ocp::{kkt_report, PgdOptions};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use std::fs::File;
use std::io::Write;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "patchdg",
    version,
    about = "Reconstructed discontinuous Galerkin solver for constrained elliptic control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one configuration and print errors and optimality measures.
    Solve(RunArgs),
    /// Run a refinement study and write the error table as CSV.
    Study(RunArgs),
    /// Tabulate error indicator effectivities over a refinement sequence.
    Estimate(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Built-in problem: ex1 (lower bound), ex2 (box), ex3 (integral bound).
    #[arg(long)]
    example: Option<String>,

    /// Reconstruction degree.
    #[arg(long)]
    m: Option<usize>,

    /// Mesh resolutions, comma separated. `solve` uses the first entry.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,

    /// Control coupling: equal, quad, cubic, or variational.
    #[arg(long)]
    hu: Option<String>,

    /// Interior penalty parameter; default 3 m^2.
    #[arg(long)]
    mu: Option<f64>,

    /// Gradient step size.
    #[arg(long)]
    rho: Option<f64>,

    /// Stopping tolerance on the weighted control update norm.
    #[arg(long)]
    tol_u: Option<f64>,

    /// Iteration cap of the projected gradient loop.
    #[arg(long)]
    max_iter: Option<usize>,

    /// Patch size floor of the reconstruction operator.
    #[arg(long)]
    patch_threshold: Option<usize>,

    /// TOML file with the same keys; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output CSV path (study, estimate); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Prefix for VTK output; writes <prefix>_state.vtk and, for
    /// elementwise controls, <prefix>_control.vtk.
    #[arg(long)]
    vtk: Option<PathBuf>,

    /// Clip value for the per-element effectivity field in VTK output.
    #[arg(long, default_value_t = 2.0)]
    cap: f64,
}

/// File-based configuration, merged below explicit flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    example: Option<String>,
    m: Option<usize>,
    n: Option<Vec<usize>>,
    hu: Option<String>,
    mu: Option<f64>,
    rho: Option<f64>,
    tol_u: Option<f64>,
    max_iter: Option<usize>,
    patch_threshold: Option<usize>,
}

struct Resolved {
    example: ExampleId,
    rule: ControlRule,
    config: StudyConfig,
}

fn resolve(args: &RunArgs) -> Result<Resolved, String> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => FileConfig::default(),
    };
    let example: ExampleId = args
        .example
        .clone()
        .or(file.example)
        .unwrap_or_else(|| "ex1".into())
        .parse()?;
    let rule: ControlRule = args
        .hu
        .clone()
        .or(file.hu)
        .unwrap_or_else(|| "equal".into())
        .parse()?;
    let degree = args.m.or(file.m).unwrap_or(1);
    if degree == 0 || degree > 4 {
        return Err(format!("degree must be between 1 and 4, got {degree}"));
    }
    let resolutions = args.n.clone().or(file.n).unwrap_or_else(|| vec![8, 16, 32]);
    if resolutions.is_empty() {
        return Err("at least one mesh resolution is required".into());
    }
    let defaults = PgdOptions::default();
    let pgd = PgdOptions {
        rho: args.rho.or(file.rho).unwrap_or(defaults.rho),
        tol_u: args.tol_u.or(file.tol_u).unwrap_or(defaults.tol_u),
        max_iter: args.max_iter.or(file.max_iter).unwrap_or(defaults.max_iter),
        keep_iterates: false,
    };
    if pgd.rho <= 0.0 {
        return Err(format!("step size must be positive, got {}", pgd.rho));
    }
    Ok(Resolved {
        example,
        rule,
        config: StudyConfig {
            example,
            degree,
            resolutions,
            control: rule,
            mu: args.mu.or(file.mu),
            pgd,
            patch_threshold: args.patch_threshold.or(file.patch_threshold),
        },
    })
}

fn exit_code(err: &HarnessError) -> i32 {
    match err {
        HarnessError::BadResolution { .. } | HarnessError::Mesh(_) | HarnessError::Recon(_) => 2,
        HarnessError::Ipdg(IpdgError::Recon(_)) => 2,
        _ => 3,
    }
}

fn open_out(path: &Option<PathBuf>) -> std::io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn cmd_solve(args: &RunArgs, r: &Resolved) -> Result<(), (i32, String)> {
    let fail = |e: HarnessError| (exit_code(&e), e.to_string());
    let cfg = &r.config;
    let n = cfg.resolutions[0];
    let example = make_example(r.example);
    let mesh = TriMesh::uniform(n, Rect::unit_square()).map_err(|e| fail(e.into()))?;
    let case = solve_case(
        &mesh,
        &example,
        cfg.degree,
        r.rule,
        cfg.mu,
        &cfg.pgd,
        cfg.patch_threshold,
    )
    .map_err(fail)?;
    let sol = &case.solution;
    let exact = &example.exact;

    let n_u = control_resolution(r.rule, n).map_err(fail)?;
    match n_u {
        Some(n_u) => println!(
            "example {:?}, degree {}, n {}, control n_u {}",
            r.example, cfg.degree, n, n_u
        ),
        None => println!(
            "example {:?}, degree {}, n {}, variational control",
            r.example, cfg.degree, n
        ),
    }
    println!(
        "penalty {}, step {}, tolerance {:.1e}",
        case.mu, sol.rho_final, cfg.pgd.tol_u
    );
    if sol.converged {
        println!("converged in {} iterations", sol.iterations);
    } else {
        println!("iteration cap reached after {} iterations", sol.iterations);
    }
    println!("objective     {:.6e}", sol.objective);
    println!(
        "err_u         {:.6e}",
        case.disc.l2_error(&sol.u, exact.u.as_ref())
    );
    println!(
        "err_y_l2      {:.6e}",
        l2_error(&sol.y, &mesh, exact.y.as_ref())
    );
    println!(
        "err_p_l2      {:.6e}",
        l2_error(&sol.p, &mesh, exact.p.as_ref())
    );
    println!(
        "err_y_dg      {:.6e}",
        dg_error_norm(
            &sol.y,
            &mesh,
            case.mu,
            DgNormVariant::Full,
            exact.y.as_ref(),
            exact.grad_y.as_ref()
        )
    );
    println!(
        "err_p_dg      {:.6e}",
        dg_error_norm(
            &sol.p,
            &mesh,
            case.mu,
            DgNormVariant::Full,
            exact.p.as_ref(),
            exact.grad_p.as_ref()
        )
    );
    if let Some(mesh_u) = case.disc.control_mesh() {
        let rec = zz_recover(mesh_u, &sol.u);
        println!(
            "err_u_rec     {:.6e}",
            rec.l2_error(mesh_u, &|x| (exact.u)(x))
        );
    }
    let kkt = kkt_report(&case.disc, &example.problem, &sol.u, &sol.p);
    println!("kkt_natural   {:.6e}", kkt.natural_residual);
    println!("kkt_compl     {:.6e}", kkt.complementarity);
    println!("kkt_mult      {:.6e}", kkt.multiplier);

    if let Some(prefix) = &args.vtk {
        write_vtk_pair(prefix, args.cap, &mesh, &example, &case).map_err(|e| (3, e.to_string()))?;
    }
    Ok(())
}

fn write_vtk_pair(
    prefix: &std::path::Path,
    cap: f64,
    mesh: &TriMesh,
    example: &crate::harness::Example,
    case: &crate::harness::SolvedCase,
) -> std::io::Result<()> {
    let sol = &case.solution;
    let prob = &example.problem;
    let coeffs = EllipticCoeffs::identity(case.mu);

    let eta_y = {
        let (e2, e3) = eta_jumps(mesh, &sol.y, &coeffs);
        let u = &sol.u;
        let f = &prob.f;
        let c_b = prob.c_b;
        let e1 = match case.disc.control_mesh() {
            Some(mesh_u) => eta_volume(mesh, &sol.y, &coeffs, |_, x| {
                f(x) + c_b * u[mesh_u.locate(x).expect("point inside the domain")]
            }),
            None => {
                let per = crate::ipdg::assembly_rule(case.solution.y.degree).len();
                // Sampled controls carry one value per volume quadrature
                // point; the residual rule uses other points, so fall back
                // to the element mean of the samples.
                eta_volume(mesh, &sol.y, &coeffs, |k, x| {
                    let s: f64 = u[k * per..(k + 1) * per].iter().sum();
                    f(x) + c_b * s / per as f64
                })
            }
        };
        combine_state_indicators(mesh, &e1, &e2, &e3)
    };
    let eta_p = {
        let (e2, e3) = eta_jumps(mesh, &sol.p, &coeffs);
        let y = &sol.y;
        let g_prime = &prob.g_prime;
        let e1 = eta_volume(mesh, &sol.p, &coeffs, |k, x| {
            g_prime(y.value(mesh, k, x), x)
        });
        combine_state_indicators(mesh, &e1, &e2, &e3)
    };

    let state_path = prefix.with_file_name(format!(
        "{}_state.vtk",
        prefix
            .file_name()
            .map(|s| s.to_string_lossy())
            .unwrap_or_default()
    ));
    let mut out = File::create(state_path)?;
    write_state_vtk(mesh, &sol.y, &sol.p, Some(&eta_y), Some(&eta_p), &mut out)?;

    if let Some(mesh_u) = case.disc.control_mesh() {
        let eff = control_effectivity(&case.disc, prob, &sol.u, &sol.p, &|x| (example.exact.u)(x))
            .map(|e| e.ratio);
        let control_path = prefix.with_file_name(format!(
            "{}_control.vtk",
            prefix
                .file_name()
                .map(|s| s.to_string_lossy())
                .unwrap_or_default()
        ));
        let mut out = File::create(control_path)?;
        match &eff {
            Some(ratios) => write_control_vtk(mesh_u, &sol.u, Some((ratios, cap)), &mut out)?,
            None => write_control_vtk(mesh_u, &sol.u, None, &mut out)?,
        }
    } else {
        eprintln!("note: no control VTK for the variational rule");
    }
    Ok(())
}

fn cmd_study(args: &RunArgs, r: &Resolved) -> Result<(), (i32, String)> {
    let rows = run_convergence_study(&r.config).map_err(|e| (exit_code(&e), e.to_string()))?;
    let mut out = open_out(&args.out).map_err(|e| (3, e.to_string()))?;
    write_study_csv(&rows, &mut out).map_err(|e| (3, e.to_string()))?;
    Ok(())
}

fn cmd_estimate(args: &RunArgs, r: &Resolved) -> Result<(), (i32, String)> {
    let rows = run_estimator_study(&r.config).map_err(|e| (exit_code(&e), e.to_string()))?;
    let mut out = open_out(&args.out).map_err(|e| (3, e.to_string()))?;
    write_estimator_csv(&rows, &mut out).map_err(|e| (3, e.to_string()))?;
    Ok(())
}

/// Entry point of the binary. Returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let args = match &cli.command {
        Command::Solve(a) | Command::Study(a) | Command::Estimate(a) => a,
    };
    let resolved = match resolve(args) {
        Ok(r) => r,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    let outcome = match &cli.command {
        Command::Solve(a) => cmd_solve(a, &resolved),
        Command::Study(a) => cmd_study(a, &resolved),
        Command::Estimate(a) => cmd_estimate(a, &resolved),
    };
    match outcome {
        Ok(()) => 0,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}
