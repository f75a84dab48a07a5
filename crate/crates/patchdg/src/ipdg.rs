//! Symmetric interior penalty discretization on the reconstructed space.
//!
//! The bilinear form on the broken polynomial space is
//!
//! ```text
//! sum_K (A grad u, grad v)_K
//! - sum_e ({A grad u} . [v] + {A grad v} . [u])_e
//! + sum_e mu/h_e ([u] . [v])_e
//! ```
//!
//! over all edges, with boundary edges using [v] = v n and {t} = t. Dirichlet
//! data enters the load the same weak way. The piecewise-constant system
//! matrix is R^T A_block R, which stays symmetric positive definite for a
//! sufficiently large penalty (default mu = 3 m^2).

use crate::mesh::TriMesh;
use crate::quad::{edge_rule, triangle_rule, EdgeRule, LocalBasis, TriRule};
use crate::recon::{ReconError, ReconstructionMatrix};
use crate::sparse::{
    spd_solve, triple_product, CooBuilder, LdlFactor, SolveStats, SolverKind, SparseError,
    SparseMatrix,
};
use std::sync::Arc;
use thiserror::Error;

pub type MatrixFn = dyn Fn([f64; 2]) -> [[f64; 2]; 2] + Send + Sync;
/// Partial derivatives of the coefficient matrix: returns [dA/dx, dA/dy].
pub type MatrixGradFn = dyn Fn([f64; 2]) -> [[[f64; 2]; 2]; 2] + Send + Sync;

#[derive(Debug, Error)]
pub enum IpdgError {
    #[error("stiffness matrix is not positive definite with penalty mu = {mu}; increase the penalty: {source}")]
    NotCoercive { mu: f64, source: SparseError },
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Recon(#[from] ReconError),
}

/// Diffusion coefficient and penalty weight of the elliptic operator.
#[derive(Clone)]
pub struct EllipticCoeffs {
    pub a: Arc<MatrixFn>,
    /// Needed only by the volume residual indicator for variable A.
    pub grad_a: Option<Arc<MatrixGradFn>>,
    pub mu: f64,
}

impl EllipticCoeffs {
    /// Identity diffusion with the given penalty.
    pub fn identity(mu: f64) -> Self {
        EllipticCoeffs {
            a: Arc::new(|_| [[1.0, 0.0], [0.0, 1.0]]),
            grad_a: None,
            mu,
        }
    }

    /// Default penalty 3 m^2 for reconstruction degree m.
    pub fn default_penalty(m: usize) -> f64 {
        3.0 * (m * m) as f64
    }
}

/// Volume rule for assembly of degree-m spaces.
pub fn assembly_rule(m: usize) -> TriRule {
    triangle_rule((2 * m + 2).max(6)).expect("degree in range")
}

fn assembly_edge_rule(m: usize) -> EdgeRule {
    edge_rule((2 * m + 2).max(6)).expect("degree in range")
}

/// Volume rule for error norms, two degrees above the assembly rule.
pub fn error_rule(m: usize) -> TriRule {
    triangle_rule(2 * m + 4).expect("degree in range")
}

fn error_edge_rule(m: usize) -> EdgeRule {
    edge_rule(2 * m + 4).expect("degree in range")
}

/// Piecewise polynomial with its generating element values.
#[derive(Debug, Clone)]
pub struct DGField {
    pub degree: usize,
    /// One value per element; the actual unknowns.
    pub w: Vec<f64>,
    /// poly_dim(degree) coefficients per element, local basis of that element.
    pub coeffs: Vec<f64>,
}

impl DGField {
    pub fn from_elements(w: Vec<f64>, r: &ReconstructionMatrix) -> Self {
        let coeffs = r.apply(&w);
        DGField {
            degree: r.degree(),
            w,
            coeffs,
        }
    }

    pub fn dim(&self) -> usize {
        crate::quad::poly_dim(self.degree)
    }

    pub fn coeffs_of(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.coeffs[k * d..(k + 1) * d]
    }

    pub fn value(&self, mesh: &TriMesh, k: usize, x: [f64; 2]) -> f64 {
        LocalBasis::for_element(mesh, k, self.degree).value(self.coeffs_of(k), x)
    }

    pub fn gradient(&self, mesh: &TriMesh, k: usize, x: [f64; 2]) -> [f64; 2] {
        LocalBasis::for_element(mesh, k, self.degree).gradient(self.coeffs_of(k), x)
    }

    /// Exact integral of the polynomial over element `k`.
    pub fn integral_on(&self, mesh: &TriMesh, k: usize, rule: &TriRule) -> f64 {
        let basis = LocalBasis::for_element(mesh, k, self.degree);
        let (pts, wts) = rule.map_to_element(mesh, k);
        pts.iter()
            .zip(&wts)
            .map(|(&p, &w)| w * basis.value(self.coeffs_of(k), p))
            .sum()
    }
}

fn mat_vec(a: [[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [
        a[0][0] * v[0] + a[0][1] * v[1],
        a[1][0] * v[0] + a[1][1] * v[1],
    ]
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// SIPG form on the broken polynomial space (block index = elem * dim + term).
pub fn assemble_block_stiffness(mesh: &TriMesh, coeffs: &EllipticCoeffs, m: usize) -> SparseMatrix {
    assemble_block_parts(mesh, coeffs, m, true, true, true)
}

/// Assembly with individually switchable volume/consistency/penalty parts;
/// exposed for structure tests through `assemble_block_stiffness`.
pub(crate) fn assemble_block_parts(
    mesh: &TriMesh,
    coeffs: &EllipticCoeffs,
    m: usize,
    volume: bool,
    consistency: bool,
    penalty: bool,
) -> SparseMatrix {
    let dim = crate::quad::poly_dim(m);
    let n = mesh.n_elements() * dim;
    let mut coo = CooBuilder::new(n, n);
    let vrule = assembly_rule(m);
    let erule = assembly_edge_rule(m);
    let mu = coeffs.mu;

    if volume {
        let mut grads = vec![[0.0; 2]; dim];
        for k in 0..mesh.n_elements() {
            let basis = LocalBasis::for_element(mesh, k, m);
            let (pts, wts) = vrule.map_to_element(mesh, k);
            let mut block = vec![0.0; dim * dim];
            for (p, w) in pts.iter().zip(&wts) {
                let a = (coeffs.a)(*p);
                basis.eval_grad(*p, &mut grads);
                for i in 0..dim {
                    let agi = mat_vec(a, grads[i]);
                    for j in 0..dim {
                        block[i * dim + j] += w * dot2(agi, grads[j]);
                    }
                }
            }
            for i in 0..dim {
                for j in 0..dim {
                    coo.push(k * dim + i, k * dim + j, block[i * dim + j]);
                }
            }
        }
    }

    if consistency || penalty {
        let mut vals = [vec![0.0; dim], vec![0.0; dim]];
        let mut grads = [vec![[0.0; 2]; dim], vec![[0.0; 2]; dim]];
        for edge in &mesh.edges {
            let a_v = mesh.vertices[edge.verts[0]];
            let b_v = mesh.vertices[edge.verts[1]];
            let (pts, wts) = erule.map_to(a_v, b_v);
            let normal = edge.normal;
            let pen = mu / edge.length;
            match edge.outside {
                Some(km) => {
                    let kp = edge.inside;
                    let sides = [kp, km];
                    let signs = [1.0, -1.0];
                    let bases = [
                        LocalBasis::for_element(mesh, kp, m),
                        LocalBasis::for_element(mesh, km, m),
                    ];
                    let mut blocks = [
                        [vec![0.0; dim * dim], vec![0.0; dim * dim]],
                        [vec![0.0; dim * dim], vec![0.0; dim * dim]],
                    ];
                    for (p, w) in pts.iter().zip(&wts) {
                        let a = (coeffs.a)(*p);
                        for s in 0..2 {
                            bases[s].eval(*p, &mut vals[s]);
                            bases[s].eval_grad(*p, &mut grads[s]);
                        }
                        for r in 0..2 {
                            for c in 0..2 {
                                let block = &mut blocks[r][c];
                                for i in 0..dim {
                                    let flux_i = dot2(mat_vec(a, grads[r][i]), normal);
                                    for j in 0..dim {
                                        let flux_j = dot2(mat_vec(a, grads[c][j]), normal);
                                        let mut e = 0.0;
                                        if consistency {
                                            e -= 0.5 * signs[r] * vals[r][i] * flux_j;
                                            e -= 0.5 * signs[c] * vals[c][j] * flux_i;
                                        }
                                        if penalty {
                                            e +=
                                                pen * signs[r] * signs[c] * vals[r][i] * vals[c][j];
                                        }
                                        block[i * dim + j] += w * e;
                                    }
                                }
                            }
                        }
                    }
                    for r in 0..2 {
                        for c in 0..2 {
                            for i in 0..dim {
                                for j in 0..dim {
                                    coo.push(
                                        sides[r] * dim + i,
                                        sides[c] * dim + j,
                                        blocks[r][c][i * dim + j],
                                    );
                                }
                            }
                        }
                    }
                }
                None => {
                    let k = edge.inside;
                    let basis = LocalBasis::for_element(mesh, k, m);
                    let mut block = vec![0.0; dim * dim];
                    for (p, w) in pts.iter().zip(&wts) {
                        let a = (coeffs.a)(*p);
                        basis.eval(*p, &mut vals[0]);
                        basis.eval_grad(*p, &mut grads[0]);
                        for i in 0..dim {
                            let flux_i = dot2(mat_vec(a, grads[0][i]), normal);
                            for j in 0..dim {
                                let flux_j = dot2(mat_vec(a, grads[0][j]), normal);
                                let mut e = 0.0;
                                if consistency {
                                    e -= vals[0][i] * flux_j + vals[0][j] * flux_i;
                                }
                                if penalty {
                                    e += pen * vals[0][i] * vals[0][j];
                                }
                                block[i * dim + j] += w * e;
                            }
                        }
                    }
                    for i in 0..dim {
                        for j in 0..dim {
                            coo.push(k * dim + i, k * dim + j, block[i * dim + j]);
                        }
                    }
                }
            }
        }
    }

    coo.finalize()
}

/// System matrix R^T A_block R on element values.
pub fn assemble_stiffness(
    mesh: &TriMesh,
    recon: &ReconstructionMatrix,
    coeffs: &EllipticCoeffs,
) -> SparseMatrix {
    let block = assemble_block_stiffness(mesh, coeffs, recon.degree());
    triple_product(&block, &recon.to_sparse())
}

/// Load vector on element values: volume source, weak Dirichlet data, and an
/// optional extra load already in block-coefficient space. The source sees
/// (element id, volume quad point index, point).
pub fn assemble_load(
    mesh: &TriMesh,
    recon: &ReconstructionMatrix,
    coeffs: &EllipticCoeffs,
    source: impl Fn(usize, usize, [f64; 2]) -> f64,
    boundary: impl Fn([f64; 2]) -> f64,
    extra_block_load: Option<&[f64]>,
) -> Vec<f64> {
    let m = recon.degree();
    let dim = crate::quad::poly_dim(m);
    let mut rhs = vec![0.0; mesh.n_elements() * dim];
    if let Some(extra) = extra_block_load {
        assert_eq!(extra.len(), rhs.len());
        rhs.copy_from_slice(extra);
    }
    let vrule = assembly_rule(m);
    let erule = assembly_edge_rule(m);
    let mut vals = vec![0.0; dim];
    let mut grads = vec![[0.0; 2]; dim];

    for k in 0..mesh.n_elements() {
        let basis = LocalBasis::for_element(mesh, k, m);
        let (pts, wts) = vrule.map_to_element(mesh, k);
        for (q, (p, w)) in pts.iter().zip(&wts).enumerate() {
            let f = source(k, q, *p);
            basis.eval(*p, &mut vals);
            for i in 0..dim {
                rhs[k * dim + i] += w * f * vals[i];
            }
        }
    }

    for edge in &mesh.edges {
        if edge.outside.is_some() {
            continue;
        }
        let k = edge.inside;
        let basis = LocalBasis::for_element(mesh, k, m);
        let a_v = mesh.vertices[edge.verts[0]];
        let b_v = mesh.vertices[edge.verts[1]];
        let (pts, wts) = erule.map_to(a_v, b_v);
        let pen = coeffs.mu / edge.length;
        for (p, w) in pts.iter().zip(&wts) {
            let g = boundary(*p);
            if g == 0.0 {
                continue;
            }
            let a = (coeffs.a)(*p);
            basis.eval(*p, &mut vals);
            basis.eval_grad(*p, &mut grads);
            for i in 0..dim {
                let flux_i = dot2(mat_vec(a, grads[i]), edge.normal);
                rhs[k * dim + i] += w * g * (pen * vals[i] - flux_i);
            }
        }
    }

    recon.apply_transpose(&rhs)
}

/// Assembled elliptic operator with a reusable factorization.
pub struct EllipticOperator<'a> {
    pub mesh: &'a TriMesh,
    pub recon: &'a ReconstructionMatrix,
    pub coeffs: EllipticCoeffs,
    pub matrix: SparseMatrix,
    factor: Option<LdlFactor>,
    solver: SolverKind,
    tol: f64,
}

impl<'a> EllipticOperator<'a> {
    /// Assembles the system matrix; a direct preference factors it eagerly so
    /// repeated solves share the factorization.
    pub fn new(
        mesh: &'a TriMesh,
        recon: &'a ReconstructionMatrix,
        coeffs: EllipticCoeffs,
        solver: SolverKind,
        tol: f64,
    ) -> Result<Self, IpdgError> {
        let matrix = assemble_stiffness(mesh, recon, &coeffs);
        let factor = match solver {
            SolverKind::Direct => {
                Some(
                    LdlFactor::factor(&matrix).map_err(|source| IpdgError::NotCoercive {
                        mu: coeffs.mu,
                        source,
                    })?,
                )
            }
            SolverKind::Iterative => None,
        };
        Ok(EllipticOperator {
            mesh,
            recon,
            coeffs,
            matrix,
            factor,
            solver,
            tol,
        })
    }

    /// Solves a_h(y, .) = load(source, boundary, extra) and lifts the result.
    pub fn solve(
        &self,
        source: impl Fn(usize, usize, [f64; 2]) -> f64,
        boundary: impl Fn([f64; 2]) -> f64,
        extra_block_load: Option<&[f64]>,
    ) -> Result<(DGField, SolveStats), IpdgError> {
        let b = assemble_load(
            self.mesh,
            self.recon,
            &self.coeffs,
            source,
            boundary,
            extra_block_load,
        );
        let (w, stats) = match (&self.factor, self.solver) {
            (Some(f), _) => {
                let x = f.solve(&b);
                let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                let ax = self.matrix.matvec(&x);
                let res = ax
                    .iter()
                    .zip(&b)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let stats = SolveStats {
                    method: SolverKind::Direct,
                    iterations: 0,
                    rel_residual: res / bnorm,
                    factor_nnz: f.nnz(),
                };
                (x, stats)
            }
            (None, _) => {
                let (x, stats) = spd_solve(&self.matrix, &b, self.tol, SolverKind::Iterative)
                    .map_err(|source| match source {
                        e @ SparseError::NotSpd { .. } => IpdgError::NotCoercive {
                            mu: self.coeffs.mu,
                            source: e,
                        },
                        e => IpdgError::Sparse(e),
                    })?;
                (x, stats)
            }
        };
        Ok((DGField::from_elements(w, self.recon), stats))
    }
}

/// One-shot elliptic solve; builds the operator internally.
pub fn solve_elliptic(
    mesh: &TriMesh,
    recon: &ReconstructionMatrix,
    coeffs: EllipticCoeffs,
    source: impl Fn(usize, usize, [f64; 2]) -> f64,
    boundary: impl Fn([f64; 2]) -> f64,
    solver: SolverKind,
    tol: f64,
) -> Result<(DGField, SolveStats), IpdgError> {
    EllipticOperator::new(mesh, recon, coeffs, solver, tol)?.solve(source, boundary, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgNormVariant {
    /// Broken H1 seminorm plus penalized jumps.
    Jump,
    /// `Jump` plus edge-weighted flux averages (the norm error bounds use).
    Full,
}

/// DG norm of a discrete field. Edge weights use the penalty-scaled edge
/// length h_e / mu.
pub fn dg_norm(field: &DGField, mesh: &TriMesh, mu: f64, variant: DgNormVariant) -> f64 {
    dg_norm_impl(field, mesh, mu, variant, None, None)
}

/// DG norm of (exact - field) for a smooth exact function.
pub fn dg_error_norm(
    field: &DGField,
    mesh: &TriMesh,
    mu: f64,
    variant: DgNormVariant,
    exact: &dyn Fn([f64; 2]) -> f64,
    exact_grad: &dyn Fn([f64; 2]) -> [f64; 2],
) -> f64 {
    dg_norm_impl(field, mesh, mu, variant, Some(exact), Some(exact_grad))
}

fn dg_norm_impl(
    field: &DGField,
    mesh: &TriMesh,
    mu: f64,
    variant: DgNormVariant,
    exact: Option<&dyn Fn([f64; 2]) -> f64>,
    exact_grad: Option<&dyn Fn([f64; 2]) -> [f64; 2]>,
) -> f64 {
    let m = field.degree;
    let vrule = error_rule(m);
    let erule = error_edge_rule(m);
    let mut total = 0.0;

    for k in 0..mesh.n_elements() {
        let (pts, wts) = vrule.map_to_element(mesh, k);
        for (p, w) in pts.iter().zip(&wts) {
            let mut g = field.gradient(mesh, k, *p);
            if let Some(eg) = exact_grad {
                let e = eg(*p);
                g = [e[0] - g[0], e[1] - g[1]];
            }
            total += w * dot2(g, g);
        }
    }

    for edge in &mesh.edges {
        let a_v = mesh.vertices[edge.verts[0]];
        let b_v = mesh.vertices[edge.verts[1]];
        let (pts, wts) = erule.map_to(a_v, b_v);
        let h_tilde = edge.length / mu;
        match edge.outside {
            Some(km) => {
                let kp = edge.inside;
                for (p, w) in pts.iter().zip(&wts) {
                    // The exact function is single-valued: it cancels in the jump.
                    let jump = field.value(mesh, kp, *p) - field.value(mesh, km, *p);
                    total += w * jump * jump / h_tilde;
                    if variant == DgNormVariant::Full {
                        let gp = field.gradient(mesh, kp, *p);
                        let gm = field.gradient(mesh, km, *p);
                        let mut avg = [0.5 * (gp[0] + gm[0]), 0.5 * (gp[1] + gm[1])];
                        if let Some(eg) = exact_grad {
                            let e = eg(*p);
                            avg = [e[0] - avg[0], e[1] - avg[1]];
                        }
                        total += w * h_tilde * dot2(avg, avg);
                    }
                }
            }
            None => {
                let k = edge.inside;
                for (p, w) in pts.iter().zip(&wts) {
                    let mut v = field.value(mesh, k, *p);
                    if let Some(e) = exact {
                        v = e(*p) - v;
                    }
                    total += w * v * v / h_tilde;
                    if variant == DgNormVariant::Full {
                        let mut g = field.gradient(mesh, k, *p);
                        if let Some(eg) = exact_grad {
                            let e = eg(*p);
                            g = [e[0] - g[0], e[1] - g[1]];
                        }
                        total += w * h_tilde * dot2(g, g);
                    }
                }
            }
        }
    }
    total.sqrt()
}

/// L2 norm of (exact - field) over the mesh.
pub fn l2_error(field: &DGField, mesh: &TriMesh, exact: &dyn Fn([f64; 2]) -> f64) -> f64 {
    let vrule = error_rule(field.degree);
    let mut total = 0.0;
    for k in 0..mesh.n_elements() {
        let basis = LocalBasis::for_element(mesh, k, field.degree);
        let coeffs = field.coeffs_of(k);
        let (pts, wts) = vrule.map_to_element(mesh, k);
        for (p, w) in pts.iter().zip(&wts) {
            let d = exact(*p) - basis.value(coeffs, *p);
            total += w * d * d;
        }
    }
    total.sqrt()
}

/// L2 inner product of two fields of the same degree.
pub fn l2_inner(a: &DGField, b: &DGField, mesh: &TriMesh) -> f64 {
    assert_eq!(a.degree, b.degree);
    let vrule = error_rule(a.degree);
    let mut total = 0.0;
    for k in 0..mesh.n_elements() {
        let basis = LocalBasis::for_element(mesh, k, a.degree);
        let (pts, wts) = vrule.map_to_element(mesh, k);
        for (p, w) in pts.iter().zip(&wts) {
            total += w * basis.value(a.coeffs_of(k), *p) * basis.value(b.coeffs_of(k), *p);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Rect;
    use crate::recon::ReconstructionMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const PI: f64 = std::f64::consts::PI;

    fn poisson_setup(n: usize, m: usize) -> (TriMesh, ReconstructionMatrix) {
        let mesh = TriMesh::uniform(n, Rect::unit_square()).unwrap();
        let recon = ReconstructionMatrix::assemble(&mesh, m, None).unwrap();
        (mesh, recon)
    }

    #[test]
    fn constant_block_quadratic_form_is_pure_boundary_penalty() {
        // On the 2-element unit square with mu = 3 the form evaluates a
        // constant c against itself to 12 c^2: four unit boundary edges, no
        // gradients, no interior jump.
        let mesh = TriMesh::uniform(1, Rect::unit_square()).unwrap();
        let a = assemble_block_stiffness(&mesh, &EllipticCoeffs::identity(3.0), 1);
        let dim = 3;
        let mut x = vec![0.0; mesh.n_elements() * dim];
        for k in 0..mesh.n_elements() {
            x[k * dim] = 2.0;
        }
        let ax = a.matvec(&x);
        let form: f64 = x.iter().zip(&ax).map(|(p, q)| p * q).sum();
        assert!((form - 12.0 * 4.0).abs() < 1e-12, "got {form}");
    }

    #[test]
    fn stiffness_is_symmetric_and_positive_definite() {
        for m in [1, 2] {
            let (mesh, recon) = poisson_setup(4, m);
            let coeffs = EllipticCoeffs::identity(EllipticCoeffs::default_penalty(m));
            let mat = assemble_stiffness(&mesh, &recon, &coeffs);
            assert!(mat.max_asymmetry() <= 1e-12 * mat.max_abs());
            assert!(LdlFactor::factor(&mat).is_ok());
        }
    }

    #[test]
    fn coefficient_scaling_isolates_the_penalty_part() {
        let (mesh, recon) = poisson_setup(3, 1);
        let scaled = |s: f64, mu: f64| {
            let coeffs = EllipticCoeffs {
                a: Arc::new(move |_| [[s, 0.0], [0.0, s]]),
                grad_a: None,
                mu,
            };
            assemble_stiffness(&mesh, &recon, &coeffs)
        };
        // Volume and consistency terms scale with A; the penalty does not.
        let m2_p0 = scaled(2.0, 0.0);
        let m1_p0 = scaled(1.0, 0.0);
        let diff = m2_p0
            .to_dense()
            .iter()
            .zip(m1_p0.to_dense().iter())
            .map(|(a, b)| (a - 2.0 * b).abs())
            .fold(0.0f64, f64::max);
        assert!(diff <= 1e-12 * m2_p0.max_abs());
        // The penalty enters linearly in mu.
        let p3 = scaled(1.0, 3.0).to_dense() - m1_p0.to_dense();
        let p1 = scaled(1.0, 1.0).to_dense() - m1_p0.to_dense();
        let pen_diff = (&p3 - 3.0 * &p1).abs().max();
        assert!(pen_diff <= 1e-12 * p3.abs().max());
    }

    #[test]
    fn dg_norm_of_constant_counts_boundary_penalty() {
        // Synthetic constant field on the 2-element square: only the four
        // unit boundary edges contribute, mu/h_e * c^2 each.
        let mesh = TriMesh::uniform(1, Rect::unit_square()).unwrap();
        let field = DGField {
            degree: 1,
            w: vec![2.0; mesh.n_elements()],
            coeffs: (0..mesh.n_elements())
                .flat_map(|_| [2.0, 0.0, 0.0])
                .collect(),
        };
        let norm = dg_norm(&field, &mesh, 3.0, DgNormVariant::Jump);
        assert!((norm - (12.0f64 * 4.0).sqrt()).abs() < 1e-12);
        // The full variant adds gradient averages, all zero for a constant.
        let full = dg_norm(&field, &mesh, 3.0, DgNormVariant::Full);
        assert!((full - norm).abs() < 1e-13);
    }

    #[test]
    fn linear_exact_solution_is_reproduced_through_weak_boundary_data() {
        for m in [1usize, 2] {
            let (mesh, recon) = poisson_setup(4, m);
            let coeffs = EllipticCoeffs::identity(EllipticCoeffs::default_penalty(m));
            let (field, stats) = solve_elliptic(
                &mesh,
                &recon,
                coeffs,
                |_, _, _| 0.0,
                |p: [f64; 2]| 1.0 + 2.0 * p[0] - 0.5 * p[1],
                SolverKind::Direct,
                1e-12,
            )
            .unwrap();
            assert!(stats.rel_residual <= 1e-12);
            for k in 0..mesh.n_elements() {
                let c = mesh.center(k);
                let exact = 1.0 + 2.0 * c[0] - 0.5 * c[1];
                assert!(
                    (field.w[k] - exact).abs() < 1e-9,
                    "m={m} elem {k}: {} vs {exact}",
                    field.w[k]
                );
            }
        }
    }

    #[test]
    fn poisson_l2_error_halves_at_second_order() {
        let exact = |p: [f64; 2]| (PI * p[0]).sin() * (PI * p[1]).sin();
        let source = move |_: usize, _: usize, p: [f64; 2]| 2.0 * PI * PI * exact(p);
        let mut errs = Vec::new();
        for n in [4usize, 8] {
            let (mesh, recon) = poisson_setup(n, 1);
            let coeffs = EllipticCoeffs::identity(3.0);
            let (field, _) = solve_elliptic(
                &mesh,
                &recon,
                coeffs,
                source,
                |_| 0.0,
                SolverKind::Direct,
                1e-12,
            )
            .unwrap();
            errs.push(l2_error(&field, &mesh, &exact));
        }
        let eoc = (errs[0] / errs[1]).log2();
        assert!(eoc > 1.5, "L2 EOC {eoc} too small ({errs:?})");
    }

    #[test]
    fn iterative_solver_matches_direct() {
        let (mesh, recon) = poisson_setup(4, 1);
        let source = |_: usize, _: usize, p: [f64; 2]| p[0] + p[1];
        let direct = solve_elliptic(
            &mesh,
            &recon,
            EllipticCoeffs::identity(3.0),
            source,
            |_| 0.0,
            SolverKind::Direct,
            1e-12,
        )
        .unwrap()
        .0;
        let iterative = solve_elliptic(
            &mesh,
            &recon,
            EllipticCoeffs::identity(3.0),
            source,
            |_| 0.0,
            SolverKind::Iterative,
            1e-13,
        )
        .unwrap()
        .0;
        for k in 0..mesh.n_elements() {
            assert!((direct.w[k] - iterative.w[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn solution_operator_is_self_adjoint_in_l2() {
        let (mesh, recon) = poisson_setup(4, 1);
        let coeffs = EllipticCoeffs::identity(3.0);
        let op = EllipticOperator::new(&mesh, &recon, coeffs, SolverKind::Direct, 1e-12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w: Vec<f64> = (0..mesh.n_elements())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let v: Vec<f64> = (0..mesh.n_elements())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let solve_pw = |s: &Vec<f64>| {
            op.solve(|k: usize, _: usize, _: [f64; 2]| s[k], |_| 0.0, None)
                .unwrap()
                .0
        };
        let yw = solve_pw(&w);
        let yv = solve_pw(&v);
        let rule = error_rule(1);
        let pair = |field: &DGField, dual: &Vec<f64>| -> f64 {
            (0..mesh.n_elements())
                .map(|k| dual[k] * field.integral_on(&mesh, k, &rule))
                .sum()
        };
        let lhs = pair(&yw, &v);
        let rhs = pair(&yv, &w);
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1e-10));
    }

    #[test]
    fn low_penalty_is_reported_as_non_coercive() {
        let (mesh, recon) = poisson_setup(3, 2);
        let coeffs = EllipticCoeffs::identity(0.01);
        match EllipticOperator::new(&mesh, &recon, coeffs, SolverKind::Direct, 1e-12) {
            Err(IpdgError::NotCoercive { mu, .. }) => assert_eq!(mu, 0.01),
            Ok(_) => panic!("expected loss of coercivity with a tiny penalty"),
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
