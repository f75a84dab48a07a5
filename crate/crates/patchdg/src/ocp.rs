//! Projected gradient descent for distributed control of the penalized
//! elliptic solver.
//!
//! The control lives either as one value per element of a nested control
//! mesh or as values at the volume quadrature points of the state mesh. Both
//! share one loop: solve the state equation, solve the adjoint, form the
//! reduced gradient j'(u) + B* p in control space, step and project. The
//! elliptic factorization is computed once and shared by every solve.

use crate::ipdg::{DGField, EllipticOperator, IpdgError};
use crate::mesh::{child_elements, nested_ratio, parent_element, MeshError, TriMesh};
use crate::quad::{triangle_rule, LocalBasis, TriRule};
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

pub type Scalar2d = dyn Fn([f64; 2]) -> f64 + Send + Sync;
pub type Grad2d = dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync;
/// Integrand depending on a field value and the point, e.g. j'(u(x), x).
pub type ValueMap = dyn Fn(f64, [f64; 2]) -> f64 + Send + Sync;
/// One quadrature piece of a control element: state element id, mapped
/// points, and weights.
type QuadPiece = (usize, Vec<[f64; 2]>, Vec<f64>);

#[derive(Debug, Error)]
pub enum OcpError {
    #[error(transparent)]
    Ipdg(#[from] IpdgError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("gradient descent diverged: the update norm kept growing after {halvings} step halvings (last step size {rho})")]
    Diverged { halvings: usize, rho: f64 },
}

/// Pointwise or integral constraints on the control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdmissibleSet {
    LowerBound(f64),
    Box(f64, f64),
    /// Mean-shift projection onto { u : integral of u >= bound }.
    IntegralLowerBound(f64),
}

/// Closed-form pieces of a control problem with known exact solution.
#[derive(Clone)]
pub struct ExactSolution {
    pub u: Arc<Scalar2d>,
    pub y: Arc<Scalar2d>,
    pub p: Arc<Scalar2d>,
    pub grad_y: Arc<Grad2d>,
    pub grad_p: Arc<Grad2d>,
}

/// Data of min integral g(y, x) + integral j(u, x) subject to the state
/// equation with source f + c_b u and Dirichlet data phi.
#[derive(Clone)]
pub struct ProblemSpec {
    pub c_b: f64,
    pub f: Arc<Scalar2d>,
    pub phi: Arc<Scalar2d>,
    pub g_val: Arc<ValueMap>,
    pub g_prime: Arc<ValueMap>,
    pub j_val: Arc<ValueMap>,
    pub j_prime: Arc<ValueMap>,
    pub admissible: AdmissibleSet,
}

/// How the control mesh relates to the state mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshRelation {
    Same,
    /// Each control element contains ratio^2 state elements.
    ControlCoarser(usize),
    /// Each state element contains ratio^2 control elements.
    ControlFiner(usize),
}

enum ControlVariant {
    Elementwise {
        mesh: TriMesh,
        relation: MeshRelation,
    },
    /// Values at the volume assembly rule points of the state mesh,
    /// flattened element by element.
    QuadSampled {
        points: Vec<[f64; 2]>,
        weights: Vec<f64>,
        per_elem: usize,
    },
}

/// Discrete control space tied to a state discretization.
pub struct ControlDiscretization<'a> {
    state: &'a TriMesh,
    degree: usize,
    variant: ControlVariant,
}

/// Deterministic parallel sum: fixed chunks, ordered combine. The result is
/// bitwise independent of the rayon thread count.
fn par_sum_by(n: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    const CHUNK: usize = 8192;
    if n <= CHUNK {
        return (0..n).map(f).sum();
    }
    let n_chunks = n.div_ceil(CHUNK);
    let partials: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(n);
            (lo..hi).map(&f).sum::<f64>()
        })
        .collect();
    partials.iter().sum()
}

impl<'a> ControlDiscretization<'a> {
    /// One value per element of `control_mesh`, which must be the state mesh
    /// resolution or nested with it in either direction.
    pub fn elementwise(
        state: &'a TriMesh,
        degree: usize,
        control_mesh: TriMesh,
    ) -> Result<Self, OcpError> {
        let relation = match nested_ratio(state, &control_mesh) {
            Ok(1) => MeshRelation::Same,
            Ok(k) => MeshRelation::ControlFiner(k),
            Err(_) => MeshRelation::ControlCoarser(nested_ratio(&control_mesh, state)?),
        };
        Ok(ControlDiscretization {
            state,
            degree,
            variant: ControlVariant::Elementwise {
                mesh: control_mesh,
                relation,
            },
        })
    }

    /// One value per volume quadrature point of the state assembly rule.
    pub fn quad_sampled(state: &'a TriMesh, degree: usize) -> Self {
        let rule = crate::ipdg::assembly_rule(degree);
        let per_elem = rule.len();
        let mut points = Vec::with_capacity(state.n_elements() * per_elem);
        let mut weights = Vec::with_capacity(state.n_elements() * per_elem);
        for k in 0..state.n_elements() {
            let (pts, wts) = rule.map_to_element(state, k);
            points.extend(pts);
            weights.extend(wts);
        }
        ControlDiscretization {
            state,
            degree,
            variant: ControlVariant::QuadSampled {
                points,
                weights,
                per_elem,
            },
        }
    }

    pub fn n_dofs(&self) -> usize {
        match &self.variant {
            ControlVariant::Elementwise { mesh, .. } => mesh.n_elements(),
            ControlVariant::QuadSampled { points, .. } => points.len(),
        }
    }

    pub fn relation(&self) -> Option<MeshRelation> {
        match &self.variant {
            ControlVariant::Elementwise { relation, .. } => Some(*relation),
            ControlVariant::QuadSampled { .. } => None,
        }
    }

    pub fn state_mesh(&self) -> &TriMesh {
        self.state
    }

    pub fn control_mesh(&self) -> Option<&TriMesh> {
        match &self.variant {
            ControlVariant::Elementwise { mesh, .. } => Some(mesh),
            ControlVariant::QuadSampled { .. } => None,
        }
    }

    /// Sample points for the quadrature-sampled variant.
    pub fn sample_points(&self) -> Option<&[[f64; 2]]> {
        match &self.variant {
            ControlVariant::Elementwise { .. } => None,
            ControlVariant::QuadSampled { points, .. } => Some(points),
        }
    }

    fn weight(&self, i: usize) -> f64 {
        match &self.variant {
            ControlVariant::Elementwise { mesh, .. } => mesh.area(i),
            ControlVariant::QuadSampled { weights, .. } => weights[i],
        }
    }

    /// The point a control value is attached to: element barycenter or
    /// quadrature point.
    pub fn dof_point(&self, i: usize) -> [f64; 2] {
        match &self.variant {
            ControlVariant::Elementwise { mesh, .. } => mesh.center(i),
            ControlVariant::QuadSampled { points, .. } => points[i],
        }
    }

    /// Measure of the control domain under this discretization's weights.
    pub fn total_measure(&self) -> f64 {
        par_sum_by(self.n_dofs(), |i| self.weight(i))
    }

    pub fn integral(&self, v: &[f64]) -> f64 {
        par_sum_by(v.len(), |i| self.weight(i) * v[i])
    }

    pub fn weighted_norm(&self, v: &[f64]) -> f64 {
        par_sum_by(v.len(), |i| self.weight(i) * v[i] * v[i]).sqrt()
    }

    pub fn weighted_dist(&self, a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), b.len());
        par_sum_by(a.len(), |i| {
            let d = a[i] - b[i];
            self.weight(i) * d * d
        })
        .sqrt()
    }

    /// In-place projection onto the admissible set.
    pub fn project(&self, set: &AdmissibleSet, v: &mut [f64]) {
        match *set {
            AdmissibleSet::LowerBound(a) => v.par_iter_mut().for_each(|x| *x = x.max(a)),
            AdmissibleSet::Box(a, b) => v.par_iter_mut().for_each(|x| *x = x.max(a).min(b)),
            AdmissibleSet::IntegralLowerBound(bound) => {
                let shift = (bound - self.integral(v)) / self.total_measure();
                if shift > 0.0 {
                    v.par_iter_mut().for_each(|x| *x += shift);
                }
            }
        }
    }

    /// Control-space representation of a smooth function: element means or
    /// point samples.
    pub fn l2_project(&self, f: impl Fn([f64; 2]) -> f64 + Sync) -> Vec<f64> {
        match &self.variant {
            ControlVariant::Elementwise { mesh, .. } => {
                let rule = triangle_rule(6).expect("degree in range");
                (0..mesh.n_elements())
                    .into_par_iter()
                    .map(|t| {
                        let (pts, wts) = rule.map_to_element(mesh, t);
                        let int: f64 = pts.iter().zip(&wts).map(|(&p, &w)| w * f(p)).sum();
                        int / mesh.area(t)
                    })
                    .collect()
            }
            ControlVariant::QuadSampled { points, .. } => {
                points.par_iter().map(|&p| f(p)).collect()
            }
        }
    }

    /// L2 distance between a control vector and a smooth function, measured
    /// with this discretization's quadrature.
    pub fn l2_error(&self, v: &[f64], exact: &(dyn Fn([f64; 2]) -> f64 + Sync)) -> f64 {
        match &self.variant {
            ControlVariant::Elementwise { mesh, .. } => {
                let rule = crate::ipdg::error_rule(self.degree);
                par_sum_by(mesh.n_elements(), |t| {
                    let (pts, wts) = rule.map_to_element(mesh, t);
                    pts.iter()
                        .zip(&wts)
                        .map(|(&p, &w)| {
                            let d = v[t] - exact(p);
                            w * d * d
                        })
                        .sum()
                })
                .sqrt()
            }
            ControlVariant::QuadSampled {
                points, weights, ..
            } => par_sum_by(v.len(), |i| {
                let d = v[i] - exact(points[i]);
                weights[i] * d * d
            })
            .sqrt(),
        }
    }

    /// Moments of the control against the state basis, in block-coefficient
    /// space: entry (K, i) holds the integral of c_b u phi_i^K over K. Nested
    /// relations integrate exactly over control sub-elements; the sampled
    /// variant pairs with the same rule the load assembly uses.
    pub fn apply_b(&self, u: &[f64], c_b: f64) -> Vec<f64> {
        assert_eq!(u.len(), self.n_dofs());
        let dim = crate::quad::poly_dim(self.degree);
        let state = self.state;
        let mut out = vec![0.0; state.n_elements() * dim];
        match &self.variant {
            ControlVariant::Elementwise { mesh, relation } => {
                let rule = triangle_rule(self.degree).expect("degree in range");
                match relation {
                    MeshRelation::Same | MeshRelation::ControlCoarser(_) => {
                        // Constant control on each state element.
                        out.par_chunks_mut(dim).enumerate().for_each(|(k, chunk)| {
                            let u_k = match relation {
                                MeshRelation::Same => u[k],
                                MeshRelation::ControlCoarser(r) => {
                                    u[parent_element(mesh, state, *r, k)]
                                }
                                MeshRelation::ControlFiner(_) => unreachable!(),
                            };
                            let basis = LocalBasis::for_element(state, k, self.degree);
                            let (pts, wts) = rule.map_to_element(state, k);
                            let mut vals = vec![0.0; dim];
                            for (p, w) in pts.iter().zip(&wts) {
                                basis.eval(*p, &mut vals);
                                for i in 0..dim {
                                    chunk[i] += w * c_b * u_k * vals[i];
                                }
                            }
                        });
                    }
                    MeshRelation::ControlFiner(r) => {
                        out.par_chunks_mut(dim).enumerate().for_each(|(k, chunk)| {
                            let basis = LocalBasis::for_element(state, k, self.degree);
                            let mut vals = vec![0.0; dim];
                            for t in child_elements(state, mesh, *r, k) {
                                let (pts, wts) = rule.map_to(mesh.vertex_coords(t));
                                for (p, w) in pts.iter().zip(&wts) {
                                    basis.eval(*p, &mut vals);
                                    for i in 0..dim {
                                        chunk[i] += w * c_b * u[t] * vals[i];
                                    }
                                }
                            }
                        });
                    }
                }
            }
            ControlVariant::QuadSampled {
                points,
                weights,
                per_elem,
            } => {
                out.par_chunks_mut(dim).enumerate().for_each(|(k, chunk)| {
                    let basis = LocalBasis::for_element(state, k, self.degree);
                    let mut vals = vec![0.0; dim];
                    for q in 0..*per_elem {
                        let idx = k * per_elem + q;
                        basis.eval(points[idx], &mut vals);
                        for i in 0..dim {
                            chunk[i] += weights[idx] * c_b * u[idx] * vals[i];
                        }
                    }
                });
            }
        }
        out
    }

    /// Adjoint of `apply_b`: control-space representation of c_b times the
    /// field, i.e. element means or point values.
    pub fn apply_b_star(&self, field: &DGField, c_b: f64) -> Vec<f64> {
        let state = self.state;
        match &self.variant {
            ControlVariant::Elementwise { mesh, relation } => {
                let rule = triangle_rule(self.degree).expect("degree in range");
                match relation {
                    MeshRelation::Same => (0..mesh.n_elements())
                        .into_par_iter()
                        .map(|k| c_b * field.integral_on(state, k, &rule) / state.area(k))
                        .collect(),
                    MeshRelation::ControlCoarser(r) => (0..mesh.n_elements())
                        .into_par_iter()
                        .map(|t| {
                            let int: f64 = child_elements(mesh, state, *r, t)
                                .into_iter()
                                .map(|k| field.integral_on(state, k, &rule))
                                .sum();
                            c_b * int / mesh.area(t)
                        })
                        .collect(),
                    MeshRelation::ControlFiner(r) => (0..mesh.n_elements())
                        .into_par_iter()
                        .map(|t| {
                            let k = parent_element(state, mesh, *r, t);
                            let basis = LocalBasis::for_element(state, k, self.degree);
                            let (pts, wts) = rule.map_to(mesh.vertex_coords(t));
                            let int: f64 = pts
                                .iter()
                                .zip(&wts)
                                .map(|(&p, &w)| w * basis.value(field.coeffs_of(k), p))
                                .sum();
                            c_b * int / mesh.area(t)
                        })
                        .collect(),
                }
            }
            ControlVariant::QuadSampled {
                points, per_elem, ..
            } => {
                let mut out = vec![0.0; points.len()];
                out.par_chunks_mut(*per_elem)
                    .enumerate()
                    .for_each(|(k, chunk)| {
                        let basis = LocalBasis::for_element(state, k, self.degree);
                        for (q, slot) in chunk.iter_mut().enumerate() {
                            *slot = c_b * basis.value(field.coeffs_of(k), points[k * per_elem + q]);
                        }
                    });
                out
            }
        }
    }

    /// Reduced gradient j'(u, x) + B* p in control space. The j' term is
    /// evaluated at the control dof point (element barycenter or sample
    /// point); this is the convention every optimality measure shares.
    pub fn gradient(&self, prob: &ProblemSpec, u: &[f64], p: &DGField) -> Vec<f64> {
        let mut g = self.apply_b_star(p, prob.c_b);
        let j_prime = &prob.j_prime;
        g.par_iter_mut().enumerate().for_each(|(i, gi)| {
            *gi += j_prime(u[i], self.dof_point(i));
        });
        g
    }

    /// Quadrature over control element `t`, split into state-element pieces
    /// (state id, points, weights) so integrands that are polynomial per
    /// state element are integrated exactly. None for the sampled variant.
    pub(crate) fn element_pieces(&self, t: usize, rule: &TriRule) -> Option<Vec<QuadPiece>> {
        let state = self.state;
        match &self.variant {
            ControlVariant::Elementwise { mesh, relation } => Some(match relation {
                MeshRelation::Same => {
                    let (pts, wts) = rule.map_to_element(state, t);
                    vec![(t, pts, wts)]
                }
                MeshRelation::ControlFiner(r) => {
                    let k = parent_element(state, mesh, *r, t);
                    let (pts, wts) = rule.map_to(mesh.vertex_coords(t));
                    vec![(k, pts, wts)]
                }
                MeshRelation::ControlCoarser(r) => child_elements(mesh, state, *r, t)
                    .into_iter()
                    .map(|k| {
                        let (pts, wts) = rule.map_to_element(state, k);
                        (k, pts, wts)
                    })
                    .collect(),
            }),
            ControlVariant::QuadSampled { .. } => None,
        }
    }

    /// Control part of the objective. `fine` integrates j(u, x) with a
    /// degree-4 rule per control element; the cheap variant uses the
    /// barycenter and serves as the per-iteration trace value.
    pub fn control_objective(&self, prob: &ProblemSpec, u: &[f64], fine: bool) -> f64 {
        let j_val = &prob.j_val;
        match &self.variant {
            ControlVariant::Elementwise { mesh, .. } if fine => {
                let rule = triangle_rule(4).expect("degree in range");
                par_sum_by(mesh.n_elements(), |t| {
                    let (pts, wts) = rule.map_to_element(mesh, t);
                    pts.iter()
                        .zip(&wts)
                        .map(|(&p, &w)| w * j_val(u[t], p))
                        .sum()
                })
            }
            ControlVariant::Elementwise { mesh, .. } => par_sum_by(mesh.n_elements(), |t| {
                mesh.area(t) * j_val(u[t], mesh.center(t))
            }),
            ControlVariant::QuadSampled {
                points, weights, ..
            } => par_sum_by(u.len(), |i| weights[i] * j_val(u[i], points[i])),
        }
    }
}

/// Flattened volume quadrature of the state mesh, shared by the adjoint
/// source and the objective so all of them see identical points.
struct StateQuadCache {
    points: Vec<[f64; 2]>,
    weights: Vec<f64>,
    per_elem: usize,
}

impl StateQuadCache {
    fn new(mesh: &TriMesh, rule: &TriRule) -> Self {
        let per_elem = rule.len();
        let mut points = Vec::with_capacity(mesh.n_elements() * per_elem);
        let mut weights = Vec::with_capacity(mesh.n_elements() * per_elem);
        for k in 0..mesh.n_elements() {
            let (pts, wts) = rule.map_to_element(mesh, k);
            points.extend(pts);
            weights.extend(wts);
        }
        StateQuadCache {
            points,
            weights,
            per_elem,
        }
    }

    fn field_values(&self, mesh: &TriMesh, field: &DGField) -> Vec<f64> {
        let mut out = vec![0.0; self.points.len()];
        out.par_chunks_mut(self.per_elem)
            .enumerate()
            .for_each(|(k, chunk)| {
                let basis = LocalBasis::for_element(mesh, k, field.degree);
                let coeffs = field.coeffs_of(k);
                for (q, slot) in chunk.iter_mut().enumerate() {
                    *slot = basis.value(coeffs, self.points[k * self.per_elem + q]);
                }
            });
        out
    }

    fn integrate_g(&self, values: &[f64], g_val: &ValueMap) -> f64 {
        par_sum_by(values.len(), |i| {
            self.weights[i] * g_val(values[i], self.points[i])
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PgdIterate {
    /// Weighted L2 norm of the control update this step took.
    pub update_norm: f64,
    /// Objective before the step (control part by barycenter rule).
    pub objective: f64,
    /// update_norm relative to the previous step, 0 on the first.
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct PgdOptions {
    pub rho: f64,
    pub tol_u: f64,
    pub max_iter: usize,
    /// Record every control iterate (for convergence diagnostics).
    pub keep_iterates: bool,
}

impl Default for PgdOptions {
    fn default() -> Self {
        PgdOptions {
            rho: 1.0,
            tol_u: 1e-10,
            max_iter: 500,
            keep_iterates: false,
        }
    }
}

pub struct OcpSolution {
    pub u: Vec<f64>,
    pub y: DGField,
    pub p: DGField,
    pub trace: Vec<PgdIterate>,
    pub converged: bool,
    pub iterations: usize,
    pub rho_final: f64,
    pub objective: f64,
    pub iterates: Option<Vec<Vec<f64>>>,
}

/// Projected gradient descent from u = Pr(0). The step size halves after ten
/// consecutive update-norm increases, at most six times; the loop continues
/// from the current iterate. Returned state and adjoint are re-solved at the
/// final control so the triple is consistent.
pub fn pgd_solve(
    op: &EllipticOperator,
    disc: &ControlDiscretization,
    prob: &ProblemSpec,
    opts: &PgdOptions,
) -> Result<OcpSolution, OcpError> {
    let mesh = op.mesh;
    let cache = StateQuadCache::new(mesh, &crate::ipdg::assembly_rule(disc.degree));
    let solve_state = |u: &[f64]| -> Result<DGField, OcpError> {
        let bu = disc.apply_b(u, prob.c_b);
        let f = &prob.f;
        let phi = &prob.phi;
        Ok(op.solve(|_, _, x| f(x), |x| phi(x), Some(&bu))?.0)
    };
    let solve_adjoint = |y_at: &[f64]| -> Result<DGField, OcpError> {
        let g_prime = &prob.g_prime;
        let per = cache.per_elem;
        Ok(op
            .solve(|k, q, x| g_prime(y_at[k * per + q], x), |_| 0.0, None)?
            .0)
    };

    let mut u = vec![0.0; disc.n_dofs()];
    disc.project(&prob.admissible, &mut u);
    let mut rho = opts.rho;
    let mut halvings = 0usize;
    let mut growth = 0usize;
    let mut prev_norm = f64::INFINITY;
    let mut trace: Vec<PgdIterate> = Vec::new();
    let mut iterates: Option<Vec<Vec<f64>>> = opts.keep_iterates.then(Vec::new);
    let mut converged = false;

    for _ in 0..opts.max_iter {
        let y = solve_state(&u)?;
        let y_at = cache.field_values(mesh, &y);
        let objective =
            cache.integrate_g(&y_at, prob.g_val.as_ref()) + disc.control_objective(prob, &u, false);
        let p = solve_adjoint(&y_at)?;
        let g = disc.gradient(prob, &u, &p);

        let mut next: Vec<f64> = u.iter().zip(&g).map(|(ui, gi)| ui - rho * gi).collect();
        disc.project(&prob.admissible, &mut next);
        let step = disc.weighted_dist(&next, &u);
        let ratio = if prev_norm.is_finite() && prev_norm > 0.0 {
            step / prev_norm
        } else {
            0.0
        };
        trace.push(PgdIterate {
            update_norm: step,
            objective,
            ratio,
        });
        if let Some(list) = &mut iterates {
            list.push(next.clone());
        }
        u = next;

        if step <= opts.tol_u {
            converged = true;
            break;
        }
        if step > prev_norm {
            growth += 1;
            if growth >= 10 {
                if halvings >= 6 {
                    return Err(OcpError::Diverged { halvings, rho });
                }
                rho *= 0.5;
                halvings += 1;
                growth = 0;
                prev_norm = f64::INFINITY;
                continue;
            }
        } else {
            growth = 0;
        }
        prev_norm = step;
    }

    let y = solve_state(&u)?;
    let y_at = cache.field_values(mesh, &y);
    let p = solve_adjoint(&y_at)?;
    let objective =
        cache.integrate_g(&y_at, prob.g_val.as_ref()) + disc.control_objective(prob, &u, true);
    Ok(OcpSolution {
        iterations: trace.len(),
        u,
        y,
        p,
        trace,
        converged,
        rho_final: rho,
        objective,
        iterates,
    })
}

/// First-order optimality measures at (u, p), using the same gradient
/// convention the solver iterates with.
#[derive(Debug, Clone, Copy)]
pub struct KktReport {
    /// Weighted norm of u - Pr(u - gradient); zero exactly at a fixed point.
    pub natural_residual: f64,
    /// Complementarity defect of the active constraints.
    pub complementarity: f64,
    /// Recovered multiplier of the integral constraint, 0 otherwise.
    pub multiplier: f64,
}

pub fn kkt_report(
    disc: &ControlDiscretization,
    prob: &ProblemSpec,
    u: &[f64],
    p: &DGField,
) -> KktReport {
    let g = disc.gradient(prob, u, p);
    let mut trial: Vec<f64> = u.iter().zip(&g).map(|(ui, gi)| ui - gi).collect();
    disc.project(&prob.admissible, &mut trial);
    let natural_residual = disc.weighted_dist(u, &trial);
    let (complementarity, multiplier) = match prob.admissible {
        AdmissibleSet::LowerBound(a) => (
            par_sum_by(u.len(), |i| disc.weight(i) * g[i].abs() * (u[i] - a)),
            0.0,
        ),
        AdmissibleSet::Box(a, b) => (
            par_sum_by(u.len(), |i| {
                disc.weight(i) * g[i].abs() * (u[i] - a).min(b - u[i])
            }),
            0.0,
        ),
        AdmissibleSet::IntegralLowerBound(bound) => {
            let lambda = (disc.integral(&g) / disc.total_measure()).max(0.0);
            (lambda * (disc.integral(u) - bound).abs(), lambda)
        }
    };
    KktReport {
        natural_residual,
        complementarity,
        multiplier,
    }
}
