//! A posteriori error indicators and gradient recovery.
//!
//! State and adjoint get the classic residual triple: element residuals
//! weighted by the penalty-scaled diameter, solution jumps over every edge,
//! and flux jumps over interior edges. The control gets the oscillation of
//! j'(u) + B* p around its elementwise means, optionally restricted by
//! active-set labels. Recovery lifts a piecewise-constant control to nodal
//! values through weighted least squares over vertex patches.

use crate::ipdg::{error_rule, DGField, EllipticCoeffs};
use crate::mesh::TriMesh;
use crate::ocp::{AdmissibleSet, ControlDiscretization, ProblemSpec};
use crate::quad::{edge_rule, LocalBasis};
use rayon::prelude::*;

/// Tolerance deciding when a control value sits on a bound and when the
/// gradient sign condition counts as satisfied.
pub const BOUND_TOL: f64 = 1e-10;

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Pointwise divergence of A grad w from the coefficient derivatives, the
/// field gradient, and the field Hessian [w_xx, w_xy, w_yy].
fn flux_divergence(
    a: [[f64; 2]; 2],
    da: [[[f64; 2]; 2]; 2],
    grad: [f64; 2],
    hess: [f64; 3],
) -> f64 {
    let div0 = da[0][0][0] + da[1][1][0];
    let div1 = da[0][0][1] + da[1][1][1];
    div0 * grad[0]
        + div1 * grad[1]
        + a[0][0] * hess[0]
        + (a[0][1] + a[1][0]) * hess[1]
        + a[1][1] * hess[2]
}

/// Element residual indicator: (h_K / mu)^2 times the L2 norm of
/// source + div(A grad w) on each element. The source closure sees the
/// element id and the point and must include every load term of the
/// equation the field solves (control term, adjoint right-hand side, ...).
pub fn eta_volume(
    mesh: &TriMesh,
    field: &DGField,
    coeffs: &EllipticCoeffs,
    source: impl Fn(usize, [f64; 2]) -> f64 + Sync,
) -> Vec<f64> {
    let rule = error_rule(field.degree);
    let dim = field.dim();
    let zero_da = [[[0.0; 2]; 2]; 2];
    (0..mesh.n_elements())
        .into_par_iter()
        .map(|k| {
            let basis = LocalBasis::for_element(mesh, k, field.degree);
            let coeffs_k = field.coeffs_of(k);
            let (pts, wts) = rule.map_to_element(mesh, k);
            let mut grads = vec![[0.0; 2]; dim];
            let mut hesses = vec![[0.0; 3]; dim];
            let mut norm2 = 0.0;
            for (p, w) in pts.iter().zip(&wts) {
                basis.eval_grad(*p, &mut grads);
                basis.eval_hess(*p, &mut hesses);
                let mut grad = [0.0; 2];
                let mut hess = [0.0; 3];
                for i in 0..dim {
                    grad[0] += coeffs_k[i] * grads[i][0];
                    grad[1] += coeffs_k[i] * grads[i][1];
                    for c in 0..3 {
                        hess[c] += coeffs_k[i] * hesses[i][c];
                    }
                }
                let a = (coeffs.a)(*p);
                let da = match &coeffs.grad_a {
                    Some(g) => g(*p),
                    None => zero_da,
                };
                let r = source(k, *p) + flux_divergence(a, da, grad, hess);
                norm2 += w * r * r;
            }
            let h_tilde = mesh.diameter(k) / coeffs.mu;
            h_tilde * h_tilde * norm2.sqrt()
        })
        .collect()
}

/// Edge jump indicators. Per edge: (h_e / mu)^(1/2) times the L2 norm of the
/// solution jump (the plain trace on boundary edges), and for interior edges
/// (h_e / mu)^(3/2) times the normal flux jump; the flux entry is 0 on
/// boundary edges.
pub fn eta_jumps(mesh: &TriMesh, field: &DGField, coeffs: &EllipticCoeffs) -> (Vec<f64>, Vec<f64>) {
    let erule = edge_rule(2 * field.degree + 4).expect("degree in range");
    let mu = coeffs.mu;
    let pairs: Vec<(f64, f64)> = mesh
        .edges
        .par_iter()
        .map(|edge| {
            let a_v = mesh.vertices[edge.verts[0]];
            let b_v = mesh.vertices[edge.verts[1]];
            let (pts, wts) = erule.map_to(a_v, b_v);
            let h_tilde = edge.length / mu;
            match edge.outside {
                Some(km) => {
                    let kp = edge.inside;
                    let mut jump2 = 0.0;
                    let mut flux2 = 0.0;
                    for (p, w) in pts.iter().zip(&wts) {
                        let jv = field.value(mesh, kp, *p) - field.value(mesh, km, *p);
                        jump2 += w * jv * jv;
                        let a = (coeffs.a)(*p);
                        let gp = field.gradient(mesh, kp, *p);
                        let gm = field.gradient(mesh, km, *p);
                        let agp = [
                            a[0][0] * gp[0] + a[0][1] * gp[1],
                            a[1][0] * gp[0] + a[1][1] * gp[1],
                        ];
                        let agm = [
                            a[0][0] * gm[0] + a[0][1] * gm[1],
                            a[1][0] * gm[0] + a[1][1] * gm[1],
                        ];
                        let jf = dot2([agp[0] - agm[0], agp[1] - agm[1]], edge.normal);
                        flux2 += w * jf * jf;
                    }
                    (
                        h_tilde.sqrt() * jump2.sqrt(),
                        h_tilde.powf(1.5) * flux2.sqrt(),
                    )
                }
                None => {
                    let k = edge.inside;
                    let mut jump2 = 0.0;
                    for (p, w) in pts.iter().zip(&wts) {
                        let v = field.value(mesh, k, *p);
                        jump2 += w * v * v;
                    }
                    (h_tilde.sqrt() * jump2.sqrt(), 0.0)
                }
            }
        })
        .collect();
    pairs.into_iter().unzip()
}

/// Active-set classification of a control element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveLabel {
    /// Control strictly inside the admissible set.
    Strict,
    /// Control on a bound, gradient sign condition not verified everywhere.
    Bound,
    /// Control on a bound with the gradient sign condition holding at every
    /// quadrature point; the sharp total drops these elements.
    BoundSatisfied,
}

/// Oscillation indicator of the reduced gradient per control element, with
/// active-set labels.
pub struct ControlEstimate {
    pub per_element: Vec<f64>,
    pub labels: Vec<ActiveLabel>,
}

impl ControlEstimate {
    /// Combined indicator over every element.
    pub fn total(&self) -> f64 {
        self.per_element.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    /// Combined indicator skipping elements whose bound is verifiably
    /// satisfied.
    pub fn sharp_total(&self) -> f64 {
        self.per_element
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| **l != ActiveLabel::BoundSatisfied)
            .map(|(e, _)| e * e)
            .sum::<f64>()
            .sqrt()
    }
}

/// Per-element oscillation of d = j'(u, x) + c_b p around its mean: the L2
/// norm of (I - mean) d over each control element, with bound labels from
/// the pointwise sign of d. None for quadrature-sampled controls, where the
/// projection is the identity.
pub fn eta_control(
    disc: &ControlDiscretization,
    prob: &ProblemSpec,
    u: &[f64],
    p: &DGField,
) -> Option<ControlEstimate> {
    let mesh_u = disc.control_mesh()?;
    let rule = error_rule(p.degree);
    let j_prime = &prob.j_prime;
    let c_b = prob.c_b;
    let results: Vec<(f64, ActiveLabel)> = (0..mesh_u.n_elements())
        .into_par_iter()
        .map(|t| {
            let pieces = disc.element_pieces(t, &rule).expect("elementwise control");
            let mut d_vals = Vec::new();
            let mut d_wts = Vec::new();
            let mut integral = 0.0;
            let mut measure = 0.0;
            for (k, pts, wts) in &pieces {
                for (p_q, w) in pts.iter().zip(wts) {
                    let d = j_prime(u[t], *p_q) + c_b * p.value(disc.state_mesh(), *k, *p_q);
                    d_vals.push(d);
                    d_wts.push(*w);
                    integral += w * d;
                    measure += w;
                }
            }
            let mean = integral / measure;
            let osc2: f64 = d_vals
                .iter()
                .zip(&d_wts)
                .map(|(d, w)| w * (d - mean) * (d - mean))
                .sum();
            let label = classify(&prob.admissible, u[t], &d_vals);
            (osc2.sqrt(), label)
        })
        .collect();
    let (per_element, labels) = results.into_iter().unzip();
    Some(ControlEstimate {
        per_element,
        labels,
    })
}

fn classify(set: &AdmissibleSet, u_t: f64, d_vals: &[f64]) -> ActiveLabel {
    match *set {
        AdmissibleSet::LowerBound(a) => {
            if u_t > a + BOUND_TOL {
                ActiveLabel::Strict
            } else if d_vals.iter().all(|&d| d >= -BOUND_TOL) {
                ActiveLabel::BoundSatisfied
            } else {
                ActiveLabel::Bound
            }
        }
        AdmissibleSet::Box(a, b) => {
            if u_t <= a + BOUND_TOL {
                if d_vals.iter().all(|&d| d >= -BOUND_TOL) {
                    ActiveLabel::BoundSatisfied
                } else {
                    ActiveLabel::Bound
                }
            } else if u_t >= b - BOUND_TOL {
                if d_vals.iter().all(|&d| d <= BOUND_TOL) {
                    ActiveLabel::BoundSatisfied
                } else {
                    ActiveLabel::Bound
                }
            } else {
                ActiveLabel::Strict
            }
        }
        // The integral constraint has no pointwise active set; the sharp
        // variant coincides with the general one.
        AdmissibleSet::IntegralLowerBound(_) => ActiveLabel::Strict,
    }
}

/// Square-combines the residual pieces per state element: the element term
/// plus the full indicator of each adjacent edge (interior flux jumps count
/// on both sides).
pub fn combine_state_indicators(
    mesh: &TriMesh,
    eta1: &[f64],
    eta2: &[f64],
    eta3: &[f64],
) -> Vec<f64> {
    (0..mesh.n_elements())
        .map(|k| {
            let mut sum = eta1[k] * eta1[k];
            for &e in &mesh.elem_edges[k] {
                sum += eta2[e] * eta2[e] + eta3[e] * eta3[e];
            }
            sum.sqrt()
        })
        .collect()
}

/// Per-element L2 norms of (exact - field).
pub fn element_l2_errors(
    mesh: &TriMesh,
    field: &DGField,
    exact: &(dyn Fn([f64; 2]) -> f64 + Sync),
) -> Vec<f64> {
    let rule = error_rule(field.degree);
    (0..mesh.n_elements())
        .into_par_iter()
        .map(|k| {
            let basis = LocalBasis::for_element(mesh, k, field.degree);
            let coeffs = field.coeffs_of(k);
            let (pts, wts) = rule.map_to_element(mesh, k);
            pts.iter()
                .zip(&wts)
                .map(|(&p, &w)| {
                    let d = exact(p) - basis.value(coeffs, p);
                    w * d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Elementwise indicator-to-error ratios with their extremes.
pub struct ElementEffectivity {
    pub indicator: Vec<f64>,
    pub error: Vec<f64>,
    /// indicator / error per element, 0 where the error vanishes exactly.
    pub ratio: Vec<f64>,
    pub max_ratio: f64,
    pub min_ratio: f64,
}

fn effectivity_from(indicator: Vec<f64>, error: Vec<f64>) -> ElementEffectivity {
    let ratio: Vec<f64> = indicator
        .iter()
        .zip(&error)
        .map(|(ind, err)| if *err == 0.0 { 0.0 } else { ind / err })
        .collect();
    let max_ratio = ratio.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_ratio = ratio.iter().cloned().fold(f64::INFINITY, f64::min);
    ElementEffectivity {
        indicator,
        error,
        ratio,
        max_ratio,
        min_ratio,
    }
}

/// Effectivity of the combined state (or adjoint) indicator against the
/// exact elementwise errors.
pub fn state_effectivity(
    mesh: &TriMesh,
    field: &DGField,
    exact: &(dyn Fn([f64; 2]) -> f64 + Sync),
    combined: &[f64],
) -> ElementEffectivity {
    effectivity_from(combined.to_vec(), element_l2_errors(mesh, field, exact))
}

/// Effectivity of the plain reduced-gradient norm per control element
/// against the exact control error. None for sampled controls.
pub fn control_effectivity(
    disc: &ControlDiscretization,
    prob: &ProblemSpec,
    u: &[f64],
    p: &DGField,
    exact_u: &(dyn Fn([f64; 2]) -> f64 + Sync),
) -> Option<ElementEffectivity> {
    let mesh_u = disc.control_mesh()?;
    let rule = error_rule(p.degree);
    let j_prime = &prob.j_prime;
    let c_b = prob.c_b;
    let pairs: Vec<(f64, f64)> = (0..mesh_u.n_elements())
        .into_par_iter()
        .map(|t| {
            let pieces = disc.element_pieces(t, &rule).expect("elementwise control");
            let mut grad2 = 0.0;
            let mut err2 = 0.0;
            for (k, pts, wts) in &pieces {
                for (p_q, w) in pts.iter().zip(wts) {
                    let d = j_prime(u[t], *p_q) + c_b * p.value(disc.state_mesh(), *k, *p_q);
                    grad2 += w * d * d;
                    let e = u[t] - exact_u(*p_q);
                    err2 += w * e * e;
                }
            }
            (grad2.sqrt(), err2.sqrt())
        })
        .collect();
    let (indicator, error) = pairs.into_iter().unzip();
    Some(effectivity_from(indicator, error))
}

/// Piecewise-linear field from nodal recovery of elementwise values.
pub struct RecoveredField {
    pub nodal: Vec<f64>,
}

/// Recovers nodal values by weighted least squares: at each vertex an affine
/// function is fitted to the barycenter values of the surrounding elements,
/// weighted by element area. A rank-deficient patch falls back to the
/// vertex-sharing closure of the patch, then to the area-weighted mean.
pub fn zz_recover(mesh: &TriMesh, values: &[f64]) -> RecoveredField {
    assert_eq!(values.len(), mesh.n_elements());
    let mut vertex_elems: Vec<Vec<usize>> = vec![Vec::new(); mesh.n_vertices()];
    for (k, tri) in mesh.elements.iter().enumerate() {
        for &v in tri {
            vertex_elems[v].push(k);
        }
    }

    let fit = |elems: &[usize]| -> Option<[f64; 3]> {
        let mut m = nalgebra::Matrix3::<f64>::zeros();
        let mut rhs = nalgebra::Vector3::<f64>::zeros();
        for &k in elems {
            let a = mesh.area(k).abs();
            let c = mesh.center(k);
            let row = [1.0, c[0], c[1]];
            for i in 0..3 {
                for j in 0..3 {
                    m[(i, j)] += a * row[i] * row[j];
                }
                rhs[i] += a * row[i] * values[k];
            }
        }
        let svd = m.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= 1e-12 * smax {
            return None;
        }
        let sol = svd.solve(&rhs, 0.0).ok()?;
        Some([sol[0], sol[1], sol[2]])
    };

    let nodal = (0..mesh.n_vertices())
        .into_par_iter()
        .map(|v| {
            let ring = &vertex_elems[v];
            let coeffs = fit(ring).or_else(|| {
                // Second ring: every element sharing a vertex with the first.
                let mut wide: Vec<usize> = ring
                    .iter()
                    .flat_map(|&k| mesh.elements[k])
                    .flat_map(|vv| vertex_elems[vv].iter().copied())
                    .collect();
                wide.sort_unstable();
                wide.dedup();
                fit(&wide)
            });
            let x = mesh.vertices[v];
            match coeffs {
                Some([a, b, c]) => a + b * x[0] + c * x[1],
                None => {
                    // Area-weighted mean of whatever the patch holds.
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for &k in ring {
                        let a = mesh.area(k).abs();
                        num += a * values[k];
                        den += a;
                    }
                    num / den
                }
            }
        })
        .collect();
    RecoveredField { nodal }
}

impl RecoveredField {
    /// Barycentric interpolation of the nodal values inside element `k`.
    pub fn value(&self, mesh: &TriMesh, k: usize, x: [f64; 2]) -> f64 {
        let [p0, p1, p2] = mesh.vertex_coords(k);
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let l1 = ((x[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (x[1] - p0[1])) / det;
        let l2 = ((p1[0] - p0[0]) * (x[1] - p0[1]) - (x[0] - p0[0]) * (p1[1] - p0[1])) / det;
        let l0 = 1.0 - l1 - l2;
        let [v0, v1, v2] = mesh.elements[k];
        l0 * self.nodal[v0] + l1 * self.nodal[v1] + l2 * self.nodal[v2]
    }

    /// L2 distance between the recovered interpolant and a smooth function.
    pub fn l2_error(&self, mesh: &TriMesh, exact: &(dyn Fn([f64; 2]) -> f64 + Sync)) -> f64 {
        let rule = crate::quad::triangle_rule(6).expect("degree in range");
        const CHUNK: usize = 8192;
        let n = mesh.n_elements();
        let n_chunks = n.div_ceil(CHUNK);
        let partials: Vec<f64> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK;
                let hi = ((c + 1) * CHUNK).min(n);
                let mut sum = 0.0;
                for k in lo..hi {
                    let (pts, wts) = rule.map_to_element(mesh, k);
                    for (p, w) in pts.iter().zip(&wts) {
                        let d = exact(*p) - self.value(mesh, k, *p);
                        sum += w * d * d;
                    }
                }
                sum
            })
            .collect();
        partials.iter().sum::<f64>().sqrt()
    }
}
