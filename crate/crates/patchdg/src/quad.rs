//! Polynomial bases and quadrature rules.
//!
//! Triangle rules live on the reference triangle {x, y >= 0, x + y <= 1}
//! (weights sum to 1/2), edge rules on [0, 1] (weights sum to 1). All
//! weights are strictly positive and rules of a given degree integrate
//! every polynomial of that total degree exactly.

use crate::mesh::TriMesh;
use thiserror::Error;

pub const MAX_DEGREE: usize = 20;

#[derive(Debug, Error)]
pub enum QuadError {
    #[error("quadrature degree {0} out of supported range 0..={MAX_DEGREE}")]
    DegreeOutOfRange(usize),
}

/// Gauss-Legendre nodes and weights on [0, 1], exact to degree 2n - 1.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Newton on P_n over [-1, 1] from the Chebyshev-like initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 0.5 * w;
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = pk;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Quadrature on the reference edge [0, 1].
#[derive(Debug, Clone)]
pub struct EdgeRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

pub fn edge_rule(degree: usize) -> Result<EdgeRule, QuadError> {
    if degree > MAX_DEGREE {
        return Err(QuadError::DegreeOutOfRange(degree));
    }
    let n = degree / 2 + 1;
    let (points, weights) = gauss_legendre(n);
    Ok(EdgeRule {
        points,
        weights,
        degree,
    })
}

impl EdgeRule {
    /// Physical points and weights along the segment a -> b.
    pub fn map_to(&self, a: [f64; 2], b: [f64; 2]) -> (Vec<[f64; 2]>, Vec<f64>) {
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let pts = self
            .points
            .iter()
            .map(|&t| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])])
            .collect();
        let wts = self.weights.iter().map(|&w| w * len).collect();
        (pts, wts)
    }
}

/// Quadrature on the reference triangle.
#[derive(Debug, Clone)]
pub struct TriRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

pub fn triangle_rule(degree: usize) -> Result<TriRule, QuadError> {
    if degree > MAX_DEGREE {
        return Err(QuadError::DegreeOutOfRange(degree));
    }
    if degree <= 1 {
        return Ok(TriRule {
            points: vec![[1.0 / 3.0, 1.0 / 3.0]],
            weights: vec![0.5],
            degree,
        });
    }
    // Collapsed tensor rule: x = u (1 - v), y = u v maps the unit square onto
    // the triangle with Jacobian u, raising the u-degree of the integrand by 1.
    let nu = (degree + 3) / 2;
    let nv = (degree + 2) / 2;
    let (un, uw) = gauss_legendre(nu);
    let (vn, vw) = gauss_legendre(nv);
    let mut points = Vec::with_capacity(nu * nv);
    let mut weights = Vec::with_capacity(nu * nv);
    for (iu, &u) in un.iter().enumerate() {
        for (iv, &v) in vn.iter().enumerate() {
            points.push([u * (1.0 - v), u * v]);
            weights.push(uw[iu] * vw[iv] * u);
        }
    }
    Ok(TriRule {
        points,
        weights,
        degree,
    })
}

impl TriRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Physical points and weights on the triangle with the given vertices.
    pub fn map_to(&self, v: [[f64; 2]; 3]) -> (Vec<[f64; 2]>, Vec<f64>) {
        let jac =
            (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[1][1] - v[0][1]) * (v[2][0] - v[0][0]);
        let pts = self
            .points
            .iter()
            .map(|&[x, y]| {
                [
                    v[0][0] + x * (v[1][0] - v[0][0]) + y * (v[2][0] - v[0][0]),
                    v[0][1] + x * (v[1][1] - v[0][1]) + y * (v[2][1] - v[0][1]),
                ]
            })
            .collect();
        let wts = self.weights.iter().map(|&w| w * jac.abs()).collect();
        (pts, wts)
    }

    /// Physical points and weights on element `k` of `mesh`.
    pub fn map_to_element(&self, mesh: &TriMesh, k: usize) -> (Vec<[f64; 2]>, Vec<f64>) {
        self.map_to(mesh.vertex_coords(k))
    }
}

/// Number of monomials of total degree <= m in two variables.
pub fn poly_dim(m: usize) -> usize {
    (m + 1) * (m + 2) / 2
}

/// Monomial exponents (a, b) in graded lexicographic order:
/// (0,0), (1,0), (0,1), (2,0), (1,1), (0,2), ...
pub fn exponents(m: usize) -> Vec<(u32, u32)> {
    let mut out = Vec::with_capacity(poly_dim(m));
    for d in 0..=m as u32 {
        for a in (0..=d).rev() {
            out.push((a, d - a));
        }
    }
    out
}

/// Scaled-shifted monomial basis ((x - c) / s)^a ((y - c) / s)^b of one element.
///
/// The first function is identically 1, so a coefficient vector's leading
/// entry is the value at the center.
#[derive(Debug, Clone, Copy)]
pub struct LocalBasis {
    pub degree: usize,
    pub center: [f64; 2],
    pub scale: f64,
}

impl LocalBasis {
    pub fn for_element(mesh: &TriMesh, k: usize, degree: usize) -> Self {
        LocalBasis {
            degree,
            center: mesh.center(k),
            scale: mesh.diameter(k),
        }
    }

    pub fn dim(&self) -> usize {
        poly_dim(self.degree)
    }

    fn powers(&self, x: [f64; 2]) -> (Vec<f64>, Vec<f64>) {
        let xi = (x[0] - self.center[0]) / self.scale;
        let eta = (x[1] - self.center[1]) / self.scale;
        let mut px = vec![1.0; self.degree + 1];
        let mut py = vec![1.0; self.degree + 1];
        for d in 1..=self.degree {
            px[d] = px[d - 1] * xi;
            py[d] = py[d - 1] * eta;
        }
        (px, py)
    }

    /// Values of all basis functions at `x`, graded lex order.
    pub fn eval(&self, x: [f64; 2], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        let (px, py) = self.powers(x);
        for (t, (a, b)) in exponents(self.degree).into_iter().enumerate() {
            out[t] = px[a as usize] * py[b as usize];
        }
    }

    /// Gradients of all basis functions at `x`.
    pub fn eval_grad(&self, x: [f64; 2], out: &mut [[f64; 2]]) {
        debug_assert_eq!(out.len(), self.dim());
        let (px, py) = self.powers(x);
        let s = 1.0 / self.scale;
        for (t, (a, b)) in exponents(self.degree).into_iter().enumerate() {
            let (a, b) = (a as usize, b as usize);
            let gx = if a == 0 {
                0.0
            } else {
                a as f64 * px[a - 1] * py[b] * s
            };
            let gy = if b == 0 {
                0.0
            } else {
                b as f64 * px[a] * py[b - 1] * s
            };
            out[t] = [gx, gy];
        }
    }

    /// Second derivatives [d_xx, d_xy, d_yy] of all basis functions at `x`.
    pub fn eval_hess(&self, x: [f64; 2], out: &mut [[f64; 3]]) {
        debug_assert_eq!(out.len(), self.dim());
        let (px, py) = self.powers(x);
        let s2 = 1.0 / (self.scale * self.scale);
        for (t, (a, b)) in exponents(self.degree).into_iter().enumerate() {
            let (a, b) = (a as usize, b as usize);
            let xx = if a < 2 {
                0.0
            } else {
                (a * (a - 1)) as f64 * px[a - 2] * py[b] * s2
            };
            let xy = if a < 1 || b < 1 {
                0.0
            } else {
                (a * b) as f64 * px[a - 1] * py[b - 1] * s2
            };
            let yy = if b < 2 {
                0.0
            } else {
                (b * (b - 1)) as f64 * px[a] * py[b - 2] * s2
            };
            out[t] = [xx, xy, yy];
        }
    }

    /// Polynomial value at `x` for the coefficient slice `coeffs`.
    pub fn value(&self, coeffs: &[f64], x: [f64; 2]) -> f64 {
        let mut vals = vec![0.0; self.dim()];
        self.eval(x, &mut vals);
        coeffs.iter().zip(&vals).map(|(c, v)| c * v).sum()
    }

    /// Polynomial gradient at `x` for the coefficient slice `coeffs`.
    pub fn gradient(&self, coeffs: &[f64], x: [f64; 2]) -> [f64; 2] {
        let mut grads = vec![[0.0; 2]; self.dim()];
        self.eval_grad(x, &mut grads);
        let mut g = [0.0; 2];
        for (c, d) in coeffs.iter().zip(&grads) {
            g[0] += c * d[0];
            g[1] += c * d[1];
        }
        g
    }
}
