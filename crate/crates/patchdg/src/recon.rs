//! Patchwise least-squares lifting of piecewise-constant data.
//!
//! Each element K gets a patch S(K): repeated face-neighbor closures of {K}
//! grown until the patch holds at least ceil(3/2 * dim) elements. A degree-m
//! polynomial is fitted to the barycenter values on the patch, constrained to
//! interpolate exactly at the barycenter of K, so the constant coefficient of
//! the local basis equals the element value. The per-element fits stack into
//! a linear operator R from element values to polynomial coefficients; R
//! reproduces every polynomial of degree <= m sampled at barycenters.

use crate::mesh::TriMesh;
use crate::quad::{exponents, poly_dim, LocalBasis};
use crate::sparse::{CooBuilder, SparseMatrix};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("reconstruction degree must be 1, 2, or 3, got {0}")]
    DegreeUnsupported(usize),
    #[error(
        "patch of element {elem} saturated at {reached} elements, below the threshold {threshold}; \
         the mesh is too coarse for this degree"
    )]
    PatchSaturated {
        elem: usize,
        reached: usize,
        threshold: usize,
    },
    #[error(
        "least-squares system of element {elem} is rank deficient: rank {rank} < {needed} \
         (singular values {sigma_min:.3e} .. {sigma_max:.3e})"
    )]
    RankDeficient {
        elem: usize,
        rank: usize,
        needed: usize,
        sigma_min: f64,
        sigma_max: f64,
    },
}

/// Minimum patch size ceil(3/2 * dim) for degree m.
pub fn patch_threshold(m: usize) -> Result<usize, ReconError> {
    if !(1..=3).contains(&m) {
        return Err(ReconError::DegreeUnsupported(m));
    }
    Ok((3 * poly_dim(m)).div_ceil(2))
}

/// Element patch: the owner plus enough face-neighbor rounds to reach the
/// size threshold.
#[derive(Debug, Clone)]
pub struct ElementPatch {
    pub owner: usize,
    /// Member element ids, ascending; always contains `owner`.
    pub members: Vec<usize>,
    /// Number of neighbor closures applied.
    pub rounds: usize,
}

/// Grows {k} by face-neighbor closures until `threshold` elements are reached.
pub fn build_patch(mesh: &TriMesh, k: usize, threshold: usize) -> Result<ElementPatch, ReconError> {
    let mut members = vec![k];
    let mut rounds = 0;
    while members.len() < threshold {
        let grown = closure(mesh, &members);
        if grown.len() == members.len() {
            return Err(ReconError::PatchSaturated {
                elem: k,
                reached: members.len(),
                threshold,
            });
        }
        members = grown;
        rounds += 1;
    }
    Ok(ElementPatch {
        owner: k,
        members,
        rounds,
    })
}

fn closure(mesh: &TriMesh, members: &[usize]) -> Vec<usize> {
    let mut grown: Vec<usize> = members
        .iter()
        .flat_map(|&e| mesh.face_neighbors(e))
        .collect();
    grown.sort_unstable();
    grown.dedup();
    grown
}

/// Constrained local fit: coefficients in the LocalBasis of the patch owner
/// for barycenter samples `samples` (one per member, in member order).
pub fn solve_local_ls(
    mesh: &TriMesh,
    patch: &ElementPatch,
    samples: &[f64],
    m: usize,
) -> Result<Vec<f64>, ReconError> {
    let op = local_operator(mesh, patch, m)?;
    assert_eq!(samples.len(), patch.members.len());
    let dim = poly_dim(m);
    let mut coeffs = vec![0.0; dim];
    for t in 0..dim {
        let row = &op[t * patch.members.len()..(t + 1) * patch.members.len()];
        coeffs[t] = row.iter().zip(samples).map(|(g, w)| g * w).sum();
    }
    Ok(coeffs)
}

/// Dense dim x |S| map from patch samples to owner-basis coefficients.
///
/// The fit runs in a basis scaled by the patch radius for conditioning and is
/// converted to the owner's diameter-scaled basis afterwards. The constraint
/// p(center) = w_owner eliminates the constant coefficient, leaving an
/// unconstrained least-squares problem in the higher-order terms.
fn local_operator(mesh: &TriMesh, patch: &ElementPatch, m: usize) -> Result<Vec<f64>, ReconError> {
    let dim = poly_dim(m);
    let ns = patch.members.len();
    let owner = patch.owner;
    let center = mesh.center(owner);
    let mut radius = mesh.diameter(owner);
    for &e in &patch.members {
        let c = mesh.center(e);
        radius = radius.max(((c[0] - center[0]).powi(2) + (c[1] - center[1]).powi(2)).sqrt());
    }
    let fit_basis = LocalBasis {
        degree: m,
        center,
        scale: radius,
    };

    let mut psi = nalgebra::DMatrix::<f64>::zeros(ns, dim - 1);
    let mut vals = vec![0.0; dim];
    for (i, &e) in patch.members.iter().enumerate() {
        fit_basis.eval(mesh.center(e), &mut vals);
        for t in 1..dim {
            psi[(i, t - 1)] = vals[t];
        }
    }
    let svd = nalgebra::SVD::new(psi, true, true);
    let smax = svd.singular_values.max();
    let cutoff = 1e-10 * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    if rank < dim - 1 {
        return Err(ReconError::RankDeficient {
            elem: owner,
            rank,
            needed: dim - 1,
            sigma_min: svd.singular_values.min(),
            sigma_max: smax,
        });
    }
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    // Pseudo-inverse (dim-1) x ns mapping residual samples to fit coefficients.
    let mut t_red = nalgebra::DMatrix::<f64>::zeros(dim - 1, ns);
    for q in 0..dim - 1 {
        let sigma_inv = 1.0 / svd.singular_values[q];
        for t in 0..dim - 1 {
            for i in 0..ns {
                t_red[(t, i)] += vt[(q, t)] * sigma_inv * u[(i, q)];
            }
        }
    }

    let owner_pos = patch.members.binary_search(&owner).expect("owner in patch");
    let h_owner = mesh.diameter(owner);
    let exps = exponents(m);
    let mut op = vec![0.0; dim * ns];
    op[owner_pos] = 1.0;
    for t in 1..dim {
        let convert = (h_owner / radius).powi((exps[t].0 + exps[t].1) as i32);
        let row = &mut op[t * ns..(t + 1) * ns];
        let mut rowsum = 0.0;
        for i in 0..ns {
            let v = t_red[(t - 1, i)];
            row[i] = convert * v;
            rowsum += v;
        }
        // Samples enter as w - w_owner; fold the subtraction into the owner column.
        row[owner_pos] -= convert * rowsum;
    }
    Ok(op)
}

/// Per-element fit result: patch member ids and the dense local operator.
type LocalFit = Result<(Vec<usize>, Vec<f64>), ReconError>;

/// Element-value-to-coefficient operator for a whole mesh.
#[derive(Debug, Clone)]
pub struct ReconstructionMatrix {
    degree: usize,
    n_elements: usize,
    members: Vec<Vec<usize>>,
    /// Per element: dense dim x |S| operator, row-major.
    ops: Vec<Vec<f64>>,
}

impl ReconstructionMatrix {
    /// Builds patches and local fits for every element. Rank-deficient fits
    /// retry with up to two extra neighbor rounds before failing.
    pub fn assemble(
        mesh: &TriMesh,
        m: usize,
        threshold: Option<usize>,
    ) -> Result<Self, ReconError> {
        let threshold = match threshold {
            Some(t) => {
                patch_threshold(m)?;
                t.max(poly_dim(m))
            }
            None => patch_threshold(m)?,
        };
        let results: Vec<LocalFit> = (0..mesh.n_elements())
            .into_par_iter()
            .map(|k| {
                let mut patch = build_patch(mesh, k, threshold)?;
                let mut extra = 0;
                loop {
                    match local_operator(mesh, &patch, m) {
                        Ok(op) => return Ok((patch.members, op)),
                        Err(e @ ReconError::RankDeficient { .. }) => {
                            if extra >= 2 {
                                return Err(e);
                            }
                            let grown = closure(mesh, &patch.members);
                            if grown.len() == patch.members.len() {
                                return Err(e);
                            }
                            patch.members = grown;
                            patch.rounds += 1;
                            extra += 1;
                        }
                        Err(e) => return Err(e),
                    }
                }
            })
            .collect();
        let mut members = Vec::with_capacity(results.len());
        let mut ops = Vec::with_capacity(results.len());
        for r in results {
            let (m_k, op_k) = r?;
            members.push(m_k);
            ops.push(op_k);
        }
        Ok(ReconstructionMatrix {
            degree: m,
            n_elements: mesh.n_elements(),
            members,
            ops,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Coefficients per element.
    pub fn dim(&self) -> usize {
        poly_dim(self.degree)
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn patch_members(&self, k: usize) -> &[usize] {
        &self.members[k]
    }

    /// Lifts element values to polynomial coefficients (dim per element).
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.n_elements);
        let dim = self.dim();
        let mut out = vec![0.0; self.n_elements * dim];
        out.par_chunks_mut(dim).enumerate().for_each(|(k, chunk)| {
            let members = &self.members[k];
            let op = &self.ops[k];
            for t in 0..dim {
                let row = &op[t * members.len()..(t + 1) * members.len()];
                chunk[t] = row.iter().zip(members).map(|(g, &j)| g * w[j]).sum();
            }
        });
        out
    }

    /// Adjoint of `apply`: folds coefficient-space data back onto elements.
    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        assert_eq!(v.len(), self.n_elements * dim);
        let mut out = vec![0.0; self.n_elements];
        for k in 0..self.n_elements {
            let members = &self.members[k];
            let op = &self.ops[k];
            for t in 0..dim {
                let vt = v[k * dim + t];
                let row = &op[t * members.len()..(t + 1) * members.len()];
                for (g, &j) in row.iter().zip(members) {
                    out[j] += g * vt;
                }
            }
        }
        out
    }

    /// Sparse form, (n_elements * dim) x n_elements.
    pub fn to_sparse(&self) -> SparseMatrix {
        let dim = self.dim();
        let mut coo = CooBuilder::new(self.n_elements * dim, self.n_elements);
        for k in 0..self.n_elements {
            let members = &self.members[k];
            let op = &self.ops[k];
            for t in 0..dim {
                for (i, &j) in members.iter().enumerate() {
                    coo.push(k * dim + t, j, op[t * members.len() + i]);
                }
            }
        }
        coo.finalize()
    }
}
