//! Conforming triangulations of axis-aligned rectangles.
//!
//! Uniform meshes split an n x n grid of cells along the lower-left to
//! upper-right diagonal, numbered row-major: cell (i, j) owns elements
//! `2*(j*n + i)` (below the diagonal) and `2*(j*n + i) + 1` (above it).
//! Uniform refinement quarters every triangle through its edge midpoints,
//! which reproduces the uniform mesh of twice the resolution, so meshes
//! built at resolutions n and c*n nest exactly.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh resolution must be at least 1, got {0}")]
    InvalidResolution(usize),
    #[error("rectangle has empty extent: [{x0}, {x1}] x [{y0}, {y1}]")]
    EmptyRect { x0: f64, x1: f64, y0: f64, y1: f64 },
    #[error("meshes do not form a nested uniform pair (resolutions {coarse} and {fine})")]
    NotNested { coarse: usize, fine: usize },
    #[error("operation requires a uniform grid mesh (from TriMesh::uniform or refine)")]
    NoGrid,
    #[error("point ({0}, {1}) lies outside the mesh domain")]
    OutOfDomain(f64, f64),
}

/// Axis-aligned rectangle, the only supported domain shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, MeshError> {
        if !(x1 > x0 && y1 > y0)
            || !(x0.is_finite() && y0.is_finite() && x1.is_finite() && y1.is_finite())
        {
            return Err(MeshError::EmptyRect { x0, x1, y0, y1 });
        }
        Ok(Rect { x0, y0, x1, y1 })
    }

    pub fn unit_square() -> Self {
        Rect {
            x0: 0.0,
            y0: 0.0,
            x1: 1.0,
            y1: 1.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Shared face between two elements, or a boundary face of one.
#[derive(Debug, Clone)]
pub struct Edge {
    /// Endpoint vertex ids, sorted ascending.
    pub verts: [usize; 2],
    /// Element whose orientation defines `normal`.
    pub inside: usize,
    /// Element on the other side; `None` on the boundary.
    pub outside: Option<usize>,
    pub length: f64,
    /// Unit normal pointing out of `inside`.
    pub normal: [f64; 2],
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.outside.is_none()
    }

    pub fn midpoint(&self, mesh: &TriMesh) -> [f64; 2] {
        let a = mesh.vertices[self.verts[0]];
        let b = mesh.vertices[self.verts[1]];
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }
}

/// Provenance of a uniform grid mesh; required by the nesting helpers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridInfo {
    pub n: usize,
    pub rect: Rect,
}

#[derive(Debug, Clone, Copy)]
pub struct MeshQuality {
    /// Smallest interior angle over all elements, degrees.
    pub min_angle_deg: f64,
    /// max over elements K and their edges e of h_K / h_e.
    pub edge_ratio: f64,
    /// Largest element diameter.
    pub h: f64,
}

/// Triangulation with precomputed per-element and per-edge geometry.
#[derive(Debug, Clone)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 2]>,
    /// Vertex triples, counter-clockwise.
    pub elements: Vec<[usize; 3]>,
    /// Edges numbered in sorted vertex-pair order.
    pub edges: Vec<Edge>,
    /// Edge ids of each element's three faces (opposite local vertex order).
    pub elem_edges: Vec<[usize; 3]>,
    centers: Vec<[f64; 2]>,
    diameters: Vec<f64>,
    areas: Vec<f64>,
    grid: Option<GridInfo>,
}

impl TriMesh {
    /// Uniform fixed-diagonal triangulation with 2 n^2 elements.
    pub fn uniform(n: usize, rect: Rect) -> Result<Self, MeshError> {
        let mesh = Self::uniform_inner(n, rect)?;
        Ok(Self::from_parts(mesh.vertices, mesh.elements, mesh.grid))
    }

    /// Like `uniform`, but skips the edge tables. Intended for large
    /// piecewise-constant control meshes where only element geometry is
    /// needed; edge-dependent queries (`edges`, `elem_edges`,
    /// `face_neighbors`, `outward_normal`) must not be used on the result.
    pub fn uniform_light(n: usize, rect: Rect) -> Result<Self, MeshError> {
        let mut mesh = Self::uniform_inner(n, rect)?;
        mesh.build_geometry();
        Ok(mesh)
    }

    fn uniform_inner(n: usize, rect: Rect) -> Result<Self, MeshError> {
        if n == 0 {
            return Err(MeshError::InvalidResolution(n));
        }
        let nv = n + 1;
        let mut vertices = Vec::with_capacity(nv * nv);
        for j in 0..nv {
            for i in 0..nv {
                let x = rect.x0 + rect.width() * (i as f64) / (n as f64);
                let y = rect.y0 + rect.height() * (j as f64) / (n as f64);
                vertices.push([x, y]);
            }
        }
        let mut elements = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let ll = j * nv + i;
                let lr = ll + 1;
                let ul = ll + nv;
                let ur = ul + 1;
                elements.push([ll, lr, ur]);
                elements.push([ll, ur, ul]);
            }
        }
        Ok(TriMesh {
            vertices,
            elements,
            edges: Vec::new(),
            elem_edges: Vec::new(),
            centers: Vec::new(),
            diameters: Vec::new(),
            areas: Vec::new(),
            grid: Some(GridInfo { n, rect }),
        })
    }

    fn build_geometry(&mut self) {
        let (vertices, elements) = (&self.vertices, &self.elements);
        self.centers = Vec::with_capacity(elements.len());
        self.diameters = Vec::with_capacity(elements.len());
        self.areas = Vec::with_capacity(elements.len());
        for tri in elements {
            let p = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
            self.centers.push([
                (p[0][0] + p[1][0] + p[2][0]) / 3.0,
                (p[0][1] + p[1][1] + p[2][1]) / 3.0,
            ]);
            let mut diam: f64 = 0.0;
            for a in 0..3 {
                let b = (a + 1) % 3;
                diam = diam.max(dist(p[a], p[b]));
            }
            self.diameters.push(diam);
            let ab = [p[1][0] - p[0][0], p[1][1] - p[0][1]];
            let ac = [p[2][0] - p[0][0], p[2][1] - p[0][1]];
            self.areas.push(0.5 * (ab[0] * ac[1] - ab[1] * ac[0]));
        }
    }

    /// Builds connectivity and geometry from raw vertex/element lists.
    fn from_parts(
        vertices: Vec<[f64; 2]>,
        elements: Vec<[usize; 3]>,
        grid: Option<GridInfo>,
    ) -> Self {
        // First pass over element faces in id order; edges are then renumbered
        // by sorted vertex pair so the numbering is independent of element order.
        let mut seen: std::collections::BTreeMap<[usize; 2], (usize, usize, Option<usize>)> =
            std::collections::BTreeMap::new();
        for (k, tri) in elements.iter().enumerate() {
            for a in 0..3 {
                let v0 = tri[a];
                let v1 = tri[(a + 1) % 3];
                let key = if v0 < v1 { [v0, v1] } else { [v1, v0] };
                seen.entry(key)
                    .and_modify(|entry| {
                        debug_assert!(entry.2.is_none(), "more than two elements share an edge");
                        entry.2 = Some(k);
                    })
                    .or_insert((k, a, None));
            }
        }
        let mut edges = Vec::with_capacity(seen.len());
        let mut edge_id: std::collections::BTreeMap<[usize; 2], usize> =
            std::collections::BTreeMap::new();
        for (key, (inside, local, outside)) in seen {
            let tri = elements[inside];
            let a = vertices[tri[local]];
            let b = vertices[tri[(local + 1) % 3]];
            let d = [b[0] - a[0], b[1] - a[1]];
            let length = (d[0] * d[0] + d[1] * d[1]).sqrt();
            // CCW orientation puts the outward normal at -90 degrees from a->b.
            let normal = [d[1] / length, -d[0] / length];
            edge_id.insert(key, edges.len());
            edges.push(Edge {
                verts: key,
                inside,
                outside,
                length,
                normal,
            });
        }
        let mut elem_edges = Vec::with_capacity(elements.len());
        for tri in &elements {
            let mut ids = [0usize; 3];
            for a in 0..3 {
                let v0 = tri[a];
                let v1 = tri[(a + 1) % 3];
                let key = if v0 < v1 { [v0, v1] } else { [v1, v0] };
                ids[a] = edge_id[&key];
            }
            elem_edges.push(ids);
        }

        let mut mesh = TriMesh {
            vertices,
            elements,
            edges,
            elem_edges,
            centers: Vec::new(),
            diameters: Vec::new(),
            areas: Vec::new(),
            grid,
        };
        mesh.build_geometry();
        mesh
    }

    /// Red refinement: every triangle splits into four through edge midpoints.
    pub fn refine(&self) -> TriMesh {
        let nv = self.vertices.len();
        let mut vertices = self.vertices.clone();
        vertices.reserve(self.edges.len());
        for e in &self.edges {
            vertices.push(e.midpoint(self));
        }
        let mid = |e: usize| nv + e;
        let mut elements = Vec::with_capacity(4 * self.elements.len());
        for (k, tri) in self.elements.iter().enumerate() {
            let [v0, v1, v2] = *tri;
            let m01 = mid(self.elem_edges[k][0]);
            let m12 = mid(self.elem_edges[k][1]);
            let m20 = mid(self.elem_edges[k][2]);
            elements.push([v0, m01, m20]);
            elements.push([m01, v1, m12]);
            elements.push([m20, m12, v2]);
            elements.push([m01, m12, m20]);
        }
        let grid = self.grid.map(|g| GridInfo {
            n: 2 * g.n,
            rect: g.rect,
        });
        Self::from_parts(vertices, elements, grid)
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Element barycenter.
    pub fn center(&self, k: usize) -> [f64; 2] {
        self.centers[k]
    }

    /// Element diameter (longest edge).
    pub fn diameter(&self, k: usize) -> f64 {
        self.diameters[k]
    }

    pub fn area(&self, k: usize) -> f64 {
        self.areas[k]
    }

    pub fn vertex_coords(&self, k: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.elements[k];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn grid(&self) -> Option<GridInfo> {
        self.grid
    }

    /// Elements sharing a full edge with `k`, plus `k` itself, ascending.
    pub fn face_neighbors(&self, k: usize) -> Vec<usize> {
        let mut out = vec![k];
        for &e in &self.elem_edges[k] {
            let edge = &self.edges[e];
            let other = if edge.inside == k {
                edge.outside
            } else {
                Some(edge.inside)
            };
            if let Some(o) = other {
                out.push(o);
            }
        }
        out.sort_unstable();
        out
    }

    /// Outward unit normal of edge `e` as seen from element `k`.
    pub fn outward_normal(&self, e: usize, k: usize) -> [f64; 2] {
        let edge = &self.edges[e];
        if edge.inside == k {
            edge.normal
        } else {
            debug_assert_eq!(edge.outside, Some(k));
            [-edge.normal[0], -edge.normal[1]]
        }
    }

    pub fn quality(&self) -> MeshQuality {
        let mut min_angle = f64::INFINITY;
        let mut edge_ratio: f64 = 0.0;
        let mut h: f64 = 0.0;
        for k in 0..self.n_elements() {
            let p = self.vertex_coords(k);
            for a in 0..3 {
                let u = [p[(a + 1) % 3][0] - p[a][0], p[(a + 1) % 3][1] - p[a][1]];
                let v = [p[(a + 2) % 3][0] - p[a][0], p[(a + 2) % 3][1] - p[a][1]];
                let dot = u[0] * v[0] + u[1] * v[1];
                let cross = (u[0] * v[1] - u[1] * v[0]).abs();
                min_angle = min_angle.min(cross.atan2(dot));
            }
            for &e in &self.elem_edges[k] {
                edge_ratio = edge_ratio.max(self.diameters[k] / self.edges[e].length);
            }
            h = h.max(self.diameters[k]);
        }
        MeshQuality {
            min_angle_deg: min_angle.to_degrees(),
            edge_ratio,
            h,
        }
    }

    /// Element containing `x`, resolved through the grid structure.
    /// Points on a cell diagonal resolve to the lower element.
    pub fn locate(&self, x: [f64; 2]) -> Result<usize, MeshError> {
        let g = self.grid.ok_or(MeshError::NoGrid)?;
        let n = g.n as f64;
        let tol = 1e-12 * g.rect.width().max(g.rect.height());
        if x[0] < g.rect.x0 - tol
            || x[0] > g.rect.x1 + tol
            || x[1] < g.rect.y0 - tol
            || x[1] > g.rect.y1 + tol
        {
            return Err(MeshError::OutOfDomain(x[0], x[1]));
        }
        let fx = (x[0] - g.rect.x0) / g.rect.width() * n;
        let fy = (x[1] - g.rect.y0) / g.rect.height() * n;
        let i = (fx.floor() as isize).clamp(0, g.n as isize - 1) as usize;
        let j = (fy.floor() as isize).clamp(0, g.n as isize - 1) as usize;
        let t = if fy - j as f64 <= fx - i as f64 { 0 } else { 1 };
        Ok(2 * (j * g.n + i) + t)
    }

    /// Plain-text listing: one `v <id> <x> <y>` line per vertex, then one
    /// `t <id> <v0> <v1> <v2>` line per element.
    pub fn write_listing<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        for (i, v) in self.vertices.iter().enumerate() {
            writeln!(w, "v {} {} {}", i, v[0], v[1])?;
        }
        for (k, t) in self.elements.iter().enumerate() {
            writeln!(w, "t {} {} {} {}", k, t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Resolution ratio fine/coarse of a nested uniform pair on the same rectangle.
pub fn nested_ratio(coarse: &TriMesh, fine: &TriMesh) -> Result<usize, MeshError> {
    let gc = coarse.grid.ok_or(MeshError::NoGrid)?;
    let gf = fine.grid.ok_or(MeshError::NoGrid)?;
    if gc.rect != gf.rect || gf.n < gc.n || gf.n % gc.n != 0 {
        return Err(MeshError::NotNested {
            coarse: gc.n,
            fine: gf.n,
        });
    }
    Ok(gf.n / gc.n)
}

/// Coarse element containing fine element `fe`; exact integer logic, no
/// floating point. `ratio` must come from [`nested_ratio`].
pub fn parent_element(coarse: &TriMesh, fine: &TriMesh, ratio: usize, fe: usize) -> usize {
    let gc = coarse.grid.expect("nested_ratio checked grid");
    let gf = fine.grid.expect("nested_ratio checked grid");
    debug_assert_eq!(gc.n * ratio, gf.n);
    let cell = fe / 2;
    let t = fe % 2;
    let i = cell % gf.n;
    let j = cell / gf.n;
    let (a, b) = (i % ratio, j % ratio);
    // Sub-cells strictly below the coarse diagonal hold only lower-parented
    // triangles, strictly above only upper-parented; on the diagonal the fine
    // triangle keeps its own side.
    let tc = if b < a {
        0
    } else if b > a {
        1
    } else {
        t
    };
    2 * ((j / ratio) * gc.n + i / ratio) + tc
}

/// Fine elements covering coarse element `ce`, ascending; exactly `ratio^2` of them.
pub fn child_elements(coarse: &TriMesh, fine: &TriMesh, ratio: usize, ce: usize) -> Vec<usize> {
    let gc = coarse.grid.expect("nested_ratio checked grid");
    let gf = fine.grid.expect("nested_ratio checked grid");
    let cell = ce / 2;
    let (ic, jc) = (cell % gc.n, cell / gc.n);
    let mut out = Vec::with_capacity(ratio * ratio);
    for b in 0..ratio {
        for a in 0..ratio {
            let fcell = (jc * ratio + b) * gf.n + ic * ratio + a;
            for t in 0..2 {
                let fe = 2 * fcell + t;
                if parent_element(coarse, fine, ratio, fe) == ce {
                    out.push(fe);
                }
            }
        }
    }
    debug_assert_eq!(out.len(), ratio * ratio);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_n1_counts() {
        let m = TriMesh::uniform(1, Rect::unit_square()).unwrap();
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.n_elements(), 2);
        assert_eq!(m.n_edges(), 5);
        assert_eq!(m.edges.iter().filter(|e| e.is_boundary()).count(), 4);
    }

    #[test]
    fn counts_satisfy_euler_formula() {
        for n in [1, 2, 3, 4, 7, 16] {
            let m = TriMesh::uniform(n, Rect::unit_square()).unwrap();
            assert_eq!(m.n_vertices(), (n + 1) * (n + 1));
            assert_eq!(m.n_elements(), 2 * n * n);
            assert_eq!(m.n_edges(), 3 * n * n + 2 * n);
            let euler = m.n_vertices() as i64 - m.n_edges() as i64 + m.n_elements() as i64;
            assert_eq!(euler, 1);
        }
    }

    #[test]
    fn elements_are_ccw_with_positive_area() {
        let m = TriMesh::uniform(5, Rect::new(-1.0, 0.5, 2.0, 1.5).unwrap()).unwrap();
        let total: f64 = (0..m.n_elements()).map(|k| m.area(k)).sum();
        for k in 0..m.n_elements() {
            assert!(m.area(k) > 0.0);
        }
        assert!((total - 3.0).abs() < 1e-12);
    }

    #[test]
    fn quality_invariants_on_unit_square() {
        for n in [1, 2, 8] {
            let m = TriMesh::uniform(n, Rect::unit_square()).unwrap();
            let q = m.quality();
            assert!((q.min_angle_deg - 45.0).abs() < 1e-10);
            assert!((q.edge_ratio - std::f64::consts::SQRT_2).abs() < 1e-12);
            assert!((q.h - std::f64::consts::SQRT_2 / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn refinement_preserves_edge_ratio_and_matches_double_resolution() {
        let m = TriMesh::uniform(3, Rect::unit_square()).unwrap();
        let r = m.refine();
        assert_eq!(r.n_elements(), 4 * m.n_elements());
        assert!((r.quality().edge_ratio - m.quality().edge_ratio).abs() < 1e-12);

        let direct = TriMesh::uniform(6, Rect::unit_square()).unwrap();
        let key = |mesh: &TriMesh| {
            let mut c: Vec<[i64; 2]> = (0..mesh.n_elements())
                .map(|k| {
                    let p = mesh.center(k);
                    [(p[0] * 1e12).round() as i64, (p[1] * 1e12).round() as i64]
                })
                .collect();
            c.sort_unstable();
            c
        };
        assert_eq!(key(&r), key(&direct));
    }

    #[test]
    fn boundary_normals_point_outward() {
        let m = TriMesh::uniform(2, Rect::unit_square()).unwrap();
        for e in &m.edges {
            if !e.is_boundary() {
                continue;
            }
            let mid = e.midpoint(&m);
            let probe = [mid[0] + 1e-6 * e.normal[0], mid[1] + 1e-6 * e.normal[1]];
            let inside = probe[0] > 0.0 && probe[0] < 1.0 && probe[1] > 0.0 && probe[1] < 1.0;
            assert!(!inside, "boundary normal points into the domain");
        }
    }

    #[test]
    fn interior_edge_normals_are_consistent_between_sides() {
        let m = TriMesh::uniform(3, Rect::unit_square()).unwrap();
        for (e, edge) in m.edges.iter().enumerate() {
            if let Some(out) = edge.outside {
                let a = m.outward_normal(e, edge.inside);
                let b = m.outward_normal(e, out);
                assert!((a[0] + b[0]).abs() < 1e-15 && (a[1] + b[1]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn face_neighbors_interior_and_corner() {
        let m = TriMesh::uniform(3, Rect::unit_square()).unwrap();
        // Element 0 is the lower triangle of the corner cell: bottom face on
        // the boundary, diagonal shared with 1, right face shared with 3.
        let nb = m.face_neighbors(0);
        assert_eq!(nb, vec![0, 1, 3]);
        // Lower triangle of the center cell (i = j = 1) touches three others.
        let k = 2 * (3 + 1);
        let nb = m.face_neighbors(k);
        assert_eq!(nb.len(), 4);
        assert!(nb.contains(&k));
        for w in nb.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn locate_resolves_cells_and_diagonal_ties() {
        let m = TriMesh::uniform(4, Rect::unit_square()).unwrap();
        for k in 0..m.n_elements() {
            assert_eq!(m.locate(m.center(k)).unwrap(), k);
        }
        // On the diagonal of cell (0, 0): ties go to the lower element.
        assert_eq!(m.locate([0.1, 0.1]).unwrap(), 0);
        assert!(m.locate([1.5, 0.5]).is_err());
    }

    #[test]
    fn nesting_maps_are_mutually_consistent() {
        let rect = Rect::unit_square();
        for (nc, nf) in [(2, 4), (2, 6), (3, 3), (4, 16)] {
            let coarse = TriMesh::uniform(nc, rect).unwrap();
            let fine = TriMesh::uniform(nf, rect).unwrap();
            let k = nested_ratio(&coarse, &fine).unwrap();
            assert_eq!(k, nf / nc);
            let mut seen = vec![false; fine.n_elements()];
            for ce in 0..coarse.n_elements() {
                for fe in child_elements(&coarse, &fine, k, ce) {
                    assert!(!seen[fe]);
                    seen[fe] = true;
                    assert_eq!(parent_element(&coarse, &fine, k, fe), ce);
                    // Geometric containment: the fine barycenter lies in ce.
                    assert_eq!(coarse.locate(fine.center(fe)).unwrap(), ce);
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn nesting_rejects_non_divisible_pair() {
        let a = TriMesh::uniform(4, Rect::unit_square()).unwrap();
        let b = TriMesh::uniform(6, Rect::unit_square()).unwrap();
        assert!(nested_ratio(&a, &b).is_err());
    }

    #[test]
    fn listing_roundtrips_counts() {
        let m = TriMesh::uniform(2, Rect::unit_square()).unwrap();
        let mut buf = Vec::new();
        m.write_listing(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let v_lines = text.lines().filter(|l| l.starts_with("v ")).count();
        let t_lines = text.lines().filter(|l| l.starts_with("t ")).count();
        assert_eq!(v_lines, m.n_vertices());
        assert_eq!(t_lines, m.n_elements());
    }
}
