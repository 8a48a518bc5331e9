use nalgebra::DVector;
use nalgebra_sparse::CsrMatrix;
use serde::{Deserialize, Serialize};

use super::{BoundaryLabel, Mesh};
use crate::error::{Error, Result};
use crate::linalg::{BandOrdering, Triplets};

/// Discrete function spaces on a mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    /// Continuous piecewise linears on the triangles.
    P1,
    /// One constant per triangle.
    P0,
    /// Continuous piecewise linears on one labelled boundary part.
    Boundary(BoundaryLabel),
}

impl Space {
    pub fn dim(&self, mesh: &Mesh) -> usize {
        match self {
            Space::P1 => mesh.num_nodes(),
            Space::P0 => mesh.num_triangles(),
            Space::Boundary(l) => mesh.boundary_nodes(*l).len(),
        }
    }

    /// Bandwidth-reducing ordering of the space's DOF graph.
    pub fn ordering(&self, mesh: &Mesh) -> BandOrdering {
        match self {
            Space::P1 => mesh.node_ordering(),
            Space::P0 => mesh.cell_ordering(),
            Space::Boundary(l) => {
                let k = mesh.boundary_nodes(*l).len();
                let adj: Vec<Vec<usize>> = (0..k)
                    .map(|i| {
                        let mut v = Vec::new();
                        if i > 0 {
                            v.push(i - 1);
                        }
                        if i + 1 < k {
                            v.push(i + 1);
                        }
                        v
                    })
                    .collect();
                BandOrdering::identity(&adj)
            }
        }
    }
}

/// Coefficient vector tagged with its space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeField {
    pub space: Space,
    pub coeffs: DVector<f64>,
}

/// Symmetric positive definite 2x2 diffusion tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anisotropy(pub [[f64; 2]; 2]);

impl Anisotropy {
    pub fn identity() -> Self {
        Anisotropy([[1.0, 0.0], [0.0, 1.0]])
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Anisotropy([[a, 0.0], [0.0, b]])
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.0;
        let sym = (t[0][1] - t[1][0]).abs() <= 1e-14 * (t[0][1].abs() + t[1][0].abs() + 1.0);
        let det = t[0][0] * t[1][1] - t[0][1] * t[1][0];
        if !sym || t[0][0] <= 0.0 || det <= 0.0 {
            return Err(Error::InvalidArgument(format!("anisotropy {t:?} is not SPD")));
        }
        Ok(())
    }

    #[inline]
    pub fn quad(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let t = self.0;
        a[0] * (t[0][0] * b[0] + t[0][1] * b[1]) + a[1] * (t[1][0] * b[0] + t[1][1] * b[1])
    }
}

/// Gradients of the three P1 hat functions on triangle `t` (constant).
pub fn p1_gradients(mesh: &Mesh, t: usize) -> [[f64; 2]; 3] {
    let [a, b, c] = mesh.triangles[t].map(|k| mesh.vertices[k]);
    let twice = 2.0 * mesh.area(t);
    [
        [(b[1] - c[1]) / twice, (c[0] - b[0]) / twice],
        [(c[1] - a[1]) / twice, (a[0] - c[0]) / twice],
        [(a[1] - b[1]) / twice, (b[0] - a[0]) / twice],
    ]
}

/// Element matrix of `int Theta grad phi_j . grad phi_i` on triangle `t`.
pub fn p1_local_stiffness(mesh: &Mesh, t: usize, theta: &Anisotropy) -> [[f64; 3]; 3] {
    let g = p1_gradients(mesh, t);
    let area = mesh.area(t);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = area * theta.quad(g[i], g[j]);
        }
    }
    k
}

/// `int_T phi_i phi_j phi_k` for P1 hat functions on a triangle of area `area`.
#[inline]
pub fn p1_triple(area: f64, i: usize, j: usize, k: usize) -> f64 {
    if i == j && j == k {
        area / 10.0
    } else if i == j || j == k || i == k {
        area / 30.0
    } else {
        area / 60.0
    }
}

/// `int_e phi_i phi_j phi_k` for 1D P1 hat functions on an edge of length `h`.
#[inline]
pub fn edge_triple(h: f64, i: usize, j: usize, k: usize) -> f64 {
    if i == j && j == k {
        h / 4.0
    } else {
        h / 12.0
    }
}

fn boundary_edges_local(mesh: &Mesh, label: BoundaryLabel) -> Vec<(usize, usize, f64)> {
    let order = mesh.boundary_nodes(label);
    let mut local = std::collections::HashMap::new();
    for (k, &n) in order.iter().enumerate() {
        local.insert(n, k);
    }
    mesh.boundary_edges
        .iter()
        .filter(|e| e.label == label)
        .map(|e| (local[&e.nodes[0]], local[&e.nodes[1]], mesh.edge_length(e.nodes[0], e.nodes[1])))
        .collect()
}

fn mass_triplets(mesh: &Mesh, space: Space, scale: f64, t: &mut Triplets) {
    match space {
        Space::P1 => {
            for (e, tri) in mesh.triangles.iter().enumerate() {
                let a = mesh.area(e) * scale;
                for i in 0..3 {
                    for j in 0..3 {
                        let v = if i == j { a / 6.0 } else { a / 12.0 };
                        t.push(tri[i], tri[j], v);
                    }
                }
            }
        }
        Space::P0 => {
            for e in 0..mesh.num_triangles() {
                t.push(e, e, mesh.area(e) * scale);
            }
        }
        Space::Boundary(label) => {
            for (a, b, h) in boundary_edges_local(mesh, label) {
                let (d, o) = (h * scale / 3.0, h * scale / 6.0);
                t.push(a, a, d);
                t.push(b, b, d);
                t.push(a, b, o);
                t.push(b, a, o);
            }
        }
    }
}

pub fn assemble_mass(mesh: &Mesh, space: Space) -> CsrMatrix<f64> {
    let n = space.dim(mesh);
    let mut t = Triplets::new(n, n);
    mass_triplets(mesh, space, 1.0, &mut t);
    t.to_csr()
}

/// `gamma M + kappa K_Theta` on `space`.
///
/// On P0 the diffusion part is a two-point flux operator over interior edges,
/// `kappa (n^T Theta n) |e| / (d_1 + d_2)` with `d_i` the normal distances
/// from the cell centroids to the edge; it annihilates constants and
/// reduces to `gamma M` for `kappa = 0`. On a boundary part the tangential
/// component `t^T Theta t` is used.
pub fn assemble_stiffness(
    mesh: &Mesh,
    space: Space,
    gamma: f64,
    kappa: f64,
    theta: &Anisotropy,
) -> Result<CsrMatrix<f64>> {
    theta.validate()?;
    if !(gamma >= 0.0 && kappa >= 0.0) || gamma + kappa == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "need gamma, kappa >= 0 not both zero, got {gamma}, {kappa}"
        )));
    }
    let n = space.dim(mesh);
    let mut t = Triplets::new(n, n);
    if gamma > 0.0 {
        mass_triplets(mesh, space, gamma, &mut t);
    }
    if kappa > 0.0 {
        match space {
            Space::P1 => {
                for (e, tri) in mesh.triangles.iter().enumerate() {
                    let k = p1_local_stiffness(mesh, e, theta);
                    for i in 0..3 {
                        for j in 0..3 {
                            t.push(tri[i], tri[j], kappa * k[i][j]);
                        }
                    }
                }
            }
            Space::P0 => {
                for (a, b, s, r) in mesh.interior_edges() {
                    let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
                    let len = mesh.edge_length(a, b);
                    let nrm = [(pb[1] - pa[1]) / len, (pa[0] - pb[0]) / len];
                    let dist = |c: [f64; 2]| ((c[0] - pa[0]) * nrm[0] + (c[1] - pa[1]) * nrm[1]).abs();
                    let d = dist(mesh.centroid(s)) + dist(mesh.centroid(r));
                    let tr = kappa * theta.quad(nrm, nrm) * len / d;
                    t.push(s, s, tr);
                    t.push(r, r, tr);
                    t.push(s, r, -tr);
                    t.push(r, s, -tr);
                }
            }
            Space::Boundary(label) => {
                let order = mesh.boundary_nodes(label);
                let mut local = std::collections::HashMap::new();
                for (k, &nd) in order.iter().enumerate() {
                    local.insert(nd, k);
                }
                for e in mesh.boundary_edges.iter().filter(|e| e.label == label) {
                    let (p, q) = (mesh.vertices[e.nodes[0]], mesh.vertices[e.nodes[1]]);
                    let h = mesh.edge_length(e.nodes[0], e.nodes[1]);
                    let tan = [(q[0] - p[0]) / h, (q[1] - p[1]) / h];
                    let c = kappa * theta.quad(tan, tan) / h;
                    let (a, b) = (local[&e.nodes[0]], local[&e.nodes[1]]);
                    t.push(a, a, c);
                    t.push(b, b, c);
                    t.push(a, b, -c);
                    t.push(b, a, -c);
                }
            }
        }
    }
    Ok(t.to_csr())
}
