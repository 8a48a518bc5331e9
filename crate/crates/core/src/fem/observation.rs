use nalgebra_sparse::CsrMatrix;

use super::{BoundaryLabel, Mesh};
use crate::error::{Error, Result};
use crate::linalg::Triplets;

/// Triangle containing `p` and the barycentric coordinates of `p` in it.
pub fn locate_point(mesh: &Mesh, p: [f64; 2]) -> Option<(usize, [f64; 3])> {
    const TOL: f64 = 1e-12;
    let mut best: Option<(usize, [f64; 3], f64)> = None;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let [a, b, c] = tri.map(|k| mesh.vertices[k]);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
        let l = [1.0 - l1 - l2, l1, l2];
        let worst = l.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        if worst >= -TOL && best.as_ref().is_none_or(|b| worst > b.2) {
            best = Some((t, l, worst));
        }
    }
    best.map(|(t, l, _)| (t, l))
}

/// Pointwise evaluation of P1 functions at `points`, one row per point.
pub fn observation_matrix(mesh: &Mesh, points: &[[f64; 2]]) -> Result<CsrMatrix<f64>> {
    let mut t = Triplets::new(points.len(), mesh.num_nodes());
    for (row, &p) in points.iter().enumerate() {
        let (tri, lam) = locate_point(mesh, p).ok_or_else(|| {
            Error::InvalidArgument(format!("observation point {p:?} lies outside the mesh"))
        })?;
        for k in 0..3 {
            if lam[k] != 0.0 {
                t.push(row, mesh.triangles[tri][k], lam[k]);
            }
        }
    }
    Ok(t.to_csr())
}

/// Injection of a boundary P1 space into the domain P1 space: column `k`
/// selects the k-th node of the boundary path.
pub fn boundary_restriction(mesh: &Mesh, label: BoundaryLabel) -> CsrMatrix<f64> {
    let order = mesh.boundary_nodes(label);
    let mut t = Triplets::new(mesh.num_nodes(), order.len());
    for (k, &n) in order.iter().enumerate() {
        t.push(n, k, 1.0);
    }
    t.to_csr()
}
