use std::sync::Arc;

use nalgebra::DVector;
use nalgebra_sparse::CsrMatrix;

use super::{residual_pto_map, ResidualModel, Secondary, SolveCounts};
use crate::error::{check_dim, Error, Result};
use crate::fem::{
    edge_triple, observation_matrix, p1_local_stiffness, Anisotropy, BoundaryLabel, Mesh,
};
use crate::linalg::{BandBuilder, BandLu, BandOrdering};

#[derive(Debug, Clone)]
struct RobinEdge {
    nodes: [usize; 2],
    dofs: [usize; 2],
    h: f64,
}

/// Diffusion with a P0 conductivity `beta` and a Robin coefficient `m`
/// (P1 on the `I` boundary), driven by a prescribed flux on the `A`
/// boundary:
///
/// `-div(beta grad u) = 0`, `beta du/dn + m u = 0` on I,
/// `beta du/dn = g` on A.
///
/// The discrete residual `K(beta) u + R_I(m) u - b` is linear in `u` and in
/// each coefficient separately, so `D_uu = D_zz = 0`.
#[derive(Debug, Clone)]
pub struct RobinModel {
    n_nodes: usize,
    n_m: usize,
    n_beta: usize,
    triangles: Vec<[usize; 3]>,
    elem_k: Vec<[[f64; 3]; 3]>,
    edges: Vec<RobinEdge>,
    load: DVector<f64>,
    obs: CsrMatrix<f64>,
    ordering: Arc<BandOrdering>,
    beta: Secondary,
}

impl RobinModel {
    pub fn new(mesh: &Mesh, points: &[[f64; 2]], flux: f64, beta: Secondary) -> Result<Self> {
        let order = mesh.boundary_nodes(BoundaryLabel::I);
        if order.is_empty() {
            return Err(Error::InvalidArgument("mesh has no I boundary".into()));
        }
        let mut local = std::collections::HashMap::new();
        for (k, &n) in order.iter().enumerate() {
            local.insert(n, k);
        }
        let edges = mesh
            .boundary_edges
            .iter()
            .filter(|e| e.label == BoundaryLabel::I)
            .map(|e| RobinEdge {
                nodes: e.nodes,
                dofs: [local[&e.nodes[0]], local[&e.nodes[1]]],
                h: mesh.edge_length(e.nodes[0], e.nodes[1]),
            })
            .collect();
        let mut load = DVector::zeros(mesh.num_nodes());
        for e in mesh.boundary_edges.iter().filter(|e| e.label == BoundaryLabel::A) {
            let h = mesh.edge_length(e.nodes[0], e.nodes[1]);
            load[e.nodes[0]] += 0.5 * h * flux;
            load[e.nodes[1]] += 0.5 * h * flux;
        }
        let theta = Anisotropy::identity();
        let elem_k = (0..mesh.num_triangles()).map(|t| p1_local_stiffness(mesh, t, &theta)).collect();
        if let Secondary::Fixed(b) = &beta {
            check_dim("fixed beta", b.len(), mesh.num_triangles())?;
        }
        Ok(Self {
            n_nodes: mesh.num_nodes(),
            n_m: order.len(),
            n_beta: mesh.num_triangles(),
            triangles: mesh.triangles.clone(),
            elem_k,
            edges,
            load,
            obs: observation_matrix(mesh, points)?,
            ordering: Arc::new(mesh.node_ordering()),
            beta,
        })
    }

    /// Same model with `beta` held fixed; the parameter becomes `m` alone.
    pub fn with_fixed_beta(&self, beta: DVector<f64>) -> Result<Self> {
        check_dim("fixed beta", beta.len(), self.n_beta)?;
        Ok(Self { beta: Secondary::Fixed(beta), ..self.clone() })
    }

    pub fn m_dim(&self) -> usize {
        self.n_m
    }

    pub fn beta_dim(&self) -> usize {
        self.n_beta
    }

    fn jacobian(&self, z: &DVector<f64>) -> BandBuilder {
        let (m, beta) = self.beta.split(z, self.n_m);
        let mut b = BandBuilder::new(&self.ordering);
        for (t, tri) in self.triangles.iter().enumerate() {
            let k = &self.elem_k[t];
            for i in 0..3 {
                for j in 0..3 {
                    b.add(tri[i], tri[j], beta[t] * k[i][j]);
                }
            }
        }
        for e in &self.edges {
            for i in 0..2 {
                for j in 0..2 {
                    let w: f64 = (0..2).map(|k| edge_triple(e.h, i, j, k) * m[e.dofs[k]]).sum();
                    b.add(e.nodes[i], e.nodes[j], w);
                }
            }
        }
        b
    }

    /// `K(c) u` for a P0 coefficient `c`.
    fn k_action(&self, c: &[f64], u: &DVector<f64>, out: &mut DVector<f64>) {
        for (t, tri) in self.triangles.iter().enumerate() {
            if c[t] == 0.0 {
                continue;
            }
            let k = &self.elem_k[t];
            for i in 0..3 {
                out[tri[i]] += c[t] * (0..3).map(|j| k[i][j] * u[tri[j]]).sum::<f64>();
            }
        }
    }

    /// `R_I(c) u` for a boundary coefficient `c`.
    fn robin_action(&self, c: &[f64], u: &DVector<f64>, out: &mut DVector<f64>) {
        for e in &self.edges {
            for i in 0..2 {
                let mut s = 0.0;
                for j in 0..2 {
                    for k in 0..2 {
                        s += edge_triple(e.h, i, j, k) * c[e.dofs[k]] * u[e.nodes[j]];
                    }
                }
                out[e.nodes[i]] += s;
            }
        }
    }

    fn mixed_action(&self, dz: &DVector<f64>, r: &DVector<f64>, out: &mut DVector<f64>) {
        self.robin_action(&dz.as_slice()[..self.n_m], r, out);
        if self.beta.is_free() {
            self.k_action(&dz.as_slice()[self.n_m..], r, out);
        }
    }
}

impl ResidualModel for RobinModel {
    fn param_dim(&self) -> usize {
        self.n_m + if self.beta.is_free() { self.n_beta } else { 0 }
    }

    fn state_dim(&self) -> usize {
        self.n_nodes
    }

    fn observation(&self) -> &CsrMatrix<f64> {
        &self.obs
    }

    fn solve_state(&self, z: &DVector<f64>, counts: &mut SolveCounts) -> Result<DVector<f64>> {
        check_dim("parameter", z.len(), self.param_dim())?;
        let lu = self.jacobian(z).factor_lu()?;
        counts.forward += 1;
        Ok(lu.solve(&self.load))
    }

    fn factor_state_jacobian(&self, _u: &DVector<f64>, z: &DVector<f64>) -> Result<BandLu> {
        self.jacobian(z).factor_lu()
    }

    fn param_action(&self, u: &DVector<f64>, _z: &DVector<f64>, dz: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_nodes);
        self.mixed_action(dz, u, &mut out);
        out
    }

    fn param_transpose(&self, u: &DVector<f64>, _z: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.param_dim());
        for e in &self.edges {
            for i in 0..2 {
                for j in 0..2 {
                    let wu = w[e.nodes[i]] * u[e.nodes[j]];
                    for k in 0..2 {
                        out[e.dofs[k]] += edge_triple(e.h, i, j, k) * wu;
                    }
                }
            }
        }
        if self.beta.is_free() {
            for (t, tri) in self.triangles.iter().enumerate() {
                let k = &self.elem_k[t];
                let mut s = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        s += w[tri[i]] * k[i][j] * u[tri[j]];
                    }
                }
                out[self.n_m + t] = s;
            }
        }
        out
    }

    fn second_variation(
        &self,
        _u: &DVector<f64>,
        _z: &DVector<f64>,
        r1: &DVector<f64>,
        dz1: &DVector<f64>,
        r2: &DVector<f64>,
        dz2: &DVector<f64>,
    ) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_nodes);
        self.mixed_action(dz1, r2, &mut out);
        self.mixed_action(dz2, r1, &mut out);
        out
    }
}

residual_pto_map!(RobinModel);
