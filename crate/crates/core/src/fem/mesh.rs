use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::BandOrdering;

/// Boundary parts used by the two model problems: `A`ccessible and
/// `I`naccessible Robin/flux sides, `D`irichlet and `N`eumann sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryLabel {
    A,
    I,
    D,
    N,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideLabels {
    pub bottom: BoundaryLabel,
    pub right: BoundaryLabel,
    pub top: BoundaryLabel,
    pub left: BoundaryLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub label: BoundaryLabel,
}

/// Vertex counts and extents of a structured rectangular mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridShape {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

/// Triangular mesh with labelled boundary edges.
///
/// Structured meshes number vertices row by row with x varying fastest; cell
/// (i, j) is split along its (i, j)-(i+1, j+1) diagonal into triangles
/// `2c` and `2c+1`, `c = j (nx-1) + i`, both counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    #[serde(default)]
    pub grid: Option<GridShape>,
}

pub fn build_rect_mesh(nx: usize, ny: usize, lx: f64, ly: f64, labels: SideLabels) -> Result<Mesh> {
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidArgument(format!(
            "mesh needs at least 2x2 vertices, got {nx}x{ny}"
        )));
    }
    if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad extents {lx} x {ly}")));
    }
    let node = |i: usize, j: usize| j * nx + i;
    let vertices = (0..ny)
        .flat_map(|j| {
            (0..nx).map(move |i| {
                [lx * i as f64 / (nx - 1) as f64, ly * j as f64 / (ny - 1) as f64]
            })
        })
        .collect();
    let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            triangles.push([node(i, j), node(i + 1, j), node(i + 1, j + 1)]);
            triangles.push([node(i, j), node(i + 1, j + 1), node(i, j + 1)]);
        }
    }
    let mut boundary_edges = Vec::new();
    for i in 0..nx - 1 {
        boundary_edges.push(BoundaryEdge { nodes: [node(i, 0), node(i + 1, 0)], label: labels.bottom });
    }
    for j in 0..ny - 1 {
        boundary_edges.push(BoundaryEdge { nodes: [node(nx - 1, j), node(nx - 1, j + 1)], label: labels.right });
    }
    for i in (0..nx - 1).rev() {
        boundary_edges.push(BoundaryEdge { nodes: [node(i + 1, ny - 1), node(i, ny - 1)], label: labels.top });
    }
    for j in (0..ny - 1).rev() {
        boundary_edges.push(BoundaryEdge { nodes: [node(0, j + 1), node(0, j)], label: labels.left });
    }
    Ok(Mesh { vertices, triangles, boundary_edges, grid: Some(GridShape { nx, ny, lx, ly }) })
}

impl Mesh {
    pub fn num_nodes(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|k| self.vertices[k]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[t].map(|k| self.vertices[k]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn edge_length(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.vertices[a], self.vertices[b]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    }

    /// Edges shared by two triangles: (node a, node b, triangle 1, triangle 2).
    pub fn interior_edges(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        let mut out = Vec::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                if let Some(s) = seen.remove(&key) {
                    out.push((key.0, key.1, s, t));
                } else {
                    seen.insert(key, t);
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn node_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for tri in &self.triangles {
            for a in 0..3 {
                for b in 0..3 {
                    if a != b && !adj[tri[a]].contains(&tri[b]) {
                        adj[tri[a]].push(tri[b]);
                    }
                }
            }
        }
        adj
    }

    pub fn cell_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_triangles()];
        for (_, _, s, t) in self.interior_edges() {
            adj[s].push(t);
            adj[t].push(s);
        }
        adj
    }

    /// Nodes on the boundary part `label`, ordered along the boundary as a
    /// path starting from its lowest-numbered endpoint.
    pub fn boundary_nodes(&self, label: BoundaryLabel) -> Vec<usize> {
        let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
        for e in self.boundary_edges.iter().filter(|e| e.label == label) {
            adj.entry(e.nodes[0]).or_default().push(e.nodes[1]);
            adj.entry(e.nodes[1]).or_default().push(e.nodes[0]);
        }
        let mut remaining: Vec<usize> = adj.keys().copied().collect();
        remaining.sort_unstable();
        let mut visited = std::collections::HashSet::new();
        let mut order = Vec::with_capacity(remaining.len());
        while visited.len() < remaining.len() {
            let unvisited = remaining.iter().copied().filter(|v| !visited.contains(v));
            let start = unvisited
                .clone()
                .find(|v| adj[v].len() == 1)
                .or_else(|| unvisited.clone().next())
                .unwrap();
            let mut cur = start;
            loop {
                visited.insert(cur);
                order.push(cur);
                let mut next: Vec<usize> =
                    adj[&cur].iter().copied().filter(|v| !visited.contains(v)).collect();
                next.sort_unstable();
                match next.first() {
                    Some(&n) => cur = n,
                    None => break,
                }
            }
        }
        order
    }

    /// Bandwidth-reducing ordering of the vertices.
    pub fn node_ordering(&self) -> BandOrdering {
        let adj = self.node_adjacency();
        let mut best = BandOrdering::rcm(&adj);
        if let Some(g) = self.grid {
            let perm = (0..self.num_nodes()).map(|k| (k % g.nx) * g.ny + k / g.nx).collect();
            let t = BandOrdering::from_perm(perm, &adj);
            if t.bandwidth < best.bandwidth {
                best = t;
            }
        }
        best
    }

    /// Bandwidth-reducing ordering of the triangles (cell graph).
    pub fn cell_ordering(&self) -> BandOrdering {
        let adj = self.cell_adjacency();
        let mut best = BandOrdering::rcm(&adj);
        if let Some(g) = self.grid {
            let (cx, cy) = (g.nx - 1, g.ny - 1);
            let perm = (0..self.num_triangles())
                .map(|t| {
                    let c = t / 2;
                    ((c % cx) * cy + c / cx) * 2 + t % 2
                })
                .collect();
            let t = BandOrdering::from_perm(perm, &adj);
            if t.bandwidth < best.bandwidth {
                best = t;
            }
        }
        best
    }

    /// Checks orientation, index ranges and that every boundary edge is
    /// labelled exactly once.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&k| k >= n) {
                return Err(Error::InvalidArgument(format!("triangle {t} has out-of-range vertex")));
            }
            if self.area(t) <= 0.0 {
                return Err(Error::InvalidArgument(format!("triangle {t} is degenerate or clockwise")));
            }
        }
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut labelled: HashMap<(usize, usize), usize> = HashMap::new();
        for e in &self.boundary_edges {
            let [a, b] = e.nodes;
            *labelled.entry((a.min(b), a.max(b))).or_default() += 1;
        }
        for (edge, c) in &count {
            if *c == 1 && labelled.get(edge) != Some(&1) {
                return Err(Error::InvalidArgument(format!(
                    "boundary edge {edge:?} is unlabelled or labelled twice"
                )));
            }
            if *c > 2 {
                return Err(Error::InvalidArgument(format!("edge {edge:?} shared by {c} triangles")));
            }
        }
        for edge in labelled.keys() {
            if count.get(edge) != Some(&1) {
                return Err(Error::InvalidArgument(format!("labelled edge {edge:?} is not on the boundary")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mesh: Mesh = serde_json::from_str(s)?;
        mesh.validate()?;
        Ok(mesh)
    }
}
