use std::collections::VecDeque;

/// A symmetric permutation of unknowns together with the half-bandwidth it
/// achieves on the graph it was built from. `perm[old] = new`.
#[derive(Debug, Clone)]
pub struct BandOrdering {
    pub perm: Vec<usize>,
    pub inv: Vec<usize>,
    pub bandwidth: usize,
}

impl BandOrdering {
    pub fn identity(adjacency: &[Vec<usize>]) -> Self {
        let perm: Vec<usize> = (0..adjacency.len()).collect();
        Self::from_perm(perm, adjacency)
    }

    /// Reverse Cuthill-McKee started from a pseudo-peripheral node of each
    /// connected component. Falls back to the identity if that is narrower.
    pub fn rcm(adjacency: &[Vec<usize>]) -> Self {
        let n = adjacency.len();
        let mut order = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        let degree: Vec<usize> = adjacency.iter().map(|a| a.len()).collect();
        while order.len() < n {
            let start = (0..n)
                .filter(|&i| !seen[i])
                .min_by_key(|&i| degree[i])
                .unwrap();
            let start = peripheral(adjacency, start);
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(v) = queue.pop_front() {
                order.push(v);
                let mut nbrs: Vec<usize> =
                    adjacency[v].iter().copied().filter(|&w| !seen[w]).collect();
                nbrs.sort_by_key(|&w| (degree[w], w));
                for w in nbrs {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        order.reverse();
        let mut perm = vec![0; n];
        for (new, &old) in order.iter().enumerate() {
            perm[old] = new;
        }
        let rcm = Self::from_perm(perm, adjacency);
        let id = Self::identity(adjacency);
        if id.bandwidth <= rcm.bandwidth {
            id
        } else {
            rcm
        }
    }

    pub fn from_perm(perm: Vec<usize>, adjacency: &[Vec<usize>]) -> Self {
        let mut inv = vec![0; perm.len()];
        for (old, &new) in perm.iter().enumerate() {
            inv[new] = old;
        }
        let mut bandwidth = 0;
        for (i, nbrs) in adjacency.iter().enumerate() {
            for &j in nbrs {
                bandwidth = bandwidth.max(perm[i].abs_diff(perm[j]));
            }
        }
        Self { perm, inv, bandwidth }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }
}

fn bfs_levels(adjacency: &[Vec<usize>], start: usize) -> (usize, usize) {
    let mut dist = vec![usize::MAX; adjacency.len()];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    let mut last = start;
    while let Some(v) = queue.pop_front() {
        last = v;
        for &w in &adjacency[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    (last, dist[last])
}

fn peripheral(adjacency: &[Vec<usize>], start: usize) -> usize {
    let mut node = start;
    let mut ecc = 0;
    loop {
        let (far, d) = bfs_levels(adjacency, node);
        if d <= ecc {
            return node;
        }
        ecc = d;
        node = far;
    }
}
