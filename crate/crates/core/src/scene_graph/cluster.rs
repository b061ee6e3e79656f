use std::collections::HashMap;

use crate::geometry::{dist2, LabeledPointCloud, Vec3};
use crate::ClassId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    /// Two points connect when their distance is at most this (metres).
    pub cell: f64,
    pub min_points: usize,
}

pub(crate) struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    pub(crate) fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    pub(crate) fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra as usize] >= self.size[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
    }
}

/// Connected components of one class's points; returns global point indices.
pub fn cluster_class(cloud: &LabeledPointCloud, class_id: ClassId, params: ClusterParams) -> Vec<Vec<usize>> {
    let members: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.labels()[i] == class_id).collect();
    euclidean_clusters(cloud.points(), &members, params)
}

/// Euclidean connected components over `members`.
///
/// Clusters smaller than `min_points` are dropped. Each cluster is sorted
/// ascending; clusters come by descending size, then ascending first index.
pub fn euclidean_clusters(points: &[Vec3], members: &[usize], params: ClusterParams) -> Vec<Vec<usize>> {
    assert!(
        params.cell > 0.0 && params.min_points >= 1,
        "bad cluster params {params:?}"
    );
    if members.is_empty() {
        return Vec::new();
    }
    // hash cells small enough that any two points sharing one are connected
    let h = params.cell / 3f64.sqrt();
    let key = |p: &Vec3| {
        (
            (p.x / h).floor() as i64,
            (p.y / h).floor() as i64,
            (p.z / h).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
    for (local, &g) in members.iter().enumerate() {
        grid.entry(key(&points[g])).or_default().push(local as u32);
    }
    let mut keys: Vec<_> = grid.keys().copied().collect();
    keys.sort_unstable();

    let mut uf = UnionFind::new(members.len());
    for k in &keys {
        let cell = &grid[k];
        for &m in &cell[1..] {
            uf.union(cell[0], m);
        }
    }
    let r2 = params.cell * params.cell;
    for k in &keys {
        let a = &grid[k];
        for dx in -2i64..=2 {
            for dy in -2i64..=2 {
                for dz in -2i64..=2 {
                    if (dx, dy, dz) <= (0, 0, 0) {
                        continue;
                    }
                    let Some(b) = grid.get(&(k.0 + dx, k.1 + dy, k.2 + dz)) else {
                        continue;
                    };
                    if uf.find(a[0]) == uf.find(b[0]) {
                        continue;
                    }
                    'scan: for &i in a {
                        let pi = &points[members[i as usize]];
                        for &j in b {
                            if dist2(pi, &points[members[j as usize]]) <= r2 {
                                uf.union(i, j);
                                break 'scan;
                            }
                        }
                    }
                }
            }
        }
    }

    let mut groups: HashMap<u32, Vec<usize>> = HashMap::new();
    for local in 0..members.len() as u32 {
        let root = uf.find(local);
        groups.entry(root).or_default().push(members[local as usize]);
    }
    let mut clusters: Vec<Vec<usize>> = groups
        .into_values()
        .filter(|c| c.len() >= params.min_points)
        .map(|mut c| {
            c.sort_unstable();
            c
        })
        .collect();
    clusters.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    clusters
}
