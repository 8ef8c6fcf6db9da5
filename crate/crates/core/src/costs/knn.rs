use ndarray::Array2;
use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use petgraph::unionfind::UnionFind;

use super::{euclidean, DenseCost, PointCloud};
use crate::{Error, Result};

/// All-pairs shortest-path distances on the symmetrized k-nearest-neighbour
/// graph of `points`, with Euclidean edge weights.
///
/// Each point links to its `k` nearest other points (ties go to the lower
/// index) and the graph keeps the union of those directed edges.
pub fn knn_shortest_path_cost(points: &PointCloud, k: usize) -> Result<DenseCost> {
    let n = points.len();
    if k == 0 || k >= n {
        return Err(Error::Input(format!("k must satisfy 0 < k < n, got k={k}, n={n}")));
    }

    let mut graph: UnGraph<(), f64> = UnGraph::with_capacity(n, n * k);
    let nodes: Vec<NodeIndex> = (0..n).map(|_| graph.add_node(())).collect();
    let mut adjacent = vec![false; n * n];
    let mut uf = UnionFind::<usize>::new(n);

    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (euclidean(points.point(i), points.point(j)), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(d, j) in others.iter().take(k) {
            let (lo, hi) = (i.min(j), i.max(j));
            if !adjacent[lo * n + hi] {
                adjacent[lo * n + hi] = true;
                graph.add_edge(nodes[lo], nodes[hi], d);
                uf.union(lo, hi);
            }
        }
    }

    let labels = uf.into_labeling();
    let mut components: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for (i, &root) in labels.iter().enumerate() {
        if slot[root] == usize::MAX {
            slot[root] = components.len();
            components.push(Vec::new());
        }
        components[slot[root]].push(i);
    }
    if components.len() > 1 {
        let listing: Vec<String> = components
            .iter()
            .map(|c| {
                let head: Vec<String> = c.iter().take(8).map(|i| i.to_string()).collect();
                let more = if c.len() > 8 { format!(", ... ({} points)", c.len()) } else { String::new() };
                format!("{{{}{more}}}", head.join(", "))
            })
            .collect();
        return Err(Error::Input(format!(
            "k-NN graph with k={k} is disconnected into {} components: {}",
            components.len(),
            listing.join(" ")
        )));
    }

    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        let dist = dijkstra(&graph, nodes[i], None, |e| *e.weight());
        for (node, d) in dist {
            values[[i, node.index()]] = d;
        }
    }
    // Enforce exact symmetry; both directions agree up to summation order.
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (values[[i, j]] + values[[j, i]]);
            values[[i, j]] = v;
            values[[j, i]] = v;
        }
    }
    DenseCost::new(values)
}
