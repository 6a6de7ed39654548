use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Weighted undirected graph. `adj` holds both directions of every edge
/// between distinct nodes; `loops` holds self-loop weight.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    adj: Vec<Vec<(usize, f64)>>,
    loops: Vec<f64>,
    degree: Vec<f64>,
    /// Sum of degrees, i.e. twice the total edge weight.
    total: f64,
}

impl WeightedGraph {
    /// Unit-weight graph from adjacency lists (assumed symmetric).
    pub fn from_adjacency(adj: &[Vec<usize>]) -> Self {
        let adj: Vec<Vec<(usize, f64)>> = adj
            .iter()
            .enumerate()
            .map(|(i, nb)| nb.iter().filter(|&&j| j != i).map(|&j| (j, 1.0)).collect())
            .collect();
        let n = adj.len();
        Self::build(adj, vec![0.0; n])
    }

    fn build(adj: Vec<Vec<(usize, f64)>>, loops: Vec<f64>) -> Self {
        let degree: Vec<f64> = adj
            .iter()
            .zip(&loops)
            .map(|(nb, l)| nb.iter().map(|e| e.1).sum::<f64>() + 2.0 * l)
            .collect();
        let total = degree.iter().sum();
        Self { adj, loops, degree, total }
    }

    pub fn n_nodes(&self) -> usize {
        self.adj.len()
    }

    /// Modularity of a partition with resolution `gamma`.
    pub fn modularity(&self, part: &[usize], gamma: f64) -> f64 {
        if self.total == 0.0 {
            return 0.0;
        }
        let k = part.iter().copied().max().map_or(0, |m| m + 1);
        let mut internal = vec![0.0; k];
        let mut tot = vec![0.0; k];
        for v in 0..self.n_nodes() {
            let c = part[v];
            tot[c] += self.degree[v];
            internal[c] += 2.0 * self.loops[v];
            for &(u, w) in &self.adj[v] {
                if part[u] == c {
                    internal[c] += w;
                }
            }
        }
        internal
            .iter()
            .zip(&tot)
            .map(|(&e, &t)| e / self.total - gamma * (t / self.total).powi(2))
            .sum()
    }
}

/// Relabel to contiguous ids in order of first appearance.
pub fn relabel(part: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    let mut next = 0;
    part.iter()
        .map(|&c| {
            *map.entry(c).or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

/// Leiden community detection (local moving, refinement, aggregation).
/// Node visiting orders come from `seed`; refinement merges greedily.
pub fn leiden(graph: &WeightedGraph, gamma: f64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = graph.n_nodes();
    let mut g = graph.clone();
    let mut membership: Vec<usize> = (0..n).collect();
    let mut part: Vec<usize> = (0..n).collect();
    for _ in 0..64 {
        move_nodes(&g, &mut part, gamma, &mut rng);
        part = relabel(&part);
        let n_comms = part.iter().copied().max().map_or(0, |m| m + 1);
        if n_comms == g.n_nodes() {
            break;
        }
        let mut refined = refine(&g, &part, gamma, &mut rng);
        if refined.iter().copied().max().map_or(0, |m| m + 1) == g.n_nodes() {
            refined = part.clone();
        }
        let (agg, map) = aggregate(&g, &refined);
        let mut next = vec![0; agg.n_nodes()];
        for v in 0..g.n_nodes() {
            next[map[v]] = part[v];
        }
        for m in membership.iter_mut() {
            *m = map[*m];
        }
        g = agg;
        part = next;
    }
    relabel(&membership.iter().map(|&m| part[m]).collect::<Vec<_>>())
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Queue-based local moving: each node joins the neighboring community with
/// the largest strictly positive gain.
fn move_nodes(g: &WeightedGraph, part: &mut [usize], gamma: f64, rng: &mut ChaCha8Rng) {
    let n = g.n_nodes();
    let mut tot = vec![0.0; n];
    let mut size = vec![0usize; n];
    for v in 0..n {
        tot[part[v]] += g.degree[v];
        size[part[v]] += 1;
    }
    let mut empty: Vec<usize> = (0..n).filter(|&c| size[c] == 0).rev().collect();
    let mut queue: VecDeque<usize> = shuffled(n, rng).into();
    let mut queued = vec![true; n];
    let mut weight_to = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut budget = 100 * n.max(1) * n.max(1);
    while let Some(v) = queue.pop_front() {
        queued[v] = false;
        budget = budget.saturating_sub(1);
        if budget == 0 {
            break;
        }
        let cur = part[v];
        for &(u, w) in &g.adj[v] {
            let c = part[u];
            if weight_to[c] == 0.0 {
                touched.push(c);
            }
            weight_to[c] += w;
        }
        let kv = g.degree[v];
        tot[cur] -= kv;
        size[cur] -= 1;
        let scale = gamma * kv / g.total;
        let mut best = cur;
        let mut best_gain = weight_to[cur] - scale * tot[cur];
        for &c in &touched {
            let gain = weight_to[c] - scale * tot[c];
            if gain > best_gain {
                best_gain = gain;
                best = c;
            }
        }
        if best_gain < 0.0 && size[cur] > 0 {
            if let Some(&e) = empty.last() {
                best = e;
            }
        }
        for &c in &touched {
            weight_to[c] = 0.0;
        }
        touched.clear();
        if size[cur] == 0 && best != cur {
            empty.push(cur);
        }
        if empty.last() == Some(&best) {
            empty.pop();
        }
        tot[best] += kv;
        size[best] += 1;
        if best != cur {
            part[v] = best;
            for &(u, _) in &g.adj[v] {
                if !queued[u] && part[u] != best {
                    queued[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
}

/// Splits every community into well-connected subcommunities by merging
/// singletons greedily.
fn refine(g: &WeightedGraph, part: &[usize], gamma: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = g.n_nodes();
    let mut comm_tot = BTreeMap::new();
    for v in 0..n {
        *comm_tot.entry(part[v]).or_insert(0.0) += g.degree[v];
    }
    let mut refined: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut sub_tot = g.degree.clone();
    // Weight from each subcommunity to the rest of its community.
    let mut external: Vec<f64> = (0..n)
        .map(|v| g.adj[v].iter().filter(|&&(u, _)| part[u] == part[v]).map(|e| e.1).sum())
        .collect();
    let mut weight_to = vec![0.0; n];
    let mut touched = Vec::new();
    for v in shuffled(n, rng) {
        if size[refined[v]] != 1 {
            continue;
        }
        let kc = comm_tot[&part[v]];
        let kv = g.degree[v];
        if external[v] < gamma * kv * (kc - kv) / g.total {
            continue;
        }
        for &(u, w) in &g.adj[v] {
            if part[u] == part[v] && refined[u] != refined[v] {
                let s = refined[u];
                if weight_to[s] == 0.0 {
                    touched.push(s);
                }
                weight_to[s] += w;
            }
        }
        let mut best = None;
        let mut best_gain = 0.0;
        for &s in &touched {
            let well_connected = external[s] >= gamma * sub_tot[s] * (kc - sub_tot[s]) / g.total;
            let gain = weight_to[s] - gamma * kv * sub_tot[s] / g.total;
            if well_connected && gain > best_gain {
                best_gain = gain;
                best = Some(s);
            }
        }
        if let Some(s) = best {
            let own = refined[v];
            size[own] -= 1;
            size[s] += 1;
            sub_tot[s] += kv;
            external[s] += external[v] - 2.0 * weight_to[s];
            refined[v] = s;
        }
        for &s in &touched {
            weight_to[s] = 0.0;
        }
        touched.clear();
    }
    relabel(&refined)
}

/// Collapse each label into one node; returns the new graph and node map.
fn aggregate(g: &WeightedGraph, labels: &[usize]) -> (WeightedGraph, Vec<usize>) {
    let map = relabel(labels);
    let k = map.iter().copied().max().map_or(0, |m| m + 1);
    let mut edges: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); k];
    let mut loops = vec![0.0; k];
    for v in 0..g.n_nodes() {
        let c = map[v];
        loops[c] += g.loops[v];
        for &(u, w) in &g.adj[v] {
            let d = map[u];
            if d == c {
                loops[c] += w / 2.0;
            } else {
                *edges[c].entry(d).or_insert(0.0) += w;
            }
        }
    }
    let adj = edges.into_iter().map(|m| m.into_iter().collect()).collect();
    let agg = WeightedGraph::build(adj, loops);
    (agg, map)
}
