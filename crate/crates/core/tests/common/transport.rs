//! Optimal-transport oracle for 1-D histograms.

/// Optimal transport cost between two distributions on the same 1-D bins,
/// ground cost `|i - j| * bin_width`, solved as a min-cost flow by successive
/// shortest paths (Bellman-Ford on the residual network).
pub fn transport_cost(a: &[f64], b: &[f64], bin_width: f64) -> f64 {
    let n = a.len();
    assert_eq!(n, b.len());
    // Nodes: source, n supplies, n demands, sink.
    let (source, sink) = (0, 2 * n + 1);
    let nodes = 2 * n + 2;
    let mut edges: Vec<Edge> = Vec::new();
    let add = |edges: &mut Vec<Edge>, from, to, cap, cost| {
        edges.push(Edge { from, to, cap, cost });
        edges.push(Edge { from: to, to: from, cap: 0.0, cost: -cost });
    };
    for i in 0..n {
        add(&mut edges, source, 1 + i, a[i], 0.0);
        add(&mut edges, 1 + n + i, sink, b[i], 0.0);
        for j in 0..n {
            add(&mut edges, 1 + i, 1 + n + j, f64::INFINITY, (i as f64 - j as f64).abs() * bin_width);
        }
    }
    let mut total = 0.0;
    loop {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut via = vec![usize::MAX; nodes];
        dist[source] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for (k, e) in edges.iter().enumerate() {
                if e.cap > 1e-15 && dist[e.from] + e.cost < dist[e.to] - 1e-15 {
                    dist[e.to] = dist[e.from] + e.cost;
                    via[e.to] = k;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if !dist[sink].is_finite() {
            return total;
        }
        let mut push = f64::INFINITY;
        let mut v = sink;
        while v != source {
            push = push.min(edges[via[v]].cap);
            v = edges[via[v]].from;
        }
        let mut v = sink;
        while v != source {
            let k = via[v];
            edges[k].cap -= push;
            edges[k ^ 1].cap += push;
            total += push * edges[k].cost;
            v = edges[k].from;
        }
    }
}

struct Edge {
    from: usize,
    to: usize,
    cap: f64,
    cost: f64,
}

/// Random probability vector with some empty bins.
pub fn random_distribution<R: rand::Rng>(rng: &mut R, bins: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..bins)
        .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random::<f64>() })
        .collect();
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        return vec![1.0 / bins as f64; bins];
    }
    raw.iter().map(|x| x / total).collect()
}
