//! Exact transportation between many sources and a few sinks by successive
//! shortest paths.
//!
//! Sources are processed one at a time. Every residual path alternates
//! between sinks and previously routed sources, so shortest paths are found
//! on a graph over sinks only: moving from sink `j` to sink `k` through a
//! source `i` that currently ships to `j` costs `c_ik - c_ij`.

use std::collections::VecDeque;

/// Minimum of `sum f_ij c_ij` over plans with row sums `supply` and column
/// sums `demand`; `cost` is row-major `n x m`. Totals must agree.
pub fn solve(supply: &[f64], demand: &[f64], cost: &[f64]) -> f64 {
    let n = supply.len();
    let m = demand.len();
    assert_eq!(cost.len(), n * m, "cost matrix must be n x m");
    if n == 0 || m == 0 {
        return 0.0;
    }
    let total: f64 = supply.iter().sum();
    let eps = 1e-13 * total.max(f64::MIN_POSITIVE);
    let c = |i: usize, j: usize| cost[i * m + j];

    let mut flow = vec![0.0; n * m];
    let mut users: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut remaining = demand.to_vec();
    let mut dist = vec![0.0; m];
    // (previous sink, rerouted source) on the shortest path into each sink
    let mut pred: Vec<Option<(usize, usize)>> = vec![None; m];
    let mut queued = vec![false; m];
    let mut queue = VecDeque::with_capacity(m);
    let mut relaxations = vec![0usize; m];

    for i in 0..n {
        let mut rem = supply[i];
        while rem > eps {
            for k in 0..m {
                dist[k] = c(i, k);
                pred[k] = None;
                queued[k] = true;
                relaxations[k] = 0;
                queue.push_back(k);
            }
            while let Some(j) = queue.pop_front() {
                queued[j] = false;
                for &src in &users[j] {
                    let base = dist[j] - c(src, j);
                    for k in 0..m {
                        if k == j {
                            continue;
                        }
                        let nd = base + c(src, k);
                        if nd < dist[k] - 1e-15 * (1.0 + dist[k].abs()) {
                            dist[k] = nd;
                            pred[k] = Some((j, src));
                            relaxations[k] += 1;
                            if !queued[k] && relaxations[k] <= m {
                                queued[k] = true;
                                queue.push_back(k);
                            }
                        }
                    }
                }
            }
            let Some(sink) = (0..m)
                .filter(|&k| remaining[k] > eps)
                .min_by(|&a, &b| dist[a].total_cmp(&dist[b]))
            else {
                break;
            };
            // collect the path and its bottleneck
            let mut theta = rem.min(remaining[sink]);
            let mut hops = Vec::new();
            let mut k = sink;
            while let Some((j, src)) = pred[k] {
                theta = theta.min(flow[src * m + j]);
                hops.push((j, src, k));
                k = j;
                if hops.len() > m {
                    break;
                }
            }
            let first = k;
            if theta <= 0.0 {
                break;
            }
            add_flow(&mut flow, &mut users, m, i, first, theta);
            for &(j, src, k) in &hops {
                add_flow(&mut flow, &mut users, m, src, k, theta);
                add_flow(&mut flow, &mut users, m, src, j, -theta);
                if flow[src * m + j] <= eps {
                    flow[src * m + j] = 0.0;
                    users[j].retain(|&s| s != src);
                }
            }
            remaining[sink] -= theta;
            rem -= theta;
        }
    }
    flow.iter().zip(cost).map(|(&f, &cc)| f * cc).sum()
}

fn add_flow(flow: &mut [f64], users: &mut [Vec<usize>], m: usize, i: usize, j: usize, amount: f64) {
    let f = &mut flow[i * m + j];
    if *f == 0.0 && amount > 0.0 {
        users[j].push(i);
    }
    *f += amount;
}

/// Squared-distance transport between two weighted point sets on the line.
pub fn solve_1d(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.0.total_cmp(&y.0));
    b.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (
        a.first().map_or(0.0, |p| p.1),
        b.first().map_or(0.0, |p| p.1),
    );
    let tol = 1e-14 * a.iter().map(|p| p.1).sum::<f64>();
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let mass = ra.min(rb);
        let gap = a[i].0 - b[j].0;
        total += mass * gap * gap;
        ra -= mass;
        rb -= mass;
        if ra <= tol {
            i += 1;
            ra = a.get(i).map_or(0.0, |p| p.1);
        }
        if rb <= tol {
            j += 1;
            rb = b.get(j).map_or(0.0, |p| p.1);
        }
    }
    total
}
