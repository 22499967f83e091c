//! Brute-force oracles and generators shared by the integration tests.
#![allow(dead_code)]

use flowtrack::flow::{EdgeKind, FlowGraph};
use flowtrack::nnet::{Activation, DenseNet};
use ndarray::Array2;
use rand::Rng;

/// Minimum total cost over all `n!` permutations.
pub fn enumerate_assignment(costs: &[Vec<f64>]) -> f64 {
    fn go(costs: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == costs.len() {
            *best = best.min(acc);
            return;
        }
        for c in 0..costs.len() {
            if !used[c] {
                used[c] = true;
                go(costs, row + 1, used, acc + costs[row][c], best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(costs, 0, &mut vec![false; costs.len()], 0.0, &mut best);
    if costs.is_empty() {
        0.0
    } else {
        best
    }
}

/// Optimal path cover found by enumerating every set of links in which each
/// node has at most one successor and one predecessor.
pub struct PathCover {
    pub objective: f64,
    pub x: Vec<u8>,
    /// Distance to the runner-up; tiny values mean the optimum is not unique.
    pub margin: f64,
}

pub fn enumerate_path_cover(graph: &FlowGraph) -> PathCover {
    let n = graph.num_nodes();
    let edges = graph.edges();
    let mut out_links: Vec<Vec<usize>> = vec![Vec::new(); n];
    for idx in graph.link_range() {
        out_links[edges[idx].from].push(idx);
    }
    let det = |k: usize| edges[FlowGraph::det_edge(k)].cost;
    let init = |k: usize| edges[FlowGraph::init_edge(k)].cost;
    let term = |k: usize| edges[FlowGraph::term_edge(k)].cost;

    let mut best: (f64, Vec<u8>) = (f64::INFINITY, Vec::new());
    let mut second = f64::INFINITY;
    let mut chosen: Vec<usize> = Vec::new();
    let mut has_in = vec![false; n];
    let mut has_out = vec![false; n];

    fn evaluate(
        graph: &FlowGraph,
        chosen: &[usize],
        has_in: &[bool],
        has_out: &[bool],
        det: &dyn Fn(usize) -> f64,
        init: &dyn Fn(usize) -> f64,
        term: &dyn Fn(usize) -> f64,
    ) -> (f64, Vec<u8>) {
        let edges = graph.edges();
        let mut x = vec![0u8; graph.num_edges()];
        let mut total = 0.0;
        for &l in chosen {
            x[l] = 1;
            total += edges[l].cost;
        }
        for k in 0..graph.num_nodes() {
            let linked = has_in[k] || has_out[k];
            let alone = det(k) + init(k) + term(k);
            if !linked && alone >= 0.0 {
                continue;
            }
            x[FlowGraph::det_edge(k)] = 1;
            total += det(k);
            if !has_in[k] {
                x[FlowGraph::init_edge(k)] = 1;
                total += init(k);
            }
            if !has_out[k] {
                x[FlowGraph::term_edge(k)] = 1;
                total += term(k);
            }
        }
        (total, x)
    }

    #[allow(clippy::too_many_arguments)]
    fn go(
        node: usize,
        graph: &FlowGraph,
        out_links: &[Vec<usize>],
        chosen: &mut Vec<usize>,
        has_in: &mut Vec<bool>,
        has_out: &mut Vec<bool>,
        best: &mut (f64, Vec<u8>),
        second: &mut f64,
        det: &dyn Fn(usize) -> f64,
        init: &dyn Fn(usize) -> f64,
        term: &dyn Fn(usize) -> f64,
    ) {
        if node == graph.num_nodes() {
            let (v, x) = evaluate(graph, chosen, has_in, has_out, det, init, term);
            if v < best.0 {
                *second = best.0;
                *best = (v, x);
            } else if v < *second && x != best.1 {
                *second = v;
            }
            return;
        }
        go(
            node + 1,
            graph,
            out_links,
            chosen,
            has_in,
            has_out,
            best,
            second,
            det,
            init,
            term,
        );
        for &l in &out_links[node] {
            let to = graph.edges()[l].to;
            if has_in[to] {
                continue;
            }
            has_in[to] = true;
            has_out[node] = true;
            chosen.push(l);
            go(
                node + 1,
                graph,
                out_links,
                chosen,
                has_in,
                has_out,
                best,
                second,
                det,
                init,
                term,
            );
            chosen.pop();
            has_out[node] = false;
            has_in[to] = false;
        }
    }

    go(
        0,
        graph,
        &out_links,
        &mut chosen,
        &mut has_in,
        &mut has_out,
        &mut best,
        &mut second,
        &det,
        &init,
        &term,
    );
    PathCover {
        objective: best.0,
        x: best.1,
        margin: second - best.0,
    }
}

/// Random graph with up to `max_nodes` tracklets, det and link costs uniform
/// in `[-5, 5]` and init/term costs `beta`.
pub fn random_flow_graph(rng: &mut impl Rng, max_nodes: usize, beta: f64) -> FlowGraph {
    let n = rng.random_range(1..=max_nodes);
    let spans: Vec<(u32, u32)> = (0..n)
        .map(|_| {
            let head = rng.random_range(1..=40u32);
            (head, head + rng.random_range(0..5u32))
        })
        .collect();
    let mut links = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if spans[j].0 > spans[i].1 && spans[j].0 - spans[i].1 <= 30 && rng.random::<f64>() < 0.6 {
                links.push((i, j));
            }
        }
    }
    let mut g = FlowGraph::from_structure(&spans, &links, beta).unwrap();
    for e in g.edges_mut() {
        if matches!(e.kind, EdgeKind::Det | EdgeKind::Link) {
            e.cost = rng.random_range(-5.0..5.0);
        }
    }
    g
}

/// Five-point central difference of `f` at 0.
fn central_difference(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h)
}

/// Largest relative disagreement between the analytic gradient of
/// `sum(upstream * output)` and central differences, over every input and
/// `param_samples` parameters (all of them when `None`).
pub fn gradient_error(net: &DenseNet, rng: &mut impl Rng, batch: usize, param_samples: Option<usize>) -> f64 {
    const H: f64 = 1e-4;
    let d = net.input_dim();
    // Redraw inputs until no unit is within reach of an activation kink:
    // the widest stencil step moves a pre-activation by at most 2H * 2.
    let (x, cache) = loop {
        let x = Array2::from_shape_fn((batch, d), |_| rng.random_range(-2.0..2.0));
        let cache = net.forward_batch(x.view()).unwrap();
        if cache.pre_activations().all(|z| z.abs() > 1e-3) {
            break (x, cache);
        }
    };
    let upstream: Vec<f64> = (0..batch).map(|_| rng.random_range(-1.0..1.0)).collect();
    let grads = net.backward_batch(&upstream, &cache).unwrap();
    let loss = |n: &DenseNet, x: &Array2<f64>| -> f64 {
        n.predict_batch(x.view())
            .unwrap()
            .iter()
            .zip(&upstream)
            .map(|(y, u)| y * u)
            .sum()
    };
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
    let mut worst: f64 = 0.0;
    for r in 0..batch {
        for c in 0..d {
            let numeric = central_difference(
                |d| {
                    let mut xd = x.clone();
                    xd[[r, c]] += d;
                    loss(net, &xd)
                },
                H,
            );
            worst = worst.max(rel(grads.inputs[[r, c]], numeric));
        }
    }
    let params = net.params();
    let indices: Vec<usize> = match param_samples {
        None => (0..params.len()).collect(),
        Some(k) => (0..k).map(|_| rng.random_range(0..params.len())).collect(),
    };
    for i in indices {
        let numeric = central_difference(
            |d| {
                let mut probe = net.clone();
                let mut p = params.clone();
                p[i] += d;
                probe.set_params(&p).unwrap();
                loss(&probe, &x)
            },
            H,
        );
        worst = worst.max(rel(grads.params[i], numeric));
    }
    worst
}

/// The architectures the tracker uses, with their activations.
pub fn architectures(gamma: f64) -> Vec<(Vec<usize>, Vec<Activation>)> {
    use Activation::*;
    vec![
        (vec![7, 16, 8, 1], vec![LeakyRelu, LeakyRelu, Sigmoid]),
        (vec![8, 4, 1], vec![LeakyRelu, TanhScaled(gamma)]),
        (vec![18, 256, 256, 1], vec![LeakyRelu, LeakyRelu, TanhScaled(gamma)]),
    ]
}
