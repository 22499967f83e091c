use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use flowtrack::assignment::{solve_assignment, CostMatrix, Objective};
use flowtrack::flow::{solve_min_cost, EdgeKind, FlowGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn assignment(c: &mut Criterion) {
    let mut group = c.benchmark_group("hungarian");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [8, 32, 128] {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let m = CostMatrix::from_rows(&rows);
        group.bench_with_input(BenchmarkId::from_parameter(n), &m, |b, m| {
            b.iter(|| solve_assignment(black_box(m), Objective::Minimize))
        });
    }
    group.finish();
}

/// Window-like graph: `n` short tracklets spread over 30 frames, every
/// forward pair within `dt_max` linked.
fn window_graph(rng: &mut ChaCha8Rng, n: usize) -> FlowGraph {
    let spans: Vec<(u32, u32)> = (0..n)
        .map(|_| {
            let head = rng.random_range(1..=30u32);
            (head, head + rng.random_range(0..6u32))
        })
        .collect();
    let mut links = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if spans[j].0 > spans[i].1 && spans[j].0 - spans[i].1 <= 30 {
                links.push((i, j));
            }
        }
    }
    let mut g = FlowGraph::from_structure(&spans, &links, 0.7).unwrap();
    for e in g.edges_mut() {
        match e.kind {
            EdgeKind::Det => e.cost = rng.random_range(-3.0..0.0),
            EdgeKind::Link => e.cost = rng.random_range(-2.0..3.0),
            _ => {}
        }
    }
    g
}

fn flow(c: &mut Criterion) {
    let mut group = c.benchmark_group("min_cost_flow");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [20, 60, 120] {
        let g = window_graph(&mut rng, n);
        group.bench_with_input(BenchmarkId::new("nodes", n), &g, |b, g| {
            b.iter(|| solve_min_cost(black_box(g)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, assignment, flow);
criterion_main!(benches);
