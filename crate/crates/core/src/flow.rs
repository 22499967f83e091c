//! Min-cost flow over tracklets.
//!
//! Every tracklet is split into an in-node and an out-node joined by its
//! detection edge. The source feeds every in-node (init), every out-node
//! drains to the sink (term), and link edges join the out-node of an earlier
//! tracklet to the in-node of a later one. All capacities are 1 and the total
//! flow is free, so the optimum is the cheapest set of node-disjoint paths.
//!
//! Links only point forward in time, so the graph is a DAG: one relaxation
//! pass in topological order gives feasible potentials, after which each
//! augmentation is a Dijkstra search on reduced costs. Augmenting stops as
//! soon as the cheapest source-sink path is no longer negative.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::types::{Tracklet, TrackletId, Trajectory, TrajectoryEntry};

pub const DEFAULT_DT_MAX: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Det,
    Init,
    Term,
    Link,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Det => "det",
            EdgeKind::Init => "init",
            EdgeKind::Term => "term",
            EdgeKind::Link => "link",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub kind: EdgeKind,
    /// Node index of the tail; for det/init/term both ends name the same node.
    pub from: usize,
    pub to: usize,
    pub cost: f64,
    pub weight: f64,
    pub gt: Option<bool>,
}

/// Graph over tracklet nodes. Edge `3k` is the det edge of node `k`, `3k + 1`
/// its init edge and `3k + 2` its term edge; links follow, ordered by
/// (from, to). This is also the layout of every flow vector `x`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowGraph {
    nodes: Vec<TrackletId>,
    /// Frame span of each node, used for the time ordering.
    spans: Vec<(u32, u32)>,
    lengths: Vec<usize>,
    edges: Vec<Edge>,
}

impl FlowGraph {
    /// Graph with link edges for every ordered pair whose gap is in `1..=dt_max`.
    /// Init/term costs are `beta`; det/link costs start at 0.
    pub fn build(tracklets: &[&Tracklet], dt_max: u32, beta: f64) -> Self {
        let spans: Vec<(u32, u32)> = tracklets.iter().map(|t| (t.head_frame(), t.tail_frame())).collect();
        let mut links = Vec::new();
        for (i, &(_, tail)) in spans.iter().enumerate() {
            for (j, &(head, _)) in spans.iter().enumerate() {
                if head > tail && head - tail <= dt_max {
                    links.push((i, j));
                }
            }
        }
        Self::assemble(
            tracklets.iter().map(|t| t.id).collect(),
            spans,
            tracklets.iter().map(|t| t.len()).collect(),
            &links,
            beta,
        )
    }

    /// Graph with explicit structure: node `k` spans `spans[k]`, links are
    /// given as node pairs and must go forward in time.
    pub fn from_structure(spans: &[(u32, u32)], links: &[(usize, usize)], beta: f64) -> Result<Self> {
        for &(i, j) in links {
            if i >= spans.len() || j >= spans.len() {
                return Err(Error::Precondition(format!(
                    "link ({i}, {j}) references a missing node"
                )));
            }
            if spans[j].0 <= spans[i].1 {
                return Err(Error::Precondition(format!(
                    "link ({i}, {j}) does not go forward in time"
                )));
            }
        }
        let mut links = links.to_vec();
        links.sort_unstable();
        links.dedup();
        Ok(Self::assemble(
            (0..spans.len()).collect(),
            spans.to_vec(),
            spans.iter().map(|&(h, t)| (t - h + 1) as usize).collect(),
            &links,
            beta,
        ))
    }

    fn assemble(
        nodes: Vec<TrackletId>,
        spans: Vec<(u32, u32)>,
        lengths: Vec<usize>,
        links: &[(usize, usize)],
        beta: f64,
    ) -> Self {
        let mut edges = Vec::with_capacity(3 * nodes.len() + links.len());
        for k in 0..nodes.len() {
            for (kind, cost) in [(EdgeKind::Det, 0.0), (EdgeKind::Init, beta), (EdgeKind::Term, beta)] {
                edges.push(Edge {
                    kind,
                    from: k,
                    to: k,
                    cost,
                    weight: 1.0,
                    gt: None,
                });
            }
        }
        for &(i, j) in links {
            edges.push(Edge {
                kind: EdgeKind::Link,
                from: i,
                to: j,
                cost: 0.0,
                weight: 1.0,
                gt: None,
            });
        }
        Self {
            nodes,
            spans,
            lengths,
            edges,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Tracklet id behind each node.
    pub fn node_ids(&self) -> &[TrackletId] {
        &self.nodes
    }

    pub fn span(&self, node: usize) -> (u32, u32) {
        self.spans[node]
    }

    /// Number of boxes in the tracklet behind `node`.
    pub fn node_len(&self, node: usize) -> usize {
        self.lengths[node]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edges_mut(&mut self) -> &mut [Edge] {
        &mut self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn det_edge(node: usize) -> usize {
        3 * node
    }

    pub fn init_edge(node: usize) -> usize {
        3 * node + 1
    }

    pub fn term_edge(node: usize) -> usize {
        3 * node + 2
    }

    /// Index range of the link edges.
    pub fn link_range(&self) -> std::ops::Range<usize> {
        3 * self.nodes.len()..self.edges.len()
    }

    pub fn links(&self) -> &[Edge] {
        &self.edges[self.link_range()]
    }

    /// Time gap of a link edge.
    pub fn link_gap(&self, edge: usize) -> u32 {
        let e = &self.edges[edge];
        self.spans[e.to].0 - self.spans[e.from].1
    }

    pub fn costs(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.cost).collect()
    }

    pub fn set_costs(&mut self, costs: &[f64]) -> Result<()> {
        if costs.len() != self.edges.len() {
            return Err(Error::Dimension {
                expected: self.edges.len(),
                got: costs.len(),
            });
        }
        for (e, &c) in self.edges.iter_mut().zip(costs) {
            e.cost = c;
        }
        Ok(())
    }

    pub fn objective(&self, x: &[u8]) -> f64 {
        self.edges.iter().zip(x).map(|(e, &v)| e.cost * v as f64).sum()
    }

    /// Checks `x` is binary and conserves flow at every node.
    pub fn check_conservation(&self, x: &[u8]) -> Result<()> {
        if x.len() != self.edges.len() {
            return Err(Error::Dimension {
                expected: self.edges.len(),
                got: x.len(),
            });
        }
        if let Some(v) = x.iter().find(|&&v| v > 1) {
            return Err(Error::Internal(format!("flow value {v} is not binary")));
        }
        let n = self.nodes.len();
        let mut inflow: Vec<u32> = (0..n).map(|k| x[Self::init_edge(k)] as u32).collect();
        let mut outflow: Vec<u32> = (0..n).map(|k| x[Self::term_edge(k)] as u32).collect();
        for idx in self.link_range() {
            let e = &self.edges[idx];
            inflow[e.to] += x[idx] as u32;
            outflow[e.from] += x[idx] as u32;
        }
        for k in 0..n {
            let det = x[Self::det_edge(k)] as u32;
            if inflow[k] != det || outflow[k] != det {
                return Err(Error::Internal(format!(
                    "flow not conserved at node {k} (tracklet {}): in {}, det {det}, out {}",
                    self.nodes[k], inflow[k], outflow[k]
                )));
            }
        }
        Ok(())
    }

    /// Text dump, one line per node then one per edge.
    pub fn dump(&self, x: Option<&[u8]>) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "nodes {}", self.nodes.len());
        for (k, id) in self.nodes.iter().enumerate() {
            let _ = writeln!(
                s,
                "node {k} tracklet {id} frames {}-{}",
                self.spans[k].0, self.spans[k].1
            );
        }
        let _ = writeln!(s, "edges {}", self.edges.len());
        for (idx, e) in self.edges.iter().enumerate() {
            let xv = x.map_or("-".to_string(), |x| x[idx].to_string());
            let gt = e.gt.map_or("-", |g| if g { "1" } else { "0" });
            let _ = writeln!(
                s,
                "{idx} {} {} {} cost {:.6} weight {} x {xv} gt {gt}",
                e.kind.as_str(),
                e.from,
                e.to,
                e.cost,
                e.weight
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    /// Binary flow per edge, in the graph's edge layout.
    pub x: Vec<u8>,
    pub objective: f64,
    /// Node-index chains in time order.
    pub chains: Vec<Vec<usize>>,
}

impl FlowSolution {
    pub fn x_f64(&self) -> Vec<f64> {
        self.x.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Arc {
    to: usize,
    rev: usize,
    cap: u8,
    cost: f64,
    /// Graph edge this arc carries, for forward arcs.
    edge: Option<usize>,
}

struct Residual {
    adj: Vec<Vec<Arc>>,
}

const SOURCE: usize = 0;
const SINK: usize = 1;

fn in_vertex(k: usize) -> usize {
    2 + 2 * k
}

fn out_vertex(k: usize) -> usize {
    3 + 2 * k
}

impl Residual {
    fn new(graph: &FlowGraph) -> Self {
        let n = 2 + 2 * graph.num_nodes();
        let mut r = Residual {
            adj: vec![Vec::new(); n],
        };
        for (idx, e) in graph.edges.iter().enumerate() {
            let (u, v) = match e.kind {
                EdgeKind::Det => (in_vertex(e.from), out_vertex(e.from)),
                EdgeKind::Init => (SOURCE, in_vertex(e.from)),
                EdgeKind::Term => (out_vertex(e.from), SINK),
                EdgeKind::Link => (out_vertex(e.from), in_vertex(e.to)),
            };
            r.add(u, v, e.cost, idx);
        }
        r
    }

    fn add(&mut self, u: usize, v: usize, cost: f64, edge: usize) {
        let (ru, rv) = (self.adj[v].len(), self.adj[u].len());
        self.adj[u].push(Arc {
            to: v,
            rev: ru,
            cap: 1,
            cost,
            edge: Some(edge),
        });
        self.adj[v].push(Arc {
            to: u,
            rev: rv,
            cap: 0,
            cost: -cost,
            edge: None,
        });
    }
}

/// Shortest distances from the source over the initial (acyclic) graph.
fn dag_potentials(graph: &FlowGraph, residual: &Residual) -> Result<Vec<f64>> {
    let n = residual.adj.len();
    let mut indegree = vec![0usize; n];
    for arcs in &residual.adj {
        for a in arcs.iter().filter(|a| a.cap > 0) {
            indegree[a.to] += 1;
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut stack: Vec<usize> = (0..n).filter(|&v| indegree[v] == 0).rev().collect();
    while let Some(u) = stack.pop() {
        order.push(u);
        for a in residual.adj[u].iter().filter(|a| a.cap > 0) {
            indegree[a.to] -= 1;
            if indegree[a.to] == 0 {
                stack.push(a.to);
            }
        }
    }
    if order.len() != n {
        return Err(Error::Precondition(format!(
            "flow graph over {} nodes contains a cycle",
            graph.num_nodes()
        )));
    }
    let mut dist = vec![f64::INFINITY; n];
    dist[SOURCE] = 0.0;
    for &u in &order {
        if dist[u].is_infinite() {
            continue;
        }
        for a in residual.adj[u].iter().filter(|a| a.cap > 0) {
            let d = dist[u] + a.cost;
            if d < dist[a.to] {
                dist[a.to] = d;
            }
        }
    }
    // Vertices the source cannot reach never join a path; any finite value works.
    Ok(dist.into_iter().map(|d| if d.is_finite() { d } else { 0.0 }).collect())
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact minimum-cost solution with free flow value.
pub fn solve_min_cost(graph: &FlowGraph) -> Result<FlowSolution> {
    let mut residual = Residual::new(graph);
    let n = residual.adj.len();
    let mut potential = dag_potentials(graph, &residual)?;
    let mut dist = vec![f64::INFINITY; n];
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
    loop {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        parent.iter_mut().for_each(|p| *p = None);
        dist[SOURCE] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(HeapItem(0.0, SOURCE));
        while let Some(HeapItem(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for (ai, a) in residual.adj[u].iter().enumerate() {
                if a.cap == 0 {
                    continue;
                }
                // Rounding can leave tiny negative reduced costs; they are zero.
                let reduced = (a.cost + potential[u] - potential[a.to]).max(0.0);
                let nd = d + reduced;
                if nd < dist[a.to] {
                    dist[a.to] = nd;
                    parent[a.to] = Some((u, ai));
                    heap.push(HeapItem(nd, a.to));
                }
            }
        }
        if dist[SINK].is_infinite() {
            break;
        }
        let path_cost = dist[SINK] + potential[SINK] - potential[SOURCE];
        if path_cost >= 0.0 {
            break;
        }
        let limit = dist[SINK];
        for v in 0..n {
            potential[v] += dist[v].min(limit);
        }
        let mut v = SINK;
        while let Some((u, ai)) = parent[v] {
            let rev = residual.adj[u][ai].rev;
            residual.adj[u][ai].cap -= 1;
            residual.adj[v][rev].cap += 1;
            v = u;
        }
    }

    let mut x = vec![0u8; graph.num_edges()];
    for arcs in &residual.adj {
        for a in arcs {
            if let Some(idx) = a.edge {
                x[idx] = 1 - a.cap;
            }
        }
    }
    graph.check_conservation(&x)?;
    let chains = decode_chains(graph, &x)?;
    Ok(FlowSolution {
        objective: graph.objective(&x),
        x,
        chains,
    })
}

/// Node chains followed from each init edge along unit link flows.
pub fn decode_chains(graph: &FlowGraph, x: &[u8]) -> Result<Vec<Vec<usize>>> {
    graph.check_conservation(x)?;
    let mut next = vec![None; graph.num_nodes()];
    for idx in graph.link_range() {
        if x[idx] == 1 {
            let e = &graph.edges[idx];
            next[e.from] = Some(e.to);
        }
    }
    let mut chains = Vec::new();
    for k in 0..graph.num_nodes() {
        if x[FlowGraph::init_edge(k)] == 0 {
            continue;
        }
        let mut chain = vec![k];
        let mut cur = k;
        while let Some(j) = next[cur] {
            chain.push(j);
            cur = j;
        }
        if x[FlowGraph::term_edge(cur)] != 1 {
            return Err(Error::Internal(format!("chain from node {k} does not terminate")));
        }
        chains.push(chain);
    }
    chains.sort_by_key(|c| (graph.spans[c[0]].0, c[0]));
    Ok(chains)
}

/// Concatenated member boxes of each chain, identities numbered from 1.
/// `tracklets` is indexed by tracklet id.
pub fn decode_trajectories(
    solution: &FlowSolution,
    graph: &FlowGraph,
    tracklets: &[Tracklet],
) -> Result<Vec<Trajectory>> {
    let chains = decode_chains(graph, &solution.x)?;
    chains
        .iter()
        .enumerate()
        .map(|(i, chain)| {
            let entries = chain
                .iter()
                .flat_map(|&k| tracklets[graph.nodes[k]].detections())
                .map(|d| TrajectoryEntry {
                    frame: d.frame,
                    bbox: d.bbox,
                    interpolated: false,
                })
                .collect();
            Trajectory::new(i as u32 + 1, entries)
        })
        .collect()
}
