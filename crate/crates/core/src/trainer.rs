//! End-to-end training of the cost model through the flow solver.
//!
//! Each iteration solves every training window with the current costs,
//! compares the solution with the ground-truth flow, and treats the negated
//! solution gradient as the cost gradient. That gradient is pushed through the
//! network that produced each det or link cost, averaged over windows, and
//! applied with one ADAM step.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::cost_model::{CostModel, NetInputs};
use crate::error::{Error, Result};
use crate::features::{graph_features, motion_summaries, GraphFeatures, MotionSummary};
use crate::flow::{solve_min_cost, EdgeKind, FlowGraph};
use crate::kalman::KalmanConfig;
use crate::labels::GroundTruthIndex;
use crate::nnet::{DenseNet, Gradients};
use crate::types::{Frame, Tracklet, Trajectory};

/// Minimum share of a tracklet's boxes that must agree on one identity.
pub const PURITY_MIN: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Weighting {
    Uniform,
    /// Detection edges weighted by tracklet length.
    Length,
    /// Link edges weighted by time gap.
    Gap,
    LengthAndGap,
}

impl Weighting {
    pub const ALL: [Weighting; 4] = [
        Weighting::Uniform,
        Weighting::Length,
        Weighting::Gap,
        Weighting::LengthAndGap,
    ];
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Weighting::Uniform => "uniform",
            Weighting::Length => "TL",
            Weighting::Gap => "TG",
            Weighting::LengthAndGap => "TL+TG",
        })
    }
}

impl FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Weighting::Uniform),
            "tl" => Ok(Weighting::Length),
            "tg" => Ok(Weighting::Gap),
            "tl+tg" | "tltg" => Ok(Weighting::LengthAndGap),
            _ => Err(Error::Config(format!(
                "unknown weighting `{s}` (uniform, TL, TG, TL+TG)"
            ))),
        }
    }
}

/// Loss weight per edge. Init and term edges always weigh 1.
pub fn edge_weights(graph: &FlowGraph, scheme: Weighting) -> Vec<f64> {
    let by_length = matches!(scheme, Weighting::Length | Weighting::LengthAndGap);
    let by_gap = matches!(scheme, Weighting::Gap | Weighting::LengthAndGap);
    graph
        .edges()
        .iter()
        .enumerate()
        .map(|(idx, e)| match e.kind {
            EdgeKind::Det if by_length => graph.node_len(e.from) as f64,
            EdgeKind::Link if by_gap => graph.link_gap(idx) as f64,
            _ => 1.0,
        })
        .collect()
}

/// Target flow and per-edge loss weights for one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFlow {
    x: Vec<u8>,
    weights: Vec<f64>,
}

impl GroundTruthFlow {
    /// Rejects targets that do not conserve flow or non-positive weights.
    pub fn new(graph: &FlowGraph, x: Vec<u8>, weights: Vec<f64>) -> Result<Self> {
        graph.check_conservation(&x)?;
        if weights.len() != x.len() {
            return Err(Error::Dimension {
                expected: x.len(),
                got: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
            return Err(Error::Config(format!("edge weight {w} is not positive")));
        }
        Ok(Self { x, weights })
    }

    pub fn x(&self) -> &[u8] {
        &self.x
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn with_weights(self, graph: &FlowGraph, weights: Vec<f64>) -> Result<Self> {
        Self::new(graph, self.x, weights)
    }
}

/// Ground-truth identity of every tracklet, or `None` when its boxes do not
/// agree on one identity with at least `PURITY_MIN` purity. Boxes are matched
/// to ground truth per frame over all tracklets jointly.
pub fn tracklet_identities(tracklets: &[Tracklet], gt: &[Trajectory]) -> Vec<Option<u32>> {
    let index = GroundTruthIndex::new(gt);
    let mut by_frame: HashMap<Frame, Vec<(usize, usize)>> = HashMap::new();
    for (ti, t) in tracklets.iter().enumerate() {
        for (k, d) in t.detections().iter().enumerate() {
            by_frame.entry(d.frame).or_default().push((ti, k));
        }
    }
    let mut box_ids: Vec<Vec<Option<u32>>> = tracklets.iter().map(|t| vec![None; t.len()]).collect();
    let mut frames: Vec<_> = by_frame.into_iter().collect();
    frames.sort_by_key(|(f, _)| *f);
    for (frame, members) in frames {
        let boxes: Vec<_> = members
            .iter()
            .map(|&(ti, k)| tracklets[ti].detections()[k].bbox)
            .collect();
        for (&(ti, k), id) in members.iter().zip(index.identities(frame, &boxes)) {
            box_ids[ti][k] = id;
        }
    }
    box_ids
        .iter()
        .map(|ids| {
            let mut counts: HashMap<u32, usize> = HashMap::new();
            for id in ids.iter().flatten() {
                *counts.entry(*id).or_default() += 1;
            }
            let (id, n) = counts.into_iter().max_by_key(|&(id, n)| (n, std::cmp::Reverse(id)))?;
            (n as f64 / ids.len() as f64 >= PURITY_MIN).then_some(id)
        })
        .collect()
}

/// Target flow for a graph. `identities` is indexed by tracklet id. Per
/// identity, TP nodes are chained in time order; a node overlapping the
/// previous one in time is left out, and a missing link edge ends the chain.
pub fn label_ground_truth(graph: &FlowGraph, identities: &[Option<u32>]) -> Result<GroundTruthFlow> {
    let mut x = vec![0u8; graph.num_edges()];
    let mut by_identity: HashMap<u32, Vec<usize>> = HashMap::new();
    for (k, &id) in graph.node_ids().iter().enumerate() {
        if let Some(identity) = identities[id] {
            by_identity.entry(identity).or_default().push(k);
        }
    }
    let link_index: HashMap<(usize, usize), usize> = graph
        .link_range()
        .map(|idx| ((graph.edges()[idx].from, graph.edges()[idx].to), idx))
        .collect();
    let mut identities_sorted: Vec<_> = by_identity.into_iter().collect();
    identities_sorted.sort_by_key(|(id, _)| *id);
    for (_, mut nodes) in identities_sorted {
        nodes.sort_by_key(|&k| (graph.span(k).0, k));
        let mut prev: Option<usize> = None;
        for k in nodes {
            if let Some(p) = prev {
                if graph.span(k).0 <= graph.span(p).1 {
                    continue;
                }
            }
            x[FlowGraph::det_edge(k)] = 1;
            match prev.and_then(|p| link_index.get(&(p, k)).map(|&idx| (p, idx))) {
                Some((_, idx)) => x[idx] = 1,
                None => {
                    if let Some(p) = prev {
                        x[FlowGraph::term_edge(p)] = 1;
                    }
                    x[FlowGraph::init_edge(k)] = 1;
                }
            }
            prev = Some(k);
        }
        if let Some(p) = prev {
            x[FlowGraph::term_edge(p)] = 1;
        }
    }
    GroundTruthFlow::new(graph, x, vec![1.0; graph.num_edges()])
}

/// Weighted squared error and its gradient with respect to `x_star`.
pub fn loss_and_grad(x_star: &[f64], x_gt: &[f64], w: &[f64]) -> Result<(f64, Vec<f64>)> {
    if x_star.len() != x_gt.len() || w.len() != x_gt.len() {
        return Err(Error::Dimension {
            expected: x_gt.len(),
            got: if x_star.len() != x_gt.len() {
                x_star.len()
            } else {
                w.len()
            },
        });
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(x_gt.len());
    for ((&xs, &xg), &wi) in x_star.iter().zip(x_gt).zip(w) {
        let d = xs - xg;
        loss += wi * d * d;
        grad.push(2.0 * wi * d);
    }
    Ok((loss, grad))
}

/// The cost gradient is the negated solution gradient.
pub fn approximate_cost_grad(dl_dx: &[f64]) -> Vec<f64> {
    dl_dx.iter().map(|g| -g).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub iterations: usize,
    pub window: u32,
    pub step: u32,
    pub weighting: Weighting,
    pub dt_max: u32,
    pub seed: u64,
    /// Validation loss is measured on the first iteration and every this many
    /// after it.
    pub validate_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            iterations: 200,
            window: 30,
            step: 15,
            weighting: Weighting::Uniform,
            dt_max: 30,
            seed: 0,
            validate_every: 5,
        }
    }
}

/// One graph with its raw features and ground truth.
#[derive(Debug, Clone)]
pub struct TrainingWindow {
    pub graph: FlowGraph,
    pub features: GraphFeatures,
    pub gt: GroundTruthFlow,
}

/// Training windows for a whole sequence: every window of `plan` becomes one
/// graph over the tracklets whose span intersects it.
pub fn sequence_windows(
    tracklets: &[Tracklet],
    gt: &[Trajectory],
    windows: &[(Frame, Frame)],
    beta: f64,
    cfg: &TrainConfig,
    kalman: &KalmanConfig,
) -> Result<Vec<TrainingWindow>> {
    let identities = tracklet_identities(tracklets, gt);
    let motion = motion_summaries(tracklets, kalman);
    windows
        .par_iter()
        .map(|&(start, end)| {
            let members: Vec<&Tracklet> = tracklets.iter().filter(|t| t.overlaps_span(start, end)).collect();
            training_window(&members, tracklets, &motion, &identities, beta, cfg)
        })
        .collect()
}

/// Graph over `members` with features, target flow and weights.
/// `tracklets`, `motion` and `identities` are indexed by tracklet id.
pub fn training_window(
    members: &[&Tracklet],
    tracklets: &[Tracklet],
    motion: &[MotionSummary],
    identities: &[Option<u32>],
    beta: f64,
    cfg: &TrainConfig,
) -> Result<TrainingWindow> {
    let mut graph = FlowGraph::build(members, cfg.dt_max, beta);
    let features = graph_features(&graph, tracklets, motion)?;
    let gt = label_ground_truth(&graph, identities)?;
    let weights = edge_weights(&graph, cfg.weighting);
    for ((e, &xg), &w) in graph.edges_mut().iter_mut().zip(gt.x()).zip(&weights) {
        e.gt = Some(xg == 1);
        e.weight = w;
    }
    let gt = gt.with_weights(&graph, weights)?;
    Ok(TrainingWindow { graph, features, gt })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub loss: f64,
    /// Mean |cost| over det edges of ground-truth tracklets.
    pub mean_abs_det_tp: f64,
    /// Mean |cost| over ground-truth link edges.
    pub mean_abs_link_true: f64,
    /// Share of edges where the solution equals the target.
    pub edge_accuracy: f64,
    pub validation_loss: Option<f64>,
}

impl IterationLog {
    pub const CSV_HEADER: &'static str =
        "iteration,loss,mean_abs_det_tp,mean_abs_link_true,edge_accuracy,validation_loss";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{}",
            self.iteration,
            self.loss,
            self.mean_abs_det_tp,
            self.mean_abs_link_true,
            self.edge_accuracy,
            self.validation_loss.map_or(String::new(), |v| format!("{v:.6}"))
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<IterationLog>,
    /// Iteration whose model was kept (1-based); the last one without validation.
    pub best_iteration: usize,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(IterationLog::CSV_HEADER);
        s.push('\n');
        for row in &self.history {
            s.push_str(&row.csv_row());
            s.push('\n');
        }
        s
    }
}

struct Prepared<'a> {
    window: &'a TrainingWindow,
    unary: NetInputs,
    pairwise: NetInputs,
    x_gt: Vec<f64>,
}

impl<'a> Prepared<'a> {
    fn new(model: &CostModel, window: &'a TrainingWindow) -> Self {
        Self {
            window,
            unary: model.unary_inputs(&window.features.unary),
            pairwise: model.pairwise_inputs(&window.features.pairwise),
            x_gt: window.gt.x().iter().map(|&v| v as f64).collect(),
        }
    }
}

/// Result of solving one window under the current model.
pub struct WindowEvaluation {
    pub graph: FlowGraph,
    pub x_star: Vec<u8>,
    pub loss: f64,
    pub dl_dx: Vec<f64>,
}

fn evaluate_window(model: &CostModel, p: &Prepared) -> Result<WindowEvaluation> {
    let mut graph = p.window.graph.clone();
    model.assign_costs(&mut graph, &p.unary, &p.pairwise)?;
    let solution = solve_min_cost(&graph)?;
    let (loss, dl_dx) = loss_and_grad(&solution.x_f64(), &p.x_gt, p.window.gt.weights())?;
    Ok(WindowEvaluation {
        graph,
        x_star: solution.x,
        loss,
        dl_dx,
    })
}

/// Solves a window with the model's costs and scores it against its target.
pub fn evaluate_training_window(model: &CostModel, window: &TrainingWindow) -> Result<WindowEvaluation> {
    evaluate_window(model, &Prepared::new(model, window))
}

/// Backpropagates `upstream` (one value per input row) through `net`, only
/// over rows with a nonzero value.
fn sparse_backward(net: &DenseNet, inputs: &NetInputs, upstream: &[f64]) -> Result<Gradients> {
    let rows: Vec<usize> = (0..upstream.len()).filter(|&r| upstream[r] != 0.0).collect();
    if rows.is_empty() {
        return Ok(Gradients::zeros_like(net));
    }
    let sub = inputs.select(&rows);
    let cache = net.forward_batch(sub.view())?;
    let up: Vec<f64> = rows.iter().map(|&r| upstream[r]).collect();
    net.backward_batch(&up, &cache)
}

struct WindowStep {
    loss: f64,
    unary: Gradients,
    pairwise: Gradients,
    det_abs: (f64, usize),
    link_abs: (f64, usize),
    correct: usize,
    edges: usize,
}

fn window_step(model: &CostModel, p: &Prepared) -> Result<WindowStep> {
    let eval = evaluate_window(model, p)?;
    let dl_dc = approximate_cost_grad(&eval.dl_dx);
    let graph = &eval.graph;
    let n = graph.num_nodes();
    let det_up: Vec<f64> = (0..n).map(|k| dl_dc[FlowGraph::det_edge(k)]).collect();
    let link_up = &dl_dc[graph.link_range()];
    let mut det_abs = (0.0, 0);
    let mut link_abs = (0.0, 0);
    for (idx, e) in graph.edges().iter().enumerate() {
        if p.x_gt[idx] == 1.0 {
            match e.kind {
                EdgeKind::Det => {
                    det_abs.0 += e.cost.abs();
                    det_abs.1 += 1;
                }
                EdgeKind::Link => {
                    link_abs.0 += e.cost.abs();
                    link_abs.1 += 1;
                }
                _ => {}
            }
        }
    }
    let correct = eval
        .x_star
        .iter()
        .zip(&p.x_gt)
        .filter(|(a, b)| **a as f64 == **b)
        .count();
    Ok(WindowStep {
        loss: eval.loss,
        unary: sparse_backward(&model.unary_net, &p.unary, &det_up)?,
        pairwise: sparse_backward(&model.pairwise_net, &p.pairwise, link_up)?,
        det_abs,
        link_abs,
        correct,
        edges: eval.x_star.len(),
    })
}

fn mean_loss(model: &CostModel, windows: &[Prepared]) -> Result<f64> {
    let losses = windows
        .par_iter()
        .map(|p| evaluate_window(model, p).map(|e| e.loss))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Trains `model` in place. Feature statistics are fitted on `windows` unless
/// the model already has them. With `validation` windows, the model with the
/// lowest validation loss is kept; otherwise the last one.
pub fn train(
    windows: &[TrainingWindow],
    validation: &[TrainingWindow],
    model: &mut CostModel,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if windows.is_empty() {
        return Err(Error::Training("no training windows".into()));
    }
    if !model.is_standardized() {
        let unary: Vec<_> = windows.iter().flat_map(|w| w.features.unary.iter().copied()).collect();
        let pairwise: Vec<_> = windows
            .iter()
            .flat_map(|w| w.features.pairwise.iter().copied())
            .collect();
        model.fit_standardization(&unary, &pairwise)?;
    }
    let prepared: Vec<Prepared> = windows.iter().map(|w| Prepared::new(model, w)).collect();
    let held_out: Vec<Prepared> = validation.iter().map(|w| Prepared::new(model, w)).collect();
    let scale = 1.0 / windows.len() as f64;

    let mut history = Vec::with_capacity(cfg.iterations);
    let mut best: Option<(f64, usize, CostModel)> = None;
    for iteration in 1..=cfg.iterations {
        let steps = prepared
            .par_iter()
            .map(|p| window_step(model, p))
            .collect::<Result<Vec<_>>>()?;
        let mut unary = Gradients::zeros_like(&model.unary_net);
        let mut pairwise = Gradients::zeros_like(&model.pairwise_net);
        let (mut loss, mut det, mut link, mut correct, mut edges) = (0.0, (0.0, 0), (0.0, 0), 0, 0);
        for s in &steps {
            loss += s.loss * scale;
            unary.accumulate(&s.unary, scale);
            pairwise.accumulate(&s.pairwise, scale);
            det = (det.0 + s.det_abs.0, det.1 + s.det_abs.1);
            link = (link.0 + s.link_abs.0, link.1 + s.link_abs.1);
            correct += s.correct;
            edges += s.edges;
        }
        let finite = loss.is_finite()
            && unary.params.iter().all(|g| g.is_finite())
            && pairwise.params.iter().all(|g| g.is_finite());
        if !finite {
            return Err(Error::Training(format!(
                "loss or gradient became non-finite at iteration {iteration} (loss {loss})"
            )));
        }
        let validation_loss = if held_out.is_empty() || (iteration - 1) % cfg.validate_every.max(1) != 0 {
            None
        } else {
            Some(mean_loss(model, &held_out)?)
        };
        let row = IterationLog {
            iteration,
            loss,
            mean_abs_det_tp: det.0 / det.1.max(1) as f64,
            mean_abs_link_true: link.0 / link.1.max(1) as f64,
            edge_accuracy: correct as f64 / edges.max(1) as f64,
            validation_loss,
        };
        log::debug!("{}", row.csv_row());
        history.push(row);
        if let Some(v) = validation_loss {
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, iteration, model.clone()));
            }
        }
        // A zero gradient means every window is solved exactly; leave the model.
        if !(unary.is_zero() && pairwise.is_zero()) {
            model.unary_net.adam_step(&unary, cfg.lr)?;
            model.pairwise_net.adam_step(&pairwise, cfg.lr)?;
        }
    }
    let mut best_iteration = cfg.iterations;
    if !held_out.is_empty() {
        let final_loss = mean_loss(model, &held_out)?;
        if let Some((v, it, m)) = best {
            if v < final_loss {
                *model = m;
                best_iteration = it;
            }
        }
    }
    Ok(TrainReport {
        history,
        best_iteration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_model::{DEFAULT_BETA, DEFAULT_GAMMA};
    use crate::types::{BoundingBox, Detection};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_tracklet(id: usize, start: u32, n: u32, y: f64) -> Tracklet {
        Tracklet::new(
            id,
            (0..n)
                .map(|k| {
                    let f = start + k;
                    Detection::new(f, BoundingBox::new(5.0 * f as f64, y, 20.0, 40.0), 1.0, 0.9)
                })
                .collect(),
        )
        .unwrap()
    }

    fn gt_line(identity: u32, frames: std::ops::RangeInclusive<u32>, y: f64) -> Trajectory {
        Trajectory::from_boxes(
            identity,
            frames.map(|f| (f, BoundingBox::new(5.0 * f as f64, y, 20.0, 40.0))),
        )
        .unwrap()
    }

    #[test]
    fn weights_by_scheme() {
        let ts = [line_tracklet(0, 1, 5, 0.0), line_tracklet(1, 9, 2, 0.0)];
        let g = FlowGraph::build(&ts.iter().collect::<Vec<_>>(), 30, 0.7);
        let link = g.link_range().start;
        assert_eq!(g.link_gap(link), 4);
        let tl = edge_weights(&g, Weighting::Length);
        assert_eq!(tl[FlowGraph::det_edge(0)], 5.0);
        assert_eq!(tl[link], 1.0);
        let tg = edge_weights(&g, Weighting::Gap);
        assert_eq!(tg[link], 4.0);
        assert_eq!(tg[FlowGraph::det_edge(0)], 1.0);
        let both = edge_weights(&g, Weighting::LengthAndGap);
        assert_eq!((both[FlowGraph::det_edge(0)], both[link]), (5.0, 4.0));
        assert!(edge_weights(&g, Weighting::Uniform).iter().all(|&w| w == 1.0));
        for w in [&tl, &tg, &both] {
            assert_eq!(w[FlowGraph::init_edge(1)], 1.0);
            assert_eq!(w[FlowGraph::term_edge(1)], 1.0);
        }
    }

    #[test]
    fn weighting_names_round_trip() {
        for w in Weighting::ALL {
            assert_eq!(w.to_string().parse::<Weighting>().unwrap(), w);
        }
        assert!("TLG".parse::<Weighting>().is_err());
    }

    #[test]
    fn one_identity_three_pieces() {
        let ts = vec![
            line_tracklet(0, 1, 5, 0.0),
            line_tracklet(1, 8, 5, 0.0),
            line_tracklet(2, 15, 5, 0.0),
        ];
        let fp = line_tracklet(3, 4, 3, 500.0);
        let mut all = ts.clone();
        all.push(fp);
        let gt = vec![gt_line(7, 1..=19, 0.0)];
        let ids = tracklet_identities(&all, &gt);
        assert_eq!(ids, vec![Some(7), Some(7), Some(7), None]);
        let g = FlowGraph::build(&all.iter().collect::<Vec<_>>(), 30, 0.7);
        let flow = label_ground_truth(&g, &ids).unwrap();
        let x = flow.x();
        assert_eq!(
            (0..3).map(|k| x[FlowGraph::det_edge(k)]).collect::<Vec<_>>(),
            vec![1, 1, 1]
        );
        let init: u8 = (0..4).map(|k| x[FlowGraph::init_edge(k)]).sum();
        let term: u8 = (0..4).map(|k| x[FlowGraph::term_edge(k)]).sum();
        let links: u8 = g.link_range().map(|i| x[i]).sum();
        assert_eq!((init, term, links), (1, 1, 2));
        // The false positive carries no flow at all.
        assert_eq!(
            x[FlowGraph::det_edge(3)] + x[FlowGraph::init_edge(3)] + x[FlowGraph::term_edge(3)],
            0
        );
        for idx in g.link_range() {
            let e = &g.edges()[idx];
            if e.from == 3 || e.to == 3 {
                assert_eq!(x[idx], 0);
            }
        }
    }

    #[test]
    fn gaps_beyond_dt_max_split_the_target() {
        let ts = vec![line_tracklet(0, 1, 3, 0.0), line_tracklet(1, 20, 3, 0.0)];
        let gt = vec![gt_line(1, 1..=22, 0.0)];
        let g = FlowGraph::build(&ts.iter().collect::<Vec<_>>(), 10, 0.7);
        let flow = label_ground_truth(&g, &tracklet_identities(&ts, &gt)).unwrap();
        assert_eq!(flow.x(), &[1, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn impure_tracklets_are_false_positives() {
        // Half the boxes follow identity 1, half identity 2.
        let dets: Vec<Detection> = (1..=6)
            .map(|f| {
                let y = if f <= 3 { 0.0 } else { 300.0 };
                Detection::new(f, BoundingBox::new(5.0 * f as f64, y, 20.0, 40.0), 1.0, 0.9)
            })
            .collect();
        let t = Tracklet::new(0, dets).unwrap();
        let gt = vec![gt_line(1, 1..=6, 0.0), gt_line(2, 1..=6, 300.0)];
        assert_eq!(tracklet_identities(&[t], &gt), vec![None]);
    }

    #[test]
    fn random_targets_conserve_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.random_range(1..15);
            let ts: Vec<Tracklet> = (0..n)
                .map(|k| line_tracklet(k, rng.random_range(1..40), rng.random_range(1..8), 0.0))
                .collect();
            let ids: Vec<Option<u32>> = (0..n)
                .map(|_| rng.random_bool(0.7).then(|| rng.random_range(1..4)))
                .collect();
            let g = FlowGraph::build(&ts.iter().collect::<Vec<_>>(), rng.random_range(1..30), 0.7);
            let flow = label_ground_truth(&g, &ids).unwrap();
            // Independent recount of conservation per node.
            let x = flow.x();
            for k in 0..n {
                let incoming: u32 = g
                    .link_range()
                    .filter(|&i| g.edges()[i].to == k)
                    .map(|i| x[i] as u32)
                    .sum();
                let outgoing: u32 = g
                    .link_range()
                    .filter(|&i| g.edges()[i].from == k)
                    .map(|i| x[i] as u32)
                    .sum();
                let det = x[FlowGraph::det_edge(k)] as u32;
                assert_eq!(det, x[FlowGraph::init_edge(k)] as u32 + incoming);
                assert_eq!(det, x[FlowGraph::term_edge(k)] as u32 + outgoing);
            }
        }
    }

    #[test]
    fn infeasible_target_is_rejected() {
        let g = FlowGraph::from_structure(&[(1, 1)], &[], 0.7).unwrap();
        assert!(GroundTruthFlow::new(&g, vec![1, 0, 1], vec![1.0; 3]).is_err());
        assert!(GroundTruthFlow::new(&g, vec![1, 1, 1], vec![1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn loss_examples() {
        let (l, g) = loss_and_grad(&[1.0, 0.0], &[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!((l, g), (0.0, vec![0.0, 0.0]));
        let (l, g) = loss_and_grad(&[1.0], &[0.0], &[3.0]).unwrap();
        assert_eq!((l, g), (3.0, vec![6.0]));
        assert!(loss_and_grad(&[1.0], &[0.0, 1.0], &[1.0, 1.0]).is_err());
        assert_eq!(approximate_cost_grad(&[6.0, 0.0, -2.0]), vec![-6.0, -0.0, 2.0]);
    }

    #[test]
    fn loss_matches_recomputation_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let n = rng.random_range(1..40);
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
            let xg: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..5.0)).collect();
            let (l, g) = loss_and_grad(&xs, &xg, &w).unwrap();
            let mut direct = 0.0;
            for i in 0..n {
                direct += w[i] * (xg[i] - xs[i]).powi(2);
            }
            assert!((l - direct).abs() < 1e-12);
            let h = 1e-4;
            for i in 0..n {
                let mut p = xs.clone();
                p[i] += h;
                let mut m = xs.clone();
                m[i] -= h;
                let fd = (loss_and_grad(&p, &xg, &w).unwrap().0 - loss_and_grad(&m, &xg, &w).unwrap().0) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-8 * g[i].abs().max(1.0), "{fd} vs {}", g[i]);
                let c = approximate_cost_grad(&g)[i];
                if xs[i] != xg[i] {
                    assert_eq!(c.signum(), -(xs[i] - xg[i]).signum());
                }
            }
        }
    }

    fn simple_window(model_beta: f64) -> (Vec<Tracklet>, TrainingWindow) {
        let ts = vec![
            line_tracklet(0, 1, 4, 0.0),
            line_tracklet(1, 6, 4, 0.0),
            line_tracklet(2, 1, 9, 200.0),
        ];
        let gt = vec![gt_line(1, 1..=9, 0.0), gt_line(2, 1..=9, 200.0)];
        let cfg = TrainConfig::default();
        let w = sequence_windows(&ts, &gt, &[(1, 9)], model_beta, &cfg, &KalmanConfig::default())
            .unwrap()
            .remove(0);
        (ts, w)
    }

    #[test]
    fn learns_to_select_everything() {
        let (_, w) = simple_window(DEFAULT_BETA);
        // Every tracklet is a true positive and the only link is a true link.
        let all_det = (0..3).all(|k| w.gt.x()[FlowGraph::det_edge(k)] == 1);
        assert!(all_det);
        let mut model = CostModel::zeros(DEFAULT_BETA, DEFAULT_GAMMA).unwrap();
        let cfg = TrainConfig {
            lr: 1e-2,
            iterations: 300,
            ..Default::default()
        };
        let report = train(std::slice::from_ref(&w), &[], &mut model, &cfg).unwrap();
        assert_eq!(report.history.last().unwrap().loss, 0.0);
        let eval = evaluate_training_window(&model, &w).unwrap();
        assert_eq!(eval.x_star, w.gt.x());
        assert!(eval
            .graph
            .edges()
            .iter()
            .filter(|e| e.kind == EdgeKind::Det)
            .all(|e| e.cost < 0.0));
    }

    #[test]
    fn zero_learning_rate_keeps_the_model() {
        let (_, w) = simple_window(DEFAULT_BETA);
        let mut model = CostModel::new(DEFAULT_BETA, DEFAULT_GAMMA, 3).unwrap();
        let cfg = TrainConfig {
            lr: 0.0,
            iterations: 5,
            ..Default::default()
        };
        let before_u = model.unary_net.params();
        let before_p = model.pairwise_net.params();
        let report = train(std::slice::from_ref(&w), &[], &mut model, &cfg).unwrap();
        assert_eq!(model.unary_net.params(), before_u);
        assert_eq!(model.pairwise_net.params(), before_p);
        assert!(report.history.windows(2).all(|r| r[0].loss == r[1].loss));
    }

    #[test]
    fn solved_window_is_a_fixed_point() {
        let (_, w) = simple_window(DEFAULT_BETA);
        let mut model = CostModel::new(DEFAULT_BETA, DEFAULT_GAMMA, 1).unwrap();
        let cfg = TrainConfig {
            lr: 1e-2,
            iterations: 300,
            ..Default::default()
        };
        train(std::slice::from_ref(&w), &[], &mut model, &cfg).unwrap();
        assert_eq!(evaluate_training_window(&model, &w).unwrap().loss, 0.0);
        let before = (model.unary_net.params(), model.pairwise_net.params());
        train(
            std::slice::from_ref(&w),
            &[],
            &mut model,
            &TrainConfig { iterations: 1, ..cfg },
        )
        .unwrap();
        assert_eq!((model.unary_net.params(), model.pairwise_net.params()), before);
    }

    #[test]
    fn training_is_deterministic() {
        let (_, w) = simple_window(DEFAULT_BETA);
        let cfg = TrainConfig {
            iterations: 20,
            lr: 1e-2,
            ..Default::default()
        };
        let run = || {
            let mut m = CostModel::new(DEFAULT_BETA, DEFAULT_GAMMA, 9).unwrap();
            let r = train(std::slice::from_ref(&w), &[], &mut m, &cfg).unwrap();
            (r.to_csv(), m.to_checkpoint())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn no_windows_is_an_error() {
        let mut m = CostModel::new(DEFAULT_BETA, DEFAULT_GAMMA, 9).unwrap();
        assert!(train(&[], &[], &mut m, &TrainConfig::default()).is_err());
    }
}
