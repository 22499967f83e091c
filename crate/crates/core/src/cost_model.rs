//! Edge costs from tracklet features.
//!
//! Detection and link costs come from two networks whose outputs are squashed
//! into `(-gamma, gamma)`; init and term edges use the fixed constant `beta`.
//! Network inputs are transformed (logs of counts and ratios) and then
//! z-scored with statistics fitted once on training data.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{PairwiseFeature, PAIRWISE_DIM, UNARY_INPUT_DIM};
use crate::flow::{EdgeKind, FlowGraph};
use crate::nnet::{Activation, DenseNet};

pub const DEFAULT_BETA: f64 = 0.7;
pub const DEFAULT_GAMMA: f64 = 5.0;
pub const UNARY_LAYERS: [usize; 3] = [UNARY_INPUT_DIM, 4, 1];
pub const PAIRWISE_HIDDEN: [usize; 2] = [256, 256];

/// Unary input after the fixed transform: log of the length.
pub fn transform_unary(raw: &[f64; UNARY_INPUT_DIM]) -> [f64; UNARY_INPUT_DIM] {
    let mut v = *raw;
    v[2] = v[2].ln();
    v
}

/// Pairwise input after the fixed transform: logs of the two ratios, of the
/// lengths and of the gap; `ln(1 + x)` on the motion terms.
pub fn transform_pairwise(f: &PairwiseFeature) -> [f64; PAIRWISE_DIM] {
    let mut v = f.to_array();
    v[1] = v[1].ln();
    v[2] = v[2].ln();
    for m in &mut v[3..15] {
        *m = m.ln_1p();
    }
    for m in &mut v[15..18] {
        *m = m.ln();
    }
    v
}

/// Per-dimension z-score. Constant dimensions pass through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit(rows: ArrayView2<f64>) -> Result<Self> {
        let n = rows.nrows();
        if n == 0 {
            return Err(Error::Training("cannot fit feature statistics on no rows".into()));
        }
        let mut mean = vec![0.0; rows.ncols()];
        let mut std = vec![1.0; rows.ncols()];
        for (c, col) in rows.columns().into_iter().enumerate() {
            let m = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            if var.sqrt() > 1e-9 {
                mean[c] = m;
                std[c] = var.sqrt();
            }
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn apply_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }
}

/// Network inputs that have been transformed and standardized. Only the cost
/// model can produce one, so raw features cannot reach a network and
/// standardized ones cannot be standardized again.
#[derive(Debug, Clone, PartialEq)]
pub struct NetInputs(Array2<f64>);

impl NetInputs {
    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> NetInputs {
        NetInputs(self.0.select(ndarray::Axis(0), rows))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub unary_net: DenseNet,
    pub pairwise_net: DenseNet,
    pub beta: f64,
    pub gamma: f64,
    unary_stats: Option<Standardizer>,
    pairwise_stats: Option<Standardizer>,
}

impl CostModel {
    /// Glorot-initialised hidden layers with a zero output layer, so every
    /// det and link cost starts at 0.
    pub fn new(beta: f64, gamma: f64, seed: u64) -> Result<Self> {
        check_constants(beta, gamma)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = Activation::TanhScaled(gamma);
        let mut unary_net = DenseNet::mlp(&UNARY_LAYERS, Activation::LeakyRelu, out, &mut rng)?;
        let mut pairwise_net = DenseNet::mlp(&pairwise_layers(), Activation::LeakyRelu, out, &mut rng)?;
        unary_net.zero_output_layer();
        pairwise_net.zero_output_layer();
        Ok(Self {
            unary_net,
            pairwise_net,
            beta,
            gamma,
            unary_stats: None,
            pairwise_stats: None,
        })
    }

    /// All-zero networks: every det and link cost is 0.
    pub fn zeros(beta: f64, gamma: f64) -> Result<Self> {
        check_constants(beta, gamma)?;
        let out = Activation::TanhScaled(gamma);
        let unary_net = DenseNet::zeros(&UNARY_LAYERS, &[Activation::LeakyRelu, out])?;
        let pairwise_net = DenseNet::zeros(&pairwise_layers(), &[Activation::LeakyRelu, Activation::LeakyRelu, out])?;
        Ok(Self {
            unary_net,
            pairwise_net,
            beta,
            gamma,
            unary_stats: None,
            pairwise_stats: None,
        })
    }

    pub fn is_standardized(&self) -> bool {
        self.unary_stats.is_some()
    }

    /// Fits the input statistics. Allowed once; refitting is an error.
    pub fn fit_standardization(
        &mut self,
        unary_raw: &[[f64; UNARY_INPUT_DIM]],
        pairwise_raw: &[PairwiseFeature],
    ) -> Result<()> {
        if self.is_standardized() {
            return Err(Error::Usage("feature statistics are already fitted".into()));
        }
        let u = Array2::from_shape_fn((unary_raw.len(), UNARY_INPUT_DIM), |(r, c)| {
            transform_unary(&unary_raw[r])[c]
        });
        let p_rows: Vec<[f64; PAIRWISE_DIM]> = pairwise_raw.iter().map(transform_pairwise).collect();
        let p = Array2::from_shape_fn((p_rows.len(), PAIRWISE_DIM), |(r, c)| p_rows[r][c]);
        let us = Standardizer::fit(u.view())?;
        let ps = if p_rows.is_empty() {
            Standardizer::identity(PAIRWISE_DIM)
        } else {
            Standardizer::fit(p.view())?
        };
        self.unary_stats = Some(us);
        self.pairwise_stats = Some(ps);
        Ok(())
    }

    pub fn standardizers(&self) -> Option<(&Standardizer, &Standardizer)> {
        Some((self.unary_stats.as_ref()?, self.pairwise_stats.as_ref()?))
    }

    pub fn unary_inputs(&self, raw: &[[f64; UNARY_INPUT_DIM]]) -> NetInputs {
        let mut m = Array2::zeros((raw.len(), UNARY_INPUT_DIM));
        for (r, row) in raw.iter().enumerate() {
            let mut v = transform_unary(row);
            if let Some(s) = &self.unary_stats {
                s.apply_row(&mut v);
            }
            m.row_mut(r).assign(&ndarray::ArrayView1::from(&v));
        }
        NetInputs(m)
    }

    pub fn pairwise_inputs(&self, features: &[PairwiseFeature]) -> NetInputs {
        let mut m = Array2::zeros((features.len(), PAIRWISE_DIM));
        for (r, f) in features.iter().enumerate() {
            let mut v = transform_pairwise(f);
            if let Some(s) = &self.pairwise_stats {
                s.apply_row(&mut v);
            }
            m.row_mut(r).assign(&ndarray::ArrayView1::from(&v));
        }
        NetInputs(m)
    }

    pub fn unary_costs(&self, inputs: &NetInputs) -> Vec<f64> {
        predict(&self.unary_net, inputs)
    }

    pub fn pairwise_costs(&self, inputs: &NetInputs) -> Vec<f64> {
        predict(&self.pairwise_net, inputs)
    }

    pub fn unary_cost(&self, raw: &[f64; UNARY_INPUT_DIM]) -> f64 {
        self.unary_costs(&self.unary_inputs(std::slice::from_ref(raw)))[0]
    }

    pub fn pairwise_cost(&self, f: &PairwiseFeature) -> f64 {
        self.pairwise_costs(&self.pairwise_inputs(std::slice::from_ref(f)))[0]
    }

    /// Writes det, link, init and term costs into the graph. `unary` has one
    /// row per node and `pairwise` one per link edge, in graph order.
    pub fn assign_costs(&self, graph: &mut FlowGraph, unary: &NetInputs, pairwise: &NetInputs) -> Result<()> {
        let det = self.unary_costs(unary);
        let link = self.pairwise_costs(pairwise);
        assign_cost_values(graph, &det, &link, self.beta)
    }

    pub fn to_checkpoint(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "costmodel 1");
        let _ = writeln!(s, "beta {:e}", self.beta);
        let _ = writeln!(s, "gamma {:e}", self.gamma);
        for (name, stats) in [
            ("unary_stats", &self.unary_stats),
            ("pairwise_stats", &self.pairwise_stats),
        ] {
            match stats {
                None => {
                    let _ = writeln!(s, "{name} none");
                }
                Some(st) => {
                    let _ = writeln!(s, "{name} {}", st.dim());
                    let _ = writeln!(s, "mean {}", join(&st.mean));
                    let _ = writeln!(s, "std {}", join(&st.std));
                }
            }
        }
        self.unary_net.write_checkpoint(&mut s);
        self.pairwise_net.write_checkpoint(&mut s);
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        expect_line(&mut lines, "costmodel 1")?;
        let beta = keyed_value(&mut lines, "beta")?;
        let gamma = keyed_value(&mut lines, "gamma")?;
        check_constants(beta, gamma)?;
        let unary_stats = read_stats(&mut lines, "unary_stats")?;
        let pairwise_stats = read_stats(&mut lines, "pairwise_stats")?;
        let unary_net = DenseNet::read_checkpoint(&mut lines)?;
        let pairwise_net = DenseNet::read_checkpoint(&mut lines)?;
        if unary_net.input_dim() != UNARY_INPUT_DIM || pairwise_net.input_dim() != PAIRWISE_DIM {
            return Err(Error::Config("cost model networks have the wrong input width".into()));
        }
        Ok(Self {
            unary_net,
            pairwise_net,
            beta,
            gamma,
            unary_stats,
            pairwise_stats,
        })
    }
}

pub fn pairwise_layers() -> Vec<usize> {
    let mut l = vec![PAIRWISE_DIM];
    l.extend(PAIRWISE_HIDDEN);
    l.push(1);
    l
}

fn check_constants(beta: f64, gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    if beta.abs() > gamma / 2.0 {
        return Err(Error::Config(format!(
            "beta {beta} is outside [-gamma/2, gamma/2] for gamma {gamma}"
        )));
    }
    Ok(())
}

fn predict(net: &DenseNet, inputs: &NetInputs) -> Vec<f64> {
    if inputs.rows() == 0 {
        return Vec::new();
    }
    net.predict_batch(inputs.view())
        .expect("input width fixed by construction")
}

/// Writes explicit det and link cost values plus `beta` on init/term edges.
pub fn assign_cost_values(graph: &mut FlowGraph, det: &[f64], link: &[f64], beta: f64) -> Result<()> {
    let n = graph.num_nodes();
    if det.len() != n {
        return Err(Error::Config(format!("{} unary costs for {n} nodes", det.len())));
    }
    let links = graph.link_range();
    if link.len() != links.len() {
        return Err(Error::Config(format!(
            "{} pairwise costs for {} link edges",
            link.len(),
            links.len()
        )));
    }
    let start = links.start;
    for (idx, e) in graph.edges_mut().iter_mut().enumerate() {
        e.cost = match e.kind {
            EdgeKind::Det => det[e.from],
            EdgeKind::Init | EdgeKind::Term => beta,
            EdgeKind::Link => link[idx - start],
        };
    }
    Ok(())
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ")
}

fn expect_line<'a>(lines: &mut impl Iterator<Item = &'a str>, want: &str) -> Result<()> {
    match lines.next() {
        Some(l) if l == want => Ok(()),
        other => Err(Error::Config(format!("expected `{want}`, found {other:?}"))),
    }
}

fn keyed_value<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<f64> {
    let line = lines.next().ok_or_else(|| Error::Config(format!("missing `{key}`")))?;
    let rest = line
        .strip_prefix(key)
        .ok_or_else(|| Error::Config(format!("expected `{key}`, found `{line}`")))?;
    rest.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value in `{line}`")))
}

fn keyed_vector<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str, dim: usize) -> Result<Vec<f64>> {
    let line = lines.next().ok_or_else(|| Error::Config(format!("missing `{key}`")))?;
    let rest = line
        .strip_prefix(key)
        .ok_or_else(|| Error::Config(format!("expected `{key}`, found `{line}`")))?;
    let v: Vec<f64> = rest
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad number in `{line}`")))?;
    if v.len() != dim {
        return Err(Error::Config(format!("`{key}` has {} values, expected {dim}", v.len())));
    }
    Ok(v)
}

fn read_stats<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<Option<Standardizer>> {
    let line = lines.next().ok_or_else(|| Error::Config(format!("missing `{key}`")))?;
    let rest = line
        .strip_prefix(key)
        .ok_or_else(|| Error::Config(format!("expected `{key}`, found `{line}`")))?
        .trim();
    if rest == "none" {
        return Ok(None);
    }
    let dim: usize = rest
        .parse()
        .map_err(|_| Error::Config(format!("bad dimension in `{line}`")))?;
    let mean = keyed_vector(lines, "mean", dim)?;
    let std = keyed_vector(lines, "std", dim)?;
    if std.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Config(format!("non-positive std in `{key}`")));
    }
    Ok(Some(Standardizer { mean, std }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feature(scale: f64) -> PairwiseFeature {
        PairwiseFeature {
            d_a: 0.3 * scale,
            d_aspect: 1.0 + 0.1 * scale,
            d_area: 1.0 + 0.2 * scale,
            d_motion: [0.05 * scale; 12],
            len_i: 4.0 + scale,
            len_j: 2.0,
            dt: 1.0 + scale,
        }
    }

    #[test]
    fn zero_model_gives_zero_costs() {
        let m = CostModel::zeros(DEFAULT_BETA, DEFAULT_GAMMA).unwrap();
        assert_eq!(m.unary_cost(&[0.9, 1.0, 3.0, 0.8, 0.5, 0.9, 0.9, 1.0]), 0.0);
        assert_eq!(m.pairwise_cost(&feature(2.0)), 0.0);
    }

    #[test]
    fn costs_are_bounded() {
        let mut m = CostModel::new(DEFAULT_BETA, DEFAULT_GAMMA, 5).unwrap();
        // Blow up the weights so the output saturates.
        let p: Vec<f64> = m.pairwise_net.params().iter().map(|w| w * 1e3).collect();
        m.pairwise_net.set_params(&p).unwrap();
        let u: Vec<f64> = m.unary_net.params().iter().map(|w| w * 1e3).collect();
        m.unary_net.set_params(&u).unwrap();
        for s in [0.0, 1.0, 50.0, 1e4] {
            assert!(m.pairwise_cost(&feature(s)).abs() < DEFAULT_GAMMA);
            assert!(m.unary_cost(&[s, -s, 1.0 + s, 0.0, s, s, s, 1.0]).abs() < DEFAULT_GAMMA);
        }
    }

    #[test]
    fn beta_must_lie_in_half_gamma() {
        assert!(CostModel::zeros(2.6, 5.0).is_err());
        assert!(CostModel::zeros(-2.5, 5.0).is_ok());
        assert!(CostModel::zeros(0.7, 0.0).is_err());
    }

    #[test]
    fn assign_costs_on_small_graph() {
        let m = CostModel::new(DEFAULT_BETA, DEFAULT_GAMMA, 1).unwrap();
        let mut g = FlowGraph::from_structure(&[(1, 3), (4, 6)], &[(0, 1)], 0.0).unwrap();
        let u = m.unary_inputs(&[[0.9, 1.0, 3.0, 0.8, 0.5, 0.9, 0.9, 1.0]; 2]);
        let p = m.pairwise_inputs(&[feature(1.0)]);
        m.assign_costs(&mut g, &u, &p).unwrap();
        assert_eq!(g.num_edges(), 7);
        for e in g.edges() {
            match e.kind {
                EdgeKind::Init | EdgeKind::Term => assert_eq!(e.cost, 0.7),
                _ => assert!(e.cost.abs() < DEFAULT_GAMMA),
            }
        }
        let before = g.costs();

        let mut m2 = m.clone();
        let p2: Vec<f64> = m2.unary_net.params().iter().map(|w| w + 0.1).collect();
        m2.unary_net.set_params(&p2).unwrap();
        m2.assign_costs(&mut g, &u, &p).unwrap();
        for (e, (a, b)) in g.edges().iter().zip(before.iter().zip(g.costs())) {
            if matches!(e.kind, EdgeKind::Init | EdgeKind::Term) {
                assert_eq!(*a, b);
            }
        }
        assert_ne!(before[0], g.costs()[0]);

        let mut empty = FlowGraph::default();
        m.assign_costs(&mut empty, &m.unary_inputs(&[]), &m.pairwise_inputs(&[]))
            .unwrap();
        assert_eq!(empty.num_edges(), 0);
    }

    #[test]
    fn missing_features_are_a_config_error() {
        let m = CostModel::new(DEFAULT_BETA, DEFAULT_GAMMA, 1).unwrap();
        let mut g = FlowGraph::from_structure(&[(1, 3), (4, 6)], &[(0, 1)], 0.0).unwrap();
        let u = m.unary_inputs(&[[0.9, 1.0, 3.0, 0.8, 0.5, 0.9, 0.9, 1.0]]);
        let p = m.pairwise_inputs(&[feature(1.0)]);
        assert!(matches!(m.assign_costs(&mut g, &u, &p), Err(Error::Config(_))));
    }

    #[test]
    fn standardization_is_fitted_once() {
        let mut m = CostModel::new(DEFAULT_BETA, DEFAULT_GAMMA, 1).unwrap();
        let unary: Vec<[f64; 8]> = (1..20)
            .map(|k| [0.5, k as f64, k as f64, 0.1, 0.2, 0.3, 0.4, 1.0])
            .collect();
        let pairs: Vec<PairwiseFeature> = (0..20).map(|k| feature(k as f64)).collect();
        m.fit_standardization(&unary, &pairs).unwrap();
        assert!(matches!(m.fit_standardization(&unary, &pairs), Err(Error::Usage(_))));

        // Fitted columns are centred with unit variance; constant ones pass through.
        let x = m.unary_inputs(&unary);
        let col = x.view().column(1).to_owned();
        assert!(col.mean().unwrap().abs() < 1e-12);
        assert!((col.mapv(|v| v * v).mean().unwrap() - 1.0).abs() < 1e-12);
        assert!(x.view().column(7).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = CostModel::new(DEFAULT_BETA, DEFAULT_GAMMA, 3).unwrap();
        let back = CostModel::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(back, m);
        let unary: Vec<[f64; 8]> = (1..5)
            .map(|k| [0.5, k as f64, k as f64, 0.1, 0.2, 0.3, 0.4, 1.0])
            .collect();
        m.fit_standardization(&unary, &[feature(1.0), feature(2.0)]).unwrap();
        let back = CostModel::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(back, m);
        assert!(CostModel::from_checkpoint("costmodel 1\nbeta 9\ngamma 5\n").is_err());
    }
}
