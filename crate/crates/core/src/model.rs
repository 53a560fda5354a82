//! Message-passing network over a [`ClipGraph`].
//!
//! Initial edge embeddings come from the four relational features; initial
//! node embeddings aggregate them with a per-direction max (past, present,
//! future). Each following step fuses every edge with its endpoints, builds
//! direction-specific messages towards each endpoint, max-aggregates them per
//! direction and fuses the three blocks into the new node embedding. The
//! classifier scores inter-frame edges from their edge embedding.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{focal_loss, LayerId, Matrix, ParamGrads, ParameterSet, Segments, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{ClipGraph, EdgeKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub edge_dim: usize,
    pub node_dim: usize,
    /// Number of message-passing steps, counting the initial embedding.
    pub steps: usize,
    pub leaky_slope: f64,
    pub edge_init_hidden: Vec<usize>,
    pub node_init_hidden: Vec<usize>,
    pub edge_hidden: Vec<usize>,
    pub message_hidden: Vec<usize>,
    pub message_dim: usize,
    pub node_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            edge_dim: 16,
            node_dim: 32,
            steps: 4,
            leaky_slope: 0.01,
            edge_init_hidden: vec![16],
            node_init_hidden: vec![64, 128],
            edge_hidden: vec![64],
            message_hidden: vec![64],
            message_dim: 32,
            node_hidden: vec![128, 64],
            classifier_hidden: vec![64, 32, 16],
        }
    }
}

pub const EDGE_FEATURE_DIM: usize = 4;

impl Architecture {
    /// Layer widths (input, hidden..., output) of every MLP, in parameter
    /// order.
    pub fn mlp_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let e = self.edge_dim;
        let n = self.node_dim;
        let chain = |input: usize, hidden: &[usize], out: usize| {
            let mut v = vec![input];
            v.extend_from_slice(hidden);
            v.push(out);
            v
        };
        vec![
            ("edge_init", chain(EDGE_FEATURE_DIM, &self.edge_init_hidden, e)),
            ("node_init", chain(3 * e, &self.node_init_hidden, n)),
            ("edge", chain(n + e + n, &self.edge_hidden, e)),
            ("msg_past", chain(n + e + n, &self.message_hidden, self.message_dim)),
            ("msg_pres", chain(n + e + n, &self.message_hidden, self.message_dim)),
            ("msg_fut", chain(n + e + n, &self.message_hidden, self.message_dim)),
            ("node", chain(3 * self.message_dim, &self.node_hidden, n)),
            ("classifier", chain(e, &self.classifier_hidden, 1)),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.mlp_shapes()
            .iter()
            .flat_map(|(_, w)| w.windows(2).map(|p| p[0] * p[1] + p[1]))
            .sum()
    }
}

/// Which temporal directions feed node updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionMask {
    /// Past, present and future messages.
    Offline,
    /// Past and present only; future blocks stay zero.
    Online,
}

#[derive(Debug, Clone)]
struct Mlp {
    layers: Vec<LayerId>,
    final_activation: bool,
}

#[derive(Debug, Clone)]
struct Mlps {
    edge_init: Mlp,
    node_init: Mlp,
    edge: Mlp,
    past: Mlp,
    pres: Mlp,
    fut: Mlp,
    node: Mlp,
    classifier: Mlp,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub arch: Architecture,
    pub params: ParameterSet,
    mlps: Mlps,
}

/// Per-step embeddings recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingState {
    /// E × edge_dim.
    pub edges: Var,
    /// N × node_dim.
    pub nodes: Var,
}

/// Index structure of a graph shared by every message-passing step.
#[derive(Debug, Clone)]
pub struct Topology {
    n_nodes: usize,
    src: Vec<usize>,
    dst: Vec<usize>,
    inter: Vec<usize>,
    intra: Vec<usize>,
    features: Matrix,
}

impl Topology {
    pub fn new(g: &ClipGraph) -> Result<Self> {
        let n = g.nodes.len();
        let mut features = Array2::zeros((g.edges.len(), EDGE_FEATURE_DIM));
        let (mut src, mut dst, mut inter, mut intra) = (vec![], vec![], vec![], vec![]);
        for (k, e) in g.edges.iter().enumerate() {
            if e.src >= n || e.dst >= n {
                return Err(Error::IndexOutOfRange {
                    index: e.src.max(e.dst),
                    len: n,
                });
            }
            let (a, b) = (&g.nodes[e.src], &g.nodes[e.dst]);
            match e.kind {
                EdgeKind::InterFrame => {
                    if a.t >= b.t {
                        return Err(Error::InvalidInput(format!(
                            "inter-frame edge {k} is not ordered earlier → later"
                        )));
                    }
                    inter.push(k);
                }
                EdgeKind::IntraFrame => intra.push(k),
            }
            src.push(e.src);
            dst.push(e.dst);
            for (c, v) in e.feature.0.iter().enumerate() {
                features[(k, c)] = *v;
            }
        }
        Ok(Self {
            n_nodes: n,
            src,
            dst,
            inter,
            intra,
            features,
        })
    }

    pub fn num_inter(&self) -> usize {
        self.inter.len()
    }

    fn pick<'a>(&self, edges: &'a [usize], v: &'a [usize]) -> impl Iterator<Item = usize> + 'a {
        edges.iter().map(move |&k| v[k])
    }
}

/// Messages of one direction: receivers, the edge rows they come through, and
/// senders.
struct MessageBatch {
    receivers: Vec<usize>,
    edges: Vec<usize>,
    senders: Vec<usize>,
}

impl MessageBatch {
    fn past(t: &Topology) -> Self {
        Self {
            receivers: t.pick(&t.inter, &t.dst).collect(),
            edges: t.inter.clone(),
            senders: t.pick(&t.inter, &t.src).collect(),
        }
    }

    fn future(t: &Topology) -> Self {
        Self {
            receivers: t.pick(&t.inter, &t.src).collect(),
            edges: t.inter.clone(),
            senders: t.pick(&t.inter, &t.dst).collect(),
        }
    }

    fn present(t: &Topology) -> Self {
        let mut b = Self {
            receivers: t.pick(&t.intra, &t.src).collect(),
            edges: t.intra.clone(),
            senders: t.pick(&t.intra, &t.dst).collect(),
        };
        b.receivers.extend(t.pick(&t.intra, &t.dst));
        b.edges.extend_from_slice(&t.intra);
        b.senders.extend(t.pick(&t.intra, &t.src));
        b
    }

    fn segments(&self, n_nodes: usize) -> Result<Segments> {
        Segments::from_pairs(n_nodes, self.receivers.iter().enumerate().map(|(row, &r)| (r, row)))
    }
}

impl Model {
    pub fn new(arch: Architecture, seed: u64) -> Self {
        let mut rng = ParameterSet::seeded_rng(seed);
        let mut params = ParameterSet::default();
        for (name, widths) in arch.mlp_shapes() {
            for (i, w) in widths.windows(2).enumerate() {
                params.push_layer(&format!("{name}.{i}"), w[0], w[1], &mut rng);
            }
        }
        Self::from_params(arch, params).expect("freshly built parameters match")
    }

    /// Attach a parameter set to an architecture, checking every layer shape.
    pub fn from_params(arch: Architecture, params: ParameterSet) -> Result<Self> {
        let mut next = 0usize;
        let mut mlps: Vec<Mlp> = Vec::new();
        for (name, widths) in arch.mlp_shapes() {
            let mut layers = Vec::new();
            for (i, w) in widths.windows(2).enumerate() {
                let l = params.layers.get(next).ok_or_else(|| {
                    Error::InvalidInput(format!("missing layer {name}.{i}"))
                })?;
                if l.weight.dim() != (w[0], w[1]) || l.bias.len() != w[1] || l.name != format!("{name}.{i}") {
                    return Err(Error::Shape {
                        op: "layer",
                        lhs: l.weight.dim(),
                        rhs: (w[0], w[1]),
                    });
                }
                layers.push(LayerId(next));
                next += 1;
            }
            mlps.push(Mlp {
                layers,
                final_activation: name != "classifier",
            });
        }
        if next != params.layers.len() {
            return Err(Error::InvalidInput(format!(
                "{} layers given, architecture has {next}",
                params.layers.len()
            )));
        }
        let mut it = mlps.into_iter();
        let mut take = || it.next().expect("eight MLPs");
        let mlps = Mlps {
            edge_init: take(),
            node_init: take(),
            edge: take(),
            past: take(),
            pres: take(),
            fut: take(),
            node: take(),
            classifier: take(),
        };
        Ok(Self { arch, params, mlps })
    }

    fn apply(&self, tape: &mut Tape<'_>, mlp: &Mlp, x: Var) -> Result<Var> {
        let mut h = x;
        let last = mlp.layers.len() - 1;
        for (i, &l) in mlp.layers.iter().enumerate() {
            h = tape.affine(h, l)?;
            if i < last || mlp.final_activation {
                h = tape.leaky_relu(h, self.arch.leaky_slope);
            }
        }
        Ok(h)
    }

    /// Edge embeddings from relational features, node embeddings from the
    /// per-direction max over incident edge embeddings.
    pub fn init_embeddings(&self, tape: &mut Tape<'_>, topo: &Topology, mask: DirectionMask) -> Result<EmbeddingState> {
        let x = tape.input(topo.features.clone());
        let edges = self.apply(tape, &self.mlps.edge_init, x)?;
        let n = topo.n_nodes;
        let past = Segments::from_pairs(n, topo.inter.iter().map(|&k| (topo.dst[k], k)))?;
        let pres = Segments::from_pairs(
            n,
            topo.intra
                .iter()
                .flat_map(|&k| [(topo.src[k], k), (topo.dst[k], k)]),
        )?;
        let past = tape.segment_max(edges, &past)?;
        let pres = tape.segment_max(edges, &pres)?;
        let fut = match mask {
            DirectionMask::Offline => {
                let fut = Segments::from_pairs(n, topo.inter.iter().map(|&k| (topo.src[k], k)))?;
                tape.segment_max(edges, &fut)?
            }
            DirectionMask::Online => tape.zeros(n, self.arch.edge_dim),
        };
        let cat = tape.concat(&[past, pres, fut])?;
        let nodes = self.apply(tape, &self.mlps.node_init, cat)?;
        Ok(EmbeddingState { edges, nodes })
    }

    fn messages(
        &self,
        tape: &mut Tape<'_>,
        mlp: &Mlp,
        batch: &MessageBatch,
        nodes: Var,
        edges: Var,
        n_nodes: usize,
    ) -> Result<Var> {
        let recv = tape.gather_rows(nodes, &batch.receivers)?;
        let e = tape.gather_rows(edges, &batch.edges)?;
        let send = tape.gather_rows(nodes, &batch.senders)?;
        let cat = tape.concat(&[recv, e, send])?;
        let msg = self.apply(tape, mlp, cat)?;
        tape.segment_max(msg, &batch.segments(n_nodes)?)
    }

    /// One edge update followed by one node update.
    pub fn mp_step(
        &self,
        tape: &mut Tape<'_>,
        topo: &Topology,
        state: EmbeddingState,
        mask: DirectionMask,
    ) -> Result<EmbeddingState> {
        let a = tape.gather_rows(state.nodes, &topo.src)?;
        let b = tape.gather_rows(state.nodes, &topo.dst)?;
        let cat = tape.concat(&[a, state.edges, b])?;
        let edges = self.apply(tape, &self.mlps.edge, cat)?;

        let n = topo.n_nodes;
        let past = self.messages(tape, &self.mlps.past, &MessageBatch::past(topo), state.nodes, edges, n)?;
        let pres = self.messages(tape, &self.mlps.pres, &MessageBatch::present(topo), state.nodes, edges, n)?;
        let fut = match mask {
            DirectionMask::Offline => {
                self.messages(tape, &self.mlps.fut, &MessageBatch::future(topo), state.nodes, edges, n)?
            }
            DirectionMask::Online => tape.zeros(n, self.arch.message_dim),
        };
        let cat = tape.concat(&[past, pres, fut])?;
        let nodes = self.apply(tape, &self.mlps.node, cat)?;
        Ok(EmbeddingState { edges, nodes })
    }

    fn classify(&self, tape: &mut Tape<'_>, topo: &Topology, edges: Var) -> Result<Var> {
        let inter = tape.gather_rows(edges, &topo.inter)?;
        self.apply(tape, &self.mlps.classifier, inter)
    }

    /// Run every step, returning the tape and the inter-frame logits of each
    /// step (column vectors, in [`ClipGraph::inter_edges`] order).
    pub fn forward_tape(&self, topo: &Topology, mask: DirectionMask) -> Result<(Tape<'_>, Vec<Var>)> {
        if self.arch.steps < 1 {
            return Err(Error::Config("model.L must be >= 1".into()));
        }
        let mut tape = Tape::new(&self.params);
        let mut state = self.init_embeddings(&mut tape, topo, mask)?;
        let mut logits = vec![self.classify(&mut tape, topo, state.edges)?];
        for _ in 1..self.arch.steps {
            state = self.mp_step(&mut tape, topo, state, mask)?;
            logits.push(self.classify(&mut tape, topo, state.edges)?);
        }
        Ok((tape, logits))
    }

    /// Final-step logits of the inter-frame edges.
    pub fn forward(&self, g: &ClipGraph, mask: DirectionMask) -> Result<Vec<f64>> {
        let topo = Topology::new(g)?;
        let (tape, logits) = self.forward_tape(&topo, mask)?;
        Ok(tape.value(*logits.last().expect("at least one step")).iter().copied().collect())
    }

    /// Focal loss summed over the supervised steps (every step when
    /// `deep_supervision`, else the last), averaged over edges within each
    /// step, with parameter gradients and the final-step logits.
    pub fn loss_and_grads(
        &self,
        topo: &Topology,
        labels: &[bool],
        mask: DirectionMask,
        gamma: f64,
        alpha: f64,
        deep_supervision: bool,
    ) -> Result<(f64, ParamGrads, Vec<f64>)> {
        self.loss_and_grads_on(topo, labels, None, mask, gamma, alpha, deep_supervision)
    }

    /// [`Model::loss_and_grads`] restricted to the inter-frame edges listed
    /// in `edges` (all when `None`); the other edges still pass messages.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_and_grads_on(
        &self,
        topo: &Topology,
        labels: &[bool],
        edges: Option<&[usize]>,
        mask: DirectionMask,
        gamma: f64,
        alpha: f64,
        deep_supervision: bool,
    ) -> Result<(f64, ParamGrads, Vec<f64>)> {
        if labels.len() != topo.num_inter() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} inter-frame edges",
                labels.len(),
                topo.num_inter()
            )));
        }
        if let Some(&k) = edges.and_then(|e| e.iter().find(|&&k| k >= labels.len())) {
            return Err(Error::InvalidInput(format!("supervised edge {k} of {}", labels.len())));
        }
        let picked: Vec<bool> = match edges {
            Some(e) => e.iter().map(|&k| labels[k]).collect(),
            None => labels.to_vec(),
        };
        let (tape, logits) = self.forward_tape(topo, mask)?;
        let supervised: &[Var] = if deep_supervision {
            &logits
        } else {
            std::slice::from_ref(logits.last().expect("at least one step"))
        };
        let mut total = 0.0;
        let mut seeds = Vec::with_capacity(supervised.len());
        for &v in supervised {
            let z: Vec<f64> = tape.value(v).iter().copied().collect();
            let (l, g) = match edges {
                Some(e) => {
                    let zs: Vec<f64> = e.iter().map(|&k| z[k]).collect();
                    let (l, gs) = focal_loss(&zs, &picked, gamma, alpha)?;
                    let mut g = vec![0.0; z.len()];
                    for (&k, d) in e.iter().zip(gs) {
                        g[k] += d;
                    }
                    (l, g)
                }
                None => focal_loss(&z, &picked, gamma, alpha)?,
            };
            total += l;
            seeds.push((v, Matrix::from_shape_vec((g.len(), 1), g).expect("column")));
        }
        let grads = tape.backward(&seeds)?;
        let last = tape.value(*logits.last().expect("at least one step")).iter().copied().collect();
        Ok((total, grads.params, last))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detections::Detection;
    use crate::graph::Edge;
    use crate::relgeom::{edge_features, FeatureMode};

    fn det(frame: u32, x: f64, y: f64, yaw: f64) -> Detection {
        Detection {
            seq_id: "s".into(),
            frame,
            t: frame as f64 * 0.5,
            x,
            y,
            yaw,
            class_id: 0,
            score: 1.0,
            gt_track_id: None,
        }
    }

    fn graph(nodes: Vec<Detection>, pairs: &[(usize, usize)]) -> ClipGraph {
        let edges = pairs
            .iter()
            .map(|&(a, b)| Edge {
                src: a,
                dst: b,
                kind: if nodes[a].frame == nodes[b].frame {
                    EdgeKind::IntraFrame
                } else {
                    EdgeKind::InterFrame
                },
                feature: edge_features(&nodes[a], &nodes[b], FeatureMode::PolarTime, 0.5).unwrap(),
            })
            .collect();
        ClipGraph {
            nodes,
            edges,
            labels: None,
        }
    }

    #[test]
    fn table_shapes() {
        let arch = Architecture::default();
        let shapes = arch.mlp_shapes();
        let widths: Vec<Vec<usize>> = shapes.iter().map(|(_, w)| w.clone()).collect();
        assert_eq!(widths[0], vec![4, 16, 16]);
        assert_eq!(widths[1], vec![48, 64, 128, 32]);
        assert_eq!(widths[2], vec![80, 64, 16]);
        for w in &widths[3..6] {
            assert_eq!(w, &vec![80, 64, 32]);
        }
        assert_eq!(widths[6], vec![96, 128, 64, 32]);
        assert_eq!(widths[7], vec![16, 64, 32, 16, 1]);
        let model = Model::new(arch.clone(), 0);
        assert_eq!(model.params.num_params(), arch.num_params());
    }

    #[test]
    fn embedding_shapes_and_empty_blocks() {
        let model = Model::new(Architecture::default(), 1);
        let g = graph(
            vec![det(0, 0.0, 0.0, 0.0), det(1, 1.0, 0.0, 0.0), det(1, 1.0, 2.0, 0.0)],
            &[(0, 1), (0, 2), (2, 1)],
        );
        let topo = Topology::new(&g).unwrap();
        let mut tape = Tape::new(&model.params);
        let s = model.init_embeddings(&mut tape, &topo, DirectionMask::Offline).unwrap();
        assert_eq!(tape.value(s.edges).dim(), (3, 16));
        assert_eq!(tape.value(s.nodes).dim(), (3, 32));
        let s2 = model.mp_step(&mut tape, &topo, s, DirectionMask::Offline).unwrap();
        assert_eq!(tape.value(s2.edges).dim(), (3, 16));
        assert_eq!(tape.value(s2.nodes).dim(), (3, 32));
    }

    #[test]
    fn node_without_intra_neighbors_gets_zero_present_block() {
        // The node_init input of node 0 is [past | present | future]; node 0
        // has no intra-frame edge so its middle block must be zero. Check by
        // comparing against a graph where the present block is forced to zero.
        let model = Model::new(Architecture::default(), 2);
        let g = graph(vec![det(0, 0.0, 0.0, 0.0), det(1, 1.0, 0.0, 0.0)], &[(0, 1)]);
        let topo = Topology::new(&g).unwrap();
        let mut tape = Tape::new(&model.params);
        let x = tape.input(topo.features.clone());
        let e = model.apply(&mut tape, &model.mlps.edge_init, x).unwrap();
        let ev = tape.value(e).row(0).to_owned();
        let mut input = Matrix::zeros((2, 48));
        // node 0: future slot; node 1: past slot
        input.row_mut(0).slice_mut(ndarray::s![32..48]).assign(&ev);
        input.row_mut(1).slice_mut(ndarray::s![0..16]).assign(&ev);
        let iv = tape.input(input);
        let expect = model.apply(&mut tape, &model.mlps.node_init, iv).unwrap();
        let expect = tape.value(expect).clone();
        let mut tape2 = Tape::new(&model.params);
        let s = model.init_embeddings(&mut tape2, &topo, DirectionMask::Offline).unwrap();
        assert_eq!(tape2.value(s.nodes), &expect);
    }

    #[test]
    fn logits_count_and_empty() {
        let model = Model::new(Architecture::default(), 3);
        let g = graph(vec![det(0, 0.0, 0.0, 0.0), det(0, 1.0, 0.0, 0.0)], &[(0, 1)]);
        assert!(model.forward(&g, DirectionMask::Offline).unwrap().is_empty());
        let g = graph(
            vec![det(0, 0.0, 0.0, 0.0), det(1, 1.0, 0.0, 0.0), det(2, 2.0, 0.0, 0.0), det(2, 2.0, 1.0, 0.0)],
            &[(0, 1), (1, 2), (0, 2), (2, 3), (1, 3)],
        );
        assert_eq!(model.forward(&g, DirectionMask::Offline).unwrap().len(), 4);
        let empty = ClipGraph::default();
        assert!(model.forward(&empty, DirectionMask::Offline).unwrap().is_empty());
    }

    #[test]
    fn subset_loss_is_focal_loss_of_the_subset() {
        let model = Model::new(Architecture::default(), 6);
        let g = graph(
            vec![det(0, 0.0, 0.0, 0.0), det(0, 3.0, 0.0, 0.1), det(1, 1.0, 0.0, 0.0), det(1, 3.5, 0.2, 0.0)],
            &[(0, 1), (2, 3), (0, 2), (1, 3), (0, 3), (1, 2)],
        );
        let topo = Topology::new(&g).unwrap();
        let labels = [true, true, false, false];
        let (full, gf, _) = model.loss_and_grads(&topo, &labels, DirectionMask::Offline, 2.0, 0.25, false).unwrap();
        let all = [0, 1, 2, 3];
        let (same, gs, _) = model
            .loss_and_grads_on(&topo, &labels, Some(&all), DirectionMask::Offline, 2.0, 0.25, false)
            .unwrap();
        assert_eq!((full, &gf), (same, &gs));

        let z = model.forward(&g, DirectionMask::Offline).unwrap();
        let (expect, _) = focal_loss(&[z[1], z[2]], &[true, false], 2.0, 0.25).unwrap();
        let (sub, _, _) = model
            .loss_and_grads_on(&topo, &labels, Some(&[1, 2]), DirectionMask::Offline, 2.0, 0.25, false)
            .unwrap();
        assert!((sub - expect).abs() < 1e-12, "{sub} vs {expect}");
        assert!(model
            .loss_and_grads_on(&topo, &labels, Some(&[4]), DirectionMask::Offline, 2.0, 0.25, false)
            .is_err());
    }

    #[test]
    fn online_mask_ignores_future_nodes() {
        let model = Model::new(Architecture::default(), 4);
        let base = vec![
            det(0, 0.0, 0.0, 0.0),
            det(0, 3.0, 1.0, 0.2),
            det(1, 1.0, 0.1, 0.0),
            det(1, 4.0, 1.2, 0.1),
            det(2, 2.0, 0.2, 0.0),
            det(2, 5.0, 1.1, 0.3),
        ];
        let pairs = [(0, 1), (2, 3), (0, 2), (1, 3), (0, 3), (1, 2), (2, 4), (3, 5), (0, 4), (1, 5), (4, 5)];
        let g = graph(base.clone(), &pairs);
        let past_edges: Vec<usize> = g
            .inter_edges()
            .iter()
            .enumerate()
            .filter(|(_, &k)| g.nodes[g.edges[k].dst].frame <= 1)
            .map(|(i, _)| i)
            .collect();
        let out = model.forward(&g, DirectionMask::Online).unwrap();
        let mut moved = base;
        moved[4].x = -7.0;
        moved[5].yaw = 2.5;
        let out2 = model.forward(&graph(moved, &pairs), DirectionMask::Online).unwrap();
        for &i in &past_edges {
            assert_eq!(out[i], out2[i]);
        }
        let off = model.forward(&g, DirectionMask::Offline).unwrap();
        assert!(past_edges.iter().any(|&i| off[i] != out[i]));
    }
}
