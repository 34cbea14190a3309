//! Emotion interaction graph, hypergraph incidence structure and path sets
//! for a single dialogue.
//!
//! Utterance `i` owns three modality nodes: `3 * i + m` for `m` in
//! text (0), audio (1) and visual (2).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

pub const MODALITIES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Text = 0,
    Audio = 1,
    Visual = 2,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Audio, Modality::Visual];

    pub fn index(self) -> usize {
        self as usize
    }
}

pub fn node_id(utterance: usize, modality: Modality) -> usize {
    utterance * MODALITIES + modality.index()
}

pub fn utterance_of(node: usize) -> usize {
    node / MODALITIES
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    /// Points to an earlier utterance within the context window.
    TemporalPast,
    /// Points to a later utterance within the context window.
    TemporalFuture,
    /// Links consecutive turns of one speaker lying beyond the context window.
    SameSpeaker,
    /// Links two modality nodes of one utterance.
    CrossModal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub relation: Relation,
}

/// Directed multimodal utterance graph.
#[derive(Clone, Debug, PartialEq)]
pub struct DialogueGraph {
    num_utterances: usize,
    context_window: usize,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, Relation)>>,
}

impl DialogueGraph {
    pub fn num_utterances(&self) -> usize {
        self.num_utterances
    }

    pub fn num_nodes(&self) -> usize {
        self.num_utterances * MODALITIES
    }

    pub fn context_window(&self) -> usize {
        self.context_window
    }

    /// Edges sorted by `(src, dst)`.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Out-neighbours of `node` in ascending id order.
    pub fn neighbors(&self, node: usize) -> &[(usize, Relation)] {
        &self.adjacency[node]
    }

    fn from_edges(num_utterances: usize, context_window: usize, mut edges: Vec<Edge>) -> Self {
        edges.sort();
        let mut adjacency = vec![Vec::new(); num_utterances * MODALITIES];
        for e in &edges {
            adjacency[e.src].push((e.dst, e.relation));
        }
        Self {
            num_utterances,
            context_window,
            edges,
            adjacency,
        }
    }

    /// Same graph under the node relabeling `v -> perm[v]`.
    pub fn permute_nodes(&self, perm: &[usize]) -> Self {
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                src: perm[e.src],
                dst: perm[e.dst],
                relation: e.relation,
            })
            .collect();
        Self::from_edges(self.num_utterances, self.context_window, edges)
    }
}

/// Builds the interaction graph for one dialogue given its speaker sequence.
///
/// Same-modality nodes within `window` turns are linked in both directions;
/// consecutive turns of the same speaker further apart than `window` get a
/// same-speaker edge pair; the three modality nodes of each utterance are
/// fully connected.
pub fn build_emotion_graph(speakers: &[u32], window: usize) -> DialogueGraph {
    let n = speakers.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i.saturating_sub(window)..(i + window + 1).min(n) {
            if i == j {
                continue;
            }
            let relation = if j < i {
                Relation::TemporalPast
            } else {
                Relation::TemporalFuture
            };
            for m in Modality::ALL {
                edges.push(Edge {
                    src: node_id(i, m),
                    dst: node_id(j, m),
                    relation,
                });
            }
        }
        if let Some(j) = (0..i).rev().find(|&j| speakers[j] == speakers[i]) {
            if i - j > window {
                for m in Modality::ALL {
                    for (s, d) in [(i, j), (j, i)] {
                        edges.push(Edge {
                            src: node_id(s, m),
                            dst: node_id(d, m),
                            relation: Relation::SameSpeaker,
                        });
                    }
                }
            }
        }
        for a in Modality::ALL {
            for b in Modality::ALL {
                if a != b {
                    edges.push(Edge {
                        src: node_id(i, a),
                        dst: node_id(i, b),
                        relation: Relation::CrossModal,
                    });
                }
            }
        }
    }
    DialogueGraph::from_edges(n, window, edges)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HyperedgeKind {
    /// The three modality nodes of one utterance.
    Utterance,
    /// Every node of one modality across the dialogue.
    Modality(Modality),
}

impl HyperedgeKind {
    /// Number of distinct kinds; each kind shares one learnable weight.
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        match self {
            HyperedgeKind::Utterance => 0,
            HyperedgeKind::Modality(m) => 1 + m.index(),
        }
    }
}

/// Weighted hypergraph over the modality nodes of one dialogue.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypergraph {
    num_nodes: usize,
    members: Vec<Vec<usize>>,
    kinds: Vec<HyperedgeKind>,
    weights: Vec<f64>,
}

impl Hypergraph {
    /// Arbitrary hypergraph from member lists; all weights start at 1.
    ///
    /// Returns `None` when a hyperedge has fewer than two distinct nodes,
    /// a member is out of range, or some node belongs to no hyperedge.
    pub fn from_members(num_nodes: usize, members: Vec<Vec<usize>>, kinds: Vec<HyperedgeKind>) -> Option<Self> {
        if members.len() != kinds.len() {
            return None;
        }
        let mut covered = vec![false; num_nodes];
        for m in &members {
            let mut sorted = m.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != m.len() || m.len() < 2 || m.iter().any(|&v| v >= num_nodes) {
                return None;
            }
            m.iter().for_each(|&v| covered[v] = true);
        }
        if covered.iter().any(|c| !c) {
            return None;
        }
        let weights = vec![1.0; members.len()];
        Some(Self {
            num_nodes,
            members,
            kinds,
            weights,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn kinds(&self) -> &[HyperedgeKind] {
        &self.kinds
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> crate::Result<()> {
        if weights.len() != self.members.len() || weights.iter().any(|w| !(*w > 0.0)) {
            return crate::error::contract("hyperedge weights must be positive, one per hyperedge");
        }
        self.weights = weights;
        Ok(())
    }

    /// Dense `|V| x |E|` 0/1 incidence matrix.
    pub fn incidence(&self) -> Tensor {
        let e = self.num_edges();
        let mut h = Tensor::zeros(&[self.num_nodes, e]);
        for (j, m) in self.members.iter().enumerate() {
            for &v in m {
                h.data_mut()[v * e + j] = 1.0;
            }
        }
        h
    }

    /// `D_vv = sum_e w(e) H_ve`.
    pub fn node_degree(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.num_nodes];
        for (m, w) in self.members.iter().zip(&self.weights) {
            m.iter().for_each(|&v| d[v] += w);
        }
        d
    }

    /// `B_ee = sum_v H_ve`.
    pub fn edge_degree(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.len() as f64).collect()
    }

    /// Same hypergraph under the node relabeling `v -> perm[v]`.
    pub fn permute_nodes(&self, perm: &[usize]) -> Self {
        Self {
            num_nodes: self.num_nodes,
            members: self
                .members
                .iter()
                .map(|m| m.iter().map(|&v| perm[v]).collect())
                .collect(),
            kinds: self.kinds.clone(),
            weights: self.weights.clone(),
        }
    }
}

/// `N` utterance hyperedges, then (for `N >= 2`) one hyperedge per modality.
pub fn build_hypergraph(num_utterances: usize) -> Hypergraph {
    let mut members = Vec::new();
    let mut kinds = Vec::new();
    for i in 0..num_utterances {
        members.push(Modality::ALL.iter().map(|&m| node_id(i, m)).collect());
        kinds.push(HyperedgeKind::Utterance);
    }
    if num_utterances >= 2 {
        for m in Modality::ALL {
            members.push((0..num_utterances).map(|i| node_id(i, m)).collect());
            kinds.push(HyperedgeKind::Modality(m));
        }
    }
    let weights = vec![1.0; members.len()];
    Hypergraph {
        num_nodes: num_utterances * MODALITIES,
        members,
        kinds,
        weights,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathConfig {
    /// Maximum number of nodes in a path.
    pub max_len: usize,
    /// Maximum number of paths kept per start node.
    pub max_per_node: usize,
    /// Whether paths may use cross-modal edges.
    pub cross_modal: bool,
    pub seed: u64,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            max_len: 3,
            max_per_node: 16,
            cross_modal: true,
            seed: 0,
        }
    }
}

/// Simple paths grouped by start node.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSet {
    num_nodes: usize,
    paths: Vec<Vec<usize>>,
    by_start: Vec<Vec<usize>>,
}

impl PathSet {
    pub fn from_paths(num_nodes: usize, paths: Vec<Vec<usize>>) -> crate::Result<Self> {
        let mut by_start = vec![Vec::new(); num_nodes];
        for (id, p) in paths.iter().enumerate() {
            match p.first() {
                Some(&v) if p.iter().all(|&u| u < num_nodes) => by_start[v].push(id),
                _ => return crate::error::contract(format!("invalid path {p:?}")),
            }
        }
        Ok(Self {
            num_nodes,
            paths,
            by_start,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn paths(&self) -> &[Vec<usize>] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Ids of the paths starting at `node`.
    pub fn starting_at(&self, node: usize) -> &[usize] {
        &self.by_start[node]
    }

    /// Paths associated with each node: those starting there, plus those
    /// ending there when `include_end` is set. A path is listed once per node.
    pub fn associations(&self, include_end: bool) -> Vec<Vec<usize>> {
        let mut assoc = self.by_start.clone();
        if include_end {
            for (id, p) in self.paths.iter().enumerate() {
                let (first, last) = (p[0], p[p.len() - 1]);
                if last != first {
                    assoc[last].push(id);
                }
            }
        }
        assoc
    }
}

fn extend_paths(
    graph: &DialogueGraph,
    cfg: &PathConfig,
    path: &mut Vec<usize>,
    on_path: &mut [bool],
    out: &mut Vec<Vec<usize>>,
) {
    out.push(path.clone());
    if path.len() == cfg.max_len {
        return;
    }
    let last = *path.last().expect("nonempty");
    for &(next, relation) in graph.neighbors(last) {
        if on_path[next] || (!cfg.cross_modal && relation == Relation::CrossModal) {
            continue;
        }
        on_path[next] = true;
        path.push(next);
        extend_paths(graph, cfg, path, on_path, out);
        path.pop();
        on_path[next] = false;
    }
}

/// Depth-first enumeration of simple paths of 1..=`max_len` nodes from
/// every node, visiting neighbours in ascending id order.
///
/// When a node has more than `max_per_node` paths, its trivial path is kept
/// and the rest is a seeded uniform subsample, preserving enumeration order.
pub fn enumerate_paths(graph: &DialogueGraph, cfg: &PathConfig) -> PathSet {
    let n = graph.num_nodes();
    let mut paths = Vec::new();
    let mut by_start = vec![Vec::new(); n];
    let mut on_path = vec![false; n];
    for start in 0..n {
        let mut found = Vec::new();
        if cfg.max_len >= 1 {
            on_path[start] = true;
            extend_paths(graph, cfg, &mut vec![start], &mut on_path, &mut found);
            on_path[start] = false;
        }
        if found.len() > cfg.max_per_node.max(1) {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (start as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let keep = cfg.max_per_node.max(1) - 1;
            let mut picked = sample(&mut rng, found.len() - 1, keep).into_vec();
            picked.sort_unstable();
            let mut kept = vec![found[0].clone()];
            kept.extend(picked.into_iter().map(|i| found[i + 1].clone()));
            found = kept;
        }
        for p in found {
            by_start[start].push(paths.len());
            paths.push(p);
        }
    }
    PathSet {
        num_nodes: n,
        paths,
        by_start,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    fn temporal(g: &DialogueGraph, m: Modality) -> BTreeSet<(usize, usize)> {
        g.edges()
            .iter()
            .filter(|e| matches!(e.relation, Relation::TemporalPast | Relation::TemporalFuture))
            .filter(|e| e.src % 3 == m.index())
            .map(|e| (utterance_of(e.src), utterance_of(e.dst)))
            .collect()
    }

    #[test]
    fn single_utterance_graph() {
        let g = build_emotion_graph(&[0], 2);
        assert_eq!(g.edges().len(), 6);
        assert!(g.edges().iter().all(|e| e.relation == Relation::CrossModal));
    }

    #[test]
    fn window_one_temporal_edges() {
        let g = build_emotion_graph(&[0, 1, 0], 1);
        let expected: BTreeSet<_> = [(0, 1), (1, 0), (1, 2), (2, 1)].into_iter().collect();
        assert_eq!(temporal(&g, Modality::Text), expected);
        // speakers 0 and 2 match two turns apart, beyond the window
        assert_eq!(g.edges().iter().filter(|e| e.relation == Relation::SameSpeaker).count(), 6);
    }

    #[test]
    fn saturated_window_is_complete() {
        let g = build_emotion_graph(&[0, 1, 2, 3], 10);
        for m in Modality::ALL {
            assert_eq!(temporal(&g, m).len(), 12);
        }
    }

    #[test]
    fn structural_invariants() {
        let speakers = [0, 1, 0, 0, 2, 1, 1, 0, 2];
        for w in 0..4 {
            let g = build_emotion_graph(&speakers, w);
            let n = speakers.len();
            assert!(g.edges().len() <= 3 * n * (2 * w + 2) + 6 * n);
            for e in g.edges() {
                assert_ne!(e.src, e.dst);
                let (ui, uj) = (utterance_of(e.src), utterance_of(e.dst));
                match e.relation {
                    Relation::CrossModal => assert_eq!(ui, uj),
                    Relation::TemporalPast | Relation::TemporalFuture => {
                        assert_eq!(e.src % 3, e.dst % 3);
                        assert!(ui.abs_diff(uj) <= w);
                    }
                    Relation::SameSpeaker => assert_eq!(speakers[ui], speakers[uj]),
                }
            }
        }
    }

    #[test]
    fn speaker_relabeling_is_invisible() {
        let a = build_emotion_graph(&[0, 1, 0, 2, 1, 0, 0], 1);
        let b = build_emotion_graph(&[5, 3, 5, 9, 3, 5, 5], 1);
        assert_eq!(a, b);
    }

    #[test]
    fn hypergraph_small_cases() {
        let h = build_hypergraph(1);
        assert_eq!(h.num_edges(), 1);
        assert_eq!(h.incidence().data(), &[1.0, 1.0, 1.0]);
        assert_eq!(h.edge_degree(), vec![3.0]);
        assert_eq!(h.node_degree(), vec![1.0; 3]);

        let h = build_hypergraph(2);
        assert_eq!(h.num_edges(), 5);
        assert_eq!(h.node_degree(), vec![2.0; 6]);
    }

    #[test]
    fn hypergraph_degrees_by_brute_force() {
        let mut h = build_hypergraph(3);
        h.set_weights(vec![0.5, 1.0, 2.0, 1.5, 0.25, 3.0]).unwrap();
        let inc = h.incidence();
        assert_eq!(inc.shape(), &[9, 6]);
        let d = h.node_degree();
        let b = h.edge_degree();
        for v in 0..9 {
            let mut s = 0.0;
            for e in 0..6 {
                s += h.weights()[e] * inc.get(v, e);
            }
            assert_eq!(s, d[v]);
        }
        for e in 0..6 {
            let s: f64 = (0..9).map(|v| inc.get(v, e)).sum();
            assert_eq!(s, b[e]);
            assert!(s >= 2.0);
        }
    }

    #[test]
    fn isolated_and_pair_paths() {
        let g = build_emotion_graph(&[0], 0);
        let cfg = PathConfig {
            max_len: 3,
            cross_modal: false,
            ..PathConfig::default()
        };
        let p = enumerate_paths(&g, &cfg);
        assert_eq!(p.len(), 3);
        assert!(p.paths().iter().all(|x| x.len() == 1));

        // two utterances, window 1, no cross-modal: text nodes 0 and 3 form a 2-cycle
        let g = build_emotion_graph(&[0, 1], 1);
        let cfg = PathConfig {
            max_len: 2,
            cross_modal: false,
            ..PathConfig::default()
        };
        let p = enumerate_paths(&g, &cfg);
        assert_eq!(p.starting_at(0).len(), 2);
        let from0: Vec<_> = p.starting_at(0).iter().map(|&i| p.paths()[i].clone()).collect();
        assert_eq!(from0, vec![vec![0], vec![0, 3]]);
    }

    #[test]
    fn paths_are_simple_edges_and_capped() {
        let g = build_emotion_graph(&[0, 1, 0, 1, 2, 0], 2);
        let cfg = PathConfig {
            max_len: 3,
            max_per_node: 5,
            cross_modal: true,
            seed: 7,
        };
        let p = enumerate_paths(&g, &cfg);
        let edges: BTreeSet<_> = g.edges().iter().map(|e| (e.src, e.dst)).collect();
        for v in 0..g.num_nodes() {
            let ids = p.starting_at(v);
            assert!(ids.len() <= 5 && !ids.is_empty());
            assert_eq!(p.paths()[ids[0]], vec![v]);
        }
        for path in p.paths() {
            let set: BTreeSet<_> = path.iter().collect();
            assert_eq!(set.len(), path.len());
            for w in path.windows(2) {
                assert!(edges.contains(&(w[0], w[1])));
            }
        }
        assert_eq!(p, enumerate_paths(&g, &cfg));
    }
}
