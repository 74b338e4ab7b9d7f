use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Rng};
use crate::textproc::{question_keyword_ids, ContextRecord, KeywordVocab};

/// Self-loop weight added to every node inside clustering.
pub const SELF_WEIGHT: f64 = 1e-6;

const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GraphFile {
    num_keywords: usize,
    edges: Vec<(usize, usize, f64)>,
}

/// Symmetric keyword co-occurrence counts. Only `i < j` pairs are stored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphFile", into = "GraphFile")]
pub struct CooccurrenceGraph {
    num_nodes: usize,
    edges: BTreeMap<(usize, usize), f64>,
}

impl TryFrom<GraphFile> for CooccurrenceGraph {
    type Error = String;

    fn try_from(f: GraphFile) -> std::result::Result<Self, String> {
        let mut g = CooccurrenceGraph::new(f.num_keywords);
        for (i, j, w) in f.edges {
            if i == j || i >= f.num_keywords || j >= f.num_keywords || w.is_nan() || w < 0.0 {
                return Err(format!("invalid edge ({i}, {j}, {w})"));
            }
            g.add(i, j, w);
        }
        Ok(g)
    }
}

impl From<CooccurrenceGraph> for GraphFile {
    fn from(g: CooccurrenceGraph) -> Self {
        GraphFile {
            num_keywords: g.num_nodes,
            edges: g.edges.into_iter().map(|((i, j), w)| (i, j, w)).collect(),
        }
    }
}

impl CooccurrenceGraph {
    pub fn new(num_nodes: usize) -> Self {
        CooccurrenceGraph {
            num_nodes,
            edges: BTreeMap::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Adds `w` to the undirected edge `{i, j}`. Self-pairs are ignored.
    pub fn add(&mut self, i: usize, j: usize, w: f64) {
        if i == j {
            return;
        }
        let key = (i.min(j), i.max(j));
        *self.edges.entry(key).or_insert(0.0) += w;
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        self.edges.get(&(i.min(j), i.max(j))).copied().unwrap_or(0.0)
    }

    /// Dense weights of the subgraph induced by `nodes`.
    pub fn induced(&self, nodes: &[usize]) -> Vec<Vec<f64>> {
        nodes
            .iter()
            .map(|&i| nodes.iter().map(|&j| self.weight(i, j)).collect())
            .collect()
    }

    /// Counts every keyword pair within each question's keyword id list.
    pub fn from_questions(num_nodes: usize, questions: &[Vec<usize>]) -> Self {
        let mut g = CooccurrenceGraph::new(num_nodes);
        for ids in questions {
            for (a, &i) in ids.iter().enumerate() {
                for &j in &ids[a + 1..] {
                    g.add(i, j, 1.0);
                }
            }
        }
        g
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Co-occurrence counts over the questions of a training split.
pub fn build_cooccurrence(corpus: &[ContextRecord], vocab: &KeywordVocab) -> CooccurrenceGraph {
    CooccurrenceGraph::from_questions(vocab.len(), &question_keyword_ids(corpus, vocab))
}

/// `Σ_k cut(A_k, V∖A_k) / assoc(A_k, V)` for dense symmetric weights.
/// Clusters with zero cut contribute zero.
pub fn normalized_cut(w: &[Vec<f64>], labels: &[usize], groups: usize) -> f64 {
    let mut cut = vec![0.0; groups];
    let mut assoc = vec![0.0; groups];
    for (i, row) in w.iter().enumerate() {
        for (j, &wij) in row.iter().enumerate() {
            assoc[labels[i]] += wij;
            if labels[i] != labels[j] {
                cut[labels[i]] += wij;
            }
        }
    }
    (0..groups)
        .map(|k| if cut[k] == 0.0 { 0.0 } else { cut[k] / assoc[k] })
        .sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Lloyd's k-means with k-means++ seeding. Returns labels and WCSS.
fn kmeans_once(points: &[Vec<f64>], k: usize, rng: &mut Rng) -> (Vec<usize>, f64) {
    let n = points.len();
    let mut centers: Vec<Vec<f64>> = vec![points[rng.gen_range(0..n)].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let next = if total <= 0.0 {
            // all points coincide with a center: take the first unused index
            (0..n).find(|i| !centers.contains(&points[*i])).unwrap_or(centers.len() % n)
        } else {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, di) in d.iter().enumerate() {
                u -= di;
                if u < 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        };
        centers.push(points[next].clone());
    }

    let mut labels = vec![0; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b])).then(a.cmp(&b)))
                .unwrap();
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        fill_empty_clusters(points, &mut labels, &centers, k);
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            for (d, v) in center.iter_mut().enumerate() {
                *v = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    let wcss = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
    (labels, wcss)
}

/// Moves the point farthest from its center into each empty cluster.
fn fill_empty_clusters(points: &[Vec<f64>], labels: &mut [usize], centers: &[Vec<f64>], k: usize) {
    for c in 0..k {
        if labels.contains(&c) {
            continue;
        }
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let donor = (0..points.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&a, &b| {
                sq_dist(&points[a], &centers[labels[a]])
                    .total_cmp(&sq_dist(&points[b], &centers[labels[b]]))
                    .then(b.cmp(&a))
            });
        if let Some(i) = donor {
            labels[i] = c;
        }
    }
}

fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let (labels, wcss) = kmeans_once(points, k, rng);
        if best.as_ref().is_none_or(|(_, b)| wcss < *b) {
            best = Some((labels, wcss));
        }
    }
    best.expect("at least one restart").0
}

/// Spectral partition of dense weights into `groups` labels.
fn spectral_labels(w: &[Vec<f64>], groups: usize, seed: u64) -> Vec<usize> {
    let n = w.len();
    let mut we = DMatrix::from_fn(n, n, |i, j| w[i][j]);
    for i in 0..n {
        we[(i, i)] += SELF_WEIGHT;
    }
    let inv_sqrt_deg: Vec<f64> = (0..n).map(|i| 1.0 / we.row(i).sum().sqrt()).collect();
    let lap = DMatrix::from_fn(n, n, |i, j| {
        let identity = if i == j { 1.0 } else { 0.0 };
        identity - inv_sqrt_deg[i] * we[(i, j)] * inv_sqrt_deg[j]
    });
    let eig = SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));

    let points: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row: Vec<f64> = order[..groups].iter().map(|&c| eig.eigenvectors[(i, c)]).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter().map(|v| v / norm).collect()
            } else {
                row
            }
        })
        .collect();
    let w_eps: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| we[(i, j)]).collect()).collect();
    let mut candidates = vec![kmeans(&points, groups, &mut seeded_rng(seed))];

    if groups == 2 {
        // Shi–Malik splitting-point search along the generalized eigenvector
        let v: Vec<f64> = (0..n).map(|i| inv_sqrt_deg[i] * eig.eigenvectors[(i, order[1])]).collect();
        let mut by_value: Vec<usize> = (0..n).collect();
        by_value.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
        for split in 1..n {
            let mut labels = vec![1; n];
            for &i in &by_value[..split] {
                labels[i] = 0;
            }
            candidates.push(labels);
        }
    }

    let mut best = 0;
    let mut best_cut = f64::INFINITY;
    for (c, labels) in candidates.iter().enumerate() {
        let cut = normalized_cut(&w_eps, labels, groups);
        if cut < best_cut - 1e-12 {
            best = c;
            best_cut = cut;
        }
    }
    candidates.swap_remove(best)
}

/// Partitions `top_keywords` into `groups` nonempty clusters by normalized-cut
/// spectral clustering of their induced co-occurrence subgraph. Members keep
/// their input order; clusters are ordered by their best-ranked member.
pub fn cluster_keywords(graph: &CooccurrenceGraph, top_keywords: &[usize], groups: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = top_keywords.len();
    if groups == 0 || groups > n {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} keywords into {groups} clusters"
        )));
    }
    let w = graph.induced(top_keywords);
    let isolated = w.iter().all(|row| row.iter().all(|&x| x == 0.0));
    let labels: Vec<usize> = if groups == 1 {
        vec![0; n]
    } else if groups == n || isolated {
        (0..n).map(|i| i % groups).collect()
    } else {
        spectral_labels(&w, groups, seed)
    };

    let mut first_seen: Vec<usize> = Vec::with_capacity(groups);
    for &l in &labels {
        if !first_seen.contains(&l) {
            first_seen.push(l);
        }
    }
    Ok(first_seen
        .iter()
        .map(|&l| {
            top_keywords
                .iter()
                .zip(&labels)
                .filter(|(_, &x)| x == l)
                .map(|(&k, _)| k)
                .collect()
        })
        .collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::textproc::{KeywordSet, QuestionRecord, TokenSequence};

    /// Minimum normalized cut over all 2-partitions.
    pub(crate) fn brute_force_min_ncut(w: &[Vec<f64>]) -> f64 {
        let n = w.len();
        (1..(1u32 << (n - 1)))
            .map(|mask| {
                let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
                normalized_cut(w, &labels, 2)
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn graph(n: usize, edges: &[(usize, usize, f64)]) -> CooccurrenceGraph {
        let mut g = CooccurrenceGraph::new(n);
        for &(i, j, w) in edges {
            g.add(i, j, w);
        }
        g
    }

    fn labels_of(groups: &[Vec<usize>], nodes: &[usize]) -> Vec<usize> {
        nodes
            .iter()
            .map(|k| groups.iter().position(|g| g.contains(k)).unwrap())
            .collect()
    }

    #[test]
    fn cooccurrence_counts() {
        let q = |ids: &[usize]| ids.to_vec();
        let g = CooccurrenceGraph::from_questions(3, &[q(&[0, 1])]);
        assert_eq!(g.weight(0, 1), 1.0);
        let g = CooccurrenceGraph::from_questions(3, &[q(&[0, 1]), q(&[0, 1])]);
        assert_eq!(g.weight(1, 0), 2.0);
        let g = CooccurrenceGraph::from_questions(3, &[q(&[0, 1, 2])]);
        assert_eq!((g.weight(0, 1), g.weight(0, 2), g.weight(1, 2)), (1.0, 1.0, 1.0));
        assert_eq!(g.weight(2, 2), 0.0);
    }

    #[test]
    fn cooccurrence_from_corpus_and_round_trip() {
        let kv = KeywordVocab::from_entries(vec![("a".into(), 2), ("b".into(), 2), ("c".into(), 1)]).unwrap();
        let rec = ContextRecord {
            id: "1".into(),
            context: TokenSequence::from_tokens(["x"]),
            questions: vec![QuestionRecord {
                question: TokenSequence::from_tokens(["a", "b", "zz"]),
                keywords: ["a", "b", "zz"].iter().map(|s| s.to_string()).collect::<KeywordSet>(),
            }],
        };
        let g = build_cooccurrence(&[rec], &kv);
        assert_eq!(g.weight(0, 1), 1.0);
        assert_eq!(g.num_edges(), 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        g.save(&path).unwrap();
        assert_eq!(CooccurrenceGraph::load(&path).unwrap(), g);
        assert!(serde_json::from_str::<CooccurrenceGraph>(r#"{"num_keywords":2,"edges":[[0,5,1.0]]}"#).is_err());
    }

    #[test]
    fn two_components() {
        let g = graph(4, &[(0, 1, 3.0), (2, 3, 1.0)]);
        let out = cluster_keywords(&g, &[0, 2, 1, 3], 2, 0).unwrap();
        assert_eq!(out, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn singletons_and_errors() {
        let g = graph(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        assert_eq!(cluster_keywords(&g, &[0, 1, 2], 3, 0).unwrap(), vec![vec![0], vec![1], vec![2]]);
        assert!(cluster_keywords(&g, &[0, 1], 3, 0).is_err());
        assert_eq!(cluster_keywords(&g, &[2, 0], 1, 0).unwrap(), vec![vec![2, 0]]);
    }

    #[test]
    fn all_isolated_round_robin() {
        let g = CooccurrenceGraph::new(5);
        let out = cluster_keywords(&g, &[4, 3, 2, 1, 0], 2, 0).unwrap();
        assert_eq!(out, vec![vec![4, 2, 0], vec![3, 1]]);
    }

    #[test]
    fn isolated_node_does_not_break_clustering() {
        let g = graph(5, &[(0, 1, 5.0), (1, 2, 5.0), (0, 2, 5.0), (2, 3, 0.1)]);
        let nodes = [0, 1, 2, 3, 4];
        let out = cluster_keywords(&g, &nodes, 2, 0).unwrap();
        let flat: Vec<usize> = out.iter().flatten().copied().collect();
        assert_eq!(flat.len(), 5);
        let w = g.induced(&nodes);
        assert!(normalized_cut(&w, &labels_of(&out, &nodes), 2) <= brute_force_min_ncut(&w) + 1e-6);
    }

    #[test]
    fn ncut_hand_value() {
        // path a-b-c with weights 1, 2: cut {a}|{b,c} = 1/1 + 1/(3+2) = 1.2
        let w = vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 2.0], vec![0.0, 2.0, 0.0]];
        assert!((normalized_cut(&w, &[0, 1, 1], 2) - 1.2).abs() < 1e-12);
        assert!((brute_force_min_ncut(&w) - 1.2).abs() < 1e-12);
    }

    fn random_graph(rng: &mut Rng, n: usize) -> Vec<Vec<f64>> {
        let mut w = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen::<f64>() < 0.6 {
                    let x = rng.gen_range(1..10) as f64;
                    w[i][j] = x;
                    w[j][i] = x;
                }
            }
        }
        w
    }

    fn from_dense(w: &[Vec<f64>]) -> CooccurrenceGraph {
        let n = w.len();
        let mut g = CooccurrenceGraph::new(n);
        for i in 0..n {
            for j in i + 1..n {
                if w[i][j] > 0.0 {
                    g.add(i, j, w[i][j]);
                }
            }
        }
        g
    }

    #[test]
    fn partition_and_scale_invariance() {
        let mut rng = seeded_rng(42);
        for _ in 0..50 {
            let n = rng.gen_range(3..9);
            let w = random_graph(&mut rng, n);
            let nodes: Vec<usize> = (0..n).collect();
            let out = cluster_keywords(&from_dense(&w), &nodes, 2, 7).unwrap();
            assert_eq!(out.len(), 2);
            assert!(out.iter().all(|g| !g.is_empty()));
            let mut flat: Vec<usize> = out.iter().flatten().copied().collect();
            flat.sort();
            assert_eq!(flat, nodes);

            let scaled: Vec<Vec<f64>> = w.iter().map(|r| r.iter().map(|x| x * 3.0).collect()).collect();
            let out2 = cluster_keywords(&from_dense(&scaled), &nodes, 2, 7).unwrap();
            let a = normalized_cut(&w, &labels_of(&out, &nodes), 2);
            let b = normalized_cut(&w, &labels_of(&out2, &nodes), 2);
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn three_clusters_of_cliques() {
        let mut edges = Vec::new();
        for base in [0, 3, 6] {
            edges.extend([(base, base + 1, 4.0), (base + 1, base + 2, 4.0), (base, base + 2, 4.0)]);
        }
        edges.extend([(2, 3, 0.5), (5, 6, 0.5)]);
        let g = graph(9, &edges);
        let out = cluster_keywords(&g, &(0..9).collect::<Vec<_>>(), 3, 1).unwrap();
        assert_eq!(out, vec![vec![0, 1, 2], vec![3, 4, 5], vec![6, 7, 8]]);
    }

    #[test]
    fn deterministic_with_seed() {
        let mut rng = seeded_rng(3);
        let w = random_graph(&mut rng, 7);
        let g = from_dense(&w);
        let nodes: Vec<usize> = (0..7).collect();
        assert_eq!(cluster_keywords(&g, &nodes, 3, 5).unwrap(), cluster_keywords(&g, &nodes, 3, 5).unwrap());
    }

    #[test]
    fn matches_brute_force_on_random_graphs() {
        let mut rng = seeded_rng(2024);
        let mut hits = 0;
        for _ in 0..100 {
            let n = rng.gen_range(2..9);
            let w = random_graph(&mut rng, n);
            let nodes: Vec<usize> = (0..n).collect();
            let out = cluster_keywords(&from_dense(&w), &nodes, 2, 0).unwrap();
            let got = normalized_cut(&w, &labels_of(&out, &nodes), 2);
            if got <= brute_force_min_ncut(&w) + 1e-6 {
                hits += 1;
            }
        }
        eprintln!("spectral matched brute force on {hits}/100 graphs");
        assert!(hits >= 95, "{hits}");
    }
}
