//! Spectral 2-way clustering against exhaustive normalized-cut search.

use std::collections::BTreeSet;

use kpcnet_core::nn::seeded_rng;
use kpcnet_core::selection::{cluster_keywords, CooccurrenceGraph};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

/// `cut(A,B)/assoc(A,V) + cut(A,B)/assoc(B,V)`, a side with no cut
/// contributing zero.
fn ncut(w: &[Vec<f64>], side: &[bool]) -> f64 {
    let n = w.len();
    let (mut cut, mut assoc_a, mut assoc_b) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if side[i] {
                assoc_a += w[i][j];
            } else {
                assoc_b += w[i][j];
            }
            if side[i] && !side[j] {
                cut += w[i][j];
            }
        }
    }
    if cut == 0.0 {
        0.0
    } else {
        cut / assoc_a + cut / assoc_b
    }
}

fn brute_force_min(w: &[Vec<f64>]) -> f64 {
    let n = w.len();
    // node 0 fixed on side A; every other bitmask is one 2-partition
    (0..(1u32 << (n - 1)) - 1)
        .map(|mask| {
            let side: Vec<bool> = (0..n).map(|i| i == 0 || mask & (1 << (i - 1)) != 0).collect();
            ncut(w, &side)
        })
        .fold(f64::INFINITY, f64::min)
}

fn random_graph(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let density = rng.gen_range(0.3..0.9);
    let mut w = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(density) {
                let x = f64::from(rng.gen_range(1..10u8));
                w[i][j] = x;
                w[j][i] = x;
            }
        }
    }
    w
}

fn to_graph(w: &[Vec<f64>]) -> CooccurrenceGraph {
    let mut g = CooccurrenceGraph::new(w.len());
    for (i, row) in w.iter().enumerate() {
        for (j, &x) in row.iter().enumerate().skip(i + 1) {
            if x > 0.0 {
                g.add(i, j, x);
            }
        }
    }
    g
}

fn side_of(groups: &[Vec<usize>], n: usize) -> Option<Vec<bool>> {
    if groups.len() != 2 || groups.iter().any(|g| g.is_empty()) {
        return None;
    }
    let all: BTreeSet<usize> = groups.iter().flatten().copied().collect();
    if all.len() != n || groups[0].len() + groups[1].len() != n {
        return None;
    }
    let mut side = vec![false; n];
    for &k in &groups[0] {
        side[k] = true;
    }
    Some(side)
}

/// Two connected components: a random spanning path per component plus
/// random extra edges inside it.
fn two_components(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, BTreeSet<usize>) {
    let n = rng.gen_range(4..=8);
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.shuffle(rng);
    let split = rng.gen_range(2..=n - 2);
    let (a, b) = nodes.split_at(split);
    let mut w = vec![vec![0.0; n]; n];
    for comp in [a, b] {
        for pair in comp.windows(2) {
            let x = rng.gen_range(0.5..5.0);
            w[pair[0]][pair[1]] = x;
            w[pair[1]][pair[0]] = x;
        }
        for &i in comp {
            for &j in comp {
                if i < j && w[i][j] == 0.0 && rng.gen_bool(0.4) {
                    let x = rng.gen_range(0.5..5.0);
                    w[i][j] = x;
                    w[j][i] = x;
                }
            }
        }
    }
    (w, a.iter().copied().collect())
}

pub fn criterion() -> Outcome {
    let mut out = Outcome::new();
    let mut rng = seeded_rng(3);

    let mut optimal = 0;
    let mut malformed = 0;
    for case in 0..100u64 {
        let n = rng.gen_range(2..=8);
        let w = random_graph(n, &mut rng);
        let nodes: Vec<usize> = (0..n).collect();
        let groups = cluster_keywords(&to_graph(&w), &nodes, 2, case).unwrap();
        match side_of(&groups, n) {
            Some(side) => optimal += usize::from(ncut(&w, &side) <= brute_force_min(&w) + 1e-9),
            None => malformed += 1,
        }
    }
    out.check(optimal >= 95 && malformed == 0, format!("random graphs at brute-force minimum {optimal}/100"));

    let mut exact = 0;
    for case in 0..100u64 {
        let (w, first) = two_components(&mut rng);
        let n = w.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let groups = cluster_keywords(&to_graph(&w), &order, 2, case).unwrap();
        let found: BTreeSet<BTreeSet<usize>> = groups.iter().map(|g| g.iter().copied().collect()).collect();
        let second: BTreeSet<usize> = (0..n).filter(|i| !first.contains(i)).collect();
        exact += usize::from(found == BTreeSet::from([first, second]));
    }
    out.check(exact == 100, format!("disconnected components recovered {exact}/100"));
    out
}
