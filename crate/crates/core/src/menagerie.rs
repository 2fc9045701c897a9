//! Herding: separating sheep from goats, lambs and wolves.
//!
//! Thresholding a symmetric similarity matrix and XOR-ing with the identity
//! gives a graph whose off-diagonal edges are false matches and whose
//! self-loops are false non-matches. Vertices are removed greedily by degree
//! until no edge remains; the survivors are the sheep. The loss counts the
//! removals and adds `1 - 0.99999·t` so higher thresholds win ties.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identity::IdentitySet;
use crate::matrix::{symmetrize, SimilarityMatrix, Threshold};
use crate::shepherd::Shepherd;
use crate::tpe::{tpe_minimize, Observation, TpeConfig};

/// Weight of the threshold in the tie-break term of the loss.
pub const THRESHOLD_TIE_BREAK: f64 = 0.99999;

/// Default number of evaluations for the grid optimizer.
pub const GRID_POINTS: usize = 1001;

/// Dense symmetric adjacency with optional self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MenagerieGraph {
    n: usize,
    adjacency: Vec<bool>,
}

impl MenagerieGraph {
    /// Graph from an explicit symmetric adjacency matrix.
    pub fn from_adjacency(n: usize, adjacency: Vec<bool>) -> Result<Self> {
        if adjacency.len() != n * n {
            return Err(Error::Dimension(format!(
                "adjacency for {n} vertices needs {} entries, got {}",
                n * n,
                adjacency.len()
            )));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if adjacency[i * n + j] != adjacency[j * n + i] {
                    return Err(Error::Input(format!("adjacency is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { n, adjacency })
    }

    /// Graph from an undirected edge list; `(v, v)` is a self-loop.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = vec![false; n * n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Dimension(format!(
                    "edge ({a}, {b}) out of range for {n} vertices"
                )));
            }
            adjacency[a * n + b] = true;
            adjacency[b * n + a] = true;
        }
        Ok(Self { n, adjacency })
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j]
    }

    /// Degree where a self-loop counts once.
    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v * self.n..(v + 1) * self.n]
            .iter()
            .filter(|&&e| e)
            .count()
    }

    pub fn edge_count(&self) -> usize {
        (0..self.n)
            .map(|i| (i..self.n).filter(|&j| self.has_edge(i, j)).count())
            .sum()
    }
}

/// `adjacency(i, j) = (S[i][j] ≥ t) XOR (i == j)`.
pub fn build_graph(s: &SimilarityMatrix, t: Threshold) -> Result<MenagerieGraph> {
    s.require_square()?;
    let n = s.rows();
    let t = t.value();
    let mut adjacency = vec![false; n * n];
    for i in 0..n {
        for j in i..n {
            let (a, b) = (s.get(i, j), s.get(j, i));
            if a != b {
                return Err(Error::Input(format!(
                    "similarity matrix is not symmetric at ({i}, {j}): {a} vs {b}"
                )));
            }
            let edge = (a >= t) ^ (i == j);
            adjacency[i * n + j] = edge;
            adjacency[j * n + i] = edge;
        }
    }
    Ok(MenagerieGraph { n, adjacency })
}

/// Repeatedly removes the vertex of highest degree (lowest index on ties)
/// until the graph has no edges. Returns vertices in removal order.
pub fn greedy_disconnect(g: &MenagerieGraph) -> Vec<usize> {
    let n = g.n;
    let mut degree: Vec<usize> = (0..n).map(|v| g.degree(v)).collect();
    let mut alive = vec![true; n];
    let mut removed = Vec::new();
    loop {
        let mut best: Option<(usize, usize)> = None;
        for v in (0..n).filter(|&v| alive[v]) {
            if degree[v] > 0 && best.is_none_or(|(_, d)| degree[v] > d) {
                best = Some((v, degree[v]));
            }
        }
        let Some((v, _)) = best else { break };
        alive[v] = false;
        degree[v] = 0;
        for u in 0..n {
            if u != v && alive[u] && g.has_edge(v, u) {
                degree[u] -= 1;
            }
        }
        removed.push(v);
    }
    removed
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossResult {
    pub loss: f64,
    /// Goats, lambs and wolves, in removal order.
    pub removed: Vec<usize>,
    /// Sheep, ascending.
    pub survivors: Vec<usize>,
}

pub fn menagerie_loss(s: &SimilarityMatrix, t: Threshold) -> Result<LossResult> {
    let graph = build_graph(s, t)?;
    let removed = greedy_disconnect(&graph);
    let mut gone = vec![false; graph.n];
    removed.iter().for_each(|&v| gone[v] = true);
    let survivors = (0..graph.n).filter(|&v| !gone[v]).collect();
    let loss = removed.len() as f64 + (1.0 - THRESHOLD_TIE_BREAK * t.value());
    Ok(LossResult {
        loss,
        removed,
        survivors,
    })
}

/// How the threshold search is run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Optimizer {
    Tpe(TpeConfig),
    /// `points` evenly spaced thresholds `k / (points - 1)`.
    Grid {
        points: usize,
    },
}

impl Optimizer {
    pub fn tpe() -> Self {
        Optimizer::Tpe(TpeConfig::default())
    }

    pub fn grid() -> Self {
        Optimizer::Grid { points: GRID_POINTS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HerdConfig {
    /// TPE evaluations. The grid optimizer evaluates every grid point instead.
    pub iterations: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for HerdConfig {
    fn default() -> Self {
        Self {
            iterations: 250,
            optimizer: Optimizer::tpe(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HerdStatus {
    Ok,
    /// Every identity was removed at the chosen threshold.
    NoSheep,
}

#[derive(Debug, Clone)]
pub struct HerdResult {
    pub threshold: Threshold,
    pub sheep: IdentitySet,
    /// Indices of the sheep in the input set.
    pub sheep_indices: Vec<usize>,
    pub loss: f64,
    pub history: Vec<Observation>,
    pub status: HerdStatus,
}

/// Searches `[0, 1]` for the threshold minimizing the loss on `s`. Returns
/// the winning threshold, its loss result and every evaluation made.
pub fn optimize_threshold(
    s: &SimilarityMatrix,
    config: &HerdConfig,
) -> Result<(Threshold, LossResult, Vec<Observation>)> {
    s.require_square()?;
    let history = match config.optimizer {
        Optimizer::Grid { points } => {
            if points < 2 {
                return Err(Error::Config("grid optimizer needs at least 2 points".into()));
            }
            (0..points)
                .into_par_iter()
                .map(|k| {
                    let t = k as f64 / (points - 1) as f64;
                    let loss = menagerie_loss(s, Threshold::new(t)?)?.loss;
                    Ok(Observation { t, loss })
                })
                .collect::<Result<Vec<_>>>()?
        }
        Optimizer::Tpe(tpe) => {
            let loss = |t: f64| menagerie_loss(s, Threshold::new(t)?).map(|r| r.loss);
            match tpe_minimize(loss, config.iterations, &tpe, config.seed) {
                Ok((_, history)) => history.observations,
                Err(aborted) => return Err(aborted.source.context("threshold search")),
            }
        }
    };
    let best = history
        .iter()
        .copied()
        .reduce(|best, o| if o.loss < best.loss { o } else { best })
        .ok_or_else(|| Error::Config("threshold search made no evaluations".into()))?;
    let t = Threshold::new(best.t)?;
    let result = menagerie_loss(s, t)?;
    Ok((t, result, history))
}

/// Scores every identity against every other, symmetrizes, searches for the
/// best threshold and keeps the identities that survive it.
pub fn herd(shepherd: &dyn Shepherd, identities: &IdentitySet, config: &HerdConfig) -> Result<HerdResult> {
    if identities.is_empty() {
        return Err(Error::Input("cannot herd an empty identity set".into()));
    }
    if config.iterations == 0 {
        return Err(Error::Config("iterations must be at least 1".into()));
    }
    let raw = shepherd
        .similarity(identities, identities)
        .map_err(|e| e.context(format!("shepherd '{}'", shepherd.name())))?;
    let s = symmetrize(&raw)?;
    herd_matrix(&s, identities, config)
}

/// Herding on a precomputed symmetric matrix whose rows follow `identities`.
pub fn herd_matrix(s: &SimilarityMatrix, identities: &IdentitySet, config: &HerdConfig) -> Result<HerdResult> {
    if s.rows() != identities.len() {
        return Err(Error::Dimension(format!(
            "matrix has {} rows for {} identities",
            s.rows(),
            identities.len()
        )));
    }
    let (threshold, result, history) = optimize_threshold(s, config)?;
    let status = if result.survivors.is_empty() {
        warn!("no sheep survived herding at t = {}", threshold.value());
        HerdStatus::NoSheep
    } else {
        HerdStatus::Ok
    };
    Ok(HerdResult {
        threshold,
        sheep: identities.subset(&result.survivors),
        sheep_indices: result.survivors,
        loss: result.loss,
        history,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::Identity;
    use crate::image::ImageBuffer;
    use approx::assert_relative_eq;

    fn t(v: f64) -> Threshold {
        Threshold::new(v).unwrap()
    }

    fn perfect3() -> Vec<Vec<f64>> {
        vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]
    }

    fn matrix(rows: Vec<Vec<f64>>) -> SimilarityMatrix {
        SimilarityMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn perfect_separation_has_no_edges() {
        let g = build_graph(&matrix(perfect3()), t(0.5)).unwrap();
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn false_match_becomes_edge() {
        let mut rows = perfect3();
        rows[0][1] = 0.9;
        rows[1][0] = 0.9;
        let g = build_graph(&matrix(rows), t(0.5)).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert!(g.has_edge(0, 1) && g.has_edge(1, 0));
    }

    #[test]
    fn false_non_match_becomes_self_loop() {
        let mut rows = perfect3();
        rows[2][2] = 0.3;
        let g = build_graph(&matrix(rows), t(0.5)).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert!(g.has_edge(2, 2));
        assert_eq!(g.degree(2), 1);
    }

    #[test]
    fn build_graph_rejects_rectangular() {
        let s = SimilarityMatrix::new(2, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(build_graph(&s, t(0.5)), Err(Error::Dimension(_))));
    }

    #[test]
    fn greedy_cases() {
        let empty = MenagerieGraph::from_edges(4, &[]).unwrap();
        assert!(greedy_disconnect(&empty).is_empty());

        let star = MenagerieGraph::from_edges(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        assert_eq!(greedy_disconnect(&star), vec![0]);

        let triangle = MenagerieGraph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(greedy_disconnect(&triangle), vec![0, 1]);

        // An isolated goat still gets removed.
        let goat = MenagerieGraph::from_edges(3, &[(2, 2)]).unwrap();
        assert_eq!(greedy_disconnect(&goat), vec![2]);
    }

    #[test]
    fn loss_examples() {
        let r = menagerie_loss(&matrix(perfect3()), t(0.5)).unwrap();
        assert!(r.removed.is_empty());
        assert_relative_eq!(r.loss, 0.500005, epsilon = 1e-12);

        let mut rows = perfect3();
        rows[0][1] = 0.9;
        rows[1][0] = 0.9;
        let r = menagerie_loss(&matrix(rows), t(0.5)).unwrap();
        assert_eq!(r.removed, vec![0]);
        assert_eq!(r.survivors, vec![1, 2]);
        assert_relative_eq!(r.loss, 1.500005, epsilon = 1e-12);

        let rows = vec![vec![1.0, 0.7, 0.2], vec![0.7, 1.0, 0.99], vec![0.2, 0.99, 1.0]];
        let r = menagerie_loss(&matrix(rows), t(1.0)).unwrap();
        assert!(r.removed.is_empty());
        assert_relative_eq!(r.loss, 0.00001, epsilon = 1e-12);
    }

    fn idents(n: usize) -> IdentitySet {
        IdentitySet::new(
            (0..n)
                .map(|i| Identity::new(format!("p{i}"), ImageBuffer::filled(1, 1, 0.0).unwrap()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_identity_herds_at_one() {
        let s = matrix(vec![vec![1.0]]);
        let cfg = HerdConfig {
            optimizer: Optimizer::grid(),
            ..HerdConfig::default()
        };
        let r = herd_matrix(&s, &idents(1), &cfg).unwrap();
        assert_eq!(r.threshold.value(), 1.0);
        assert_eq!(r.sheep.len(), 1);

        let r = herd_matrix(&s, &idents(1), &HerdConfig::default()).unwrap();
        assert!(r.threshold.value() >= 0.99);
        assert_eq!(r.sheep.len(), 1);
    }

    #[test]
    fn well_separated_set_is_all_sheep() {
        let n = 12;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            1.0
                        } else {
                            0.05 + 0.01 * ((i + j) % 10) as f64
                        }
                    })
                    .collect()
            })
            .collect();
        let r = herd_matrix(&matrix(rows), &idents(n), &HerdConfig::default()).unwrap();
        assert_eq!(r.sheep.len(), n);
        assert_eq!(r.status, HerdStatus::Ok);
    }

    #[test]
    fn all_goats_flagged() {
        // Diagonal below every off-diagonal value: no threshold helps.
        let rows = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let cfg = HerdConfig {
            optimizer: Optimizer::grid(),
            ..HerdConfig::default()
        };
        let r = herd_matrix(&matrix(rows), &idents(2), &cfg).unwrap();
        assert!(r.sheep.len() < 2);
    }

    #[test]
    fn sheep_are_separated_at_threshold() {
        let rows = vec![
            vec![1.0, 0.8, 0.1, 0.2],
            vec![0.8, 0.9, 0.3, 0.1],
            vec![0.1, 0.3, 0.6, 0.2],
            vec![0.2, 0.1, 0.2, 0.95],
        ];
        let s = matrix(rows);
        let r = herd_matrix(&s, &idents(4), &HerdConfig::default()).unwrap();
        let sub = s.restrict(&r.sheep_indices);
        let th = r.threshold.value();
        for i in 0..sub.rows() {
            for j in 0..sub.cols() {
                if i == j {
                    assert!(sub.get(i, j) >= th);
                } else {
                    assert!(sub.get(i, j) < th);
                }
            }
        }
        assert!(menagerie_loss(&sub, r.threshold).unwrap().removed.is_empty());
    }
}
