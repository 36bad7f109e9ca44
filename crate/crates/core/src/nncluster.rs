//! Non-parametric nearest-neighbor clustering of concepts.
//!
//! A cluster of size `k` is valid when, for every pair of members `a`, `b`:
//!
//! * `b` is within the `k + C` nearest neighbors of `a` (and vice versa), and
//! * `S(a, b)` is strictly greater than the mean similarity `S_avg`.
//!
//! Clustering seeds two-member clusters from mutual nearest neighbors, grows
//! clusters by admitting concepts that keep both conditions true, and seeds
//! a random singleton whenever growth stalls.

use std::collections::{BTreeSet, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ConceptKey;
use crate::error::{Error, Result};
use crate::represent::SimilarityMatrix;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    /// Concept indices, ascending.
    pub members: Vec<usize>,
    pub c_const: usize,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    fn admits(&self, sim: &SimilarityMatrix, candidate: usize) -> bool {
        let bound = self.members.len() + 1 + self.c_const;
        self.members.iter().all(|&q| {
            sim.rank_of(q, candidate) <= bound
                && sim.rank_of(candidate, q) <= bound
                && sim.get(candidate, q) > sim.s_avg()
        })
    }

    fn insert(&mut self, member: usize) {
        let at = self.members.partition_point(|&m| m < member);
        self.members.insert(at, member);
    }
}

/// Partitions the concepts of `sim` into clusters.
pub fn cluster(sim: &SimilarityMatrix, c_const: usize, seed: u64) -> Vec<Cluster> {
    let n = sim.len();
    let mut rng = seed::rng(seed);
    let mut unclustered: BTreeSet<usize> = (0..n).collect();
    let mut clusters: Vec<Cluster> = Vec::new();

    for i in 0..n {
        for j in i + 1..n {
            if sim.nearest(i) == j
                && sim.nearest(j) == i
                && sim.get(i, j) > sim.s_avg()
                && unclustered.contains(&i)
                && unclustered.contains(&j)
            {
                unclustered.remove(&i);
                unclustered.remove(&j);
                clusters.push(Cluster {
                    members: vec![i, j],
                    c_const,
                });
            }
        }
    }

    loop {
        grow(sim, &mut clusters, &mut unclustered);
        if unclustered.is_empty() {
            break;
        }
        let pick = rng.random_range(0..unclustered.len());
        let index = *unclustered.iter().nth(pick).expect("pick is in range");
        unclustered.remove(&index);
        clusters.push(Cluster {
            members: vec![index],
            c_const,
        });
    }
    clusters
}

fn grow(sim: &SimilarityMatrix, clusters: &mut [Cluster], unclustered: &mut BTreeSet<usize>) {
    loop {
        let mut changed = false;
        let candidates: Vec<usize> = unclustered.iter().copied().collect();
        for c in candidates {
            if let Some(target) = clusters.iter_mut().find(|q| q.admits(sim, c)) {
                target.insert(c);
                unclustered.remove(&c);
                changed = true;
            }
        }
        if !changed {
            return;
        }
    }
}

/// Direct check of both membership conditions for a cluster of size `k`.
pub fn check_conditions(members: &[usize], sim: &SimilarityMatrix, c_const: usize) -> bool {
    let bound = members.len() + c_const;
    members.iter().all(|&a| {
        members
            .iter()
            .filter(|&&b| b != a)
            .all(|&b| sim.rank_of(a, b) <= bound && sim.get(a, b) > sim.s_avg())
    })
}

/// Clusters of one run at a fixed fusion weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRun {
    pub alpha: f64,
    pub c_const: usize,
    pub seed: u64,
    pub clusters: Vec<Cluster>,
}

/// A pooled cluster, addressed by concept keys so it survives re-indexing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledCluster {
    pub members: Vec<ConceptKey>,
    pub alpha: f64,
    #[serde(rename = "C")]
    pub c_const: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterPool {
    pub clusters: Vec<PooledCluster>,
}

impl ClusterPool {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PooledCluster> {
        self.clusters.iter()
    }
}

/// Union of the runs' clusters in run order, dropping repeated member sets
/// (the first occurrence keeps its provenance). `keys` names the concepts
/// the run indices refer to.
pub fn merge_pools(runs: &[ClusterRun], keys: &[ConceptKey]) -> Result<ClusterPool> {
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut pool = ClusterPool::default();
    for run in runs {
        for cluster in &run.clusters {
            let mut members = cluster.members.clone();
            members.sort_unstable();
            if let Some(&bad) = members.iter().find(|&&m| m >= keys.len()) {
                return Err(Error::InvalidArgument(format!(
                    "cluster member {bad} has no concept key"
                )));
            }
            if seen.insert(members.clone()) {
                pool.clusters.push(PooledCluster {
                    members: members.iter().map(|&m| keys[m].clone()).collect(),
                    alpha: run.alpha,
                    c_const: run.c_const,
                    seed: run.seed,
                });
            }
        }
    }
    Ok(pool)
}
