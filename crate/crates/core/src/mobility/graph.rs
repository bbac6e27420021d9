use std::sync::Arc;

use crate::autodiff::{CsrMatrix, Tensor};
use crate::error::{Error, Result};
use crate::mobility::types::*;

/// Node-kind bit + gender + age group + location category + city tier.
pub const NODE_FEATURES: usize = 1 + Gender::COUNT + AgeGroup::COUNT + LocationCategory::COUNT + CityTier::COUNT;

const GENDER_OFF: usize = 1;
const AGE_OFF: usize = GENDER_OFF + Gender::COUNT;
const CATEGORY_OFF: usize = AGE_OFF + AgeGroup::COUNT;
const TIER_OFF: usize = CATEGORY_OFF + LocationCategory::COUNT;

/// One-hot features for persons (rows `0..P`) then locations (`P..P+L`).
/// Identical for every snapshot of an episode.
pub fn node_features(episode: &Episode) -> Tensor {
    let np = episode.n_persons();
    let n = np + episode.n_locations();
    let mut x = Tensor::zeros(&[n, NODE_FEATURES]);
    let v = x.values_mut();
    for (p, attr) in episode.persons.iter().enumerate() {
        let row = p * NODE_FEATURES;
        v[row + GENDER_OFF + attr.gender.index()] = 1.0;
        v[row + AGE_OFF + attr.age_group.index()] = 1.0;
    }
    for (l, attr) in episode.locations.iter().enumerate() {
        let row = (np + l) * NODE_FEATURES;
        v[row] = 1.0;
        v[row + CATEGORY_OFF + attr.category.index()] = 1.0;
        v[row + TIER_OFF + attr.city_tier.index()] = 1.0;
    }
    x
}

fn check_membership(snapshot: &MobilitySnapshot, episode: &Episode) -> Result<()> {
    let (np, nl) = (episode.n_persons(), episode.n_locations());
    if snapshot.time_index == 0 || snapshot.time_index > episode.n_steps() {
        return Err(Error::Contract(format!("snapshot t={} outside episode", snapshot.time_index)));
    }
    if let Some(&(p, l)) = snapshot.edges.iter().find(|&&(p, l)| p >= np || l >= nl) {
        return Err(Error::Contract(format!("edge ({p}, {l}) outside episode registries")));
    }
    Ok(())
}

/// Dense symmetric 0/1 adjacency over persons and locations, plus features.
pub fn snapshot_to_graph(snapshot: &MobilitySnapshot, episode: &Episode) -> Result<(Tensor, Tensor)> {
    check_membership(snapshot, episode)?;
    let np = episode.n_persons();
    let n = np + episode.n_locations();
    let mut a = Tensor::zeros(&[n, n]);
    let v = a.values_mut();
    for &(p, l) in &snapshot.edges {
        v[p * n + np + l] = 1.0;
        v[(np + l) * n + p] = 1.0;
    }
    Ok((a, node_features(episode)))
}

/// Sparse form of one snapshot consumed by the graph encoder.
#[derive(Clone, Debug)]
pub struct GraphInput {
    /// Raw 0/1 adjacency `A`.
    pub adjacency: Arc<CsrMatrix>,
    /// `D^{-1/2}(A+I)D^{-1/2}`.
    pub normalized: Arc<CsrMatrix>,
    pub features: Arc<Tensor>,
}

impl GraphInput {
    pub fn n_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn from_dense(adjacency: &Tensor, features: Tensor) -> Result<Self> {
        let csr = CsrMatrix::from_dense(adjacency)?;
        Self::from_csr(csr, Arc::new(features))
    }

    fn from_csr(a: CsrMatrix, features: Arc<Tensor>) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n || features.rows() != n {
            return Err(Error::shape("GraphInput", &[a.rows(), a.cols()], features.shape()));
        }
        let deg: Vec<f64> = (0..n).map(|i| 1.0 + a.row(i).map(|(_, v)| v).sum::<f64>()).collect();
        let mut trip = Vec::with_capacity(a.nnz() + n);
        for (i, &d) in deg.iter().enumerate() {
            trip.push((i, i, 1.0 / d));
            for (j, v) in a.row(i) {
                trip.push((i, j, v / (d * deg[j]).sqrt()));
            }
        }
        let normalized = CsrMatrix::from_triplets(n, n, &trip)?;
        Ok(GraphInput {
            adjacency: Arc::new(a),
            normalized: Arc::new(normalized),
            features,
        })
    }
}

/// Sparse graphs for every snapshot, sharing one feature matrix.
pub fn episode_graphs(episode: &Episode) -> Result<Vec<GraphInput>> {
    let features = Arc::new(node_features(episode));
    let np = episode.n_persons();
    let n = np + episode.n_locations();
    episode
        .snapshots
        .iter()
        .map(|s| {
            check_membership(s, episode)?;
            let mut trip = Vec::with_capacity(2 * s.edges.len());
            for &(p, l) in &s.edges {
                trip.push((p, np + l, 1.0));
                trip.push((np + l, p, 1.0));
            }
            GraphInput::from_csr(CsrMatrix::from_triplets(n, n, &trip)?, features.clone())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mobility::{generate_synthetic_episode, GeneratorConfig};

    fn episode() -> Episode {
        let cfg = GeneratorConfig {
            n_persons: 6,
            n_locations: 3,
            n_steps: 4,
            initial_infected: 1,
            initial_exposed: 0,
            ..Default::default()
        };
        generate_synthetic_episode(&cfg, 2).unwrap()
    }

    #[test]
    fn single_edge_has_two_entries() {
        let mut ep = episode();
        ep.snapshots[0].edges = vec![(0, 0)];
        let (a, x) = snapshot_to_graph(&ep.snapshots[0], &ep).unwrap();
        assert_eq!(a.values().iter().filter(|v| **v != 0.0).count(), 2);
        assert_eq!(x.shape(), &[9, NODE_FEATURES]);
    }

    #[test]
    fn adjacency_symmetric_and_person_degree() {
        let ep = episode();
        for s in &ep.snapshots {
            let (a, _) = snapshot_to_graph(s, &ep).unwrap();
            assert_eq!(a.transpose().unwrap(), a);
            for p in 0..6 {
                let deg: f64 = (0..9).map(|j| a.get(p, j)).sum();
                assert_eq!(deg, 1.0);
            }
        }
    }

    #[test]
    fn shapes_constant_across_time() {
        let ep = episode();
        let shapes: Vec<_> = ep
            .snapshots
            .iter()
            .map(|s| snapshot_to_graph(s, &ep).unwrap().0.shape().to_vec())
            .collect();
        assert!(shapes.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn one_hot_rows() {
        let ep = episode();
        let x = node_features(&ep);
        for p in 0..6 {
            assert_eq!((0..NODE_FEATURES).map(|j| x.get(p, j)).sum::<f64>(), 2.0);
            assert_eq!(x.get(p, 0), 0.0);
        }
        for l in 6..9 {
            assert_eq!(x.get(l, 0), 1.0);
            assert_eq!((0..NODE_FEATURES).map(|j| x.get(l, j)).sum::<f64>(), 3.0);
        }
    }

    #[test]
    fn sparse_matches_dense() {
        let ep = episode();
        let graphs = episode_graphs(&ep).unwrap();
        for (s, g) in ep.snapshots.iter().zip(&graphs) {
            let (a, _) = snapshot_to_graph(s, &ep).unwrap();
            assert_eq!(g.adjacency.to_dense(), a);
            let dense = GraphInput::from_dense(&a, node_features(&ep)).unwrap();
            assert_eq!(dense.normalized.to_dense(), g.normalized.to_dense());
        }
    }

    #[test]
    fn foreign_snapshot_rejected() {
        let ep = episode();
        let bad = MobilitySnapshot { time_index: 1, edges: vec![(99, 0)] };
        assert!(snapshot_to_graph(&bad, &ep).is_err());
    }
}
