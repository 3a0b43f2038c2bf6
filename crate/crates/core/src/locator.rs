//! k-nearest-neighbor search over radio-map fingerprints and
//! neighbor-averaging position estimation.
//!
//! Two search routes are provided: [`brute_force_k_nearest`], the exhaustive
//! oracle, and [`NNIndex`], a kd-tree supporting exact (`epsilon = 0`) and
//! (1+epsilon)-approximate queries. With `epsilon = 0` the index returns
//! exactly the oracle's answer, ties and all: both routes share one squared
//! distance kernel and one (distance, entry index) ordering, and the tree
//! only prunes a subtree when it provably cannot hold a better candidate.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::model::{
    align_fingerprint, dist2_slices, Fingerprint, PositionEstimate, RadioMap, ScanObservation,
};

/// Errors from nearest-neighbor queries and position estimation.
#[derive(Debug, Error, PartialEq)]
pub enum LocateError {
    #[error("query dimension {query} does not match map dimension {map} (incompatible rosters)")]
    DimensionMismatch { query: usize, map: usize },
    #[error("k must be at least 1")]
    BadK,
    #[error("epsilon {0} must be a non-negative finite number")]
    InvalidEpsilon(f64),
    #[error("cannot estimate a position from zero neighbors")]
    NoNeighbors,
    #[error("neighbor index {0} outside the radio map")]
    BadNeighborIndex(usize),
}

/// Exhaustive k-nearest search; the oracle the kd-tree is checked against.
///
/// Returns the `k` entries closest to `q` in signal space, ascending by
/// (distance, entry index); equal distances order by lower index. `k` is
/// clamped to the map size.
pub fn brute_force_k_nearest(
    map: &RadioMap,
    q: &Fingerprint,
    k: usize,
) -> Result<Vec<(usize, f64)>, LocateError> {
    if k == 0 {
        return Err(LocateError::BadK);
    }
    if q.dim() != map.dim() {
        return Err(LocateError::DimensionMismatch {
            query: q.dim(),
            map: map.dim(),
        });
    }
    let mut all: Vec<(usize, f64)> = map
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| (i, dist2_slices(q.values(), e.fingerprint.values())))
        .collect();
    all.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k.min(map.len()));
    Ok(all.into_iter().map(|(i, d2)| (i, d2.sqrt())).collect())
}

/// Leaf bucket size; subsets at most this large stop splitting.
const LEAF_SIZE: usize = 8;

#[derive(Debug)]
enum Node {
    /// Children: left is the next node in the arena, right is stored.
    Split { dim: u32, value: f64, right: u32 },
    /// Range into `NNIndex::leaf_entries`.
    Leaf { start: u32, len: u32 },
}

/// A kd-tree over a radio map's fingerprints.
///
/// Split rule: the dimension of maximum spread, at the median coordinate.
/// The build is deterministic for a given map, and the index is immutable
/// afterwards, so concurrent queries from many threads are safe.
#[derive(Debug)]
pub struct NNIndex {
    dim: usize,
    /// Fingerprint data, `len * dim`, flat in entry order.
    points: Vec<f64>,
    nodes: Vec<Node>,
    leaf_entries: Vec<u32>,
}

/// Builds a kd-tree index over all of `map`'s entries.
pub fn build_index(map: &RadioMap) -> NNIndex {
    NNIndex::build(map)
}

impl NNIndex {
    pub fn build(map: &RadioMap) -> Self {
        let dim = map.dim();
        let n = map.len();
        let mut points = Vec::with_capacity(n * dim);
        for e in map.entries() {
            points.extend_from_slice(e.fingerprint.values());
        }
        let mut index = NNIndex {
            dim,
            points,
            nodes: Vec::new(),
            leaf_entries: Vec::with_capacity(n),
        };
        let mut subset: Vec<u32> = (0..n as u32).collect();
        index.build_node(&mut subset);
        index
    }

    /// Number of indexed entries.
    pub fn len(&self) -> usize {
        self.points.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn point(&self, entry: u32) -> &[f64] {
        let s = entry as usize * self.dim;
        &self.points[s..s + self.dim]
    }

    fn build_node(&mut self, subset: &mut [u32]) -> usize {
        let pos = self.nodes.len();
        if subset.len() <= LEAF_SIZE {
            let start = self.leaf_entries.len() as u32;
            self.leaf_entries.extend_from_slice(subset);
            self.nodes.push(Node::Leaf {
                start,
                len: subset.len() as u32,
            });
            return pos;
        }

        // Dimension of maximum spread; lowest dimension wins ties.
        let mut split_dim = 0;
        let mut best_spread = f64::NEG_INFINITY;
        for d in 0..self.dim {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &e in subset.iter() {
                let v = self.point(e)[d];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best_spread {
                best_spread = hi - lo;
                split_dim = d;
            }
        }

        // Median split; ordering by (coordinate, entry index) keeps the
        // build deterministic even with duplicate fingerprints.
        subset.sort_unstable_by(|&a, &b| {
            self.point(a)[split_dim]
                .total_cmp(&self.point(b)[split_dim])
                .then(a.cmp(&b))
        });
        let mid = subset.len() / 2;
        let value = self.point(subset[mid])[split_dim];
        self.nodes.push(Node::Split {
            dim: split_dim as u32,
            value,
            right: 0,
        });
        let (left, right) = subset.split_at_mut(mid);
        let left_pos = self.build_node(left);
        debug_assert_eq!(left_pos, pos + 1);
        let right_pos = self.build_node(right);
        if let Node::Split { right: r, .. } = &mut self.nodes[pos] {
            *r = right_pos as u32;
        }
        pos
    }

    /// Returns the k nearest entries to `q`, ascending by (distance, entry
    /// index), with `k` clamped to the index size.
    ///
    /// `epsilon = 0` reproduces [`brute_force_k_nearest`] exactly.
    /// `epsilon > 0` allows each returned i-th distance to exceed the true
    /// i-th distance by at most a (1+epsilon) factor, in exchange for
    /// pruning more of the tree.
    pub fn k_nearest(
        &self,
        q: &Fingerprint,
        k: usize,
        epsilon: f64,
    ) -> Result<Vec<(usize, f64)>, LocateError> {
        if k == 0 {
            return Err(LocateError::BadK);
        }
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(LocateError::InvalidEpsilon(epsilon));
        }
        if q.dim() != self.dim {
            return Err(LocateError::DimensionMismatch {
                query: q.dim(),
                map: self.dim,
            });
        }
        let k = k.min(self.len());
        let error_bound2 = (1.0 + epsilon) * (1.0 + epsilon);
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, q.values(), k, error_bound2, &mut heap);
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| (c.idx as usize, c.d2.sqrt()))
            .collect())
    }

    fn search(
        &self,
        node: usize,
        q: &[f64],
        k: usize,
        error_bound2: f64,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, len } => {
                for &e in &self.leaf_entries[start as usize..(start + len) as usize] {
                    let cand = Candidate {
                        d2: dist2_slices(q, self.point(e)),
                        idx: e,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if let Some(&worst) = heap.peek() {
                        if cand < worst {
                            heap.pop();
                            heap.push(cand);
                        }
                    }
                }
            }
            Node::Split { dim, value, right } => {
                let diff = q[dim as usize] - value;
                let (near, far) = if diff < 0.0 {
                    (node + 1, right as usize)
                } else {
                    (right as usize, node + 1)
                };
                self.search(near, q, k, error_bound2, heap);
                // The splitting plane's squared distance lower-bounds every
                // far-side candidate. Visit on equality: a far point tied
                // with the current worst can still win on index order.
                let plane_d2 = diff * diff;
                let visit_far = match heap.peek() {
                    Some(worst) if heap.len() == k => plane_d2 * error_bound2 <= worst.d2,
                    _ => true,
                };
                if visit_far {
                    self.search(far, q, k, error_bound2, heap);
                }
            }
        }
    }
}

/// Search candidate ordered by (squared distance, entry index); the max-heap
/// keeps the current worst on top.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    idx: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Averages the positions of the given neighbors into a point estimate.
///
/// The estimate is the unweighted arithmetic mean of the neighbor entry
/// positions; with a single neighbor it is that entry's position exactly.
pub fn estimate_position(
    map: &RadioMap,
    neighbors: &[(usize, f64)],
) -> Result<PositionEstimate, LocateError> {
    if neighbors.is_empty() {
        return Err(LocateError::NoNeighbors);
    }
    let mut sx = 0.0;
    let mut sy = 0.0;
    for &(i, _) in neighbors {
        let entry = map
            .entries()
            .get(i)
            .ok_or(LocateError::BadNeighborIndex(i))?;
        sx += entry.pos.0;
        sy += entry.pos.1;
    }
    let n = neighbors.len() as f64;
    Ok(PositionEstimate {
        pos: (sx / n, sy / n),
        neighbors: neighbors.to_vec(),
        k_used: neighbors.len(),
    })
}

/// Full localization chain: align the scan to the map roster, find the k
/// nearest map entries, and average their positions.
pub fn locate(
    map: &RadioMap,
    index: &NNIndex,
    obs: &ScanObservation,
    k: usize,
    epsilon: f64,
) -> Result<PositionEstimate, LocateError> {
    if k == 0 {
        return Err(LocateError::BadK);
    }
    let fp = align_fingerprint(obs, map.roster());
    let neighbors = index.k_nearest(&fp, k, epsilon)?;
    estimate_position(map, &neighbors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AccessPoint, Essid, Mac, MapEntry, ScanMode, ScanReading};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn roster(dim: usize) -> Vec<AccessPoint> {
        (0..dim)
            .map(|i| {
                AccessPoint::new(
                    Mac::new([2, 0, 0, 0, (i / 256) as u8, (i % 256) as u8]),
                    format!("n{i}"),
                    false,
                    [i as f64, 0.0, 3.0],
                )
            })
            .collect()
    }

    fn map_from_fps(fps: Vec<Vec<f64>>) -> RadioMap {
        let dim = fps[0].len();
        let entries = fps
            .into_iter()
            .enumerate()
            .map(|(i, v)| MapEntry {
                pos: (i as f64, (i * 2) as f64),
                fingerprint: Fingerprint::new(v).unwrap(),
            })
            .collect();
        RadioMap::new(roster(dim), 1.0, entries).unwrap()
    }

    /// Random rssi on a 0.25 lattice: exactly representable, so offsets and
    /// ties behave like exact arithmetic.
    fn lattice_rssi(rng: &mut ChaCha8Rng) -> f64 {
        -100.0 + 0.25 * f64::from(rng.gen_range(0..=360u32))
    }

    fn random_map(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> RadioMap {
        let mut fps: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            // Occasional duplicates stress the (distance, index) tiebreak.
            if i > 0 && rng.gen_bool(0.2) {
                let j = rng.gen_range(0..i);
                fps.push(fps[j].clone());
            } else {
                fps.push((0..dim).map(|_| lattice_rssi(rng)).collect());
            }
        }
        map_from_fps(fps)
    }

    fn random_query(rng: &mut ChaCha8Rng, map: &RadioMap) -> Fingerprint {
        if rng.gen_bool(0.15) {
            let i = rng.gen_range(0..map.len());
            map.entries()[i].fingerprint.clone()
        } else {
            Fingerprint::new((0..map.dim()).map(|_| lattice_rssi(rng)).collect()).unwrap()
        }
    }

    #[test]
    fn single_entry_map_always_returns_it() {
        let map = map_from_fps(vec![vec![-55.0, -66.0]]);
        let index = build_index(&map);
        let q = Fingerprint::new(vec![-10.0, -100.0]).unwrap();
        let got = index.k_nearest(&q, 3, 0.0).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].0, 0);
    }

    #[test]
    fn exact_query_hits_its_own_entry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let map = random_map(&mut rng, 40, 6);
        let q = map.entries()[5].fingerprint.clone();
        let got = brute_force_k_nearest(&map, &q, 1).unwrap();
        // Entry 5 may share its fingerprint with an earlier duplicate; either
        // way the hit is at distance zero.
        assert_eq!(got[0].1, 0.0);
        assert_eq!(
            map.entries()[got[0].0].fingerprint,
            map.entries()[5].fingerprint
        );
    }

    #[test]
    fn k_equal_to_map_size_returns_everything_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let map = random_map(&mut rng, 25, 4);
        let q = random_query(&mut rng, &map);
        let got = brute_force_k_nearest(&map, &q, 25).unwrap();
        assert_eq!(got.len(), 25);
        assert!(got.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn equidistant_entries_order_by_index() {
        // Entries 0 and 1 both at distance 5 from q.
        let map = map_from_fps(vec![
            vec![-50.0, -60.0],
            vec![-56.0, -68.0],
            vec![-90.0, -90.0],
        ]);
        let q = Fingerprint::new(vec![-53.0, -64.0]).unwrap();
        let got = brute_force_k_nearest(&map, &q, 2).unwrap();
        assert_eq!(got[0], (0, 5.0));
        assert_eq!(got[1], (1, 5.0));
        let index = build_index(&map);
        assert_eq!(index.k_nearest(&q, 2, 0.0).unwrap(), got);
    }

    #[test]
    fn index_matches_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.gen_range(1..=120);
            let dim = rng.gen_range(1..=10);
            let map = random_map(&mut rng, n, dim);
            let index = build_index(&map);
            let q = random_query(&mut rng, &map);
            let k = rng.gen_range(1..=8);
            let expected = brute_force_k_nearest(&map, &q, k).unwrap();
            let got = index.k_nearest(&q, k, 0.0).unwrap();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn epsilon_bound_holds_and_zero_distance_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let map = random_map(&mut rng, 60, 5);
            let index = build_index(&map);
            let q = random_query(&mut rng, &map);
            let oracle = brute_force_k_nearest(&map, &q, 4).unwrap();
            for eps in [0.1, 0.5, 1.0] {
                let got = index.k_nearest(&q, 4, eps).unwrap();
                assert_eq!(got.len(), oracle.len());
                for (g, o) in got.iter().zip(&oracle) {
                    assert!(
                        g.1 <= (1.0 + eps) * o.1 + 1e-12,
                        "eps {eps}: {} > (1+eps) * {}",
                        g.1,
                        o.1
                    );
                }
            }
        }
        // A zero distance cannot be inflated by any epsilon.
        let map = random_map(&mut rng, 30, 4);
        let index = build_index(&map);
        let q = map.entries()[12].fingerprint.clone();
        let got = index.k_nearest(&q, 1, 5.0).unwrap();
        assert_eq!(got[0].1, 0.0);
    }

    #[test]
    fn estimate_single_neighbor_is_its_position() {
        let entries = vec![MapEntry {
            pos: (10.0, 20.0),
            fingerprint: Fingerprint::new(vec![-50.0]).unwrap(),
        }];
        let map = RadioMap::new(roster(1), 1.0, entries).unwrap();
        let est = estimate_position(&map, &[(0, 0.0)]).unwrap();
        assert_eq!(est.pos, (10.0, 20.0));
        assert_eq!(est.k_used, 1);
    }

    #[test]
    fn estimate_is_the_centroid() {
        let entries = [(0.0, 0.0), (3.0, 0.0), (0.0, 3.0)]
            .iter()
            .enumerate()
            .map(|(i, &pos)| MapEntry {
                pos,
                fingerprint: Fingerprint::new(vec![-50.0 - i as f64]).unwrap(),
            })
            .collect();
        let map = RadioMap::new(roster(1), 1.0, entries).unwrap();
        let est = estimate_position(&map, &[(0, 1.0), (1, 2.0), (2, 3.0)]).unwrap();
        assert_eq!(est.pos, (1.0, 1.0));
    }

    #[test]
    fn estimate_rejects_empty_and_bad_indices() {
        let map = map_from_fps(vec![vec![-50.0]]);
        assert_eq!(
            estimate_position(&map, &[]).unwrap_err(),
            LocateError::NoNeighbors
        );
        assert_eq!(
            estimate_position(&map, &[(3, 0.0)]).unwrap_err(),
            LocateError::BadNeighborIndex(3)
        );
    }

    #[test]
    fn estimate_stays_in_neighbor_bounding_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let map = random_map(&mut rng, 30, 4);
            let index = build_index(&map);
            let q = random_query(&mut rng, &map);
            let neighbors = index.k_nearest(&q, 5, 0.0).unwrap();
            let est = estimate_position(&map, &neighbors).unwrap();
            let xs: Vec<f64> = neighbors
                .iter()
                .map(|&(i, _)| map.entries()[i].pos.0)
                .collect();
            let ys: Vec<f64> = neighbors
                .iter()
                .map(|&(i, _)| map.entries()[i].pos.1)
                .collect();
            let (min_x, max_x) = (
                xs.iter().cloned().fold(f64::MAX, f64::min),
                xs.iter().cloned().fold(f64::MIN, f64::max),
            );
            let (min_y, max_y) = (
                ys.iter().cloned().fold(f64::MAX, f64::min),
                ys.iter().cloned().fold(f64::MIN, f64::max),
            );
            assert!(est.pos.0 >= min_x - 1e-12 && est.pos.0 <= max_x + 1e-12);
            assert!(est.pos.1 >= min_y - 1e-12 && est.pos.1 <= max_y + 1e-12);
        }
    }

    #[test]
    fn constant_offset_leaves_neighbor_order_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            // Lattice values with margin so a +/-4 dB shift stays in range.
            let dim = rng.gen_range(1..=6);
            let n = rng.gen_range(2..=60);
            let fps: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    (0..dim)
                        .map(|_| -90.0 + 0.25 * f64::from(rng.gen_range(0..=280u32)))
                        .collect()
                })
                .collect();
            let offset = 0.25 * f64::from(rng.gen_range(0..=16u32)) - 2.0;
            let shifted: Vec<Vec<f64>> = fps
                .iter()
                .map(|fp| fp.iter().map(|v| v + offset).collect())
                .collect();
            let q: Vec<f64> = (0..dim)
                .map(|_| -90.0 + 0.25 * f64::from(rng.gen_range(0..=280u32)))
                .collect();
            let q_shifted: Vec<f64> = q.iter().map(|v| v + offset).collect();

            let base = map_from_fps(fps);
            let moved = map_from_fps(shifted);
            let k = rng.gen_range(1..=5);
            let a = brute_force_k_nearest(&base, &Fingerprint::new(q).unwrap(), k).unwrap();
            let b =
                brute_force_k_nearest(&moved, &Fingerprint::new(q_shifted).unwrap(), k).unwrap();
            let idx = |v: &[(usize, f64)]| v.iter().map(|&(i, _)| i).collect::<Vec<_>>();
            assert_eq!(idx(&a), idx(&b));
        }
    }

    #[test]
    fn locate_composes_the_chain() {
        let map = map_from_fps(vec![
            vec![-50.0, -60.0],
            vec![-70.0, -80.0],
            vec![-90.0, -95.0],
        ]);
        let index = build_index(&map);
        let readings = vec![
            ScanReading {
                mac: map.roster()[0].mac,
                essid: Essid::named("n0"),
                rssi: -70.0,
            },
            ScanReading {
                mac: map.roster()[1].mac,
                essid: Essid::named("n1"),
                rssi: -80.0,
            },
        ];
        let obs = ScanObservation::new(readings, ScanMode::Active).unwrap();
        let est = locate(&map, &index, &obs, 1, 0.0).unwrap();
        assert_eq!(est.neighbors[0], (1, 0.0));
        assert_eq!(est.pos, map.entries()[1].pos);

        // k above the map size clamps; k_used reports the truth.
        let est = locate(&map, &index, &obs, 10, 0.0).unwrap();
        assert_eq!(est.k_used, 3);

        assert_eq!(
            locate(&map, &index, &obs, 0, 0.0).unwrap_err(),
            LocateError::BadK
        );
    }

    #[test]
    fn empty_observation_still_locates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let map = random_map(&mut rng, 20, 4);
        let index = build_index(&map);
        let obs = ScanObservation::empty(ScanMode::Passive);
        let est = locate(&map, &index, &obs, 3, 0.0).unwrap();
        assert_eq!(est.k_used, 3);
        // The aligned query is all-floor; the neighbors are the entries
        // nearest to the floor vector.
        let floor = Fingerprint::new(vec![-100.0; 4]).unwrap();
        let expected = brute_force_k_nearest(&map, &floor, 3).unwrap();
        assert_eq!(est.neighbors, expected);
    }

    #[test]
    fn concurrent_queries_share_one_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let map = random_map(&mut rng, 200, 6);
        let index = build_index(&map);
        let queries: Vec<Fingerprint> = (0..32).map(|_| random_query(&mut rng, &map)).collect();
        let expected: Vec<_> = queries
            .iter()
            .map(|q| brute_force_k_nearest(&map, q, 3).unwrap())
            .collect();
        std::thread::scope(|s| {
            for chunk in queries.chunks(8).zip(expected.chunks(8)) {
                let (qs, exp) = chunk;
                let index = &index;
                s.spawn(move || {
                    for (q, e) in qs.iter().zip(exp) {
                        assert_eq!(&index.k_nearest(q, 3, 0.0).unwrap(), e);
                    }
                });
            }
        });
    }
}
