//! Channel charting by ISOMAP over the phase-insensitive channel distance.
//!
//! `isomap_init` chains the four steps: pairwise distances, a symmetrized
//! k-nearest-neighbor graph, all-pairs geodesic distances and classical MDS.

mod export;

pub use export::{
    affine_alignment, read_chart_csv, read_chart_json, write_chart_csv, write_chart_json, AffineAlignment,
};

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

pub const DEFAULT_NEIGHBORS: usize = 10;

/// `sqrt(2 - 2 |<h1, h2>| / (||h1|| ||h2||))`: the distance between the unit
/// vectors of `h1` and `h2` after the best global phase rotation.
pub fn phase_insensitive_distance<T: Scalar>(h1: &[Complex<T>], h2: &[Complex<T>]) -> Result<T> {
    if h1.len() != h2.len() {
        return Err(Error::Dimension {
            what: "channel length",
            expected: h1.len(),
            found: h2.len(),
        });
    }
    let n1 = linalg::norm(h1);
    let n2 = linalg::norm(h2);
    if !(n1 > T::zero()) || !(n2 > T::zero()) {
        return Err(Error::domain("phase-insensitive distance of a zero-norm channel"));
    }
    Ok(distance_from_parts(h1, h2, n1, n2))
}

/// Evaluates `‖h1 e^{jφ}/‖h1‖ − h2/‖h2‖‖` at the optimal phase directly,
/// avoiding the cancellation of `sqrt(2 − 2 cos)` near zero.
#[inline]
fn distance_from_parts<T: Scalar>(h1: &[Complex<T>], h2: &[Complex<T>], n1: T, n2: T) -> T {
    let p = linalg::inner(h1, h2);
    let abs = p.norm();
    if !(abs > T::zero()) {
        return T::lit(2.0).sqrt();
    }
    let rot = p / abs;
    let (s1, s2) = (n1.recip(), n2.recip());
    h1.iter()
        .zip(h2)
        .map(|(a, b)| (*a * rot * s1 - *b * s2).norm_sqr())
        .fold(T::zero(), |acc, x| acc + x)
        .sqrt()
}

/// Symmetric matrix of nonnegative distances with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix<T> {
    entries: Array2<T>,
}

impl<T: Scalar> DistanceMatrix<T> {
    /// Checks shape, symmetry (1e-12 relative), nonnegativity and the zero diagonal.
    pub fn new(entries: Array2<T>) -> Result<Self> {
        let (r, c) = entries.dim();
        if r != c {
            return Err(Error::Dimension {
                what: "distance matrix columns",
                expected: r,
                found: c,
            });
        }
        let tol = T::lit(1e-12);
        for i in 0..r {
            if entries[[i, i]] != T::zero() {
                return Err(Error::domain(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let (a, b) = (entries[[i, j]], entries[[j, i]]);
                if !(a >= T::zero()) || !(b >= T::zero()) {
                    return Err(Error::domain(format!("negative or NaN distance at ({i}, {j})")));
                }
                if (a - b).abs() > tol * a.max(b).max(T::one()) {
                    return Err(Error::domain(format!("asymmetric distance at ({i}, {j})")));
                }
            }
        }
        Ok(DistanceMatrix { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[[i, j]]
    }

    pub fn entries(&self) -> &Array2<T> {
        &self.entries
    }
}

/// All pairwise phase-insensitive distances; needs at least two channels.
pub fn pairwise_distances<T: Scalar, V: AsRef<[Complex<T>]> + Sync>(channels: &[V]) -> Result<DistanceMatrix<T>> {
    let n = channels.len();
    if n < 2 {
        return Err(Error::config(format!("pairwise distances need >= 2 channels, got {n}")));
    }
    let dim = channels[0].as_ref().len();
    let mut norms = Vec::with_capacity(n);
    for (i, h) in channels.iter().enumerate() {
        let h = h.as_ref();
        if h.len() != dim {
            return Err(Error::Dimension {
                what: "channel length",
                expected: dim,
                found: h.len(),
            });
        }
        let nrm = linalg::norm(h);
        if !(nrm > T::zero()) {
            return Err(Error::domain(format!("channel {i} has zero norm")));
        }
        norms.push(nrm);
    }
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let hi = channels[i].as_ref();
            (0..n)
                .map(|j| {
                    if j == i {
                        T::zero()
                    } else {
                        distance_from_parts(hi, channels[j].as_ref(), norms[i], norms[j])
                    }
                })
                .collect()
        })
        .collect();
    let mut entries = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            // Mirror the upper triangle so the matrix is exactly symmetric.
            entries[[i, j]] = if i <= j { rows[i][j] } else { rows[j][i] };
        }
    }
    Ok(DistanceMatrix { entries })
}

/// Undirected weighted graph over the points of a distance matrix.
#[derive(Debug, Clone)]
pub struct NeighborGraph<'a, T> {
    dist: &'a DistanceMatrix<T>,
    k: usize,
    adjacency: Vec<Vec<(usize, T)>>,
}

impl<'a, T: Scalar> NeighborGraph<'a, T> {
    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Neighbors of `i` with edge weights, sorted by neighbor index.
    pub fn neighbors(&self, i: usize) -> &[(usize, T)] {
        &self.adjacency[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search_by_key(&j, |e| e.0).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    fn add_edge(&mut self, i: usize, j: usize) {
        let w = self.dist.get(i, j);
        for (a, b) in [(i, j), (j, i)] {
            if let Err(pos) = self.adjacency[a].binary_search_by_key(&b, |e| e.0) {
                self.adjacency[a].insert(pos, (b, w));
            }
        }
    }
}

/// Edge `(i, j)` exists iff `j` is among the `k` nearest of `i` or vice versa.
/// Ties at equal distance go to the smaller index.
pub fn knn_graph<T: Scalar>(dist: &DistanceMatrix<T>, k: usize) -> Result<NeighborGraph<'_, T>> {
    let n = dist.len();
    if k == 0 || k >= n {
        return Err(Error::config(format!(
            "neighbor count k={k} must satisfy 1 <= k < n={n}"
        )));
    }
    let nearest: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            cand.sort_by(|&a, &b| {
                dist.get(i, a)
                    .partial_cmp(&dist.get(i, b))
                    .unwrap_or(Ordering::Equal)
                    .then(a.cmp(&b))
            });
            cand.truncate(k);
            cand
        })
        .collect();
    let mut graph = NeighborGraph {
        dist,
        k,
        adjacency: vec![Vec::new(); n],
    };
    for (i, nn) in nearest.iter().enumerate() {
        for &j in nn {
            graph.add_edge(i, j);
        }
    }
    Ok(graph)
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    // Reversed for a min-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

fn dijkstra<T: Scalar>(adjacency: &[Vec<(usize, T)>], source: usize) -> Vec<f64> {
    let mut best = vec![f64::INFINITY; adjacency.len()];
    let mut heap = BinaryHeap::new();
    best[source] = 0.0;
    heap.push(HeapItem(0.0, source));
    while let Some(HeapItem(d, u)) = heap.pop() {
        if d > best[u] {
            continue;
        }
        for &(v, w) in &adjacency[u] {
            let nd = d + w.as_f64();
            if nd < best[v] {
                best[v] = nd;
                heap.push(HeapItem(nd, v));
            }
        }
    }
    best
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Connects components by repeatedly adding the globally shortest
/// inter-component edge of the underlying distance matrix. Returns the
/// number of bridges added.
pub fn bridge_components<T: Scalar>(graph: &mut NeighborGraph<'_, T>) -> usize {
    let n = graph.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for &(j, _) in &graph.adjacency[i] {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a] = b;
            }
        }
    }
    let mut bridges = 0;
    loop {
        let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
        let mut best: Option<(T, usize, usize)> = None;
        for i in 0..n {
            for j in i + 1..n {
                if roots[i] != roots[j] {
                    let d = graph.dist.get(i, j);
                    if best.is_none_or(|(bd, _, _)| d < bd) {
                        best = Some((d, i, j));
                    }
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        graph.add_edge(i, j);
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        parent[a] = b;
        bridges += 1;
    }
    bridges
}

/// All-pairs shortest-path lengths (one Dijkstra run per source). A
/// disconnected graph is bridged first, so every entry is finite.
pub fn geodesic_distances<T: Scalar>(graph: &NeighborGraph<'_, T>) -> DistanceMatrix<T> {
    let mut graph = graph.clone();
    bridge_components(&mut graph);
    let n = graph.len();
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|s| dijkstra(&graph.adjacency, s)).collect();
    let mut entries = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            // Average the two directions so rounding cannot break symmetry.
            entries[[i, j]] = T::lit(0.5 * (rows[i][j] + rows[j][i]));
        }
    }
    DistanceMatrix { entries }
}

/// Chart locations, one row per calibration channel (the transpose of the
/// `d x N` matrix `Z`).
#[derive(Debug, Clone, PartialEq)]
pub struct Chart<T> {
    pub locations: Array2<T>,
    /// The `d` largest eigenvalues of the centered Gram matrix, descending.
    pub eigenvalues: Vec<f64>,
    /// Set when fewer than `d` eigenvalues were nonnegative; the matching
    /// coordinates are zero.
    pub degenerate: bool,
}

impl<T: Scalar> Chart<T> {
    pub fn from_locations(locations: Array2<T>) -> Result<Self> {
        if locations.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("chart contains non-finite coordinates"));
        }
        Ok(Chart {
            locations,
            eigenvalues: Vec::new(),
            degenerate: false,
        })
    }

    pub fn len(&self) -> usize {
        self.locations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.locations.ncols()
    }
}

/// Classical (Torgerson) MDS: eigendecomposition of `-1/2 J (D o D) J`.
pub fn classical_mds<T: Scalar>(dist: &DistanceMatrix<T>, d: usize) -> Result<Chart<T>> {
    let n = dist.len();
    if d == 0 || d >= n {
        return Err(Error::config(format!(
            "embedding dimension d={d} must satisfy 1 <= d < n={n}"
        )));
    }
    let sq = DMatrix::from_fn(n, n, |i, j| {
        let x = dist.get(i, j).as_f64();
        x * x
    });
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let gram = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand));
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda_max = eig.eigenvalues[order[0]].abs().max(f64::MIN_POSITIVE);

    let mut locations = Array2::zeros((n, d));
    let mut eigenvalues = Vec::with_capacity(d);
    let mut degenerate = false;
    for (axis, &idx) in order.iter().take(d).enumerate() {
        let lambda = eig.eigenvalues[idx];
        eigenvalues.push(lambda);
        // Rounding leaves the structural zero eigenvalue slightly signed.
        if lambda < -1e-10 * lambda_max {
            degenerate = true;
            continue;
        }
        let scale = lambda.max(0.0).sqrt();
        let v = eig.eigenvectors.column(idx);
        let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let sign = v.iter().find(|x| x.abs() > 1e-12 * vmax).map_or(1.0, |x| x.signum());
        for i in 0..n {
            locations[[i, axis]] = T::lit(sign * scale * v[i]);
        }
    }
    Ok(Chart {
        locations,
        eigenvalues,
        degenerate,
    })
}

/// ISOMAP chart of a calibration set.
pub fn isomap_init<T: Scalar, V: AsRef<[Complex<T>]> + Sync>(channels: &[V], k: usize, d: usize) -> Result<Chart<T>> {
    let dist = pairwise_distances(channels)?;
    let graph = knn_graph(&dist, k)?;
    let geo = geodesic_distances(&graph);
    classical_mds(&geo, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    type C = Complex<f64>;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    fn matrix(rows: &[&[f64]]) -> DistanceMatrix<f64> {
        let n = rows.len();
        DistanceMatrix::new(Array2::from_shape_fn((n, n), |(i, j)| rows[i][j])).unwrap()
    }

    #[test]
    fn distance_reference_values() {
        let h = [c(1.0, 2.0), c(-0.5, 0.3)];
        let rot = C::from_polar(1.0, 0.7);
        let hr: Vec<C> = h.iter().map(|z| z * rot).collect();
        assert!(phase_insensitive_distance(&h, &hr).unwrap() < 1e-7);
        let e1 = [c(1.0, 0.0), c(0.0, 0.0)];
        let e2 = [c(0.0, 0.0), c(1.0, 0.0)];
        let d = phase_insensitive_distance(&e1, &e2).unwrap();
        assert!((d - std::f64::consts::SQRT_2).abs() < 1e-12);
        let ones = [c(1.0, 0.0), c(1.0, 0.0)];
        let d = phase_insensitive_distance(&e1, &ones).unwrap();
        assert!((d - (2.0 - 2.0 / 2f64.sqrt()).sqrt()).abs() < 1e-12);
        assert!((d - 0.7653669).abs() < 1e-7);
    }

    #[test]
    fn zero_channel_is_domain_error() {
        let z = [c(0.0, 0.0); 2];
        assert!(matches!(
            phase_insensitive_distance(&z, &[c(1.0, 0.0); 2]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            pairwise_distances(&[vec![c(1.0, 0.0)], vec![c(0.0, 0.0)]]),
            Err(Error::Domain(m)) if m.contains("channel 1")
        ));
    }

    #[test]
    fn pairwise_matches_scalar_calls() {
        let chans = vec![
            vec![c(1.0, 0.5), c(0.2, -1.0)],
            vec![c(-0.3, 0.1), c(0.9, 0.9)],
            vec![c(0.0, 1.0), c(1.0, 0.0)],
        ];
        let m = pairwise_distances(&chans).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let direct = if i == j {
                    0.0
                } else {
                    phase_insensitive_distance(&chans[i], &chans[j]).unwrap()
                };
                assert!((m.get(i, j) - direct).abs() < 1e-15);
            }
        }
        let same = pairwise_distances(&[vec![c(1.0, 1.0)], vec![c(1.0, 1.0)]]).unwrap();
        assert!(same.entries().iter().all(|&x| x.abs() < 1e-7));
        assert!(pairwise_distances(&chans[..1]).is_err());
    }

    #[test]
    fn knn_chain_and_complete() {
        let m = matrix(&[&[0.0, 1.0, 2.0], &[1.0, 0.0, 1.0], &[2.0, 1.0, 0.0]]);
        let g = knn_graph(&m, 1).unwrap();
        // Node 1 is equidistant from 0 and 2; the tie goes to node 0.
        assert!(g.has_edge(0, 1) && g.has_edge(1, 2) && !g.has_edge(0, 2));
        let full = knn_graph(&m, 2).unwrap();
        assert_eq!(full.edge_count(), 3);
        assert!(knn_graph(&m, 3).is_err());
    }

    #[test]
    fn knn_tie_prefers_smaller_index() {
        let m = matrix(&[
            &[0.0, 1.0, 1.0, 1.0],
            &[1.0, 0.0, 5.0, 5.0],
            &[1.0, 5.0, 0.0, 5.0],
            &[1.0, 5.0, 5.0, 0.0],
        ]);
        let g = knn_graph(&m, 1).unwrap();
        // Nodes 1, 2, 3 all pick 0; node 0 picks 1 among three ties.
        assert_eq!(g.neighbors(0).iter().map(|e| e.0).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(g.edge_count(), 3);
    }

    #[test]
    fn geodesic_path_sum_and_bridging() {
        let m = matrix(&[&[0.0, 1.0, 2.0], &[1.0, 0.0, 1.0], &[2.0, 1.0, 0.0]]);
        let g = knn_graph(&m, 1).unwrap();
        assert_eq!(geodesic_distances(&g).get(0, 2), 2.0);

        // Two tight pairs far apart.
        let m = matrix(&[
            &[0.0, 0.1, 5.0, 6.0],
            &[0.1, 0.0, 4.0, 5.0],
            &[5.0, 4.0, 0.0, 0.1],
            &[6.0, 5.0, 0.1, 0.0],
        ]);
        let g = knn_graph(&m, 1).unwrap();
        assert_eq!(g.edge_count(), 2);
        let geo = geodesic_distances(&g);
        assert!(geo.entries().iter().all(|x| x.is_finite()));
        // Bridge is the 1-2 edge of length 4.
        assert!((geo.get(0, 3) - 4.2).abs() < 1e-12);
    }

    #[test]
    fn mds_three_point_line() {
        let m = matrix(&[&[0.0, 1.0, 2.0], &[1.0, 0.0, 1.0], &[2.0, 1.0, 0.0]]);
        let chart = classical_mds(&m, 1).unwrap();
        let z: Vec<f64> = chart.locations.column(0).to_vec();
        assert!((z[0] - 1.0).abs() < 1e-10 && z[1].abs() < 1e-10 && (z[2] + 1.0).abs() < 1e-10);
        assert!(!chart.degenerate);
    }

    #[test]
    fn mds_two_points() {
        let m = matrix(&[&[0.0, 2.0], &[2.0, 0.0]]);
        let chart = classical_mds(&m, 1).unwrap();
        assert!((chart.locations[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((chart.locations[[1, 0]] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn mds_reproduces_planar_points() {
        let pts: Array2<f64> = array![[0.0, 0.0], [3.0, 0.5], [1.0, 2.0], [-1.0, 1.5], [2.5, -2.0], [0.3, 0.9]];
        let n = pts.nrows();
        let m = DistanceMatrix::new(Array2::from_shape_fn((n, n), |(i, j)| {
            ((pts[[i, 0]] - pts[[j, 0]]).powi(2) + (pts[[i, 1]] - pts[[j, 1]]).powi(2)).sqrt()
        }))
        .unwrap();
        let chart = classical_mds(&m, 2).unwrap();
        for i in 0..n {
            for j in 0..n {
                let z = &chart.locations;
                let dz = ((z[[i, 0]] - z[[j, 0]]).powi(2) + (z[[i, 1]] - z[[j, 1]]).powi(2)).sqrt();
                assert!((dz - m.get(i, j)).abs() < 1e-8);
            }
        }
        for axis in 0..2 {
            assert!(chart.locations.column(axis).sum().abs() < 1e-9);
        }
    }

    #[test]
    fn mds_flags_missing_positive_eigenvalues() {
        // Non-Euclidean: centered Gram eigenvalues ~ (6.38, 6, 0, -0.78, -2).
        let m = matrix(&[
            &[0.0, 3.0, 1.0, 1.0, 3.0],
            &[3.0, 0.0, 1.0, 3.0, 2.0],
            &[1.0, 1.0, 0.0, 2.0, 3.0],
            &[1.0, 3.0, 2.0, 0.0, 1.0],
            &[3.0, 2.0, 3.0, 1.0, 0.0],
        ]);
        let chart = classical_mds(&m, 3).unwrap();
        assert!(!chart.degenerate);
        assert!(chart.locations.column(2).iter().all(|x| x.abs() < 1e-6));
        let chart = classical_mds(&m, 4).unwrap();
        assert!(chart.degenerate);
        assert!(chart.locations.column(3).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn isomap_chain_orders_middle_point() {
        let chans: Vec<Vec<C>> = [0.0, 0.4, 0.8]
            .iter()
            .map(|&t: &f64| vec![c(t.cos(), 0.0), c(t.sin(), 0.0)])
            .collect();
        let chart = isomap_init(&chans, 1, 1).unwrap();
        let z = chart.locations.column(0);
        assert!((z[0] - z[1]) * (z[1] - z[2]) > 0.0);
    }
}
