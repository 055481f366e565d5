//! Seeded K-means (Lloyd iterations, k-means++ seeding, best of several
//! restarts) and nearest-to-centroid representative selection.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClusterError {
    #[error("no points to cluster")]
    NoPoints,
    #[error("K must be positive")]
    ZeroK,
    #[error("point {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iterations: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster id per point. Ids are ordered by each cluster's lowest member
    /// index.
    pub assignments: Vec<usize>,
    /// Member closest to each centroid, by cluster id.
    pub representatives: Vec<usize>,
    pub sse: f64,
    pub iterations_run: usize,
    /// SSE after every Lloyd iteration, one trace per restart.
    pub restart_traces: Vec<Vec<f64>>,
}

impl ClusteringResult {
    /// Effective K (may be below the requested K for degenerate input).
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cluster)
            .map(|(i, _)| i)
            .collect()
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    points
        .iter()
        .map(|p| p.iter().map(|x| (x + 0.0).to_bits()).collect::<Vec<u64>>())
        .collect::<HashSet<_>>()
        .len()
}

fn check_points(points: &[Vec<f64>]) -> Result<usize, ClusterError> {
    let first = points.first().ok_or(ClusterError::NoPoints)?;
    let dim = first.len();
    for (index, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(ClusterError::DimensionMismatch {
                index,
                expected: dim,
                got: p.len(),
            });
        }
    }
    Ok(dim)
}

/// Clusters with the default configuration (10 restarts, 100 iterations).
/// SSE, centroids, assignments and iterations of one restart.
type BestRun = (f64, Vec<Vec<f64>>, Vec<usize>, usize);

pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusteringResult, ClusterError> {
    kmeans_with(points, k, seed, KMeansConfig::default())
}

/// Runs `cfg.restarts` seeded Lloyd runs and keeps the lowest SSE (earliest
/// restart on ties). If `k` exceeds the number of distinct points, the
/// effective K is the distinct-point count.
pub fn kmeans_with(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    cfg: KMeansConfig,
) -> Result<ClusteringResult, ClusterError> {
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    check_points(points)?;
    let k = k.min(distinct_count(points));
    let mut best: Option<BestRun> = None;
    let mut traces = Vec::with_capacity(cfg.restarts.max(1));
    for restart in 0..cfg.restarts.max(1) {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (restart as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let init = plus_plus_init(points, k, &mut rng);
        let (centroids, assignments, trace) = lloyd(points, init, cfg.max_iterations);
        let sse = *trace.last().expect("at least one iteration");
        let iters = trace.len();
        traces.push(trace);
        if best.as_ref().is_none_or(|b| sse < b.0) {
            best = Some((sse, centroids, assignments, iters));
        }
    }
    let (sse, centroids, assignments, iterations_run) = best.expect("at least one restart");
    let (centroids, assignments) = canonicalize(centroids, assignments);
    let mut result = ClusteringResult {
        centroids,
        assignments,
        representatives: Vec::new(),
        sse,
        iterations_run,
        restart_traces: traces,
    };
    result.representatives = select_representatives(&result, points);
    Ok(result)
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    chosen = Some(i);
                    if u < w {
                        break;
                    }
                    u -= w;
                }
            }
            chosen.expect("positive total has a positive weight")
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].clone();
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn nearest(p: &[f64], centroids: &[Vec<f64>], current: Option<usize>) -> usize {
    let mut best = current.unwrap_or(0);
    let mut best_d = squared_distance(p, &centroids[best]);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(p, c);
        // only move when strictly closer; a fresh point takes the lowest index
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

fn means(
    points: &[Vec<f64>],
    assignments: &[usize],
    k: usize,
    dim: usize,
) -> Vec<Option<Vec<f64>>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        sums[a].iter_mut().zip(p).for_each(|(s, x)| *s += x);
    }
    sums.into_iter()
        .zip(counts)
        .map(|(mut s, n)| {
            (n > 0).then(|| {
                s.iter_mut().for_each(|x| *x /= n as f64);
                s
            })
        })
        .collect()
}

fn sse_of(points: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| squared_distance(p, &centroids[a]))
        .sum()
}

/// Lloyd iterations until assignments stop changing or `max_iterations`.
/// Returns final centroids, assignments and the per-iteration SSE trace.
fn lloyd(
    points: &[Vec<f64>],
    mut centroids: Vec<Vec<f64>>,
    max_iterations: usize,
) -> (Vec<Vec<f64>>, Vec<usize>, Vec<f64>) {
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignments: Vec<Option<usize>> = vec![None; points.len()];
    let mut trace = Vec::new();
    for _ in 0..max_iterations.max(1) {
        let mut changed = false;
        for (p, a) in points.iter().zip(assignments.iter_mut()) {
            let n = nearest(p, &centroids, *a);
            if *a != Some(n) {
                *a = Some(n);
                changed = true;
            }
        }
        let mut assign: Vec<usize> = assignments.iter().map(|a| a.expect("assigned")).collect();
        let mut updated = means(points, &assign, k, dim);
        // empty clusters take the point farthest from its own centroid,
        // never emptying another cluster in the process
        while let Some(empty) = updated.iter().position(Option::is_none) {
            let mut sizes = vec![0usize; k];
            assign.iter().for_each(|&a| sizes[a] += 1);
            let far = (0..points.len())
                .filter(|&i| sizes[assign[i]] >= 2)
                .max_by(|&i, &j| {
                    let di = squared_distance(&points[i], &centroids[assign[i]]);
                    let dj = squared_distance(&points[j], &centroids[assign[j]]);
                    di.total_cmp(&dj).then(j.cmp(&i))
                })
                .expect("points non-empty");
            assign[far] = empty;
            assignments[far] = Some(empty);
            centroids[empty] = points[far].clone();
            changed = true;
            updated = means(points, &assign, k, dim);
        }
        centroids = updated
            .into_iter()
            .map(|c| c.expect("no empty clusters"))
            .collect();
        trace.push(sse_of(points, &assign, &centroids));
        if !changed {
            break;
        }
    }
    let assign = assignments
        .into_iter()
        .map(|a| a.expect("assigned"))
        .collect();
    (centroids, assign, trace)
}

/// Renumbers clusters in order of their lowest member index.
fn canonicalize(centroids: Vec<Vec<f64>>, assignments: Vec<usize>) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut order = Vec::with_capacity(centroids.len());
    for &a in &assignments {
        if !order.contains(&a) {
            order.push(a);
        }
    }
    let mut remap = vec![usize::MAX; centroids.len()];
    for (new, &old) in order.iter().enumerate() {
        remap[old] = new;
    }
    let centroids = order.iter().map(|&old| centroids[old].clone()).collect();
    let assignments = assignments.iter().map(|&a| remap[a]).collect();
    (centroids, assignments)
}

/// For each cluster, the member closest (Euclidean) to its centroid; ties go
/// to the lowest point index. Ordered by cluster id.
pub fn select_representatives(result: &ClusteringResult, points: &[Vec<f64>]) -> Vec<usize> {
    let mut best: Vec<Option<(f64, usize)>> = vec![None; result.centroids.len()];
    for (i, (p, &c)) in points.iter().zip(&result.assignments).enumerate() {
        let d = squared_distance(p, &result.centroids[c]);
        match best[c] {
            Some((bd, _)) if bd <= d => {}
            _ => best[c] = Some((d, i)),
        }
    }
    best.into_iter()
        .map(|b| b.expect("clusters are non-empty").1)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Vec<Vec<f64>> {
        vec![
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![10.0, 10.0],
            vec![10.1, 10.0],
        ]
    }

    #[test]
    fn square_fixture() {
        let r = kmeans(&square(), 2, 0).unwrap();
        assert_eq!(r.assignments, vec![0, 0, 1, 1]);
        assert!((r.sse - 0.01).abs() < 1e-12);
        assert_eq!(r.representatives.len(), 2);
        assert!(r.representatives[0] < 2 && r.representatives[1] >= 2);
    }

    #[test]
    fn k_equals_n_gives_zero_sse() {
        let r = kmeans(&square(), 4, 3).unwrap();
        assert_eq!(r.k(), 4);
        assert_eq!(r.sse, 0.0);
        assert_eq!(r.representatives, vec![0, 1, 2, 3]);
    }

    #[test]
    fn identical_points_collapse_k() {
        let pts = vec![vec![1.0, 2.0]; 5];
        let r = kmeans(&pts, 3, 9).unwrap();
        assert_eq!(r.k(), 1);
        assert_eq!(r.sse, 0.0);
        assert_eq!(r.representatives, vec![0]);
    }

    #[test]
    fn tie_goes_to_lower_index() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 0.0]];
        let r = ClusteringResult {
            centroids: vec![vec![1.0, 0.0]],
            assignments: vec![0, 0],
            representatives: vec![],
            sse: 2.0,
            iterations_run: 1,
            restart_traces: vec![],
        };
        assert_eq!(select_representatives(&r, &pts), vec![0]);
    }

    #[test]
    fn errors() {
        assert_eq!(kmeans(&[], 2, 0), Err(ClusterError::NoPoints));
        assert_eq!(kmeans(&square(), 0, 0), Err(ClusterError::ZeroK));
        let bad = vec![vec![0.0, 0.0], vec![1.0]];
        assert!(matches!(
            kmeans(&bad, 1, 0),
            Err(ClusterError::DimensionMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn seeded_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..4).map(|_| rng.random::<f64>()).collect())
            .collect();
        let a = kmeans(&pts, 5, 11).unwrap();
        let b = kmeans(&pts, 5, 11).unwrap();
        assert_eq!(a, b);
        for trace in &a.restart_traces {
            for w in trace.windows(2) {
                assert!(w[1] <= w[0], "SSE increased: {w:?}");
            }
        }
        for (c, &rep) in a.representatives.iter().enumerate() {
            assert_eq!(a.assignments[rep], c);
        }
    }
}
