//! K-means clustering of event locations and the bandwidth derived from it.
//!
//! Lloyd iterations run until the summed squared centroid displacement drops
//! to `epsilon`; the bandwidth is then
//! `h = sqrt( (1/2K) * sum_k (1/n_k) * sum_{i in k} |s_i - c_k|^2 )`,
//! the root of half the average within-cluster mean squared distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Point;
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MAX_ITER: usize = 500;

/// Result of a K-means run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub centroids: Vec<Point>,
    /// Zero-based cluster of each input point.
    pub assignment: Vec<usize>,
    pub sizes: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Points the clustering was computed on.
    pub points: Vec<Point>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Within-cluster sum of squared distances.
    pub fn sse(&self) -> f64 {
        within_sse(&self.points, &self.centroids, &self.assignment)
    }
}

/// Tuning for [`kmeans_cluster`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub k: usize,
    pub epsilon: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            epsilon: DEFAULT_EPSILON,
            max_iter: DEFAULT_MAX_ITER,
            seed: 0,
        }
    }
}

fn distinct_count(points: &[Point]) -> usize {
    let mut keys: Vec<(u64, u64)> = points
        .iter()
        .map(|p| ((p.x + 0.0).to_bits(), (p.y + 0.0).to_bits()))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Index of the nearest centroid; ties go to the lowest index.
#[inline]
pub fn nearest(p: &Point, centroids: &[Point]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centroids.iter().enumerate() {
        let d = p.dist2(c);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

pub(crate) fn within_sse(points: &[Point], centroids: &[Point], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &k)| p.dist2(&centroids[k]))
        .sum()
}

/// k-means++ seeding.
fn seed_centroids(points: &[Point], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| p.dist2(&centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[next];
        centroids.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(p.dist2(&c));
        }
    }
    centroids
}

/// Lloyd's algorithm from the given initial centroids.
pub fn lloyd(points: &[Point], initial: Vec<Point>, epsilon: f64, max_iter: usize) -> Clustering {
    let k = initial.len();
    let mut centroids = initial;
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![(0.0f64, 0.0f64, 0usize); k];
        for (p, &a) in points.iter().zip(&assignment) {
            sums[a].0 += p.x;
            sums[a].1 += p.y;
            sums[a].2 += 1;
        }
        let mut updated: Vec<Point> = sums
            .iter()
            .zip(&centroids)
            .map(|(&(sx, sy, n), old)| {
                if n > 0 {
                    Point::new(sx / n as f64, sy / n as f64)
                } else {
                    *old
                }
            })
            .collect();
        // an emptied cluster takes over the point worst served by its centroid
        for c in 0..k {
            if sums[c].2 == 0 {
                let far = points
                    .iter()
                    .enumerate()
                    .max_by(|a, b| {
                        let da = a.1.dist2(&updated[assignment[a.0]]);
                        let db = b.1.dist2(&updated[assignment[b.0]]);
                        da.total_cmp(&db)
                    })
                    .map(|(i, _)| i);
                if let Some(i) = far {
                    updated[c] = points[i];
                }
            }
        }
        let shift: f64 = updated
            .iter()
            .zip(&centroids)
            .map(|(a, b)| a.dist2(b))
            .sum();
        centroids = updated;
        assignment = points.iter().map(|p| nearest(p, &centroids)).collect();
        if shift <= epsilon {
            converged = true;
            break;
        }
    }
    let mut sizes = vec![0usize; k];
    for &a in &assignment {
        sizes[a] += 1;
    }
    Clustering {
        centroids,
        assignment,
        sizes,
        iterations,
        converged,
        points: points.to_vec(),
    }
}

/// K-means clustering with k-means++ seeding drawn from `seed`.
pub fn kmeans_cluster(points: &[Point], opts: &KMeansOptions) -> Result<Clustering> {
    let distinct = distinct_count(points);
    if opts.k == 0 || opts.k > distinct {
        return Err(Error::InvalidK {
            k: opts.k,
            distinct,
        });
    }
    if !(opts.epsilon > 0.0) {
        return Err(Error::domain("epsilon must be positive"));
    }
    if opts.max_iter == 0 {
        return Err(Error::domain("max_iter must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let init = seed_centroids(points, opts.k, &mut rng);
    Ok(lloyd(points, init, opts.epsilon, opts.max_iter))
}

/// Bandwidth from a finished clustering.
pub fn bandwidth_from_clustering(c: &Clustering) -> Result<f64> {
    let k = c.k();
    let mut ss = vec![0.0f64; k];
    for (p, &a) in c.points.iter().zip(&c.assignment) {
        ss[a] += p.dist2(&c.centroids[a]);
    }
    let mut acc = 0.0;
    for (idx, (&n, s)) in c.sizes.iter().zip(&ss).enumerate() {
        if n == 0 {
            return Err(Error::EmptyCluster(idx));
        }
        acc += s / n as f64;
    }
    Ok((acc / (2.0 * k as f64)).sqrt())
}

/// Clusters `points` and returns the derived bandwidth.
pub fn select_bandwidth(points: &[Point], opts: &KMeansOptions) -> Result<f64> {
    bandwidth_from_clustering(&kmeans_cluster(points, opts)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(f64, f64)]) -> Vec<Point> {
        v.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    #[test]
    fn two_symmetric_clusters() {
        let p = pts(&[(0.0, 0.0), (0.0, 1.0), (10.0, 0.0), (10.0, 1.0)]);
        let c = kmeans_cluster(
            &p,
            &KMeansOptions {
                k: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let mut cents: Vec<(f64, f64)> = c.centroids.iter().map(|c| (c.x, c.y)).collect();
        cents.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(cents, vec![(0.0, 0.5), (10.0, 0.5)]);
        assert_eq!(c.sizes, vec![2, 2]);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let p = pts(&[(1.0, 2.0), (3.0, 4.0), (5.0, 0.0)]);
        let c = kmeans_cluster(
            &p,
            &KMeansOptions {
                k: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((c.centroids[0].x - 3.0).abs() < 1e-15);
        assert!((c.centroids[0].y - 2.0).abs() < 1e-15);
    }

    #[test]
    fn two_point_bandwidth() {
        let p = pts(&[(0.0, 0.0), (2.0, 0.0)]);
        let h = select_bandwidth(
            &p,
            &KMeansOptions {
                k: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((h - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn identical_points_give_zero_bandwidth() {
        let p = pts(&[(1.0, 1.0); 5]);
        let h = select_bandwidth(
            &p,
            &KMeansOptions {
                k: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(h, 0.0);
    }

    #[test]
    fn invalid_k() {
        let p = pts(&[(1.0, 1.0), (1.0, 1.0), (2.0, 2.0)]);
        assert!(matches!(
            kmeans_cluster(
                &p,
                &KMeansOptions {
                    k: 3,
                    ..Default::default()
                }
            ),
            Err(Error::InvalidK { k: 3, distinct: 2 })
        ));
        assert!(matches!(
            kmeans_cluster(
                &p,
                &KMeansOptions {
                    k: 0,
                    ..Default::default()
                }
            ),
            Err(Error::InvalidK { k: 0, .. })
        ));
    }

    #[test]
    fn empty_cluster_is_an_error() {
        let c = Clustering {
            centroids: pts(&[(0.0, 0.0), (5.0, 5.0)]),
            assignment: vec![0, 0],
            sizes: vec![2, 0],
            iterations: 1,
            converged: true,
            points: pts(&[(0.0, 0.0), (1.0, 0.0)]),
        };
        assert!(matches!(
            bandwidth_from_clustering(&c),
            Err(Error::EmptyCluster(1))
        ));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let c = pts(&[(-1.0, 0.0), (1.0, 0.0)]);
        assert_eq!(nearest(&Point::new(0.0, 0.0), &c), 0);
    }
}
