use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_rows, BaselineError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iterations: usize,
    /// Z-score each dimension before clustering.
    pub standardize: bool,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            restarts: 10,
            max_iterations: 100,
            standardize: true,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// In the input's original units.
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Within-cluster sum of squares in the clustering space.
    pub inertia: f64,
    /// Inertia after each assignment step of the winning restart.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid (ties to the smaller index) and its squared distance.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (j, c)| {
            let d = sq_dist(p, c);
            if d < best.1 {
                (j, d)
            } else {
                best
            }
        })
}

/// Squared-distance-proportional seeding.
fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if u < d {
                        break;
                    }
                    u -= d;
                }
            }
            pick.expect("positive total")
        } else {
            // Every point coincides with a centre: take an unused index.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }
    chosen.iter().map(|&i| points[i].clone()).collect()
}

/// Centroids, labels and the inertia after each iteration.
type LloydRun = (Vec<Vec<f64>>, Vec<usize>, Vec<f64>);

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iterations: usize) -> LloydRun {
    let (n, k, d) = (points.len(), centroids.len(), points[0].len());
    let mut labels = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..max_iterations {
        let mut changed = false;
        let mut inertia = 0.0;
        let mut dist = vec![0.0; n];
        for (i, p) in points.iter().enumerate() {
            let (j, dd) = nearest(p, &centroids);
            changed |= labels[i] != j;
            labels[i] = j;
            dist[i] = dd;
            inertia += dd;
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.iter().zip(&labels) {
            counts[j] += 1;
            sums[j].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                // Empty cluster: move it onto the point farthest from its
                // centre (ties to the smaller index).
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if dist[b] >= dist[i] => Some(b),
                        _ => Some(i),
                    })
                    .expect("k ≤ n");
                taken[far] = true;
                dist[far] = 0.0;
                centroids[j] = points[far].clone();
            }
        }
    }
    (centroids, labels, history)
}

/// k-means++ seeding plus Lloyd iterations, best of `restarts` by inertia
/// (earliest restart wins ties). Deterministic given the config.
pub fn kmeans(points: &[Vec<f64>], cfg: &KMeansConfig) -> Result<KMeansResult, BaselineError> {
    let d = check_rows(points)?;
    if cfg.k == 0 || cfg.k > points.len() {
        return Err(BaselineError::BadK {
            k: cfg.k,
            n: points.len(),
        });
    }
    let n = points.len() as f64;
    let (shift, scale): (Vec<f64>, Vec<f64>) = if cfg.standardize {
        (0..d)
            .map(|j| {
                let m = points.iter().map(|p| p[j]).sum::<f64>() / n;
                let s = (points.iter().map(|p| (p[j] - m).powi(2)).sum::<f64>() / n).sqrt();
                (m, if s > 0.0 { s } else { 1.0 })
            })
            .unzip()
    } else {
        (vec![0.0; d], vec![1.0; d])
    };
    let work: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(shift.iter().zip(&scale)).map(|(v, (m, s))| (v - m) / s).collect())
        .collect();

    let mut best: Option<LloydRun> = None;
    for r in 0..cfg.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(r as u64);
        let init = seed_plus_plus(&work, cfg.k, &mut rng);
        let run = lloyd(&work, init, cfg.max_iterations.max(1));
        let better = match &best {
            None => true,
            Some(b) => run.2.last() < b.2.last(),
        };
        if better {
            best = Some(run);
        }
    }
    let (centroids, labels, history) = best.expect("at least one restart");
    // Inertia of the final centroids with the final labels.
    let inertia = work
        .iter()
        .zip(&labels)
        .map(|(p, &j)| sq_dist(p, &centroids[j]))
        .sum();
    Ok(KMeansResult {
        centroids: centroids
            .iter()
            .map(|c| c.iter().zip(shift.iter().zip(&scale)).map(|(v, (m, s))| v * s + m).collect())
            .collect(),
        labels,
        inertia,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn blobs() -> (Vec<Vec<f64>>, Vec<usize>) {
        let centres = [(0.0, 0.0), (100.0, 0.0), (0.0, 100.0), (100.0, 100.0), (50.0, 200.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, &(x, y)) in centres.iter().enumerate() {
            for _ in 0..20 {
                pts.push(vec![x + rng.random_range(-1.0..1.0), y + rng.random_range(-1.0..1.0)]);
                truth.push(c);
            }
        }
        (pts, truth)
    }

    /// Same partition up to a relabeling.
    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        a.iter().zip(b).all(|(x, y)| {
            a.iter().zip(b).all(|(p, q)| (x == p) == (y == q))
        })
    }

    #[test]
    fn recovers_separated_blobs() {
        let (pts, truth) = blobs();
        let r = kmeans(&pts, &KMeansConfig::new(5, 3)).unwrap();
        assert!(same_partition(&r.labels, &truth));
    }

    #[test]
    fn k_equals_n() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let r = kmeans(&pts, &KMeansConfig::new(6, 0)).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut l = r.labels.clone();
        l.sort();
        l.dedup();
        assert_eq!(l.len(), 6);
    }

    #[test]
    fn deterministic_and_k_checked() {
        let (pts, _) = blobs();
        let a = kmeans(&pts, &KMeansConfig::new(5, 9)).unwrap();
        let b = kmeans(&pts, &KMeansConfig::new(5, 9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            kmeans(&pts[..3], &KMeansConfig::new(5, 9)).unwrap_err(),
            BaselineError::BadK { k: 5, n: 3 }
        );
    }

    #[test]
    fn identical_points_leave_empty_clusters() {
        let pts = vec![vec![1.0, 2.0]; 7];
        let r = kmeans(&pts, &KMeansConfig::new(5, 0)).unwrap();
        let mut used = r.labels.clone();
        used.sort();
        used.dedup();
        assert_eq!(used, vec![0]);
    }

    proptest! {
        #[test]
        fn inertia_never_increases(
            pts in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 2), 8..40),
            k in 1usize..6,
            seed in any::<u64>(),
        ) {
            let mut cfg = KMeansConfig::new(k, seed);
            cfg.restarts = 3;
            let r = kmeans(&pts, &cfg).unwrap();
            for w in r.history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{:?}", r.history);
            }
        }
    }
}
