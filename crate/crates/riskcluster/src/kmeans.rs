//! Lloyd's K-Means with k-means++ seeding, WCSS elbow scan and automated
//! K suggestion via the largest second difference.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::seeding::derive_seed;

pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_K_MAX: usize = 10;

#[derive(Debug, Error)]
pub enum KMeansError {
    #[error("need at least K={k} points, got {n}")]
    TooFewPoints { k: usize, n: usize },
    #[error("points have dimension {points}, centroids {centroids}")]
    DimensionMismatch { points: usize, centroids: usize },
    #[error("elbow curve needs at least 3 points, got {0}")]
    CurveTooShort(usize),
}

#[derive(Debug, Clone)]
pub struct KMeansModel {
    pub k: usize,
    pub centroids: Array2<f64>,
    pub assignment: Vec<usize>,
    pub wcss: f64,
    pub seed: u64,
    pub restarts: usize,
    pub iterations_run: usize,
}

/// Best-of-restarts WCSS per K over an increasing K grid.
#[derive(Debug, Clone)]
pub struct ElbowCurve {
    pub points: Vec<(usize, f64)>,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid per point, ties broken by lowest cluster index.
pub fn assign_nearest(
    centroids: &ArrayView2<f64>,
    points: &ArrayView2<f64>,
) -> Result<Vec<usize>, KMeansError> {
    if centroids.ncols() != points.ncols() {
        return Err(KMeansError::DimensionMismatch {
            points: points.ncols(),
            centroids: centroids.ncols(),
        });
    }
    Ok((0..points.nrows())
        .map(|i| {
            let p = points.row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.rows().into_iter().enumerate() {
                let d = sq_dist(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect())
}

fn kmeans_pp_init(points: &ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let d = points.ncols();
    let mut centroids = Array2::zeros((k, d));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut dist: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let w = WeightedIndex::new(&dist).expect("non-negative weights");
            w.sample(rng)
        } else {
            // All remaining distances zero (duplicate points); pick uniformly.
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(next));
        for i in 0..n {
            let d2 = sq_dist(points.row(i), centroids.row(c));
            if d2 < dist[i] {
                dist[i] = d2;
            }
        }
    }
    centroids
}

fn lloyd_run(
    points: &ArrayView2<f64>,
    k: usize,
    max_iter: usize,
    seed: u64,
) -> (Array2<f64>, Vec<usize>, f64, usize) {
    lloyd_run_traced(points, k, max_iter, seed, None)
}

/// One Lloyd run that records WCSS after every full (update, assign)
/// iteration. Each entry must be no larger than its predecessor.
pub fn lloyd_wcss_trace(
    points: &ArrayView2<f64>,
    k: usize,
    max_iter: usize,
    seed: u64,
) -> Vec<f64> {
    let mut trace = Vec::new();
    lloyd_run_traced(points, k, max_iter, seed, Some(&mut trace));
    trace
}

fn lloyd_run_traced(
    points: &ArrayView2<f64>,
    k: usize,
    max_iter: usize,
    seed: u64,
    mut trace: Option<&mut Vec<f64>>,
) -> (Array2<f64>, Vec<usize>, f64, usize) {
    let n = points.nrows();
    let d = points.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(points, k, &mut rng);
    let mut assignment = assign_nearest(&centroids.view(), points).unwrap();
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        // Update step: centroid = mean of assigned points.
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            let mut row = sums.row_mut(c);
            row += &points.row(i);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mut row = centroids.row_mut(c);
                row.assign(&(&sums.row(c) / counts[c] as f64));
            } else {
                // Empty-cluster repair: reseed at the point farthest from
                // its current centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(points.row(a), centroids.row(assignment[a]));
                        let db = sq_dist(points.row(b), centroids.row(assignment[b]));
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centroids.row_mut(c).assign(&points.row(far));
            }
        }
        let next = assign_nearest(&centroids.view(), points).unwrap();
        let converged = next == assignment;
        assignment = next;
        if let Some(t) = trace.as_deref_mut() {
            let wcss: f64 = (0..n)
                .map(|i| sq_dist(points.row(i), centroids.row(assignment[i])))
                .sum();
            t.push(wcss);
        }
        if converged {
            break;
        }
    }
    let wcss: f64 = (0..n)
        .map(|i| sq_dist(points.row(i), centroids.row(assignment[i])))
        .sum();
    (centroids, assignment, wcss, iterations)
}

/// Best (lowest-WCSS) model over `restarts` independent k-means++ runs.
/// Each restart derives its own sub-seed, so results do not depend on
/// scheduling.
pub fn kmeans_fit(
    points: &ArrayView2<f64>,
    k: usize,
    restarts: usize,
    max_iter: usize,
    seed: u64,
) -> Result<KMeansModel, KMeansError> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(KMeansError::TooFewPoints { k, n });
    }
    let runs: Vec<_> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| lloyd_run(points, k, max_iter, derive_seed(seed, "kmeans-restart", r as u64)))
        .collect();
    let (centroids, assignment, wcss, iterations_run) = runs
        .into_iter()
        .min_by(|a, b| a.2.partial_cmp(&b.2).unwrap())
        .unwrap();
    Ok(KMeansModel {
        k,
        centroids,
        assignment,
        wcss,
        seed,
        restarts,
        iterations_run,
    })
}

/// One best-of-restarts WCSS per K in 1..=k_max.
pub fn elbow_scan(
    points: &ArrayView2<f64>,
    k_max: usize,
    restarts: usize,
    seed: u64,
) -> Result<ElbowCurve, KMeansError> {
    if k_max > points.nrows() {
        return Err(KMeansError::TooFewPoints {
            k: k_max,
            n: points.nrows(),
        });
    }
    let wcss: Result<Vec<(usize, f64)>, KMeansError> = (1..=k_max)
        .into_par_iter()
        .map(|k| {
            let sub = derive_seed(seed, "elbow-k", k as u64);
            kmeans_fit(points, k, restarts, DEFAULT_MAX_ITER, sub).map(|m| (k, m.wcss))
        })
        .collect();
    Ok(ElbowCurve { points: wcss? })
}

/// K maximizing the second difference of the WCSS curve; ties go to the
/// lowest K.
pub fn suggest_k(curve: &ElbowCurve) -> Result<usize, KMeansError> {
    let m = curve.points.len();
    if m < 3 {
        return Err(KMeansError::CurveTooShort(m));
    }
    let mut best_k = curve.points[1].0;
    let mut best = f64::NEG_INFINITY;
    for i in 1..m - 1 {
        let prev = curve.points[i - 1].1;
        let here = curve.points[i].1;
        let next = curve.points[i + 1].1;
        let second_diff = (prev - here) - (here - next);
        if second_diff > best {
            best = second_diff;
            best_k = curve.points[i].0;
        }
    }
    Ok(best_k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn four_point_symmetric_example() {
        let pts = array![[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
        let m = kmeans_fit(&pts.view(), 2, 5, 100, 1).unwrap();
        assert!((m.wcss - 1.0).abs() <= 1e-12, "wcss {}", m.wcss);
        let mut xs: Vec<f64> = m.centroids.column(0).to_vec();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(xs, vec![0.0, 10.0]);
        assert!(m.centroids.column(1).iter().all(|&y| (y - 0.5).abs() <= 1e-12));
    }

    #[test]
    fn k_equals_n_gives_zero_wcss() {
        let pts = array![[0.0], [1.0], [5.0], [9.0]];
        let m = kmeans_fit(&pts.view(), 4, 5, 100, 2).unwrap();
        assert_eq!(m.wcss, 0.0);
    }

    #[test]
    fn k_one_gives_mean_and_total_ss() {
        let pts = array![[1.0], [2.0], [3.0], [6.0]];
        let m = kmeans_fit(&pts.view(), 1, 3, 100, 3).unwrap();
        assert!((m.centroids[(0, 0)] - 3.0).abs() <= 1e-12);
        let tss: f64 = [1.0, 2.0, 3.0, 6.0].iter().map(|x| (x - 3.0f64).powi(2)).sum();
        assert!((m.wcss - tss).abs() <= 1e-12);
    }

    #[test]
    fn tie_assignment_goes_to_lowest_index() {
        let cents = array![[0.0], [2.0], [4.0]];
        let pts = array![[2.0], [3.0], [1.0]];
        let a = assign_nearest(&cents.view(), &pts.view()).unwrap();
        // 3.0 equidistant from centroids 1 and 2; 1.0 from 0 and 1.
        assert_eq!(a, vec![1, 1, 0]);
    }

    #[test]
    fn converged_model_is_fixpoint() {
        let pts = array![[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]];
        let m = kmeans_fit(&pts.view(), 2, 5, 100, 4).unwrap();
        let again = assign_nearest(&m.centroids.view(), &pts.view()).unwrap();
        assert_eq!(again, m.assignment);
    }

    #[test]
    fn determinism_for_fixed_seed() {
        let pts = random_points(200, 3, 5);
        let a = kmeans_fit(&pts.view(), 4, 10, 300, 42).unwrap();
        let b = kmeans_fit(&pts.view(), 4, 10, 300, 42).unwrap();
        assert_eq!(a.wcss, b.wcss);
        assert_eq!(a.assignment, b.assignment);
        assert_eq!(a.centroids, b.centroids);
    }

    #[test]
    fn too_few_points_rejected() {
        let pts = array![[0.0], [1.0]];
        assert!(matches!(
            kmeans_fit(&pts.view(), 3, 1, 10, 0),
            Err(KMeansError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let cents = array![[0.0, 1.0]];
        let pts = array![[0.0]];
        assert!(matches!(
            assign_nearest(&cents.view(), &pts.view()),
            Err(KMeansError::DimensionMismatch { .. })
        ));
    }

    fn random_points(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Array2::zeros((n, d));
        for v in pts.iter_mut() {
            *v = rng.sample(rand_distr::StandardNormal);
        }
        pts
    }

    #[test]
    fn elbow_curve_reaches_zero_at_k_equals_n() {
        let pts = random_points(12, 2, 6);
        let curve = elbow_scan(&pts.view(), 12, 3, 7).unwrap();
        assert_eq!(curve.points.len(), 12);
        assert!(curve.points.last().unwrap().1 <= 1e-9);
        for w in curve.points.windows(2) {
            assert!(w[1].0 == w[0].0 + 1);
        }
    }

    #[test]
    fn suggest_k_worked_example() {
        let curve = ElbowCurve {
            points: vec![(1, 100.0), (2, 40.0), (3, 20.0), (4, 15.0), (5, 13.0)],
        };
        assert_eq!(suggest_k(&curve).unwrap(), 2);
    }

    #[test]
    fn suggest_k_linear_decay_ties_to_lowest() {
        let curve = ElbowCurve {
            points: (1..=6).map(|k| (k, 100.0 - 10.0 * k as f64)).collect(),
        };
        assert_eq!(suggest_k(&curve).unwrap(), 2);
    }

    #[test]
    fn suggest_k_short_curve_rejected() {
        let curve = ElbowCurve {
            points: vec![(1, 10.0), (2, 5.0)],
        };
        assert!(matches!(suggest_k(&curve), Err(KMeansError::CurveTooShort(2))));
    }

    #[test]
    fn planted_blobs_recovered() {
        // Three tight, well-separated blobs; elbow must point at 3.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let centers = [[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]];
        let mut pts = Array2::zeros((300, 2));
        for i in 0..300 {
            let c = centers[i % 3];
            pts[(i, 0)] = c[0] + rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.3;
            pts[(i, 1)] = c[1] + rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.3;
        }
        let curve = elbow_scan(&pts.view(), 8, 5, 9).unwrap();
        assert_eq!(suggest_k(&curve).unwrap(), 3);
        let m = kmeans_fit(&pts.view(), 3, 5, 300, 10).unwrap();
        // Each recovered centroid close to one planted center.
        for c in 0..3 {
            let best = centers
                .iter()
                .map(|t| (m.centroids[(c, 0)] - t[0]).powi(2) + (m.centroids[(c, 1)] - t[1]).powi(2))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.1, "centroid {} off by {}", c, best);
        }
    }

    #[test]
    fn wcss_monotone_over_k() {
        let pts = random_points(150, 3, 11);
        let curve = elbow_scan(&pts.view(), 8, 5, 12).unwrap();
        for w in curve.points.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-9, "wcss rose from {:?} to {:?}", w[0], w[1]);
        }
    }

    #[test]
    fn single_point_swap_cannot_improve() {
        // Assignment optimality at convergence, brute force on small n.
        let pts = random_points(20, 2, 13);
        let m = kmeans_fit(&pts.view(), 3, 10, 300, 14).unwrap();
        for i in 0..20 {
            for c in 0..3 {
                let d_cur = sq_dist(pts.row(i), m.centroids.row(m.assignment[i]));
                let d_alt = sq_dist(pts.row(i), m.centroids.row(c));
                assert!(d_alt >= d_cur - 1e-12);
            }
        }
    }
}
