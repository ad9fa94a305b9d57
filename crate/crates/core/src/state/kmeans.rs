//! Lloyd's k-means with k-means++ seeding, plus AIC-based choice of k.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            max_iter: 300,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub rss: f64,
    /// Within-cluster sum of squares after each assignment step.
    pub rss_history: Vec<f64>,
    pub iterations: usize,
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // Only duplicates of existing centroids remain.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    centroids
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize], dist: &mut [f64]) -> f64 {
    let mut rss = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (j, d) = nearest(centroids, p);
        labels[i] = j;
        dist[i] = d;
        rss += d;
    }
    rss
}

/// Lloyd's algorithm from a k-means++ start; deterministic given `seed`.
pub fn fit_kmeans(points: &[Vec<f64>], k: usize, seed: u64, cfg: KMeansConfig) -> Result<KMeansFit> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!(
            "k-means needs 1 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    let m = points[0].len();
    if points.iter().any(|p| p.len() != m) {
        return Err(Error::InvalidArgument("points have unequal dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(points, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut dist = vec![0.0; n];
    let mut rss_history = Vec::new();
    let mut iterations = 0;
    let mut rss = assign(points, &centroids, &mut labels, &mut dist);
    rss_history.push(rss);

    while iterations < cfg.max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; m]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift = 0.0f64;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let c: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            shift = shift.max(sq_dist(&c, &centroids[j]).sqrt());
            centroids[j] = c;
        }
        // Re-seed empty clusters from the farthest points.
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                counts[labels[i]] -= 1;
                counts[j] = 1;
                labels[i] = j;
                dist[i] = 0.0;
                centroids[j] = points[i].clone();
                shift = f64::INFINITY;
            }
        }
        let prev = labels.clone();
        rss = assign(points, &centroids, &mut labels, &mut dist);
        rss_history.push(rss);
        if labels == prev || shift <= cfg.tol {
            break;
        }
    }
    Ok(KMeansFit {
        centroids,
        labels,
        rss,
        rss_history,
        iterations,
    })
}

/// Akaike information criterion of a k-means fit under an isotropic Gaussian
/// with shared variance `RSS / (n m)`; `-inf` when RSS is zero.
pub fn kmeans_aic(rss: f64, n: usize, m: usize, k: usize) -> f64 {
    let nm = (n * m) as f64;
    if rss <= 0.0 {
        return f64::NEG_INFINITY;
    }
    nm * (rss / nm).ln() + 2.0 * (k * m) as f64
}

/// AIC for each candidate `k`, one seeded k-means fit per value.
pub fn aic_curve(points: &[Vec<f64>], k_values: &[usize], seed: u64, cfg: KMeansConfig) -> Result<Vec<(usize, f64)>> {
    let n = points.len();
    let m = points.first().map_or(0, Vec::len);
    k_values
        .iter()
        .map(|&k| {
            let fit = fit_kmeans(points, k, seed, cfg)?;
            Ok((k, kmeans_aic(fit.rss, n, m, k)))
        })
        .collect()
}

/// Kneedle-style elbow: the interior point farthest from the chord joining
/// the first and last points, after scaling both axes to `[0, 1]`. Ties go
/// to the smaller k. Points with non-finite AIC are ignored.
pub fn select_k_elbow(curve: &[(usize, f64)]) -> Result<usize> {
    let mut pts: Vec<(usize, f64)> = curve.iter().copied().filter(|p| p.1.is_finite()).collect();
    pts.sort_by_key(|p| p.0);
    if pts.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "elbow selection needs at least 3 finite points, got {}",
            pts.len()
        )));
    }
    let (k0, kn) = (pts[0].0 as f64, pts[pts.len() - 1].0 as f64);
    let ymin = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let ymax = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let yspan = if ymax > ymin { ymax - ymin } else { 1.0 };
    let norm = |p: &(usize, f64)| ((p.0 as f64 - k0) / (kn - k0), (p.1 - ymin) / yspan);
    let (ax, ay) = norm(&pts[0]);
    let (bx, by) = norm(&pts[pts.len() - 1]);
    let (dx, dy) = (bx - ax, by - ay);
    let len = (dx * dx + dy * dy).sqrt();
    let mut best = (pts[1].0, f64::NEG_INFINITY);
    for p in &pts[1..pts.len() - 1] {
        let (x, y) = norm(p);
        let dist = ((x - ax) * dy - (y - ay) * dx).abs() / len;
        if dist > best.1 + 1e-12 {
            best = (p.0, dist);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    /// Three isotropic blobs 10 sigma apart, labelled by generator.
    pub(crate) fn blobs(n_per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        let mut lab = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..n_per {
                let dx: f64 = StandardNormal.sample(&mut rng);
                let dy: f64 = StandardNormal.sample(&mut rng);
                pts.push(vec![center[0] + dx, center[1] + dy]);
                lab.push(c);
            }
        }
        (pts, lab)
    }

    #[test]
    fn k_equals_n_is_exact() {
        let pts: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let fit = fit_kmeans(&pts, 7, 0, KMeansConfig::default()).unwrap();
        assert_eq!(fit.rss, 0.0);
        assert_eq!(kmeans_aic(fit.rss, 7, 2, 7), f64::NEG_INFINITY);
    }

    #[test]
    fn recovers_blobs() {
        let (pts, lab) = blobs(100, 42);
        let fit = fit_kmeans(&pts, 3, 42, KMeansConfig::default()).unwrap();
        // Same partition up to relabelling.
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                assert_eq!(lab[i] == lab[j], fit.labels[i] == fit.labels[j]);
            }
        }
        let again = fit_kmeans(&pts, 3, 42, KMeansConfig::default()).unwrap();
        assert_eq!(fit.centroids, again.centroids);
    }

    #[test]
    fn rss_never_increases() {
        let (pts, _) = blobs(200, 7);
        for k in [2, 5, 9] {
            let fit = fit_kmeans(&pts, k, 1, KMeansConfig::default()).unwrap();
            for w in fit.rss_history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", fit.rss_history);
            }
        }
    }

    #[test]
    fn aic_elbow_on_blobs() {
        let (pts, _) = blobs(100, 42);
        let ks: Vec<usize> = (1..=10).collect();
        let curve = aic_curve(&pts, &ks, 42, KMeansConfig::default()).unwrap();
        // k = 1: RSS is the total sum of squares.
        let mean = [0, 1].map(|c| pts.iter().map(|p| p[c]).sum::<f64>() / pts.len() as f64);
        let tss: f64 = pts.iter().map(|p| sq_dist(p, &mean)).sum();
        assert!((curve[0].1 - kmeans_aic(tss, 300, 2, 1)).abs() < 1e-6);
        assert!(curve[0].1 > curve[1].1 && curve[1].1 > curve[2].1);
        let drop_before = curve[1].1 - curve[2].1;
        let drop_after = curve[2].1 - curve[3].1;
        assert!(drop_before > 10.0 * drop_after.abs());
        assert_eq!(select_k_elbow(&curve).unwrap(), 3);
    }

    #[test]
    fn elbow_degenerate_cases() {
        let linear: Vec<(usize, f64)> = (1..=6).map(|k| (k, 100.0 - 10.0 * k as f64)).collect();
        assert_eq!(select_k_elbow(&linear).unwrap(), 2);
        assert!(select_k_elbow(&linear[..2]).is_err());
    }

    #[test]
    fn too_few_points() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(fit_kmeans(&pts, 3, 0, KMeansConfig::default()).is_err());
    }
}
