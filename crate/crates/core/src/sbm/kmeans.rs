//! Lloyd's algorithm with k-means++ seeding and restarts.

use rand::Rng;

use crate::netgen::Membership;

pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITER: usize = 100;

/// Row-major point cloud.
#[derive(Debug, Clone)]
pub struct Points {
    data: Vec<f64>,
    rows: usize,
    dim: usize,
}

impl Points {
    pub fn new(data: Vec<f64>, rows: usize, dim: usize) -> Self {
        assert_eq!(data.len(), rows * dim, "point buffer has the wrong length");
        Self { data, rows, dim }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(data, rows.len(), dim)
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub membership: Membership,
    /// Within-cluster sum of squares.
    pub wcss: f64,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn kmeans<R: Rng + ?Sized>(points: &Points, k: usize, rng: &mut R) -> KMeansResult {
    kmeans_with(points, k, DEFAULT_RESTARTS, DEFAULT_MAX_ITER, rng)
}

/// Best of `restarts` runs by within-cluster sum of squares (earliest run wins ties).
pub fn kmeans_with<R: Rng + ?Sized>(
    points: &Points,
    k: usize,
    restarts: usize,
    max_iter: usize,
    rng: &mut R,
) -> KMeansResult {
    let n = points.len();
    let k = k.clamp(1, n.max(1));
    if k == 1 || n <= 1 {
        let labels = vec![0; n];
        let centre = centroids(points, &labels, 1);
        let wcss = (0..n).map(|i| sq_dist(points.row(i), &centre[0])).sum();
        return KMeansResult {
            membership: Membership::from_labels(labels),
            wcss,
        };
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let (labels, wcss) = lloyd(points, k, max_iter, rng);
        if best.as_ref().is_none_or(|(_, w)| wcss < *w) {
            best = Some((labels, wcss));
        }
    }
    let (labels, wcss) = best.expect("at least one restart");
    KMeansResult {
        membership: Membership::new(labels, k).expect("labels below k"),
        wcss,
    }
}

fn seed_plus_plus<R: Rng + ?Sized>(points: &Points, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centres = Vec::with_capacity(k);
    centres.push(points.row(rng.random_range(0..n)).to_vec());
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // Rounding can leave `target` past the last positive weight.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), &c));
        }
        centres.push(c);
    }
    centres
}

fn centroids(points: &Points, labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points.dim();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(points.row(i)) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

fn nearest(point: &[f64], centres: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centre) in centres.iter().enumerate() {
        let d = sq_dist(point, centre);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn lloyd<R: Rng + ?Sized>(
    points: &Points,
    k: usize,
    max_iter: usize,
    rng: &mut R,
) -> (Vec<usize>, f64) {
    let n = points.len();
    let mut centres = seed_plus_plus(points, k, rng);
    let mut labels = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for i in 0..n {
            let (c, d) = nearest(points.row(i), &centres);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
            dists[i] = d;
        }
        repair_empty(points, k, &mut labels, &mut dists, &mut centres);
        if !changed {
            break;
        }
        centres = centroids(points, &labels, k);
    }
    // Final assignment against the final centres.
    for i in 0..n {
        let (c, d) = nearest(points.row(i), &centres);
        labels[i] = c;
        dists[i] = d;
    }
    repair_empty(points, k, &mut labels, &mut dists, &mut centres);
    let centres = centroids(points, &labels, k);
    let wcss = (0..n)
        .map(|i| sq_dist(points.row(i), &centres[labels[i]]))
        .sum();
    (labels, wcss)
}

/// Moves the point farthest from its centre into each empty cluster.
fn repair_empty(
    points: &Points,
    k: usize,
    labels: &mut [usize],
    dists: &mut [f64],
    centres: &mut [Vec<f64>],
) {
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        // Only take from clusters that keep at least one member.
        let far = (0..labels.len())
            .filter(|&i| counts[labels[i]] > 1)
            .fold(None, |acc: Option<usize>, i| match acc {
                Some(j) if dists[j] >= dists[i] => Some(j),
                _ => Some(i),
            });
        let Some(far) = far else {
            return;
        };
        labels[far] = empty;
        dists[far] = 0.0;
        centres[empty] = points.row(far).to_vec();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream;

    // Box-Muller.
    fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
        let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    #[test]
    fn separates_two_clouds() {
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push(vec![0.0 + 0.01 * i as f64, 0.0]);
        }
        for i in 0..10 {
            rows.push(vec![5.0, 5.0 + 0.01 * i as f64]);
        }
        let res = kmeans(&Points::from_rows(&rows), 2, &mut stream(3));
        let truth = Membership::from_labels([vec![0; 10], vec![1; 10]].concat());
        assert!(res.membership.same_partition(&truth));
    }

    #[test]
    fn one_point_per_cluster_has_zero_wcss() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let res = kmeans(&Points::from_rows(&rows), 5, &mut stream(0));
        assert_eq!(res.wcss, 0.0);
        assert_eq!(res.membership.occupied_blocks(), 5);
    }

    #[test]
    fn recovers_planted_gaussian_clusters() {
        let mut rng = stream(11);
        let centres = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for (c, centre) in centres.iter().enumerate() {
            for _ in 0..4 {
                rows.push(vec![
                    centre[0] + gaussian(&mut rng),
                    centre[1] + gaussian(&mut rng),
                ]);
                truth.push(c);
            }
        }
        let res = kmeans(&Points::from_rows(&rows), 3, &mut rng);
        assert!(res
            .membership
            .same_partition(&Membership::from_labels(truth)));
    }

    #[test]
    fn duplicate_points_never_leave_empty_clusters() {
        let rows = vec![vec![1.0, 1.0]; 6];
        let res = kmeans(&Points::from_rows(&rows), 3, &mut stream(5));
        assert_eq!(res.membership.occupied_blocks(), 3);
        assert_eq!(res.wcss, 0.0);
    }
}
