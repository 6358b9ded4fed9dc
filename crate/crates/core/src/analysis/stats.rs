//! PCA, k-means, rank correlation and kernel density helpers.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HetemError, Result};

/// Principal axes of row-vector data, sorted by decreasing variance.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Columns are unit principal directions.
    pub components: DMatrix<f64>,
    pub variances: Vec<f64>,
}

impl Pca {
    /// Each component's sign is chosen so its largest-magnitude loading is positive.
    pub fn fit(x: &Array2<f64>) -> Result<Self> {
        let (n, d) = x.dim();
        if n < 2 || d == 0 {
            return Err(HetemError::InsufficientData(format!("PCA needs >= 2 rows, got {n}")));
        }
        let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for row in x.outer_iter() {
            for a in 0..d {
                let da = row[a] - mean[a];
                for b in a..d {
                    cov[(a, b)] += da * (row[b] - mean[b]);
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let v = cov[(a, b)] / (n - 1) as f64;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let mut components = DMatrix::<f64>::zeros(d, d);
        let mut variances = Vec::with_capacity(d);
        for (c, &i) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(i).clone_owned();
            let lead = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if lead < 0.0 {
                v = -v;
            }
            components.set_column(c, &v);
            variances.push(eig.eigenvalues[i].max(0.0));
        }
        Ok(Pca {
            mean,
            components,
            variances,
        })
    }

    /// Scores on the first `k` components: `n × k`.
    pub fn project(&self, x: &Array2<f64>, k: usize) -> Array2<f64> {
        let (n, d) = x.dim();
        Array2::from_shape_fn((n, k), |(i, c)| {
            (0..d).map(|j| (x[[i, j]] - self.mean[j]) * self.components[(j, c)]).sum()
        })
    }

    /// Maps a score along component `c` back to data space.
    pub fn point_on_axis(&self, c: usize, score: f64) -> Vec<f64> {
        self.mean
            .iter()
            .enumerate()
            .map(|(j, m)| m + score * self.components[(j, c)])
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by Lloyd iterations; best of `restarts` by inertia.
pub fn kmeans(x: &Array2<f64>, k: usize, restarts: usize, seed: u64) -> Result<Vec<usize>> {
    let n = x.nrows();
    if k == 0 || n < k {
        return Err(HetemError::InsufficientData(format!("{n} points for {k} clusters")));
    }
    let rows: Vec<Vec<f64>> = x.outer_iter().map(|r| r.to_vec()).collect();
    if rows.iter().all(|r| r == &rows[0]) {
        return Err(HetemError::DegenerateCluster("all latent points coincide".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let mut centers = vec![rows[rng.random_range(0..n)].clone()];
        let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centers[0])).collect();
        while centers.len() < k {
            let total: f64 = d2.iter().sum();
            let next = if total > 0.0 {
                let mut u = rng.random_range(0.0..total);
                let mut pick = n - 1;
                for (i, &w) in d2.iter().enumerate() {
                    if u < w {
                        pick = i;
                        break;
                    }
                    u -= w;
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            centers.push(rows[next].clone());
            for (i, r) in rows.iter().enumerate() {
                d2[i] = d2[i].min(sq_dist(r, centers.last().expect("center")));
            }
        }
        let mut assign = vec![0usize; n];
        for _ in 0..300 {
            let mut changed = false;
            for (i, r) in rows.iter().enumerate() {
                let c = (0..k)
                    .min_by(|&a, &b| sq_dist(r, &centers[a]).total_cmp(&sq_dist(r, &centers[b])))
                    .expect("k >= 1");
                if c != assign[i] {
                    assign[i] = c;
                    changed = true;
                }
            }
            let dim = rows[0].len();
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for (r, &a) in rows.iter().zip(&assign) {
                counts[a] += 1;
                for (s, v) in sums[a].iter_mut().zip(r) {
                    *s += v;
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = rows.iter().zip(&assign).map(|(r, &a)| sq_dist(r, &centers[a])).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, assign));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// Ranks starting at 1; ties share their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Location of the maximum of a Gaussian KDE (Scott bandwidth) on a 1024-point grid.
pub fn kde_peak(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    if !(sd > 0.0) {
        return mean;
    }
    let h = sd * n.powf(-0.2);
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid = 1024;
    let mut best = (f64::NEG_INFINITY, mean);
    for g in 0..grid {
        let x = lo + (hi - lo) * g as f64 / (grid - 1) as f64;
        let dens: f64 = samples.iter().map(|s| (-0.5 * ((x - s) / h).powi(2)).exp()).sum();
        if dens > best.0 {
            best = (dens, x);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn pca_recovers_dominant_axis() {
        let x = Array2::from_shape_fn((200, 3), |(i, j)| {
            let t = i as f64 / 10.0;
            match j {
                0 => 2.0 * t,
                1 => -t + 0.01 * ((i * 7) % 5) as f64,
                _ => 0.05 * ((i * 3) % 7) as f64,
            }
        });
        let p = Pca::fit(&x).unwrap();
        let v = p.components.column(0);
        let expect = [2.0 / 5f64.sqrt(), -1.0 / 5f64.sqrt(), 0.0];
        for j in 0..3 {
            assert!((v[j] - expect[j]).abs() < 1e-2, "{v:?}");
        }
    }

    #[test]
    fn kde_peak_picks_a_mode() {
        let mut s: Vec<f64> = (0..200).map(|i| -3.0 + 0.01 * (i % 20) as f64).collect();
        s.extend((0..300).map(|i| 3.0 + 0.01 * (i % 20) as f64));
        let p = kde_peak(&s);
        assert!((p - 3.1).abs() < 0.5, "{p}");
        assert_eq!(kde_peak(&[1.5, 1.5, 1.5]), 1.5);
    }
}
