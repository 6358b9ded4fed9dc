//! Evaluation metrics: aligned pose errors, latent-space clustering and
//! correlation, Fourier shell correlation, entanglement and representative
//! volumes.

pub mod stats;

use std::collections::BTreeMap;

use nalgebra::Matrix3;
use ndarray::{Array2, Axis};
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{HetemError, Result};
use crate::model::{extract_volume, Decoder};
use crate::nn::Real;
use crate::numerics::fft::{centered_freq, fft3_centered};
use crate::numerics::volume::Volume;
use stats::{kde_peak, kmeans, spearman, Pca};

/// Seed used by every k-means run so metrics are reproducible.
pub const KMEANS_SEED: u64 = 0x6b6d_6561_6e73;
pub const KMEANS_RESTARTS: usize = 10;

/// Global alignment `R_truth ≈ r_global · m(R_pred) · r_frame`, where `m` is
/// the optional mirror `R ↦ M R M` with `M = diag(1, 1, -1)`.
///
/// `r_frame` is a change of the reconstructed volume's frame. `r_global`
/// absorbs what a frame change cannot, such as an encoder that consistently
/// predicts the pose of the horizontally flipped image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseAlignment {
    pub r_global: Matrix3<f64>,
    pub r_frame: Matrix3<f64>,
    pub mirror: bool,
}

const MIRROR: Matrix3<f64> = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);

impl PoseAlignment {
    pub fn identity() -> Self {
        PoseAlignment {
            r_global: Matrix3::identity(),
            r_frame: Matrix3::identity(),
            mirror: false,
        }
    }

    pub fn apply(&self, r_pred: &Matrix3<f64>) -> Matrix3<f64> {
        let r = if self.mirror { MIRROR * r_pred * MIRROR } else { *r_pred };
        self.r_global * r * self.r_frame
    }

    /// Matrix `A` with `V_truth(k) = V_pred(A k)` in Fourier space.
    pub fn volume_frame(&self) -> Matrix3<f64> {
        if self.mirror {
            MIRROR * self.r_frame
        } else {
            self.r_frame
        }
    }
}

fn nearest_rotation(h: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = h.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let d = (u * vt).determinant().signum();
    let fix = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, if d == 0.0 { 1.0 } else { d }));
    u * fix * vt
}

/// Alternating Procrustes for `min Σ ‖T_i − A P_i B‖²` over `idx`, starting
/// from `(a, b)` and updating `A` first when `left_first`.
fn two_sided(
    pred: &[Matrix3<f64>],
    truth: &[Matrix3<f64>],
    idx: &[usize],
    mut a: Matrix3<f64>,
    mut b: Matrix3<f64>,
    left_first: bool,
) -> (Matrix3<f64>, Matrix3<f64>) {
    let left = |b: &Matrix3<f64>| nearest_rotation(&idx.iter().map(|&i| truth[i] * (pred[i] * b).transpose()).sum());
    let right = |a: &Matrix3<f64>| nearest_rotation(&idx.iter().map(|&i| (a * pred[i]).transpose() * truth[i]).sum());
    if !left_first {
        b = right(&a);
    }
    for _ in 0..500 {
        let a_new = left(&b);
        let b_new = right(&a_new);
        let delta = (a_new - a).norm() + (b_new - b).norm();
        a = a_new;
        b = b_new;
        if delta < 1e-13 {
            break;
        }
    }
    (a, b)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn residuals(al: &PoseAlignment, pred: &[Matrix3<f64>], truth: &[Matrix3<f64>]) -> Vec<f64> {
    pred.iter()
        .zip(truth)
        .map(|(p, t)| (t - al.apply(p)).norm_squared())
        .collect()
}

/// Fits the alignment minimizing the median squared Frobenius error: a
/// least-squares fit on all poses, then refits on the better half while the
/// median improves. Both mirror states and both update orders are tried.
pub fn align_poses_global(pred: &[Matrix3<f64>], truth: &[Matrix3<f64>]) -> Result<PoseAlignment> {
    if pred.len() != truth.len() {
        return Err(HetemError::Dimension(format!(
            "{} predicted vs {} true poses",
            pred.len(),
            truth.len()
        )));
    }
    let n = pred.len();
    if n < 3 {
        return Err(HetemError::InsufficientData(format!("pose alignment needs >= 3 poses, got {n}")));
    }
    let all: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, PoseAlignment)> = None;
    for mirror in [false, true] {
        let p: Vec<Matrix3<f64>> = if mirror {
            pred.iter().map(|r| MIRROR * r * MIRROR).collect()
        } else {
            pred.to_vec()
        };
        for left_first in [true, false] {
            let id = Matrix3::identity();
            let (a, b) = two_sided(&p, truth, &all, id, id, left_first);
            let mut al = PoseAlignment {
                r_global: a,
                r_frame: b,
                mirror,
            };
            let mut res = residuals(&al, pred, truth);
            let mut cur = median(&mut res.clone());
            for _ in 0..30 {
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&x, &y| res[x].total_cmp(&res[y]).then(x.cmp(&y)));
                let mut subset = order[..(n / 2).max(3)].to_vec();
                subset.sort_unstable();
                let (a, b) = two_sided(&p, truth, &subset, al.r_global, al.r_frame, true);
                let cand = PoseAlignment {
                    r_global: a,
                    r_frame: b,
                    mirror,
                };
                let cres = residuals(&cand, pred, truth);
                let cmed = median(&mut cres.clone());
                if cmed < cur - 1e-15 {
                    al = cand;
                    res = cres;
                    cur = cmed;
                } else {
                    break;
                }
            }
            if best.as_ref().is_none_or(|(m, _)| cur < *m - 1e-12) {
                best = Some((cur, al));
            }
        }
    }
    Ok(best.expect("four candidates").1)
}

/// Median over images of `‖R_truth − align(R_pred)‖²_F`.
pub fn rotation_error_median(pred: &[Matrix3<f64>], truth: &[Matrix3<f64>], al: &PoseAlignment) -> f64 {
    median(&mut residuals(al, pred, truth))
}

/// Median over images of `‖t_truth − t_pred‖²` in pixels².
pub fn translation_error_median(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> f64 {
    let mut e: Vec<f64> = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (t[0] - p[0]).powi(2) + (t[1] - p[1]).powi(2))
        .collect();
    median(&mut e)
}

fn dense_labels(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    for &l in labels {
        let next = map.len();
        map.entry(l).or_insert(next);
    }
    // Re-number in sorted label order so the mapping does not depend on row order.
    let sorted: BTreeMap<usize, usize> = map.keys().enumerate().map(|(i, &l)| (l, i)).collect();
    (labels.iter().map(|l| sorted[l]).collect(), sorted.len())
}

/// Fraction of images whose k-means cluster disagrees with their label under
/// the best one-to-one cluster/label matching.
pub fn classification_error(latents: &Array2<f64>, labels: &[usize], k: usize) -> Result<f64> {
    let n = latents.nrows();
    if labels.len() != n {
        return Err(HetemError::Dimension(format!("{n} latents vs {} labels", labels.len())));
    }
    if k < 2 || n < k {
        return Err(HetemError::InsufficientData(format!("classification with k={k}, n={n}")));
    }
    let pca = Pca::fit(latents)?;
    let scores = pca.project(latents, latents.ncols().min(k));
    let clusters = kmeans(&scores, k, KMEANS_RESTARTS, KMEANS_SEED)?;
    let (dense, n_labels) = dense_labels(labels);
    let side = k.max(n_labels);
    let mut counts = vec![0i64; side * side];
    for (&c, &l) in clusters.iter().zip(&dense) {
        counts[c * side + l] += 1;
    }
    let weights = Matrix::from_vec(side, side, counts).expect("square matrix");
    let (matched, _) = kuhn_munkres(&weights);
    Ok(1.0 - matched as f64 / n as f64)
}

/// Absolute Spearman correlation between the first principal component of the
/// latents and ordinal labels.
pub fn spearman_pc1(latents: &Array2<f64>, labels: &[f64]) -> Result<f64> {
    if labels.len() != latents.nrows() {
        return Err(HetemError::Dimension(format!(
            "{} latents vs {} labels",
            latents.nrows(),
            labels.len()
        )));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(HetemError::UndefinedCorrelation("labels are constant".into()));
    }
    let pc1 = Pca::fit(latents)?.project(latents, 1).column(0).to_vec();
    spearman(&pc1, labels)
        .map(f64::abs)
        .ok_or_else(|| HetemError::UndefinedCorrelation("PC1 projection is constant".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FscCurve {
    /// `(cycles/pixel, correlation)` for shells 0..=L/2.
    pub shells: Vec<(f64, f64)>,
}

/// Correlation of Fourier coefficients in unit-width shells `round(|k| L)`.
pub fn fsc_curve(a: &Volume, b: &Volume) -> Result<FscCurve> {
    let l = a.side();
    if b.side() != l || (a.apix() - b.apix()).abs() > 1e-9 * a.apix() {
        return Err(HetemError::Dimension(format!(
            "FSC of {}^3 @ {} vs {}^3 @ {}",
            l,
            a.apix(),
            b.side(),
            b.apix()
        )));
    }
    let fa = fft3_centered(a.data())?;
    let fb = fft3_centered(b.data())?;
    let n_shells = l / 2 + 1;
    let mut cross = vec![0.0; n_shells];
    let mut pa = vec![0.0; n_shells];
    let mut pb = vec![0.0; n_shells];
    for ((idx, va), vb) in fa.indexed_iter().zip(fb.iter()) {
        let (iz, iy, ix) = idx;
        let r = (centered_freq(ix, l).powi(2) + centered_freq(iy, l).powi(2) + centered_freq(iz, l).powi(2)).sqrt();
        let s = (r * l as f64).round() as usize;
        if s >= n_shells {
            continue;
        }
        cross[s] += (va * vb.conj()).re;
        pa[s] += va.norm_sqr();
        pb[s] += vb.norm_sqr();
    }
    let shells = (0..n_shells)
        .map(|s| {
            let denom = (pa[s] * pb[s]).sqrt();
            let c = if denom > 0.0 { (cross[s] / denom).clamp(-1.0, 1.0) } else { 0.0 };
            (s as f64 / l as f64, c)
        })
        .collect();
    Ok(FscCurve { shells })
}

/// Resolution in pixels, `1/f` at the first downward crossing of `cutoff`.
/// A curve that never drops below the cutoff reports Nyquist (2 pixels).
pub fn fsc_resolution(curve: &FscCurve, cutoff: f64) -> f64 {
    for w in curve.shells.windows(2) {
        let ((f0, c0), (f1, c1)) = (w[0], w[1]);
        if c0 >= cutoff && c1 < cutoff {
            let f = f0 + (c0 - cutoff) / (c0 - c1) * (f1 - f0);
            return 1.0 / f;
        }
    }
    match curve.shells.first() {
        Some(&(_, c)) if c < cutoff => f64::INFINITY,
        _ => 2.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntanglementReport {
    pub e_rot: f64,
    pub e_trans: f64,
    pub e_z: f64,
    pub e_total: f64,
}

/// Mean over class pairs of `exp(−(μ_i − μ_j)² / (σ_i σ_j))`, from per-class
/// mean and sample standard deviation of a scalar projection.
pub fn latent_overlap(class_stats: &[(f64, f64)]) -> Result<f64> {
    if class_stats.len() < 2 {
        return Err(HetemError::InsufficientData("overlap needs >= 2 classes".into()));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..class_stats.len() {
        for j in i + 1..class_stats.len() {
            let (mi, si) = class_stats[i];
            let (mj, sj) = class_stats[j];
            sum += (-(mi - mj).powi(2) / (si * sj)).exp();
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Per-class `(mean, sample std)` of PC1 projections, in sorted label order.
pub fn pc1_class_stats(latents: &Array2<f64>, labels: &[usize]) -> Result<Vec<(f64, f64)>> {
    let pc1 = Pca::fit(latents)?.project(latents, 1).column(0).to_vec();
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (&l, v) in labels.iter().zip(pc1) {
        groups.entry(l).or_default().push(v);
    }
    groups
        .into_iter()
        .map(|(label, v)| {
            if v.len() < 2 {
                return Err(HetemError::InsufficientData(format!("class {label} has {} points", v.len())));
            }
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            if !(sd > 0.0) {
                return Err(HetemError::DegenerateStatistics(format!("class {label} has zero spread on PC1")));
            }
            Ok((m, sd))
        })
        .collect()
}

/// Sum of aligned pose errors and latent class overlap.
pub fn entanglement(
    latents: &Array2<f64>,
    labels: &[usize],
    pred_rot: &[Matrix3<f64>],
    pred_t: &[[f64; 2]],
    truth_rot: &[Matrix3<f64>],
    truth_t: &[[f64; 2]],
) -> Result<EntanglementReport> {
    let e_z = latent_overlap(&pc1_class_stats(latents, labels)?)?;
    let al = align_poses_global(pred_rot, truth_rot)?;
    let e_rot = rotation_error_median(pred_rot, truth_rot, &al);
    let e_trans = translation_error_median(pred_t, truth_t);
    Ok(EntanglementReport {
        e_rot,
        e_trans,
        e_z,
        e_total: e_rot + e_trans + e_z,
    })
}

/// Points with fewer members than this use the class mean latent.
pub const MIN_KDE_POINTS: usize = 10;

/// Latent at the PC1 density peak of each class, in sorted label order.
pub fn representative_latents(latents: &Array2<f64>, labels: &[usize]) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let mut out = Vec::with_capacity(groups.len());
    for (label, idx) in groups {
        let sub = latents.select(Axis(0), &idx);
        let mean: Vec<f64> = sub.mean_axis(Axis(0)).expect("non-empty class").to_vec();
        if idx.len() < MIN_KDE_POINTS {
            tracing::warn!(label, n = idx.len(), "too few points for a density estimate; using class mean");
            out.push((label, mean));
            continue;
        }
        let pca = Pca::fit(&sub)?;
        let scores = pca.project(&sub, 1).column(0).to_vec();
        out.push((label, pca.point_on_axis(0, kde_peak(&scores))));
    }
    Ok(out)
}

/// Decodes one volume per class at its representative latent.
pub fn representative_volumes<T: Real>(
    decoder: &Decoder<T>,
    latents: &Array2<f64>,
    labels: &[usize],
    l: usize,
    apix: f64,
    frame: Option<&Matrix3<f64>>,
) -> Result<Vec<(usize, Volume)>> {
    representative_latents(latents, labels)?
        .into_iter()
        .map(|(label, z)| Ok((label, extract_volume(decoder, &z, l, apix, frame)?)))
        .collect()
}

#[cfg(test)]
mod tests;
