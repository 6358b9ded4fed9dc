//! Command implementations shared by the binary and the integration tests.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{AnalysisOptions, RunConfig};
use super::meta::{meta_csv_read, meta_csv_write};
use super::mrc::{mrc_read, mrc_write, mrcs_read, mrcs_write};
use super::plot::{line_chart, Series};
use crate::analysis::{
    align_poses_global, classification_error, entanglement, fsc_curve, fsc_resolution, representative_latents,
    rotation_error_median, spearman_pc1, stats::Pca, translation_error_median, EntanglementReport, FscCurve,
    PoseAlignment,
};
use crate::error::{HetemError, Result};
use crate::model::checkpoint::{write_atomic, Archive};
use crate::model::{extract_volume, rot6d_to_matrix_lenient, Decoder, Model};
use crate::numerics::Volume;
use crate::simulator::{
    build_dataset, estimate_corner_noise_variance, image_variance, make_phantoms, snr_linear, ParticleStack,
};
use crate::trainer::{model_from_archive, run_training, EpochLog, Trainer};

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const STACK_FILE: &str = "particles.mrcs";
pub const META_FILE: &str = "particles.csv";
pub const VOLUME_DIR: &str = "volumes";
pub const CHECKPOINT_FILE: &str = "checkpoint.hckp";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.json";

/// Ground-truth volume file for class `c`.
pub fn volume_path(dataset_dir: &Path, c: usize) -> PathBuf {
    dataset_dir.join(VOLUME_DIR).join(format!("class_{c:02}.mrc"))
}

fn is_nonempty_dir(dir: &Path) -> bool {
    fs::read_dir(dir).map(|mut it| it.next().is_some()).unwrap_or(false)
}

/// Creates `dir`, refusing a non-empty one unless `force`.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if is_nonempty_dir(dir) && !force {
        return Err(HetemError::OutputExists(dir.to_path_buf()));
    }
    fs::create_dir_all(dir).map_err(|e| HetemError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub n_images: usize,
    pub class_counts: Vec<usize>,
    pub requested_snr_db: f64,
    /// Summed clean variance over summed noise variance, in dB.
    pub achieved_snr_db: Option<f64>,
    /// Median relative error of the corner-pixel noise estimate against the
    /// injected per-image variance.
    pub corner_noise_median_rel_err: Option<f64>,
}

/// Writes ground-truth volumes, the particle stack, metadata and a manifest.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path, force: bool) -> Result<SimulateSummary> {
    cfg.validate()?;
    prepare_output_dir(out, force)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.dataset.seed);
    rng.set_stream(0);
    let volumes = make_phantoms(&cfg.phantom, &mut rng)?;
    let stack = build_dataset(&volumes, &cfg.dataset)?;

    let vol_dir = out.join(VOLUME_DIR);
    fs::create_dir_all(&vol_dir).map_err(|e| HetemError::io(&vol_dir, e))?;
    for (c, v) in volumes.iter().enumerate() {
        mrc_write(&volume_path(out, c), v)?;
    }
    mrcs_write(&out.join(STACK_FILE), &stack.images, stack.apix)?;
    meta_csv_write(&out.join(META_FILE), &stack.meta)?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_toml_string()?)?;

    let mut class_counts = vec![0usize; volumes.len()];
    for m in &stack.meta {
        if let Some(c) = m.class_label {
            class_counts[c] += 1;
        }
    }
    let corner_err = stack.clean.as_ref().and_then(|clean| {
        if !cfg.dataset.snr_db.is_finite() {
            return None;
        }
        let mut errs: Vec<f64> = clean
            .outer_iter()
            .zip(stack.images.outer_iter())
            .filter_map(|(c, n)| {
                let c = c.mapv(|v| v as f64);
                let injected = image_variance(&c) / snr_linear(cfg.dataset.snr_db);
                let est = estimate_corner_noise_variance(&n.mapv(|v| v as f64));
                (injected > 0.0).then(|| (est - injected).abs() / injected)
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        errs.get(errs.len() / 2).copied()
    });
    let summary = SimulateSummary {
        n_images: stack.len(),
        class_counts,
        requested_snr_db: cfg.dataset.snr_db,
        achieved_snr_db: stack.achieved_snr_db(),
        corner_noise_median_rel_err: corner_err,
    };
    write_json(
        &out.join(MANIFEST_FILE),
        &json!({
            "command": "simulate",
            "version": env!("CARGO_PKG_VERSION"),
            "seed": cfg.dataset.seed,
            "l": cfg.phantom.l,
            "apix": cfg.phantom.apix,
            "phantom": cfg.phantom.kind,
            "summary": summary,
        }),
    )?;
    Ok(summary)
}

/// A simulated or imported dataset directory.
pub struct Dataset {
    pub stack: ParticleStack,
    /// Ground-truth volumes by class index, when present.
    pub volumes: Option<Vec<Volume>>,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let stack_path = dir.join(STACK_FILE);
    let (images, apix) = mrcs_read(&stack_path)?;
    let meta = meta_csv_read(&dir.join(META_FILE))?;
    if meta.len() != images.shape()[0] {
        return Err(HetemError::Validation(format!(
            "{} has {} images but {} has {} rows",
            stack_path.display(),
            images.shape()[0],
            META_FILE,
            meta.len()
        )));
    }
    let mut volumes = Vec::new();
    while volume_path(dir, volumes.len()).exists() {
        volumes.push(mrc_read(&volume_path(dir, volumes.len()))?);
    }
    Ok(Dataset {
        stack: ParticleStack {
            apix,
            images,
            meta,
            clean: None,
        },
        volumes: (!volumes.is_empty()).then_some(volumes),
    })
}

pub fn train_log_to_csv(rows: &[EpochLog]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "epoch",
        "loss_sym",
        "loss_kl",
        "loss_trans",
        "loss_cpp_rot",
        "loss_cpp_trans",
        "wall_seconds",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.loss_sym.to_string(),
            r.loss_kl.to_string(),
            r.loss_trans.to_string(),
            opt(r.loss_cpp_rot),
            opt(r.loss_cpp_trans),
            format!("{:.3}", r.wall_seconds),
        ])?;
    }
    w.into_inner().map_err(|e| HetemError::Validation(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub resumed_at_epoch: Option<usize>,
    pub epochs_completed: usize,
    pub last: Option<EpochLog>,
}

/// Trains on `data_dir`, checkpointing into `out` after every epoch. A run
/// directory holding a checkpoint resumes from it unless `force` is set.
pub fn cmd_train(
    cfg: &RunConfig,
    data_dir: &Path,
    out: &Path,
    force: bool,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainSummary> {
    cfg.validate()?;
    let data = load_dataset(data_dir)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    if force {
        for f in [CHECKPOINT_FILE, TRAIN_LOG_FILE, MANIFEST_FILE] {
            let p = out.join(f);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| HetemError::io(&p, e))?;
            }
        }
    }
    let (mut trainer, resumed) = if ckpt.exists() {
        let archive = Archive::read(&ckpt)?;
        let mut t = Trainer::<f32>::from_archive(&data.stack, &archive)?;
        let mut saved = t.cfg.clone();
        saved.epochs = cfg.train.epochs;
        if saved != cfg.train || t.model.cfg != cfg.model {
            return Err(HetemError::Validation(format!(
                "{} was written with a different configuration; use --force to start over",
                ckpt.display()
            )));
        }
        t.cfg.epochs = cfg.train.epochs;
        t.cfg.validate()?;
        let at = t.epoch;
        (t, Some(at))
    } else {
        prepare_output_dir(out, force)?;
        (Trainer::<f32>::new(&data.stack, &cfg.model, &cfg.train)?, None)
    };
    write_text(&out.join(CONFIG_FILE), &cfg.to_toml_string()?)?;
    let manifest = |t: &Trainer<f32>, status: &str| {
        json!({
            "command": "train",
            "version": env!("CARGO_PKG_VERSION"),
            "dataset": data_dir,
            "seed": t.cfg.seed,
            "flags": t.cfg.flags,
            "epochs_completed": t.epoch,
            "resumed_at_epoch": resumed,
            "snr_db_est": t.snr_db(),
            "intensity_scale": t.intensity_scale(),
            "status": status,
        })
    };
    write_json(&out.join(MANIFEST_FILE), &manifest(&trainer, "running"))?;
    run_training(&mut trainer, &mut |t, row| {
        t.to_archive().write_atomic(&ckpt)?;
        write_atomic(&out.join(TRAIN_LOG_FILE), &train_log_to_csv(&t.log)?)?;
        write_json(&out.join(MANIFEST_FILE), &manifest(t, "running"))?;
        on_epoch(row);
        Ok(())
    })?;
    if trainer.log.is_empty() {
        write_atomic(&out.join(TRAIN_LOG_FILE), &train_log_to_csv(&[])?)?;
    }
    write_json(&out.join(MANIFEST_FILE), &manifest(&trainer, "finished"))?;
    write_text(&out.join("loss.svg"), &loss_chart(&trainer.log))?;
    Ok(TrainSummary {
        resumed_at_epoch: resumed,
        epochs_completed: trainer.epoch,
        last: trainer.log.last().cloned(),
    })
}

fn loss_chart(log: &[EpochLog]) -> String {
    let pts = |f: &dyn Fn(&EpochLog) -> Option<f64>| -> Vec<(f64, f64)> {
        log.iter().filter_map(|r| f(r).map(|v| (r.epoch as f64, v))).collect()
    };
    line_chart(
        "Training losses",
        "epoch",
        "loss",
        &[
            Series { name: "sym", points: pts(&|r| Some(r.loss_sym)) },
            Series { name: "cpp rot", points: pts(&|r| r.loss_cpp_rot) },
            Series { name: "cpp trans", points: pts(&|r| r.loss_cpp_trans) },
        ],
    )
}

/// Per-image encoder predictions in evaluation mode.
pub struct Predictions {
    pub rot: Vec<Matrix3<f64>>,
    pub t: Vec<[f64; 2]>,
    /// Posterior means, `n × d`.
    pub mu: Array2<f64>,
}

pub fn predict(model: &mut Model<f32>, images: &Array3<f32>, intensity_scale: f64, chunk: usize) -> Predictions {
    let scaled = images.mapv(|v| (v as f64 * intensity_scale) as f32);
    let out = model.encode_all(&scaled, chunk);
    let rot = out
        .rot6d
        .outer_iter()
        .map(|r| {
            let v: [f64; 6] = std::array::from_fn(|i| r[i] as f64);
            rot6d_to_matrix_lenient(&v)
        })
        .collect();
    let t = out.t.outer_iter().map(|r| [r[0] as f64, r[1] as f64]).collect();
    Predictions {
        rot,
        t,
        mu: out.mu.mapv(|v| v as f64),
    }
}

/// Flip of the image x axis, `diag(-1, 1, -1)`.
const IMAGE_FLIP: Matrix3<f64> = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);

/// Predicted translations in the frame of the alignment. An alignment whose
/// left factor is the image flip means the encoder reports poses of mirrored
/// images, whose x shifts are negated.
pub fn aligned_translations(t: &[[f64; 2]], al: &PoseAlignment) -> Vec<[f64; 2]> {
    let flipped = (al.r_global - IMAGE_FLIP).norm() < (al.r_global - Matrix3::identity()).norm();
    t.iter().map(|v| if flipped { [-v[0], v[1]] } else { *v }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub r_global: [[f64; 3]; 3],
    pub r_frame: [[f64; 3]; 3],
    pub mirror: bool,
}

impl From<&PoseAlignment> for AlignmentReport {
    fn from(al: &PoseAlignment) -> Self {
        let rows = |m: &Matrix3<f64>| std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]));
        AlignmentReport {
            r_global: rows(&al.r_global),
            r_frame: rows(&al.r_frame),
            mirror: al.mirror,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rot_mse_median: f64,
    pub trans_mse_median: f64,
    pub class_err: Option<f64>,
    pub spearman_pc1: Option<f64>,
    /// Resolution in pixels per class, against the ground-truth volume.
    pub fsc_res: Option<Vec<f64>>,
    pub e_entangle: Option<EntanglementReport>,
    pub alignment: AlignmentReport,
    pub classifier: String,
    pub notes: Vec<String>,
}

/// Pose metrics always; latent metrics when labels exist.
pub fn compute_metrics(pred: &Predictions, truth_rot: &[Matrix3<f64>], truth_t: &[[f64; 2]], labels: Option<&[usize]>) -> Result<(Metrics, PoseAlignment)> {
    let al = align_poses_global(&pred.rot, truth_rot)?;
    let t_al = aligned_translations(&pred.t, &al);
    let rot = rotation_error_median(&pred.rot, truth_rot, &al);
    let trans = translation_error_median(&t_al, truth_t);
    let mut notes = vec!["e_entangle.e_total adds a dimensionless rotation error to a translation error in pixels^2".to_string()];
    let (class_err, spearman, ent) = match labels {
        Some(labels) => {
            let k = labels.iter().copied().max().map_or(0, |m| m + 1);
            let class_err = match classification_error(&pred.mu, labels, k) {
                Ok(e) => Some(e),
                Err(e) => {
                    notes.push(format!("classification skipped: {e}"));
                    None
                }
            };
            let ordinal: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
            let sp = match spearman_pc1(&pred.mu, &ordinal) {
                Ok(v) => Some(v),
                Err(e) => {
                    notes.push(format!("spearman skipped: {e}"));
                    None
                }
            };
            let ent = match entanglement(&pred.mu, labels, &pred.rot, &t_al, truth_rot, truth_t) {
                Ok(v) => Some(v),
                Err(e) => {
                    notes.push(format!("entanglement skipped: {e}"));
                    None
                }
            };
            (class_err, sp, ent)
        }
        None => {
            notes.push("no class labels: classification, correlation and entanglement skipped".into());
            (None, None, None)
        }
    };
    Ok((
        Metrics {
            rot_mse_median: rot,
            trans_mse_median: trans,
            class_err,
            spearman_pc1: spearman,
            fsc_res: None,
            e_entangle: ent,
            alignment: AlignmentReport::from(&al),
            classifier: "PCA to min(d, k) components, k-means++ with 10 restarts, Hungarian matching".into(),
            notes,
        },
        al,
    ))
}

fn fsc_csv(curve: &FscCurve) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["frequency", "correlation"])?;
    for (f, c) in &curve.shells {
        w.write_record([f.to_string(), c.to_string()])?;
    }
    w.into_inner().map_err(|e| HetemError::Validation(e.to_string()))
}

pub fn write_fsc_csv(path: &Path, curve: &FscCurve) -> Result<()> {
    write_atomic(path, &fsc_csv(curve)?)
}

fn latent_outputs(out: &Path, mu: &Array2<f64>, labels: Option<&[usize]>) -> Result<()> {
    let pca = Pca::fit(mu)?;
    let k = mu.ncols().min(2);
    let scores = pca.project(mu, k);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["index", "class_label", "pc1", "pc2"])?;
    for (i, row) in scores.outer_iter().enumerate() {
        let label = labels.map(|l| l[i].to_string()).unwrap_or_default();
        let pc2 = if k > 1 { row[1].to_string() } else { String::new() };
        w.write_record([i.to_string(), label, row[0].to_string(), pc2])?;
    }
    write_atomic(&out.join("latent_pc.csv"), &w.into_inner().map_err(|e| HetemError::Validation(e.to_string()))?)?;

    // Gaussian KDE of PC1 per class on a shared grid.
    let pc1: Vec<f64> = scores.column(0).to_vec();
    let groups: Vec<(String, Vec<f64>)> = match labels {
        Some(l) => {
            let n_classes = l.iter().copied().max().map_or(0, |m| m + 1);
            (0..n_classes)
                .map(|c| {
                    let v = pc1.iter().zip(l).filter(|(_, &lab)| lab == c).map(|(v, _)| *v).collect();
                    (format!("class_{c:02}"), v)
                })
                .collect()
        }
        None => vec![("all".to_string(), pc1.clone())],
    };
    let lo = pc1.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pc1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid: Vec<f64> = (0..200).map(|i| lo + (hi - lo) * i as f64 / 199.0).collect();
    let mut header = vec!["pc1".to_string()];
    header.extend(groups.iter().map(|g| g.0.clone()));
    let dens: Vec<Vec<f64>> = groups.iter().map(|(_, v)| kde(v, &grid)).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for (i, x) in grid.iter().enumerate() {
        let mut rec = vec![x.to_string()];
        rec.extend(dens.iter().map(|d| d[i].to_string()));
        w.write_record(&rec)?;
    }
    write_atomic(&out.join("latent_pc1_density.csv"), &w.into_inner().map_err(|e| HetemError::Validation(e.to_string()))?)?;
    let series: Vec<Series> = groups
        .iter()
        .zip(&dens)
        .map(|((name, _), d)| Series { name, points: grid.iter().copied().zip(d.iter().copied()).collect() })
        .collect();
    write_text(&out.join("latent_pc1_density.svg"), &line_chart("Latent PC1 density", "PC1", "density", &series))
}

fn kde(samples: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = samples.len() as f64;
    if samples.len() < 2 {
        return vec![0.0; grid.len()];
    }
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let h = (sd * n.powf(-0.2)).max(1e-12);
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|x| norm * samples.iter().map(|s| (-0.5 * ((x - s) / h).powi(2)).exp()).sum::<f64>())
        .collect()
}

/// Computes every metric for a trained run and writes the report files into `out`.
pub fn cmd_evaluate(opts: &AnalysisOptions, run_dir: &Path, data_dir: &Path, out: &Path, force: bool) -> Result<Metrics> {
    let archive = Archive::read(&run_dir.join(CHECKPOINT_FILE))?;
    let mut model = model_from_archive::<f32>(&archive)?;
    let scale = archive.meta["intensity_scale"].as_f64().unwrap_or(1.0);
    let data = load_dataset(data_dir)?;
    if data.stack.side() != model.cfg.l {
        return Err(HetemError::Validation(format!(
            "dataset images are {} px but the model expects {}",
            data.stack.side(),
            model.cfg.l
        )));
    }
    prepare_output_dir(out, force)?;
    let pred = predict(&mut model, &data.stack.images, scale, opts.encode_chunk);
    let poses = data.stack.poses();
    let truth_rot: Vec<Matrix3<f64>> = poses.iter().map(|p| p.rot).collect();
    let truth_t: Vec<[f64; 2]> = poses.iter().map(|p| p.t).collect();
    let labels = data.stack.labels();
    let (mut metrics, al) = compute_metrics(&pred, &truth_rot, &truth_t, labels.as_deref())?;

    latent_outputs(out, &pred.mu, labels.as_deref())?;
    if let Some(labels) = labels.as_deref() {
        let frame = al.volume_frame();
        let l = model.cfg.l;
        let reps = representative_latents(&pred.mu, labels)?;
        let mut res = Vec::new();
        let mut series_data = Vec::new();
        for (label, z) in reps {
            let vol = extract_volume(&model.decoder, &z, l, data.stack.apix, Some(&frame))?;
            mrc_write(&out.join(format!("representative_class_{label:02}.mrc")), &vol)?;
            if let Some(gt) = data.volumes.as_ref().and_then(|v| v.get(label)) {
                let curve = fsc_curve(&vol, gt)?;
                write_fsc_csv(&out.join(format!("fsc_class_{label:02}.csv")), &curve)?;
                res.push(fsc_resolution(&curve, opts.fsc_cutoff));
                series_data.push((format!("class {label}"), curve));
            }
        }
        if !series_data.is_empty() {
            let series: Vec<Series> = series_data
                .iter()
                .map(|(n, c)| Series { name: n, points: c.shells.clone() })
                .collect();
            write_text(&out.join("fsc.svg"), &line_chart("FSC against ground truth", "cycles/pixel", "FSC", &series))?;
            metrics.fsc_res = Some(res);
        } else {
            metrics.notes.push("no ground-truth volumes: FSC skipped".into());
        }
    }
    let mut value = serde_json::to_value(&metrics)?;
    value["epoch"] = json!(archive.meta["epoch"]);
    value["n_images"] = json!(data.stack.len());
    write_json(&out.join(METRICS_FILE), &value)?;
    Ok(metrics)
}

/// FSC between two MRC volumes; writes the curve as CSV when `out_csv` is given.
pub fn cmd_fsc(a: &Path, b: &Path, cutoff: f64, out_csv: Option<&Path>) -> Result<(FscCurve, f64)> {
    let va = mrc_read(a)?;
    let vb = mrc_read(b)?;
    let curve = fsc_curve(&va, &vb)?;
    if let Some(p) = out_csv {
        write_fsc_csv(p, &curve)?;
    }
    let res = fsc_resolution(&curve, cutoff);
    Ok((curve, res))
}

/// Decodes the volume at latent `z` (zeros when absent) from a checkpoint.
pub fn cmd_extract_volume(run_dir: &Path, z: Option<&[f64]>, apix: f64, out: &Path) -> Result<Volume> {
    let archive = Archive::read(&run_dir.join(CHECKPOINT_FILE))?;
    let model = model_from_archive::<f32>(&archive)?;
    let dec: &Decoder<f32> = &model.decoder;
    let zeros = vec![0.0; dec.latent_dim()];
    let z = z.unwrap_or(&zeros);
    if z.len() != dec.latent_dim() {
        return Err(HetemError::Dimension(format!("latent has {} entries, model expects {}", z.len(), dec.latent_dim())));
    }
    let vol = extract_volume(dec, z, model.cfg.l, apix, None)?;
    mrc_write(out, &vol)?;
    Ok(vol)
}
