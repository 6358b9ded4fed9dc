//! Per-particle metadata CSV: rotation as nine matrix entries, translation,
//! CTF parameters and an optional class label.

use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{HetemError, Result};
use crate::model::checkpoint::write_atomic;
use crate::numerics::{CtfParams, Pose};
use crate::simulator::ParticleMeta;

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    index: usize,
    r11: f64,
    r12: f64,
    r13: f64,
    r21: f64,
    r22: f64,
    r23: f64,
    r31: f64,
    r32: f64,
    r33: f64,
    tx: f64,
    ty: f64,
    defocus_u: f64,
    defocus_v: f64,
    astig_angle: f64,
    voltage: f64,
    cs: f64,
    amp_contrast: f64,
    phase_shift: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_label: Option<usize>,
}

impl From<&ParticleMeta> for Row {
    fn from(m: &ParticleMeta) -> Self {
        let r = &m.pose.rot;
        Row {
            index: m.index,
            r11: r[(0, 0)],
            r12: r[(0, 1)],
            r13: r[(0, 2)],
            r21: r[(1, 0)],
            r22: r[(1, 1)],
            r23: r[(1, 2)],
            r31: r[(2, 0)],
            r32: r[(2, 1)],
            r33: r[(2, 2)],
            tx: m.pose.t[0],
            ty: m.pose.t[1],
            defocus_u: m.ctf.defocus_u,
            defocus_v: m.ctf.defocus_v,
            astig_angle: m.ctf.astig_angle,
            voltage: m.ctf.voltage,
            cs: m.ctf.cs,
            amp_contrast: m.ctf.amp_contrast,
            phase_shift: m.ctf.phase_shift,
            class_label: m.class_label,
        }
    }
}

impl From<Row> for ParticleMeta {
    fn from(r: Row) -> Self {
        ParticleMeta {
            index: r.index,
            pose: Pose::new(
                Matrix3::new(r.r11, r.r12, r.r13, r.r21, r.r22, r.r23, r.r31, r.r32, r.r33),
                [r.tx, r.ty],
            ),
            ctf: CtfParams {
                defocus_u: r.defocus_u,
                defocus_v: r.defocus_v,
                astig_angle: r.astig_angle,
                voltage: r.voltage,
                cs: r.cs,
                amp_contrast: r.amp_contrast,
                phase_shift: r.phase_shift,
            },
            class_label: r.class_label,
        }
    }
}

/// The class-label column is written only when every particle has a label.
pub fn meta_csv_to_bytes(meta: &[ParticleMeta]) -> Result<Vec<u8>> {
    let labelled = meta.iter().all(|m| m.class_label.is_some());
    let mut w = csv::Writer::from_writer(Vec::new());
    for m in meta {
        let mut row = Row::from(m);
        if !labelled {
            row.class_label = None;
        }
        w.serialize(row)?;
    }
    if meta.is_empty() {
        return Ok(Vec::new());
    }
    w.into_inner().map_err(|e| HetemError::Validation(e.to_string()))
}

pub fn meta_csv_write(path: &Path, meta: &[ParticleMeta]) -> Result<()> {
    write_atomic(path, &meta_csv_to_bytes(meta)?)
}

pub fn meta_csv_read(path: &Path) -> Result<Vec<ParticleMeta>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => HetemError::io(path, std::io::Error::other(e.to_string())),
        _ => HetemError::Csv(e),
    })?;
    let mut out = Vec::new();
    for rec in rdr.deserialize::<Row>() {
        let row = rec.map_err(|e| {
            let offset = e.position().map(|p| p.byte()).unwrap_or(0);
            HetemError::parse(path, offset, e.to_string())
        })?;
        out.push(ParticleMeta::from(row));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sample_rotation_uniform;
    use rand::SeedableRng;

    fn metas(labelled: bool) -> Vec<ParticleMeta> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        (0..5)
            .map(|i| ParticleMeta {
                index: i,
                pose: Pose::new(sample_rotation_uniform(&mut rng), [0.1 * i as f64, -1.0 / 3.0]),
                ctf: CtfParams::typical(12_345.678 + i as f64),
                class_label: labelled.then_some(i % 2),
            })
            .collect()
    }

    #[test]
    fn round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        for labelled in [true, false] {
            let m = metas(labelled);
            let p = dir.path().join(format!("m{labelled}.csv"));
            meta_csv_write(&p, &m).unwrap();
            let back = meta_csv_read(&p).unwrap();
            assert_eq!(back, m);
            let text = std::fs::read_to_string(&p).unwrap();
            assert_eq!(text.lines().next().unwrap().contains("class_label"), labelled);
        }
    }

    #[test]
    fn malformed_row_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        meta_csv_write(&p, &metas(true)).unwrap();
        let mut text = std::fs::read_to_string(&p).unwrap();
        text.push_str("9,x,0,0,0,1,0,0,0,1,0,0,1,1,0,300,2.7,0.1,0,1\n");
        std::fs::write(&p, text).unwrap();
        match meta_csv_read(&p) {
            Err(HetemError::Parse { offset, .. }) => assert!(offset > 0),
            other => panic!("{other:?}"),
        }
    }
}
