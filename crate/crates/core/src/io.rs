//! On-disk formats: extended TUM trajectories
//! (`timestamp tx ty tz qx qy qz qw s`), dataset directories and atomic
//! file writes.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::liegroup::{Rotation, Sim3Pose};
use crate::scene::{Frame, FrameDataset, PinholeCamera, SceneSpec};

/// One trajectory line. The quaternion is written with `qw ≥ 0`.
pub fn format_tum(timestamp: f64, pose: &Sim3Pose) -> String {
    let q = UnitQuaternion::from_matrix(pose.rotation().matrix());
    let mut c = q.into_inner().coords; // (x, y, z, w)
    if c.w < 0.0 {
        c = -c;
    }
    let t = pose.translation();
    [timestamp, t.x, t.y, t.z, c.x, c.y, c.z, c.w, pose.scale()]
        .iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses one trajectory line; the scale column is optional and defaults
/// to 1.
pub fn parse_tum(line: &str, line_no: usize) -> Result<(f64, Sim3Pose)> {
    let bad = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let values = line
        .split_whitespace()
        .map(|tok| tok.parse::<f64>().map_err(|_| bad(format!("not a number: '{tok}'"))))
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != 8 && values.len() != 9 {
        return Err(bad(format!("expected 8 or 9 columns, found {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite value".into()));
    }
    let q = Quaternion::new(values[7], values[4], values[5], values[6]);
    if q.norm() < 1e-12 {
        return Err(bad("zero quaternion".into()));
    }
    let r = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
    let scale = values.get(8).copied().unwrap_or(1.0);
    let pose = Sim3Pose::new(
        Rotation::from_matrix(r).map_err(|e| bad(e.to_string()))?,
        Vector3::new(values[1], values[2], values[3]),
        scale,
    )
    .map_err(|e| bad(e.to_string()))?;
    Ok((values[0], pose))
}

pub fn write_trajectory<W: Write>(mut w: W, poses: &[(f64, Sim3Pose)]) -> Result<()> {
    writeln!(w, "# timestamp tx ty tz qx qy qz qw s")?;
    for (ts, pose) in poses {
        writeln!(w, "{}", format_tum(*ts, pose))?;
    }
    Ok(())
}

/// Reads a trajectory, skipping blank lines and `#` comments.
pub fn read_trajectory<R: Read>(r: R) -> Result<Vec<(f64, Sim3Pose)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(parse_tum(trimmed, i + 1)?);
    }
    Ok(out)
}

pub fn trajectory_string(poses: &[(f64, Sim3Pose)]) -> String {
    let mut buf = Vec::new();
    write_trajectory(&mut buf, poses).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

/// Writes through a sibling temp file and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = BufWriter::new(fs::File::create(&tmp)?);
        f.write_all(bytes)?;
        f.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn encode<F: FnOnce(&mut Vec<u8>) -> Result<()>>(f: F) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub const DATASET_MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub time_index: usize,
    pub time_code: f64,
    pub image: String,
    pub image_ppm: String,
    pub depth: String,
    /// Extended TUM lines.
    pub gt_pose: String,
    pub init_pose: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub camera: PinholeCamera,
    pub frames: Vec<FrameRecord>,
    pub stride: usize,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// Generating scene, kept so later stages can initialize from it.
    pub scene: Option<SceneSpec>,
}

/// Writes images (PFM and PPM), depth maps and the manifest into `dir`.
pub fn save_dataset(
    dir: &Path,
    dataset: &FrameDataset,
    stride: usize,
    scene: Option<&SceneSpec>,
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir.join("frames"))?;
    let mut records = Vec::with_capacity(dataset.len());
    for frame in &dataset.frames {
        let stem = format!("frames/{:05}", frame.time_index);
        let image = format!("{stem}.pfm");
        let image_ppm = format!("{stem}.ppm");
        let depth = format!("{stem}_depth.pfm");
        write_atomic(&dir.join(&image), &encode(|b| frame.image.write_pfm(b))?)?;
        write_atomic(&dir.join(&image_ppm), &encode(|b| frame.image.write_ppm(b))?)?;
        write_atomic(&dir.join(&depth), &encode(|b| frame.depth.write_pfm(b))?)?;
        records.push(FrameRecord {
            time_index: frame.time_index,
            time_code: frame.time_code,
            image,
            image_ppm,
            depth,
            gt_pose: format_tum(frame.time_code, &frame.gt_pose),
            init_pose: format_tum(frame.time_code, &frame.init_pose),
        });
    }
    let (train, test) = crate::scene::sparse_split(dataset.len(), stride);
    let manifest = DatasetManifest {
        camera: dataset.camera,
        frames: records,
        stride: stride.max(1),
        train_indices: train,
        test_indices: test,
        scene: scene.cloned(),
    };
    let gt: Vec<_> = dataset.frames.iter().map(|f| (f.time_code, f.gt_pose)).collect();
    let init: Vec<_> = dataset.frames.iter().map(|f| (f.time_code, f.init_pose)).collect();
    write_atomic(&dir.join("gt_poses.txt"), trajectory_string(&gt).as_bytes())?;
    write_atomic(&dir.join("init_poses.txt"), trajectory_string(&init).as_bytes())?;
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(&dir.join(DATASET_MANIFEST), &json)?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<(FrameDataset, DatasetManifest)> {
    let manifest: DatasetManifest =
        serde_json::from_reader(BufReader::new(fs::File::open(dir.join(DATASET_MANIFEST))?))?;
    manifest.camera.validate()?;
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for rec in &manifest.frames {
        let image = Image::read_pfm(fs::File::open(resolve(dir, &rec.image))?)?;
        let depth = Image::read_pfm(fs::File::open(resolve(dir, &rec.depth))?)?;
        let cam = &manifest.camera;
        if image.width != cam.width || image.height != cam.height || image.channels != 3 {
            return invalid(format!("{}: image does not match the camera", rec.image));
        }
        if depth.width != cam.width || depth.height != cam.height || depth.channels != 1 {
            return invalid(format!("{}: depth map does not match the camera", rec.depth));
        }
        let (_, gt_pose) = parse_tum(&rec.gt_pose, 1)?;
        let (_, init_pose) = parse_tum(&rec.init_pose, 1)?;
        frames.push(Frame {
            image,
            depth,
            time_index: rec.time_index,
            time_code: rec.time_code,
            gt_pose,
            init_pose,
        });
    }
    Ok((
        FrameDataset {
            frames,
            camera: manifest.camera,
        },
        manifest,
    ))
}

fn resolve(dir: &Path, rel: &str) -> PathBuf {
    dir.join(rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::Sim3Tangent;

    #[test]
    fn tum_roundtrip() {
        let pose = Sim3Pose::exp(&Sim3Tangent::new(
            Vector3::new(0.3, -1.2, 2.0),
            Vector3::new(2.5, 0.4, -1.0),
            0.2,
        ));
        let line = format_tum(0.25, &pose);
        let (ts, back) = parse_tum(&line, 1).unwrap();
        assert_eq!(ts, 0.25);
        assert!((back.as_matrix() - pose.as_matrix()).norm() < 1e-12);
        let qw: f64 = line.split_whitespace().nth(7).unwrap().parse().unwrap();
        assert!(qw >= 0.0);
    }

    #[test]
    fn parse_errors_carry_line() {
        match read_trajectory("# c\n0 0 0 0 0 0 0 1 1\n0 0 x\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_tum("0 0 0 0 0 0 0 1 -1", 1).is_err());
        let (_, p) = parse_tum("1 1 2 3 0 0 0 1", 1).unwrap();
        assert_eq!(p.scale(), 1.0);
    }
}
