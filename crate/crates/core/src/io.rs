//! Scan and pose files.
//!
//! Point clouds are little-endian `f32` quadruples `(x, y, z, intensity)`;
//! intensity is written as zero and ignored on read. Pose files hold one
//! row-major 3x4 `map <- sensor` transform per line (12 floats).

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion};
use thiserror::Error;

use crate::scan::PointCloud;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: length {len} is not a multiple of 16 bytes")]
    BadPointFile { path: PathBuf, len: usize },
    #[error("{path}: point {index} is not finite")]
    NonFinite { path: PathBuf, index: usize },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
}

pub fn read_point_cloud(path: &Path) -> Result<PointCloud, IoError> {
    let bytes = fs::read(path)?;
    if bytes.len() % 16 != 0 {
        return Err(IoError::BadPointFile { path: path.into(), len: bytes.len() });
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    for (index, chunk) in bytes.chunks_exact(16).enumerate() {
        let f = |o: usize| f32::from_le_bytes(chunk[o..o + 4].try_into().unwrap()) as f64;
        let p = Point3::new(f(0), f(4), f(8));
        if !p.coords.iter().all(|c| c.is_finite()) {
            return Err(IoError::NonFinite { path: path.into(), index });
        }
        points.push(p);
    }
    Ok(PointCloud::from_finite(points))
}

pub fn write_point_cloud(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for p in cloud.points() {
        for c in [p.x as f32, p.y as f32, p.z as f32, 0.0] {
            out.write_all(&c.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// All `*.bin` files of a directory in lexical order.
pub fn list_scans(dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "bin"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn scan_file_name(index: usize) -> String {
    format!("{index:06}.bin")
}

pub fn read_poses(path: &Path) -> Result<Vec<Isometry3<f64>>, IoError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut poses = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| IoError::Parse { path: path.into(), line: n + 1, msg };
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| err(format!("{t:?}: {e}"))))
            .collect::<Result<_, _>>()?;
        if v.len() != 12 {
            return Err(err(format!("expected 12 values, found {}", v.len())));
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(err("non-finite value".into()));
        }
        let m = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix(&m));
        poses.push(Isometry3::from_parts(Translation3::new(v[3], v[7], v[11]), rot));
    }
    Ok(poses)
}

pub fn write_poses(path: &Path, poses: &[Isometry3<f64>]) -> Result<(), IoError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for pose in poses {
        let m = pose.to_homogeneous();
        let vals: Vec<String> = (0..3)
            .flat_map(|r| (0..4).map(move |c| (r, c)))
            .map(|(r, c)| format!("{:e}", m[(r, c)]))
            .collect();
        writeln!(out, "{}", vals.join(" "))?;
    }
    out.flush()?;
    Ok(())
}
