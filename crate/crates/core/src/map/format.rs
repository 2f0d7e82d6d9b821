//! Binary grid file.
//!
//! All values little-endian:
//!
//! | bytes | content                                               |
//! |-------|-------------------------------------------------------|
//! | 4     | magic `OVMG`                                          |
//! | 4     | `u32` version                                         |
//! | 8     | `u32` image height, `u32` image width                 |
//! | 32    | `f64` fov_up, fov_down (degrees), r_min, r_max        |
//! | 16    | `f64` origin x, y                                     |
//! | 8     | `f64` resolution                                      |
//! | 8     | `u32` nx, `u32` ny                                    |
//! | 8     | `f64` sensor height                                   |
//!
//! The 88-byte header is followed by the occupancy bitmap (`ceil(nx*ny/8)`
//! bytes, cell `i` at bit `i % 8` of byte `i / 8`) and then, for each
//! occupied cell in index order, four `f32` planes of `H*W` values: range,
//! normal x, normal y, normal z.

use std::fs;
use std::path::Path;

use super::{MapError, VirtualScanGrid};
use crate::scan::{RangeImage, SensorIntrinsics, INVALID_RANGE};

pub const MAGIC: [u8; 4] = *b"OVMG";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 88;

pub fn encode_grid(grid: &VirtualScanGrid) -> Vec<u8> {
    let intr = &grid.intrinsics;
    let occupied = grid.occupied_indices();
    let plane = intr.pixel_count();
    let mut out = Vec::with_capacity(HEADER_LEN + grid.cell_count().div_ceil(8) + occupied.len() * plane * 16);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(intr.height as u32).to_le_bytes());
    out.extend_from_slice(&(intr.width as u32).to_le_bytes());
    for v in [intr.fov_up, intr.fov_down, intr.r_min, intr.r_max, grid.origin[0], grid.origin[1], grid.resolution] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(grid.nx as u32).to_le_bytes());
    out.extend_from_slice(&(grid.ny as u32).to_le_bytes());
    out.extend_from_slice(&grid.sensor_height.to_le_bytes());
    debug_assert_eq!(out.len(), HEADER_LEN);

    let mut bitmap = vec![0u8; grid.cell_count().div_ceil(8)];
    for &i in &occupied {
        bitmap[i / 8] |= 1 << (i % 8);
    }
    out.extend_from_slice(&bitmap);

    for &i in &occupied {
        let scan = grid.scan(i).expect("occupied cell has a scan");
        for r in scan.ranges() {
            out.extend_from_slice(&r.to_le_bytes());
        }
        for axis in 0..3 {
            for n in scan.normals() {
                out.extend_from_slice(&n[axis].to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.bytes[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        out
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }

    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }

    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }
}

fn corrupt(msg: impl Into<String>) -> MapError {
    MapError::Corrupt(msg.into())
}

pub fn decode_grid(bytes: &[u8]) -> Result<VirtualScanGrid, MapError> {
    let truncated = |needed: usize| MapError::Truncated { needed, actual: bytes.len() };
    if bytes.len() < 8 {
        return Err(if bytes.len() >= 4 && bytes[..4] != MAGIC { MapError::BadMagic } else { truncated(8) });
    }
    if bytes[..4] != MAGIC {
        return Err(MapError::BadMagic);
    }
    let mut rd = Reader { bytes, pos: 4 };
    let version = rd.u32();
    if version != VERSION {
        return Err(MapError::UnsupportedVersion(version));
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN));
    }
    let height = rd.u32() as usize;
    let width = rd.u32() as usize;
    let intrinsics = SensorIntrinsics {
        height,
        width,
        fov_up: rd.f64(),
        fov_down: rd.f64(),
        r_min: rd.f64(),
        r_max: rd.f64(),
    };
    intrinsics.validate().map_err(|e| corrupt(e.to_string()))?;
    let origin = [rd.f64(), rd.f64()];
    let resolution = rd.f64();
    let nx = rd.u32() as usize;
    let ny = rd.u32() as usize;
    let sensor_height = rd.f64();
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(corrupt("resolution must be positive"));
    }
    if !(origin.iter().all(|v| v.is_finite()) && sensor_height.is_finite()) {
        return Err(corrupt("non-finite origin or sensor height"));
    }
    if nx == 0 || ny == 0 {
        return Err(corrupt("grid has no cells"));
    }
    let cells = nx.checked_mul(ny).ok_or_else(|| corrupt("grid dimensions overflow"))?;
    let bitmap_len = cells.div_ceil(8);
    let bitmap_end = HEADER_LEN.checked_add(bitmap_len).ok_or_else(|| corrupt("grid dimensions overflow"))?;
    if bytes.len() < bitmap_end {
        return Err(truncated(bitmap_end));
    }
    let bitmap = &bytes[HEADER_LEN..bitmap_end];
    let occupied: Vec<usize> = (0..cells).filter(|i| bitmap[i / 8] >> (i % 8) & 1 == 1).collect();
    if bitmap_len * 8 > cells && bitmap[bitmap_len - 1] >> (cells % 8) != 0 {
        return Err(corrupt("padding bits set in occupancy bitmap"));
    }
    let plane = intrinsics.pixel_count();
    let needed = occupied
        .len()
        .checked_mul(plane)
        .and_then(|v| v.checked_mul(16))
        .and_then(|v| v.checked_add(bitmap_end))
        .ok_or_else(|| corrupt("grid dimensions overflow"))?;
    if bytes.len() < needed {
        return Err(truncated(needed));
    }
    if bytes.len() > needed {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - needed)));
    }

    let mut grid = VirtualScanGrid::new(origin, resolution, sensor_height, (nx, ny), intrinsics);
    rd.pos = bitmap_end;
    for cell in occupied {
        let range: Vec<f32> = (0..plane).map(|_| rd.f32()).collect();
        let mut normal = vec![[0f32; 3]; plane];
        for axis in 0..3 {
            for n in normal.iter_mut() {
                n[axis] = rd.f32();
            }
        }
        for (i, (&r, n)) in range.iter().zip(&normal).enumerate() {
            let valid = r >= 0.0;
            if !valid && r.to_bits() != INVALID_RANGE.to_bits() {
                return Err(corrupt(format!("cell {cell} pixel {i}: bad range {r}")));
            }
            if valid && !intrinsics.range_in_bounds(r as f64) {
                return Err(corrupt(format!("cell {cell} pixel {i}: range {r} out of bounds")));
            }
            let zero = n.iter().all(|c| c.to_bits() == 0);
            let norm = n.iter().map(|c| (*c as f64).powi(2)).sum::<f64>().sqrt();
            if !zero && (!valid || (norm - 1.0).abs() > 1e-5) {
                return Err(corrupt(format!("cell {cell} pixel {i}: bad normal")));
            }
        }
        grid.set_scan(cell, Some(RangeImage::from_planes(intrinsics, range, normal)));
    }
    Ok(grid)
}

pub fn save_grid(grid: &VirtualScanGrid, path: &Path) -> Result<(), MapError> {
    fs::write(path, encode_grid(grid))?;
    Ok(())
}

pub fn load_grid(path: &Path) -> Result<VirtualScanGrid, MapError> {
    decode_grid(&fs::read(path)?)
}
