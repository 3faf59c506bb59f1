//! Binary dumps of frames and CSI blocks.
//!
//! Layout, all little-endian:
//!
//! | offset | type        | content                          |
//! |--------|-------------|----------------------------------|
//! | 0      | `[u8; 4]`   | magic `ISAC`                     |
//! | 4      | `u32`       | version, currently 1             |
//! | 8      | `u32`       | kind: 1 frames, 2 CSI            |
//! | 12     | `u32`       | number of dimensions `d`         |
//! | 16     | `u64 x d`   | dimensions, outermost first      |
//! | ...    | `f32 x 2`   | interleaved re, im, row-major    |
//!
//! Frames are `[G, M_R, N]` (symbol, antenna, time sample). CSI is
//! `[M_R, G_k, N_k]` (antenna, symbol, subcarrier).

use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::{Complex32, Complex64};

use crate::compensation::CsiBlock;
use crate::error::{IsacError, Result};

pub const MAGIC: [u8; 4] = *b"ISAC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpKind {
    Frames = 1,
    Csi = 2,
}

impl DumpKind {
    fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(DumpKind::Frames),
            2 => Ok(DumpKind::Csi),
            _ => Err(IsacError::Parse(format!("unknown dump kind {code}"))),
        }
    }
}

/// Decoded dump: a dense complex array in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dump {
    pub kind: DumpKind,
    pub dims: Vec<usize>,
    pub values: Vec<Complex32>,
}

impl Dump {
    /// Stacks equally sized matrices into `[count, rows, cols]`.
    fn from_matrices<'a, I>(kind: DumpKind, mats: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a DMatrix<Complex64>>,
    {
        let mut dims = None;
        let mut values = Vec::new();
        let mut count = 0;
        for m in mats {
            let shape = m.shape();
            if *dims.get_or_insert(shape) != shape {
                return Err(IsacError::DimensionMismatch(format!(
                    "matrix {count} is {shape:?}, expected {:?}",
                    dims.unwrap()
                )));
            }
            for r in 0..shape.0 {
                for c in 0..shape.1 {
                    let z = m[(r, c)];
                    values.push(Complex32::new(z.re as f32, z.im as f32));
                }
            }
            count += 1;
        }
        let (rows, cols) = dims.unwrap_or((0, 0));
        Ok(Self {
            kind,
            dims: vec![count, rows, cols],
            values,
        })
    }

    pub fn frames(frames: &[DMatrix<Complex64>]) -> Result<Self> {
        Self::from_matrices(DumpKind::Frames, frames)
    }

    pub fn csi(blocks: &[CsiBlock]) -> Result<Self> {
        Self::from_matrices(DumpKind::Csi, blocks.iter().map(|b| &b.values))
    }

    /// Splits a 3-D dump back into matrices along the outer axis.
    pub fn matrices(&self) -> Result<Vec<DMatrix<Complex64>>> {
        let [count, rows, cols] = self.dims[..] else {
            return Err(IsacError::DimensionMismatch(format!("expected 3 dimensions, got {}", self.dims.len())));
        };
        Ok((0..count)
            .map(|i| {
                let base = i * rows * cols;
                DMatrix::from_fn(rows, cols, |r, c| {
                    let z = self.values[base + r * cols + c];
                    Complex64::new(z.re as f64, z.im as f64)
                })
            })
            .collect())
    }

    /// CSI blocks of one UE, antenna index taken from the outer axis.
    pub fn csi_blocks(&self, ue_index: usize) -> Result<Vec<CsiBlock>> {
        if self.kind != DumpKind::Csi {
            return Err(IsacError::Parse("dump holds frames, not CSI".into()));
        }
        Ok(self
            .matrices()?
            .into_iter()
            .enumerate()
            .map(|(m, values)| CsiBlock {
                values,
                antenna_index: m,
                ue_index,
            })
            .collect())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.kind as u32).to_le_bytes())?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for z in &self.values {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(IsacError::Parse("bad magic, not an ISAC dump".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(IsacError::Parse(format!("unsupported dump version {version}")));
        }
        let kind = DumpKind::from_code(read_u32(&mut r)?)?;
        let ndims = read_u32(&mut r)? as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            dims.push(usize::try_from(u64::from_le_bytes(b)).map_err(|_| IsacError::Parse("dimension overflows usize".into()))?);
        }
        let total = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| IsacError::Parse("dump size overflows".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != total * 8 {
            return Err(IsacError::Parse(format!("payload is {} bytes, header implies {}", bytes.len(), total * 8)));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| {
                Complex32::new(
                    f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                    f32::from_le_bytes([c[4], c[5], c[6], c[7]]),
                )
            })
            .collect();
        Ok(Self { kind, dims, values })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
