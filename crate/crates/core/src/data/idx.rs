//! IDX container I/O (the MNIST file format).
//!
//! Big-endian layout: two zero bytes, a type code byte (0x08 = uint8,
//! 0x0D = float32), a dimension-count byte, one u32 per dimension, then
//! the payload in row-major order. MNIST image files therefore carry
//! magic 0x00000803 and label files 0x00000801.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

const TYPE_U8: u8 = 0x08;
const TYPE_F32: u8 = 0x0D;
const MAX_DIMS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub enum IdxArray {
    U8 { dims: Vec<usize>, data: Vec<u8> },
    F32 { dims: Vec<usize>, data: Vec<f32> },
}

impl IdxArray {
    pub fn dims(&self) -> &[usize] {
        match self {
            IdxArray::U8 { dims, .. } | IdxArray::F32 { dims, .. } => dims,
        }
    }

    fn numel(&self) -> usize {
        self.dims().iter().product()
    }
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut cur = std::io::Cursor::new(&bytes);
    let magic = cur
        .read_u32::<BigEndian>()
        .map_err(|_| truncated(path, "magic"))?;
    let type_code = ((magic >> 8) & 0xFF) as u8;
    let ndim = (magic & 0xFF) as usize;
    if magic >> 16 != 0 || !(type_code == TYPE_U8 || type_code == TYPE_F32) {
        return Err(Error::Data(format!(
            "bad IDX magic 0x{magic:08X} in {}",
            path.display()
        )));
    }
    if ndim == 0 || ndim > MAX_DIMS {
        return Err(Error::Data(format!(
            "unsupported IDX dimension count {ndim} in {}",
            path.display()
        )));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut numel: usize = 1;
    for _ in 0..ndim {
        let d = cur.read_u32::<BigEndian>().map_err(|_| truncated(path, "dims"))? as usize;
        numel = numel
            .checked_mul(d)
            .ok_or_else(|| Error::Data(format!("IDX dims overflow in {}", path.display())))?;
        dims.push(d);
    }
    match type_code {
        TYPE_U8 => {
            let mut data = vec![0u8; numel];
            cur.read_exact(&mut data).map_err(|_| truncated(path, "payload"))?;
            ensure_consumed(&cur, &bytes, path)?;
            Ok(IdxArray::U8 { dims, data })
        }
        TYPE_F32 => {
            let mut data = vec![0f32; numel];
            cur.read_f32_into::<BigEndian>(&mut data).map_err(|_| truncated(path, "payload"))?;
            ensure_consumed(&cur, &bytes, path)?;
            Ok(IdxArray::F32 { dims, data })
        }
        _ => unreachable!(),
    }
}

pub fn write_idx(path: &Path, array: &IdxArray) -> Result<()> {
    if array.numel() == 0 {
        return Err(Error::Data("refusing to write IDX file with zero elements".into()));
    }
    if array.dims().len() > MAX_DIMS {
        return Err(Error::Data(format!("too many IDX dimensions: {}", array.dims().len())));
    }
    let mut buf: Vec<u8> = Vec::new();
    let type_code = match array {
        IdxArray::U8 { .. } => TYPE_U8,
        IdxArray::F32 { .. } => TYPE_F32,
    };
    buf.write_u32::<BigEndian>(((type_code as u32) << 8) | array.dims().len() as u32)
        .expect("vec write");
    for &d in array.dims() {
        buf.write_u32::<BigEndian>(d as u32).expect("vec write");
    }
    match array {
        IdxArray::U8 { data, .. } => buf.write_all(data).expect("vec write"),
        IdxArray::F32 { data, .. } => {
            for &v in data {
                buf.write_f32::<BigEndian>(v).expect("vec write");
            }
        }
    }
    crate::config::write_atomic(path, &buf)
}

fn truncated(path: &Path, what: &str) -> Error {
    Error::Data(format!("truncated IDX file {} (while reading {what})", path.display()))
}

fn ensure_consumed(cur: &std::io::Cursor<&Vec<u8>>, bytes: &[u8], path: &Path) -> Result<()> {
    if cur.position() as usize != bytes.len() {
        return Err(Error::Data(format!(
            "trailing bytes after IDX payload in {}",
            path.display()
        )));
    }
    Ok(())
}
