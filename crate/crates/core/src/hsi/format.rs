//! `HSICUBE1` array files.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size      | field                                   |
//! |--------|-----------|-----------------------------------------|
//! | 0      | 8         | magic `HSICUBE1`                        |
//! | 8      | 4         | `ndim: u32`                             |
//! | 12     | 4 · ndim  | `dims: u32` each, outermost first       |
//! | …      | 1         | dtype code: 1 = f32, 2 = f64, 3 = u8    |
//! | …      | rest      | row-major element data                  |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::real::DType;

pub const CUBE_MAGIC: &[u8; 8] = b"HSICUBE1";

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl ArrayData {
    pub fn dtype(&self) -> DType {
        match self {
            ArrayData::F32(_) => DType::F32,
            ArrayData::F64(_) => DType::F64,
            ArrayData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Decodes `count` little-endian elements of `dtype`.
    pub fn from_le_bytes(dtype: DType, bytes: &[u8]) -> Self {
        match dtype {
            DType::F32 => ArrayData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => ArrayData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U8 => ArrayData::U8(bytes.to_vec()),
        }
    }

    pub fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::U8(v) => out.extend_from_slice(v),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            ArrayData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::F64(v) => v.clone(),
            ArrayData::U8(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

/// An n-dimensional array as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayFile {
    pub dims: Vec<usize>,
    pub data: ArrayData,
}

impl ArrayFile {
    pub fn new(dims: Vec<usize>, data: ArrayData) -> Result<Self> {
        let expect: usize = dims.iter().product();
        if expect != data.len() {
            return Err(Error::Dimension(format!(
                "dims {dims:?} need {expect} elements, got {}",
                data.len()
            )));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::Dimension(format!("dims {dims:?} exceed u32")));
        }
        Ok(ArrayFile { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.dims.len() * 4 + self.data.len() * 8);
        out.extend_from_slice(CUBE_MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(self.data.dtype().code());
        self.data.write_le(&mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format(path, m);
        if bytes.len() < 12 || &bytes[..8] != CUBE_MAGIC {
            return Err(bad("missing HSICUBE1 magic"));
        }
        let ndim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = 12 + 4 * ndim + 1;
        if ndim == 0 || bytes.len() < header {
            return Err(bad("truncated header"));
        }
        let dims: Vec<usize> = (0..ndim)
            .map(|i| u32::from_le_bytes(bytes[12 + 4 * i..16 + 4 * i].try_into().unwrap()) as usize)
            .collect();
        let code = bytes[header - 1];
        let dtype = DType::from_code(code).ok_or_else(|| bad(&format!("unsupported dtype code {code}")))?;
        let count: usize = dims.iter().product();
        let payload = &bytes[header..];
        if payload.len() != count * dtype.size() {
            return Err(bad(&format!(
                "dims {dims:?} of {dtype:?} need {} data bytes, found {}",
                count * dtype.size(),
                payload.len()
            )));
        }
        Ok(ArrayFile {
            dims,
            data: ArrayData::from_le_bytes(dtype, payload),
        })
    }

    /// Dimensions from the header alone, without reading the payload.
    pub fn read_dims(path: &Path) -> Result<Vec<usize>> {
        use std::io::Read;
        let bad = |m: &str| Error::format(path, m);
        let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut head = [0u8; 12];
        f.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
        if &head[..8] != CUBE_MAGIC {
            return Err(bad("missing HSICUBE1 magic"));
        }
        let ndim = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        if ndim == 0 || ndim > 16 {
            return Err(bad("implausible ndim"));
        }
        let mut dims = vec![0u8; 4 * ndim];
        f.read_exact(&mut dims).map_err(|_| bad("truncated header"))?;
        Ok(dims
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Writes through a sibling temporary file so a failure never leaves a
    /// partial file at `path`.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Memory order of a raw dump handed to [`convert_raw`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawOrder {
    /// Row-major (C / NumPy default).
    RowMajor,
    /// Column-major (Fortran / MATLAB).
    ColumnMajor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

/// Element type of a raw dump. 16-bit integer dumps are widened to f32.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawType {
    U8,
    U16,
    I16,
    F32,
    F64,
}

impl RawType {
    pub fn size(self) -> usize {
        match self {
            RawType::U8 => 1,
            RawType::U16 | RawType::I16 => 2,
            RawType::F32 => 4,
            RawType::F64 => 8,
        }
    }
}

impl From<DType> for RawType {
    fn from(d: DType) -> Self {
        match d {
            DType::U8 => RawType::U8,
            DType::F32 => RawType::F32,
            DType::F64 => RawType::F64,
        }
    }
}

/// Converts a headerless raw dump into an [`ArrayFile`].
pub fn convert_raw(
    bytes: &[u8],
    dims: &[usize],
    raw: impl Into<RawType>,
    order: RawOrder,
    endian: Endian,
) -> Result<ArrayFile> {
    let raw = raw.into();
    let size = raw.size();
    let count: usize = dims.iter().product();
    let expect = count * size;
    if bytes.len() != expect {
        return Err(Error::Dimension(format!(
            "raw dump has {} bytes, dims {dims:?} of {raw:?} need {expect}",
            bytes.len()
        )));
    }
    let mut le = bytes.to_vec();
    if endian == Endian::Big && size > 1 {
        le.chunks_exact_mut(size).for_each(<[u8]>::reverse);
    }
    if order == RawOrder::ColumnMajor && dims.len() > 1 {
        le = column_to_row_major(&le, dims, size);
    }
    let data = match raw {
        RawType::U8 => ArrayData::U8(le),
        RawType::F32 => ArrayData::from_le_bytes(DType::F32, &le),
        RawType::F64 => ArrayData::from_le_bytes(DType::F64, &le),
        RawType::U16 => ArrayData::F32(
            le.chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]) as f32)
                .collect(),
        ),
        RawType::I16 => ArrayData::F32(
            le.chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32)
                .collect(),
        ),
    };
    ArrayFile::new(dims.to_vec(), data)
}

fn column_to_row_major(src: &[u8], dims: &[usize], size: usize) -> Vec<u8> {
    let count: usize = dims.iter().product();
    let mut out = vec![0u8; src.len()];
    let mut idx = vec![0usize; dims.len()];
    for row_major in 0..count {
        // column-major offset of the current multi-index
        let mut off = 0;
        let mut stride = 1;
        for (i, &d) in idx.iter().zip(dims) {
            off += i * stride;
            stride *= d;
        }
        out[row_major * size..(row_major + 1) * size].copy_from_slice(&src[off * size..(off + 1) * size]);
        for k in (0..dims.len()).rev() {
            idx[k] += 1;
            if idx[k] < dims[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    out
}
