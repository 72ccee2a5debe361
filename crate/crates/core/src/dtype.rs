use std::fmt;

use bytemuck::Pod;
use num_complex::Complex64;

/// Element type of a host or device array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    I64,
    F32,
    F64,
    C128,
    /// Raw bytes. Valid for host buffers but not for offload arrays.
    U8,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::I64 | DType::F64 => 8,
            DType::F32 => 4,
            DType::C128 => 16,
            DType::U8 => 1,
        }
    }

    /// Whether offload arrays and the built-in kernels support this type.
    pub fn is_offloadable(self) -> bool {
        !matches!(self, DType::U8)
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::I64 => "i64",
            DType::F32 => "f32",
            DType::F64 => "f64",
            DType::C128 => "c128",
            DType::U8 => "u8",
        }
    }

    pub const OFFLOADABLE: [DType; 4] = [DType::I64, DType::F32, DType::F64, DType::C128];
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Plain-old-data element types that can live in host and device buffers.
pub trait Element: Pod + PartialEq + fmt::Debug + Send + Sync + 'static {
    const DTYPE: DType;
}

impl Element for i64 {
    const DTYPE: DType = DType::I64;
}
impl Element for f32 {
    const DTYPE: DType = DType::F32;
}
impl Element for f64 {
    const DTYPE: DType = DType::F64;
}
impl Element for Complex64 {
    const DTYPE: DType = DType::C128;
}
impl Element for u8 {
    const DTYPE: DType = DType::U8;
}

/// A scalar kernel argument or fill value.
///
/// Scalars travel to the device as little-endian encodings: 8 bytes for
/// `i64`/`f64`, 16 bytes for `c128`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scalar {
    I64(i64),
    F64(f64),
    C128(Complex64),
}

impl Scalar {
    pub fn encode(self) -> Vec<u8> {
        match self {
            Scalar::I64(v) => v.to_le_bytes().to_vec(),
            Scalar::F64(v) => v.to_le_bytes().to_vec(),
            Scalar::C128(v) => {
                let mut b = v.re.to_le_bytes().to_vec();
                b.extend_from_slice(&v.im.to_le_bytes());
                b
            }
        }
    }

    pub fn dtype(self) -> DType {
        match self {
            Scalar::I64(_) => DType::I64,
            Scalar::F64(_) => DType::F64,
            Scalar::C128(_) => DType::C128,
        }
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::I64(v)
    }
}
impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::F64(v)
    }
}
impl From<Complex64> for Scalar {
    fn from(v: Complex64) -> Self {
        Scalar::C128(v)
    }
}
