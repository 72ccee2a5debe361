//! Typed host arrays and device-resident offload arrays.

use std::fmt;
use std::sync::Arc;

use crate::dtype::{DType, Element, Scalar};
use crate::error::{Error, Result};
use crate::kernel::KernelArg;
use crate::memory::{DevicePointer, HostBuffer, DEFAULT_ALIGNMENT};
use crate::stream::{OffloadStream, Origin, Payload};

fn check_shape(shape: &[usize]) -> Result<usize> {
    if let Some(i) = shape.iter().position(|&e| e == 0) {
        return Err(Error::invalid(format!("extent {i} of shape {shape:?} is zero")));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::invalid(format!("shape {shape:?} overflows")))
}

fn row_major_strides(shape: &[usize]) -> Vec<isize> {
    let mut s = vec![1isize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1] as isize;
    }
    s
}

/// A typed, strided view of a host buffer.
///
/// Views created by [`HostArray::transposed`] share the buffer and are not
/// contiguous; operations that transfer the array reject them.
#[derive(Clone)]
pub struct HostArray {
    buf: HostBuffer,
    dtype: DType,
    shape: Vec<usize>,
    // In elements.
    strides: Vec<isize>,
    offset: usize,
}

impl HostArray {
    /// Wraps `buf` as a row-major array. The buffer length must match.
    pub fn from_buffer(buf: HostBuffer, dtype: DType, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n.checked_mul(dtype.size()) != Some(buf.len()) {
            return Err(Error::invalid(format!(
                "buffer of {} bytes does not hold {shape:?} of {dtype}",
                buf.len()
            )));
        }
        Ok(HostArray { buf, dtype, shape: shape.to_vec(), strides: row_major_strides(shape), offset: 0 })
    }

    pub fn from_slice<T: Element>(data: &[T], shape: &[usize]) -> Result<Self> {
        Self::from_buffer(HostBuffer::from_slice(data), T::DTYPE, shape)
    }

    /// A one-dimensional array.
    pub fn from_vec<T: Element>(data: &[T]) -> Result<Self> {
        Self::from_slice(data, &[data.len()])
    }

    pub fn zeros(dtype: DType, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        Self::from_buffer(HostBuffer::zeroed(n * dtype.size()), dtype, shape)
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn strides(&self) -> &[isize] {
        &self.strides
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Number of elements.
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nbytes(&self) -> usize {
        self.len() * self.dtype.size()
    }

    pub fn is_contiguous(&self) -> bool {
        self.strides == row_major_strides(&self.shape)
    }

    pub fn buffer(&self) -> &HostBuffer {
        &self.buf
    }

    /// Byte offset of the first element inside the buffer.
    pub fn byte_offset(&self) -> usize {
        self.offset * self.dtype.size()
    }

    /// The same data with axes reversed; shares the buffer.
    pub fn transposed(&self) -> HostArray {
        let mut t = self.clone();
        t.shape.reverse();
        t.strides.reverse();
        t
    }

    /// Copies the elements out in row-major order of this view.
    pub fn to_vec<T: Element>(&self) -> Result<Vec<T>> {
        self.check_type::<T>()?;
        let all = self.buf.to_vec::<T>()?;
        if self.is_contiguous() {
            return Ok(all[self.offset..self.offset + self.len()].to_vec());
        }
        let mut out = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; self.ndim()];
        for _ in 0..self.len() {
            let pos = self.offset as isize + idx.iter().zip(&self.strides).map(|(&i, &s)| i as isize * s).sum::<isize>();
            out.push(all[pos as usize]);
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < self.shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(out)
    }

    /// Mutable access to the elements of a contiguous array.
    pub fn with_slice_mut<T: Element, R>(&self, f: impl FnOnce(&mut [T]) -> R) -> Result<R> {
        self.check_type::<T>()?;
        if !self.is_contiguous() {
            return Err(Error::invalid("host array is not contiguous"));
        }
        let (off, n) = (self.offset, self.len());
        self.buf.with_slice_mut::<T, _>(|s| f(&mut s[off..off + n]))
    }

    fn check_type<T: Element>(&self) -> Result<()> {
        if T::DTYPE != self.dtype {
            return Err(Error::invalid(format!("array holds {}, not {}", self.dtype, T::DTYPE)));
        }
        Ok(())
    }
}

impl fmt::Debug for HostArray {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HostArray")
            .field("dtype", &self.dtype)
            .field("shape", &self.shape)
            .field("strides", &self.strides)
            .finish()
    }
}

/// A typed device buffer owned by a stream, optionally bound to a host
/// array for explicit update transfers.
///
/// Clones share the device buffer. Every operation enqueues on the owning
/// stream and returns immediately.
#[derive(Clone)]
pub struct OffloadArray {
    inner: Arc<OaInner>,
}

struct OaInner {
    stream: OffloadStream,
    dtype: DType,
    shape: Vec<usize>,
    ptr: DevicePointer,
    host: Option<HostArray>,
}

fn check_dtype(dtype: DType) -> Result<()> {
    if !dtype.is_offloadable() {
        return Err(Error::invalid(format!("dtype {dtype} is not supported on the device")));
    }
    Ok(())
}

impl OffloadArray {
    /// Allocates a device buffer matching `host` and binds the two. With
    /// `update_device` the host contents are copied over.
    pub fn bind(stream: &OffloadStream, host: &HostArray, update_device: bool) -> Result<Self> {
        check_dtype(host.dtype())?;
        if host.ndim() == 0 {
            return Err(Error::invalid("cannot bind a 0-dimensional array"));
        }
        if !host.is_contiguous() {
            return Err(Error::invalid("cannot bind a non-contiguous host array"));
        }
        let ptr = stream.allocate_device_memory(host.nbytes(), DEFAULT_ALIGNMENT)?;
        let oa = OffloadArray {
            inner: Arc::new(OaInner {
                stream: stream.clone(),
                dtype: host.dtype(),
                shape: host.shape().to_vec(),
                ptr,
                host: Some(host.clone()),
            }),
        };
        if update_device {
            oa.update_device()?;
        }
        Ok(oa)
    }

    /// An unbound device buffer. Its contents start as the debug fill
    /// pattern (`0xCD` bytes).
    pub fn empty(stream: &OffloadStream, dtype: DType, shape: &[usize]) -> Result<Self> {
        check_dtype(dtype)?;
        if shape.is_empty() {
            return Err(Error::invalid("offload arrays need at least one dimension"));
        }
        let n = check_shape(shape)?;
        let ptr = stream.allocate_device_memory(n * dtype.size(), DEFAULT_ALIGNMENT)?;
        Ok(OffloadArray {
            inner: Arc::new(OaInner { stream: stream.clone(), dtype, shape: shape.to_vec(), ptr, host: None }),
        })
    }

    /// Wraps an existing device region (for instance a slice of a larger
    /// allocation) as an unbound array.
    pub fn from_device(stream: &OffloadStream, ptr: DevicePointer, dtype: DType, shape: &[usize]) -> Result<Self> {
        check_dtype(dtype)?;
        let n = check_shape(shape)?;
        if shape.is_empty() || n * dtype.size() != ptr.len() {
            return Err(Error::invalid(format!("{} device bytes do not hold {shape:?} of {dtype}", ptr.len())));
        }
        stream.check_owned(&ptr)?;
        Ok(OffloadArray {
            inner: Arc::new(OaInner { stream: stream.clone(), dtype, shape: shape.to_vec(), ptr, host: None }),
        })
    }

    pub fn dtype(&self) -> DType {
        self.inner.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nbytes(&self) -> usize {
        self.inner.ptr.len()
    }

    pub fn stream(&self) -> &OffloadStream {
        &self.inner.stream
    }

    pub fn device_ptr(&self) -> &DevicePointer {
        &self.inner.ptr
    }

    pub fn host(&self) -> Option<&HostArray> {
        self.inner.host.as_ref()
    }

    fn bound(&self) -> Result<&HostArray> {
        self.inner.host.as_ref().ok_or_else(|| Error::InvalidState("offload array has no host binding".into()))
    }

    /// Enqueues a full copy host → device.
    pub fn update_device(&self) -> Result<()> {
        let h = self.bound()?;
        self.inner.stream.enqueue(vec![(
            Payload::H2D {
                src: h.buffer().clone(),
                dst: self.inner.ptr.clone(),
                nbytes: self.nbytes(),
                off_src: h.byte_offset(),
                off_dst: 0,
            },
            Origin::User,
        )]);
        Ok(())
    }

    /// Enqueues a full copy device → host.
    pub fn update_host(&self) -> Result<()> {
        let h = self.bound()?;
        self.inner.stream.enqueue(vec![(
            Payload::D2H {
                src: self.inner.ptr.clone(),
                dst: h.buffer().clone(),
                nbytes: self.nbytes(),
                off_src: 0,
                off_dst: h.byte_offset(),
            },
            Origin::User,
        )]);
        Ok(())
    }

    /// Copies the device contents into a fresh vector. Synchronises the
    /// owning stream.
    pub fn to_vec<T: Element>(&self) -> Result<Vec<T>> {
        if T::DTYPE != self.dtype() {
            return Err(Error::invalid(format!("array holds {}, not {}", self.dtype(), T::DTYPE)));
        }
        let buf = HostBuffer::zeroed(self.nbytes());
        self.inner.stream.transfer_device2host(&self.inner.ptr, &buf, self.nbytes(), 0, 0)?;
        self.inner.stream.sync()?;
        buf.to_vec()
    }

    fn elementwise(&self, op: &str, mut args: Vec<KernelArg>) -> Result<()> {
        let device = self.inner.stream.device();
        let kernel = device.elementwise_library().get_kernel(&format!("{op}_{}", self.dtype().name()))?;
        args.insert(0, KernelArg::Device(self.inner.ptr.clone()));
        args.push(KernelArg::Scalar(Scalar::I64(self.len() as i64)));
        self.inner.stream.invoke(&kernel, args)
    }

    /// Sets every element to `value`. Integer arrays need an integer value;
    /// floating arrays accept integers and floats; complex arrays accept any.
    pub fn fill(&self, value: impl Into<Scalar>) -> Result<()> {
        let v = match (self.dtype(), value.into()) {
            (DType::I64, v @ Scalar::I64(_)) => v,
            (DType::F32 | DType::F64, Scalar::I64(i)) => Scalar::F64(i as f64),
            (DType::F32 | DType::F64, v @ Scalar::F64(_)) => v,
            (DType::C128, Scalar::I64(i)) => Scalar::C128((i as f64).into()),
            (DType::C128, Scalar::F64(x)) => Scalar::C128(x.into()),
            (DType::C128, v @ Scalar::C128(_)) => v,
            (dt, v) => return Err(Error::invalid(format!("cannot fill {dt} array with {v:?}"))),
        };
        self.elementwise("fill", vec![KernelArg::Scalar(v)])
    }

    pub fn zero(&self) -> Result<()> {
        self.elementwise("zero", vec![])
    }

    /// `self[i] += other[i]`.
    pub fn add(&self, other: &OffloadArray) -> Result<()> {
        self.check_same(other)?;
        self.elementwise("add", vec![KernelArg::Device(other.inner.ptr.clone())])
    }

    /// `self[i] *= other[i]`.
    pub fn multiply(&self, other: &OffloadArray) -> Result<()> {
        self.check_same(other)?;
        self.elementwise("multiply", vec![KernelArg::Device(other.inner.ptr.clone())])
    }

    fn check_same(&self, other: &OffloadArray) -> Result<()> {
        if self.dtype() != other.dtype() || self.shape() != other.shape() {
            return Err(Error::invalid(format!(
                "operands differ: {} {:?} vs {} {:?}",
                self.dtype(),
                self.shape(),
                other.dtype(),
                other.shape()
            )));
        }
        self.inner.stream.check_owned(other.device_ptr())
    }
}

impl fmt::Debug for OffloadArray {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OffloadArray")
            .field("dtype", &self.inner.dtype)
            .field("shape", &self.inner.shape)
            .field("ptr", &self.inner.ptr)
            .field("bound", &self.inner.host.is_some())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_view_gathers() {
        let a = HostArray::from_slice(&[1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        let t = a.transposed();
        assert_eq!(t.shape(), &[3, 2]);
        assert!(!t.is_contiguous());
        assert_eq!(t.to_vec::<f64>().unwrap(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert!(HostArray::zeros(DType::F64, &[2, 0]).is_err());
        assert!(HostArray::from_slice(&[1i64, 2], &[3]).is_err());
    }
}
