use bytemuck::Pod;

/// Argument view handed to a kernel while it runs on the executor.
///
/// Argument `i` is the byte region of the `i`-th device address passed to
/// the kernel. Regions may overlap (a kernel may receive the same buffer
/// twice), so typed access is per argument, and kernels that read one
/// argument while writing another should copy the input with [`read`].
///
/// [`read`]: KernelArgs::read
pub struct KernelArgs<'a> {
    mem: &'a mut [u8],
    regions: Vec<(usize, usize)>,
}

impl<'a> KernelArgs<'a> {
    pub fn new(mem: &'a mut [u8], regions: Vec<(usize, usize)>) -> Self {
        for &(start, len) in &regions {
            assert!(start + len <= mem.len(), "argument region outside device memory");
        }
        KernelArgs { mem, regions }
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    fn region(&self, i: usize) -> Result<(usize, usize), String> {
        self.regions
            .get(i)
            .copied()
            .ok_or_else(|| format!("kernel reads argument {i} but only {} were passed", self.regions.len()))
    }

    pub fn bytes(&self, i: usize) -> Result<&[u8], String> {
        let (s, n) = self.region(i)?;
        Ok(&self.mem[s..s + n])
    }

    pub fn bytes_mut(&mut self, i: usize) -> Result<&mut [u8], String> {
        let (s, n) = self.region(i)?;
        Ok(&mut self.mem[s..s + n])
    }

    /// Decodes the leading `size_of::<T>()` bytes of argument `i`.
    pub fn scalar<T: Pod>(&self, i: usize) -> Result<T, String> {
        let b = self.bytes(i)?;
        let n = std::mem::size_of::<T>();
        if b.len() < n {
            return Err(format!("argument {i} holds {} bytes, scalar needs {n}", b.len()));
        }
        Ok(bytemuck::pod_read_unaligned(&b[..n]))
    }

    /// Reads argument `i` as an `i64` count and checks it is non-negative.
    pub fn count(&self, i: usize) -> Result<usize, String> {
        let n: i64 = self.scalar(i)?;
        usize::try_from(n).map_err(|_| format!("argument {i}: negative count {n}"))
    }

    /// Copies argument `i` out as elements of `T`; trailing bytes are ignored.
    pub fn read<T: Pod>(&self, i: usize) -> Result<Vec<T>, String> {
        let b = self.bytes(i)?;
        let n = b.len() / std::mem::size_of::<T>();
        let mut out = vec![T::zeroed(); n];
        bytemuck::cast_slice_mut::<T, u8>(&mut out).copy_from_slice(&b[..n * std::mem::size_of::<T>()]);
        Ok(out)
    }

    pub fn slice<T: Pod>(&self, i: usize) -> Result<&[T], String> {
        let b = self.bytes(i)?;
        let n = b.len() / std::mem::size_of::<T>();
        bytemuck::try_cast_slice(&b[..n * std::mem::size_of::<T>()]).map_err(|e| format!("argument {i}: {e}"))
    }

    pub fn slice_mut<T: Pod>(&mut self, i: usize) -> Result<&mut [T], String> {
        let b = self.bytes_mut(i)?;
        let n = b.len() / std::mem::size_of::<T>();
        bytemuck::try_cast_slice_mut(&mut b[..n * std::mem::size_of::<T>()]).map_err(|e| format!("argument {i}: {e}"))
    }

    /// Start address of argument `i`, as passed to native kernels.
    pub fn raw_ptr(&mut self, i: usize) -> Result<*mut u8, String> {
        let (s, _) = self.region(i)?;
        // SAFETY: `s` is in bounds, checked in `new`.
        Ok(unsafe { self.mem.as_mut_ptr().add(s) })
    }

    /// True when the regions of arguments `i` and `j` share no byte.
    pub fn disjoint(&self, i: usize, j: usize) -> Result<bool, String> {
        let (a, n) = self.region(i)?;
        let (b, m) = self.region(j)?;
        Ok(a + n <= b || b + m <= a)
    }
}
