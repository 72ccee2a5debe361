//! Stream-ordered offload runtime with emulated devices, a pointwise kernel
//! generator and a small flux-reconstruction advection solver built on top.
//!
//! ```
//! use streamforge::{HostArray, OffloadArray, Runtime};
//!
//! let rt = Runtime::with_devices(1).unwrap();
//! let stream = rt.get_default_stream(0).unwrap();
//! let a = HostArray::from_vec(&[1.0f64, 2.0, 3.0]).unwrap();
//! let oa = OffloadArray::bind(&stream, &a, true).unwrap();
//! oa.add(&oa.clone()).unwrap();
//! oa.update_host().unwrap();
//! stream.sync().unwrap();
//! assert_eq!(a.to_vec::<f64>().unwrap(), vec![2.0, 4.0, 6.0]);
//! ```

pub mod array;
pub mod backend;
pub mod codegen;
pub mod dtype;
pub mod error;
pub mod fr;
pub mod harness;
pub mod kernel;
pub mod memory;
pub mod runtime;
pub mod stream;

pub use array::{HostArray, OffloadArray};
pub use backend::{ArenaStats, RuntimeConfig, TimingModel, TimingSettings};
pub use dtype::{DType, Element, Scalar};
pub use error::{Error, Result, Seq};
pub use kernel::{IntrinsicFn, KernelArg, KernelArgs, KernelHandle, KernelLibrary};
pub use memory::{DevicePointer, Direction, HostBuffer, MemRef, DEFAULT_ALIGNMENT};
pub use num_complex::Complex64;
pub use runtime::{DeviceKind, OffloadDevice, Runtime};
pub use stream::{OffloadStream, Origin, RequestCounts, RequestKind, RequestRecord, RequestStatus};
