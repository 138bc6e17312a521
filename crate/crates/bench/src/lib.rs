//! Fixtures shared by the criterion benches.

use starlab_core::{make_symmetric, ChainSpec, SymmetricKernel};

/// Symmetric kernel at the midpoint of the admissible signal range.
pub fn midpoint_kernel(m: usize, n: usize) -> SymmetricKernel {
    let spec = ChainSpec::new(m, n).expect("bench shapes are valid");
    make_symmetric(spec, spec.max_delta() / 2.0).expect("midpoint is admissible")
}
