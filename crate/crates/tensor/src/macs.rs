//! Multiply-accumulate instrumentation.
//!
//! Forward kernels for convolution, matrix products and the selective scan
//! tally the multiply-accumulates they execute into a thread-local counter.
//! Elementwise arithmetic, normalization, pooling and DFTs are not counted.

use std::cell::Cell;

thread_local! {
    static COUNTER: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn add(n: u64) {
    COUNTER.with(|c| c.set(c.get() + n));
}

/// Current value of this thread's counter.
pub fn read() -> u64 {
    COUNTER.with(|c| c.get())
}

/// Runs `f` and returns its result together with the MACs it executed.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let start = read();
    let r = f();
    (r, read() - start)
}
