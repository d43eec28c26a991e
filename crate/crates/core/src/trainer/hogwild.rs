//! Lock-free shared parameter access for multi-threaded training.
//!
//! Workers update the same matrices without synchronization: concurrent
//! visits may read stale values or overwrite each other's writes. That is
//! the deal — sparse updates rarely collide, and the trainer documents that
//! multi-threaded runs are not bit-reproducible. Aligned f64 stores don't
//! tear on the platforms we target, so the damage is bounded to lost or
//! reordered updates, never corrupt values.

use std::marker::PhantomData;

/// A `&mut [f64]` that can be handed to several threads at once.
#[derive(Clone, Copy)]
pub(crate) struct SharedSlice<'a> {
    ptr: *mut f64,
    len: usize,
    _marker: PhantomData<&'a mut [f64]>,
}

unsafe impl Send for SharedSlice<'_> {}
unsafe impl Sync for SharedSlice<'_> {}

impl<'a> SharedSlice<'a> {
    pub(crate) fn new(slice: &'a mut [f64]) -> Self {
        Self {
            ptr: slice.as_mut_ptr(),
            len: slice.len(),
            _marker: PhantomData,
        }
    }

    /// Reconstitute the mutable slice.
    ///
    /// # Safety
    ///
    /// Every thread holding the result may write concurrently; callers must
    /// accept racy, non-deterministic updates (the hogwild contract).
    #[allow(clippy::mut_from_ref)]
    pub(crate) unsafe fn slice(&self) -> &'a mut [f64] {
        std::slice::from_raw_parts_mut(self.ptr, self.len)
    }
}
