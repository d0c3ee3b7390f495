//! Order-preserving parallel map over fixed chunks.
//!
//! Chunk boundaries depend only on the input length, so results and any
//! per-chunk reduction are identical whatever the thread count.

use rayon::prelude::*;

use crate::error::Result;

/// Number of chunks an input is cut into.
pub const CHUNKS: usize = 16;

fn chunk_size(len: usize) -> usize {
    len.div_ceil(CHUNKS).max(1)
}

/// Runs `f` on each chunk of `items`, returning per-chunk results in order.
pub fn map_chunks<T: Sync, R: Send>(items: &[T], f: impl Fn(&[T]) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    items.par_chunks(chunk_size(items.len())).map(f).collect()
}

/// Parallel map preserving input order.
pub fn map_ordered<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    let parts = map_chunks(items, |chunk| chunk.iter().map(&f).collect::<Result<Vec<R>>>())?;
    Ok(parts.into_iter().flatten().collect())
}
