//! Chunked Monte Carlo driver.
//!
//! Paths are split into fixed-size chunks. Each chunk is reduced with pairwise
//! sums and the chunk moments are merged in chunk order, so results do not depend
//! on the number of worker threads.

use rayon::prelude::*;

use crate::error::Result;
use crate::stats::Moments;

/// Paths per chunk.
pub const CHUNK: u64 = 4096;

fn chunk_ranges(paths: u64) -> Vec<(u64, u64)> {
    (0..paths.div_ceil(CHUNK))
        .map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(paths)))
        .collect()
}

/// Evaluate `sample(path, out)` for every path and return the per-path values,
/// one column per output slot.
pub fn collect<F>(paths: u64, width: usize, sample: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(u64, &mut [f64]) -> Result<()> + Sync,
{
    let chunks: Vec<Result<Vec<Vec<f64>>>> = chunk_ranges(paths)
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut cols = vec![Vec::with_capacity((hi - lo) as usize); width];
            let mut out = vec![0.0; width];
            for p in lo..hi {
                sample(p, &mut out)?;
                for (c, v) in cols.iter_mut().zip(&out) {
                    c.push(*v);
                }
            }
            Ok(cols)
        })
        .collect();
    let mut cols = vec![Vec::with_capacity(paths as usize); width];
    for chunk in chunks {
        for (c, part) in cols.iter_mut().zip(chunk?) {
            c.extend_from_slice(&part);
        }
    }
    Ok(cols)
}

/// Sample moments of each output slot over `paths` paths.
pub fn moments<F>(paths: u64, width: usize, sample: F) -> Result<Vec<Moments>>
where
    F: Fn(u64, &mut [f64]) -> Result<()> + Sync,
{
    let chunks: Vec<Result<Vec<Moments>>> = chunk_ranges(paths)
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut cols = vec![Vec::with_capacity((hi - lo) as usize); width];
            let mut out = vec![0.0; width];
            for p in lo..hi {
                sample(p, &mut out)?;
                for (c, v) in cols.iter_mut().zip(&out) {
                    c.push(*v);
                }
            }
            Ok(cols.iter().map(|c| Moments::from_slice(c)).collect())
        })
        .collect();
    let mut total = vec![Moments::default(); width];
    for chunk in chunks {
        for (t, m) in total.iter_mut().zip(chunk?) {
            *t = t.merge(&m);
        }
    }
    Ok(total)
}
