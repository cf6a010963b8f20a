use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::swa::{overlap_statuses, OverlapStatus};

/// Half-open frame range `[start, end)` of one chunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkSpan {
    pub index: usize,
    pub start: usize,
    pub end: usize,
}

impl ChunkSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn frames(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn frame_ids(&self) -> Vec<usize> {
        self.frames().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub n_frames: usize,
    pub chunk_size: usize,
    pub overlap: usize,
    pub chunks: Vec<ChunkSpan>,
}

impl PartitionPlan {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Overlap status of every frame of chunk `m`.
    pub fn statuses(&self, m: usize) -> Vec<OverlapStatus> {
        overlap_statuses(m, self.chunks.len(), self.chunks[m].len(), self.overlap)
    }

    /// The first `k` chunks, as if the stream had ended there.
    pub fn truncated(&self, k: usize) -> PartitionPlan {
        let chunks: Vec<ChunkSpan> = self.chunks.iter().take(k).copied().collect();
        PartitionPlan {
            n_frames: chunks.last().map_or(0, |c| c.end),
            chunk_size: self.chunk_size,
            overlap: self.overlap,
            chunks,
        }
    }
}

/// Split `n_frames` into chunks of `chunk_size` that share `overlap` frames.
///
/// Chunk `m` starts at `m · (chunk_size − overlap)`; the last chunk may be
/// shorter but always keeps more than `overlap` frames.
pub fn partition_chunks(n_frames: usize, chunk_size: usize, overlap: usize) -> Result<PartitionPlan> {
    if n_frames == 0 {
        return Err(Error::Config("a stream needs at least one frame".into()));
    }
    if overlap == 0 || overlap >= chunk_size {
        return Err(Error::Config(format!(
            "overlap {overlap} must satisfy 1 ≤ overlap < chunk_size {chunk_size}"
        )));
    }
    let stride = chunk_size - overlap;
    let count = 1 + n_frames.saturating_sub(chunk_size).div_ceil(stride);
    let chunks = (0..count)
        .map(|m| {
            let start = m * stride;
            ChunkSpan {
                index: m,
                start,
                end: (start + chunk_size).min(n_frames),
            }
        })
        .collect();
    Ok(PartitionPlan {
        n_frames,
        chunk_size,
        overlap,
        chunks,
    })
}
