use std::ops::Range;

use super::message::{CollectiveMessage, Phase};
use super::transport::RingTransport;
use crate::error::{Error, Result};
use crate::numerics::ParamVector;

/// Splits `n` elements into `k` contiguous chunks; the first `n % k` chunks
/// are one element longer. Chunks may be empty when `n < k`.
pub fn chunk_ranges(n: usize, k: usize) -> Vec<Range<usize>> {
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    (0..k)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// In-place element-wise sum across all ranks: reduce-scatter then all-gather,
/// `k - 1` exchange steps each. Every rank must call this with a buffer of
/// the same length.
pub fn ring_all_reduce(transport: &mut dyn RingTransport, data: &mut [f64]) -> Result<()> {
    let k = transport.world_size();
    if k == 1 {
        return Ok(());
    }
    let rank = transport.rank();
    let chunks = chunk_ranges(data.len(), k);

    for step in 0..k - 1 {
        let send = (rank + k - step) % k;
        let recv = (rank + 2 * k - step - 1) % k;
        transport.send_next(CollectiveMessage {
            chunk_index: send as u32,
            phase: Phase::ReduceScatter,
            payload: data[chunks[send].clone()].to_vec(),
        })?;
        let msg = transport.recv_prev()?;
        check(&msg, Phase::ReduceScatter, recv, chunks[recv].len(), transport.prev_rank(), data.len())?;
        for (d, v) in data[chunks[recv].clone()].iter_mut().zip(&msg.payload) {
            *d += v;
        }
    }
    for step in 0..k - 1 {
        let send = (rank + 1 + k - step) % k;
        let recv = (rank + k - step) % k;
        transport.send_next(CollectiveMessage {
            chunk_index: send as u32,
            phase: Phase::AllGather,
            payload: data[chunks[send].clone()].to_vec(),
        })?;
        let msg = transport.recv_prev()?;
        check(&msg, Phase::AllGather, recv, chunks[recv].len(), transport.prev_rank(), data.len())?;
        data[chunks[recv].clone()].copy_from_slice(&msg.payload);
    }
    Ok(())
}

fn check(msg: &CollectiveMessage, phase: Phase, chunk: usize, len: usize, from: usize, total: usize) -> Result<()> {
    if msg.phase != phase || msg.chunk_index as usize != chunk {
        return Err(Error::Transport {
            rank: from,
            message: format!(
                "out-of-order frame from rank {from}: got chunk {} ({:?}), expected chunk {chunk} ({phase:?})",
                msg.chunk_index, msg.phase
            ),
        });
    }
    if msg.payload.len() != len {
        return Err(Error::shape(format!(
            "rank {from} sent {} elements for chunk {chunk}, expected {len} (local buffer length {total})",
            msg.payload.len()
        )));
    }
    Ok(())
}

/// Sums a gradient across ranks in place (layout must agree on every rank).
pub fn all_reduce_params(transport: &mut dyn RingTransport, grads: &mut ParamVector) -> Result<()> {
    let mut flat = grads.flatten();
    ring_all_reduce(transport, &mut flat)?;
    grads.assign_flat(&flat)
}
