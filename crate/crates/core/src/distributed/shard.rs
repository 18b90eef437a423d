use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What to do with a global batch whose size is not a multiple of `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShardPolicy {
    /// Reject indivisible batches.
    Exact,
    /// Drop the `len % k` trailing items.
    #[default]
    Truncate,
    /// Repeat items from the front until the batch divides evenly.
    Pad,
}

/// Splits `global` into `k` contiguous, equally sized shards in rank order.
pub fn shard_batch<T: Clone>(global: &[T], k: usize, policy: ShardPolicy) -> Result<Vec<Vec<T>>> {
    if k == 0 {
        return Err(Error::config("num_workers must be >= 1"));
    }
    let rem = global.len() % k;
    let items: Vec<T> = match policy {
        _ if rem == 0 => global.to_vec(),
        ShardPolicy::Exact => {
            return Err(Error::invalid(format!("batch of {} does not split across {k} workers", global.len())))
        }
        ShardPolicy::Truncate => global[..global.len() - rem].to_vec(),
        ShardPolicy::Pad => global.iter().chain(global.iter().cycle().take(k - rem)).cloned().collect(),
    };
    if items.is_empty() {
        return Err(Error::Empty("shard"));
    }
    let per = items.len() / k;
    Ok(items.chunks(per).map(<[T]>::to_vec).collect())
}
