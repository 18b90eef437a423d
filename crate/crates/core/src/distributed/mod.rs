//! Data-parallel training: batch sharding, a ring all-reduce over pluggable
//! transports, a per-rank training loop and scale-efficiency accounting.

mod message;
mod ring;
mod shard;
mod socket;
mod timing;
mod trainer;
mod transport;

pub use message::{CollectiveMessage, Phase, HEADER_LEN};
pub use ring::{all_reduce_params, chunk_ranges, ring_all_reduce};
pub use shard::{shard_batch, ShardPolicy};
pub use socket::{local_socket_ring, SocketConfig, SocketTransport};
pub use timing::{scale_efficiency, TimingRecord};
pub use trainer::{train_data_parallel, worker_loop, DataParallelOutcome, WorkerGroup, SYNC_TOLERANCE};
pub use transport::{InProcessTransport, RingTransport, TransportKind, DEFAULT_TIMEOUT_SECS};
