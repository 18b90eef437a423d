use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::message::CollectiveMessage;
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT_SECS: u64 = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    #[default]
    InProcess,
    Socket,
}

impl std::str::FromStr for TransportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in-process" | "in_process" => Ok(Self::InProcess),
            "socket" => Ok(Self::Socket),
            other => Err(Error::config(format!("unknown transport {other:?}"))),
        }
    }
}

/// Point-to-point links of a static ring: each rank sends to `rank + 1` and
/// receives from `rank - 1` (mod k).
pub trait RingTransport: Send {
    fn rank(&self) -> usize;

    fn world_size(&self) -> usize;

    fn send_next(&mut self, msg: CollectiveMessage) -> Result<()>;

    fn recv_prev(&mut self) -> Result<CollectiveMessage>;

    fn next_rank(&self) -> usize {
        (self.rank() + 1) % self.world_size()
    }

    fn prev_rank(&self) -> usize {
        (self.rank() + self.world_size() - 1) % self.world_size()
    }
}

/// Ring endpoint backed by in-memory channels; all ranks live in one process.
pub struct InProcessTransport {
    rank: usize,
    world: usize,
    to_next: Sender<CollectiveMessage>,
    from_prev: Receiver<CollectiveMessage>,
    timeout: Duration,
}

impl InProcessTransport {
    /// Builds the `k` connected endpoints of one ring, indexed by rank.
    pub fn ring(k: usize, timeout: Duration) -> Result<Vec<Self>> {
        if k == 0 {
            return Err(Error::config("a ring needs at least one worker"));
        }
        let (senders, receivers): (Vec<_>, Vec<_>) = (0..k).map(|_| channel()).unzip();
        // channel r carries traffic into rank r
        let mut receivers: Vec<Option<Receiver<_>>> = receivers.into_iter().map(Some).collect();
        Ok((0..k)
            .map(|rank| Self {
                rank,
                world: k,
                to_next: senders[(rank + 1) % k].clone(),
                from_prev: receivers[rank].take().expect("each receiver is taken once"),
                timeout,
            })
            .collect())
    }
}

impl RingTransport for InProcessTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn world_size(&self) -> usize {
        self.world
    }

    fn send_next(&mut self, msg: CollectiveMessage) -> Result<()> {
        let next = self.next_rank();
        self.to_next.send(msg).map_err(|_| Error::Transport {
            rank: next,
            message: format!("rank {next} hung up before receiving from rank {}", self.rank),
        })
    }

    fn recv_prev(&mut self) -> Result<CollectiveMessage> {
        let prev = self.prev_rank();
        match self.from_prev.recv_timeout(self.timeout) {
            Ok(m) => Ok(m),
            Err(RecvTimeoutError::Timeout) => {
                Err(Error::Timeout { rank: self.rank, peer: prev, secs: self.timeout.as_secs_f64() })
            }
            Err(RecvTimeoutError::Disconnected) => Err(Error::Transport {
                rank: prev,
                message: format!("rank {prev} hung up before sending to rank {}", self.rank),
            }),
        }
    }
}
