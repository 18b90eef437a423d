//! TCP ring transport.
//!
//! Rendezvous: rank 0 listens on an ephemeral port and publishes its address
//! in the group file. Every other rank registers its ring-listener address
//! there and receives the full address table. Each rank then dials its
//! successor and accepts one connection from its predecessor.

use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, Sender};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::message::CollectiveMessage;
use super::transport::RingTransport;
use crate::error::{Error, Result};

const POLL: Duration = Duration::from_millis(5);

#[derive(Clone, Debug)]
pub struct SocketConfig {
    pub group_file: PathBuf,
    /// Interface to bind listeners on.
    pub bind_host: String,
    pub timeout: Duration,
}

impl SocketConfig {
    pub fn new(group_file: impl Into<PathBuf>, timeout: Duration) -> Self {
        Self { group_file: group_file.into(), bind_host: "127.0.0.1".into(), timeout }
    }
}

struct Link {
    frames: Option<Sender<Vec<u8>>>,
    writer: Option<JoinHandle<io::Result<()>>>,
    reader: BufReader<TcpStream>,
}

pub struct SocketTransport {
    rank: usize,
    world: usize,
    timeout: Duration,
    link: Option<Link>,
}

impl SocketTransport {
    /// Joins the ring as `rank` of `world`. Blocks until every rank has joined
    /// or the timeout expires.
    pub fn connect(rank: usize, world: usize, cfg: &SocketConfig) -> Result<Self> {
        if world == 0 || rank >= world {
            return Err(Error::config(format!("rank {rank} outside a group of {world}")));
        }
        if world == 1 {
            return Ok(Self { rank, world, timeout: cfg.timeout, link: None });
        }
        let deadline = Instant::now() + cfg.timeout;
        let ring = TcpListener::bind((cfg.bind_host.as_str(), 0))?;
        let own = ring.local_addr()?.to_string();
        let table = if rank == 0 {
            host_rendezvous(world, own, cfg, deadline)?
        } else {
            join_rendezvous(rank, world, own, cfg, deadline)?
        };

        let next = (rank + 1) % world;
        let prev = (rank + world - 1) % world;
        let mut outbound = dial(&table[next], deadline).map_err(|e| Error::Transport {
            rank: next,
            message: format!("rank {rank} could not reach rank {next}: {e}"),
        })?;
        outbound.write_all(&(rank as u32).to_be_bytes())?;
        let mut inbound = accept(&ring, deadline).map_err(|_| Error::Timeout {
            rank,
            peer: prev,
            secs: cfg.timeout.as_secs_f64(),
        })?;
        inbound.set_read_timeout(Some(remaining(deadline)))?;
        let hello = read_u32(&mut inbound)? as usize;
        if hello != prev {
            return Err(Error::Transport { rank: hello, message: format!("expected rank {prev} upstream of {rank}") });
        }
        inbound.set_read_timeout(Some(cfg.timeout))?;
        inbound.set_nodelay(true)?;
        outbound.set_nodelay(true)?;

        let (frames, rx) = channel::<Vec<u8>>();
        let writer = thread::spawn(move || {
            let mut w = BufWriter::new(outbound);
            for frame in rx {
                w.write_all(&frame)?;
                w.flush()?;
            }
            Ok(())
        });
        Ok(Self {
            rank,
            world,
            timeout: cfg.timeout,
            link: Some(Link { frames: Some(frames), writer: Some(writer), reader: BufReader::new(inbound) }),
        })
    }

    fn link(&mut self) -> Result<&mut Link> {
        let rank = self.rank;
        self.link.as_mut().ok_or(Error::Transport { rank, message: "a single-worker ring has no peers".into() })
    }
}

impl RingTransport for SocketTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn world_size(&self) -> usize {
        self.world
    }

    fn send_next(&mut self, msg: CollectiveMessage) -> Result<()> {
        let next = self.next_rank();
        let link = self.link()?;
        let sent = link.frames.as_ref().map(|f| f.send(msg.encode()).is_ok()).unwrap_or(false);
        if sent {
            return Ok(());
        }
        // the writer exited; surface its I/O error
        let detail = match link.writer.take().map(|h| h.join()) {
            Some(Ok(Err(e))) => e.to_string(),
            _ => "connection closed".into(),
        };
        Err(Error::Transport { rank: next, message: format!("send to rank {next} failed: {detail}") })
    }

    fn recv_prev(&mut self) -> Result<CollectiveMessage> {
        let (rank, prev, secs) = (self.rank, self.prev_rank(), self.timeout.as_secs_f64());
        let link = self.link()?;
        match CollectiveMessage::read_from(&mut link.reader) {
            Ok(m) => Ok(m),
            Err(Error::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                Err(Error::Timeout { rank, peer: prev, secs })
            }
            Err(Error::Io(e)) => {
                Err(Error::Transport { rank: prev, message: format!("receive from rank {prev} failed: {e}") })
            }
            Err(e) => Err(e),
        }
    }
}

impl Drop for SocketTransport {
    fn drop(&mut self) {
        if let Some(link) = self.link.as_mut() {
            link.frames.take();
            if let Some(h) = link.writer.take() {
                let _ = h.join();
            }
        }
    }
}

/// Starts all `k` ranks in this process, each on its own thread, and returns
/// their endpoints in rank order.
pub fn local_socket_ring(k: usize, timeout: Duration) -> Result<Vec<SocketTransport>> {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let dir = std::env::temp_dir().join(format!(
        "clipft-ring-{}-{}",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::create_dir_all(&dir)?;
    let cfg = SocketConfig::new(dir.join("group"), timeout);
    let handles: Vec<_> = (0..k)
        .map(|rank| {
            let cfg = cfg.clone();
            thread::spawn(move || SocketTransport::connect(rank, k, &cfg))
        })
        .collect();
    let joined: Vec<Result<SocketTransport>> = handles
        .into_iter()
        .enumerate()
        .map(|(rank, h)| {
            h.join().unwrap_or_else(|_| Err(Error::Transport { rank, message: "connect thread panicked".into() }))
        })
        .collect();
    let _ = fs::remove_dir_all(&dir);
    joined.into_iter().collect()
}

fn host_rendezvous(world: usize, own: String, cfg: &SocketConfig, deadline: Instant) -> Result<Vec<String>> {
    let listener = TcpListener::bind((cfg.bind_host.as_str(), 0))?;
    publish(&cfg.group_file, &format!("{}\n{world}\n", listener.local_addr()?))?;
    let mut table: Vec<Option<String>> = vec![None; world];
    table[0] = Some(own);
    let mut peers = Vec::with_capacity(world - 1);
    while peers.len() < world - 1 {
        let mut s = accept(&listener, deadline).map_err(|_| {
            let missing = table.iter().position(Option::is_none).unwrap_or(0);
            Error::Timeout { rank: 0, peer: missing, secs: cfg.timeout.as_secs_f64() }
        })?;
        s.set_read_timeout(Some(remaining(deadline)))?;
        let rank = read_u32(&mut s)? as usize;
        let their_world = read_u32(&mut s)? as usize;
        let addr = read_string(&mut s)?;
        if their_world != world || rank == 0 || rank >= world || table[rank].is_some() {
            return Err(Error::Transport {
                rank,
                message: format!("bad registration (rank {rank}, world {their_world}) for a group of {world}"),
            });
        }
        table[rank] = Some(addr);
        peers.push(s);
    }
    let table: Vec<String> = table.into_iter().map(|a| a.expect("all ranks registered")).collect();
    for mut s in peers {
        s.write_all(&(world as u32).to_be_bytes())?;
        for a in &table {
            write_string(&mut s, a)?;
        }
    }
    Ok(table)
}

fn join_rendezvous(rank: usize, world: usize, own: String, cfg: &SocketConfig, deadline: Instant) -> Result<Vec<String>> {
    let timeout = || Error::Timeout { rank, peer: 0, secs: cfg.timeout.as_secs_f64() };
    let mut s = loop {
        if let Some(addr) = read_group_file(&cfg.group_file, world)? {
            if let Ok(s) = TcpStream::connect(addr.as_str()) {
                break s;
            }
        }
        if Instant::now() >= deadline {
            return Err(timeout());
        }
        thread::sleep(POLL);
    };
    s.write_all(&(rank as u32).to_be_bytes())?;
    s.write_all(&(world as u32).to_be_bytes())?;
    write_string(&mut s, &own)?;
    s.set_read_timeout(Some(remaining(deadline)))?;
    let n = read_u32(&mut s).map_err(|_| timeout())? as usize;
    if n != world {
        return Err(Error::Transport { rank: 0, message: format!("address table has {n} entries, expected {world}") });
    }
    (0..n).map(|_| read_string(&mut s)).collect()
}

fn publish(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_group_file(path: &Path, world: usize) -> Result<Option<String>> {
    let Ok(text) = fs::read_to_string(path) else { return Ok(None) };
    let mut lines = text.lines();
    let (Some(addr), Some(k)) = (lines.next(), lines.next()) else { return Ok(None) };
    match k.trim().parse::<usize>() {
        Ok(k) if k == world => Ok(Some(addr.trim().to_string())),
        Ok(k) => Err(Error::config(format!("group file {} is for {k} workers, not {world}", path.display()))),
        Err(_) => Ok(None),
    }
}

fn dial(addr: &str, deadline: Instant) -> io::Result<TcpStream> {
    let target = addr
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, format!("unresolvable {addr}")))?;
    loop {
        match TcpStream::connect_timeout(&target, remaining(deadline)) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => return Err(e),
            Err(_) => thread::sleep(POLL),
        }
    }
}

fn accept(listener: &TcpListener, deadline: Instant) -> io::Result<TcpStream> {
    listener.set_nonblocking(true)?;
    loop {
        match listener.accept() {
            Ok((s, _)) => {
                s.set_nonblocking(false)?;
                return Ok(s);
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(io::ErrorKind::TimedOut.into());
                }
                thread::sleep(POLL);
            }
            Err(e) => return Err(e),
        }
    }
}

fn remaining(deadline: Instant) -> Duration {
    deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(1))
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_be_bytes(b))
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1024 {
        return Err(Error::format("rendezvous record", format!("address of {len} bytes")));
    }
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| Error::format("rendezvous record", e.to_string()))
}

fn write_string<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_be_bytes())?;
    w.write_all(s.as_bytes())
}
