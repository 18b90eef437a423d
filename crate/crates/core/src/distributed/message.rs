use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    ReduceScatter,
    AllGather,
}

impl Phase {
    fn code(self) -> u32 {
        match self {
            Phase::ReduceScatter => 0,
            Phase::AllGather => 1,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Phase::ReduceScatter),
            1 => Ok(Phase::AllGather),
            c => Err(Error::format("collective frame", format!("unknown phase {c}"))),
        }
    }
}

/// One chunk of the flat buffer in flight between ring neighbours.
#[derive(Clone, Debug, PartialEq)]
pub struct CollectiveMessage {
    pub chunk_index: u32,
    pub phase: Phase,
    pub payload: Vec<f64>,
}

/// Frame header: chunk index (u32 BE), phase (u32 BE), payload bytes (u64 BE).
pub const HEADER_LEN: usize = 16;

/// Upper bound on a single payload, guarding against corrupt length fields.
const MAX_PAYLOAD_BYTES: u64 = 1 << 34;

impl CollectiveMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.payload.len());
        out.extend_from_slice(&self.chunk_index.to_be_bytes());
        out.extend_from_slice(&self.phase.code().to_be_bytes());
        out.extend_from_slice(&((self.payload.len() * 8) as u64).to_be_bytes());
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&self.encode())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)?;
        let chunk_index = u32::from_be_bytes(header[0..4].try_into().unwrap());
        let phase = Phase::from_code(u32::from_be_bytes(header[4..8].try_into().unwrap()))?;
        let bytes = u64::from_be_bytes(header[8..16].try_into().unwrap());
        if bytes % 8 != 0 || bytes > MAX_PAYLOAD_BYTES {
            return Err(Error::format("collective frame", format!("bad payload length {bytes}")));
        }
        let mut raw = vec![0u8; bytes as usize];
        r.read_exact(&mut raw)?;
        let payload = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        Ok(Self { chunk_index, phase, payload })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = CollectiveMessage { chunk_index: 3, phase: Phase::AllGather, payload: vec![1.5] };
        let b = m.encode();
        assert_eq!(&b[0..4], &[0, 0, 0, 3]);
        assert_eq!(&b[4..8], &[0, 0, 0, 1]);
        assert_eq!(&b[8..16], &[0, 0, 0, 0, 0, 0, 0, 8]);
        assert_eq!(&b[16..], &1.5f64.to_le_bytes());
    }

    #[test]
    fn rejects_bad_phase_and_length() {
        let mut b = CollectiveMessage { chunk_index: 0, phase: Phase::ReduceScatter, payload: vec![] }.encode();
        b[7] = 9;
        assert!(CollectiveMessage::read_from(&mut b.as_slice()).is_err());
        let mut b = CollectiveMessage { chunk_index: 0, phase: Phase::ReduceScatter, payload: vec![] }.encode();
        b[15] = 3;
        assert!(CollectiveMessage::read_from(&mut b.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(idx in any::<u32>(), gather in any::<bool>(), payload in prop::collection::vec(any::<f64>(), 0..40)) {
            let phase = if gather { Phase::AllGather } else { Phase::ReduceScatter };
            let m = CollectiveMessage { chunk_index: idx, phase, payload };
            let back = CollectiveMessage::read_from(&mut m.encode().as_slice()).unwrap();
            prop_assert_eq!(back.chunk_index, m.chunk_index);
            prop_assert_eq!(back.phase, m.phase);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back.payload), bits(&m.payload));
        }
    }
}
