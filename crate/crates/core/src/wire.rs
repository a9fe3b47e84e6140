//! Fixed-layout, big-endian encoding of the consensus header and its value.
//!
//! Layout (15 bytes of framing followed by the value):
//!
//! ```text
//! offset  size  field
//! 0       1     msgtype
//! 1       4     inst
//! 5       2     rnd
//! 7       2     vrnd
//! 9       2     swid
//! 11      2     pid
//! 13      2     value_len
//! 15      n     value
//! ```

use std::fmt;

use bytes::{BufMut, Bytes, BytesMut};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bytes of fixed header before the value length prefix.
pub const HEADER_LEN: usize = 13;
/// Fixed header plus the 2-byte value length prefix.
pub const FRAME_OVERHEAD: usize = HEADER_LEN + 2;
/// Largest value accepted on the wire.
pub const MAX_VALUE_LEN: usize = 1460;
/// Upper bound on a full encoded message.
pub const MTU: usize = 1500;

pub type Instance = u32;
pub type Round = u16;
pub type SwitchId = u16;
pub type PartitionId = u16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum MsgType {
    Request = 1,
    Phase1a = 2,
    Phase1b = 3,
    Phase2a = 4,
    Phase2b = 5,
    Trim = 6,
}

impl MsgType {
    pub const ALL: [MsgType; 6] = [
        MsgType::Request,
        MsgType::Phase1a,
        MsgType::Phase1b,
        MsgType::Phase2a,
        MsgType::Phase2b,
        MsgType::Trim,
    ];

    pub fn from_tag(tag: u8) -> Option<MsgType> {
        Self::ALL.into_iter().find(|t| *t as u8 == tag)
    }

    /// Messages that carry an acceptor's vote round in `vrnd`.
    pub fn carries_vote(self) -> bool {
        matches!(self, MsgType::Phase1b | MsgType::Phase2b)
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MsgType::Request => "REQUEST",
            MsgType::Phase1a => "PHASE1A",
            MsgType::Phase1b => "PHASE1B",
            MsgType::Phase2a => "PHASE2A",
            MsgType::Phase2b => "PHASE2B",
            MsgType::Trim => "TRIM",
        };
        f.write_str(s)
    }
}

/// The only unit exchanged between proposers, leaders, acceptors and replicas.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PaxosMessage {
    pub msgtype: MsgType,
    pub inst: Instance,
    pub rnd: Round,
    pub vrnd: Round,
    pub swid: SwitchId,
    pub pid: PartitionId,
    pub value: Bytes,
}

impl PaxosMessage {
    pub fn new(msgtype: MsgType) -> Self {
        PaxosMessage {
            msgtype,
            inst: 0,
            rnd: 0,
            vrnd: 0,
            swid: 0,
            pid: 0,
            value: Bytes::new(),
        }
    }

    pub fn request(pid: PartitionId, value: impl Into<Bytes>) -> Self {
        PaxosMessage {
            pid,
            value: value.into(),
            ..PaxosMessage::new(MsgType::Request)
        }
    }

    pub fn trim(pid: PartitionId, inst: Instance) -> Self {
        PaxosMessage {
            pid,
            inst,
            ..PaxosMessage::new(MsgType::Trim)
        }
    }

    pub fn encoded_len(&self) -> usize {
        FRAME_OVERHEAD + self.value.len()
    }

    pub fn encode(&self) -> Result<Bytes, WireError> {
        encode_message(self)
    }
}

impl fmt::Display for PaxosMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}(pid={}, inst={}, rnd={}, vrnd={}, swid={}, |v|={})",
            self.msgtype,
            self.pid,
            self.inst,
            self.rnd,
            self.vrnd,
            self.swid,
            self.value.len()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("value of {len} bytes exceeds the {MAX_VALUE_LEN}-byte limit")]
    ValueTooLarge { len: usize },
    #[error("truncated header: {len} bytes, need at least {FRAME_OVERHEAD}")]
    TruncatedHeader { len: usize },
    #[error("unknown message type tag {0:#04x}")]
    UnknownMsgType(u8),
    #[error("value length field says {declared} bytes but {actual} follow the header")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("{msgtype} with vrnd {vrnd} above rnd {rnd}")]
    VoteRoundAboveRound {
        msgtype: MsgType,
        rnd: Round,
        vrnd: Round,
    },
}

fn check_rounds(m: &PaxosMessage) -> Result<(), WireError> {
    if m.msgtype.carries_vote() && m.vrnd > m.rnd {
        return Err(WireError::VoteRoundAboveRound {
            msgtype: m.msgtype,
            rnd: m.rnd,
            vrnd: m.vrnd,
        });
    }
    Ok(())
}

pub fn encode_message(m: &PaxosMessage) -> Result<Bytes, WireError> {
    let mut buf = BytesMut::with_capacity(m.encoded_len());
    encode_into(m, &mut buf)?;
    Ok(buf.freeze())
}

/// Appends the encoding of `m` to `buf`, leaving `buf` untouched on error.
pub fn encode_into(m: &PaxosMessage, buf: &mut impl BufMut) -> Result<(), WireError> {
    if m.value.len() > MAX_VALUE_LEN {
        return Err(WireError::ValueTooLarge { len: m.value.len() });
    }
    check_rounds(m)?;
    buf.put_u8(m.msgtype as u8);
    buf.put_u32(m.inst);
    buf.put_u16(m.rnd);
    buf.put_u16(m.vrnd);
    buf.put_u16(m.swid);
    buf.put_u16(m.pid);
    buf.put_u16(m.value.len() as u16);
    buf.put_slice(&m.value);
    Ok(())
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

pub fn decode_message(b: &[u8]) -> Result<PaxosMessage, WireError> {
    if b.len() < FRAME_OVERHEAD {
        return Err(WireError::TruncatedHeader { len: b.len() });
    }
    let msgtype = MsgType::from_tag(b[0]).ok_or(WireError::UnknownMsgType(b[0]))?;
    let declared = be16(b, HEADER_LEN) as usize;
    let actual = b.len() - FRAME_OVERHEAD;
    if declared != actual {
        return Err(WireError::LengthMismatch { declared, actual });
    }
    if declared > MAX_VALUE_LEN {
        return Err(WireError::ValueTooLarge { len: declared });
    }
    let m = PaxosMessage {
        msgtype,
        inst: u32::from_be_bytes([b[1], b[2], b[3], b[4]]),
        rnd: be16(b, 5),
        vrnd: be16(b, 7),
        swid: be16(b, 9),
        pid: be16(b, 11),
        value: Bytes::copy_from_slice(&b[FRAME_OVERHEAD..]),
    };
    check_rounds(&m)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn msg(t: MsgType, value: &[u8]) -> PaxosMessage {
        PaxosMessage {
            value: Bytes::copy_from_slice(value),
            ..PaxosMessage::new(t)
        }
    }

    #[test]
    fn zero_phase2a_is_fifteen_bytes() {
        let b = encode_message(&msg(MsgType::Phase2a, b"")).unwrap();
        assert_eq!(b.len(), 15);
        assert_eq!(b[0], MsgType::Phase2a as u8);
        assert!(b[1..].iter().all(|&x| x == 0));
    }

    #[test]
    fn value_bound() {
        let ok = msg(MsgType::Request, &[7; MAX_VALUE_LEN]);
        assert_eq!(encode_message(&ok).unwrap().len(), 1475);
        let big = msg(MsgType::Request, &[7; MAX_VALUE_LEN + 1]);
        assert_eq!(
            encode_message(&big),
            Err(WireError::ValueTooLarge { len: 1461 })
        );
    }

    #[test]
    fn field_layout_is_big_endian() {
        let m = PaxosMessage {
            msgtype: MsgType::Phase2b,
            inst: 0x0102_0304,
            rnd: 0x0506,
            vrnd: 0x0506,
            swid: 0x0708,
            pid: 0x090a,
            value: Bytes::from_static(b"xy"),
        };
        let b = encode_message(&m).unwrap();
        assert_eq!(
            &b[..],
            &[5, 1, 2, 3, 4, 5, 6, 5, 6, 7, 8, 9, 10, 0, 2, b'x', b'y']
        );
    }

    #[test]
    fn decode_errors() {
        assert_eq!(
            decode_message(&[]),
            Err(WireError::TruncatedHeader { len: 0 })
        );
        let mut b = [0u8; 15];
        b[0] = 0xFF;
        assert_eq!(decode_message(&b), Err(WireError::UnknownMsgType(0xFF)));
        b[0] = 0;
        assert_eq!(decode_message(&b), Err(WireError::UnknownMsgType(0)));

        let mut enc = encode_message(&msg(MsgType::Request, b"abc"))
            .unwrap()
            .to_vec();
        enc.pop();
        assert_eq!(
            decode_message(&enc),
            Err(WireError::LengthMismatch {
                declared: 3,
                actual: 2
            })
        );
    }

    #[test]
    fn vote_round_invariant() {
        let mut m = msg(MsgType::Phase1b, b"");
        m.rnd = 1;
        m.vrnd = 2;
        assert!(matches!(
            encode_message(&m),
            Err(WireError::VoteRoundAboveRound { .. })
        ));
        // The same header under a type without a vote round is fine.
        m.msgtype = MsgType::Phase1a;
        assert!(encode_message(&m).is_ok());
    }

    #[test]
    fn every_variant_round_trips() {
        for t in MsgType::ALL {
            let m = PaxosMessage {
                msgtype: t,
                inst: 4_000_000_000,
                rnd: 9,
                vrnd: 3,
                swid: 65535,
                pid: 12,
                value: Bytes::from_static(b"representative"),
            };
            let b = encode_message(&m).unwrap();
            assert_eq!(b.len(), 15 + m.value.len());
            assert_eq!(decode_message(&b).unwrap(), m, "{t}");
        }
    }

    prop_compose! {
        fn arb_message()(
            t in prop::sample::select(MsgType::ALL.to_vec()),
            inst in any::<u32>(),
            a in any::<u16>(),
            b in any::<u16>(),
            swid in any::<u16>(),
            pid in any::<u16>(),
            value in prop::collection::vec(any::<u8>(), 0..=MAX_VALUE_LEN),
        ) -> PaxosMessage {
            let (rnd, vrnd) = if t.carries_vote() { (a.max(b), a.min(b)) } else { (a, b) };
            PaxosMessage { msgtype: t, inst, rnd, vrnd, swid, pid, value: value.into() }
        }
    }

    proptest! {
        #[test]
        fn round_trip(m in arb_message()) {
            let b = encode_message(&m).unwrap();
            prop_assert_eq!(b.len(), 15 + m.value.len());
            prop_assert_eq!(decode_message(&b).unwrap(), m);
        }

        #[test]
        fn decode_is_total(b in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode_message(&b);
        }
    }
}
