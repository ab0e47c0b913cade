//! The `HFLS` binary message format.
//!
//! Every message starts with the magic `48 46 4C 53`, version `0x01` and a
//! message-type byte, and ends with a little-endian CRC-32 (IEEE, reflected
//! polynomial `0xEDB88320`) of all preceding bytes.
//!
//! | type | body (all little-endian)                                              |
//! |------|-----------------------------------------------------------------------|
//! | 0    | sender `u32`, share_index `u16`, share_count `u16`, dim `u32`, dim x `u64` |
//! | 1    | same layout as 0 with share_index 0 and share_count 1 (a whole vector)  |
//! | 2    | community `u32`, round `u32`, location `u16`, reserved `u16`, time `i64` |
//!
//! The CRC is checked before any other field is interpreted, so any corrupted
//! byte is reported as [`Error::CrcMismatch`].

use alloc::vec::Vec;

use crate::derms::EpdcRecord;
use crate::error::{Error, Result};
use crate::ring::RingVector;
use crate::sharing::SecretShare;
use crate::ClientId;

pub const MAGIC: [u8; 4] = *b"HFLS";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 6;
pub const CRC_LEN: usize = 4;
const VECTOR_META_LEN: usize = 12;
const PREDICTION_BODY_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MsgType {
    Share = 0,
    GlobalWeights = 1,
    Prediction = 2,
}

impl MsgType {
    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(MsgType::Share),
            1 => Ok(MsgType::GlobalWeights),
            2 => Ok(MsgType::Prediction),
            other => Err(Error::BadMessageType(other)),
        }
    }
}

/// A decoded message.
#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Share(SecretShare),
    Weights { sender: ClientId, vector: RingVector },
    Prediction(EpdcRecord),
}

pub fn crc32(bytes: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(bytes);
    h.finalize()
}

fn header(out: &mut Vec<u8>, t: MsgType) {
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(t as u8);
}

fn seal(mut out: Vec<u8>) -> Vec<u8> {
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn vector_message(t: MsgType, sender: ClientId, index: u16, count: u16, v: &RingVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + VECTOR_META_LEN + 8 * v.dim() + CRC_LEN);
    header(&mut out, t);
    out.extend_from_slice(&sender.to_le_bytes());
    out.extend_from_slice(&index.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&(v.dim() as u32).to_le_bytes());
    for e in v.elems() {
        out.extend_from_slice(&e.to_le_bytes());
    }
    seal(out)
}

/// Encoded length of a type 0 or type 1 message carrying `dim` elements.
pub fn vector_message_len(dim: usize) -> usize {
    HEADER_LEN + VECTOR_META_LEN + 8 * dim + CRC_LEN
}

pub fn serialize_share(share: &SecretShare) -> Vec<u8> {
    vector_message(MsgType::Share, share.sender_id, share.share_index, share.share_count, &share.payload)
}

pub fn serialize_weights(sender: ClientId, v: &RingVector) -> Vec<u8> {
    vector_message(MsgType::GlobalWeights, sender, 0, 1, v)
}

pub fn serialize_prediction(r: &EpdcRecord) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + PREDICTION_BODY_LEN + CRC_LEN);
    header(&mut out, MsgType::Prediction);
    out.extend_from_slice(&r.community_id.to_le_bytes());
    out.extend_from_slice(&r.round.to_le_bytes());
    out.extend_from_slice(&r.predicted_location.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&r.predicted_time.to_le_bytes());
    seal(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos.checked_add(N).ok_or(Error::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(Error::Truncated)?;
        self.pos = end;
        let mut a = [0u8; N];
        a.copy_from_slice(s);
        Ok(a)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
}

/// Verifies framing and CRC and returns the message type and body.
fn open(bytes: &[u8]) -> Result<(MsgType, &[u8])> {
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(Error::Truncated);
    }
    let (content, tail) = bytes.split_at(bytes.len() - CRC_LEN);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let computed = crc32(content);
    if stored != computed {
        return Err(Error::CrcMismatch { stored, computed });
    }
    if content[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if content[4] != VERSION {
        return Err(Error::BadVersion(content[4]));
    }
    Ok((MsgType::from_byte(content[5])?, &content[HEADER_LEN..]))
}

fn read_vector(body: &[u8]) -> Result<(ClientId, u16, u16, RingVector)> {
    let mut r = Reader { buf: body, pos: 0 };
    let sender = r.u32()?;
    let index = r.u16()?;
    let count = r.u16()?;
    let dim = r.u32()? as usize;
    let expected = VECTOR_META_LEN.checked_add(dim.checked_mul(8).ok_or(Error::Truncated)?).ok_or(Error::Truncated)?;
    if body.len() < expected {
        return Err(Error::Truncated);
    }
    if body.len() > expected {
        return Err(Error::InvalidParameter("trailing bytes after payload"));
    }
    let mut elems = Vec::with_capacity(dim);
    for _ in 0..dim {
        elems.push(r.u64()?);
    }
    Ok((sender, index, count, RingVector::from_elems(elems)))
}

pub fn deserialize(bytes: &[u8]) -> Result<WireMessage> {
    let (t, body) = open(bytes)?;
    match t {
        MsgType::Share => {
            let (sender_id, share_index, share_count, payload) = read_vector(body)?;
            if share_count < 2 || share_index >= share_count {
                return Err(Error::InvalidParameter("share index/count out of range"));
            }
            Ok(WireMessage::Share(SecretShare { sender_id, share_index, share_count, payload }))
        }
        MsgType::GlobalWeights => {
            let (sender, _, _, vector) = read_vector(body)?;
            Ok(WireMessage::Weights { sender, vector })
        }
        MsgType::Prediction => {
            if body.len() != PREDICTION_BODY_LEN {
                return Err(Error::Truncated);
            }
            let mut r = Reader { buf: body, pos: 0 };
            let community_id = r.u32()?;
            let round = r.u32()?;
            let predicted_location = r.u16()?;
            let _reserved = r.u16()?;
            let predicted_time = r.u64()? as i64;
            Ok(WireMessage::Prediction(EpdcRecord { community_id, round, predicted_location, predicted_time }))
        }
    }
}

pub fn deserialize_share(bytes: &[u8]) -> Result<SecretShare> {
    match deserialize(bytes)? {
        WireMessage::Share(s) => Ok(s),
        _ => Err(Error::InvalidParameter("expected a share message")),
    }
}

pub fn deserialize_weights(bytes: &[u8]) -> Result<(ClientId, RingVector)> {
    match deserialize(bytes)? {
        WireMessage::Weights { sender, vector } => Ok((sender, vector)),
        _ => Err(Error::InvalidParameter("expected a weights message")),
    }
}

pub fn deserialize_prediction(bytes: &[u8]) -> Result<EpdcRecord> {
    match deserialize(bytes)? {
        WireMessage::Prediction(r) => Ok(r),
        _ => Err(Error::InvalidParameter("expected a prediction message")),
    }
}

/// Message type byte of an encoded message, without validation.
pub fn peek_type(bytes: &[u8]) -> Option<u8> {
    bytes.get(5).copied()
}
