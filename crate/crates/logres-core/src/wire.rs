//! Wire formats: length-prefixed frames and the byte encodings of every
//! protocol message. All integers are big-endian; these bytes are the
//! compatibility contract between nodes, so the exact layouts are pinned
//! by golden tests.
//!
//! Frame layout: u32 length, then one type byte, then the body; the
//! length counts the type byte plus the body. A frame that fails to
//! decode is dropped whole, never partially interpreted.

use crate::codec::{self, CodecError, Reader};
use crate::crypto::{NodeId, Signature};
use crate::log::{Digest, EntrySet, Log, LogCertificate};
use crate::node::LogSignatureMsg;
use crate::replicate::{ReplicateMsg, WitnessedValue};

/// Upper bound on a frame body; anything larger is treated as corrupt.
pub const MAX_FRAME_BYTES: usize = 64 * 1024 * 1024;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FrameType {
    /// All replicate-thread messages of one sender for one round.
    ReplicationBundle = 0x01,
    /// A signing-phase digest signature.
    LogSignature = 0x02,
    /// Client entry submission; the reply reuses the type with a one-byte
    /// status body.
    ClientSubmit = 0x10,
    /// Client request for the latest certificate (empty body).
    GetCertificate = 0x11,
    /// Reply to `GetCertificate`.
    CertificateResponse = 0x12,
}

impl FrameType {
    pub fn from_byte(b: u8) -> Result<FrameType, CodecError> {
        Ok(match b {
            0x01 => FrameType::ReplicationBundle,
            0x02 => FrameType::LogSignature,
            0x10 => FrameType::ClientSubmit,
            0x11 => FrameType::GetCertificate,
            0x12 => FrameType::CertificateResponse,
            other => return Err(CodecError::UnknownTag(other)),
        })
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Frame {
    pub ftype: FrameType,
    pub body: Vec<u8>,
}

impl Frame {
    pub fn new(ftype: FrameType, body: Vec<u8>) -> Frame {
        Frame { ftype, body }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.body.len());
        codec::put_u32(&mut out, (self.body.len() + 1) as u32);
        out.push(self.ftype as u8);
        out.extend_from_slice(&self.body);
        out
    }

    /// Decodes one complete frame from the buffer.
    pub fn decode(bytes: &[u8]) -> Result<Frame, CodecError> {
        let mut r = Reader::new(bytes);
        let len = r.u32()? as usize;
        if len == 0 {
            return Err(CodecError::Invalid("zero frame length"));
        }
        if len > MAX_FRAME_BYTES {
            return Err(CodecError::LengthLimit {
                got: len,
                limit: MAX_FRAME_BYTES,
            });
        }
        let payload = r.take(len)?;
        r.finish()?;
        let ftype = FrameType::from_byte(payload[0])?;
        Ok(Frame {
            ftype,
            body: payload[1..].to_vec(),
        })
    }
}

fn put_signature(out: &mut Vec<u8>, sig: &Signature) {
    codec::put_u16(out, sig.bytes().len() as u16);
    out.extend_from_slice(sig.bytes());
}

fn read_signature(r: &mut Reader<'_>, signer: NodeId) -> Result<Signature, CodecError> {
    let len = r.u16()? as usize;
    Ok(Signature::from_parts(signer, r.take(len)?.to_vec()))
}

fn put_witnessed_value(out: &mut Vec<u8>, wv: &WitnessedValue) {
    wv.value.encode_into(out);
    codec::put_u16(out, wv.witnesses.len() as u16);
    for (id, sig) in &wv.witnesses {
        codec::put_u16(out, id.0);
        put_signature(out, sig);
    }
}

fn read_witnessed_value(r: &mut Reader<'_>, primary: NodeId) -> Result<WitnessedValue, CodecError> {
    let value = EntrySet::decode(r)?;
    let count = r.u16()? as usize;
    let mut witnesses = std::collections::BTreeMap::new();
    for _ in 0..count {
        let id = NodeId(r.u16()?);
        let sig = read_signature(r, id)?;
        witnesses.insert(id, sig);
    }
    Ok(WitnessedValue {
        value,
        primary,
        witnesses,
    })
}

/// sender, epoch, round, primary, then the witnessed values.
pub fn encode_replicate_msg(msg: &ReplicateMsg) -> Vec<u8> {
    let mut out = Vec::new();
    codec::put_u16(&mut out, msg.sender.0);
    codec::put_u64(&mut out, msg.epoch);
    codec::put_u32(&mut out, msg.round);
    codec::put_u16(&mut out, msg.primary.0);
    codec::put_u32(&mut out, msg.values.len() as u32);
    for wv in &msg.values {
        put_witnessed_value(&mut out, wv);
    }
    out
}

pub fn decode_replicate_msg(r: &mut Reader<'_>) -> Result<ReplicateMsg, CodecError> {
    let sender = NodeId(r.u16()?);
    let epoch = r.u64()?;
    let round = r.u32()?;
    let primary = NodeId(r.u16()?);
    let count = r.u32()? as usize;
    // a value needs at least its entry-set count and witness count
    if count > r.remaining() / 6 + 1 {
        return Err(CodecError::LengthLimit {
            got: count,
            limit: r.remaining() / 6 + 1,
        });
    }
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(read_witnessed_value(r, primary)?);
    }
    Ok(ReplicateMsg {
        sender,
        epoch,
        round,
        primary,
        values,
    })
}

/// Body of a `ReplicationBundle` frame: message count, then the messages.
pub fn encode_bundle(msgs: &[ReplicateMsg]) -> Vec<u8> {
    let mut out = Vec::new();
    codec::put_u16(&mut out, msgs.len() as u16);
    for msg in msgs {
        out.extend_from_slice(&encode_replicate_msg(msg));
    }
    out
}

pub fn decode_bundle(body: &[u8]) -> Result<Vec<ReplicateMsg>, CodecError> {
    let mut r = Reader::new(body);
    let count = r.u16()? as usize;
    let mut msgs = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        msgs.push(decode_replicate_msg(&mut r)?);
    }
    r.finish()?;
    Ok(msgs)
}

/// Body of a `LogSignature` frame.
pub fn encode_log_sig_msg(msg: &LogSignatureMsg) -> Vec<u8> {
    let mut out = Vec::new();
    codec::put_u64(&mut out, msg.epoch);
    codec::put_u16(&mut out, msg.signer.0);
    out.extend_from_slice(&msg.digest.0);
    put_signature(&mut out, &msg.sig);
    out
}

pub fn decode_log_sig_msg(body: &[u8]) -> Result<LogSignatureMsg, CodecError> {
    let mut r = Reader::new(body);
    let epoch = r.u64()?;
    let signer = NodeId(r.u16()?);
    let digest = Digest::from_slice(r.take(32)?)?;
    let sig = read_signature(&mut r, signer)?;
    r.finish()?;
    Ok(LogSignatureMsg {
        epoch,
        signer,
        digest,
        sig,
    })
}

/// Certificate bytes as used in `CertificateResponse` frames and on-disk
/// snapshots: the canonical log encoding, then the signatures.
pub fn encode_certificate(cert: &LogCertificate) -> Vec<u8> {
    let mut out = Vec::new();
    cert.log.encode_into(&mut out);
    codec::put_u16(&mut out, cert.sigs.len() as u16);
    for sig in &cert.sigs {
        codec::put_u16(&mut out, sig.signer.0);
        put_signature(&mut out, sig);
    }
    out
}

pub fn decode_certificate(body: &[u8]) -> Result<LogCertificate, CodecError> {
    let mut r = Reader::new(body);
    let log = Log::decode(&mut r)?;
    let count = r.u16()? as usize;
    let mut sigs = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let signer = NodeId(r.u16()?);
        sigs.push(read_signature(&mut r, signer)?);
    }
    r.finish()?;
    Ok(LogCertificate { log, sigs })
}

/// Body of a `CertificateResponse` frame; `None` before the first publish.
pub fn encode_certificate_response(cert: Option<&LogCertificate>) -> Vec<u8> {
    match cert {
        None => vec![0x00],
        Some(cert) => {
            let mut out = vec![0x01];
            out.extend_from_slice(&encode_certificate(cert));
            out
        }
    }
}

pub fn decode_certificate_response(body: &[u8]) -> Result<Option<LogCertificate>, CodecError> {
    let mut r = Reader::new(body);
    match r.u8()? {
        0x00 => {
            r.finish()?;
            Ok(None)
        }
        0x01 => {
            let rest = r.take(r.remaining())?;
            Ok(Some(decode_certificate(rest)?))
        }
        other => Err(CodecError::UnknownTag(other)),
    }
}

/// Body of a `ClientSubmit` frame.
pub fn encode_submit(entry: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    codec::put_u16(&mut out, entry.len() as u16);
    out.extend_from_slice(entry);
    out
}

pub fn decode_submit(body: &[u8]) -> Result<Vec<u8>, CodecError> {
    let mut r = Reader::new(body);
    let len = r.u16()? as usize;
    let bytes = r.take(len)?.to_vec();
    r.finish()?;
    Ok(bytes)
}

/// Submit acknowledgement statuses carried in the one-byte reply body.
pub const SUBMIT_OK: u8 = 0x00;
pub const SUBMIT_REJECTED: u8 = 0x01;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{keygen_test, sign, vote_payload};
    use crate::log::{mk_log, Entry};

    fn set(items: &[&str]) -> EntrySet {
        items
            .iter()
            .map(|s| Entry::new(s.as_bytes().to_vec()).unwrap())
            .collect()
    }

    #[test]
    fn frame_golden_bytes() {
        let frame = Frame::new(FrameType::GetCertificate, Vec::new());
        assert_eq!(frame.encode(), vec![0, 0, 0, 1, 0x11]);

        let frame = Frame::new(FrameType::ClientSubmit, vec![0xAB]);
        assert_eq!(frame.encode(), vec![0, 0, 0, 2, 0x10, 0xAB]);
    }

    #[test]
    fn frame_rejects_garbage() {
        assert!(Frame::decode(&[0, 0, 0, 0]).is_err()); // zero length
        assert!(Frame::decode(&[0, 0, 0, 1, 0x7F]).is_err()); // unknown type
        assert!(Frame::decode(&[0, 0, 0, 9, 0x11]).is_err()); // truncated
        assert!(Frame::decode(&[0xFF, 0xFF, 0xFF, 0xFF, 0x11]).is_err()); // oversize
        let mut trailing = Frame::new(FrameType::GetCertificate, Vec::new()).encode();
        trailing.push(0);
        assert!(Frame::decode(&trailing).is_err());
    }

    #[test]
    fn replicate_msg_golden_bytes() {
        let msg = ReplicateMsg {
            sender: NodeId(1),
            epoch: 2,
            round: 3,
            primary: NodeId(0),
            values: vec![WitnessedValue {
                value: set(&["a"]),
                primary: NodeId(0),
                witnesses: [(NodeId(0), Signature::from_parts(NodeId(0), vec![0xBB, 0xCC]))]
                    .into_iter()
                    .collect(),
            }],
        };
        let mut expected = Vec::new();
        expected.extend_from_slice(&[0x00, 0x01]); // sender
        expected.extend_from_slice(&2u64.to_be_bytes()); // epoch
        expected.extend_from_slice(&3u32.to_be_bytes()); // round
        expected.extend_from_slice(&[0x00, 0x00]); // primary
        expected.extend_from_slice(&1u32.to_be_bytes()); // value count
        expected.extend_from_slice(&[0, 0, 0, 1, 0, 1, 0x61]); // entry set {"a"}
        expected.extend_from_slice(&[0x00, 0x01]); // witness count
        expected.extend_from_slice(&[0x00, 0x00]); // witness id
        expected.extend_from_slice(&[0x00, 0x02, 0xBB, 0xCC]); // sig
        assert_eq!(encode_replicate_msg(&msg), expected);

        let mut r = Reader::new(&expected);
        let back = decode_replicate_msg(&mut r).unwrap();
        r.finish().unwrap();
        assert_eq!(back, msg);
    }

    #[test]
    fn bundle_roundtrip_with_real_signatures() {
        let kp = keygen_test(&[1u8; 32], NodeId(2));
        let value = set(&["x", "yy"]);
        let sig = sign(&kp, &vote_payload(&value, NodeId(1)));
        let msgs = vec![
            ReplicateMsg {
                sender: NodeId(2),
                epoch: 7,
                round: 2,
                primary: NodeId(1),
                values: vec![WitnessedValue {
                    value,
                    primary: NodeId(1),
                    witnesses: [(NodeId(2), sig)].into_iter().collect(),
                }],
            },
            ReplicateMsg {
                sender: NodeId(2),
                epoch: 7,
                round: 2,
                primary: NodeId(0),
                values: Vec::new(),
            },
        ];
        let body = encode_bundle(&msgs);
        assert_eq!(decode_bundle(&body).unwrap(), msgs);
    }

    #[test]
    fn log_sig_msg_roundtrip() {
        let kp = keygen_test(&[2u8; 32], NodeId(3));
        let digest = Digest([9u8; 32]);
        let msg = LogSignatureMsg {
            epoch: 4,
            signer: NodeId(3),
            digest,
            sig: sign(&kp, &crate::crypto::log_sig_payload(&digest)),
        };
        let body = encode_log_sig_msg(&msg);
        assert_eq!(decode_log_sig_msg(&body).unwrap(), msg);
        assert!(decode_log_sig_msg(&body[..body.len() - 1]).is_err());
    }

    #[test]
    fn certificate_response_roundtrip() {
        assert_eq!(decode_certificate_response(&[0x00]).unwrap(), None);

        let kp = keygen_test(&[3u8; 32], NodeId(0));
        let log = mk_log(&Log::genesis(1_000), &set(&["e1", "e2"]), 60_000, 10);
        let digest = crate::log::mk_digest(&log);
        let cert = LogCertificate {
            log,
            sigs: vec![sign(&kp, &crate::crypto::log_sig_payload(&digest))],
        };
        let body = encode_certificate_response(Some(&cert));
        assert_eq!(decode_certificate_response(&body).unwrap(), Some(cert));
    }

    #[test]
    fn submit_roundtrip() {
        let body = encode_submit(b"hello");
        assert_eq!(decode_submit(&body).unwrap(), b"hello");
        assert!(decode_submit(&body[..3]).is_err());
    }
}
