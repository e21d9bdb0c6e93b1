//! The replicated log: entries, canonically ordered entry sets, log
//! construction (`mk_log`), digests (`mk_digest`) and certificate
//! validation against the `f + 1` signature quorum.

use std::collections::BTreeSet;
use std::fmt;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{self, CodecError, Reader};
use crate::crypto::{log_sig_payload, verify, NodeId, PublicRegistry, Signature};

/// Hard upper bound on entry size; the wire format length-prefixes
/// entries with a u16.
pub const MAX_ENTRY_BYTES: usize = 65535;
/// Default per-deployment entry size limit.
pub const DEFAULT_MAX_ENTRY_BYTES: usize = 4096;

/// Tag byte prefixed to the canonical log encoding hashed by `mk_digest`.
pub const LOG_ENCODING_TAG: u8 = 0x03;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EntryError {
    #[error("entry must not be empty")]
    Empty,
    #[error("entry of {got} bytes exceeds the {max}-byte limit")]
    TooLarge { got: usize, max: usize },
}

/// An opaque client-submitted byte string. Nonempty, at most
/// [`MAX_ENTRY_BYTES`] long, ordered byte-lexicographically.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Entry(Vec<u8>);

impl Entry {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, EntryError> {
        let bytes = bytes.into();
        if bytes.is_empty() {
            return Err(EntryError::Empty);
        }
        if bytes.len() > MAX_ENTRY_BYTES {
            return Err(EntryError::TooLarge {
                got: bytes.len(),
                max: MAX_ENTRY_BYTES,
            });
        }
        Ok(Entry(bytes))
    }

    pub fn bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Debug for Entry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match std::str::from_utf8(&self.0) {
            Ok(s) if s.len() <= 32 && s.chars().all(|c| !c.is_control()) => {
                write!(f, "Entry({s:?})")
            }
            _ => write!(f, "Entry(0x{})", hex_prefix(&self.0)),
        }
    }
}

fn hex_prefix(bytes: &[u8]) -> String {
    let shown = &bytes[..bytes.len().min(8)];
    let mut s: String = shown.iter().map(|b| format!("{b:02x}")).collect();
    if bytes.len() > 8 {
        s.push('…');
    }
    s
}

/// A duplicate-free set of entries in strictly increasing
/// byte-lexicographic order. This canonical order is what makes
/// `mk_log` deterministic across nodes.
#[derive(Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntrySet(BTreeSet<Entry>);

impl EntrySet {
    pub fn new() -> Self {
        EntrySet(BTreeSet::new())
    }

    pub fn from_entries(entries: impl IntoIterator<Item = Entry>) -> Self {
        EntrySet(entries.into_iter().collect())
    }

    /// Returns true when the entry was not already present.
    pub fn insert(&mut self, entry: Entry) -> bool {
        self.0.insert(entry)
    }

    pub fn contains(&self, entry: &Entry) -> bool {
        self.0.contains(entry)
    }

    pub fn union(&self, other: &EntrySet) -> EntrySet {
        EntrySet(self.0.union(&other.0).cloned().collect())
    }

    pub fn difference(&self, other: &EntrySet) -> EntrySet {
        EntrySet(self.0.difference(&other.0).cloned().collect())
    }

    pub fn is_subset(&self, other: &EntrySet) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Entry> {
        self.0.iter()
    }

    /// Canonical encoding: u32 count, then each entry as u16 length + bytes,
    /// in the set's strictly increasing order.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        codec::put_u32(out, self.0.len() as u32);
        for entry in &self.0 {
            codec::put_u16(out, entry.len() as u16);
            out.extend_from_slice(entry.bytes());
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let count = r.u32()? as usize;
        // Each entry costs at least 3 bytes on the wire.
        if count > r.remaining() / 3 + 1 {
            return Err(CodecError::LengthLimit {
                got: count,
                limit: r.remaining() / 3 + 1,
            });
        }
        let mut set = BTreeSet::new();
        let mut prev: Option<Entry> = None;
        for _ in 0..count {
            let len = r.u16()? as usize;
            let entry = Entry::new(r.take(len)?.to_vec())
                .map_err(|_| CodecError::Invalid("empty entry"))?;
            if let Some(p) = &prev {
                if *p >= entry {
                    return Err(CodecError::Invalid("entry set not strictly increasing"));
                }
            }
            prev = Some(entry.clone());
            set.insert(entry);
        }
        Ok(EntrySet(set))
    }
}

impl fmt::Debug for EntrySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.0.iter()).finish()
    }
}

impl FromIterator<Entry> for EntrySet {
    fn from_iter<T: IntoIterator<Item = Entry>>(iter: T) -> Self {
        EntrySet(iter.into_iter().collect())
    }
}

/// 256-bit digest of a canonical log encoding.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CodecError> {
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| CodecError::Invalid("digest must be 32 bytes"))?;
        Ok(Digest(arr))
    }

    pub fn to_hex(self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}…)", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// One version of the replicated log. Entries are cumulative: every epoch
/// contains all entries of the previous one.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Log {
    pub epoch: u64,
    pub prev_digest: Digest,
    pub entries: EntrySet,
    /// Unix milliseconds after which the log is no longer valid.
    pub expiration: u64,
}

impl Log {
    /// The common initial log all nodes start from.
    pub fn genesis(expiration: u64) -> Log {
        Log {
            epoch: 0,
            prev_digest: Digest::ZERO,
            entries: EntrySet::new(),
            expiration,
        }
    }

    /// Canonical encoding: tag 0x03, epoch, expiration, previous digest,
    /// then the entry set. This is the exact byte string hashed by
    /// `mk_digest` and carried in certificate responses.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(LOG_ENCODING_TAG);
        codec::put_u64(out, self.epoch);
        codec::put_u64(out, self.expiration);
        out.extend_from_slice(&self.prev_digest.0);
        self.entries.encode_into(out);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let tag = r.u8()?;
        if tag != LOG_ENCODING_TAG {
            return Err(CodecError::UnknownTag(tag));
        }
        let epoch = r.u64()?;
        let expiration = r.u64()?;
        let prev_digest = Digest::from_slice(r.take(32)?)?;
        let entries = EntrySet::decode(r)?;
        Ok(Log {
            epoch,
            prev_digest,
            entries,
            expiration,
        })
    }
}

/// Deterministic log construction: bump the epoch, chain the previous
/// digest, merge the new entries into canonical order and stamp the
/// expiration `period` milliseconds from `now`.
pub fn mk_log(prev: &Log, new_entries: &EntrySet, period_ms: u64, now_ms: u64) -> Log {
    Log {
        epoch: prev.epoch + 1,
        prev_digest: mk_digest(prev),
        entries: prev.entries.union(new_entries),
        expiration: now_ms + period_ms,
    }
}

/// SHA-256 over the canonical log encoding.
pub fn mk_digest(log: &Log) -> Digest {
    let mut hasher = Sha256::new();
    hasher.update(log.encode());
    Digest(hasher.finalize().into())
}

/// A log plus the signatures that make it valid: `f + 1` distinct signers
/// over `log_sig_payload(mk_digest(log))`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogCertificate {
    pub log: Log,
    pub sigs: Vec<Signature>,
}

/// Reason a certificate failed validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CertInvalid {
    #[error("expired")]
    Expired,
    #[error("insufficient_sigs: {got} < {need}")]
    InsufficientSigs { got: usize, need: usize },
    #[error("bad_sig: signer {signer}")]
    BadSig { signer: NodeId },
    #[error("duplicate_signer: {signer}")]
    DuplicateSigner { signer: NodeId },
}

impl CertInvalid {
    /// Machine-readable reason code.
    pub fn code(&self) -> &'static str {
        match self {
            CertInvalid::Expired => "expired",
            CertInvalid::InsufficientSigs { .. } => "insufficient_sigs",
            CertInvalid::BadSig { .. } => "bad_sig",
            CertInvalid::DuplicateSigner { .. } => "duplicate_signer",
        }
    }
}

/// Accepts exactly when the log has not expired and carries at least
/// `f + 1` valid signatures from pairwise distinct signers.
pub fn validate_certificate(
    cert: &LogCertificate,
    reg: &PublicRegistry,
    now_ms: u64,
) -> Result<(), CertInvalid> {
    if now_ms >= cert.log.expiration {
        return Err(CertInvalid::Expired);
    }
    let payload = log_sig_payload(&mk_digest(&cert.log));
    let mut seen = BTreeSet::new();
    for sig in &cert.sigs {
        if !seen.insert(sig.signer) {
            return Err(CertInvalid::DuplicateSigner { signer: sig.signer });
        }
        if !verify(reg, sig, &payload) {
            return Err(CertInvalid::BadSig { signer: sig.signer });
        }
    }
    let need = reg.theta() as usize;
    if seen.len() < need {
        return Err(CertInvalid::InsufficientSigs {
            got: seen.len(),
            need,
        });
    }
    Ok(())
}
