//! Node identities, key material and the signature schemes.
//!
//! Two interchangeable backends sit behind the same signing interface: an
//! Ed25519 scheme for networked deployments and a keyed-MAC scheme whose
//! keys live in the test harness, used by the simulator where millions of
//! cheap deterministic signatures are produced. The protocol only ever
//! relies on unforgeability, which both provide in their respective
//! settings.
//!
//! Payloads are domain-separated with a leading tag byte and every vote
//! payload binds the primary's identity, so a signature created in one
//! replicate thread can never verify in another.

use std::fmt;

use ed25519_dalek::{Signer as _, SigningKey, VerifyingKey};
use hmac::{Hmac, Mac as _};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec;
use crate::log::{Digest, EntrySet};

/// Payload tag for replicate-phase votes. Part of the wire contract.
pub const VOTE_PAYLOAD_TAG: u8 = 0x01;
/// Payload tag for signing-phase signatures over a log digest.
pub const LOG_SIG_PAYLOAD_TAG: u8 = 0x02;

type HmacSha256 = Hmac<Sha256>;

/// Dense 0-based process identifier; `id < n` in any deployment.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u16);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Scheme {
    Ed25519,
    /// HMAC-SHA256 with per-node keys known to the harness. Signatures are
    /// unforgeable from the protocol's viewpoint because nothing outside
    /// the harness holds the keys.
    TestMac,
}

impl Scheme {
    fn tag(self) -> u8 {
        match self {
            Scheme::Ed25519 => 0x01,
            Scheme::TestMac => 0x02,
        }
    }
}

#[derive(Clone)]
enum SecretKeyInner {
    Ed25519(Box<SigningKey>),
    TestMac([u8; 32]),
}

/// Verification key. For the MAC scheme this carries the MAC key itself;
/// it is "public" only within the harness that built the registry.
#[derive(Clone, PartialEq, Eq)]
pub struct PublicKey {
    scheme: Scheme,
    bytes: [u8; 32],
}

impl PublicKey {
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Scheme tag byte followed by the 32 key bytes.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![self.scheme.tag()];
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, KeyError> {
        if bytes.len() != 33 {
            return Err(KeyError::BadLength(bytes.len()));
        }
        let scheme = match bytes[0] {
            0x01 => Scheme::Ed25519,
            0x02 => Scheme::TestMac,
            t => return Err(KeyError::BadSchemeTag(t)),
        };
        let key: [u8; 32] = bytes[1..].try_into().unwrap();
        if scheme == Scheme::Ed25519 {
            // reject points that do not decompress
            VerifyingKey::from_bytes(&key).map_err(|_| KeyError::BadKey)?;
        }
        Ok(PublicKey { scheme, bytes: key })
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "PublicKey({:?}, {:02x}{:02x}…)",
            self.scheme, self.bytes[0], self.bytes[1]
        )
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyError {
    #[error("encoded key must be 33 bytes, got {0}")]
    BadLength(usize),
    #[error("unknown scheme tag 0x{0:02x}")]
    BadSchemeTag(u8),
    #[error("key bytes do not form a valid verification key")]
    BadKey,
}

/// Signing and verification key material for one node.
#[derive(Clone)]
pub struct KeyPair {
    pub node: NodeId,
    secret: SecretKeyInner,
    pub public: PublicKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair(node {}, {:?})", self.node, self.public.scheme)
    }
}

fn derive_secret(scheme: Scheme, seed: &[u8; 32], node: NodeId) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"logres/keygen/v1");
    h.update([scheme.tag()]);
    h.update(node.0.to_be_bytes());
    h.update(seed);
    h.finalize().into()
}

/// Deterministic key generation: the same seed and node id always yield
/// the same pair, distinct inputs yield distinct keys.
pub fn keygen(scheme: Scheme, seed: &[u8; 32], node: NodeId) -> KeyPair {
    let secret = derive_secret(scheme, seed, node);
    match scheme {
        Scheme::Ed25519 => {
            let sk = SigningKey::from_bytes(&secret);
            let public = PublicKey {
                scheme,
                bytes: sk.verifying_key().to_bytes(),
            };
            KeyPair {
                node,
                secret: SecretKeyInner::Ed25519(Box::new(sk)),
                public,
            }
        }
        Scheme::TestMac => KeyPair {
            node,
            secret: SecretKeyInner::TestMac(secret),
            public: PublicKey {
                scheme,
                bytes: secret,
            },
        },
    }
}

/// MAC-backend shorthand used throughout the simulator.
pub fn keygen_test(seed: &[u8; 32], node: NodeId) -> KeyPair {
    keygen(Scheme::TestMac, seed, node)
}

/// Rebuilds a key pair from its 32 secret bytes, as stored in node
/// configuration files.
pub fn keypair_from_secret(scheme: Scheme, node: NodeId, secret: &[u8; 32]) -> KeyPair {
    match scheme {
        Scheme::Ed25519 => {
            let sk = SigningKey::from_bytes(secret);
            let public = PublicKey {
                scheme,
                bytes: sk.verifying_key().to_bytes(),
            };
            KeyPair {
                node,
                secret: SecretKeyInner::Ed25519(Box::new(sk)),
                public,
            }
        }
        Scheme::TestMac => KeyPair {
            node,
            secret: SecretKeyInner::TestMac(*secret),
            public: PublicKey {
                scheme,
                bytes: *secret,
            },
        },
    }
}

impl KeyPair {
    /// The 32 secret bytes `keypair_from_secret` accepts.
    pub fn secret_bytes(&self) -> [u8; 32] {
        match &self.secret {
            SecretKeyInner::Ed25519(sk) => sk.to_bytes(),
            SecretKeyInner::TestMac(key) => *key,
        }
    }
}

/// A signature attributed to `signer`. Only valid against exactly one
/// payload under the scheme's unforgeability assumption.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Signature {
    pub signer: NodeId,
    bytes: Vec<u8>,
}

impl Signature {
    pub fn from_parts(signer: NodeId, bytes: Vec<u8>) -> Self {
        Signature { signer, bytes }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sig(by {}, {} bytes)", self.signer, self.bytes.len())
    }
}

/// Immutable table of all verification keys plus the deployment
/// parameters n and f.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicRegistry {
    keys: Vec<PublicKey>, // indexed by node id; dense by construction
    f: u16,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("node ids must be dense in [0, n): missing or duplicate id {0}")]
    NotDense(u16),
    #[error("fault bound violated: need n > 2f, got n={n}, f={f}")]
    FaultBound { n: u16, f: u16 },
    #[error("fault bound violated: need n > f, got n={n}, f={f}")]
    WeakFaultBound { n: u16, f: u16 },
    #[error("empty registry")]
    Empty,
}

impl PublicRegistry {
    /// Standard registry requiring the correct-majority bound n > 2f.
    pub fn new(keys: Vec<(NodeId, PublicKey)>, f: u16) -> Result<Self, RegistryError> {
        let reg = Self::build(keys, f)?;
        if reg.n() <= 2 * f {
            return Err(RegistryError::FaultBound { n: reg.n(), f });
        }
        Ok(reg)
    }

    /// Registry under the weaker n > f bound. The replicate phase alone
    /// still reaches consensus in this regime; full log replication does
    /// not, so this constructor exists for the simulator's weak mode only.
    pub fn new_weak(keys: Vec<(NodeId, PublicKey)>, f: u16) -> Result<Self, RegistryError> {
        let reg = Self::build(keys, f)?;
        if reg.n() <= f {
            return Err(RegistryError::WeakFaultBound { n: reg.n(), f });
        }
        Ok(reg)
    }

    fn build(mut keys: Vec<(NodeId, PublicKey)>, f: u16) -> Result<Self, RegistryError> {
        if keys.is_empty() {
            return Err(RegistryError::Empty);
        }
        keys.sort_by_key(|(id, _)| *id);
        for (i, (id, _)) in keys.iter().enumerate() {
            if id.0 as usize != i {
                return Err(RegistryError::NotDense(id.0));
            }
        }
        Ok(PublicRegistry {
            keys: keys.into_iter().map(|(_, k)| k).collect(),
            f,
        })
    }

    pub fn n(&self) -> u16 {
        self.keys.len() as u16
    }

    pub fn f(&self) -> u16 {
        self.f
    }

    /// Quorum size θ = f + 1 for a valid log certificate.
    pub fn theta(&self) -> u16 {
        self.f + 1
    }

    pub fn key(&self, node: NodeId) -> Option<&PublicKey> {
        self.keys.get(node.0 as usize)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.n()).map(NodeId)
    }
}

/// Payload for a replicate-phase vote: tag 0x01, the primary's id, then
/// the canonical entry-set encoding. Injective over (value, primary);
/// including the primary is what stops cross-thread signature replay.
pub fn vote_payload(value: &EntrySet, primary: NodeId) -> Vec<u8> {
    let mut out = vec![VOTE_PAYLOAD_TAG];
    codec::put_u16(&mut out, primary.0);
    value.encode_into(&mut out);
    out
}

/// The pre-fix vote payload without the primary binding. Kept only so the
/// simulator can reproduce the replay attack this omission enables; no
/// deployment code path uses it.
pub fn vote_payload_unbound(value: &EntrySet) -> Vec<u8> {
    let mut out = vec![VOTE_PAYLOAD_TAG];
    value.encode_into(&mut out);
    out
}

/// Payload for a signing-phase signature: tag 0x02 followed by the
/// 32-byte log digest.
pub fn log_sig_payload(digest: &Digest) -> Vec<u8> {
    let mut out = vec![LOG_SIG_PAYLOAD_TAG];
    out.extend_from_slice(&digest.0);
    out
}

pub fn sign(kp: &KeyPair, payload: &[u8]) -> Signature {
    let bytes = match &kp.secret {
        SecretKeyInner::Ed25519(sk) => sk.sign(payload).to_vec(),
        SecretKeyInner::TestMac(key) => {
            let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
            mac.update(payload);
            mac.finalize().into_bytes().to_vec()
        }
    };
    Signature {
        signer: kp.node,
        bytes,
    }
}

/// Verifies `sig` over `payload` against the signer's registered key.
/// Unknown signers and malformed signature bytes yield `false`, never an
/// error: Byzantine input is expected here.
pub fn verify(reg: &PublicRegistry, sig: &Signature, payload: &[u8]) -> bool {
    let Some(key) = reg.key(sig.signer) else {
        return false;
    };
    match key.scheme {
        Scheme::Ed25519 => {
            let Ok(vk) = VerifyingKey::from_bytes(&key.bytes) else {
                return false;
            };
            let Ok(ed_sig) = ed25519_dalek::Signature::from_slice(&sig.bytes) else {
                return false;
            };
            vk.verify_strict(payload, &ed_sig).is_ok()
        }
        Scheme::TestMac => {
            let mut mac =
                HmacSha256::new_from_slice(&key.bytes).expect("hmac accepts any key length");
            mac.update(payload);
            mac.verify_slice(&sig.bytes).is_ok()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::Entry;

    fn set(items: &[&str]) -> EntrySet {
        items
            .iter()
            .map(|s| Entry::new(s.as_bytes().to_vec()).unwrap())
            .collect()
    }

    fn registry(scheme: Scheme, n: u16, f: u16) -> (Vec<KeyPair>, PublicRegistry) {
        let kps: Vec<KeyPair> = (0..n)
            .map(|i| keygen(scheme, &[0u8; 32], NodeId(i)))
            .collect();
        let reg = PublicRegistry::new(
            kps.iter().map(|kp| (kp.node, kp.public.clone())).collect(),
            f,
        )
        .unwrap();
        (kps, reg)
    }

    #[test]
    fn keygen_deterministic() {
        for scheme in [Scheme::Ed25519, Scheme::TestMac] {
            let a = keygen(scheme, &[0u8; 32], NodeId(0));
            let b = keygen(scheme, &[0u8; 32], NodeId(0));
            assert_eq!(a.public, b.public);
            assert_eq!(
                sign(&a, b"payload").bytes(),
                sign(&b, b"payload").bytes(),
                "same seed and node must sign identically"
            );
        }
    }

    #[test]
    fn keygen_distinct_nodes_distinct_keys() {
        for scheme in [Scheme::Ed25519, Scheme::TestMac] {
            let a = keygen(scheme, &[0u8; 32], NodeId(0));
            let b = keygen(scheme, &[0u8; 32], NodeId(1));
            assert_ne!(a.public, b.public);
            let c = keygen(scheme, &[1u8; 32], NodeId(0));
            assert_ne!(a.public, c.public);
        }
    }

    #[test]
    fn sign_verify_roundtrip_both_schemes() {
        for scheme in [Scheme::Ed25519, Scheme::TestMac] {
            let (kps, reg) = registry(scheme, 3, 1);
            let payload = vote_payload(&set(&["a"]), NodeId(2));
            let sig = sign(&kps[0], &payload);
            assert!(verify(&reg, &sig, &payload));

            // tampered payload
            let mut bad = payload.clone();
            bad[0] ^= 0x80;
            assert!(!verify(&reg, &sig, &bad));

            // signature from node 0 presented as node 1's
            let forged = Signature::from_parts(NodeId(1), sig.bytes().to_vec());
            assert!(!verify(&reg, &forged, &payload));

            // unknown signer id: false, not a panic
            let unknown = Signature::from_parts(NodeId(99), sig.bytes().to_vec());
            assert!(!verify(&reg, &unknown, &payload));
        }
    }

    #[test]
    fn vote_payload_golden() {
        // empty set, primary 3: tag, 0x0003, count 0
        assert_eq!(
            vote_payload(&EntrySet::new(), NodeId(3)),
            vec![0x01, 0x00, 0x03, 0, 0, 0, 0]
        );
        // set canonicalization: {"a","b"} == {"b","a"}
        assert_eq!(
            vote_payload(&set(&["a", "b"]), NodeId(0)),
            vote_payload(&set(&["b", "a"]), NodeId(0))
        );
        // primary binding: same value, different primary, different payload
        assert_ne!(
            vote_payload(&set(&["a"]), NodeId(1)),
            vote_payload(&set(&["a"]), NodeId(2))
        );
    }

    #[test]
    fn primary_binding_blocks_cross_thread_replay() {
        let (kps, reg) = registry(Scheme::TestMac, 3, 1);
        let value = set(&["a"]);
        // a signature created in thread 1 fails verification in thread 2
        let sig = sign(&kps[0], &vote_payload(&value, NodeId(1)));
        assert!(verify(&reg, &sig, &vote_payload(&value, NodeId(1))));
        assert!(!verify(&reg, &sig, &vote_payload(&value, NodeId(2))));
        // without the binding the replay goes through
        let unbound = sign(&kps[0], &vote_payload_unbound(&value));
        assert!(verify(&reg, &unbound, &vote_payload_unbound(&value)));
    }

    #[test]
    fn log_sig_payload_golden() {
        let p = log_sig_payload(&Digest::ZERO);
        assert_eq!(p.len(), 33);
        assert_eq!(p[0], LOG_SIG_PAYLOAD_TAG);
        assert!(p[1..].iter().all(|&b| b == 0));

        let mut d = Digest::ZERO;
        d.0[31] = 1;
        assert_ne!(log_sig_payload(&d), p);
    }

    #[test]
    fn payload_domain_separation() {
        // a log-sig payload can never collide with a vote payload
        let vote = vote_payload(&EntrySet::new(), NodeId(0));
        let logsig = log_sig_payload(&Digest::ZERO);
        assert_ne!(vote[0], logsig[0]);
    }

    #[test]
    fn registry_enforces_bounds() {
        let keys = |n: u16| -> Vec<(NodeId, PublicKey)> {
            (0..n)
                .map(|i| {
                    let kp = keygen_test(&[0u8; 32], NodeId(i));
                    (kp.node, kp.public)
                })
                .collect()
        };
        assert!(PublicRegistry::new(keys(5), 2).is_ok());
        assert_eq!(
            PublicRegistry::new(keys(4), 2),
            Err(RegistryError::FaultBound { n: 4, f: 2 })
        );
        // weak bound admits n = 2f but not n = f
        assert!(PublicRegistry::new_weak(keys(4), 2).is_ok());
        assert_eq!(
            PublicRegistry::new_weak(keys(2), 2),
            Err(RegistryError::WeakFaultBound { n: 2, f: 2 })
        );
        // non-dense ids rejected
        let mut sparse = keys(3);
        sparse.remove(1);
        assert_eq!(
            PublicRegistry::new(sparse, 1),
            Err(RegistryError::NotDense(2))
        );
    }

    #[test]
    fn public_key_encode_decode() {
        for scheme in [Scheme::Ed25519, Scheme::TestMac] {
            let kp = keygen(scheme, &[3u8; 32], NodeId(7));
            let bytes = kp.public.encode();
            assert_eq!(PublicKey::decode(&bytes).unwrap(), kp.public);
        }
        assert!(PublicKey::decode(&[0xff; 33]).is_err());
        assert!(PublicKey::decode(&[0x01; 10]).is_err());
    }
}
