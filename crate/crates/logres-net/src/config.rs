//! Deployment configuration: the key-value file every node and client
//! tool reads.
//!
//! ```text
//! self = 0
//! f = 2
//! period_ms = 3000
//! round_ms = 100
//! max_entry_bytes = 4096
//! data_dir = /var/lib/logres/node0
//! link_delay_ms = 0
//! behavior = correct
//! secret = <32-byte hex>
//! node = 0 127.0.0.1:7100 <33-byte public key hex>
//! node = 1 127.0.0.1:7101 <hex>
//! ```
//!
//! `LOGRES_DATA_DIR` overrides `data_dir` when set.

use std::collections::BTreeSet;
use std::path::PathBuf;

use thiserror::Error;

use logres_core::crypto::{
    keypair_from_secret, KeyPair, NodeId, PublicKey, PublicRegistry, Scheme,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing key {0}")]
    Missing(&'static str),
    #[error("node ids must be dense in [0, n): problem near id {0}")]
    NotDense(u16),
    #[error("self id {0} is not a configured node")]
    BadSelf(u16),
    #[error("need n > 2f, got n={n}, f={f}")]
    FaultBound { n: usize, f: u16 },
    #[error("period_ms {period} < (f+2) x round_ms = {min}")]
    PeriodTooShort { period: u64, min: u64 },
    #[error("duplicate address {0}")]
    DuplicateAddr(String),
    #[error("all node keys must use the same scheme")]
    MixedSchemes,
    #[error(transparent)]
    Key(#[from] logres_core::crypto::KeyError),
    #[error(transparent)]
    Registry(#[from] logres_core::crypto::RegistryError),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Behavior {
    Correct,
    /// Runs the signature-padding overhead attack alongside the normal
    /// protocol; used for the adversarial throughput experiments.
    Padding,
}

#[derive(Clone, Debug)]
pub struct NodeEntry {
    pub id: NodeId,
    pub addr: String,
    pub public: PublicKey,
}

#[derive(Clone, Debug)]
pub struct Deployment {
    pub nodes: Vec<NodeEntry>,
    pub self_id: NodeId,
    pub f: u16,
    pub period_ms: u64,
    pub round_ms: u64,
    pub max_entry_bytes: usize,
    pub data_dir: PathBuf,
    /// Emulated one-way delay added to every node-to-node frame.
    pub link_delay_ms: u64,
    pub behavior: Behavior,
    secret: [u8; 32],
}

impl Deployment {
    pub fn n(&self) -> u16 {
        self.nodes.len() as u16
    }

    /// Replication rounds plus the signing round.
    pub fn round_slots(&self) -> u64 {
        self.f as u64 + 2
    }

    pub fn scheme(&self) -> Scheme {
        self.nodes[0].public.scheme()
    }

    pub fn registry(&self) -> PublicRegistry {
        PublicRegistry::new(
            self.nodes
                .iter()
                .map(|n| (n.id, n.public.clone()))
                .collect(),
            self.f,
        )
        .expect("bounds checked at parse time")
    }

    pub fn keypair(&self) -> KeyPair {
        keypair_from_secret(self.scheme(), self.self_id, &self.secret)
    }

    pub fn self_addr(&self) -> &str {
        &self.nodes[self.self_id.0 as usize].addr
    }

    pub fn parse(text: &str) -> Result<Deployment, ConfigError> {
        let mut self_id = None;
        let mut f = None;
        let mut period_ms = None;
        let mut round_ms = None;
        let mut max_entry_bytes = logres_core::log::DEFAULT_MAX_ENTRY_BYTES;
        let mut data_dir = None;
        let mut link_delay_ms = 0u64;
        let mut behavior = Behavior::Correct;
        let mut secret = None;
        let mut nodes: Vec<NodeEntry> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| ConfigError::Parse { line: idx + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let parse_u64 =
                |v: &str| v.parse::<u64>().map_err(|_| err(format!("bad number {v:?}")));
            match key {
                "self" => self_id = Some(parse_u64(value)? as u16),
                "f" => f = Some(parse_u64(value)? as u16),
                "period_ms" => period_ms = Some(parse_u64(value)?),
                "round_ms" => round_ms = Some(parse_u64(value)?),
                "max_entry_bytes" => max_entry_bytes = parse_u64(value)? as usize,
                "data_dir" => data_dir = Some(PathBuf::from(value)),
                "link_delay_ms" => link_delay_ms = parse_u64(value)?,
                "behavior" => {
                    behavior = match value {
                        "correct" => Behavior::Correct,
                        "padding" => Behavior::Padding,
                        other => return Err(err(format!("unknown behavior {other:?}"))),
                    }
                }
                "secret" => {
                    let bytes = hex::decode(value).map_err(|e| err(format!("bad hex: {e}")))?;
                    let arr: [u8; 32] = bytes
                        .try_into()
                        .map_err(|_| err("secret must be 32 bytes".into()))?;
                    secret = Some(arr);
                }
                "node" => {
                    let mut parts = value.split_whitespace();
                    let id: u16 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err("node needs: <id> <addr> <pubkey hex>".into()))?;
                    let addr = parts
                        .next()
                        .ok_or_else(|| err("node missing address".into()))?
                        .to_string();
                    let key_hex = parts
                        .next()
                        .ok_or_else(|| err("node missing public key".into()))?;
                    let key_bytes =
                        hex::decode(key_hex).map_err(|e| err(format!("bad key hex: {e}")))?;
                    nodes.push(NodeEntry {
                        id: NodeId(id),
                        addr,
                        public: PublicKey::decode(&key_bytes)?,
                    });
                }
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }

        let self_id = NodeId(self_id.ok_or(ConfigError::Missing("self"))?);
        let f = f.ok_or(ConfigError::Missing("f"))?;
        let period_ms = period_ms.ok_or(ConfigError::Missing("period_ms"))?;
        let round_ms = round_ms.ok_or(ConfigError::Missing("round_ms"))?;
        let mut data_dir = data_dir.ok_or(ConfigError::Missing("data_dir"))?;
        let secret = secret.ok_or(ConfigError::Missing("secret"))?;
        if let Ok(dir) = std::env::var("LOGRES_DATA_DIR") {
            if !dir.is_empty() {
                data_dir = PathBuf::from(dir);
            }
        }

        nodes.sort_by_key(|n| n.id.0);
        for (i, node) in nodes.iter().enumerate() {
            if node.id.0 as usize != i {
                return Err(ConfigError::NotDense(node.id.0));
            }
        }
        if nodes.len() <= 2 * f as usize {
            return Err(ConfigError::FaultBound {
                n: nodes.len(),
                f,
            });
        }
        if self_id.0 as usize >= nodes.len() {
            return Err(ConfigError::BadSelf(self_id.0));
        }
        let mut addrs = BTreeSet::new();
        for node in &nodes {
            if !addrs.insert(node.addr.clone()) {
                return Err(ConfigError::DuplicateAddr(node.addr.clone()));
            }
        }
        if nodes
            .iter()
            .any(|n| n.public.scheme() != nodes[0].public.scheme())
        {
            return Err(ConfigError::MixedSchemes);
        }
        let dep = Deployment {
            nodes,
            self_id,
            f,
            period_ms,
            round_ms,
            max_entry_bytes,
            data_dir,
            link_delay_ms,
            behavior,
            secret,
        };
        let min = dep.round_slots() * dep.round_ms;
        if dep.period_ms < min {
            return Err(ConfigError::PeriodTooShort {
                period: dep.period_ms,
                min,
            });
        }
        Ok(dep)
    }
}

/// Renders a config file for node `self_id`; the building block behind
/// `logres keygen` and the test harnesses.
#[allow(clippy::too_many_arguments)]
pub fn render_config(
    self_id: NodeId,
    f: u16,
    period_ms: u64,
    round_ms: u64,
    link_delay_ms: u64,
    data_dir: &str,
    behavior: Behavior,
    keypairs: &[KeyPair],
    addrs: &[String],
) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    writeln!(out, "self = {}", self_id.0).unwrap();
    writeln!(out, "f = {f}").unwrap();
    writeln!(out, "period_ms = {period_ms}").unwrap();
    writeln!(out, "round_ms = {round_ms}").unwrap();
    writeln!(out, "link_delay_ms = {link_delay_ms}").unwrap();
    writeln!(out, "data_dir = {data_dir}").unwrap();
    if behavior == Behavior::Padding {
        writeln!(out, "behavior = padding").unwrap();
    }
    writeln!(
        out,
        "secret = {}",
        hex::encode(keypairs[self_id.0 as usize].secret_bytes())
    )
    .unwrap();
    for (kp, addr) in keypairs.iter().zip(addrs) {
        writeln!(
            out,
            "node = {} {} {}",
            kp.node.0,
            addr,
            hex::encode(kp.public.encode())
        )
        .unwrap();
    }
    out
}
