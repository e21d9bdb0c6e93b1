//! Simulation parameters: fault configuration, heard-of set overrides and
//! the campaign file format.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use logres_core::crypto::NodeId;
use logres_core::replicate::ProtocolVariant;

/// Which fault bound the run assumes. The full protocol needs a correct
/// majority (n > 2f); the replicate phase alone still reaches consensus
/// under the weaker n > f, which the weak mode exists to demonstrate.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BoundMode {
    Strict,
    Weak,
}

/// Whether signatures first sent in round r may already appear in forged
/// messages of round r itself (inclusive) or only from round r+1 on
/// (exclusive). The message-closure definition reads inclusively; the
/// exclusive toggle exists for comparison.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ClosureMode {
    Inclusive,
    Exclusive,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("fault bound violated: mode {mode:?} requires {requirement}, got n={n}, f={f}")]
    FaultBound {
        mode: BoundMode,
        requirement: &'static str,
        n: u16,
        f: u16,
    },
    #[error("|F| = {got} faulty nodes exceeds f = {f}")]
    TooManyFaulty { got: usize, f: u16 },
    #[error("faulty id {0} out of range")]
    FaultyOutOfRange(u16),
    #[error("replication_rounds must be at least 1")]
    NoRounds,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Everything that shapes one simulated run except the adversary itself.
#[derive(Clone, Debug)]
pub struct FaultConfig {
    pub n: u16,
    pub f: u16,
    /// F: the actually faulty nodes, |F| <= f.
    pub faulty: BTreeSet<NodeId>,
    pub mode: BoundMode,
    /// Replicate rounds per epoch; f+1 for the real protocol, f for the
    /// round-optimality counterexample.
    pub replication_rounds: u32,
    pub closure: ClosureMode,
    pub variant: ProtocolVariant,
    /// Virtual clock fed to the signing phase, milliseconds.
    pub now_ms: u64,
    pub period_ms: u64,
    /// Correct senders removed from SHO(receiver, round); empty in the
    /// standard Byzantine model where correct messages always arrive.
    pub sho_drop: BTreeMap<(u32, NodeId), BTreeSet<NodeId>>,
}

impl FaultConfig {
    pub fn new(n: u16, f: u16) -> FaultConfig {
        FaultConfig {
            n,
            f,
            faulty: BTreeSet::new(),
            mode: BoundMode::Strict,
            replication_rounds: f as u32 + 1,
            closure: ClosureMode::Inclusive,
            variant: ProtocolVariant::FIXED,
            now_ms: 1_000,
            period_ms: 60_000,
            sho_drop: BTreeMap::new(),
        }
    }

    pub fn with_faulty(mut self, ids: impl IntoIterator<Item = u16>) -> FaultConfig {
        self.faulty = ids.into_iter().map(NodeId).collect();
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bound_ok = match self.mode {
            BoundMode::Strict => self.n > 2 * self.f,
            BoundMode::Weak => self.n > self.f,
        };
        if !bound_ok {
            return Err(ConfigError::FaultBound {
                mode: self.mode,
                requirement: match self.mode {
                    BoundMode::Strict => "n > 2f",
                    BoundMode::Weak => "n > f",
                },
                n: self.n,
                f: self.f,
            });
        }
        if self.faulty.len() > self.f as usize {
            return Err(ConfigError::TooManyFaulty {
                got: self.faulty.len(),
                f: self.f,
            });
        }
        if let Some(id) = self.faulty.iter().find(|id| id.0 >= self.n) {
            return Err(ConfigError::FaultyOutOfRange(id.0));
        }
        if self.replication_rounds == 0 {
            return Err(ConfigError::NoRounds);
        }
        Ok(())
    }

    pub fn is_faulty(&self, id: NodeId) -> bool {
        self.faulty.contains(&id)
    }

    pub fn correct(&self) -> Vec<NodeId> {
        (0..self.n)
            .map(NodeId)
            .filter(|id| !self.is_faulty(*id))
            .collect()
    }

    /// Model round index of the signing round; replication occupies
    /// rounds 0..signing_round().
    pub fn signing_round(&self) -> u32 {
        self.replication_rounds
    }

    /// Index of the final state s^{f+2} (when rounds = f+1).
    pub fn final_state_index(&self) -> usize {
        self.replication_rounds as usize + 1
    }

    /// SHO(receiver, round): correct senders whose prescribed message
    /// arrives unchanged.
    pub fn sho(&self, receiver: NodeId, round: u32) -> BTreeSet<NodeId> {
        let mut set: BTreeSet<NodeId> = self.correct().into_iter().collect();
        if let Some(dropped) = self.sho_drop.get(&(round, receiver)) {
            for d in dropped {
                set.remove(d);
            }
        }
        set
    }
}

/// A campaign: one adversary run many times over seeded workloads.
#[derive(Clone, Debug)]
pub struct Campaign {
    pub cfg: FaultConfig,
    pub adversary: String,
    pub seed: u64,
    pub runs: u32,
    /// Random workload entries given to each node per run.
    pub entries_per_node: u32,
}

/// Parses the key-value campaign format:
///
/// ```text
/// n = 5
/// f = 2
/// faulty = 0,1
/// mode = strict
/// adversary = equivocation
/// seed = 42
/// runs = 100
/// ```
///
/// Optional keys: `rounds`, `closure` (inclusive|exclusive), `variant`
/// (fixed|unbound|early-return), `entries_per_node`, `period_ms`.
pub fn parse_campaign(text: &str) -> Result<Campaign, ConfigError> {
    let mut n = None;
    let mut f = None;
    let mut faulty: Vec<u16> = Vec::new();
    let mut mode = BoundMode::Strict;
    let mut rounds = None;
    let mut closure = ClosureMode::Inclusive;
    let mut variant = ProtocolVariant::FIXED;
    let mut adversary = String::from("crash");
    let mut seed = 0u64;
    let mut runs = 1u32;
    let mut entries_per_node = 1u32;
    let mut period_ms = 60_000u64;

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
        let parse_u64 = |v: &str| {
            v.parse::<u64>()
                .map_err(|_| err(format!("invalid number {v:?}")))
        };
        match key {
            "n" => n = Some(parse_u64(value)? as u16),
            "f" => f = Some(parse_u64(value)? as u16),
            "faulty" | "F" => {
                faulty = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| {
                        s.trim()
                            .parse::<u16>()
                            .map_err(|_| err(format!("invalid node id {s:?}")))
                    })
                    .collect::<Result<_, _>>()?;
            }
            "mode" => {
                mode = match value {
                    "strict" => BoundMode::Strict,
                    "weak" => BoundMode::Weak,
                    other => return Err(err(format!("unknown mode {other:?}"))),
                }
            }
            "rounds" => rounds = Some(parse_u64(value)? as u32),
            "closure" => {
                closure = match value {
                    "inclusive" => ClosureMode::Inclusive,
                    "exclusive" => ClosureMode::Exclusive,
                    other => return Err(err(format!("unknown closure mode {other:?}"))),
                }
            }
            "variant" => {
                variant = match value {
                    "fixed" => ProtocolVariant::FIXED,
                    "unbound" => ProtocolVariant::UNBOUND_SIGNATURES,
                    "early-return" => ProtocolVariant::EARLY_RETURN,
                    other => return Err(err(format!("unknown variant {other:?}"))),
                }
            }
            "adversary" => adversary = value.to_string(),
            "seed" => seed = parse_u64(value)?,
            "runs" => runs = parse_u64(value)? as u32,
            "entries_per_node" => entries_per_node = parse_u64(value)? as u32,
            "period_ms" => period_ms = parse_u64(value)?,
            other => return Err(err(format!("unknown key {other:?}"))),
        }
    }

    let n = n.ok_or(ConfigError::Parse {
        line: 0,
        msg: "missing key n".into(),
    })?;
    let f = f.ok_or(ConfigError::Parse {
        line: 0,
        msg: "missing key f".into(),
    })?;
    let mut cfg = FaultConfig::new(n, f).with_faulty(faulty);
    cfg.mode = mode;
    cfg.closure = closure;
    cfg.variant = variant;
    cfg.period_ms = period_ms;
    if let Some(r) = rounds {
        cfg.replication_rounds = r;
    }
    cfg.validate()?;
    Ok(Campaign {
        cfg,
        adversary,
        seed,
        runs,
        entries_per_node,
    })
}
