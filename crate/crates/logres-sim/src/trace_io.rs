//! Line-oriented trace dumps and deterministic replay.
//!
//! A dump carries the full run configuration, the workload, every forged
//! message verbatim (hex) and one record per delivered message as
//! `msg <round> <sender> <receiver> <sha256>`, followed by final-state
//! digests and certificates. Replay reconstructs the run from the header
//! and the forged messages alone, then verifies that every recorded hash
//! and digest matches — the determinism check behind golden traces.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use logres_core::crypto::NodeId;
use logres_core::log::{mk_digest, Entry, EntrySet};
use logres_core::replicate::ProtocolVariant;
use logres_core::wire;

use crate::adversary::{AdvCtx, Adversary, ForgedMessages};
use crate::config::{BoundMode, ClosureMode, ConfigError, FaultConfig};
use crate::ledger::{SentLedger, SimMsg};
use crate::properties::{check_all, Verdict};
use crate::runner::{run_lockstep, Trace};

pub const TRACE_HEADER: &str = "# logres-trace v1";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("replay diverged:\n{0}")]
    Diverged(String),
}

fn variant_str(v: ProtocolVariant) -> &'static str {
    match (v.bind_primary, v.early_return) {
        (true, false) => "fixed",
        (false, false) => "unbound",
        (true, true) => "early-return",
        (false, true) => "unbound-early-return",
    }
}

fn variant_from(s: &str) -> Option<ProtocolVariant> {
    Some(match s {
        "fixed" => ProtocolVariant::FIXED,
        "unbound" => ProtocolVariant::UNBOUND_SIGNATURES,
        "early-return" => ProtocolVariant::EARLY_RETURN,
        "unbound-early-return" => ProtocolVariant {
            bind_primary: false,
            early_return: true,
        },
        _ => return None,
    })
}

pub fn dump_trace(trace: &Trace) -> String {
    let mut out = String::new();
    let cfg = &trace.cfg;
    out.push_str(TRACE_HEADER);
    out.push('\n');
    let faulty: Vec<String> = cfg.faulty.iter().map(|id| id.0.to_string()).collect();
    writeln!(
        out,
        "cfg n={} f={} faulty={} mode={} rounds={} closure={} variant={} period_ms={} now_ms={}",
        cfg.n,
        cfg.f,
        faulty.join(","),
        match cfg.mode {
            BoundMode::Strict => "strict",
            BoundMode::Weak => "weak",
        },
        cfg.replication_rounds,
        match cfg.closure {
            ClosureMode::Inclusive => "inclusive",
            ClosureMode::Exclusive => "exclusive",
        },
        variant_str(cfg.variant),
        cfg.period_ms,
        cfg.now_ms,
    )
    .unwrap();
    writeln!(out, "adversary {}", trace.adversary).unwrap();
    writeln!(out, "seed {}", trace.seed).unwrap();
    for (node, entries) in &trace.initial_entries {
        if entries.is_empty() {
            continue;
        }
        let hexes: Vec<String> = entries.iter().map(|e| hex::encode(e.bytes())).collect();
        writeln!(out, "input {} {}", node, hexes.join(",")).unwrap();
    }

    for delivery in &trace.deliveries {
        // forged messages first (sender faulty), then all delivery records
        let mut forged: Vec<(NodeId, NodeId, &SimMsg)> = Vec::new();
        let mut records: Vec<(NodeId, NodeId, &SimMsg)> = Vec::new();
        for (&receiver, mu) in &delivery.delivered {
            for (&sender, msg) in mu {
                if cfg.is_faulty(sender) {
                    forged.push((sender, receiver, msg));
                }
                records.push((sender, receiver, msg));
            }
        }
        forged.sort_by_key(|(s, r, _)| (s.0, r.0));
        records.sort_by_key(|(s, r, _)| (s.0, r.0));
        for (sender, receiver, msg) in forged {
            writeln!(
                out,
                "forge {} {} {} {}",
                delivery.round,
                sender,
                receiver,
                hex::encode(msg.encode())
            )
            .unwrap();
        }
        for (sender, receiver, msg) in records {
            writeln!(
                out,
                "msg {} {} {} {}",
                delivery.round,
                sender,
                receiver,
                msg.hash_hex()
            )
            .unwrap();
        }
    }

    if trace.invalid.is_none() {
        for &i in &cfg.correct() {
            writeln!(out, "final {} {}", i, trace.final_state_digest(i)).unwrap();
        }
        for (node, cert) in &trace.certificates {
            writeln!(
                out,
                "cert {} {} {}",
                node,
                mk_digest(&cert.log),
                cert.sigs.len()
            )
            .unwrap();
        }
    } else {
        writeln!(out, "invalid {}", trace.invalid.as_deref().unwrap()).unwrap();
    }
    out
}

struct ParsedDump {
    cfg: FaultConfig,
    adversary: String,
    seed: u64,
    initial_entries: BTreeMap<NodeId, EntrySet>,
    forges: BTreeMap<u32, ForgedMessages>,
}

fn parse_msg(hex_str: &str, line: usize) -> Result<SimMsg, TraceError> {
    let err = |msg: String| TraceError::Parse { line, msg };
    let bytes = hex::decode(hex_str).map_err(|e| err(format!("bad hex: {e}")))?;
    if bytes.is_empty() {
        return Err(err("empty message".into()));
    }
    match bytes[0] {
        b if b == wire::FrameType::ReplicationBundle as u8 => Ok(SimMsg::Replication(
            wire::decode_bundle(&bytes[1..]).map_err(|e| err(format!("bad bundle: {e}")))?,
        )),
        b if b == wire::FrameType::LogSignature as u8 => Ok(SimMsg::LogSig(
            wire::decode_log_sig_msg(&bytes[1..])
                .map_err(|e| err(format!("bad log signature: {e}")))?,
        )),
        other => Err(err(format!("unknown message tag 0x{other:02x}"))),
    }
}

fn parse_dump(text: &str) -> Result<ParsedDump, TraceError> {
    let mut cfg: Option<FaultConfig> = None;
    let mut adversary = String::new();
    let mut seed = 0u64;
    let mut initial_entries: BTreeMap<NodeId, EntrySet> = BTreeMap::new();
    let mut forges: BTreeMap<u32, ForgedMessages> = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let err = |msg: String| TraceError::Parse { line: line_no, msg };
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap();
        match tag {
            "cfg" => {
                let mut c = FaultConfig::new(0, 0);
                for kv in parts {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| err(format!("bad cfg item {kv:?}")))?;
                    match k {
                        "n" => c.n = v.parse().map_err(|_| err(format!("bad n {v:?}")))?,
                        "f" => c.f = v.parse().map_err(|_| err(format!("bad f {v:?}")))?,
                        "faulty" => {
                            c.faulty = v
                                .split(',')
                                .filter(|s| !s.is_empty())
                                .map(|s| s.parse().map(NodeId))
                                .collect::<Result<_, _>>()
                                .map_err(|_| err(format!("bad faulty list {v:?}")))?;
                        }
                        "mode" => {
                            c.mode = match v {
                                "strict" => BoundMode::Strict,
                                "weak" => BoundMode::Weak,
                                _ => return Err(err(format!("bad mode {v:?}"))),
                            }
                        }
                        "rounds" => {
                            c.replication_rounds =
                                v.parse().map_err(|_| err(format!("bad rounds {v:?}")))?
                        }
                        "closure" => {
                            c.closure = match v {
                                "inclusive" => ClosureMode::Inclusive,
                                "exclusive" => ClosureMode::Exclusive,
                                _ => return Err(err(format!("bad closure {v:?}"))),
                            }
                        }
                        "variant" => {
                            c.variant = variant_from(v)
                                .ok_or_else(|| err(format!("bad variant {v:?}")))?
                        }
                        "period_ms" => {
                            c.period_ms =
                                v.parse().map_err(|_| err(format!("bad period {v:?}")))?
                        }
                        "now_ms" => {
                            c.now_ms = v.parse().map_err(|_| err(format!("bad now {v:?}")))?
                        }
                        other => return Err(err(format!("unknown cfg key {other:?}"))),
                    }
                }
                cfg = Some(c);
            }
            "adversary" => adversary = parts.collect::<Vec<_>>().join(" "),
            "seed" => {
                seed = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err("bad seed".into()))?
            }
            "input" => {
                let node: u16 = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err("bad input node".into()))?;
                let entries = parts.next().unwrap_or("");
                let set: EntrySet = entries
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|h| {
                        hex::decode(h)
                            .map_err(|e| err(format!("bad entry hex: {e}")))
                            .and_then(|b| {
                                Entry::new(b).map_err(|e| err(format!("bad entry: {e}")))
                            })
                    })
                    .collect::<Result<_, _>>()?;
                initial_entries.insert(NodeId(node), set);
            }
            "forge" => {
                let round: u32 = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err("bad forge round".into()))?;
                let from: u16 = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err("bad forge sender".into()))?;
                let to: u16 = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err("bad forge receiver".into()))?;
                let msg = parse_msg(
                    parts.next().ok_or_else(|| err("missing payload".into()))?,
                    line_no,
                )?;
                forges
                    .entry(round)
                    .or_default()
                    .insert((NodeId(from), NodeId(to)), msg);
            }
            // verification records; consumed by the comparison step
            "msg" | "final" | "cert" | "invalid" => {}
            other => return Err(err(format!("unknown record {other:?}"))),
        }
    }

    let cfg = cfg.ok_or(TraceError::Parse {
        line: 0,
        msg: "missing cfg line".into(),
    })?;
    cfg.validate()?;
    Ok(ParsedDump {
        cfg,
        adversary,
        seed,
        initial_entries,
        forges,
    })
}

/// Replays the forged messages of a recorded run verbatim.
struct Scripted {
    name: String,
    forges: BTreeMap<u32, ForgedMessages>,
}

impl Adversary for Scripted {
    fn name(&self) -> &str {
        &self.name
    }

    fn forge(&mut self, round: u32, _ledger: &SentLedger, _ctx: &AdvCtx) -> ForgedMessages {
        self.forges.get(&round).cloned().unwrap_or_default()
    }
}

pub struct ReplayReport {
    pub matches: bool,
    pub divergences: Vec<String>,
    pub verdicts: Vec<Verdict>,
    pub trace: Trace,
}

/// Re-executes a dumped run and verifies it reproduces bit-identically.
pub fn replay(text: &str) -> Result<ReplayReport, TraceError> {
    let parsed = parse_dump(text)?;
    let mut adversary = Scripted {
        name: parsed.adversary.clone(),
        forges: parsed.forges,
    };
    let trace = run_lockstep(
        &parsed.cfg,
        &mut adversary,
        &parsed.initial_entries,
        parsed.seed,
    )?;
    let reproduced = dump_trace(&trace);

    let mut divergences = Vec::new();
    let original: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let new: Vec<&str> = reproduced
        .lines()
        .filter(|l| !l.trim().is_empty())
        .collect();
    for i in 0..original.len().max(new.len()) {
        let a = original.get(i).copied().unwrap_or("<missing>");
        let b = new.get(i).copied().unwrap_or("<missing>");
        if a != b {
            divergences.push(format!("line {}: recorded {a:?}, replayed {b:?}", i + 1));
        }
    }

    let verdicts = if trace.invalid.is_none() {
        check_all(&trace)
    } else {
        Vec::new()
    };
    Ok(ReplayReport {
        matches: divergences.is_empty(),
        divergences,
        verdicts,
        trace,
    })
}

/// Convenience for tests and the CLI: verify a SimMsg hex payload decodes.
pub fn decode_sim_msg_hex(hex_str: &str) -> Result<SimMsg, TraceError> {
    parse_msg(hex_str, 0)
}

