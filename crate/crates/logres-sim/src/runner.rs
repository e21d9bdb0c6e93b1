//! Deterministic lock-step execution of one protocol epoch.
//!
//! Model rounds are 0-based: replication occupies rounds
//! `0..replication_rounds` (protocol round r = model round + 1), the
//! signing phase is the final round. States are snapshotted after every
//! round, giving the sequence s^0 .. s^{f+2} for the standard f+1-round
//! configuration.
//!
//! Correct nodes execute their send functions first; everything they emit
//! is recorded in the ledger. The adversary then picks, per faulty sender
//! and correct receiver, an optional forged message, which must pass the
//! message-closure check against the ledger — a violation marks the run
//! invalid (an adversary bug, not a protocol result). Delivery follows
//! the heard-of semantics: prescribed messages from every sender in
//! SHO(i, r), forged ones from faulty senders.

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest as _, Sha256};

use logres_core::crypto::{keygen_test, KeyPair, NodeId, PublicRegistry};
use logres_core::log::{EntrySet, Log, LogCertificate};
use logres_core::node::{LogSignatureMsg, NodeParams, NodeState};
use logres_core::replicate::ReplicateMsg;

use crate::adversary::{AdvCtx, Adversary};
use crate::config::{BoundMode, ConfigError, FaultConfig};
use crate::ledger::{closure_check, SentLedger, SimMsg};

/// μ vectors of one round: receiver → (sender → message), at most one
/// message per sender.
#[derive(Clone, Debug)]
pub struct RoundDelivery {
    pub round: u32,
    pub delivered: BTreeMap<NodeId, BTreeMap<NodeId, SimMsg>>,
}

/// Complete record of one simulated run.
#[derive(Clone, Debug)]
pub struct Trace {
    pub cfg: FaultConfig,
    pub adversary: String,
    pub seed: u64,
    pub initial_entries: BTreeMap<NodeId, EntrySet>,
    pub reg: PublicRegistry,
    /// Per correct node: states s^0 .. s^{rounds+1}.
    pub states: BTreeMap<NodeId, Vec<NodeState>>,
    pub deliveries: Vec<RoundDelivery>,
    pub ledger: SentLedger,
    pub certificates: BTreeMap<NodeId, LogCertificate>,
    /// Set when the adversary violated a model rule; such a run carries
    /// no verdicts.
    pub invalid: Option<String>,
}

impl Trace {
    pub fn state(&self, node: NodeId, index: usize) -> &NodeState {
        &self.states[&node][index]
    }

    pub fn final_state(&self, node: NodeId) -> &NodeState {
        self.states[&node].last().expect("at least the initial state")
    }

    /// The log a node constructed in the signing phase (the log field of
    /// its final state in the formal model).
    pub fn constructed_log(&self, node: NodeId) -> &Log {
        &self
            .final_state(node)
            .candidate
            .as_ref()
            .expect("signing phase ran")
            .0
    }

    /// Stable digest of a node's final state, used in trace dumps.
    pub fn final_state_digest(&self, node: NodeId) -> String {
        let state = self.final_state(node);
        let mut h = Sha256::new();
        for decided in state.decided.as_deref().unwrap_or(&[]) {
            h.update(decided.encode());
        }
        if let Some((log, digest)) = &state.candidate {
            h.update(log.encode());
            h.update(digest.0);
        }
        h.update((state.sigs.len() as u64).to_be_bytes());
        h.update([state.certificate.is_some() as u8]);
        let out: Vec<u8> = h.finalize().to_vec();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// The lock-step machine, stepped round by round. The exhaustive search
/// clones it at branch points, so everything inside is plain data.
#[derive(Clone)]
pub struct Lockstep {
    pub cfg: FaultConfig,
    pub reg: PublicRegistry,
    pub keys: BTreeMap<NodeId, KeyPair>,
    pub states: BTreeMap<NodeId, NodeState>,
    pub snapshots: BTreeMap<NodeId, Vec<NodeState>>,
    pub deliveries: Vec<RoundDelivery>,
    pub ledger: SentLedger,
    pub initial_entries: BTreeMap<NodeId, EntrySet>,
    /// Next model round to execute.
    pub round: u32,
    /// C_r: nodes contained in every SHO set so far.
    pub c_so_far: BTreeSet<NodeId>,
    pub invalid: Option<String>,
}

impl Lockstep {
    pub fn new(
        cfg: &FaultConfig,
        initial_entries: &BTreeMap<NodeId, EntrySet>,
        seed: u64,
    ) -> Result<Lockstep, ConfigError> {
        cfg.validate()?;
        let key_seed = derive_key_seed(seed);
        let keys: BTreeMap<NodeId, KeyPair> = (0..cfg.n)
            .map(|i| (NodeId(i), keygen_test(&key_seed, NodeId(i))))
            .collect();
        let key_list = keys
            .values()
            .map(|kp| (kp.node, kp.public.clone()))
            .collect();
        let reg = match cfg.mode {
            BoundMode::Strict => PublicRegistry::new(key_list, cfg.f),
            BoundMode::Weak => PublicRegistry::new_weak(key_list, cfg.f),
        }
        .expect("bounds already validated");

        let params = NodeParams {
            n: cfg.n,
            f: cfg.f,
            max_entry_bytes: logres_core::log::DEFAULT_MAX_ENTRY_BYTES,
            replication_rounds: cfg.replication_rounds,
            variant: cfg.variant,
        };
        let genesis = Log::genesis(cfg.period_ms);
        let mut states = BTreeMap::new();
        let mut snapshots = BTreeMap::new();
        for id in cfg.correct() {
            let mut state = NodeState::new(id, params, genesis.clone());
            if let Some(entries) = initial_entries.get(&id) {
                for entry in entries.iter() {
                    state
                        .collect(entry.clone())
                        .expect("initial entries fit the size limit");
                }
            }
            // The collection phase exchanges no messages; s^0 already has
            // the threads initialized and the entries in place.
            state.begin_replication();
            snapshots.insert(id, vec![state.clone()]);
            states.insert(id, state);
        }

        Ok(Lockstep {
            c_so_far: cfg.correct().into_iter().collect(),
            cfg: cfg.clone(),
            reg,
            keys,
            states,
            snapshots,
            deliveries: Vec::new(),
            ledger: SentLedger::new(),
            initial_entries: initial_entries.clone(),
            round: 0,
            invalid: None,
        })
    }

    pub fn is_signing_round(&self) -> bool {
        self.round == self.cfg.signing_round()
    }

    pub fn finished(&self) -> bool {
        self.invalid.is_some() || self.round > self.cfg.signing_round()
    }

    /// Executes the send functions of the current round for all correct
    /// nodes and records everything in the ledger.
    pub fn send_phase(&mut self) {
        let round = self.round;
        let signing = self.is_signing_round();
        let correct = self.cfg.correct();
        for &i in &correct {
            let kp = self.keys[&i].clone();
            let state = self.states.get_mut(&i).expect("correct node state");
            if signing {
                let msg = state.signing_send(&kp, self.cfg.now_ms, self.cfg.period_ms);
                for to in (0..self.cfg.n).map(NodeId) {
                    if to != i {
                        self.ledger.record(
                            round,
                            i,
                            to,
                            &SimMsg::LogSig(msg.clone()),
                            self.cfg.variant,
                        );
                    }
                }
            } else {
                for (to, bundle) in state.replication_send(&kp) {
                    self.ledger
                        .record(round, i, to, &SimMsg::Replication(bundle), self.cfg.variant);
                }
            }
        }
        // C_r: intersect with this round's SHO sets.
        for &i in &correct {
            let sho = self.cfg.sho(i, round);
            self.c_so_far.retain(|j| sho.contains(j));
        }
    }

    /// Validates the adversary's messages, delivers the round's μ vectors
    /// and advances every correct node. A closure violation aborts the run
    /// as invalid.
    pub fn deliver_phase(&mut self, forged: &BTreeMap<(NodeId, NodeId), SimMsg>) {
        let round = self.round;
        for ((from, to), msg) in forged {
            if !self.cfg.is_faulty(*from) {
                self.invalid = Some(format!(
                    "adversary forged a message for correct sender {from}"
                ));
                return;
            }
            if self.cfg.is_faulty(*to) {
                self.invalid = Some(format!("adversary targeted faulty receiver {to}"));
                return;
            }
            if !closure_check(msg, round, &self.ledger, &self.c_so_far, self.cfg.closure) {
                self.invalid = Some(format!(
                    "closure violation in round {round}: {from} -> {to} embeds a never-sent \
                     signature of a non-failed node"
                ));
                return;
            }
        }

        let signing = self.is_signing_round();
        let mut delivery = RoundDelivery {
            round,
            delivered: BTreeMap::new(),
        };
        for &i in &self.cfg.correct() {
            let mut mu: BTreeMap<NodeId, SimMsg> = BTreeMap::new();
            if let Some(round_ledger) = self.ledger.round(round) {
                for j in self.cfg.sho(i, round) {
                    if j == i {
                        continue;
                    }
                    if let Some(msg) = round_ledger.sent.get(&(j, i)) {
                        mu.insert(j, msg.clone());
                    }
                }
            }
            for q in &self.cfg.faulty {
                if let Some(msg) = forged.get(&(*q, i)) {
                    mu.insert(*q, msg.clone());
                }
            }
            delivery.delivered.insert(i, mu);
        }

        for (&i, mu) in &delivery.delivered {
            let kp = self.keys[&i].clone();
            let state = self.states.get_mut(&i).expect("correct node state");
            if signing {
                let inbox: Vec<LogSignatureMsg> = mu
                    .values()
                    .filter_map(|m| match m {
                        SimMsg::LogSig(msg) => Some(msg.clone()),
                        SimMsg::Replication(_) => None, // wrong phase, dropped
                    })
                    .collect();
                let _ = state.signing_next(&inbox, &self.reg);
            } else {
                let inbox: Vec<ReplicateMsg> = mu
                    .values()
                    .filter_map(|m| match m {
                        SimMsg::Replication(bundle) => Some(bundle.clone()),
                        SimMsg::LogSig(_) => None, // wrong phase, dropped
                    })
                    .flatten()
                    .collect();
                let _ = state.replication_next(&inbox, &self.reg, &kp);
            }
            self.snapshots
                .get_mut(&i)
                .expect("snapshot vec")
                .push(state.clone());
        }
        self.deliveries.push(delivery);
        self.round += 1;
    }

    pub fn into_trace(self, adversary: String, seed: u64) -> Trace {
        let certificates = self
            .states
            .iter()
            .filter_map(|(id, s)| s.certificate.clone().map(|c| (*id, c)))
            .collect();
        Trace {
            cfg: self.cfg,
            adversary,
            seed,
            initial_entries: self.initial_entries,
            reg: self.reg,
            states: self.snapshots,
            deliveries: self.deliveries,
            ledger: self.ledger,
            certificates,
            invalid: self.invalid,
        }
    }
}

fn derive_key_seed(seed: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"logres/sim/keys/v1");
    h.update(seed.to_be_bytes());
    h.finalize().into()
}

/// Runs one epoch under the given adversary. Deterministic: identical
/// (cfg, adversary, initial entries, seed) yields a bit-identical trace.
pub fn run_lockstep(
    cfg: &FaultConfig,
    adversary: &mut dyn Adversary,
    initial_entries: &BTreeMap<NodeId, EntrySet>,
    seed: u64,
) -> Result<Trace, ConfigError> {
    let mut ls = Lockstep::new(cfg, initial_entries, seed)?;
    let faulty_keys: BTreeMap<NodeId, KeyPair> = ls
        .keys
        .iter()
        .filter(|(id, _)| cfg.is_faulty(**id))
        .map(|(id, kp)| (*id, kp.clone()))
        .collect();

    while !ls.finished() {
        ls.send_phase();
        let forged = {
            let ctx = AdvCtx {
                cfg: &ls.cfg,
                reg: &ls.reg,
                faulty_keys: &faulty_keys,
                initial_entries: &ls.initial_entries,
                epoch: 1,
            };
            adversary.forge(ls.round, &ls.ledger, &ctx)
        };
        ls.deliver_phase(&forged);
    }
    Ok(ls.into_trace(adversary.name().to_string(), seed))
}
