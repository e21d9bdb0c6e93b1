//! The three-phase protocol driven by one node per epoch: collect entries
//! from clients, run n replicate threads in parallel (one per primary),
//! union the decided values into a new log, then exchange digest
//! signatures until the f+1 quorum is reached and the log is published.
//!
//! `NodeState` is plain data advanced by explicit calls; timers and
//! message transport belong to the caller (the lock-step simulator or the
//! networked runtime), which keeps every transition deterministic and
//! replayable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::crypto::{log_sig_payload, sign, verify, KeyPair, NodeId, PublicRegistry, Signature};
use crate::log::{mk_digest, mk_log, Digest, Entry, EntrySet, Log, LogCertificate};
use crate::replicate::{
    thread_decide, thread_init, thread_next, thread_send, ProtocolVariant, ReplicateMsg,
    ThreadState,
};

/// Static per-deployment parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeParams {
    pub n: u16,
    pub f: u16,
    pub max_entry_bytes: usize,
    /// Number of replicate rounds; f+1 for the real protocol. The
    /// simulator lowers this to f to exhibit the round-optimality bound.
    pub replication_rounds: u32,
    pub variant: ProtocolVariant,
}

impl NodeParams {
    pub fn new(n: u16, f: u16) -> NodeParams {
        NodeParams {
            n,
            f,
            max_entry_bytes: crate::log::DEFAULT_MAX_ENTRY_BYTES,
            replication_rounds: f as u32 + 1,
            variant: ProtocolVariant::FIXED,
        }
    }

    pub fn theta(&self) -> usize {
        self.f as usize + 1
    }
}

/// Phases advance strictly in this order within an epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Collection,
    /// Carries the 1-based replicate round currently being exchanged.
    Replication(u32),
    Signing,
    Published,
}

/// Signing-phase broadcast: one signature over the sender's candidate
/// digest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogSignatureMsg {
    pub epoch: u64,
    pub signer: NodeId,
    pub digest: Digest,
    pub sig: Signature,
}

/// Why an inbound message was dropped. Dropping is routine under
/// Byzantine senders; diagnostics exist for operators and tests.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DropDiag {
    pub sender: NodeId,
    pub reason: &'static str,
}

impl fmt::Display for DropDiag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "dropped message from {}: {}", self.sender, self.reason)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CollectError {
    #[error("entry of {got} bytes exceeds the configured {max}-byte limit")]
    Oversize { got: usize, max: usize },
    #[error("collection phase is over for this epoch")]
    WrongPhase,
}

/// Outcome of one epoch, reported by `end_epoch`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpochOutcome {
    pub epoch: u64,
    pub published: bool,
    /// Entries carried into the next epoch (all of them on a liveness
    /// failure, none after a successful publish).
    pub carried_entries: usize,
}

/// Full protocol state of one node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeState {
    pub id: NodeId,
    pub params: NodeParams,
    /// Protocol-run counter used to tag messages; advances every epoch
    /// whether or not it published, so cross-epoch replays never verify
    /// against the current run.
    pub epoch: u64,
    pub phase: Phase,
    pub threads: BTreeMap<NodeId, ThreadState>,
    /// Entries collected from clients and not yet part of the log.
    pub entries: EntrySet,
    /// The latest published log (the genesis log before any publish).
    pub log: Log,
    /// Candidate log and digest built by `signing_send`.
    pub candidate: Option<(Log, Digest)>,
    /// Valid signatures over the candidate digest, own signature included.
    pub sigs: BTreeMap<NodeId, Signature>,
    /// Decision vector (X_1 … X_n) fixed when replication completes.
    pub decided: Option<Vec<EntrySet>>,
    /// Most recently published certificate, if any.
    pub certificate: Option<LogCertificate>,
}

impl NodeState {
    pub fn new(id: NodeId, params: NodeParams, initial_log: Log) -> NodeState {
        NodeState {
            id,
            params,
            epoch: 1,
            phase: Phase::Collection,
            threads: BTreeMap::new(),
            entries: EntrySet::new(),
            log: initial_log,
            candidate: None,
            sigs: BTreeMap::new(),
            decided: None,
            certificate: None,
        }
    }

    /// Stores a client entry unless it is oversized or already known
    /// (either collected or in the published log). Duplicates are a
    /// successful no-op; returns whether the entry was newly added.
    pub fn collect(&mut self, entry: Entry) -> Result<bool, CollectError> {
        if self.phase != Phase::Collection {
            return Err(CollectError::WrongPhase);
        }
        if entry.len() > self.params.max_entry_bytes {
            return Err(CollectError::Oversize {
                got: entry.len(),
                max: self.params.max_entry_bytes,
            });
        }
        if self.log.entries.contains(&entry) {
            return Ok(false);
        }
        Ok(self.entries.insert(entry))
    }

    /// Ends collection: one replicate thread per primary, this node's
    /// collected entries as its own proposal.
    pub fn begin_replication(&mut self) {
        assert_eq!(self.phase, Phase::Collection, "phase order violated");
        self.threads = (0..self.params.n)
            .map(|p| {
                let primary = NodeId(p);
                (
                    primary,
                    thread_init(self.id, primary, self.entries.clone(), self.params.variant),
                )
            })
            .collect();
        self.phase = Phase::Replication(1);
    }

    pub fn replication_round(&self) -> Option<u32> {
        match self.phase {
            Phase::Replication(r) => Some(r),
            _ => None,
        }
    }

    /// All threads' outgoing messages for the current round, bundled per
    /// recipient into one frame.
    pub fn replication_send(&mut self, kp: &KeyPair) -> BTreeMap<NodeId, Vec<ReplicateMsg>> {
        let round = self
            .replication_round()
            .expect("replication_send outside replication phase");
        let epoch = self.epoch;
        let n = self.params.n;
        let mut per_recipient: BTreeMap<NodeId, Vec<ReplicateMsg>> = BTreeMap::new();
        for thread in self.threads.values_mut() {
            for (recipient, msg) in thread_send(thread, epoch, round, kp, n) {
                per_recipient.entry(recipient).or_default().push(msg);
            }
        }
        per_recipient
    }

    /// Routes each inbound message to the thread matching its primary,
    /// advances all threads through the current round, and on the final
    /// round fixes the decision vector and moves to the signing phase.
    pub fn replication_next(
        &mut self,
        inbox: &[ReplicateMsg],
        reg: &PublicRegistry,
        kp: &KeyPair,
    ) -> Vec<DropDiag> {
        let round = self
            .replication_round()
            .expect("replication_next outside replication phase");
        let mut diags = Vec::new();
        let mut per_thread: BTreeMap<NodeId, Vec<ReplicateMsg>> = BTreeMap::new();
        let mut seen: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
        for msg in inbox {
            let sender = msg.sender;
            if msg.epoch != self.epoch {
                diags.push(DropDiag {
                    sender,
                    reason: "wrong epoch",
                });
                continue;
            }
            if msg.round != round {
                diags.push(DropDiag {
                    sender,
                    reason: "wrong round",
                });
                continue;
            }
            if !self.threads.contains_key(&msg.primary) {
                diags.push(DropDiag {
                    sender,
                    reason: "unknown primary",
                });
                continue;
            }
            // one message per sender and thread per round; extras dropped
            if !seen.insert((sender, msg.primary)) {
                diags.push(DropDiag {
                    sender,
                    reason: "duplicate message in round",
                });
                continue;
            }
            per_thread.entry(msg.primary).or_default().push(msg.clone());
        }

        for (primary, thread) in self.threads.iter_mut() {
            let empty = Vec::new();
            let inbox = per_thread.get(primary).unwrap_or(&empty);
            thread_next(thread, round, inbox, reg, kp);
        }

        if round < self.params.replication_rounds {
            self.phase = Phase::Replication(round + 1);
        } else {
            self.decided = Some(self.threads.values().map(thread_decide).collect());
            self.phase = Phase::Signing;
        }
        diags
    }

    /// The union X of the decision vector; empty until replication ends.
    pub fn decided_union(&self) -> EntrySet {
        self.decided
            .as_deref()
            .unwrap_or(&[])
            .iter()
            .fold(EntrySet::new(), |acc, x| acc.union(x))
    }

    /// Builds the candidate log deterministically from the previous log
    /// and the decided union, signs its digest and returns the broadcast.
    pub fn signing_send(&mut self, kp: &KeyPair, now_ms: u64, period_ms: u64) -> LogSignatureMsg {
        assert_eq!(self.phase, Phase::Signing, "phase order violated");
        let union = self.decided_union();
        let candidate = mk_log(&self.log, &union, period_ms, now_ms);
        let digest = mk_digest(&candidate);
        let sig = sign(kp, &log_sig_payload(&digest));
        self.sigs.insert(self.id, sig.clone());
        self.candidate = Some((candidate, digest));
        LogSignatureMsg {
            epoch: self.epoch,
            signer: self.id,
            digest,
            sig,
        }
    }

    /// Collects matching signatures over the own candidate digest; on
    /// reaching θ = f+1 distinct signers (own included) publishes and
    /// returns the certificate. Signatures over other digests and unknown
    /// or duplicate signers are dropped with a diagnostic.
    pub fn signing_next(
        &mut self,
        inbox: &[LogSignatureMsg],
        reg: &PublicRegistry,
    ) -> (Option<LogCertificate>, Vec<DropDiag>) {
        let mut diags = Vec::new();
        if self.phase == Phase::Published {
            return (None, diags);
        }
        assert_eq!(self.phase, Phase::Signing, "phase order violated");
        let (_, own_digest) = *self.candidate.as_ref().expect("signing_send not called");
        for msg in inbox {
            let sender = msg.signer;
            if msg.epoch != self.epoch {
                diags.push(DropDiag {
                    sender,
                    reason: "wrong epoch",
                });
                continue;
            }
            if msg.digest != own_digest {
                diags.push(DropDiag {
                    sender,
                    reason: "signature over a different digest",
                });
                continue;
            }
            if msg.sig.signer != msg.signer || reg.key(msg.signer).is_none() {
                diags.push(DropDiag {
                    sender,
                    reason: "unknown or mismatched signer",
                });
                continue;
            }
            if self.sigs.contains_key(&msg.signer) {
                diags.push(DropDiag {
                    sender,
                    reason: "duplicate signer",
                });
                continue;
            }
            if !verify(reg, &msg.sig, &log_sig_payload(&own_digest)) {
                diags.push(DropDiag {
                    sender,
                    reason: "invalid signature",
                });
                continue;
            }
            self.sigs.insert(msg.signer, msg.sig.clone());
        }

        if self.sigs.len() >= self.params.theta() {
            let (log, _) = self.candidate.clone().expect("candidate exists");
            let cert = LogCertificate {
                log: log.clone(),
                sigs: self.sigs.values().cloned().collect(),
            };
            self.log = log;
            self.certificate = Some(cert.clone());
            self.phase = Phase::Published;
            (Some(cert), diags)
        } else {
            (None, diags)
        }
    }

    /// Closes the epoch. After a publish the logged entries leave the
    /// collection buffer; after a liveness failure everything is carried
    /// over so client intent survives. Either way the node is ready for
    /// the next collection phase.
    pub fn end_epoch(&mut self) -> EpochOutcome {
        let published = self.phase == Phase::Published;
        if published {
            self.entries = self.entries.difference(&self.log.entries);
        }
        let outcome = EpochOutcome {
            epoch: self.epoch,
            published,
            carried_entries: self.entries.len(),
        };
        self.epoch += 1;
        self.phase = Phase::Collection;
        self.threads.clear();
        self.sigs.clear();
        self.candidate = None;
        self.decided = None;
        outcome
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::keygen_test;

    fn e(s: &str) -> Entry {
        Entry::new(s.as_bytes().to_vec()).unwrap()
    }

    fn set(items: &[&str]) -> EntrySet {
        items.iter().map(|s| e(s)).collect()
    }

    struct Cluster {
        kps: Vec<KeyPair>,
        reg: PublicRegistry,
        nodes: Vec<NodeState>,
    }

    fn cluster(n: u16, f: u16) -> Cluster {
        let kps: Vec<KeyPair> = (0..n).map(|i| keygen_test(&[5u8; 32], NodeId(i))).collect();
        let reg = PublicRegistry::new(
            kps.iter().map(|kp| (kp.node, kp.public.clone())).collect(),
            f,
        )
        .unwrap();
        let nodes = (0..n)
            .map(|i| NodeState::new(NodeId(i), NodeParams::new(n, f), Log::genesis(60_000)))
            .collect();
        Cluster { kps, reg, nodes }
    }

    /// Drives a full epoch in lock step. `silent` nodes crash: their
    /// messages are never delivered.
    fn run_epoch(c: &mut Cluster, silent: &[u16]) {
        let n = c.nodes.len();
        let rounds = c.nodes[0].params.replication_rounds;
        for node in c.nodes.iter_mut() {
            node.begin_replication();
        }
        for _round in 1..=rounds {
            let mut outboxes: Vec<BTreeMap<NodeId, Vec<ReplicateMsg>>> = Vec::new();
            for (i, node) in c.nodes.iter_mut().enumerate() {
                if silent.contains(&(i as u16)) {
                    outboxes.push(BTreeMap::new());
                } else {
                    outboxes.push(node.replication_send(&c.kps[i]));
                }
            }
            for i in 0..n {
                let inbox: Vec<ReplicateMsg> = outboxes
                    .iter()
                    .flat_map(|out| out.get(&NodeId(i as u16)).cloned().unwrap_or_default())
                    .collect();
                let diags = c.nodes[i].replication_next(&inbox, &c.reg, &c.kps[i]);
                assert!(diags.is_empty(), "unexpected drops: {diags:?}");
            }
        }
        let sig_msgs: Vec<LogSignatureMsg> = c
            .nodes
            .iter_mut()
            .enumerate()
            .map(|(i, node)| node.signing_send(&c.kps[i], 1_000, 60_000))
            .collect();
        for i in 0..n {
            if silent.contains(&(i as u16)) {
                continue;
            }
            let inbox: Vec<LogSignatureMsg> = sig_msgs
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i && !silent.contains(&(*j as u16)))
                .map(|(_, m)| m.clone())
                .collect();
            c.nodes[i].signing_next(&inbox, &c.reg);
        }
    }

    #[test]
    fn normal_case_publishes_identical_certificates() {
        let mut c = cluster(5, 2);
        let inputs = ["a", "b", "c", "d", "e"];
        for (i, s) in inputs.iter().enumerate() {
            assert_eq!(c.nodes[i].collect(e(s)), Ok(true));
            // duplicate is a no-op
            assert_eq!(c.nodes[i].collect(e(s)), Ok(false));
        }
        run_epoch(&mut c, &[]);

        let expected = set(&inputs);
        let first = c.nodes[0].certificate.clone().expect("node 0 published");
        for node in &c.nodes {
            let cert = node.certificate.as_ref().expect("published");
            assert_eq!(*cert, first, "certificates must be bit-identical");
            assert_eq!(cert.log.entries, expected);
            assert_eq!(cert.log.epoch, 1);
            assert!(cert.sigs.len() >= 3);
            assert_eq!(
                crate::log::validate_certificate(cert, &c.reg, 2_000),
                Ok(())
            );
        }

        // IC at the replication boundary: equal vectors, slot i = input i
        let v0 = c.nodes[0].decided.clone().unwrap();
        for node in &c.nodes {
            assert_eq!(node.decided.as_ref().unwrap(), &v0);
        }
        for (i, s) in inputs.iter().enumerate() {
            assert_eq!(v0[i], set(&[s]));
        }
    }

    #[test]
    fn normal_case_round_three_is_silent() {
        let mut c = cluster(5, 2);
        for i in 0..5 {
            c.nodes[i].collect(e(["a", "b", "c", "d", "e"][i])).unwrap();
        }
        for node in c.nodes.iter_mut() {
            node.begin_replication();
        }
        for round in 1..=3u32 {
            let mut outboxes = Vec::new();
            for (i, node) in c.nodes.iter_mut().enumerate() {
                let out = node.replication_send(&c.kps[i]);
                if round == 3 {
                    assert!(out.is_empty(), "round 3 must be silent in the normal case");
                }
                outboxes.push(out);
            }
            for i in 0..5 {
                let inbox: Vec<ReplicateMsg> = outboxes
                    .iter()
                    .flat_map(|out: &BTreeMap<NodeId, Vec<ReplicateMsg>>| {
                        out.get(&NodeId(i as u16)).cloned().unwrap_or_default()
                    })
                    .collect();
                c.nodes[i].replication_next(&inbox, &c.reg, &c.kps[i]);
            }
        }
    }

    #[test]
    fn crashed_primary_contributes_nothing() {
        let mut c = cluster(5, 2);
        for (i, s) in ["a", "b", "c", "d", "e"].iter().enumerate() {
            c.nodes[i].collect(e(s)).unwrap();
        }
        run_epoch(&mut c, &[4]);

        // the silent node's slot decides ∅ everywhere; the union misses "e"
        let expected = set(&["a", "b", "c", "d"]);
        for i in 0..4 {
            let cert = c.nodes[i].certificate.as_ref().expect("published");
            assert_eq!(cert.log.entries, expected);
            assert!(c.nodes[i].decided.as_ref().unwrap()[4].is_empty());
        }
    }

    #[test]
    fn collect_rules() {
        let mut c = cluster(3, 1);
        let node = &mut c.nodes[0];
        // oversize rejected
        let big = Entry::new(vec![0u8; node.params.max_entry_bytes + 1]).unwrap();
        assert!(matches!(
            node.collect(big),
            Err(CollectError::Oversize { .. })
        ));
        // entry already in the published log is a no-op
        node.log = mk_log(&Log::genesis(1_000), &set(&["old"]), 60_000, 0);
        assert_eq!(node.collect(e("old")), Ok(false));
        assert!(node.entries.is_empty());
        // collection closes with the phase
        node.collect(e("new")).unwrap();
        node.begin_replication();
        assert_eq!(node.collect(e("late")), Err(CollectError::WrongPhase));
    }

    #[test]
    fn begin_replication_spawns_one_thread_per_primary() {
        let mut c = cluster(5, 2);
        c.nodes[2].collect(e("z")).unwrap();
        c.nodes[2].begin_replication();
        let node = &c.nodes[2];
        assert_eq!(node.threads.len(), 5);
        let primaries: Vec<u16> = node
            .threads
            .iter()
            .filter(|(_, t)| t.role == crate::replicate::Role::Primary)
            .map(|(p, _)| p.0)
            .collect();
        assert_eq!(primaries, vec![2]);

        // empty input still runs: all threads initialized
        let mut empty_node = NodeState::new(NodeId(0), NodeParams::new(3, 1), Log::genesis(1_000));
        empty_node.begin_replication();
        assert_eq!(empty_node.threads.len(), 3);
    }

    #[test]
    fn replication_next_drops_foreign_messages() {
        let mut c = cluster(3, 1);
        for node in c.nodes.iter_mut() {
            node.begin_replication();
        }
        let out = c.nodes[0].replication_send(&c.kps[0]);
        let mut msgs = out.get(&NodeId(1)).cloned().unwrap_or_default();
        assert_eq!(msgs.len(), 1);

        let mut wrong_epoch = msgs[0].clone();
        wrong_epoch.epoch = 99;
        let mut wrong_round = msgs[0].clone();
        wrong_round.round = 2;
        let mut unknown_primary = msgs[0].clone();
        unknown_primary.primary = NodeId(9);
        let duplicate = msgs[0].clone();
        msgs.extend([wrong_epoch, wrong_round, unknown_primary, duplicate]);

        let diags = c.nodes[1].replication_next(&msgs, &c.reg, &c.kps[1]);
        let reasons: Vec<&str> = diags.iter().map(|d| d.reason).collect();
        assert_eq!(
            reasons,
            vec![
                "wrong epoch",
                "wrong round",
                "unknown primary",
                "duplicate message in round"
            ]
        );
        // the one good message still landed
        assert_eq!(
            c.nodes[1].threads[&NodeId(0)].decision,
            c.nodes[0].entries
        );
    }

    #[test]
    fn signing_quorum_and_mismatched_digests() {
        let mut c = cluster(5, 2);
        for (i, s) in ["a", "b", "c", "d", "e"].iter().enumerate() {
            c.nodes[i].collect(e(s)).unwrap();
        }
        for node in c.nodes.iter_mut() {
            node.begin_replication();
        }
        // replication with no deliveries at all: every thread decides ∅,
        // except each node's own primary thread which returns its input.
        for _round in 1..=3 {
            for i in 0..5 {
                let _ = c.nodes[i].replication_send(&c.kps[i]);
                c.nodes[i].replication_next(&[], &c.reg, &c.kps[i]);
            }
        }
        let msgs: Vec<LogSignatureMsg> = c
            .nodes
            .iter_mut()
            .enumerate()
            .map(|(i, n)| n.signing_send(&c.kps[i], 1_000, 60_000))
            .collect();
        // nodes disagree on the union (each only has its own entries), so
        // every foreign signature is over a different digest
        let (cert, diags) = c.nodes[0].signing_next(&msgs[1..], &c.reg);
        assert!(cert.is_none());
        assert!(diags
            .iter()
            .all(|d| d.reason == "signature over a different digest"));
        assert_eq!(c.nodes[0].sigs.len(), 1); // own signature only
    }

    #[test]
    fn epoch_carry_over_after_liveness_failure() {
        let mut c = cluster(3, 1);
        c.nodes[0].collect(e("kept")).unwrap();
        c.nodes[0].begin_replication();
        for _ in 1..=2 {
            let _ = c.nodes[0].replication_send(&c.kps[0]);
            c.nodes[0].replication_next(&[], &c.reg, &c.kps[0]);
        }
        c.nodes[0].signing_send(&c.kps[0], 1_000, 60_000);
        // no peer signatures arrive: below θ, nothing published
        let (cert, _) = c.nodes[0].signing_next(&[], &c.reg);
        assert!(cert.is_none());

        let outcome = c.nodes[0].end_epoch();
        assert_eq!(
            outcome,
            EpochOutcome {
                epoch: 1,
                published: false,
                carried_entries: 1
            }
        );
        assert_eq!(c.nodes[0].epoch, 2);
        assert_eq!(c.nodes[0].phase, Phase::Collection);
        assert!(c.nodes[0].entries.contains(&e("kept")));
        assert_eq!(c.nodes[0].log.epoch, 0, "log did not advance");
    }
}
