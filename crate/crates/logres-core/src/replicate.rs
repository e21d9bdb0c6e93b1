//! The per-primary replicate thread: a pure round-based state machine.
//!
//! Each node participates in n parallel threads, one per primary. In a
//! thread, only the primary proposes: it broadcasts its signed input in
//! round 1 and is done. Responders accumulate *witnessed values* — a value
//! set signed by the primary plus every node that has seen it — and apply
//! two filters when a round's messages come in:
//!
//! * the primary must be among the witnesses (only the primary proposes),
//! * a value arriving in round r needs at least r witnesses, so a value
//!   smuggled in during the last of the f+1 rounds carries f+1 signatures
//!   and hence the endorsement of at least one correct node.
//!
//! A responder seeing its first value adopts it as its decision; seeing a
//! second distinct value is proof of primary equivocation and drops the
//! decision to the empty set for good. Every newly accepted value is
//! re-sent to the other responders with the responder's own signature
//! appended, which is what propagates knowledge fast enough for agreement.
//!
//! The state machine is deterministic: a fixed inbox sequence yields a
//! bit-identical state, which the simulator relies on for replayable
//! traces.

use std::collections::{BTreeMap, BTreeSet};

use crate::crypto::{
    sign, verify, vote_payload, vote_payload_unbound, KeyPair, NodeId, PublicRegistry, Signature,
};
use crate::log::EntrySet;

/// Protocol variant knobs. The default is the fixed protocol; the two
/// weakened variants reproduce the historical flaws for regression
/// attacks and exist only for the simulator.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ProtocolVariant {
    /// Bind vote signatures to the thread's primary. Disabling this
    /// re-opens the cross-thread signature replay attack.
    pub bind_primary: bool,
    /// Responders exit the thread as soon as they hold a nonempty
    /// decision instead of processing all f+1 rounds. Enabling this
    /// re-opens the premature-exit attack. The exiting responder still
    /// multicasts the forward set built in its final round, mirroring
    /// a return placed after the multicast.
    pub early_return: bool,
}

impl ProtocolVariant {
    pub const FIXED: ProtocolVariant = ProtocolVariant {
        bind_primary: true,
        early_return: false,
    };
    pub const UNBOUND_SIGNATURES: ProtocolVariant = ProtocolVariant {
        bind_primary: false,
        early_return: false,
    };
    pub const EARLY_RETURN: ProtocolVariant = ProtocolVariant {
        bind_primary: true,
        early_return: true,
    };
}

impl Default for ProtocolVariant {
    fn default() -> Self {
        ProtocolVariant::FIXED
    }
}

/// The vote payload under the active variant.
pub fn variant_vote_payload(
    variant: ProtocolVariant,
    value: &EntrySet,
    primary: NodeId,
) -> Vec<u8> {
    if variant.bind_primary {
        vote_payload(value, primary)
    } else {
        vote_payload_unbound(value)
    }
}

/// A value set bound to its proposing primary together with the witness
/// signatures collected so far, the ⟨x,p⟩_W term.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct WitnessedValue {
    pub value: EntrySet,
    pub primary: NodeId,
    pub witnesses: BTreeMap<NodeId, Signature>,
}

impl WitnessedValue {
    pub fn witness_count(&self) -> usize {
        self.witnesses.len()
    }

    /// Encoding of the witness set alone (count, then id/signature pairs
    /// in ascending id order); the deterministic representative pick
    /// compares these bytes.
    pub fn encode_witnesses(&self) -> Vec<u8> {
        let mut out = Vec::new();
        crate::codec::put_u16(&mut out, self.witnesses.len() as u16);
        for (id, sig) in &self.witnesses {
            crate::codec::put_u16(&mut out, id.0);
            crate::codec::put_u16(&mut out, sig.bytes().len() as u16);
            out.extend_from_slice(sig.bytes());
        }
        out
    }
}

/// One round's message within a single replicate thread: a (possibly
/// empty) set of witnessed values, all for the same primary.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ReplicateMsg {
    pub sender: NodeId,
    pub epoch: u64,
    /// 1-based round within the replicate phase.
    pub round: u32,
    pub primary: NodeId,
    pub values: Vec<WitnessedValue>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Role {
    Primary,
    Responder,
}

/// Per-(node, primary) replicate state: the decision d, the witnessed
/// value sets P, the votes accepted in the current round and the forward
/// set awaiting multicast.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ThreadState {
    pub role: Role,
    pub primary: NodeId,
    /// The node's proposal; meaningful for the primary role only.
    pub input: EntrySet,
    /// Current decision d. Defaults to the empty set.
    pub decision: EntrySet,
    /// P: every value set witnessed from this primary so far. Grows
    /// monotonically.
    pub witnessed: BTreeSet<EntrySet>,
    /// M': the witnessed values accepted in the most recently processed
    /// round, with merged witness sets.
    pub round_votes: Vec<WitnessedValue>,
    /// S: forward set built in the last processed round, consumed by the
    /// next `thread_send`.
    pub pending: Vec<WitnessedValue>,
    /// Early-return variant only: the thread has exited and ignores
    /// further rounds.
    pub returned: bool,
    variant: ProtocolVariant,
}

/// Creates the state for node `node` in the thread led by `primary`.
/// `input` is the node's own proposal, used only when it is the primary.
pub fn thread_init(
    node: NodeId,
    primary: NodeId,
    input: EntrySet,
    variant: ProtocolVariant,
) -> ThreadState {
    let role = if node == primary {
        Role::Primary
    } else {
        Role::Responder
    };
    ThreadState {
        role,
        primary,
        input: match role {
            Role::Primary => input,
            Role::Responder => EntrySet::new(),
        },
        decision: EntrySet::new(),
        witnessed: BTreeSet::new(),
        round_votes: Vec::new(),
        pending: Vec::new(),
        returned: false,
        variant,
    }
}

/// Messages this thread emits at the start of round `round`.
///
/// The primary broadcasts its signed input to all other nodes in round 1
/// and stays silent afterwards. A responder multicasts the forward set
/// built in the previous round to every other responder; an empty forward
/// set means no message at all.
pub fn thread_send(
    state: &mut ThreadState,
    epoch: u64,
    round: u32,
    kp: &KeyPair,
    n: u16,
) -> Vec<(NodeId, ReplicateMsg)> {
    let mut out = Vec::new();
    match state.role {
        Role::Primary => {
            if round == 1 {
                let payload = variant_vote_payload(state.variant, &state.input, state.primary);
                let mut witnesses = BTreeMap::new();
                witnesses.insert(kp.node, sign(kp, &payload));
                let value = WitnessedValue {
                    value: state.input.clone(),
                    primary: state.primary,
                    witnesses,
                };
                for id in 0..n {
                    let recipient = NodeId(id);
                    if recipient == kp.node {
                        continue;
                    }
                    out.push((
                        recipient,
                        ReplicateMsg {
                            sender: kp.node,
                            epoch,
                            round,
                            primary: state.primary,
                            values: vec![value.clone()],
                        },
                    ));
                }
            }
        }
        Role::Responder => {
            let forwards = std::mem::take(&mut state.pending);
            if !forwards.is_empty() {
                for id in 0..n {
                    let recipient = NodeId(id);
                    if recipient == kp.node || recipient == state.primary {
                        continue;
                    }
                    out.push((
                        recipient,
                        ReplicateMsg {
                            sender: kp.node,
                            epoch,
                            round,
                            primary: state.primary,
                            values: forwards.clone(),
                        },
                    ));
                }
            }
        }
    }
    out
}

/// Advances a responder thread through round `round` with the given inbox.
///
/// Witness signatures are verified individually and invalid ones dropped;
/// witness sets for the same value are merged before the `|W| >= round`
/// check. Wrong-primary and under-witnessed values are silently discarded:
/// Byzantine input is expected, never fatal. Newly accepted values adjust
/// the decision and are queued for forwarding with this node's signature
/// appended.
pub fn thread_next(
    state: &mut ThreadState,
    round: u32,
    inbox: &[ReplicateMsg],
    reg: &PublicRegistry,
    kp: &KeyPair,
) {
    if state.role == Role::Primary {
        // The primary is logically done after its round-1 broadcast; it
        // ignores responder traffic.
        return;
    }
    if state.returned {
        return;
    }
    state.round_votes.clear();

    // Per distinct value: merged verified witnesses, plus each received
    // witness set that already passes the filters on its own.
    let mut merged: BTreeMap<EntrySet, BTreeMap<NodeId, Signature>> = BTreeMap::new();
    let mut passing_received: BTreeMap<EntrySet, Vec<BTreeMap<NodeId, Signature>>> =
        BTreeMap::new();
    for msg in inbox {
        if msg.primary != state.primary {
            continue;
        }
        for wv in &msg.values {
            if wv.primary != state.primary {
                continue;
            }
            let payload = variant_vote_payload(state.variant, &wv.value, state.primary);
            let valid: BTreeMap<NodeId, Signature> = wv
                .witnesses
                .iter()
                .filter(|(id, sig)| sig.signer == **id && verify(reg, sig, &payload))
                .map(|(id, sig)| (*id, sig.clone()))
                .collect();
            if valid.is_empty() {
                continue;
            }
            if valid.contains_key(&state.primary) && valid.len() >= round as usize {
                passing_received
                    .entry(wv.value.clone())
                    .or_default()
                    .push(valid.clone());
            }
            merged.entry(wv.value.clone()).or_default().extend(valid);
        }
    }

    // M': values whose merged witness set clears both filters.
    let accepted: BTreeMap<EntrySet, BTreeMap<NodeId, Signature>> = merged
        .into_iter()
        .filter(|(_, w)| w.contains_key(&state.primary) && w.len() >= round as usize)
        .collect();

    let newly: Vec<EntrySet> = accepted
        .keys()
        .filter(|v| !state.witnessed.contains(*v))
        .cloned()
        .collect();

    if !newly.is_empty() {
        // |P ∪ P'| = 1 means the single new value is the only one ever
        // witnessed; anything else is proof of equivocation.
        if state.witnessed.len() + newly.len() == 1 {
            state.decision = newly[0].clone();
        } else {
            state.decision = EntrySet::new();
        }

        for value in &newly {
            // Representative to forward: among the witness sets that pass
            // the filters (each received one and the merged union), pick
            // the lexicographically smallest encoding. Then testify by
            // adding our own signature.
            let mut candidates = passing_received.remove(value).unwrap_or_default();
            candidates.push(accepted[value].clone());
            let mut best: Option<(Vec<u8>, BTreeMap<NodeId, Signature>)> = None;
            for cand in candidates {
                let wv = WitnessedValue {
                    value: value.clone(),
                    primary: state.primary,
                    witnesses: cand.clone(),
                };
                let enc = wv.encode_witnesses();
                if best.as_ref().map_or(true, |(b, _)| enc < *b) {
                    best = Some((enc, cand));
                }
            }
            let mut witnesses = best.expect("at least the merged set passes").1;
            let payload = variant_vote_payload(state.variant, value, state.primary);
            witnesses.insert(kp.node, sign(kp, &payload));
            state.pending.push(WitnessedValue {
                value: value.clone(),
                primary: state.primary,
                witnesses,
            });
        }

        if state.variant.early_return && !state.decision.is_empty() {
            state.returned = true;
        }
    }

    state.round_votes = accepted
        .iter()
        .map(|(value, witnesses)| WitnessedValue {
            value: value.clone(),
            primary: state.primary,
            witnesses: witnesses.clone(),
        })
        .collect();
    state.witnessed.extend(accepted.into_keys());
}

/// The thread's return value once all rounds have been processed: the
/// primary returns its own input, a responder its decision.
pub fn thread_decide(state: &ThreadState) -> EntrySet {
    match state.role {
        Role::Primary => state.input.clone(),
        Role::Responder => state.decision.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::keygen_test;
    use crate::log::Entry;

    fn set(items: &[&str]) -> EntrySet {
        items
            .iter()
            .map(|s| Entry::new(s.as_bytes().to_vec()).unwrap())
            .collect()
    }

    struct Net {
        kps: Vec<KeyPair>,
        reg: PublicRegistry,
    }

    fn net(n: u16, f: u16) -> Net {
        let kps: Vec<KeyPair> = (0..n).map(|i| keygen_test(&[9u8; 32], NodeId(i))).collect();
        let reg = PublicRegistry::new(
            kps.iter().map(|kp| (kp.node, kp.public.clone())).collect(),
            f,
        )
        .unwrap();
        Net { kps, reg }
    }

    fn wv(net: &Net, value: &EntrySet, primary: NodeId, witnesses: &[u16]) -> WitnessedValue {
        let payload = vote_payload(value, primary);
        WitnessedValue {
            value: value.clone(),
            primary,
            witnesses: witnesses
                .iter()
                .map(|&w| (NodeId(w), sign(&net.kps[w as usize], &payload)))
                .collect(),
        }
    }

    fn msg(sender: u16, round: u32, primary: NodeId, values: Vec<WitnessedValue>) -> ReplicateMsg {
        ReplicateMsg {
            sender: NodeId(sender),
            epoch: 1,
            round,
            primary,
            values,
        }
    }

    #[test]
    fn init_roles() {
        let x = set(&["a"]);
        let st = thread_init(NodeId(0), NodeId(0), x.clone(), ProtocolVariant::FIXED);
        assert_eq!(st.role, Role::Primary);
        assert_eq!(st.input, x);

        let st = thread_init(NodeId(1), NodeId(0), x, ProtocolVariant::FIXED);
        assert_eq!(st.role, Role::Responder);
        assert!(st.decision.is_empty());
        assert!(st.witnessed.is_empty());
        // a responder takes no input value in this thread
        assert!(st.input.is_empty());
    }

    #[test]
    fn primary_broadcasts_once() {
        let n = net(5, 2);
        let mut st = thread_init(NodeId(0), NodeId(0), set(&["x"]), ProtocolVariant::FIXED);
        let sends = thread_send(&mut st, 1, 1, &n.kps[0], 5);
        assert_eq!(sends.len(), 4);
        for (recipient, m) in &sends {
            assert_ne!(*recipient, NodeId(0));
            assert_eq!(m.values.len(), 1);
            assert_eq!(m.values[0].witnesses.len(), 1);
            assert!(m.values[0].witnesses.contains_key(&NodeId(0)));
            assert_eq!(m.values[0].value, set(&["x"]));
        }
        // all recipients get the identical message body
        assert!(sends.windows(2).all(|w| w[0].1.values == w[1].1.values));
        // nothing in later rounds
        assert!(thread_send(&mut st, 1, 2, &n.kps[0], 5).is_empty());
    }

    #[test]
    fn responder_accepts_and_forwards() {
        let n = net(5, 2);
        let mut st = thread_init(NodeId(1), NodeId(0), EntrySet::new(), ProtocolVariant::FIXED);
        let x = set(&["x"]);
        let inbox = vec![msg(0, 1, NodeId(0), vec![wv(&n, &x, NodeId(0), &[0])])];
        thread_next(&mut st, 1, &inbox, &n.reg, &n.kps[1]);
        assert_eq!(st.decision, x);
        assert!(st.witnessed.contains(&x));

        // round 2: forwards ⟨{x},p⟩_{p,i} to the other responders only
        let sends = thread_send(&mut st, 1, 2, &n.kps[1], 5);
        let recipients: Vec<u16> = sends.iter().map(|(r, _)| r.0).collect();
        assert_eq!(recipients, vec![2, 3, 4]);
        for (_, m) in &sends {
            assert_eq!(m.values.len(), 1);
            let w: Vec<u16> = m.values[0].witnesses.keys().map(|k| k.0).collect();
            assert_eq!(w, vec![0, 1]);
        }
        // forward set is consumed
        assert!(thread_send(&mut st, 1, 3, &n.kps[1], 5).is_empty());
    }

    #[test]
    fn under_witnessed_value_dropped_in_last_round() {
        let n = net(5, 2);
        let mut st = thread_init(NodeId(1), NodeId(0), EntrySet::new(), ProtocolVariant::FIXED);
        let x = set(&["x"]);
        // round 3 (= f+1) requires 3 witnesses; 2 are not enough
        let inbox = vec![msg(0, 3, NodeId(0), vec![wv(&n, &x, NodeId(0), &[0, 2])])];
        let before = st.clone();
        thread_next(&mut st, 3, &inbox, &n.reg, &n.kps[1]);
        assert_eq!(st, before);

        // 3 witnesses pass
        let inbox = vec![msg(0, 3, NodeId(0), vec![wv(&n, &x, NodeId(0), &[0, 2, 3])])];
        thread_next(&mut st, 3, &inbox, &n.reg, &n.kps[1]);
        assert_eq!(st.decision, x);
    }

    #[test]
    fn equivocation_clears_decision_but_still_forwards() {
        let n = net(5, 2);
        let mut st = thread_init(NodeId(1), NodeId(0), EntrySet::new(), ProtocolVariant::FIXED);
        let x = set(&["x"]);
        let y = set(&["y"]);
        thread_next(
            &mut st,
            1,
            &[msg(0, 1, NodeId(0), vec![wv(&n, &x, NodeId(0), &[0])])],
            &n.reg,
            &n.kps[1],
        );
        assert_eq!(st.decision, x);
        let _ = thread_send(&mut st, 1, 2, &n.kps[1], 5);

        // second value in round 2: decision drops to ∅, y still forwarded
        thread_next(
            &mut st,
            2,
            &[msg(2, 2, NodeId(0), vec![wv(&n, &y, NodeId(0), &[0, 2])])],
            &n.reg,
            &n.kps[1],
        );
        assert!(st.decision.is_empty());
        let sends = thread_send(&mut st, 1, 3, &n.kps[1], 5);
        assert!(!sends.is_empty());
        assert_eq!(sends[0].1.values[0].value, y);
        let w: Vec<u16> = sends[0].1.values[0].witnesses.keys().map(|k| k.0).collect();
        assert_eq!(w, vec![0, 1, 2]);

        // decision stays ∅ even if yet another single new value shows up
        let z = set(&["z"]);
        thread_next(
            &mut st,
            3,
            &[msg(3, 3, NodeId(0), vec![wv(&n, &z, NodeId(0), &[0, 2, 3])])],
            &n.reg,
            &n.kps[1],
        );
        assert!(st.decision.is_empty());
    }

    #[test]
    fn empty_inbox_is_a_noop() {
        let n = net(5, 2);
        let mut st = thread_init(NodeId(1), NodeId(0), EntrySet::new(), ProtocolVariant::FIXED);
        let before = st.clone();
        thread_next(&mut st, 1, &[], &n.reg, &n.kps[1]);
        assert_eq!(st, before);
        assert!(thread_send(&mut st, 1, 2, &n.kps[1], 5).is_empty());
    }

    #[test]
    fn invalid_signatures_and_wrong_primary_dropped() {
        let n = net(5, 2);
        let mut st = thread_init(NodeId(1), NodeId(0), EntrySet::new(), ProtocolVariant::FIXED);
        let x = set(&["x"]);

        // witness signature by node 2 presented under node 3's id
        let payload = vote_payload(&x, NodeId(0));
        let mut bad = wv(&n, &x, NodeId(0), &[0]);
        bad.witnesses.insert(
            NodeId(3),
            Signature::from_parts(NodeId(3), sign(&n.kps[2], &payload).bytes().to_vec()),
        );
        // round 2 needs 2 valid witnesses; only the primary's is valid
        thread_next(&mut st, 2, &[msg(0, 2, NodeId(0), vec![bad])], &n.reg, &n.kps[1]);
        assert!(st.witnessed.is_empty());

        // value claiming a different primary is ignored outright
        let other = wv(&n, &x, NodeId(2), &[2]);
        thread_next(&mut st, 1, &[msg(2, 1, NodeId(0), vec![other])], &n.reg, &n.kps[1]);
        assert!(st.witnessed.is_empty());

        // a value not signed by the primary is ignored even with enough witnesses
        let unsigned = wv(&n, &x, NodeId(0), &[2, 3]);
        thread_next(&mut st, 2, &[msg(2, 2, NodeId(0), vec![unsigned])], &n.reg, &n.kps[1]);
        assert!(st.witnessed.is_empty());
    }

    #[test]
    fn witness_sets_merge_before_threshold_check() {
        let n = net(5, 2);
        let mut st = thread_init(NodeId(1), NodeId(0), EntrySet::new(), ProtocolVariant::FIXED);
        let x = set(&["x"]);
        // two messages each carrying one witness; individually below the
        // round-2 threshold, together they clear it
        let inbox = vec![
            msg(0, 2, NodeId(0), vec![wv(&n, &x, NodeId(0), &[0])]),
            msg(2, 2, NodeId(0), vec![wv(&n, &x, NodeId(0), &[2])]),
        ];
        thread_next(&mut st, 2, &inbox, &n.reg, &n.kps[1]);
        assert_eq!(st.decision, x);
        assert_eq!(st.round_votes.len(), 1);
        assert_eq!(st.round_votes[0].witness_count(), 2);
    }

    #[test]
    fn decide_returns_input_for_primary_and_d_for_responder() {
        let x = set(&["x"]);
        let st = thread_init(NodeId(0), NodeId(0), x.clone(), ProtocolVariant::FIXED);
        assert_eq!(thread_decide(&st), x);

        let st = thread_init(NodeId(1), NodeId(0), x, ProtocolVariant::FIXED);
        assert!(thread_decide(&st).is_empty());
    }

    /// Exhaustive two-round hand trace: n=3, f=1, the primary equivocates
    /// between the two responders; both converge on ∅.
    #[test]
    fn equivocating_primary_converges_to_empty() {
        let n = net(3, 1);
        let x = set(&["x"]);
        let y = set(&["y"]);
        let p = NodeId(0);
        let mut r1 = thread_init(NodeId(1), p, EntrySet::new(), ProtocolVariant::FIXED);
        let mut r2 = thread_init(NodeId(2), p, EntrySet::new(), ProtocolVariant::FIXED);

        // round 1: primary sends x to node 1 and y to node 2
        thread_next(&mut r1, 1, &[msg(0, 1, p, vec![wv(&n, &x, p, &[0])])], &n.reg, &n.kps[1]);
        thread_next(&mut r2, 1, &[msg(0, 1, p, vec![wv(&n, &y, p, &[0])])], &n.reg, &n.kps[2]);
        assert_eq!(r1.decision, x);
        assert_eq!(r2.decision, y);

        // round 2: responders exchange their forward sets
        let s1 = thread_send(&mut r1, 1, 2, &n.kps[1], 3);
        let s2 = thread_send(&mut r2, 1, 2, &n.kps[2], 3);
        assert_eq!(s1.len(), 1); // only the other responder
        assert_eq!(s2.len(), 1);
        thread_next(&mut r1, 2, &[s2[0].1.clone()], &n.reg, &n.kps[1]);
        thread_next(&mut r2, 2, &[s1[0].1.clone()], &n.reg, &n.kps[2]);

        // both saw two distinct values: both return ∅
        assert_eq!(thread_decide(&r1), thread_decide(&r2));
        assert!(thread_decide(&r1).is_empty());
        assert_eq!(r1.witnessed, r2.witnessed);
        assert_eq!(r1.witnessed.len(), 2);
    }

    #[test]
    fn early_return_variant_freezes_after_first_decision() {
        let n = net(5, 2);
        let mut st = thread_init(NodeId(1), NodeId(0), EntrySet::new(), ProtocolVariant::EARLY_RETURN);
        let x = set(&["x"]);
        let y = set(&["y"]);
        thread_next(&mut st, 1, &[msg(0, 1, NodeId(0), vec![wv(&n, &x, NodeId(0), &[0])])], &n.reg, &n.kps[1]);
        assert_eq!(st.decision, x);
        // the forward set built in the deciding round still goes out
        assert!(!thread_send(&mut st, 1, 2, &n.kps[1], 5).is_empty());
        // but later rounds are ignored: the equivocation is never seen
        thread_next(&mut st, 2, &[msg(2, 2, NodeId(0), vec![wv(&n, &y, NodeId(0), &[0, 2])])], &n.reg, &n.kps[1]);
        assert_eq!(st.decision, x);

        // the fixed protocol does see it
        let mut fixed = thread_init(NodeId(1), NodeId(0), EntrySet::new(), ProtocolVariant::FIXED);
        thread_next(&mut fixed, 1, &[msg(0, 1, NodeId(0), vec![wv(&n, &x, NodeId(0), &[0])])], &n.reg, &n.kps[1]);
        thread_next(&mut fixed, 2, &[msg(2, 2, NodeId(0), vec![wv(&n, &y, NodeId(0), &[0, 2])])], &n.reg, &n.kps[1]);
        assert!(fixed.decision.is_empty());
    }

    #[test]
    fn unbound_variant_accepts_cross_thread_replay_fixed_rejects() {
        let n = net(3, 1);
        let value = set(&["v"]);
        // node 2's signature over the unbound payload, as it would appear
        // in any thread under the flawed scheme
        let replayed = sign(&n.kps[2], &vote_payload_unbound(&value));
        let forged = |primary: NodeId| WitnessedValue {
            value: value.clone(),
            primary,
            witnesses: [
                (NodeId(0), sign(&n.kps[0], &vote_payload_unbound(&value))),
                (NodeId(2), replayed.clone()),
            ]
            .into_iter()
            .collect(),
        };

        let mut weak = thread_init(NodeId(1), NodeId(0), EntrySet::new(), ProtocolVariant::UNBOUND_SIGNATURES);
        thread_next(&mut weak, 2, &[msg(0, 2, NodeId(0), vec![forged(NodeId(0))])], &n.reg, &n.kps[1]);
        assert_eq!(weak.decision, value, "unbound variant accepts the replay");

        // fixed protocol: the same signatures do not verify against the
        // primary-bound payload, so the value never reaches 2 witnesses
        let mut fixed = thread_init(NodeId(1), NodeId(0), EntrySet::new(), ProtocolVariant::FIXED);
        thread_next(&mut fixed, 2, &[msg(0, 2, NodeId(0), vec![forged(NodeId(0))])], &n.reg, &n.kps[1]);
        assert!(fixed.decision.is_empty());
        assert!(fixed.witnessed.is_empty());
    }
}
