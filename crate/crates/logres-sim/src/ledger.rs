//! The message domain of a simulated run and the sent-message ledger.
//!
//! The ledger records, for every (sender, round), the full message map a
//! correct node's send function produced, together with the extracted
//! per-signer signature sets Σ_i(r). Message closure is evaluated against
//! it: a forged message may only embed a non-failed node's signature if
//! that exact signature was already sent. Signatures attributed to faulty
//! nodes are unrestricted, which models key-sharing collusion.

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest as _, Sha256};

use logres_core::crypto::{NodeId, Signature};
use logres_core::node::LogSignatureMsg;
use logres_core::replicate::{variant_vote_payload, ProtocolVariant, ReplicateMsg};
use logres_core::wire;

use crate::config::ClosureMode;

/// One slot of a message vector: either a replication bundle (M_1, all
/// threads' votes for one recipient) or a signing-phase signature (M_2).
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum SimMsg {
    Replication(Vec<ReplicateMsg>),
    LogSig(LogSignatureMsg),
}

impl SimMsg {
    /// Stable byte encoding, reusing the wire formats with the frame type
    /// as prefix; trace dumps hash these bytes.
    pub fn encode(&self) -> Vec<u8> {
        match self {
            SimMsg::Replication(msgs) => {
                let mut out = vec![wire::FrameType::ReplicationBundle as u8];
                out.extend_from_slice(&wire::encode_bundle(msgs));
                out
            }
            SimMsg::LogSig(msg) => {
                let mut out = vec![wire::FrameType::LogSignature as u8];
                out.extend_from_slice(&wire::encode_log_sig_msg(msg));
                out
            }
        }
    }

    pub fn hash_hex(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.encode());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Every signature embedded in the message, with its claimed signer.
    pub fn embedded_signatures(&self) -> Vec<&Signature> {
        match self {
            SimMsg::Replication(msgs) => msgs
                .iter()
                .flat_map(|m| m.values.iter())
                .flat_map(|wv| wv.witnesses.values())
                .collect(),
            SimMsg::LogSig(msg) => vec![&msg.sig],
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RoundLedger {
    /// Messages actually sent by correct nodes: (sender, receiver) → msg.
    pub sent: BTreeMap<(NodeId, NodeId), SimMsg>,
    /// Σ_i(r): signature bytes sent by node i this round.
    pub sigs: BTreeMap<NodeId, BTreeSet<Vec<u8>>>,
    /// (signer, payload) → signature, for adversaries replaying
    /// legitimately emitted signatures.
    pub by_payload: BTreeMap<(NodeId, Vec<u8>), Signature>,
}

#[derive(Clone, Debug, Default)]
pub struct SentLedger {
    rounds: BTreeMap<u32, RoundLedger>,
}

impl SentLedger {
    pub fn new() -> SentLedger {
        SentLedger::default()
    }

    /// Records one sent message. `variant` determines the vote payload the
    /// embedded witness signatures are indexed under.
    pub fn record(
        &mut self,
        round: u32,
        sender: NodeId,
        receiver: NodeId,
        msg: &SimMsg,
        variant: ProtocolVariant,
    ) {
        let entry = self.rounds.entry(round).or_default();
        entry.sent.insert((sender, receiver), msg.clone());
        match msg {
            SimMsg::Replication(msgs) => {
                for rmsg in msgs {
                    for wv in &rmsg.values {
                        let payload = variant_vote_payload(variant, &wv.value, wv.primary);
                        for (id, sig) in &wv.witnesses {
                            entry
                                .sigs
                                .entry(*id)
                                .or_default()
                                .insert(sig.bytes().to_vec());
                            entry
                                .by_payload
                                .insert((*id, payload.clone()), sig.clone());
                        }
                    }
                }
            }
            SimMsg::LogSig(sig_msg) => {
                entry
                    .sigs
                    .entry(sig_msg.signer)
                    .or_default()
                    .insert(sig_msg.sig.bytes().to_vec());
                entry.by_payload.insert(
                    (
                        sig_msg.signer,
                        logres_core::crypto::log_sig_payload(&sig_msg.digest),
                    ),
                    sig_msg.sig.clone(),
                );
            }
        }
    }

    pub fn round(&self, round: u32) -> Option<&RoundLedger> {
        self.rounds.get(&round)
    }

    /// Whether `bytes` appear in Σ_node(r') for some r' within the bound.
    pub fn sig_sent_up_to(&self, node: NodeId, round_inclusive: u32, bytes: &[u8]) -> bool {
        self.rounds
            .range(..=round_inclusive)
            .any(|(_, rl)| rl.sigs.get(&node).is_some_and(|set| set.contains(bytes)))
    }

    /// A signature actually emitted by `signer` over `payload`, searched
    /// through the given round. This is what replay-style adversaries use.
    pub fn find_sig(
        &self,
        signer: NodeId,
        payload: &[u8],
        round_inclusive: u32,
    ) -> Option<Signature> {
        self.rounds
            .range(..=round_inclusive)
            .rev()
            .find_map(|(_, rl)| rl.by_payload.get(&(signer, payload.to_vec())).cloned())
    }

    /// Digests of candidate logs signed by each node in the signing round,
    /// as visible from the ledger.
    pub fn signed_digests(&self) -> BTreeMap<logres_core::log::Digest, BTreeSet<NodeId>> {
        let mut out: BTreeMap<logres_core::log::Digest, BTreeSet<NodeId>> = BTreeMap::new();
        for rl in self.rounds.values() {
            for msg in rl.sent.values() {
                if let SimMsg::LogSig(sig_msg) = msg {
                    out.entry(sig_msg.digest).or_default().insert(sig_msg.signer);
                }
            }
        }
        out
    }
}

/// The message-closure restriction on forged messages: every embedded
/// signature attributed to a node in `c_r` (the processes that have not
/// failed yet) must already appear in that node's sent set, up to and
/// including this round in inclusive mode, strictly before it otherwise.
pub fn closure_check(
    msg: &SimMsg,
    round: u32,
    ledger: &SentLedger,
    c_r: &BTreeSet<NodeId>,
    mode: ClosureMode,
) -> bool {
    let bound = match mode {
        ClosureMode::Inclusive => round,
        ClosureMode::Exclusive => match round.checked_sub(1) {
            Some(b) => b,
            None => {
                // round 0, exclusive: no prior signatures exist at all
                return msg
                    .embedded_signatures()
                    .iter()
                    .all(|sig| !c_r.contains(&sig.signer));
            }
        },
    };
    msg.embedded_signatures().iter().all(|sig| {
        !c_r.contains(&sig.signer) || ledger.sig_sent_up_to(sig.signer, bound, sig.bytes())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use logres_core::crypto::{keygen_test, sign, vote_payload};
    use logres_core::log::{Entry, EntrySet};
    use logres_core::replicate::WitnessedValue;

    fn set(items: &[&str]) -> EntrySet {
        items
            .iter()
            .map(|s| Entry::new(s.as_bytes().to_vec()).unwrap())
            .collect()
    }

    fn vote_msg(sender: u16, round: u32, primary: u16, wv: WitnessedValue) -> SimMsg {
        SimMsg::Replication(vec![ReplicateMsg {
            sender: NodeId(sender),
            epoch: 1,
            round,
            primary: NodeId(primary),
            values: vec![wv],
        }])
    }

    #[test]
    fn closure_rules() {
        let kp1 = keygen_test(&[1u8; 32], NodeId(1));
        let kp2 = keygen_test(&[1u8; 32], NodeId(2));
        let value = set(&["a"]);
        let payload = vote_payload(&value, NodeId(0));
        let correct_sig = sign(&kp1, &payload);
        let faulty_sig = sign(&kp2, &payload);
        let c_r: BTreeSet<NodeId> = [NodeId(1)].into_iter().collect(); // node 2 is faulty

        let mut ledger = SentLedger::new();
        let sent = vote_msg(
            1,
            0,
            0,
            WitnessedValue {
                value: value.clone(),
                primary: NodeId(0),
                witnesses: [(NodeId(1), correct_sig.clone())].into_iter().collect(),
            },
        );
        ledger.record(0, NodeId(1), NodeId(2), &sent, ProtocolVariant::FIXED);

        // faulty-node signatures over anything are unrestricted
        let only_faulty = vote_msg(
            2,
            0,
            0,
            WitnessedValue {
                value: set(&["zzz"]),
                primary: NodeId(0),
                witnesses: [(NodeId(2), faulty_sig.clone())].into_iter().collect(),
            },
        );
        assert!(closure_check(
            &only_faulty,
            0,
            &ledger,
            &c_r,
            ClosureMode::Inclusive
        ));

        // replaying node 1's emitted signature in a later round is fine
        let replay = vote_msg(
            2,
            1,
            0,
            WitnessedValue {
                value: value.clone(),
                primary: NodeId(0),
                witnesses: [
                    (NodeId(1), correct_sig.clone()),
                    (NodeId(2), faulty_sig.clone()),
                ]
                .into_iter()
                .collect(),
            },
        );
        assert!(closure_check(&replay, 1, &ledger, &c_r, ClosureMode::Inclusive));
        // inclusive mode also allows it within round 0 itself; exclusive
        // mode does not
        assert!(closure_check(&replay, 0, &ledger, &c_r, ClosureMode::Inclusive));
        assert!(!closure_check(&replay, 0, &ledger, &c_r, ClosureMode::Exclusive));
        assert!(closure_check(&replay, 1, &ledger, &c_r, ClosureMode::Exclusive));

        // a never-sent correct-node signature is rejected
        let forged_payload = vote_payload(&set(&["zzz"]), NodeId(0));
        let never_sent = vote_msg(
            2,
            1,
            0,
            WitnessedValue {
                value: set(&["zzz"]),
                primary: NodeId(0),
                witnesses: [(NodeId(1), sign(&kp1, &forged_payload))]
                    .into_iter()
                    .collect(),
            },
        );
        assert!(!closure_check(
            &never_sent,
            1,
            &ledger,
            &c_r,
            ClosureMode::Inclusive
        ));
    }

    #[test]
    fn find_sig_locates_replayable_signatures() {
        let kp = keygen_test(&[1u8; 32], NodeId(1));
        let value = set(&["a"]);
        let payload = vote_payload(&value, NodeId(0));
        let sig = sign(&kp, &payload);
        let mut ledger = SentLedger::new();
        ledger.record(
            2,
            NodeId(1),
            NodeId(0),
            &vote_msg(
                1,
                2,
                0,
                WitnessedValue {
                    value,
                    primary: NodeId(0),
                    witnesses: [(NodeId(1), sig.clone())].into_iter().collect(),
                },
            ),
            ProtocolVariant::FIXED,
        );
        assert_eq!(ledger.find_sig(NodeId(1), &payload, 2), Some(sig));
        assert_eq!(ledger.find_sig(NodeId(1), &payload, 1), None);
        assert_eq!(ledger.find_sig(NodeId(2), &payload, 2), None);
    }
}
