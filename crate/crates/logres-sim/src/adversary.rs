//! Byzantine adversary strategies.
//!
//! An adversary fills the message slots of faulty senders: per round it
//! may hand every correct receiver one forged message, built from fresh
//! faulty-node signatures plus legitimately emitted signatures replayed
//! from the ledger. The runner enforces message closure, so a strategy
//! can collude and replay but never invent a correct node's signature.
//!
//! The library covers the canonical attacks: equivocation, silent crash,
//! last-round value injection (with and without the extra witness that
//! makes it stick), the signature-padding overhead attack, and the two
//! historical protocol flaws (cross-thread signature replay and the
//! premature-exit trigger), which only bite against the correspondingly
//! weakened protocol variants.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use logres_core::crypto::{log_sig_payload, sign, KeyPair, NodeId, PublicRegistry, Signature};
use logres_core::log::{Entry, EntrySet};
use logres_core::node::LogSignatureMsg;
use logres_core::replicate::{variant_vote_payload, ReplicateMsg, WitnessedValue};

use crate::config::FaultConfig;
use crate::ledger::{SentLedger, SimMsg};

/// Read-only context handed to a strategy each round. Faulty key material
/// only: correct nodes' secrets stay out of reach.
pub struct AdvCtx<'a> {
    pub cfg: &'a FaultConfig,
    pub reg: &'a PublicRegistry,
    pub faulty_keys: &'a BTreeMap<NodeId, KeyPair>,
    pub initial_entries: &'a BTreeMap<NodeId, EntrySet>,
    pub epoch: u64,
}

impl AdvCtx<'_> {
    fn protocol_round(&self, model_round: u32) -> u32 {
        model_round + 1
    }

    fn fresh_vote_sig(&self, signer: NodeId, value: &EntrySet, primary: NodeId) -> Signature {
        let payload = variant_vote_payload(self.cfg.variant, value, primary);
        sign(&self.faulty_keys[&signer], &payload)
    }

    fn faulty_witnesses(&self, value: &EntrySet, primary: NodeId) -> BTreeMap<NodeId, Signature> {
        self.faulty_keys
            .keys()
            .map(|q| (*q, self.fresh_vote_sig(*q, value, primary)))
            .collect()
    }

    fn bundle(
        &self,
        sender: NodeId,
        model_round: u32,
        values_per_thread: Vec<(NodeId, Vec<WitnessedValue>)>,
    ) -> SimMsg {
        SimMsg::Replication(
            values_per_thread
                .into_iter()
                .map(|(primary, values)| ReplicateMsg {
                    sender,
                    epoch: self.epoch,
                    round: self.protocol_round(model_round),
                    primary,
                    values,
                })
                .collect(),
        )
    }
}

pub type ForgedMessages = BTreeMap<(NodeId, NodeId), SimMsg>;

pub trait Adversary {
    fn name(&self) -> &str;
    /// Messages from faulty senders to correct receivers for the given
    /// model round. Empty map = the faulty nodes stay silent.
    fn forge(&mut self, round: u32, ledger: &SentLedger, ctx: &AdvCtx) -> ForgedMessages;
}

fn fresh_value(tag: &str, salt: u64) -> EntrySet {
    EntrySet::from_entries([
        Entry::new(format!("{tag}-{salt:016x}").into_bytes()).expect("nonempty")
    ])
}

/// Faulty nodes crash: nothing is ever sent.
pub struct Crash;

impl Adversary for Crash {
    fn name(&self) -> &str {
        "crash"
    }

    fn forge(&mut self, _round: u32, _ledger: &SentLedger, _ctx: &AdvCtx) -> ForgedMessages {
        ForgedMessages::new()
    }
}

/// The lowest faulty node, acting as primary in its own thread, sends one
/// value to part of the correct nodes and a different value to the rest.
pub struct Equivocation {
    rng: ChaCha20Rng,
}

impl Equivocation {
    pub fn new(seed: u64) -> Self {
        Equivocation {
            rng: ChaCha20Rng::seed_from_u64(seed ^ 0xe9f1),
        }
    }
}

impl Adversary for Equivocation {
    fn name(&self) -> &str {
        "equivocation"
    }

    fn forge(&mut self, round: u32, _ledger: &SentLedger, ctx: &AdvCtx) -> ForgedMessages {
        let mut out = ForgedMessages::new();
        let Some(&q) = ctx.cfg.faulty.first() else {
            return out;
        };
        if round != 0 {
            return out;
        }
        let salt = self.rng.gen::<u64>();
        let value_a = fresh_value("eqv-a", salt);
        let value_b = fresh_value("eqv-b", salt);
        let mut receivers = ctx.cfg.correct();
        receivers.shuffle(&mut self.rng);
        let split = if receivers.len() >= 2 {
            1 + self.rng.gen_range(0..receivers.len() - 1)
        } else {
            receivers.len()
        };
        for (idx, &i) in receivers.iter().enumerate() {
            let value = if idx < split { &value_a } else { &value_b };
            let wv = WitnessedValue {
                value: value.clone(),
                primary: q,
                witnesses: [(q, ctx.fresh_vote_sig(q, value, q))].into_iter().collect(),
            };
            out.insert((q, i), ctx.bundle(q, round, vec![(q, vec![wv])]));
        }
        out
    }
}

/// Withholds a value until late in the replicate phase.
///
/// Unwitnessed flavor: the value first appears in the very last round
/// carrying only the |F| faulty signatures, one short of the f+1 the last
/// round demands — every correct node discards it. Witnessed flavor: the
/// value is planted one round earlier on a single correct node, whose
/// forwarded signature then satisfies the last-round rule, so all correct
/// nodes accept it.
pub struct LastRoundInjection {
    witnessed: bool,
    rng: ChaCha20Rng,
}

impl LastRoundInjection {
    pub fn new(witnessed: bool, seed: u64) -> Self {
        LastRoundInjection {
            witnessed,
            rng: ChaCha20Rng::seed_from_u64(seed ^ 0x1a57),
        }
    }
}

impl Adversary for LastRoundInjection {
    fn name(&self) -> &str {
        if self.witnessed {
            "last_round_injection_witnessed"
        } else {
            "last_round_injection"
        }
    }

    fn forge(&mut self, round: u32, _ledger: &SentLedger, ctx: &AdvCtx) -> ForgedMessages {
        let mut out = ForgedMessages::new();
        let Some(&q) = ctx.cfg.faulty.first() else {
            return out;
        };
        let last = ctx.cfg.replication_rounds - 1;
        let salt = 0x11 ^ (self.witnessed as u64);
        let value = fresh_value("inject", salt);
        let witnesses = ctx.faulty_witnesses(&value, q);
        let wv = WitnessedValue {
            value: value.clone(),
            primary: q,
            witnesses,
        };
        if self.witnessed {
            // plant at protocol round |F| where the faulty signatures
            // alone meet the witness threshold, on one node only
            let plant_round = (ctx.cfg.faulty.len() as u32).saturating_sub(1);
            if round == plant_round && plant_round < last {
                let correct = ctx.cfg.correct();
                let target = correct[self.rng.gen_range(0..correct.len())];
                out.insert((q, target), ctx.bundle(q, round, vec![(q, vec![wv])]));
            }
        } else if round == last {
            let mut receivers = ctx.cfg.correct();
            receivers.shuffle(&mut self.rng);
            let keep = 1 + self.rng.gen_range(0..receivers.len());
            for &i in receivers.iter().take(keep) {
                out.insert((q, i), ctx.bundle(q, round, vec![(q, vec![wv.clone()])]));
            }
        }
        out
    }
}

/// The throughput-overhead attack: faulty nodes propose normally, then
/// re-send values stuffed with every signature they can gather (their own
/// plus replayed correct ones) and inject a freshly fabricated value
/// signed by the whole coalition. The extra bytes cost bandwidth; the
/// fabricated value at most proves equivocation in faulty threads, so the
/// final logs match a fault-free run over the same workload.
pub struct SignaturePadding;

impl Adversary for SignaturePadding {
    fn name(&self) -> &str {
        "signature_padding"
    }

    fn forge(&mut self, round: u32, ledger: &SentLedger, ctx: &AdvCtx) -> ForgedMessages {
        let mut out = ForgedMessages::new();
        if round >= ctx.cfg.replication_rounds {
            return out; // silent in the signing phase
        }
        let protocol_round = ctx.protocol_round(round);
        for (&q, _) in ctx.faulty_keys {
            let own_value = ctx
                .initial_entries
                .get(&q)
                .cloned()
                .unwrap_or_else(EntrySet::new);
            for &i in &ctx.cfg.correct() {
                let mut values = Vec::new();
                if round == 0 {
                    // behave like a correct primary
                    let wv = WitnessedValue {
                        value: own_value.clone(),
                        primary: q,
                        witnesses: [(q, ctx.fresh_vote_sig(q, &own_value, q))]
                            .into_iter()
                            .collect(),
                    };
                    values.push(wv);
                } else {
                    // pad the genuine value with every signature in reach
                    let mut witnesses = ctx.faulty_witnesses(&own_value, q);
                    let payload = variant_vote_payload(ctx.cfg.variant, &own_value, q);
                    for c in ctx.cfg.correct() {
                        if let Some(sig) = ledger.find_sig(c, &payload, round) {
                            witnesses.insert(c, sig);
                        }
                    }
                    values.push(WitnessedValue {
                        value: own_value.clone(),
                        primary: q,
                        witnesses,
                    });
                    // coalition-signed fabricated value; acceptable only
                    // while |F| >= protocol round
                    if ctx.cfg.faulty.len() >= protocol_round as usize {
                        let fabricated = fresh_value("pad", protocol_round as u64);
                        values.push(WitnessedValue {
                            value: fabricated.clone(),
                            primary: q,
                            witnesses: ctx.faulty_witnesses(&fabricated, q),
                        });
                    }
                }
                out.insert((q, i), ctx.bundle(q, round, vec![(q, values)]));
            }
        }
        out
    }
}

/// The first historical flaw: replay a responder's legitimate signature
/// from one thread inside another faulty-led thread, so a value reaches
/// the last-round witness threshold without any correct node in that
/// thread having shared it. Harmless against the fixed protocol, where
/// vote payloads pin the primary; breaks agreement against the unbound
/// variant.
pub struct CrossThreadReplay {
    rng: ChaCha20Rng,
    victim_sig_source: Option<NodeId>,
}

impl CrossThreadReplay {
    pub fn new(seed: u64) -> Self {
        CrossThreadReplay {
            rng: ChaCha20Rng::seed_from_u64(seed ^ 0xc755),
            victim_sig_source: None,
        }
    }
}

impl Adversary for CrossThreadReplay {
    fn name(&self) -> &str {
        "cross_thread_replay"
    }

    fn forge(&mut self, round: u32, ledger: &SentLedger, ctx: &AdvCtx) -> ForgedMessages {
        let mut out = ForgedMessages::new();
        let faulty: Vec<NodeId> = ctx.cfg.faulty.iter().copied().collect();
        if faulty.len() < 2 {
            return out;
        }
        let (q1, q2) = (faulty[0], faulty[1]);
        let last = ctx.cfg.replication_rounds - 1;
        let salt = 0x77;
        let value_a = fresh_value("xtr-a", salt);
        let value_b = fresh_value("xtr-b", salt);

        if round == 0 {
            // equivocate in q1's thread so every correct node ends up
            // signing one of the two values there
            let correct = ctx.cfg.correct();
            let source = correct[self.rng.gen_range(0..correct.len())];
            self.victim_sig_source = Some(source);
            for &i in &correct {
                let value = if i == source { &value_a } else { &value_b };
                let wv = WitnessedValue {
                    value: value.clone(),
                    primary: q1,
                    witnesses: [(q1, ctx.fresh_vote_sig(q1, value, q1))].into_iter().collect(),
                };
                out.insert((q1, i), ctx.bundle(q1, round, vec![(q1, vec![wv])]));
            }
        } else if round == last {
            // inject value_a into q2's (so far silent) thread, replaying
            // the source node's signature obtained in q1's thread
            let source = self.victim_sig_source.expect("round 0 ran");
            let source_payload = variant_vote_payload(ctx.cfg.variant, &value_a, q1);
            let Some(replayed) = ledger.find_sig(source, &source_payload, round) else {
                return out;
            };
            let mut witnesses = ctx.faulty_witnesses(&value_a, q2);
            witnesses.insert(source, replayed);
            let wv = WitnessedValue {
                value: value_a.clone(),
                primary: q2,
                witnesses,
            };
            for &i in &ctx.cfg.correct() {
                if i == source {
                    continue; // keep the source's view diverging
                }
                out.insert((q2, i), ctx.bundle(q2, round, vec![(q2, vec![wv.clone()])]));
            }
        }
        out
    }
}

/// The second historical flaw: give one responder an early single value so
/// an early-returning implementation locks its decision, then show a
/// conflicting value to everyone else. The fixed protocol keeps processing
/// rounds and converges on ∅; the early-return variant leaves the victim
/// stuck with its premature decision.
pub struct PrematureExitTrigger {
    rng: ChaCha20Rng,
    victim: Option<NodeId>,
}

impl PrematureExitTrigger {
    pub fn new(seed: u64) -> Self {
        PrematureExitTrigger {
            rng: ChaCha20Rng::seed_from_u64(seed ^ 0x9e37),
            victim: None,
        }
    }
}

impl Adversary for PrematureExitTrigger {
    fn name(&self) -> &str {
        "premature_exit"
    }

    fn forge(&mut self, round: u32, _ledger: &SentLedger, ctx: &AdvCtx) -> ForgedMessages {
        let mut out = ForgedMessages::new();
        let faulty: Vec<NodeId> = ctx.cfg.faulty.iter().copied().collect();
        if faulty.len() < 2 {
            return out;
        }
        let q1 = faulty[0];
        let value_z = fresh_value("pex-z", 1);
        let value_y = fresh_value("pex-y", 2);
        let correct = ctx.cfg.correct();
        let victim = *self
            .victim
            .get_or_insert_with(|| correct[self.rng.gen_range(0..correct.len())]);

        if round == 0 {
            let wv = WitnessedValue {
                value: value_z.clone(),
                primary: q1,
                witnesses: [(q1, ctx.fresh_vote_sig(q1, &value_z, q1))].into_iter().collect(),
            };
            out.insert((q1, victim), ctx.bundle(q1, round, vec![(q1, vec![wv])]));
        } else if round == 1 && ctx.cfg.faulty.len() >= 2 {
            let wv = WitnessedValue {
                value: value_y.clone(),
                primary: q1,
                witnesses: ctx.faulty_witnesses(&value_y, q1),
            };
            for &i in &correct {
                if i != victim {
                    out.insert((q1, i), ctx.bundle(q1, round, vec![(q1, vec![wv.clone()])]));
                }
            }
        }
        out
    }
}

/// Closure-constrained fuzzer: every round it assembles random messages
/// from replayed ledger signatures, fresh faulty signatures, known input
/// values and fabricated ones. Whatever it does, the protocol properties
/// must hold — which makes it a cheap implementation oracle.
pub struct RandomReplay {
    rng: ChaCha20Rng,
}

impl RandomReplay {
    pub fn new(seed: u64) -> Self {
        RandomReplay {
            rng: ChaCha20Rng::seed_from_u64(seed ^ 0xf022),
        }
    }
}

impl Adversary for RandomReplay {
    fn name(&self) -> &str {
        "random_replay"
    }

    fn forge(&mut self, round: u32, ledger: &SentLedger, ctx: &AdvCtx) -> ForgedMessages {
        let mut out = ForgedMessages::new();
        let signing = round >= ctx.cfg.replication_rounds;
        // candidate values: everyone's inputs, the empty set, one fresh
        let mut candidates: Vec<EntrySet> = ctx.initial_entries.values().cloned().collect();
        candidates.push(EntrySet::new());
        candidates.push(fresh_value("fuzz", self.rng.gen()));

        for (&q, _) in ctx.faulty_keys {
            for &i in &ctx.cfg.correct() {
                if !self.rng.gen_bool(0.7) {
                    continue;
                }
                if signing {
                    let digests: Vec<_> = ledger.signed_digests().into_keys().collect();
                    if digests.is_empty() {
                        continue;
                    }
                    let digest = digests[self.rng.gen_range(0..digests.len())];
                    let msg = LogSignatureMsg {
                        epoch: ctx.epoch,
                        signer: q,
                        digest,
                        sig: sign(&ctx.faulty_keys[&q], &log_sig_payload(&digest)),
                    };
                    out.insert((q, i), SimMsg::LogSig(msg));
                    continue;
                }
                let thread = NodeId(self.rng.gen_range(0..ctx.cfg.n));
                let mut values = Vec::new();
                for _ in 0..self.rng.gen_range(1..=2usize) {
                    let value = candidates[self.rng.gen_range(0..candidates.len())].clone();
                    let payload = variant_vote_payload(ctx.cfg.variant, &value, thread);
                    let mut witnesses = BTreeMap::new();
                    for (&fq, kp) in ctx.faulty_keys {
                        if self.rng.gen_bool(0.6) {
                            witnesses.insert(fq, sign(kp, &payload));
                        }
                    }
                    for c in ctx.cfg.correct() {
                        if self.rng.gen_bool(0.5) {
                            if let Some(sig) = ledger.find_sig(c, &payload, round) {
                                witnesses.insert(c, sig);
                            }
                        }
                    }
                    if witnesses.is_empty() {
                        witnesses.insert(q, sign(&ctx.faulty_keys[&q], &payload));
                    }
                    values.push(WitnessedValue {
                        value,
                        primary: thread,
                        witnesses,
                    });
                }
                out.insert((q, i), ctx.bundle(q, round, vec![(thread, values)]));
            }
        }
        out
    }
}

/// Names understood by `by_name`, in campaign order.
pub fn attack_library() -> Vec<&'static str> {
    vec![
        "crash",
        "equivocation",
        "last_round_injection",
        "last_round_injection_witnessed",
        "signature_padding",
        "cross_thread_replay",
        "premature_exit",
        "random_replay",
    ]
}

pub fn by_name(name: &str, seed: u64) -> Option<Box<dyn Adversary>> {
    Some(match name {
        "crash" => Box::new(Crash),
        "equivocation" => Box::new(Equivocation::new(seed)),
        "last_round_injection" => Box::new(LastRoundInjection::new(false, seed)),
        "last_round_injection_witnessed" => Box::new(LastRoundInjection::new(true, seed)),
        "signature_padding" => Box::new(SignaturePadding),
        "cross_thread_replay" => Box::new(CrossThreadReplay::new(seed)),
        "premature_exit" => Box::new(PrematureExitTrigger::new(seed)),
        "random_replay" => Box::new(RandomReplay::new(seed)),
        _ => return None,
    })
}
