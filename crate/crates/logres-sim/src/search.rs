//! Bounded exhaustive adversary search.
//!
//! For every faulty-set choice and every assignment of domain entries to
//! correct nodes, the search walks the full tree of adversary message
//! choices, round by round. Per round and per (faulty sender, correct
//! receiver) slot it enumerates ⊥ plus every constructible, protocol-
//! acceptable message within the closure: witness sets drawn from fresh
//! faulty signatures and ledger-replayed correct ones, with the primary
//! present and at least r witnesses.
//!
//! Everything provably equivalent to ⊥ at the receiver is pruned: values
//! the receiver has already witnessed, under-witnessed or unsigned-by-
//! primary values (the filters drop them), messages into the receiver's
//! own primary thread (the primary ignores its inbox), and signing-round
//! signatures over digests other than the receiver's own. Delivering
//! several witness-set variants of one value in a single message is
//! covered by enumerating each variant and the merged set separately:
//! acceptance depends only on the merged union, and the forwarded
//! representative under a multi-variant delivery always equals the one
//! some single-variant delivery produces.
//!
//! Two further sound reductions keep the tree small. With a single faulty
//! node, each receiver has exactly one adversary slot, so its inbox is
//! fully determined by that slot's choice; options whose delivered
//! post-state for the receiver coincide are interchangeable and collapse
//! to one branch (forged messages never enter the ledger, so nothing else
//! depends on the choice). And because the protocol is equivariant under
//! node relabeling while all input assignments are enumerated anyway,
//! faulty sets are by default reduced to one representative per size.

use std::collections::{BTreeMap, BTreeSet};

use logres_core::crypto::{log_sig_payload, sign, NodeId, Signature};
use logres_core::log::{Entry, EntrySet};
use logres_core::node::LogSignatureMsg;
use logres_core::replicate::{variant_vote_payload, ProtocolVariant, ReplicateMsg, WitnessedValue};

use crate::config::{ClosureMode, FaultConfig};
use crate::ledger::SimMsg;
use crate::properties::{check_all, Verdict};
use crate::runner::Lockstep;
use crate::trace_io::dump_trace;

const SEARCH_SEED: u64 = 0xD5;

#[derive(Clone, Debug)]
pub struct SearchParams {
    pub n: u16,
    pub f: u16,
    /// Entry alphabet; forged and proposed values are subsets of it.
    pub domain: Vec<Entry>,
    /// Maximum forged values per slot message per round.
    pub forge_budget: usize,
    pub variant: ProtocolVariant,
    pub replication_rounds: u32,
    pub closure: ClosureMode,
    /// Stop at the first violating run instead of enumerating everything.
    pub stop_at_first: bool,
    pub max_runs: u64,
    /// Explore one representative faulty set per size instead of all of
    /// them; sound because node ids are interchangeable and all input
    /// assignments are enumerated.
    pub symmetry_reduction: bool,
}

impl SearchParams {
    pub fn new(n: u16, f: u16, domain: Vec<Entry>) -> SearchParams {
        SearchParams {
            n,
            f,
            domain,
            forge_budget: 2,
            variant: ProtocolVariant::FIXED,
            replication_rounds: f as u32 + 1,
            closure: ClosureMode::Inclusive,
            stop_at_first: false,
            max_runs: u64::MAX,
            symmetry_reduction: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SearchViolation {
    pub faulty: BTreeSet<NodeId>,
    pub inputs: BTreeMap<NodeId, EntrySet>,
    pub verdicts: Vec<Verdict>,
    /// Replayable dump of the violating run.
    pub dump: String,
}

#[derive(Clone, Debug, Default)]
pub struct SearchReport {
    pub runs: u64,
    pub violations_found: u64,
    /// First few violations kept in full.
    pub examples: Vec<SearchViolation>,
    /// True when the whole space was enumerated.
    pub complete: bool,
}

struct SearchCx {
    params: SearchParams,
    value_space: Vec<EntrySet>,
    report: SearchReport,
    stop: bool,
}

pub fn exhaustive_search(params: &SearchParams) -> SearchReport {
    let value_space = subsets_of(&params.domain);
    let mut cx = SearchCx {
        params: params.clone(),
        value_space,
        report: SearchReport::default(),
        stop: false,
    };

    'outer: for faulty in faulty_sets(params.n, params.f, params.symmetry_reduction) {
        let correct: Vec<NodeId> = (0..params.n)
            .map(NodeId)
            .filter(|id| !faulty.contains(id))
            .collect();
        let combos = (cx.value_space.len() as u64).pow(correct.len() as u32);
        for combo in 0..combos {
            let mut inputs: BTreeMap<NodeId, EntrySet> = BTreeMap::new();
            let mut idx = combo;
            for &c in &correct {
                inputs.insert(
                    c,
                    cx.value_space[(idx % cx.value_space.len() as u64) as usize].clone(),
                );
                idx /= cx.value_space.len() as u64;
            }
            let mut cfg = FaultConfig::new(params.n, params.f);
            cfg.faulty = faulty.clone();
            cfg.replication_rounds = params.replication_rounds;
            cfg.closure = params.closure;
            cfg.variant = params.variant;
            let ls = Lockstep::new(&cfg, &inputs, SEARCH_SEED).expect("valid search config");
            dfs(ls, &mut cx);
            if cx.stop {
                break 'outer;
            }
        }
    }
    cx.report.complete = !cx.stop;
    cx.report
}

fn dfs(mut ls: Lockstep, cx: &mut SearchCx) {
    ls.send_phase();
    let slots: Vec<(NodeId, NodeId)> = ls
        .cfg
        .faulty
        .iter()
        .flat_map(|&q| ls.cfg.correct().into_iter().map(move |i| (q, i)))
        .collect();
    let options: Vec<Vec<Option<SimMsg>>> = slots
        .iter()
        .map(|&(q, i)| slot_options(&ls, cx, q, i))
        .collect();

    let mut choice: Vec<usize> = vec![0; slots.len()];
    loop {
        if cx.stop {
            return;
        }
        let mut forged = BTreeMap::new();
        for (slot_idx, &opt_idx) in choice.iter().enumerate() {
            if let Some(msg) = &options[slot_idx][opt_idx] {
                forged.insert(slots[slot_idx], msg.clone());
            }
        }

        let mut branch = ls.clone();
        branch.deliver_phase(&forged);
        assert!(
            branch.invalid.is_none(),
            "search enumerated a closure-invalid option: {:?}",
            branch.invalid
        );
        if branch.finished() {
            cx.report.runs += 1;
            let trace = branch.into_trace("search".to_string(), SEARCH_SEED);
            let verdicts = check_all(&trace);
            if verdicts.iter().any(|v| !v.pass) {
                cx.report.violations_found += 1;
                if cx.report.examples.len() < 3 {
                    cx.report.examples.push(SearchViolation {
                        faulty: trace.cfg.faulty.clone(),
                        inputs: trace.initial_entries.clone(),
                        verdicts: verdicts.clone(),
                        dump: dump_trace(&trace),
                    });
                }
                if cx.params.stop_at_first {
                    cx.stop = true;
                    return;
                }
            }
            if cx.report.runs >= cx.params.max_runs {
                cx.stop = true;
                return;
            }
        } else {
            dfs(branch, cx);
        }

        // advance the mixed-radix counter over slot options
        let mut pos = 0;
        loop {
            if pos == choice.len() {
                return; // all combinations exhausted
            }
            choice[pos] += 1;
            if choice[pos] < options[pos].len() {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
    }
}

/// All messages worth sending from faulty `q` to correct `i` this round,
/// plus ⊥ (index 0).
fn slot_options(ls: &Lockstep, cx: &SearchCx, q: NodeId, i: NodeId) -> Vec<Option<SimMsg>> {
    let mut options = vec![None];
    let round = ls.round;
    if ls.is_signing_round() {
        // only a signature over the receiver's own digest survives its
        // filters
        let digest = ls.states[&i]
            .candidate
            .as_ref()
            .expect("signing_send ran")
            .1;
        let sig = sign(&ls.keys[&q], &log_sig_payload(&digest));
        options.push(Some(SimMsg::LogSig(LogSignatureMsg {
            epoch: 1,
            signer: q,
            digest,
            sig,
        })));
        return options;
    }

    let protocol_round = round + 1;
    // ledger rounds usable for replayed correct signatures
    let replay_bound = match cx.params.closure {
        ClosureMode::Inclusive => Some(round),
        ClosureMode::Exclusive => round.checked_sub(1),
    };

    // candidate groups: one per (thread, value), each with all witness-set
    // choices that pass the round's filters
    struct Group {
        thread: NodeId,
        value: EntrySet,
        witness_sets: Vec<BTreeMap<NodeId, Signature>>,
    }
    let mut groups: Vec<Group> = Vec::new();
    for p in (0..ls.cfg.n).map(NodeId) {
        if p == i {
            continue; // the receiver's own thread ignores its inbox
        }
        for value in &cx.value_space {
            if ls.states[&i].threads[&p].witnessed.contains(value) {
                continue; // already witnessed: delivering it again is ⊥
            }
            let payload = variant_vote_payload(cx.params.variant, value, p);
            let mut avail: Vec<(NodeId, Signature)> = Vec::new();
            for &fq in &ls.cfg.faulty {
                avail.push((fq, sign(&ls.keys[&fq], &payload)));
            }
            if let Some(bound) = replay_bound {
                for c in ls.cfg.correct() {
                    if let Some(sig) = ls.ledger.find_sig(c, &payload, bound) {
                        avail.push((c, sig));
                    }
                }
            }
            let Some(p_pos) = avail.iter().position(|(id, _)| *id == p) else {
                continue; // no way to make the primary a witness
            };
            let (_, p_sig) = avail.swap_remove(p_pos);
            let mut witness_sets = Vec::new();
            for mask in 0u32..(1 << avail.len()) {
                let mut w: BTreeMap<NodeId, Signature> = BTreeMap::new();
                w.insert(p, p_sig.clone());
                for (bit, (id, sig)) in avail.iter().enumerate() {
                    if mask & (1 << bit) != 0 {
                        w.insert(*id, sig.clone());
                    }
                }
                if w.len() >= protocol_round as usize {
                    witness_sets.push(w);
                }
            }
            if !witness_sets.is_empty() {
                groups.push(Group {
                    thread: p,
                    value: value.clone(),
                    witness_sets,
                });
            }
        }
    }

    // messages: nonempty subsets of groups up to the budget, one witness
    // set per chosen group
    let budget = cx.params.forge_budget.min(groups.len());
    let mut chosen: Vec<(usize, usize)> = Vec::new(); // (group, witness set)
    fn emit(
        groups: &[Group],
        start: usize,
        budget: usize,
        chosen: &mut Vec<(usize, usize)>,
        q: NodeId,
        protocol_round: u32,
        options: &mut Vec<Option<SimMsg>>,
    ) {
        if !chosen.is_empty() {
            let mut per_thread: BTreeMap<NodeId, Vec<WitnessedValue>> = BTreeMap::new();
            for &(g, w) in chosen.iter() {
                per_thread
                    .entry(groups[g].thread)
                    .or_default()
                    .push(WitnessedValue {
                        value: groups[g].value.clone(),
                        primary: groups[g].thread,
                        witnesses: groups[g].witness_sets[w].clone(),
                    });
            }
            let bundle: Vec<ReplicateMsg> = per_thread
                .into_iter()
                .map(|(primary, values)| ReplicateMsg {
                    sender: q,
                    epoch: 1,
                    round: protocol_round,
                    primary,
                    values,
                })
                .collect();
            options.push(Some(SimMsg::Replication(bundle)));
        }
        if chosen.len() == budget {
            return;
        }
        for g in start..groups.len() {
            for w in 0..groups[g].witness_sets.len() {
                chosen.push((g, w));
                emit(groups, g + 1, budget, chosen, q, protocol_round, options);
                chosen.pop();
            }
        }
    }
    emit(
        &groups,
        0,
        budget,
        &mut chosen,
        q,
        protocol_round,
        &mut options,
    );

    if ls.cfg.faulty.len() == 1 {
        dedupe_by_post_state(ls, i, options)
    } else {
        options
    }
}

/// Collapses options that leave the receiver in the same state once the
/// round's prescribed messages are merged in. Only valid with a single
/// faulty node, where this slot is the receiver's whole adversarial inbox.
fn dedupe_by_post_state(
    ls: &Lockstep,
    receiver: NodeId,
    options: Vec<Option<SimMsg>>,
) -> Vec<Option<SimMsg>> {
    let mut kept: Vec<Option<SimMsg>> = Vec::new();
    let mut states: Vec<logres_core::node::NodeState> = Vec::new();
    for option in options {
        let post = receiver_post_state(ls, receiver, option.as_ref());
        if !states.contains(&post) {
            states.push(post);
            kept.push(option);
        }
    }
    kept
}

/// The receiver's state after this round under the given slot choice,
/// mirroring `deliver_phase` for one node. Message order is immaterial:
/// witness sets merge commutatively and all signatures are deterministic.
fn receiver_post_state(
    ls: &Lockstep,
    receiver: NodeId,
    option: Option<&SimMsg>,
) -> logres_core::node::NodeState {
    let round = ls.round;
    let mut state = ls.states[&receiver].clone();
    let kp = &ls.keys[&receiver];
    let mut inbox: Vec<SimMsg> = Vec::new();
    if let Some(round_ledger) = ls.ledger.round(round) {
        for j in ls.cfg.sho(receiver, round) {
            if j == receiver {
                continue;
            }
            if let Some(msg) = round_ledger.sent.get(&(j, receiver)) {
                inbox.push(msg.clone());
            }
        }
    }
    if let Some(msg) = option {
        inbox.push(msg.clone());
    }
    if ls.is_signing_round() {
        let sigs: Vec<LogSignatureMsg> = inbox
            .into_iter()
            .filter_map(|m| match m {
                SimMsg::LogSig(s) => Some(s),
                SimMsg::Replication(_) => None,
            })
            .collect();
        let _ = state.signing_next(&sigs, &ls.reg);
    } else {
        let msgs: Vec<ReplicateMsg> = inbox
            .into_iter()
            .filter_map(|m| match m {
                SimMsg::Replication(b) => Some(b),
                SimMsg::LogSig(_) => None,
            })
            .flatten()
            .collect();
        let _ = state.replication_next(&msgs, &ls.reg, kp);
    }
    state
}

fn subsets_of(domain: &[Entry]) -> Vec<EntrySet> {
    let mut out = Vec::new();
    for mask in 0u32..(1 << domain.len()) {
        let set: EntrySet = domain
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, e)| e.clone())
            .collect();
        out.push(set);
    }
    out
}

/// Faulty sets of size 0..=f over n nodes; with symmetry reduction, one
/// representative per size ({}, {0}, {0,1}, …).
fn faulty_sets(n: u16, f: u16, symmetry: bool) -> Vec<BTreeSet<NodeId>> {
    if symmetry {
        return (0..=f.min(n))
            .map(|size| (0..size).map(NodeId).collect())
            .collect();
    }
    let mut out = Vec::new();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() <= f as u32 {
            out.push(
                (0..n)
                    .filter(|b| mask & (1 << b) != 0)
                    .map(NodeId)
                    .collect(),
            );
        }
    }
    out
}
