//! Property tests for the core invariants: payload injectivity, canonical
//! encodings, wire round-trips and decoder robustness on arbitrary bytes.

use proptest::prelude::*;

use logres_core::codec::Reader;
use logres_core::crypto::{log_sig_payload, vote_payload, NodeId, Signature};
use logres_core::log::{mk_digest, mk_log, Digest, Entry, EntrySet, Log};
use logres_core::replicate::{ReplicateMsg, WitnessedValue};
use logres_core::wire::{
    decode_bundle, decode_certificate_response, decode_log_sig_msg, decode_replicate_msg,
    decode_submit, encode_bundle, encode_replicate_msg, Frame,
};

fn arb_entry() -> impl Strategy<Value = Entry> {
    proptest::collection::vec(proptest :: num :: u8 :: ANY, 1..6)
        .prop_map(|bytes| Entry::new(bytes).unwrap())
}

fn arb_entry_set() -> impl Strategy<Value = EntrySet> {
    proptest::collection::vec(arb_entry(), 0..5).prop_map(EntrySet::from_entries)
}

fn arb_node() -> impl Strategy<Value = NodeId> {
    (0u16..8).prop_map(NodeId)
}

fn arb_witnessed_value() -> impl Strategy<Value = WitnessedValue> {
    (
        arb_entry_set(),
        arb_node(),
        proptest::collection::btree_map(
            arb_node(),
            proptest::collection::vec(proptest::num::u8::ANY, 0..70),
            0..4,
        ),
    )
        .prop_map(|(value, primary, raw)| WitnessedValue {
            value,
            primary,
            witnesses: raw
                .into_iter()
                .map(|(id, bytes)| (id, Signature::from_parts(id, bytes)))
                .collect(),
        })
}

fn arb_replicate_msg() -> impl Strategy<Value = ReplicateMsg> {
    (
        arb_node(),
        proptest::num::u64::ANY,
        1u32..5,
        arb_node(),
        proptest::collection::vec(arb_witnessed_value(), 0..3),
    )
        .prop_map(|(sender, epoch, round, primary, mut values)| {
            for wv in values.iter_mut() {
                wv.primary = primary;
            }
            ReplicateMsg {
                sender,
                epoch,
                round,
                primary,
                values,
            }
        })
}

proptest! {
    /// vote_payload(x, p) = vote_payload(x', p')  ⟺  x = x' ∧ p = p'
    #[test]
    fn vote_payload_injective(
        x in arb_entry_set(),
        x2 in arb_entry_set(),
        p in arb_node(),
        p2 in arb_node(),
    ) {
        let equal_inputs = x == x2 && p == p2;
        let equal_payloads = vote_payload(&x, p) == vote_payload(&x2, p2);
        prop_assert_eq!(equal_inputs, equal_payloads);
    }

    /// No vote payload ever equals a log-signature payload.
    #[test]
    fn payload_domains_disjoint(x in arb_entry_set(), p in arb_node(), d in proptest::array::uniform32(proptest::num::u8::ANY)) {
        let vote = vote_payload(&x, p);
        let log = log_sig_payload(&Digest(d));
        prop_assert_ne!(vote, log);
    }

    /// Building a set from any ordering and duplication of the same
    /// entries yields identical canonical bytes.
    #[test]
    fn entry_set_canonical(mut entries in proptest::collection::vec(arb_entry(), 0..6), seed in proptest::num::u64::ANY) {
        let a = EntrySet::from_entries(entries.clone());
        // crude deterministic shuffle + duplication
        entries.sort_by_key(|e| {
            e.bytes().iter().fold(seed, |acc, b| acc.rotate_left(7) ^ (*b as u64))
        });
        let doubled: Vec<Entry> = entries.iter().chain(entries.iter()).cloned().collect();
        let b = EntrySet::from_entries(doubled);
        prop_assert_eq!(a.encode(), b.encode());
    }

    #[test]
    fn mk_log_properties(prev_entries in arb_entry_set(), new_entries in arb_entry_set(), period in 1u64..1_000_000, now in 0u64..u64::MAX / 2) {
        let genesis = Log::genesis(1);
        let prev = mk_log(&genesis, &prev_entries, period, now);
        let next = mk_log(&prev, &new_entries, period, now);
        prop_assert_eq!(next.epoch, prev.epoch + 1);
        prop_assert_eq!(next.prev_digest, mk_digest(&prev));
        prop_assert_eq!(next.expiration, now + period);
        prop_assert!(prev.entries.is_subset(&next.entries));
        prop_assert!(new_entries.is_subset(&next.entries));
        for entry in next.entries.iter() {
            prop_assert!(prev.entries.contains(entry) || new_entries.contains(entry));
        }
        // bit-for-bit determinism
        prop_assert_eq!(mk_log(&prev, &new_entries, period, now).encode(), next.encode());
    }

    #[test]
    fn replicate_msg_roundtrip(msg in arb_replicate_msg()) {
        let bytes = encode_replicate_msg(&msg);
        let mut r = Reader::new(&bytes);
        let back = decode_replicate_msg(&mut r).unwrap();
        r.finish().unwrap();
        prop_assert_eq!(back, msg.clone());

        let bundle = encode_bundle(std::slice::from_ref(&msg));
        prop_assert_eq!(decode_bundle(&bundle).unwrap(), vec![msg]);
    }

    /// Decoders must reject or accept arbitrary bytes without panicking.
    #[test]
    fn decoders_never_panic(bytes in proptest::collection::vec(proptest::num::u8::ANY, 0..200)) {
        let _ = Frame::decode(&bytes);
        let _ = decode_bundle(&bytes);
        let _ = decode_log_sig_msg(&bytes);
        let _ = decode_certificate_response(&bytes);
        let _ = decode_submit(&bytes);
        let mut r = Reader::new(&bytes);
        let _ = EntrySet::decode(&mut r);
        let mut r = Reader::new(&bytes);
        let _ = Log::decode(&mut r);
    }
}
