//! Machine-checkable oracles for the protocol's formal properties,
//! evaluated over a completed trace with final states s^{f+2}:
//!
//! * Agreement — all correct nodes' final logs are equal, and given the
//!   ledger no valid certificate can be assembled for any other log
//!   (faulty nodes can sign anything, so a digest signed by even one
//!   correct node is certifiable; it had better be the common one).
//! * Completeness — every entry a node held at s^1 is in its final log.
//! * Liveness — every correct node collected at least f+1 signatures.
//!
//! The interactive-consistency checks look one phase earlier, at the
//! decision vectors fixed when replication ends: equal vectors on all
//! correct nodes, and correct slots matching the owners' inputs.

use logres_core::log::mk_digest;

use crate::runner::Trace;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub property: &'static str,
    pub pass: bool,
    pub details: Vec<String>,
}

impl Verdict {
    fn pass(property: &'static str) -> Verdict {
        Verdict {
            property,
            pass: true,
            details: Vec::new(),
        }
    }

    fn fail(property: &'static str, details: Vec<String>) -> Verdict {
        Verdict {
            property,
            pass: false,
            details,
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {}",
            self.property,
            if self.pass { "pass" } else { "FAIL" }
        )?;
        for d in &self.details {
            write!(f, "\n  - {d}")?;
        }
        Ok(())
    }
}

fn assert_valid(trace: &Trace) {
    assert!(
        trace.invalid.is_none(),
        "cannot evaluate properties of an invalid run: {:?}",
        trace.invalid
    );
}

/// ∀ i, j ∈ Π∖F: s_i^{f+2}.log = s_j^{f+2}.log, plus the certificate
/// forgeability check against the ledger.
pub fn check_agreement(trace: &Trace) -> Verdict {
    assert_valid(trace);
    let correct = trace.cfg.correct();
    let mut details = Vec::new();

    let reference = trace.constructed_log(correct[0]);
    let reference_digest = mk_digest(reference);
    for &i in &correct[1..] {
        let log = trace.constructed_log(i);
        if log != reference {
            details.push(format!(
                "node {i} constructed log {} but node {} constructed {}",
                mk_digest(log),
                correct[0],
                reference_digest
            ));
        }
    }

    // No other log may be certifiable: a certificate needs θ = f+1
    // distinct signers and at most |F| can be conjured by the coalition.
    let theta = trace.cfg.f as usize + 1;
    let coalition = trace.cfg.faulty.len();
    for (digest, signers) in trace.ledger.signed_digests() {
        if digest != reference_digest && signers.len() + coalition >= theta {
            details.push(format!(
                "a certificate for foreign digest {digest} is constructible \
                 ({} correct signer(s) + {coalition} faulty)",
                signers.len()
            ));
        }
    }

    if details.is_empty() {
        Verdict::pass("agreement")
    } else {
        Verdict::fail("agreement", details)
    }
}

/// ∀ i ∈ Π∖F: s_i^1.entries ⊆ s_i^{f+2}.log
pub fn check_completeness(trace: &Trace) -> Verdict {
    assert_valid(trace);
    let mut details = Vec::new();
    for &i in &trace.cfg.correct() {
        let collected = &trace.state(i, 1).entries;
        let logged = &trace.constructed_log(i).entries;
        if !collected.is_subset(logged) {
            details.push(format!(
                "node {i}: {} collected entr{} missing from its final log",
                collected.difference(logged).len(),
                if collected.difference(logged).len() == 1 {
                    "y"
                } else {
                    "ies"
                }
            ));
        }
    }
    if details.is_empty() {
        Verdict::pass("completeness")
    } else {
        Verdict::fail("completeness", details)
    }
}

/// ∀ i ∈ Π∖F: |s_i^{f+2}.sigs| ≥ f+1
pub fn check_liveness(trace: &Trace) -> Verdict {
    assert_valid(trace);
    let theta = trace.cfg.f as usize + 1;
    let mut details = Vec::new();
    for &i in &trace.cfg.correct() {
        let got = trace.final_state(i).sigs.len();
        if got < theta {
            details.push(format!("node {i}: {got} signature(s) < θ = {theta}"));
        }
    }
    if details.is_empty() {
        Verdict::pass("liveness")
    } else {
        Verdict::fail("liveness", details)
    }
}

pub fn check_all(trace: &Trace) -> Vec<Verdict> {
    vec![
        check_agreement(trace),
        check_completeness(trace),
        check_liveness(trace),
    ]
}

/// IC1/IC2 at the replication boundary. These hold under the weak n > f
/// bound as well, unlike the full-protocol properties.
pub fn check_ic(trace: &Trace) -> Vec<Verdict> {
    assert_valid(trace);
    let correct = trace.cfg.correct();
    let reference = trace
        .final_state(correct[0])
        .decided
        .as_ref()
        .expect("replication completed");

    let mut ic1 = Vec::new();
    for &i in &correct[1..] {
        let vector = trace.final_state(i).decided.as_ref().unwrap();
        if vector != reference {
            ic1.push(format!("node {i} decided a different vector"));
        }
    }

    let mut ic2 = Vec::new();
    let empty = logres_core::log::EntrySet::new();
    for &j in &correct {
        let input = trace.initial_entries.get(&j).unwrap_or(&empty);
        for &i in &correct {
            let vector = trace.final_state(i).decided.as_ref().unwrap();
            if &vector[j.0 as usize] != input {
                ic2.push(format!(
                    "node {i}'s slot for correct node {j} differs from {j}'s input"
                ));
            }
        }
    }

    vec![
        if ic1.is_empty() {
            Verdict::pass("ic1_agreement")
        } else {
            Verdict::fail("ic1_agreement", ic1)
        },
        if ic2.is_empty() {
            Verdict::pass("ic2_validity")
        } else {
            Verdict::fail("ic2_validity", ic2)
        },
    ]
}
