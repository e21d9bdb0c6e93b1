//! Seeded property campaigns: one adversary, many runs over randomized
//! workloads, all verdicts aggregated.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use logres_core::crypto::NodeId;
use logres_core::log::{Entry, EntrySet};

use crate::adversary::by_name;
use crate::config::Campaign;
use crate::properties::{check_all, check_ic, Verdict};
use crate::runner::run_lockstep;

#[derive(Clone, Debug)]
pub struct CampaignReport {
    pub adversary: String,
    pub runs: u32,
    pub failures: Vec<(u64, Vec<Verdict>)>,
    pub invalid_runs: Vec<(u64, String)>,
}

impl CampaignReport {
    pub fn all_pass(&self) -> bool {
        self.failures.is_empty() && self.invalid_runs.is_empty()
    }
}

impl fmt::Display for CampaignReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "adversary {}: {} runs, {} failing, {} invalid",
            self.adversary,
            self.runs,
            self.failures.len(),
            self.invalid_runs.len()
        )?;
        for (seed, verdicts) in &self.failures {
            for v in verdicts.iter().filter(|v| !v.pass) {
                write!(f, "\n  seed {seed}: {v}")?;
            }
        }
        for (seed, reason) in &self.invalid_runs {
            write!(f, "\n  seed {seed}: invalid run: {reason}")?;
        }
        Ok(())
    }
}

/// Random workload: `entries_per_node` distinct entries per node, drawn
/// deterministically from the seed.
pub fn seeded_workload(
    n: u16,
    entries_per_node: u32,
    seed: u64,
) -> BTreeMap<NodeId, EntrySet> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x3016);
    (0..n)
        .map(|i| {
            let set: EntrySet = (0..entries_per_node)
                .map(|j| {
                    let salt: u64 = rng.gen();
                    Entry::new(format!("w{i}-{j}-{salt:08x}").into_bytes()).unwrap()
                })
                .collect();
            (NodeId(i), set)
        })
        .collect()
}

/// Runs the campaign; each run gets its own seed, workload and adversary
/// instance. `check_ic_too` additionally evaluates the interactive
/// consistency verdicts, which is what weak-bound campaigns care about.
pub fn run_campaign(campaign: &Campaign, check_ic_too: bool) -> CampaignReport {
    let mut report = CampaignReport {
        adversary: campaign.adversary.clone(),
        runs: campaign.runs,
        failures: Vec::new(),
        invalid_runs: Vec::new(),
    };
    for run in 0..campaign.runs {
        let seed = campaign.seed.wrapping_add(run as u64);
        let entries = seeded_workload(campaign.cfg.n, campaign.entries_per_node, seed);
        let mut adversary = by_name(&campaign.adversary, seed)
            .unwrap_or_else(|| panic!("unknown adversary {:?}", campaign.adversary));
        let trace = run_lockstep(&campaign.cfg, adversary.as_mut(), &entries, seed)
            .expect("campaign config validated");
        if let Some(reason) = &trace.invalid {
            report.invalid_runs.push((seed, reason.clone()));
            continue;
        }
        let mut verdicts = check_all(&trace);
        if check_ic_too {
            verdicts.extend(check_ic(&trace));
        }
        if verdicts.iter().any(|v| !v.pass) {
            report.failures.push((seed, verdicts));
        }
    }
    report
}
