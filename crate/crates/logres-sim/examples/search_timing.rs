use logres_core::log::Entry;
use logres_core::replicate::ProtocolVariant;
use logres_sim::search::{exhaustive_search, SearchParams};

fn main() {
    let start = std::time::Instant::now();
    let params = SearchParams::new(3, 1, vec![Entry::new(b"a".to_vec()).unwrap()]);
    let report = exhaustive_search(&params);
    println!(
        "fixed: runs={} violations={} complete={} elapsed={:?}",
        report.runs, report.violations_found, report.complete, start.elapsed()
    );
    for ex in &report.examples {
        println!("=== example violation:\n{}", ex.dump);
        for v in &ex.verdicts { println!("  {v}"); }
    }

    let start = std::time::Instant::now();
    let mut params = SearchParams::new(3, 1, vec![Entry::new(b"a".to_vec()).unwrap()]);
    params.variant = ProtocolVariant::UNBOUND_SIGNATURES;
    let report = exhaustive_search(&params);
    println!(
        "unbound: runs={} violations={} complete={} elapsed={:?}",
        report.runs, report.violations_found, report.complete, start.elapsed()
    );
}
