//! Runs a scenario and prints how many trace events of each kind it
//! produced, followed by the summary metrics.
//!
//! ```text
//! cargo run --example event_histogram -- scenarios/campus.toml
//! ```

use std::collections::BTreeMap;

use adsim::run::execute;
use adsim::scenario::load_scenario;

fn main() {
    let Some(path) = std::env::args().nth(1) else {
        eprintln!("usage: event_histogram <scenario.toml>");
        std::process::exit(2);
    };
    let cfg = match load_scenario(path.as_ref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{path}: {e}");
            std::process::exit(3);
        }
    };
    let out = execute(&cfg).expect("loaded scenarios run");
    let mut kinds: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &out.trace.events {
        *kinds.entry(e.kind.as_str()).or_default() += 1;
    }
    for (kind, n) in &kinds {
        println!("{kind:<14}{n:>8}");
    }
    println!();
    for (metric, v) in out.report.summary() {
        println!("{metric:<28}{}", v.map_or("-".to_string(), |x| format!("{x:.4}")));
    }
}
