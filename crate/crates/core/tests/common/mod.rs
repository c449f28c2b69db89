#![allow(dead_code)]

use std::path::PathBuf;

use adsim::geometry::Position;
use adsim::scenario::{load_scenario, parse_scenario, ScenarioConfig};

pub fn shipped(name: &str) -> ScenarioConfig {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    load_scenario(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Static students at `positions` with `interests`; `extra` is appended
/// verbatim (hotspots, script, further groups).
pub fn static_world(positions: &[Position], size: (f64, f64), interests: &[&str], extra: &str) -> ScenarioConfig {
    let pos: Vec<String> = positions.iter().map(|p| format!("[{:.6}, {:.6}]", p.x, p.y)).collect();
    let cats: Vec<String> = interests.iter().map(|c| format!("{c:?}")).collect();
    let text = format!(
        r#"format_version = 1
name = "test"
seed = 1

[world]
width = {:.1}
height = {:.1}
duration = 600.0

[[groups]]
name = "nodes"
role = "student"
mobility = "static"
interests = [{}]
positions = [{}]
{extra}"#,
        size.0,
        size.1,
        cats.join(", "),
        pos.join(", ")
    );
    parse_scenario(&text).unwrap_or_else(|e| panic!("{e}\n{text}"))
}
