//! Scenarios shipped with the crate, addressable by name.

use crate::scenario::{parse_scenario, Scenario, ScenarioErrors};

pub const BUNDLED: &[(&str, &str)] = &[
    ("fig1_dual", include_str!("../../../scenarios/fig1_dual.toml")),
    ("case_i", include_str!("../../../scenarios/case_i.toml")),
    ("case_ii", include_str!("../../../scenarios/case_ii.toml")),
    ("case_iii", include_str!("../../../scenarios/case_iii.toml")),
    ("three_node", include_str!("../../../scenarios/three_node.toml")),
    ("handoff_demo", include_str!("../../../scenarios/handoff_demo.toml")),
    ("interference_demo", include_str!("../../../scenarios/interference_demo.toml")),
    ("scale_50", include_str!("../../../scenarios/scale_50.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Parses a bundled scenario. Panics on an unknown name.
pub fn load(name: &str) -> Result<Scenario, ScenarioErrors> {
    parse_scenario(source(name).unwrap_or_else(|| panic!("no bundled scenario named {name}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_scenario_parses() {
        for name in names() {
            let s = load(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(s.name, name);
        }
    }
}
