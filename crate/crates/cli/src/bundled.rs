//! Scenarios compiled into the binary, so `recledger run honest_4node`
//! works without any files on disk. The same texts ship under
//! `crates/cli/scenarios/` for reading and copying.

/// Every bundled scenario, `(name, text)`, in menu order.
pub const ALL: &[(&str, &str)] = &[
    ("honest_4node", include_str!("../scenarios/honest_4node.scn")),
    ("honest_7node", include_str!("../scenarios/honest_7node.scn")),
    ("lifecycle_full", include_str!("../scenarios/lifecycle_full.scn")),
    ("partition_heal", include_str!("../scenarios/partition_heal.scn")),
    ("tamper_node", include_str!("../scenarios/tamper_node.scn")),
    ("equivocate", include_str!("../scenarios/equivocate.scn")),
    ("replay", include_str!("../scenarios/replay.scn")),
    ("forge", include_str!("../scenarios/forge.scn")),
    ("double_spend", include_str!("../scenarios/double_spend.scn")),
];

/// Look one up by name.
pub fn get(name: &str) -> Option<&'static str> {
    ALL.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// The attack suite: `attack <name>` runs one of these scenarios and then
/// checks that the defense it exercises actually held.
pub const ATTACKS: &[(&str, &str)] = &[
    ("double-spend", "double_spend"),
    ("equivocate", "equivocate"),
    ("tamper", "tamper_node"),
    ("replay", "replay"),
    ("partition", "partition_heal"),
];
