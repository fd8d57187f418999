//! Configs compiled into the binary, addressable by name.

use ipid_qcd::periodic_mdp::format::BUNDLED_THREE_STATE;

macro_rules! configs {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../configs/", $name, ".toml")))),*]
    };
}

pub const CONFIGS: &[(&str, &str)] = configs!(
    "t2_paper",
    "t4_paper",
    "fig3",
    "table1_row1",
    "table1_row2",
    "table1_row3",
    "table2_row1",
    "table2_row2",
    "table2_row3",
    "table2_row4",
    "table2_row5",
    "table2_row6",
    "table3_row1",
    "table3_row2",
    "table3_row3",
);

/// Bundled MDP instances for `mdp-solve`.
pub const INSTANCES: &[(&str, &str)] = &[("three_state", BUNDLED_THREE_STATE)];

pub fn config(name: &str) -> Option<&'static str> {
    CONFIGS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn instance(name: &str) -> Option<&'static str> {
    INSTANCES.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Rows of a reproduced table, in published order.
pub fn table_rows(table: &str) -> Option<Vec<&'static str>> {
    let prefix = format!("{table}_row");
    let rows: Vec<&str> = CONFIGS
        .iter()
        .map(|(n, _)| *n)
        .filter(|n| n.starts_with(&prefix))
        .collect();
    (!rows.is_empty()).then_some(rows)
}
