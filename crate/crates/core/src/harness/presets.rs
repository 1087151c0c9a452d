//! Configurations shipped with the crate.

use crate::error::{Error, Result};

use super::config::ExperimentConfig;

/// `(name, JSON)` for every shipped preset.
pub const PRESETS: &[(&str, &str)] = &[
    ("toy-table1", include_str!("../../presets/toy-table1.json")),
    ("covshift-benchmark", include_str!("../../presets/covshift-benchmark.json")),
    ("labelnoise-pair03", include_str!("../../presets/labelnoise-pair03.json")),
    ("labelnoise-sym04", include_str!("../../presets/labelnoise-sym04.json")),
    ("labelnoise-sym05", include_str!("../../presets/labelnoise-sym05.json")),
    ("priorshift-rho100", include_str!("../../presets/priorshift-rho100.json")),
    ("priorshift-rho200", include_str!("../../presets/priorshift-rho200.json")),
    ("cmt-synthetic", include_str!("../../presets/cmt-synthetic.json")),
    ("rotated-shift", include_str!("../../presets/rotated-shift.json")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Config {
            path: "preset".into(),
            msg: format!("unknown preset {name:?}; known: {}", preset_names().join(", ")),
        })?;
    ExperimentConfig::from_json(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses() {
        for name in preset_names() {
            let cfg = preset(name).unwrap();
            assert_eq!(cfg.name.as_deref(), Some(name));
        }
    }
}
