//! The case directories shipped under `fixtures/` must load back to the in-code cases.

use std::path::PathBuf;

use resgame_core::data::{load_error_samples, load_network_case, ScenarioConfig};
use resgame_core::experiments::synthetic_samples;
use resgame_core::fixtures::{desk, desk_config, ieee30, two_bus};

fn dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn check(name: &str, case: resgame_core::data::NetworkCase, config: ScenarioConfig) {
    let d = dir(name);
    assert_eq!(load_network_case(&d).unwrap(), case, "{name} network");
    let loaded = ScenarioConfig::load(d.join("config.toml")).unwrap();
    assert_eq!(loaded, config, "{name} config");
    let samples = load_error_samples(d.join("samples.csv")).unwrap();
    assert_eq!(samples, synthetic_samples(&case, &config).unwrap(), "{name} samples");
}

#[test]
fn two_bus_dir_matches() {
    let case = two_bus();
    let cfg = ScenarioConfig {
        horizon: case.n_periods(),
        ..ScenarioConfig::default()
    };
    check("two_bus", case, cfg);
}

#[test]
fn desk_dir_matches() {
    check("desk", desk(), desk_config());
}

#[test]
fn ieee30_dir_matches() {
    let case = ieee30(12);
    let cfg = ScenarioConfig {
        horizon: 12,
        ..ScenarioConfig::default()
    };
    check("ieee30", case, cfg);
}
