//! The reference configs in `configs/` parse and match the built-in profiles.

use std::path::PathBuf;

use sepg::train::TrainConfig;

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn desk_reference_is_the_desk_profile() {
    assert_eq!(TrainConfig::load(config_path("desk.toml")).unwrap(), TrainConfig::desk());
}

#[test]
fn paper_reference_is_the_paper_profile() {
    assert_eq!(TrainConfig::load(config_path("paper.toml")).unwrap(), TrainConfig::paper());
}

#[test]
fn serialised_config_round_trips() {
    let cfg = TrainConfig::paper();
    assert_eq!(TrainConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap(), cfg);
}
