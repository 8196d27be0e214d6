use proptest::prelude::*;
use tunnelpilot_core::config::{AngleUnit, Config};
use tunnelpilot_core::{load_config, parse_config, ConfigError};

proptest! {
    #[test]
    fn toml_round_trip(qz in 0.1..100.0f64, d_s in 0.2..3.0f64, horizon in 2usize..80, beta in 0.5..0.999f64, deg in any::<bool>()) {
        let mut cfg = Config::default();
        cfg.nmpc.qz = qz;
        cfg.nmpc.d_s = d_s;
        cfg.nmpc.horizon = horizon;
        cfg.heading.beta = beta;
        cfg.heading.angle_unit = if deg { AngleUnit::Deg } else { AngleUnit::Rad };
        let back = parse_config(&cfg.to_toml()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.param_hash(), cfg.param_hash());
    }
}

#[test]
fn file_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vehicle.toml");
    std::fs::write(&path, "[nmpc]\nd_s = 1.5\n").unwrap();
    assert_eq!(load_config(&path).unwrap().nmpc.d_s, 1.5);

    std::fs::write(&path, "[nmpc]\nhorizon = 1\n").unwrap();
    match load_config(&path) {
        Err(ConfigError::Invalid { key, .. }) => assert_eq!(key, "nmpc.horizon"),
        other => panic!("{other:?}"),
    }
}
