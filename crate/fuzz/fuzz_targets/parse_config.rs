#![no_main]

use libfuzzer_sys::fuzz_target;
use obil_cli::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = ExperimentConfig::from_json(text) else { return };
    // the echo of a valid config is itself valid and equivalent
    let echoed = serde_json::to_string(&cfg.echo()).expect("echo serializes");
    let mut back = ExperimentConfig::from_json(&echoed).expect("echo validates");
    back.output_dir = cfg.output_dir.clone();
    assert_eq!(back, cfg);
});
