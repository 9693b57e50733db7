#![no_main]

use dcdb::config::parse_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = parse_config(text) {
        let _ = config.simulate.sim_config();
        let _ = config.experiment_grid();
        let _ = config.analyze_pipeline();
    }
});
