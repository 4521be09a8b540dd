#![no_main]

use ehaloha_cli::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ExperimentConfig::from_json(text) {
        // anything accepted must survive a round trip and yield usable parameters
        let again = ExperimentConfig::from_json(&cfg.to_json()).expect("round trip");
        assert_eq!(cfg.to_json(), again.to_json());
        cfg.model_params().expect("validated config has valid parameters");
        let _ = cfg.lambda_values();
        let _ = cfg.c_values();
    }
});
