#![no_main]

use ehaloha::model::harvest_prob;
use ehaloha::ModelParams;
use ehaloha_cli::config::parse_harvest_policy;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(policy) = parse_harvest_policy(text) else {
        return;
    };
    let params = ModelParams::new(0.3, 0.5, 1.0)
        .expect("fixed parameters are valid")
        .with_harvest_policy(policy);
    if params.validate().is_ok() {
        for q in [0u64, 1, 2, 10, 1 << 20, u64::MAX] {
            let mu = harvest_prob(q, &params);
            assert!((0.0..=1.0).contains(&mu), "mu({q}) = {mu}");
        }
    }
});
