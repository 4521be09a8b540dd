#![no_main]

use ehaloha_cli::grid::{parse_grid, MAX_GRID_POINTS};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(spec) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(values) = parse_grid(spec) {
        assert!(!values.is_empty());
        assert!(values.len() <= MAX_GRID_POINTS);
        assert!(values.iter().all(|v| v.is_finite()));
        if spec.contains(':') {
            assert!(values.windows(2).all(|w| w[0] <= w[1]));
        }
    }
});
