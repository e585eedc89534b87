#![no_main]

use libfuzzer_sys::fuzz_target;
use tppa_cli::config::{merge_under, parse_config};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(settings) = parse_config(text) {
        let mut args = vec!["tppa".to_string(), "train".to_string()];
        merge_under(&mut args, &settings);
        assert!(args.len() <= 2 + 2 * settings.len());
    }
});
