#![no_main]

use libfuzzer_sys::fuzz_target;
use tppa_core::io::decode_pgm;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_pgm(data) {
        assert!(img.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
