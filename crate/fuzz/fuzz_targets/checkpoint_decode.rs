#![no_main]

use libfuzzer_sys::fuzz_target;
use tppa_core::io::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(theta) = decode_checkpoint(data) {
        let again = encode_checkpoint(&theta).expect("decoded checkpoint re-encodes");
        assert_eq!(decode_checkpoint(&again).unwrap(), theta);
    }
});
