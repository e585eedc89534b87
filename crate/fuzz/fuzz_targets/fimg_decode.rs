#![no_main]

use libfuzzer_sys::fuzz_target;
use tppa_core::io::{decode_fimg, encode_fimg};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_fimg(data) {
        let again = encode_fimg(&img).expect("decoded image re-encodes");
        assert_eq!(again, data);
    }
});
