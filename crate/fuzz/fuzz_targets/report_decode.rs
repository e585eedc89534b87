#![no_main]

use libfuzzer_sys::fuzz_target;
use tppa_core::io::read_report;

fuzz_target!(|data: &[u8]| {
    let _ = read_report(data);
});
