#![no_main]

use libfuzzer_sys::fuzz_target;
use smrc_harness::records::{decode_runs, encode_runs};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = decode_runs(text) {
        let encoded = encode_runs(&records).unwrap();
        let again = decode_runs(&encoded).expect("encoded runs decode");
        assert_eq!(encode_runs(&again).unwrap(), encoded);
    }
});
