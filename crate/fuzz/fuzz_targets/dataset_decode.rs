#![no_main]

use libfuzzer_sys::fuzz_target;
use smrc_harness::dataset::{decode_sample, encode_sample};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(sample) = decode_sample(text, "fuzz") {
        let encoded = encode_sample(&sample);
        let again = decode_sample(&encoded, "encoded").expect("encoded sample decodes");
        assert_eq!(encode_sample(&again), encoded);
    }
});
