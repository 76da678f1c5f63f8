#![no_main]

use libfuzzer_sys::fuzz_target;
use smrc_harness::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ck) = Checkpoint::decode(text) {
        let encoded = ck.encode().unwrap();
        let again = Checkpoint::decode(&encoded).expect("encoded checkpoint decodes");
        assert_eq!(again.encode().unwrap(), encoded);
    }
});
