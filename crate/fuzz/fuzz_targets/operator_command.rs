#![no_main]

use libfuzzer_sys::fuzz_target;
use wvn_telemetry::{decode, decode_seq, encode};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = decode_seq(text);
    let Ok(env) = decode(text) else { return };
    let once = encode(&env).expect("encode decoded envelope");
    let again = decode(&once).expect("decode own output");
    assert_eq!(encode(&again).expect("encode again"), once);
});
