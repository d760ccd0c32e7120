#![no_main]

use libfuzzer_sys::fuzz_target;
use wvn_core::learner::{read_checkpoint, write_checkpoint};

fuzz_target!(|data: &[u8]| {
    let Ok(ckpt) = read_checkpoint(data) else { return };
    let mut once = Vec::new();
    write_checkpoint(&ckpt, &mut once).expect("write accepted checkpoint");
    let again = read_checkpoint(once.as_slice()).expect("re-read own output");
    let mut twice = Vec::new();
    write_checkpoint(&again, &mut twice).expect("write again");
    assert_eq!(once, twice);
});
