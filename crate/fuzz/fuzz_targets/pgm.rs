#![no_main]

use libfuzzer_sys::fuzz_target;
use wvn_core::navstack::read_pgm;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = read_pgm(data) {
        assert_eq!(img.data.len(), img.width * img.height);
        assert!(img.data.iter().all(|&v| v <= img.maxval));
    }
});
