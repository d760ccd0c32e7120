#![no_main]

use libfuzzer_sys::fuzz_target;
use wvn_core::graphs::{read_mission_dump, write_mission_dump};

fuzz_target!(|data: &[u8]| {
    let Ok((header, graph)) = read_mission_dump(data) else { return };
    // Whatever is accepted re-serializes to a fixed point.
    let mut once = Vec::new();
    write_mission_dump(&graph, header.embedding_dim, &mut once).expect("write accepted dump");
    let (h2, g2) = read_mission_dump(once.as_slice()).expect("re-read own output");
    let mut twice = Vec::new();
    write_mission_dump(&g2, h2.embedding_dim, &mut twice).expect("write again");
    assert_eq!(once, twice);
});
