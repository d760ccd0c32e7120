#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(world) = wvn_core::world::parse_world(text) {
            // Accepted worlds must be usable: every route waypoint expands.
            if let Some(route) = &world.route {
                let _ = route.expanded();
            }
        }
    }
});
