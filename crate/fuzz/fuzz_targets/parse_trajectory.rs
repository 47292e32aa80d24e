#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let t = evalact::protocol::parse_trajectory(s);
    let v = evalact::protocol::validate_format(&t);
    if v.compliant {
        let _ = evalact::protocol::segment_trajectory(&t);
    }
});
