#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(evalact::protocol::Action::Evaluate { score, .. }) = evalact::protocol::parse_evaluate_payload(s) {
            assert!((0.0..=10.0).contains(&score));
        }
    }
});
