#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(recs) = evalact::objective::read_token_batch(data) {
        let _ = evalact::objective::group_records(&recs);
    }
});
