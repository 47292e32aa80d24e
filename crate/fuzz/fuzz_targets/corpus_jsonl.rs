#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(docs) = evalact::retrieval::read_corpus(data) {
        let _ = evalact::retrieval::CorpusIndex::build(docs, Default::default());
    }
});
