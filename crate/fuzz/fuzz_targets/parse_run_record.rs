#![no_main]

use companion_core::record::parse_run_record;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(record) = parse_run_record(text) {
        let again = parse_run_record(&record.to_jsonl()).expect("serialized record parses");
        assert_eq!(again.events.len(), record.events.len());
    }
});
