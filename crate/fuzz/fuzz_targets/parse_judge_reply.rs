#![no_main]

use companion_core::judge::parse_judge_reply;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(q) = parse_judge_reply(data) {
        assert!(q.relevance <= 10 && q.progress <= 10 && q.coherence <= 10);
        assert!(q.composite.is_finite());
    }
});
