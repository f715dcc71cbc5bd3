#![no_main]

use companion_core::companion::{parse_assessment, render_assessment};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(a) = parse_assessment(data, 2) {
        let rendered = render_assessment(a.status, &a.reason, a.guidance.as_deref());
        let again = parse_assessment(&rendered, 2).expect("rendered assessment parses");
        assert_eq!(again.status, a.status);
        assert_eq!(again.guidance, a.guidance);
    }
});
