#![no_main]

use companion_core::backend::parse_chat_response;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(body) = std::str::from_utf8(data) {
        let _ = parse_chat_response(body);
    }
});
