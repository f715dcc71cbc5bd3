#![no_main]

use companion_core::router::RoutingPolicy;
use companion_core::TaskCategory;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(policy) = serde_json::from_slice::<RoutingPolicy>(data) {
        for c in TaskCategory::ALL {
            let _ = policy.condition_for(c);
        }
    }
});
