#![no_main]

use citefocus::fcm::decode_response;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|input: (u8, &str)| {
    let (n, body) = input;
    if let Ok(scores) = decode_response(body, usize::from(n)) {
        assert_eq!(scores.len(), usize::from(n));
        assert!(scores.iter().all(|s| (0.0..=1.0).contains(&s.value())));
    }
});
