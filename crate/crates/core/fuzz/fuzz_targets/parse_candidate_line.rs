#![no_main]

use citefocus::corpus::parse_candidate_line;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = parse_candidate_line(text, 1);
});
