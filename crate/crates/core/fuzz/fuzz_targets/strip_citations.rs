#![no_main]

use citefocus::corpus::strip_citations;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = strip_citations(text);
});
