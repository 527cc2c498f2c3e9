#![no_main]

use citefocus::corpus::parse_instance_line;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = parse_instance_line(text, 1);
});
