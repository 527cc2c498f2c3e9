#![no_main]

use citefocus::pipeline::parse_training_line;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = parse_training_line(text, 1);
});
