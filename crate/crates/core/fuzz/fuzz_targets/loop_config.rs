#![no_main]

use citefocus::pipeline::LoopConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = LoopConfig::from_json(text);
});
