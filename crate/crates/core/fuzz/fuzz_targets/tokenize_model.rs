#![no_main]

use citefocus::tokenize::tokenize_model;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let t = tokenize_model(text);
    assert_eq!(t, tokenize_model(text));
});
