#![no_main]

use citefocus::tokenize::tokenize_scorer;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let t = tokenize_scorer(text);
    assert_eq!(t, tokenize_scorer(text));
});
