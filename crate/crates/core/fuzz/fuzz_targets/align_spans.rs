#![no_main]

use citefocus::align::align_spans;
use citefocus::tokenize::{tokenize_model, tokenize_scorer};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|input: (&str, &str)| {
    let (a, b) = input;
    let _ = align_spans(&tokenize_scorer(a), &tokenize_model(b));
    let _ = align_spans(&tokenize_scorer(a), &tokenize_model(a));
});
