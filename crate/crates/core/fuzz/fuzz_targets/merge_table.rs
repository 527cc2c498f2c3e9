#![no_main]

use citefocus::tokenize::{tokenize_model_with, tokenize_scorer_with, MergeTable};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|input: (&str, &str)| {
    let (table, text) = input;
    let scorer = MergeTable::parse(table, Some(('\u{120}', ' ')));
    let _ = tokenize_scorer_with(&scorer, text);
    let model = MergeTable::parse(table, Some(('\u{2581}', ' ')));
    let _ = tokenize_model_with(&model, text);
});
