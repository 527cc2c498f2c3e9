#![no_main]

use std::collections::BTreeSet;

use citefocus::corpus::parse_answer;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|input: (u8, &str)| {
    let (n, text) = input;
    let valid: BTreeSet<usize> = (1..=usize::from(n % 8)).collect();
    if let Ok(parsed) = parse_answer(text, &valid) {
        for s in &parsed.answer.sentences {
            assert!(s.citations.iter().all(|c| valid.contains(c)));
        }
    }
});
