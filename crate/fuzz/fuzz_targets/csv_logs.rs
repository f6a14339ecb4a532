#![no_main]

use libfuzzer_sys::fuzz_target;
use proxops::harness::{parse_estimate_csv, parse_measurement_csv, parse_phase_csv, parse_truth_csv};

// first byte picks the parser, the rest is the file text
fuzz_target!(|data: &[u8]| {
    let Some((selector, rest)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else {
        return;
    };
    match selector % 4 {
        0 => drop(parse_truth_csv(text)),
        1 => drop(parse_estimate_csv(text)),
        2 => drop(parse_measurement_csv(text)),
        _ => drop(parse_phase_csv(text)),
    }
});
