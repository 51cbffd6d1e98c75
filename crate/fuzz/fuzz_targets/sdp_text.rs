#![no_main]
use libfuzzer_sys::fuzz_target;
use ris_secrecy::sdp::{parse_text, solve_with, to_text, SolverOptions};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(p) = parse_text(text) else {
        return;
    };
    let again = parse_text(&to_text(&p)).expect("printed problem reparses");
    assert_eq!(again.block_dim, p.block_dim);
    assert_eq!(again.constraints.len(), p.constraints.len());
    // Small problems go through the solver too; it may fail but not panic.
    if p.block_dim <= 4 && p.constraints.len() <= 8 {
        let _ = solve_with(
            &p,
            &SolverOptions {
                tol: 1e-6,
                max_iter: 60,
            },
        );
    }
});
