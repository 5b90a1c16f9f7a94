use veritopic::checks::{gradient_suite, GRAD_TOLERANCE};

#[test]
fn every_fragment_matches_central_differences() {
    for seed in [1, 2] {
        for entry in gradient_suite(seed).unwrap() {
            let worst = entry.report.worst().unwrap();
            assert!(
                entry.report.passed(),
                "{} (seed {seed}): {} at {} has relative error {:.3e} > {GRAD_TOLERANCE:e}",
                entry.name,
                worst.name,
                worst.worst_index,
                worst.max_rel_error
            );
        }
    }
}

