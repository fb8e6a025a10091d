use selnet_core::gradcheck::{standard_suite, SUITE_FLOOR};

#[test]
fn every_case_agrees_with_finite_differences_over_100_seeds() {
    let mut worst = (0.0_f64, "", 0u64);
    for seed in 0..100 {
        for case in standard_suite(seed).unwrap() {
            if case.report.max_relative_error > worst.0 {
                worst = (case.report.max_relative_error, case.name, seed);
            }
        }
    }
    assert!(
        worst.0 < 1e-5,
        "worst {:e} in {} (seed {}), floor {SUITE_FLOOR}",
        worst.0,
        worst.1,
        worst.2
    );
}
