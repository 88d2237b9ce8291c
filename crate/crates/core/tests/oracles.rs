mod common;

use common::{f2_phi2_gradient_check, formula_oracle_suite, gradient_suite};

#[test]
fn closed_forms_match_independent_oracles() {
    for check in formula_oracle_suite() {
        assert!(check.passed(), "{check:?}");
    }
}

#[test]
fn analytic_gradients_match_central_differences() {
    for check in gradient_suite(100, 7) {
        assert_eq!(check.mismatches, 0, "{check:?}");
        assert_eq!(check.trials, 100);
    }
}

#[test]
fn correction_head_backprop_matches_central_differences() {
    let check = f2_phi2_gradient_check(20, 11);
    assert_eq!(check.mismatches, 0, "{check:?}");
}
