mod common;

#[test]
fn hungarian_matches_exhaustive_search() {
    common::hungarian_oracle(60).unwrap();
}

#[test]
fn metrics_match_the_reference_on_s4() {
    common::metric_oracle().unwrap();
}

#[test]
fn gradients_match_finite_differences() {
    println!("{}", common::gradient_suite(1e-3).unwrap());
}

#[test]
fn alignment_invariants_hold() {
    common::alignment_invariants(200).unwrap();
}

#[test]
fn closed_form_loss_values() {
    common::analytic_values().unwrap();
}
