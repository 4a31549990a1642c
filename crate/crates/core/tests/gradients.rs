mod common;

use common::*;
use drka_core::ModelKind;

#[test]
fn score_gradients_match_central_differences() {
    for (i, kind) in ModelKind::ALL.into_iter().enumerate() {
        let err = check_score_gradients(kind, 100, 10 + i as u64);
        assert!(err <= GRAD_TOL, "{kind}: relative error {err:e}");
    }
}

#[test]
fn align_gradients_match_central_differences() {
    let err = check_align_gradients(100, 3);
    assert!(err <= GRAD_TOL, "relative error {err:e}");
}

#[test]
fn retrieval_gradients_match_central_differences() {
    let err = check_retrieval_gradients(100, 4);
    assert!(err <= GRAD_TOL, "relative error {err:e}");
}

#[test]
fn fuse_gradients_match_central_differences() {
    let err = check_fuse_gradients(100, 5);
    assert!(err <= GRAD_TOL, "relative error {err:e}");
}

#[test]
fn pipeline_gradients_match_central_differences() {
    let (err, skipped) = check_pipeline_gradients(100, 6);
    assert!(err <= GRAD_TOL, "relative error {err:e}");
    assert!(skipped < 0.05, "{:.1}% of coordinates on kinks", 100.0 * skipped);
}
