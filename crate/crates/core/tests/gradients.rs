//! Analytic parameter gradients of the three networks against central
//! differences on a reduced model (8×8 images, h=8, z=2, M=2) in f64.

mod common;

use common::*;
use gaqn_autograd::gradcheck::GradCheckReport;

fn assert_report(name: &str, report: &GradCheckReport) {
    println!("{name}: {}/{} within {GRAD_TOLERANCE:e}, worst {:.2e}", report.passed, report.probes, report.worst_relative);
    assert_eq!(report.probes, GRAD_PROBES);
    assert!(report.pass_fraction() >= GRAD_PASS_FRACTION, "{name}: {:?}", report.failures);
}

#[test]
fn encoder_gradients_match_finite_differences() {
    assert_report("encoder", &encoder_gradcheck());
}

#[test]
fn draw_gradients_match_finite_differences() {
    assert_report("draw", &draw_gradcheck());
}

#[test]
fn discriminator_gradients_match_finite_differences() {
    assert_report("discriminator", &discriminator_gradcheck());
}

