//! Finite-difference checks of every differentiable op and composed loss.

mod common;

use common::{worst_error, CASES, TOL, TRIALS};

fn check_group(prefixes: &[&str]) {
    let mut seen = 0;
    for (name, case) in CASES.iter().filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p))) {
        let worst = worst_error(*case);
        println!("{name}: worst relative error over {TRIALS} trials {worst:.3e}");
        assert!(worst <= TOL, "{name}: relative error {worst:.3e}");
        seen += 1;
    }
    assert!(seen > 0, "no case matches {prefixes:?}");
}

#[test]
fn elementwise_ops() {
    check_group(&["add", "sub", "mul", "scale", "relu", "log", "exp"]);
}

#[test]
fn reductions() {
    check_group(&["sum_axes", "mean"]);
}

#[test]
fn structural_ops() {
    check_group(&["concat_channels", "bias_add", "bilinear_resize"]);
}

#[test]
fn conv2d() {
    check_group(&["conv2d"]);
}

#[test]
fn softmax_family() {
    check_group(&["softmax_t", "log_softmax_t"]);
}

#[test]
fn loss_gradients() {
    check_group(&["supervised_loss", "consistency_loss", "kd_loss", "total_loss"]);
}

/// A miniature branch: strided conv, bias, relu, 1x1 head, upsampling and
/// cross-entropy, differentiated with respect to every weight.
#[test]
fn small_network_gradient() {
    check_group(&["conv-relu-head-resize-ce"]);
}
