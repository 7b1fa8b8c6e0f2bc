//! Central finite-difference checks of every differentiable operation and
//! of each full model at reduced size.

mod common;

use common::grad_suite::{assert_case, CASES};
use common::rng;
use common::uniform;
use flowbench_core::Tape;

#[test]
fn matmul_gradients() {
    assert_case("matmul");
    assert_case("matmul_nt");
}

#[test]
fn elementwise_gradients() {
    assert_case("add");
    assert_case("sub");
    assert_case("mul");
    assert_case("mse_loss");
    assert_case("tanh");
    assert_case("relu");
    assert_case("scale");
    assert_case("mean");
    assert_case("sum");
    assert_case("reshape");
    assert_case("add_const");
}

#[test]
fn shape_op_gradients() {
    assert_case("transpose");
    assert_case("narrow");
    assert_case("concat");
    assert_case("add_bias");
}

#[test]
fn softmax_jvp_matches_finite_differences() {
    assert_case("softmax");
}

#[test]
fn layer_norm_gradients() {
    assert_case("layer_norm");
}

#[test]
fn conv2d_gradients() {
    assert_case("conv2d");
}

#[test]
fn pooling_and_resampling_gradients() {
    assert_case("maxpool2d");
    assert_case("upsample_nearest");
    assert_case("upsample_bilinear");
    assert_case("pad_crop");
}

#[test]
fn linear_layer_parameter_gradients() {
    assert_case("linear");
}

#[test]
fn attention_gradients() {
    assert_case("multi_head_attention");
}

#[test]
fn encoder_block_gradients() {
    assert_case("encoder_block");
}

#[test]
fn decoder_block_gradients() {
    assert_case("decoder_block");
}

#[test]
fn full_autoencoder_gradients_at_benchmark_geometry() {
    assert_case("FlowAutoencoder 16x32");
}

#[test]
fn reduced_autoencoder_gradients() {
    assert_case("FlowAutoencoder reduced");
}

#[test]
fn reduced_conv_gradients() {
    assert_case("FlowConvAutoencoder bilinear");
    assert_case("FlowConvAutoencoder nearest");
}

#[test]
fn reduced_transformer_gradients() {
    assert_case("FlowTransformer frame tokens");
    assert_case("FlowTransformer row tokens");
}

#[test]
fn every_case_is_exercised() {
    let covered = ["matmul", "matmul_nt", "add", "sub", "mul", "mse_loss", "tanh", "relu", "scale", "mean", "sum", "reshape", "add_const", "transpose", "narrow", "concat", "add_bias", "softmax", "layer_norm", "conv2d", "maxpool2d", "upsample_nearest", "upsample_bilinear", "pad_crop", "linear", "multi_head_attention", "encoder_block", "decoder_block", "FlowAutoencoder 16x32", "FlowAutoencoder reduced", "FlowConvAutoencoder bilinear", "FlowConvAutoencoder nearest", "FlowTransformer frame tokens", "FlowTransformer row tokens"];
    assert_eq!(CASES.len(), covered.len());
    assert!(CASES.iter().all(|c| covered.contains(&c.name)));
}

#[test]
fn sum_of_matmul_gradient_matches_finite_differences() {
    let mut r = rng(2);
    let (a, b) = (uniform(&[3, 4], &mut r), uniform(&[4, 2], &mut r));
    let mut tape = Tape::new();
    let (va, vb) = (tape.leaf(&a.clone().with_grad()), tape.leaf(&b));
    let c = tape.matmul(va, vb).unwrap();
    let loss = tape.sum(c);
    tape.backward(loss).unwrap();
    let grad = tape.grad(va).unwrap().to_vec();
    let f = |a: &flowbench_core::Tensor| {
        let mut t = Tape::new();
        let (x, y) = (t.leaf(a), t.leaf(&b));
        let c = t.matmul(x, y).unwrap();
        let s = t.sum(c);
        t.scalar(s)
    };
    for (i, &g) in grad.iter().enumerate() {
        let (mut p, mut m) = (a.clone(), a.clone());
        p.data_mut()[i] += common::FD_STEP;
        m.data_mut()[i] -= common::FD_STEP;
        let numeric = (f(&p) - f(&m)) / (2.0 * common::FD_STEP);
        assert!(common::rel_err(g, numeric) < 1e-6);
    }
}

#[test]
fn tanh_gradient_at_half() {
    let x = flowbench_core::Tensor::new(&[1], vec![0.5]).unwrap();
    let mut tape = Tape::new();
    let v = tape.leaf(&x.clone().with_grad());
    let y = tape.tanh(v);
    tape.backward(y).unwrap();
    let analytic = tape.grad(v).unwrap()[0];
    let h = common::FD_STEP;
    let numeric = (libm::tanh(0.5 + h) - libm::tanh(0.5 - h)) / (2.0 * h);
    assert!((analytic - (1.0 - libm::tanh(0.5).powi(2))).abs() < 1e-15);
    assert!((analytic - numeric).abs() < 1e-8);
}

#[test]
fn upsample_sum_gradient_is_factor_squared() {
    let mut r = rng(9);
    let x = uniform(&[1, 1, 3, 4], &mut r);
    for factor in 1..=3 {
        let mut tape = Tape::new();
        let v = tape.leaf(&x.clone().with_grad());
        let u = tape.upsample_nearest(v, factor).unwrap();
        let s = tape.sum(u);
        tape.backward(s).unwrap();
        assert!(tape.grad(v).unwrap().iter().all(|&g| g == (factor * factor) as f64));
    }
}
