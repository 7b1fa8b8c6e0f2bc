//! Named finite-difference cases covering every differentiable operation,
//! the attention and transformer blocks, and each full model. Each case
//! returns its maximum relative error.

use super::{gradcheck, model_gradcheck, rng, uniform};
use flowbench_core::models::{
    AutoencoderConfig, ConvAutoencoderConfig, FlowModel, FrameGeometry, ModelConfig, Tokenization, TransformerConfig,
    UpsampleMode,
};
use flowbench_core::nn::{
    bind_parameters, DecoderBlock, EncoderBlock, Linear, MultiHeadAttention, Parameters, Phase, TransformerBlockConfig,
};
use flowbench_core::{Tape, Tensor, Var};

pub struct GradCase {
    pub name: &'static str,
    pub tol: f64,
    pub run: fn() -> f64,
}

const TOL: f64 = 1e-4;

pub const CASES: &[GradCase] = &[
    GradCase { name: "matmul", tol: 1e-6, run: matmul },
    GradCase { name: "matmul_nt", tol: 1e-6, run: matmul_nt },
    GradCase { name: "add", tol: TOL, run: || binary(|t, a, b| t.add(a, b).unwrap()) },
    GradCase { name: "sub", tol: TOL, run: || binary(|t, a, b| t.sub(a, b).unwrap()) },
    GradCase { name: "mul", tol: TOL, run: || binary(|t, a, b| t.mul(a, b).unwrap()) },
    GradCase { name: "mse_loss", tol: TOL, run: || binary(|t, a, b| t.mse_loss(a, b).unwrap()) },
    GradCase { name: "tanh", tol: TOL, run: || unary(|t, a| t.tanh(a)) },
    GradCase { name: "relu", tol: TOL, run: || unary(|t, a| t.relu(a)) },
    GradCase { name: "scale", tol: TOL, run: || unary(|t, a| t.scale(a, -1.7)) },
    GradCase { name: "mean", tol: TOL, run: || unary(|t, a| t.mean(a)) },
    GradCase { name: "sum", tol: TOL, run: || unary(|t, a| t.sum(a)) },
    GradCase { name: "reshape", tol: TOL, run: || unary(|t, a| t.reshape(a, &[6, 4]).unwrap()) },
    GradCase { name: "add_const", tol: TOL, run: || unary(|t, a| t.add_const(a, &[0.5; 24]).unwrap()) },
    GradCase { name: "transpose", tol: TOL, run: transpose },
    GradCase { name: "narrow", tol: TOL, run: narrow },
    GradCase { name: "concat", tol: TOL, run: concat },
    GradCase { name: "add_bias", tol: TOL, run: add_bias },
    GradCase { name: "softmax", tol: 1e-6, run: softmax },
    GradCase { name: "layer_norm", tol: 1e-5, run: layer_norm },
    GradCase { name: "conv2d", tol: 1e-6, run: conv2d },
    GradCase { name: "maxpool2d", tol: TOL, run: maxpool },
    GradCase { name: "upsample_nearest", tol: TOL, run: || resample(|t, v| t.upsample_nearest(v, 2).unwrap()) },
    GradCase { name: "upsample_bilinear", tol: TOL, run: || resample(|t, v| t.upsample_bilinear(v, 2).unwrap()) },
    GradCase { name: "pad_crop", tol: TOL, run: || resample(|t, v| t.pad_crop(v, 7, 5).unwrap()) },
    GradCase { name: "linear", tol: 1e-5, run: linear },
    GradCase { name: "multi_head_attention", tol: TOL, run: attention },
    GradCase { name: "encoder_block", tol: TOL, run: encoder },
    GradCase { name: "decoder_block", tol: TOL, run: decoder },
    GradCase { name: "FlowAutoencoder 16x32", tol: TOL, run: autoencoder_full },
    GradCase { name: "FlowAutoencoder reduced", tol: TOL, run: || reduced(0) },
    GradCase { name: "FlowConvAutoencoder bilinear", tol: TOL, run: || reduced(1) },
    GradCase { name: "FlowConvAutoencoder nearest", tol: TOL, run: || reduced(2) },
    GradCase { name: "FlowTransformer frame tokens", tol: TOL, run: || reduced(3) },
    GradCase { name: "FlowTransformer row tokens", tol: TOL, run: || reduced(4) },
];

pub fn case(name: &str) -> &'static GradCase {
    CASES.iter().find(|c| c.name == name).unwrap_or_else(|| panic!("no gradient case `{name}`"))
}

/// Runs one case and fails with its error if the tolerance is missed.
pub fn assert_case(name: &str) {
    let c = case(name);
    let err = (c.run)();
    assert!(err < c.tol, "{name}: max relative error {err:.3e} >= {:.0e}", c.tol);
}

fn matmul() -> f64 {
    let mut r = rng(1);
    gradcheck(&[uniform(&[3, 4], &mut r), uniform(&[4, 2], &mut r)], 64, |t, v| t.matmul(v[0], v[1]).unwrap())
}

fn matmul_nt() -> f64 {
    let mut r = rng(1);
    gradcheck(&[uniform(&[3, 5], &mut r), uniform(&[2, 5], &mut r)], 64, |t, v| t.matmul_nt(v[0], v[1]).unwrap())
}

fn binary(op: fn(&mut Tape, Var, Var) -> Var) -> f64 {
    let mut r = rng(3);
    let pair = [uniform(&[2, 3, 4], &mut r), uniform(&[2, 3, 4], &mut r)];
    gradcheck(&pair, 64, |t, v| op(t, v[0], v[1]))
}

fn unary(op: fn(&mut Tape, Var) -> Var) -> f64 {
    let mut r = rng(3);
    gradcheck(&[uniform(&[2, 3, 4], &mut r)], 64, |t, v| op(t, v[0]))
}

fn transpose() -> f64 {
    let a = uniform(&[3, 5], &mut rng(4));
    gradcheck(&[a], 64, |t, v| t.transpose(v[0]).unwrap())
}

fn narrow() -> f64 {
    let a = uniform(&[3, 5], &mut rng(4));
    let cols = gradcheck(std::slice::from_ref(&a), 64, |t, v| t.narrow(v[0], 1, 1, 3).unwrap());
    let rows = gradcheck(&[a], 64, |t, v| t.narrow(v[0], 0, 1, 2).unwrap());
    cols.max(rows)
}

fn concat() -> f64 {
    let mut r = rng(4);
    let inputs = [uniform(&[3, 5], &mut r), uniform(&[3, 2], &mut r)];
    gradcheck(&inputs, 64, |t, v| t.concat(&[v[0], v[1]], 1).unwrap())
}

fn add_bias() -> f64 {
    let mut r = rng(4);
    let inputs = [uniform(&[3, 5], &mut r), uniform(&[5], &mut r)];
    gradcheck(&inputs, 64, |t, v| t.add_bias(v[0], v[1]).unwrap())
}

fn softmax() -> f64 {
    let mut r = rng(5);
    let flat = gradcheck(&[uniform(&[8], &mut r)], 64, |t, v| t.softmax(v[0], 0).unwrap());
    let inner = gradcheck(&[uniform(&[3, 4, 2], &mut r)], 64, |t, v| t.softmax(v[0], 1).unwrap());
    flat.max(inner)
}

fn layer_norm() -> f64 {
    let mut r = rng(6);
    let inputs = [uniform(&[3, 6], &mut r), uniform(&[6], &mut r), uniform(&[6], &mut r)];
    gradcheck(&inputs, 64, |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap())
}

fn conv2d() -> f64 {
    let mut r = rng(7);
    let inputs = [uniform(&[1, 2, 5, 5], &mut r), uniform(&[3, 2, 3, 3], &mut r), uniform(&[3], &mut r)];
    let padded = gradcheck(&inputs, 200, |t, v| t.conv2d(v[0], v[1], v[2], 1, 1).unwrap());
    let strided = gradcheck(&inputs, 200, |t, v| t.conv2d(v[0], v[1], v[2], 0, 2).unwrap());
    padded.max(strided)
}

fn maxpool() -> f64 {
    let x = uniform(&[2, 2, 6, 6], &mut rng(8));
    let disjoint = gradcheck(std::slice::from_ref(&x), 200, |t, v| t.maxpool2d(v[0], 2, 2).unwrap().0);
    let overlapping = gradcheck(&[x], 200, |t, v| t.maxpool2d(v[0], 3, 1).unwrap().0);
    disjoint.max(overlapping)
}

fn resample(op: fn(&mut Tape, Var) -> Var) -> f64 {
    let x = uniform(&[2, 2, 6, 6], &mut rng(8));
    gradcheck(&[x], 200, |t, v| op(t, v[0]))
}

fn linear() -> f64 {
    let mut r = rng(10);
    let layer = Linear::new("probe", 4, 3, &mut r).unwrap();
    let inputs = [uniform(&[2, 4], &mut r), layer.weight.clone(), uniform(&[3], &mut r)];
    gradcheck(&inputs, 64, |t, v| {
        let y = t.matmul_nt(v[0], v[1]).unwrap();
        t.add_bias(y, v[2]).unwrap()
    })
}

fn small_block() -> TransformerBlockConfig {
    TransformerBlockConfig { d_model: 8, num_heads: 2, d_ff: 16, dropout_p: 0.0 }
}

/// Checks gradients w.r.t. a layer's inputs and, by feeding one parameter
/// tensor at a time in as a leaf, w.r.t. every parameter tensor.
fn layer_gradcheck<L: Parameters + Clone>(layer: &L, inputs: &[Tensor], forward: impl Fn(&L, &mut Tape, &[Var]) -> Var) -> f64 {
    let mut worst = gradcheck(inputs, 32, |t, v| {
        let mut l = layer.clone();
        bind_parameters(&mut l, t);
        forward(&l, t, v)
    });
    let mut params = Vec::new();
    layer.visit(&mut |_, p| params.push(p.clone()));
    for (k, param) in params.into_iter().enumerate() {
        let err = gradcheck(&[param], 12, |t, v| {
            let mut l = layer.clone();
            let mut idx = 0;
            l.visit_mut(&mut |_, p| {
                if idx == k {
                    p.tape_id = Some(v[0]);
                } else {
                    t.bind(p);
                }
                idx += 1;
            });
            let xs: Vec<_> = inputs.iter().map(|x| t.leaf(x)).collect();
            forward(&l, t, &xs)
        });
        worst = worst.max(err);
    }
    worst
}

fn attention() -> f64 {
    let mut r = rng(11);
    let att = MultiHeadAttention::new(8, 2, &mut r).unwrap();
    let inputs = [uniform(&[2, 8], &mut r), uniform(&[3, 8], &mut r), uniform(&[3, 8], &mut r)];
    layer_gradcheck(&att, &inputs, |l, t, v| l.forward(t, v[0], v[1], v[2]).unwrap())
}

fn encoder() -> f64 {
    let mut r = rng(12);
    let block = EncoderBlock::new(small_block(), &mut r).unwrap();
    let inputs = [uniform(&[2, 8], &mut r)];
    layer_gradcheck(&block, &inputs, |l, t, v| l.forward(t, v[0], 1, &mut Phase::Eval).unwrap())
}

fn decoder() -> f64 {
    let mut r = rng(13);
    let block = DecoderBlock::new(small_block(), &mut r).unwrap();
    let inputs = [uniform(&[1, 8], &mut r), uniform(&[1, 8], &mut r)];
    layer_gradcheck(&block, &inputs, |l, t, v| l.forward(t, v[0], v[1], 1, &mut Phase::Eval).unwrap())
}

fn frames(batch: usize, g: FrameGeometry, seed: u64) -> [Tensor; 3] {
    let mut r = rng(seed);
    let shape = [batch, g.height, g.width];
    [uniform(&shape, &mut r), uniform(&shape, &mut r), uniform(&shape, &mut r)]
}

fn autoencoder_full() -> f64 {
    let g = FrameGeometry::default();
    let cfg = ModelConfig::FlowAutoencoder(AutoencoderConfig { geometry: g, hidden: 512, bottleneck: 128 });
    let mut model = FlowModel::new(cfg, &mut rng(14)).unwrap();
    let [p, c, t] = frames(1, g, 15);
    model_gradcheck(&mut model, &p, &c, &t, 24, 16)
}

/// Reduced geometry: 4×8 frames (32 values), transformer width 16.
pub fn reduced_config(i: usize) -> ModelConfig {
    let g = FrameGeometry::new(4, 8).unwrap();
    let block = TransformerBlockConfig { d_model: 16, num_heads: 2, d_ff: 32, dropout_p: 0.0 };
    let conv = |upsample| ConvAutoencoderConfig { geometry: g, channels: [3, 4], kernel: 3, upsample };
    match i {
        0 => ModelConfig::FlowAutoencoder(AutoencoderConfig { geometry: g, hidden: 16, bottleneck: 8 }),
        1 => ModelConfig::FlowConvAutoencoder(conv(UpsampleMode::Bilinear)),
        2 => ModelConfig::FlowConvAutoencoder(conv(UpsampleMode::Nearest)),
        3 => ModelConfig::FlowTransformer(TransformerConfig { geometry: g, block, tokenization: Tokenization::Frame }),
        _ => ModelConfig::FlowTransformer(TransformerConfig { geometry: g, block, tokenization: Tokenization::Rows }),
    }
}

fn reduced(i: usize) -> f64 {
    let cfg = reduced_config(i);
    let mut model = FlowModel::new(cfg, &mut rng(20 + i as u64)).unwrap();
    let [p, c, t] = frames(2, cfg.geometry(), 30 + i as u64);
    model_gradcheck(&mut model, &p, &c, &t, 40, 40 + i as u64)
}
