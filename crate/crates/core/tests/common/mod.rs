//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

pub mod grad_suite;

use flowbench_core::models::FlowModel;
use flowbench_core::nn::{bind_parameters, collect_grads, Parameters, Phase};
use flowbench_core::rng::{stream, Rng};
use flowbench_core::{Tape, Tensor, Var};
use rand::Rng as _;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> Rng {
    stream(seed, "tests")
}

pub fn uniform(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
}

/// Relative error with a small absolute floor so that exactly-zero
/// gradients compare against finite-difference noise sensibly.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Scalar loss `sum(out ⊙ weights)` with fixed pseudo-random weights, so
/// every output element carries a distinct upstream gradient.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let n = tape.value(out).len();
    let mut r = rng(seed ^ 0xdead_beef);
    let w: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let shape = tape.shape(out).to_vec();
    let wv = tape.constant(&shape, w).unwrap();
    let prod = tape.mul(out, wv).unwrap();
    tape.sum(prod)
}

/// Central finite-difference check of every (or up to `max_per_input`
/// sampled) input element. Returns the maximum relative error.
pub fn gradcheck(inputs: &[Tensor], max_per_input: usize, build: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t)).collect();
        let out = build(&mut tape, &vars);
        let loss = project(&mut tape, out, 99);
        tape.scalar(loss)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(&t.clone().with_grad())).collect();
    let out = build(&mut tape, &vars);
    let loss = project(&mut tape, out, 99);
    tape.backward(loss).unwrap();

    let mut pick = rng(4242);
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[k]).unwrap().to_vec();
        let n = input.numel();
        let indices: Vec<usize> = if n <= max_per_input {
            (0..n).collect()
        } else {
            (0..max_per_input).map(|_| pick.random_range(0..n)).collect()
        };
        for i in indices {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    worst
}

fn model_loss(model: &mut FlowModel, prev: &Tensor, curr: &Tensor, target: &Tensor) -> f64 {
    let mut tape = Tape::new();
    bind_parameters(model, &mut tape);
    let (p, c, t) = (tape.leaf(prev), tape.leaf(curr), tape.leaf(target));
    let pred = model.forward(&mut tape, p, c, &mut Phase::Eval).unwrap();
    let loss = tape.mse_loss(pred, t).unwrap();
    tape.scalar(loss)
}

fn perturb(model: &mut FlowModel, tensor: usize, element: usize, delta: f64) {
    let mut k = 0;
    model.visit_mut(&mut |_, t| {
        if k == tensor {
            t.data_mut()[element] += delta;
        }
        k += 1;
    });
}

/// Finite-difference sweep over `samples` randomly chosen scalar parameters
/// of a full model under the MSE objective.
pub fn model_gradcheck(model: &mut FlowModel, prev: &Tensor, curr: &Tensor, target: &Tensor, samples: usize, seed: u64) -> f64 {
    let mut tape = Tape::new();
    bind_parameters(model, &mut tape);
    let (p, c, t) = (tape.leaf(prev), tape.leaf(curr), tape.leaf(target));
    let pred = model.forward(&mut tape, p, c, &mut Phase::Eval).unwrap();
    let loss = tape.mse_loss(pred, t).unwrap();
    tape.backward(loss).unwrap();
    collect_grads(model, &tape);

    let mut sizes = Vec::new();
    let mut grads = Vec::new();
    model.visit(&mut |_, t| {
        sizes.push(t.numel());
        grads.push(t.grad.clone().unwrap());
    });
    let total: usize = sizes.iter().sum();
    let mut pick = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let mut flat = pick.random_range(0..total);
        let mut tensor = 0;
        while flat >= sizes[tensor] {
            flat -= sizes[tensor];
            tensor += 1;
        }
        perturb(model, tensor, flat, FD_STEP);
        let up = model_loss(model, prev, curr, target);
        perturb(model, tensor, flat, -2.0 * FD_STEP);
        let down = model_loss(model, prev, curr, target);
        perturb(model, tensor, flat, FD_STEP);
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(grads[tensor][flat], numeric));
    }
    worst
}

/// Trains `model` on one fixed batch for `steps` Adam steps and returns the
/// final training-mode loss.
pub fn overfit(model: FlowModel, batch: &flowbench_core::data::Batch, steps: usize, lr: f64) -> f64 {
    let mut trainer = flowbench_core::train::Trainer::new(model, lr, 7);
    let mut last = f64::NAN;
    for _ in 0..steps {
        last = trainer.step(batch).unwrap().mse;
    }
    last
}

/// Naive two-loop mean squared error over a `[rows×cols]` layout.
pub fn mse_oracle(pred: &[f64], target: &[f64], cols: usize) -> f64 {
    let rows = pred.len() / cols;
    let mut total = 0.0;
    for r in 0..rows {
        let mut row = 0.0;
        for c in 0..cols {
            let d = target[r * cols + c] - pred[r * cols + c];
            row += d * d;
        }
        total += row;
    }
    total / pred.len() as f64
}

pub fn psnr_oracle(mse: f64, range: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (range * range / mse).log10()
    }
}

/// SSIM by explicit enumeration of every 7×7 window with two-pass moments.
pub fn ssim_oracle(x: &[f64], y: &[f64], h: usize, w: usize, range: f64) -> f64 {
    let k = 7;
    let c1 = (0.01 * range) * (0.01 * range);
    let c2 = (0.03 * range) * (0.03 * range);
    let n = (k * k) as f64;
    let mut total = 0.0;
    let mut windows = 0;
    for top in 0..=h - k {
        for left in 0..=w - k {
            let at = |i: usize, j: usize| (top + i) * w + left + j;
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    mx += x[at(i, j)];
                    my += y[at(i, j)];
                }
            }
            mx /= n;
            my /= n;
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let (dx, dy) = (x[at(i, j)] - mx, y[at(i, j)] - my);
                    vx += dx * dx;
                    vy += dy * dy;
                    cxy += dx * dy;
                }
            }
            vx /= n;
            vy /= n;
            cxy /= n;
            total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            windows += 1;
        }
    }
    total / windows as f64
}
