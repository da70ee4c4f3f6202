//! Shared oracles for integration tests.

#![allow(dead_code)]

use evad::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Var>;

/// One gradient-check instance: differentiable inputs plus a scalar loss.
pub struct GradCase {
    pub op: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub build: Build,
}

fn loss_at(case: &GradCase, inputs: &[Tensor<f64>]) -> f64 {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let loss = (case.build)(&mut g, &vars);
    g.scalar(loss)
}

/// Largest relative error between analytic and central-difference gradients,
/// measured as `|a - n| / max(|a|, |n|, floor)`.
pub fn max_rel_error(case: &GradCase, h: f64, floor: f64) -> f64 {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| g.param(t)).collect();
    let loss = (case.build)(&mut g, &vars);
    let grads = g.backward(loss).expect("scalar loss");
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        for i in 0..case.inputs[k].len() {
            let mut plus = case.inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = case.inputs.clone();
            minus[k].data_mut()[i] -= h;
            let numeric = (loss_at(case, &plus) - loss_at(case, &minus)) / (2.0 * h);
            let a = analytic[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    worst
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Values bounded away from zero so kinked ops stay differentiable under `h`.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Contracts a non-scalar output against fixed random weights.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, g.shape(out));
    let w = g.constant(&w);
    let prod = g.mul(out, w).unwrap();
    g.sum(prod)
}

fn image_shape(rng: &mut ChaCha8Rng) -> [usize; 4] {
    [
        rng.random_range(1..=2),
        rng.random_range(1..=3),
        rng.random_range(2..=6),
        rng.random_range(2..=6),
    ]
}

pub const OPS: [&str; 18] = [
    "add",
    "sub",
    "mul",
    "scale",
    "concat",
    "conv2d_s1",
    "conv2d_s2",
    "conv_transpose2d",
    "channel_mix",
    "dense",
    "sigmoid",
    "tanh",
    "leaky_relu",
    "mse_loss",
    "bce_with_logits",
    "l1_norm",
    "sum",
    "scalar_broadcast",
];

/// Builds the `k`-th random instance of `op`.
pub fn grad_case(op: &'static str, k: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(
        0xc0ffee ^ (k << 8) ^ op.len() as u64 ^ (op.as_bytes()[0] as u64) << 32,
    );
    let salt = rng.random::<u64>();
    let s = image_shape(&mut rng);
    let (inputs, build): (Vec<Tensor<f64>>, Build) = match op {
        "add" => (
            vec![rand_tensor(&mut rng, &s), rand_tensor(&mut rng, &s)],
            Box::new(move |g, v| {
                let o = g.add(v[0], v[1]).unwrap();
                project(g, o, salt)
            }),
        ),
        "sub" => (
            vec![rand_tensor(&mut rng, &s), rand_tensor(&mut rng, &s)],
            Box::new(move |g, v| {
                let o = g.sub(v[0], v[1]).unwrap();
                project(g, o, salt)
            }),
        ),
        "mul" => (
            vec![rand_tensor(&mut rng, &s), rand_tensor(&mut rng, &s)],
            Box::new(move |g, v| {
                let o = g.mul(v[0], v[1]).unwrap();
                project(g, o, salt)
            }),
        ),
        "scale" => {
            let c = rng.random_range(-2.0..2.0);
            (
                vec![rand_tensor(&mut rng, &s)],
                Box::new(move |g, v| {
                    let o = g.scale(v[0], c);
                    project(g, o, salt)
                }),
            )
        }
        "scalar_broadcast" => (
            vec![rand_tensor(&mut rng, &s), rand_tensor(&mut rng, &[1])],
            Box::new(move |g, v| {
                let a = g.add(v[0], v[1]).unwrap();
                let o = g.mul(a, v[1]).unwrap();
                project(g, o, salt)
            }),
        ),
        "concat" => {
            let mut s2 = s;
            s2[1] = rng.random_range(1..=3);
            (
                vec![rand_tensor(&mut rng, &s), rand_tensor(&mut rng, &s2)],
                Box::new(move |g, v| {
                    let o = g.concat(&[v[0], v[1]]).unwrap();
                    project(g, o, salt)
                }),
            )
        }
        "conv2d_s1" | "conv2d_s2" => {
            let stride = if op == "conv2d_s1" { 1 } else { 2 };
            let k = rng.random_range(1..=3);
            let pad = rng.random_range(0..k);
            let oc = rng.random_range(1..=3);
            let mut s = s;
            s[2] = s[2].max(k);
            s[3] = s[3].max(k);
            (
                vec![
                    rand_tensor(&mut rng, &s),
                    rand_tensor(&mut rng, &[oc, s[1], k, k]),
                    rand_tensor(&mut rng, &[oc]),
                ],
                Box::new(move |g, v| {
                    let o = g.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap();
                    project(g, o, salt)
                }),
            )
        }
        "conv_transpose2d" => {
            let (k, pad) = if rng.random::<bool>() { (4, 1) } else { (2, 0) };
            let oc = rng.random_range(1..=3);
            (
                vec![
                    rand_tensor(&mut rng, &s),
                    rand_tensor(&mut rng, &[s[1], oc, k, k]),
                    rand_tensor(&mut rng, &[oc]),
                ],
                Box::new(move |g, v| {
                    let o = g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, pad).unwrap();
                    project(g, o, salt)
                }),
            )
        }
        "channel_mix" => {
            let oc = rng.random_range(1..=4);
            (
                vec![
                    rand_tensor(&mut rng, &s),
                    rand_tensor(&mut rng, &[oc, s[1]]),
                    rand_tensor(&mut rng, &[oc]),
                ],
                Box::new(move |g, v| {
                    let o = g.channel_mix(v[0], v[1], Some(v[2])).unwrap();
                    project(g, o, salt)
                }),
            )
        }
        "dense" => {
            let d: usize = s[1..].iter().product();
            let o = rng.random_range(1..=3);
            (
                vec![
                    rand_tensor(&mut rng, &s),
                    rand_tensor(&mut rng, &[o, d]),
                    rand_tensor(&mut rng, &[o]),
                ],
                Box::new(move |g, v| {
                    let o = g.dense(v[0], v[1], Some(v[2])).unwrap();
                    project(g, o, salt)
                }),
            )
        }
        "sigmoid" | "tanh" => (
            vec![rand_tensor(&mut rng, &s).scaled(3.0)],
            Box::new(move |g, v| {
                let o = if op == "sigmoid" {
                    g.sigmoid(v[0])
                } else {
                    g.tanh(v[0])
                };
                project(g, o, salt)
            }),
        ),
        "leaky_relu" => {
            let alpha = rng.random_range(0.01..0.3);
            (
                vec![away_from_zero(&mut rng, &s)],
                Box::new(move |g, v| {
                    let o = g.leaky_relu(v[0], alpha);
                    project(g, o, salt)
                }),
            )
        }
        "mse_loss" => (
            vec![rand_tensor(&mut rng, &s), rand_tensor(&mut rng, &s)],
            Box::new(|g, v| g.mse_loss(v[0], v[1]).unwrap()),
        ),
        "bce_with_logits" => {
            let t = Tensor::new(
                s.to_vec(),
                (0..s.iter().product())
                    .map(|_| rng.random_range(0.0..1.0))
                    .collect(),
            )
            .unwrap();
            (
                vec![rand_tensor(&mut rng, &s).scaled(4.0)],
                Box::new(move |g, v| {
                    let t = g.constant(&t);
                    g.bce_with_logits(v[0], t).unwrap()
                }),
            )
        }
        "l1_norm" => (
            vec![away_from_zero(&mut rng, &s)],
            Box::new(|g, v| g.l1_norm(v[0])),
        ),
        "sum" => (
            vec![rand_tensor(&mut rng, &s)],
            Box::new(|g, v| {
                let sq = g.mul(v[0], v[0]).unwrap();
                g.sum(sq)
            }),
        ),
        other => panic!("no gradient case for `{other}`"),
    };
    GradCase { op, inputs, build }
}

trait Scaled {
    fn scaled(self, c: f64) -> Self;
}

impl Scaled for Tensor<f64> {
    fn scaled(mut self, c: f64) -> Self {
        self.data_mut().iter_mut().for_each(|v| *v *= c);
        self
    }
}

/// Accumulates a bilinear volume one event at a time, straight from the
/// kernel definition.
pub fn brute_force_bilinear(
    events: &[(usize, usize, f64, f64)],
    bins: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; bins * h * w];
    for &(x, y, t_star, p) in events {
        for b in 0..bins {
            let weight = (1.0 - (t_star - b as f64).abs()).max(0.0);
            out[b * h * w + y * w + x] += p * weight;
        }
    }
    out
}
