//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redattn::attention::{reduce_attention, AttentionParams};
use redattn::model::{Autoencoder, ModelConfig};
use redattn::{Result, Tape, Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const FLOOR: f64 = 1e-6;

/// `|a - b|` relative to the larger magnitude, never dividing by less than
/// [`FLOOR`].
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

/// Records a scalar loss over `inputs`, returning it and the handles whose
/// gradients are checked (one per input, same order).
pub type Build = Box<dyn Fn(&mut Tape, &[Tensor]) -> Result<(Var, Vec<Var>)>>;

pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

fn eval(case: &Case, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let (loss, _) = (case.build)(&mut tape, inputs).unwrap();
    tape.value(loss).item().unwrap()
}

/// Worst relative error between the tape's gradient and central
/// differences over every input element.
pub fn gradcheck(case: &Case) -> f64 {
    let mut tape = Tape::new();
    let (loss, vars) = (case.build)(&mut tape, &case.inputs).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    let mut inputs = case.inputs.clone();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for (j, &expected) in analytic.iter().enumerate() {
            let orig = inputs[i].data()[j];
            inputs[i].data_mut()[j] = orig + STEP;
            let up = eval(case, &inputs);
            inputs[i].data_mut()[j] = orig - STEP;
            let down = eval(case, &inputs);
            inputs[i].data_mut()[j] = orig;
            worst = worst.max(rel_err(expected, (up - down) / (2.0 * STEP)));
        }
    }
    worst
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, 1.0, rng).with_grad()
}

fn leaves(tape: &mut Tape, inputs: &[Tensor]) -> Vec<Var> {
    inputs.iter().map(|t| tape.leaf(t)).collect()
}

/// Reduces any tensor to a scalar through fixed pseudo-random weights, so
/// every output element reaches the loss with a distinct coefficient.
pub fn weigh(tape: &mut Tape, v: Var) -> Result<Var> {
    let shape = tape.value(v).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let w = tape.constant(Tensor::uniform(&shape, 1.0, &mut rng));
    let p = tape.mul(v, w)?;
    tape.sum(p)
}

pub const CASE_KINDS: usize = 13;

/// A randomised gradient-check case; `kind` selects the operation.
pub fn case(kind: usize, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = |lo: usize, hi: usize| rng.gen_range(lo..=hi);
    let (b, m, k, n) = (d(1, 3), d(1, 4), d(1, 4), d(1, 4));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    match kind % CASE_KINDS {
        0 => Case {
            name: "matmul",
            inputs: vec![rand_tensor(&mut rng, &[m, k]), rand_tensor(&mut rng, &[k, n])],
            build: Box::new(|t, x| {
                let v = leaves(t, x);
                let y = t.matmul(v[0], v[1])?;
                Ok((weigh(t, y)?, v))
            }),
        },
        1 => Case {
            name: "matmul (batched, shared rhs)",
            inputs: vec![rand_tensor(&mut rng, &[b, m, k]), rand_tensor(&mut rng, &[k, n])],
            build: Box::new(|t, x| {
                let v = leaves(t, x);
                let y = t.matmul(v[0], v[1])?;
                Ok((weigh(t, y)?, v))
            }),
        },
        2 => Case {
            name: "matmul_nt",
            inputs: vec![rand_tensor(&mut rng, &[b, m, k]), rand_tensor(&mut rng, &[b, n, k])],
            build: Box::new(|t, x| {
                let v = leaves(t, x);
                let y = t.matmul_nt(v[0], v[1])?;
                Ok((weigh(t, y)?, v))
            }),
        },
        3 => Case {
            name: "add",
            inputs: vec![rand_tensor(&mut rng, &[b, m, n]), rand_tensor(&mut rng, &[b, m, n])],
            build: Box::new(|t, x| {
                let v = leaves(t, x);
                let y = t.add(v[0], v[1])?;
                Ok((weigh(t, y)?, v))
            }),
        },
        4 => Case {
            name: "sub (broadcast)",
            inputs: vec![rand_tensor(&mut rng, &[b, m, n]), rand_tensor(&mut rng, &[m, n])],
            build: Box::new(|t, x| {
                let v = leaves(t, x);
                let y = t.sub(v[0], v[1])?;
                Ok((weigh(t, y)?, v))
            }),
        },
        5 => Case {
            name: "mul",
            inputs: vec![rand_tensor(&mut rng, &[m, n]), rand_tensor(&mut rng, &[m, n])],
            build: Box::new(|t, x| {
                let v = leaves(t, x);
                let y = t.mul(v[0], v[1])?;
                Ok((weigh(t, y)?, v))
            }),
        },
        6 => {
            let factor = rng.gen_range(-2.0..2.0);
            Case {
                name: "scale",
                inputs: vec![rand_tensor(&mut rng, &[b, m, n])],
                build: Box::new(move |t, x| {
                    let v = leaves(t, x);
                    let y = t.scale(v[0], factor)?;
                    Ok((weigh(t, y)?, v))
                }),
            }
        }
        7 => Case {
            name: "softmax",
            inputs: vec![Tensor::uniform(&[b, m, n + 1], 3.0, &mut rng).with_grad()],
            build: Box::new(|t, x| {
                let v = leaves(t, x);
                let y = t.softmax(v[0])?;
                Ok((weigh(t, y)?, v))
            }),
        },
        8 => {
            let classes = n + 1;
            let targets: Vec<usize> = (0..b * m).map(|_| rng.gen_range(0..classes)).collect();
            Case {
                name: "cross_entropy",
                inputs: vec![Tensor::uniform(&[b, m, classes], 3.0, &mut rng).with_grad()],
                build: Box::new(move |t, x| {
                    let v = leaves(t, x);
                    Ok((t.cross_entropy(v[0], &targets)?, v))
                }),
            }
        }
        9 => {
            let vocab = k + 1;
            let ids: Vec<usize> = (0..b * m).map(|_| rng.gen_range(0..vocab)).collect();
            Case {
                name: "embedding",
                inputs: vec![rand_tensor(&mut rng, &[vocab, n])],
                build: Box::new(move |t, x| {
                    let v = leaves(t, x);
                    let y = t.embedding(v[0], &ids, &[b, m])?;
                    Ok((weigh(t, y)?, v))
                }),
            }
        }
        10 => Case {
            name: "dropout",
            inputs: vec![rand_tensor(&mut rng, &[b, m, n])],
            build: Box::new(move |t, x| {
                let v = leaves(t, x);
                // same seed on every evaluation, so the mask is fixed
                let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
                let y = t.dropout(v[0], 0.3, &mut mask_rng)?;
                Ok((weigh(t, y)?, v))
            }),
        },
        11 => {
            let (n_in, n_out, d_in, d_attn) = (m + 1, k, n, b + 1);
            Case {
                name: "reduce_attention",
                inputs: vec![
                    rand_tensor(&mut rng, &[b, n_in, d_in]),
                    rand_tensor(&mut rng, &[d_in, d_attn]),
                    rand_tensor(&mut rng, &[d_in, d_attn]),
                    rand_tensor(&mut rng, &[d_in, d_attn]),
                    rand_tensor(&mut rng, &[n_out, n_in]),
                ],
                build: Box::new(|t, x| {
                    let xv = t.leaf(&x[0]);
                    let p = AttentionParams::new(x[1].clone(), x[2].clone(), x[3].clone(), x[4].clone())?;
                    let pv = p.watch(t);
                    let y = reduce_attention(t, xv, &pv)?;
                    let mut vars = vec![xv];
                    vars.extend(pv.vars());
                    Ok((weigh(t, y)?, vars))
                }),
            }
        }
        _ => model_case(seed),
    }
}

/// The whole autoencoder at N=4, L=2, V=5, d_model=3, d_attn=4, scored by
/// cross-entropy against its own input.
pub fn model_case(seed: u64) -> Case {
    let cfg = ModelConfig {
        d_model: 3,
        d_attn: 4,
        ..ModelConfig::new(4, 2, 5)
    };
    let model = Autoencoder::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<usize> = (0..4).map(|_| rng.gen_range(0..5)).collect();
    let inputs = model.named_params().into_iter().map(|(_, t)| t.clone()).collect();
    Case {
        name: "autoencoder",
        inputs,
        build: Box::new(move |t, x| {
            let mut m = model.clone();
            for (p, v) in m.params_mut().into_iter().zip(x) {
                p.data_mut().copy_from_slice(v.data());
            }
            let vars = m.watch(t);
            let logits = m.forward_on(t, &vars, &[&ids], None)?;
            Ok((t.cross_entropy(logits, &ids)?, vars.all()))
        }),
    }
}

/// Textbook scaled dot-product attention with plain loops:
/// `softmax(Q K^T / sqrt(d)) V` for one sequence.
pub fn naive_attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = k[0].len() as f64;
    q.iter()
        .map(|qi| {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = e.iter().sum();
            (0..v[0].len())
                .map(|c| e.iter().zip(v).map(|(w, vj)| w / z * vj[c]).sum())
                .collect()
        })
        .collect()
}

pub fn naive_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| row.iter().zip(b).map(|(x, br)| x * br[j]).sum())
                .collect()
        })
        .collect()
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.data().chunks(t.last_dim()).map(<[f64]>::to_vec).collect()
}
