//! Finite-difference verification of tape gradients.
//!
//! The checker never touches `backward`: it re-evaluates a scalar function of
//! the inputs at `x ± h` and forms central differences. Losses are probed
//! with a fixed random weighting so per-element errors cannot cancel in a
//! plain sum.

use super::{Result, Tape, TensorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

/// Relative error used throughout: |a - n| / max(1, |a|, |n|).
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Central differences of `f` with respect to every element of every input.
pub fn central_diff<F>(mut f: F, inputs: &[Vec<f64>], h: f64) -> Vec<Vec<f64>>
where
    F: FnMut(&[Vec<f64>]) -> f64,
{
    let mut work: Vec<Vec<f64>> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for p in 0..inputs.len() {
        let mut g = vec![0.0; inputs[p].len()];
        for i in 0..inputs[p].len() {
            let orig = work[p][i];
            work[p][i] = orig + h;
            let up = f(&work);
            work[p][i] = orig - h;
            let down = f(&work);
            work[p][i] = orig;
            g[i] = (up - down) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

/// Outcome of checking one op over `instances` random cases.
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
}

impl OpCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

struct OpSpec {
    name: &'static str,
    /// shapes of the differentiable inputs for one instance
    shapes: fn(&mut ChaCha8Rng) -> Vec<Vec<usize>>,
    /// builds the op's output(s) from bound input ids
    build: fn(&mut Tape, &[TensorId], u64) -> Result<Vec<TensorId>>,
}

fn rand_data(shape: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n: usize = shape.iter().product();
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Separates every pair of values in each column by at least `margin` so a
/// ±h probe cannot flip an argmax.
fn enforce_margin(data: &mut [f64], cols: usize, margin: f64) {
    let rows = data.len() / cols;
    for c in 0..cols {
        let mut order: Vec<usize> = (0..rows).collect();
        order.sort_by(|&a, &b| data[a * cols + c].partial_cmp(&data[b * cols + c]).unwrap());
        for (rank, &r) in order.iter().enumerate() {
            data[r * cols + c] += rank as f64 * margin;
        }
    }
}

fn bind_all(tape: &mut Tape, shapes: &[Vec<usize>], data: &[Vec<f64>]) -> Result<Vec<TensorId>> {
    shapes
        .iter()
        .zip(data)
        .map(|(s, d)| tape.leaf(s.clone(), d.clone()))
        .collect()
}

/// Probe-weighted scalar loss over one or more outputs.
fn probe_loss(tape: &mut Tape, outs: &[TensorId], seed: u64) -> Result<TensorId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut total: Option<TensorId> = None;
    for &out in outs {
        let shape = tape.shape(out).to_vec();
        let n: usize = shape.iter().product();
        let probe: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = tape.leaf(shape, probe)?;
        let prod = tape.mul(out, w)?;
        let s = tape.sum_all(prod)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    Ok(total.expect("at least one output"))
}

fn check_instance(spec: &OpSpec, instance_seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed);
    let shapes = (spec.shapes)(&mut rng);
    let mut data: Vec<Vec<f64>> = shapes.iter().map(|s| rand_data(s, &mut rng)).collect();
    if spec.name == "max_over_time" || spec.name == "elementwise_max" {
        for (s, d) in shapes.iter().zip(data.iter_mut()) {
            enforce_margin(d, s[s.len() - 1], 1e-3);
        }
    }

    // analytic gradients from the tape
    let mut tape = Tape::new();
    let ids = bind_all(&mut tape, &shapes, &data)?;
    let outs = (spec.build)(&mut tape, &ids, instance_seed)?;
    let loss = probe_loss(&mut tape, &outs, instance_seed)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| tape.grad(id).to_vec()).collect();

    // numeric gradients from re-evaluation only
    let eval = |vals: &[Vec<f64>]| -> f64 {
        let mut t = Tape::new();
        let ids = bind_all(&mut t, &shapes, vals).expect("bind");
        let outs = (spec.build)(&mut t, &ids, instance_seed).expect("forward");
        let loss = probe_loss(&mut t, &outs, instance_seed).expect("loss");
        t.value(loss)
    };
    let numeric = central_diff(eval, &data, STEP);

    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&av, &nv) in a.iter().zip(n) {
            worst = worst.max(rel_err(av, nv));
        }
    }
    Ok(worst)
}

fn specs() -> Vec<OpSpec> {
    vec![
        OpSpec {
            name: "matmul",
            shapes: |rng| {
                let (m, k, n) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
                vec![vec![m, k], vec![k, n]]
            },
            build: |t, ids, _| Ok(vec![t.matmul(ids[0], ids[1])?]),
        },
        OpSpec {
            name: "matvec",
            shapes: |rng| {
                let (m, n) = (rng.gen_range(1..6), rng.gen_range(1..6));
                vec![vec![m, n], vec![n]]
            },
            build: |t, ids, _| Ok(vec![t.matvec(ids[0], ids[1])?]),
        },
        OpSpec {
            name: "conv1d_same",
            shapes: |rng| {
                let len = rng.gen_range(1..8);
                let k = rng.gen_range(1..5); // includes even kernels
                let d_in = rng.gen_range(1..4);
                let d_out = rng.gen_range(1..4);
                vec![vec![len, d_in], vec![k, d_in, d_out], vec![d_out]]
            },
            build: |t, ids, _| Ok(vec![t.conv1d_same(ids[0], ids[1], ids[2])?]),
        },
        OpSpec {
            name: "max_over_time",
            shapes: |rng| vec![vec![rng.gen_range(1..8), rng.gen_range(1..5)]],
            build: |t, ids, _| Ok(vec![t.max_over_time(ids[0])?]),
        },
        OpSpec {
            name: "elementwise_max",
            shapes: |rng| {
                let shape = vec![rng.gen_range(1..5), rng.gen_range(1..5)];
                vec![shape.clone(), shape.clone(), shape]
            },
            build: |t, ids, _| Ok(vec![t.elementwise_max(ids)?]),
        },
        OpSpec {
            name: "sigmoid",
            shapes: |rng| vec![vec![rng.gen_range(1..6), rng.gen_range(1..4)]],
            build: |t, ids, _| Ok(vec![t.sigmoid(ids[0])?]),
        },
        OpSpec {
            name: "tanh",
            shapes: |rng| vec![vec![rng.gen_range(1..6), rng.gen_range(1..4)]],
            build: |t, ids, _| Ok(vec![t.tanh(ids[0])?]),
        },
        OpSpec {
            name: "add",
            shapes: |rng| {
                let shape = vec![rng.gen_range(1..5), rng.gen_range(1..5)];
                vec![shape.clone(), shape]
            },
            build: |t, ids, _| Ok(vec![t.add(ids[0], ids[1])?]),
        },
        OpSpec {
            name: "mul",
            shapes: |rng| {
                let shape = vec![rng.gen_range(1..5), rng.gen_range(1..5)];
                vec![shape.clone(), shape]
            },
            build: |t, ids, _| Ok(vec![t.mul(ids[0], ids[1])?]),
        },
        OpSpec {
            name: "scalar_mul",
            shapes: |rng| vec![vec![rng.gen_range(1..6)]],
            build: |t, ids, _| Ok(vec![t.scalar_mul(ids[0], -1.7)?]),
        },
        OpSpec {
            name: "add_scalar",
            shapes: |rng| vec![vec![rng.gen_range(1..5), rng.gen_range(1..5)], vec![1]],
            build: |t, ids, _| Ok(vec![t.add_scalar(ids[0], ids[1])?]),
        },
        OpSpec {
            name: "add_row_vector",
            shapes: |rng| {
                let d = rng.gen_range(1..5);
                vec![vec![rng.gen_range(1..5), d], vec![d]]
            },
            build: |t, ids, _| Ok(vec![t.add_row_vector(ids[0], ids[1])?]),
        },
        OpSpec {
            name: "outer_add",
            shapes: |rng| vec![vec![rng.gen_range(1..6)], vec![rng.gen_range(1..6)]],
            build: |t, ids, _| Ok(vec![t.outer_add(ids[0], ids[1])?]),
        },
        OpSpec {
            name: "concat_vec",
            shapes: |rng| vec![vec![rng.gen_range(1..5)], vec![rng.gen_range(1..5)]],
            build: |t, ids, _| Ok(vec![t.concat_vec(ids)?]),
        },
        OpSpec {
            name: "concat_cols",
            shapes: |rng| {
                let rows = rng.gen_range(1..5);
                vec![vec![rows, rng.gen_range(1..4)], vec![rows, rng.gen_range(1..4)]]
            },
            build: |t, ids, _| Ok(vec![t.concat_cols(ids[0], ids[1])?]),
        },
        OpSpec {
            name: "stack_rows",
            shapes: |rng| {
                let d = rng.gen_range(1..5);
                vec![vec![d], vec![d], vec![d]]
            },
            build: |t, ids, _| Ok(vec![t.stack_rows(ids)?]),
        },
        OpSpec {
            name: "gather_rows",
            shapes: |rng| vec![vec![rng.gen_range(2..6), rng.gen_range(1..4)]],
            build: |t, ids, seed| {
                let rows = t.shape(ids[0])[0];
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51);
                let idx: Vec<usize> = (0..4).map(|_| rng.gen_range(0..rows)).collect();
                Ok(vec![t.gather_rows(ids[0], &idx)?])
            },
        },
        OpSpec {
            name: "row_vec",
            shapes: |rng| vec![vec![rng.gen_range(1..5), rng.gen_range(1..5)]],
            build: |t, ids, _| Ok(vec![t.row_vec(ids[0], 0)?]),
        },
        OpSpec {
            name: "slice_vec",
            shapes: |rng| vec![vec![rng.gen_range(3..8)]],
            build: |t, ids, _| {
                let n = t.shape(ids[0])[0];
                Ok(vec![t.slice_vec(ids[0], 1, n - 2)?])
            },
        },
        OpSpec {
            name: "transpose",
            shapes: |rng| vec![vec![rng.gen_range(1..5), rng.gen_range(1..5)]],
            build: |t, ids, _| Ok(vec![t.transpose(ids[0])?]),
        },
        OpSpec {
            name: "reshape",
            shapes: |rng| {
                let (a, b) = (rng.gen_range(1..5), rng.gen_range(1..5));
                vec![vec![a, b]]
            },
            build: |t, ids, _| {
                let n: usize = t.shape(ids[0]).iter().product();
                Ok(vec![t.reshape(ids[0], vec![n])?])
            },
        },
        OpSpec {
            name: "row_softmax",
            shapes: |rng| vec![vec![rng.gen_range(1..5), rng.gen_range(2..6)]],
            build: |t, ids, _| Ok(vec![t.row_softmax(ids[0])?]),
        },
        OpSpec {
            name: "col_sum",
            shapes: |rng| vec![vec![rng.gen_range(1..5), rng.gen_range(1..5)]],
            build: |t, ids, _| Ok(vec![t.col_sum(ids[0])?]),
        },
        OpSpec {
            name: "sum_all",
            shapes: |rng| vec![vec![rng.gen_range(1..5), rng.gen_range(1..5)]],
            build: |t, ids, _| Ok(vec![t.sum_all(ids[0])?]),
        },
        OpSpec {
            name: "dropout",
            shapes: |rng| vec![vec![rng.gen_range(4..10)]],
            build: |t, ids, seed| {
                // fixed per-instance mask so re-evaluations see one function
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd0);
                Ok(vec![t.dropout(ids[0], 0.25, true, &mut rng)?])
            },
        },
        OpSpec {
            name: "bce_with_logits",
            shapes: |rng| vec![vec![rng.gen_range(1..6), rng.gen_range(1..4)]],
            build: |t, ids, seed| {
                let n: usize = t.shape(ids[0]).iter().product();
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbce);
                let targets: Vec<f64> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect();
                Ok(vec![t.bce_with_logits(ids[0], &targets)?])
            },
        },
        OpSpec {
            name: "lstm_cell",
            shapes: |rng| {
                let d_in = rng.gen_range(1..4);
                let h = rng.gen_range(1..4);
                vec![
                    vec![d_in],
                    vec![h],
                    vec![h],
                    vec![4 * h, d_in],
                    vec![4 * h, h],
                    vec![4 * h],
                ]
            },
            build: |t, ids, _| {
                let w = super::LstmWeights {
                    wx: ids[3],
                    wh: ids[4],
                    b: ids[5],
                };
                let (h, c) = t.lstm_cell(ids[0], ids[1], ids[2], w)?;
                Ok(vec![h, c])
            },
        },
    ]
}

/// Runs `instances` random gradient checks per op and reports the worst
/// relative error for each.
pub fn check_all_ops(instances: usize, seed: u64) -> Result<Vec<OpCheck>> {
    let mut out = Vec::new();
    for spec in specs() {
        let mut worst = 0.0f64;
        for i in 0..instances {
            let s = seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(i as u64)
                .wrapping_add(spec.name.len() as u64);
            worst = worst.max(check_instance(&spec, s)?);
        }
        out.push(OpCheck {
            name: spec.name,
            instances,
            max_rel_err: worst,
        });
    }
    Ok(out)
}
