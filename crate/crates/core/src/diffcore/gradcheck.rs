//! Central finite-difference checks of the reverse-mode gradients.

use rand::Rng;

use super::{ring_window_offsets, AttentionVars, Tape, Tensor, Var, LAYER_NORM_EPS};
use crate::error::Result;
use crate::rng::{self, StreamRng};

/// Default step of the fourth-order stencil. Layer-norm rows of small
/// variance curve sharply, so a second-order stencil leaves about 1e-5 of
/// oracle error at any step; this one stays below 1e-6.
pub const FD_STEP: f64 = 1e-4;

/// Worst relative error of one primitive over a batch of random configs.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub configs: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Fixed, sign-varying projection weights that turn an output tensor into a
/// scalar objective.
fn projection(len: usize) -> Tensor {
    Tensor::from_parts(vec![len], (0..len).map(|i| (0.7 * i as f64 + 0.3).cos()).collect())
}

fn objective<F>(inputs: &[Tensor], build: &F) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let n = tape.value(out).len();
    let flat = tape.reshape(out, &[n])?;
    let w = tape.leaf(projection(n));
    let p = tape.mul(flat, w)?;
    let obj = tape.reduce_mean(p, None)?;
    Ok((tape, vars, obj))
}

/// Relative error `‖g_rev - g_fd‖₂ / max(‖g_rev‖₂, ‖g_fd‖₂)`, with `g_fd`
/// from the fourth-order central stencil of step `h`, for the gradient of a fixed projection of `build`'s output with respect to every
/// input, stacked into one vector.
pub fn check<F>(inputs: &[Tensor], h: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (tape, vars, obj) = objective(inputs, &build)?;
    let grads = tape.backward(obj)?;
    let mut diff2 = 0.0;
    let mut rev2 = 0.0;
    let mut fd2 = 0.0;
    let mut work = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let g = grads.wrt(*v);
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            let mut eval = |x: f64| -> Result<f64> {
                work[i].data_mut()[j] = x;
                let (t, _, o) = objective(&work, &build)?;
                Ok(t.value(o).item())
            };
            let (p1, m1) = (eval(x0 + h)?, eval(x0 - h)?);
            let (p2, m2) = (eval(x0 + 2.0 * h)?, eval(x0 - 2.0 * h)?);
            work[i].data_mut()[j] = x0;
            let fd = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let a = g.data()[j];
            diff2 += (a - fd) * (a - fd);
            rev2 += a * a;
            fd2 += fd * fd;
        }
    }
    let scale = rev2.max(fd2).sqrt();
    Ok(if scale == 0.0 { 0.0 } else { diff2.sqrt() / scale })
}

fn uniform(rng: &mut StreamRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

/// Values whose pairwise gaps are all at least `gap`, so that no
/// finite-difference step crosses a kink of `|·|`.
fn separated(rng: &mut StreamRng, n: usize, gap: f64) -> Vec<f64> {
    let mut base: Vec<f64> = (0..n).map(|i| i as f64 * (gap + 0.5)).collect();
    for i in (1..n).rev() {
        base.swap(i, rng.random_range(0..=i));
    }
    base.iter().map(|b| b + rng.random_range(0.0..0.5) - n as f64 * 0.25).collect()
}

type Case = (Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);

fn attention_params(rng: &mut StreamRng, d: usize) -> Vec<Tensor> {
    let mut out = Vec::new();
    for _ in 0..4 {
        out.push(uniform(rng, &[d, d], -0.6, 0.6));
        out.push(uniform(rng, &[d], -0.3, 0.3));
    }
    out
}

fn attention_vars(v: &[Var]) -> AttentionVars {
    AttentionVars {
        wq: v[0],
        bq: v[1],
        wk: v[2],
        bk: v[3],
        wv: v[4],
        bv: v[5],
        wo: v[6],
        bo: v[7],
    }
}

/// Random inputs and a composition for primitive `name`.
fn case(name: &str, rng: &mut StreamRng) -> Case {
    let n = rng.random_range(1..=5);
    let d = rng.random_range(1..=5);
    match name {
        "affine" => {
            let d_out = rng.random_range(1..=5);
            let bias = rng.random_bool(0.5);
            let mut ins = vec![uniform(rng, &[n, d], -1.0, 1.0), uniform(rng, &[d, d_out], -1.0, 1.0)];
            if bias {
                ins.push(uniform(rng, &[d_out], -1.0, 1.0));
            }
            (ins, Box::new(move |t, v| t.affine(v[0], v[1], v.get(2).copied())))
        }
        "layer_norm" => {
            let d = d + 1;
            (
                vec![uniform(rng, &[n, d], -2.0, 2.0)],
                Box::new(|t, v| Ok(t.layer_norm(v[0], LAYER_NORM_EPS)?.normalized)),
            )
        }
        "cond_scale_shift" => {
            let g = rng.random_range(1..=3);
            let shared = rng.random_bool(0.3);
            let (rows, gshape) = if shared { (n, vec![d]) } else { (n * g, vec![g, d]) };
            (
                vec![
                    uniform(rng, &[rows, d], -2.0, 2.0),
                    uniform(rng, &gshape, -1.0, 1.0),
                    uniform(rng, &gshape, -1.0, 1.0),
                ],
                Box::new(|t, v| t.cond_scale_shift(v[0], v[1], v[2])),
            )
        }
        "gelu" => (vec![uniform(rng, &[n, d], -4.0, 4.0)], Box::new(|t, v| Ok(t.gelu(v[0])))),
        "abs_diff" => {
            let a = uniform(rng, &[n, d], -2.0, 2.0);
            let b: Vec<f64> = a
                .data()
                .iter()
                .map(|x| {
                    let off = rng.random_range(0.05..1.0);
                    if rng.random_bool(0.5) {
                        x + off
                    } else {
                        x - off
                    }
                })
                .collect();
            let b = Tensor::from_parts(vec![n, d], b);
            (vec![a, b], Box::new(|t, v| t.abs_diff(v[0], v[1])))
        }
        "reduce_mean" => {
            let rank = rng.random_range(1..=3);
            let shape: Vec<usize> = (0..rank).map(|_| rng.random_range(1..=4)).collect();
            let axis = if rng.random_bool(0.3) {
                None
            } else {
                Some(rng.random_range(0..rank))
            };
            (vec![uniform(rng, &shape, -2.0, 2.0)], Box::new(move |t, v| t.reduce_mean(v[0], axis)))
        }
        "concat" => {
            let axis = rng.random_range(0..2);
            let parts = rng.random_range(1..=3);
            let ins = (0..parts)
                .map(|_| {
                    let k = rng.random_range(1..=3);
                    let shape = if axis == 0 { [k, d] } else { [n, k] };
                    uniform(rng, &shape, -1.0, 1.0)
                })
                .collect();
            (ins, Box::new(move |t, v| t.concat(v, axis)))
        }
        "gather_ring" => {
            let ring = rng.random_range(1..=6);
            let rings = rng.random_range(1..=3);
            let offsets: Vec<isize> = (0..rng.random_range(1..=4)).map(|_| rng.random_range(-7i64..=7) as isize).collect();
            (
                vec![uniform(rng, &[ring * rings, d], -1.0, 1.0)],
                Box::new(move |t, v| t.gather_ring(v[0], ring, &offsets)),
            )
        }
        "ring_attention" => {
            let ring = rng.random_range(1..=6);
            let rings = rng.random_range(1..=2);
            let heads = rng.random_range(1..=3);
            let dm = heads * rng.random_range(1..=3);
            let window = rng.random_range(1..=3);
            let offsets = ring_window_offsets(window, ring);
            let rows = ring * rings;
            (
                (0..3).map(|_| uniform(rng, &[rows, dm], -1.0, 1.0)).collect(),
                Box::new(move |t, v| t.ring_attention(v[0], v[1], v[2], ring, heads, &offsets)),
            )
        }
        "local_attention" => {
            let ring = rng.random_range(1..=6);
            let heads = rng.random_range(1..=2);
            let dm = heads * rng.random_range(1..=3);
            let window = rng.random_range(1..=3);
            let mut ins = vec![uniform(rng, &[ring, dm], -1.0, 1.0)];
            ins.extend(attention_params(rng, dm));
            (
                ins,
                Box::new(move |t, v| t.local_attention(v[0], ring, window, heads, &attention_vars(&v[1..]))),
            )
        }
        "add" => (
            vec![uniform(rng, &[n, d], -1.0, 1.0), uniform(rng, &[n, d], -1.0, 1.0)],
            Box::new(|t, v| t.add(v[0], v[1])),
        ),
        "mul" => (
            vec![uniform(rng, &[n, d], -1.0, 1.0), uniform(rng, &[n, d], -1.0, 1.0)],
            Box::new(|t, v| t.mul(v[0], v[1])),
        ),
        "scale_shift" => {
            let (s, c) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            (vec![uniform(rng, &[n, d], -1.0, 1.0)], Box::new(move |t, v| Ok(t.scale_shift(v[0], s, c))))
        }
        "reshape" => (
            vec![uniform(rng, &[n, d], -1.0, 1.0)],
            Box::new(move |t, v| t.reshape(v[0], &[d, n])),
        ),
        "crps_fair" | "crps_biased" => {
            let fair = name == "crps_fair";
            let members = rng.random_range(2..=5);
            let mut s = vec![0.0; members * d];
            let mut y = vec![0.0; d];
            for c in 0..d {
                let col = separated(rng, members + 1, 0.05);
                for m in 0..members {
                    s[m * d + c] = col[m];
                }
                y[c] = col[members];
            }
            (
                vec![
                    Tensor::from_parts(vec![members, d], s),
                    Tensor::from_parts(vec![d], y),
                ],
                Box::new(move |t, v| t.crps(v[0], v[1], fair)),
            )
        }
        other => unreachable!("no gradient case for {other}"),
    }
}

/// Every primitive with its tolerance.
pub const PRIMITIVES: &[(&str, f64)] = &[
    ("affine", 1e-6),
    ("layer_norm", 1e-5),
    ("cond_scale_shift", 1e-5),
    ("gelu", 1e-4),
    ("abs_diff", 1e-4),
    ("reduce_mean", 1e-4),
    ("concat", 1e-4),
    ("gather_ring", 1e-4),
    ("ring_attention", 1e-4),
    ("local_attention", 1e-4),
    ("add", 1e-4),
    ("mul", 1e-4),
    ("scale_shift", 1e-4),
    ("reshape", 1e-4),
    ("crps_fair", 1e-4),
    ("crps_biased", 1e-4),
];

/// Checks every primitive over `configs` random configurations each.
pub fn check_primitives(configs: usize, seed: u64) -> Result<Vec<CheckResult>> {
    PRIMITIVES
        .iter()
        .enumerate()
        .map(|(i, &(name, tolerance))| {
            let mut rng = rng::stream(seed, i as u64, "gradcheck", 0);
            let mut worst: f64 = 0.0;
            for _ in 0..configs {
                let (inputs, build) = case(name, &mut rng);
                worst = worst.max(check(&inputs, FD_STEP, build)?);
            }
            Ok(CheckResult {
                name,
                configs,
                max_rel_err: worst,
                tolerance,
            })
        })
        .collect()
}
