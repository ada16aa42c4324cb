//! Random small expression graphs over every tape primitive, replayable in
//! reverse mode (parameters as leaves) and forward mode (a scalar input).

use std::sync::Arc;

use bowsim_core::autodiff::{Layout, ParamVector, Tape, Unary, Var};
use bowsim_core::{Dual, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
pub enum Bin {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Debug)]
pub enum Step {
    Affine { src: usize, w: usize, b: Option<usize> },
    Unary { src: usize, f: Unary },
    Binary { a: usize, b: usize, op: Bin },
    Scale { src: usize, c: f64 },
    Offset { src: usize, c: f64 },
    SumCols { src: usize, start: usize, end: usize },
    Gather { src: usize, index: Vec<usize> },
}

/// Node 0 is the input column `x_i = t · c_i` and every step appends a node.
/// The reverse-mode loss reduces all nodes; forward mode returns the last.
#[derive(Clone, Debug)]
pub struct Program {
    pub rows: usize,
    pub input_weights: Vec<f64>,
    pub steps: Vec<Step>,
    pub layout: Layout,
    /// Reduce the output by mean (else sum) in reverse mode.
    pub mean: bool,
}

const UNARIES: [Unary; 5] = [Unary::Tanh, Unary::Sin, Unary::Cos, Unary::Exp, Unary::Square];

impl Program {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = rng.random_range(1..=4);
        let input_weights = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut shapes: Vec<(usize, usize)> = vec![(rows, 1)];
        let mut blocks: Vec<(String, usize, usize)> = Vec::new();
        let mut steps = Vec::new();
        let new_block = |blocks: &mut Vec<(String, usize, usize)>, r: usize, c: usize| {
            blocks.push((format!("b{}", blocks.len()), r, c));
            blocks.len() - 1
        };

        // the first step always reads the input through parameters
        let width = rng.random_range(1..=4);
        let w = new_block(&mut blocks, 1, width);
        let b = new_block(&mut blocks, 1, width);
        steps.push(Step::Affine { src: 0, w, b: Some(b) });
        shapes.push((rows, width));

        let n_steps = rng.random_range(3..=9);
        while steps.len() < n_steps {
            let src = rng.random_range(0..shapes.len());
            let (r, c) = shapes[src];
            let step = match rng.random_range(0..7) {
                0 => {
                    let k = rng.random_range(1..=4);
                    let w = new_block(&mut blocks, c, k);
                    let b = rng.random_bool(0.5).then(|| new_block(&mut blocks, 1, k));
                    shapes.push((r, k));
                    Step::Affine { src, w, b }
                }
                1 => {
                    shapes.push((r, c));
                    Step::Unary { src, f: UNARIES[rng.random_range(0..UNARIES.len())] }
                }
                2 => {
                    let partners: Vec<usize> = (0..shapes.len()).filter(|&j| shapes[j] == (r, c)).collect();
                    let b = partners[rng.random_range(0..partners.len())];
                    let op = [Bin::Add, Bin::Sub, Bin::Mul][rng.random_range(0..3)];
                    shapes.push((r, c));
                    Step::Binary { a: src, b, op }
                }
                3 => {
                    shapes.push((r, c));
                    Step::Scale { src, c: rng.random_range(-1.5..1.5) }
                }
                4 => {
                    shapes.push((r, c));
                    Step::Offset { src, c: rng.random_range(-1.0..1.0) }
                }
                5 => {
                    let start = rng.random_range(0..c);
                    let end = rng.random_range(start + 1..=c);
                    shapes.push((r, 1));
                    Step::SumCols { src, start, end }
                }
                _ => {
                    let index: Vec<usize> = (0..rows).map(|_| rng.random_range(0..r)).collect();
                    shapes.push((rows, c));
                    Step::Gather { src, index }
                }
            };
            steps.push(step);
        }
        Program { rows, input_weights, steps, layout: Layout::new(blocks), mean: rng.random_bool(0.5) }
    }

    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let data = (0..self.layout.len()).map(|_| rng.random_range(-0.8..0.8)).collect();
        ParamVector::from_flat(&self.layout, data).unwrap()
    }

    fn input(&self, t: f64) -> Mat {
        Mat::column(&self.input_weights.iter().map(|c| c * t).collect::<Vec<_>>())
    }

    /// Scalar loss with parameters as tape leaves.
    pub fn record(&self, tape: &mut Tape, params: &[Var], t: f64) -> Var {
        let mut nodes = vec![tape.constant(self.input(t))];
        for s in &self.steps {
            let v = match *s {
                Step::Affine { src, w, b } => tape.affine(nodes[src], params[w], b.map(|b| params[b])),
                Step::Unary { src, f } => {
                    // keep exponentials in a tame range
                    let x = if matches!(f, Unary::Exp) { tape.scale(nodes[src], 0.3) } else { nodes[src] };
                    tape.unary(x, f)
                }
                Step::Binary { a, b, op } => match op {
                    Bin::Add => tape.add(nodes[a], nodes[b]),
                    Bin::Sub => tape.sub(nodes[a], nodes[b]),
                    Bin::Mul => tape.mul(nodes[a], nodes[b]),
                },
                Step::Scale { src, c } => tape.scale(nodes[src], c),
                Step::Offset { src, c } => tape.offset(nodes[src], c),
                Step::SumCols { src, start, end } => tape.sum_cols(nodes[src], start, end),
                Step::Gather { src, ref index } => tape.gather_rows(nodes[src], Arc::from(index.as_slice())),
            };
            nodes.push(v);
        }
        // every node enters the loss, so every parameter influences it
        let mut total = None;
        for &v in &nodes[1..] {
            let r = if self.mean { tape.mean(v) } else { tape.sum(v) };
            total = Some(match total {
                Some(acc) => tape.add(acc, r),
                None => r,
            });
        }
        total.expect("programs have at least one step")
    }

    /// Output node as a function of the scalar input `t`.
    pub fn record_dual(&self, tape: &mut Tape, params: &ParamVector, t: Dual) -> Dual {
        let vars: Vec<Var> = (0..params.layers().len()).map(|i| tape.constant(params.block_mat(i))).collect();
        let spread = tape.d_gather_rows(t, Arc::from(vec![0; self.rows]));
        let c = tape.dual_constant(Mat::column(&self.input_weights), None);
        let mut nodes = vec![tape.d_mul(spread, c)];
        for s in &self.steps {
            let v = match *s {
                Step::Affine { src, w, b } => tape.d_affine(nodes[src], vars[w], b.map(|b| vars[b])),
                Step::Unary { src, f } => match f {
                    Unary::Tanh => tape.d_tanh(nodes[src]),
                    Unary::Sin => tape.d_sin(nodes[src]),
                    Unary::Cos => tape.d_cos(nodes[src]),
                    Unary::Exp => {
                        let x = tape.d_scale(nodes[src], 0.3);
                        tape.d_exp(x)
                    }
                    Unary::Square => tape.d_square(nodes[src]),
                },
                Step::Binary { a, b, op } => match op {
                    Bin::Add => tape.d_add(nodes[a], nodes[b]),
                    Bin::Sub => tape.d_sub(nodes[a], nodes[b]),
                    Bin::Mul => tape.d_mul(nodes[a], nodes[b]),
                },
                Step::Scale { src, c } => tape.d_scale(nodes[src], c),
                Step::Offset { src, c } => tape.d_offset(nodes[src], c),
                Step::SumCols { src, start, end } => tape.d_sum_cols(nodes[src], start, end),
                Step::Gather { src, ref index } => tape.d_gather_rows(nodes[src], Arc::from(index.as_slice())),
            };
            nodes.push(v);
        }
        *nodes.last().unwrap()
    }

    pub fn loss(&self, params: &ParamVector, t: f64) -> f64 {
        let (mut tape, vars) = Tape::with_params(params);
        let l = self.record(&mut tape, &vars, t);
        tape.value(l).item()
    }
}

/// Fourth-order central difference `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Componentwise relative error with a floor of `max(1e-3 · max|reference|,
/// 1e-6)`, so entries that are zero up to rounding do not dominate.
pub fn relative_error(value: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-6);
    value.iter().zip(reference).map(|(a, b)| (a - b).abs() / b.abs().max(floor)).fold(0.0, f64::max)
}

/// Worst relative error of the reverse-mode gradient against central
/// differences over `graphs` random programs.
pub fn reverse_mode_sweep(graphs: u64) -> f64 {
    let mut worst = 0.0f64;
    for g in 0..graphs {
        let prog = Program::random(g);
        let params = prog.init_params(g);
        let t = 0.7;
        let (mut tape, vars) = Tape::with_params(&params);
        let loss = prog.record(&mut tape, &vars, t);
        let grad = tape.gradient(loss).unwrap();
        let fd: Vec<f64> = (0..params.len())
            .map(|i| {
                let f = |x: f64| {
                    let mut p = params.clone();
                    p.as_mut_slice()[i] = x;
                    prog.loss(&p, t)
                };
                central_difference(f, params.as_slice()[i], 1e-3)
            })
            .collect();
        worst = worst.max(relative_error(grad.as_slice(), &fd));
    }
    worst
}

/// Worst relative error of forward-mode input derivatives against central
/// differences in `t`.
pub fn forward_mode_sweep(graphs: u64) -> f64 {
    let mut worst = 0.0f64;
    for g in 0..graphs {
        let prog = Program::random(g);
        let params = prog.init_params(g);
        let t = 0.4;
        let (_, derivative) =
            bowsim_core::autodiff::input_derivative(|tape, x| Ok(prog.record_dual(tape, &params, x)), t).unwrap();
        let eval = |x: f64| {
            bowsim_core::autodiff::input_derivative(|tape, d| Ok(prog.record_dual(tape, &params, d)), x).unwrap().0
        };
        let n = derivative.len();
        let fd: Vec<f64> = (0..n).map(|k| central_difference(|x| eval(x).as_slice()[k], t, 1e-3)).collect();
        worst = worst.max(relative_error(derivative.as_slice(), &fd));
    }
    worst
}
