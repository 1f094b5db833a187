//! Central finite differences against the reverse sweep, in f64. Shared by
//! the gradcheck tests and the acceptance runner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajgeos::tensor::{Tape, Tensor, Var};

pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-5;
pub const SEEDS: u64 = 100;

pub type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

/// Entries bounded away from zero so relu kinks stay out of reach of `H`.
pub fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_rows(rows, cols, data).unwrap()
}

/// Projects the output onto a fixed random weight so every entry matters.
pub fn objective(
    inputs: &[Tensor<f64>],
    build: &Build,
    seed: u64,
    grad: bool,
) -> (f64, Vec<Tensor<f64>>) {
    let mut tape = Tape::new(true);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let shape = tape.shape(out).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n: usize = shape.iter().product();
    let w = tape.constant(
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
    );
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum_all(prod);
    let value = tape.value(loss).item();
    if !grad {
        return (value, Vec::new());
    }
    let g = tape.backward(loss).unwrap();
    let grads = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.wrt(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();
    (value, grads)
}

pub fn relative_error(shapes: &[(usize, usize)], build: &Build, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor<f64>> = shapes
        .iter()
        .map(|&(r, c)| random(&mut rng, r, c))
        .collect();
    let (_, analytic) = objective(&inputs, build, seed, true);
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= H;
            let numeric = (objective(&plus, build, seed, false).0
                - objective(&minus, build, seed, false).0)
                / (2.0 * H);
            let a = analytic[i].data()[j];
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-12)
}

pub struct Case {
    pub name: &'static str,
    pub shapes: Vec<(usize, usize)>,
    pub build: Box<Build>,
}

fn case(
    out: &mut Vec<Case>,
    name: &'static str,
    shapes: &[(usize, usize)],
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Var + 'static,
) {
    out.push(Case {
        name,
        shapes: shapes.to_vec(),
        build: Box::new(build),
    });
}

/// Worst relative error over all seeds.
pub fn worst_error(c: &Case) -> (f64, u64) {
    (0..SEEDS)
        .map(|seed| (relative_error(&c.shapes, &*c.build, seed), seed))
        .fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a })
}

/// Every differentiable primitive, then the composite.
pub fn cases() -> Vec<Case> {
    let mut out = Vec::new();
    let o = &mut out;

    case(o, "add", &[(3, 4), (3, 4)], |t, v| {
        t.add(v[0], v[1]).unwrap()
    });
    case(o, "sub", &[(3, 4), (3, 4)], |t, v| {
        t.sub(v[0], v[1]).unwrap()
    });
    case(o, "mul", &[(3, 4), (3, 4)], |t, v| {
        t.mul(v[0], v[1]).unwrap()
    });
    case(o, "scale", &[(3, 4)], |t, v| t.scale(v[0], -1.7));
    case(o, "sigmoid", &[(3, 4)], |t, v| t.sigmoid(v[0]));
    case(o, "tanh", &[(3, 4)], |t, v| t.tanh(v[0]));
    case(o, "relu", &[(3, 4)], |t, v| t.relu(v[0]));
    case(o, "sin", &[(3, 4)], |t, v| t.sin(v[0]));
    case(o, "dropout_with_mask", &[(2, 3)], |t, v| {
        t.dropout_with_mask(v[0], vec![2.0, 0.0, 2.0, 2.0, 0.0, 0.0])
    });

    case(o, "matmul", &[(3, 5), (5, 2)], |t, v| {
        t.matmul(v[0], v[1]).unwrap()
    });
    case(o, "add_row", &[(4, 3), (1, 3)], |t, v| {
        t.add_row(v[0], v[1]).unwrap()
    });
    case(o, "mul_col", &[(4, 3), (4, 1)], |t, v| {
        t.mul_col(v[0], v[1]).unwrap()
    });
    case(o, "mean_rows", &[(4, 3)], |t, v| t.mean_rows(v[0]).unwrap());
    case(o, "sum_all", &[(4, 3)], |t, v| t.sum_all(v[0]));
    case(o, "l2_normalize_rows", &[(4, 3)], |t, v| {
        t.l2_normalize_rows(v[0], 1e-12).unwrap()
    });

    case(o, "concat_cols", &[(3, 2), (3, 4)], |t, v| {
        t.concat_cols(&[v[0], v[1]]).unwrap()
    });
    case(o, "concat_rows", &[(2, 3), (4, 3)], |t, v| {
        t.concat_rows(&[v[0], v[1]]).unwrap()
    });
    case(o, "slice_cols", &[(3, 5)], |t, v| {
        t.slice_cols(v[0], 1, 4).unwrap()
    });
    case(o, "slice_rows", &[(5, 3)], |t, v| {
        t.slice_rows(v[0], 2, 5).unwrap()
    });
    case(o, "gather_rows", &[(4, 3)], |t, v| {
        t.gather_rows(v[0], &[3, 0, 3, 1, 1]).unwrap()
    });
    case(o, "scatter_add", &[(5, 3)], |t, v| {
        t.scatter_add(v[0], &[2, 0, 2, 1, 2], 4).unwrap()
    });
    case(o, "scatter_mean", &[(5, 3)], |t, v| {
        t.scatter_mean(v[0], &[2, 0, 2, 1, 2], 4).unwrap()
    });
    case(o, "row_where", &[(3, 2), (3, 2)], |t, v| {
        t.row_where(&[true, false, true], v[0], v[1]).unwrap()
    });

    case(o, "softmax", &[(3, 5)], |t, v| t.softmax(v[0]).unwrap());
    case(o, "log_softmax", &[(3, 5)], |t, v| {
        t.log_softmax(v[0]).unwrap()
    });
    case(o, "segment_softmax", &[(6, 1)], |t, v| {
        t.segment_softmax(v[0], &[0, 0, 1, 1, 1, 2]).unwrap()
    });
    case(o, "nll", &[(3, 5)], |t, v| {
        let lp = t.log_softmax(v[0]).unwrap();
        t.nll(lp, &[4, 0, 2]).unwrap()
    });
    case(o, "cross_entropy", &[(3, 5)], |t, v| {
        t.cross_entropy(v[0], &[1, 1, 3]).unwrap()
    });
    case(
        o,
        "composite",
        &[(6, 4), (4, 5), (1, 5), (5, 5), (9, 5), (5, 1), (5, 3)],
        composite,
    );
    out
}

/// Dense, recurrent-style gating, skip concat, segment attention pooling,
/// and a normalized classifier.
fn composite(t: &mut Tape<f64>, v: &[Var]) -> Var {
    let (x, w1, b1, w2, w3, a, w4) = (v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
    let h = t.matmul(x, w1).unwrap();
    let h = t.add_row(h, b1).unwrap();
    let h1 = t.tanh(h);

    let g = t.matmul(h1, w2).unwrap();
    let g = t.sigmoid(g);
    let h2 = t.mul(g, h1).unwrap();

    let skip = t.concat_cols(&[h2, x]).unwrap();
    let h3 = t.matmul(skip, w3).unwrap();
    let h3 = t.sin(h3);

    let score = t.matmul(h3, a).unwrap();
    let segments = [0, 0, 0, 1, 1, 1];
    let alpha = t.segment_softmax(score, &segments).unwrap();
    let weighted = t.mul_col(h3, alpha).unwrap();
    let pooled = t.scatter_add(weighted, &segments, 2).unwrap();

    let unit = t.l2_normalize_rows(pooled, 1e-12).unwrap();
    let logits = t.matmul(unit, w4).unwrap();
    t.cross_entropy(logits, &[2, 0]).unwrap()
}
