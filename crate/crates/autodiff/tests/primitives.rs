use cchp_autodiff::gradcheck::check_gradients;
use cchp_autodiff::rng::{stream, StreamRng};
use cchp_autodiff::{Array, Result, Tape, TensorError, Var};
use rand::Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SHAPES_PER_PRIMITIVE: u64 = 20;

fn uniform(rng: &mut StreamRng, shape: &[usize], lo: f64, hi: f64) -> Array {
    let n: usize = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn dims(rng: &mut StreamRng) -> (usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..6))
}

/// Contracts `out` against a fixed random probe so every output element
/// contributes to the scalar under test.
fn probe(tape: &Tape, out: Var, rng_seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let mut rng = stream(rng_seed, &[99]);
    let w = tape.constant(uniform(&mut rng, &shape, -1.0, 1.0));
    tape.sum(tape.mul(out, w)?)
}

fn sweep(name: &str, build: impl Fn(&mut StreamRng) -> (Vec<Array>, Box<dyn Fn(&Tape, &[Var]) -> Result<Var>>)) {
    for case in 0..SHAPES_PER_PRIMITIVE {
        let mut rng = stream(0xfd, &[name.len() as u64, case]);
        let (inputs, f) = build(&mut rng);
        let report = check_gradients(&inputs, STEP, 1e-4, |t, v| probe(t, f(t, v)?, case)).unwrap();
        assert!(
            report.max_relative_error < TOL,
            "{name} case {case}: max rel err {:.3e} at {:?}",
            report.max_relative_error,
            report.worst
        );
    }
}

#[test]
fn matmul_gradients() {
    sweep("matmul", |rng| {
        let (m, k) = dims(rng);
        let n = rng.random_range(1..5);
        (
            vec![uniform(rng, &[m, k], -1.0, 1.0), uniform(rng, &[k, n], -1.0, 1.0)],
            Box::new(|t, v| t.matmul(v[0], v[1])),
        )
    });
}

#[test]
fn linear_gradients() {
    sweep("linear", |rng| {
        let (m, k) = dims(rng);
        let n = rng.random_range(1..5);
        (
            vec![
                uniform(rng, &[m, k], -1.0, 1.0),
                uniform(rng, &[k, n], -1.0, 1.0),
                uniform(rng, &[n], -1.0, 1.0),
            ],
            Box::new(|t, v| t.linear(v[0], v[1], v[2])),
        )
    });
}

#[test]
fn elementwise_binary_gradients() {
    sweep("add", |rng| {
        let (m, n) = dims(rng);
        (
            vec![uniform(rng, &[m, n], -1.0, 1.0), uniform(rng, &[m, n], -1.0, 1.0)],
            Box::new(|t, v| t.add(v[0], v[1])),
        )
    });
    sweep("sub", |rng| {
        let (m, n) = dims(rng);
        (
            vec![uniform(rng, &[m, n], -1.0, 1.0), uniform(rng, &[m, n], -1.0, 1.0)],
            Box::new(|t, v| t.sub(v[0], v[1])),
        )
    });
    sweep("mul", |rng| {
        let (m, n) = dims(rng);
        (
            vec![uniform(rng, &[m, n], -1.0, 1.0), uniform(rng, &[m, n], -1.0, 1.0)],
            Box::new(|t, v| t.mul(v[0], v[1])),
        )
    });
    sweep("div", |rng| {
        let (m, n) = dims(rng);
        (
            vec![uniform(rng, &[m, n], -1.0, 1.0), uniform(rng, &[m, n], 0.5, 2.0)],
            Box::new(|t, v| t.div(v[0], v[1])),
        )
    });
}

#[test]
fn row_broadcast_gradients() {
    sweep("add_row", |rng| {
        let (m, n) = dims(rng);
        (
            vec![uniform(rng, &[m, n], -1.0, 1.0), uniform(rng, &[n], -1.0, 1.0)],
            Box::new(|t, v| t.add_row(v[0], v[1])),
        )
    });
    sweep("mul_row", |rng| {
        let (m, n) = dims(rng);
        (
            vec![uniform(rng, &[m, n], -1.0, 1.0), uniform(rng, &[n], -1.0, 1.0)],
            Box::new(|t, v| t.mul_row(v[0], v[1])),
        )
    });
}

#[test]
fn structural_gradients() {
    sweep("concat", |rng| {
        let (m, n) = dims(rng);
        let n2 = rng.random_range(1..4);
        (
            vec![uniform(rng, &[m, n], -1.0, 1.0), uniform(rng, &[m, n2], -1.0, 1.0)],
            Box::new(|t, v| t.concat(&[v[0], v[1], v[0]])),
        )
    });
    sweep("slice", |rng| {
        let (m, n) = dims(rng);
        let n = n + 1;
        let start = rng.random_range(0..n - 1);
        let end = rng.random_range(start + 1..=n);
        (
            vec![uniform(rng, &[m, n], -1.0, 1.0)],
            Box::new(move |t, v| t.slice(v[0], start, end)),
        )
    });
    sweep("stack", |rng| {
        let (m, n) = dims(rng);
        (
            vec![
                uniform(rng, &[m, n], -1.0, 1.0),
                uniform(rng, &[m, n], -1.0, 1.0),
                uniform(rng, &[m, n], -1.0, 1.0),
            ],
            Box::new(|t, v| t.stack(&[v[0], v[1], v[2], v[1]])),
        )
    });
    sweep("add_n", |rng| {
        let (m, n) = dims(rng);
        (
            vec![uniform(rng, &[m, n], -1.0, 1.0), uniform(rng, &[m, n], -1.0, 1.0)],
            Box::new(|t, v| t.add_n(&[v[0], v[1], v[0]])),
        )
    });
    sweep("mean_over_axis", |rng| {
        let (m, n) = dims(rng);
        let k = rng.random_range(1..4);
        let axis = rng.random_range(0..3);
        (
            vec![uniform(rng, &[m, n, k], -1.0, 1.0)],
            Box::new(move |t, v| t.mean_over_axis(v[0], axis)),
        )
    });
    sweep("sum", |rng| {
        let (m, n) = dims(rng);
        (
            vec![uniform(rng, &[m, n], -1.0, 1.0)],
            Box::new(|t, v| t.sum(v[0])),
        )
    });
    sweep("scale", |rng| {
        let (m, n) = dims(rng);
        (
            vec![uniform(rng, &[m, n], -1.0, 1.0)],
            Box::new(|t, v| t.add_scalar(t.scale(v[0], -2.5)?, 0.3)),
        )
    });
}

#[test]
fn unary_gradients() {
    type Unary = fn(&Tape, Var) -> Result<Var>;
    let cases: [(&str, Unary, f64, f64); 8] = [
        ("relu", |t, x| t.relu(x), -1.0, 1.0),
        ("tanh", |t, x| t.tanh(x), -2.0, 2.0),
        ("sigmoid", |t, x| t.sigmoid(x), -3.0, 3.0),
        ("softplus", |t, x| t.softplus(x), -3.0, 3.0),
        ("exp", |t, x| t.exp(x), -2.0, 2.0),
        ("ln", |t, x| t.ln(x), 0.2, 3.0),
        ("square", |t, x| t.square(x), -2.0, 2.0),
        ("clamp", |t, x| t.clamp(x, -0.5, 0.5), -1.0, 1.0),
    ];
    for (name, op, lo, hi) in cases {
        sweep(name, move |rng| {
            let (m, n) = dims(rng);
            (vec![uniform(rng, &[m, n], lo, hi)], Box::new(move |t, v| op(t, v[0])))
        });
    }
}

#[test]
fn softmax_gradients() {
    sweep("softmax", |rng| {
        let (m, n) = dims(rng);
        (
            vec![uniform(rng, &[m, n], -3.0, 3.0)],
            Box::new(|t, v| t.softmax(v[0])),
        )
    });
}

#[test]
fn attention_primitive_gradients() {
    sweep("batch_dot", |rng| {
        let (b, n) = dims(rng);
        let h = rng.random_range(1..5);
        (
            vec![uniform(rng, &[b, n, h], -1.0, 1.0), uniform(rng, &[b, h], -1.0, 1.0)],
            Box::new(|t, v| t.batch_dot(v[0], v[1])),
        )
    });
    sweep("batch_weighted", |rng| {
        let (b, n) = dims(rng);
        let d = rng.random_range(1..5);
        (
            vec![uniform(rng, &[b, n], -1.0, 1.0), uniform(rng, &[b, n, d], -1.0, 1.0)],
            Box::new(|t, v| t.batch_weighted(v[0], v[1])),
        )
    });
}

#[test]
fn three_layer_relu_mlp_matches_finite_differences() {
    let mut rng = stream(11, &[]);
    let widths = [5usize, 7, 6, 3];
    let mut inputs = vec![uniform(&mut rng, &[4, widths[0]], -1.0, 1.0)];
    for w in widths.windows(2) {
        inputs.push(uniform(&mut rng, &[w[0], w[1]], -0.8, 0.8));
        inputs.push(uniform(&mut rng, &[w[1]], -0.3, 0.3));
    }
    let report = check_gradients(&inputs, STEP, 1e-4, |t, v| {
        let mut h = v[0];
        for layer in 0..3 {
            h = t.linear(h, v[1 + 2 * layer], v[2 + 2 * layer])?;
            if layer < 2 {
                h = t.relu(h)?;
            }
        }
        t.sum(t.square(h)?)
    })
    .unwrap();
    assert!(report.max_relative_error < TOL, "{report:?}");
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = stream(5, &[]);
    let a = uniform(&mut rng, &[2, 3], -1.0, 1.0);
    let b = uniform(&mut rng, &[3, 1], -1.0, 1.0);
    let tape = Tape::new();
    let c = tape.matmul(tape.constant(a.clone()), tape.constant(b.clone())).unwrap();
    let c = tape.value(c);
    for i in 0..2 {
        let mut oracle = 0.0;
        for k in 0..3 {
            oracle += a.data()[i * 3 + k] * b.data()[k];
        }
        assert!((c.data()[i] - oracle).abs() < 1e-12);
    }
}

#[test]
fn softmax_singleton_and_uniform() {
    let tape = Tape::new();
    let one = tape.softmax(tape.constant(Array::vector(vec![3.7]))).unwrap();
    assert_eq!(tape.value(one).data(), &[1.0]);
    let three = tape.softmax(tape.constant(Array::vector(vec![0.0; 3]))).unwrap();
    for &p in tape.value(three).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn sum_and_square_gradients_are_analytic() {
    let tape = Tape::new();
    let p = tape.variable(Array::vector(vec![1.0, 2.0]));
    let g = tape.backward(tape.sum(p).unwrap()).unwrap();
    assert_eq!(g.wrt(p).data(), &[1.0, 1.0]);

    let tape = Tape::new();
    let p = tape.variable(Array::vector(vec![1.0, 2.0]));
    let loss = tape.sum(tape.mul(p, p).unwrap()).unwrap();
    assert_eq!(tape.backward(loss).unwrap().wrt(p).data(), &[2.0, 4.0]);
}

#[test]
fn unused_parameters_get_zero_gradient() {
    let tape = Tape::new();
    let used = tape.param("used", Array::vector(vec![1.0, 2.0]).into());
    let unused = tape.param("unused", Array::zeros(&[2, 2]).into());
    let _ = unused;
    let g = tape.backward(tape.sum(used).unwrap()).unwrap().named();
    assert_eq!(g.get("used").unwrap().data(), &[1.0, 1.0]);
    assert_eq!(g.get("unused").unwrap().data(), &[0.0; 4]);
}

#[test]
fn errors_are_reported() {
    let tape = Tape::new();
    let a = tape.constant(Array::zeros(&[2, 3]));
    let b = tape.constant(Array::zeros(&[2, 3]));
    assert!(matches!(tape.matmul(a, b), Err(TensorError::Shape(_))));
    assert!(matches!(tape.backward(a), Err(TensorError::Shape(_))));
    let neg = tape.constant(Array::vector(vec![-1.0]));
    assert!(matches!(tape.ln(neg), Err(TensorError::Numeric("ln"))));
}

#[test]
fn fan_out_accumulates() {
    // loss = sum(x) + sum(x * 3) -> d/dx = 4
    let tape = Tape::new();
    let x = tape.variable(Array::vector(vec![0.5, -0.5]));
    let a = tape.sum(x).unwrap();
    let b = tape.sum(tape.scale(x, 3.0).unwrap()).unwrap();
    let g = tape.backward(tape.add(a, b).unwrap()).unwrap();
    assert_eq!(g.wrt(x).data(), &[4.0, 4.0]);
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(
            rows in 1usize..5,
            data in proptest::collection::vec(-50.0f64..50.0, 1..40),
        ) {
            let cols = (data.len() / rows).max(1);
            let rows = data.len() / cols;
            let x = Array::new(vec![rows, cols], data[..rows * cols].to_vec()).unwrap();
            let tape = Tape::new();
            let y = tape.value(tape.softmax(tape.constant(x)).unwrap());
            for r in 0..rows {
                let row = y.row(r);
                prop_assert!(row.iter().all(|&p| p >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
