//! Autodiff against central finite differences (h = 1e-5) for every
//! differentiable op, over ten seeds each.

use pst_tensor::gradcheck::{check, relative_error};
use pst_tensor::{Result, Tape, Tensor, Var};
use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 10;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
}

/// `sum(y * r)` for a fixed random projection `r`, so every output element
/// contributes a distinct weight.
fn project(tape: &mut Tape, y: Var, r: &Tensor) -> Result<Var> {
    let rv = tape.constant(r.clone());
    let p = tape.mul(y, rv)?;
    Ok(tape.sum(p))
}

fn assert_grads<F>(name: &str, shapes: &[&[usize]], out_shape: &[usize], op: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Tensor> = shapes.iter().map(|s| randn(&mut rng, s)).collect();
        let r = randn(&mut rng, out_shape);
        let report = check(&inputs, H, |tape, vars| {
            let y = op(tape, vars)?;
            project(tape, y, &r)
        })
        .unwrap();
        assert!(
            report.max_rel_error() < TOL,
            "{name} seed {seed}: {:?}",
            report.rel_errors
        );
    }
}

#[test]
fn conv3d_gradients() {
    assert_grads(
        "conv3d",
        &[&[2, 2, 3, 4, 4], &[3, 2, 3, 3, 2], &[3]],
        &[2, 3, 3, 4, 5],
        |t, v| t.conv3d(v[0], v[1], Some(v[2]), [1, 1, 1], [1, 1, 1]),
    );
    assert_grads(
        "conv3d strided",
        &[&[1, 2, 5, 5, 5], &[2, 2, 3, 3, 3], &[2]],
        &[1, 2, 2, 2, 2],
        |t, v| t.conv3d(v[0], v[1], Some(v[2]), [2, 2, 2], [0, 0, 0]),
    );
}

#[test]
fn conv2d_gradients() {
    assert_grads(
        "conv2d",
        &[&[2, 3, 5, 4], &[2, 3, 3, 3], &[2]],
        &[2, 2, 5, 4],
        |t, v| t.conv2d(v[0], v[1], Some(v[2]), [1, 1], [1, 1]),
    );
}

#[test]
fn adaptive_avg_pool_gradients() {
    for axis in 0..4 {
        let mut out = vec![2, 3, 4, 5];
        out[axis] = 1;
        assert_grads("adaptive_avg_pool", &[&[2, 3, 4, 5]], &out, |t, v| {
            t.adaptive_avg_pool(v[0], axis)
        });
    }
}

#[test]
fn avg_pool_gradients() {
    assert_grads("avg_pool", &[&[2, 3, 5, 4]], &[2, 3, 2, 2], |t, v| {
        t.avg_pool(v[0], &[2, 2])
    });
}

#[test]
fn sigmoid_gradients() {
    assert_grads("sigmoid", &[&[3, 4]], &[3, 4], |t, v| Ok(t.sigmoid(v[0])));
}

#[test]
fn sigmoid_slope_at_zero_is_quarter() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(0.0));
    let y = tape.sigmoid(x);
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap().item(), 0.25);
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let fd = (sig(1e-6) - sig(-1e-6)) / 2e-6;
    assert!((fd - 0.25).abs() < 1e-9);
}

#[test]
fn relu_gradients() {
    // N(0,1) inputs sit away from the kink with probability ~1.
    assert_grads("relu", &[&[4, 5]], &[4, 5], |t, v| Ok(t.relu(v[0])));
}

#[test]
fn concat_and_split_gradients() {
    assert_grads("concat", &[&[2, 3, 2], &[2, 1, 2]], &[2, 4, 2], |t, v| {
        t.concat(&[v[0], v[1]], 1)
    });
    assert_grads("split", &[&[3, 5]], &[3, 2], |t, v| {
        let parts = t.split(v[0], 1, &[3, 2])?;
        Ok(parts[1])
    });
}

#[test]
fn transpose_gradients() {
    assert_grads("transpose", &[&[2, 3, 4]], &[4, 2, 3], |t, v| {
        t.transpose(v[0], &[2, 0, 1])
    });
}

#[test]
fn reshape_gradients() {
    assert_grads("reshape", &[&[2, 6]], &[3, 4], |t, v| t.reshape(v[0], &[3, 4]));
}

#[test]
fn mul_broadcast_gradients() {
    assert_grads("mul", &[&[2, 3], &[1, 3]], &[2, 3], |t, v| t.mul(v[0], v[1]));
    assert_grads(
        "product",
        &[&[2, 3, 4], &[2, 1, 4], &[2, 3, 1], &[2, 3, 4]],
        &[2, 3, 4],
        |t, v| t.product(v),
    );
}

#[test]
fn mul_gradient_is_column_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = randn(&mut rng, &[4, 3]);
    let mut tape = Tape::new();
    let av = tape.constant(a.clone());
    let bv = tape.param(Tensor::ones(&[1, 3]));
    let p = tape.mul(av, bv).unwrap();
    let s = tape.sum(p);
    tape.backward(s).unwrap();
    let got = tape.grad(bv).unwrap();
    for j in 0..3 {
        let col: f64 = (0..4).map(|i| a.get(&[i, j])).sum();
        assert!((got.get(&[0, j]) - col).abs() < 1e-12);
    }
}

#[test]
fn linear_gradients() {
    assert_grads("linear", &[&[3, 4], &[2, 4], &[2]], &[3, 2], |t, v| {
        t.linear(v[0], v[1], Some(v[2]))
    });
}

#[test]
fn softmax_cross_entropy_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = randn(&mut rng, &[4, 3]);
        let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
        let report = check(&[logits], H, |t, v| t.softmax_cross_entropy(v[0], &labels)).unwrap();
        assert!(report.max_rel_error() < 1e-6, "seed {seed}: {:?}", report.rel_errors);
    }
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let logits = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.0, 0.0, 0.0]).unwrap();
    let labels = [2, 1];
    let mut tape = Tape::new();
    let z = tape.param(logits.clone());
    let l = tape.softmax_cross_entropy(z, &labels).unwrap();
    tape.backward(l).unwrap();
    let p = logits.softmax_rows().unwrap();
    let mut want = p.data().to_vec();
    want[2] -= 1.0;
    want[4] -= 1.0;
    want.iter_mut().for_each(|v| *v /= 2.0);
    assert!(relative_error(tape.grad(z).unwrap().data(), &want) < 1e-15);
}

#[test]
fn composite_graph_gradients() {
    // A small attention-like chain exercising fan-out and accumulation.
    assert_grads("composite", &[&[2, 3, 4, 5], &[7, 7, 1, 1], &[7]], &[2, 3, 4, 5], |t, v| {
        let x = v[0];
        let rh = t.adaptive_avg_pool(x, 3)?;
        let rv = t.adaptive_avg_pool(x, 2)?;
        let rh = t.reshape(rh, &[2, 3, 4])?;
        let rv = t.reshape(rv, &[2, 3, 5])?;
        let rh = t.transpose(rh, &[0, 2, 1])?;
        let rv = t.transpose(rv, &[0, 2, 1])?;
        let cat = t.concat(&[rh, rv], 1)?;
        let cat = t.reshape(cat, &[2, 9, 3, 1])?;
        let cat = t.split(cat, 1, &[7, 2])?[0];
        let m = t.conv2d(cat, v[1], Some(v[2]), [1, 1], [0, 0])?;
        let m = t.sigmoid(m);
        let m = t.reshape(m, &[2, 7, 3])?;
        let m = t.split(m, 1, &[4, 3])?[0];
        let m = t.transpose(m, &[0, 2, 1])?;
        let m = t.reshape(m, &[2, 3, 4, 1])?;
        t.product(&[x, m, m])
    });
}

#[test]
fn forward_and_backward_are_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = randn(&mut rng, &[2, 3, 4, 5, 5]);
        let w = randn(&mut rng, &[4, 3, 3, 3, 3]);
        let mut tape = Tape::new();
        let xv = tape.param(x);
        let wv = tape.param(w);
        let y = tape.conv3d(xv, wv, None, [1; 3], [1; 3]).unwrap();
        let y = tape.sigmoid(y);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        (
            tape.value(s).item().to_bits(),
            tape.grad(xv).unwrap().clone(),
            tape.grad(wv).unwrap().clone(),
        )
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert!(a.1.data().iter().zip(b.1.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a.2.data().iter().zip(b.2.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}
