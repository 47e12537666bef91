//! Finite-difference validation of every tape op's adjoint.

use stainlab_core::Rng;
use stainlab_grad::gradcheck::{max_rel_error, numeric_grad};
use stainlab_grad::{Tape, Tensor, Var};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-7;

/// Checks d(scalar graph)/d(input) against central differences.
fn check<F>(shape: Vec<usize>, seed: u64, build: F) -> f64
where
    F: Fn(&mut Tape, Var) -> Var,
{
    let mut rng = Rng::from_seed(seed);
    let x = Tensor::randn(shape, 1.0, &mut rng);

    let mut tape = Tape::new();
    let input = tape.leaf(x.clone());
    let out = build(&mut tape, input);
    assert_eq!(tape.value(out).len(), 1, "graph must end in a scalar");
    let grads = tape.backward(out);
    let analytic = grads.get(input).expect("input receives a gradient").clone();

    let mut eval = |probe: &Tensor| -> f64 {
        let mut tape = Tape::new();
        let input = tape.leaf(probe.clone());
        let out = build(&mut tape, input);
        tape.value(out).item()
    };
    let numeric = numeric_grad(&mut eval, &x, EPS);
    max_rel_error(&analytic, &numeric)
}

#[test]
fn elementwise_chain() {
    let err = check(vec![4, 5], 1, |tape, x| {
        let t = tape.tanh(x);
        let s = tape.sigmoid(t);
        let u = tape.silu(s);
        let e = tape.exp(u);
        let sq = tape.mul(e, e);
        let sc = tape.scale(sq, 1.7);
        tape.mean_all(sc)
    });
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn add_sub_mul() {
    let err = check(vec![6], 2, |tape, x| {
        let two = tape.leaf(Tensor::full(vec![6], 2.0));
        let a = tape.add(x, two);
        let b = tape.sub(a, x);
        let c = tape.mul(b, x);
        // x appears on several paths; accumulation must be exact.
        let d = tape.add(c, x);
        tape.mean_all(d)
    });
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn matmul_both_sides() {
    let err = check(vec![3, 4], 3, |tape, x| {
        let w = tape.leaf(Tensor::new(
            vec![4, 2],
            (0..8).map(|i| (i as f64) * 0.3 - 1.0).collect(),
        ));
        let y = tape.matmul(x, w);
        tape.mean_all(y)
    });
    assert!(err < TOL, "rel err {err}");

    // Gradient with respect to the right operand.
    let mut rng = Rng::from_seed(4);
    let a = Tensor::randn(vec![3, 4], 1.0, &mut rng);
    let err = check(vec![4, 2], 5, |tape, x| {
        let av = tape.leaf(a.clone());
        let y = tape.matmul(av, x);
        tape.mean_all(y)
    });
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn matmul_nt_and_transpose() {
    let err = check(vec![3, 4], 6, |tape, x| {
        let b = tape.leaf(Tensor::new(
            vec![5, 4],
            (0..20).map(|i| (i as f64) * 0.11 - 1.0).collect(),
        ));
        let y = tape.matmul_nt(x, b);
        let t = tape.transpose2d(y);
        tape.mean_all(t)
    });
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn conv2d_input_weight_bias() {
    let mut rng = Rng::from_seed(7);
    let weight = Tensor::randn(vec![4, 3, 3, 3], 0.5, &mut rng);
    let bias = Tensor::randn(vec![4], 0.5, &mut rng);

    // d/d input
    let (w2, b2) = (weight.clone(), bias.clone());
    let err = check(vec![3, 6, 6], 8, move |tape, x| {
        let w = tape.leaf(w2.clone());
        let b = tape.leaf(b2.clone());
        let y = tape.conv2d(x, w, Some(b), 1, 1);
        tape.mean_all(y)
    });
    assert!(err < TOL, "input rel err {err}");

    // d/d weight with stride 2
    let input = Tensor::randn(vec![3, 6, 6], 1.0, &mut rng);
    let (i2, b2) = (input.clone(), bias.clone());
    let err = check(vec![4, 3, 3, 3], 9, move |tape, x| {
        let i = tape.leaf(i2.clone());
        let b = tape.leaf(b2.clone());
        let y = tape.conv2d(i, x, Some(b), 2, 1);
        tape.mean_all(y)
    });
    assert!(err < TOL, "weight rel err {err}");

    // d/d bias
    let (i2, w2) = (input.clone(), weight.clone());
    let err = check(vec![4], 10, move |tape, x| {
        let i = tape.leaf(i2.clone());
        let w = tape.leaf(w2.clone());
        let y = tape.conv2d(i, w, Some(x), 1, 0);
        tape.mean_all(y)
    });
    assert!(err < TOL, "bias rel err {err}");
}

#[test]
fn pool_and_upsample() {
    let err = check(vec![2, 4, 4], 11, |tape, x| {
        let p = tape.avg_pool2(x);
        let u = tape.upsample2(p);
        let m = tape.mul(u, u);
        tape.mean_all(m)
    });
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn group_norm_all_inputs() {
    let mut rng = Rng::from_seed(12);
    let gamma = Tensor::randn(vec![4], 0.3, &mut rng);
    let beta = Tensor::randn(vec![4], 0.3, &mut rng);

    let (g2, b2) = (gamma.clone(), beta.clone());
    let err = check(vec![4, 3, 3], 13, move |tape, x| {
        let g = tape.leaf(g2.clone());
        let b = tape.leaf(b2.clone());
        let y = tape.group_norm(x, g, b, 2, 1e-5);
        let sq = tape.mul(y, y);
        tape.mean_all(sq)
    });
    assert!(err < 1e-5, "input rel err {err}");

    let input = Tensor::randn(vec![4, 3, 3], 1.0, &mut rng);
    let (i2, b2) = (input.clone(), beta.clone());
    let err = check(vec![4], 14, move |tape, x| {
        let i = tape.leaf(i2.clone());
        let b = tape.leaf(b2.clone());
        let y = tape.group_norm(i, x, b, 4, 1e-5);
        let sq = tape.mul(y, y);
        tape.mean_all(sq)
    });
    assert!(err < TOL, "gamma rel err {err}");
}

#[test]
fn softmax_rows_grad() {
    let err = check(vec![3, 5], 15, |tape, x| {
        let y = tape.softmax_rows(x);
        let w = tape.leaf(Tensor::new(
            vec![3, 5],
            (0..15).map(|i| ((i * 7) % 5) as f64 - 2.0).collect(),
        ));
        let weighted = tape.mul(y, w);
        tape.mean_all(weighted)
    });
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn reshape_concat_bias_paths() {
    let err = check(vec![2, 4, 4], 16, |tape, x| {
        let other = tape.leaf(Tensor::full(vec![3, 4, 4], 0.25));
        let cat = tape.concat_ch(x, other);
        let bias = tape.leaf(Tensor::new(vec![5], vec![0.1, -0.2, 0.3, -0.4, 0.5]));
        let biased = tape.add_chan_bias(cat, bias);
        let flat = tape.reshape(biased, vec![5, 16]);
        let v = tape.leaf(Tensor::new(vec![16], (0..16).map(|i| i as f64 * 0.1).collect()));
        let rows = tape.add_row_vec(flat, v);
        let sq = tape.mul(rows, rows);
        tape.mean_all(sq)
    });
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn mse_and_gram() {
    let mut rng = Rng::from_seed(17);
    let target = Tensor::randn(vec![3, 4, 4], 1.0, &mut rng);
    let t2 = target.clone();
    let err = check(vec![3, 4, 4], 18, move |tape, x| {
        let g = tape.gram(x, 1.0, false);
        let t = tape.leaf(t2.clone());
        let gt = tape.gram(t, 1.0, false);
        tape.mse(g, gt)
    });
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn attention_shaped_graph() {
    // Full q/k/v/softmax pipeline against finite differences.
    let mut rng = Rng::from_seed(19);
    let ctx = Tensor::randn(vec![6, 4], 1.0, &mut rng);
    let wk = Tensor::randn(vec![8, 4], 0.5, &mut rng);
    let wv = Tensor::randn(vec![8, 4], 0.5, &mut rng);
    let err = check(vec![5, 8], 20, move |tape, q| {
        let ctx = tape.leaf(ctx.clone());
        let wk = tape.leaf(wk.clone());
        let wv = tape.leaf(wv.clone());
        let k = tape.matmul_nt(ctx, wk); // [6, 8]
        let v = tape.matmul_nt(ctx, wv); // [6, 8]
        let scores = tape.matmul_nt(q, k); // [5, 6]
        let scaled = tape.scale(scores, 1.0 / (8f64).sqrt());
        let attn = tape.softmax_rows(scaled);
        let mixed = tape.matmul(attn, v);
        let sq = tape.mul(mixed, mixed);
        tape.mean_all(sq)
    });
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn gram_matches_naive_double_loop() {
    let mut rng = Rng::from_seed(21);
    let x = Tensor::randn(vec![3, 4, 4], 1.0, &mut rng);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let g = tape.gram(xv, 1.0, false);
    let got = tape.value(g);

    let (c, hw) = (3, 16);
    let m = (c * hw) as f64;
    for i in 0..c {
        for j in 0..c {
            let mut acc = 0.0;
            for k in 0..hw {
                acc += x.data()[i * hw + k] * x.data()[j * hw + k];
            }
            let expected = acc / m;
            assert!(
                (got.data()[i * c + j] - expected).abs() < 1e-10,
                "G[{i},{j}]"
            );
        }
    }
}
