use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorcore::{
    grad_loss_wrt_params, grad_wrt_positions, grad_wrt_strain, strain_leaf, AutodiffError, Tape,
    Tensor, Var,
};

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::from_vec(
        r,
        c,
        (0..r * c).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// A small network that exercises every recorded operation.
fn network(tape: &mut Tape, x: Var, w: Var, b: Var, extra: Var) -> Var {
    let idx: Arc<[usize]> = Arc::from(vec![0, 2, 1, 3, 3, 0]);
    let h = tape.matmul(x, w); // 4x5
    let h = tape.add_row(h, b);
    let a = tape.silu(h);
    let s = tape.sigmoid(h);
    let m = tape.mul(a, s);
    let gathered = tape.gather(m, idx.clone()); // 6x5
    let scattered = tape.scatter_add(gathered, idx, 4); // 4x5
    let left = tape.slice_cols(scattered, 0, 2);
    let right = tape.slice_cols(scattered, 2, 3);
    let cat = tape.concat_cols(&[right, left]);
    let padded = tape.pad_cols(cat, 1, 7);
    let col = tape.sum_cols(padded); // 4x1
    let sq = tape.square(col);
    let sq1 = tape.scale(sq, 0.1);
    let shifted = tape_add_const(tape, sq1, 1.0);
    let dist = tape.sqrt(shifted);
    let weighted = tape.mul_col(m, dist);
    let ex = tape.scale(weighted, 0.3);
    let ex = tape.exp(ex);
    let cs = tape.cos(ex);
    let row = tape.sum_rows(cs); // 1x5
    let back = tape.broadcast_rows(row, 4);
    let diff = tape.sub(back, m);
    let t = tape.transpose(diff); // 5x4
    let xt = tape.matmul_t(x, extra, false, true); // 4x3 . (2x3)^T = 4x2
    let xt2 = tape.matmul_t(xt, t, true, true); // (4x2)^T . (5x4)^T = 2x5
    let hub = tape.huber(xt2, 0.3);
    let shifted = tape_add_const(tape, dist, 0.5);
    let inv = tape.powf(shifted, -1.0);
    let bc = tape.broadcast_cols(inv, 5);
    let s1 = tape.sum_all(hub);
    let s2 = tape.sum_all(bc);
    let s2b = tape.broadcast_scalar(s2, 1, 2);
    let s2c = tape.sum_all(s2b);
    tape.add(s1, s2c)
}

fn tape_add_const(tape: &mut Tape, a: Var, c: f64) -> Var {
    let (r, k) = tape.shape(a);
    let cst = tape.constant(Tensor::filled(r, k, c));
    tape.add(a, cst)
}

/// Central differences of `output` with respect to every entry of `leaf`,
/// evaluated by replaying the tape.
fn finite_difference(tape: &mut Tape, leaf: Var, output: Var, h: f64) -> Tensor {
    let base = tape.value(leaf).clone();
    let mut out = Tensor::zeros(base.rows(), base.cols());
    for k in 0..base.len() {
        let mut plus = base.clone();
        plus.data_mut()[k] += h;
        tape.set_value(leaf, plus).unwrap();
        tape.replay();
        let fp = tape.value(output).item();
        let mut minus = base.clone();
        minus.data_mut()[k] -= h;
        tape.set_value(leaf, minus).unwrap();
        tape.replay();
        let fm = tape.value(output).item();
        out.data_mut()[k] = (fp - fm) / (2.0 * h);
    }
    tape.set_value(leaf, base).unwrap();
    tape.replay();
    out
}

fn assert_close(a: &Tensor, b: &Tensor, rel: f64, abs: f64) {
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!(
            (x - y).abs() <= abs.max(rel * y.abs()),
            "analytic {x} vs numeric {y}"
        );
    }
}

struct Setup {
    tape: Tape,
    x: Var,
    w: Var,
    b: Var,
    extra: Var,
}

fn setup(seed: u64) -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let x = tape.leaf(random(&mut rng, 4, 3, 1.0));
    let w = tape.leaf(random(&mut rng, 3, 5, 0.8));
    let b = tape.leaf(random(&mut rng, 1, 5, 0.5));
    let extra = tape.leaf(random(&mut rng, 2, 3, 1.0));
    Setup {
        tape,
        x,
        w,
        b,
        extra,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn first_derivatives_match_finite_differences(seed in 0u64..10_000) {
        let Setup { mut tape, x, w, b, extra } = setup(seed);
        let e = network(&mut tape, x, w, b, extra);
        let grads = tape.grad(e, &[x, w, b, extra]).unwrap();
        for (leaf, g) in [x, w, b, extra].into_iter().zip(grads) {
            let analytic = tape.value(g).clone();
            let numeric = finite_difference(&mut tape, leaf, e, 1e-6);
            assert_close(&analytic, &numeric, 1e-5, 1e-7);
        }
    }

    #[test]
    fn second_derivatives_match_finite_differences(seed in 0u64..10_000) {
        let Setup { mut tape, x, w, b, extra } = setup(seed);
        let e = network(&mut tape, x, w, b, extra);
        let gx = grad_wrt_positions(&mut tape, e, x).unwrap();
        // loss = sum(gx^2) + e
        let sq = tape.square(gx);
        let s = tape.sum_all(sq);
        let loss = tape.add(s, e);
        let grads = grad_loss_wrt_params(&mut tape, loss, &[w, b]).unwrap();
        for (leaf, g) in [w, b].into_iter().zip(grads) {
            let analytic = tape.value(g).clone();
            let numeric = finite_difference(&mut tape, leaf, loss, 1e-5);
            assert_close(&analytic, &numeric, 1e-4, 1e-6);
        }
    }

    #[test]
    fn gradient_is_linear(seed in 0u64..10_000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let Setup { mut tape, x, w, b, extra } = setup(seed);
        let e1 = network(&mut tape, x, w, b, extra);
        let sq = tape.square(x);
        let e2 = tape.sum_all(sq);
        let a1 = tape.scale(e1, alpha);
        let a2 = tape.scale(e2, beta);
        let combo = tape.add(a1, a2);
        let g = tape.grad(combo, &[x]).unwrap()[0];
        let g1 = tape.grad(e1, &[x]).unwrap()[0];
        let g2 = tape.grad(e2, &[x]).unwrap()[0];
        let g = tape.value(g).clone();
        let g1 = tape.value(g1).clone();
        let g2 = tape.value(g2).clone();
        for k in 0..g.len() {
            let expected = alpha * g1.data()[k] + beta * g2.data()[k];
            prop_assert!((g.data()[k] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }
    }
}

#[test]
fn sum_of_squares_gradient_is_twice_input() {
    let mut tape = Tape::new();
    let r = tape.leaf(Tensor::from_rows3(&[[1.0, -2.0, 0.5], [3.0, 0.25, -1.5]]));
    let sq = tape.square(r);
    let e = tape.sum_all(sq);
    let g = grad_wrt_positions(&mut tape, e, r).unwrap();
    let expected: Vec<f64> = tape.value(r).data().iter().map(|x| 2.0 * x).collect();
    assert_eq!(tape.value(g).data(), expected.as_slice());
}

#[test]
fn dimer_pair_potential_obeys_newtons_third_law() {
    let mut tape = Tape::new();
    let pos = tape.leaf(Tensor::from_rows3(&[[0.1, 0.2, -0.3], [1.4, 0.9, 0.8]]));
    let i: Arc<[usize]> = Arc::from(vec![0]);
    let j: Arc<[usize]> = Arc::from(vec![1]);
    let pi = tape.gather(pos, i);
    let pj = tape.gather(pos, j);
    let d = tape.sub(pj, pi);
    let d2 = tape.square(d);
    let d2 = tape.sum_cols(d2);
    let dist = tape.sqrt(d2);
    let d0 = tape.constant(Tensor::scalar(1.2));
    let diff = tape.sub(dist, d0);
    let sq = tape.square(diff);
    let e = tape.sum_all(sq);
    let g = grad_wrt_positions(&mut tape, e, pos).unwrap();
    let g = tape.value(g).to_rows3();
    let axis = [1.3, 0.7, 1.1];
    let norm = (axis.iter().map(|a| a * a).sum::<f64>()).sqrt();
    for k in 0..3 {
        assert!((g[0][k] + g[1][k]).abs() < 1e-14);
        // parallel to the bond axis
        assert!((g[1][k] / g[1][0] - axis[k] / axis[0]).abs() < 1e-12);
    }
    let magnitude = (g[1].iter().map(|x| x * x).sum::<f64>()).sqrt();
    assert!((magnitude - 2.0 * (norm - 1.2)).abs() < 1e-12);
}

#[test]
fn structure_independent_energy_has_zero_strain_gradient() {
    let mut tape = Tape::new();
    let (strain, _deform) = strain_leaf(&mut tape);
    let c = tape.constant(Tensor::scalar(4.2));
    let e = tape.scale(c, 2.0);
    let g = grad_wrt_strain(&mut tape, e, strain).unwrap();
    assert_eq!(tape.value(g), &Tensor::zeros(3, 3));
}

#[test]
fn strain_gradient_is_symmetric() {
    let mut tape = Tape::new();
    let (strain, deform) = strain_leaf(&mut tape);
    let r = tape.constant(Tensor::from_rows3(&[[1.0, 0.3, -0.2], [0.1, 2.0, 0.7]]));
    let rs = tape.matmul(r, deform);
    let q = tape.constant(Tensor::from_rows3(&[[0.5, -1.0, 0.2], [1.5, 0.4, 0.0]]));
    let p = tape.mul(rs, q);
    let e = tape.sum_all(p);
    let g = grad_wrt_strain(&mut tape, e, strain).unwrap();
    let g = tape.value(g);
    for a in 0..3 {
        for b in 0..3 {
            assert_eq!(g.get(a, b), g.get(b, a));
        }
    }
}

#[test]
fn unused_weight_has_exactly_zero_gradient() {
    let Setup {
        mut tape,
        x,
        w,
        b,
        extra,
    } = setup(3);
    let unused = tape.leaf(Tensor::filled(2, 2, 0.7));
    let e = network(&mut tape, x, w, b, extra);
    let g = tape.grad(e, &[unused]).unwrap()[0];
    assert!(tape.value(g).data().iter().all(|&v| v == 0.0));
}

#[test]
fn energy_only_loss_equals_plain_reverse_pass() {
    let Setup {
        mut tape,
        x,
        w,
        b,
        extra,
    } = setup(5);
    let e = network(&mut tape, x, w, b, extra);
    let direct = tape.grad(e, &[w]).unwrap()[0];
    let loss = tape.scale(e, 1.0);
    let via_loss = grad_loss_wrt_params(&mut tape, loss, &[w]).unwrap()[0];
    assert_eq!(tape.value(direct), tape.value(via_loss));
}

#[test]
fn replay_reproduces_recorded_values_bit_exactly() {
    let Setup {
        mut tape,
        x,
        w,
        b,
        extra,
    } = setup(11);
    let e = network(&mut tape, x, w, b, extra);
    let g = tape.grad(e, &[x]).unwrap()[0];
    let recorded_e = tape.value(e).clone();
    let recorded_g = tape.value(g).clone();
    tape.replay();
    assert_eq!(tape.value(e), &recorded_e);
    assert_eq!(tape.value(g), &recorded_g);
}

#[test]
fn identical_inputs_give_identical_gradients() {
    let run = || {
        let Setup {
            mut tape,
            x,
            w,
            b,
            extra,
        } = setup(21);
        let e = network(&mut tape, x, w, b, extra);
        let gx = tape.grad(e, &[x]).unwrap()[0];
        let sq = tape.square(gx);
        let l = tape.sum_all(sq);
        let gw = tape.grad(l, &[w]).unwrap()[0];
        (tape.value(gx).clone(), tape.value(gw).clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn errors_for_non_scalar_and_non_leaf() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::row_vector(&[1.0, 2.0]));
    let y = tape.square(x);
    assert_eq!(tape.grad(y, &[x]), Err(AutodiffError::NotScalar(1, 2)));
    let s = tape.sum_all(y);
    assert_eq!(tape.grad(s, &[y]), Err(AutodiffError::NotALeaf(y.index())));
    let c = tape.constant(Tensor::scalar(1.0));
    assert!(matches!(
        tape.grad(s, &[c]),
        Err(AutodiffError::NotALeaf(_))
    ));
}
