use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{builders, grad_check, GradCheckOptions};
use super::kernels::{SELU_ALPHA, SELU_SCALE};
use super::tape::{BnConfig, BnMode, BnRunning, Tape};
use super::Tensor;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(shape: &[usize], lo: f32, hi: f32, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.gen_range(lo..hi))
}

fn assert_close(a: f32, b: f32, tol: f32, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tol {tol})");
}

/// Independent brute-force same-padding convolution used as the oracle for
/// the fast im2col path.
fn naive_conv(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Tensor {
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (f, k) = (kernel.shape()[0], kernel.shape()[2]);
    let pad = (k / 2) as isize;
    Tensor::from_fn(&[n, f, h, w], |i| {
        let x = i % w;
        let y = (i / w) % h;
        let fi = (i / (w * h)) % f;
        let s = i / (w * h * f);
        let mut acc = bias.data()[fi];
        for ci in 0..c {
            for dy in 0..k {
                for dx in 0..k {
                    let sy = y as isize + dy as isize - pad;
                    let sx = x as isize + dx as isize - pad;
                    if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                        continue;
                    }
                    acc += input.at4(s, ci, sy as usize, sx as usize)
                        * kernel.at4(fi, ci, dy, dx);
                }
            }
        }
        acc
    })
}

#[test]
fn conv_all_ones_counts_taps() {
    // 3x3 ones * 3x3 ones kernel: each output counts the in-bounds taps.
    let mut tape: Tape = Tape::new();
    let x = tape.leaf(Tensor::full(&[1, 1, 3, 3], 1.0), false);
    let k = tape.leaf(Tensor::full(&[1, 1, 3, 3], 1.0), false);
    let b = tape.leaf(Tensor::zeros(&[1]), false);
    let out = tape.conv2d(x, k, b).unwrap();
    let expected = [4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0];
    assert_eq!(tape.value(out).data(), &expected);
}

#[test]
fn conv_delta_kernel_is_identity() {
    let x_t = uniform(&[2, 3, 6, 5], -1.0, 1.0, 7);
    let mut delta = Tensor::zeros(&[3, 3, 3, 3]);
    for ci in 0..3 {
        // center tap of the matching channel
        let idx = ((ci * 3 + ci) * 3 + 1) * 3 + 1;
        delta.data_mut()[idx] = 1.0;
    }
    let mut tape: Tape = Tape::new();
    let x = tape.leaf(x_t.clone(), false);
    let k = tape.leaf(delta, false);
    let b = tape.leaf(Tensor::zeros(&[3]), false);
    let out = tape.conv2d(x, k, b).unwrap();
    assert_eq!(tape.value(out).data(), x_t.data());
}

#[test]
fn conv_zero_input_zero_output() {
    let mut tape: Tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[1, 2, 4, 4]), false);
    let k = tape.leaf(uniform(&[3, 2, 3, 3], -1.0, 1.0, 3), false);
    let b = tape.leaf(Tensor::zeros(&[3]), false);
    let out = tape.conv2d(x, k, b).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_matches_naive_reference() {
    for seed in 0..8 {
        let x = uniform(&[2, 3, 5, 7], -1.0, 1.0, seed);
        let k = uniform(&[4, 3, 3, 3], -1.0, 1.0, seed + 100);
        let b = uniform(&[4], -0.5, 0.5, seed + 200);
        let mut tape: Tape = Tape::new();
        let (xi, ki, bi) = (
            tape.leaf(x.clone(), false),
            tape.leaf(k.clone(), false),
            tape.leaf(b.clone(), false),
        );
        let out = tape.conv2d(xi, ki, bi).unwrap();
        let oracle = naive_conv(&x, &k, &b);
        for (a, e) in tape.value(out).data().iter().zip(oracle.data()) {
            assert_close(*a, *e, 1e-5, "conv vs naive");
        }
    }
}

#[test]
fn conv_1x1_matches_naive_reference() {
    let x = uniform(&[2, 4, 3, 3], -1.0, 1.0, 11);
    let k = uniform(&[2, 4, 1, 1], -1.0, 1.0, 12);
    let b = uniform(&[2], -0.5, 0.5, 13);
    let mut tape: Tape = Tape::new();
    let (xi, ki, bi) = (
        tape.leaf(x.clone(), false),
        tape.leaf(k.clone(), false),
        tape.leaf(b.clone(), false),
    );
    let out = tape.conv2d(xi, ki, bi).unwrap();
    let oracle = naive_conv(&x, &k, &b);
    for (a, e) in tape.value(out).data().iter().zip(oracle.data()) {
        assert_close(*a, *e, 1e-5, "1x1 conv vs naive");
    }
}

#[test]
fn conv_rejects_bad_shapes() {
    let mut tape: Tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[1, 2, 4, 4]), false);
    let k_wrong_c = tape.leaf(Tensor::zeros(&[3, 5, 3, 3]), false);
    let k_wrong_size = tape.leaf(Tensor::zeros(&[3, 2, 5, 5]), false);
    let b = tape.leaf(Tensor::zeros(&[3]), false);
    let err = tape.conv2d(x, k_wrong_c, b).unwrap_err();
    assert!(err.to_string().contains("[1, 2, 4, 4]"), "diagnostic: {err}");
    assert!(err.to_string().contains("[3, 5, 3, 3]"), "diagnostic: {err}");
    assert!(tape.conv2d(x, k_wrong_size, b).is_err());
}

#[test]
fn conv_linear_in_input() {
    let (alpha, beta) = (0.7f32, -1.3f32);
    for seed in 0..5 {
        let x = uniform(&[1, 2, 6, 6], -1.0, 1.0, seed);
        let y = uniform(&[1, 2, 6, 6], -1.0, 1.0, seed + 50);
        let k = uniform(&[3, 2, 3, 3], -1.0, 1.0, seed + 90);
        let zero_b = Tensor::zeros(&[3]);
        let combo = Tensor::from_fn(x.shape(), |i| alpha * x.data()[i] + beta * y.data()[i]);

        let run = |inp: &Tensor| {
            let mut tape: Tape = Tape::new();
            let (a, b, c) = (
                tape.leaf(inp.clone(), false),
                tape.leaf(k.clone(), false),
                tape.leaf(zero_b.clone(), false),
            );
            let out = tape.conv2d(a, b, c).unwrap();
            tape.value(out).clone()
        };
        let lhs = run(&combo);
        let (ox, oy) = (run(&x), run(&y));
        for i in 0..lhs.numel() {
            assert_close(
                lhs.data()[i],
                alpha * ox.data()[i] + beta * oy.data()[i],
                1e-5,
                "conv linearity",
            );
        }
    }
}

#[test]
fn maxpool_examples() {
    let mut tape: Tape = Tape::new();
    let x = tape.leaf(
        Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        false,
    );
    let out = tape.maxpool2d(x).unwrap();
    assert_eq!(tape.value(out).data(), &[4.0]);

    // constant input stays constant at quarter resolution
    let c = tape.leaf(Tensor::full(&[1, 2, 4, 4], 2.5), false);
    let out = tape.maxpool2d(c).unwrap();
    assert_eq!(tape.value(out).shape(), &[1, 2, 2, 2]);
    assert!(tape.value(out).data().iter().all(|&v| v == 2.5));

    // 4x4 ramp: windows enumerate to [[5,7],[13,15]]
    let ramp = tape.leaf(Tensor::from_fn(&[1, 1, 4, 4], |i| i as f32), false);
    let out = tape.maxpool2d(ramp).unwrap();
    assert_eq!(tape.value(out).data(), &[5.0, 7.0, 13.0, 15.0]);
}

#[test]
fn maxpool_rejects_odd_dims() {
    let mut tape: Tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[1, 1, 3, 4]), false);
    assert!(tape.maxpool2d(x).is_err());
}

#[test]
fn maxpool_tie_routes_to_first_row_major() {
    let mut tape: Tape = Tape::new();
    let x = tape.leaf(Tensor::full(&[1, 1, 2, 2], 5.0), true);
    let out = tape.maxpool2d(x).unwrap();
    let w = Tensor::scalar(1.0);
    let loss = tape.weighted_sum(out, &w).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn maxpool_output_bounded_by_input_max() {
    for seed in 0..10 {
        let x = uniform(&[2, 3, 6, 6], -4.0, 4.0, seed);
        let mut tape: Tape = Tape::new();
        let xi = tape.leaf(x.clone(), false);
        let out = tape.maxpool2d(xi).unwrap();
        let max_in = x.data().iter().cloned().fold(f32::MIN, f32::max);
        assert!(tape.value(out).data().iter().all(|&v| v <= max_in));
    }
}

#[test]
fn upsample_replicates_and_inverts_under_maxpool() {
    let mut tape: Tape = Tape::new();
    let x_t = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let x = tape.leaf(x_t.clone(), false);
    let up = tape.upsample2d(x).unwrap();
    let expected = [
        1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0,
    ];
    assert_eq!(tape.value(up).data(), &expected);

    // maxpool(upsample(x)) == x, and the value multiset quadruples
    for seed in 0..5 {
        let r = uniform(&[1, 2, 3, 3], -2.0, 2.0, seed);
        let mut tape: Tape = Tape::new();
        let xi = tape.leaf(r.clone(), false);
        let up = tape.upsample2d(xi).unwrap();
        for &v in r.data() {
            let count = tape.value(up).data().iter().filter(|&&u| u == v).count();
            assert!(count >= 4, "each value replicated at least 4x");
        }
        let back = tape.maxpool2d(up).unwrap();
        assert_eq!(tape.value(back).data(), r.data());
    }

    let mut tape: Tape = Tape::new();
    let z = tape.leaf(Tensor::zeros(&[1, 1, 2, 2]), false);
    let up = tape.upsample2d(z).unwrap();
    assert!(tape.value(up).data().iter().all(|&v| v == 0.0));
}

#[test]
fn selu_reference_values() {
    let mut tape: Tape = Tape::new();
    let x = tape.leaf(
        Tensor::new(vec![3], vec![0.0, 1.0, -1.0]).unwrap(),
        false,
    );
    let out = tape.selu(x);
    let v = tape.value(out).data();
    assert_eq!(v[0], 0.0);
    // scale * 1
    assert_close(v[1], 1.05070, 1e-5, "selu(1)");
    // scale * alpha * (e^-1 - 1)
    let expected = (SELU_SCALE * SELU_ALPHA * ((-1.0f64).exp() - 1.0)) as f32;
    assert_close(v[2], expected, 1e-6, "selu(-1) vs direct evaluation");
    assert_close(v[2], -1.11133, 1e-5, "selu(-1) published value");
}

#[test]
fn selu_continuous_at_zero() {
    let mut tape: Tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2], vec![1e-6, -1e-6]).unwrap(), false);
    let out = tape.selu(x);
    let v = tape.value(out).data();
    assert_close(v[0], v[1], 1e-5, "selu left/right limits at 0");
}

#[test]
fn sigmoid_values_and_symmetry() {
    let mut tape: Tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2], vec![0.0, 2.0]).unwrap(), false);
    let out = tape.sigmoid(x);
    assert_eq!(tape.value(out).data()[0], 0.5);
    assert_close(tape.value(out).data()[1], 0.88080, 1e-5, "sigmoid(2)");

    for seed in 0..10 {
        let t = uniform(&[32], -15.0, 15.0, seed);
        let neg = Tensor::from_fn(t.shape(), |i| -t.data()[i]);
        let mut tape: Tape = Tape::new();
        let (a, b) = (tape.leaf(t, false), tape.leaf(neg, false));
        let (sa, sb) = (tape.sigmoid(a), tape.sigmoid(b));
        for i in 0..tape.value(sa).numel() {
            let (p, q) = (tape.value(sa).data()[i], tape.value(sb).data()[i]);
            assert_close(p + q, 1.0, 1e-6, "sigmoid symmetry");
            assert!(p > 0.0 && p < 1.0, "sigmoid strictly in (0,1): {p}");
        }
    }
}

#[test]
fn batchnorm_train_examples() {
    let cfg = BnConfig::default();

    // constant input -> zeros (epsilon guards the zero variance)
    let mut tape: Tape = Tape::new();
    let x = tape.leaf(Tensor::full(&[2, 1, 2, 2], 3.0), false);
    let g = tape.leaf(Tensor::full(&[1], 1.0), false);
    let b = tape.leaf(Tensor::zeros(&[1]), false);
    let mut running = BnRunning::new(1);
    let out = tape
        .batchnorm(x, g, b, BnMode::Train, cfg, &mut running)
        .unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v.abs() < 1e-3));

    // gamma = 0 -> output equals beta
    let mut tape: Tape = Tape::new();
    let x = tape.leaf(uniform(&[2, 2, 2, 2], -1.0, 1.0, 5), false);
    let g = tape.leaf(Tensor::zeros(&[2]), false);
    let b = tape.leaf(Tensor::new(vec![2], vec![0.7, -0.2]).unwrap(), false);
    let mut running = BnRunning::new(2);
    let out = tape
        .batchnorm(x, g, b, BnMode::Train, cfg, &mut running)
        .unwrap();
    for s in 0..2 {
        for (ci, expect) in [0.7f32, -0.2].iter().enumerate() {
            for h in 0..2 {
                for w in 0..2 {
                    assert_eq!(tape.value(out).at4(s, ci, h, w), *expect);
                }
            }
        }
    }

    // channel values {1,3}: mean 2, std 1 -> {-1,+1}
    let mut tape: Tape = Tape::new();
    let x = tape.leaf(
        Tensor::new(vec![1, 1, 1, 2], vec![1.0, 3.0]).unwrap(),
        false,
    );
    let g = tape.leaf(Tensor::full(&[1], 1.0), false);
    let b = tape.leaf(Tensor::zeros(&[1]), false);
    let mut running = BnRunning::new(1);
    let out = tape
        .batchnorm(x, g, b, BnMode::Train, cfg, &mut running)
        .unwrap();
    assert_close(tape.value(out).data()[0], -1.0, 1e-3, "bn normalize low");
    assert_close(tape.value(out).data()[1], 1.0, 1e-3, "bn normalize high");
    // running stats moved toward the batch: 0.99*0 + 0.01*2
    assert_close(running.mean[0], 0.02, 1e-6, "running mean update");
}

#[test]
fn batchnorm_infer_uses_running_stats() {
    let cfg = BnConfig::default();
    let mut running = BnRunning::new(1);
    running.mean[0] = 2.0;
    running.var[0] = 4.0;
    running.initialized = true;

    let mut tape: Tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![1, 1, 1, 2], vec![2.0, 4.0]).unwrap(), false);
    let g = tape.leaf(Tensor::full(&[1], 1.0), false);
    let b = tape.leaf(Tensor::zeros(&[1]), false);
    let out = tape
        .batchnorm(x, g, b, BnMode::Infer, cfg, &mut running)
        .unwrap();
    // (2-2)/2 = 0, (4-2)/2 = 1
    assert_close(tape.value(out).data()[0], 0.0, 1e-5, "bn infer low");
    assert_close(tape.value(out).data()[1], 1.0, 1e-3, "bn infer high");
    // infer never updates the buffers
    assert_eq!(running.mean[0], 2.0);
}

#[test]
fn concat_stacks_channels_and_splits_gradient() {
    let a_t = uniform(&[2, 4, 3, 3], -1.0, 1.0, 1);
    let b_t = uniform(&[2, 8, 3, 3], -1.0, 1.0, 2);
    let mut tape: Tape = Tape::new();
    let (a, b) = (tape.leaf(a_t.clone(), true), tape.leaf(b_t.clone(), true));
    let out = tape.concat(a, b).unwrap();
    assert_eq!(tape.value(out).shape(), &[2, 12, 3, 3]);
    // slicing channels 0..Ca recovers a exactly
    for s in 0..2 {
        for c in 0..4 {
            for h in 0..3 {
                for w in 0..3 {
                    assert_eq!(tape.value(out).at4(s, c, h, w), a_t.at4(s, c, h, w));
                }
            }
        }
    }
    // backward splits
    let w = Tensor::full(&[2, 12, 3, 3], 1.0);
    let loss = tape.weighted_sum(out, &w).unwrap();
    tape.backward(loss).unwrap();
    assert!(tape.grad(a).unwrap().data().iter().all(|&g| g == 1.0));
    assert!(tape.grad(b).unwrap().data().iter().all(|&g| g == 1.0));

    // mismatched spatial dims rejected
    let mut tape: Tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(&[1, 2, 4, 4]), false);
    let b = tape.leaf(Tensor::zeros(&[1, 2, 2, 2]), false);
    assert!(tape.concat(a, b).is_err());
}

#[test]
fn concat_zero_padding_equals_plain_conv() {
    // concat(x, zeros) through a kernel zeroed on the second half == conv(x)
    let x = uniform(&[1, 2, 4, 4], -1.0, 1.0, 9);
    let k_x = uniform(&[3, 2, 3, 3], -1.0, 1.0, 10);
    let mut k_full = Tensor::zeros(&[3, 4, 3, 3]);
    for f in 0..3 {
        for c in 0..2 {
            for i in 0..9 {
                k_full.data_mut()[(f * 4 + c) * 9 + i] = k_x.data()[(f * 2 + c) * 9 + i];
            }
        }
    }
    let bias = Tensor::zeros(&[3]);

    let mut tape: Tape = Tape::new();
    let xi = tape.leaf(x.clone(), false);
    let zi = tape.leaf(Tensor::zeros(&[1, 2, 4, 4]), false);
    let cat = tape.concat(xi, zi).unwrap();
    let kf = tape.leaf(k_full, false);
    let bf = tape.leaf(bias.clone(), false);
    let through_concat = tape.conv2d(cat, kf, bf).unwrap();

    let kx = tape.leaf(k_x, false);
    let bx = tape.leaf(bias, false);
    let direct = tape.conv2d(xi, kx, bx).unwrap();
    for i in 0..tape.value(direct).numel() {
        assert_close(
            tape.value(through_concat).data()[i],
            tape.value(direct).data()[i],
            1e-6,
            "concat+masked-kernel vs direct conv",
        );
    }
}

#[test]
fn add_examples_and_exact_double_count() {
    let x_t = uniform(&[2, 3], -1.0, 1.0, 4);
    let mut tape: Tape = Tape::new();
    let x = tape.leaf(x_t.clone(), false);
    let z = tape.leaf(Tensor::zeros(&[2, 3]), false);
    let out = tape.add(x, z).unwrap();
    assert_eq!(tape.value(out).data(), x_t.data());

    let mut tape: Tape = Tape::new();
    let a = tape.leaf(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap(), false);
    let b = tape.leaf(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap(), false);
    let out = tape.add(a, b).unwrap();
    assert_eq!(tape.value(out).data(), &[4.0, 6.0]);

    let bad = tape.leaf(Tensor::zeros(&[2, 2]), false);
    assert!(tape.add(a, bad).is_err());

    // add(x, x): each tape entry touched once, gradient exactly 2*upstream
    let mut tape: Tape = Tape::new();
    let x = tape.leaf(x_t.clone(), true);
    let out = tape.add(x, x).unwrap();
    assert_eq!(
        tape.value(out).data(),
        Tensor::from_fn(x_t.shape(), |i| 2.0 * x_t.data()[i]).data()
    );
    let w = uniform(&[2, 3], 0.5, 1.5, 77);
    let loss = tape.weighted_sum(out, &w).unwrap();
    tape.backward(loss).unwrap();
    for (g, wv) in tape.grad(x).unwrap().data().iter().zip(w.data()) {
        assert_eq!(*g, 2.0 * wv);
    }
}

#[test]
fn unreachable_leaf_reads_back_zero_gradient() {
    let mut tape: Tape = Tape::new();
    let x = tape.leaf(uniform(&[4], -1.0, 1.0, 0), true);
    let unused = tape.leaf(uniform(&[4], -1.0, 1.0, 1), true);
    let out = tape.relu(x);
    let loss = tape.weighted_sum(out, &Tensor::full(&[4], 1.0)).unwrap();
    tape.backward(loss).unwrap();
    assert!(tape.grad(unused).is_none());
    assert!(tape.grad_or_zeros(unused).data().iter().all(|&v| v == 0.0));
}

#[test]
fn ops_stay_finite_on_finite_inputs() {
    for seed in 0..5 {
        let x = uniform(&[1, 2, 4, 4], -50.0, 50.0, seed);
        let mut tape: Tape = Tape::new();
        let xi = tape.leaf(x, false);
        let s = tape.selu(xi);
        let g = tape.sigmoid(s);
        let p = tape.maxpool2d(g).unwrap();
        let u = tape.upsample2d(p).unwrap();
        assert!(tape.value(u).all_finite());
    }
}

// ---- finite-difference checks (one representative seed per op; the
// acceptance suite runs the 20-seed battery) ----

#[test]
fn gradcheck_add_is_exact_to_rounding() {
    let opts = GradCheckOptions::default();
    let a = uniform(&[2, 3], -1.0, 1.0, 21);
    let b = uniform(&[2, 3], -1.0, 1.0, 22);
    let r = grad_check(&builders::AddOp, &[a, b], &opts).unwrap();
    assert!(r.passed(), "add gradcheck: {r:?}");
    assert!(r.max_rel_err < 1e-6, "linear op should be near-exact: {r:?}");
}

#[test]
fn gradcheck_conv2d_spec_example() {
    // random 1x2x5x5 input, h = 1e-3, rel err < 1e-3
    let opts = GradCheckOptions::default();
    let x = uniform(&[1, 2, 5, 5], -1.0, 1.0, 31);
    let k = uniform(&[3, 2, 3, 3], -1.0, 1.0, 32);
    let b = uniform(&[3], -0.5, 0.5, 33);
    let r = grad_check(&builders::Conv2dOp, &[x, k, b], &opts).unwrap();
    assert!(r.passed(), "conv2d gradcheck: {r:?}");
}

#[test]
fn gradcheck_selu_away_from_kink() {
    let opts = GradCheckOptions::default();
    let mut r = rng(41);
    // |x| > 0.1 excludes the kink at zero
    let x = Tensor::from_fn(&[24], |_| {
        let mag = r.gen_range(0.1f32..1.5);
        if r.gen_bool(0.5) {
            mag
        } else {
            -mag
        }
    });
    let rep = grad_check(&builders::SeluOp, &[x], &opts).unwrap();
    assert!(rep.passed(), "selu gradcheck: {rep:?}");
}

#[test]
fn gradcheck_batchnorm_and_losses() {
    let opts = GradCheckOptions::default();
    let x = uniform(&[2, 2, 3, 3], -1.5, 1.5, 51);
    let g = uniform(&[2], 0.5, 1.5, 52);
    let b = uniform(&[2], -0.5, 0.5, 53);
    let r = grad_check(&builders::BatchNormOp, &[x, g, b], &opts).unwrap();
    assert!(r.passed(), "batchnorm gradcheck: {r:?}");

    let mut rr = rng(61);
    let target = Tensor::from_fn(&[32], |_| if rr.gen_bool(0.4) { 1.0 } else { 0.0 });
    let pred = Tensor::from_fn(&[32], |_| rr.gen_range(0.1f32..0.9));
    let loss = builders::CompositeLossOp {
        target,
        lambda: 2.0,
        epsilon: 1.0,
        clamp: 1e-7,
    };
    let r = grad_check(&loss, &[pred], &opts).unwrap();
    assert!(r.passed(), "composite loss gradcheck: {r:?}");
}
