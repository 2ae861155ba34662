//! Central-difference oracle over the whole primitive set.
//!
//! Each primitive's backward rule is checked on random small inputs at
//! 64-bit precision; the relative error budget is 1e-6. Inputs for
//! kinked ops (abs, sqrt, clamp) are sampled away from the kink so the
//! central difference itself is valid.

use maskcomp::autodiff::{finite_difference_check, Conv2dSpec, ConvT2dSpec, Tape, TensorId};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;
const EPS: f64 = 1e-5;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

/// Samples with |x| bounded away from zero (for kinked ops).
fn signed_away_from_zero(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = r.gen_range(0.2..1.0);
            if r.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

fn check<F>(name: &str, x: &[f64], shape: &[usize], f: F)
where
    F: Fn(&mut Tape<f64>, TensorId) -> TensorId,
{
    let err = finite_difference_check(f, x, shape, EPS).unwrap();
    assert!(err < TOL, "{name}: max relative error {err:.3e} exceeds {TOL:.0e}");
}

#[test]
fn elementwise_unary_ops() {
    let mut r = rng(11);
    let x = uniform(&mut r, 12, -1.5, 1.5);
    check("neg", &x, &[12], |t, l| {
        let y = t.neg(l);
        t.sum(y)
    });
    check("scale", &x, &[12], |t, l| {
        let y = t.scale(l, -2.5);
        t.sum(y)
    });
    check("add_const", &x, &[12], |t, l| {
        let y = t.add_const(l, 0.7);
        let y2 = t.mul(y, y);
        t.sum(y2)
    });
    check("exp", &x, &[12], |t, l| {
        let y = t.exp(l);
        t.sum(y)
    });
    check("sigmoid", &x, &[12], |t, l| {
        let y = t.sigmoid(l);
        t.sum(y)
    });
    check("tanh", &x, &[12], |t, l| {
        let y = t.tanh(l);
        t.sum(y)
    });
    check("elu", &x, &[12], |t, l| {
        let y = t.elu(l);
        t.sum(y)
    });
    check("cos", &x, &[12], |t, l| {
        let y = t.cos(l);
        t.sum(y)
    });
    check("sin", &x, &[12], |t, l| {
        let y = t.sin(l);
        t.sum(y)
    });

    let pos = uniform(&mut r, 12, 0.3, 2.0);
    check("sqrt", &pos, &[12], |t, l| {
        let y = t.sqrt(l);
        t.sum(y)
    });
    check("ln", &pos, &[12], |t, l| {
        let y = t.ln(l);
        t.sum(y)
    });
    check("recip", &pos, &[12], |t, l| {
        let y = t.recip(l);
        t.sum(y)
    });

    let away = signed_away_from_zero(&mut r, 12);
    check("abs", &away, &[12], |t, l| {
        let y = t.abs(l);
        t.sum(y)
    });
    check("clamp", &away, &[12], |t, l| {
        // kinks at +-0.6; sampled magnitudes avoid a small band around them
        let y = t.clamp(l, -0.6001, 0.6001);
        let y2 = t.mul(y, y);
        t.sum(y2)
    });
}

#[test]
fn elementwise_binary_ops() {
    let mut r = rng(23);
    let a = uniform(&mut r, 10, -1.0, 1.0);
    let b = uniform(&mut r, 10, -1.0, 1.0);

    for (name, which) in [("add/lhs", 0), ("add/rhs", 1)] {
        let (fixed, shape) = (if which == 0 { b.clone() } else { a.clone() }, [10]);
        check(name, if which == 0 { &a } else { &b }, &shape, move |t, l| {
            let c = t.constant(fixed.clone(), &[10]);
            let y = if which == 0 { t.add(l, c) } else { t.add(c, l) };
            let y2 = t.mul(y, y);
            t.sum(y2)
        });
    }
    for (name, which) in [("sub/lhs", 0), ("sub/rhs", 1)] {
        let fixed = if which == 0 { b.clone() } else { a.clone() };
        check(name, if which == 0 { &a } else { &b }, &[10], move |t, l| {
            let c = t.constant(fixed.clone(), &[10]);
            let y = if which == 0 { t.sub(l, c) } else { t.sub(c, l) };
            let y2 = t.mul(y, y);
            t.sum(y2)
        });
    }
    for (name, which) in [("mul/lhs", 0), ("mul/rhs", 1)] {
        let fixed = if which == 0 { b.clone() } else { a.clone() };
        check(name, if which == 0 { &a } else { &b }, &[10], move |t, l| {
            let c = t.constant(fixed.clone(), &[10]);
            let y = if which == 0 { t.mul(l, c) } else { t.mul(c, l) };
            t.sum(y)
        });
    }
    // both sides at once (fan-in through one leaf)
    check("mul/shared", &a, &[10], |t, l| {
        let y = t.mul(l, l);
        t.sum(y)
    });
}

#[test]
fn atan2_pair() {
    let mut r = rng(31);
    // keep magnitudes away from the 1e-12 zero-gradient floor
    let y = signed_away_from_zero(&mut r, 8);
    let x = signed_away_from_zero(&mut r, 8);

    let xc = x.clone();
    check("atan2/dy", &y, &[8], move |t, l| {
        let c = t.constant(xc.clone(), &[8]);
        let th = t.atan2(l, c);
        let s = t.mul(th, th);
        t.sum(s)
    });
    let yc = y.clone();
    check("atan2/dx", &x, &[8], move |t, l| {
        let c = t.constant(yc.clone(), &[8]);
        let th = t.atan2(c, l);
        let s = t.mul(th, th);
        t.sum(s)
    });
}

#[test]
fn mul_scalar_both_sides() {
    let mut r = rng(37);
    let a = uniform(&mut r, 6, -1.0, 1.0);
    let s = [0.75f64];

    check("mul_scalar/tensor", &a, &[6], move |t, l| {
        let sc = t.constant(vec![0.75], &[1]);
        let y = t.mul_scalar(l, sc);
        let y2 = t.mul(y, y);
        t.sum(y2)
    });
    let ac = a.clone();
    check("mul_scalar/scalar", &s, &[1], move |t, l| {
        let av = t.constant(ac.clone(), &[6]);
        let y = t.mul_scalar(av, l);
        let y2 = t.mul(y, y);
        t.sum(y2)
    });
}

#[test]
fn matmul_and_transpose() {
    let mut r = rng(41);
    let a = uniform(&mut r, 6, -1.0, 1.0); // [2,3]
    let b = uniform(&mut r, 12, -1.0, 1.0); // [3,4]

    let bc = b.clone();
    check("matmul/lhs", &a, &[2, 3], move |t, l| {
        let rb = t.constant(bc.clone(), &[3, 4]);
        let y = t.matmul(l, rb);
        let y2 = t.mul(y, y);
        t.sum(y2)
    });
    let ac = a.clone();
    check("matmul/rhs", &b, &[3, 4], move |t, l| {
        let ra = t.constant(ac.clone(), &[2, 3]);
        let y = t.matmul(ra, l);
        let y2 = t.mul(y, y);
        t.sum(y2)
    });
    check("transpose2d", &a, &[2, 3], |t, l| {
        let y = t.transpose2d(l);
        let w = t.constant(vec![0.5, -1.0, 2.0, 0.3, 0.9, -0.2], &[3, 2]);
        let p = t.mul(y, w);
        t.sum(p)
    });
}

#[test]
fn softmax_and_standardize() {
    let mut r = rng(43);
    let x = uniform(&mut r, 12, -2.0, 2.0);
    let wts = uniform(&mut r, 12, -1.0, 1.0);

    let w1 = wts.clone();
    check("softmax_rows", &x, &[3, 4], move |t, l| {
        let y = t.softmax_rows(l);
        let w = t.constant(w1.clone(), &[3, 4]);
        let p = t.mul(y, w);
        t.sum(p)
    });
    let w2 = wts.clone();
    check("norm_rows", &x, &[3, 4], move |t, l| {
        let y = t.norm_rows(l, 1e-5);
        let w = t.constant(w2.clone(), &[3, 4]);
        let p = t.mul(y, w);
        t.sum(p)
    });
    let w3 = wts;
    check("norm_channels", &x, &[2, 2, 3], move |t, l| {
        let y = t.norm_channels(l, 1e-5);
        let w = t.constant(w3.clone(), &[2, 2, 3]);
        let p = t.mul(y, w);
        t.sum(p)
    });
}

#[test]
fn bias_and_gain_broadcasts() {
    let mut r = rng(47);
    let x = uniform(&mut r, 24, -1.0, 1.0); // [2,4,3]
    let bias = uniform(&mut r, 3, -0.5, 0.5);

    let bc = bias.clone();
    check("add_bias/input", &x, &[2, 4, 3], move |t, l| {
        let b = t.constant(bc.clone(), &[3]);
        let y = t.add_bias(l, b);
        let y2 = t.mul(y, y);
        t.sum(y2)
    });
    let xc = x.clone();
    check("add_bias/bias", &bias, &[3], move |t, l| {
        let xv = t.constant(xc.clone(), &[2, 4, 3]);
        let y = t.add_bias(xv, l);
        let y2 = t.mul(y, y);
        t.sum(y2)
    });
    let bc2 = bias.clone();
    check("mul_channels/input", &x, &[2, 4, 3], move |t, l| {
        let g = t.constant(bc2.clone(), &[3]);
        let y = t.mul_channels(l, g);
        let y2 = t.mul(y, y);
        t.sum(y2)
    });
    let xc2 = x;
    check("mul_channels/gain", &bias, &[3], move |t, l| {
        let xv = t.constant(xc2.clone(), &[2, 4, 3]);
        let y = t.mul_channels(xv, l);
        let y2 = t.mul(y, y);
        t.sum(y2)
    });
}

#[test]
fn reductions() {
    let mut r = rng(53);
    let x = uniform(&mut r, 9, -1.0, 1.0);
    check("sum", &x, &[9], |t, l| {
        let s = t.sum(l);
        t.mul(s, s)
    });
    check("mean", &x, &[9], |t, l| {
        let m = t.mean(l);
        t.mul(m, m)
    });
}

#[test]
fn shape_ops() {
    let mut r = rng(59);
    let x = uniform(&mut r, 24, -1.0, 1.0);
    let wts = uniform(&mut r, 24, -1.0, 1.0);

    let w1 = wts.clone();
    check("reshape", &x, &[2, 3, 4], move |t, l| {
        let y = t.reshape(l, &[6, 4]);
        let w = t.constant(w1.clone(), &[6, 4]);
        let p = t.mul(y, w);
        t.sum(p)
    });
    let w2 = wts.clone();
    check("swap_tf", &x, &[2, 3, 4], move |t, l| {
        let y = t.swap_tf(l);
        let w = t.constant(w2.clone(), &[3, 2, 4]);
        let p = t.mul(y, w);
        t.sum(p)
    });
    check("slice_axis", &x, &[2, 3, 4], |t, l| {
        let y = t.slice_axis(l, 1, 1, 3);
        let y2 = t.mul(y, y);
        t.sum(y2)
    });
    let w3 = wts;
    check("concat_axis", &x, &[2, 3, 4], move |t, l| {
        let other = t.constant(vec![0.1; 8], &[2, 1, 4]);
        let y = t.concat_axis(&[l, other], 1);
        let w = t.constant(
            w3.iter().cloned().chain(std::iter::repeat(0.3).take(8)).collect::<Vec<_>>(),
            &[2, 4, 4],
        );
        let p = t.mul(y, w);
        t.sum(p)
    });
}

#[test]
fn convolutions() {
    let mut r = rng(61);

    // plain conv, both input and weight
    let spec = Conv2dSpec::new(2, 3, (2, 3), (1, 1), (1, 1), (1, 1)).unwrap();
    let x = uniform(&mut r, 4 * 5 * 2, -1.0, 1.0);
    let w = uniform(&mut r, spec.weight_numel(), -0.5, 0.5);

    let (sp, wc) = (spec.clone(), w.clone());
    check("conv2d/input", &x, &[4, 5, 2], move |t, l| {
        let wv = t.constant(wc.clone(), &[3, 2, 3, 2]);
        let y = t.conv2d(l, wv, &sp);
        let y2 = t.mul(y, y);
        t.sum(y2)
    });
    let (sp2, xc) = (spec.clone(), x.clone());
    check("conv2d/weight", &w, &[3, 2, 3, 2], move |t, l| {
        let xv = t.constant(xc.clone(), &[4, 5, 2]);
        let y = t.conv2d(xv, l, &sp2);
        let y2 = t.mul(y, y);
        t.sum(y2)
    });

    // strided + dilated conv (the contract case: 1-D over 8 samples,
    // kernel 3, dilation 2, wrapped in the [T,F,C] layout)
    let dspec = Conv2dSpec::new(1, 1, (1, 3), (1, 1), (1, 2), (0, 0)).unwrap();
    let dx = uniform(&mut r, 8, -1.0, 1.0);
    let dw = uniform(&mut r, 3, -1.0, 1.0);
    let (dsp, dwc) = (dspec.clone(), dw.clone());
    check("conv2d/dilated+elu", &dx, &[1, 8, 1], move |t, l| {
        let wv = t.constant(dwc.clone(), &[1, 1, 3, 1]);
        let y = t.conv2d(l, wv, &dsp);
        let e = t.elu(y);
        t.sum(e)
    });

    // transposed conv, strided, with output padding
    let fwd = Conv2dSpec::new(2, 2, (1, 3), (1, 2), (1, 1), (0, 1)).unwrap();
    let tspec = ConvT2dSpec::inverting(&fwd, (3, 9)).unwrap();
    let mid = fwd.out_size((3, 9)).unwrap();
    let tx = uniform(&mut r, mid.0 * mid.1 * 2, -1.0, 1.0);
    let tw = uniform(&mut r, tspec.weight_numel(), -0.5, 0.5);

    let (tsp, twc, msz) = (tspec.clone(), tw.clone(), mid);
    check("conv_t2d/input", &tx, &[msz.0, msz.1, 2], move |t, l| {
        let wv = t.constant(twc.clone(), &[2, 1, 3, 2]);
        let y = t.conv_t2d(l, wv, &tsp);
        let y2 = t.mul(y, y);
        t.sum(y2)
    });
    let (tsp2, txc) = (tspec.clone(), tx.clone());
    check("conv_t2d/weight", &tw, &[2, 1, 3, 2], move |t, l| {
        let xv = t.constant(txc.clone(), &[msz.0, msz.1, 2]);
        let y = t.conv_t2d(xv, l, &tsp2);
        let y2 = t.mul(y, y);
        t.sum(y2)
    });
}

#[test]
fn composite_chain_matches_contract_example() {
    // f(x) = sum(elu(conv1d(x, w))) on a 1x1x8 input, relative error
    // within 1e-6 at 64-bit
    let mut r = rng(67);
    let x = uniform(&mut r, 8, -1.0, 1.0);
    let w = uniform(&mut r, 3, -1.0, 1.0);
    let spec = Conv2dSpec::new(1, 1, (1, 3), (1, 1), (1, 1), (0, 1)).unwrap();

    let err = finite_difference_check(
        move |t, l| {
            let wv = t.constant(w.clone(), &[1, 1, 3, 1]);
            let y = t.conv2d(l, wv, &spec);
            let e = t.elu(y);
            t.sum(e)
        },
        &x,
        &[1, 8, 1],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "conv+elu chain error {err:.3e}");
}
