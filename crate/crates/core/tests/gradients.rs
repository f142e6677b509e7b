//! Gradient and forward-oracle checks for the tensor engine.
//!
//! The convolution oracle below is a direct index-loop transcription of
//! the centered cross-correlation definition and stays independent of the
//! engine's kernels.

use mscmhmst::numcore::{
    gradcheck, split_channels, GradcheckOptions, Graph, ParameterSet, Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// out[c,i] = b[c] + sum_{c',m} w[c,c',m] * x[c', i+m-k/2], zero outside [0, L).
fn conv_oracle(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (c_in, len) = (x.shape()[0], x.shape()[1]);
    let (c_out, k) = (w.shape()[0], w.shape()[2]);
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; c_out * len];
    for c in 0..c_out {
        for i in 0..len {
            let mut acc = b.data()[c];
            for cp in 0..c_in {
                for m in 0..k {
                    let j = i as isize + m as isize - pad;
                    if j >= 0 && (j as usize) < len {
                        acc += w.at3(c, cp, m) * x.at2(cp, j as usize);
                    }
                }
            }
            out[c * len + i] = acc;
        }
    }
    Tensor::new(vec![c_out, len], out).unwrap()
}

fn random_tensor(rng: &mut ChaCha20Rng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Tensor::new(shape, data).unwrap()
}

#[test]
fn conv_matches_independent_oracle_on_random_cases() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for case in 0..40 {
        let c_in = rng.gen_range(1..4usize);
        let c_out = rng.gen_range(1..4usize);
        let k = 2 * rng.gen_range(0..4usize) + 1;
        let len = rng.gen_range(1..15usize);
        let x = random_tensor(&mut rng, vec![c_in, len]);
        let w = random_tensor(&mut rng, vec![c_out, c_in, k]);
        let b = random_tensor(&mut rng, vec![c_out]);

        let expect = conv_oracle(&x, &w, &b);
        let mut g = Graph::new();
        let (xi, wi, bi) = (g.leaf(x), g.leaf(w), g.leaf(b));
        let out = g.conv1d_same(xi, wi, bi).unwrap();
        for (a, e) in g.value(out).data().iter().zip(expect.data()) {
            assert!((a - e).abs() < 1e-12, "case {case}: {a} vs {e}");
        }
    }
}

#[test]
fn conv_is_linear_in_its_input() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let w = random_tensor(&mut rng, vec![3, 2, 5]);
    let x = random_tensor(&mut rng, vec![2, 9]);
    let y = random_tensor(&mut rng, vec![2, 9]);
    let (alpha, beta) = (0.7, -1.3);

    let zero_b = Tensor::zeros(vec![3]);
    let combo = Tensor::new(
        vec![2, 9],
        x.data().iter().zip(y.data()).map(|(a, b)| alpha * a + beta * b).collect(),
    )
    .unwrap();

    let mut g = Graph::new();
    let wi = g.leaf(w);
    let bi = g.leaf(zero_b);
    let xi = g.leaf(x);
    let yi = g.leaf(y);
    let ci = g.leaf(combo);
    let cx = g.conv1d_same(xi, wi, bi).unwrap();
    let cy = g.conv1d_same(yi, wi, bi).unwrap();
    let cc = g.conv1d_same(ci, wi, bi).unwrap();
    for i in 0..g.value(cc).numel() {
        let lhs = g.value(cc).data()[i];
        let rhs = alpha * g.value(cx).data()[i] + beta * g.value(cy).data()[i];
        assert!((lhs - rhs).abs() < 1e-10);
    }
}

#[test]
fn concat_of_split_is_identity_bitwise() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let x = random_tensor(&mut rng, vec![5, 7]);
    let parts = split_channels(&x).unwrap();
    let mut g = Graph::new();
    let ids: Vec<_> = parts.into_iter().map(|p| g.leaf(p)).collect();
    let back = g.concat_channels(&ids).unwrap();
    assert_eq!(g.value(back).shape(), x.shape());
    assert!(g.value(back).data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

/// Every differentiable op, composed into one scalar function, against
/// central differences.
#[test]
fn composed_stack_passes_gradcheck() {
    let mut rng = ChaCha20Rng::seed_from_u64(42);
    let mut params = ParameterSet::new();
    // Fixed seed keeps the sampled inputs away from relu kinks at eps=1e-5.
    params.add("x", random_tensor(&mut rng, vec![2, 6])).unwrap();
    params.add("conv.w", random_tensor(&mut rng, vec![3, 2, 3])).unwrap();
    params.add("conv.b", random_tensor(&mut rng, vec![3])).unwrap();
    params.add("gate.w", random_tensor(&mut rng, vec![3, 3, 1])).unwrap();
    params.add("gate.b", random_tensor(&mut rng, vec![3])).unwrap();
    params.add("lin.w", random_tensor(&mut rng, vec![3, 4])).unwrap();
    params.add("lin.b", random_tensor(&mut rng, vec![4])).unwrap();
    params.add("norm.gain", random_tensor(&mut rng, vec![4])).unwrap();
    params.add("norm.shift", random_tensor(&mut rng, vec![4])).unwrap();
    params.add("target", random_tensor(&mut rng, vec![6, 4])).unwrap();

    let report = gradcheck(
        &mut params,
        |g, p| {
            let x = g.param(p, p.find("x").unwrap());
            let cw = g.param(p, p.find("conv.w").unwrap());
            let cb = g.param(p, p.find("conv.b").unwrap());
            let gw = g.param(p, p.find("gate.w").unwrap());
            let gb = g.param(p, p.find("gate.b").unwrap());
            let lw = g.param(p, p.find("lin.w").unwrap());
            let lb = g.param(p, p.find("lin.b").unwrap());
            let ng = g.param(p, p.find("norm.gain").unwrap());
            let ns = g.param(p, p.find("norm.shift").unwrap());
            let tgt = g.param(p, p.find("target").unwrap());

            let feat = g.conv1d_same(x, cw, cb)?; // [3, 6]
            let gate_raw = g.conv1d_same(feat, gw, gb)?;
            let gate = g.sigmoid(gate_raw);
            let gated = g.hadamard(gate, feat)?;
            let seq = g.transpose(gated)?; // [6, 3]
            let proj = g.linear(seq, lw, lb)?; // [6, 4]
            let attn = {
                let proj_t = g.transpose(proj)?;
                let qk = g.matmul(proj, proj_t)?;
                let scaled = g.scale(qk, 0.5);
                let p_attn = g.softmax_rows(scaled)?;
                g.matmul(p_attn, proj)?
            };
            let mixed = g.add(attn, proj)?;
            let normed = g.layer_norm(mixed, ng, ns, 1e-5)?;
            let act = g.relu(normed);
            let diff = g.sub(act, tgt)?;
            let err = g.abs(diff);
            let sq = g.hadamard(diff, diff)?;
            let both = g.add(err, sq)?;
            Ok(g.mean(both))
        },
        &GradcheckOptions::default(),
    )
    .unwrap();
    assert!(
        report.max_rel_error <= 1e-4,
        "composed stack rel error {} in {}",
        report.max_rel_error,
        report.worst_array
    );
}

#[test]
fn mask_below_gradcheck_away_from_threshold() {
    let mut params = ParameterSet::new();
    params.add("x", Tensor::vector(&[0.1, 0.4, 0.6, 0.9])).unwrap();
    let report = gradcheck(
        &mut params,
        |g, p| {
            let x = g.param(p, p.find("x").unwrap());
            let m = g.mask_below(x, 0.5);
            let sq = g.hadamard(m, m)?;
            Ok(g.mean(sq))
        },
        &GradcheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "rel error {}", report.max_rel_error);
}

proptest! {
    // Logit spread capped below ~36 so the open-interval bound stays
    // representable in f64 (beyond that, exp underflow rounds to 0 or 1).
    #[test]
    fn softmax_rows_sum_to_one(rows in prop::collection::vec(prop::collection::vec(-17.0f64..17.0, 2..8), 1..6)) {
        let cols = rows[0].len();
        prop_assume!(rows.iter().all(|r| r.len() == cols));
        let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
        let t = Tensor::new(vec![rows.len(), cols], flat).unwrap();
        let mut g = Graph::new();
        let x = g.leaf(t);
        let y = g.softmax_rows(x).unwrap();
        for i in 0..rows.len() {
            let sum: f64 = g.value(y).row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(g.value(y).row(i).iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn sigmoid_in_open_unit_interval_and_relu_nonnegative(xs in prop::collection::vec(-36.0f64..36.0, 1..32)) {
        let t = Tensor::vector(&xs);
        let mut g = Graph::new();
        let x = g.leaf(t);
        let s = g.sigmoid(x);
        let r = g.relu(x);
        prop_assert!(g.value(s).data().iter().all(|&v| v > 0.0 && v < 1.0));
        prop_assert!(g.value(r).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn conv_identity_kernel_is_identity_for_every_shape(
        c in 1usize..4,
        l in 1usize..12,
        seed in 0u64..500,
    ) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, vec![c, l]);
        // Identity: each output channel reads its own input channel with a
        // centered unit tap.
        let mut w = Tensor::zeros(vec![c, c, 3]);
        for i in 0..c {
            let idx = (i * c + i) * 3 + 1;
            w.data_mut()[idx] = 1.0;
        }
        let b = Tensor::zeros(vec![c]);
        let mut g = Graph::new();
        let (xi, wi, bi) = (g.leaf(x.clone()), g.leaf(w), g.leaf(b));
        let out = g.conv1d_same(xi, wi, bi).unwrap();
        prop_assert_eq!(g.value(out).data(), x.data());
    }
}
