//! Minimal dense-tensor numerics: reverse-mode autodiff, the layer set the
//! occupancy model needs (conv, fully connected, residual blocks, conditional
//! batch normalization, activations), Adam, and checkpoint serialization.
//!
//! Everything is generic over [`Scalar`] so gradient checks run at 64-bit
//! while training may run at 32-bit; the width is a runtime configuration
//! choice.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod kernels;
pub mod layers;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Graph, NodeId};
pub use params::{OwnershipTag, Param, ParameterSet};
pub use scalar::{Dtype, Scalar};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::gradcheck::{central_diff, max_rel_err};
    use super::layers::{conditional_batch_norm, conv2d, AffineMap};
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randv(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
    }

    // ---- conv2d -------------------------------------------------------

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::from_f64(vec![1, 4, 4], &randv(&mut rng, 16, 1.0)).unwrap();
        let k = Tensor::<f64>::from_f64(vec![1, 1, 1, 1], &[1.0]).unwrap();
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), x.shape());
        for (a, b) in y.data().iter().zip(x.data().iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn conv_constant_input_all_ones_kernel() {
        let c = 0.37;
        let x = Tensor::<f64>::from_f64(vec![1, 5, 5], &vec![c; 25]).unwrap();
        let k = Tensor::<f64>::from_f64(vec![1, 1, 3, 3], &vec![1.0; 9]).unwrap();
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        for &v in y.data() {
            assert!((v - 9.0 * c).abs() < 1e-12);
        }
    }

    /// Direct quadruple-loop convolution over [C,H,W] input, the independent
    /// oracle for the im2col path.
    fn conv_oracle(
        x: &[f64],
        (ci, h, w): (usize, usize, usize),
        k: &[f64],
        (co, ks): (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Vec<f64> {
        let ho = (h + 2 * pad - ks) / stride + 1;
        let wo = (w + 2 * pad - ks) / stride + 1;
        let mut out = vec![0.0; co * ho * wo];
        for oc in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ic in 0..ci {
                        for ky in 0..ks {
                            for kx in 0..ks {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                                    acc += x[(ic * h + iy as usize) * w + ix as usize]
                                        * k[((oc * ci + ic) * ks + ky) * ks + kx];
                                }
                            }
                        }
                    }
                    out[(oc * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xd = randv(&mut rng, 25, 1.0);
        let kd = randv(&mut rng, 2 * 1 * 9, 1.0);
        let x = Tensor::<f64>::from_f64(vec![1, 5, 5], &xd).unwrap();
        let k = Tensor::<f64>::from_f64(vec![2, 1, 3, 3], &kd).unwrap();
        for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
            let y = conv2d(&x, &k, stride, pad).unwrap();
            let want = conv_oracle(&xd, (1, 5, 5), &kd, (2, 3), stride, pad);
            assert_eq!(y.numel(), want.len());
            for (a, b) in y.data().iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-6, "stride {stride} pad {pad}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let x = Tensor::<f64>::from_f64(vec![2, 4, 4], &vec![0.0; 32]).unwrap();
        let k = Tensor::<f64>::from_f64(vec![1, 3, 3, 3], &vec![0.0; 27]).unwrap();
        assert!(conv2d(&x, &k, 1, 0).is_err());
    }

    // ---- conditional batch norm ----------------------------------------

    fn cbn_maps(f: usize, c: usize, gamma_w: f64, gamma_b: f64, beta_b: f64) -> (AffineMap<f64>, AffineMap<f64>) {
        let sw = Tensor::from_f64(vec![f, c], &vec![gamma_w; f * c]).unwrap();
        let sb = Tensor::from_f64(vec![c], &vec![gamma_b; c]).unwrap();
        let hw = Tensor::from_f64(vec![f, c], &vec![0.0; f * c]).unwrap();
        let hb = Tensor::from_f64(vec![c], &vec![beta_b; c]).unwrap();
        (
            AffineMap::new(sw, sb).unwrap(),
            AffineMap::new(hw, hb).unwrap(),
        )
    }

    #[test]
    fn cbn_unit_gamma_zero_beta_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (b, c, k) = (4, 3, 17);
        let x = Tensor::<f64>::from_f64(vec![b, c, k], &randv(&mut rng, b * c * k, 2.0)).unwrap();
        let cond = Tensor::<f64>::from_f64(vec![b, 2], &randv(&mut rng, b * 2, 1.0)).unwrap();
        let (scale, shift) = cbn_maps(2, c, 0.0, 1.0, 0.0);
        let y = conditional_batch_norm(&x, &cond, &scale, &shift, 1e-8, true, None).unwrap();
        // Per channel over batch + spatial axes: mean 0, variance 1.
        for ci in 0..c {
            let mut vals = Vec::new();
            for bi in 0..b {
                for ki in 0..k {
                    vals.push(y.data()[(bi * c + ci) * k + ki]);
                }
            }
            let n = vals.len() as f64;
            let mean: f64 = vals.iter().sum::<f64>() / n;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-5, "channel {ci} mean {mean}");
            assert!((var - 1.0).abs() < 1e-5, "channel {ci} var {var}");
        }
    }

    #[test]
    fn cbn_zero_gamma_outputs_constant_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (b, c, k) = (3, 2, 5);
        let x = Tensor::<f64>::from_f64(vec![b, c, k], &randv(&mut rng, b * c * k, 2.0)).unwrap();
        let cond = Tensor::<f64>::from_f64(vec![b, 2], &randv(&mut rng, b * 2, 1.0)).unwrap();
        let (scale, shift) = cbn_maps(2, c, 0.0, 0.0, 0.77);
        let y = conditional_batch_norm(&x, &cond, &scale, &shift, 1e-8, true, None).unwrap();
        for &v in y.data() {
            assert!((v - 0.77).abs() < 1e-12);
        }
    }

    #[test]
    fn cbn_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (b, c, k, f) = (4, 3, 7, 2);
        let xd = randv(&mut rng, b * c * k, 2.0);
        let condd = randv(&mut rng, b * f, 1.0);
        let swd = randv(&mut rng, f * c, 0.5);
        let sbd = randv(&mut rng, c, 0.5);
        let hwd = randv(&mut rng, f * c, 0.5);
        let hbd = randv(&mut rng, c, 0.5);
        let eps = 1e-6;

        let x = Tensor::<f64>::from_f64(vec![b, c, k], &xd).unwrap();
        let cond = Tensor::<f64>::from_f64(vec![b, f], &condd).unwrap();
        let scale = AffineMap::new(
            Tensor::from_f64(vec![f, c], &swd).unwrap(),
            Tensor::from_f64(vec![c], &sbd).unwrap(),
        )
        .unwrap();
        let shift = AffineMap::new(
            Tensor::from_f64(vec![f, c], &hwd).unwrap(),
            Tensor::from_f64(vec![c], &hbd).unwrap(),
        )
        .unwrap();
        let y = conditional_batch_norm(&x, &cond, &scale, &shift, eps, true, None).unwrap();

        // Two-pass oracle: explicit mean then variance per channel.
        for ci in 0..c {
            let mut sum = 0.0;
            for bi in 0..b {
                for ki in 0..k {
                    sum += xd[(bi * c + ci) * k + ki];
                }
            }
            let mean = sum / (b * k) as f64;
            let mut var = 0.0;
            for bi in 0..b {
                for ki in 0..k {
                    let d = xd[(bi * c + ci) * k + ki] - mean;
                    var += d * d;
                }
            }
            var /= (b * k) as f64;
            for bi in 0..b {
                let mut gamma = sbd[ci];
                let mut beta = hbd[ci];
                for fi in 0..f {
                    gamma += condd[bi * f + fi] * swd[fi * c + ci];
                    beta += condd[bi * f + fi] * hwd[fi * c + ci];
                }
                for ki in 0..k {
                    let xhat = (xd[(bi * c + ci) * k + ki] - mean) / (var + eps).sqrt();
                    let want = gamma * xhat + beta;
                    let got = y.data()[(bi * c + ci) * k + ki];
                    assert!((got - want).abs() < 1e-5, "{got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn cbn_batch_of_one_errors_in_training() {
        let x = Tensor::<f64>::from_f64(vec![1, 2, 3], &vec![0.0; 6]).unwrap();
        let cond = Tensor::<f64>::from_f64(vec![1, 2], &[0.0, 0.0]).unwrap();
        let (scale, shift) = cbn_maps(2, 2, 0.0, 1.0, 0.0);
        assert!(conditional_batch_norm(&x, &cond, &scale, &shift, 1e-8, true, None).is_err());
    }

    // ---- backward -------------------------------------------------------

    #[test]
    fn backward_square() {
        let mut g: Graph<f64> = Graph::new(true);
        let x = g
            .leaf(&Tensor::from_f64(vec![1], &[3.0]).unwrap().with_grad())
            .unwrap();
        let y = g.mul(x, x).unwrap();
        let loss = g.mean_all(y).unwrap();
        g.backward(loss).unwrap();
        assert!((g.grad(x).unwrap()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn backward_relu_negative_input() {
        let mut g: Graph<f64> = Graph::new(true);
        let x = g
            .leaf(&Tensor::from_f64(vec![1], &[-1.0]).unwrap().with_grad())
            .unwrap();
        let y = g.relu(x).unwrap();
        let loss = g.mean_all(y).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap()[0], 0.0);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g: Graph<f64> = Graph::new(true);
        let x = g
            .leaf(&Tensor::from_f64(vec![2], &[1.0, 2.0]).unwrap().with_grad())
            .unwrap();
        let y = g.relu(x).unwrap();
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn nan_in_forward_raises() {
        let mut g: Graph<f64> = Graph::new(true);
        let x = g
            .leaf(
                &Tensor::from_f64(vec![2], &[40.0, -40.0])
                    .unwrap()
                    .with_grad(),
            )
            .unwrap();
        let big = g.scale(x, 1e300).unwrap();
        // 1e300 * 1e300 overflows to inf and must be reported, not propagated.
        assert!(g.mul(big, big).is_err());
    }

    // ---- per-layer finite-difference gradient checks --------------------

    /// Checks d loss / d inputs for a graph builder against central
    /// differences. `build` maps leaf values to a scalar loss node.
    fn check_grads<F>(x0: &[f64], build: F, h: f64, tol: f64, what: &str)
    where
        F: Fn(&mut Graph<f64>, &[f64]) -> (NodeId, NodeId),
    {
        let mut g: Graph<f64> = Graph::new(true);
        let (leaf, loss) = build(&mut g, x0);
        g.backward(loss).unwrap();
        let analytic = g.grad(leaf).unwrap().to_vec();
        let numeric = central_diff(
            |x| {
                let mut g: Graph<f64> = Graph::new(true);
                let (_, loss) = build(&mut g, x);
                g.value(loss)[0]
            },
            x0,
            h,
        );
        let err = max_rel_err(&analytic, &numeric, 0.01);
        assert!(err <= tol, "{what}: max rel err {err}");
    }

    /// Weighted sum with fixed pseudo-random weights so every output element
    /// contributes to the scalar loss.
    fn weighted_loss(g: &mut Graph<f64>, y: NodeId, salt: u64) -> NodeId {
        let n = g.value(y).len();
        let mut rng = ChaCha8Rng::seed_from_u64(salt);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
        let shape = g.shape(y).to_vec();
        let wid = g.input(shape, w).unwrap();
        let prod = g.mul(y, wid).unwrap();
        g.mean_all(prod).unwrap()
    }

    #[test]
    fn gradcheck_conv_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let nx = 2 * 5 * 5 * 2;
        let nw = 3 * 2 * 3 * 3;
        let xs: Vec<f64> = randv(&mut rng, nx, 1.0);
        let ws: Vec<f64> = randv(&mut rng, nw, 1.0);
        let ws2 = ws.clone();
        check_grads(
            &xs,
            move |g, v| {
                let x = g
                    .leaf(&Tensor::from_f64(vec![2, 5, 5, 2], v).unwrap().with_grad())
                    .unwrap();
                let w = g.input(vec![3, 2, 3, 3], ws2.clone()).unwrap();
                let y = g.conv2d(x, w, 1, 1).unwrap();
                let loss = weighted_loss(g, y, 100);
                (x, loss)
            },
            1e-5,
            1e-4,
            "conv2d wrt input",
        );
        let xs2 = xs.clone();
        check_grads(
            &ws,
            move |g, v| {
                let x = g.input(vec![2, 5, 5, 2], xs2.clone()).unwrap();
                let w = g
                    .leaf(&Tensor::from_f64(vec![3, 2, 3, 3], v).unwrap().with_grad())
                    .unwrap();
                let y = g.conv2d(x, w, 2, 1).unwrap();
                let loss = weighted_loss(g, y, 101);
                (w, loss)
            },
            1e-5,
            1e-4,
            "conv2d wrt kernel",
        );
    }

    #[test]
    fn gradcheck_linear_and_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x0 = randv(&mut rng, 4 * 3, 1.0);
        check_grads(
            &x0,
            |g, v| {
                let a = g
                    .leaf(&Tensor::from_f64(vec![4, 3], v).unwrap().with_grad())
                    .unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(55);
                let b = g.input(vec![3, 5], randv(&mut rng, 15, 1.0)).unwrap();
                let bias = g.input(vec![5], randv(&mut rng, 5, 1.0)).unwrap();
                let y = g.matmul(a, b).unwrap();
                let yb = g.bias_rows(y, bias).unwrap();
                let loss = weighted_loss(g, yb, 102);
                (a, loss)
            },
            1e-5,
            1e-4,
            "linear",
        );
    }

    #[test]
    fn gradcheck_col_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x0 = randv(&mut rng, 6 * 4, 1.5);
        check_grads(
            &x0,
            |g, v| {
                let x = g
                    .leaf(&Tensor::from_f64(vec![6, 4], v).unwrap().with_grad())
                    .unwrap();
                let y = g.col_norm(x, 1e-5, None).unwrap();
                let loss = weighted_loss(g, y, 103);
                (x, loss)
            },
            1e-5,
            1e-4,
            "col_norm",
        );
    }

    #[test]
    fn gradcheck_softmax_rowstats_mix() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x0 = randv(&mut rng, 2 * 6, 1.0);
        check_grads(
            &x0,
            |g, v| {
                let x = g
                    .leaf(&Tensor::from_f64(vec![2, 6], v).unwrap().with_grad())
                    .unwrap();
                let p = g.sigmoid(x).unwrap();
                let stats = g.row_stats(p).unwrap();
                let scores = g.concat_cols(&[stats]).unwrap();
                let alpha_in = g.softmax_rows(scores).unwrap();
                let q = g.scale(p, 0.5).unwrap();
                let r = g.scale(p, 0.25).unwrap();
                let mixed = g.mix_branches(&[p, q, r], alpha_in).unwrap();
                let loss = weighted_loss(g, mixed, 104);
                (x, loss)
            },
            1e-5,
            1e-4,
            "softmax/row_stats/mix",
        );
    }

    #[test]
    fn gradcheck_sigmoid_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x0 = randv(&mut rng, 8, 2.0);
        let labels: Vec<f64> = (0..8).map(|i| (i % 2) as f64).collect();
        check_grads(
            &x0,
            |g, v| {
                let x = g
                    .leaf(&Tensor::from_f64(vec![8], v).unwrap().with_grad())
                    .unwrap();
                let p = g.sigmoid(x).unwrap();
                let loss = g.bce_mean(p, &labels, 1e-7).unwrap();
                (x, loss)
            },
            1e-5,
            1e-4,
            "sigmoid + bce",
        );
    }

    #[test]
    fn gradcheck_residual_block() {
        // conv -> relu -> conv -> add skip -> relu, gradient wrt the first kernel.
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let nw = 2 * 2 * 3 * 3;
        let w1s = randv(&mut rng, nw, 0.7);
        let w2s = randv(&mut rng, nw, 0.7);
        check_grads(
            &w1s,
            move |g, v| {
                let mut rng = ChaCha8Rng::seed_from_u64(77);
                let x = g
                    .input(vec![1, 6, 6, 2], randv(&mut rng, 72, 1.0))
                    .unwrap();
                let w1 = g
                    .leaf(&Tensor::from_f64(vec![2, 2, 3, 3], v).unwrap().with_grad())
                    .unwrap();
                let w2 = g.input(vec![2, 2, 3, 3], w2s.clone()).unwrap();
                let h = g.conv2d(x, w1, 1, 1).unwrap();
                let h = g.relu(h).unwrap();
                let h = g.conv2d(h, w2, 1, 1).unwrap();
                let s = g.add(h, x).unwrap();
                let y = g.relu(s).unwrap();
                let loss = weighted_loss(g, y, 105);
                (w1, loss)
            },
            1e-5,
            1e-4,
            "residual block",
        );
    }

    // ---- determinism -----------------------------------------------------

    #[test]
    fn seeded_training_is_bit_identical() {
        let run = || -> Vec<f64> {
            let mut ps: ParameterSet<f64> = ParameterSet::new();
            ps.insert(
                "w",
                init::fanin_uniform(42, "w", vec![4, 4], 4),
                OwnershipTag::MainExclusive,
                true,
            );
            ps.insert(
                "b",
                init::constant(vec![4], 0.0),
                OwnershipTag::MainExclusive,
                true,
            );
            let mut adam = AdamState::new(&ps, AdamConfig::default());
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for _ in 0..20 {
                let xd = randv(&mut rng, 3 * 4, 1.0);
                let labels: Vec<f64> = (0..12).map(|i| ((i / 3) % 2) as f64).collect();
                let mut g: Graph<f64> = Graph::new(true);
                let x = g.input(vec![3, 4], xd).unwrap();
                let w = g.param(&ps, "w").unwrap();
                let b = g.param(&ps, "b").unwrap();
                let y = g.matmul(x, w).unwrap();
                let y = g.bias_rows(y, b).unwrap();
                let p = g.sigmoid(y).unwrap();
                let loss = g.bce_mean(p, &labels, 1e-7).unwrap();
                g.backward(loss).unwrap();
                ps.clear_grads();
                let grads: Vec<(usize, Vec<f64>)> = g
                    .param_grads()
                    .map(|(i, gr)| (i, gr.to_vec()))
                    .collect();
                for (i, gr) in grads {
                    ps.accumulate_grad(i, &gr);
                }
                adam.step(&mut ps).unwrap();
            }
            let mut out = ps.get("w").unwrap().value.data().to_vec();
            out.extend_from_slice(ps.get("b").unwrap().value.data());
            out
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }
}
