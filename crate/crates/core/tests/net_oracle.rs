//! The reference network in real arithmetic against a naive direct
//! convolution written independently here.

use dynprec::trace::net::{Layer, NetConfig, Tensor, TinyNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn naive_forward(net: &TinyNet, input: &Tensor) -> Vec<Vec<f64>> {
    let mut dims = input.dims;
    let mut data = input.data.clone();
    for layer in &net.layers {
        let [n, c, h, w] = dims;
        let idx = |b: usize, ch: usize, y: usize, x: usize, c: usize, h: usize, w: usize| {
            ((b * c + ch) * h + y) * w + x
        };
        match layer {
            Layer::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
                weights,
                bias,
                ..
            } => {
                let (k, s, p) = (*kernel as isize, *stride as isize, *padding as isize);
                let oh = ((h as isize + 2 * p - k) / s + 1) as usize;
                let ow = ((w as isize + 2 * p - k) / s + 1) as usize;
                let mut out = vec![0.0; n * out_channels * oh * ow];
                for b in 0..n {
                    for o in 0..*out_channels {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = bias[o];
                                for ci in 0..c {
                                    for ky in 0..k {
                                        for kx in 0..k {
                                            let iy = oy as isize * s + ky - p;
                                            let ix = ox as isize * s + kx - p;
                                            if iy < 0
                                                || ix < 0
                                                || iy >= h as isize
                                                || ix >= w as isize
                                            {
                                                continue;
                                            }
                                            let wi = ((o * c + ci) * *kernel + ky as usize)
                                                * *kernel
                                                + kx as usize;
                                            acc += weights[wi]
                                                * data
                                                    [idx(b, ci, iy as usize, ix as usize, c, h, w)];
                                        }
                                    }
                                }
                                out[idx(b, o, oy, ox, *out_channels, oh, ow)] = acc;
                            }
                        }
                    }
                }
                dims = [n, *out_channels, oh, ow];
                data = out;
            }
            Layer::Relu { .. } => data.iter_mut().for_each(|v| *v = v.max(0.0)),
            Layer::MaxPool { size, stride } => {
                let oh = (h - size) / stride + 1;
                let ow = (w - size) / stride + 1;
                let mut out = vec![f64::NEG_INFINITY; n * c * oh * ow];
                for b in 0..n {
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let o = &mut out[idx(b, ch, oy, ox, c, oh, ow)];
                                for ky in 0..*size {
                                    for kx in 0..*size {
                                        let v = data[idx(
                                            b,
                                            ch,
                                            oy * stride + ky,
                                            ox * stride + kx,
                                            c,
                                            h,
                                            w,
                                        )];
                                        if v > *o {
                                            *o = v;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                dims = [n, c, oh, ow];
                data = out;
            }
            Layer::Fc {
                in_features,
                out_features,
                weights,
                bias,
            } => {
                let mut out = vec![0.0; n * out_features];
                for b in 0..n {
                    for o in 0..*out_features {
                        let mut acc = bias[o];
                        for i in 0..*in_features {
                            acc += weights[o * in_features + i] * data[b * in_features + i];
                        }
                        out[b * out_features + o] = acc;
                    }
                }
                dims = [n, *out_features, 1, 1];
                data = out;
            }
        }
    }
    let per = dims[1] * dims[2] * dims[3];
    data.chunks(per).map(|c| c.to_vec()).collect()
}

fn random_net(seed: u64) -> NetConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c1 = rng.random_range(1..=8);
    let k = [1, 3, 5][rng.random_range(0..3)];
    let stride = rng.random_range(1..=2);
    let padding = rng.random_range(0..=k / 2);
    let pool = rng.random_bool(0.5);
    let text = format!(
        r#"
        name = "rand{seed}"
        input = [{cin}, 16, 16]
        seed = {seed}
        [eval]
        batch = 4
        seed = {seed}
        [[layers]]
        kind = "conv2d"
        out_channels = {c1}
        kernel = {k}
        stride = {stride}
        padding = {padding}
        bias = [{bias}]
        [[layers]]
        kind = "relu"
        quant = {{ width = 16, frac_bits = 8 }}
        {pool}
        [[layers]]
        kind = "conv2d"
        out_channels = 4
        kernel = 3
        padding = 1
        [[layers]]
        kind = "relu"
        quant = {{ width = 16, frac_bits = 8 }}
        [[layers]]
        kind = "fc"
        out_features = 10
        "#,
        cin = rng.random_range(1..=3),
        bias = (0..c1)
            .map(|_| format!("{:.3}", rng.random_range(-0.2..0.2)))
            .collect::<Vec<_>>()
            .join(", "),
        pool = if pool {
            "[[layers]]\nkind = \"maxpool\"\nsize = 2"
        } else {
            ""
        },
    );
    NetConfig::from_toml(&text).unwrap()
}

#[test]
fn real_arithmetic_matches_direct_convolution() {
    for seed in 0..25 {
        let net = TinyNet::from_config(&random_net(seed)).unwrap();
        let x = net.eval_inputs();
        let got = net.forward(&x, false, &[]).unwrap();
        assert!(got.recorded.is_empty());
        let want = naive_forward(&net, &x);
        assert_eq!(got.logits.len(), want.len());
        for (g, w) in got.logits.iter().flatten().zip(want.iter().flatten()) {
            let rel = (g - w).abs() / w.abs().max(1e-12);
            assert!(
                rel <= 1e-6 || (g - w).abs() <= 1e-12,
                "seed {seed}: {g} vs {w}"
            );
        }
    }
}

#[test]
fn quantized_run_differs_only_by_quantization() {
    // with 8 fractional bits the quantized logits stay close to the real ones
    let net = TinyNet::from_config(&random_net(3)).unwrap();
    let x = net.eval_inputs();
    let real = net.forward(&x, false, &[]).unwrap().logits;
    let quant = net.forward(&x, true, &[]).unwrap().logits;
    for (a, b) in real.iter().flatten().zip(quant.iter().flatten()) {
        assert!((a - b).abs() < 0.5, "{a} vs {b}");
    }
}
