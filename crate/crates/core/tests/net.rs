use force_effect::encode::{EncodedSample, ImageTensor, SampleMeta};
use force_effect::net::{
    backward, decode_greedy, embed, forward, grad_check, init_params, softmax, InitScheme,
    LayerSpec, ModelConfig, PredictorParams, TowerConfig,
};
use force_effect::quantize::{ClassWeights, Token, VelocitySequence, NUM_CLASSES, STOP_INDEX};
use force_effect::scene::{Category, Vec3};
use force_effect::seed;
use proptest::prelude::*;
use rand::Rng;

fn sample(cfg: &ModelConfig, s: u64) -> EncodedSample {
    let mut rng = seed::rng(s);
    let mut t = |[c, h, w]: [usize; 3]| ImageTensor {
        channels: c,
        height: h,
        width: w,
        data: (0..c * h * w).map(|_| rng.random_range(0.0..1.0)).collect(),
    };
    EncodedSample {
        rgbm: t(cfg.image_input),
        force_image: t(cfg.force_input),
        label: VelocitySequence::stop(),
        meta: SampleMeta { scene_seed: s, body_id: 0, category: Category::Box, force: Vec3::ZERO },
    }
}

fn seq(ix: &[usize]) -> VelocitySequence {
    VelocitySequence::new(ix.iter().map(|&i| Token::new(i).unwrap()).collect()).unwrap()
}

fn tensor<'a>(p: &'a PredictorParams, name: &str) -> &'a [f64] {
    &p.tensor(name).unwrap().data
}

/// Plain nested-loop evaluation of one tower: valid convolutions, ReLU, max-pooling
/// and a dense layer, all on `[c][y][x]` arrays.
fn oracle_tower(p: &PredictorParams, prefix: &str, cfg: &TowerConfig, input: &ImageTensor) -> Vec<f64> {
    let mut x: Vec<Vec<Vec<f64>>> = (0..input.channels)
        .map(|c| (0..input.height).map(|y| (0..input.width).map(|xx| input.at(c, y, xx)).collect()).collect())
        .collect();
    let mut flat: Option<Vec<f64>> = None;
    for (i, layer) in cfg.layers.iter().enumerate() {
        match *layer {
            LayerSpec::Conv { kernel: k, stride: s, out_channels } => {
                let w = tensor(p, &format!("{prefix}.{i}.weight"));
                let b = tensor(p, &format!("{prefix}.{i}.bias"));
                let (ic, ih, iw) = (x.len(), x[0].len(), x[0][0].len());
                let (oh, ow) = ((ih - k) / s + 1, (iw - k) / s + 1);
                let mut y = vec![vec![vec![0.0; ow]; oh]; out_channels];
                for o in 0..out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = b[o];
                            for c in 0..ic {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        acc += w[o * ic * k * k + c * k * k + ky * k + kx]
                                            * x[c][oy * s + ky][ox * s + kx];
                                    }
                                }
                            }
                            y[o][oy][ox] = acc;
                        }
                    }
                }
                x = y;
            }
            LayerSpec::MaxPool { kernel: k, stride: s } => {
                let (ih, iw) = (x[0].len(), x[0][0].len());
                let (oh, ow) = ((ih - k) / s + 1, (iw - k) / s + 1);
                x = x
                    .iter()
                    .map(|plane| {
                        (0..oh)
                            .map(|oy| {
                                (0..ow)
                                    .map(|ox| {
                                        let mut m = f64::NEG_INFINITY;
                                        for ky in 0..k {
                                            for kx in 0..k {
                                                m = m.max(plane[oy * s + ky][ox * s + kx]);
                                            }
                                        }
                                        m
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect();
            }
            LayerSpec::Relu => match flat.as_mut() {
                Some(v) => v.iter_mut().for_each(|a| *a = a.max(0.0)),
                None => x.iter_mut().flatten().flatten().for_each(|a| *a = a.max(0.0)),
            },
            LayerSpec::Fc { out_dim } => {
                let input: Vec<f64> = flat.take().unwrap_or_else(|| x.iter().flatten().flatten().copied().collect());
                let w = tensor(p, &format!("{prefix}.{i}.weight"));
                let b = tensor(p, &format!("{prefix}.{i}.bias"));
                let n = input.len();
                flat = Some((0..out_dim).map(|j| b[j] + (0..n).map(|q| w[j * n + q] * input[q]).sum::<f64>()).collect());
            }
        }
    }
    flat.unwrap()
}

fn oracle_forward(p: &PredictorParams, s: &EncodedSample) -> Vec<[f64; NUM_CLASSES]> {
    let cfg = p.config();
    let mut emb = oracle_tower(p, "image_tower", &cfg.image_tower, &s.rgbm);
    emb.extend(oracle_tower(p, "force_tower", &cfg.force_tower, &s.force_image));
    let (h, e2) = (cfg.hidden, emb.len());
    let (wi, wh, b, wo, bo) = (
        tensor(p, "rnn.w_i"),
        tensor(p, "rnn.w_h"),
        tensor(p, "rnn.b"),
        tensor(p, "head.w_o"),
        tensor(p, "head.b_o"),
    );
    let mut prev = vec![0.0; h];
    let mut out = Vec::new();
    for t in 0..cfg.steps {
        let ht: Vec<f64> = (0..h)
            .map(|j| {
                let mut a = b[j] + (0..e2).map(|q| wi[j * e2 + q] * emb[q]).sum::<f64>();
                if t > 0 {
                    a += (0..h).map(|q| wh[j * h + q] * prev[q]).sum::<f64>();
                }
                a.max(0.0)
            })
            .collect();
        let mut z = [0.0; NUM_CLASSES];
        for c in 0..NUM_CLASSES {
            z[c] = bo[c] + (0..h).map(|q| wo[c * h + q] * ht[q]).sum::<f64>();
            if cfg.relu_head {
                z[c] = z[c].max(0.0);
            }
        }
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let sum: f64 = e.iter().sum();
        let mut o = [0.0; NUM_CLASSES];
        for c in 0..NUM_CLASSES {
            o[c] = e[c] / sum;
        }
        out.push(o);
        prev = ht;
    }
    out
}

fn scaled(mut cfg: ModelConfig) -> ModelConfig {
    cfg.init = InitScheme::scaled();
    cfg
}

#[test]
fn forward_matches_straight_line_oracle() {
    for cfg in [scaled(ModelConfig::tiny(4, 16, 16)), scaled(ModelConfig::small(4, 32, 32))] {
        let mut p = init_params(3, &cfg).unwrap();
        let mut rng = seed::rng(8);
        for t in p.tensors_mut() {
            if t.name.ends_with("bias") || t.name == "rnn.b" || t.name == "head.b_o" {
                t.data.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
            }
        }
        let s = sample(&cfg, 17);
        let mut expect = oracle_tower(&p, "image_tower", &cfg.image_tower, &s.rgbm);
        expect.extend(oracle_tower(&p, "force_tower", &cfg.force_tower, &s.force_image));
        let got = embed(&p, &s).unwrap();
        assert_eq!(got.len(), cfg.embed_dim().unwrap());
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        let (probs, _) = forward(&p, &s).unwrap();
        for (o, q) in probs.iter().zip(oracle_forward(&p, &s)) {
            for c in 0..NUM_CLASSES {
                assert!((o[c] - q[c]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn first_layer_weights_have_target_spread() {
    let mut cfg = ModelConfig::small(4, 32, 32);
    cfg.image_tower.layers[0] = LayerSpec::Conv { kernel: 5, stride: 1, out_channels: 100 };
    let p = init_params(1, &cfg).unwrap();
    let w = tensor(&p, "image_tower.0.weight");
    assert!(w.len() >= 10_000);
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((0.008f64.powi(2)..=0.012f64.powi(2)).contains(&var), "variance {var}");

    // Scaled init: RGB inputs at He variance 2/fan_in, the mask channel at 0.01.
    let p = init_params(1, &scaled(cfg)).unwrap();
    let w = tensor(&p, "image_tower.0.weight");
    let var_of = |channel: usize| {
        let v: Vec<f64> = (0..100).flat_map(|o| w[(o * 4 + channel) * 25..(o * 4 + channel + 1) * 25].to_vec()).collect();
        v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
    };
    let he = 2.0 / 100.0;
    assert!((var_of(0) / he - 1.0).abs() < 0.15);
    assert!((var_of(3) / 1e-4 - 1.0).abs() < 0.15);
}

#[test]
fn init_contract() {
    let cfg = ModelConfig::tiny(4, 16, 16);
    let p = init_params(5, &cfg).unwrap();
    let h = cfg.hidden;
    let wh = tensor(&p, "rnn.w_h");
    for i in 0..h {
        for j in 0..h {
            assert_eq!(wh[i * h + j], if i == j { 1.0 } else { 0.0 });
        }
    }
    let data = |q: &PredictorParams| q.tensors().iter().map(|t| t.data.clone()).collect::<Vec<_>>();
    assert_eq!(data(&p), data(&init_params(5, &cfg).unwrap()));
    assert_ne!(data(&p), data(&init_params(6, &cfg).unwrap()));

    let zero = EncodedSample {
        rgbm: ImageTensor::zeros(4, 16, 16),
        force_image: ImageTensor::zeros(3, 16, 16),
        ..sample(&cfg, 0)
    };
    assert!(embed(&p, &zero).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn head_special_cases() {
    let cfg = ModelConfig::tiny(4, 16, 16);
    let s = sample(&cfg, 2);

    let mut p = init_params(4, &cfg).unwrap();
    p.tensor_mut("head.w_o").unwrap().data.fill(0.0);
    for o in forward(&p, &s).unwrap().0 {
        assert!(o.iter().all(|&v| (v - 1.0 / 18.0).abs() < 1e-15));
    }

    let mut p = init_params(4, &cfg).unwrap();
    p.tensor_mut("rnn.w_i").unwrap().data.fill(0.0);
    let probs = forward(&p, &s).unwrap().0;
    assert!(probs.windows(2).all(|w| w[0] == w[1]));
    for o in &probs {
        assert!((o.iter().sum::<f64>() - 1.0).abs() < 1e-12 && o.iter().all(|&v| v > 0.0));
    }
}

#[test]
fn recurrent_weights_are_shared_across_steps() {
    let cfg = scaled(ModelConfig::tiny(4, 16, 16));
    let s = sample(&cfg, 9);
    let mut p = init_params(2, &cfg).unwrap();
    p.tensor_mut("rnn.b").unwrap().data.fill(0.5);
    let before = forward(&p, &s).unwrap().0;
    p.tensor_mut("rnn.w_h").unwrap().data[0] = 2.0;
    let after = forward(&p, &s).unwrap().0;
    assert_eq!(before[0], after[0]);
    for t in 1..cfg.steps {
        assert_ne!(before[t], after[t], "step {t} ignores the shared W_h");
    }
}

#[test]
fn gradient_check_tiny_config() {
    // An O(1) output layer keeps tower gradients well above the finite-difference floor.
    let mut cfg = ModelConfig::tiny(4, 16, 16);
    cfg.init = InitScheme::Scaled { extra_channel_std: 0.01, head_std: (1.0f64 / 8.0).sqrt(), head_bias: 0.0 };
    let p = init_params(11, &cfg).unwrap();
    let s = sample(&cfg, 12);
    let label = seq(&[2, 10, 16, 17]);
    let weights = ClassWeights::uniform(cfg.steps);
    let coarse = grad_check(&p, &s, &label, &weights, 1e-5).unwrap();
    assert!(coarse.max_rel_error < 1e-5, "{coarse:?}");
    assert!(coarse.checked >= 500);
    for g in ["image_tower", "force_tower", "rnn", "head"] {
        let grp = coarse.groups.iter().find(|x| x.group == g).unwrap();
        assert!(grp.checked > 0 && grp.max_rel_error < 1e-5, "{grp:?}");
    }
    let fine = grad_check(&p, &s, &label, &weights, 1e-6).unwrap();
    assert!(fine.max_rel_error < 1e-4);
    assert!(coarse.excluded_fraction < 0.2);
}

#[test]
fn confident_correct_prediction_has_vanishing_gradient() {
    let cfg = ModelConfig::tiny(4, 16, 16);
    let mut p = init_params(1, &cfg).unwrap();
    p.tensor_mut("head.w_o").unwrap().data.fill(0.0);
    p.tensor_mut("head.b_o").unwrap().data[STOP_INDEX] = 40.0;
    let s = sample(&cfg, 1);
    let (probs, trace) = forward(&p, &s).unwrap();
    assert!(probs.iter().all(|o| o[STOP_INDEX] >= 1.0 - 1e-9));
    let g = backward(&p, &trace, &VelocitySequence::stop(), &ClassWeights::uniform(cfg.steps)).unwrap();
    assert!(g.norm() < 1e-6);
}

#[test]
fn output_bias_gradient_is_summed_softmax_residual() {
    let mut cfg = scaled(ModelConfig::tiny(4, 16, 16));
    cfg.relu_head = false;
    let p = init_params(21, &cfg).unwrap();
    let s = sample(&cfg, 5);
    let label = seq(&[4, 12, 17]);
    let (probs, trace) = forward(&p, &s).unwrap();
    let g = backward(&p, &trace, &label, &ClassWeights::uniform(cfg.steps)).unwrap();
    let names: Vec<String> = p.tensors().iter().map(|t| t.name.clone()).collect();
    let bo = &g.0[names.iter().position(|n| n == "head.b_o").unwrap()];
    let padded = label.padded(cfg.steps);
    for c in 0..NUM_CLASSES {
        let expect: f64 = probs
            .iter()
            .zip(&padded)
            .map(|(o, v)| o[c] - if v.index() == c { 1.0 } else { 0.0 })
            .sum::<f64>()
            / cfg.steps as f64;
        assert!((bo[c] - expect).abs() < 1e-12);
    }
}

#[test]
fn greedy_decoding_rules() {
    let peaked = |c: usize| {
        let mut o = [0.01; NUM_CLASSES];
        o[c] = 0.5;
        o
    };
    assert_eq!(decode_greedy(&[peaked(STOP_INDEX), peaked(3)]), VelocitySequence::stop());
    let d: Vec<_> = (0..6).map(|t| peaked(t % 17)).collect();
    assert_eq!(decode_greedy(&d).len(), 6);
    let tie = [1.0 / 18.0; NUM_CLASSES];
    assert_eq!(decode_greedy(&[tie; 6]).tokens()[0].index(), 0);
}

proptest! {
    #[test]
    fn softmax_is_a_shift_invariant_distribution(
        z in prop::array::uniform18(-30.0f64..30.0),
        shift in -100.0f64..100.0,
    ) {
        let o = softmax(&z);
        prop_assert!(o.iter().all(|&v| v > 0.0));
        prop_assert!((o.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted = softmax(&z.map(|v| v + shift));
        for c in 0..NUM_CLASSES {
            prop_assert!((o[c] - shifted[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic(s in 0u64..1000) {
        let cfg = ModelConfig::tiny(4, 16, 16);
        let p = init_params(s, &cfg).unwrap();
        let x = sample(&cfg, s);
        prop_assert_eq!(forward(&p, &x).unwrap().0, forward(&p, &x).unwrap().0);
    }
}
