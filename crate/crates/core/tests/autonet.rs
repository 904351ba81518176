use oamtopo::autonet::{conv_stack, decode_model, encode_model, fit, mlp, InitScheme, Layer, Optimizer, OptimizerState};
use oamtopo::{rng, Model, ModelInput, NetworkSpec, Tensor, TrainConfig};

/// Straight-loop forward pass over one sample, written independently of the
/// im2col/GEMM implementation.
fn scalar_forward(model: &Model, input: &Tensor) -> Vec<f64> {
    let mut x = input.data.clone();
    let mut shape = input.shape.clone();
    let mut t = 0;
    for layer in &model.spec.layers {
        match *layer {
            Layer::Conv {
                kernel: k,
                out_channels: co,
                stride: st,
                padding: pd,
            } => {
                let w = &model.params.tensors[t].data;
                let b = &model.params.tensors[t + 1].data;
                t += 2;
                let (ci, h, wd) = (shape[0], shape[1], shape[2]);
                let ho = (h + 2 * pd - k) / st + 1;
                let wo = (wd + 2 * pd - k) / st + 1;
                let mut y = vec![0.0; co * ho * wo];
                for o in 0..co {
                    for r in 0..ho {
                        for c in 0..wo {
                            let mut acc = b[o];
                            for i in 0..ci {
                                for kr in 0..k {
                                    for kc in 0..k {
                                        let rr = (r * st + kr) as isize - pd as isize;
                                        let cc = (c * st + kc) as isize - pd as isize;
                                        if rr < 0 || cc < 0 || rr >= h as isize || cc >= wd as isize {
                                            continue;
                                        }
                                        acc += w[((o * ci + i) * k + kr) * k + kc]
                                            * x[(i * h + rr as usize) * wd + cc as usize];
                                    }
                                }
                            }
                            y[(o * ho + r) * wo + c] = acc;
                        }
                    }
                }
                x = y;
                shape = vec![co, ho, wo];
            }
            Layer::MaxPool { kernel: k, stride: st } => {
                let (c, h, wd) = (shape[0], shape[1], shape[2]);
                let ho = (h - k) / st + 1;
                let wo = (wd - k) / st + 1;
                let mut y = vec![f64::NEG_INFINITY; c * ho * wo];
                for ch in 0..c {
                    for r in 0..ho {
                        for cc in 0..wo {
                            for kr in 0..k {
                                for kc in 0..k {
                                    let v = x[(ch * h + r * st + kr) * wd + cc * st + kc];
                                    let slot = &mut y[(ch * ho + r) * wo + cc];
                                    *slot = slot.max(v);
                                }
                            }
                        }
                    }
                }
                x = y;
                shape = vec![c, ho, wo];
            }
            Layer::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
            Layer::Flatten => shape = vec![x.len()],
            Layer::Fc { out_dim } => {
                let w = &model.params.tensors[t].data;
                let b = &model.params.tensors[t + 1].data;
                t += 2;
                let n = x.len();
                x = (0..out_dim)
                    .map(|o| b[o] + (0..n).map(|i| w[o * n + i] * x[i]).sum::<f64>())
                    .collect();
                shape = vec![out_dim];
            }
            Layer::Softmax => {
                let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
                let z: f64 = e.iter().sum();
                x = e.into_iter().map(|v| v / z).collect();
            }
        }
    }
    x
}

fn random_tensor(seed: u64, shape: &[usize]) -> Tensor {
    let mut s = rng::stream(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng::uniform(&mut s, -1.0, 1.0)).collect()).unwrap()
}

fn randomize_biases(model: &mut Model, seed: u64) {
    let mut s = rng::stream(seed);
    for t in &mut model.params.tensors {
        if t.shape.len() == 1 {
            for v in &mut t.data {
                *v = rng::uniform(&mut s, -0.5, 0.5);
            }
        }
    }
}

#[test]
fn forward_matches_scalar_reference() {
    let specs = [
        conv_stack(&[2, 9, 9], &[3, 4], 7, 5),
        NetworkSpec {
            input_shape: vec![3, 11, 10],
            layers: vec![
                Layer::Conv {
                    kernel: 3,
                    out_channels: 4,
                    stride: 2,
                    padding: 2,
                },
                Layer::Relu,
                Layer::MaxPool { kernel: 3, stride: 2 },
                Layer::Conv {
                    kernel: 1,
                    out_channels: 2,
                    stride: 1,
                    padding: 0,
                },
                Layer::Flatten,
                Layer::Fc { out_dim: 6 },
                Layer::Relu,
                Layer::Fc { out_dim: 4 },
                Layer::Softmax,
            ],
            class_count: 4,
        },
        mlp(13, 9, 3),
    ];
    for (case, spec) in specs.into_iter().enumerate() {
        let shape = spec.input_shape.clone();
        let mut model = Model::new(spec, None, InitScheme::HeUniform, 100 + case as u64).unwrap();
        randomize_biases(&mut model, case as u64);
        let inputs: Vec<Tensor> = (0..4).map(|i| random_tensor(case as u64 * 10 + i, &shape)).collect();
        let batch: Vec<ModelInput> = inputs.iter().cloned().map(ModelInput::Tensor).collect();
        let probs = model.forward(&batch).unwrap();
        let m = model.spec.class_count;
        for (i, x) in inputs.iter().enumerate() {
            let want = scalar_forward(&model, x);
            let sum: f64 = probs.data[i * m..(i + 1) * m].iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            for (a, b) in probs.data[i * m..(i + 1) * m].iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "case {case} sample {i}: {a} vs {b}");
            }
        }
    }
}

/// Two well separated blobs per class in 4-D.
fn toy_problem() -> (Vec<ModelInput>, Vec<usize>) {
    let mut s = rng::stream(5);
    let centres = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]];
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..60 {
        let c = i % 3;
        let data = centres[c].iter().map(|v| v + rng::uniform(&mut s, -0.2, 0.2)).collect();
        inputs.push(ModelInput::Tensor(Tensor::new(&[4], data).unwrap()));
        labels.push(c);
    }
    (inputs, labels)
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (inputs, labels) = toy_problem();
    for optimizer in [Optimizer::Sgd, Optimizer::Adam] {
        let mut model = Model::new(mlp(4, 8, 3), None, InitScheme::HeUniform, 1).unwrap();
        let before = model.params.clone();
        let cfg = TrainConfig {
            optimizer,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let mut state = OptimizerState::new();
        for _ in 0..3 {
            state.train_step(&mut model, &inputs[..16], &labels[..16], &cfg).unwrap();
        }
        assert_eq!(model.params, before);
    }
}

#[test]
fn toy_problem_is_learned() {
    let (inputs, labels) = toy_problem();
    let mut model = Model::new(mlp(4, 16, 3), None, InitScheme::HeUniform, 2).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        batch_size: 10,
        epochs: 40,
        seed: 3,
        ..TrainConfig::default()
    };
    let history = fit(&mut model, &inputs, &labels, &cfg).unwrap();
    assert_eq!(history.last().unwrap().accuracy, 1.0);
    assert!(history.last().unwrap().loss < history[0].loss);
    let probs = model.forward(&inputs).unwrap();
    for (i, &y) in labels.iter().enumerate() {
        assert_eq!(oamtopo::autonet::predict(&probs.data[i * 3..(i + 1) * 3]), y);
    }
}

#[test]
fn training_is_deterministic() {
    let (inputs, labels) = toy_problem();
    let run = || {
        let mut model = Model::new(mlp(4, 8, 3), None, InitScheme::HeUniform, 9).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 7,
            seed: 4,
            ..TrainConfig::default()
        };
        let h = fit(&mut model, &inputs, &labels, &cfg).unwrap();
        (encode_model(&model), h)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    assert_eq!(decode_model(&a).unwrap(), decode_model(&b).unwrap());
}
