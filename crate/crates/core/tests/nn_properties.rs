use cwt::data::{decode_checkpoint, encode_checkpoint};
use cwt::nn::{cross_entropy, Checkpoint, Layer, Model, ModelSpec, Shape};
use cwt::{Rng, Tensor};
use proptest::prelude::*;

fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.next_f64() as f32).unwrap()
}

/// A random valid stack: conv/relu/maxpool body, flatten or gap, dense head.
fn random_spec(seed: u64) -> ModelSpec {
    let mut r = Rng::new(seed);
    let input = [1 + r.below(3), 6 + r.below(10), 6 + r.below(10)];
    let mut layers = Vec::new();
    let (mut h, mut w) = (input[1], input[2]);
    for _ in 0..1 + r.below(3) {
        let kernel = 1 + r.below(3);
        let padding = r.below(kernel);
        let stride = 1 + r.below(2);
        if h + 2 * padding < kernel || w + 2 * padding < kernel {
            break;
        }
        layers.push(Layer::Conv2d {
            out_channels: 1 + r.below(5),
            kernel,
            stride,
            padding,
        });
        h = (h + 2 * padding - kernel) / stride + 1;
        w = (w + 2 * padding - kernel) / stride + 1;
        layers.push(Layer::Relu);
        if h >= 2 && w >= 2 && r.below(2) == 0 {
            layers.push(Layer::MaxPool2d);
            h /= 2;
            w /= 2;
        }
    }
    layers.push(if r.below(2) == 0 { Layer::Flatten } else { Layer::GlobalAvgPool });
    if r.below(2) == 0 {
        layers.push(Layer::Dense { out_features: 2 + r.below(6) });
        layers.push(Layer::Relu);
    }
    layers.push(Layer::Dense { out_features: 2 + r.below(9) });
    ModelSpec::new(input, layers).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shapes_chain_to_logits(seed in any::<u64>()) {
        let spec = random_spec(seed);
        let shapes = spec.shapes().unwrap();
        let [c, h, w] = spec.input;
        prop_assert_eq!(shapes[0], Shape::Spatial { c, h, w });
        let Some(Layer::Dense { out_features }) = spec.layers.last() else { unreachable!() };
        prop_assert_eq!(*shapes.last().unwrap(), Shape::Flat(*out_features));
        prop_assert_eq!(ModelSpec::parse(&spec.to_string()).unwrap(), spec);
    }

    #[test]
    fn forward_is_pure(seed in any::<u64>()) {
        let spec = random_spec(seed);
        let model = Model::<f32>::init(spec.clone(), seed).unwrap();
        let [c, h, w] = spec.input;
        let x = random(&[3, c, h, w], &mut Rng::new(seed));
        let a = model.forward(&x).unwrap();
        prop_assert_eq!(a.shape(), &[3, spec.classes()]);
        prop_assert_eq!(model.forward(&x).unwrap(), a);
        prop_assert_eq!(model.clone().forward(&x).unwrap(), model.forward(&x).unwrap());
    }

    #[test]
    fn cross_entropy_nonnegative(logits in prop::collection::vec(-50.0f64..50.0, 2..12), pick in any::<prop::sample::Index>()) {
        let label = pick.index(logits.len());
        let (loss, grad) = cross_entropy(&logits, label).unwrap();
        prop_assert!(loss >= 0.0);
        // softmax minus one-hot sums to zero
        prop_assert!(grad.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_give_ln_classes(classes in 1usize..50, value in -10.0f64..10.0) {
        let (loss, _) = cross_entropy(&vec![value; classes], 0).unwrap();
        prop_assert_eq!(loss, (classes as f64).ln());
    }

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>()) {
        let spec = random_spec(seed);
        let model = Model::<f32>::init(spec, seed).unwrap();
        let ck = Checkpoint::from_model(&model, Default::default());
        let back = decode_checkpoint(&encode_checkpoint(&ck).unwrap()).unwrap();
        let restored = back.model().unwrap();
        prop_assert_eq!(restored.params(), model.params());
    }

    #[test]
    fn maxpool_conserves_gradient_mass(c in 1usize..4, h in 2usize..12, w in 2usize..12, seed in any::<u64>()) {
        // pool straight into the logits: d loss / d x is the upstream gradient
        // routed to one source per window, so magnitudes sum to the same total
        let spec = ModelSpec::new([c, h, w], vec![Layer::MaxPool2d, Layer::Flatten, Layer::Dense { out_features: 3 }]).unwrap();
        let mut model = Model::<f64>::init(spec, seed).unwrap();
        let pooled = c * (h / 2) * (w / 2);
        // identity-like head so the pool's upstream gradient is easy to recover
        let head = model.params_mut()[2].as_mut().unwrap();
        let mut r = Rng::new(seed);
        head.weight.data_mut().iter_mut().for_each(|v| *v = r.uniform(-1.0, 1.0).unwrap());
        let weight = head.weight.clone();
        let x = Tensor::<f64>::from_fn(&[1, c, h, w], |_| r.next_f64()).unwrap();
        let logits = model.forward(&x).unwrap();
        let (_, dlogits) = cross_entropy(logits.data(), 1).unwrap();
        let upstream: Vec<f64> = (0..pooled).map(|j| (0..3).map(|o| dlogits[o] * weight.data()[o * pooled + j]).sum()).collect();
        let (_, g) = model.loss_and_input_grad(&x, &[1]).unwrap();
        let total_in: f64 = g.data().iter().map(|v| v.abs()).sum();
        let total_up: f64 = upstream.iter().map(|v| v.abs()).sum();
        prop_assert!((total_in - total_up).abs() <= 1e-12 * total_up.max(1.0));
        prop_assert!(g.data().iter().filter(|v| **v != 0.0).count() <= pooled);
    }
}
