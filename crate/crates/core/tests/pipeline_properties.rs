use cwt::data::*;
use cwt::eval::{aggregate, attack_success_rate};
use cwt::explain::grad_cam;
use cwt::nn::{predictions, Model, ModelSpec};
use cwt::{Rng, Tensor};
use proptest::prelude::*;

fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.next_f64() as f32).unwrap()
}

fn random_dataset(n: usize, seed: u64) -> Dataset {
    let mut r = Rng::new(seed);
    let images = random(&[n, 1, 8, 8], &mut r);
    let labels = (0..n).map(|_| r.below(4)).collect();
    Dataset::from_tensor(&images, labels, 4, "random").unwrap()
}

fn small_model(seed: u64) -> Model<f32> {
    let spec = ModelSpec::parse("input 1 8 8\nconv 3 3 1 1\nrelu\nmaxpool\nflatten\ndense 4").unwrap();
    Model::init(spec, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn heatmap_range_dims_and_rescaling(seed in any::<u64>(), h in 5usize..20, w in 5usize..20, stride in 1usize..3, factor in 0.01f32..100.0) {
        let spec = ModelSpec::parse(&format!("input 2 {h} {w}\nconv 4 3 {stride} 0\nrelu\nconv 3 2 1 0\nflatten\ndense 3")).unwrap();
        let model = Model::<f32>::init(spec, seed).unwrap();
        let x = random(&[2, h, w], &mut Rng::new(seed));
        for layer in [0, 2] {
            let map = grad_cam(&model, &x, (seed % 3) as usize, Some(layer)).unwrap();
            prop_assert_eq!(map.values.shape(), &[h, w]);
            let max = map.values.data().iter().copied().fold(0.0f32, f32::max);
            prop_assert!(map.values.data().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(max == 1.0 || map.values.data().iter().all(|v| *v == 0.0));
        }
        // scaling the head scales every logit gradient by the same positive factor
        let mut scaled = model.clone();
        for p in scaled.params_mut()[4].as_mut().unwrap().weight.data_mut() {
            *p *= factor;
        }
        let a = grad_cam(&model, &x, 0, None).unwrap();
        let b = grad_cam(&scaled, &x, 0, None).unwrap();
        for (u, v) in a.values.data().iter().zip(b.values.data()) {
            prop_assert!((u - v).abs() <= 1e-4);
        }
    }

    #[test]
    fn aggregate_matches_two_pass_oracle(values in prop::collection::vec(0.0f64..100.0, 1..20)) {
        let (mean, std) = aggregate(&values).unwrap();
        let n = values.len() as f64;
        let oracle_mean = values.iter().sum::<f64>() / n;
        let oracle_var = values.iter().map(|v| v * v).sum::<f64>() / n - oracle_mean * oracle_mean;
        prop_assert!((mean - oracle_mean).abs() < 1e-9);
        prop_assert!((std - oracle_var.max(0.0).sqrt()).abs() < 1e-5);
    }

    #[test]
    fn asr_bounded_and_permutation_invariant(seed in any::<u64>(), n in 1usize..30) {
        let model = small_model(seed);
        let data = random_dataset(n, seed);
        let asr = attack_success_rate(&model, &data.images().unwrap(), data.labels()).unwrap();
        prop_assert!((0.0..=100.0).contains(&asr));
        let mut order: Vec<usize> = (0..n).collect();
        Rng::new(seed ^ 9).shuffle(&mut order);
        let shuffled = data.select(&order);
        prop_assert_eq!(attack_success_rate(&model, &shuffled.images().unwrap(), shuffled.labels()).unwrap(), asr);
    }

    #[test]
    fn filter_keeps_only_correct_and_is_idempotent(seed in any::<u64>()) {
        let models = [small_model(seed), small_model(seed ^ 1)];
        let refs: Vec<&Model<f32>> = models.iter().collect();
        let data = random_dataset(60, seed);
        match filter_correct(&data, &refs) {
            Ok(kept) => {
                for m in &models {
                    prop_assert_eq!(predictions(m, &kept).unwrap(), kept.labels().to_vec());
                }
                let again = filter_correct(&kept, &refs).unwrap();
                prop_assert_eq!(again.pixels(), kept.pixels());
                prop_assert_eq!(again.labels(), kept.labels());
            }
            Err(_) => {
                let none_correct = (0..data.len()).all(|i| {
                    let one = data.select(&[i]);
                    models.iter().any(|m| predictions(m, &one).unwrap()[0] != one.labels()[0])
                });
                prop_assert!(none_correct);
            }
        }
    }

    #[test]
    fn loaders_are_pure(seed in any::<u64>(), n in 1usize..6) {
        let mut r = Rng::new(seed);
        let pixels: Vec<u8> = (0..n * 3072).map(|_| r.below(256) as u8).collect();
        let mut cifar = Vec::new();
        for i in 0..n {
            cifar.push(r.below(10) as u8);
            cifar.extend_from_slice(&pixels[i * 3072..(i + 1) * 3072]);
        }
        let a = parse_cifar10(&cifar, "x").unwrap();
        let b = parse_cifar10(&cifar, "x").unwrap();
        prop_assert_eq!(a.pixels(), b.pixels());
        prop_assert!(a.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        let idx = encode_idx_images(&pixels[..n * 784], n, 28, 28);
        prop_assert_eq!(parse_idx_images(&idx).unwrap(), parse_idx_images(&idx).unwrap());
        let (count, rows, cols, bytes) = parse_idx_images(&idx).unwrap();
        prop_assert_eq!((count, rows, cols), (n, 28, 28));
        prop_assert_eq!(&bytes[..], &pixels[..n * 784]);
    }

    #[test]
    fn tnsr_bit_exact_and_pnm_within_quantization(seed in any::<u64>(), c in prop::sample::select(vec![1usize, 3]), h in 1usize..10, w in 1usize..10) {
        let mut r = Rng::new(seed);
        let t = Tensor::from_fn(&[c, h, w], |_| f32::from_bits(r.next_u64() as u32 & 0x3f7f_ffff)).unwrap();
        prop_assert_eq!(decode_tnsr(&encode_tnsr(&t)).unwrap(), t);
        let img = random(&[c, h, w], &mut r);
        let back = decode_pnm(&encode_pnm(&img).unwrap()).unwrap();
        prop_assert_eq!(back.shape(), img.shape());
        for (a, b) in img.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-7);
        }
    }
}
