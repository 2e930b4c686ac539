use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segcrf::densecrf::{meanfield_infer, unary_from_probs, CrfParams, FeatureField, FilterBackend};
use segcrf::labels::argmax;
use segcrf::metrics::{confusion, ConfusionMatrix};
use segcrf::nn::{Conv2d, TransposeConv2d};
use segcrf::tiling::{tile_predict_with_coverage, TileScheme};
use segcrf::{LabelMap, Shape, Tensor};

fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn dilated_conv_matches_zero_inflated_kernel(
        seed in any::<u64>(), cin in 1usize..4, cout in 1usize..4,
        h in 5usize..13, w in 5usize..13, stride in 1usize..3, pad in 0usize..4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(Shape::new(1, cin, h, w), &mut rng);
        let k3 = random(Shape::new(cout, cin, 3, 3), &mut rng);
        let b = random(Shape::new(1, cout, 1, 1), &mut rng);
        let k5 = Tensor::from_fn(Shape::new(cout, cin, 5, 5), |[o, i, y, x]| {
            if y % 2 == 0 && x % 2 == 0 { k3.get(o, i, y / 2, x / 2) } else { 0.0 }
        });
        let a = Conv2d::new(k3, b.clone(), stride, pad, 2).unwrap().forward(&x).unwrap();
        let c = Conv2d::new(k5, b, stride, pad, 1).unwrap().forward(&x).unwrap();
        prop_assert_eq!(a.shape(), c.shape());
        for (p, q) in a.data().iter().zip(c.data()) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn transpose_conv_is_adjoint_of_conv(
        seed in any::<u64>(), k in 1usize..6, s in 1usize..4, n in 6usize..14,
        cin in 1usize..4, cout in 1usize..4,
    ) {
        let p = k / 2;
        prop_assume!(n + 2 * p >= k);
        let out = (n + 2 * p - k) / s + 1;
        let op = n as isize - ((out - 1) * s + k) as isize + 2 * p as isize;
        prop_assume!(op >= 0 && (op as usize) < s);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random(Shape::new(cout, cin, k, k), &mut rng);
        let conv = Conv2d::new(w.clone(), Tensor::zeros(Shape::new(1, cout, 1, 1)), s, p, 1).unwrap();
        let tconv = TransposeConv2d::new(w, Tensor::zeros(Shape::new(1, cin, 1, 1)), s, p, op as usize).unwrap();
        let x = random(Shape::new(2, cin, n, n), &mut rng);
        let y = random(Shape::new(2, cout, out, out), &mut rng);
        let lhs = conv.forward(&x).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&tconv.forward(&y).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn stitched_tiles_cover_every_pixel_once(h in 20usize..180, w in 20usize..180, scale in 1usize..4) {
        let scheme = TileScheme::new(32 * scale, 16 * scale).unwrap();
        let image = Tensor::from_fn(Shape::new(1, 1, h, w), |[_, _, y, x]| (y * w + x) as f64);
        let stitched = tile_predict_with_coverage(&image, |patch| Ok(patch.clone()), scheme).unwrap();
        prop_assert!(stitched.coverage.iter().all(|&c| c == 1));
        // identity prediction must reproduce the input exactly
        prop_assert_eq!(stitched.probs.data(), image.data());
    }

    #[test]
    fn binary_f1_equals_dice(seed in any::<u64>(), h in 1usize..16, w in 1usize..16, density in 0.05f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = LabelMap::from_fn(h, w, |_, _| u8::from(rng.random_bool(density)));
        let b = LabelMap::from_fn(h, w, |_, _| u8::from(rng.random_bool(density)));
        let both = a.data().iter().zip(b.data()).filter(|(x, y)| **x == 1 && **y == 1).count() as f64;
        let sizes = (a.data().iter().chain(b.data()).filter(|v| **v == 1).count()) as f64;
        let dice = if sizes == 0.0 { 1.0 } else { 2.0 * both / sizes };
        prop_assert!((confusion(&a, &b, 2, None).unwrap().prf1(1).f1 - dice).abs() <= 1e-12);
    }

    #[test]
    fn crf_without_pairwise_terms_keeps_unary_argmax(seed in any::<u64>(), h in 2usize..12, w in 2usize..12, iters in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Tensor::from_fn(Shape::new(1, 3, h, w), |_| rng.random_range(0.01..1.0));
        let probs = Tensor::from_fn(raw.shape(), |[_, c, y, x]| {
            raw.get(0, c, y, x) / (0..3).map(|k| raw.get(0, k, y, x)).sum::<f64>()
        });
        let colors = (0..h * w * 3).map(|_| rng.random_range(0.0..255.0)).collect();
        let features = FeatureField::new(h, w, 3, colors).unwrap();
        let params = CrfParams { w1: 0.0, w2: 0.0, iterations: iters, ..CrfParams::default() };
        let (_, labels) = meanfield_infer(&unary_from_probs(&probs).unwrap(), &features, &params, FilterBackend::Permutohedral).unwrap();
        let expected = argmax(&probs).pop().unwrap();
        prop_assert_eq!(labels.data(), expected.data());
    }
}

#[test]
fn hand_computed_confusion_scores() {
    let cm = ConfusionMatrix::from_rows(&[vec![3, 1], vec![2, 4]]).unwrap();
    let s = cm.prf1(0);
    assert!((s.precision - 0.6).abs() < 1e-12);
    assert!((s.recall - 0.75).abs() < 1e-12);
    assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);
    assert!((cm.overall_accuracy() - 0.7).abs() < 1e-12);
    for row in cm.normalize_rows() {
        assert!((row.iter().sum::<f64>() - 100.0).abs() < 1e-9);
    }
}

#[test]
fn smoothness_kernel_removes_isolated_flips() {
    let (h, w) = (32, 32);
    let clean = LabelMap::from_fn(h, w, |_, x| u8::from(x >= 16));
    let mut noisy = clean.clone();
    for i in (7..h * w).step_by(20) {
        noisy.data_mut()[i] = 1 - noisy.data()[i];
    }
    let probs = Tensor::from_fn(Shape::new(1, 2, h, w), |[_, c, y, x]| if noisy.get(y, x) == c { 0.9 } else { 0.1 });
    let features = FeatureField::new(h, w, 3, vec![0.0; h * w * 3]).unwrap();
    let params = CrfParams { w1: 0.0, w2: 3.0, sigma_gamma: 3.0, iterations: 10, ..CrfParams::default() };
    let (_, refined) = meanfield_infer(&unary_from_probs(&probs).unwrap(), &features, &params, FilterBackend::Permutohedral).unwrap();
    assert!(refined.agreement(&clean).unwrap() > noisy.agreement(&clean).unwrap());
}
