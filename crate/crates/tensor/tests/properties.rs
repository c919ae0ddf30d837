use hima_tensor::check::check_gradients;
use hima_tensor::{Conv2dParams, Tape, Tensor};
use proptest::prelude::*;

const EXTENTS: [usize; 6] = [1, 2, 3, 4, 7, 8];

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0f64..2.0, n).prop_map(move |d| Tensor::new(&shape, d).unwrap())
}

fn image() -> impl Strategy<Value = Tensor<f64>> {
    (1usize..3, prop::sample::select(&EXTENTS[..]), prop::sample::select(&EXTENTS[..]))
        .prop_flat_map(|(c, h, w)| tensor(vec![c, h, w]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dft_roundtrip_and_parseval(x in image()) {
        let tape = Tape::<f64>::new();
        let v = tape.constant(x.clone());
        let (re, im) = v.dft2(None, false).unwrap();
        let (back, back_im) = re.dft2(Some(im), true).unwrap();
        prop_assert!(back.value().max_abs_diff(&x) <= 1e-10);
        prop_assert!(back_im.value().max_abs() <= 1e-10);

        let s = x.shape();
        let hw = (s[1] * s[2]) as f64;
        let energy: f64 = x.data().iter().map(|v| v * v).sum::<f64>() * hw;
        let spectrum: f64 = re.value().data().iter().zip(im.value().data()).map(|(a, b)| a * a + b * b).sum();
        prop_assert!((energy - spectrum).abs() <= 1e-8 * energy.max(1e-300));
    }

    #[test]
    fn dft_roundtrip_f32(x in image()) {
        let x = x.cast::<f32>();
        let tape = Tape::<f32>::new();
        let (re, im) = tape.constant(x.clone()).dft2(None, false).unwrap();
        let (back, _) = re.dft2(Some(im), true).unwrap();
        prop_assert!(back.value().max_abs_diff(&x) <= 1e-4);
    }

    #[test]
    fn shifts_are_inverse(x in image()) {
        let tape = Tape::<f64>::new();
        let v = tape.constant(x.clone());
        let a = v.fftshift().unwrap().ifftshift().unwrap().tensor();
        prop_assert_eq!(a.data(), x.data());
        let b = v.ifftshift().unwrap().fftshift().unwrap().tensor();
        prop_assert_eq!(b.data(), x.data());
    }

    #[test]
    fn pixel_shuffle_roundtrip((r, x) in (1usize..4, 1usize..3, 1usize..4, 1usize..4)
        .prop_flat_map(|(r, c, h, w)| (Just(r), tensor(vec![1, c * r * r, h, w])))) {
        let tape = Tape::<f64>::new();
        let v = tape.constant(x.clone());
        let back = v.pixel_shuffle(r).unwrap().pixel_unshuffle(r).unwrap();
        let back = back.tensor();
        prop_assert_eq!(back.data(), x.data());
    }

    #[test]
    fn softmax_is_a_simplex(x in (1usize..4, 1usize..9).prop_flat_map(|(r, n)| tensor(vec![r, n]))
        .prop_map(|t| t.map(|v| v * 20.0))) {
        let tape = Tape::<f64>::new();
        let s = tape.constant(x.clone()).softmax().unwrap().value();
        let n = x.shape()[1];
        for row in s.data().chunks(n) {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn conv_gradients_on_random_shapes(
        (x, w, dil, groups) in (1usize..3, 1usize..3, 3usize..9, 3usize..9, 1usize..3, 1usize..3)
            .prop_flat_map(|(b, g, h, wd, dil, cpg)| {
                let cin = g * cpg;
                (tensor(vec![b, cin, h, wd]), tensor(vec![2 * g, cpg, 3, 3]), Just(dil), Just(g))
            })
    ) {
        let p = Conv2dParams::same(3, dil).with_groups(groups);
        let r = check_gradients(&[x, w], move |_, v| v[0].conv2d(v[1], None, p), 1e-5, 64).unwrap();
        prop_assert!(r.overall <= 1e-4, "{:?}", r);
    }
}
