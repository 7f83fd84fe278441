use mefsfi::image::{
    fuse_chroma_sample, rgb_to_ycbcr, to_u8, ycbcr_to_rgb, PlanarImage, Plane, SampleRange,
};
use mefsfi::metrics::{mef_ssim, mutual_information, q_y, qabf};
use mefsfi::network::{decode_checkpoint, encode_checkpoint, ModelConfig, ModelParams};
use mefsfi::spectrum::{dft2, idft2};
use proptest::prelude::*;

fn plane_strategy(max: usize) -> impl Strategy<Value = Plane> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        prop::collection::vec(-10.0f64..10.0, w * h).prop_map(move |d| Plane::new(w, h, d).unwrap())
    })
}

fn byte_plane(w: usize, h: usize) -> impl Strategy<Value = Plane> {
    prop::collection::vec(0u8..=255, w * h)
        .prop_map(move |d| Plane::new(w, h, d.into_iter().map(f64::from).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dft_round_trip_and_parseval(x in plane_strategy(17)) {
        let s = dft2(&x);
        let back = idft2(&s);
        for (a, b) in x.data.iter().zip(&back.data) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        let energy: f64 = x.data.iter().map(|v| v * v).sum();
        let spectral: f64 = s.amplitude.iter().map(|a| a * a).sum();
        prop_assert!((energy - spectral).abs() <= 1e-10 * energy.max(1e-300));
        prop_assert!(s.amplitude.iter().all(|&a| a >= 0.0));
    }

    #[test]
    fn dft_is_linear(x in plane_strategy(9), alpha in -3.0f64..3.0, beta in -3.0f64..3.0, seed in 0u64..1000) {
        let y = Plane::from_fn(x.width, x.height, |i, j| ((i * 31 + j * 17) as f64 + seed as f64).sin());
        let combo = Plane::new(x.width, x.height, x.data.iter().zip(&y.data).map(|(a, b)| alpha * a + beta * b).collect()).unwrap();
        let (zx, zy, zc) = (dft2(&x).to_complex(), dft2(&y).to_complex(), dft2(&combo).to_complex());
        for i in 0..zc.len() {
            let expect = zx[i] * alpha + zy[i] * beta;
            prop_assert!((zc[i] - expect).norm() < 1e-9);
        }
    }

    #[test]
    fn real_spectra_are_conjugate_symmetric(x in plane_strategy(12)) {
        let s = dft2(&x);
        let (w, h) = (x.width, x.height);
        for v in 0..h {
            for u in 0..w {
                let (i, j) = (v * w + u, ((h - v) % h) * w + (w - u) % w);
                prop_assert!((s.amplitude[i] - s.amplitude[j]).abs() < 1e-9);
                if s.amplitude[i] > 1e-6 {
                    let d = (s.phase[i] + s.phase[j]).rem_euclid(2.0 * std::f64::consts::PI);
                    prop_assert!(d < 1e-7 || 2.0 * std::f64::consts::PI - d < 1e-7);
                }
            }
        }
    }

    #[test]
    fn chroma_fusion_properties(a in 0.0f64..=255.0, b in 0.0f64..=255.0, tau in 0.0f64..=255.0) {
        let f = fuse_chroma_sample(a, b, tau);
        prop_assert_eq!(f, fuse_chroma_sample(b, a, tau));
        prop_assert!(f >= a.min(b) - 1e-9 && f <= a.max(b) + 1e-9);
        prop_assert!((fuse_chroma_sample(a, a, tau) - a).abs() < 1e-9);
        if (b - tau).abs() >= 1e-6 {
            prop_assert!((fuse_chroma_sample(tau, b, tau) - b).abs() < 1e-9);
        }
    }

    #[test]
    fn quantizer_rounds_and_clamps(v in -1000.0f64..1000.0) {
        let q = f64::from(to_u8(v));
        prop_assert!((0.0..=255.0).contains(&q));
        if (0.0..=255.0).contains(&v) {
            prop_assert!((q - v).abs() <= 0.5);
        }
    }

    #[test]
    fn ycbcr_round_trip_of_grays_is_exact(level in 0u8..=255) {
        let g = f64::from(level);
        let img = PlanarImage::new(2, 1, 3, SampleRange::Byte, vec![g; 6]).unwrap();
        let back = ycbcr_to_rgb(&rgb_to_ycbcr(&img).unwrap());
        for v in back.data() {
            prop_assert!((v - g).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn metrics_are_symmetric_in_the_sources(a in byte_plane(12, 11), b in byte_plane(12, 11), f in byte_plane(12, 11)) {
        let close = |x: f64, y: f64| (x - y).abs() < 1e-12;
        prop_assert!(close(mutual_information(&f, &a, &b).unwrap(), mutual_information(&f, &b, &a).unwrap()));
        prop_assert!(close(qabf(&f, &a, &b).unwrap(), qabf(&f, &b, &a).unwrap()));
        prop_assert!(close(mef_ssim(&f, &a, &b).unwrap(), mef_ssim(&f, &b, &a).unwrap()));
        prop_assert!(close(q_y(&f, &a, &b).unwrap(), q_y(&f, &b, &a).unwrap()));
    }

    #[test]
    fn metric_ranges(a in byte_plane(12, 11), b in byte_plane(12, 11), f in byte_plane(12, 11)) {
        prop_assert!(mutual_information(&f, &a, &b).unwrap() >= -1e-12);
        let q = qabf(&f, &a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&q));
        for m in [mef_ssim(&f, &a, &b).unwrap(), q_y(&f, &a, &b).unwrap()] {
            prop_assert!((-1.0..=1.0).contains(&m));
        }
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), growth in 1usize..5, blocks in 1usize..4) {
        let c = ModelConfig { growth: growth * 4, blocks, ..ModelConfig::default() };
        let p = ModelParams::init(&c, seed).unwrap();
        let bytes = encode_checkpoint(&p, &c).unwrap();
        let (q, c2) = decode_checkpoint(&bytes, Some(&c)).unwrap();
        prop_assert_eq!(c2, c);
        prop_assert_eq!(q, p);
    }
}
