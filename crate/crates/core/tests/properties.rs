use cinerecon::kspace::{
    adjoint_operator, center_crop, fft2c_frames, forward_operator, inner_product, make_mask,
    zero_pad, CineSlice, KSpaceData, Sampling, SamplingMask,
};
use cinerecon::losses::{
    l1_loss, l1_split_loss, l2_loss, perp_loss, ssim_loss, LossConfig, LossKind,
};
use cinerecon::metrics::{nmse, ssim};
use cinerecon::C64;
use ndarray::{Array2, Array3};
use proptest::prelude::*;

fn complex_stack(t: usize, h: usize, w: usize) -> impl Strategy<Value = Array3<C64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), t * h * w).prop_map(move |v| {
        Array3::from_shape_vec(
            (t, h, w),
            v.into_iter().map(|(a, b)| C64::new(a, b)).collect(),
        )
        .unwrap()
    })
}

fn positive_image(h: usize, w: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(0.0f64..1.0, h * w)
        .prop_map(move |v| Array2::from_shape_vec((h, w), v).unwrap())
}

fn acceleration() -> impl Strategy<Value = usize> {
    prop::sample::select(vec![4usize, 8, 10])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mask_has_center_block_and_stride(w in 24usize..160, acc in acceleration(), seed in any::<u64>()) {
        let center = (w / acc).max(1);
        let mask = make_mask(w, acc, center, seed).unwrap();
        let lines = mask.lines();
        let start = w / 2 - center / 2;
        prop_assert!((start..start + center).all(|c| lines[c]));
        let outside: Vec<usize> = (0..w).filter(|&c| lines[c] && !(start..start + center).contains(&c)).collect();
        for pair in outside.windows(2) {
            prop_assert_eq!((pair[1] - pair[0]) % acc, 0);
        }
        prop_assert!(mask.sampled_count() >= w / acc);
        prop_assert!(mask.sampled_count() <= w.div_ceil(acc) + center);
        prop_assert_eq!(&make_mask(w, acc, center, seed).unwrap(), &mask);
        let back = SamplingMask::from_lines(lines.clone(), mask.params()).unwrap();
        prop_assert_eq!(back, mask);
    }

    #[test]
    fn forward_and_adjoint_are_adjoint(
        x in complex_stack(2, 6, 12),
        y in complex_stack(2, 6, 12),
        acc in acceleration(),
        seed in any::<u64>(),
    ) {
        let mask = make_mask(12, acc, 1, seed).unwrap();
        let ex = forward_operator(&CineSlice::new(x.clone()).unwrap(), &mask).unwrap();
        let w = mask.weights();
        let masked_y = Array3::from_shape_fn(y.dim(), |(t, i, j)| y[[t, i, j]] * w[j]);
        let ehy = adjoint_operator(&KSpaceData::new(masked_y.clone(), Sampling::Masked(mask)).unwrap());
        let lhs = inner_product(ex.data(), &masked_y);
        let rhs = inner_product(&x, ehy.data());
        prop_assert!((lhs - rhs).norm() <= 1e-9 * (1.0 + lhs.norm()));
    }

    #[test]
    fn centred_fft_preserves_energy(x in complex_stack(2, 7, 10)) {
        let k = fft2c_frames(&x).unwrap();
        let ex: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let ek: f64 = k.iter().map(|v| v.norm_sqr()).sum();
        prop_assert!((ex - ek).abs() <= 1e-9 * ex.max(1.0));
    }

    #[test]
    fn pad_then_crop_is_identity(x in complex_stack(2, 5, 9), extra_h in 0usize..6, extra_w in 0usize..6) {
        let s = CineSlice::new(x).unwrap();
        let padded = zero_pad(&s, (5 + extra_h, 9 + extra_w)).unwrap();
        prop_assert_eq!(padded.original_size(), (5, 9));
        let cropped = center_crop(&padded, (5, 9)).unwrap();
        prop_assert_eq!(cropped.data(), s.data());
    }

    #[test]
    fn losses_are_nonnegative_and_vanish_at_target(p in complex_stack(2, 9, 9), t in complex_stack(2, 9, 9)) {
        let cfg = LossConfig::single(LossKind::L1Split);
        let pm = p.mapv(|v| v.norm());
        let tm = t.mapv(|v| v.norm());
        for v in [
            l1_loss(&p, &t).unwrap(),
            l2_loss(&p, &t).unwrap(),
            perp_loss(&p, &t).unwrap(),
            l1_split_loss(&p, &t, &cfg).unwrap(),
            ssim_loss(pm.view(), tm.view(), 7).unwrap(),
        ] {
            prop_assert!(v >= -1e-12);
        }
        prop_assert!(l1_loss(&t, &t).unwrap().abs() < 1e-12);
        prop_assert!(perp_loss(&t, &t).unwrap().abs() < 1e-12);
        prop_assert!(l1_split_loss(&t, &t, &cfg).unwrap().abs() < 1e-12);
        prop_assert!(ssim_loss(tm.view(), tm.view(), 7).unwrap().abs() < 1e-12);
    }

    #[test]
    fn perp_and_l1_ignore_a_shared_global_phase(p in complex_stack(2, 6, 6), t in complex_stack(2, 6, 6), phi in -3.2f64..3.2) {
        let rot = C64::from_polar(1.0, phi);
        let (pr, tr) = (p.mapv(|v| v * rot), t.mapv(|v| v * rot));
        prop_assert!((perp_loss(&pr, &tr).unwrap() - perp_loss(&p, &t).unwrap()).abs() < 1e-9);
        prop_assert!((l1_loss(&pr, &tr).unwrap() - l1_loss(&p, &t).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn split_l1_at_unit_ratio_is_plain_l1(p in complex_stack(2, 8, 10), t in complex_stack(2, 8, 10), cutoff in 0.05f64..0.9) {
        let cfg = LossConfig {
            highpass_cutoff: cutoff,
            highpass_weight_ratio: 1.0,
            ..LossConfig::single(LossKind::L1Split)
        };
        let a = l1_split_loss(&p, &t, &cfg).unwrap();
        let b = l1_loss(&p, &t).unwrap();
        prop_assert!((a - b).abs() <= 1e-6 * b.max(1.0));
    }

    #[test]
    fn nmse_is_scale_invariant(p in positive_image(8, 8), r in positive_image(8, 8), c in 0.01f64..100.0) {
        prop_assume!(r.iter().any(|&v| v > 1e-3));
        let a = nmse(p.view(), r.view()).unwrap();
        let b = nmse((&p * c).view(), (&r * c).view()).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-12));
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(x in positive_image(12, 12), y in positive_image(12, 12)) {
        let opts = Default::default();
        let a = ssim(x.view(), y.view(), Some(1.0), &opts).unwrap();
        let b = ssim(y.view(), x.view(), Some(1.0), &opts).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a <= 1.0 + 1e-12);
        prop_assert!((ssim(x.view(), x.view(), Some(1.0), &opts).unwrap() - 1.0).abs() < 1e-12);
    }
}
