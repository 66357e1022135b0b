use asconvsr_core::assembled::{assemble_kernels, Coefficients, KernelBasis};
use asconvsr_core::metrics::{bicubic_resize, efficiency_score, psnr_rgb, ssim_rgb};
use asconvsr_core::nn::{pixel_shuffle, pixel_unshuffle, repeat_upscale};
use asconvsr_core::train::{charbonnier_loss, dihedral};
use asconvsr_core::{Rng, Tensor};
use proptest::prelude::*;

fn tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    Rng::new(seed).uniform(shape, 0.0, 1.0).unwrap()
}

fn nearest(x: &Tensor<f64>, r: usize) -> Tensor<f64> {
    let [b, c, h, w] = x.dims4().unwrap();
    Tensor::from_fn(&[b, c, h * r, w * r], |i| {
        let xo = i % (w * r);
        let yo = (i / (w * r)) % (h * r);
        let plane = i / (w * r * h * r);
        x.data()[plane * h * w + (yo / r) * w + xo / r]
    })
    .unwrap()
}

fn sorted(t: &Tensor<f64>) -> Vec<f64> {
    let mut v = t.data().to_vec();
    v.sort_by(f64::total_cmp);
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unshuffle_then_shuffle_is_identity(b in 1usize..3, c in 1usize..4, hq in 1usize..5, wq in 1usize..5, r in 1usize..5, seed: u64) {
        let x = tensor(&[b, c, hq * r, wq * r], seed);
        let u = pixel_unshuffle(&x, r).unwrap();
        prop_assert_eq!(u.shape(), &[b, c * r * r, hq, wq][..]);
        prop_assert_eq!(pixel_shuffle(&u, r).unwrap(), x);
    }

    #[test]
    fn repeat_then_shuffle_is_nearest_neighbour(c in 1usize..4, h in 1usize..6, w in 1usize..6, r in 1usize..5, seed: u64) {
        let x = tensor(&[1, c, h, w], seed);
        prop_assert_eq!(pixel_shuffle(&repeat_upscale(&x, r).unwrap(), r).unwrap(), nearest(&x, r));
    }

    #[test]
    fn one_hot_coefficients_select_a_basis(co in 1usize..5, ci in 1usize..4, e in 1usize..5, pick in 0usize..5, seed: u64) {
        let pick = pick % e;
        let basis = tensor(&[e, ci, 3, 3], seed);
        let coeff = Tensor::from_fn(&[1, co, e], |i| if i % e == pick { 1.0 } else { 0.0 }).unwrap();
        let k = assemble_kernels(&Coefficients::new(coeff).unwrap(), KernelBasis::new(&basis).unwrap()).unwrap();
        let n = ci * 9;
        for j in 0..co {
            prop_assert_eq!(&k.data()[j * n..(j + 1) * n], &basis.data()[pick * n..(pick + 1) * n]);
        }
    }

    #[test]
    fn psnr_is_symmetric_and_shift_invariant(h in 2usize..10, w in 2usize..10, shift in -0.2f64..0.2, s1: u64, s2: u64) {
        let a = tensor(&[1, 3, h, w], s1).scale(0.5).unwrap();
        let b = tensor(&[1, 3, h, w], s2).scale(0.5).unwrap();
        let p = psnr_rgb(&a, &b).unwrap();
        prop_assert_eq!(p, psnr_rgb(&b, &a).unwrap());
        let d = Tensor::full(a.shape(), 0.25 + shift).unwrap();
        let shifted = psnr_rgb(&a.add(&d).unwrap(), &b.add(&d).unwrap()).unwrap();
        prop_assert!((p - shifted).abs() < 1e-9, "{} vs {}", p, shifted);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(h in 11usize..20, w in 11usize..20, s1: u64, s2: u64) {
        let a = tensor(&[1, 3, h, w], s1);
        let b = tensor(&[1, 3, h, w], s2);
        let s = ssim_rgb(&a, &b).unwrap();
        prop_assert!((s - ssim_rgb(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((ssim_rgb(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn score_rises_with_psnr_and_falls_with_runtime(psnr in 25.0f64..35.0, dp in 0.01f64..2.0, rt in 0.5f64..100.0, drt in 0.01f64..10.0) {
        let base = efficiency_score(psnr, 29.81, rt).unwrap();
        prop_assert!(efficiency_score(psnr + dp, 29.81, rt).unwrap() > base);
        prop_assert!(efficiency_score(psnr, 29.81, rt + drt).unwrap() < base);
    }

    #[test]
    fn dihedral_group_laws(side in 1usize..6, k in 0usize..8, seed: u64) {
        let x = tensor(&[1, 2, side, side], seed);
        let flip = dihedral(&x, 1).unwrap();
        prop_assert_eq!(dihedral(&flip, 1).unwrap(), x.clone());
        let mut r = x.clone();
        for _ in 0..4 {
            r = dihedral(&r, 2).unwrap();
        }
        prop_assert_eq!(&r, &x);
        let y = dihedral(&x, k).unwrap();
        prop_assert_eq!(sorted(&y), sorted(&x));
        prop_assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn dihedral_commutes_with_upscaling(side in 1usize..5, k in 0usize..8, seed: u64) {
        let x = tensor(&[1, 3, side, side], seed);
        prop_assert_eq!(dihedral(&nearest(&x, 2), k).unwrap(), nearest(&dihedral(&x, k).unwrap(), 2));
    }

    #[test]
    fn bicubic_preserves_constants(h in 1usize..8, w in 1usize..8, oh in 1usize..16, ow in 1usize..16, v in 0.0f64..1.0) {
        let x = Tensor::full(&[1, 3, h, w], v).unwrap();
        let y = bicubic_resize(&x, oh, ow).unwrap();
        prop_assert!(y.data().iter().all(|&u| (u - v).abs() < 1e-12));
    }

    #[test]
    fn charbonnier_is_nonnegative_with_bounded_gradient(n in 1usize..50, s1: u64, s2: u64) {
        let a = tensor(&[1, 1, 1, n], s1);
        let b = tensor(&[1, 1, 1, n], s2);
        let (loss, g) = charbonnier_loss(&a, &b, 1e-3).unwrap();
        prop_assert!(loss >= 0.0);
        let bound = 1.0 / n as f64 + 1e-15;
        prop_assert!(g.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn rng_streams_are_reproducible(seed: u64, stream in 0u64..4) {
        let mut a = Rng::with_stream(seed, stream);
        let mut b = Rng::with_stream(seed, stream);
        let xa: Vec<f64> = (0..8).map(|_| a.next_f64()).collect();
        let xb: Vec<f64> = (0..8).map(|_| b.next_f64()).collect();
        prop_assert_eq!(xa, xb);
        let mut other = Rng::with_stream(seed, stream + 1);
        prop_assert_ne!(a.next_f64(), other.next_f64());
    }
}
