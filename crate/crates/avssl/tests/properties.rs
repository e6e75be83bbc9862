//! Property tests over randomized inputs: augmentation invariants, gradient
//! checks on random shapes, sampler bounds, and loss invariances.

use proptest::prelude::*;

use avssl::augment::{
    apply_temporal, draw_temporal, fade, resample, time_mask, time_shift, AugKind, FadeCurve,
    MaskFill, SignalDomain,
};
use avssl::frameworks::infonce_loss;
use avssl::rng::substream;
use avssl::sampling::ClipPairSampler;
use avssl::tensor::check::{finite_difference, grads_close, DEFAULT_FD_STEP};
use avssl::tensor::{Tape, Tensor};

fn signal_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 2..160)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn alpha_zero_is_identity_for_every_temporal_kind(
        data in signal_strategy(),
        seed in any::<u64>(),
    ) {
        let x = Tensor::from_vec(data);
        let mut rng = substream(seed, 0x41, 0, 0);
        for kind in [AugKind::Fade, AugKind::TimeMask, AugKind::TimeShift, AugKind::Resample] {
            let params = draw_temporal(&kind, 0.0, &mut rng);
            let out = apply_temporal(&x, SignalDomain::Audio, &params).unwrap();
            prop_assert_eq!(out.data(), x.data());
        }
    }

    #[test]
    fn temporal_ops_preserve_length(
        data in signal_strategy(),
        alpha in 0.0..=1.0f64,
        seed in any::<u64>(),
    ) {
        let x = Tensor::from_vec(data);
        let mut rng = substream(seed, 0x42, 0, 0);
        for kind in [AugKind::Fade, AugKind::TimeMask, AugKind::TimeShift, AugKind::Resample] {
            let params = draw_temporal(&kind, alpha, &mut rng);
            let out = apply_temporal(&x, SignalDomain::Audio, &params).unwrap();
            prop_assert_eq!(out.len(), x.len());
        }
    }

    #[test]
    fn time_shift_preserves_multiset(
        data in signal_strategy(),
        shift in -1.0..=1.0f64,
    ) {
        let x = Tensor::from_vec(data);
        let out = time_shift(&x, shift);
        let mut a: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u64> = out.data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn mask_touches_nothing_outside_window(
        data in signal_strategy(),
        start in 0.0..=1.0f64,
        len in 0.0..=1.0f64,
        noise_seed in any::<u64>(),
        noise in any::<bool>(),
    ) {
        let t = data.len();
        let len = len.min(1.0 - start);
        let x = Tensor::from_vec(data);
        let fill = if noise { MaskFill::Noise } else { MaskFill::Constant };
        let out = time_mask(&x, SignalDomain::Audio, start, len, fill, noise_seed);
        let s = ((start * t as f64) + 0.5).floor() as usize;
        let l = ((len * t as f64) + 0.5).floor() as usize;
        let e = (s + l).min(t);
        for i in 0..t {
            if i < s || i >= e {
                prop_assert_eq!(out.data()[i], x.data()[i], "index {} outside [{}, {})", i, s, e);
            }
        }
    }

    #[test]
    fn fade_envelope_never_amplifies(
        data in signal_strategy(),
        left in 0.0..=0.5f64,
        right in 0.0..=0.5f64,
        curve_idx in 0..5usize,
    ) {
        let x = Tensor::from_vec(data);
        let out = fade(&x, FadeCurve::ALL[curve_idx], left, right);
        for (o, i) in out.data().iter().zip(x.data()) {
            prop_assert!(o.abs() <= i.abs() + 1e-15);
        }
    }

    #[test]
    fn resample_bounds_distinct_slices(
        data in signal_strategy(),
        factor in 0.05..=1.0f64,
    ) {
        let t = data.len();
        let x = Tensor::from_vec(data);
        match resample(&x, factor) {
            Ok(out) => {
                let mut d: Vec<u64> = out.data().iter().map(|v| v.to_bits()).collect();
                d.sort_unstable();
                d.dedup();
                prop_assert!(d.len() <= (factor * t as f64).ceil().max(1.0) as usize);
            }
            Err(_) => prop_assert!(((factor * t as f64) + 0.5).floor() < 1.0),
        }
    }

    #[test]
    fn pair_sampler_respects_bounds(
        total in 3.0..60.0f64,
        seed in any::<u64>(),
    ) {
        let sampler = ClipPairSampler::default();
        let mut rng = substream(seed, 0x43, 0, 0);
        for _ in 0..20 {
            let t = sampler.draw_interval(total, &mut rng);
            prop_assert!(t >= 0.0);
            prop_assert!(t <= total - sampler.clip_seconds + 1e-12);
        }
    }

    #[test]
    fn infonce_nonnegative_and_scale_invariant(
        seed in any::<u64>(),
        n in 1..5usize,
        d in 2..8usize,
        scale in 0.1..50.0f64,
    ) {
        let mut rng = substream(seed, 0x44, 0, 0);
        use rand::Rng;
        let rows: Vec<f64> = (0..2 * n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss_of = |mult: f64| -> f64 {
            let scaled: Vec<f64> = rows.iter().map(|&v| v * mult).collect();
            let mut tape = Tape::new();
            let raw = tape.constant(Tensor::new(vec![2 * n, d], scaled).unwrap());
            let z = tape.l2_normalize_rows(raw).unwrap();
            let l = infonce_loss(&mut tape, z, 0.5).unwrap();
            tape.value(l).item()
        };
        let base = loss_of(1.0);
        prop_assert!(base >= 0.0);
        prop_assert!((base - loss_of(scale)).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences_on_random_shapes(
        seed in any::<u64>(),
        n in 2..4usize,
        c in 1..3usize,
        h in 3..6usize,
        w in 3..6usize,
        co in 1..3usize,
    ) {
        use rand::Rng;
        let mut rng = substream(seed, 0x45, 0, 0);
        let x = Tensor::new(
            vec![n, c, h, w],
            (0..n * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let k = Tensor::new(
            vec![co, c, 3, 3],
            (0..co * c * 9).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let build = |t: &mut Tape, xs: &[avssl::tensor::Var]| {
            let conv = t.conv2d(xs[0], xs[1], (1, 1), (1, 1)).unwrap();
            let r = t.relu(conv);
            let m = t.spatial_mean(r).unwrap();
            let e = t.exp(m);
            t.sum_all(e)
        };
        let mut tape = Tape::new();
        let vx = tape.leaf(x.clone(), true);
        let vk = tape.leaf(k.clone(), true);
        let loss = build(&mut tape, &[vx, vk]);
        tape.backward(loss).unwrap();
        let inputs = [x, k];
        let numeric = finite_difference(
            |ins: &[Tensor]| {
                let mut t = Tape::new();
                let a = t.leaf(ins[0].clone(), false);
                let b = t.leaf(ins[1].clone(), false);
                let l = build(&mut t, &[a, b]);
                t.value(l).item()
            },
            &inputs,
            DEFAULT_FD_STEP,
        );
        prop_assert!(grads_close(tape.grad(vx).unwrap(), numeric[0].data(), 1e-4, 1e-7));
        prop_assert!(grads_close(tape.grad(vk).unwrap(), numeric[1].data(), 1e-4, 1e-7));
    }
}
