use photorisk_core::layers::{mse_loss, sigmoid_scalar, LayerParams};
use photorisk_core::optim::{adam_step, AdamState};
use photorisk_core::recommend::{
    apply_feedback, categorize, filter_from_categories, filter_from_score, personalize, Feedback,
    FilterKind, UserProfile, MAX_INTENSITY_OFFSET, MAX_WARMTH_STEP,
};
use photorisk_core::synth::{gen_dataset, LUX_MAX, LUX_MIN, VARIANCE_MAX, VARIANCE_MIN};
use photorisk_core::{AugmentConfig, Tensor};
use proptest::prelude::*;

fn feedback() -> impl Strategy<Value = Feedback> {
    prop::sample::select(Feedback::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn feedback_never_leaves_bounds(seq in prop::collection::vec(feedback(), 0..60)) {
        let mut p = UserProfile::default();
        for (t, fb) in seq.iter().enumerate() {
            let before = p.feedback_log.len();
            p = apply_feedback(&p, *fb, t as u64);
            prop_assert!(p.intensity_offset.abs() <= MAX_INTENSITY_OFFSET);
            prop_assert!(p.warmth_step.abs() <= MAX_WARMTH_STEP);
            prop_assert_eq!(p.feedback_log.len(), before + 1);
        }
        prop_assert_eq!(p.feedback_log.iter().map(|e| e.feedback).collect::<Vec<_>>(), seq);
    }

    #[test]
    fn personalize_keeps_the_filter(
        seq in prop::collection::vec(feedback(), 0..20),
        score in 0.0f64..=1.0,
    ) {
        let p = seq.iter().fold(UserProfile::default(), |p, fb| apply_feedback(&p, *fb, 0));
        let base = filter_from_score(score);
        let r = personalize(&base, &p);
        prop_assert_eq!(r.filter, base.filter);
        prop_assert_eq!(r.intensity_offset, p.intensity_offset);
        prop_assert_eq!(r.warmth_step, p.warmth_step);
    }

    #[test]
    fn higher_score_never_lowers_protection(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(
            filter_from_score(lo).filter.protection_level()
                <= filter_from_score(hi).filter.protection_level()
        );
    }

    #[test]
    fn sigmoid_is_strictly_inside_unit_interval(x in -30.0f64..30.0) {
        let y = sigmoid_scalar(x);
        prop_assert!(y > 0.0 && y < 1.0);
    }

    #[test]
    fn mse_is_non_negative(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..20)
    ) {
        let n = pairs.len();
        let pred = Tensor::from_vec(&[n], pairs.iter().map(|p| p.0).collect()).unwrap();
        let target = Tensor::from_vec(&[n], pairs.iter().map(|p| p.1).collect()).unwrap();
        let (loss, _) = mse_loss(&pred, &target).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert_eq!(loss == 0.0, pairs.iter().all(|p| p.0 == p.1));
        prop_assert_eq!(mse_loss(&pred, &pred).unwrap().0, 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_pixels_stay_in_unit_interval(
        seed in any::<u64>(),
        noise in 0.0f64..0.5,
        jitter in 0.0f64..0.5,
        blur in 0.0f64..=1.0,
    ) {
        let cfg = AugmentConfig {
            noise_sigma: noise,
            jitter_fraction: jitter,
            blur_probability: blur,
            ..AugmentConfig::default()
        };
        let ds = gen_dataset(3, seed, &cfg).unwrap();
        for s in &ds.samples {
            prop_assert!(s.image.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!((0.0..=1.0).contains(&s.risk_label));
        }
    }
}

#[test]
fn every_band_with_both_boundaries() {
    let cases = [
        (1.0, FilterKind::DarkAmber),
        (0.82, FilterKind::DarkAmber),
        (0.7, FilterKind::DarkAmber),
        (0.699_999_999, FilterKind::CoolGrey),
        (0.64, FilterKind::CoolGrey),
        (0.4, FilterKind::CoolGrey),
        (0.399_999_999, FilterKind::NoFilter),
        (0.31, FilterKind::NoFilter),
        (0.0, FilterKind::NoFilter),
    ];
    for (score, kind) in cases {
        assert_eq!(filter_from_score(score).filter, kind, "score {score}");
    }
}

#[test]
fn category_grid_is_total_and_consistent() {
    use photorisk_core::recommend::{BrightnessCategory as B, VarianceCategory as V};
    let mut seen = std::collections::HashSet::new();
    for i in 0..=90 {
        let lux = LUX_MIN + (LUX_MAX - LUX_MIN) * i as f64 / 90.0;
        for j in 0..=80 {
            let var = VARIANCE_MIN + (VARIANCE_MAX - VARIANCE_MIN) * j as f64 / 80.0;
            let (b, v) = categorize(lux, var);
            let expected_b = if lux >= 900.0 {
                B::High
            } else if lux >= 600.0 {
                B::Medium
            } else {
                B::Low
            };
            assert_eq!(b, expected_b);
            assert_eq!(v, if var >= 6.0 { V::High } else { V::Low });
            seen.insert(filter_from_categories(b, v).filter);
        }
    }
    assert_eq!(seen.len(), FilterKind::ALL.len());
}

fn scalar_layer(w: f64) -> LayerParams {
    LayerParams::new(
        "w",
        Tensor::from_vec(&[1], vec![w]).unwrap(),
        Tensor::from_vec(&[1], vec![0.0]).unwrap(),
    )
}

#[test]
fn adam_drives_quadratic_down_monotonically() {
    let mut layer = scalar_layer(1.0);
    let mut state = AdamState::default();
    let mut history = Vec::new();
    let mut reached = None;
    for step in 1..=600 {
        let w = layer.weights.value.data()[0];
        layer.weights.grad.data_mut()[0] = 2.0 * w;
        adam_step([&mut layer], &mut state);
        let w = layer.weights.value.data()[0];
        history.push(w.abs());
        if reached.is_none() && w.abs() < 0.5 {
            reached = Some(step);
        }
    }
    assert_eq!(state.step_count, 600);
    assert!(reached.is_some(), "|w| = {} after 600 steps", history[599]);
    for pair in history[10..].windows(2) {
        assert!(pair[1] < pair[0]);
    }
    assert_eq!(layer.weights.grad.data()[0], 0.0);
}
