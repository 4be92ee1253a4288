use fuseg3d_core::preprocess::{suv_factor, LN2_APPROX};
use fuseg3d_core::{
    center_crop, ct_window, preprocess_pair, resample_inplane, suv_bw, AcquisitionMeta, CoreError, Modality,
    PreprocessConfig, Volume3D,
};
use proptest::prelude::*;

const F18_HALF_LIFE_S: f64 = 6586.2;

fn meta(t1: f64) -> AcquisitionMeta {
    AcquisitionMeta {
        rescale_slope: 1.0,
        rescale_intercept: 0.0,
        injected_dose_bq: 3.7e8,
        half_life_s: F18_HALF_LIFE_S,
        t0_s: 0.0,
        t1_s: t1,
        weight_kg: 70.0,
    }
}

fn pet(value: f64, dims: [usize; 3]) -> Volume3D {
    Volume3D::filled(dims, [5.47, 5.47, 3.27], Modality::PetRaw, "p", value).unwrap()
}

#[test]
fn suv_zero_numerator() {
    let s = suv_bw(&pet(0.0, [2, 2, 2]), &meta(1234.0)).unwrap();
    assert!(s.data().iter().all(|&v| v == 0.0));
    assert_eq!(s.modality(), Modality::PetSuv);
}

#[test]
fn suv_direct_evaluation() {
    let s = suv_bw(&pet(5000.0, [1, 1, 1]), &meta(0.0)).unwrap();
    let expected = 5000.0 * 70.0 * 1000.0 / 3.7e8;
    assert!(((s.data()[0] - expected) / expected).abs() < 1e-9);
    assert!((s.data()[0] - 0.9459).abs() < 5e-5);
}

#[test]
fn suv_one_half_life_roughly_doubles() {
    let a = suv_bw(&pet(5000.0, [1, 1, 1]), &meta(0.0)).unwrap().data()[0];
    let b = suv_bw(&pet(5000.0, [1, 1, 1]), &meta(F18_HALF_LIFE_S)).unwrap().data()[0];
    let ratio = b / a;
    assert!((ratio - 1.0 / (-LN2_APPROX).exp()).abs() < 1e-12);
    assert!((ratio - 1.99971).abs() < 1e-5);
    assert!((ratio - 2.0).abs() < 1e-3);
}

#[test]
fn suv_parameter_errors() {
    for m in [
        AcquisitionMeta { injected_dose_bq: 0.0, ..meta(0.0) },
        AcquisitionMeta { weight_kg: -70.0, ..meta(0.0) },
        AcquisitionMeta { half_life_s: 0.0, ..meta(0.0) },
        AcquisitionMeta { t0_s: 10.0, ..meta(0.0) },
    ] {
        assert!(matches!(suv_bw(&pet(1.0, [1, 1, 1]), &m), Err(CoreError::Parameter(_))));
    }
}

#[test]
fn ct_window_examples() {
    let hu = [40.0, -160.0, 240.0, -1000.0, 140.0, 3000.0];
    let ct = Volume3D::new(hu.to_vec(), [1, 1, 6], [1.0; 3], Modality::CtHu, "c").unwrap();
    let n = ct_window(&ct, &PreprocessConfig::default()).unwrap();
    assert_eq!(n.data(), &[0.5, 0.0, 1.0, 0.0, 0.75, 1.0]);
    assert_eq!(n.modality(), Modality::CtNorm);
}

#[test]
fn resample_constant_and_spacing() {
    let v = pet(7.25, [128, 128, 3]);
    let r = resample_inplane(&v, 256).unwrap();
    assert_eq!(r.dims(), [256, 256, 3]);
    assert!(r.data().iter().all(|&x| x == 7.25));
    assert_eq!(r.spacing_mm(), [2.735, 2.735, 3.27]);

    let ct = Volume3D::filled([512, 512, 2], [0.98, 0.98, 3.27], Modality::CtHu, "c", -20.0).unwrap();
    let r = resample_inplane(&ct, 256).unwrap();
    assert_eq!(r.dims(), [256, 256, 2]);
    assert_eq!(r.spacing_mm(), [1.96, 1.96, 3.27]);
    assert!(r.data().iter().all(|&x| x == -20.0));
}

#[test]
fn crop_examples() {
    let v = Volume3D::from_fn([256, 256, 2], [1.0; 3], Modality::CtHu, "c", |_, w, _| w as f64).unwrap();
    let c = center_crop(&v, 224).unwrap();
    assert_eq!(c.dims(), [224, 224, 2]);
    assert_eq!(c.get(0, 0, 0), 16.0);
    assert_eq!(c.get(100, 223, 1), 239.0);
    assert_eq!(center_crop(&v, 256).unwrap(), v);
    assert!(matches!(center_crop(&v, 257), Err(CoreError::Parameter(_))));
}

#[test]
fn pipeline_on_uniform_pair() {
    let p = pet(5000.0, [128, 128, 4]);
    let ct = Volume3D::filled([512, 512, 4], [1.3675, 1.3675, 3.27], Modality::CtHu, "p", 140.0).unwrap();
    let (ps, cs) = preprocess_pair(&p, &ct, &meta(0.0), &PreprocessConfig::default()).unwrap();
    assert_eq!(ps.dims(), [224, 224, 4]);
    assert_eq!(cs.dims(), ps.dims());
    assert_eq!(ps.spacing_mm(), cs.spacing_mm());
    assert!(ps.data().iter().all(|&v| (v - 0.9459).abs() < 5e-5));
    assert!(cs.data().iter().all(|&v| v == 0.75));
}

#[test]
fn pipeline_rejects_mismatched_slices() {
    let p = pet(1.0, [8, 8, 100]);
    let ct = Volume3D::filled([8, 8, 99], [5.47, 5.47, 3.27], Modality::CtHu, "p", 0.0).unwrap();
    let cfg = PreprocessConfig { target_inplane: 8, crop_inplane: 8, ..Default::default() };
    assert!(matches!(preprocess_pair(&p, &ct, &meta(0.0), &cfg), Err(CoreError::Alignment(_))));
}

#[test]
fn pipeline_applies_optional_clip() {
    let p = pet(50_000.0, [4, 4, 2]);
    let ct = Volume3D::filled([4, 4, 2], [5.47, 5.47, 3.27], Modality::CtHu, "p", 0.0).unwrap();
    let cfg = PreprocessConfig { target_inplane: 4, crop_inplane: 4, suv_clip: Some(5.0), ..Default::default() };
    let (ps, _) = preprocess_pair(&p, &ct, &meta(0.0), &cfg).unwrap();
    assert!(ps.data().iter().all(|&v| v == 5.0));
}

proptest! {
    #[test]
    fn suv_is_linear_without_intercept(pv in 0.0f64..1e5, alpha in 0.0f64..10.0, dt in 0.0f64..2e4) {
        let m = meta(dt);
        let a = suv_bw(&pet(alpha * pv, [1, 1, 1]), &m).unwrap().data()[0];
        let b = alpha * suv_bw(&pet(pv, [1, 1, 1]), &m).unwrap().data()[0];
        prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        prop_assert!((suv_factor(&m).unwrap() * pv * alpha - a).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn ct_window_monotone_and_bounded(mut hu in proptest::collection::vec(-3000.0f64..3000.0, 2..64)) {
        hu.sort_by(f64::total_cmp);
        let n = hu.len();
        let ct = Volume3D::new(hu, [1, 1, n], [1.0; 3], Modality::CtHu, "c").unwrap();
        let out = ct_window(&ct, &PreprocessConfig::default()).unwrap();
        prop_assert!(out.data().windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn resample_preserves_constants_and_extent(
        n in 1usize..40, target in 1usize..48, value in -1e3f64..1e3, s in 0.2f64..6.0,
    ) {
        let v = Volume3D::filled([n, n, 2], [s, s, 2.0], Modality::CtHu, "c", value).unwrap();
        let r = resample_inplane(&v, target).unwrap();
        let mean = r.data().iter().sum::<f64>() / r.len() as f64;
        prop_assert!(r.data().iter().all(|&x| x == value));
        prop_assert!((mean - value).abs() <= 1e-12 * value.abs().max(1.0));
        let extent_in = n as f64 * s;
        let extent_out = target as f64 * r.spacing_mm()[0];
        prop_assert!((extent_in - extent_out).abs() <= r.spacing_mm()[0]);
    }
}
