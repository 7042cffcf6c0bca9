use candle_core::{DType, Device, Tensor};
use proptest::prelude::*;
use warpstyle::objectives::{
    consistency_loss, directional_loss, discriminator_loss, generator_loss, pair_count, pair_slots,
    read_loss_csv, similarity_distribution, total_loss, write_loss_csv, Domain, LossParts, LossRecord,
    LossWeights, LOSS_COLUMNS,
};

fn t1(v: &[f64]) -> Tensor {
    Tensor::new(v, &Device::Cpu).unwrap()
}

fn s(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

fn vec_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, len).prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn directional_loss_is_bounded_and_scale_free(a in vec_strategy(6), b in vec_strategy(6), c in 0.01f64..100.0) {
        let l = s(&directional_loss(&t1(&a), &t1(&b)).unwrap());
        prop_assert!((-1e-12..=2.0 + 1e-12).contains(&l));
        let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
        let ls = s(&directional_loss(&t1(&scaled), &t1(&b)).unwrap());
        prop_assert!((l - ls).abs() < 1e-9);
    }

    #[test]
    fn distribution_groups_sum_to_one(n in 2usize..7, vals in vec_strategy(40)) {
        let d = Tensor::from_vec(vals[..n * 5].to_vec(), (n, 5), &Device::Cpu).unwrap();
        let r = t1(&vals[35..]);
        let c = similarity_distribution(&d, &r, 1.0, Domain::Source).unwrap();
        prop_assert_eq!(c.len(), pair_count(n) + n);
        prop_assert!((s(&c.pair_group().unwrap().sum_all().unwrap()) - 1.0).abs() < 1e-9);
        prop_assert!((s(&c.reference_group().unwrap().sum_all().unwrap()) - 1.0).abs() < 1e-9);
        prop_assert_eq!(s(&consistency_loss(&c, &c).unwrap()), 0.0);
    }
}

#[test]
fn pair_slots_enumerate_lower_triangle() {
    let slots = pair_slots(4);
    assert_eq!(slots.len(), 6);
    assert!(slots.iter().all(|(i, j)| j < i && *i < 4));
}

#[test]
fn directional_loss_rejects_zero_reference() {
    assert!(directional_loss(&t1(&[1.0, 0.0]), &t1(&[0.0, 0.0])).is_err());
}

#[test]
fn adversarial_losses_match_log_form() {
    let real = t1(&[0.3, -1.0]);
    let fake = t1(&[-0.4, 2.0]);
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let want_d = ((1.0 - sig(0.3)).ln() + (1.0 - sig(-1.0)).ln()) / 2.0 + (sig(-0.4).ln() + sig(2.0).ln()) / 2.0;
    let want_g = -(sig(-0.4).ln() + sig(2.0).ln()) / 2.0;
    assert!((s(&discriminator_loss(&real, &fake).unwrap()) - want_d).abs() < 1e-12);
    assert!((s(&generator_loss(&fake).unwrap()) - want_g).abs() < 1e-12);
    let huge = t1(&[500.0, -500.0]);
    assert!(s(&discriminator_loss(&huge, &huge).unwrap()).is_finite());
}

#[test]
fn total_loss_weights_terms_and_names_non_finite_parts() {
    let parts = LossParts {
        adv: t1(&[1.0]).sum_all().unwrap(),
        direct: t1(&[0.5]).sum_all().unwrap(),
        cons: t1(&[1e-4]).sum_all().unwrap(),
        reg: t1(&[100.0]).sum_all().unwrap(),
    };
    let w = LossWeights::default();
    let want = 1.0 + 6.0 * 0.5 + 5e4 * 1e-4 + 1e-6 * 100.0;
    assert!((s(&total_loss(&parts, &w).unwrap()) - want).abs() < 1e-12);
    let bad = LossParts {
        cons: t1(&[f64::NAN]).sum_all().unwrap(),
        ..parts
    };
    let err = total_loss(&bad, &w).unwrap_err().to_string();
    assert!(err.contains("L_cons"), "{err}");
}

#[test]
fn loss_csv_roundtrips_with_fixed_columns() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("losses.csv");
    let rows: Vec<LossRecord> = (1..=3)
        .map(|k| LossRecord {
            step: k,
            adv_g: 0.1 * k as f64,
            adv_d: -0.2,
            direct: 0.9,
            cons: 1e-5,
            reg: 0.0,
            total: 1.5,
        })
        .collect();
    write_loss_csv(&p, &rows).unwrap();
    let header = std::fs::read_to_string(&p).unwrap();
    assert_eq!(header.lines().next().unwrap(), LOSS_COLUMNS.join(","));
    assert_eq!(read_loss_csv(&p).unwrap(), rows);
}
