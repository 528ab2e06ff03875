//! Metric kernels against brute-force oracles and hand-derived values.

mod common;

use common::criteria;
use common::oracles;
use datasetagent::metrics;
use datasetagent::raster::BitMask;
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn kernels_match_oracles_on_random_inputs() {
    let c = criteria::metric_oracles(200, 11);
    assert!(c.pass, "{}", c.line());
}

#[test]
fn spot_values_hold() {
    let c = criteria::spot_values();
    assert!(c.pass, "{}", c.line());
}

#[test]
fn cbi_of_skewed_counts() {
    let got = metrics::cbi(&[30, 30, 40]).unwrap();
    assert!(close(got, 0.047140, 1e-6), "{got}");
    assert!(close(got, oracles::cbi(&[30, 30, 40]), 1e-12));
}

#[test]
fn dse_of_quarter_split() {
    let got = metrics::dse(&[25, 75]).unwrap();
    assert!(close(got, 0.811278, 1e-6), "{got}");
}

#[test]
fn sdi_of_two_vectors_at_45_degrees() {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let got = metrics::sdi(&[vec![1.0, 0.0], vec![s, s]]).unwrap();
    assert!(close(got, 0.292893, 1e-6), "{got}");
}

#[test]
fn ddc_value_and_asymmetry() {
    let p = [0.5, 0.5];
    let q = [0.25, 0.75];
    let pq = metrics::ddc(&p, &q).unwrap();
    let qp = metrics::ddc(&q, &p).unwrap();
    assert!(close(pq, 0.143841, 1e-6), "{pq}");
    assert!(close(qp, oracles::ddc(&q, &p), 1e-12));
    assert!((pq - qp).abs() > 1e-3);
}

#[test]
fn osr_counts_any_occlusion() {
    let got = metrics::osr(&[0.0, 0.4, 0.7]).unwrap();
    assert!(close(got, 2.0 / 3.0, 1e-12), "{got}");
}

#[test]
fn pcb_of_single_class_pixels() {
    let got = metrics::pcb(&[1, 0]).unwrap();
    assert!(close(got, 0.5, 1e-12), "{got}");
}

#[test]
fn esi_of_hard_step_edge() {
    let (w, h) = (8usize, 6usize);
    let gray: Vec<f64> = (0..w * h).map(|i| if i % w < 4 { 0.0 } else { 255.0 }).collect();
    let labels: Vec<u32> = (0..w * h).map(|i| u32::from(i % w >= 4)).collect();
    let edges = oracles::boundary(&labels, w, h);
    assert_eq!(edges.len(), 2 * h);
    let got = metrics::esi(&gray, w, h, &edges).unwrap();
    assert!(close(got, 1020.0, 1e-9), "{got}");
    assert!(close(got, oracles::esi(&gray, w, h, &edges), 1e-9));
}

#[test]
fn empty_inputs_are_errors() {
    assert!(metrics::cbi(&[]).is_err());
    assert!(metrics::dse(&[]).is_err());
    assert!(metrics::bqi(&[]).is_err());
    assert!(metrics::osr(&[]).is_err());
    assert!(metrics::sdi(&[vec![1.0, 0.0]]).is_err());
    let empty = BitMask::from_fn(3, 3, |_, _| false);
    assert!(metrics::dice(&empty, &empty).is_err());
}

fn counts() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(1u64..500, 2..8)
}

proptest! {
    #[test]
    fn cbi_is_permutation_invariant(mut c in counts(), seed in any::<u64>()) {
        let a = metrics::cbi(&c).unwrap();
        let n = c.len();
        c.rotate_left((seed as usize) % n);
        c.swap(0, n - 1);
        prop_assert!(close(a, metrics::cbi(&c).unwrap(), 1e-12));
    }

    #[test]
    fn dse_is_permutation_invariant_and_bounded(mut c in counts()) {
        let a = metrics::dse(&c).unwrap();
        c.reverse();
        prop_assert!(close(a, metrics::dse(&c).unwrap(), 1e-12));
        prop_assert!(a >= -1e-12 && a <= (c.len() as f64).log2() + 1e-12);
    }

    #[test]
    fn sdi_is_symmetric_under_reordering_and_scale_invariant(
        f in prop::collection::vec(prop::collection::vec(0.01f64..10.0, 4), 2..6),
        k in prop::collection::vec(0.1f64..100.0, 6),
    ) {
        let a = metrics::sdi(&f).unwrap();
        let mut r = f.clone();
        r.reverse();
        prop_assert!(close(a, metrics::sdi(&r).unwrap(), 1e-9));
        let scaled: Vec<Vec<f64>> = f.iter().zip(&k).map(|(v, s)| v.iter().map(|x| x * s).collect()).collect();
        prop_assert!(close(a, metrics::sdi(&scaled).unwrap(), 1e-9));
    }

    #[test]
    fn ddc_is_non_negative_and_zero_on_identity(c in counts(), d in counts()) {
        let n = c.len().min(d.len());
        let p = metrics::kernels::distribution(&c[..n]).unwrap();
        let q = metrics::kernels::distribution(&d[..n]).unwrap();
        prop_assert!(metrics::ddc(&p, &q).unwrap() >= -1e-12);
        prop_assert!(close(metrics::ddc(&p, &p).unwrap(), 0.0, 1e-12));
    }

    #[test]
    fn dice_is_symmetric(bits_a in prop::collection::vec(any::<bool>(), 36), bits_b in prop::collection::vec(any::<bool>(), 36)) {
        prop_assume!(bits_a.iter().any(|b| *b) || bits_b.iter().any(|b| *b));
        let a = BitMask::from_fn(6, 6, |x, y| bits_a[(y * 6 + x) as usize]);
        let b = BitMask::from_fn(6, 6, |x, y| bits_b[(y * 6 + x) as usize]);
        let ab = metrics::dice(&a, &b).unwrap();
        prop_assert!(close(ab, metrics::dice(&b, &a).unwrap(), 1e-12));
        prop_assert!(close(ab, oracles::dice(&bits_a, &bits_b), 1e-12));
    }

    #[test]
    fn bqi_lies_in_unit_interval(ious in prop::collection::vec(0.0f64..1.0, 1..30)) {
        let v = metrics::bqi(&ious).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!(close(v, oracles::bqi(&ious), 1e-12));
    }
}
