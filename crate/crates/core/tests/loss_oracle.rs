mod common;

use common::{oracle_loss, random_loss_case};
use fastext::codec::{encode_ground_truth, EncodeConfig, WordQuad};
use fastext::loss::{combined_loss, hard_negative_count, loss_gradient, ohem_select, ohem_select_n, LossConfig, LossInputs};
use fastext::maps::{ScaleMaps, GEOMETRY_OFFSET};
use proptest::prelude::*;

#[test]
fn hard_negative_table() {
    assert_eq!(hard_negative_count(3, 100), 10);
    assert_eq!(hard_negative_count(50, 20), 20);
    assert_eq!(hard_negative_count(0, 5), 5);
}

proptest! {
    #[test]
    fn hard_negative_count_monotone(p in 0usize..500, n in 0usize..500) {
        let h = hard_negative_count(p, n);
        prop_assert!(h <= n);
        prop_assert!(hard_negative_count(p + 1, n) >= h);
        prop_assert!(hard_negative_count(p, n + 1) >= h);
    }

    #[test]
    fn ohem_is_permutation_equivariant(losses in prop::collection::vec(0.0f64..5.0, 1..40), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let n = losses.len();
        let positive: Vec<bool> = (0..n).map(|i| i % 5 == 0).collect();
        let care = vec![true; n];
        let base = ohem_select(&losses, &positive, &care).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut common::rng(seed));
        let mut pl = vec![0.0; n];
        let mut pp = vec![false; n];
        for (i, &j) in perm.iter().enumerate() {
            pl[j] = losses[i];
            pp[j] = positive[i];
        }
        let moved = ohem_select(&pl, &pp, &care).unwrap();
        let sum = |idx: &[usize], l: &[f64]| idx.iter().map(|&i| l[i]).sum::<f64>();
        prop_assert_eq!(moved.hard_negatives.len(), base.hard_negatives.len());
        prop_assert!((sum(&moved.hard_negatives, &pl) - sum(&base.hard_negatives, &losses)).abs() < 1e-9);
    }
}

#[test]
fn ohem_examples() {
    let p = ohem_select_n(&[1.0; 5], &[false; 5], &[true; 5], 2).unwrap();
    assert_eq!(p.hard_negatives, vec![0, 1]);
    let p = ohem_select_n(&[5.0, 1.0, 4.0], &[false; 3], &[true; 3], 2).unwrap();
    assert_eq!(p.hard_negatives, vec![0, 2]);
    let p = ohem_select(&[9.0, 1.0, 2.0], &[false; 3], &[false, true, true]).unwrap();
    assert!(!p.hard_negatives.contains(&0) && !p.other_negatives.contains(&0));
    assert!(ohem_select(&[1.0], &[false, true], &[true]).is_err());
}

#[test]
fn matches_scalar_loop_oracle() {
    for seed in 0..200 {
        let (maps, targets) = random_loss_case(seed);
        let got = combined_loss(&maps, &targets, &LossConfig::default()).unwrap();
        let want = oracle_loss(&maps, &targets, 1.0);
        assert!((got.total - want.total).abs() < 1e-6, "seed {seed}: {} vs {}", got.total, want.total);
        assert_eq!((got.positive_count, got.negative_count, got.hard_count), (want.positives, want.negatives, want.hard));
        assert!(got.total >= 0.0);
    }
}

fn word_targets() -> (ScaleMaps, fastext::codec::Targets) {
    let rfs = [8, 16, 32, 64, 128];
    let maps = ScaleMaps::zeros(&rfs, 128, 128);
    let words = [
        WordQuad::axis_aligned(10.0, 20.0, 90.0, 36.0, true).unwrap(),
        WordQuad::axis_aligned(20.0, 70.0, 110.0, 100.0, true).unwrap(),
    ];
    let grids: Vec<_> = maps.scales().iter().map(|m| (m.rows(), m.cols())).collect();
    let targets = encode_ground_truth(&words, &rfs, &grids, &EncodeConfig::default()).unwrap();
    (maps, targets)
}

#[test]
fn perfect_prediction_is_near_zero() {
    let (_, targets) = word_targets();
    let maps = targets.to_maps(20.0).unwrap();
    let l = combined_loss(&maps, &targets, &LossConfig::default()).unwrap();
    assert!(l.positive_count > 0 && l.total < 1e-4, "{l:?}");
    assert_eq!(l.geometry, 0.0);
    let g = loss_gradient(&maps, &targets, &LossConfig::default()).unwrap();
    for (m, t) in g.scales().iter().zip(&targets.scales) {
        for (r, c) in t.positives() {
            assert!((0..5).all(|k| m.value(GEOMETRY_OFFSET + k, r, c) == 0.0));
        }
    }
}

#[test]
fn uniform_logits_give_ln2_terms() {
    let (maps, targets) = word_targets();
    let l = combined_loss(&maps, &targets, &LossConfig::default()).unwrap();
    let ln2 = std::f64::consts::LN_2;
    let (p, n, h) = (l.positive_count as f64, l.negative_count as f64, l.hard_count as f64);
    assert!((l.positive - p * ln2).abs() < 1e-12);
    assert!((l.hard - h * ln2).abs() < 1e-12);
    assert!((l.negative - (n - h) * ln2).abs() < 1e-9);
    let expected = (p * ln2 + l.geometry) / p + (n - h) * ln2 / n + 2.0 * ln2 / 3.0;
    assert!((l.total - expected).abs() < 1e-12);

    let inputs = LossInputs::new(&maps, &targets).unwrap();
    let grad = inputs.gradient(&LossConfig::default());
    let i = inputs.positive.iter().zip(&inputs.care).position(|(&p, &c)| p && c).unwrap();
    let w = 1.0 / p;
    assert!((grad.logits[i][0] - 0.5 * w).abs() < 1e-15 && (grad.logits[i][1] + 0.5 * w).abs() < 1e-15);
}

#[test]
fn grid_mismatch_rejected() {
    let (_, targets) = word_targets();
    let other = ScaleMaps::zeros(&[8, 16, 32, 64, 128], 256, 128);
    assert!(combined_loss(&other, &targets, &LossConfig::default()).is_err());
}

struct Probe {
    scale: usize,
    channel: usize,
    row: usize,
    col: usize,
}

fn perturbed(maps: &ScaleMaps, p: &Probe, h: f32) -> (ScaleMaps, f64) {
    let mut m = maps.clone();
    let s = &mut m.scales_mut()[p.scale];
    let v = s.value(p.channel, p.row, p.col);
    let nv = v + h;
    s.set(p.channel, p.row, p.col, nv);
    (m, f64::from(nv) - f64::from(v))
}

/// Central differences on the raw head values, using the step actually
/// representable in `f32`. Elements whose perturbation changes the hard
/// negative selection are skipped; Huber kinks get a loose tolerance.
#[test]
fn gradient_matches_finite_differences() {
    let config = LossConfig::default();
    let mut checked = 0usize;
    let mut skipped = 0usize;
    for seed in 1000..1100 {
        let (maps, targets) = random_loss_case(seed);
        let grad = loss_gradient(&maps, &targets, &config).unwrap();
        let base_part = LossInputs::new(&maps, &targets).unwrap().partition();
        for (si, m) in maps.scales().iter().enumerate() {
            let t = &targets.scales[si];
            for channel in 0..m.channels() {
                for row in 0..m.rows() {
                    for col in 0..m.cols() {
                        let probe = Probe { scale: si, channel, row, col };
                        let (plus, hp) = perturbed(&maps, &probe, 1e-3);
                        let (minus, hm) = perturbed(&maps, &probe, -1e-3);
                        let same = |m: &ScaleMaps| LossInputs::new(m, &targets).unwrap().partition() == base_part;
                        if !same(&plus) || !same(&minus) {
                            skipped += 1;
                            continue;
                        }
                        let lp = combined_loss(&plus, &targets, &config).unwrap().total;
                        let lm = combined_loss(&minus, &targets, &config).unwrap().total;
                        let numeric = (lp - lm) / (hp - hm);
                        let analytic = f64::from(grad.scales()[si].value(channel, row, col));
                        let i = t.index(row, col);
                        let geo = (GEOMETRY_OFFSET..GEOMETRY_OFFSET + 5).contains(&channel);
                        let near_kink = geo && t.labels[i] == 1 && {
                            let r = f64::from(m.value(channel, row, col))
                                - t.geometry[i].to_array()[channel - GEOMETRY_OFFSET];
                            (r.abs() - config.huber_delta).abs() < 1e-2
                        };
                        let err = (analytic - numeric).abs();
                        let scale = analytic.abs().max(numeric.abs()).max(1e-9);
                        if near_kink {
                            assert!(err < 1e-2, "seed {seed} kink ({si},{channel},{row},{col})");
                        } else {
                            assert!(
                                err / scale < 1e-4,
                                "seed {seed} ({si},{channel},{row},{col}): {analytic} vs {numeric}"
                            );
                        }
                        checked += 1;
                    }
                }
            }
        }
    }
    assert!(skipped * 50 < checked, "{skipped} skipped of {checked}");
}
