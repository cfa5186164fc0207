use proptest::prelude::*;

use sketchhash::encoder::{quantize, BinaryCode};
use sketchhash::entropy::{binary_entropy, filter_noise, percentile_bounds};
use sketchhash::eval::{average_precision, intra_inter_ratio, mean_ap, precision_at_k, pr_curve};
use sketchhash::hamming::{hamming, pack_code, search, PackedCodes};
use sketchhash::losses::{cross_entropy, quantization_loss, sketch_center_loss, CenterProvenance, CenterTable};

fn code(bits: &[bool]) -> BinaryCode {
    BinaryCode::from_bits(bits.to_vec())
}

fn codes_strategy(d: usize, max: usize) -> impl Strategy<Value = Vec<Vec<bool>>> {
    prop::collection::vec(prop::collection::vec(any::<bool>(), d), 1..max)
}

fn naive_distance(a: &[bool], b: &[bool]) -> u32 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
}

proptest! {
    #[test]
    fn hamming_is_a_metric(
        d in prop::sample::select(vec![1usize, 16, 24, 63, 64, 65, 130]),
        seed in any::<u64>(),
    ) {
        let bits = |s: u64| -> Vec<bool> { (0..d).map(|i| (s.rotate_left(i as u32 % 64) ^ (i as u64 * 0x9e37)) & 1 == 1).collect() };
        let (a, b, c) = (bits(seed), bits(seed.wrapping_mul(31).wrapping_add(7)), bits(!seed));
        let (pa, pb, pc) = (pack_code(&code(&a)), pack_code(&code(&b)), pack_code(&code(&c)));
        let ab = hamming(&pa, &pb).unwrap();
        prop_assert_eq!(ab, naive_distance(&a, &b));
        prop_assert_eq!(ab, hamming(&pb, &pa).unwrap());
        prop_assert_eq!(hamming(&pa, &pa).unwrap(), 0);
        prop_assert!(hamming(&pa, &pc).unwrap() <= ab + hamming(&pb, &pc).unwrap());
    }

    #[test]
    fn search_ranks_stably_by_distance(rows in codes_strategy(24, 60), q in prop::collection::vec(any::<bool>(), 24)) {
        let codes: Vec<BinaryCode> = rows.iter().map(|r| code(r)).collect();
        let ids: Vec<u32> = (0..codes.len() as u32).map(|i| 1000 - i).collect();
        let g = PackedCodes::pack(&codes, ids.clone(), None).unwrap();
        let ranking = search(&code(&q), &g, None).unwrap();
        let mut expected: Vec<(u32, u32)> = rows.iter().zip(&ids).map(|(r, &id)| (id, naive_distance(r, &q))).collect();
        expected.sort_by_key(|&(_, d)| d);
        prop_assert_eq!(&ranking, &expected);
        // distance histogram covers the gallery exactly once
        let mut hist = [0usize; 25];
        for &(_, d) in &ranking { hist[d as usize] += 1; }
        prop_assert_eq!(hist.iter().sum::<usize>(), rows.len());
        // a prefix of the full ranking is the top-k answer
        let k = rows.len() / 2;
        prop_assert_eq!(search(&code(&q), &g, Some(k)).unwrap(), ranking[..k].to_vec());
    }

    #[test]
    fn pack_round_trip(d in 1usize..100, rows in 1usize..20, seed in any::<u64>()) {
        let codes = sketchhash::eval::random_codes(rows, d, seed);
        let labels: Vec<u16> = (0..rows as u16).map(|i| i % 3).collect();
        let g = PackedCodes::pack(&codes, (0..rows as u32).collect(), Some(labels)).unwrap();
        let back = PackedCodes::from_bytes(&g.to_bytes()).unwrap();
        prop_assert_eq!(&back, &g);
        for (i, c) in codes.iter().enumerate() {
            prop_assert_eq!(&back.unpack(i), c);
            prop_assert_eq!(BinaryCode::from_hex(&c.to_hex(), d).unwrap(), c.clone());
        }
    }

    #[test]
    fn quantize_is_optimal(f in prop::collection::vec(1e-9f64..1.0, 1..7)) {
        let b = quantize(&f);
        let err = |c: &BinaryCode| -> f64 { c.as_f64().iter().zip(&f).map(|(x, y)| (x - y).powi(2)).sum() };
        let best = err(&b);
        for mask in 0u32..(1 << f.len()) {
            let other = BinaryCode::from_bits((0..f.len()).map(|i| mask >> i & 1 == 1).collect());
            prop_assert!(best <= err(&other) + 1e-15);
        }
    }

    #[test]
    fn quantization_loss_is_minimized_by_quantize(
        rows in prop::collection::vec(prop::collection::vec(1e-9f64..1.0, 8), 1..6),
        flips in prop::collection::vec(any::<bool>(), 8),
    ) {
        let feats: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let best: Vec<BinaryCode> = rows.iter().map(|r| quantize(r)).collect();
        let other: Vec<BinaryCode> = best
            .iter()
            .map(|c| BinaryCode::from_bits(c.bits().iter().zip(&flips).map(|(b, f)| b ^ f).collect()))
            .collect();
        let lb = quantization_loss(&feats, &best).unwrap();
        let lo = quantization_loss(&feats, &other).unwrap();
        prop_assert!(lb <= lo + 1e-15);
        if flips.iter().any(|f| *f) {
            // flipping any bit strictly increases the gap unless f sits at exactly 0.5
            let tie = rows.iter().any(|r| r.iter().zip(&flips).any(|(v, f)| *f && *v == 0.5));
            prop_assert!(tie || lb < lo);
        }
    }

    #[test]
    fn cross_entropy_ignores_logit_shift(
        z in prop::collection::vec(-20.0f64..20.0, 2..12),
        shift in -50.0f64..50.0,
        label_seed in any::<usize>(),
    ) {
        let label = label_seed % z.len();
        let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
        let a = cross_entropy(&z, label).unwrap();
        let b = cross_entropy(&shifted, label).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn center_loss_translation_invariant(
        feats in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 4), 2..8),
        shift in prop::collection::vec(-3.0f64..3.0, 4),
    ) {
        let labels: Vec<u16> = (0..feats.len() as u16).map(|i| i % 2).collect();
        let centers = vec![vec![0.2, 0.4, 0.6, 0.8], vec![0.9, 0.1, 0.5, 0.3]];
        let names = vec!["a".to_string(), "b".to_string()];
        let table = CenterTable::new(names.clone(), centers.clone(), CenterProvenance::default()).unwrap();
        let moved_centers: Vec<Vec<f64>> = centers.iter().map(|c| c.iter().zip(&shift).map(|(x, t)| x + t).collect()).collect();
        let moved_table = CenterTable::new(names, moved_centers, CenterProvenance::default()).unwrap();
        let moved: Vec<Vec<f64>> = feats.iter().map(|f| f.iter().zip(&shift).map(|(x, t)| x + t).collect()).collect();
        let a = sketch_center_loss(&feats.iter().map(Vec::as_slice).collect::<Vec<_>>(), &labels, &table).unwrap();
        let b = sketch_center_loss(&moved.iter().map(Vec::as_slice).collect::<Vec<_>>(), &labels, &moved_table).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn promoting_a_relevant_item_never_lowers_ap(flags in prop::collection::vec(any::<bool>(), 2..40), pick in any::<usize>()) {
        let relevant: Vec<usize> = (0..flags.len()).filter(|&i| flags[i]).collect();
        prop_assume!(!relevant.is_empty());
        let i = relevant[pick % relevant.len()];
        prop_assume!(i > 0 && !flags[i - 1]);
        let mut better = flags.clone();
        better.swap(i, i - 1);
        prop_assert!(average_precision(&better).value >= average_precision(&flags).value);
    }

    #[test]
    fn ap_bounds_and_pr_endpoint(flags in prop::collection::vec(any::<bool>(), 1..50)) {
        let r = flags.iter().filter(|f| **f).count();
        let ap = average_precision(&flags);
        prop_assert!((0.0..=1.0).contains(&ap.value));
        prop_assert_eq!(ap.no_relevant, r == 0);
        let rankings = vec![flags.clone()];
        prop_assert_eq!(mean_ap(&rankings).unwrap(), ap.value);
        let n = flags.len();
        let p_all = precision_at_k(&rankings, n).unwrap();
        prop_assert!((p_all - r as f64 / n as f64).abs() < 1e-12);
        let curve = pr_curve(&rankings).unwrap();
        prop_assert_eq!(curve.len(), n);
        prop_assert!((curve[n - 1].1 - r as f64 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn distance_ratio_is_similarity_invariant(
        feats in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 6..20),
        shift in prop::collection::vec(-10.0f64..10.0, 3),
        scale in 0.1f64..10.0,
    ) {
        let labels: Vec<u16> = (0..feats.len() as u16).map(|i| i % 3).collect();
        let rows: Vec<&[f64]> = feats.iter().map(Vec::as_slice).collect();
        let base = intra_inter_ratio(&rows, &labels).unwrap();
        prop_assume!(base.d2 > 1e-6);
        let moved: Vec<Vec<f64>> = feats.iter().map(|f| f.iter().zip(&shift).map(|(x, t)| scale * x + t).collect()).collect();
        let m = intra_inter_ratio(&moved.iter().map(Vec::as_slice).collect::<Vec<_>>(), &labels).unwrap();
        prop_assert!((m.d1 - scale * base.d1).abs() < 1e-9 * (1.0 + scale * base.d1));
        prop_assert!((m.d2 - scale * base.d2).abs() < 1e-9 * (1.0 + scale * base.d2));
        prop_assert!((m.ratio - base.ratio).abs() < 1e-9 * (1.0 + base.ratio));
    }

    #[test]
    fn percentile_filter_keeps_middle(values in prop::collection::vec(0.0f64..1.0, 1..200)) {
        let (lo, hi) = percentile_bounds(&values, 0.05, 0.95).unwrap();
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let rank = |q: f64| ((q * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
        prop_assert_eq!(lo, sorted[rank(0.05) - 1]);
        prop_assert_eq!(hi, sorted[rank(0.95) - 1]);
        let items: Vec<(u32, f64)> = values.iter().enumerate().map(|(i, &v)| (i as u32, v)).collect();
        let kept = filter_noise(&items, lo, hi);
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(kept.iter().all(|&id| (lo..=hi).contains(&values[id as usize])));
        prop_assert_eq!(kept.len(), values.iter().filter(|v| (lo..=hi).contains(*v)).count());
    }

    #[test]
    fn binary_entropy_is_symmetric_and_bounded(p in 0.0f64..=1.0) {
        let h = binary_entropy(p);
        prop_assert!((0.0..=1.0).contains(&h));
        prop_assert!((h - binary_entropy(1.0 - p)).abs() < 1e-12);
    }
}
